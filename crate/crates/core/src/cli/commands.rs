//! Implementations of the `tsan` subcommands.
//!
//! Every command reads its settings from one [`RunConfig`], writes its
//! artifacts into the output directory, and finishes by writing a
//! `manifest-<command>.json` recording the command, build version,
//! effective seed, wall time, and full configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::data::{generate_synthetic, SynthConfig, WindowedDataset};
use crate::error::{Result, TsanError};
use crate::metrics::{
    auc_roc, confusion_and_prf1, measure_timing, model_size_bytes, roc_csv, roc_points,
    Classification,
};
use crate::model::{threshold_decision, Model};
use crate::pretrain::{strip_pretrain_heads, transfer_weights};
use crate::trainer::{dataset_accuracy, dataset_scores, gradcheck_model, AblationVariant};

use super::config::RunConfig;
use super::pipeline::{model_config_for_data, prepare, read_records, EncodedStream};

const TIMING_REPETITIONS: usize = 3;
const GRADCHECK_SAMPLES: usize = 50;

/// Resolved invocation state shared by every command.
pub struct CommandContext {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    /// `--seed` override, falling back to the config's data seed.
    pub seed: u64,
}

impl CommandContext {
    pub fn new(
        config_path: Option<&Path>,
        out: Option<PathBuf>,
        seed: Option<u64>,
    ) -> Result<Self> {
        let config = RunConfig::load(config_path)?;
        let out_dir = out.unwrap_or_else(|| config.output.dir.clone());
        let seed = seed.unwrap_or(config.data.seed);
        Ok(CommandContext {
            config,
            out_dir,
            seed,
        })
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn ensure_out_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir)?;
        Ok(())
    }

    fn write_manifest(&self, command: &str, started: Instant) -> Result<()> {
        let manifest = RunManifest {
            command,
            version: super::version(),
            seed: self.seed,
            wall_seconds: started.elapsed().as_secs_f64(),
            config: &self.config,
        };
        write_json(&self.out_path(&format!("manifest-{command}.json")), &manifest)
    }

    fn load_windows(&self, name: &str) -> Result<(WindowedDataset, crate::data::FeatureSchema)> {
        let path = self.out_path(name);
        let (data, schema, _) = WindowedDataset::load(&path).map_err(|e| match e {
            TsanError::Io(io) => TsanError::Io(std::io::Error::new(
                io.kind(),
                format!("cannot open {}: {io}; run `tsan preprocess` first", path.display()),
            )),
            other => other,
        })?;
        Ok((data, schema))
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    wall_seconds: f64,
    config: &'a RunConfig,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| TsanError::format(format!("serializing {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Write synthetic train and test record files to the configured data
/// paths.
pub fn synth_data(ctx: &CommandContext, train_records: usize, test_records: usize) -> Result<()> {
    let started = Instant::now();
    ctx.ensure_out_dir()?;
    for (path, n, seed) in [
        (&ctx.config.data.train_path, train_records, ctx.seed),
        (&ctx.config.data.test_path, test_records, ctx.seed + 1),
    ] {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let text = generate_synthetic(&SynthConfig {
            n,
            seed,
            ..SynthConfig::default()
        })?;
        std::fs::write(path, text)?;
        log::info!("wrote {n} synthetic records to {}", path.display());
    }
    ctx.write_manifest("synth-data", started)
}

/// Parse, filter, encode, split, and window the configured record
/// files into `train.windows`, `val.windows`, and `test.windows`.
pub fn preprocess(ctx: &CommandContext) -> Result<()> {
    let started = Instant::now();
    ctx.ensure_out_dir()?;
    let prepared = prepare(&ctx.config, ctx.seed)?;
    if prepared.summary.dropped_train + prepared.summary.dropped_test > 0 {
        log::info!(
            "dropped {} train and {} test records without a DoS/normal label",
            prepared.summary.dropped_train,
            prepared.summary.dropped_test
        );
    }
    let s = ctx.config.data.stride;
    for (name, data) in [
        ("train.windows", &prepared.train),
        ("val.windows", &prepared.val),
        ("test.windows", &prepared.test),
    ] {
        data.save(&ctx.out_path(name), &prepared.schema, s)?;
    }
    write_json(&ctx.out_path("preprocess.json"), &prepared.summary)?;
    log::info!(
        "windows: {} train, {} val, {} test ({} features each)",
        prepared.summary.train_windows,
        prepared.summary.val_windows,
        prepared.summary.test_windows,
        prepared.summary.feature_width
    );
    ctx.write_manifest("preprocess", started)
}

/// Pretrain both encoders on the training windows and save the result
/// as `pretrained.ckpt`.
pub fn pretrain(ctx: &CommandContext) -> Result<()> {
    let started = Instant::now();
    ctx.ensure_out_dir()?;
    let (train, schema) = ctx.load_windows("train.windows")?;
    let model_cfg = model_config_for_data(&ctx.config.model, &train, &schema)?;
    let mut model: Model<f32> = Model::new(model_cfg, ctx.seed)?;
    let report = crate::pretrain::pretrain(&mut model, &train, &ctx.config.pretrain_config(ctx.seed))?;
    strip_pretrain_heads(&mut model);
    model.save(&ctx.out_path("pretrained.ckpt"), Some(&schema))?;
    write_json(&ctx.out_path("pretrain.json"), &report)?;
    log::info!(
        "pretraining done: temporal loss {:?} -> {:?}, spatial loss {:?} -> {:?}",
        report.temporal_losses.first(),
        report.temporal_losses.last(),
        report.spatial_losses.first(),
        report.spatial_losses.last()
    );
    ctx.write_manifest("pretrain", started)
}

/// Train a detection model on the preprocessed windows, optionally
/// starting from pretrained encoder weights. Saves `model.ckpt` and
/// `history.csv`.
pub fn train(ctx: &CommandContext, from_pretrained: Option<&Path>) -> Result<()> {
    let started = Instant::now();
    ctx.ensure_out_dir()?;
    let (train_data, schema) = ctx.load_windows("train.windows")?;
    let (val_data, _) = ctx.load_windows("val.windows")?;
    let mut model_cfg = model_config_for_data(&ctx.config.model, &train_data, &schema)?;
    // The checkpoint should carry the decision threshold it was
    // validated with.
    model_cfg.threshold = ctx.config.train.threshold;
    let mut model: Model<f32> = Model::new(model_cfg, ctx.seed)?;
    if let Some(ckpt) = from_pretrained {
        let (source, _) = Model::<f32>::load(ckpt)?;
        let manifest = transfer_weights(&source, &mut model)?;
        log::info!(
            "transferred {} encoder parameters from {}",
            manifest.copied.len(),
            ckpt.display()
        );
    }
    let val = (!val_data.is_empty()).then_some(&val_data);
    let report = crate::trainer::train(
        &mut model,
        &train_data,
        val,
        &ctx.config.train_config(ctx.seed),
    )?;
    model.save(&ctx.out_path("model.ckpt"), Some(&schema))?;
    std::fs::write(ctx.out_path("history.csv"), report.history_csv())?;
    write_json(&ctx.out_path("train.json"), &report)?;
    if let Some(last) = report.history.last() {
        log::info!(
            "trained {} epochs (best {}), final loss {:.4}, val accuracy {:.4}",
            report.history.len(),
            report.best_epoch,
            last.l_total,
            last.val_accuracy
        );
    }
    ctx.write_manifest("train", started)
}

#[derive(Debug, Serialize)]
struct EvaluationReport {
    model: String,
    data: String,
    n_windows: usize,
    threshold: f64,
    #[serde(flatten)]
    classification: Classification,
    /// `null` with a note when the dataset has a single class.
    auc: Option<f64>,
    auc_note: Option<String>,
    per_sample_ms: f64,
    model_size_bytes: u64,
}

/// Score a checkpoint on a windowed dataset; writes `evaluation.json`
/// and, when the AUC is defined, `roc.csv`.
pub fn evaluate(
    ctx: &CommandContext,
    model_path: Option<PathBuf>,
    data_path: Option<PathBuf>,
    threshold: Option<f64>,
) -> Result<()> {
    let started = Instant::now();
    ctx.ensure_out_dir()?;
    let model_path = model_path.unwrap_or_else(|| ctx.out_path("model.ckpt"));
    let data_path = data_path.unwrap_or_else(|| ctx.out_path("test.windows"));
    let (model, _) = Model::<f32>::load(&model_path)?;
    let (data, _, _) = WindowedDataset::load(&data_path)?;
    check_data_matches_model(&data, &model)?;
    let threshold = threshold.unwrap_or(model.config.threshold);

    let scores = dataset_scores(&model, &data)?;
    let classification = confusion_and_prf1(&scores, &data.y, threshold)?;
    let (auc, auc_note) = match auc_roc(&scores, &data.y) {
        Ok(v) => {
            std::fs::write(
                ctx.out_path("roc.csv"),
                roc_csv(&roc_points(&scores, &data.y)?),
            )?;
            (Some(v), None)
        }
        Err(e) => {
            log::warn!("AUC not recorded: {e}");
            (None, Some(e.to_string()))
        }
    };
    let timing = measure_timing(&model, &data, TIMING_REPETITIONS)?;
    let report = EvaluationReport {
        model: model_path.display().to_string(),
        data: data_path.display().to_string(),
        n_windows: data.len(),
        threshold,
        classification,
        auc,
        auc_note,
        per_sample_ms: timing.per_sample_ms,
        model_size_bytes: model_size_bytes(&model_path)?,
    };
    log::info!(
        "accuracy {:.4}, precision {:.4}, recall {:.4}, f1 {:.4}, auc {}, {:.3} ms/sample",
        report.classification.accuracy,
        report.classification.precision,
        report.classification.recall,
        report.classification.f1,
        report
            .auc
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "n/a".to_string()),
        report.per_sample_ms
    );
    write_json(&ctx.out_path("evaluation.json"), &report)?;
    ctx.write_manifest("evaluate", started)
}

/// Train and score ablation variants; writes `ablation.json`.
pub fn ablate(ctx: &CommandContext, variant: Option<&str>) -> Result<()> {
    let started = Instant::now();
    ctx.ensure_out_dir()?;
    let variants: Vec<AblationVariant> = match variant {
        Some(name) => vec![AblationVariant::from_str(name)?],
        None => AblationVariant::all().to_vec(),
    };
    let (train_data, schema) = ctx.load_windows("train.windows")?;
    let (val_data, _) = ctx.load_windows("val.windows")?;
    let model_cfg = model_config_for_data(&ctx.config.model, &train_data, &schema)?;
    let outcomes = crate::trainer::run_ablation(
        &model_cfg,
        &train_data,
        (!val_data.is_empty()).then_some(&val_data),
        &ctx.config.pretrain_config(ctx.seed),
        &ctx.config.train_config(ctx.seed),
        &variants,
    )?;
    for o in &outcomes {
        log::info!(
            "{}: val accuracy {:.4} (best epoch {}, final loss {:.4})",
            o.variant,
            o.val_accuracy,
            o.best_epoch,
            o.final_l_total
        );
    }
    write_json(&ctx.out_path("ablation.json"), &outcomes)?;
    ctx.write_manifest("ablate", started)
}

/// Score an input with a trained checkpoint; writes `predictions.csv`.
///
/// The input may be a preprocessed dataset container or a raw record
/// file (sniffed by the container's JSON header line). Raw records are
/// encoded with the schema stored in the checkpoint and all of them are
/// kept, whatever their labels.
pub fn predict(ctx: &CommandContext, model_path: &Path, input_path: &Path) -> Result<()> {
    let started = Instant::now();
    ctx.ensure_out_dir()?;
    let (model, schema) = Model::<f32>::load(model_path)?;
    let data = if is_container_file(input_path)? {
        let (data, _, _) = WindowedDataset::load(input_path)?;
        data
    } else {
        let schema = schema.ok_or_else(|| {
            TsanError::contract(format!(
                "{} holds raw records but the checkpoint carries no feature schema; \
                 train via the pipeline or pass a preprocessed dataset",
                input_path.display()
            ))
        })?;
        let records = read_records(input_path)?;
        let stream = EncodedStream::for_prediction(&schema, &records)?;
        stream.windows(model.config.w, ctx.config.data.stride)?
    };
    check_data_matches_model(&data, &model)?;
    if data.is_empty() {
        return Err(TsanError::contract(format!(
            "{} yields no windows of length {}",
            input_path.display(),
            model.config.w
        )));
    }

    let scores = dataset_scores(&model, &data)?;
    let mut csv = String::from("window_end_row,score,decision\n");
    for (i, &score) in scores.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{}\n",
            data.row_index[i] as i64,
            score,
            threshold_decision(score as f64, model.config.threshold)
        ));
    }
    std::fs::write(ctx.out_path("predictions.csv"), csv)?;
    let positives = scores
        .iter()
        .filter(|&&s| threshold_decision(s as f64, model.config.threshold) == 1)
        .count();
    log::info!(
        "scored {} windows, {positives} flagged as DoS at threshold {}",
        scores.len(),
        model.config.threshold
    );
    ctx.write_manifest("predict", started)
}

/// Compare analytic gradients of the full configured model against
/// central finite differences; writes `gradcheck.json` and fails when
/// any sampled entry exceeds the tolerance.
pub fn gradcheck(ctx: &CommandContext) -> Result<()> {
    let started = Instant::now();
    ctx.ensure_out_dir()?;
    let report = gradcheck_model(&ctx.config.model, GRADCHECK_SAMPLES, ctx.seed)?;
    write_json(&ctx.out_path("gradcheck.json"), &report)?;
    log::info!(
        "checked {} parameter entries, max relative error {:.3e} (tolerance {:.1e})",
        report.checked_entries,
        report.max_rel_err,
        report.tolerance
    );
    ctx.write_manifest("gradcheck", started)?;
    if !report.pass {
        return Err(TsanError::contract(format!(
            "gradient check failed: max relative error {:.3e} in {} exceeds {:.1e}",
            report.max_rel_err,
            report.worst_param.as_deref().unwrap_or("?"),
            report.tolerance
        )));
    }
    Ok(())
}

fn check_data_matches_model(data: &WindowedDataset, model: &Model<f32>) -> Result<()> {
    if data.w != model.config.w || data.width != model.config.f {
        return Err(TsanError::config(format!(
            "dataset windows are {}x{} but the model expects {}x{}",
            data.w, data.width, model.config.w, model.config.f
        )));
    }
    Ok(())
}

/// Container files start with their JSON header line; raw record files
/// start with a record field.
fn is_container_file(path: &Path) -> Result<bool> {
    use std::io::Read;
    let mut first = [0u8; 1];
    let n = std::fs::File::open(path)?.read(&mut first)?;
    Ok(n == 1 && first[0] == b'{')
}

/// Convenience used by tests and the accuracy gate: load a checkpoint
/// and report accuracy on a windowed dataset at its own threshold.
pub fn checkpoint_accuracy(model_path: &Path, data_path: &Path) -> Result<f64> {
    let (model, _) = Model::<f32>::load(model_path)?;
    let (data, _, _) = WindowedDataset::load(data_path)?;
    dataset_accuracy(&model, &data, model.config.threshold)
}
