//! Shared data-preparation steps behind the CLI commands.
//!
//! The raw-record path is: parse, drop records without a detection
//! target, fit the feature schema on training data, encode, split,
//! window. Splitting happens at the record level and keeps stream order
//! inside each subset, so windows never mix train and validation
//! records.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::Serialize;

use crate::data::{
    build_windows, classify_label, parse_records, stratified_split, FeatureSchema, RawRecord,
    WindowSource, WindowedDataset,
};
use crate::error::{Result, TsanError};
use crate::model::ModelConfig;

use super::config::RunConfig;

/// Numeric column used as the traffic-volume regression target.
pub const TRAFFIC_FEATURE: &str = "count";

/// Parse a record file, pointing at `tsan synth-data` when it is absent.
pub fn read_records(path: &Path) -> Result<Vec<RawRecord>> {
    let file = File::open(path).map_err(|e| {
        let hint = if e.kind() == std::io::ErrorKind::NotFound {
            "; generate one with `tsan synth-data` or point data paths at NSL-KDD files"
        } else {
            ""
        };
        TsanError::Io(std::io::Error::new(
            e.kind(),
            format!("cannot open {}: {e}{hint}", path.display()),
        ))
    })?;
    parse_records(BufReader::new(file))
}

/// Keep records with a defined detection target, returning their 0/1
/// targets and how many records were dropped.
pub fn filter_labeled(records: Vec<RawRecord>) -> (Vec<RawRecord>, Vec<f32>, usize) {
    let before = records.len();
    let mut kept = Vec::with_capacity(before);
    let mut class = Vec::with_capacity(before);
    for r in records {
        if let Some(c) = classify_label(&r.label) {
            class.push(c.target());
            kept.push(r);
        }
    }
    let dropped = before - kept.len();
    (kept, class, dropped)
}

/// Per-record model inputs, ready for windowing.
pub struct EncodedStream {
    pub rows: Vec<Vec<f32>>,
    pub class: Vec<f32>,
    pub protocol: Vec<Option<usize>>,
    pub traffic: Vec<f32>,
}

impl EncodedStream {
    pub fn new(schema: &FeatureSchema, records: &[RawRecord], class: Vec<f32>) -> Result<Self> {
        if class.len() != records.len() {
            return Err(TsanError::contract(format!(
                "{} class targets for {} records",
                class.len(),
                records.len()
            )));
        }
        let mut rows = Vec::with_capacity(records.len());
        let mut protocol = Vec::with_capacity(records.len());
        let mut traffic = Vec::with_capacity(records.len());
        for r in records {
            rows.push(schema.encode(r)?);
            protocol.push(schema.protocol_index(r));
            traffic.push(schema.scaled_numeric(r, TRAFFIC_FEATURE)?);
        }
        Ok(EncodedStream {
            rows,
            class,
            protocol,
            traffic,
        })
    }

    /// Stream for unfiltered inputs: records without a detection target
    /// get a placeholder class of 0.
    pub fn for_prediction(schema: &FeatureSchema, records: &[RawRecord]) -> Result<Self> {
        let class = records
            .iter()
            .map(|r| classify_label(&r.label).map(|c| c.target()).unwrap_or(0.0))
            .collect();
        EncodedStream::new(schema, records, class)
    }

    /// The subsequence at `idxs`, which must be ascending.
    pub fn subset(&self, idxs: &[usize]) -> EncodedStream {
        EncodedStream {
            rows: idxs.iter().map(|&i| self.rows[i].clone()).collect(),
            class: idxs.iter().map(|&i| self.class[i]).collect(),
            protocol: idxs.iter().map(|&i| self.protocol[i]).collect(),
            traffic: idxs.iter().map(|&i| self.traffic[i]).collect(),
        }
    }

    pub fn windows(&self, w: usize, s: usize) -> Result<WindowedDataset> {
        build_windows(
            &WindowSource {
                rows: &self.rows,
                class: &self.class,
                protocol: &self.protocol,
                traffic: &self.traffic,
            },
            w,
            s,
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PreprocessSummary {
    pub train_records: usize,
    pub val_records: usize,
    pub test_records: usize,
    pub dropped_train: usize,
    pub dropped_test: usize,
    pub train_windows: usize,
    pub val_windows: usize,
    pub test_windows: usize,
    pub feature_width: usize,
}

pub struct Prepared {
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    pub test: WindowedDataset,
    pub schema: FeatureSchema,
    pub summary: PreprocessSummary,
}

/// Full preprocessing flow over the configured raw files.
pub fn prepare(cfg: &RunConfig, seed: u64) -> Result<Prepared> {
    let (w, s) = (cfg.data.window_size, cfg.data.stride);
    let (train_records, train_class, dropped_train) =
        filter_labeled(read_records(&cfg.data.train_path)?);
    let (test_records, test_class, dropped_test) =
        filter_labeled(read_records(&cfg.data.test_path)?);
    if train_records.is_empty() {
        return Err(TsanError::contract(format!(
            "{} has no usable records after label filtering",
            cfg.data.train_path.display()
        )));
    }
    let schema = FeatureSchema::fit(&train_records)?;

    let split = stratified_split(&train_class, cfg.data.validation_fraction, seed)?;
    let full = EncodedStream::new(&schema, &train_records, train_class)?;
    let train = full.subset(&split.train).windows(w, s)?;
    let val = full.subset(&split.val).windows(w, s)?;
    let test = EncodedStream::new(&schema, &test_records, test_class)?.windows(w, s)?;

    let summary = PreprocessSummary {
        train_records: split.train.len(),
        val_records: split.val.len(),
        test_records: test_records.len(),
        dropped_train,
        dropped_test,
        train_windows: train.len(),
        val_windows: val.len(),
        test_windows: test.len(),
        feature_width: schema.width(),
    };
    Ok(Prepared {
        train,
        val,
        test,
        schema,
        summary,
    })
}

/// Reconcile the configured model shape with a loaded dataset: the
/// dataset's window length and feature width win (with a warning),
/// while a protocol-count mismatch is an error because it changes what
/// the protocol head predicts.
pub fn model_config_for_data(
    base: &ModelConfig,
    data: &WindowedDataset,
    schema: &FeatureSchema,
) -> Result<ModelConfig> {
    let mut cfg = base.clone();
    if cfg.w != data.w {
        log::warn!(
            "configured model.w {} does not match the dataset window length {}; using {}",
            cfg.w,
            data.w,
            data.w
        );
        cfg.w = data.w;
    }
    if cfg.f != data.width {
        log::warn!(
            "configured model.f {} does not match the dataset feature width {}; using {}",
            cfg.f,
            data.width,
            data.width
        );
        cfg.f = data.width;
    }
    if cfg.n_protocol != schema.n_protocols() {
        return Err(TsanError::config(format!(
            "model.n_protocol is {} but the data schema has {} protocols; set \
             model.n_protocol to match",
            cfg.n_protocol,
            schema.n_protocols()
        )));
    }
    cfg.validate()?;
    Ok(cfg)
}
