//! Checkpoint persistence.
//!
//! A checkpoint is a tensor container of kind `checkpoint` holding every
//! parameter (including batch-norm running statistics) plus the model
//! config and, optionally, the feature schema used to encode inputs.
//! Weights are stored as f32, so saving from an f64 model rounds.

use std::path::Path;

use crate::autodiff::Scalar;
use crate::container::{ContainerReader, ContainerWriter};
use crate::data::FeatureSchema;
use crate::error::{Result, TsanError};

use super::config::ModelConfig;
use super::forward::Model;

impl<F: Scalar> Model<F> {
    pub fn save(&self, path: &Path, schema: Option<&FeatureSchema>) -> Result<()> {
        let mut writer = ContainerWriter::new("checkpoint");
        writer.set_meta(
            "config",
            serde_json::to_value(&self.config).map_err(|e| TsanError::format(e.to_string()))?,
        );
        if let Some(s) = schema {
            writer.set_meta(
                "schema",
                serde_json::to_value(s).map_err(|e| TsanError::format(e.to_string()))?,
            );
        }
        for (param_path, param) in self.params.iter() {
            writer.add(param_path, param.tensor().shape(), &param.tensor().to_f32_vec())?;
        }
        writer.save(path)
    }

    /// Rebuild a model from a checkpoint. The container must carry
    /// exactly the parameter set implied by its stored config.
    pub fn load(path: &Path) -> Result<(Model<F>, Option<FeatureSchema>)> {
        let reader = ContainerReader::load(path)?;
        if reader.kind() != "checkpoint" {
            return Err(TsanError::format(format!(
                "expected a checkpoint container, found kind {:?}",
                reader.kind()
            )));
        }
        let config: ModelConfig = serde_json::from_value(reader.meta_section("config")?.clone())
            .map_err(|e| TsanError::format(format!("bad checkpoint config: {e}")))?;
        let schema = if reader.meta_section("schema").is_ok() {
            let v = reader.meta_section("schema")?.clone();
            Some(
                serde_json::from_value::<FeatureSchema>(v)
                    .map_err(|e| TsanError::format(format!("bad checkpoint schema: {e}")))?,
            )
        } else {
            None
        };

        let mut model: Model<F> = Model::new(config, 0)?;
        let expected: Vec<String> = model.params.paths().cloned().collect();
        for param_path in &expected {
            let (shape, data) = reader.get(param_path).map_err(|_| {
                TsanError::format(format!("checkpoint is missing parameter {param_path:?}"))
            })?;
            let want = model.params.tensor(param_path)?.shape().to_vec();
            if shape != want.as_slice() {
                return Err(TsanError::format(format!(
                    "checkpoint parameter {param_path:?} has shape {shape:?}, expected {want:?}"
                )));
            }
            let cast: Vec<F> = data.iter().map(|&v| F::from_f32(v)).collect();
            model.params.set_value(param_path, &cast)?;
        }
        for stored in reader.paths() {
            if !expected.contains(stored) {
                return Err(TsanError::format(format!(
                    "checkpoint carries unexpected parameter {stored:?}"
                )));
            }
        }
        Ok((model, schema))
    }
}

#[cfg(test)]
mod tests {
    use super::super::config::ModelConfig;
    use super::*;
    use crate::autodiff::Tensor;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            w: 3,
            f: 16,
            d_model: 8,
            conv_filters: vec![4, 8],
            d_spat: 8,
            d_common: 4,
            d_combined: 4,
            ..ModelConfig::default()
        }
    }

    fn inputs(b: usize) -> (Tensor<f32>, Tensor<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let xt: Vec<f32> = (0..b * 3 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xs: Vec<f32> = (0..b * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (
            Tensor::new(vec![b, 3, 16], xt).unwrap(),
            Tensor::new(vec![b, 16], xs).unwrap(),
        )
    }

    #[test]
    fn round_trip_reproduces_outputs_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model: Model<f32> = Model::new(small(), 99).unwrap();
        model.save(&path, None).unwrap();
        let (loaded, schema) = Model::<f32>::load(&path).unwrap();
        assert!(schema.is_none());
        assert_eq!(loaded.config, model.config);
        let (xt, xs) = inputs(5);
        let a = model.predict(&xt, &xs).unwrap();
        let b = loaded.predict(&xt, &xs).unwrap();
        assert_eq!(a.y_main, b.y_main);
        assert_eq!(a.y_traffic, b.y_traffic);
        assert_eq!(a.y_protocol, b.y_protocol);
        assert_eq!(a.y_consistency, b.y_consistency);
    }

    #[test]
    fn saving_twice_yields_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        let model: Model<f32> = Model::new(small(), 4).unwrap();
        model.save(&p1, None).unwrap();
        model.save(&p2, None).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn schema_travels_with_the_checkpoint() {
        use crate::data::{parse_records, FeatureSchema};
        let text = "\
0,tcp,http,SF,181,5450,0,0,0,0,0,1,0,0,0,0,0,0,0,0,0,0,8,8,0.00,0.00,0.00,0.00,1.00,0.00,0.00,9,9,1.00,0.00,0.11,0.00,0.00,0.00,0.00,0.00,normal,21
0,udp,domain_u,SF,181,5450,0,0,0,0,0,1,0,0,0,0,0,0,0,0,0,0,8,8,0.00,0.00,0.00,0.00,1.00,0.00,0.00,9,9,1.00,0.00,0.11,0.00,0.00,0.00,0.00,0.00,neptune,15
";
        let records = parse_records(text.as_bytes()).unwrap();
        let schema = FeatureSchema::fit(&records).unwrap();
        let mut cfg = small();
        cfg.f = schema.width();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model: Model<f32> = Model::new(cfg, 1).unwrap();
        model.save(&path, Some(&schema)).unwrap();
        let (_, loaded) = Model::<f32>::load(&path).unwrap();
        assert_eq!(loaded.unwrap(), schema);
    }

    #[test]
    fn wrong_kind_and_missing_params_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        let mut w = ContainerWriter::new("dataset");
        w.add("x", &[1], &[0.0]).unwrap();
        w.save(&path).unwrap();
        assert!(Model::<f32>::load(&path).is_err());

        let mut w = ContainerWriter::new("checkpoint");
        w.set_meta("config", serde_json::to_value(small()).unwrap());
        w.add("head.main.w", &[4, 1], &[0.0; 4]).unwrap();
        w.save(&path).unwrap();
        let err = Model::<f32>::load(&path).unwrap_err();
        assert!(err.to_string().contains("missing parameter"), "{err}");
    }
}
