//! Feature encoding: one-hot categorical vocabularies plus standard
//! scaling of numeric features.
//!
//! A schema is fitted on training records only and then frozen; encoding
//! validation/test data with it never widens the vocabularies (unseen
//! categories encode to an all-zero block) and never updates the scaler.

use serde::{Deserialize, Serialize};

use crate::data::record::{RawRecord, CATEGORICAL_POSITIONS, FEATURE_COUNT};
use crate::error::{Result, TsanError};

/// Smallest standard deviation the scaler will divide by.
pub const MIN_STD: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FeatureSchema {
    /// Sorted category values for protocol_type, service, flag.
    pub vocabs: [Vec<String>; 3],
    /// Per-numeric-feature training mean, in `RawRecord::numeric` order.
    pub mean: Vec<f64>,
    /// Per-numeric-feature training population standard deviation,
    /// clamped below by `MIN_STD`.
    pub std: Vec<f64>,
}

impl FeatureSchema {
    /// Fit vocabularies and scaler statistics on training records.
    pub fn fit(records: &[RawRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(TsanError::contract(
                "cannot fit a feature schema on zero records".to_string(),
            ));
        }
        let n_numeric = records[0].numeric.len();
        let mut vocabs: [Vec<String>; 3] = Default::default();
        for (slot, vocab) in vocabs.iter_mut().enumerate() {
            let mut values: Vec<String> = records
                .iter()
                .map(|r| r.categorical[slot].clone())
                .collect();
            values.sort_unstable();
            values.dedup();
            *vocab = values;
        }
        let inv_n = 1.0 / records.len() as f64;
        let mut mean = vec![0.0f64; n_numeric];
        for r in records {
            for (i, &v) in r.numeric.iter().enumerate() {
                mean[i] += v;
            }
        }
        for m in mean.iter_mut() {
            *m *= inv_n;
        }
        let mut var = vec![0.0f64; n_numeric];
        for r in records {
            for (i, &v) in r.numeric.iter().enumerate() {
                let d = v - mean[i];
                var[i] += d * d;
            }
        }
        let std = var.iter().map(|&v| (v * inv_n).sqrt().max(MIN_STD)).collect();
        Ok(FeatureSchema { vocabs, mean, std })
    }

    /// Width of an encoded feature vector.
    pub fn width(&self) -> usize {
        self.mean.len() + self.vocabs.iter().map(Vec::len).sum::<usize>()
    }

    /// Encode one record: column order is preserved, with each
    /// categorical column expanded to its one-hot block in place.
    pub fn encode(&self, r: &RawRecord) -> Result<Vec<f32>> {
        if r.numeric.len() != self.mean.len() {
            return Err(TsanError::shape(format!(
                "record has {} numeric features, schema was fitted on {}",
                r.numeric.len(),
                self.mean.len()
            )));
        }
        let mut out = Vec::with_capacity(self.width());
        let mut num_idx = 0usize;
        for pos in 0..FEATURE_COUNT {
            if let Some(slot) = CATEGORICAL_POSITIONS.iter().position(|&p| p == pos) {
                let vocab = &self.vocabs[slot];
                let hit = vocab.binary_search(&r.categorical[slot]).ok();
                for i in 0..vocab.len() {
                    out.push(if hit == Some(i) { 1.0 } else { 0.0 });
                }
            } else {
                let v = r.numeric[num_idx];
                out.push(((v - self.mean[num_idx]) / self.std[num_idx]) as f32);
                num_idx += 1;
            }
        }
        Ok(out)
    }

    pub fn encode_all(&self, records: &[RawRecord]) -> Result<Vec<Vec<f32>>> {
        records.iter().map(|r| self.encode(r)).collect()
    }

    /// Index of a record's protocol in the vocabulary, if it was seen
    /// during fitting. Used as the protocol-prediction target.
    pub fn protocol_index(&self, r: &RawRecord) -> Option<usize> {
        self.vocabs[0].binary_search(&r.categorical[0]).ok()
    }

    /// Standard-scaled value of one numeric feature, by feature name.
    /// The traffic-volume target is the scaled `count` column.
    pub fn scaled_numeric(&self, r: &RawRecord, name: &str) -> Result<f32> {
        let idx = crate::data::record::numeric_index_of(name).ok_or_else(|| {
            TsanError::contract(format!("{name:?} is not a numeric feature"))
        })?;
        if idx >= r.numeric.len() || idx >= self.mean.len() {
            return Err(TsanError::shape(format!(
                "numeric feature index {idx} out of range"
            )));
        }
        Ok(((r.numeric[idx] - self.mean[idx]) / self.std[idx]) as f32)
    }

    pub fn n_protocols(&self) -> usize {
        self.vocabs[0].len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn record(protocol: &str, service: &str, flag: &str, first: f64) -> RawRecord {
        let mut numeric = vec![0.0; 38];
        numeric[0] = first;
        RawRecord {
            categorical: [protocol.into(), service.into(), flag.into()],
            numeric,
            label: "normal".into(),
            difficulty: 1,
        }
    }

    fn fitted() -> (FeatureSchema, Vec<RawRecord>) {
        let records = vec![
            record("tcp", "http", "SF", 2.0),
            record("udp", "dns", "S0", 4.0),
            record("tcp", "ftp", "SF", 6.0),
        ];
        (FeatureSchema::fit(&records).unwrap(), records)
    }

    #[test]
    fn vocabs_are_sorted_and_deduplicated() {
        let (schema, _) = fitted();
        assert_eq!(schema.vocabs[0], vec!["tcp", "udp"]);
        assert_eq!(schema.vocabs[1], vec!["dns", "ftp", "http"]);
        assert_eq!(schema.vocabs[2], vec!["S0", "SF"]);
        assert_eq!(schema.width(), 38 + 2 + 3 + 2);
    }

    #[test]
    fn scaling_matches_hand_computed_population_stats() {
        // First numeric feature over [2,4,6]: mean 4, population std
        // sqrt(8/3), so the scaled values are -1.224745, 0, +1.224745.
        let (schema, records) = fitted();
        let enc: Vec<Vec<f32>> = schema.encode_all(&records).unwrap();
        assert_relative_eq!(enc[0][0], -1.224745, epsilon = 1e-5);
        assert_relative_eq!(enc[1][0], 0.0, epsilon = 1e-6);
        assert_relative_eq!(enc[2][0], 1.224745, epsilon = 1e-5);
    }

    #[test]
    fn constant_features_scale_to_exact_zero() {
        let (schema, records) = fitted();
        let enc = schema.encode(&records[0]).unwrap();
        // Numeric feature after the flag block is src_bytes, constant 0.
        let src_bytes_pos = 1 + 2 + 3 + 2; // duration + the 3 one-hot blocks
        assert_eq!(enc[src_bytes_pos], 0.0);
        assert!(enc.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn seen_category_sets_exactly_one_bit_per_block() {
        let (schema, records) = fitted();
        let enc = schema.encode(&records[0]).unwrap(); // tcp, http, SF
        // Layout: duration, protocol(2), service(3), flag(2), numerics...
        assert_eq!(&enc[1..3], &[1.0, 0.0]); // tcp of [tcp, udp]
        assert_eq!(&enc[3..6], &[0.0, 0.0, 1.0]); // http of [dns, ftp, http]
        assert_eq!(&enc[6..8], &[0.0, 1.0]); // SF of [S0, SF]
    }

    #[test]
    fn unseen_category_encodes_to_all_zeros_without_widening() {
        let (schema, _) = fitted();
        let width_before = schema.width();
        let enc = schema.encode(&record("icmp", "telnet", "REJ", 1.0)).unwrap();
        assert_eq!(enc.len(), width_before);
        assert_eq!(&enc[1..3], &[0.0, 0.0]);
        assert_eq!(&enc[3..6], &[0.0, 0.0, 0.0]);
        assert_eq!(&enc[6..8], &[0.0, 0.0]);
        assert_eq!(schema.protocol_index(&record("icmp", "x", "y", 0.0)), None);
    }

    #[test]
    fn scaled_numeric_picks_the_named_column() {
        let (schema, records) = fitted();
        // duration over [2,4,6]: record 0 scales to -1.224745.
        let v = schema.scaled_numeric(&records[0], "duration").unwrap();
        assert_relative_eq!(v, -1.224745, epsilon = 1e-5);
        // count is constant 0 here, so it scales to exactly 0.
        assert_eq!(schema.scaled_numeric(&records[0], "count").unwrap(), 0.0);
        assert!(schema.scaled_numeric(&records[0], "protocol_type").is_err());
    }

    #[test]
    fn schema_survives_json_round_trip() {
        let (schema, _) = fitted();
        let text = serde_json::to_string(&schema).unwrap();
        let back: FeatureSchema = serde_json::from_str(&text).unwrap();
        assert_eq!(back, schema);
    }

    proptest! {
        /// Encoding the fitting set itself yields (mean 0, variance 1)
        /// for every non-constant numeric feature.
        #[test]
        fn scaled_training_features_have_zero_mean_unit_variance(
            values in proptest::collection::vec(-1e3f64..1e3, 3..40)
        ) {
            let records: Vec<RawRecord> =
                values.iter().map(|&v| record("tcp", "http", "SF", v)).collect();
            let schema = FeatureSchema::fit(&records).unwrap();
            let enc = schema.encode_all(&records).unwrap();
            let col: Vec<f64> = enc.iter().map(|e| e[0] as f64).collect();
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-3, "mean {mean}");
            let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - values.iter().cloned().fold(f64::INFINITY, f64::min);
            if spread > 1e-6 {
                prop_assert!((var - 1.0).abs() < 1e-3, "variance {var}");
            }
        }
    }
}
