//! Stratified train/validation splitting of record streams.
//!
//! Selection is per class so both splits keep the class balance, and the
//! chosen indices stay in original stream order so windowing after the
//! split still sees time-ordered records.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TsanError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Split `classes` (one entry per record) into train/validation index
/// sets. Each class contributes `round(n_class * val_fraction)` records
/// to validation, drawn with the seeded generator.
pub fn stratified_split(classes: &[f32], val_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if classes.is_empty() {
        return Err(TsanError::contract(
            "cannot split zero records".to_string(),
        ));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(TsanError::config(format!(
            "validation fraction {val_fraction} must be in [0, 1)"
        )));
    }
    let mut by_class: Vec<(f32, Vec<usize>)> = Vec::new();
    for (i, &c) in classes.iter().enumerate() {
        match by_class.iter_mut().find(|(v, _)| *v == c) {
            Some((_, idxs)) => idxs.push(i),
            None => by_class.push((c, vec![i])),
        }
    }
    by_class.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("class labels are finite"));
    if by_class.len() == 1 {
        log::warn!(
            "stratified split saw a single class ({}); splitting without stratification",
            by_class[0].0
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (_, mut idxs) in by_class {
        let n_val = ((idxs.len() as f64) * val_fraction).round() as usize;
        idxs.shuffle(&mut rng);
        val.extend(idxs.drain(..n_val));
        train.extend(idxs);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok(SplitIndices { train, val })
}
