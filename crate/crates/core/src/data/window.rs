//! Sliding-window construction over encoded record streams.
//!
//! A window of length `w` at stride `s` is identified by the index of
//! its last record: `i = s*k + w - 1` for `k = 0, 1, ...` while `i < n`.
//! The temporal input of a window is its `w` encoded rows; the spatial
//! input is the last row alone; the detection target and auxiliary
//! targets come from the last record.

use std::path::Path;

use crate::container::{ContainerReader, ContainerWriter};
use crate::data::schema::FeatureSchema;
use crate::error::{Result, TsanError};

/// Last-record indices of every window over `n` records.
pub fn window_indices(n: usize, w: usize, s: usize) -> Result<Vec<usize>> {
    if w < 1 {
        return Err(TsanError::config(format!("window length {w} must be >= 1")));
    }
    if s < 1 {
        return Err(TsanError::config(format!("window stride {s} must be >= 1")));
    }
    let mut out = Vec::new();
    let mut i = w - 1;
    while i < n {
        out.push(i);
        i += s;
    }
    Ok(out)
}

/// Per-record inputs to window construction. All slices share one length.
pub struct WindowSource<'a> {
    /// Encoded feature rows, all of equal width.
    pub rows: &'a [Vec<f32>],
    /// Detection target per record (0 normal, 1 DoS).
    pub class: &'a [f32],
    /// Protocol vocabulary index per record; `None` for unseen.
    pub protocol: &'a [Option<usize>],
    /// Scaled traffic-volume feature per record.
    pub traffic: &'a [f32],
}

/// Windowed tensors, stored flat in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub w: usize,
    pub width: usize,
    /// `[n_windows, w, width]`
    pub x_temporal: Vec<f32>,
    /// `[n_windows, width]`, always equal to the last temporal row.
    pub x_spatial: Vec<f32>,
    /// `[n_windows]` detection target.
    pub y: Vec<f32>,
    /// `[n_windows]` mean scaled traffic volume over the window.
    pub traffic: Vec<f32>,
    /// `[n_windows]` protocol index of the last record, -1 if unseen.
    pub protocol: Vec<f32>,
    /// `[n_windows, width]` the record after the window, zeros if none.
    pub next_row: Vec<f32>,
    /// `[n_windows]` 1 when `next_row` exists in the stream.
    pub next_valid: Vec<f32>,
    /// `[n_windows]` index of the last record in the source stream.
    pub row_index: Vec<f32>,
}

pub fn build_windows(src: &WindowSource, w: usize, s: usize) -> Result<WindowedDataset> {
    let n = src.rows.len();
    if src.class.len() != n || src.protocol.len() != n || src.traffic.len() != n {
        return Err(TsanError::shape(format!(
            "window source slices disagree: {} rows, {} classes, {} protocols, {} traffic",
            n,
            src.class.len(),
            src.protocol.len(),
            src.traffic.len()
        )));
    }
    let width = src.rows.first().map(Vec::len).unwrap_or(0);
    if src.rows.iter().any(|r| r.len() != width) {
        return Err(TsanError::shape(
            "window source rows have unequal widths".to_string(),
        ));
    }
    let ends = window_indices(n, w, s)?;
    let mut ds = WindowedDataset {
        w,
        width,
        x_temporal: Vec::with_capacity(ends.len() * w * width),
        x_spatial: Vec::with_capacity(ends.len() * width),
        y: Vec::with_capacity(ends.len()),
        traffic: Vec::with_capacity(ends.len()),
        protocol: Vec::with_capacity(ends.len()),
        next_row: Vec::with_capacity(ends.len() * width),
        next_valid: Vec::with_capacity(ends.len()),
        row_index: Vec::with_capacity(ends.len()),
    };
    for &i in &ends {
        let start = i + 1 - w;
        let mut traffic_sum = 0.0f32;
        for row_i in start..=i {
            ds.x_temporal.extend_from_slice(&src.rows[row_i]);
            traffic_sum += src.traffic[row_i];
        }
        ds.x_spatial.extend_from_slice(&src.rows[i]);
        ds.y.push(src.class[i]);
        ds.traffic.push(traffic_sum / w as f32);
        ds.protocol
            .push(src.protocol[i].map(|p| p as f32).unwrap_or(-1.0));
        if i + 1 < n {
            ds.next_row.extend_from_slice(&src.rows[i + 1]);
            ds.next_valid.push(1.0);
        } else {
            ds.next_row.extend(std::iter::repeat(0.0).take(width));
            ds.next_valid.push(0.0);
        }
        ds.row_index.push(i as f32);
    }
    Ok(ds)
}

/// One minibatch view, gathered into contiguous buffers.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    pub n: usize,
    pub w: usize,
    pub width: usize,
    pub x_temporal: Vec<f32>,
    pub x_spatial: Vec<f32>,
    pub y: Vec<f32>,
    pub traffic: Vec<f32>,
    pub protocol: Vec<f32>,
    pub next_row: Vec<f32>,
    pub next_valid: Vec<f32>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn batch(&self, idxs: &[usize]) -> Result<WindowBatch> {
        let (w, f) = (self.w, self.width);
        let mut b = WindowBatch {
            n: idxs.len(),
            w,
            width: f,
            x_temporal: Vec::with_capacity(idxs.len() * w * f),
            x_spatial: Vec::with_capacity(idxs.len() * f),
            y: Vec::with_capacity(idxs.len()),
            traffic: Vec::with_capacity(idxs.len()),
            protocol: Vec::with_capacity(idxs.len()),
            next_row: Vec::with_capacity(idxs.len() * f),
            next_valid: Vec::with_capacity(idxs.len()),
        };
        for &i in idxs {
            if i >= self.len() {
                return Err(TsanError::contract(format!(
                    "batch index {i} out of range for {} windows",
                    self.len()
                )));
            }
            b.x_temporal
                .extend_from_slice(&self.x_temporal[i * w * f..(i + 1) * w * f]);
            b.x_spatial
                .extend_from_slice(&self.x_spatial[i * f..(i + 1) * f]);
            b.y.push(self.y[i]);
            b.traffic.push(self.traffic[i]);
            b.protocol.push(self.protocol[i]);
            b.next_row
                .extend_from_slice(&self.next_row[i * f..(i + 1) * f]);
            b.next_valid.push(self.next_valid[i]);
        }
        Ok(b)
    }

    /// Fraction of windows labeled DoS.
    pub fn dos_fraction(&self) -> f64 {
        if self.y.is_empty() {
            return 0.0;
        }
        self.y.iter().filter(|&&v| v == 1.0).count() as f64 / self.y.len() as f64
    }

    pub fn save(&self, path: &Path, schema: &FeatureSchema, stride: usize) -> Result<()> {
        let mut w = ContainerWriter::new("dataset");
        w.set_meta(
            "schema",
            serde_json::to_value(schema)
                .map_err(|e| TsanError::format(format!("schema to JSON: {e}")))?,
        );
        w.set_meta(
            "window",
            serde_json::json!({ "w": self.w, "s": stride, "width": self.width }),
        );
        let n = self.len();
        w.add("x_temporal", &[n, self.w, self.width], &self.x_temporal)?;
        w.add("x_spatial", &[n, self.width], &self.x_spatial)?;
        w.add("y", &[n], &self.y)?;
        w.add("traffic", &[n], &self.traffic)?;
        w.add("protocol", &[n], &self.protocol)?;
        w.add("next_row", &[n, self.width], &self.next_row)?;
        w.add("next_valid", &[n], &self.next_valid)?;
        w.add("row_index", &[n], &self.row_index)?;
        w.save(path)
    }

    pub fn load(path: &Path) -> Result<(Self, FeatureSchema, usize)> {
        let r = ContainerReader::load(path)?;
        if r.kind() != "dataset" {
            return Err(TsanError::format(format!(
                "{} is a {:?} container, expected a dataset",
                path.display(),
                r.kind()
            )));
        }
        let schema: FeatureSchema = serde_json::from_value(r.meta_section("schema")?.clone())
            .map_err(|e| TsanError::format(format!("dataset schema metadata: {e}")))?;
        let window = r.meta_section("window")?;
        let w = window["w"].as_u64().ok_or_else(|| {
            TsanError::format("dataset window metadata is missing \"w\"".to_string())
        })? as usize;
        let stride = window["s"].as_u64().ok_or_else(|| {
            TsanError::format("dataset window metadata is missing \"s\"".to_string())
        })? as usize;
        let (shape_t, x_temporal) = r.get("x_temporal")?;
        if shape_t.len() != 3 || shape_t[1] != w {
            return Err(TsanError::format(format!(
                "x_temporal shape {shape_t:?} does not match window length {w}"
            )));
        }
        let width = shape_t[2];
        let ds = WindowedDataset {
            w,
            width,
            x_temporal: x_temporal.to_vec(),
            x_spatial: r.get("x_spatial")?.1.to_vec(),
            y: r.get("y")?.1.to_vec(),
            traffic: r.get("traffic")?.1.to_vec(),
            protocol: r.get("protocol")?.1.to_vec(),
            next_row: r.get("next_row")?.1.to_vec(),
            next_valid: r.get("next_valid")?.1.to_vec(),
            row_index: r.get("row_index")?.1.to_vec(),
        };
        let n = ds.len();
        if ds.x_temporal.len() != n * w * width
            || ds.x_spatial.len() != n * width
            || ds.traffic.len() != n
            || ds.protocol.len() != n
            || ds.next_row.len() != n * width
            || ds.next_valid.len() != n
            || ds.row_index.len() != n
        {
            return Err(TsanError::format(format!(
                "dataset entries in {} have inconsistent lengths",
                path.display()
            )));
        }
        Ok((ds, schema, stride))
    }
}
