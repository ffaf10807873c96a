//! Parsing of NSL-KDD connection records.
//!
//! Each line is 43 comma-separated fields: 41 features, the attack
//! label, and a difficulty score. Features 1, 2 and 3 (protocol_type,
//! service, flag) are categorical strings; the rest are numeric.

use std::io::{BufRead, BufReader, Read};

use crate::error::{Result, TsanError};

pub const FIELD_COUNT: usize = 43;
pub const FEATURE_COUNT: usize = 41;
/// 0-based positions of the categorical features.
pub const CATEGORICAL_POSITIONS: [usize; 3] = [1, 2, 3];

/// The 41 feature names in column order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "duration",
    "protocol_type",
    "service",
    "flag",
    "src_bytes",
    "dst_bytes",
    "land",
    "wrong_fragment",
    "urgent",
    "hot",
    "num_failed_logins",
    "logged_in",
    "num_compromised",
    "root_shell",
    "su_attempted",
    "num_root",
    "num_file_creations",
    "num_shells",
    "num_access_files",
    "num_outbound_cmds",
    "is_host_login",
    "is_guest_login",
    "count",
    "srv_count",
    "serror_rate",
    "srv_serror_rate",
    "rerror_rate",
    "srv_rerror_rate",
    "same_srv_rate",
    "diff_srv_rate",
    "srv_diff_host_rate",
    "dst_host_count",
    "dst_host_srv_count",
    "dst_host_same_srv_rate",
    "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate",
    "dst_host_srv_diff_host_rate",
    "dst_host_serror_rate",
    "dst_host_srv_serror_rate",
    "dst_host_rerror_rate",
    "dst_host_srv_rerror_rate",
];

/// Index into `RawRecord::numeric` for a numeric feature position.
pub fn numeric_index(position: usize) -> Option<usize> {
    if position >= FEATURE_COUNT || CATEGORICAL_POSITIONS.contains(&position) {
        return None;
    }
    Some(if position == 0 { 0 } else { position - 3 })
}

/// Look a numeric feature up by name.
pub fn numeric_index_of(name: &str) -> Option<usize> {
    FEATURE_NAMES
        .iter()
        .position(|&n| n == name)
        .and_then(numeric_index)
}

/// Attack labels counted as denial-of-service.
pub const DOS_LABELS: [&str; 6] = ["back", "land", "neptune", "pod", "smurf", "teardrop"];

/// Binary traffic class after label mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrafficClass {
    Normal,
    Dos,
}

impl TrafficClass {
    pub fn target(self) -> f32 {
        match self {
            TrafficClass::Normal => 0.0,
            TrafficClass::Dos => 1.0,
        }
    }
}

/// Map a label to its class; `None` means the record is outside the
/// normal-vs-DoS task and must be dropped.
pub fn classify_label(label: &str) -> Option<TrafficClass> {
    let l = label.trim().to_ascii_lowercase();
    if l == "normal" {
        Some(TrafficClass::Normal)
    } else if DOS_LABELS.contains(&l.as_str()) {
        Some(TrafficClass::Dos)
    } else {
        None
    }
}

/// One parsed connection record.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    /// protocol_type, service, flag, in that order.
    pub categorical: [String; 3],
    /// The 38 numeric features, in column order with the categorical
    /// positions removed (see `numeric_index`).
    pub numeric: Vec<f64>,
    pub label: String,
    pub difficulty: u32,
}

/// Parse a whole stream of records, reporting 1-based line/field
/// positions on failure. Blank lines are skipped.
pub fn parse_records<R: Read>(reader: R) -> Result<Vec<RawRecord>> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        out.push(parse_line(trimmed, idx + 1)?);
    }
    Ok(out)
}

fn parse_line(line: &str, line_no: usize) -> Result<RawRecord> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != FIELD_COUNT {
        return Err(TsanError::Parse {
            line: line_no,
            column: 1,
            message: format!("expected {FIELD_COUNT} fields, found {}", fields.len()),
        });
    }
    let mut categorical: [String; 3] = Default::default();
    let mut numeric = Vec::with_capacity(FEATURE_COUNT - 3);
    for (pos, &field) in fields[..FEATURE_COUNT].iter().enumerate() {
        if let Some(cat_idx) = CATEGORICAL_POSITIONS.iter().position(|&p| p == pos) {
            if field.is_empty() {
                return Err(TsanError::Parse {
                    line: line_no,
                    column: pos + 1,
                    message: format!("empty value for {}", FEATURE_NAMES[pos]),
                });
            }
            categorical[cat_idx] = field.to_string();
        } else {
            let v: f64 = field.parse().map_err(|_| TsanError::Parse {
                line: line_no,
                column: pos + 1,
                message: format!("{:?} is not numeric (feature {})", field, FEATURE_NAMES[pos]),
            })?;
            numeric.push(v);
        }
    }
    let label = fields[FIELD_COUNT - 2].to_string();
    if label.is_empty() {
        return Err(TsanError::Parse {
            line: line_no,
            column: FIELD_COUNT - 1,
            message: "empty label".to_string(),
        });
    }
    let difficulty: u32 = fields[FIELD_COUNT - 1].parse().map_err(|_| TsanError::Parse {
        line: line_no,
        column: FIELD_COUNT,
        message: format!("{:?} is not a difficulty score", fields[FIELD_COUNT - 1]),
    })?;
    Ok(RawRecord {
        categorical,
        numeric,
        label,
        difficulty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = "0,tcp,ftp_data,SF,491,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,2,2,0.00,0.00,0.00,0.00,1.00,0.00,0.00,150,25,0.17,0.03,0.17,0.00,0.00,0.00,0.05,0.00,normal,20";

    #[test]
    fn parses_a_sample_record() {
        let recs = parse_records(SAMPLE.as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!(r.categorical, ["tcp", "ftp_data", "SF"]);
        assert_eq!(r.numeric.len(), 38);
        assert_eq!(r.numeric[0], 0.0); // duration
        assert_eq!(r.numeric[1], 491.0); // src_bytes
        assert_eq!(r.label, "normal");
        assert_eq!(r.difficulty, 20);
    }

    #[test]
    fn count_feature_is_where_the_name_says() {
        let recs = parse_records(SAMPLE.as_bytes()).unwrap();
        let idx = numeric_index_of("count").unwrap();
        assert_eq!(recs[0].numeric[idx], 2.0);
        let idx = numeric_index_of("srv_count").unwrap();
        assert_eq!(recs[0].numeric[idx], 2.0);
        assert_eq!(numeric_index_of("protocol_type"), None);
    }

    #[test]
    fn wrong_field_count_reports_line_number() {
        let bad = "0,tcp,http,SF,1\n";
        let err = parse_records(bad.as_bytes()).unwrap_err();
        match err {
            TsanError::Parse { line, message, .. } => {
                assert_eq!(line, 1);
                assert!(message.contains("43"));
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn non_numeric_field_reports_line_and_column() {
        let bad = format!("{SAMPLE}\n{}", SAMPLE.replace("491", "oops"));
        let err = parse_records(bad.as_bytes()).unwrap_err();
        match err {
            TsanError::Parse { line, column, message } => {
                assert_eq!(line, 2);
                assert_eq!(column, 5); // src_bytes is the 5th field
                assert!(message.contains("oops"));
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn blank_lines_are_skipped() {
        let text = format!("\n{SAMPLE}\n\n{SAMPLE}\n");
        assert_eq!(parse_records(text.as_bytes()).unwrap().len(), 2);
    }

    #[test]
    fn label_mapping_keeps_dos_and_normal_only() {
        assert_eq!(classify_label("normal"), Some(TrafficClass::Normal));
        for l in DOS_LABELS {
            assert_eq!(classify_label(l), Some(TrafficClass::Dos), "{l}");
        }
        assert_eq!(classify_label("satan"), None); // probe, not DoS
        assert_eq!(classify_label("buffer_overflow"), None); // u2r
        assert_eq!(classify_label("guess_passwd"), None); // r2l
    }
}
