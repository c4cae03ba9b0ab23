//! Foci CSV ingestion. The layout follows the usual published-table shape:
//! Author, Year, Label, X, Y, Z, Participants (and optionally a T column),
//! with continuation rows leaving Author/Year blank to inherit the previous
//! study. A JSON sidecar can remap header names.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CbmaError, Result};

use super::dataset::{AtlasTag, Focus, FociDataset, Study};

/// Header-name mapping. Each field holds the header of the column carrying
/// that role; `t_value` is optional.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub author: String,
    pub year: String,
    pub label: String,
    pub x: String,
    pub y: String,
    pub z: String,
    pub participants: String,
    #[serde(default)]
    pub t_value: Option<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            author: "Author".into(),
            year: "Year".into(),
            label: "Label".into(),
            x: "X".into(),
            y: "Y".into(),
            z: "Z".into(),
            participants: "Participants".into(),
            t_value: None,
        }
    }
}

impl ColumnMapping {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Default mapping, but accept a few common aliases for the label column.
    fn resolve_label(&self, headers: &HashMap<String, usize>) -> Option<usize> {
        if let Some(&i) = headers.get(&self.label) {
            return Some(i);
        }
        for alias in ["Emotion", "Contrast", "Label"] {
            if let Some(&i) = headers.get(alias) {
                return Some(i);
            }
        }
        None
    }
}

fn col(headers: &HashMap<String, usize>, name: &str) -> Result<usize> {
    headers.get(name).copied().ok_or_else(|| {
        CbmaError::Validation(format!("required column {name:?} not found in header"))
    })
}

pub fn load_foci_csv(
    path: &Path,
    mapping: &ColumnMapping,
    atlas_tag: AtlasTag,
) -> Result<FociDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;

    let headers: HashMap<String, usize> = reader
        .headers()
        .map_err(|e| CbmaError::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().to_string(), i))
        .collect();

    let ci_author = col(&headers, &mapping.author)?;
    let ci_year = col(&headers, &mapping.year)?;
    let ci_label = mapping.resolve_label(&headers).ok_or_else(|| {
        CbmaError::Validation(format!("label column {:?} not found in header", mapping.label))
    })?;
    let ci_x = col(&headers, &mapping.x)?;
    let ci_y = col(&headers, &mapping.y)?;
    let ci_z = col(&headers, &mapping.z)?;
    let ci_n = col(&headers, &mapping.participants)?;
    let ci_t = match &mapping.t_value {
        Some(name) => Some(col(&headers, name)?),
        None => headers.get("T").copied(),
    };

    // study key -> position in `order`; keeps first-appearance order
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut by_key: HashMap<(String, String, String), Study> = HashMap::new();
    let mut prev_key: Option<(String, String, String)> = None;

    for (row_idx, record) in reader.records().enumerate() {
        let line = row_idx + 2; // 1-based, after header
        let record = record.map_err(|e| CbmaError::Parse {
            line,
            msg: e.to_string(),
        })?;
        let field = |i: usize| record.get(i).unwrap_or("").trim().to_string();

        let author = field(ci_author);
        let year = field(ci_year);
        let label = field(ci_label);

        let key = if author.is_empty() && year.is_empty() {
            match (&prev_key, label.is_empty()) {
                (Some(prev), true) => prev.clone(),
                (Some(prev), false) => (prev.0.clone(), prev.1.clone(), label),
                (None, _) => {
                    return Err(CbmaError::Parse {
                        line,
                        msg: "continuation row with no preceding study".into(),
                    })
                }
            }
        } else {
            (author, year, label)
        };
        prev_key = Some(key.clone());

        let parse_num = |i: usize, what: &str| -> Result<f64> {
            let raw = field(i);
            raw.parse::<f64>().map_err(|_| CbmaError::Parse {
                line,
                msg: format!("cannot parse {what} value {raw:?}"),
            })
        };
        // a row with all three coordinates blank declares a study that
        // reports no foci (legal input; its kernel map is all-zero)
        let no_focus =
            field(ci_x).is_empty() && field(ci_y).is_empty() && field(ci_z).is_empty();
        let n = {
            let raw = field(ci_n);
            raw.parse::<u32>().map_err(|_| CbmaError::Parse {
                line,
                msg: format!("cannot parse participant count {raw:?}"),
            })?
        };
        let focus = if no_focus {
            None
        } else {
            let t = match ci_t {
                Some(i) => {
                    let raw = field(i);
                    if raw.is_empty() {
                        None
                    } else {
                        Some(raw.parse::<f64>().map_err(|_| CbmaError::Parse {
                            line,
                            msg: format!("cannot parse T value {raw:?}"),
                        })?)
                    }
                }
                None => None,
            };
            Some(Focus {
                x: parse_num(ci_x, "X")?,
                y: parse_num(ci_y, "Y")?,
                z: parse_num(ci_z, "Z")?,
                t_value: t,
            })
        };
        match by_key.get_mut(&key) {
            Some(study) => {
                if study.n_participants != n {
                    return Err(CbmaError::Validation(format!(
                        "inconsistent participant count for study {:?} at line {line}: {} vs {}",
                        study.label, study.n_participants, n
                    )));
                }
                study.foci.extend(focus);
            }
            None => {
                let id = format!("{}|{}|{}", key.0, key.1, key.2);
                let label_str = format!("{} {} {}", key.0, key.1, key.2)
                    .trim()
                    .to_string();
                by_key.insert(
                    key.clone(),
                    Study {
                        id,
                        label: label_str,
                        n_participants: n,
                        foci: focus.into_iter().collect(),
                    },
                );
                order.push(key);
            }
        }
    }

    if order.is_empty() {
        return Err(CbmaError::Validation("no studies".into()));
    }
    let studies = order
        .into_iter()
        .map(|k| by_key.remove(&k).expect("keyed study"))
        .collect();
    FociDataset::new(studies, atlas_tag)
}

/// Write a dataset back out in the same column layout `load_foci_csv` reads.
pub fn write_foci_csv(path: &Path, dataset: &FociDataset) -> Result<()> {
    let has_t = dataset
        .studies
        .iter()
        .any(|s| s.foci.iter().any(|f| f.t_value.is_some()));
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["Author", "Year", "Label", "X", "Y", "Z", "Participants"];
    if has_t {
        header.push("T");
    }
    w.write_record(&header)?;
    for study in &dataset.studies {
        let mut parts = study.id.splitn(3, '|');
        let author = parts.next().unwrap_or("");
        let year = parts.next().unwrap_or("");
        let label = parts.next().unwrap_or("");
        if study.foci.is_empty() {
            // blank coordinates mark a study that reports no foci
            let mut row = vec![
                author.to_string(),
                year.to_string(),
                label.to_string(),
                String::new(),
                String::new(),
                String::new(),
                format!("{}", study.n_participants),
            ];
            if has_t {
                row.push(String::new());
            }
            w.write_record(&row)?;
        }
        for f in &study.foci {
            let mut row = vec![
                author.to_string(),
                year.to_string(),
                label.to_string(),
                format!("{}", f.x),
                format!("{}", f.y),
                format!("{}", f.z),
                format!("{}", study.n_participants),
            ];
            if has_t {
                row.push(f.t_value.map(|t| format!("{t}")).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
