use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CbmaError, Result};

/// A reported activation peak: world coordinates in millimetres, plus the
/// optional signed test statistic SDM uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Focus {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub t_value: Option<f64>,
}

impl Focus {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self {
            x,
            y,
            z,
            t_value: None,
        }
    }

    pub fn with_t(x: f64, y: f64, z: f64, t: f64) -> Self {
        Self {
            x,
            y,
            z,
            t_value: Some(t),
        }
    }

    pub fn point(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x.is_finite() && self.y.is_finite() && self.z.is_finite()) {
            return Err(CbmaError::Validation(format!(
                "non-finite focus coordinates ({}, {}, {})",
                self.x, self.y, self.z
            )));
        }
        if let Some(t) = self.t_value {
            if !t.is_finite() || t == 0.0 {
                return Err(CbmaError::Validation(format!(
                    "focus t-value must be finite and nonzero, got {t}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub id: String,
    /// Author/year/contrast label for reporting.
    pub label: String,
    pub n_participants: u32,
    /// May be empty: a study reporting no foci is legal input.
    pub foci: Vec<Focus>,
}

impl Study {
    pub fn validate(&self) -> Result<()> {
        if self.n_participants < 1 {
            return Err(CbmaError::Validation(format!(
                "study {} has no participants",
                self.id
            )));
        }
        for f in &self.foci {
            f.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AtlasTag {
    Mni,
    Talairach,
    Unspecified,
}

/// A CBMA dataset: studies with their foci. Talairach vs MNI is metadata
/// only; no coordinate conversion is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FociDataset {
    pub studies: Vec<Study>,
    pub atlas_tag: AtlasTag,
}

impl FociDataset {
    pub fn new(studies: Vec<Study>, atlas_tag: AtlasTag) -> Result<Self> {
        let ds = Self { studies, atlas_tag };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.studies.is_empty() {
            return Err(CbmaError::Validation("no studies".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.studies {
            if !seen.insert(&s.id) {
                return Err(CbmaError::Validation(format!("duplicate study id {}", s.id)));
            }
            s.validate()?;
        }
        Ok(())
    }

    pub fn n_studies(&self) -> usize {
        self.studies.len()
    }

    pub fn n_foci(&self) -> usize {
        self.studies.iter().map(|s| s.foci.len()).sum()
    }

    /// Content hash over study ids, sample sizes and focus coordinates; used
    /// in null-cache fingerprints and provenance records.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.studies {
            h.update(s.id.as_bytes());
            h.update([0]);
            h.update(s.n_participants.to_le_bytes());
            for f in &s.foci {
                h.update(f.x.to_le_bytes());
                h.update(f.y.to_le_bytes());
                h.update(f.z.to_le_bytes());
                h.update(f.t_value.unwrap_or(f64::NAN).to_le_bytes());
            }
        }
        let digest = h.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn study(id: &str, n: u32, foci: Vec<Focus>) -> Study {
        Study {
            id: id.into(),
            label: id.into(),
            n_participants: n,
            foci,
        }
    }

    #[test]
    fn empty_foci_study_is_legal() {
        let ds = FociDataset::new(vec![study("a", 10, vec![])], AtlasTag::Mni).unwrap();
        assert_eq!(ds.n_foci(), 0);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let r = FociDataset::new(
            vec![study("a", 10, vec![]), study("a", 5, vec![])],
            AtlasTag::Mni,
        );
        assert!(r.is_err());
    }

    #[test]
    fn zero_t_value_rejected() {
        let f = Focus::with_t(0.0, 0.0, 0.0, 0.0);
        assert!(f.validate().is_err());
    }

    #[test]
    fn fingerprint_sensitive_to_coordinates() {
        let a = FociDataset::new(
            vec![study("a", 10, vec![Focus::new(1.0, 2.0, 3.0)])],
            AtlasTag::Mni,
        )
        .unwrap();
        let b = FociDataset::new(
            vec![study("a", 10, vec![Focus::new(1.0, 2.0, 4.0)])],
            AtlasTag::Mni,
        )
        .unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
