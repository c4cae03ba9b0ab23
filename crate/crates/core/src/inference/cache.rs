//! Null-distribution cache files: JSON with an embedded configuration
//! fingerprint. Loading with a different expected fingerprint is refused so
//! stale caches cannot silently skew inference.

use std::path::Path;

use crate::error::{CbmaError, Result};

use super::null::NullDistribution;

pub fn save_null(path: &Path, null: &NullDistribution) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_vec(null)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_null(path: &Path, expected_fingerprint: &str) -> Result<NullDistribution> {
    let text = std::fs::read_to_string(path)?;
    let null: NullDistribution = serde_json::from_str(&text)?;
    if null.fingerprint != expected_fingerprint {
        return Err(CbmaError::FingerprintMismatch {
            expected: expected_fingerprint.to_string(),
            found: null.fingerprint,
        });
    }
    null.validate()?;
    Ok(null)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::Method;
    use crate::inference::null::NullKind;

    #[test]
    fn cache_round_trip_and_stale_refusal() {
        let null = NullDistribution {
            kind: NullKind::EmpiricalMax {
                samples: vec![0.1, 0.2, 0.3],
                n_iter: 3,
            },
            method: Method::Ale,
            mask_ref: "m".into(),
            fingerprint: "abc123".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("null.json");
        save_null(&path, &null).unwrap();
        let loaded = load_null(&path, "abc123").unwrap();
        assert_eq!(loaded.fingerprint, "abc123");
        assert!(matches!(
            load_null(&path, "other"),
            Err(CbmaError::FingerprintMismatch { .. })
        ));
    }
}
