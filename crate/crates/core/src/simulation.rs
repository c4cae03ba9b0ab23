//! Synthetic CBMA dataset generator: mixtures of valid studies whose foci
//! scatter around 8 population centers and noise studies with uniform foci.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data_model::{AtlasTag, BrainMask, FociDataset, Focus, Study};
use crate::error::{CbmaError, Result};

const MAX_REJECTION_DRAWS: usize = 10_000;

/// Per-center distribution over the number of reported foci:
/// 0 with probability 0.35, 1 with 0.50, 2 with 0.10, 3 with 0.05.
/// A center is thus detected by a valid study with probability 0.65, and the
/// expected number of foci per study is 8 * 0.85 = 6.8.
pub const REPORT_DIST: [(usize, f64); 4] = [(0, 0.35), (1, 0.50), (2, 0.10), (3, 0.05)];

/// Ground-truth class of a generated study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StudyClass {
    Valid,
    Noise,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub centers: Vec<[f64; 3]>,
    pub scatter_sd_mm: f64,
    pub n_studies: usize,
    pub valid_fraction: f64,
    pub n_participants: u32,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(n_studies: usize, valid_fraction: f64, seed: u64) -> Self {
        Self {
            centers: default_centers(),
            scatter_sd_mm: 2.0,
            n_studies,
            valid_fraction,
            n_participants: 12,
            seed,
        }
    }

    pub fn validate(&self, mask: &BrainMask) -> Result<()> {
        if self.centers.is_empty() {
            return Err(CbmaError::Validation("no population centers".into()));
        }
        if !(self.scatter_sd_mm > 0.0) {
            return Err(CbmaError::Validation("scatter SD must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.valid_fraction) {
            return Err(CbmaError::Validation("valid fraction must be in [0,1]".into()));
        }
        if self.n_studies < 1 || self.n_participants < 1 {
            return Err(CbmaError::Validation(
                "need at least one study and one participant".into(),
            ));
        }
        for c in &self.centers {
            if !mask.contains_world(*c) {
                return Err(CbmaError::Validation(format!(
                    "population center ({}, {}, {}) lies outside the mask",
                    c[0], c[1], c[2]
                )));
            }
        }
        let total: f64 = REPORT_DIST.iter().map(|&(_, p)| p).sum();
        debug_assert!((total - 1.0).abs() < 1e-12);
        Ok(())
    }
}

/// Vertices of a rectangular box centered in the default ellipsoid mask.
/// Half-extents (30, 35, 30) mm give at least 60 mm pairwise separation, so
/// detection events at different centers are spatially unambiguous.
pub fn default_centers() -> Vec<[f64; 3]> {
    let center = [0.0, -18.0, 18.0];
    let half = [30.0, 35.0, 30.0];
    let mut out = Vec::with_capacity(8);
    for &sz in &[-1.0, 1.0] {
        for &sy in &[-1.0, 1.0] {
            for &sx in &[-1.0, 1.0] {
                out.push([
                    center[0] + sx * half[0],
                    center[1] + sy * half[1],
                    center[2] + sz * half[2],
                ]);
            }
        }
    }
    out
}

fn draw_report_count(rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(count, p) in &REPORT_DIST {
        acc += p;
        if u < acc {
            return count;
        }
    }
    REPORT_DIST.last().unwrap().0
}

/// Gaussian scatter around a center, truncated to the mask by rejection.
fn draw_truncated_gaussian(
    center: [f64; 3],
    sd: f64,
    mask: &BrainMask,
    rng: &mut ChaCha8Rng,
) -> Result<Focus> {
    let normal = Normal::new(0.0, sd).expect("positive sd");
    for _ in 0..MAX_REJECTION_DRAWS {
        let p = [
            center[0] + normal.sample(rng),
            center[1] + normal.sample(rng),
            center[2] + normal.sample(rng),
        ];
        if mask.contains_world(p) {
            return Ok(Focus::new(p[0], p[1], p[2]));
        }
    }
    Err(CbmaError::RejectionExhausted(MAX_REJECTION_DRAWS))
}

/// A valid study: each center independently contributes 0-3 foci scattered
/// N(center, sd^2 I), redrawn while out of mask.
pub fn gen_valid_study(
    cfg: &SimConfig,
    mask: &BrainMask,
    id: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Study> {
    let mut foci = Vec::new();
    for center in &cfg.centers {
        let count = draw_report_count(rng);
        for _ in 0..count {
            foci.push(draw_truncated_gaussian(*center, cfg.scatter_sd_mm, mask, rng)?);
        }
    }
    Ok(Study {
        id: id.to_string(),
        label: format!("{id} valid"),
        n_participants: cfg.n_participants,
        foci,
    })
}

/// A noise study: the focus count follows the same compound distribution as
/// a valid study (sum over 8 per-center draws), locations i.i.d. uniform
/// over in-mask voxel centers.
pub fn gen_noise_study(
    cfg: &SimConfig,
    mask: &BrainMask,
    id: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Study> {
    let count: usize = (0..cfg.centers.len()).map(|_| draw_report_count(rng)).sum();
    let grid = mask.grid();
    let centers = mask.in_mask_linear();
    let foci = (0..count)
        .map(|_| {
            let lin = centers[rng.gen_range(0..centers.len())] as usize;
            let w = grid.voxel_to_world(grid.unlinear(lin));
            Focus::new(w[0], w[1], w[2])
        })
        .collect();
    Ok(Study {
        id: id.to_string(),
        label: format!("{id} noise"),
        n_participants: cfg.n_participants,
        foci,
    })
}

/// Number of valid studies for the configured fraction: round(I*p), with
/// half-away-from-zero rounding.
pub fn n_valid(cfg: &SimConfig) -> usize {
    (cfg.n_studies as f64 * cfg.valid_fraction).round() as usize
}

/// Generate the full dataset: round(I*p) valid studies followed by the
/// remaining noise studies. Each study draws from its own seed stream, so
/// output is identical regardless of worker count.
pub fn gen_dataset(cfg: &SimConfig, mask: &BrainMask) -> Result<FociDataset> {
    cfg.validate(mask)?;
    let nv = n_valid(cfg);
    let mut studies = Vec::with_capacity(cfg.n_studies);
    for k in 0..cfg.n_studies {
        let mut rng = crate::rng::stream(cfg.seed, &[k as u64]);
        let id = format!("sim{k:04}");
        let study = if k < nv {
            gen_valid_study(cfg, mask, &id, &mut rng)?
        } else {
            gen_noise_study(cfg, mask, &id, &mut rng)?
        };
        studies.push(study);
    }
    FociDataset::new(studies, AtlasTag::Unspecified)
}

/// Ground-truth class per generated study, in study order.
pub fn classes(cfg: &SimConfig) -> Vec<StudyClass> {
    let nv = n_valid(cfg);
    (0..cfg.n_studies)
        .map(|k| {
            if k < nv {
                StudyClass::Valid
            } else {
                StudyClass::Noise
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask() -> BrainMask {
        BrainMask::default_ellipsoid(4.0)
    }

    #[test]
    fn default_centers_inside_default_mask() {
        let m = mask();
        for c in default_centers() {
            assert!(m.contains_world(c), "center {c:?} outside mask");
        }
        // pairwise separation >= 40 mm
        let cs = default_centers();
        for i in 0..cs.len() {
            for j in (i + 1)..cs.len() {
                let d = crate::data_model::euclidean_distance(cs[i], cs[j]);
                assert!(d >= 40.0, "centers {i},{j} separated by only {d}");
            }
        }
    }

    #[test]
    fn valid_study_foci_inside_mask() {
        let m = mask();
        let cfg = SimConfig::new(10, 1.0, 5);
        let mut rng = crate::rng::stream(5, &[0]);
        let s = gen_valid_study(&cfg, &m, "s0", &mut rng).unwrap();
        for f in &s.foci {
            assert!(m.contains_world(f.point()));
        }
        assert!(s.foci.len() <= 24); // 8 centers x max 3
    }

    #[test]
    fn noise_count_support_bounded() {
        let m = mask();
        let cfg = SimConfig::new(10, 0.0, 5);
        for k in 0..200 {
            let mut rng = crate::rng::stream(5, &[k]);
            let s = gen_noise_study(&cfg, &m, "s", &mut rng).unwrap();
            assert!(s.foci.len() <= 24);
        }
    }

    #[test]
    fn tiny_scatter_keeps_foci_at_centers() {
        let m = mask();
        let mut cfg = SimConfig::new(1, 1.0, 9);
        cfg.scatter_sd_mm = 1e-9;
        let mut rng = crate::rng::stream(9, &[0]);
        let s = gen_valid_study(&cfg, &m, "s", &mut rng).unwrap();
        for f in &s.foci {
            let near = cfg
                .centers
                .iter()
                .any(|&c| crate::data_model::euclidean_distance(f.point(), c) < 1e-6);
            assert!(near);
        }
    }

    #[test]
    fn split_counts() {
        for (i, p, nv_expect) in [(20, 0.0, 0), (120, 1.0, 120), (40, 0.5, 20)] {
            let cfg = SimConfig::new(i, p, 1);
            assert_eq!(n_valid(&cfg), nv_expect);
        }
    }

    #[test]
    fn dataset_reproducible() {
        let m = mask();
        let cfg = SimConfig::new(12, 0.5, 77);
        let a = gen_dataset(&cfg, &m).unwrap();
        let b = gen_dataset(&cfg, &m).unwrap();
        assert_eq!(a, b);
        assert_eq!(classes(&cfg).iter().filter(|&&c| c == StudyClass::Valid).count(), 6);
    }

    #[test]
    fn center_outside_mask_rejected() {
        let m = mask();
        let mut cfg = SimConfig::new(4, 0.5, 1);
        cfg.centers[0] = [500.0, 0.0, 0.0];
        assert!(cfg.validate(&m).is_err());
    }

    #[test]
    fn empirical_moments_close() {
        // quick version of the acceptance check: 20k studies
        let m = mask();
        let cfg = SimConfig::new(1, 1.0, 3);
        let n = 20_000;
        let mut total_foci = 0usize;
        let mut detections = 0usize;
        for k in 0..n {
            let mut rng = crate::rng::stream(3, &[k as u64]);
            let s = gen_valid_study(&cfg, &m, "s", &mut rng).unwrap();
            total_foci += s.foci.len();
            // center 0 detected iff some focus within a few SD of it
            let c = cfg.centers[0];
            if s
                .foci
                .iter()
                .any(|f| crate::data_model::euclidean_distance(f.point(), c) < 20.0)
            {
                detections += 1;
            }
        }
        let mean_foci = total_foci as f64 / n as f64;
        assert!((mean_foci - 6.8).abs() < 0.05, "mean foci {mean_foci}");
        let det_rate = detections as f64 / n as f64;
        assert!((det_rate - 0.65).abs() < 0.015, "detection rate {det_rate}");
    }
}
