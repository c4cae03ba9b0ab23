//! Replicated simulate -> analyze -> threshold pipelines over an (I, p) grid
//! and the four power measures: P(at least one center detected), P(all
//! centers detected), mean number of centers detected, and mean voxel-wise
//! true positive rate over the 95% probability spheres.

mod report;

pub use report::{emit_report, load_report_csv};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data_model::BrainMask;
use crate::error::Result;
use crate::inference::{
    fdr_threshold, fixed_threshold, fwe_threshold, mc_null_max, p_uncorrected,
    statistic_and_exact_null, ThresholdResult,
};
use crate::kernel_maps::KernelSpec;
use crate::simulation::{gen_dataset, SimConfig};
use crate::statistics::StudyWeights;

/// Radius of the 95% probability sphere for isotropic Gaussian scatter:
/// sd * sqrt(chi-squared(3) 0.95-quantile), about 2.7955 * sd.
pub fn r95(scatter_sd_mm: f64) -> f64 {
    let chi2 = ChiSquared::new(3.0).expect("3 dof");
    scatter_sd_mm * chi2.inverse_cdf(0.95).sqrt()
}

/// Precomputed ground-truth geometry: per-center in-mask voxels inside the
/// 95% sphere, plus their union (the "truly active" voxels).
pub struct GroundTruth {
    pub center_voxels: Vec<Vec<u32>>,
    pub true_voxels: Vec<u32>,
    pub radius_mm: f64,
}

impl GroundTruth {
    pub fn new(centers: &[[f64; 3]], scatter_sd_mm: f64, mask: &BrainMask) -> Self {
        let radius_mm = r95(scatter_sd_mm);
        let grid = mask.grid();
        let mut center_voxels = vec![Vec::new(); centers.len()];
        let mut union = std::collections::BTreeSet::new();
        for &lin in mask.in_mask_linear() {
            let w = grid.voxel_to_world(grid.unlinear(lin as usize));
            for (j, &c) in centers.iter().enumerate() {
                if crate::data_model::euclidean_distance(w, c) <= radius_mm {
                    center_voxels[j].push(lin);
                    union.insert(lin);
                }
            }
        }
        Self {
            center_voxels,
            true_voxels: union.into_iter().collect(),
            radius_mm,
        }
    }
}

/// Centers with at least one significant voxel inside their 95% sphere.
pub fn detected_centers(result: &ThresholdResult, truth: &GroundTruth) -> Vec<usize> {
    truth
        .center_voxels
        .iter()
        .enumerate()
        .filter(|(_, voxels)| voxels.iter().any(|&lin| result.sig.data()[lin as usize]))
        .map(|(j, _)| j)
        .collect()
}

/// Fraction of truly active voxels that are significant.
pub fn true_positive_rate(result: &ThresholdResult, truth: &GroundTruth) -> f64 {
    if truth.true_voxels.is_empty() {
        return 0.0;
    }
    let hits = truth
        .true_voxels
        .iter()
        .filter(|&&lin| result.sig.data()[lin as usize])
        .count();
    hits as f64 / truth.true_voxels.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    pub mean: f64,
    pub se: f64,
}

/// The four power measures over B replicates. `detections[r]` is the number
/// of centers detected in replicate r; `tprs[r]` its true positive rate.
pub fn power_measures(detections: &[usize], tprs: &[f64], n_centers: usize) -> [Measure; 4] {
    let b = detections.len() as f64;
    assert!(b >= 1.0 && detections.len() == tprs.len());
    let binom = |m: f64| Measure {
        mean: m,
        se: (m * (1.0 - m) / b).sqrt(),
    };
    let any = detections.iter().filter(|&&d| d >= 1).count() as f64 / b;
    let all = detections.iter().filter(|&&d| d == n_centers).count() as f64 / b;
    let mean_count = detections.iter().sum::<usize>() as f64 / b;
    let var_count = detections
        .iter()
        .map(|&d| (d as f64 - mean_count).powi(2))
        .sum::<f64>()
        / b;
    let mean_tpr = tprs.iter().sum::<f64>() / b;
    let var_tpr = tprs.iter().map(|&t| (t - mean_tpr).powi(2)).sum::<f64>() / b;
    [
        binom(any),
        binom(all),
        Measure {
            mean: mean_count,
            se: (var_count / b).sqrt(),
        },
        Measure {
            mean: mean_tpr,
            se: (var_tpr / b).sqrt(),
        },
    ]
}

/// Inference procedure applied to each replicate's statistic image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InferenceProc {
    /// Exact enumeration null, BH-FDR thresholding.
    FdrExact { alpha: f64, bin_width: f64 },
    /// Monte Carlo max-statistic null, voxel-wise FWE thresholding.
    FweMc { alpha: f64, n_iter: usize },
    /// Exact enumeration null, fixed uncorrected cutoff.
    FixedExact { p: f64, bin_width: f64 },
}

/// One replicate of the simulate -> analyze -> threshold pipeline.
pub fn run_replicate(
    sim: &SimConfig,
    kernel: &KernelSpec,
    proc: InferenceProc,
    mask: &BrainMask,
) -> Result<ThresholdResult> {
    let dataset = gen_dataset(sim, mask)?;
    let weights = StudyWeights::uniform(dataset.n_studies());
    match proc {
        InferenceProc::FdrExact { alpha, bin_width } => {
            let (stat, null) = statistic_and_exact_null(&dataset, kernel, &weights, mask, bin_width)?;
            let p = p_uncorrected(&stat, &null, mask)?;
            fdr_threshold(&p, mask, alpha)
        }
        InferenceProc::FixedExact { p, bin_width } => {
            let (stat, null) = statistic_and_exact_null(&dataset, kernel, &weights, mask, bin_width)?;
            let punc = p_uncorrected(&stat, &null, mask)?;
            fixed_threshold(&punc, mask, p)
        }
        InferenceProc::FweMc { alpha, n_iter } => {
            let stat = crate::statistics::compute_statistic(&dataset, kernel, &weights, mask)?;
            // the null's replicate streams hang off a shifted seed so they
            // never collide with the dataset's own study streams
            let null = mc_null_max(&dataset, kernel, &weights, mask, n_iter, sim.seed ^ 0x9E37_79B9)?;
            fwe_threshold(&stat, &null, mask, alpha)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerCell {
    pub n_studies: usize,
    pub valid_fraction: f64,
    pub n_replicates: usize,
    pub measures: [Measure; 4],
    /// Wall-clock only; excluded from the serialized artifacts so identical
    /// configurations produce identical bytes.
    #[serde(skip_serializing, default)]
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerReport {
    pub cells: Vec<PowerCell>,
    pub n_centers: usize,
    pub scatter_sd_mm: f64,
    pub kernel: KernelSpec,
    pub proc: InferenceProc,
    pub seed: u64,
    pub fingerprint: String,
}

/// Replicate seed stream: (master, I, p, r), with p keyed at 1e-4 resolution.
fn replicate_seed(master: u64, n_studies: usize, p: f64, replicate: usize) -> u64 {
    use rand::RngCore;
    let p_key = (p * 10_000.0).round() as u64;
    crate::rng::stream(master, &[n_studies as u64, p_key, replicate as u64]).next_u64()
}

#[allow(clippy::too_many_arguments)]
pub fn sweep(
    i_grid: &[usize],
    p_grid: &[f64],
    n_replicates: usize,
    kernel: &KernelSpec,
    proc: InferenceProc,
    base: &SimConfig,
    mask: &BrainMask,
    master_seed: u64,
    progress: bool,
) -> Result<PowerReport> {
    assert!(!i_grid.is_empty() && !p_grid.is_empty() && n_replicates >= 1);
    let truth = GroundTruth::new(&base.centers, base.scatter_sd_mm, mask);
    let n_centers = base.centers.len();
    let mut cells = Vec::new();
    for &n_studies in i_grid {
        for &p in p_grid {
            let started = std::time::Instant::now();
            let mut detections = Vec::with_capacity(n_replicates);
            let mut tprs = Vec::with_capacity(n_replicates);
            for r in 0..n_replicates {
                let mut sim = base.clone();
                sim.n_studies = n_studies;
                sim.valid_fraction = p;
                sim.seed = replicate_seed(master_seed, n_studies, p, r);
                let result = run_replicate(&sim, kernel, proc, mask)?;
                detections.push(detected_centers(&result, &truth).len());
                tprs.push(true_positive_rate(&result, &truth));
            }
            let cell = PowerCell {
                n_studies,
                valid_fraction: p,
                n_replicates,
                measures: power_measures(&detections, &tprs, n_centers),
                runtime_secs: started.elapsed().as_secs_f64(),
            };
            if progress {
                eprintln!(
                    "cell I={n_studies} p={p:.2}: any={:.3} all={:.3} mean={:.2} tpr={:.3} ({:.1}s)",
                    cell.measures[0].mean,
                    cell.measures[1].mean,
                    cell.measures[2].mean,
                    cell.measures[3].mean,
                    cell.runtime_secs
                );
            }
            cells.push(cell);
        }
    }
    let fingerprint = {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(serde_json::to_string(kernel)?.as_bytes());
        h.update(serde_json::to_string(&proc)?.as_bytes());
        h.update(serde_json::to_string(&base.centers)?.as_bytes());
        h.update(base.scatter_sd_mm.to_le_bytes());
        h.update(mask.fingerprint().as_bytes());
        h.update(master_seed.to_le_bytes());
        h.update((n_replicates as u64).to_le_bytes());
        let d = h.finalize();
        d.iter().take(8).map(|b| format!("{b:02x}")).collect()
    };
    Ok(PowerReport {
        cells,
        n_centers,
        scatter_sd_mm: base.scatter_sd_mm,
        kernel: *kernel,
        proc,
        seed: master_seed,
        fingerprint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{Method, StatImage, VolumeGrid};
    use crate::inference::Procedure;

    #[test]
    fn r95_for_sd_4() {
        // 4 * sqrt(7.8147...) = 11.182
        let r = r95(4.0);
        assert!((r - 11.182).abs() < 0.005, "r95={r}");
    }

    #[test]
    fn power_measures_endpoints() {
        let all8 = vec![8usize; 5];
        let tprs = vec![0.9; 5];
        let m = power_measures(&all8, &tprs, 8);
        assert_eq!(m[0].mean, 1.0);
        assert_eq!(m[1].mean, 1.0);
        assert_eq!(m[2].mean, 8.0);
        assert!((m[3].mean - 0.9).abs() < 1e-12);

        let none = vec![0usize; 5];
        let zeros = vec![0.0; 5];
        let m = power_measures(&none, &zeros, 8);
        assert_eq!(m[0].mean, 0.0);
        assert_eq!(m[1].mean, 0.0);
        assert_eq!(m[2].mean, 0.0);
        assert_eq!(m[3].mean, 0.0);
    }

    #[test]
    fn power_measures_mixed() {
        let m = power_measures(&[3, 8], &[0.2, 0.9], 8);
        assert_eq!(m[0].mean, 1.0);
        assert_eq!(m[1].mean, 0.5);
        assert_eq!(m[2].mean, 5.5);
    }

    fn empty_result(mask: &BrainMask) -> ThresholdResult {
        ThresholdResult {
            sig: mask.grid().map(|_| false),
            p_uncorrected: None,
            p_corrected: None,
            clusters: vec![],
            procedure: Procedure::Fixed { p: 0.001 },
        }
    }

    #[test]
    fn detection_rule() {
        let mask = BrainMask::default_ellipsoid(4.0);
        let centers = crate::simulation::default_centers();
        let truth = GroundTruth::new(&centers, 4.0, &mask);
        // no significant voxels -> nothing detected
        let result = empty_result(&mask);
        assert!(detected_centers(&result, &truth).is_empty());
        assert_eq!(true_positive_rate(&result, &truth), 0.0);

        // significant voxel exactly at center 3 -> {3} only
        let mut result = empty_result(&mask);
        let g = mask.grid();
        let lin = g.linear(g.world_to_voxel(centers[3]).unwrap());
        result.sig.data_mut()[lin] = true;
        assert_eq!(detected_centers(&result, &truth), vec![3]);
        let _ = StatImage {
            grid: VolumeGrid::new(g.dims(), g.voxel_size(), g.origin()),
            method: Method::Ale,
            mask_ref: mask.fingerprint().to_string(),
        };
    }

    #[test]
    fn high_power_cell_detects_everything() {
        // I=40, p=1 at sigma 4 with FDR 0.05 should saturate
        let mask = BrainMask::default_ellipsoid(4.0);
        let base = SimConfig::new(40, 1.0, 0);
        let kernel = KernelSpec::Ale {
            sigma: crate::kernel_maps::SigmaMode::Fixed(4.0),
        };
        let report = sweep(
            &[40],
            &[1.0],
            3,
            &kernel,
            InferenceProc::FdrExact {
                alpha: 0.05,
                bin_width: 1e-4,
            },
            &base,
            &mask,
            11,
            false,
        )
        .unwrap();
        let m = &report.cells[0].measures;
        assert_eq!(m[0].mean, 1.0, "at least one center always detected");
        assert!(m[2].mean > 6.0, "mean detected {}", m[2].mean);
    }

    #[test]
    fn sweep_deterministic() {
        let mask = BrainMask::default_ellipsoid(8.0);
        let base = SimConfig::new(10, 0.5, 0);
        let kernel = KernelSpec::Ale {
            sigma: crate::kernel_maps::SigmaMode::Fixed(8.0),
        };
        let proc = InferenceProc::FdrExact {
            alpha: 0.05,
            bin_width: 1e-5,
        };
        let a = sweep(&[10], &[0.5], 3, &kernel, proc, &base, &mask, 5, false).unwrap();
        let b = sweep(&[10], &[0.5], 3, &kernel, proc, &base, &mask, 5, false).unwrap();
        assert_eq!(a.fingerprint, b.fingerprint);
        // wall-clock differs between runs; everything statistical must not
        for (ca, cb) in a.cells.iter().zip(&b.cells) {
            assert_eq!(
                serde_json::to_string(&ca.measures).unwrap(),
                serde_json::to_string(&cb.measures).unwrap()
            );
        }
    }
}
