use serde::{Deserialize, Serialize};

use crate::data_model::{BrainMask, StatImage, VolumeGrid};
use crate::error::{CbmaError, Result};

use super::cluster::{annotate_clusters, cluster_label, Cluster, Connectivity};
use super::null::{NullDistribution, NullKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Procedure {
    Fdr { alpha: f64 },
    FweVoxel { alpha: f64 },
    FweCluster { alpha: f64, forming_p: f64 },
    Fixed { p: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub sig: VolumeGrid<bool>,
    pub p_uncorrected: Option<VolumeGrid<f64>>,
    pub p_corrected: Option<VolumeGrid<f64>>,
    pub clusters: Vec<Cluster>,
    pub procedure: Procedure,
}

impl ThresholdResult {
    pub fn n_significant(&self) -> usize {
        self.sig.data().iter().filter(|&&b| b).count()
    }
}

/// Uncorrected right-tail p-values from an exact histogram null: the
/// probability mass of all bins at or above the statistic's own bin.
/// Out-of-mask voxels get p = 1.
pub fn p_uncorrected(stat: &StatImage, null: &NullDistribution, mask: &BrainMask) -> Result<VolumeGrid<f64>> {
    if stat.method != null.method {
        return Err(CbmaError::MethodMismatch(format!(
            "{} statistic against {} null",
            stat.method, null.method
        )));
    }
    if stat.mask_ref != mask.fingerprint() || null.mask_ref != mask.fingerprint() {
        return Err(CbmaError::MaskMismatch(
            "statistic, null and mask were not built together".into(),
        ));
    }
    let (bin_width, probs, support_min) = match &null.kind {
        NullKind::ExactHistogram {
            bin_width,
            probs,
            support_min,
        } => (*bin_width, probs, *support_min),
        NullKind::EmpiricalMax { .. } => {
            return Err(CbmaError::MethodMismatch(
                "empirical max null yields FWE p-values; use fwe_threshold".into(),
            ))
        }
    };
    // suffix sums: tail[b] = P(null >= bin b)
    let mut tail = vec![0.0f64; probs.len() + 1];
    for b in (0..probs.len()).rev() {
        tail[b] = tail[b + 1] + probs[b];
    }
    let mut p = mask.grid().map(|_| 1.0f64);
    for &lin in mask.in_mask_linear() {
        let v = stat.grid.data()[lin as usize];
        let b = ((v - support_min) / bin_width).floor();
        let pv = if b < 0.0 {
            1.0
        } else if b as usize >= probs.len() {
            0.0
        } else {
            tail[b as usize].min(1.0)
        };
        p.data_mut()[lin as usize] = pv;
    }
    Ok(p)
}

/// Benjamini-Hochberg step-up over the in-mask p-values. Corrected p-values
/// are the step-up adjusted values min_{j>=rank} V*p_(j)/j capped at 1; the
/// rejection set is tie-inclusive.
pub fn fdr_threshold(
    p: &VolumeGrid<f64>,
    mask: &BrainMask,
    alpha: f64,
) -> Result<ThresholdResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CbmaError::Validation(format!("alpha must be in (0,1), got {alpha}")));
    }
    let v_total = mask.n_in_mask();
    // (p, linear index), ties broken by voxel index ascending
    let mut order: Vec<(f64, u32)> = mask
        .in_mask_linear()
        .iter()
        .map(|&lin| (p.data()[lin as usize], lin))
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite p").then(a.1.cmp(&b.1)));

    // step-up: largest i with p_(i) <= i*alpha/V
    let mut crit_p: Option<f64> = None;
    for (i, &(pv, _)) in order.iter().enumerate().rev() {
        if pv <= (i + 1) as f64 * alpha / v_total as f64 {
            crit_p = Some(pv);
            break;
        }
    }

    // adjusted p: running min of V*p_(j)/j from the largest rank down
    let mut p_corr = mask.grid().map(|_| 1.0f64);
    let mut running = 1.0f64;
    for (i, &(pv, lin)) in order.iter().enumerate().rev() {
        running = running.min(v_total as f64 * pv / (i + 1) as f64).min(1.0);
        p_corr.data_mut()[lin as usize] = running;
    }

    let mut sig = mask.grid().map(|_| false);
    if let Some(cp) = crit_p {
        for &(pv, lin) in &order {
            if pv <= cp {
                sig.data_mut()[lin as usize] = true;
            }
        }
    }

    // peak = smallest uncorrected p (score by -p)
    let score = p.map(|&x| -x);
    let clusters = annotate_clusters(
        cluster_label(&sig, Connectivity::TwentySix),
        &score,
        Some(&p_corr),
    );
    Ok(ThresholdResult {
        sig,
        p_uncorrected: Some(p.clone()),
        p_corrected: Some(p_corr),
        clusters,
        procedure: Procedure::Fdr { alpha },
    })
}

/// Voxel-wise FWE from an empirical max-statistic null, with the add-one
/// permutation correction: p = (1 + #{samples >= stat}) / (1 + n_iter).
pub fn fwe_threshold(
    stat: &StatImage,
    null: &NullDistribution,
    mask: &BrainMask,
    alpha: f64,
) -> Result<ThresholdResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CbmaError::Validation(format!("alpha must be in (0,1), got {alpha}")));
    }
    if stat.method != null.method {
        return Err(CbmaError::MethodMismatch(format!(
            "{} statistic against {} null",
            stat.method, null.method
        )));
    }
    if stat.mask_ref != mask.fingerprint() || null.mask_ref != mask.fingerprint() {
        return Err(CbmaError::FingerprintMismatch {
            expected: mask.fingerprint().to_string(),
            found: null.mask_ref.clone(),
        });
    }
    let (samples, n_iter) = match &null.kind {
        NullKind::EmpiricalMax { samples, n_iter } => (samples, *n_iter),
        NullKind::ExactHistogram { .. } => {
            return Err(CbmaError::MethodMismatch(
                "exact histogram null has no max distribution; use p_uncorrected".into(),
            ))
        }
    };
    let mut p_fwe = mask.grid().map(|_| 1.0f64);
    let mut sig = mask.grid().map(|_| false);
    for &lin in mask.in_mask_linear() {
        let v = stat.grid.data()[lin as usize];
        let n_ge = samples.len() - samples.partition_point(|&s| s < v);
        let pv = (1 + n_ge) as f64 / (1 + n_iter) as f64;
        p_fwe.data_mut()[lin as usize] = pv;
        if pv <= alpha {
            sig.data_mut()[lin as usize] = true;
        }
    }
    let clusters = annotate_clusters(
        cluster_label(&sig, Connectivity::TwentySix),
        &stat.grid,
        Some(&p_fwe),
    );
    Ok(ThresholdResult {
        sig,
        p_uncorrected: None,
        p_corrected: Some(p_fwe),
        clusters,
        procedure: Procedure::FweVoxel { alpha },
    })
}

/// Fixed uncorrected cutoff: significant iff p < cut (strict).
pub fn fixed_threshold(
    p: &VolumeGrid<f64>,
    mask: &BrainMask,
    cut: f64,
) -> Result<ThresholdResult> {
    if !(cut > 0.0 && cut < 1.0) {
        return Err(CbmaError::Validation(format!("cutoff must be in (0,1), got {cut}")));
    }
    let mut sig = mask.grid().map(|_| false);
    for &lin in mask.in_mask_linear() {
        if p.data()[lin as usize] < cut {
            sig.data_mut()[lin as usize] = true;
        }
    }
    let score = p.map(|&x| -x);
    let clusters = annotate_clusters(cluster_label(&sig, Connectivity::TwentySix), &score, None);
    Ok(ThresholdResult {
        sig,
        p_uncorrected: Some(p.clone()),
        p_corrected: None,
        clusters,
        procedure: Procedure::Fixed { p: cut },
    })
}

/// Cluster-extent FWE: keep clusters whose size strictly exceeds the (1-alpha)
/// quantile of the null maximum cluster size. `forming` thresholds the
/// statistic image (values >= forming are suprathreshold), matching the
/// cutoff used to build `null_cluster_sizes`.
pub fn cluster_fwe(
    stat: &StatImage,
    forming: f64,
    forming_p: f64,
    null_cluster_sizes: &NullDistribution,
    mask: &BrainMask,
    alpha: f64,
    connectivity: Connectivity,
) -> Result<ThresholdResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CbmaError::Validation(format!("alpha must be in (0,1), got {alpha}")));
    }
    if stat.method != null_cluster_sizes.method
        || null_cluster_sizes.mask_ref != mask.fingerprint()
    {
        return Err(CbmaError::FingerprintMismatch {
            expected: mask.fingerprint().to_string(),
            found: null_cluster_sizes.mask_ref.clone(),
        });
    }
    let samples = match &null_cluster_sizes.kind {
        NullKind::EmpiricalMax { samples, .. } => samples,
        _ => {
            return Err(CbmaError::MethodMismatch(
                "cluster FWE needs an empirical max-cluster-size null".into(),
            ))
        }
    };
    let n = samples.len();
    let idx = (((1.0 - alpha) * n as f64).ceil() as usize).clamp(1, n) - 1;
    let crit_size = samples[idx];

    let mut supra = mask.grid().map(|_| false);
    for &lin in mask.in_mask_linear() {
        if stat.grid.data()[lin as usize] >= forming {
            supra.data_mut()[lin as usize] = true;
        }
    }
    let components = cluster_label(&supra, connectivity);
    let mut sig = mask.grid().map(|_| false);
    let mut surviving = Vec::new();
    for comp in components {
        if comp.len() as f64 > crit_size {
            for &lin in &comp {
                sig.data_mut()[lin as usize] = true;
            }
            surviving.push(comp);
        }
    }
    let clusters = annotate_clusters(surviving, &stat.grid, None);
    Ok(ThresholdResult {
        sig,
        p_uncorrected: None,
        p_corrected: None,
        clusters,
        procedure: Procedure::FweCluster {
            alpha,
            forming_p,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::Method;

    fn line_mask(n: usize) -> BrainMask {
        let mut g: VolumeGrid<bool> = VolumeGrid::new([n, 1, 1], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0]);
        g.data_mut().fill(true);
        BrainMask::new(g)
    }

    fn p_grid(mask: &BrainMask, values: &[f64]) -> VolumeGrid<f64> {
        let mut g = mask.grid().map(|_| 1.0f64);
        g.data_mut().copy_from_slice(values);
        g
    }

    #[test]
    fn bh_step_up_by_hand() {
        let mask = line_mask(4);
        let p = p_grid(&mask, &[0.001, 0.02, 0.03, 0.5]);
        let r = fdr_threshold(&p, &mask, 0.05).unwrap();
        // i*alpha/V = 0.0125, 0.025, 0.0375, 0.05; largest i with p_(i) <= crit is i=3
        assert_eq!(r.sig.data(), &[true, true, true, false]);
    }

    #[test]
    fn bh_all_ones_rejects_nothing() {
        let mask = line_mask(4);
        let p = p_grid(&mask, &[1.0, 1.0, 1.0, 1.0]);
        let r = fdr_threshold(&p, &mask, 0.05).unwrap();
        assert_eq!(r.n_significant(), 0);
    }

    #[test]
    fn bh_boundary_rejects_all() {
        let mask = line_mask(4);
        let v = 0.05 / 4.0;
        let p = p_grid(&mask, &[v, v, v, v]);
        let r = fdr_threshold(&p, &mask, 0.05).unwrap();
        assert_eq!(r.n_significant(), 4);
    }

    #[test]
    fn bh_between_bonferroni_and_uncorrected() {
        let mask = line_mask(6);
        let p = p_grid(&mask, &[0.004, 0.012, 0.02, 0.04, 0.3, 0.9]);
        let alpha = 0.05;
        let bh = fdr_threshold(&p, &mask, alpha).unwrap();
        let bonf = fixed_threshold(&p, &mask, alpha / 6.0).unwrap();
        let unc = fixed_threshold(&p, &mask, alpha).unwrap();
        for i in 0..6 {
            if bonf.sig.data()[i] {
                assert!(bh.sig.data()[i], "BH must contain Bonferroni rejections");
            }
            if bh.sig.data()[i] {
                assert!(unc.sig.data()[i], "BH must be within uncorrected rejections");
            }
        }
    }

    #[test]
    fn fixed_threshold_strictness() {
        let mask = line_mask(3);
        let p = p_grid(&mask, &[0.0009, 0.001, 0.5]);
        let r = fixed_threshold(&p, &mask, 0.001).unwrap();
        assert_eq!(r.sig.data(), &[true, false, false]);
    }

    fn empirical_null(mask: &BrainMask, samples: Vec<f64>) -> NullDistribution {
        let n = samples.len();
        NullDistribution {
            kind: NullKind::EmpiricalMax {
                samples,
                n_iter: n,
            },
            method: Method::Mkda,
            mask_ref: mask.fingerprint().to_string(),
            fingerprint: "test".into(),
        }
    }

    #[test]
    fn fwe_add_one_correction() {
        let mask = line_mask(3);
        let samples: Vec<f64> = (1..=99).map(|i| i as f64 / 100.0).collect();
        let null = empirical_null(&mask, samples);
        let mut stat = StatImage {
            grid: mask.grid().map(|_| 0.0f64),
            method: Method::Mkda,
            mask_ref: mask.fingerprint().to_string(),
        };
        stat.grid.data_mut()[0] = 2.0; // above every null max
        stat.grid.data_mut()[1] = 0.0;
        let r = fwe_threshold(&stat, &null, &mask, 0.05).unwrap();
        let p = r.p_corrected.as_ref().unwrap();
        assert_eq!(p.data()[0], 1.0 / 100.0);
        assert_eq!(p.data()[1], 1.0);
        assert!(r.sig.data()[0]);
        assert!(!r.sig.data()[1]);
    }

    #[test]
    fn fwe_monotone_in_statistic() {
        let mask = line_mask(2);
        let samples: Vec<f64> = (0..200).map(|i| i as f64 / 200.0).collect();
        let null = empirical_null(&mask, samples);
        let mut stat = StatImage {
            grid: mask.grid().map(|_| 0.0f64),
            method: Method::Mkda,
            mask_ref: mask.fingerprint().to_string(),
        };
        stat.grid.data_mut()[0] = 0.99;
        stat.grid.data_mut()[1] = 0.995; // raising the statistic keeps significance
        let r = fwe_threshold(&stat, &null, &mask, 0.05).unwrap();
        assert!(r.sig.data()[0] || !r.sig.data()[1]);
        let p = r.p_corrected.as_ref().unwrap();
        assert!(p.data()[1] <= p.data()[0]);
    }

    #[test]
    fn mask_mismatch_is_fingerprint_error() {
        let mask = line_mask(3);
        let other = line_mask(4);
        let null = empirical_null(&other, vec![0.5; 10]);
        let stat = StatImage {
            grid: mask.grid().map(|_| 0.0f64),
            method: Method::Mkda,
            mask_ref: mask.fingerprint().to_string(),
        };
        assert!(matches!(
            fwe_threshold(&stat, &null, &mask, 0.05),
            Err(CbmaError::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn cluster_fwe_boundary_rule() {
        let mask = line_mask(10);
        let mut stat = StatImage {
            grid: mask.grid().map(|_| 0.0f64),
            method: Method::Mkda,
            mask_ref: mask.fingerprint().to_string(),
        };
        for i in 0..3 {
            stat.grid.data_mut()[i] = 0.9; // one cluster of size 3
        }
        // null max sizes all 3: observed size equal to the quantile must not survive
        let null3 = empirical_null(&mask, vec![3.0; 100]);
        let r = cluster_fwe(&stat, 0.5, 0.01, &null3, &mask, 0.05, Connectivity::TwentySix).unwrap();
        assert_eq!(r.clusters.len(), 0);
        // null max sizes all 0: every observed cluster survives
        let null0 = empirical_null(&mask, vec![0.0; 100]);
        let r = cluster_fwe(&stat, 0.5, 0.01, &null0, &mask, 0.05, Connectivity::TwentySix).unwrap();
        assert_eq!(r.clusters.len(), 1);
        assert_eq!(r.clusters[0].size, 3);
    }
}
