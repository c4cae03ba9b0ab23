use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data_model::{BrainMask, FociDataset, Method, StatImage, VolumeGrid};
use crate::error::{CbmaError, Result};
use crate::kernel_maps::{KernelSpec, StudyMap};
use crate::statistics::{StatAccumulator, StudyWeights};

use super::cluster::{cluster_label, Connectivity};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum NullKind {
    /// Sorted ascending sample of the in-mask maximum statistic (or maximum
    /// cluster size) over Monte Carlo replicates.
    EmpiricalMax { samples: Vec<f64>, n_iter: usize },
    /// Exact marginal null as a probability histogram: bin b covers values in
    /// [support_min + b*bin_width, support_min + (b+1)*bin_width).
    ExactHistogram {
        bin_width: f64,
        probs: Vec<f64>,
        support_min: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NullDistribution {
    pub kind: NullKind,
    pub method: Method,
    pub mask_ref: String,
    /// Configuration fingerprint: dataset, kernel, weights, mask, n_iter, seed.
    pub fingerprint: String,
}

impl NullDistribution {
    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            NullKind::EmpiricalMax { samples, n_iter } => {
                if samples.len() != *n_iter || samples.is_empty() {
                    return Err(CbmaError::Validation(
                        "empirical null sample length must equal n_iter >= 1".into(),
                    ));
                }
                if samples.windows(2).any(|w| w[0] > w[1]) {
                    return Err(CbmaError::Validation("empirical null not sorted".into()));
                }
            }
            NullKind::ExactHistogram {
                bin_width, probs, ..
            } => {
                if !(*bin_width > 0.0) {
                    return Err(CbmaError::Validation("bin width must be positive".into()));
                }
                if probs.iter().any(|&p| p < 0.0) {
                    return Err(CbmaError::Validation("negative null probability".into()));
                }
                let total = crate::util::kahan_sum(probs.iter().copied());
                if (total - 1.0).abs() > 1e-9 {
                    return Err(CbmaError::Validation(format!(
                        "null histogram mass {total} != 1"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Fingerprint tying a null distribution to the configuration it was built
/// from; caches with a different fingerprint are refused.
pub fn null_fingerprint(
    dataset: &FociDataset,
    kernel: &KernelSpec,
    weights: &StudyWeights,
    mask: &BrainMask,
    n_iter: usize,
    seed: u64,
) -> String {
    let mut h = Sha256::new();
    h.update(dataset.fingerprint().as_bytes());
    h.update(serde_json::to_string(kernel).expect("kernel json").as_bytes());
    for w in weights.as_slice() {
        h.update(w.to_le_bytes());
    }
    h.update(mask.fingerprint().as_bytes());
    h.update((n_iter as u64).to_le_bytes());
    h.update(seed.to_le_bytes());
    let digest = h.finalize();
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Replace every focus of every study with an independent uniform draw over
/// in-mask voxel centers. Signs and counts are preserved. The RNG stream is
/// derived from (seed, replicate, study) so results do not depend on worker
/// scheduling.
fn null_dataset(
    dataset: &FociDataset,
    mask: &BrainMask,
    seed: u64,
    replicate: u64,
) -> FociDataset {
    let grid = mask.grid();
    let centers = mask.in_mask_linear();
    let mut out = dataset.clone();
    for (si, study) in out.studies.iter_mut().enumerate() {
        let mut rng = crate::rng::stream(seed, &[replicate, si as u64]);
        for focus in &mut study.foci {
            let lin = centers[rng.gen_range(0..centers.len())] as usize;
            let w = grid.voxel_to_world(grid.unlinear(lin));
            focus.x = w[0];
            focus.y = w[1];
            focus.z = w[2];
        }
    }
    out
}

/// Monte Carlo null of the maximal statistic under random foci allocation.
pub fn mc_null_max(
    dataset: &FociDataset,
    kernel: &KernelSpec,
    weights: &StudyWeights,
    mask: &BrainMask,
    n_iter: usize,
    seed: u64,
) -> Result<NullDistribution> {
    if n_iter < 1 {
        return Err(CbmaError::Validation("n_iter must be >= 1".into()));
    }
    kernel.validate()?;
    let mut samples = Vec::with_capacity(n_iter);
    for rep in 0..n_iter {
        let null_ds = null_dataset(dataset, mask, seed, rep as u64);
        let stat = crate::statistics::compute_statistic(&null_ds, kernel, weights, mask)?;
        samples.push(stat.max_in_mask(mask).0);
    }
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite max samples"));
    Ok(NullDistribution {
        kind: NullKind::EmpiricalMax {
            samples,
            n_iter,
        },
        method: kernel.method(),
        mask_ref: mask.fingerprint().to_string(),
        fingerprint: null_fingerprint(dataset, kernel, weights, mask, n_iter, seed),
    })
}

/// Monte Carlo null of the maximal suprathreshold cluster size. The forming
/// threshold is a statistic cutoff (use [`value_at_tail_p`] to translate an
/// uncorrected p into one).
pub fn mc_null_max_cluster(
    dataset: &FociDataset,
    kernel: &KernelSpec,
    weights: &StudyWeights,
    mask: &BrainMask,
    forming_cutoff: f64,
    connectivity: Connectivity,
    n_iter: usize,
    seed: u64,
) -> Result<NullDistribution> {
    if n_iter < 1 {
        return Err(CbmaError::Validation("n_iter must be >= 1".into()));
    }
    let mut samples = Vec::with_capacity(n_iter);
    for rep in 0..n_iter {
        let null_ds = null_dataset(dataset, mask, seed, rep as u64);
        let stat = crate::statistics::compute_statistic(&null_ds, kernel, weights, mask)?;
        let mut sig = mask.grid().map(|_| false);
        for &lin in mask.in_mask_linear() {
            if stat.grid.data()[lin as usize] >= forming_cutoff {
                sig.data_mut()[lin as usize] = true;
            }
        }
        let max_size = cluster_label(&sig, connectivity)
            .iter()
            .map(|c| c.len())
            .max()
            .unwrap_or(0);
        samples.push(max_size as f64);
    }
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite sizes"));
    Ok(NullDistribution {
        kind: NullKind::EmpiricalMax {
            samples,
            n_iter,
        },
        method: kernel.method(),
        mask_ref: mask.fingerprint().to_string(),
        fingerprint: null_fingerprint(dataset, kernel, weights, mask, n_iter, seed),
    })
}

/// Iterated histogram combination producing the exact (up to binning)
/// marginal null of the combined statistic when each study's map value is
/// drawn at an independent uniform in-mask voxel.
pub struct ExactNullBuilder {
    method: Method,
    bin_width: f64,
    support_min: f64,
    probs: Vec<f64>,
    /// Conditional mean statistic value per occupied bin. Both fold rules are
    /// (bi)linear, so with independent draws the per-bin means propagate
    /// exactly; this keeps sub-bin-width contributions (deep kernel tails)
    /// from being rounded away fold after fold.
    cents: Vec<f64>,
    /// Probability that the accumulated statistic is exactly zero. Kept out of
    /// the histogram because the zero bin would otherwise mix a large point
    /// mass at 0 with small positive tail values; the mixed mean then shifts
    /// the frequent "single nonzero study" outcomes into the wrong bin.
    zero_p: f64,
    scratch_p: Vec<f64>,
    scratch_c: Vec<f64>,
    counts: Vec<u32>,
    sums: Vec<f64>,
    hi_occupied: usize,
    lo_occupied: usize,
    started: bool,
}

impl ExactNullBuilder {
    pub fn new(method: Method, bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0) {
            return Err(CbmaError::Validation("bin width must be positive".into()));
        }
        let (support_min, support_max) = match method {
            Method::Sdm => (-1.0, 1.0),
            Method::Mkda | Method::Ale => (0.0, 1.0),
        };
        let nbins = ((support_max - support_min) / bin_width).ceil() as usize + 1;
        Ok(Self {
            method,
            bin_width,
            support_min,
            probs: vec![0.0; nbins],
            cents: vec![0.0; nbins],
            zero_p: 1.0, // empty combination is identically 0
            scratch_p: vec![0.0; nbins],
            scratch_c: vec![0.0; nbins],
            counts: vec![0; nbins],
            sums: vec![0.0; nbins],
            hi_occupied: 0,
            lo_occupied: usize::MAX,
            started: false,
        })
    }

    #[inline]
    fn bin_of(&self, value: f64) -> usize {
        let b = ((value - self.support_min) / self.bin_width).floor();
        (b.max(0.0) as usize).min(self.probs.len() - 1)
    }

    /// Sparse histogram of a study map's values over the in-mask voxels as
    /// (bin, probability, mean value) ascending by bin. Uses dense count/sum
    /// buffers plus a touched list so the per-fold cost stays
    /// O(V + distinct bins).
    fn study_histogram(
        &mut self,
        values: &VolumeGrid<f64>,
        mask: &BrainMask,
    ) -> (f64, Vec<(usize, f64, f64)>) {
        let mut touched: Vec<usize> = Vec::new();
        let mut n_zero = 0usize;
        for &lin in mask.in_mask_linear() {
            let v = values.data()[lin as usize];
            if v == 0.0 {
                n_zero += 1;
                continue;
            }
            let b = self.bin_of(v);
            if self.counts[b] == 0 {
                touched.push(b);
            }
            self.counts[b] += 1;
            self.sums[b] += v;
        }
        touched.sort_unstable();
        let total = mask.n_in_mask() as f64;
        let hist: Vec<(usize, f64, f64)> = touched
            .iter()
            .map(|&b| {
                (
                    b,
                    self.counts[b] as f64 / total,
                    self.sums[b] / self.counts[b] as f64,
                )
            })
            .collect();
        for &b in &touched {
            self.counts[b] = 0;
            self.sums[b] = 0.0;
        }
        (n_zero as f64 / total, hist)
    }

    /// Fold one study into the accumulated null. `weight_share` is w_i over
    /// the total weight (ignored for ALE, whose combination is unweighted).
    pub fn add_study(
        &mut self,
        values: &VolumeGrid<f64>,
        mask: &BrainMask,
        weight_share: f64,
    ) -> Result<()> {
        if !values.same_geometry(mask.grid()) {
            return Err(CbmaError::MaskMismatch("study map grid mismatch".into()));
        }
        let (study_zero_p, hist) = self.study_histogram(values, mask);
        self.scratch_p.fill(0.0);
        self.scratch_c.fill(0.0);
        let last = self.probs.len() - 1;
        let inv_bw = 1.0 / self.bin_width;
        let smin = self.support_min;
        let is_union = matches!(self.method, Method::Ale);
        let mut new_lo = usize::MAX;
        let mut new_hi = 0usize;
        let mut deposit = |sp: &mut Vec<f64>, sc: &mut Vec<f64>, mass: f64, value: f64| {
            let nb = ((((value - smin) * inv_bw) as usize).min(last)).max(0);
            sp[nb] += mass;
            sc[nb] += mass * value;
            new_lo = new_lo.min(nb);
            new_hi = new_hi.max(nb);
        };
        // statistic is exactly zero iff the accumulated part and this study
        // are both zero at the voxel
        for &(_, study_p, study_val) in &hist {
            let delta = weight_share * study_val;
            // accumulated part exactly zero: the study value passes through
            deposit(
                &mut self.scratch_p,
                &mut self.scratch_c,
                self.zero_p * study_p,
                if is_union { study_val } else { delta },
            );
            if self.lo_occupied > self.hi_occupied {
                continue;
            }
            for acc_bin in self.lo_occupied..=self.hi_occupied {
                let acc_p = self.probs[acc_bin];
                if acc_p == 0.0 {
                    continue;
                }
                let acc_v = self.cents[acc_bin];
                // union of probabilities for ALE, running weighted mean
                // for MKDA/SDM; both preserve per-bin means exactly
                let combined = if is_union {
                    acc_v + study_val - acc_v * study_val
                } else {
                    acc_v + delta
                };
                deposit(
                    &mut self.scratch_p,
                    &mut self.scratch_c,
                    acc_p * study_p,
                    combined,
                );
            }
        }
        // this study exactly zero: the accumulated value passes through
        if study_zero_p > 0.0 && self.lo_occupied <= self.hi_occupied {
            for acc_bin in self.lo_occupied..=self.hi_occupied {
                let acc_p = self.probs[acc_bin];
                if acc_p == 0.0 {
                    continue;
                }
                deposit(
                    &mut self.scratch_p,
                    &mut self.scratch_c,
                    acc_p * study_zero_p,
                    self.cents[acc_bin],
                );
            }
        }
        self.zero_p *= study_zero_p;
        for b in new_lo..=new_hi {
            self.cents[b] = if self.scratch_p[b] > 0.0 {
                self.scratch_c[b] / self.scratch_p[b]
            } else {
                0.0
            };
        }
        std::mem::swap(&mut self.probs, &mut self.scratch_p);
        self.lo_occupied = new_lo;
        self.hi_occupied = new_hi;
        self.started = true;
        Ok(())
    }

    pub fn finish(mut self, mask: &BrainMask, fingerprint: String) -> Result<NullDistribution> {
        if !self.started {
            return Err(CbmaError::Validation("no study maps".into()));
        }
        let zero_bin = self.bin_of(0.0);
        self.probs[zero_bin] += self.zero_p;
        let null = NullDistribution {
            kind: NullKind::ExactHistogram {
                bin_width: self.bin_width,
                probs: self.probs,
                support_min: self.support_min,
            },
            method: self.method,
            mask_ref: mask.fingerprint().to_string(),
            fingerprint,
        };
        null.validate()?;
        Ok(null)
    }
}

fn exact_null_impl(
    maps: &[StudyMap],
    weights: &StudyWeights,
    mask: &BrainMask,
    bin_width: f64,
    method: Method,
) -> Result<NullDistribution> {
    if maps.is_empty() {
        return Err(CbmaError::Validation("no study maps".into()));
    }
    if weights.len() != maps.len() {
        return Err(CbmaError::Validation(format!(
            "{} weights for {} studies",
            weights.len(),
            maps.len()
        )));
    }
    let mut builder = ExactNullBuilder::new(method, bin_width)?;
    for (i, m) in maps.iter().enumerate() {
        if m.method != method {
            return Err(CbmaError::MethodMismatch(format!(
                "expected {method} map, study {} has {}",
                m.study_id, m.method
            )));
        }
        if m.mask_ref != mask.fingerprint() {
            return Err(CbmaError::MaskMismatch(format!(
                "study {} was computed over a different mask",
                m.study_id
            )));
        }
        builder.add_study(&m.grid, mask, weights.get(i) / weights.total())?;
    }
    builder.finish(mask, String::new())
}

/// Exact null of the ALE statistic by exhaustive enumeration over in-mask
/// voxel values, one histogram fold per study.
pub fn ale_exact_null(
    maps: &[StudyMap],
    mask: &BrainMask,
    bin_width: f64,
) -> Result<NullDistribution> {
    exact_null_impl(maps, &StudyWeights::uniform(maps.len()), mask, bin_width, Method::Ale)
}

/// Exact null for any of the three kernels under the common enumeration
/// procedure (weighted-mean folding for MKDA/SDM).
pub fn exact_null(
    maps: &[StudyMap],
    weights: &StudyWeights,
    mask: &BrainMask,
    bin_width: f64,
) -> Result<NullDistribution> {
    let method = maps
        .first()
        .map(|m| m.method)
        .ok_or_else(|| CbmaError::Validation("no study maps".into()))?;
    exact_null_impl(maps, weights, mask, bin_width, method)
}

/// Smallest statistic value whose right-tail probability under the null is
/// at most `p`. Used to turn a forming p-value into a statistic cutoff.
pub fn value_at_tail_p(null: &NullDistribution, p: f64) -> Result<f64> {
    match &null.kind {
        NullKind::ExactHistogram {
            bin_width,
            probs,
            support_min,
        } => {
            let mut tail = 0.0;
            let mut cutoff = support_min + probs.len() as f64 * bin_width;
            for b in (0..probs.len()).rev() {
                tail += probs[b];
                if tail > p {
                    break;
                }
                cutoff = support_min + b as f64 * bin_width;
            }
            Ok(cutoff)
        }
        NullKind::EmpiricalMax { samples, .. } => {
            // empirical (1-p) quantile of the max sample
            let n = samples.len();
            let idx = (((1.0 - p) * n as f64).ceil() as usize).clamp(1, n) - 1;
            Ok(samples[idx])
        }
    }
}

/// A brute-force Monte Carlo oracle for the exact null: combine each study's
/// map value at an independently drawn uniform in-mask voxel. Returns raw
/// (unsorted by replicate, then sorted) statistic draws.
pub fn mc_null_oracle(
    maps: &[StudyMap],
    weights: &StudyWeights,
    mask: &BrainMask,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if maps.is_empty() {
        return Err(CbmaError::Validation("no study maps".into()));
    }
    let method = maps[0].method;
    let centers = mask.in_mask_linear();
    let mut rng = crate::rng::stream(seed, &[0xC0FFEE]);
    let mut out = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let mut acc = match method {
            Method::Ale => 1.0,
            _ => 0.0,
        };
        for (i, m) in maps.iter().enumerate() {
            let lin = centers[rng.gen_range(0..centers.len())] as usize;
            let v = m.grid.data()[lin];
            match method {
                Method::Ale => acc *= 1.0 - v,
                Method::Mkda | Method::Sdm => acc += weights.get(i) / weights.total() * v,
            }
        }
        out.push(match method {
            Method::Ale => 1.0 - acc,
            _ => acc,
        });
    }
    out.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
    Ok(out)
}

/// Build a statistic image plus the matching exact null in a single pass over
/// the studies, holding only one study map at a time.
pub fn statistic_and_exact_null(
    dataset: &FociDataset,
    kernel: &KernelSpec,
    weights: &StudyWeights,
    mask: &BrainMask,
    bin_width: f64,
) -> Result<(StatImage, NullDistribution)> {
    kernel.validate()?;
    let g = mask.grid();
    let mut scratch: VolumeGrid<f64> = VolumeGrid::new(g.dims(), g.voxel_size(), g.origin());
    let mut acc = StatAccumulator::new(kernel.method(), mask);
    let mut builder = ExactNullBuilder::new(kernel.method(), bin_width)?;
    for (i, study) in dataset.studies.iter().enumerate() {
        crate::kernel_maps::study_map_into(study, kernel, mask, &mut scratch)?;
        acc.add(&scratch, weights.get(i))?;
        builder.add_study(&scratch, mask, weights.get(i) / weights.total())?;
    }
    let stat = acc.finish()?;
    let fp = null_fingerprint(dataset, kernel, weights, mask, 0, 0);
    let null = builder.finish(mask, fp)?;
    Ok((stat, null))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{AtlasTag, Focus, Study};
    use crate::kernel_maps::{ale_study_map, SigmaMode};

    fn cube_mask(n: usize) -> BrainMask {
        let mut g: VolumeGrid<bool> =
            VolumeGrid::new([n, n, n], [2.0, 2.0, 2.0], [0.0, 0.0, 0.0]);
        g.data_mut().fill(true);
        BrainMask::new(g)
    }

    fn dataset(foci_per_study: &[usize]) -> FociDataset {
        let studies = foci_per_study
            .iter()
            .enumerate()
            .map(|(i, &k)| Study {
                id: format!("s{i}"),
                label: format!("s{i}"),
                n_participants: 12,
                foci: (0..k)
                    .map(|j| Focus::new(4.0 + 2.0 * j as f64, 6.0, 8.0))
                    .collect(),
            })
            .collect();
        FociDataset::new(studies, AtlasTag::Unspecified).unwrap()
    }

    #[test]
    fn zero_foci_dataset_all_max_samples_zero() {
        let mask = cube_mask(8);
        let ds = dataset(&[0, 0]);
        let kernel = KernelSpec::Mkda { radius_mm: 6.0 };
        let w = StudyWeights::uniform(2);
        let null = mc_null_max(&ds, &kernel, &w, &mask, 20, 1).unwrap();
        match null.kind {
            NullKind::EmpiricalMax { samples, .. } => {
                assert!(samples.iter().all(|&s| s == 0.0))
            }
            _ => panic!(),
        }
    }

    #[test]
    fn single_study_single_focus_mkda_max_is_one() {
        // the sphere always contains its own center voxel
        let mask = cube_mask(8);
        let ds = dataset(&[1]);
        let kernel = KernelSpec::Mkda { radius_mm: 6.0 };
        let null = mc_null_max(&ds, &kernel, &StudyWeights::uniform(1), &mask, 30, 2).unwrap();
        match null.kind {
            NullKind::EmpiricalMax { samples, .. } => {
                assert!(samples.iter().all(|&s| s == 1.0))
            }
            _ => panic!(),
        }
    }

    #[test]
    fn mc_null_deterministic_under_seed() {
        let mask = cube_mask(8);
        let ds = dataset(&[2, 3]);
        let kernel = KernelSpec::Ale {
            sigma: SigmaMode::Fixed(4.0),
        };
        let w = StudyWeights::uniform(2);
        let a = mc_null_max(&ds, &kernel, &w, &mask, 25, 7).unwrap();
        let b = mc_null_max(&ds, &kernel, &w, &mask, 25, 7).unwrap();
        match (&a.kind, &b.kind) {
            (
                NullKind::EmpiricalMax { samples: sa, .. },
                NullKind::EmpiricalMax { samples: sb, .. },
            ) => assert_eq!(sa, sb),
            _ => panic!(),
        }
    }

    #[test]
    fn exact_null_single_study_tail_at_max() {
        // P(l* >= max L_1) = (#voxels attaining the max)/V
        let mask = cube_mask(10);
        let s = Study {
            id: "s".into(),
            label: "s".into(),
            n_participants: 12,
            foci: vec![Focus::new(8.0, 8.0, 8.0)],
        };
        let map = ale_study_map(&s, 3.0, &mask).unwrap();
        let max = map
            .grid
            .data()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let n_at_max = map.grid.data().iter().filter(|&&v| v == max).count();
        let null = ale_exact_null(&[map], &mask, 1e-5).unwrap();
        let p = match &null.kind {
            NullKind::ExactHistogram {
                bin_width,
                probs,
                support_min,
            } => {
                let bin = ((max - support_min) / bin_width).floor() as usize;
                probs[bin..].iter().sum::<f64>()
            }
            _ => panic!(),
        };
        let expect = n_at_max as f64 / mask.n_in_mask() as f64;
        assert!((p - expect).abs() < 1e-12, "p={p} expect={expect}");
    }

    #[test]
    fn exact_null_all_zero_maps_is_point_mass_at_zero() {
        let mask = cube_mask(6);
        let ds = dataset(&[0, 0, 0]);
        let w = StudyWeights::uniform(3);
        let kernel = KernelSpec::Ale {
            sigma: SigmaMode::Fixed(4.0),
        };
        let (_, null) = statistic_and_exact_null(&ds, &kernel, &w, &mask, 1e-5).unwrap();
        match &null.kind {
            NullKind::ExactHistogram { probs, .. } => {
                assert_eq!(probs[0], 1.0);
                assert!(probs[1..].iter().all(|&p| p == 0.0));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn exact_null_matches_mc_oracle_small() {
        let mask = cube_mask(10);
        let ds = dataset(&[1, 2, 1]);
        let w = StudyWeights::uniform(3);
        let kernel = KernelSpec::Ale {
            sigma: SigmaMode::Fixed(4.0),
        };
        let maps: Vec<StudyMap> = ds
            .studies
            .iter()
            .map(|s| ale_study_map(s, 4.0, &mask).unwrap())
            .collect();
        let null = ale_exact_null(&maps, &mask, 1e-5).unwrap();
        let draws = mc_null_oracle(&maps, &w, &mask, 100_000, 3).unwrap();
        // KS distance between exact CDF and empirical CDF on bin edges
        let (bw, probs, smin) = match &null.kind {
            NullKind::ExactHistogram {
                bin_width,
                probs,
                support_min,
            } => (*bin_width, probs, *support_min),
            _ => panic!(),
        };
        let mut cdf = 0.0;
        let mut ks: f64 = 0.0;
        for (b, &p) in probs.iter().enumerate() {
            cdf += p;
            let edge = smin + (b as f64 + 1.0) * bw;
            let emp = draws.partition_point(|&v| v < edge) as f64 / draws.len() as f64;
            ks = ks.max((cdf - emp).abs());
        }
        assert!(ks < 0.01, "KS distance {ks}");
    }

    #[test]
    fn value_at_tail_p_inverts_tail() {
        let mask = cube_mask(10);
        let ds = dataset(&[1, 2]);
        let w = StudyWeights::uniform(2);
        let kernel = KernelSpec::Ale {
            sigma: SigmaMode::Fixed(4.0),
        };
        let (_, null) = statistic_and_exact_null(&ds, &kernel, &w, &mask, 1e-5).unwrap();
        let cutoff = value_at_tail_p(&null, 0.01).unwrap();
        // tail at cutoff must be <= 0.01, tail one bin below must exceed it
        if let NullKind::ExactHistogram {
            bin_width,
            probs,
            support_min,
        } = &null.kind
        {
            let bin = ((cutoff - support_min) / bin_width).round() as usize;
            let tail: f64 = probs[bin.min(probs.len() - 1)..].iter().sum();
            assert!(tail <= 0.01 + 1e-12, "tail {tail}");
            if bin > 0 {
                let below: f64 = probs[bin - 1..].iter().sum();
                assert!(below > 0.01, "below {below}");
            }
        }
    }
}
