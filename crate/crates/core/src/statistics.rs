//! Combination of study maps into the meta-analytic statistic images:
//! weighted proportion m(v) for MKDA, union probability l(v) for ALE, and
//! clamped weighted mean s(v) for SDM. All three are mass-univariate: the
//! value at a voxel depends only on the study-map values at that voxel.

use serde::{Deserialize, Serialize};

use crate::data_model::{BrainMask, FociDataset, Method, StatImage, VolumeGrid};
use crate::error::{CbmaError, Result};
use crate::kernel_maps::StudyMap;

/// Per-study positive weights, usually n_i^exponent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyWeights {
    weights: Vec<f64>,
    total: f64,
}

impl StudyWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(CbmaError::Validation(
                "study weights must be positive and finite".into(),
            ));
        }
        let total = crate::util::kahan_sum(weights.iter().copied());
        Ok(Self { weights, total })
    }

    pub fn uniform(n: usize) -> Self {
        Self::new(vec![1.0; n]).expect("uniform weights")
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

/// w_i = n_i^exponent. Exponent 0 gives the unweighted proportion, 1 the
/// participant-proportional weighting.
pub fn weights_from_participants(dataset: &FociDataset, exponent: f64) -> Result<StudyWeights> {
    if !(exponent >= 0.0) {
        return Err(CbmaError::Validation(format!(
            "weight exponent must be nonnegative, got {exponent}"
        )));
    }
    StudyWeights::new(
        dataset
            .studies
            .iter()
            .map(|s| (s.n_participants as f64).powf(exponent))
            .collect(),
    )
}

fn check_maps(maps: &[StudyMap], method: Method) -> Result<()> {
    if maps.is_empty() {
        return Err(CbmaError::Validation("no study maps".into()));
    }
    let mask_ref = &maps[0].mask_ref;
    for m in maps {
        if m.method != method {
            return Err(CbmaError::MethodMismatch(format!(
                "expected {method} map, study {} has {}",
                m.study_id, m.method
            )));
        }
        if &m.mask_ref != mask_ref || !m.grid.same_geometry(&maps[0].grid) {
            return Err(CbmaError::MaskMismatch(format!(
                "study {} was computed over a different mask",
                m.study_id
            )));
        }
    }
    Ok(())
}

/// Streaming voxel-wise combiner. Feed study maps one at a time (in study
/// order), then finish; avoids retaining one dense volume per study.
pub struct StatAccumulator {
    method: Method,
    mask_ref: String,
    acc: VolumeGrid<f64>,
    weight_total: f64,
    n_fed: usize,
}

impl StatAccumulator {
    pub fn new(method: Method, mask: &BrainMask) -> Self {
        let g = mask.grid();
        Self {
            method,
            mask_ref: mask.fingerprint().to_string(),
            acc: VolumeGrid::new(g.dims(), g.voxel_size(), g.origin()),
            weight_total: 0.0,
            n_fed: 0,
        }
    }

    /// Add one study's map values. `weight` is ignored for ALE (unweighted by
    /// construction).
    pub fn add(&mut self, map_values: &VolumeGrid<f64>, weight: f64) -> Result<()> {
        if !map_values.same_geometry(&self.acc) {
            return Err(CbmaError::MaskMismatch("study map grid mismatch".into()));
        }
        let acc = self.acc.data_mut();
        let vals = map_values.data();
        match self.method {
            Method::Ale => {
                // log-space union: acc holds sum of log1p(-L_i); study maps
                // are zero almost everywhere, so skip the transcendental there
                for (a, &v) in acc.iter_mut().zip(vals) {
                    if v != 0.0 {
                        *a += (-v).ln_1p();
                    }
                }
            }
            Method::Mkda | Method::Sdm => {
                for (a, &v) in acc.iter_mut().zip(vals) {
                    if v != 0.0 {
                        *a += weight * v;
                    }
                }
            }
        }
        self.weight_total += weight;
        self.n_fed += 1;
        Ok(())
    }

    pub fn add_study_map(&mut self, map: &StudyMap, weight: f64) -> Result<()> {
        if map.method != self.method {
            return Err(CbmaError::MethodMismatch(format!(
                "expected {} map, got {}",
                self.method, map.method
            )));
        }
        if map.mask_ref != self.mask_ref {
            return Err(CbmaError::MaskMismatch(format!(
                "study {} was computed over a different mask",
                map.study_id
            )));
        }
        self.add(&map.grid, weight)
    }

    pub fn finish(mut self) -> Result<StatImage> {
        if self.n_fed == 0 {
            return Err(CbmaError::Validation("no study maps".into()));
        }
        let acc = self.acc.data_mut();
        match self.method {
            Method::Ale => {
                for a in acc.iter_mut() {
                    // 1 - exp(sum log(1 - L_i)), exact at 0
                    *a = -a.exp_m1();
                }
            }
            Method::Mkda | Method::Sdm => {
                let inv = 1.0 / self.weight_total;
                for a in acc.iter_mut() {
                    *a *= inv;
                }
            }
        }
        Ok(StatImage {
            grid: self.acc,
            method: self.method,
            mask_ref: self.mask_ref,
        })
    }
}

fn combine(maps: &[StudyMap], weights: &StudyWeights, method: Method) -> Result<StatImage> {
    check_maps(maps, method)?;
    if weights.len() != maps.len() {
        return Err(CbmaError::Validation(format!(
            "{} weights for {} studies",
            weights.len(),
            maps.len()
        )));
    }
    let mut acc = StatAccumulator {
        method,
        mask_ref: maps[0].mask_ref.clone(),
        acc: VolumeGrid::new(
            maps[0].grid.dims(),
            maps[0].grid.voxel_size(),
            maps[0].grid.origin(),
        ),
        weight_total: 0.0,
        n_fed: 0,
    };
    for (i, m) in maps.iter().enumerate() {
        acc.add(&m.grid, weights.get(i))?;
    }
    acc.finish()
}

/// m(v): weighted proportion of studies with activation within the kernel
/// radius of v.
pub fn mkda_statistic(maps: &[StudyMap], weights: &StudyWeights) -> Result<StatImage> {
    combine(maps, weights, Method::Mkda)
}

/// l(v) = 1 - prod_i (1 - L_i(v)).
pub fn ale_statistic(maps: &[StudyMap]) -> Result<StatImage> {
    check_maps(maps, Method::Ale)?;
    combine(maps, &StudyWeights::uniform(maps.len()), Method::Ale)
}

/// s(v): clamped weighted mean of the signed study maps.
pub fn sdm_statistic(maps: &[StudyMap], weights: &StudyWeights) -> Result<StatImage> {
    combine(maps, weights, Method::Sdm)
}

/// Full dataset-to-statistic pipeline with one reused scratch volume, so
/// memory stays at two volumes no matter how many studies there are.
pub fn compute_statistic(
    dataset: &FociDataset,
    kernel: &crate::kernel_maps::KernelSpec,
    weights: &StudyWeights,
    mask: &BrainMask,
) -> Result<StatImage> {
    if weights.len() != dataset.n_studies() {
        return Err(CbmaError::Validation(format!(
            "{} weights for {} studies",
            weights.len(),
            dataset.n_studies()
        )));
    }
    let g = mask.grid();
    let mut scratch: VolumeGrid<f64> = VolumeGrid::new(g.dims(), g.voxel_size(), g.origin());
    let mut acc = StatAccumulator::new(kernel.method(), mask);
    for (i, study) in dataset.studies.iter().enumerate() {
        crate::kernel_maps::study_map_into(study, kernel, mask, &mut scratch)?;
        acc.add(&scratch, weights.get(i))?;
    }
    acc.finish()
}
