//! Per-focus and per-study maps for the three kernel methods: MKDA binary
//! spheres, ALE truncated mass-1 Gaussians, SDM signed peak-1 Gaussians.
//!
//! Kernels are evaluated focus-to-voxel-center and truncated at a bounded
//! support (the sphere radius for MKDA, 5 sigma for ALE/SDM; ALE's tail mass
//! beyond 5 sigma, under 6e-7 of the total, is absorbed by the normalizer).

use serde::{Deserialize, Serialize};

use crate::data_model::{BrainMask, Focus, Method, Study, VolumeGrid};
use crate::error::{CbmaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SigmaMode {
    Fixed(f64),
    /// 1/sqrt(n) precision law anchored at sigma(12) = 4 mm.
    FromSampleSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    Mkda { radius_mm: f64 },
    Ale { sigma: SigmaMode },
    Sdm { sigma_mm: f64, assume_positive: bool },
}

impl KernelSpec {
    pub fn method(&self) -> Method {
        match self {
            KernelSpec::Mkda { .. } => Method::Mkda,
            KernelSpec::Ale { .. } => Method::Ale,
            KernelSpec::Sdm { .. } => Method::Sdm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            KernelSpec::Mkda { radius_mm } => radius_mm > 0.0,
            KernelSpec::Ale { sigma } => match sigma {
                SigmaMode::Fixed(s) => s > 0.0,
                SigmaMode::FromSampleSize => true,
            },
            KernelSpec::Sdm { sigma_mm, .. } => sigma_mm > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(CbmaError::Validation(format!("non-positive kernel size in {self:?}")))
        }
    }
}

/// Per-study kernel map: binary sphere union (MKDA), modelled activation map
/// (ALE), or clamped signed sum (SDM).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyMap {
    pub grid: VolumeGrid<f64>,
    pub study_id: String,
    pub method: Method,
    pub mask_ref: String,
}

/// Kernel standard deviation for a study.
pub fn ale_sigma(n_participants: u32, mode: SigmaMode) -> f64 {
    match mode {
        SigmaMode::Fixed(s) => s,
        SigmaMode::FromSampleSize => 4.0 * (12.0 / n_participants as f64).sqrt(),
    }
}

/// Visit every voxel whose center is within `radius` mm of `center`,
/// restricted to the mask. Row-major order. Yields (linear index, squared
/// distance in mm^2).
fn for_each_in_ball<F: FnMut(usize, f64)>(
    mask: &BrainMask,
    center: [f64; 3],
    radius: f64,
    mut visit: F,
) {
    let grid = mask.grid();
    let dims = grid.dims();
    let size = grid.voxel_size();
    let origin = grid.origin();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let l = ((center[a] - radius - origin[a]) / size[a]).ceil();
        let h = ((center[a] + radius - origin[a]) / size[a]).floor();
        if h < 0.0 || l >= dims[a] as f64 {
            return;
        }
        lo[a] = l.max(0.0) as usize;
        hi[a] = (h as usize).min(dims[a] - 1);
    }
    let r2 = radius * radius;
    let data = grid.data();
    for iz in lo[2]..=hi[2] {
        let dz = origin[2] + iz as f64 * size[2] - center[2];
        for iy in lo[1]..=hi[1] {
            let dy = origin[1] + iy as f64 * size[1] - center[1];
            let dyz2 = dy * dy + dz * dz;
            if dyz2 > r2 {
                continue;
            }
            let row = dims[0] * (iy + dims[1] * iz);
            for ix in lo[0]..=hi[0] {
                let dx = origin[0] + ix as f64 * size[0] - center[0];
                let d2 = dx * dx + dyz2;
                if d2 <= r2 && data[row + ix] {
                    visit(row + ix, d2);
                }
            }
        }
    }
}

fn blank_map(mask: &BrainMask) -> VolumeGrid<f64> {
    let g = mask.grid();
    VolumeGrid::new(g.dims(), g.voxel_size(), g.origin())
}

/// Comparison indicator map: 1 where some focus lies within `radius_mm` of
/// the voxel center, 0 elsewhere and outside the mask.
pub fn mkda_study_map(study: &Study, radius_mm: f64, mask: &BrainMask) -> StudyMap {
    let mut grid = blank_map(mask);
    mkda_into(study, radius_mm, mask, &mut grid);
    StudyMap {
        grid,
        study_id: study.id.clone(),
        method: Method::Mkda,
        mask_ref: mask.fingerprint().to_string(),
    }
}

fn mkda_into(study: &Study, radius_mm: f64, mask: &BrainMask, grid: &mut VolumeGrid<f64>) {
    let data = grid.data_mut();
    for focus in &study.foci {
        for_each_in_ball(mask, focus.point(), radius_mm, |lin, _| {
            data[lin] = 1.0;
        });
    }
}

/// Gaussian terms of one ALE focus kernel: (linear index, unnormalized value)
/// over the in-mask 5-sigma ball, plus the compensated row-major sum used as
/// the normalizer.
fn ale_focus_terms(
    focus: &Focus,
    sigma_mm: f64,
    mask: &BrainMask,
    terms: &mut Vec<(u32, f64)>,
) -> Result<f64> {
    terms.clear();
    let inv_two_sigma2 = 1.0 / (2.0 * sigma_mm * sigma_mm);
    for_each_in_ball(mask, focus.point(), 5.0 * sigma_mm, |lin, d2| {
        terms.push((lin as u32, (-d2 * inv_two_sigma2).exp()));
    });
    let total = crate::util::kahan_sum(terms.iter().map(|&(_, v)| v));
    if !(total > 0.0) {
        return Err(CbmaError::FocusMassUnderflow(focus.x, focus.y, focus.z));
    }
    Ok(total)
}

/// Single-focus ALE map: discretised truncated Gaussian normalized to unit
/// mass over the in-mask voxels.
pub fn ale_focus_map(focus: &Focus, sigma_mm: f64, mask: &BrainMask) -> Result<VolumeGrid<f64>> {
    let mut grid = blank_map(mask);
    let mut terms = Vec::new();
    let total = ale_focus_terms(focus, sigma_mm, mask, &mut terms)?;
    let data = grid.data_mut();
    for (lin, v) in terms {
        data[lin as usize] = v / total;
    }
    Ok(grid)
}

/// Modelled activation map: voxel-wise maximum over the study's focus maps.
pub fn ale_study_map(study: &Study, sigma_mm: f64, mask: &BrainMask) -> Result<StudyMap> {
    let mut grid = blank_map(mask);
    ale_into(study, sigma_mm, mask, &mut grid)?;
    Ok(StudyMap {
        grid,
        study_id: study.id.clone(),
        method: Method::Ale,
        mask_ref: mask.fingerprint().to_string(),
    })
}

fn ale_into(
    study: &Study,
    sigma_mm: f64,
    mask: &BrainMask,
    grid: &mut VolumeGrid<f64>,
) -> Result<()> {
    let mut terms = Vec::new();
    let data = grid.data_mut();
    for focus in &study.foci {
        let total = ale_focus_terms(focus, sigma_mm, mask, &mut terms)?;
        for &(lin, v) in &terms {
            let cell = &mut data[lin as usize];
            let val = v / total;
            if val > *cell {
                *cell = val;
            }
        }
    }
    Ok(())
}

/// Signed-sum map clamped to [-1, 1]. Each focus contributes an unnormalized
/// Gaussian of peak magnitude 1 carrying the sign of its reported statistic.
pub fn sdm_study_map(
    study: &Study,
    sigma_mm: f64,
    mask: &BrainMask,
    assume_positive: bool,
) -> Result<StudyMap> {
    let mut grid = blank_map(mask);
    sdm_into(study, sigma_mm, mask, assume_positive, &mut grid)?;
    Ok(StudyMap {
        grid,
        study_id: study.id.clone(),
        method: Method::Sdm,
        mask_ref: mask.fingerprint().to_string(),
    })
}

fn sdm_into(
    study: &Study,
    sigma_mm: f64,
    mask: &BrainMask,
    assume_positive: bool,
    grid: &mut VolumeGrid<f64>,
) -> Result<()> {
    let inv_two_sigma2 = 1.0 / (2.0 * sigma_mm * sigma_mm);
    let data = grid.data_mut();
    for focus in &study.foci {
        let sign = match focus.t_value {
            Some(t) => t.signum(),
            None if assume_positive => 1.0,
            None => return Err(CbmaError::MissingSign(focus.x, focus.y, focus.z)),
        };
        for_each_in_ball(mask, focus.point(), 5.0 * sigma_mm, |lin, d2| {
            data[lin] += sign * (-d2 * inv_two_sigma2).exp();
        });
    }
    for &lin in mask.in_mask_linear() {
        let cell = &mut data[lin as usize];
        *cell = cell.clamp(-1.0, 1.0);
    }
    Ok(())
}

/// Build the study map for any kernel variant.
pub fn study_map(study: &Study, kernel: &KernelSpec, mask: &BrainMask) -> Result<StudyMap> {
    let mut grid = blank_map(mask);
    study_map_into(study, kernel, mask, &mut grid)?;
    Ok(StudyMap {
        grid,
        study_id: study.id.clone(),
        method: kernel.method(),
        mask_ref: mask.fingerprint().to_string(),
    })
}

/// Streaming variant: overwrite `grid` (which must share the mask geometry)
/// with the study map, reusing its allocation.
pub fn study_map_into(
    study: &Study,
    kernel: &KernelSpec,
    mask: &BrainMask,
    grid: &mut VolumeGrid<f64>,
) -> Result<()> {
    assert!(grid.same_geometry(mask.grid()), "scratch grid geometry mismatch");
    grid.data_mut().fill(0.0);
    match *kernel {
        KernelSpec::Mkda { radius_mm } => {
            mkda_into(study, radius_mm, mask, grid);
            Ok(())
        }
        KernelSpec::Ale { sigma } => {
            ale_into(study, ale_sigma(study.n_participants, sigma), mask, grid)
        }
        KernelSpec::Sdm {
            sigma_mm,
            assume_positive,
        } => sdm_into(study, sigma_mm, mask, assume_positive, grid),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::AtlasTag;
    use approx::assert_relative_eq;

    fn small_mask() -> BrainMask {
        // 2 mm cube centered on the origin, all true
        let mut g: VolumeGrid<bool> =
            VolumeGrid::new([21, 21, 21], [2.0, 2.0, 2.0], [-20.0, -20.0, -20.0]);
        g.data_mut().fill(true);
        BrainMask::new(g)
    }

    fn study_at(foci: &[[f64; 3]]) -> Study {
        Study {
            id: "s".into(),
            label: "s".into(),
            n_participants: 12,
            foci: foci.iter().map(|p| Focus::new(p[0], p[1], p[2])).collect(),
        }
    }

    #[test]
    fn ale_sigma_examples() {
        assert_relative_eq!(ale_sigma(12, SigmaMode::FromSampleSize), 4.0);
        assert_relative_eq!(ale_sigma(48, SigmaMode::FromSampleSize), 2.0);
        assert_relative_eq!(ale_sigma(999, SigmaMode::Fixed(4.0)), 4.0);
    }

    #[test]
    fn mkda_sphere_boundary() {
        let mask = small_mask();
        let m = mkda_study_map(&study_at(&[[0.0, 0.0, 0.0]]), 10.0, &mask);
        let g = &m.grid;
        // (6,8,0) is at distance exactly 10
        let at = |p: [f64; 3]| g.data()[g.linear(g.world_to_voxel(p).unwrap())];
        assert_eq!(at([6.0, 8.0, 0.0]), 1.0);
        // (6,8,2) is at distance sqrt(104) > 10
        assert_eq!(at([6.0, 8.0, 2.0]), 0.0);
    }

    #[test]
    fn mkda_empty_study_is_zero() {
        let mask = small_mask();
        let m = mkda_study_map(&study_at(&[]), 10.0, &mask);
        assert!(m.grid.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mkda_coincident_foci_idempotent() {
        let mask = small_mask();
        let a = mkda_study_map(&study_at(&[[0.0, 0.0, 0.0]]), 10.0, &mask);
        let b = mkda_study_map(&study_at(&[[0.0; 3], [0.0; 3], [0.0; 3]]), 10.0, &mask);
        assert_eq!(a.grid.data(), b.grid.data());
    }

    #[test]
    fn ale_focus_map_sums_to_one() {
        let mask = small_mask();
        let m = ale_focus_map(&Focus::new(1.0, -3.0, 2.0), 4.0, &mask).unwrap();
        let total: f64 = crate::util::kahan_sum(m.data().iter().copied());
        assert!((total - 1.0).abs() < 1e-9, "sum {total}");
    }

    #[test]
    fn ale_gaussian_ratio_at_4mm() {
        let mask = small_mask();
        let m = ale_focus_map(&Focus::new(0.0, 0.0, 0.0), 4.0, &mask).unwrap();
        let g = &m;
        let at = |p: [f64; 3]| g.data()[g.linear(g.world_to_voxel(p).unwrap())];
        let ratio = at([4.0, 0.0, 0.0]) / at([0.0, 0.0, 0.0]);
        assert_relative_eq!(ratio, (-0.5f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn ale_focus_map_symmetric_at_mask_center() {
        let mask = BrainMask::default_ellipsoid(4.0);
        let c = mask.centroid();
        let m = ale_focus_map(&Focus::new(c[0], c[1], c[2]), 4.0, &mask).unwrap();
        // voxel centers along x are symmetric about the mask center, so the
        // map must satisfy data[i] == data[nx-1-i] on any fixed (y, z) row
        let dims = m.dims();
        let ci = m.world_to_voxel(c).unwrap();
        for i in 0..dims[0] {
            let a = m.data()[m.linear([i, ci[1], ci[2]])];
            let b = m.data()[m.linear([dims[0] - 1 - i, ci[1], ci[2]])];
            assert!((a - b).abs() < 1e-12, "x row asymmetry at {i}: {a} vs {b}");
        }
    }

    #[test]
    fn ale_focus_underflow_far_outside() {
        let mask = small_mask();
        let err = ale_focus_map(&Focus::new(500.0, 0.0, 0.0), 4.0, &mask).unwrap_err();
        assert!(err.to_string().contains("underflow"));
    }

    #[test]
    fn ale_study_map_is_max_of_focus_maps() {
        let mask = small_mask();
        let s = study_at(&[[0.0, 0.0, 0.0], [6.0, 0.0, 0.0]]);
        let sm = ale_study_map(&s, 4.0, &mask).unwrap();
        let f0 = ale_focus_map(&s.foci[0], 4.0, &mask).unwrap();
        let f1 = ale_focus_map(&s.foci[1], 4.0, &mask).unwrap();
        for i in 0..sm.grid.len() {
            let expect = f0.data()[i].max(f1.data()[i]);
            assert!((sm.grid.data()[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn ale_distant_foci_keep_own_peaks() {
        // two foci 40 mm apart at sigma 4: cross-term exp(-50) is negligible
        let mut g: VolumeGrid<bool> =
            VolumeGrid::new([41, 11, 11], [2.0, 2.0, 2.0], [-40.0, -10.0, -10.0]);
        g.data_mut().fill(true);
        let mask = BrainMask::new(g);
        let s = study_at(&[[-20.0, 0.0, 0.0], [20.0, 0.0, 0.0]]);
        let sm = ale_study_map(&s, 4.0, &mask).unwrap();
        let f0 = ale_focus_map(&s.foci[0], 4.0, &mask).unwrap();
        let at = |g: &VolumeGrid<f64>, p: [f64; 3]| g.data()[g.linear(g.world_to_voxel(p).unwrap())];
        assert!((at(&sm.grid, [-20.0, 0.0, 0.0]) - at(&f0, [-20.0, 0.0, 0.0])).abs() < 1e-12);
    }

    #[test]
    fn sdm_peak_and_clamp() {
        let mask = small_mask();
        let mut s = study_at(&[[0.0, 0.0, 0.0]]);
        s.foci[0].t_value = Some(3.2);
        let m = sdm_study_map(&s, 4.0, &mask, false).unwrap();
        let at0 = m.grid.data()[m.grid.linear(m.grid.world_to_voxel([0.0; 3]).unwrap())];
        assert_eq!(at0, 1.0);

        let mut s2 = study_at(&[[0.0; 3], [0.0; 3]]);
        s2.foci[0].t_value = Some(2.0);
        s2.foci[1].t_value = Some(5.0);
        let m2 = sdm_study_map(&s2, 4.0, &mask, false).unwrap();
        let at0 = m2.grid.data()[m2.grid.linear(m2.grid.world_to_voxel([0.0; 3]).unwrap())];
        assert_eq!(at0, 1.0); // 1 + 1 clamped

        s2.foci[1].t_value = Some(-5.0);
        let m3 = sdm_study_map(&s2, 4.0, &mask, false).unwrap();
        let at0 = m3.grid.data()[m3.grid.linear(m3.grid.world_to_voxel([0.0; 3]).unwrap())];
        assert_eq!(at0, 0.0); // opposite signs cancel
    }

    #[test]
    fn sdm_missing_sign_policy() {
        let mask = small_mask();
        let s = study_at(&[[0.0, 0.0, 0.0]]);
        assert!(sdm_study_map(&s, 4.0, &mask, false).is_err());
        assert!(sdm_study_map(&s, 4.0, &mask, true).is_ok());
    }

    #[test]
    fn sdm_negation_antisymmetry() {
        let mask = small_mask();
        let mut s = study_at(&[[0.0, 0.0, 0.0], [4.0, 2.0, 0.0], [4.0, 2.0, 0.0]]);
        for f in &mut s.foci {
            f.t_value = Some(2.0);
        }
        let pos = sdm_study_map(&s, 4.0, &mask, false).unwrap();
        for f in &mut s.foci {
            f.t_value = Some(-2.0);
        }
        let neg = sdm_study_map(&s, 4.0, &mask, false).unwrap();
        for i in 0..pos.grid.len() {
            assert_eq!(pos.grid.data()[i], -neg.grid.data()[i]);
        }
    }

    #[test]
    fn maps_zero_outside_mask() {
        let mask = BrainMask::default_ellipsoid(4.0);
        let s = study_at(&[[0.0, -18.0, 18.0]]);
        let m = ale_study_map(&s, 4.0, &mask).unwrap();
        for (i, &v) in m.grid.data().iter().enumerate() {
            if !mask.contains_linear(i) {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn streaming_matches_owned() {
        let mask = small_mask();
        let s = study_at(&[[0.0, 0.0, 0.0], [5.0, 1.0, -2.0]]);
        let kernel = KernelSpec::Ale {
            sigma: SigmaMode::Fixed(4.0),
        };
        let owned = study_map(&s, &kernel, &mask).unwrap();
        let mut buf: VolumeGrid<f64> = VolumeGrid::new(
            mask.grid().dims(),
            mask.grid().voxel_size(),
            mask.grid().origin(),
        );
        buf.data_mut().fill(7.0); // stale contents must not leak through
        study_map_into(&s, &kernel, &mask, &mut buf).unwrap();
        assert_eq!(owned.grid.data(), buf.data());
        let _ = AtlasTag::Mni;
    }
}
