use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::grid::VolumeGrid;

/// Boolean volume defining the atlas space over which statistics and nulls
/// are computed. Caches the in-mask voxel list so uniform draws over in-mask
/// centers and mask scans are O(1) per voxel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BrainMask {
    grid: VolumeGrid<bool>,
    n_in_mask: usize,
    in_mask_linear: Vec<u32>,
    fingerprint: String,
}

impl BrainMask {
    pub fn new(grid: VolumeGrid<bool>) -> Self {
        let in_mask_linear: Vec<u32> = grid
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i as u32)
            .collect();
        let n_in_mask = in_mask_linear.len();
        assert!(n_in_mask >= 1, "mask must contain at least one voxel");
        let fingerprint = Self::compute_fingerprint(&grid);
        Self {
            grid,
            n_in_mask,
            in_mask_linear,
            fingerprint,
        }
    }

    fn compute_fingerprint(grid: &VolumeGrid<bool>) -> String {
        let mut h = Sha256::new();
        for d in grid.dims() {
            h.update((d as u64).to_le_bytes());
        }
        for s in grid.voxel_size().iter().chain(grid.origin().iter()) {
            h.update(s.to_le_bytes());
        }
        for &b in grid.data() {
            h.update([b as u8]);
        }
        let digest = h.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn grid(&self) -> &VolumeGrid<bool> {
        &self.grid
    }

    pub fn n_in_mask(&self) -> usize {
        self.n_in_mask
    }

    /// Linear indices of the in-mask voxels, ascending.
    pub fn in_mask_linear(&self) -> &[u32] {
        &self.in_mask_linear
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    #[inline]
    pub fn contains_linear(&self, lin: usize) -> bool {
        self.grid.data()[lin]
    }

    /// Is a world point inside the mask (i.e. its nearest voxel exists and
    /// is true)?
    pub fn contains_world(&self, p: [f64; 3]) -> bool {
        match self.grid.world_to_voxel(p) {
            Some(idx) => self.grid.data()[self.grid.linear(idx)],
            None => false,
        }
    }

    /// Default test mask: all-true within an ellipsoid inscribed in the grid,
    /// approximating brain volume without shipping third-party atlas data.
    /// `voxel_mm` of 2.0 gives the 91 x 109 x 91 reference grid; coarser
    /// resolutions keep the same world extent and origin.
    pub fn default_ellipsoid(voxel_mm: f64) -> Self {
        assert!(voxel_mm > 0.0);
        // reference extent of the 2 mm 91x109x91 grid
        let extent = [180.0, 216.0, 180.0];
        let origin = [-90.0, -126.0, -72.0];
        let dims = [
            (extent[0] / voxel_mm).round() as usize + 1,
            (extent[1] / voxel_mm).round() as usize + 1,
            (extent[2] / voxel_mm).round() as usize + 1,
        ];
        let semi_axes = [70.0, 85.0, 75.0];
        let center = [
            origin[0] + extent[0] / 2.0,
            origin[1] + extent[1] / 2.0,
            origin[2] + extent[2] / 2.0,
        ];
        Self::ellipsoid(dims, [voxel_mm; 3], origin, center, semi_axes)
    }

    pub fn ellipsoid(
        dims: [usize; 3],
        voxel_size: [f64; 3],
        origin: [f64; 3],
        center: [f64; 3],
        semi_axes: [f64; 3],
    ) -> Self {
        let mut grid = VolumeGrid::new(dims, voxel_size, origin);
        for lin in 0..grid.len() {
            let idx = grid.unlinear(lin);
            let w = grid.voxel_to_world(idx);
            let r = (0..3)
                .map(|a| {
                    let t = (w[a] - center[a]) / semi_axes[a];
                    t * t
                })
                .sum::<f64>();
            grid.data_mut()[lin] = r <= 1.0;
        }
        Self::new(grid)
    }

    /// World center of mass of the in-mask voxels.
    pub fn centroid(&self) -> [f64; 3] {
        let mut acc = [0.0f64; 3];
        for &lin in &self.in_mask_linear {
            let w = self.grid.voxel_to_world(self.grid.unlinear(lin as usize));
            for a in 0..3 {
                acc[a] += w[a];
            }
        }
        for a in &mut acc {
            *a /= self.n_in_mask as f64;
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_mask_reference_dims() {
        let m = BrainMask::default_ellipsoid(2.0);
        assert_eq!(m.grid().dims(), [91, 109, 91]);
        assert_eq!(m.grid().origin(), [-90.0, -126.0, -72.0]);
        assert!(m.n_in_mask() >= 1);
        // n_in_mask matches the count of true entries
        let count = m.grid().data().iter().filter(|&&b| b).count();
        assert_eq!(m.n_in_mask(), count);
    }

    #[test]
    fn ellipsoid_volume_close_to_analytic() {
        let m = BrainMask::default_ellipsoid(2.0);
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * 70.0 * 85.0 * 75.0;
        let voxel_vol = 8.0;
        let measured = m.n_in_mask() as f64 * voxel_vol;
        assert!((measured / analytic - 1.0).abs() < 0.01, "measured {measured}");
    }

    #[test]
    fn fingerprint_changes_with_contents() {
        let a = BrainMask::default_ellipsoid(4.0);
        let mut g = a.grid().clone();
        let first = a.in_mask_linear()[0] as usize;
        g.data_mut()[first] = false;
        let b = BrainMask::new(g);
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn centroid_of_symmetric_mask_is_grid_center() {
        let m = BrainMask::default_ellipsoid(4.0);
        let c = m.centroid();
        assert!((c[0] - 0.0).abs() < 1e-9);
        assert!((c[1] - -18.0).abs() < 1e-9);
        assert!((c[2] - 18.0).abs() < 1e-9);
    }
}
