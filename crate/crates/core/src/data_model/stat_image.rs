use serde::{Deserialize, Serialize};

use super::grid::VolumeGrid;
use super::mask::BrainMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Mkda,
    Ale,
    Sdm,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Mkda => write!(f, "MKDA"),
            Method::Ale => write!(f, "ALE"),
            Method::Sdm => write!(f, "SDM"),
        }
    }
}

/// Per-voxel meta-analytic statistic map. Out-of-mask voxels are exactly 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatImage {
    pub grid: VolumeGrid<f64>,
    pub method: Method,
    /// Fingerprint of the mask the image was computed over.
    pub mask_ref: String,
}

impl StatImage {
    /// In-mask maximum, together with the linear index where it is attained
    /// (first occurrence in row-major order).
    pub fn max_in_mask(&self, mask: &BrainMask) -> (f64, usize) {
        let data = self.grid.data();
        let mut best = f64::NEG_INFINITY;
        let mut arg = mask.in_mask_linear()[0] as usize;
        for &lin in mask.in_mask_linear() {
            let v = data[lin as usize];
            if v > best {
                best = v;
                arg = lin as usize;
            }
        }
        (best, arg)
    }
}
