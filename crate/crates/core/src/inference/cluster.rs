use serde::{Deserialize, Serialize};

use crate::data_model::VolumeGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Six,
    Eighteen,
    TwentySix,
}

impl Connectivity {
    fn offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::new();
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nonzero = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => nonzero == 1,
                        Connectivity::Eighteen => (1..=2).contains(&nonzero),
                        Connectivity::TwentySix => nonzero >= 1,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// Connected components of the true voxels, as sorted linear-index lists.
/// Components are ordered by their smallest member, so output is
/// deterministic.
pub fn cluster_label(sig: &VolumeGrid<bool>, connectivity: Connectivity) -> Vec<Vec<u32>> {
    let dims = sig.dims();
    let data = sig.data();
    let offsets = connectivity.offsets();
    let mut seen = vec![false; data.len()];
    let mut components = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    for start in 0..data.len() {
        if !data[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(lin) = queue.pop_front() {
            comp.push(lin as u32);
            let idx = sig.unlinear(lin);
            for off in &offsets {
                let nx = idx[0] as i64 + off[0];
                let ny = idx[1] as i64 + off[1];
                let nz = idx[2] as i64 + off[2];
                if nx < 0
                    || ny < 0
                    || nz < 0
                    || nx >= dims[0] as i64
                    || ny >= dims[1] as i64
                    || nz >= dims[2] as i64
                {
                    continue;
                }
                let nlin = sig.linear([nx as usize, ny as usize, nz as usize]);
                if data[nlin] && !seen[nlin] {
                    seen[nlin] = true;
                    queue.push_back(nlin);
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    components
}

/// A significant cluster with its peak, for reporting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cluster {
    pub voxels: Vec<u32>,
    pub size: usize,
    pub peak_value: f64,
    pub peak_world: [f64; 3],
    pub peak_p_corrected: Option<f64>,
}

/// Attach peak statistics to raw components. The peak is the member with the
/// largest `score` value (first in row-major order on ties).
pub fn annotate_clusters(
    components: Vec<Vec<u32>>,
    score: &VolumeGrid<f64>,
    p_corrected: Option<&VolumeGrid<f64>>,
) -> Vec<Cluster> {
    components
        .into_iter()
        .map(|voxels| {
            let &peak_lin = voxels
                .iter()
                .max_by(|&&a, &&b| {
                    score.data()[a as usize]
                        .partial_cmp(&score.data()[b as usize])
                        .expect("finite scores")
                        .then(b.cmp(&a)) // ties: earliest row-major index
                })
                .expect("nonempty component");
            Cluster {
                size: voxels.len(),
                peak_value: score.data()[peak_lin as usize],
                peak_world: score.voxel_to_world(score.unlinear(peak_lin as usize)),
                peak_p_corrected: p_corrected.map(|p| p.data()[peak_lin as usize]),
                voxels,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_with(true_at: &[[usize; 3]]) -> VolumeGrid<bool> {
        let mut g: VolumeGrid<bool> = VolumeGrid::new([5, 5, 5], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0]);
        for &idx in true_at {
            let lin = g.linear(idx);
            g.data_mut()[lin] = true;
        }
        g
    }

    #[test]
    fn face_neighbors_one_cluster_everywhere() {
        let g = grid_with(&[[1, 1, 1], [2, 1, 1]]);
        for c in [Connectivity::Six, Connectivity::Eighteen, Connectivity::TwentySix] {
            assert_eq!(cluster_label(&g, c).len(), 1);
        }
    }

    #[test]
    fn corner_neighbors_split_by_connectivity() {
        let g = grid_with(&[[1, 1, 1], [2, 2, 2]]);
        assert_eq!(cluster_label(&g, Connectivity::TwentySix).len(), 1);
        assert_eq!(cluster_label(&g, Connectivity::Eighteen).len(), 2);
        assert_eq!(cluster_label(&g, Connectivity::Six).len(), 2);
    }

    #[test]
    fn edge_neighbors_join_at_eighteen() {
        let g = grid_with(&[[1, 1, 1], [2, 2, 1]]);
        assert_eq!(cluster_label(&g, Connectivity::Eighteen).len(), 1);
        assert_eq!(cluster_label(&g, Connectivity::Six).len(), 2);
    }

    #[test]
    fn empty_map_no_clusters() {
        let g = grid_with(&[]);
        assert!(cluster_label(&g, Connectivity::TwentySix).is_empty());
    }

    #[test]
    fn clusters_partition_true_voxels() {
        let g = grid_with(&[[0, 0, 0], [1, 0, 0], [4, 4, 4], [3, 3, 0], [0, 4, 2]]);
        let comps = cluster_label(&g, Connectivity::TwentySix);
        let mut all: Vec<u32> = comps.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        let n_true = g.data().iter().filter(|&&b| b).count();
        assert_eq!(all.len(), n_true);
        assert_eq!(
            comps.iter().map(|c| c.len()).sum::<usize>(),
            n_true
        );
    }

    #[test]
    fn peak_annotation() {
        let g = grid_with(&[[1, 1, 1], [2, 1, 1]]);
        let mut score: VolumeGrid<f64> =
            VolumeGrid::new([5, 5, 5], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0]);
        let hi = score.linear([2, 1, 1]);
        score.data_mut()[hi] = 0.9;
        let comps = cluster_label(&g, Connectivity::Six);
        let clusters = annotate_clusters(comps, &score, None);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].size, 2);
        assert_eq!(clusters[0].peak_value, 0.9);
        assert_eq!(clusters[0].peak_world, [2.0, 1.0, 1.0]);
    }
}
