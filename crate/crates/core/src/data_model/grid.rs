use serde::{Deserialize, Serialize};

/// Dense 3D field on a regular voxel lattice with a world-coordinate affine
/// (axis-aligned: voxel sizes plus an origin, the world coordinate of the
/// center of voxel (0,0,0)). Data is stored row-major: x fastest, z slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeGrid<T> {
    dims: [usize; 3],
    voxel_size: [f64; 3],
    origin: [f64; 3],
    data: Vec<T>,
}

impl<T: Clone + Default> VolumeGrid<T> {
    pub fn new(dims: [usize; 3], voxel_size: [f64; 3], origin: [f64; 3]) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "dims must be positive");
        assert!(
            voxel_size.iter().all(|&s| s > 0.0),
            "voxel sizes must be positive"
        );
        let n = dims[0] * dims[1] * dims[2];
        Self {
            dims,
            voxel_size,
            origin,
            data: vec![T::default(); n],
        }
    }
}

impl<T> VolumeGrid<T> {
    pub fn from_data(
        dims: [usize; 3],
        voxel_size: [f64; 3],
        origin: [f64; 3],
        data: Vec<T>,
    ) -> Self {
        assert_eq!(data.len(), dims[0] * dims[1] * dims[2]);
        assert!(voxel_size.iter().all(|&s| s > 0.0));
        Self {
            dims,
            voxel_size,
            origin,
            data,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.voxel_size
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn linear(&self, idx: [usize; 3]) -> usize {
        idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2])
    }

    #[inline]
    pub fn unlinear(&self, lin: usize) -> [usize; 3] {
        let x = lin % self.dims[0];
        let rest = lin / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    /// World coordinate of the center of a voxel.
    #[inline]
    pub fn voxel_to_world(&self, idx: [usize; 3]) -> [f64; 3] {
        [
            self.origin[0] + idx[0] as f64 * self.voxel_size[0],
            self.origin[1] + idx[1] as f64 * self.voxel_size[1],
            self.origin[2] + idx[2] as f64 * self.voxel_size[2],
        ]
    }

    /// Index of the voxel whose center is nearest to a world point under
    /// component-wise rounding; `None` when out of bounds.
    pub fn world_to_voxel(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for axis in 0..3 {
            let f = ((p[axis] - self.origin[axis]) / self.voxel_size[axis]).round();
            if f < 0.0 || f >= self.dims[axis] as f64 {
                return None;
            }
            idx[axis] = f as usize;
        }
        Some(idx)
    }

    /// Same grid geometry (dims, voxel size, origin)?
    pub fn same_geometry<U>(&self, other: &VolumeGrid<U>) -> bool {
        self.dims == other.dims
            && self.voxel_size == other.voxel_size
            && self.origin == other.origin
    }

    pub fn map<U, F: FnMut(&T) -> U>(&self, f: F) -> VolumeGrid<U> {
        VolumeGrid {
            dims: self.dims,
            voxel_size: self.voxel_size,
            origin: self.origin,
            data: self.data.iter().map(f).collect(),
        }
    }
}

pub fn euclidean_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}
