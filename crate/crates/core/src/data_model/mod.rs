//! Domain types: foci, studies, datasets, voxel grids, masks, statistic
//! images, and the file formats they travel in (foci CSV, VGRID1, NIfTI-1).

mod csv_io;
mod dataset;
mod grid;
mod mask;
mod nifti;
mod stat_image;
mod vgrid;

pub use csv_io::{load_foci_csv, write_foci_csv, ColumnMapping};
pub use dataset::{AtlasTag, FociDataset, Focus, Study};
pub use grid::{euclidean_distance, VolumeGrid};
pub use mask::BrainMask;
pub use nifti::{read_nifti, write_nifti};
pub use stat_image::{Method, StatImage};
pub use vgrid::{read_vgrid, write_vgrid, Volume};
