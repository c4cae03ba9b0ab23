//! Minimal NIfTI-1 single-file (.nii) export/import for the volume types this
//! toolkit produces: uncompressed, 348-byte header, sform affine carrying the
//! voxel sizes and origin, datatype uint8 or float64.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{CbmaError, Result};

use super::grid::VolumeGrid;
use super::vgrid::Volume;

const DT_UINT8: i16 = 2;
const DT_FLOAT64: i16 = 64;
const HEADER_LEN: usize = 348;
const VOX_OFFSET: f32 = 352.0;

struct HeaderWriter {
    buf: Vec<u8>,
}

impl HeaderWriter {
    fn new() -> Self {
        Self {
            buf: vec![0u8; HEADER_LEN],
        }
    }

    fn put_i32(&mut self, off: usize, v: i32) {
        self.buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
    }

    fn put_i16(&mut self, off: usize, v: i16) {
        self.buf[off..off + 2].copy_from_slice(&v.to_le_bytes());
    }

    fn put_f32(&mut self, off: usize, v: f32) {
        self.buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
    }

    fn put_bytes(&mut self, off: usize, v: &[u8]) {
        self.buf[off..off + v.len()].copy_from_slice(v);
    }
}

fn build_header(dims: [usize; 3], voxel_size: [f64; 3], origin: [f64; 3], datatype: i16) -> Vec<u8> {
    let mut h = HeaderWriter::new();
    h.put_i32(0, HEADER_LEN as i32); // sizeof_hdr
    h.put_i16(40, 3); // dim[0]
    for (k, &d) in dims.iter().enumerate() {
        h.put_i16(42 + 2 * k, d as i16);
    }
    for k in 3..7 {
        h.put_i16(42 + 2 * k, 1);
    }
    h.put_i16(70, datatype);
    h.put_i16(72, if datatype == DT_UINT8 { 8 } else { 64 }); // bitpix
    h.put_f32(76, 1.0); // pixdim[0] (qfac)
    for (k, &s) in voxel_size.iter().enumerate() {
        h.put_f32(80 + 4 * k, s as f32);
    }
    h.put_f32(108, VOX_OFFSET);
    h.put_f32(112, 1.0); // scl_slope
    h.put_i16(254, 2); // sform_code = aligned
    // srow_x / srow_y / srow_z: axis-aligned affine
    for axis in 0..3 {
        let row_off = 280 + 16 * axis;
        h.put_f32(row_off + 4 * axis, voxel_size[axis] as f32);
        h.put_f32(row_off + 12, origin[axis] as f32);
    }
    h.put_bytes(344, b"n+1\0");
    h.buf
}

pub fn write_nifti(path: &Path, volume: &Volume) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    match volume {
        Volume::U8(g) => {
            w.write_all(&build_header(g.dims(), g.voxel_size(), g.origin(), DT_UINT8))?;
            w.write_all(&[0u8; 4])?; // no extensions
            w.write_all(g.data())?;
        }
        Volume::F64(g) => {
            w.write_all(&build_header(g.dims(), g.voxel_size(), g.origin(), DT_FLOAT64))?;
            w.write_all(&[0u8; 4])?;
            for v in g.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn get_i16(buf: &[u8], off: usize) -> i16 {
    i16::from_le_bytes(buf[off..off + 2].try_into().unwrap())
}

fn get_f32(buf: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(buf[off..off + 4].try_into().unwrap())
}

pub fn read_nifti(path: &Path) -> Result<Volume> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut header = vec![0u8; HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|_| CbmaError::Format("truncated NIfTI header".into()))?;
    let sizeof_hdr = i32::from_le_bytes(header[0..4].try_into().unwrap());
    if sizeof_hdr != HEADER_LEN as i32 {
        return Err(CbmaError::Format(format!(
            "not a little-endian NIfTI-1 file (sizeof_hdr={sizeof_hdr})"
        )));
    }
    if &header[344..347] != b"n+1" {
        return Err(CbmaError::Format("only single-file (.nii) NIfTI supported".into()));
    }
    let ndim = get_i16(&header, 40);
    if !(1..=3).contains(&ndim) && !(4..=7).contains(&ndim) {
        return Err(CbmaError::Format(format!("bad dim[0]={ndim}")));
    }
    let mut dims = [1usize; 3];
    for k in 0..3usize.min(ndim as usize) {
        let d = get_i16(&header, 42 + 2 * k);
        if d < 1 {
            return Err(CbmaError::Format(format!("bad dim[{}]={d}", k + 1)));
        }
        dims[k] = d as usize;
    }
    for k in 3..ndim as usize {
        if get_i16(&header, 42 + 2 * k) > 1 {
            return Err(CbmaError::Format("only 3D volumes supported".into()));
        }
    }
    let datatype = get_i16(&header, 70);
    let mut voxel_size = [0f64; 3];
    for k in 0..3 {
        voxel_size[k] = get_f32(&header, 80 + 4 * k) as f64;
        if voxel_size[k] <= 0.0 {
            voxel_size[k] = 1.0;
        }
    }
    let mut origin = [0f64; 3];
    let sform_code = get_i16(&header, 254);
    if sform_code > 0 {
        for axis in 0..3 {
            let row_off = 280 + 16 * axis;
            origin[axis] = get_f32(&header, row_off + 12) as f64;
            let scale = get_f32(&header, row_off + 4 * axis) as f64;
            if scale != 0.0 {
                voxel_size[axis] = scale.abs();
            }
        }
    }
    let vox_offset = get_f32(&header, 108).max(HEADER_LEN as f32) as usize;
    let mut skip = vec![0u8; vox_offset - HEADER_LEN];
    r.read_exact(&mut skip)
        .map_err(|_| CbmaError::Format("truncated NIfTI file".into()))?;

    let n = dims[0] * dims[1] * dims[2];
    match datatype {
        DT_UINT8 => {
            let mut data = vec![0u8; n];
            r.read_exact(&mut data)
                .map_err(|_| CbmaError::Format("truncated uint8 payload".into()))?;
            Ok(Volume::U8(VolumeGrid::from_data(dims, voxel_size, origin, data)))
        }
        DT_FLOAT64 => {
            let mut raw = vec![0u8; n * 8];
            r.read_exact(&mut raw)
                .map_err(|_| CbmaError::Format("truncated float64 payload".into()))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(Volume::F64(VolumeGrid::from_data(dims, voxel_size, origin, data)))
        }
        other => Err(CbmaError::Format(format!(
            "unsupported NIfTI datatype {other} (only uint8 and float64)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64_round_trip() {
        let mut g: VolumeGrid<f64> =
            VolumeGrid::new([4, 3, 2], [2.0, 2.0, 2.0], [-90.0, -126.0, -72.0]);
        for (i, v) in g.data_mut().iter_mut().enumerate() {
            *v = i as f64 * 0.25;
        }
        let f = tempfile::NamedTempFile::new().unwrap();
        write_nifti(f.path(), &Volume::F64(g.clone())).unwrap();
        match read_nifti(f.path()).unwrap() {
            Volume::F64(g2) => assert_eq!(g, g2),
            _ => panic!("wrong dtype"),
        }
    }

    #[test]
    fn header_is_348_bytes_with_payload_at_352() {
        let g: VolumeGrid<u8> = VolumeGrid::new([2, 2, 2], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0]);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_nifti(f.path(), &Volume::U8(g)).unwrap();
        let bytes = std::fs::read(f.path()).unwrap();
        assert_eq!(bytes.len(), 352 + 8);
        assert_eq!(&bytes[344..348], b"n+1\0");
        assert_eq!(i32::from_le_bytes(bytes[0..4].try_into().unwrap()), 348);
    }
}
