//! The internal "VGRID1" volume format: one ASCII header line
//! `VGRID1 nx ny nz sx sy sz ox oy oz dtype` followed by the little-endian
//! row-major payload. dtype is `u8` or `f64`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{CbmaError, Result};

use super::grid::VolumeGrid;

#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    U8(VolumeGrid<u8>),
    F64(VolumeGrid<f64>),
}

impl Volume {
    pub fn dims(&self) -> [usize; 3] {
        match self {
            Volume::U8(g) => g.dims(),
            Volume::F64(g) => g.dims(),
        }
    }
}

fn header_line<T>(grid: &VolumeGrid<T>, dtype: &str) -> String {
    let d = grid.dims();
    let s = grid.voxel_size();
    let o = grid.origin();
    format!(
        "VGRID1 {} {} {} {} {} {} {} {} {} {}\n",
        d[0], d[1], d[2], s[0], s[1], s[2], o[0], o[1], o[2], dtype
    )
}

pub fn write_vgrid(path: &Path, volume: &Volume) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    match volume {
        Volume::U8(g) => {
            w.write_all(header_line(g, "u8").as_bytes())?;
            w.write_all(g.data())?;
        }
        Volume::F64(g) => {
            w.write_all(header_line(g, "f64").as_bytes())?;
            for v in g.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_vgrid(path: &Path) -> Result<Volume> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut header = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)
            .map_err(|_| CbmaError::Format("truncated VGRID1 header".into()))?;
        if byte[0] == b'\n' {
            break;
        }
        if header.len() > 512 {
            return Err(CbmaError::Format("VGRID1 header line too long".into()));
        }
        header.push(byte[0]);
    }
    let header = String::from_utf8(header)
        .map_err(|_| CbmaError::Format("VGRID1 header is not UTF-8".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 11 || fields[0] != "VGRID1" {
        return Err(CbmaError::Format(format!("bad VGRID1 header: {header:?}")));
    }
    let dim = |i: usize| -> Result<usize> {
        fields[i]
            .parse()
            .map_err(|_| CbmaError::Format(format!("bad dimension {:?}", fields[i])))
    };
    let real = |i: usize| -> Result<f64> {
        fields[i]
            .parse()
            .map_err(|_| CbmaError::Format(format!("bad real field {:?}", fields[i])))
    };
    let dims = [dim(1)?, dim(2)?, dim(3)?];
    let voxel_size = [real(4)?, real(5)?, real(6)?];
    let origin = [real(7)?, real(8)?, real(9)?];
    let n = dims[0] * dims[1] * dims[2];
    match fields[10] {
        "u8" => {
            let mut data = vec![0u8; n];
            r.read_exact(&mut data)
                .map_err(|_| CbmaError::Format("truncated u8 payload".into()))?;
            Ok(Volume::U8(VolumeGrid::from_data(dims, voxel_size, origin, data)))
        }
        "f64" => {
            let mut raw = vec![0u8; n * 8];
            r.read_exact(&mut raw)
                .map_err(|_| CbmaError::Format("truncated f64 payload".into()))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(Volume::F64(VolumeGrid::from_data(dims, voxel_size, origin, data)))
        }
        other => Err(CbmaError::Format(format!("unknown dtype {other:?}"))),
    }
}
