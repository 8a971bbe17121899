//! QVOL binary volume format.
//!
//! Layout (little-endian throughout):
//!   magic `"QVL1"` | u32 nx, ny, nz | f32 dx, dy, dz (mm) |
//!   u8 dtype (0 = real f32, 1 = complex interleaved f32 pairs) |
//!   7 zero padding bytes | data, z slowest / x fastest.
//!
//! Values are stored in 32-bit precision regardless of the in-memory scalar.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex;

use crate::{sc, ComplexVolume, CoreError, RealVolume, Result, Scalar, VoxelGrid};

pub const MAGIC: [u8; 4] = *b"QVL1";
pub const DTYPE_REAL: u8 = 0;
pub const DTYPE_COMPLEX: u8 = 1;
const HEADER_LEN: usize = 36;

fn encode_header(grid: &VoxelGrid, dtype: u8) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(&MAGIC);
    h[4..8].copy_from_slice(&(grid.nx() as u32).to_le_bytes());
    h[8..12].copy_from_slice(&(grid.ny() as u32).to_le_bytes());
    h[12..16].copy_from_slice(&(grid.nz() as u32).to_le_bytes());
    h[16..20].copy_from_slice(&(grid.dx() as f32).to_le_bytes());
    h[20..24].copy_from_slice(&(grid.dy() as f32).to_le_bytes());
    h[24..28].copy_from_slice(&(grid.dz() as f32).to_le_bytes());
    h[28] = dtype;
    h
}

fn decode_header(path: &Path, h: &[u8; HEADER_LEN]) -> Result<(VoxelGrid, u8)> {
    let p = path.display().to_string();
    if h[0..4] != MAGIC {
        return Err(CoreError::format(p, "bad magic, expected QVL1"));
    }
    let nx = u32::from_le_bytes(h[4..8].try_into().unwrap()) as usize;
    let ny = u32::from_le_bytes(h[8..12].try_into().unwrap()) as usize;
    let nz = u32::from_le_bytes(h[12..16].try_into().unwrap()) as usize;
    let dx = f32::from_le_bytes(h[16..20].try_into().unwrap()) as f64;
    let dy = f32::from_le_bytes(h[20..24].try_into().unwrap()) as f64;
    let dz = f32::from_le_bytes(h[24..28].try_into().unwrap()) as f64;
    let dtype = h[28];
    if dtype != DTYPE_REAL && dtype != DTYPE_COMPLEX {
        return Err(CoreError::format(p, format!("unknown dtype code {dtype}")));
    }
    if h[29..36].iter().any(|&b| b != 0) {
        return Err(CoreError::format(p, "nonzero padding bytes"));
    }
    let grid = VoxelGrid::new(nx, ny, nz, dx, dy, dz)
        .map_err(|e| CoreError::format(&p, format!("invalid grid in header: {e}")))?;
    Ok((grid, dtype))
}

pub fn write_real<S: Scalar>(path: &Path, v: &RealVolume<S>) -> Result<()> {
    let f = File::create(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(f);
    let io_err = |e| CoreError::io(path.display().to_string(), e);
    w.write_all(&encode_header(v.grid(), DTYPE_REAL)).map_err(io_err)?;
    for &x in v.data() {
        w.write_all(&(x.as_f64() as f32).to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn write_complex<S: Scalar>(path: &Path, v: &ComplexVolume<S>) -> Result<()> {
    let f = File::create(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(f);
    let io_err = |e| CoreError::io(path.display().to_string(), e);
    w.write_all(&encode_header(v.grid(), DTYPE_COMPLEX)).map_err(io_err)?;
    for c in v.data() {
        w.write_all(&(c.re.as_f64() as f32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&(c.im.as_f64() as f32).to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn read_payload(path: &Path, expect_dtype: u8) -> Result<(VoxelGrid, Vec<f32>)> {
    let f = File::open(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(f);
    let mut h = [0u8; HEADER_LEN];
    r.read_exact(&mut h)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let (grid, dtype) = decode_header(path, &h)?;
    if dtype != expect_dtype {
        return Err(CoreError::format(
            path.display().to_string(),
            format!("dtype {dtype} does not match expected {expect_dtype}"),
        ));
    }
    let values = grid.len() * if dtype == DTYPE_COMPLEX { 2 } else { 1 };
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    if bytes.len() != values * 4 {
        return Err(CoreError::format(
            path.display().to_string(),
            format!("payload size {} bytes, expected {}", bytes.len(), values * 4),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((grid, data))
}

pub fn read_real<S: Scalar>(path: &Path) -> Result<RealVolume<S>> {
    let (grid, raw) = read_payload(path, DTYPE_REAL)?;
    RealVolume::new(grid, raw.into_iter().map(|x| sc(x as f64)).collect())
}

pub fn read_complex<S: Scalar>(path: &Path) -> Result<ComplexVolume<S>> {
    let (grid, raw) = read_payload(path, DTYPE_COMPLEX)?;
    let data = raw
        .chunks_exact(2)
        .map(|p| Complex::new(sc(p[0] as f64), sc(p[1] as f64)))
        .collect();
    ComplexVolume::new(grid, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn tmpdir() -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("qvol-test-{}", std::process::id()));
        fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn real_round_trip_is_bit_identical() {
        let grid = VoxelGrid::new(5, 4, 4, 0.75, 0.75, 3.0).unwrap();
        let v = RealVolume::<f64>::from_fn(grid, |x, y, z| {
            (x as f64 - 1.5) * 0.25 + y as f64 - z as f64 * 0.5
        });
        let path = tmpdir().join("rt_real.qvol");
        write_real(&path, &v).unwrap();
        let bytes1 = fs::read(&path).unwrap();
        let w: RealVolume<f64> = read_real(&path).unwrap();
        write_real(&path, &w).unwrap();
        let bytes2 = fs::read(&path).unwrap();
        assert_eq!(bytes1, bytes2);
        // values here are exactly f32-representable, so data round-trips too
        assert_eq!(v.data(), w.data());
    }

    #[test]
    fn complex_round_trip() {
        let grid = VoxelGrid::new(4, 4, 4, 1.0, 1.0, 1.0).unwrap();
        let v = ComplexVolume::<f64>::new(
            grid,
            (0..64).map(|i| Complex::new(i as f64 * 0.5, -(i as f64))).collect(),
        )
        .unwrap();
        let path = tmpdir().join("rt_complex.qvol");
        write_complex(&path, &v).unwrap();
        let w: ComplexVolume<f64> = read_complex(&path).unwrap();
        assert_eq!(v.data(), w.data());
        assert!(v.grid().same_geometry(w.grid()));
    }

    #[test]
    fn rejects_bad_magic_and_size() {
        let dir = tmpdir();
        let grid = VoxelGrid::new(4, 4, 4, 1.0, 1.0, 1.0).unwrap();
        let v = RealVolume::<f64>::zeros(grid);
        let path = dir.join("bad.qvol");
        write_real(&path, &v).unwrap();

        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_real::<f64>(&path), Err(CoreError::Format { .. })));

        write_real(&path, &v).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_real::<f64>(&path), Err(CoreError::Format { .. })));
    }
}
