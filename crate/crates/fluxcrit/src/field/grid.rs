//! FLXF grid files and trilinear evaluation.
//!
//! Layout (all multi-byte values little-endian):
//!   bytes 0..8   ASCII magic "FLXF0001"
//!   3 x u64      nx, ny, nz
//!   3 x f64      origin
//!   3 x f64      spacing
//!   then nx*ny*nz points of 3 x f64 (ux, uy, uz), x index fastest, then y,
//!   then z. NaN components mark masked points; interpolation touching a
//!   masked corner reports OutOfBounds.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::vec3::Vec3;

pub const FLXF_MAGIC: &[u8; 8] = b"FLXF0001";

#[derive(Debug, Clone)]
pub struct GridField {
    dims: [usize; 3],
    origin: Vec3,
    spacing: [f64; 3],
    samples: Vec<[f64; 3]>,
}

impl GridField {
    pub fn new(
        dims: [usize; 3],
        origin: Vec3,
        spacing: [f64; 3],
        samples: Vec<[f64; 3]>,
    ) -> Result<Self> {
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::NonPositiveSpacing(spacing[0], spacing[1], spacing[2]));
        }
        let expected = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or(Error::TruncatedPayload { expected: usize::MAX, got: 0 })?;
        if dims.contains(&0) || samples.len() != expected {
            return Err(Error::TruncatedPayload {
                expected: expected * 24,
                got: samples.len() * 24,
            });
        }
        Ok(GridField { dims, origin, spacing, samples })
    }

    /// Samples an analytic field on a regular grid. Points where `masked`
    /// returns true, or where the field cannot be evaluated, are stored as
    /// NaN sentinels.
    pub fn sample(
        field: &super::Field,
        dims: [usize; 3],
        origin: Vec3,
        spacing: [f64; 3],
        masked: impl Fn(Vec3) -> bool,
    ) -> Result<Self> {
        let mut samples = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let x = Vec3::new(
                        origin.x + i as f64 * spacing[0],
                        origin.y + j as f64 * spacing[1],
                        origin.z + k as f64 * spacing[2],
                    );
                    let v = if masked(x) {
                        [f64::NAN; 3]
                    } else {
                        match field.eval(x) {
                            Ok(u) => [u.x, u.y, u.z],
                            Err(_) => [f64::NAN; 3],
                        }
                    };
                    samples.push(v);
                }
            }
        }
        GridField::new(dims, origin, spacing, samples)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    #[inline]
    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    /// Trilinear interpolation inside the sample box.
    pub fn eval(&self, x: Vec3) -> Result<Vec3> {
        let t = [
            (x.x - self.origin.x) / self.spacing[0],
            (x.y - self.origin.y) / self.spacing[1],
            (x.z - self.origin.z) / self.spacing[2],
        ];
        let mut cell = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for axis in 0..3 {
            let hi = (self.dims[axis] - 1) as f64;
            if !(t[axis] >= 0.0 && t[axis] <= hi) {
                return Err(Error::OutOfBounds { at: x });
            }
            let c = (t[axis].floor() as usize).min(self.dims[axis].saturating_sub(2));
            cell[axis] = c;
            frac[axis] = t[axis] - c as f64;
        }
        let [i, j, k] = cell;
        let [fx, fy, fz] = frac;
        let mut corners = [[0.0f64; 3]; 8];
        for (c, corner) in corners.iter_mut().enumerate() {
            let di = c & 1;
            let dj = (c >> 1) & 1;
            let dk = (c >> 2) & 1;
            let s = self.samples[self.index(i + di, j + dj, k + dk)];
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::OutOfBounds { at: x });
            }
            *corner = s;
        }
        let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
        let mut out = [0.0f64; 3];
        for (comp, o) in out.iter_mut().enumerate() {
            let c00 = lerp(corners[0][comp], corners[1][comp], fx);
            let c10 = lerp(corners[2][comp], corners[3][comp], fx);
            let c01 = lerp(corners[4][comp], corners[5][comp], fx);
            let c11 = lerp(corners[6][comp], corners[7][comp], fx);
            let c0 = lerp(c00, c10, fy);
            let c1 = lerp(c01, c11, fy);
            *o = lerp(c0, c1, fz);
        }
        Ok(Vec3::new(out[0], out[1], out[2]))
    }

    /// Serializes to FLXF bytes. Bit patterns of all samples (including NaN
    /// payloads) are preserved exactly, so load followed by save reproduces
    /// the original file byte for byte.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 24 + 48 + self.samples.len() * 24);
        out.extend_from_slice(FLXF_MAGIC);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in [self.origin.x, self.origin.y, self.origin.z] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &v in &self.spacing {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for s in &self.samples {
            for &c in s {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != FLXF_MAGIC {
            return Err(Error::BadMagic {
                got: bytes.iter().copied().take(8).collect(),
            });
        }
        let header_len = 8 + 3 * 8 + 6 * 8;
        if bytes.len() < header_len {
            return Err(Error::TruncatedPayload {
                expected: header_len,
                got: bytes.len(),
            });
        }
        let mut off = 8;
        let mut read_u64 = || {
            let v = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            off += 8;
            v
        };
        let nx = read_u64() as usize;
        let ny = read_u64() as usize;
        let nz = read_u64() as usize;
        let mut off = 32;
        let mut read_f64 = || {
            let v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            off += 8;
            v
        };
        let origin = Vec3::new(read_f64(), read_f64(), read_f64());
        let spacing = [read_f64(), read_f64(), read_f64()];
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::NonPositiveSpacing(spacing[0], spacing[1], spacing[2]));
        }
        let count = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or(Error::TruncatedPayload { expected: usize::MAX, got: bytes.len() })?;
        let expected = count * 24;
        let payload = &bytes[header_len..];
        if payload.len() != expected {
            return Err(Error::TruncatedPayload {
                expected,
                got: payload.len(),
            });
        }
        let mut samples = Vec::with_capacity(count);
        for chunk in payload.chunks_exact(24) {
            samples.push([
                f64::from_le_bytes(chunk[0..8].try_into().unwrap()),
                f64::from_le_bytes(chunk[8..16].try_into().unwrap()),
                f64::from_le_bytes(chunk[16..24].try_into().unwrap()),
            ]);
        }
        GridField::new([nx, ny, nz], origin, spacing, samples)
    }
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<GridField> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    GridField::from_bytes(&bytes)
}

pub fn save_grid(path: impl AsRef<Path>, grid: &GridField) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&grid.to_bytes())?;
    Ok(())
}
