//! Binary checkpoints ("PEHV", little endian).
//!
//! Layout: magic `PEHV`, version `u32`, `Mx My K Nq_x Nq_y Nq_z` as `u32`,
//! `h Lx Ly time` as `f64`, then the coefficient tensor in C order
//! (component, vertical mode, horizontal mode) as `f64`.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array3;

use crate::basis::{DomainSpec, SpectralBasis};
use crate::error::{Error, Result};
use crate::field::VelocityField;

pub const MAGIC: &[u8; 4] = b"PEHV";
pub const VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 6 * 4 + 4 * 8;

/// Decoded checkpoint contents, independent of any basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: DomainSpec,
    pub time: f64,
    pub coeffs: Array3<f64>,
}

impl Checkpoint {
    pub fn from_field(v: &VelocityField, time: f64) -> Self {
        Self {
            spec: *v.basis().spec(),
            time,
            coeffs: v.coeffs().clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.spec;
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.coeffs.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for n in [s.mx, s.my, s.k, s.nq_x, s.nq_y, s.nq_z] {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        for x in [s.h, s.lx, s.ly, self.time] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for x in self.coeffs.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    /// Parses a checkpoint; `origin` labels errors.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fail = |reason: String| Error::Checkpoint {
            path: origin.to_path_buf(),
            reason,
        };
        if bytes.len() < HEADER_LEN {
            return Err(fail(format!("truncated header ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(fail("bad magic".into()));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(fail(format!("unsupported version {version}")));
        }
        let ints: Vec<usize> = (0..6).map(|j| u32_at(8 + 4 * j) as usize).collect();
        let floats: Vec<f64> = (0..4).map(|j| f64_at(32 + 8 * j)).collect();
        let spec = DomainSpec {
            h: floats[0],
            lx: floats[1],
            ly: floats[2],
            mx: ints[0],
            my: ints[1],
            k: ints[2],
            nq_x: ints[3],
            nq_y: ints[4],
            nq_z: ints[5],
        };
        let shape = spec.coeff_shape();
        let count = shape.0 * shape.1 * shape.2;
        let body = &bytes[HEADER_LEN..];
        if body.len() != 8 * count {
            return Err(fail(format!(
                "expected {count} coefficients, found {} bytes",
                body.len()
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let coeffs = Array3::from_shape_vec(shape, values).expect("length checked");
        Ok(Self {
            spec,
            time: floats[3],
            coeffs,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_bytes(&bytes, path)
    }

    /// Field on `basis`; the stored spec must match it exactly.
    pub fn into_field(self, basis: Arc<SpectralBasis>) -> Result<VelocityField> {
        if *basis.spec() != self.spec {
            return Err(Error::BasisMismatch);
        }
        VelocityField::from_coeffs(basis, self.coeffs)
    }
}
