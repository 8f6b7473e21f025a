//! Binary checkpoint: student, teacher and optimizer state.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "SWRG"  u16 version
//! u32 w, h, d   u32 pool   u32 hidden[3]   u32 control w, h, d   f64 max_displacement[3]
//! u64 θ length
//! f64 θ[len]            student
//! f64 θ_t[len]          teacher
//! f64 lr, β1, β2, ε   u64 step   f64 m[len]   f64 v[len]
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Dims;
use crate::model::adam::{AdamConfig, AdamState};
use crate::model::arch::{ArchConfig, ModelParams};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SWRG";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub adam: AdamState,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or_else(|| Error::DimOverflow("checkpoint length".into()))?;
        if end > self.buf.len() {
            return Err(Error::Truncated {
                expected: end,
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::DimOverflow("parameter count".into()))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::DimOverflow(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn new(student: ModelParams, teacher: ModelParams, adam: AdamState) -> Result<Self> {
        student.same_shape(&teacher)?;
        if adam.m.len() != student.len() || adam.v.len() != student.len() {
            return Err(Error::InvalidParameter(
                "optimizer moments do not match parameters".into(),
            ));
        }
        Ok(Self {
            student,
            teacher,
            adam,
        })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let arch = self.student.arch();
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in arch.dims.as_array() {
            put_u32(&mut out, v)?;
        }
        put_u32(&mut out, arch.pool)?;
        for v in arch.hidden {
            put_u32(&mut out, v)?;
        }
        for v in arch.control.as_array() {
            put_u32(&mut out, v)?;
        }
        put_f64s(&mut out, &arch.max_displacement);
        out.extend_from_slice(&(self.student.len() as u64).to_le_bytes());
        put_f64s(&mut out, self.student.theta());
        put_f64s(&mut out, self.teacher.theta());
        let c = self.adam.config;
        put_f64s(&mut out, &[c.lr, c.beta1, c.beta2, c.eps]);
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        put_f64s(&mut out, &self.adam.m);
        put_f64s(&mut out, &self.adam.v);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                expected: CHECKPOINT_MAGIC,
                found: magic,
            });
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dims = Dims::new(r.u32()?, r.u32()?, r.u32()?);
        let pool = r.u32()?;
        let hidden = [r.u32()?, r.u32()?, r.u32()?];
        let control = Dims::new(r.u32()?, r.u32()?, r.u32()?);
        let max_displacement = [r.f64()?, r.f64()?, r.f64()?];
        let arch = ArchConfig {
            dims,
            pool,
            hidden,
            control,
            max_displacement,
        };
        arch.validate()?;
        let len =
            usize::try_from(r.u64()?).map_err(|_| Error::DimOverflow("parameter count".into()))?;
        if len != arch.param_count() {
            return Err(Error::InvalidParameter(format!(
                "checkpoint stores {len} parameters, architecture needs {}",
                arch.param_count()
            )));
        }
        let student = ModelParams::from_vec(arch.clone(), r.f64s(len)?)?;
        let teacher = ModelParams::from_vec(arch, r.f64s(len)?)?;
        let config = AdamConfig {
            lr: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            eps: r.f64()?,
        };
        let step = r.u64()?;
        let m = r.f64s(len)?;
        let v = r.f64s(len)?;
        Checkpoint::new(student, teacher, AdamState { config, step, m, v })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.encode()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::decode(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let arch = ArchConfig::for_grid(Dims::new(8, 8, 4), 2).unwrap();
        let student = ModelParams::init(arch.clone(), 1).unwrap();
        let teacher = ModelParams::init(arch, 2).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), student.len());
        adam.step = 17;
        adam.m[3] = 0.25;
        adam.v[5] = 1e-9;
        Checkpoint::new(student, teacher, adam).unwrap()
    }

    #[test]
    fn roundtrip() {
        let c = sample();
        let bytes = c.encode().unwrap();
        assert_eq!(&bytes[..4], b"SWRG");
        assert_eq!(Checkpoint::decode(&bytes).unwrap(), c);
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = sample().encode().unwrap();
        let n = bytes.len();
        assert!(matches!(
            Checkpoint::decode(&bytes[..n - 1]),
            Err(Error::Truncated { .. })
        ));
        bytes[4] = 9;
        assert!(matches!(
            Checkpoint::decode(&bytes),
            Err(Error::UnsupportedVersion(9))
        ));
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::decode(&bytes),
            Err(Error::BadMagic { .. })
        ));
    }
}
