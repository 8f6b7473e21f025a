//! `DDFV` grid files.
//!
//! A 48-byte little-endian header followed by the payload as `f64` values,
//! channel-major then `z`, `y`, `x` with `x` fastest:
//!
//! | offset | size | field                                   |
//! |-------:|-----:|-----------------------------------------|
//! | 0      | 4    | magic `"DDFV"`                          |
//! | 4      | 2    | version (`u16`, currently 1)            |
//! | 6      | 1    | kind: 0 volume, 1 mask set, 2 ddf       |
//! | 7      | 1    | flags: bit 0 = soft mask set            |
//! | 8      | 12   | dims `w, h, d` (`u32` each)             |
//! | 20     | 4    | channel count (`u32`)                   |
//! | 24     | 24   | spacing `sx, sy, sz` in mm (`f64` each) |

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Ddf, Dims, MaskMode, MaskSet, Volume};

pub const VOLUME_MAGIC: [u8; 4] = *b"DDFV";
pub const VOLUME_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 48;

/// Anything that can be stored in a `DDFV` file.
#[derive(Clone, Debug, PartialEq)]
pub enum GridObject {
    Volume(Volume),
    MaskSet(MaskSet),
    Ddf(Ddf),
}

impl GridObject {
    fn kind(&self) -> u8 {
        match self {
            GridObject::Volume(_) => 0,
            GridObject::MaskSet(_) => 1,
            GridObject::Ddf(_) => 2,
        }
    }

    pub fn into_volume(self) -> Result<Volume> {
        match self {
            GridObject::Volume(v) => Ok(v),
            other => Err(Error::UnknownKind(other.kind())),
        }
    }

    pub fn into_masks(self) -> Result<MaskSet> {
        match self {
            GridObject::MaskSet(m) => Ok(m),
            other => Err(Error::UnknownKind(other.kind())),
        }
    }

    pub fn into_ddf(self) -> Result<Ddf> {
        match self {
            GridObject::Ddf(d) => Ok(d),
            other => Err(Error::UnknownKind(other.kind())),
        }
    }
}

impl From<Volume> for GridObject {
    fn from(v: Volume) -> Self {
        GridObject::Volume(v)
    }
}

impl From<MaskSet> for GridObject {
    fn from(m: MaskSet) -> Self {
        GridObject::MaskSet(m)
    }
}

impl From<Ddf> for GridObject {
    fn from(d: Ddf) -> Self {
        GridObject::Ddf(d)
    }
}

fn u32_dim(v: usize) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::DimOverflow(format!("{v} does not fit in u32")))
}

pub fn encode(obj: &GridObject) -> Result<Vec<u8>> {
    let (dims, channels, spacing, flags, data): (Dims, usize, [f64; 3], u8, &[f64]) = match obj {
        GridObject::Volume(v) => (v.dims(), 1, v.spacing(), 0, v.data()),
        GridObject::MaskSet(m) => (
            m.dims(),
            m.classes(),
            [1.0; 3],
            u8::from(m.mode() == MaskMode::Soft),
            m.data(),
        ),
        GridObject::Ddf(d) => (d.dims(), 3, [1.0; 3], 0, d.data()),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * data.len());
    out.extend_from_slice(&VOLUME_MAGIC);
    out.extend_from_slice(&VOLUME_VERSION.to_le_bytes());
    out.push(obj.kind());
    out.push(flags);
    for v in dims.as_array() {
        out.extend_from_slice(&u32_dim(v)?);
    }
    out.extend_from_slice(&u32_dim(channels)?);
    for s in spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<GridObject> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != VOLUME_MAGIC {
            return Err(Error::BadMagic {
                expected: VOLUME_MAGIC,
                found: bytes[..4].try_into().expect("4 bytes"),
            });
        }
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != VOLUME_MAGIC {
        return Err(Error::BadMagic {
            expected: VOLUME_MAGIC,
            found: magic,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VOLUME_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let kind = bytes[6];
    let flags = bytes[7];
    let u32_at =
        |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let dims = Dims::new(u32_at(8), u32_at(12), u32_at(16));
    let channels = u32_at(20);
    let spacing = [f64_at(24), f64_at(32), f64_at(40)];

    let values = dims
        .w
        .checked_mul(dims.h)
        .and_then(|n| n.checked_mul(dims.d))
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::DimOverflow(format!("{dims} x {channels} channels")))?;
    let payload = values
        .checked_mul(8)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::DimOverflow(format!("{dims} x {channels} channels")))?;
    if bytes.len() < payload {
        return Err(Error::Truncated {
            expected: payload,
            found: bytes.len(),
        });
    }
    if bytes.len() > payload {
        return Err(Error::InvalidGrid(format!(
            "{} trailing bytes after payload",
            bytes.len() - payload
        )));
    }
    let data: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    match kind {
        0 => {
            if channels != 1 {
                return Err(Error::InvalidGrid(format!(
                    "volume with {channels} channels"
                )));
            }
            Ok(GridObject::Volume(Volume::new(dims, spacing, data)?))
        }
        1 => {
            let mode = if flags & 1 == 1 {
                MaskMode::Soft
            } else {
                MaskMode::Binary
            };
            Ok(GridObject::MaskSet(MaskSet::new(
                dims, channels, mode, data,
            )?))
        }
        2 => {
            if channels != 3 {
                return Err(Error::InvalidGrid(format!("ddf with {channels} channels")));
            }
            Ok(GridObject::Ddf(Ddf::new(dims, data)?))
        }
        k => Err(Error::UnknownKind(k)),
    }
}

pub fn write_file(path: impl AsRef<Path>, obj: &GridObject) -> Result<()> {
    std::fs::write(path, encode(obj)?)?;
    Ok(())
}

pub fn read_file(path: impl AsRef<Path>) -> Result<GridObject> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn volume() -> Volume {
        Volume::from_fn(Dims::new(3, 4, 2), |x, y, z| {
            x as f64 - 0.5 * y as f64 + 1e-300 * z as f64
        })
        .unwrap()
        .with_spacing([0.75, 0.75, 2.5])
        .unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&volume().into()).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 8 * 24);
        assert_eq!(&bytes[..4], b"DDFV");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(bytes[6], 0);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[40..48].try_into().unwrap()), 2.5);
        // x fastest: second payload value is voxel (1,0,0)
        assert_eq!(f64::from_le_bytes(bytes[56..64].try_into().unwrap()), 1.0);
    }

    #[test]
    fn roundtrips() {
        let v: GridObject = volume().into();
        assert_eq!(decode(&encode(&v).unwrap()).unwrap(), v);
        let d: GridObject = Ddf::from_fn(Dims::cube(3), |x, y, z| {
            [x as f64, -(y as f64), 0.1 * z as f64]
        })
        .unwrap()
        .into();
        assert_eq!(decode(&encode(&d).unwrap()).unwrap(), d);
        let soft: GridObject = MaskSet::new(Dims::cube(2), 1, MaskMode::Soft, vec![1.0; 8])
            .unwrap()
            .into();
        assert_eq!(decode(&encode(&soft).unwrap()).unwrap(), soft);
    }

    #[test]
    fn distinct_errors() {
        let good = encode(&volume().into()).unwrap();

        let mut bad = good.clone();
        bad[0] ^= 0xff;
        assert!(matches!(decode(&bad), Err(Error::BadMagic { .. })));

        assert!(matches!(
            decode(&good[..good.len() - 3]),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(decode(&good[..10]), Err(Error::Truncated { .. })));

        let mut huge = good.clone();
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[16..20].copy_from_slice(&u32::MAX.to_le_bytes());
        huge[20..24].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode(&huge), Err(Error::DimOverflow(_))));

        let mut kind = good.clone();
        kind[6] = 7;
        assert!(matches!(decode(&kind), Err(Error::UnknownKind(7))));

        let mut version = good;
        version[4] = 2;
        assert!(matches!(
            decode(&version),
            Err(Error::UnsupportedVersion(2))
        ));
    }
}
