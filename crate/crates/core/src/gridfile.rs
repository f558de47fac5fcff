//! The `DPLGRID1` raw grid format.
//!
//! Layout (all little-endian):
//!
//! | offset | size | content                                           |
//! |--------|------|---------------------------------------------------|
//! | 0      | 8    | magic `DPLGRID1`                                  |
//! | 8      | 4    | `u32` number of array axes (1..=4)                |
//! | 12     | 16   | `u32` extent per axis, unused slots zero          |
//! | 28     | 4    | `u32` layout flag: 0 space, 1 time axis leading   |
//! | 32     | 8·n  | `f64` values, row-major (last axis fastest)       |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{GridField, Lattice, Layout};

pub const MAGIC: &[u8; 8] = b"DPLGRID1";
pub const HEADER_LEN: usize = 32;

/// Decoded contents of a grid file, before it is attached to a lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct RawGrid {
    pub shape: Vec<usize>,
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl RawGrid {
    pub fn from_field(field: &GridField) -> Self {
        let l = field.lattice();
        let mut shape = Vec::with_capacity(4);
        if field.layout() == Layout::SpaceTime {
            shape.push(l.time_steps());
        }
        shape.extend_from_slice(l.shape());
        Self {
            shape,
            layout: field.layout(),
            values: field.values().to_vec(),
        }
    }

    /// Attach to `lattice`, checking that the stored shape matches.
    pub fn into_field(self, lattice: Lattice) -> Result<GridField> {
        let mut expected = Vec::new();
        if self.layout == Layout::SpaceTime {
            expected.push(lattice.time_steps());
        }
        expected.extend_from_slice(lattice.shape());
        if expected != self.shape {
            return Err(Error::Config(format!(
                "grid file shape {:?} does not match lattice shape {expected:?}",
                self.shape
            )));
        }
        GridField::from_values(lattice, self.layout, self.values)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + 8 * self.values.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for i in 0..4 {
            let e = self.shape.get(i).copied().unwrap_or(0) as u32;
            buf.extend_from_slice(&e.to_le_bytes());
        }
        let flag: u32 = match self.layout {
            Layout::Space => 0,
            Layout::SpaceTime => 1,
        };
        buf.extend_from_slice(&flag.to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::format(origin, reason);
        if bytes.len() < HEADER_LEN {
            return Err(bad("file shorter than the 32-byte header"));
        }
        if &bytes[..8] != MAGIC {
            return Err(bad("missing DPLGRID1 magic"));
        }
        let word = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let ndim = word(8) as usize;
        if !(1..=4).contains(&ndim) {
            return Err(bad("axis count must be 1..=4"));
        }
        let shape: Vec<usize> = (0..ndim).map(|i| word(12 + 4 * i) as usize).collect();
        if shape.contains(&0) {
            return Err(bad("zero extent"));
        }
        if (ndim..4).any(|i| word(12 + 4 * i) != 0) {
            return Err(bad("unused extent slots must be zero"));
        }
        let layout = match word(28) {
            0 => Layout::Space,
            1 => Layout::SpaceTime,
            other => return Err(bad(&format!("unknown layout flag {other}"))),
        };
        if layout == Layout::SpaceTime && ndim < 2 {
            return Err(bad("space-time grid needs a spatial axis"));
        }
        let count: usize = shape.iter().product();
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != 8 * count {
            return Err(bad(&format!(
                "expected {count} values, found {} bytes of payload",
                payload.len()
            )));
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            shape,
            layout,
            values,
        })
    }
}

pub fn write_grid(path: impl AsRef<Path>, field: &GridField) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, RawGrid::from_field(field).encode()).map_err(|e| Error::io(path, e))
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<RawGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    RawGrid::decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoxDomain, GridSpec};
    use proptest::prelude::*;

    fn lattice() -> Lattice {
        Lattice::new(
            BoxDomain::cube(2, 0.0, 1.0, 1.0).unwrap(),
            GridSpec::new(vec![3, 2], 4).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn header_layout_is_fixed() {
        let f = GridField::from_fn_space(lattice(), |x| x[0]);
        let bytes = RawGrid::from_field(&f).encode();
        assert_eq!(&bytes[..8], b"DPLGRID1");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 0);
        assert_eq!(bytes.len(), 32 + 6 * 8);
        assert_eq!(
            f64::from_le_bytes(bytes[32..40].try_into().unwrap()),
            1.0 / 6.0
        );
    }

    #[test]
    fn rejects_truncated_and_foreign_files() {
        let p = Path::new("mem");
        assert!(RawGrid::decode(b"DPLGRID1", p).is_err());
        let f = GridField::zeros(lattice(), Layout::SpaceTime);
        let mut bytes = RawGrid::from_field(&f).encode();
        bytes.pop();
        assert!(RawGrid::decode(&bytes, p).is_err());
        let mut bytes = RawGrid::from_field(&f).encode();
        bytes[0] = b'X';
        assert!(RawGrid::decode(&bytes, p).is_err());
    }

    #[test]
    fn shape_mismatch_detected_on_attach() {
        let f = GridField::zeros(lattice(), Layout::Space);
        let raw = RawGrid::from_field(&f);
        let other = Lattice::new(
            BoxDomain::cube(2, 0.0, 1.0, 1.0).unwrap(),
            GridSpec::new(vec![2, 3], 4).unwrap(),
        )
        .unwrap();
        assert!(raw.into_field(other).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_identity(values in prop::collection::vec(-1e6f64..1e6, 24)) {
            let f = GridField::from_values(lattice(), Layout::SpaceTime, values).unwrap();
            let raw = RawGrid::decode(&RawGrid::from_field(&f).encode(), Path::new("mem")).unwrap();
            prop_assert_eq!(raw.clone().into_field(lattice()).unwrap(), f);
        }
    }
}
