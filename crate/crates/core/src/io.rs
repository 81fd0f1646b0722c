//! JSON documents and binary PGM interchange.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{DensityField, Grid, Mask};

/// Hex SHA-256 of the shape and little-endian values of a grid.
pub fn grid_hash(g: &Grid) -> String {
    let mut h = Sha256::new();
    h.update((g.width as u64).to_le_bytes());
    h.update((g.height as u64).to_le_bytes());
    for v in &g.values {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

pub fn from_json<T: DeserializeOwned>(s: &str) -> Result<T> {
    Ok(serde_json::from_str(s)?)
}

pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    fs::write(path, to_json(value)?)?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    from_json(&fs::read_to_string(path)?)
}

/// Encodes a `[0,1]` grid as binary P5 PGM (maxval 255, row-major).
pub fn grid_to_pgm(g: &Grid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", g.width, g.height).into_bytes();
    out.extend(g.values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn grid_from_pgm(bytes: &[u8]) -> Result<Grid> {
    // Header: magic, width, height, maxval separated by whitespace, comments allowed.
    let mut tokens = Vec::with_capacity(4);
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse("pgm header", "truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1; // single whitespace before raster
    if tokens[0] != "P5" {
        return Err(Error::parse("pgm magic", format!("expected P5, got {}", tokens[0])));
    }
    let num = |k: usize, name: &str| -> Result<usize> {
        tokens[k].parse().map_err(|_| Error::parse(name, format!("not an integer: {}", tokens[k])))
    };
    let (w, h, maxval) = (num(1, "pgm width")?, num(2, "pgm height")?, num(3, "pgm maxval")?);
    if maxval != 255 {
        return Err(Error::parse("pgm maxval", format!("only 8-bit (255) supported, got {maxval}")));
    }
    let raster = bytes.get(pos..pos + w * h).ok_or_else(|| Error::parse("pgm raster", "truncated raster"))?;
    Grid::new(w, h, raster.iter().map(|b| *b as f64 / 255.0).collect())
}

pub fn save_field_pgm(path: impl AsRef<Path>, f: &DensityField) -> Result<()> {
    fs::write(path, grid_to_pgm(f.grid()))?;
    Ok(())
}

pub fn load_field_pgm(path: impl AsRef<Path>) -> Result<DensityField> {
    DensityField::try_from(grid_from_pgm(&fs::read(path)?)?)
}

pub fn save_mask_pgm(path: impl AsRef<Path>, m: &Mask) -> Result<()> {
    fs::write(path, grid_to_pgm(m.grid()))?;
    Ok(())
}

pub fn load_mask_pgm(path: impl AsRef<Path>) -> Result<Mask> {
    Mask::try_from(grid_from_pgm(&fs::read(path)?)?)
}

/// Loads a density field from `.pgm` or JSON depending on the extension.
pub fn load_field(path: impl AsRef<Path>) -> Result<DensityField> {
    let p = path.as_ref();
    if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
        load_field_pgm(p)
    } else {
        load_json(p)
    }
}

pub fn save_field(path: impl AsRef<Path>, f: &DensityField) -> Result<()> {
    let p = path.as_ref();
    if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
        save_field_pgm(p, f)
    } else {
        save_json(p, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::ProblemSpec;
    use proptest::prelude::*;

    #[test]
    fn minimal_spec_round_trips() {
        let s = ProblemSpec {
            supports: vec![crate::problem::Support { x: 0.0, y: 0.25, fix_x: true, fix_y: true }],
            loads: vec![crate::problem::Load { x: 1.0, y: 0.5, fx: 0.1, fy: -1.0 / 3.0 }],
            volume_fraction: 0.5,
            aspect: [1.0, 0.5],
            cell_size: 1.0,
        };
        let back: ProblemSpec = from_json(&to_json(&s).unwrap()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn pgm_round_trip_is_quantized() {
        let g = Grid::from_fn(5, 4, |i, j| (i + j) as f64 / 7.0);
        let back = grid_from_pgm(&grid_to_pgm(&g)).unwrap();
        assert_eq!((back.width, back.height), (5, 4));
        for (a, b) in g.values.iter().zip(&back.values) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn pgm_rejects_wrong_magic() {
        assert!(grid_from_pgm(b"P2\n2 2\n255\n0 0 0 0").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn density_json_round_trip_is_exact(vals in proptest::collection::vec(0.0f64..=1.0, 64 * 64)) {
            let f = DensityField::new(64, 64, vals).unwrap();
            let back: DensityField = from_json(&to_json(&f).unwrap()).unwrap();
            prop_assert_eq!(f, back);
        }
    }
}
