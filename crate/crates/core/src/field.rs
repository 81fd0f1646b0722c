//! Density fields, masks and latents on a regular element grid.
//!
//! All grids share one normalized frame: the domain is `[0,1]²`, x grows to
//! the right, y grows downward, and element `(i, j)` (column `i`, row `j`)
//! has its center at `((i + 0.5) / width, (j + 0.5) / height)`. FE nodes sit
//! on the element corners `(i / width, j / height)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Working resolution of the diffusion prior.
pub const CANONICAL_SIZE: usize = 64;

/// Smallest side accepted for a density field.
pub const MIN_SIDE: usize = 4;

/// A row-major grid of reals with no range constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::InvalidField(format!(
                "expected {} values for {width}x{height}, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Self { width, height, values: vec![v; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                values.push(f(i, j));
            }
        }
        Self { width, height, values }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.width + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[j * self.width + i] = v;
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid { width: self.width, height: self.height, values: self.values.iter().map(|v| f(*v)).collect() }
    }

    pub fn zip_with(&self, other: &Grid, f: impl Fn(f64, f64) -> f64) -> Grid {
        assert_eq!((self.width, self.height), (other.width, other.height), "grid shape mismatch");
        Grid {
            width: self.width,
            height: self.height,
            values: self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Normalized center of element `(i, j)`.
    #[inline]
    pub fn center(&self, i: usize, j: usize) -> [f64; 2] {
        [(i as f64 + 0.5) / self.width as f64, (j as f64 + 0.5) / self.height as f64]
    }

    /// Bilinear sample at a normalized point; out-of-domain samples clamp to
    /// the border value.
    pub fn sample_bilinear(&self, p: [f64; 2]) -> f64 {
        self.sample_cells(p[0] * self.width as f64 - 0.5, p[1] * self.height as f64 - 0.5)
    }

    /// Bilinear sample at fractional cell indices, so `(i, j)` returns the
    /// stored value exactly. Clamped at the borders.
    pub fn sample_cells(&self, fx: f64, fy: f64) -> f64 {
        let fx = fx.clamp(0.0, (self.width - 1) as f64);
        let fy = fy.clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let top = self.at(x0, y0) * (1.0 - tx) + self.at(x1, y0) * tx;
        let bot = self.at(x0, y1) * (1.0 - tx) + self.at(x1, y1) * tx;
        top * (1.0 - ty) + bot * ty
    }

    /// Resamples to `width × height`: exact area-weighted averaging when
    /// shrinking in both directions, bilinear interpolation otherwise.
    pub fn resample(&self, width: usize, height: usize) -> Grid {
        if width == self.width && height == self.height {
            return self.clone();
        }
        if width <= self.width && height <= self.height {
            self.area_average(width, height)
        } else {
            Grid::from_fn(width, height, |i, j| {
                self.sample_bilinear([(i as f64 + 0.5) / width as f64, (j as f64 + 0.5) / height as f64])
            })
        }
    }

    fn area_average(&self, width: usize, height: usize) -> Grid {
        // Overlap weights of source cells with each target cell, per axis.
        fn weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
            let scale = src as f64 / dst as f64;
            (0..dst)
                .map(|d| {
                    let lo = d as f64 * scale;
                    let hi = (d + 1) as f64 * scale;
                    let mut w = Vec::new();
                    let mut s = lo.floor() as usize;
                    while (s as f64) < hi && s < src {
                        let overlap = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
                        if overlap > 0.0 {
                            w.push((s, overlap / scale));
                        }
                        s += 1;
                    }
                    w
                })
                .collect()
        }
        let wx = weights(self.width, width);
        let wy = weights(self.height, height);
        Grid::from_fn(width, height, |i, j| {
            let mut acc = 0.0;
            for &(sy, ay) in &wy[j] {
                for &(sx, ax) in &wx[i] {
                    acc += ay * ax * self.at(sx, sy);
                }
            }
            acc
        })
    }

    /// Mirror left-right.
    pub fn flip_x(&self) -> Grid {
        Grid::from_fn(self.width, self.height, |i, j| self.at(self.width - 1 - i, j))
    }

    /// Mirror top-bottom.
    pub fn flip_y(&self) -> Grid {
        Grid::from_fn(self.width, self.height, |i, j| self.at(i, self.height - 1 - j))
    }
}

/// Material density per element, every value in `[0,1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Grid", into = "Grid")]
pub struct DensityField(Grid);

impl DensityField {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        Self::try_from(Grid::new(width, height, values)?)
    }

    pub fn uniform(width: usize, height: usize, v: f64) -> Self {
        Self::from_grid_clamped(Grid::filled(width.max(MIN_SIDE), height.max(MIN_SIDE), v))
    }

    /// Clamps every value into `[0,1]` (NaN becomes 0).
    pub fn from_grid_clamped(mut g: Grid) -> Self {
        for v in &mut g.values {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self(g)
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.0.at(i, j)
    }

    pub fn mean(&self) -> f64 {
        self.0.mean()
    }

    /// Resampled copy; the result is clamped to stay a valid field.
    pub fn resample(&self, width: usize, height: usize) -> DensityField {
        DensityField::from_grid_clamped(self.0.resample(width, height))
    }

    /// Copy at the prior's working resolution. Integer upscaling replicates
    /// pixels so that [`DensityField::resample`] back to the source size is an
    /// exact inverse.
    pub fn to_canonical(&self) -> DensityField {
        let (w, h) = (self.width(), self.height());
        if CANONICAL_SIZE % w == 0 && CANONICAL_SIZE % h == 0 {
            let (fx, fy) = (CANONICAL_SIZE / w, CANONICAL_SIZE / h);
            return DensityField(Grid::from_fn(CANONICAL_SIZE, CANONICAL_SIZE, |i, j| self.0.at(i / fx, j / fy)));
        }
        self.resample(CANONICAL_SIZE, CANONICAL_SIZE)
    }
}

impl TryFrom<Grid> for DensityField {
    type Error = Error;

    fn try_from(g: Grid) -> Result<Self> {
        if g.values.len() != g.width * g.height {
            return Err(Error::parse("values", format!("length {} != width*height {}", g.values.len(), g.width * g.height)));
        }
        if g.width < MIN_SIDE || g.height < MIN_SIDE {
            return Err(Error::parse("width", format!("{}x{} is smaller than the {MIN_SIDE}x{MIN_SIDE} minimum", g.width, g.height)));
        }
        if let Some(k) = g.values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::parse("values", format!("value {} at index {k} outside [0,1]", g.values[k])));
        }
        Ok(Self(g))
    }
}

impl From<DensityField> for Grid {
    fn from(f: DensityField) -> Grid {
        f.0
    }
}

/// Per-element weights in `[0,1]`; binary masks use exactly `{0,1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Grid", into = "Grid")]
pub struct Mask(Grid);

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self(Grid::filled(width, height, 0.0))
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self(Grid::filled(width, height, 1.0))
    }

    pub fn from_fn(width: usize, height: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        Self::from_grid_clamped(Grid::from_fn(width, height, f))
    }

    pub fn from_bools(width: usize, height: usize, bits: &[bool]) -> Self {
        assert_eq!(bits.len(), width * height);
        Self(Grid { width, height, values: bits.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect() })
    }

    pub fn from_grid_clamped(mut g: Grid) -> Self {
        for v in &mut g.values {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self(g)
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.0.at(i, j)
    }

    #[inline]
    pub fn is_set(&self, i: usize, j: usize) -> bool {
        self.0.at(i, j) >= 0.5
    }

    pub fn bits(&self) -> Vec<bool> {
        self.0.values.iter().map(|v| *v >= 0.5).collect()
    }

    pub fn count(&self) -> usize {
        self.0.values.iter().filter(|v| **v >= 0.5).count()
    }

    pub fn sum(&self) -> f64 {
        self.0.sum()
    }

    pub fn is_binary(&self) -> bool {
        self.0.values.iter().all(|v| *v == 0.0 || *v == 1.0)
    }

    /// Nearest-neighbour resampling, keeps binary masks binary.
    pub fn resample_nearest(&self, width: usize, height: usize) -> Mask {
        let g = &self.0;
        Mask(Grid::from_fn(width, height, |i, j| {
            let si = ((i as f64 + 0.5) * g.width as f64 / width as f64).floor() as usize;
            let sj = ((j as f64 + 0.5) * g.height as f64 / height as f64).floor() as usize;
            g.at(si.min(g.width - 1), sj.min(g.height - 1))
        }))
    }
}

impl TryFrom<Grid> for Mask {
    type Error = Error;

    fn try_from(g: Grid) -> Result<Self> {
        if g.values.len() != g.width * g.height {
            return Err(Error::parse("values", format!("length {} != width*height {}", g.values.len(), g.width * g.height)));
        }
        if let Some(k) = g.values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::parse("values", format!("mask value {} at index {k} outside [0,1]", g.values[k])));
        }
        Ok(Self(g))
    }
}

impl From<Mask> for Grid {
    fn from(m: Mask) -> Grid {
        m.0
    }
}

/// Normalized grid state passed through noising and denoising.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Latent(pub Grid);

impl Latent {
    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0.values
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Latent(Grid::filled(width, height, v))
    }

    pub fn max_abs_diff(&self, other: &Latent) -> f64 {
        self.0
            .values
            .iter()
            .zip(&other.0.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Affine map `[0,1] → [-1,1]`.
pub fn encode_field(field: &DensityField) -> Latent {
    Latent(field.grid().map(|v| 2.0 * v - 1.0))
}

/// Inverse affine map followed by clamping to `[0,1]`.
pub fn decode_field(z: &Latent) -> Result<DensityField> {
    if let Some(index) = z.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::CorruptedLatent { index });
    }
    let g = z.0.map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0));
    if g.width < MIN_SIDE || g.height < MIN_SIDE {
        return Err(Error::InvalidField(format!("latent {}x{} too small to decode", g.width, g.height)));
    }
    Ok(DensityField(g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_endpoints() {
        assert!(encode_field(&DensityField::uniform(8, 8, 0.0)).values().iter().all(|v| *v == -1.0));
        assert!(encode_field(&DensityField::uniform(8, 8, 1.0)).values().iter().all(|v| *v == 1.0));
        assert!(encode_field(&DensityField::uniform(8, 8, 0.5)).values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn decode_clamps_and_rejects_nan() {
        let f = decode_field(&Latent::filled(4, 4, 1.0)).unwrap();
        assert!(f.values().iter().all(|v| *v == 1.0));
        let f = decode_field(&Latent::filled(4, 4, 3.0)).unwrap();
        assert!(f.values().iter().all(|v| *v == 1.0));
        let mut z = Latent::filled(4, 4, 0.0);
        z.values_mut()[5] = f64::NAN;
        assert!(matches!(decode_field(&z), Err(Error::CorruptedLatent { index: 5 })));
    }

    #[test]
    fn density_field_rejects_out_of_range_and_small() {
        assert!(DensityField::new(4, 4, vec![1.5; 16]).is_err());
        assert!(DensityField::new(3, 4, vec![0.5; 12]).is_err());
        assert!(DensityField::new(4, 4, vec![0.5; 15]).is_err());
    }

    #[test]
    fn area_average_preserves_mean() {
        let g = Grid::from_fn(60, 20, |i, j| ((i * 7 + j * 3) % 11) as f64 / 10.0);
        let r = g.resample(15, 10);
        assert!((g.mean() - r.mean()).abs() < 1e-12);
        let r = g.resample(64, 64);
        assert_eq!((r.width, r.height), (64, 64));
    }

    #[test]
    fn canonical_round_trip_is_exact_for_integer_factors() {
        let f = DensityField::new(64, 32, (0..64 * 32).map(|k| ((k * 37) % 101) as f64 / 100.0).collect()).unwrap();
        let c = f.to_canonical();
        assert_eq!((c.width(), c.height()), (CANONICAL_SIZE, CANONICAL_SIZE));
        assert_eq!(c.resample(64, 32), f);
    }

    #[test]
    fn mirror_maps_centers() {
        let g = Grid::filled(10, 6, 0.0);
        let c = g.center(2, 1);
        let m = g.center(10 - 1 - 2, 1);
        assert!((c[0] + m[0] - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn decode_encode_round_trip(vals in proptest::collection::vec(0.0f64..=1.0, 64)) {
            let f = DensityField::new(8, 8, vals).unwrap();
            let back = decode_field(&encode_field(&f)).unwrap();
            for (a, b) in f.values().iter().zip(back.values()) {
                prop_assert!((a - b).abs() <= f64::EPSILON);
            }
        }
    }
}
