//! Dense fields, the pinhole stereo rig and the disparity/depth relation.
//!
//! Every field is row-major with `f64` storage. Index `(i, j)` is row `i`,
//! column `j`; the flat offset is `i * width + j` (times `channels` for
//! images).

use crate::error::{Error, Result};

/// Disparities below this many pixels are treated as "no depth".
pub const DISPARITY_EPSILON: f64 = 1e-6;

/// Intensity image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("unsupported channel count {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "image data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::invalid(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self { height, width, channels, data })
    }

    /// Builds an image from a per-pixel function returning one value per channel.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for i in 0..height {
            for j in 0..width {
                for c in 0..channels {
                    data.push(f(i, j, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[(i * self.width + j) * self.channels + c]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Unconstrained scalar field. Used for SSIM maps, gradients and
/// modulation-depth maps, none of which live in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, values: vec![0.0; height * width] }
    }

    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::invalid(format!("field length {} does not match {height}x{width}", values.len())));
        }
        Ok(Self { height, width, values })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                values.push(f(i, j));
            }
        }
        Self { height, width, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.width + j] += v;
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Per-pixel horizontal disparity magnitudes in pixels.
///
/// A left-view pixel at column `x` matches column `x - d` in the right
/// image; a right-view pixel at `x` matches `x + d` in the left image.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityField {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DisparityField {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("disparity dimensions must be positive"));
        }
        if values.len() != height * width {
            return Err(Error::invalid(format!("disparity length {} does not match {height}x{width}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!("disparity {v} is negative or non-finite")));
        }
        Ok(Self { height, width, values })
    }

    /// Like [`DisparityField::new`] but also enforces a ceiling.
    pub fn with_ceiling(height: usize, width: usize, values: Vec<f64>, d_max: f64) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| **v > d_max) {
            return Err(Error::invalid(format!("disparity {v} exceeds ceiling {d_max}")));
        }
        Self::new(height, width, values)
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                values.push(f(i, j));
            }
        }
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    /// Returns a copy with one pixel replaced. Used by finite-difference checks.
    pub fn with_value(&self, i: usize, j: usize, v: f64) -> Result<Self> {
        let mut values = self.values.clone();
        values[i * self.width + j] = v;
        Self::new(self.height, self.width, values)
    }
}

/// Depth map in scene units with a validity flag per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Pixels whose value is not finite or not strictly positive are marked invalid.
    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::invalid(format!("depth length {} does not match {height}x{width}", values.len())));
        }
        let valid: Vec<bool> = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        let values = values.into_iter().zip(&valid).map(|(v, ok)| if *ok { v } else { 0.0 }).collect();
        Ok(Self { height, width, values, valid })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Raw values; invalid pixels hold 0.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = i * self.width + j;
        self.valid[k].then_some(self.values[k])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Multiplies every valid depth by `s` (> 0).
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::from_values(
            self.height,
            self.width,
            self.values.iter().zip(&self.valid).map(|(v, ok)| if *ok { v * s } else { 0.0 }).collect(),
        )
    }
}

/// Rectified pinhole stereo pair sharing focal length and principal point.
/// The right camera sits `baseline` units along +X from the left one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraRig {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub baseline: f64,
    pub height: usize,
    pub width: usize,
}

impl CameraRig {
    pub fn new(focal: f64, cx: f64, cy: f64, baseline: f64, height: usize, width: usize) -> Result<Self> {
        if !(focal.is_finite() && focal > 0.0) {
            return Err(Error::invalid(format!("focal length {focal} must be positive")));
        }
        if !(baseline.is_finite() && baseline > 0.0) {
            return Err(Error::invalid(format!("baseline {baseline} must be positive")));
        }
        if height == 0 || width == 0 {
            return Err(Error::invalid("rig image dimensions must be positive"));
        }
        let inside = |v: f64, n: usize| v.is_finite() && v >= 0.0 && v <= (n - 1) as f64;
        if !inside(cx, width) || !inside(cy, height) {
            return Err(Error::invalid(format!("principal point ({cx}, {cy}) outside {height}x{width} image")));
        }
        Ok(Self { focal, cx, cy, baseline, height, width })
    }

    /// Rig with the principal point at the image centre.
    pub fn centered(focal: f64, baseline: f64, height: usize, width: usize) -> Result<Self> {
        Self::new(focal, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, baseline, height, width)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// `baseline * focal`, the numerator of the disparity/depth relation.
    pub fn bf(&self) -> f64 {
        self.baseline * self.focal
    }

    pub(crate) fn check_dims(&self, dims: (usize, usize), what: &str) -> Result<()> {
        if dims != self.dims() {
            return Err(Error::invalid(format!(
                "{what} is {}x{} but the rig is {}x{}",
                dims.0, dims.1, self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Pixel coordinate grids.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelGrid {
    pub x_coords: Field,
    pub y_coords: Field,
}

pub fn make_meshgrid(height: usize, width: usize) -> Result<PixelGrid> {
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!("meshgrid dims {height}x{width} must be positive")));
    }
    Ok(PixelGrid {
        x_coords: Field::from_fn(height, width, |_, j| j as f64),
        y_coords: Field::from_fn(height, width, |i, _| i as f64),
    })
}

/// Binary mask, 1 = pixel participates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::invalid(format!("mask length {} does not match {height}x{width}", bits.len())));
        }
        if bits.iter().any(|b| *b > 1) {
            return Err(Error::invalid("mask values must be 0 or 1"));
        }
        Ok(Self { height, width, bits })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self { height, width, bits: vec![1; height * width] }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, bits: vec![0; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                bits.push(f(i, j) as u8);
            }
        }
        Self { height, width, bits }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn is_set(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.width + j] == 1
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b == 1).count()
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        if self.dims() != other.dims() {
            return Err(Error::invalid("mask dimensions differ"));
        }
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| a & b).collect(),
        })
    }
}

/// `depth = baseline * focal / d`; disparities under [`DISPARITY_EPSILON`]
/// produce invalid pixels.
pub fn disparity_to_depth(d: &DisparityField, rig: &CameraRig) -> Result<DepthMap> {
    rig.check_dims(d.dims(), "disparity field")?;
    let bf = rig.bf();
    let values = d.values().iter().map(|&v| if v < DISPARITY_EPSILON { f64::NAN } else { bf / v }).collect();
    DepthMap::from_values(d.height(), d.width(), values)
}

/// Inverse of [`disparity_to_depth`]. Invalid depth pixels map to zero
/// disparity; the returned mask flags them with 0.
pub fn depth_to_disparity(depth: &DepthMap, rig: &CameraRig) -> Result<(DisparityField, BinaryMask)> {
    rig.check_dims(depth.dims(), "depth map")?;
    let bf = rig.bf();
    let values = depth.values().iter().zip(depth.validity()).map(|(v, ok)| if *ok { bf / v } else { 0.0 }).collect();
    let included = BinaryMask {
        height: depth.height(),
        width: depth.width(),
        bits: depth.validity().iter().map(|ok| *ok as u8).collect(),
    };
    Ok((DisparityField::new(depth.height(), depth.width(), values)?, included))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn meshgrid_small() {
        let g = make_meshgrid(2, 3).unwrap();
        assert_eq!(g.x_coords.values(), &[0.0, 1.0, 2.0, 0.0, 1.0, 2.0]);
        assert_eq!(g.y_coords.values(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);

        let g = make_meshgrid(1, 1).unwrap();
        assert_eq!(g.x_coords.values(), &[0.0]);
        assert_eq!(g.y_coords.values(), &[0.0]);

        let g = make_meshgrid(4, 5).unwrap();
        assert_eq!(g.x_coords.get(2, 3), 3.0);
        assert_eq!(g.y_coords.get(2, 3), 2.0);
        assert_eq!(g, make_meshgrid(4, 5).unwrap());
    }

    #[test]
    fn meshgrid_rejects_empty() {
        assert!(make_meshgrid(0, 3).is_err());
        assert!(make_meshgrid(3, 0).is_err());
    }

    #[test]
    fn depth_from_disparity_examples() {
        let rig = CameraRig::centered(100.0, 4.2, 3, 4).unwrap();
        let d = DisparityField::constant(3, 4, 10.0).unwrap();
        let depth = disparity_to_depth(&d, &rig).unwrap();
        assert!(depth.values().iter().all(|v| (v - 42.0).abs() < 1e-12));

        let unit = CameraRig::new(1.0, 0.0, 0.0, 1.0, 1, 1).unwrap();
        let d = DisparityField::constant(1, 1, 1.0).unwrap();
        assert_eq!(disparity_to_depth(&d, &unit).unwrap().get(0, 0), Some(1.0));

        let d = DisparityField::new(1, 2, vec![0.0, 2.0]).unwrap();
        let rig2 = CameraRig::new(1.0, 0.0, 0.0, 1.0, 1, 2).unwrap();
        let depth = disparity_to_depth(&d, &rig2).unwrap();
        assert_eq!(depth.get(0, 0), None);
        assert_eq!(depth.get(0, 1), Some(0.5));
        assert!(depth.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn disparity_from_depth_examples() {
        let rig = CameraRig::centered(100.0, 4.2, 1, 2).unwrap();
        let depth = DepthMap::from_values(1, 2, vec![42.0, -1.0]).unwrap();
        let (d, included) = depth_to_disparity(&depth, &rig).unwrap();
        assert!((d.get(0, 0) - 10.0).abs() < 1e-12);
        assert_eq!(d.get(0, 1), 0.0);
        assert_eq!(included.bits(), &[1, 0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let rig = CameraRig::centered(100.0, 1.0, 3, 4).unwrap();
        let d = DisparityField::constant(4, 3, 1.0).unwrap();
        assert!(matches!(disparity_to_depth(&d, &rig), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rig_validation() {
        assert!(CameraRig::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraRig::new(1.0, 1.0, 1.0, -1.0, 4, 4).is_err());
        assert!(CameraRig::new(1.0, 4.0, 1.0, 1.0, 4, 4).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(values in prop::collection::vec(1e-3f64..500.0, 12),
                                  focal in 1.0f64..1000.0, baseline in 0.1f64..100.0) {
            let rig = CameraRig::centered(focal, baseline, 3, 4).unwrap();
            let d = DisparityField::new(3, 4, values).unwrap();
            let depth = disparity_to_depth(&d, &rig).unwrap();
            let (back, included) = depth_to_disparity(&depth, &rig).unwrap();
            prop_assert_eq!(included.count(), 12);
            for (a, b) in d.values().iter().zip(back.values()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs());
            }
        }

        #[test]
        fn depth_decreases_with_disparity(a in 1e-3f64..100.0, b in 1e-3f64..100.0) {
            prop_assume!(a != b);
            let rig = CameraRig::centered(50.0, 2.0, 1, 2).unwrap();
            let d = DisparityField::new(1, 2, vec![a, b]).unwrap();
            let depth = disparity_to_depth(&d, &rig).unwrap();
            let (da, db) = (depth.get(0, 0).unwrap(), depth.get(0, 1).unwrap());
            prop_assert_eq!(a > b, da < db);
        }
    }
}
