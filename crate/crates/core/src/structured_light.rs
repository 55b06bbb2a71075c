//! Structured-light ground truth: reflected Gray-code stripes with inverse
//! patterns, three-step phase shifting with a modulation-depth certainty
//! test, and triangulation against a rectified projector.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::field::{disparity_to_depth, BinaryMask, CameraRig, DepthMap, DisparityField, Field, ImagePlane};

pub const DEFAULT_CONTRAST_EPSILON: f64 = 0.02;
pub const DEFAULT_MODULATION_THRESHOLD: f64 = 0.05;
/// Phase-invariant three-step shifts.
pub const DEFAULT_PHASE_SHIFTS: [f64; 3] = [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0];

#[inline]
pub fn binary_to_gray(v: u32) -> u32 {
    v ^ (v >> 1)
}

#[inline]
pub fn gray_to_binary(mut g: u32) -> u32 {
    let mut shift = 1;
    while shift < 32 {
        g ^= g >> shift;
        shift <<= 1;
    }
    g
}

/// Stripe patterns for a projector `projector_width` columns wide.
/// Pattern `k` carries bit `bit_count - 1 - k` of each column's Gray
/// codeword, so pattern 0 is the coarsest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayCodeSet {
    pub bit_count: usize,
    pub projector_width: usize,
}

impl GrayCodeSet {
    pub fn codeword(&self, column: usize) -> u32 {
        binary_to_gray(column as u32)
    }

    /// Whether `column` is lit in pattern `k` (its inverse is the complement).
    pub fn is_bright(&self, k: usize, column: usize) -> bool {
        let bit = self.bit_count - 1 - k;
        (self.codeword(column) >> bit) & 1 == 1
    }

    pub fn pattern(&self, k: usize) -> Vec<bool> {
        (0..self.projector_width).map(|c| self.is_bright(k, c)).collect()
    }

    /// Projector image for pattern `k`, `height` rows tall.
    pub fn render(&self, k: usize, inverse: bool, height: usize) -> Result<ImagePlane> {
        ImagePlane::from_fn(
            height,
            self.projector_width,
            1,
            |_, c, _| {
                if self.is_bright(k, c) != inverse {
                    1.0
                } else {
                    0.0
                }
            },
        )
    }
}

pub fn generate_gray_patterns(projector_width: usize) -> Result<GrayCodeSet> {
    if projector_width < 2 {
        return Err(Error::invalid(format!("projector width {projector_width} must be >= 2")));
    }
    if projector_width > 1 << 30 {
        return Err(Error::invalid("projector width too large"));
    }
    let bit_count = (usize::BITS - (projector_width - 1).leading_zeros()) as usize;
    Ok(GrayCodeSet { bit_count, projector_width })
}

/// Decoded projector column per camera pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceMap {
    /// Projector column (possibly fractional after phase refinement); NaN
    /// where `certain` is 0.
    pub columns: Field,
    pub certain: BinaryMask,
    pub projector_width: usize,
}

impl CorrespondenceMap {
    pub fn column(&self, i: usize, j: usize) -> Option<f64> {
        self.certain.is_set(i, j).then(|| self.columns.get(i, j))
    }
}

fn pixel_mean(img: &ImagePlane, i: usize, j: usize) -> f64 {
    (0..img.channels()).map(|c| img.get(i, j, c)).sum::<f64>() / img.channels() as f64
}

/// Decodes camera captures of every pattern (`captures[k]`) and its inverse
/// (`inverses[k]`). Bit `k` is set where the direct capture is brighter;
/// a pixel whose difference falls under `contrast_epsilon` for any bit, or
/// whose code lands outside the projector, is uncertain.
pub fn decode_gray(
    set: &GrayCodeSet,
    captures: &[ImagePlane],
    inverses: &[ImagePlane],
    contrast_epsilon: f64,
) -> Result<CorrespondenceMap> {
    if captures.len() != set.bit_count || inverses.len() != set.bit_count {
        return Err(Error::invalid(format!(
            "expected {} captures and inverses, got {} and {}",
            set.bit_count,
            captures.len(),
            inverses.len()
        )));
    }
    let dims = captures[0].dims();
    if captures.iter().chain(inverses).any(|c| c.dims() != dims) {
        return Err(Error::invalid("capture dimensions differ"));
    }
    let (h, w) = dims;
    let mut columns = Field::zeros(h, w);
    let mut bits = vec![0u8; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut code = 0u32;
            let mut certain = true;
            for (cap, inv) in captures.iter().zip(inverses) {
                let diff = pixel_mean(cap, i, j) - pixel_mean(inv, i, j);
                if diff.abs() < contrast_epsilon {
                    certain = false;
                }
                code = (code << 1) | (diff > 0.0) as u32;
            }
            let column = gray_to_binary(code) as usize;
            let k = i * w + j;
            if certain && column < set.projector_width {
                columns.values_mut()[k] = column as f64;
                bits[k] = 1;
            } else {
                columns.values_mut()[k] = f64::NAN;
            }
        }
    }
    Ok(CorrespondenceMap { columns, certain: BinaryMask::new(h, w, bits)?, projector_width: set.projector_width })
}

/// Three captures of a sinusoid shifted by `phase_shifts`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePatternSet {
    pub captures: [ImagePlane; 3],
    pub phase_shifts: [f64; 3],
    pub threshold: f64,
}

impl PhasePatternSet {
    pub fn new(captures: [ImagePlane; 3], phase_shifts: [f64; 3], threshold: f64) -> Result<Self> {
        let dims = captures[0].dims();
        if captures.iter().any(|c| c.dims() != dims) {
            return Err(Error::invalid("phase captures differ in size"));
        }
        Ok(Self { captures, phase_shifts, threshold })
    }
}

/// `T = (2 sqrt 2 / 3) * sqrt((I1-I2)^2 + (I2-I3)^2 + (I1-I3)^2)` per pixel;
/// pixels with `T` under the threshold are uncertain.
pub fn modulation_depth(p: &PhasePatternSet) -> (Field, BinaryMask) {
    let [a, b, c] = &p.captures;
    let (h, w) = a.dims();
    let scale = 2.0 * 2f64.sqrt() / 3.0;
    let t = Field::from_fn(h, w, |i, j| {
        let (i1, i2, i3) = (pixel_mean(a, i, j), pixel_mean(b, i, j), pixel_mean(c, i, j));
        scale * ((i1 - i2).powi(2) + (i2 - i3).powi(2) + (i1 - i3).powi(2)).sqrt()
    });
    let certain = BinaryMask::from_fn(h, w, |i, j| t.get(i, j) >= p.threshold);
    (t, certain)
}

/// Wrapped phase `phi` in `[0, 2 pi)` of `I_k = A + B cos(phi + shift_k)`,
/// solved exactly from the three captures.
pub fn wrapped_phase(p: &PhasePatternSet) -> Result<Field> {
    let rows: Vec<[f64; 3]> = p.phase_shifts.iter().map(|s| [1.0, s.cos(), -s.sin()]).collect();
    let m = Matrix3::from_fn(|r, c| rows[r][c]);
    let inv = m.try_inverse().ok_or_else(|| Error::invalid("phase shifts must be distinct modulo 2 pi"))?;
    let [a, b, c] = &p.captures;
    let (h, w) = a.dims();
    Ok(Field::from_fn(h, w, |i, j| {
        let x = inv * Vector3::new(pixel_mean(a, i, j), pixel_mean(b, i, j), pixel_mean(c, i, j));
        x[2].atan2(x[1]).rem_euclid(2.0 * PI)
    }))
}

/// Replaces integer Gray columns with sub-pixel ones using the wrapped phase
/// of a sinusoid with `period` projector columns (phase 0 at column 0).
/// Pixels that fail the modulation test become uncertain.
pub fn refine_with_phase(
    coarse: &CorrespondenceMap,
    phase: &PhasePatternSet,
    period: f64,
) -> Result<CorrespondenceMap> {
    if !(period >= 2.0) {
        return Err(Error::invalid(format!("phase period {period} must be >= 2 columns")));
    }
    if phase.captures[0].dims() != coarse.columns.dims() {
        return Err(Error::invalid("phase captures and correspondence map differ in size"));
    }
    let phi = wrapped_phase(phase)?;
    let (_, modulated) = modulation_depth(phase);
    let certain = coarse.certain.and(&modulated)?;
    let (h, w) = coarse.columns.dims();
    let columns = Field::from_fn(h, w, |i, j| {
        if !certain.is_set(i, j) {
            return f64::NAN;
        }
        let frac = phi.get(i, j) * period / (2.0 * PI);
        let k = ((coarse.columns.get(i, j) - frac) / period).round();
        k * period + frac
    });
    Ok(CorrespondenceMap { columns, certain, projector_width: coarse.projector_width })
}

/// Projector treated as a rectified pinhole on the camera's rows, offset by
/// `baseline` along +X.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectorModel {
    pub focal: f64,
    pub cx: f64,
    pub baseline: f64,
    pub width: usize,
}

impl ProjectorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0 && self.baseline > 0.0 && self.width >= 2) {
            return Err(Error::invalid("projector focal, baseline must be positive and width >= 2"));
        }
        Ok(())
    }
}

/// Depth from camera column vs. decoded projector column. The projector
/// column is first expressed in camera pixels so the ordinary
/// `baseline * focal / disparity` relation applies.
pub fn triangulate(c: &CorrespondenceMap, camera: &CameraRig, projector: &ProjectorModel) -> Result<DepthMap> {
    projector.validate()?;
    camera.check_dims(c.columns.dims(), "correspondence map")?;
    let (h, w) = c.columns.dims();
    let rig = CameraRig { baseline: projector.baseline, ..*camera };
    let ratio = camera.focal / projector.focal;
    let disparity = DisparityField::from_fn(h, w, |i, j| match c.column(i, j) {
        Some(u) => ((j as f64 - camera.cx) - (u - projector.cx) * ratio).max(0.0),
        None => 0.0,
    })?;
    disparity_to_depth(&disparity, &rig)
}

/// Continuous projector column hit by each camera pixel's ray, given the
/// scene depth seen by the camera. NaN where the depth is invalid.
pub fn projector_coordinates(depth: &DepthMap, camera: &CameraRig, projector: &ProjectorModel) -> Result<Field> {
    camera.check_dims(depth.dims(), "depth map")?;
    let (h, w) = depth.dims();
    Ok(Field::from_fn(h, w, |i, j| match depth.get(i, j) {
        Some(z) => projector.cx + projector.focal * ((j as f64 - camera.cx) / camera.focal - projector.baseline / z),
        None => f64::NAN,
    }))
}

/// Noiseless camera captures of every Gray pattern and inverse. Projector
/// column `c` covers `[c - 0.5, c + 0.5)`; rays that miss the projector see
/// `dark` in both captures.
pub fn render_gray_captures(
    set: &GrayCodeSet,
    coords: &Field,
    dark: f64,
    bright: f64,
) -> Result<(Vec<ImagePlane>, Vec<ImagePlane>)> {
    let (h, w) = coords.dims();
    let column = |i: usize, j: usize| {
        let u = (coords.get(i, j) + 0.5).floor();
        (u.is_finite() && u >= 0.0 && u < set.projector_width as f64).then_some(u as usize)
    };
    let mut caps = Vec::with_capacity(set.bit_count);
    let mut invs = Vec::with_capacity(set.bit_count);
    for k in 0..set.bit_count {
        for (inverse, out) in [(false, &mut caps), (true, &mut invs)] {
            out.push(ImagePlane::from_fn(h, w, 1, |i, j, _| match column(i, j) {
                Some(c) if set.is_bright(k, c) != inverse => bright,
                _ => dark,
            })?);
        }
    }
    Ok((caps, invs))
}

/// Noiseless captures of `offset + amplitude * cos(2 pi u / period + shift)`.
pub fn render_phase_captures(
    coords: &Field,
    period: f64,
    offset: f64,
    amplitude: f64,
    shifts: [f64; 3],
    threshold: f64,
) -> Result<PhasePatternSet> {
    let (h, w) = coords.dims();
    let render = |shift: f64| {
        ImagePlane::from_fn(h, w, 1, |i, j, _| {
            let u = coords.get(i, j);
            if u.is_finite() {
                offset + amplitude * (2.0 * PI * u / period + shift).cos()
            } else {
                offset
            }
        })
    };
    PhasePatternSet::new([render(shifts[0])?, render(shifts[1])?, render(shifts[2])?], shifts, threshold)
}
