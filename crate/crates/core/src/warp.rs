//! Disparity-driven horizontal resampling and blind masking.

use crate::error::{Error, Result};
use crate::field::{BinaryMask, DisparityField, ImagePlane};

/// Which view of the rectified pair a field belongs to.
///
/// For warping, the view is the one being *reconstructed*: `Left` builds the
/// left image by sampling the right image at `x - d`, `Right` builds the
/// right image by sampling the left image at `x + d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum View {
    Left,
    Right,
}

impl View {
    /// Sign of the horizontal shift applied to the column index.
    #[inline]
    pub fn shift_sign(self) -> f64 {
        match self {
            View::Left => -1.0,
            View::Right => 1.0,
        }
    }

    pub fn other(self) -> View {
        match self {
            View::Left => View::Right,
            View::Right => View::Left,
        }
    }

    #[inline]
    pub fn sample_coord(self, j: usize, d: f64) -> f64 {
        j as f64 + self.shift_sign() * d
    }
}

/// Linear interpolation taps for one horizontal sample position.
///
/// Inside `[0, width-1]` the left tap is `floor(x)` except at the last
/// column, where the pair `(width-2, width-1)` is used with `t = 1`. An
/// integer position therefore differentiates with the right-hand slope
/// everywhere but the last column. Outside the range the position is
/// clamped and the slope is zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct LinearTap {
    pub lo: usize,
    pub hi: usize,
    pub t: f64,
    pub in_bounds: bool,
}

impl LinearTap {
    #[inline]
    pub fn new(x: f64, width: usize) -> Self {
        let last = (width - 1) as f64;
        let in_bounds = x >= 0.0 && x <= last;
        if width == 1 {
            return Self { lo: 0, hi: 0, t: 0.0, in_bounds };
        }
        let xc = if in_bounds {
            x
        } else if x > last {
            last
        } else {
            0.0
        };
        let lo = (xc.floor() as usize).min(width - 2);
        Self { lo, hi: lo + 1, t: xc - lo as f64, in_bounds }
    }

    #[inline]
    pub fn value(&self, lo: f64, hi: f64) -> f64 {
        (1.0 - self.t) * lo + self.t * hi
    }

    /// d(value)/dx; zero when the sample was clamped.
    #[inline]
    pub fn slope(&self, lo: f64, hi: f64) -> f64 {
        if self.in_bounds && self.lo != self.hi {
            hi - lo
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug)]
pub struct WarpResult {
    pub reconstructed: ImagePlane,
    pub in_bounds: BinaryMask,
    /// d(reconstructed)/d(disparity) per pixel and channel, same layout as
    /// the image data. Zero wherever `in_bounds` is 0.
    pub jacobian: Vec<f64>,
    pub view: View,
}

impl WarpResult {
    #[inline]
    pub fn jacobian_at(&self, i: usize, j: usize, c: usize) -> f64 {
        let ch = self.reconstructed.channels();
        self.jacobian[(i * self.reconstructed.width() + j) * ch + c]
    }
}

/// Reconstructs `view` by linearly resampling `source` (the opposite image)
/// along each row at `x ∓ d(x)`.
pub fn warp_horizontal(source: &ImagePlane, d: &DisparityField, view: View) -> Result<WarpResult> {
    if source.dims() != d.dims() {
        return Err(Error::invalid(format!(
            "source {:?} and disparity {:?} dimensions differ",
            source.dims(),
            d.dims()
        )));
    }
    let (h, w) = d.dims();
    let ch = source.channels();
    let sign = view.shift_sign();
    let mut data = Vec::with_capacity(h * w * ch);
    let mut jacobian = Vec::with_capacity(h * w * ch);
    let mut bits = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let tap = LinearTap::new(view.sample_coord(j, d.get(i, j)), w);
            bits.push(tap.in_bounds as u8);
            for c in 0..ch {
                let (lo, hi) = (source.get(i, tap.lo, c), source.get(i, tap.hi, c));
                data.push(tap.value(lo, hi));
                jacobian.push(sign * tap.slope(lo, hi));
            }
        }
    }
    Ok(WarpResult {
        reconstructed: ImagePlane::new(h, w, ch, data)?,
        in_bounds: BinaryMask::new(h, w, bits)?,
        jacobian,
        view,
    })
}

/// Marks pixels whose stereo correspondent lies inside the other image:
/// `j - d` for the left view, `j + d` for the right view, tested against
/// `[0, width - 1]`.
pub fn blind_mask(d: &DisparityField, view: View) -> BinaryMask {
    let last = (d.width() - 1) as f64;
    BinaryMask::from_fn(d.height(), d.width(), |i, j| {
        let x = view.sample_coord(j, d.get(i, j));
        (0.0..=last).contains(&x)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, ch: usize, rng: &mut ChaCha8Rng) -> ImagePlane {
        ImagePlane::from_fn(h, w, ch, |_, _, _| rng.gen::<f64>()).unwrap()
    }

    #[test]
    fn zero_disparity_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(5, 7, 3, &mut rng);
        let d = DisparityField::constant(5, 7, 0.0).unwrap();
        for view in [View::Left, View::Right] {
            let r = warp_horizontal(&img, &d, view).unwrap();
            assert_eq!(r.reconstructed, img);
            assert_eq!(r.in_bounds.count(), 35);
            for i in 0..5 {
                for j in 0..7 {
                    for c in 0..3 {
                        // Forward difference, backward at the last column.
                        let grad = if j + 1 < 7 {
                            img.get(i, j + 1, c) - img.get(i, j, c)
                        } else {
                            img.get(i, j, c) - img.get(i, j - 1, c)
                        };
                        assert_eq!(r.jacobian_at(i, j, c), view.shift_sign() * grad);
                    }
                }
            }
        }
    }

    #[test]
    fn ramp_shift_by_one() {
        let w = 10;
        let img = ImagePlane::from_fn(2, w, 1, |_, j, _| j as f64 / w as f64).unwrap();
        let d = DisparityField::constant(2, w, 1.0).unwrap();
        let r = warp_horizontal(&img, &d, View::Left).unwrap();
        for j in 1..w {
            assert!((r.reconstructed.get(0, j, 0) - (j as f64 - 1.0) / w as f64).abs() < 1e-15);
        }
        assert!(!r.in_bounds.is_set(0, 0));
        assert_eq!(r.reconstructed.get(0, 0, 0), img.get(0, 0, 0));
        assert_eq!(r.jacobian_at(0, 0, 0), 0.0);
    }

    #[test]
    fn past_the_border_clamps_and_unmasks() {
        let img = ImagePlane::from_fn(1, 6, 1, |_, j, _| 0.1 * j as f64).unwrap();
        let d = DisparityField::constant(1, 6, 2.5).unwrap();
        let r = warp_horizontal(&img, &d, View::Right).unwrap();
        for j in 0..6 {
            let inside = j as f64 + 2.5 <= 5.0;
            assert_eq!(r.in_bounds.is_set(0, j), inside);
            if !inside {
                assert_eq!(r.reconstructed.get(0, j, 0), img.get(0, 5, 0));
                assert_eq!(r.jacobian_at(0, j, 0), 0.0);
            }
        }
    }

    #[test]
    fn mismatched_dims_rejected() {
        let img = ImagePlane::from_fn(2, 3, 1, |_, _, _| 0.5).unwrap();
        let d = DisparityField::constant(3, 2, 0.0).unwrap();
        assert!(matches!(warp_horizontal(&img, &d, View::Left), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (h, w) = (6, 9);
        let img = random_image(h, w, 3, &mut rng);
        let d = DisparityField::from_fn(h, w, |_, _| rng.gen_range(0.0..4.0)).unwrap();
        let step = 1e-6;
        for view in [View::Left, View::Right] {
            let r = warp_horizontal(&img, &d, view).unwrap();
            for i in 0..h {
                for j in 0..w {
                    let x = view.sample_coord(j, d.get(i, j));
                    let last = (w - 1) as f64;
                    if (x - x.round()).abs() < 1e-3 || x < 1e-3 || x > last - 1e-3 {
                        continue;
                    }
                    let plus = warp_horizontal(&img, &d.with_value(i, j, d.get(i, j) + step).unwrap(), view).unwrap();
                    let minus = warp_horizontal(&img, &d.with_value(i, j, d.get(i, j) - step).unwrap(), view).unwrap();
                    for c in 0..3 {
                        let fd = (plus.reconstructed.get(i, j, c) - minus.reconstructed.get(i, j, c)) / (2.0 * step);
                        let an = r.jacobian_at(i, j, c);
                        assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "{fd} vs {an}");
                    }
                }
            }
        }
    }

    #[test]
    fn blind_mask_examples() {
        let d = DisparityField::constant(3, 8, 0.0).unwrap();
        assert_eq!(blind_mask(&d, View::Left).count(), 24);
        assert_eq!(blind_mask(&d, View::Right).count(), 24);

        let d = DisparityField::constant(2, 8, 3.0).unwrap();
        let m = blind_mask(&d, View::Left);
        for j in 0..8 {
            assert_eq!(m.is_set(1, j), j >= 3);
        }
        let m = blind_mask(&d, View::Right);
        for j in 0..8 {
            assert_eq!(m.is_set(0, j), j <= 4);
        }
    }

    #[test]
    fn warp_mask_equals_blind_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let img = random_image(4, 11, 1, &mut rng);
            let d = DisparityField::from_fn(4, 11, |_, _| rng.gen_range(0.0..8.0)).unwrap();
            for view in [View::Left, View::Right] {
                assert_eq!(warp_horizontal(&img, &d, view).unwrap().in_bounds, blind_mask(&d, view));
            }
        }
    }

    #[test]
    fn masked_area_grows_with_disparity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let d = DisparityField::from_fn(3, 12, |_, _| rng.gen_range(0.0..6.0)).unwrap();
            let bumped = DisparityField::from_fn(3, 12, |i, j| d.get(i, j) + rng.gen_range(0.0..2.0)).unwrap();
            for view in [View::Left, View::Right] {
                assert!(blind_mask(&bumped, view).count() <= blind_mask(&d, view).count());
            }
        }
    }

    #[test]
    fn tap_at_last_column_uses_left_pair() {
        let tap = LinearTap::new(4.0, 5);
        assert_eq!((tap.lo, tap.hi, tap.t, tap.in_bounds), (3, 4, 1.0, true));
        let tap = LinearTap::new(2.0, 5);
        assert_eq!((tap.lo, tap.hi, tap.t), (2, 3, 0.0));
        let tap = LinearTap::new(0.0, 1);
        assert!(tap.in_bounds);
        assert_eq!(tap.slope(0.3, 0.3), 0.0);
    }
}
