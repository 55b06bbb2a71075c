//! Image-space loss terms: appearance matching (SSIM + L1), left-right
//! disparity consistency and edge-aware smoothness.
//!
//! Each term returns its value together with the analytic gradient with
//! respect to the disparity fields that drive it. Sums run in a fixed
//! row-major order, so values are bit-stable between runs.

use crate::error::{Error, Result};
use crate::field::{BinaryMask, DisparityField, Field, ImagePlane};
use crate::warp::{LinearTap, View, WarpResult};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    /// Odd box-window side length.
    pub window: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: 3, c1: 0.01 * 0.01, c2: 0.03 * 0.03 }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::invalid(format!("SSIM window {} must be odd and >= 3", self.window)));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::invalid("SSIM constants must be positive"));
        }
        Ok(())
    }
}

/// One loss term's value with its gradients. A gradient the term does not
/// depend on is all zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct TermValueGrad {
    pub value: f64,
    pub grad_dl: Field,
    pub grad_dr: Field,
    /// Set when the term's mask selected no pixel; value and gradients are then zero.
    pub empty_mask: bool,
}

impl TermValueGrad {
    pub fn zero(height: usize, width: usize) -> Self {
        Self {
            value: 0.0,
            grad_dl: Field::zeros(height, width),
            grad_dr: Field::zeros(height, width),
            empty_mask: false,
        }
    }

    pub fn grad(&self, view: View) -> &Field {
        match view {
            View::Left => &self.grad_dl,
            View::Right => &self.grad_dr,
        }
    }

    pub(crate) fn grad_mut(&mut self, view: View) -> &mut Field {
        match view {
            View::Left => &mut self.grad_dl,
            View::Right => &mut self.grad_dr,
        }
    }
}

/// Mirror an index into `[0, n)` without repeating the edge sample.
#[inline]
fn reflect(k: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut k = k.rem_euclid(period);
    if k >= n {
        k = period - k;
    }
    k as usize
}

fn check_same_dims(a: &ImagePlane, b: &ImagePlane) -> Result<()> {
    if a.dims() != b.dims() || a.channels() != b.channels() {
        return Err(Error::invalid(format!(
            "image shapes differ: {:?}x{} vs {:?}x{}",
            a.dims(),
            a.channels(),
            b.dims(),
            b.channels()
        )));
    }
    Ok(())
}

/// SSIM over reflected box windows, averaged across channels.
///
/// When `upstream` is given, also returns `sum_p upstream(p) * dSSIM(p)/db`
/// laid out like the image data of `b`.
fn ssim_impl(a: &ImagePlane, b: &ImagePlane, p: &SsimParams, upstream: Option<&Field>) -> (Field, Option<Vec<f64>>) {
    let (h, w) = a.dims();
    let ch = a.channels();
    let r = (p.window / 2) as isize;
    let wt = 1.0 / (p.window * p.window) as f64;
    let mut map = Field::zeros(h, w);
    let mut grad = upstream.map(|_| vec![0.0; h * w * ch]);
    let mut taps = Vec::with_capacity(p.window * p.window);

    for i in 0..h {
        for j in 0..w {
            taps.clear();
            for di in -r..=r {
                for dj in -r..=r {
                    taps.push((reflect(i as isize + di, h), reflect(j as isize + dj, w)));
                }
            }
            let up = upstream.map_or(0.0, |u| u.get(i, j));
            let mut s_sum = 0.0;
            for c in 0..ch {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for &(ti, tj) in &taps {
                    let (x, y) = (a.get(ti, tj, c), b.get(ti, tj, c));
                    ma += x;
                    mb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
                ma *= wt;
                mb *= wt;
                let var_a = saa * wt - ma * ma;
                let var_b = sbb * wt - mb * mb;
                let cov = sab * wt - ma * mb;
                let num_l = 2.0 * ma * mb + p.c1;
                let num_s = 2.0 * cov + p.c2;
                let den_l = ma * ma + mb * mb + p.c1;
                let den_s = var_a + var_b + p.c2;
                let s = num_l * num_s / (den_l * den_s);
                s_sum += s;

                if let Some(g) = grad.as_mut() {
                    if up != 0.0 {
                        let scale = up / ch as f64;
                        let d_mb =
                            2.0 * ma * num_s / (den_l * den_s) - num_l * num_s * 2.0 * mb / (den_l * den_l * den_s);
                        let d_var_b = -num_l * num_s / (den_l * den_s * den_s);
                        let d_cov = 2.0 * num_l / (den_l * den_s);
                        for &(ti, tj) in &taps {
                            let (x, y) = (a.get(ti, tj, c), b.get(ti, tj, c));
                            let ds = d_mb + d_var_b * 2.0 * (y - mb) + d_cov * (x - ma);
                            g[(ti * w + tj) * ch + c] += scale * wt * ds;
                        }
                    }
                }
            }
            map.values_mut()[i * w + j] = s_sum / ch as f64;
        }
    }
    (map, grad)
}

/// Per-pixel structural similarity of `a` and `b`, averaged over channels.
pub fn ssim_map(a: &ImagePlane, b: &ImagePlane, p: &SsimParams) -> Result<Field> {
    check_same_dims(a, b)?;
    p.validate()?;
    Ok(ssim_impl(a, b, p, None).0)
}

/// Masked mean of `gamma/2 (1 - SSIM) + (1 - gamma) |I - I*|` between an
/// image and its reconstruction from the other view. The gradient lands on
/// the disparity that drove the warp.
pub fn appearance_loss(
    original: &ImagePlane,
    warp: &WarpResult,
    mask: &BinaryMask,
    gamma: f64,
    p: &SsimParams,
) -> Result<TermValueGrad> {
    let recon = &warp.reconstructed;
    check_same_dims(original, recon)?;
    p.validate()?;
    if mask.dims() != original.dims() {
        return Err(Error::invalid("mask and image dimensions differ"));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma {gamma} outside [0, 1]")));
    }
    let (h, w) = original.dims();
    let ch = original.channels();
    let mut out = TermValueGrad::zero(h, w);
    let n = mask.count();
    if n == 0 {
        out.empty_mask = true;
        return Ok(out);
    }
    let inv_n = 1.0 / n as f64;

    // Masked-out reconstruction pixels are replaced by the original so they
    // cannot disturb the SSIM windows of masked-in neighbours.
    let composite =
        ImagePlane::from_fn(
            h,
            w,
            ch,
            |i, j, c| {
                if mask.is_set(i, j) {
                    recon.get(i, j, c)
                } else {
                    original.get(i, j, c)
                }
            },
        )?;
    let upstream = Field::from_fn(h, w, |i, j| if mask.is_set(i, j) { -0.5 * gamma * inv_n } else { 0.0 });
    let (ssim, grad_ssim) = ssim_impl(original, &composite, p, Some(&upstream));
    let mut grad_recon = grad_ssim.expect("upstream supplied");

    let l1_scale = (1.0 - gamma) * inv_n / ch as f64;
    let mut total = 0.0;
    for i in 0..h {
        for j in 0..w {
            if !mask.is_set(i, j) {
                continue;
            }
            let mut l1 = 0.0;
            for c in 0..ch {
                let diff = recon.get(i, j, c) - original.get(i, j, c);
                l1 += diff.abs();
                grad_recon[(i * w + j) * ch + c] += l1_scale * sign(diff);
            }
            total += 0.5 * gamma * (1.0 - ssim.get(i, j)) + (1.0 - gamma) * l1 / ch as f64;
        }
    }
    out.value = total * inv_n;

    let grad_d = out.grad_mut(warp.view);
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            if !mask.is_set(i, j) {
                continue;
            }
            let mut g = 0.0;
            for c in 0..ch {
                g += grad_recon[k * ch + c] * warp.jacobian[k * ch + c];
            }
            grad_d.values_mut()[k] = g;
        }
    }
    Ok(out)
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Both directions of the left-right disparity consistency check.
#[derive(Clone, Debug, PartialEq)]
pub struct LrConsistency {
    pub left: TermValueGrad,
    pub right: TermValueGrad,
}

/// Masked mean of `|d_view(x) - d_other(x ± d_view(x))|`, with the opposite
/// field sampled linearly.
pub fn lr_consistency_term(
    view: View,
    d_view: &DisparityField,
    d_other: &DisparityField,
    mask: &BinaryMask,
) -> Result<TermValueGrad> {
    if d_view.dims() != d_other.dims() || mask.dims() != d_view.dims() {
        return Err(Error::invalid("disparity and mask dimensions differ"));
    }
    let (h, w) = d_view.dims();
    let mut out = TermValueGrad::zero(h, w);
    let n = mask.count();
    if n == 0 {
        out.empty_mask = true;
        return Ok(out);
    }
    let inv_n = 1.0 / n as f64;
    let sign_x = view.shift_sign();
    let mut total = 0.0;
    let mut g_self = Field::zeros(h, w);
    let mut g_other = Field::zeros(h, w);
    for i in 0..h {
        let row = d_other.row(i);
        for j in 0..w {
            if !mask.is_set(i, j) {
                continue;
            }
            let dv = d_view.get(i, j);
            let tap = LinearTap::new(view.sample_coord(j, dv), w);
            let (lo, hi) = (row[tap.lo], row[tap.hi]);
            let residual = dv - tap.value(lo, hi);
            total += residual.abs();
            let s = sign(residual) * inv_n;
            g_self.add_at(i, j, s * (1.0 - sign_x * tap.slope(lo, hi)));
            g_other.add_at(i, tap.lo, -s * (1.0 - tap.t));
            if tap.hi != tap.lo {
                g_other.add_at(i, tap.hi, -s * tap.t);
            }
        }
    }
    out.value = total * inv_n;
    *out.grad_mut(view) = g_self;
    *out.grad_mut(view.other()) = g_other;
    Ok(out)
}

pub fn lr_consistency_loss(
    dl: &DisparityField,
    dr: &DisparityField,
    mask_l: &BinaryMask,
    mask_r: &BinaryMask,
) -> Result<LrConsistency> {
    Ok(LrConsistency {
        left: lr_consistency_term(View::Left, dl, dr, mask_l)?,
        right: lr_consistency_term(View::Right, dr, dl, mask_r)?,
    })
}

/// Edge-aware smoothness of `d`, the disparity of `view`, guided by that
/// view's image. Horizontal and vertical forward differences are averaged
/// separately over the pixels where they exist, then added.
pub fn smoothness_loss(d: &DisparityField, img: &ImagePlane, view: View) -> Result<TermValueGrad> {
    if d.dims() != img.dims() {
        return Err(Error::invalid("disparity and image dimensions differ"));
    }
    let (h, w) = d.dims();
    let ch = img.channels() as f64;
    let mut out = TermValueGrad::zero(h, w);
    let mut grad = Field::zeros(h, w);
    let edge_weight = |i0: usize, j0: usize, i1: usize, j1: usize| {
        let mut g = 0.0;
        for c in 0..img.channels() {
            g += (img.get(i1, j1, c) - img.get(i0, j0, c)).abs();
        }
        (-g / ch).exp()
    };

    let mut value = 0.0;
    if w > 1 {
        let inv = 1.0 / (h * (w - 1)) as f64;
        let mut sum = 0.0;
        for i in 0..h {
            for j in 0..w - 1 {
                let diff = d.get(i, j + 1) - d.get(i, j);
                let wgt = edge_weight(i, j, i, j + 1);
                sum += diff.abs() * wgt;
                let g = sign(diff) * wgt * inv;
                grad.add_at(i, j + 1, g);
                grad.add_at(i, j, -g);
            }
        }
        value += sum * inv;
    }
    if h > 1 {
        let inv = 1.0 / ((h - 1) * w) as f64;
        let mut sum = 0.0;
        for i in 0..h - 1 {
            for j in 0..w {
                let diff = d.get(i + 1, j) - d.get(i, j);
                let wgt = edge_weight(i, j, i + 1, j);
                sum += diff.abs() * wgt;
                let g = sign(diff) * wgt * inv;
                grad.add_at(i + 1, j, g);
                grad.add_at(i, j, -g);
            }
        }
        value += sum * inv;
    }
    out.value = value;
    *out.grad_mut(view) = grad;
    Ok(out)
}
