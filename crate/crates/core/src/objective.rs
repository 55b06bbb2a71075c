//! The weighted training objective over a stereo pair and direct
//! optimization of the two disparity fields through a sigmoid ceiling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::field::{BinaryMask, CameraRig, DisparityField, Field, ImagePlane};
use crate::geometry::{evaluate_frozen, freeze_geometry, FrozenGeometry, GeometryConfig};
use crate::losses::{appearance_loss, lr_consistency_loss, smoothness_loss, SsimParams, TermValueGrad};
use crate::warp::{blind_mask, warp_horizontal, View};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha_ap: f64,
    pub alpha_ds: f64,
    pub alpha_lr2d: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha_ap: 1.0, alpha_ds: 0.5, alpha_lr2d: 1.0, beta: 0.001 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha_ap", self.alpha_ap),
            ("alpha_ds", self.alpha_ds),
            ("alpha_lr2d", self.alpha_lr2d),
            ("beta", self.beta),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("loss weight {name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig {
    /// SSIM share of the appearance term.
    pub gamma: f64,
    pub ssim: SsimParams,
    pub geometry: GeometryConfig,
    /// When false every pixel participates in every term.
    pub blind_mask: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { gamma: 0.85, ssim: SsimParams::default(), geometry: GeometryConfig::default(), blind_mask: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StereoPair {
    pub left: ImagePlane,
    pub right: ImagePlane,
}

impl StereoPair {
    pub fn new(left: ImagePlane, right: ImagePlane) -> Result<Self> {
        if left.dims() != right.dims() || left.channels() != right.channels() {
            return Err(Error::invalid("left and right images differ in shape"));
        }
        Ok(Self { left, right })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.left.dims()
    }

    pub fn image(&self, view: View) -> &ImagePlane {
        match view {
            View::Left => &self.left,
            View::Right => &self.right,
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Unconstrained parameters; disparity is `d_max * sigmoid(raw)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityParams {
    pub raw_l: Field,
    pub raw_r: Field,
    pub d_max: f64,
}

impl DisparityParams {
    pub fn new(raw_l: Field, raw_r: Field, d_max: f64) -> Result<Self> {
        if raw_l.dims() != raw_r.dims() {
            return Err(Error::invalid("raw parameter fields differ in shape"));
        }
        if !(d_max.is_finite() && d_max > 0.0) {
            return Err(Error::invalid(format!("d_max {d_max} must be positive")));
        }
        Ok(Self { raw_l, raw_r, d_max })
    }

    /// `raw = logit(fraction) + N(0, noise)` per pixel, both views drawn from one seeded stream.
    pub fn initial(height: usize, width: usize, d_max: f64, fraction: f64, noise: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::invalid(format!("initial fraction {fraction} must lie in (0, 1)")));
        }
        let base = logit(fraction);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
        let raw_l = Field::from_fn(height, width, |_, _| base + normal.sample(&mut rng));
        let raw_r = Field::from_fn(height, width, |_, _| base + normal.sample(&mut rng));
        Self::new(raw_l, raw_r, d_max)
    }

    /// Parameters reproducing the given disparities (each strictly inside `(0, d_max)`).
    pub fn from_disparities(dl: &DisparityField, dr: &DisparityField, d_max: f64) -> Result<Self> {
        let to_raw = |d: &DisparityField| -> Result<Field> {
            let vals = d
                .values()
                .iter()
                .map(|&v| {
                    if v > 0.0 && v < d_max {
                        Ok(logit(v / d_max))
                    } else {
                        Err(Error::invalid(format!("disparity {v} outside (0, {d_max})")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Field::new(d.height(), d.width(), vals)
        };
        Self::new(to_raw(dl)?, to_raw(dr)?, d_max)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.raw_l.dims()
    }

    fn disparity(&self, raw: &Field) -> Result<DisparityField> {
        let vals = raw.values().iter().map(|&r| self.d_max * sigmoid(r)).collect();
        DisparityField::new(raw.height(), raw.width(), vals)
    }

    pub fn disparities(&self) -> Result<(DisparityField, DisparityField)> {
        Ok((self.disparity(&self.raw_l)?, self.disparity(&self.raw_r)?))
    }

    /// Adds `t * direction` to both raw fields.
    pub fn stepped(&self, dir_l: &Field, dir_r: &Field, t: f64) -> Result<Self> {
        if dir_l.dims() != self.dims() || dir_r.dims() != self.dims() {
            return Err(Error::invalid("direction dimensions differ from parameters"));
        }
        let add = |a: &Field, b: &Field| Field::from_fn(a.height(), a.width(), |i, j| a.get(i, j) + t * b.get(i, j));
        Self::new(add(&self.raw_l, dir_l), add(&self.raw_r, dir_r), self.d_max)
    }

    /// `d(disparity)/d(raw) = d_max * s * (1 - s)`.
    fn chain(&self, raw: &Field, grad_d: &Field) -> Field {
        Field::from_fn(raw.height(), raw.width(), |i, j| {
            let s = sigmoid(raw.get(i, j));
            grad_d.get(i, j) * self.d_max * s * (1.0 - s)
        })
    }
}

/// Scalar values of every term.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub ap_l: f64,
    pub ap_r: f64,
    pub ds_l: f64,
    pub ds_r: f64,
    pub lr2d_l: f64,
    pub lr2d_r: f64,
    pub gc3d: f64,
}

impl LossTerms {
    pub fn compose(&self, w: &LossWeights) -> f64 {
        w.alpha_ap * (self.ap_l + self.ap_r)
            + w.alpha_ds * (self.ds_l + self.ds_r)
            + w.alpha_lr2d * (self.lr2d_l + self.lr2d_r)
            + w.beta * self.gc3d
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub terms: LossTerms,
    pub weights: LossWeights,
    pub grad_raw_l: Field,
    pub grad_raw_r: Field,
    /// Registration used for the 3D term; `None` when the term was skipped
    /// (`beta = 0`) or a cloud was empty.
    pub frozen: Option<FrozenGeometry>,
    /// Names of terms whose mask selected no pixel.
    pub empty_terms: Vec<&'static str>,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.terms.total
    }

    pub fn grad_norm(&self) -> f64 {
        (self.grad_raw_l.norm().powi(2) + self.grad_raw_r.norm().powi(2)).sqrt()
    }
}

fn view_masks(dl: &DisparityField, dr: &DisparityField, cfg: &ObjectiveConfig) -> (BinaryMask, BinaryMask) {
    let (h, w) = dl.dims();
    if cfg.blind_mask {
        (blind_mask(dl, View::Left), blind_mask(dr, View::Right))
    } else {
        (BinaryMask::ones(h, w), BinaryMask::ones(h, w))
    }
}

/// Total objective with a fresh ICP registration for the 3D term.
pub fn total_loss(
    images: &StereoPair,
    params: &DisparityParams,
    rig: &CameraRig,
    weights: &LossWeights,
    cfg: &ObjectiveConfig,
) -> Result<LossBreakdown> {
    evaluate(images, params, rig, weights, cfg, None)
}

/// Total objective with the 3D term evaluated under a given frozen
/// registration instead of a fresh one.
pub fn total_loss_frozen(
    images: &StereoPair,
    params: &DisparityParams,
    rig: &CameraRig,
    weights: &LossWeights,
    cfg: &ObjectiveConfig,
    frozen: &FrozenGeometry,
) -> Result<LossBreakdown> {
    evaluate(images, params, rig, weights, cfg, Some(frozen))
}

fn evaluate(
    images: &StereoPair,
    params: &DisparityParams,
    rig: &CameraRig,
    weights: &LossWeights,
    cfg: &ObjectiveConfig,
    frozen: Option<&FrozenGeometry>,
) -> Result<LossBreakdown> {
    weights.validate()?;
    if images.dims() != params.dims() {
        return Err(Error::invalid("image and parameter dimensions differ"));
    }
    rig.check_dims(images.dims(), "stereo pair")?;
    let (h, w) = images.dims();
    let (dl, dr) = params.disparities()?;
    let (ml, mr) = view_masks(&dl, &dr, cfg);

    let warp_l = warp_horizontal(&images.right, &dl, View::Left)?;
    let warp_r = warp_horizontal(&images.left, &dr, View::Right)?;
    let ap_l = appearance_loss(&images.left, &warp_l, &ml, cfg.gamma, &cfg.ssim)?;
    let ap_r = appearance_loss(&images.right, &warp_r, &mr, cfg.gamma, &cfg.ssim)?;
    let ds_l = smoothness_loss(&dl, &images.left, View::Left)?;
    let ds_r = smoothness_loss(&dr, &images.right, View::Right)?;
    let lr = lr_consistency_loss(&dl, &dr, &ml, &mr)?;

    let (gc, frozen_used) = if weights.beta > 0.0 {
        let frozen_owned = match frozen {
            Some(f) => Some(f.clone()),
            None => freeze_geometry(&dl, &dr, rig, &ml, &mr, &cfg.geometry)?,
        };
        match frozen_owned {
            Some(f) => (evaluate_frozen(&dl, &dr, rig, &f)?, Some(f)),
            None => {
                let mut t = TermValueGrad::zero(h, w);
                t.empty_mask = true;
                (t, None)
            }
        }
    } else {
        (TermValueGrad::zero(h, w), None)
    };

    let named: [(&'static str, &TermValueGrad, f64); 7] = [
        ("ap_l", &ap_l, weights.alpha_ap),
        ("ap_r", &ap_r, weights.alpha_ap),
        ("ds_l", &ds_l, weights.alpha_ds),
        ("ds_r", &ds_r, weights.alpha_ds),
        ("lr2d_l", &lr.left, weights.alpha_lr2d),
        ("lr2d_r", &lr.right, weights.alpha_lr2d),
        ("gc3d", &gc, weights.beta),
    ];
    let mut grad_dl = Field::zeros(h, w);
    let mut grad_dr = Field::zeros(h, w);
    let mut empty_terms = Vec::new();
    for (name, term, weight) in named {
        if !(term.value.is_finite() && term.grad_dl.is_finite() && term.grad_dr.is_finite()) {
            return Err(Error::NumericalFailure { term: name.into(), detail: "non-finite value or gradient".into() });
        }
        if term.empty_mask {
            empty_terms.push(name);
        }
        if weight == 0.0 {
            continue;
        }
        for (acc, g) in grad_dl.values_mut().iter_mut().zip(term.grad_dl.values()) {
            *acc += weight * g;
        }
        for (acc, g) in grad_dr.values_mut().iter_mut().zip(term.grad_dr.values()) {
            *acc += weight * g;
        }
    }

    let mut terms = LossTerms {
        total: 0.0,
        ap_l: ap_l.value,
        ap_r: ap_r.value,
        ds_l: ds_l.value,
        ds_r: ds_r.value,
        lr2d_l: lr.left.value,
        lr2d_r: lr.right.value,
        gc3d: gc.value,
    };
    terms.total = terms.compose(weights);

    Ok(LossBreakdown {
        terms,
        weights: *weights,
        grad_raw_l: params.chain(&params.raw_l, &grad_dl),
        grad_raw_r: params.chain(&params.raw_r, &grad_dr),
        frozen: frozen_used,
        empty_terms,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    pub iterations: usize,
    /// Learning rate on the raw scale.
    pub step: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Initial disparity as a fraction of `d_max`.
    pub init_fraction: f64,
    /// Standard deviation of the raw-scale initial noise.
    pub init_noise: f64,
    /// Ceiling; `None` means 0.3 x image width.
    pub d_max: Option<f64>,
    /// Abort once the total exceeds this multiple of the initial total.
    pub divergence_factor: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            step: 5e-4,
            momentum: 0.9,
            seed: 0,
            init_fraction: 0.1,
            init_noise: 0.01,
            d_max: None,
            divergence_factor: 1e6,
        }
    }
}

impl OptimConfig {
    pub fn resolved_d_max(&self, width: usize) -> f64 {
        self.d_max.unwrap_or(0.3 * width as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub terms: LossTerms,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimization {
    pub trace: Vec<TraceRow>,
    pub params: DisparityParams,
}

#[derive(thiserror::Error, Debug)]
pub enum OptimizeError {
    #[error(transparent)]
    Objective(#[from] Error),
    /// Total loss became NaN or blew up; the trace up to the failure is kept.
    #[error("optimization diverged at iteration {iteration}")]
    Diverged { iteration: usize, trace: Vec<TraceRow> },
}

/// Momentum gradient descent on the raw parameters from the standard
/// initialization.
pub fn optimize(
    images: &StereoPair,
    rig: &CameraRig,
    weights: &LossWeights,
    cfg: &ObjectiveConfig,
    opt: &OptimConfig,
) -> std::result::Result<Optimization, OptimizeError> {
    let (h, w) = images.dims();
    let init = DisparityParams::initial(h, w, opt.resolved_d_max(w), opt.init_fraction, opt.init_noise, opt.seed)?;
    optimize_from(images, rig, weights, cfg, opt, init)
}

/// Momentum descent starting from `params`.
///
/// Each update is `v = momentum * v - step * (h*w) * grad; raw += v`. The
/// objective is a per-pixel mean, so scaling by the pixel count gives every
/// pixel an O(1) step regardless of resolution. The 3D subsample seed is
/// redrawn every iteration.
pub fn optimize_from(
    images: &StereoPair,
    rig: &CameraRig,
    weights: &LossWeights,
    cfg: &ObjectiveConfig,
    opt: &OptimConfig,
    mut params: DisparityParams,
) -> std::result::Result<Optimization, OptimizeError> {
    let (h, w) = images.dims();
    let scale = opt.step * (h * w) as f64;
    let mut vel_l = vec![0.0; h * w];
    let mut vel_r = vec![0.0; h * w];
    let mut trace = Vec::with_capacity(opt.iterations);
    let mut initial_total = None;
    let mut iter_cfg = *cfg;

    for iteration in 0..opt.iterations {
        iter_cfg.geometry.seed = cfg.geometry.seed.wrapping_add(opt.seed).wrapping_add(iteration as u64);
        let b = match total_loss(images, &params, rig, weights, &iter_cfg) {
            Ok(b) => b,
            Err(Error::NumericalFailure { .. }) => return Err(OptimizeError::Diverged { iteration, trace }),
            Err(e) => return Err(e.into()),
        };
        let total = b.total();
        let first = *initial_total.get_or_insert(total);
        trace.push(TraceRow { iteration, terms: b.terms, grad_norm: b.grad_norm() });
        if !total.is_finite() || total > opt.divergence_factor * first.max(f64::MIN_POSITIVE) {
            return Err(OptimizeError::Diverged { iteration, trace });
        }
        for (v, g) in vel_l.iter_mut().zip(b.grad_raw_l.values()) {
            *v = opt.momentum * *v - scale * g;
        }
        for (v, g) in vel_r.iter_mut().zip(b.grad_raw_r.values()) {
            *v = opt.momentum * *v - scale * g;
        }
        for (r, v) in params.raw_l.values_mut().iter_mut().zip(&vel_l) {
            *r += v;
        }
        for (r, v) in params.raw_r.values_mut().iter_mut().zip(&vel_r) {
            *r += v;
        }
    }
    Ok(Optimization { trace, params })
}

/// Total loss along `params + t * direction` for each `t`.
#[allow(clippy::too_many_arguments)]
pub fn eval_objective_profile(
    images: &StereoPair,
    rig: &CameraRig,
    weights: &LossWeights,
    cfg: &ObjectiveConfig,
    params: &DisparityParams,
    dir_l: &Field,
    dir_r: &Field,
    steps: &[f64],
) -> Result<Vec<f64>> {
    steps
        .iter()
        .map(|&t| Ok(total_loss(images, &params.stepped(dir_l, dir_r, t)?, rig, weights, cfg)?.total()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn textured_pair(h: usize, w: usize, disparity: f64) -> StereoPair {
        let tex = |x: f64, y: f64| 0.5 + 0.25 * (0.7 * x + 0.3 * y).sin() + 0.2 * (0.23 * x - 0.41 * y).cos();
        let left = ImagePlane::from_fn(h, w, 1, |i, j, _| tex(j as f64, i as f64)).unwrap();
        let right = ImagePlane::from_fn(h, w, 1, |i, j, _| tex(j as f64 + disparity, i as f64)).unwrap();
        StereoPair::new(left, right).unwrap()
    }

    #[test]
    fn default_weights() {
        let w = LossWeights::default();
        assert_eq!((w.alpha_ap, w.alpha_ds, w.alpha_lr2d, w.beta), (1.0, 0.5, 1.0, 0.001));
        assert!(LossWeights { beta: -1.0, ..w }.validate().is_err());
    }

    #[test]
    fn perfect_reconstruction_with_appearance_only_is_zero() {
        let (h, w) = (8, 12);
        let pair = textured_pair(h, w, 2.0);
        let rig = CameraRig::centered(20.0, 1.0, h, w).unwrap();
        let d = DisparityField::constant(h, w, 2.0).unwrap();
        let params = DisparityParams::from_disparities(&d, &d, 4.0).unwrap();
        let weights = LossWeights { alpha_ap: 1.0, alpha_ds: 0.0, alpha_lr2d: 0.0, beta: 0.0 };
        let b = total_loss(&pair, &params, &rig, &weights, &ObjectiveConfig::default()).unwrap();
        assert!(b.total().abs() < 1e-12, "{}", b.total());
    }

    #[test]
    fn composition_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (h, w) = (10, 14);
        let left = ImagePlane::from_fn(h, w, 3, |_, _, _| rng.gen()).unwrap();
        let right = ImagePlane::from_fn(h, w, 3, |_, _, _| rng.gen()).unwrap();
        let pair = StereoPair::new(left, right).unwrap();
        let rig = CameraRig::centered(30.0, 2.0, h, w).unwrap();
        let params = DisparityParams::initial(h, w, 4.0, 0.4, 0.5, 3).unwrap();
        let weights = LossWeights { alpha_ap: 0.7, alpha_ds: 0.3, alpha_lr2d: 1.1, beta: 0.05 };
        let b = total_loss(&pair, &params, &rig, &weights, &ObjectiveConfig::default()).unwrap();
        let t = b.terms;
        let expected = 0.7 * (t.ap_l + t.ap_r) + 0.3 * (t.ds_l + t.ds_r) + 1.1 * (t.lr2d_l + t.lr2d_r) + 0.05 * t.gc3d;
        assert!((t.total - expected).abs() <= 1e-12);
        assert!(b.frozen.is_some());
    }

    #[test]
    fn initial_disparities_stay_inside_ceiling() {
        let p = DisparityParams::initial(5, 6, 24.0, 0.1, 0.01, 9).unwrap();
        let (dl, dr) = p.disparities().unwrap();
        for v in dl.values().iter().chain(dr.values()) {
            assert!(*v > 0.0 && *v < 24.0);
            assert!((v - 2.4).abs() < 0.2);
        }
    }

    #[test]
    fn zero_iterations_returns_initial_params() {
        let pair = textured_pair(6, 10, 1.0);
        let rig = CameraRig::centered(20.0, 1.0, 6, 10).unwrap();
        let opt = OptimConfig { iterations: 0, seed: 5, ..OptimConfig::default() };
        let out = optimize(&pair, &rig, &LossWeights::default(), &ObjectiveConfig::default(), &opt).unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(out.params, DisparityParams::initial(6, 10, 3.0, 0.1, 0.01, 5).unwrap());
    }

    #[test]
    fn optimization_is_deterministic() {
        let pair = textured_pair(8, 12, 1.5);
        let rig = CameraRig::centered(20.0, 1.0, 8, 12).unwrap();
        let opt = OptimConfig { iterations: 15, seed: 2, ..OptimConfig::default() };
        let a = optimize(&pair, &rig, &LossWeights::default(), &ObjectiveConfig::default(), &opt).unwrap();
        let b = optimize(&pair, &rig, &LossWeights::default(), &ObjectiveConfig::default(), &opt).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_is_reported() {
        let pair = textured_pair(8, 12, 1.5);
        let rig = CameraRig::centered(20.0, 1.0, 8, 12).unwrap();
        let opt = OptimConfig { iterations: 30, step: 50.0, divergence_factor: 1.0000001, ..OptimConfig::default() };
        match optimize(&pair, &rig, &LossWeights::default(), &ObjectiveConfig::default(), &opt) {
            Err(OptimizeError::Diverged { trace, .. }) => assert!(!trace.is_empty()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn zero_direction_gives_constant_profile() {
        let pair = textured_pair(8, 12, 1.5);
        let rig = CameraRig::centered(20.0, 1.0, 8, 12).unwrap();
        let params = DisparityParams::initial(8, 12, 3.6, 0.3, 0.1, 1).unwrap();
        let zero = Field::zeros(8, 12);
        let prof = eval_objective_profile(
            &pair,
            &rig,
            &LossWeights::default(),
            &ObjectiveConfig::default(),
            &params,
            &zero,
            &zero,
            &[-0.1, 0.0, 0.3],
        )
        .unwrap();
        assert!(prof.iter().all(|v| *v == prof[0]));
    }
}
