//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! errors. The same format is used for run manifests, so a manifest can be
//! passed back as `--config` to repeat a run.

use std::fmt::Write as _;
use std::path::Path;

use stereogc::geometry::{GeometryConfig, IcpConfig};
use stereogc::losses::SsimParams;
use stereogc::metrics::EvalOptions;
use stereogc::objective::{LossWeights, ObjectiveConfig, OptimConfig};

use crate::error::{HarnessError, HarnessResult};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub gamma: f64,
    pub weights: LossWeights,
    pub enable_3gc: bool,
    pub enable_blind_mask: bool,
    /// `None` resolves to 0.3 x width.
    pub d_max: Option<f64>,
    pub iterations: usize,
    pub step: f64,
    pub momentum: f64,
    pub init_fraction: f64,
    pub init_noise: f64,
    pub divergence_factor: f64,
    pub n_points: usize,
    pub icp_max_iter: usize,
    pub icp_tol: f64,
    pub ssim: SsimParams,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub median_scale: bool,
    pub max_depth: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let opt = OptimConfig::default();
        let geo = GeometryConfig::default();
        Self {
            gamma: 0.85,
            weights: LossWeights::default(),
            enable_3gc: true,
            enable_blind_mask: true,
            d_max: None,
            iterations: opt.iterations,
            step: opt.step,
            momentum: opt.momentum,
            init_fraction: opt.init_fraction,
            init_noise: opt.init_noise,
            divergence_factor: opt.divergence_factor,
            n_points: geo.n_points,
            icp_max_iter: geo.icp.max_iter,
            icp_tol: geo.icp.tol,
            ssim: SsimParams::default(),
            seed: 0,
            height: 256,
            width: 320,
            median_scale: false,
            max_depth: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> HarnessResult<T> {
    v.parse().map_err(|_| HarnessError::usage(format!("{key}: cannot parse '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> HarnessResult<bool> {
    match v {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        _ => Err(HarnessError::usage(format!("{key}: expected true or false, got '{v}'"))),
    }
}

fn parse_opt(key: &str, v: &str) -> HarnessResult<Option<f64>> {
    match v {
        "auto" | "none" => Ok(None),
        _ => parse_num(key, v).map(Some),
    }
}

fn fmt_opt(v: Option<f64>, none: &str) -> String {
    v.map_or_else(|| none.to_string(), |v| v.to_string())
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> HarnessResult<()> {
        let v = value.trim();
        match key.trim() {
            "gamma" => self.gamma = parse_num(key, v)?,
            "alpha_ap" => self.weights.alpha_ap = parse_num(key, v)?,
            "alpha_ds" => self.weights.alpha_ds = parse_num(key, v)?,
            "alpha_lr" => self.weights.alpha_lr2d = parse_num(key, v)?,
            "beta" => self.weights.beta = parse_num(key, v)?,
            "enable_3gc" => self.enable_3gc = parse_bool(key, v)?,
            "enable_blind_mask" => self.enable_blind_mask = parse_bool(key, v)?,
            "d_max" => self.d_max = parse_opt(key, v)?,
            "iterations" => self.iterations = parse_num(key, v)?,
            "step" => self.step = parse_num(key, v)?,
            "momentum" => self.momentum = parse_num(key, v)?,
            "init_fraction" => self.init_fraction = parse_num(key, v)?,
            "init_noise" => self.init_noise = parse_num(key, v)?,
            "divergence_factor" => self.divergence_factor = parse_num(key, v)?,
            "n_points" => self.n_points = parse_num(key, v)?,
            "icp_max_iter" => self.icp_max_iter = parse_num(key, v)?,
            "icp_tol" => self.icp_tol = parse_num(key, v)?,
            "ssim_window" => self.ssim.window = parse_num(key, v)?,
            "ssim_c1" => self.ssim.c1 = parse_num(key, v)?,
            "ssim_c2" => self.ssim.c2 = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "height" => self.height = parse_num(key, v)?,
            "width" => self.width = parse_num(key, v)?,
            "median_scale" => self.median_scale = parse_bool(key, v)?,
            "max_depth" => self.max_depth = parse_opt(key, v)?,
            other => return Err(HarnessError::usage(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> HarnessResult<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::usage(format!("config line {}: expected 'key = value'", n + 1)))?;
            self.set(k, v).map_err(|e| HarnessError::usage(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> HarnessResult<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> HarnessResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    /// Range checks that the core types do not cover.
    pub fn validate(&self) -> HarnessResult<()> {
        self.weights.validate()?;
        self.ssim.validate()?;
        let bad = |m: &str| Err(HarnessError::usage(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return bad("step must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.init_fraction > 0.0 && self.init_fraction < 1.0) {
            return bad("init_fraction must lie in (0, 1)");
        }
        if self.d_max.is_some_and(|d| !(d.is_finite() && d > 0.0)) {
            return bad("d_max must be positive");
        }
        if self.max_depth.is_some_and(|d| !(d.is_finite() && d > 0.0)) {
            return bad("max_depth must be positive");
        }
        if self.height < 2 || self.width < 2 {
            return bad("height and width must be at least 2");
        }
        Ok(())
    }

    /// Loss weights with the 3D term switched off unless enabled.
    pub fn effective_weights(&self) -> LossWeights {
        LossWeights { beta: if self.enable_3gc { self.weights.beta } else { 0.0 }, ..self.weights }
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            gamma: self.gamma,
            ssim: self.ssim,
            geometry: GeometryConfig {
                n_points: self.n_points,
                icp: IcpConfig { max_iter: self.icp_max_iter, tol: self.icp_tol },
                seed: self.seed,
            },
            blind_mask: self.enable_blind_mask,
        }
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            iterations: self.iterations,
            step: self.step,
            momentum: self.momentum,
            seed: self.seed,
            init_fraction: self.init_fraction,
            init_noise: self.init_noise,
            d_max: self.d_max,
            divergence_factor: self.divergence_factor,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions { median_scale: self.median_scale, max_depth: self.max_depth }
    }

    /// All settings as `key = value` lines, floats in shortest round-trip form.
    pub fn to_text(&self) -> String {
        let w = &self.weights;
        let pairs: [(&str, String); 25] = [
            ("gamma", self.gamma.to_string()),
            ("alpha_ap", w.alpha_ap.to_string()),
            ("alpha_ds", w.alpha_ds.to_string()),
            ("alpha_lr", w.alpha_lr2d.to_string()),
            ("beta", w.beta.to_string()),
            ("enable_3gc", self.enable_3gc.to_string()),
            ("enable_blind_mask", self.enable_blind_mask.to_string()),
            ("d_max", fmt_opt(self.d_max, "auto")),
            ("iterations", self.iterations.to_string()),
            ("step", self.step.to_string()),
            ("momentum", self.momentum.to_string()),
            ("init_fraction", self.init_fraction.to_string()),
            ("init_noise", self.init_noise.to_string()),
            ("divergence_factor", self.divergence_factor.to_string()),
            ("n_points", self.n_points.to_string()),
            ("icp_max_iter", self.icp_max_iter.to_string()),
            ("icp_tol", self.icp_tol.to_string()),
            ("ssim_window", self.ssim.window.to_string()),
            ("ssim_c1", self.ssim.c1.to_string()),
            ("ssim_c2", self.ssim.c2.to_string()),
            ("seed", self.seed.to_string()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("median_scale", self.median_scale.to_string()),
            ("max_depth", fmt_opt(self.max_depth, "none")),
        ];
        let mut s = String::new();
        for (k, v) in pairs {
            writeln!(s, "{k} = {v}").expect("string write");
        }
        s
    }
}
