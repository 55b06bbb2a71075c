//! Analytic synthetic stereo scenes.
//!
//! Every pixel of both cameras is ray-cast against the scene, and its
//! colour is a procedural texture evaluated at the world-space hit point,
//! so the two views agree on appearance wherever they see the same surface
//! and ground-truth disparities are known exactly.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stereogc::objective::StereoPair;
use stereogc::warp::View;
use stereogc::{BinaryMask, CameraRig, DepthMap, DisparityField, Error, ImagePlane, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Surface {
    /// `Z = depth`.
    FrontoPlane { depth: f64 },
    /// `Z = depth + slope * X`.
    SlantedPlane { depth: f64, slope: f64 },
    /// `Z = depth + amplitude * sin(2 pi X / wavelength)`.
    Relief { depth: f64, amplitude: f64, wavelength: f64 },
}

impl Surface {
    fn reference_depth(&self) -> f64 {
        match *self {
            Surface::FrontoPlane { depth } | Surface::SlantedPlane { depth, .. } | Surface::Relief { depth, .. } => {
                depth
            }
        }
    }

    /// Depth at which the ray `origin_x + Z * rx` meets the surface.
    fn intersect(&self, origin_x: f64, rx: f64) -> Option<f64> {
        let z = match *self {
            Surface::FrontoPlane { depth } => depth,
            Surface::SlantedPlane { depth, slope } => {
                let den = 1.0 - slope * rx;
                if den <= 0.0 {
                    return None;
                }
                (depth + slope * origin_x) / den
            }
            Surface::Relief { depth, amplitude, wavelength } => {
                let k = 2.0 * PI / wavelength;
                let mut z = depth;
                for _ in 0..60 {
                    let x = origin_x + z * rx;
                    let f = z - depth - amplitude * (k * x).sin();
                    let df = 1.0 - amplitude * k * rx * (k * x).cos();
                    let step = f / df;
                    z -= step;
                    if step.abs() < 1e-14 * depth {
                        break;
                    }
                }
                z
            }
        };
        (z.is_finite() && z > 0.0).then_some(z)
    }
}

/// Opaque fronto-parallel strip spanning world `x_min..x_max` at `depth`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Occluder {
    pub depth: f64,
    pub x_min: f64,
    pub x_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextureSpec {
    /// Coarsest texture period, in pixels at the surface's reference depth.
    pub period_px: f64,
    pub octaves: usize,
    /// Peak deviation from mid-grey, at most 0.5.
    pub contrast: f64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        Self { period_px: 10.0, octaves: 2, contrast: 0.4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticScene {
    pub surface: Surface,
    pub texture: TextureSpec,
    pub rig: CameraRig,
    pub occluder: Option<Occluder>,
    pub channels: usize,
}

/// Named scene presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenePreset {
    Plane,
    Slant,
    Relief,
    SlantOccluded,
}

impl ScenePreset {
    pub const ALL: [ScenePreset; 4] =
        [ScenePreset::Plane, ScenePreset::Slant, ScenePreset::Relief, ScenePreset::SlantOccluded];

    pub fn name(self) -> &'static str {
        match self {
            ScenePreset::Plane => "plane",
            ScenePreset::Slant => "slant",
            ScenePreset::Relief => "relief",
            ScenePreset::SlantOccluded => "slant-occluded",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scene '{s}'")))
    }

    /// The preset at the given resolution. Focal length scales with width so
    /// disparities in pixels stay comparable across resolutions.
    pub fn scene(self, height: usize, width: usize) -> Result<SyntheticScene> {
        let focal = width as f64;
        let rig = CameraRig::centered(focal, 5.0, height, width)?;
        // Depth 80 gives a disparity of width / 16 (5 px at 80 wide), inside
        // the photometric basin around the standard initialization.
        let depth = 80.0;
        let (surface, occluder) = match self {
            ScenePreset::Plane => (Surface::FrontoPlane { depth }, None),
            ScenePreset::Slant => (Surface::SlantedPlane { depth, slope: 0.6 }, None),
            ScenePreset::Relief => (Surface::Relief { depth, amplitude: 4.0, wavelength: 30.0 }, None),
            ScenePreset::SlantOccluded => (
                Surface::SlantedPlane { depth, slope: 0.6 },
                Some(Occluder { depth: 0.75 * depth, x_min: -2.0, x_max: 2.0 }),
            ),
        };
        // The coarsest texture period tracks the resolution (10 px at 80 wide)
        // so the photometric basin keeps its size relative to the disparity.
        let texture = TextureSpec { period_px: width as f64 / 8.0, ..TextureSpec::default() };
        Ok(SyntheticScene { surface, texture, rig, occluder, channels: 3 })
    }
}

#[derive(Clone, Debug)]
struct Texture {
    /// `(kx, ky, phase, amplitude)` per channel.
    waves: Vec<Vec<(f64, f64, f64, f64)>>,
    norm: f64,
    contrast: f64,
}

impl Texture {
    fn new(spec: &TextureSpec, world_per_px: f64, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut waves = vec![Vec::new(); channels];
        let mut norm = 0.0;
        for octave in 0..spec.octaves.max(1) {
            let period = spec.period_px / 2f64.powi(octave as i32) * world_per_px;
            let amp = 0.5f64.powi(octave as i32);
            for _ in 0..2 {
                norm += amp;
                let theta: f64 = rng.gen_range(0.0..PI);
                let k = 2.0 * PI / period;
                for ch in waves.iter_mut() {
                    ch.push((k * theta.cos(), k * theta.sin(), rng.gen_range(0.0..2.0 * PI), amp));
                }
            }
        }
        Self { waves, norm, contrast: spec.contrast.clamp(0.0, 0.5) }
    }

    fn eval(&self, x: f64, y: f64, c: usize) -> f64 {
        let s: f64 = self.waves[c].iter().map(|(kx, ky, ph, a)| a * (kx * x + ky * y + ph).sin()).sum();
        (0.5 + self.contrast * s / self.norm).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug)]
pub struct SceneRender {
    pub pair: StereoPair,
    pub gt_disp_l: DisparityField,
    pub gt_disp_r: DisparityField,
    pub gt_depth_l: DepthMap,
    pub gt_depth_r: DepthMap,
    /// Left pixels whose surface point is also seen by the right camera.
    pub covisible_l: BinaryMask,
    pub covisible_r: BinaryMask,
}

#[derive(Clone, Copy)]
struct Hit {
    depth: f64,
    x: f64,
    y: f64,
    occluder: bool,
}

impl SyntheticScene {
    fn cast(&self, view: View, i: usize, j: usize) -> Option<Hit> {
        let rig = &self.rig;
        let origin_x = match view {
            View::Left => 0.0,
            View::Right => rig.baseline,
        };
        let rx = (j as f64 - rig.cx) / rig.focal;
        let ry = (i as f64 - rig.cy) / rig.focal;
        let surf = self.surface.intersect(origin_x, rx)?;
        let mut hit = Hit { depth: surf, x: origin_x + surf * rx, y: surf * ry, occluder: false };
        if let Some(occ) = self.occluder {
            let x = origin_x + occ.depth * rx;
            if occ.depth < surf && x >= occ.x_min && x <= occ.x_max {
                hit = Hit { depth: occ.depth, x, y: occ.depth * ry, occluder: true };
            }
        }
        Some(hit)
    }

    /// Whether world point `(x, y, z)` on a visible surface is the first hit
    /// along the ray from the other camera.
    fn seen_from(&self, view: View, hit: &Hit) -> bool {
        let rig = &self.rig;
        let origin_x = match view {
            View::Left => 0.0,
            View::Right => rig.baseline,
        };
        let u = rig.cx + rig.focal * (hit.x - origin_x) / hit.depth;
        if !(u >= 0.0 && u <= (rig.width - 1) as f64) {
            return false;
        }
        let rx = (hit.x - origin_x) / hit.depth;
        if hit.occluder {
            return true;
        }
        match self.occluder {
            Some(occ) => {
                let x = origin_x + occ.depth * rx;
                !(occ.depth < hit.depth && x >= occ.x_min && x <= occ.x_max)
            }
            None => true,
        }
    }

    pub fn render(&self, seed: u64) -> Result<SceneRender> {
        let rig = self.rig;
        let (h, w) = rig.dims();
        let world_per_px = self.surface.reference_depth() / rig.focal;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let texture = Texture::new(&self.texture, world_per_px, self.channels, &mut rng);
        let occ_texture = Texture::new(
            &TextureSpec { period_px: self.texture.period_px * 0.5, ..self.texture },
            world_per_px,
            self.channels,
            &mut rng,
        );

        let mut out = Vec::new();
        for view in [View::Left, View::Right] {
            let mut hits = Vec::with_capacity(h * w);
            for i in 0..h {
                for j in 0..w {
                    hits.push(self.cast(view, i, j).ok_or_else(|| {
                        Error::InvalidArgument(format!("surface is behind the camera at pixel ({i}, {j})"))
                    })?);
                }
            }
            let image = ImagePlane::from_fn(h, w, self.channels, |i, j, c| {
                let hit = &hits[i * w + j];
                let tex = if hit.occluder { &occ_texture } else { &texture };
                tex.eval(hit.x, hit.y, c)
            })?;
            let depth = DepthMap::from_values(h, w, hits.iter().map(|h| h.depth).collect())?;
            let disp = DisparityField::new(h, w, hits.iter().map(|h| rig.bf() / h.depth).collect())?;
            let covisible = BinaryMask::from_fn(h, w, |i, j| self.seen_from(view.other(), &hits[i * w + j]));
            out.push((image, depth, disp, covisible));
        }
        let (r_img, r_depth, r_disp, r_cov) = out.pop().expect("two views");
        let (l_img, l_depth, l_disp, l_cov) = out.pop().expect("two views");
        Ok(SceneRender {
            pair: StereoPair::new(l_img, r_img)?,
            gt_disp_l: l_disp,
            gt_disp_r: r_disp,
            gt_depth_l: l_depth,
            gt_depth_r: r_depth,
            covisible_l: l_cov,
            covisible_r: r_cov,
        })
    }
}

/// Renders a preset.
pub fn synth_scene(
    preset: ScenePreset,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<(SyntheticScene, SceneRender)> {
    let scene = preset.scene(height, width)?;
    let render = scene.render(seed)?;
    Ok((scene, render))
}

#[cfg(test)]
mod tests {
    use super::*;
    use stereogc::losses::lr_consistency_loss;
    use stereogc::warp::blind_mask;

    #[test]
    fn plane_disparity_is_constant() {
        let (scene, r) = synth_scene(ScenePreset::Plane, 16, 20, 1).unwrap();
        let expected = scene.rig.bf() / 80.0;
        assert!(r.gt_disp_l.values().iter().all(|d| (d - expected).abs() < 1e-12));
        assert!(r.gt_disp_r.values().iter().all(|d| (d - expected).abs() < 1e-12));
    }

    #[test]
    fn slanted_disparity_is_affine_in_x() {
        let (_, r) = synth_scene(ScenePreset::Slant, 12, 40, 1).unwrap();
        let d = &r.gt_disp_l;
        for i in 0..12 {
            for j in 1..39 {
                let second = d.get(i, j + 1) - 2.0 * d.get(i, j) + d.get(i, j - 1);
                assert!(second.abs() < 1e-12);
            }
            // No vertical dependence.
            assert!((d.get(i, 7) - d.get(0, 7)).abs() < 1e-12);
        }
    }

    #[test]
    fn generator_disparities_are_lr_consistent() {
        for preset in [ScenePreset::Plane, ScenePreset::Slant] {
            let (_, r) = synth_scene(preset, 16, 40, 3).unwrap();
            let ml = blind_mask(&r.gt_disp_l, View::Left);
            let mr = blind_mask(&r.gt_disp_r, View::Right);
            let lr = lr_consistency_loss(&r.gt_disp_l, &r.gt_disp_r, &ml, &mr).unwrap();
            assert!(lr.left.value < 1e-12 && lr.right.value < 1e-12, "{preset:?}");
        }
    }

    #[test]
    fn occluder_hides_the_predicted_columns() {
        let (scene, r) = synth_scene(ScenePreset::SlantOccluded, 8, 80, 2).unwrap();
        let occ = scene.occluder.unwrap();
        let rig = scene.rig;
        // Left pixels whose background point is hidden from the right camera
        // by the strip: right-camera ray to the point crosses the strip.
        for j in 0..80 {
            let hit = scene.cast(View::Left, 0, j).unwrap();
            let u_right = rig.cx + rig.focal * (hit.x - rig.baseline) / hit.depth;
            let in_frame = (0.0..=79.0).contains(&u_right);
            let x_at_strip = rig.baseline + occ.depth * (hit.x - rig.baseline) / hit.depth;
            let blocked = !hit.occluder && hit.depth > occ.depth && (occ.x_min..=occ.x_max).contains(&x_at_strip);
            assert_eq!(r.covisible_l.is_set(0, j), in_frame && !blocked, "column {j}");
        }
        // The right camera sits at +X, so it loses background just left of the strip.
        assert!((0..80).any(|j| {
            let hit = scene.cast(View::Left, 0, j).unwrap();
            !hit.occluder && !r.covisible_l.is_set(0, j) && hit.x < occ.x_min && j > 10
        }));
    }

    #[test]
    fn surface_behind_camera_is_rejected() {
        let mut scene = ScenePreset::Plane.scene(4, 6).unwrap();
        scene.surface = Surface::FrontoPlane { depth: -1.0 };
        assert!(scene.render(0).is_err());
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = synth_scene(ScenePreset::Relief, 10, 12, 9).unwrap().1;
        let b = synth_scene(ScenePreset::Relief, 10, 12, 9).unwrap().1;
        assert_eq!(a.pair, b.pair);
        assert_eq!(a.gt_disp_l, b.gt_disp_l);
    }
}
