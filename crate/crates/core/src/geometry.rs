//! Masked backprojection, point-to-point ICP and the 3D geometric
//! consistency loss between the left and right point clouds.

use nalgebra::{Matrix3, Vector3};
use rand::seq::index;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{BinaryMask, CameraRig, DisparityField, Field, DISPARITY_EPSILON};
use crate::kdtree::KdTree;
use crate::losses::TermValueGrad;
use crate::warp::View;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    /// `(row, col)` of the pixel each point came from.
    pub source_pixel: Vec<(usize, usize)>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        let source_pixel = vec![(0, 0); points.len()];
        Self { points, source_pixel }
    }

    pub fn centroid(&self) -> Vector3<f64> {
        if self.is_empty() {
            return Vector3::zeros();
        }
        self.points.iter().sum::<Vector3<f64>>() / self.len() as f64
    }

    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud { points: self.points.iter().map(|p| t.apply(p)).collect(), source_pixel: self.source_pixel.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Rotation of `angle` radians about `axis`, followed by `translation`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        Self { rotation: *rot.matrix(), translation }
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn compose(&self, inner: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }

    /// Angle of the rotation part, in radians.
    pub fn rotation_angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    /// Checks `R^T R = I` and `det R = 1` within `tol`.
    pub fn is_proper(&self, tol: f64) -> bool {
        let orth = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        orth <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }
}

/// Backprojects every mask-in pixel of `d` through the rig. Right-view
/// points are shifted by `+baseline` along X so both clouds share the left
/// camera frame. Also returns how many mask-in pixels were dropped for
/// having a sub-epsilon disparity.
pub fn backproject(d: &DisparityField, rig: &CameraRig, mask: &BinaryMask, view: View) -> Result<(PointCloud, usize)> {
    rig.check_dims(d.dims(), "disparity field")?;
    rig.check_dims(mask.dims(), "mask")?;
    let mut cloud = PointCloud::default();
    let mut excluded = 0;
    for i in 0..d.height() {
        for j in 0..d.width() {
            if !mask.is_set(i, j) {
                continue;
            }
            match backproject_pixel(d.get(i, j), i, j, rig, view) {
                Some(p) => {
                    cloud.points.push(p);
                    cloud.source_pixel.push((i, j));
                }
                None => excluded += 1,
            }
        }
    }
    Ok((cloud, excluded))
}

#[inline]
fn camera_point(disparity: f64, i: usize, j: usize, rig: &CameraRig) -> Option<Vector3<f64>> {
    if !(disparity >= DISPARITY_EPSILON) {
        return None;
    }
    let z = rig.bf() / disparity;
    Some(Vector3::new((j as f64 - rig.cx) * z / rig.focal, (i as f64 - rig.cy) * z / rig.focal, z))
}

#[inline]
fn view_offset(view: View, rig: &CameraRig) -> Vector3<f64> {
    match view {
        View::Left => Vector3::zeros(),
        View::Right => Vector3::new(rig.baseline, 0.0, 0.0),
    }
}

#[inline]
pub(crate) fn backproject_pixel(
    disparity: f64,
    i: usize,
    j: usize,
    rig: &CameraRig,
    view: View,
) -> Option<Vector3<f64>> {
    camera_point(disparity, i, j, rig).map(|p| p + view_offset(view, rig))
}

/// Uniform sample of `n` points without replacement, kept in original order.
pub fn subsample(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::invalid("subsample size must be at least 1"));
    }
    if cloud.len() <= n {
        return Ok(cloud.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, cloud.len(), n).into_vec();
    picked.sort_unstable();
    Ok(PointCloud {
        points: picked.iter().map(|&k| cloud.points[k]).collect(),
        source_pixel: picked.iter().map(|&k| cloud.source_pixel[k]).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcpConfig {
    pub max_iter: usize,
    /// Stop once the RMS alignment error improves by less than this.
    pub tol: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self { max_iter: 20, tol: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpResult {
    /// Maps source points onto the target.
    pub transform: RigidTransform,
    /// Mean Euclidean distance between transformed source points and their matches.
    pub residual: f64,
    /// `(source index, target index)` for every source point.
    pub correspondences: Vec<(usize, usize)>,
    pub iterations_used: usize,
    pub converged: bool,
    /// RMS alignment error after each correspondence step; non-increasing.
    pub history: Vec<f64>,
}

fn check_spread(cloud: &PointCloud, what: &str) -> Result<()> {
    if cloud.len() < 3 {
        return Err(Error::DegenerateGeometry(format!("{what} has {} points, need 3", cloud.len())));
    }
    let c = cloud.centroid();
    let cov = cloud.points.iter().fold(Matrix3::zeros(), |acc, p| {
        let q = p - c;
        acc + q * q.transpose()
    });
    let mut s: Vec<f64> = cov.symmetric_eigenvalues().iter().map(|v| v.abs()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    if !(s[0] > 0.0) || s[1] <= 1e-12 * s[0] {
        return Err(Error::DegenerateGeometry(format!("{what} is collinear or a single point")));
    }
    Ok(())
}

/// Least-squares rigid transform taking `src[k]` onto `dst[k]`.
fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> RigidTransform {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let h = src.iter().zip(dst).fold(Matrix3::zeros(), |acc, (p, q)| acc + (p - cs) * (q - cd).transpose());
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let v = v_t.transpose();
    let mut fix = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let rotation = v * fix * u.transpose();
    RigidTransform { rotation, translation: cd - rotation * cs }
}

fn match_points(tree: &KdTree, src: &PointCloud, t: &RigidTransform) -> (Vec<(usize, usize)>, f64) {
    let mut sq = 0.0;
    let corr = src
        .points
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let (m, d2) = tree.nearest(&t.apply(p)).expect("target is non-empty");
            sq += d2;
            (k, m)
        })
        .collect();
    (corr, (sq / src.len() as f64).sqrt())
}

/// Point-to-point ICP from the identity: nearest neighbours on the target,
/// then a closed-form rigid update, until the RMS error stops improving by
/// `cfg.tol` or `cfg.max_iter` correspondence steps have run.
pub fn icp(source: &PointCloud, target: &PointCloud, cfg: &IcpConfig) -> Result<IcpResult> {
    check_spread(source, "source cloud")?;
    check_spread(target, "target cloud")?;
    let max_iter = cfg.max_iter.max(1);
    let tree = KdTree::build(&target.points);
    let mut transform = RigidTransform::identity();
    let mut history: Vec<f64> = Vec::new();
    let mut state: Option<(RigidTransform, Vec<(usize, usize)>)> = None;
    let mut converged = false;

    for iter in 0..=max_iter {
        let (corr, rms) = match_points(&tree, source, &transform);
        if let Some(&prev) = history.last() {
            if rms > prev {
                // Rounding noise at the fixed point; keep the previous state.
                converged = true;
                break;
            }
        }
        let improvement = history.last().map_or(f64::INFINITY, |prev| prev - rms);
        history.push(rms);
        state = Some((transform, corr));
        if rms <= cfg.tol || improvement < cfg.tol {
            converged = true;
            break;
        }
        if iter == max_iter {
            break;
        }
        let (_, corr) = state.as_ref().expect("just set");
        let matched: Vec<Vector3<f64>> = corr.iter().map(|&(_, m)| target.points[m]).collect();
        transform = kabsch(&source.points, &matched);
    }

    let (transform, correspondences) = state.expect("at least one iteration");
    let residual = correspondences
        .iter()
        .map(|&(s, m)| (transform.apply(&source.points[s]) - target.points[m]).norm())
        .sum::<f64>()
        / source.len() as f64;
    Ok(IcpResult { transform, residual, correspondences, iterations_used: history.len(), converged, history })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometryConfig {
    /// Points drawn from each cloud per evaluation.
    pub n_points: usize,
    pub icp: IcpConfig,
    pub seed: u64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { n_points: 1000, icp: IcpConfig::default(), seed: 0 }
    }
}

/// ICP transform and correspondences held fixed while differentiating.
///
/// Each pair is `(left pixel, right pixel, weight)`; the loss is
/// `sum weight * |T p_left - p_right|`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenGeometry {
    pub transform: RigidTransform,
    pub pairs: Vec<((usize, usize), (usize, usize), f64)>,
    pub icp_residual: f64,
    pub icp_iterations: usize,
}

/// Symmetric post-registration distance between the masked left and right
/// clouds.
///
/// A subsample of the left cloud is registered onto the full right cloud
/// with ICP. The loss averages the forward term (subsampled left points to
/// their matches) and the backward term (subsampled right points to their
/// nearest registered left point). Returns the frozen geometry used for the
/// gradient, or `None` when a cloud was empty.
pub fn geometric_consistency_loss(
    dl: &DisparityField,
    dr: &DisparityField,
    rig: &CameraRig,
    ml: &BinaryMask,
    mr: &BinaryMask,
    cfg: &GeometryConfig,
) -> Result<(TermValueGrad, Option<FrozenGeometry>)> {
    match freeze_geometry(dl, dr, rig, ml, mr, cfg)? {
        Some(frozen) => {
            let term = evaluate_frozen(dl, dr, rig, &frozen)?;
            Ok((term, Some(frozen)))
        }
        None => {
            let mut term = TermValueGrad::zero(dl.height(), dl.width());
            term.empty_mask = true;
            Ok((term, None))
        }
    }
}

/// Runs the registration and records the correspondences.
pub fn freeze_geometry(
    dl: &DisparityField,
    dr: &DisparityField,
    rig: &CameraRig,
    ml: &BinaryMask,
    mr: &BinaryMask,
    cfg: &GeometryConfig,
) -> Result<Option<FrozenGeometry>> {
    if dl.dims() != dr.dims() {
        return Err(Error::invalid("left and right disparity dimensions differ"));
    }
    let (left, _) = backproject(dl, rig, ml, View::Left)?;
    let (right, _) = backproject(dr, rig, mr, View::Right)?;
    if left.is_empty() || right.is_empty() {
        return Ok(None);
    }
    let left_sub = subsample(&left, cfg.n_points, cfg.seed)?;
    let right_sub = subsample(&right, cfg.n_points, cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15))?;

    let reg = icp(&left_sub, &right, &cfg.icp)?;
    let t = reg.transform;
    let w_fwd = 0.5 / left_sub.len() as f64;
    let w_bwd = 0.5 / right_sub.len() as f64;
    let mut pairs = Vec::with_capacity(left_sub.len() + right_sub.len());
    for &(s, m) in &reg.correspondences {
        pairs.push((left_sub.source_pixel[s], right.source_pixel[m], w_fwd));
    }
    let moved = left.transformed(&t);
    let tree = KdTree::build(&moved.points);
    for (q, px) in right_sub.points.iter().zip(&right_sub.source_pixel) {
        let (m, _) = tree.nearest(q).expect("left cloud is non-empty");
        pairs.push((left.source_pixel[m], *px, w_bwd));
    }
    Ok(Some(FrozenGeometry { transform: t, pairs, icp_residual: reg.residual, icp_iterations: reg.iterations_used }))
}

/// Value and gradient of the 3D loss with the transform and the
/// correspondences held constant. Depth is `bf / d`, so each point moves
/// along its camera ray as `dP/dd = -P_cam / d`.
pub fn evaluate_frozen(
    dl: &DisparityField,
    dr: &DisparityField,
    rig: &CameraRig,
    frozen: &FrozenGeometry,
) -> Result<TermValueGrad> {
    rig.check_dims(dl.dims(), "left disparity")?;
    rig.check_dims(dr.dims(), "right disparity")?;
    let (h, w) = dl.dims();
    let mut value = 0.0;
    let mut gl = Field::zeros(h, w);
    let mut gr = Field::zeros(h, w);
    let t = &frozen.transform;
    let rt = t.rotation.transpose();
    for &((li, lj), (ri, rj), weight) in &frozen.pairs {
        let (dlv, drv) = (dl.get(li, lj), dr.get(ri, rj));
        let (Some(pl), Some(pr_cam)) = (camera_point(dlv, li, lj, rig), camera_point(drv, ri, rj, rig)) else {
            continue;
        };
        let pr = pr_cam + view_offset(View::Right, rig);
        let diff = t.apply(&pl) - pr;
        let dist = diff.norm();
        value += weight * dist;
        if dist > 0.0 {
            let u = diff / dist;
            gl.add_at(li, lj, weight * (rt * u).dot(&(-pl / dlv)));
            gr.add_at(ri, rj, weight * (-u).dot(&(-pr_cam / drv)));
        }
    }
    if !value.is_finite() {
        return Err(Error::NumericalFailure { term: "gc3d".into(), detail: "non-finite distance".into() });
    }
    Ok(TermValueGrad { value, grad_dl: gl, grad_dr: gr, empty_mask: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::blind_mask;
    use rand::Rng;

    fn rig() -> CameraRig {
        CameraRig::centered(50.0, 2.0, 12, 16).unwrap()
    }

    #[test]
    fn principal_point_and_similar_triangles() {
        let rig = CameraRig::new(40.0, 5.0, 3.0, 2.0, 8, 60).unwrap();
        let z = 20.0;
        let d = DisparityField::constant(8, 60, rig.bf() / z).unwrap();
        let mask = BinaryMask::from_fn(8, 60, |i, j| (i, j) == (3, 5) || (i, j) == (3, 45));
        let (cloud, excluded) = backproject(&d, &rig, &mask, View::Left).unwrap();
        assert_eq!(excluded, 0);
        assert!((cloud.points[0] - Vector3::new(0.0, 0.0, z)).norm() < 1e-12);
        assert!((cloud.points[1] - Vector3::new(z, 0.0, z)).norm() < 1e-12);
        assert_eq!(cloud.source_pixel, vec![(3, 5), (3, 45)]);
    }

    #[test]
    fn fronto_plane_clouds_coincide() {
        let rig = rig();
        let disparity = 3.0;
        let d = DisparityField::constant(12, 16, disparity).unwrap();
        let (left, _) = backproject(&d, &rig, &blind_mask(&d, View::Left), View::Left).unwrap();
        let (right, _) = backproject(&d, &rig, &blind_mask(&d, View::Right), View::Right).unwrap();
        assert_eq!(left.len(), right.len());
        // Right pixel j sees the same surface point as left pixel j + d.
        for (p, (i, j)) in right.points.iter().zip(&right.source_pixel) {
            let k = left.source_pixel.iter().position(|px| *px == (*i, j + 3)).unwrap();
            assert!((p - left.points[k]).norm() < 1e-9);
        }
    }

    #[test]
    fn sub_epsilon_pixels_are_excluded() {
        let rig = rig();
        let d = DisparityField::from_fn(12, 16, |i, _| if i == 0 { 0.0 } else { 2.0 }).unwrap();
        let (cloud, excluded) = backproject(&d, &rig, &BinaryMask::ones(12, 16), View::Left).unwrap();
        assert_eq!(excluded, 16);
        assert_eq!(cloud.len(), 11 * 16);
    }

    fn random_cloud(n: usize, rng: &mut ChaCha8Rng) -> PointCloud {
        PointCloud::from_points(
            (0..n).map(|_| Vector3::new(rng.gen::<f64>(), 0.6 * rng.gen::<f64>(), 0.3 * rng.gen::<f64>())).collect(),
        )
    }

    #[test]
    fn subsample_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cloud = random_cloud(50, &mut rng);
        assert_eq!(subsample(&cloud, 50, 1).unwrap(), cloud);
        assert_eq!(subsample(&cloud, 80, 1).unwrap(), cloud);
        assert!(subsample(&cloud, 0, 1).is_err());
        assert!(subsample(&PointCloud::default(), 10, 1).unwrap().is_empty());

        let big = random_cloud(50_000, &mut rng);
        let a = subsample(&big, 1000, 42).unwrap();
        let b = subsample(&big, 1000, 42).unwrap();
        assert_eq!(a.len(), 1000);
        assert_eq!(a, b);
    }

    #[test]
    fn icp_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cloud = random_cloud(200, &mut rng);
        let r = icp(&cloud, &cloud, &IcpConfig::default()).unwrap();
        assert_eq!(r.iterations_used, 1);
        assert_eq!(r.residual, 0.0);
        assert_eq!(r.transform, RigidTransform::identity());
        assert!(r.converged);
    }

    #[test]
    fn icp_recovers_small_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let source = random_cloud(1000, &mut rng);
        let truth = RigidTransform::from_axis_angle(Vector3::y(), 5f64.to_radians(), Vector3::new(0.05, 0.0, 0.02));
        let target = source.transformed(&truth);
        let cfg = IcpConfig { max_iter: 50, tol: 1e-9 };
        let r = icp(&source, &target, &cfg).unwrap();
        let err = truth.inverse().compose(&r.transform);
        assert!(err.rotation_angle() < 1e-6);
        assert!(err.translation.norm() < 1e-6);
        assert!(r.residual < 1e-9);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.transform.is_proper(1e-9));
    }

    #[test]
    fn icp_interleaved_planes_leave_positive_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gap = 0.1;
        let mk = |z: f64, rng: &mut ChaCha8Rng| {
            PointCloud::from_points((0..400).map(|_| Vector3::new(rng.gen(), rng.gen(), z)).collect())
        };
        let a = mk(0.0, &mut rng);
        let mut b = mk(gap, &mut rng);
        b.points.extend(mk(-gap, &mut rng).points);
        let r = icp(&a, &b, &IcpConfig::default()).unwrap();
        // No rigid motion puts plane z=0 onto either of z = ±gap everywhere
        // while the points stay interleaved; the residual stays on the order
        // of the in-plane spacing and strictly above zero.
        assert!(r.residual > 0.0);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn icp_rejects_degenerate_clouds() {
        let line = PointCloud::from_points((0..10).map(|k| Vector3::new(k as f64, 0.0, 0.0)).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ok = random_cloud(10, &mut rng);
        assert!(matches!(icp(&line, &ok, &IcpConfig::default()), Err(Error::DegenerateGeometry(_))));
        assert!(matches!(icp(&ok, &line, &IcpConfig::default()), Err(Error::DegenerateGeometry(_))));
        let two = PointCloud::from_points(vec![Vector3::zeros(), Vector3::x()]);
        assert!(icp(&two, &ok, &IcpConfig::default()).is_err());
    }

    #[test]
    fn icp_residual_ignores_target_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let source = random_cloud(300, &mut rng);
        let target = random_cloud(300, &mut rng);
        let mut shuffled = target.clone();
        shuffled.points.reverse();
        let a = icp(&source, &target, &IcpConfig::default()).unwrap();
        let b = icp(&source, &shuffled, &IcpConfig::default()).unwrap();
        assert!((a.residual - b.residual).abs() < 1e-12);
    }

    #[test]
    fn consistent_plane_has_zero_loss() {
        let rig = rig();
        let d = DisparityField::constant(12, 16, 4.0).unwrap();
        let ml = blind_mask(&d, View::Left);
        let mr = blind_mask(&d, View::Right);
        let (term, frozen) = geometric_consistency_loss(&d, &d, &rig, &ml, &mr, &GeometryConfig::default()).unwrap();
        assert!(frozen.is_some());
        assert!(term.value < 1e-9);
        assert!(term.grad_dl.norm() < 1e-6 && term.grad_dr.norm() < 1e-6);
    }

    #[test]
    fn empty_cloud_is_flagged() {
        let rig = rig();
        let d = DisparityField::constant(12, 16, 4.0).unwrap();
        let (term, frozen) = geometric_consistency_loss(
            &d,
            &d,
            &rig,
            &BinaryMask::zeros(12, 16),
            &BinaryMask::ones(12, 16),
            &GeometryConfig::default(),
        )
        .unwrap();
        assert!(term.empty_mask && frozen.is_none());
        assert_eq!(term.value, 0.0);
    }
}
