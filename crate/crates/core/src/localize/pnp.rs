//! Camera pose from 3D-2D correspondences: RANSAC over a minimal
//! three-point solver, then Levenberg-Marquardt refinement of the
//! reprojection error on the consensus set.
//!
//! The minimal solver follows Grunert's formulation. With unit bearing rays
//! `r1, r2, r3` and unknown depths `s_i`, the law of cosines on each pair of
//! points gives three quadratic equations. Writing `s2 = u * s1` and
//! `s3 = v * s1` eliminates `s1`, the difference of two equations makes `u` a
//! rational function of `v`, and substituting back leaves a quartic in `v`.
//! The quartic is built here by polynomial arithmetic rather than from
//! expanded coefficient formulas.

use nalgebra::{DMatrix, Isometry3, Matrix3, Matrix6, Point2, Point3, Rotation3, Translation3, UnitQuaternion, Vector3, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::Intrinsics;
use crate::spatial::Pose;

use super::LocalizeError;

/// Fewest correspondences accepted by [`solve_pnp_ransac`].
pub const MIN_CORRESPONDENCES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnpConfig {
    /// Reprojection error in pixels below which a correspondence is an inlier.
    pub threshold_px: f64,
    pub max_iterations: usize,
    /// Probability of drawing at least one all-inlier sample; sets the
    /// adaptive iteration count.
    pub confidence: f64,
    /// Smallest consensus set accepted.
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for PnpConfig {
    fn default() -> Self {
        Self {
            threshold_px: 3.0,
            max_iterations: 1000,
            confidence: 0.999,
            min_inliers: MIN_CORRESPONDENCES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpSolution {
    /// Camera-to-world pose.
    pub pose: Pose,
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
    /// Root-mean-square reprojection error over inliers, in pixels.
    pub rms_px: f64,
}

/// Real roots of the polynomial with ascending coefficients `c`.
fn real_roots(c: &[f64]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let mut deg = c.len() - 1;
    while deg > 0 && c[deg].abs() <= 1e-14 * scale {
        deg -= 1;
    }
    if deg == 0 {
        return Vec::new();
    }
    let lead = c[deg];
    let mut companion = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        companion[(i, deg - 1)] = -c[i] / lead;
    }
    let eval = |x: f64| c[..=deg].iter().rev().fold((0.0, 0.0), |(p, dp), &k| (p * x + k, dp * x + p));
    companion
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..4 {
                let (p, dp) = eval(x);
                if dp == 0.0 {
                    break;
                }
                x -= p / dp;
            }
            x
        })
        .collect()
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &[f64], b: &[f64], k: f64) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, y) in b.iter().enumerate() {
        out[i] += k * y;
    }
    out
}

fn poly_eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, k| acc * x + k)
}

/// Rigid transform `T` with `T * world[i] ≈ cam[i]` in the least-squares sense.
fn kabsch(world: &[Point3<f64>], cam: &[Point3<f64>]) -> Option<Isometry3<f64>> {
    let n = world.len() as f64;
    let cw = world.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let cc = cam.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut h = Matrix3::zeros();
    for (w, c) in world.iter().zip(cam) {
        h += (w.coords - cw) * (c.coords - cc).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let t = cc - rot * cw;
    Some(Isometry3::from_parts(Translation3::from(t), rot))
}

/// All world-to-camera transforms consistent with three world points seen
/// along three unit rays.
pub fn p3p(world: &[Point3<f64>; 3], rays: &[Vector3<f64>; 3]) -> Vec<Isometry3<f64>> {
    let a2 = (world[1] - world[2]).norm_squared();
    let b2 = (world[0] - world[2]).norm_squared();
    let c2 = (world[0] - world[1]).norm_squared();
    if a2 == 0.0 || b2 == 0.0 || c2 == 0.0 {
        return Vec::new();
    }
    let cos_a = rays[1].dot(&rays[2]);
    let cos_b = rays[0].dot(&rays[2]);
    let cos_g = rays[0].dot(&rays[1]);
    // lengths relative to b
    let (a, c) = (a2 / b2, c2 / b2);
    let k = a - c;
    // u = n(v) / d(v)
    let n = [1.0 + k, -2.0 * k * cos_b, k - 1.0];
    let d = [2.0 * cos_g, -2.0 * cos_a];
    let one_minus_cw = [1.0 - c, 2.0 * c * cos_b, -c];
    let quartic = poly_add(
        &poly_add(&poly_mul(&n, &n), &poly_mul(&n, &d), -2.0 * cos_g),
        &poly_mul(&one_minus_cw, &poly_mul(&d, &d)),
        1.0,
    );
    let b = b2.sqrt();
    let mut out = Vec::new();
    for v in real_roots(&quartic) {
        let w = 1.0 + v * v - 2.0 * v * cos_b;
        let dv = poly_eval(&d, v);
        if w <= 0.0 || dv.abs() < 1e-12 {
            continue;
        }
        let u = poly_eval(&n, v) / dv;
        let s1 = b / w.sqrt();
        let s = [s1, u * s1, v * s1];
        if s.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            continue;
        }
        let cam = [
            Point3::from(rays[0] * s[0]),
            Point3::from(rays[1] * s[1]),
            Point3::from(rays[2] * s[2]),
        ];
        if let Some(t) = kabsch(world, &cam) {
            out.push(t);
        }
    }
    out
}

fn reprojection(k: &Intrinsics, t: &Isometry3<f64>, p: &Point3<f64>, px: &Point2<f64>) -> Option<f64> {
    let c = t * p;
    let (u, v) = k.project(&c)?;
    Some(((u - px.x).powi(2) + (v - px.y).powi(2)).sqrt())
}

/// Inlier mask and total squared error of inliers.
fn score(k: &Intrinsics, t: &Isometry3<f64>, pts: &[Point3<f64>], pix: &[Point2<f64>], thr: f64) -> (Vec<bool>, f64) {
    let mut mask = Vec::with_capacity(pts.len());
    let mut sse = 0.0;
    for (p, x) in pts.iter().zip(pix) {
        match reprojection(k, t, p, x) {
            Some(e) if e <= thr => {
                mask.push(true);
                sse += e * e;
            }
            _ => mask.push(false),
        }
    }
    (mask, sse)
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Levenberg-Marquardt on the summed squared reprojection error with a
/// left-multiplicative update `T <- exp(w) T + dt`.
fn refine(k: &Intrinsics, init: Isometry3<f64>, pts: &[Point3<f64>], pix: &[Point2<f64>]) -> Isometry3<f64> {
    let cost = |t: &Isometry3<f64>| -> f64 {
        pts.iter()
            .zip(pix)
            .map(|(p, x)| reprojection(k, t, p, x).map_or(f64::INFINITY, |e| e * e))
            .sum()
    };
    let mut t = init;
    let mut current = cost(&t);
    let mut lambda = 1e-3;
    for _ in 0..100 {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for (p, x) in pts.iter().zip(pix) {
            let c = t * p;
            if c.z <= 0.0 {
                continue;
            }
            let (iz, iz2) = (1.0 / c.z, 1.0 / (c.z * c.z));
            let r = [k.fx * c.x * iz + k.cx - x.x, k.fy * c.y * iz + k.cy - x.y];
            let dproj = nalgebra::Matrix2x3::new(k.fx * iz, 0.0, -k.fx * c.x * iz2, 0.0, k.fy * iz, -k.fy * c.y * iz2);
            let mut dc = nalgebra::Matrix3x6::<f64>::zeros();
            dc.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&c.coords)));
            dc.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
            let j = dproj * dc;
            jtj += j.transpose() * j;
            jtr += j.transpose() * nalgebra::Vector2::new(r[0], r[1]);
        }
        let mut improved = false;
        while lambda < 1e10 {
            let mut a = jtj;
            for i in 0..6 {
                a[(i, i)] += lambda * (1.0 + jtj[(i, i)]);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let w = Vector3::new(step[0], step[1], step[2]);
            let dt = Vector3::new(step[3], step[4], step[5]);
            let dr = UnitQuaternion::from_scaled_axis(w);
            let cand = Isometry3::from_parts(Translation3::from(dr * t.translation.vector + dt), dr * t.rotation);
            let c = cost(&cand);
            if c < current {
                let converged = step.norm() < 1e-12 || current - c < 1e-15 * (1.0 + current);
                t = cand;
                current = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = !converged;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    t
}

/// Rejects point sets with no spread off a single line.
fn check_not_collinear(pts: &[Point3<f64>]) -> Result<(), LocalizeError> {
    let n = pts.len() as f64;
    let mean = pts.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p.coords - mean;
        cov += d * d.transpose();
    }
    let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0] <= 0.0 || ev[1] <= 1e-12 * ev[0] {
        return Err(LocalizeError::DegenerateConfiguration("world points are collinear".into()));
    }
    Ok(())
}

fn adaptive_iterations(inlier_ratio: f64, confidence: f64, cap: usize) -> usize {
    let w3 = inlier_ratio.powi(3);
    if w3 >= 1.0 {
        return 1;
    }
    if w3 <= 0.0 {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - w3).ln();
    if n.is_finite() {
        (n.ceil() as usize).clamp(1, cap)
    } else {
        cap
    }
}

/// Estimates the camera-to-world pose from world points and their pixels.
/// Deterministic for a fixed `cfg.seed`.
pub fn solve_pnp_ransac(
    points: &[Point3<f64>],
    pixels: &[Point2<f64>],
    k: &Intrinsics,
    cfg: &PnpConfig,
) -> Result<PnpSolution, LocalizeError> {
    let n = points.len();
    if pixels.len() != n {
        return Err(LocalizeError::DegenerateConfiguration(format!(
            "{n} points but {} pixels",
            pixels.len()
        )));
    }
    if n < MIN_CORRESPONDENCES {
        return Err(LocalizeError::TooFewCorrespondences {
            needed: MIN_CORRESPONDENCES,
            got: n,
        });
    }
    check_not_collinear(points)?;
    let rays: Vec<Vector3<f64>> = pixels.iter().map(|p| k.unproject(p.x, p.y).normalize()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, f64, Isometry3<f64>)> = None;
    let mut needed = cfg.max_iterations;
    let mut it = 0;
    while it < needed {
        it += 1;
        let idx = sample(&mut rng, n, 3);
        let (i, j, l) = (idx.index(0), idx.index(1), idx.index(2));
        let tri = [points[i], points[j], points[l]];
        if (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).norm() < 1e-12 {
            continue;
        }
        for t in p3p(&tri, &[rays[i], rays[j], rays[l]]) {
            let (mask, sse) = score(k, &t, points, pixels, cfg.threshold_px);
            let count = mask.iter().filter(|m| **m).count();
            let better = match &best {
                None => true,
                Some((bc, bs, _)) => count > *bc || (count == *bc && sse < *bs),
            };
            if better {
                best = Some((count, sse, t));
                needed = adaptive_iterations(count as f64 / n as f64, cfg.confidence, cfg.max_iterations);
            }
        }
    }
    let Some((count, _, t)) = best else {
        return Err(LocalizeError::DegenerateConfiguration("no minimal sample produced a pose".into()));
    };
    if count < cfg.min_inliers.max(3) {
        return Err(LocalizeError::DegenerateConfiguration(format!(
            "consensus of {count} is below the minimum {}",
            cfg.min_inliers
        )));
    }
    let mut t = t;
    let mut mask = score(k, &t, points, pixels, cfg.threshold_px).0;
    for _ in 0..3 {
        let (ip, ix): (Vec<_>, Vec<_>) = points
            .iter()
            .zip(pixels)
            .zip(&mask)
            .filter(|(_, m)| **m)
            .map(|((p, x), _)| (*p, *x))
            .unzip();
        let refined = refine(k, t, &ip, &ix);
        let (new_mask, _) = score(k, &refined, points, pixels, cfg.threshold_px);
        let grown = new_mask.iter().filter(|m| **m).count() >= mask.iter().filter(|m| **m).count();
        if !grown {
            break;
        }
        let stable = new_mask == mask;
        t = refined;
        mask = new_mask;
        if stable {
            break;
        }
    }
    let (inlier_count, sse) = points
        .iter()
        .zip(pixels)
        .zip(&mask)
        .filter(|(_, m)| **m)
        .fold((0usize, 0.0), |(c, s), ((p, x), _)| {
            (c + 1, s + reprojection(k, &t, p, x).map_or(0.0, |e| e * e))
        });
    Ok(PnpSolution {
        pose: Pose::from_isometry(&t.inverse()),
        inliers: mask,
        inlier_count,
        rms_px: (sse / inlier_count.max(1) as f64).sqrt(),
    })
}
