#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use trilost::camera::{CameraIntrinsics, LosObservation, PixelCovariance, PixelPoint};
use trilost::geometry::Rotation;

pub fn lcam() -> CameraIntrinsics {
    CameraIntrinsics::new(512.0, 512.0, 0.0, 512.0, 512.0).unwrap()
}

pub fn unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        if v.norm() > 1e-3 {
            return v.normalize();
        }
    }
}

/// A camera at `observer` pointed near `target`, off boresight by up to ~20°.
pub fn attitude_towards<R: Rng>(rng: &mut R, observer: &Vector3<f64>, target: &Vector3<f64>) -> Rotation {
    let dir = (target - observer).normalize();
    let tilt = (dir + 0.3 * unit(rng)).normalize();
    Rotation::look_along(&tilt, &unit(rng)).unwrap()
}

/// Random resection geometry: an observer near the origin and `n` anchors at
/// heterogeneous ranges, each seen by its own camera attitude.
pub fn random_geometry<R: Rng>(rng: &mut R, n: usize, sigma_px: f64) -> (Vector3<f64>, Vec<LosObservation>) {
    loop {
        let truth = Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let mut obs = Vec::with_capacity(n);
        for _ in 0..n {
            let range = rng.random_range(50.0..2000.0);
            let anchor = truth + range * unit(rng);
            let t = attitude_towards(rng, &truth, &anchor);
            let cov = PixelCovariance::isotropic(sigma_px).unwrap();
            match LosObservation::synthesize(&truth, &anchor, lcam(), t, cov) {
                Some(o) => obs.push(o),
                None => break,
            }
        }
        if obs.len() == n && well_separated(&obs) {
            return (truth, obs);
        }
    }
}

/// Two anchors seen on one image: shared attitude and intrinsics.
pub fn random_single_image<R: Rng>(rng: &mut R, sigma_px: f64) -> (Vector3<f64>, [LosObservation; 2]) {
    loop {
        let truth = Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let bore = unit(rng);
        let t = Rotation::look_along(&bore, &unit(rng)).unwrap();
        let cov = PixelCovariance::isotropic(sigma_px).unwrap();
        let mk = |rng: &mut R| {
            let dir = (bore + 0.6 * unit(rng)).normalize();
            truth + rng.random_range(50.0..2000.0) * dir
        };
        let (p1, p2) = (mk(rng), mk(rng));
        let a = LosObservation::synthesize(&truth, &p1, lcam(), t, cov);
        let b = LosObservation::synthesize(&truth, &p2, lcam(), t, cov);
        if let (Some(a), Some(b)) = (a, b) {
            let pair = vec![a.clone(), b.clone()];
            if well_separated(&pair) {
                return (truth, [a, b]);
            }
        }
    }
}

fn well_separated(obs: &[LosObservation]) -> bool {
    for i in 0..obs.len() {
        for j in (i + 1)..obs.len() {
            let (a, b) = (obs[i].los_local().normalize(), obs[j].los_local().normalize());
            if a.cross(&b).norm() < 0.05 {
                return false;
            }
        }
    }
    true
}

pub fn noisy<R: Rng>(rng: &mut R, obs: &[LosObservation]) -> Vec<LosObservation> {
    obs.iter()
        .map(|o| {
            let l = o.pixel_cov.cholesky_l();
            let z = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            let e = l * z;
            o.with_pixel(PixelPoint::new(o.pixel.u + e.x, o.pixel.v + e.y))
        })
        .collect()
}

pub fn rel(a: &Vector3<f64>, b: &Vector3<f64>, scale: f64) -> f64 {
    (a - b).norm() / scale.max(1e-300)
}

/// Scene scale used for relative error: the largest anchor-to-truth range.
pub fn scene_scale(truth: &Vector3<f64>, obs: &[LosObservation]) -> f64 {
    obs.iter().map(|o| (o.anchor - truth).norm()).fold(truth.norm(), f64::max)
}

pub fn mat_rel(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm())
}

fn project(o: &LosObservation, r: &Vector3<f64>) -> (Vector2<f64>, nalgebra::Matrix2x3<f64>) {
    let v = o.attitude.apply(&(o.anchor - r));
    let k = o.intrinsics.k();
    let h = k * v;
    let u = Vector2::new(h.x / h.z, h.y / h.z);
    // d(h/hz)/dr with dh/dr = −K T
    let dh = -k * o.attitude.matrix();
    let mut j = nalgebra::Matrix2x3::zeros();
    for c in 0..3 {
        j[(0, c)] = (dh[(0, c)] * h.z - h.x * dh[(2, c)]) / (h.z * h.z);
        j[(1, c)] = (dh[(1, c)] * h.z - h.y * dh[(2, c)]) / (h.z * h.z);
    }
    (u, j)
}

pub fn reprojection_cost(obs: &[LosObservation], r: &Vector3<f64>) -> f64 {
    obs.iter()
        .map(|o| {
            let (u, _) = project(o, r);
            let e = Vector2::new(o.pixel.u, o.pixel.v) - u;
            let w: Matrix2<f64> = o.pixel_cov.matrix().try_inverse().unwrap();
            (e.transpose() * w * e)[0]
        })
        .sum()
}

/// Weighted pixel-reprojection Gauss–Newton from one start.
pub fn gauss_newton(obs: &[LosObservation], start: Vector3<f64>) -> Vector3<f64> {
    let mut r = start;
    for _ in 0..100 {
        let mut h = Matrix3::zeros();
        let mut g = Vector3::zeros();
        for o in obs {
            let (u, j) = project(o, &r);
            let e = Vector2::new(o.pixel.u, o.pixel.v) - u;
            let w: Matrix2<f64> = o.pixel_cov.matrix().try_inverse().unwrap();
            h += j.transpose() * w * j;
            g += j.transpose() * w * e;
        }
        let Some(step) = h.cholesky().map(|c| c.solve(&g)) else { break };
        r += step;
        if step.norm() <= 1e-14 * r.norm().max(1.0) {
            break;
        }
    }
    r
}

/// Best of several Gauss–Newton runs started around `seed`.
pub fn multi_start_gn<R: Rng>(rng: &mut R, obs: &[LosObservation], seed: Vector3<f64>, spread: f64) -> Vector3<f64> {
    let mut best = gauss_newton(obs, seed);
    let mut best_cost = reprojection_cost(obs, &best);
    for _ in 0..4 {
        let s = seed + spread * unit(rng);
        let r = gauss_newton(obs, s);
        let c = reprojection_cost(obs, &r);
        if c.is_finite() && c < best_cost {
            best = r;
            best_cost = c;
        }
    }
    best
}
