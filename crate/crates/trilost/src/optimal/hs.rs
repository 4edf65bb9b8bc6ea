use nalgebra::{DMatrix, Matrix2x3, Matrix3, Vector3};

use super::poly;
use super::{companion, lost_gamma, OptimalTwoView};
use crate::camera::{ImagePlanePoint, LosObservation, K_AXIS};
use crate::error::{Error, Result};
use crate::geometry::{skew, sqrt_info_covariance, SolverOptions};
use crate::linear::{dlt_triangulate, LosNormalization};

/// Epipolar geometry of two views after moving each measured point to the
/// origin and rotating its epipole onto the first axis.
#[derive(Debug, Clone, PartialEq)]
pub struct EpipolarSetup {
    /// Unit epipoles (homogeneous image-plane directions).
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub m1: Matrix3<f64>,
    pub m2: Matrix3<f64>,
    /// Essential matrix `x̄₂ᵀ E x̄₁ = 0` built from unit epipole and attitudes.
    pub essential: Matrix3<f64>,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub f1: f64,
    pub f2: f64,
}

/// Maps the measured point to the origin and the epipole onto `(1, 0, f)`.
fn normalizing_map(e: &Vector3<f64>, x: &Vector3<f64>) -> Result<(Matrix3<f64>, f64, f64)> {
    let cr = e.cross(x);
    let k = cr.x.hypot(cr.y);
    if k <= 1e-14 * e.norm() * x.norm() {
        return Err(Error::DegenerateGeometry("measured point coincides with the epipole"));
    }
    // Of the two sign pairs, this one leaves the rotated epipole with a
    // positive first component.
    let (s, c) = (-cr.x / k, -cr.y / k);
    let (px, py) = (x.x, x.y);
    let m = Matrix3::new(c, -s, py * s - px * c, s, c, -py * c - px * s, 0.0, 0.0, 1.0);
    let ep = m * e;
    Ok((m, s.atan2(c), ep.z / ep.x))
}

pub fn epipolar_setup(ob1: &LosObservation, ob2: &LosObservation) -> Result<EpipolarSetup> {
    let base = ob2.anchor - ob1.anchor;
    let scale = ob1.anchor.norm().max(ob2.anchor.norm());
    if base.norm() <= 1e-12 * scale || base.norm() == 0.0 {
        return Err(Error::CoincidentCameras);
    }
    let t1 = ob1.attitude.matrix();
    let t2 = ob2.attitude.matrix();
    let e1 = (t1 * base).normalize();
    let e2 = (t2 * (-base)).normalize();
    let x1 = ob1.xbar();
    let x2 = ob2.xbar();
    let (m1, alpha1, f1) = normalizing_map(&e1, &x1)?;
    let (m2, alpha2, f2) = normalizing_map(&e2, &x2)?;
    let essential = t2 * t1.transpose() * skew(&e1);
    let m1i = m1.try_inverse().ok_or(Error::DegenerateGeometry("singular normalizing map"))?;
    let m2i = m2.try_inverse().ok_or(Error::DegenerateGeometry("singular normalizing map"))?;
    let ep = m2i.transpose() * essential * m1i;
    let (a, b, c, d) = (ep[(1, 1)], ep[(1, 2)], ep[(2, 1)], ep[(2, 2)]);
    let s = a.abs().max(b.abs()).max(c.abs()).max(d.abs());
    if s == 0.0 {
        return Err(Error::DegenerateGeometry("vanishing reduced essential matrix"));
    }
    Ok(EpipolarSetup {
        e1,
        e2,
        alpha1,
        alpha2,
        m1,
        m2,
        essential,
        a: a / s,
        b: b / s,
        c: c / s,
        d: d / s,
        f1,
        f2,
    })
}

impl EpipolarSetup {
    /// The reduced essential matrix implied by `{a, b, c, d, f₁, f₂}`.
    pub fn reduced(&self) -> Matrix3<f64> {
        let (a, b, c, d, f1, f2) = (self.a, self.b, self.c, self.d, self.f1, self.f2);
        Matrix3::new(f1 * f2 * d, -f2 * c, -f2 * d, -f1 * b, a, b, -f1 * d, c, d)
    }

    /// Weighted squared distance of the two measured points to a pair of
    /// corresponding epipolar lines parameterized by `t`.
    pub fn cost(&self, w1: f64, w2: f64, t: f64) -> f64 {
        let (a, b, c, d, f1, f2) = (self.a, self.b, self.c, self.d, self.f1, self.f2);
        let p = a * t + b;
        let q = c * t + d;
        w1 * t * t / (1.0 + (t * f1).powi(2)) + w2 * q * q / (p * p + f2 * f2 * q * q)
    }

    /// Limit of the cost as `t → ∞`.
    pub fn cost_at_infinity(&self, w1: f64, w2: f64) -> f64 {
        let (a, c, f1, f2) = (self.a, self.c, self.f1, self.f2);
        if f1 == 0.0 {
            return f64::INFINITY;
        }
        let den = a * a + f2 * f2 * c * c;
        let second = if den == 0.0 { 1.0 / (f2 * f2) } else { c * c / den };
        w1 / (f1 * f1) + w2 * second
    }

    /// Corrected points for a finite `t`, or the asymptote when `None`.
    pub fn corrected_points(&self, t: Option<f64>) -> Result<(ImagePlanePoint, ImagePlanePoint)> {
        let (a, b, c, d, f1, f2) = (self.a, self.b, self.c, self.d, self.f1, self.f2);
        let (x1p, x2p) = match t {
            Some(t) => {
                let p = a * t + b;
                let q = c * t + d;
                (
                    Vector3::new(f1 * t * t, t, f1 * f1 * t * t + 1.0),
                    Vector3::new(f2 * q * q, -p * q, f2 * f2 * q * q + p * p),
                )
            }
            None => (
                Vector3::new(f1, 0.0, f1 * f1),
                Vector3::new(f2 * c * c, -a * c, f2 * f2 * c * c + a * a),
            ),
        };
        let back = |m: &Matrix3<f64>, v: Vector3<f64>| -> Result<ImagePlanePoint> {
            let h = m.try_inverse().ok_or(Error::DegenerateGeometry("singular normalizing map"))? * v;
            if h.z.abs() <= 1e-300 || !h.iter().all(|x| x.is_finite()) {
                return Err(Error::DegenerateGeometry("corrected point at infinity"));
            }
            Ok(ImagePlanePoint::from_homogeneous(&h))
        };
        Ok((back(&self.m1, x1p)?, back(&self.m2, x2p)?))
    }
}

/// Coefficients `g₀…g₆` of the stationarity polynomial of the two-view cost.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySix {
    pub coeffs: [f64; 7],
}

impl PolySix {
    pub fn new(s: &EpipolarSetup, w1: f64, w2: f64) -> Self {
        let (a, b, c, d, f1, f2) = (s.a, s.b, s.c, s.d, s.f1, s.f2);
        let p = [b, a];
        let q = [d, c];
        let big_q = poly::add(&poly::mul(&p, &p), &poly::scale(&poly::mul(&q, &q), f2 * f2));
        let left = poly::scale(&poly::mul(&[0.0, 1.0], &poly::mul(&big_q, &big_q)), w1);
        let r = [1.0, 0.0, f1 * f1];
        let right = poly::scale(&poly::mul(&poly::mul(&r, &r), &poly::mul(&p, &q)), w2 * (a * d - b * c));
        let g = poly::add(&left, &poly::scale(&right, -1.0));
        let mut coeffs = [0.0; 7];
        for (k, v) in g.iter().enumerate().take(7) {
            coeffs[k] = *v;
        }
        PolySix { coeffs }
    }

    pub fn eval(&self, t: f64) -> f64 {
        poly::eval(&self.coeffs, t)
    }

    /// The defining expression, evaluated directly (for cross-checks).
    pub fn reference(s: &EpipolarSetup, w1: f64, w2: f64, t: f64) -> f64 {
        let (a, b, c, d, f1, f2) = (s.a, s.b, s.c, s.d, s.f1, s.f2);
        let p = a * t + b;
        let q = c * t + d;
        w1 * t * (p * p + f2 * f2 * q * q).powi(2) - w2 * (1.0 + (t * f1).powi(2)).powi(2) * (a * d - b * c) * p * q
    }

    pub fn real_roots(&self) -> Vec<f64> {
        poly::real_roots(&self.coeffs)
    }
}

/// Optimal two-view triangulation with weights `w₁, w₂` on the image-plane
/// residuals (default `1/σ_x²`).
pub fn hs_triangulate(ob1: &LosObservation, ob2: &LosObservation, weights: Option<(f64, f64)>) -> Result<OptimalTwoView> {
    let (w1, w2) = match weights {
        Some(w) => w,
        None => {
            let s1 = ob1.sigma_x_strict()?;
            let s2 = ob2.sigma_x_strict()?;
            (1.0 / (s1 * s1), 1.0 / (s2 * s2))
        }
    };
    if !(w1 > 0.0 && w2 > 0.0) {
        return Err(Error::InvalidInput("weights must be positive".into()));
    }
    let wmax = w1.max(w2);
    let (w1n, w2n) = (w1 / wmax, w2 / wmax);
    let setup = epipolar_setup(ob1, ob2)?;
    let poly = PolySix::new(&setup, w1n, w2n);

    let mut best: Option<(f64, Option<f64>)> = None;
    let mut consider = |cost: f64, t: Option<f64>| {
        let better = match best {
            None => cost.is_finite(),
            Some((bc, bt)) => {
                cost < bc || (cost == bc && t.map_or(f64::INFINITY, f64::abs) < bt.map_or(f64::INFINITY, f64::abs))
            }
        };
        if better {
            best = Some((cost, t));
        }
    };
    for t in poly.real_roots() {
        consider(setup.cost(w1n, w2n, t), Some(t));
    }
    consider(setup.cost_at_infinity(w1n, w2n), None);
    let (cost, t) = best.ok_or(Error::NoRealRoot)?;
    let (x1, x2) = setup.corrected_points(t)?;
    finish_two_view(ob1, ob2, x1, x2, cost * wmax, t)
}

pub(crate) fn finish_two_view(
    ob1: &LosObservation,
    ob2: &LosObservation,
    x1: ImagePlanePoint,
    x2: ImagePlanePoint,
    cost: f64,
    t: Option<f64>,
) -> Result<OptimalTwoView> {
    let corrected = [ob1.with_image_point(&x1), ob2.with_image_point(&x2)];
    let mut estimate = dlt_triangulate(&corrected, LosNormalization::ImagePlane, SolverOptions::default())?;
    estimate.covariance = two_view_covariance(ob1, ob2).ok();
    Ok(OptimalTwoView { corrected: [x1, x2], estimate, t, cost })
}

fn two_view_covariance(ob1: &LosObservation, ob2: &LosObservation) -> Result<Matrix3<f64>> {
    hs_covariance(ob1, ob2).or_else(|_| super::lost_covariance(&[ob1.clone(), ob2.clone()]))
}

/// `(1/γ) S K [k×][x̄×] T`: pixel Jacobian with respect to the unknown position.
pub fn reprojection_jacobian(ob: &LosObservation, gamma: f64) -> Matrix2x3<f64> {
    let full = ob.intrinsics.k() * skew(&K_AXIS) * skew(&ob.xbar()) * ob.attitude.matrix() / gamma;
    full.fixed_view::<2, 3>(0, 0).into_owned()
}

/// `[Σ Aᵢᵀ R_uᵢ⁻¹ Aᵢ]⁻¹` for the two-view problem, from the whitened
/// Jacobians `Lᵢ⁻¹Aᵢ` with `R_uᵢ = LᵢLᵢᵀ`.
pub fn hs_covariance(ob1: &LosObservation, ob2: &LosObservation) -> Result<Matrix3<f64>> {
    let obs = [ob1.clone(), ob2.clone()];
    let mut stacked = DMatrix::zeros(4, 3);
    for (i, ob) in obs.iter().enumerate() {
        if !ob.intrinsics.is_square() {
            return Err(Error::NonSquarePixels);
        }
        let gamma = lost_gamma(&obs, i, companion(i, 2))?;
        let a = reprojection_jacobian(ob, gamma);
        let white = ob
            .pixel_cov
            .cholesky_l()
            .solve_lower_triangular(&a)
            .ok_or(Error::InvalidInput("singular pixel covariance".into()))?;
        stacked.fixed_view_mut::<2, 3>(2 * i, 0).copy_from(&white);
    }
    sqrt_info_covariance(&stacked)
}
