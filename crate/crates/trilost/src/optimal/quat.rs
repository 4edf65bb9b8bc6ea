use nalgebra::Vector3;

use super::hs::finish_two_view;
use super::OptimalTwoView;
use crate::camera::{ImagePlanePoint, LosObservation};
use crate::error::{Error, Result};

/// Tolerance on attitude and intrinsics equality for the shared-camera check.
const SHARED_TOL: f64 = 1e-12;

/// Quadratic in the Lagrange multiplier for two points on one image.
#[derive(Debug, Clone, PartialEq)]
pub struct QuatCoeffs {
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub w1: f64,
    pub w2: f64,
    pub h2: f64,
    pub h1: f64,
    pub h0: f64,
}

impl QuatCoeffs {
    pub fn new(baseline_cam: &Vector3<f64>, w1: f64, w2: f64, x1: &ImagePlanePoint, x2: &ImagePlanePoint) -> Self {
        let (d, e, f) = (baseline_cam.x, baseline_cam.y, baseline_cam.z);
        let (xa, ya, xb, yb) = (x1.x, x1.y, x2.x, x2.y);
        let big_b = f * (xb * ya - xa * yb) + e * (xa - xb) + d * (yb - ya);
        let h2 = f * f * w1 * w2 * big_b;
        let h1 = -2.0
            * w1
            * w2
            * (f * f * (w1 * (xa * xa + ya * ya) + w2 * (xb * xb + yb * yb))
                - 2.0 * f * (d * (w1 * xa + w2 * xb) + e * (w1 * ya + w2 * yb))
                + (d * d + e * e) * (w1 + w2));
        let h0 = 4.0 * w1 * w1 * w2 * w2 * big_b;
        QuatCoeffs { d, e, f, w1, w2, h2, h1, h0 }
    }

    /// True when the quadratic term is too small to trust and the limit
    /// `λ = −h₀/h₁` is used instead.
    pub fn is_linear(&self) -> bool {
        self.h2.abs() < 1e-9 * self.h1.abs().max(self.h0.abs()).max(1.0)
    }

    /// Candidate multipliers (one in the linear case, otherwise up to two).
    pub fn lambdas(&self) -> Result<Vec<f64>> {
        if self.is_linear() {
            if self.h1 == 0.0 {
                return if self.h0 == 0.0 { Ok(vec![0.0]) } else { Err(Error::NoRealRoot) };
            }
            return Ok(vec![-self.h0 / self.h1]);
        }
        let mut disc = self.h1 * self.h1 - 4.0 * self.h2 * self.h0;
        if disc < 0.0 {
            if disc < -1e-12 * self.h1 * self.h1 {
                return Err(Error::NoRealRoot);
            }
            disc = 0.0;
        }
        let q = -0.5 * (self.h1 + self.h1.signum() * disc.sqrt());
        let mut out = vec![q / self.h2];
        if q != 0.0 {
            out.push(self.h0 / q);
        }
        Ok(out)
    }

    /// Stationary points for a given multiplier.
    pub fn corrected(&self, lambda: f64, x1: &ImagePlanePoint, x2: &ImagePlanePoint) -> Option<(ImagePlanePoint, ImagePlanePoint)> {
        let (d, e, f, w1, w2) = (self.d, self.e, self.f, self.w1, self.w2);
        let l = lambda;
        let den = f * f * l * l - 4.0 * w1 * w2;
        if den.abs() <= 1e-300 {
            return None;
        }
        let ww = 4.0 * w1 * w2;
        let a = ImagePlanePoint {
            x: (d * f * l * l + 2.0 * w2 * (e - f * x2.y) * l - ww * x1.x) / den,
            y: (e * f * l * l + 2.0 * w2 * (f * x2.x - d) * l - ww * x1.y) / den,
        };
        let b = ImagePlanePoint {
            x: (d * f * l * l + 2.0 * w1 * (f * x1.y - e) * l - ww * x2.x) / den,
            y: (e * f * l * l + 2.0 * w1 * (d - f * x1.x) * l - ww * x2.y) / den,
        };
        Some((a, b))
    }

    /// Coplanarity residual of two image-plane points with the baseline.
    pub fn constraint(&self, x1: &ImagePlanePoint, x2: &ImagePlanePoint) -> f64 {
        let (d, e, f) = (self.d, self.e, self.f);
        x1.x * (e - f * x2.y) + x1.y * (f * x2.x - d) + (d * x2.y - e * x2.x)
    }
}

fn shares_camera(ob1: &LosObservation, ob2: &LosObservation) -> bool {
    let dt = (ob1.attitude.matrix() - ob2.attitude.matrix()).abs().max();
    let k1 = ob1.intrinsics.k();
    let dk = (k1 - ob2.intrinsics.k()).abs().max();
    dt <= SHARED_TOL && dk <= SHARED_TOL * k1.abs().max().max(1.0)
}

/// Two points on a single image (shared attitude and intrinsics) seen from
/// two known landmarks: the camera position by a quadratic in λ.
pub fn quat_triangulate(ob1: &LosObservation, ob2: &LosObservation) -> Result<OptimalTwoView> {
    if !shares_camera(ob1, ob2) {
        return Err(Error::SharedCameraRequired);
    }
    let s1 = ob1.sigma_x_strict()?;
    let s2 = ob2.sigma_x_strict()?;
    let (w1, w2) = (1.0 / (s1 * s1), 1.0 / (s2 * s2));
    let wmax = w1.max(w2);
    let baseline = ob1.attitude.apply(&(ob2.anchor - ob1.anchor));
    let scale = ob1.anchor.norm().max(ob2.anchor.norm());
    if baseline.norm() <= 1e-12 * scale || baseline.norm() == 0.0 {
        return Err(Error::DegenerateBaseline);
    }
    let x1 = ImagePlanePoint::from_homogeneous(&ob1.xbar());
    let x2 = ImagePlanePoint::from_homogeneous(&ob2.xbar());
    let coeffs = QuatCoeffs::new(&baseline, w1 / wmax, w2 / wmax, &x1, &x2);

    let mut best: Option<(f64, ImagePlanePoint, ImagePlanePoint)> = None;
    for lambda in coeffs.lambdas()? {
        let Some((c1, c2)) = coeffs.corrected(lambda, &x1, &x2) else { continue };
        let cost = w1 * ((c1.x - x1.x).powi(2) + (c1.y - x1.y).powi(2)) + w2 * ((c2.x - x2.x).powi(2) + (c2.y - x2.y).powi(2));
        if cost.is_finite() && best.as_ref().is_none_or(|(bc, _, _)| cost < *bc) {
            best = Some((cost, c1, c2));
        }
    }
    let (cost, c1, c2) = best.ok_or(Error::NoRealRoot)?;
    finish_two_view(ob1, ob2, c1, c2, cost, None)
}
