//! Pinhole camera model and the measurement covariances that flow from
//! pixel noise into image-plane points and unit line-of-sight vectors.

use nalgebra::{Matrix2, Matrix3, Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{skew, Rotation};

/// Selector for the third camera axis.
pub const K_AXIS: Vector3<f64> = Vector3::new(0.0, 0.0, 1.0);

/// `S = [I₂ | 0]`, written out as a 3×2 `Sᵀ`.
pub(crate) fn s_transpose() -> Matrix3x2<f64> {
    Matrix3x2::new(1.0, 0.0, 0.0, 1.0, 0.0, 0.0)
}

/// `SᵀS = diag(1, 1, 0)`.
pub(crate) fn sts() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub dx: f64,
    pub dy: f64,
    #[serde(default)]
    pub alpha: f64,
    pub up: f64,
    pub vp: f64,
}

impl CameraIntrinsics {
    pub fn new(dx: f64, dy: f64, alpha: f64, up: f64, vp: f64) -> Result<Self> {
        let k = CameraIntrinsics { dx, dy, alpha, up, vp };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.dx, self.dy, self.alpha, self.up, self.vp];
        if !all.iter().all(|v| v.is_finite()) || !(self.dx > 0.0 && self.dy > 0.0) {
            return Err(Error::InvalidInput(format!("bad intrinsics {self:?}")));
        }
        Ok(())
    }

    /// Square-pixel camera with `pixels` across a full field of view of
    /// `fov_deg`, principal point at the detector center.
    pub fn from_fov(fov_deg: f64, pixels: f64) -> Result<Self> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) || !(pixels > 0.0) {
            return Err(Error::InvalidInput(format!("fov {fov_deg} deg, {pixels} px")));
        }
        let d = 0.5 * pixels / (0.5 * fov_deg.to_radians()).tan();
        Self::new(d, d, 0.0, 0.5 * pixels, 0.5 * pixels)
    }

    /// Square-pixel camera from a field of view and an instantaneous field
    /// of view (radians per pixel at boresight).
    pub fn from_fov_ifov(fov_deg: f64, ifov_rad: f64) -> Result<Self> {
        if !(ifov_rad > 0.0) {
            return Err(Error::InvalidInput(format!("ifov {ifov_rad}")));
        }
        let d = 1.0 / ifov_rad;
        let pixels = 2.0 * d * (0.5 * fov_deg.to_radians()).tan();
        Self::from_fov(fov_deg, pixels)
    }

    pub fn k(&self) -> Matrix3<f64> {
        Matrix3::new(self.dx, self.alpha, self.up, 0.0, self.dy, self.vp, 0.0, 0.0, 1.0)
    }

    /// Closed-form inverse of the upper-triangular calibration matrix.
    pub fn k_inv(&self) -> Matrix3<f64> {
        let (dx, dy, a, up, vp) = (self.dx, self.dy, self.alpha, self.up, self.vp);
        Matrix3::new(
            1.0 / dx,
            -a / (dx * dy),
            (a * vp - dy * up) / (dx * dy),
            0.0,
            1.0 / dy,
            -vp / dy,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn is_square(&self) -> bool {
        self.dx == self.dy && self.alpha == 0.0
    }

    /// Projects a camera-frame direction to pixels. `None` behind the camera.
    pub fn project(&self, v_cam: &Vector3<f64>) -> Option<PixelPoint> {
        if !(v_cam.z > 0.0) {
            return None;
        }
        let x = v_cam / v_cam.z;
        let u = self.k() * x;
        Some(PixelPoint { u: u.x, v: u.y })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        PixelPoint { u, v }
    }
    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagePlanePoint {
    pub x: f64,
    pub y: f64,
}

impl ImagePlanePoint {
    pub fn new(x: f64, y: f64) -> Self {
        ImagePlanePoint { x, y }
    }
    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, 1.0)
    }
    pub fn from_homogeneous(v: &Vector3<f64>) -> Self {
        ImagePlanePoint { x: v.x / v.z, y: v.y / v.z }
    }
}

/// Pixel-noise covariance `R_u` (pixels²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCovariance(Matrix2<f64>);

impl PixelCovariance {
    pub fn new(m: Matrix2<f64>) -> Result<Self> {
        let scale = m.abs().max();
        if !m.iter().all(|v| v.is_finite()) || (m[(0, 1)] - m[(1, 0)]).abs() > 1e-14 * scale {
            return Err(Error::InvalidInput("pixel covariance not symmetric".into()));
        }
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        if !(m[(0, 0)] > 0.0 && det > 0.0) {
            return Err(Error::InvalidInput("pixel covariance not positive definite".into()));
        }
        Ok(PixelCovariance(m))
    }

    pub fn isotropic(sigma_px: f64) -> Result<Self> {
        if !(sigma_px > 0.0 && sigma_px.is_finite()) {
            return Err(Error::InvalidInput(format!("pixel sigma {sigma_px}")));
        }
        Ok(PixelCovariance(Matrix2::identity() * sigma_px * sigma_px))
    }

    pub fn matrix(&self) -> &Matrix2<f64> {
        &self.0
    }

    /// σ_u when the covariance is a scalar multiple of the identity.
    pub fn scalar_sigma(&self) -> Option<f64> {
        let m = &self.0;
        let tol = 1e-12 * m.trace();
        if m[(0, 1)].abs() <= tol && (m[(0, 0)] - m[(1, 1)]).abs() <= tol {
            Some(m[(0, 0)].sqrt())
        } else {
            None
        }
    }

    /// Lower Cholesky factor, used to colour standard normal draws.
    pub fn cholesky_l(&self) -> Matrix2<f64> {
        let m = &self.0;
        let l00 = m[(0, 0)].sqrt();
        let l10 = m[(1, 0)] / l00;
        let l11 = (m[(1, 1)] - l10 * l10).sqrt();
        Matrix2::new(l00, 0.0, l10, l11)
    }
}

/// One pixel measurement of a line of sight.
///
/// For resection the anchor is the known observed point and the unknown is
/// the observer; for intersection the anchor is the camera center and the
/// unknown is the observed point. The algebra is identical.
#[derive(Debug, Clone, PartialEq)]
pub struct LosObservation {
    pub pixel: PixelPoint,
    pub intrinsics: CameraIntrinsics,
    /// Maps localization-frame vectors into the camera frame.
    pub attitude: Rotation,
    pub anchor: Vector3<f64>,
    pub pixel_cov: PixelCovariance,
}

impl LosObservation {
    pub fn new(
        pixel: PixelPoint,
        intrinsics: CameraIntrinsics,
        attitude: Rotation,
        anchor: Vector3<f64>,
        pixel_cov: PixelCovariance,
    ) -> Result<Self> {
        intrinsics.validate()?;
        if !(pixel.u.is_finite() && pixel.v.is_finite()) || !anchor.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite pixel or anchor".into()));
        }
        Ok(LosObservation { pixel, intrinsics, attitude, anchor, pixel_cov })
    }

    /// Noise-free observation of `target` seen from `observer` (resection
    /// geometry: anchor = target). Returns `None` when behind the camera.
    pub fn synthesize(
        observer: &Vector3<f64>,
        target: &Vector3<f64>,
        intrinsics: CameraIntrinsics,
        attitude: Rotation,
        pixel_cov: PixelCovariance,
    ) -> Option<Self> {
        let v = attitude.apply(&(target - observer));
        let pixel = intrinsics.project(&v)?;
        Some(LosObservation { pixel, intrinsics, attitude, anchor: *target, pixel_cov })
    }

    /// Homogeneous image-plane point `x̄ = K⁻¹ū`.
    pub fn xbar(&self) -> Vector3<f64> {
        pixel_to_image_plane(&self.intrinsics, &self.pixel).homogeneous()
    }

    /// Unit line of sight in the camera frame.
    pub fn unit_los(&self) -> Vector3<f64> {
        image_plane_to_unit_vector(&pixel_to_image_plane(&self.intrinsics, &self.pixel))
    }

    /// `Tᵀ x̄`: the (unnormalized) line of sight in the localization frame.
    pub fn los_local(&self) -> Vector3<f64> {
        self.attitude.matrix().transpose() * self.xbar()
    }

    /// `R_x̄` for this observation.
    pub fn image_plane_cov(&self) -> Matrix3<f64> {
        image_plane_covariance(&self.intrinsics, &self.pixel_cov)
    }

    /// 2×2 image-plane covariance `R_x = S R_x̄ Sᵀ`.
    pub fn image_cov_2d(&self) -> Matrix2<f64> {
        self.image_plane_cov().fixed_view::<2, 2>(0, 0).into_owned()
    }

    /// σ_x when `R_x = σ_x² I₂`.
    pub fn isotropic_sigma_x(&self) -> Option<f64> {
        let r = self.image_cov_2d();
        let tol = 1e-12 * r.trace();
        if r[(0, 1)].abs() <= tol && (r[(0, 0)] - r[(1, 1)]).abs() <= tol {
            Some(r[(0, 0)].sqrt())
        } else {
            None
        }
    }

    /// σ_x for solvers that need square pixels and isotropic pixel noise.
    pub fn sigma_x_strict(&self) -> Result<f64> {
        if !self.intrinsics.is_square() {
            return Err(Error::NonSquarePixels);
        }
        let su = self.pixel_cov.scalar_sigma().ok_or(Error::NonIsotropicNoise)?;
        Ok(su / self.intrinsics.dx)
    }

    /// Copy of this observation measuring a different image-plane point.
    pub fn with_image_point(&self, x: &ImagePlanePoint) -> Self {
        let u = self.intrinsics.k() * x.homogeneous();
        LosObservation { pixel: PixelPoint { u: u.x, v: u.y }, ..self.clone() }
    }

    pub fn with_pixel(&self, pixel: PixelPoint) -> Self {
        LosObservation { pixel, ..self.clone() }
    }
}

pub fn pixel_to_image_plane(k: &CameraIntrinsics, u: &PixelPoint) -> ImagePlanePoint {
    let kinv = k.k_inv();
    let x = kinv[(0, 0)] * u.u + kinv[(0, 1)] * u.v + kinv[(0, 2)];
    let y = kinv[(1, 1)] * u.v + kinv[(1, 2)];
    ImagePlanePoint { x, y }
}

pub fn image_plane_to_pixel(k: &CameraIntrinsics, x: &ImagePlanePoint) -> PixelPoint {
    PixelPoint { u: k.dx * x.x + k.alpha * x.y + k.up, v: k.dy * x.y + k.vp }
}

pub fn image_plane_to_unit_vector(x: &ImagePlanePoint) -> Vector3<f64> {
    x.homogeneous().normalize()
}

/// Isotropic unit-vector covariance `σ²(I − aaᵀ)`.
pub fn qmm_covariance(a: &Vector3<f64>, sigma_theta: f64) -> Result<Matrix3<f64>> {
    let norm = a.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::NotUnit { norm });
    }
    Ok(sigma_theta * sigma_theta * (Matrix3::identity() - a * a.transpose()))
}

/// `R_x̄ = K⁻¹ Sᵀ R_u S K⁻ᵀ`; third row and column are exactly zero.
pub fn image_plane_covariance(k: &CameraIntrinsics, r_u: &PixelCovariance) -> Matrix3<f64> {
    let kinv = k.k_inv();
    let m = kinv.fixed_view::<2, 2>(0, 0).into_owned();
    let r2 = m * r_u.matrix() * m.transpose();
    let r2 = 0.5 * (r2 + r2.transpose());
    let mut out = Matrix3::zeros();
    out.fixed_view_mut::<2, 2>(0, 0).copy_from(&r2);
    out
}

/// Jacobian of `a = x̄/‖x̄‖` with respect to the two image-plane coordinates.
pub fn unit_vector_jacobian(x: &ImagePlanePoint) -> Matrix3x2<f64> {
    let xb = x.homogeneous();
    let n = xb.norm();
    let a = xb / n;
    let sa = skew(&a);
    -(sa * sa) * s_transpose() / n
}

/// `R_a = J R_x Jᵀ`.
pub fn unit_vector_covariance(x: &ImagePlanePoint, r_x: &Matrix2<f64>) -> Matrix3<f64> {
    let j = unit_vector_jacobian(x);
    let r = j * r_x * j.transpose();
    0.5 * (r + r.transpose())
}

/// Whether the isotropic unit-vector model with the boresight-equivalent
/// σ_θ = σ_x bounds the true unit-vector covariance at `x`.
pub fn qmm_dominates(x: &ImagePlanePoint, sigma_x: f64) -> bool {
    let a = image_plane_to_unit_vector(x);
    let r_qmm = sigma_x * sigma_x * (Matrix3::identity() - a * a.transpose());
    let r_a = unit_vector_covariance(x, &(Matrix2::identity() * sigma_x * sigma_x));
    let diff = r_qmm - r_a;
    let diff = 0.5 * (diff + diff.transpose());
    diff.symmetric_eigenvalues().iter().all(|&e| e >= -1e-12 * sigma_x * sigma_x)
}

/// 2-vector view of an image-plane point.
pub fn as_vec2(x: &ImagePlanePoint) -> Vector2<f64> {
    Vector2::new(x.x, x.y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn lcam() -> CameraIntrinsics {
        CameraIntrinsics::new(512.0, 512.0, 0.0, 512.0, 512.0).unwrap()
    }

    #[test]
    fn principal_point_maps_to_boresight() {
        let x = pixel_to_image_plane(&lcam(), &PixelPoint::new(512.0, 512.0));
        assert_eq!((x.x, x.y), (0.0, 0.0));
    }

    #[test]
    fn fov_constructor() {
        let k = CameraIntrinsics::from_fov(90.0, 1024.0).unwrap();
        assert!((k.dx - 512.0).abs() < 1e-9);
        assert_eq!((k.up, k.vp), (512.0, 512.0));
        assert!(CameraIntrinsics::from_fov(180.0, 10.0).is_err());
    }

    #[test]
    fn analytic_inverse_and_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let k = CameraIntrinsics::new(
                rng.random_range(10.0..5000.0),
                rng.random_range(10.0..5000.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(0.0..4000.0),
                rng.random_range(0.0..4000.0),
            )
            .unwrap();
            let prod = k.k() * k.k_inv();
            assert!((prod - Matrix3::identity()).abs().max() < 1e-10);
            let u = PixelPoint::new(rng.random_range(0.0..4000.0), rng.random_range(0.0..4000.0));
            let back = image_plane_to_pixel(&k, &pixel_to_image_plane(&k, &u));
            assert!((back.u - u.u).abs() < 1e-12 * u.u.abs().max(1.0));
            assert!((back.v - u.v).abs() < 1e-12 * u.v.abs().max(1.0));
        }
    }

    #[test]
    fn unit_vector_has_positive_z() {
        let a = image_plane_to_unit_vector(&ImagePlanePoint::new(-3.0, 7.0));
        assert!((a.norm() - 1.0).abs() < 1e-15);
        assert!(a.z > 0.0);
    }

    #[test]
    fn qmm_boresight_and_rank() {
        let r = qmm_covariance(&Vector3::z(), 1e-3).unwrap();
        assert_eq!(r, Matrix3::from_diagonal(&Vector3::new(1e-6, 1e-6, 0.0)));
        let a = Vector3::new(1.0, 2.0, 2.0) / 3.0;
        let r = qmm_covariance(&a, 0.5).unwrap();
        assert!((r * a).norm() < 1e-15);
        assert!(matches!(qmm_covariance(&Vector3::new(1.0, 1.0, 0.0), 1.0), Err(Error::NotUnit { .. })));
    }

    #[test]
    fn image_plane_covariance_for_lcam() {
        let r = image_plane_covariance(&lcam(), &PixelCovariance::isotropic(0.1).unwrap());
        let s = (0.1f64 / 512.0).powi(2);
        let expect = Matrix3::from_diagonal(&Vector3::new(s, s, 0.0));
        assert!((r - expect).abs().max() < 1e-15 * s);
        assert_eq!(r.row(2).norm() + r.column(2).norm(), 0.0);
    }

    #[test]
    fn image_plane_covariance_with_skew_matches_sandwich() {
        let k = CameraIntrinsics::new(800.0, 760.0, 3.0, 300.0, 250.0).unwrap();
        let ru = PixelCovariance::new(Matrix2::new(0.04, 0.01, 0.01, 0.09)).unwrap();
        let mut ru3 = Matrix3::zeros();
        ru3.fixed_view_mut::<2, 2>(0, 0).copy_from(ru.matrix());
        let expect = k.k_inv() * ru3 * k.k_inv().transpose();
        let got = image_plane_covariance(&k, &ru);
        assert!((got - expect).abs().max() < 1e-18);
    }

    #[test]
    fn unit_vector_covariance_annihilates_los() {
        let x = ImagePlanePoint::new(0.4, -0.3);
        let r = unit_vector_covariance(&x, &(Matrix2::identity() * 1e-8));
        let a = image_plane_to_unit_vector(&x);
        assert!((r * a).norm() < 1e-22);
        assert!((r - r.transpose()).abs().max() < 1e-21);
        assert!(r.symmetric_eigenvalues().iter().all(|&e| e >= -1e-20));
    }

    #[test]
    fn unit_vector_covariance_matches_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = ImagePlanePoint::new(0.6, 0.3);
        let sigma = 1e-3;
        let a0 = image_plane_to_unit_vector(&x);
        let n = 100_000;
        let mut acc = Matrix3::zeros();
        for _ in 0..n {
            let e1: f64 = rng.sample(StandardNormal);
            let e2: f64 = rng.sample(StandardNormal);
            let xn = ImagePlanePoint::new(x.x + sigma * e1, x.y + sigma * e2);
            let d = image_plane_to_unit_vector(&xn) - a0;
            acc += d * d.transpose();
        }
        acc /= n as f64;
        let analytic = unit_vector_covariance(&x, &(Matrix2::identity() * sigma * sigma));
        let rel = (acc - analytic).norm() / analytic.norm();
        assert!(rel < 0.05, "relative Frobenius discrepancy {rel}");
    }

    #[test]
    fn qmm_dominance() {
        assert!(qmm_dominates(&ImagePlanePoint::new(0.0, 0.0), 1e-4));
        assert!(qmm_dominates(&ImagePlanePoint::new(1.0, 1.0), 1e-4));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let x = ImagePlanePoint::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            assert!(qmm_dominates(&x, rng.random_range(1e-6..1e-2)));
        }
    }

    #[test]
    fn pixel_covariance_validation() {
        assert!(PixelCovariance::new(Matrix2::new(1.0, 0.5, 0.4, 1.0)).is_err());
        assert!(PixelCovariance::new(Matrix2::new(1.0, 2.0, 2.0, 1.0)).is_err());
        assert_eq!(PixelCovariance::isotropic(0.1).unwrap().scalar_sigma(), Some(0.1));
        let l = PixelCovariance::new(Matrix2::new(4.0, 1.0, 1.0, 3.0)).unwrap().cholesky_l();
        assert!((l * l.transpose() - Matrix2::new(4.0, 1.0, 1.0, 3.0)).abs().max() < 1e-15);
    }
}
