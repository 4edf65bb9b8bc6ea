//! Small dense linear-algebra kernels shared by every solver: skew matrices,
//! validated rotations, stacked least squares and homogeneous null vectors.

use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative singular-value floor below which a stacked system is rank deficient.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Orthonormality tolerance enforced by [`Rotation::new`].
pub const ROTATION_TOL: f64 = 1e-12;

/// Cross-product matrix: `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Attitude matrix mapping localization-frame vectors into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Accepts `m` only if it is orthonormal with determinant +1 to 1e-12.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        Self::with_tolerance(m, ROTATION_TOL)
    }

    pub fn with_tolerance(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidRotation("non-finite entry".into()));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        if ortho > tol {
            return Err(Error::InvalidRotation(format!(
                "not orthonormal (max |TᵀT − I| = {ortho:e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > tol {
            return Err(Error::InvalidRotation(format!("determinant {det}")));
        }
        Ok(Rotation(m))
    }

    /// Projects a nearly orthonormal matrix onto SO(3). Rejects matrices
    /// further than `tol` from orthonormal, since those are not rounding noise.
    pub fn nearest(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidRotation("non-finite entry".into()));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        if ortho > tol || m.determinant() <= 0.0 {
            return Err(Error::InvalidRotation(format!(
                "too far from a rotation (max |TᵀT − I| = {ortho:e})"
            )));
        }
        let svd = m.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        Self::new(u * vt)
    }

    /// Scalar-last Hamilton quaternion `[x, y, z, w]`; the quaternion's
    /// rotation matrix is taken as the attitude itself.
    pub fn from_quaternion(q: [f64; 4]) -> Result<Self> {
        let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(Error::NotUnit { norm });
        }
        let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[3], q[0], q[1], q[2]));
        Self::nearest(*uq.to_rotation_matrix().matrix(), 1e-9)
    }

    /// Scalar-last Hamilton quaternion of this attitude, with `w >= 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let r = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = UnitQuaternion::from_rotation_matrix(&r);
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.i, s * q.j, s * q.k, s * q.w]
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let r = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle);
        Rotation(*r.matrix())
    }

    /// Camera attitude whose boresight (third camera axis) points along
    /// `boresight`. The camera's first axis is `up_hint × boresight`.
    pub fn look_along(boresight: &Vector3<f64>, up_hint: &Vector3<f64>) -> Result<Self> {
        let z = boresight
            .try_normalize(1e-300)
            .ok_or(Error::InvalidRotation("zero boresight".into()))?;
        let x = up_hint
            .cross(&z)
            .try_normalize(1e-12)
            .ok_or(Error::InvalidRotation("up hint parallel to boresight".into()))?;
        let y = z.cross(&x);
        Self::nearest(Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]), 1e-9)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

/// How a stacked linear system is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeastSquaresBackend {
    NormalEquations,
    #[default]
    #[serde(rename = "qr")]
    QrFactorization,
    #[serde(rename = "tls")]
    TotalLeastSquaresSvd,
}

impl std::str::FromStr for LeastSquaresBackend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" | "normal-equations" => Ok(Self::NormalEquations),
            "qr" => Ok(Self::QrFactorization),
            "tls" | "svd" => Ok(Self::TotalLeastSquaresSvd),
            other => Err(Error::InvalidInput(format!("unknown backend `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub backend: LeastSquaresBackend,
    /// Relative singular-value floor for rank decisions.
    pub rank_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { backend: LeastSquaresBackend::default(), rank_tol: DEFAULT_RANK_TOL }
    }
}

impl From<LeastSquaresBackend> for SolverOptions {
    fn from(backend: LeastSquaresBackend) -> Self {
        SolverOptions { backend, ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct LsSolution {
    pub x: DVector<f64>,
    /// Singular values of the design matrix, descending.
    pub singular_values: Vec<f64>,
    pub residual_norm: f64,
}

impl LsSolution {
    pub fn condition_number(&self) -> f64 {
        let last = *self.singular_values.last().unwrap_or(&0.0);
        if last == 0.0 {
            f64::INFINITY
        } else {
            self.singular_values[0] / last
        }
    }
}

/// Singular values of a tall matrix, descending. Computed from the R factor
/// so the cost stays at one QR of the stack plus an n×n SVD.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let r = if a.nrows() > a.ncols() { a.clone().qr().r() } else { a.clone() };
    let mut s: Vec<f64> = r.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Least-squares solve of `a x ≈ b` with the requested backend.
pub fn solve_stacked(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    opts: impl Into<SolverOptions>,
) -> Result<DVector<f64>> {
    solve_stacked_detailed(a, b, opts).map(|s| s.x)
}

pub fn solve_stacked_detailed(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    opts: impl Into<SolverOptions>,
) -> Result<LsSolution> {
    let opts = opts.into();
    let (m, n) = a.shape();
    if m < n || b.len() != m || n == 0 {
        return Err(Error::InvalidInput(format!(
            "stacked system is {m}×{n} with right-hand side of length {}",
            b.len()
        )));
    }
    if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite entry in stacked system".into()));
    }
    let sv = singular_values(a);
    let (largest, smallest) = (sv[0], sv[n - 1]);
    if !(smallest > opts.rank_tol * largest) {
        return Err(Error::RankDeficient { smallest, largest });
    }
    let x = match opts.backend {
        LeastSquaresBackend::NormalEquations => {
            let ata = a.transpose() * a;
            let atb = a.transpose() * b;
            let chol = ata
                .cholesky()
                .ok_or(Error::RankDeficient { smallest, largest })?;
            chol.solve(&atb)
        }
        LeastSquaresBackend::QrFactorization => {
            let qr = a.clone().qr();
            let qtb = qr.q().transpose() * b;
            qr.r()
                .solve_upper_triangular(&qtb)
                .ok_or(Error::RankDeficient { smallest, largest })?
        }
        LeastSquaresBackend::TotalLeastSquaresSvd => {
            let mut ab = DMatrix::zeros(m, n + 1);
            ab.view_mut((0, 0), (m, n)).copy_from(a);
            ab.set_column(n, b);
            let v = smallest_right_singular_vector(&ab);
            let last = v[n];
            if last.abs() <= 1e-14 * v.norm() {
                return Err(Error::RankDeficient { smallest, largest });
            }
            DVector::from_iterator(n, (0..n).map(|i| -v[i] / last))
        }
    };
    let residual_norm = (a * &x - b).norm();
    Ok(LsSolution { x, singular_values: sv, residual_norm })
}

/// Right singular vector of the smallest singular value. Pads short matrices
/// with zero rows so a full set of right singular vectors exists.
fn smallest_right_singular_vector(a: &DMatrix<f64>) -> DVector<f64> {
    let (v, _) = sorted_right_singular(a);
    v.column(v.ncols() - 1).into_owned()
}

/// Right singular vectors (as columns, descending singular value order) and
/// the singular values themselves.
fn sorted_right_singular(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = a.ncols();
    let padded = if a.nrows() < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), a.shape()).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut v = DMatrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (k, &i) in order.iter().enumerate() {
        v.set_column(k, &vt.row(i).transpose());
        s.push(svd.singular_values[i]);
    }
    (v, s)
}

/// Unit null direction of an m×4 homogeneous system, sign chosen so the
/// fourth component is non-negative.
pub fn null_direction(a: &DMatrix<f64>) -> Result<Vector4<f64>> {
    if a.ncols() != 4 {
        return Err(Error::InvalidInput(format!("expected 4 columns, got {}", a.ncols())));
    }
    if a.nrows() < 3 {
        return Err(Error::TooFewObservations { needed: 3, got: a.nrows() });
    }
    let (v, s) = sorted_right_singular(a);
    if s[2] - s[3] <= DEFAULT_RANK_TOL * s[0] {
        return Err(Error::AmbiguousNullSpace);
    }
    let mut out = Vector4::new(v[(0, 3)], v[(1, 3)], v[(2, 3)], v[(3, 3)]);
    out /= out.norm();
    if out[3] < 0.0 {
        out = -out;
    }
    Ok(out)
}

/// Drops the homogeneous coordinate.
pub fn dehomogenize(v: &Vector4<f64>) -> Result<Vector3<f64>> {
    if v[3].abs() <= 1e-15 * v.norm() || v[3] == 0.0 {
        return Err(Error::PointAtInfinity);
    }
    Ok(Vector3::new(v[0] / v[3], v[1] / v[3], v[2] / v[3]))
}

/// Inverse of a symmetric positive-definite matrix, or `RankDeficient`.
pub fn spd_inverse(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let sym = 0.5 * (m + m.transpose());
    let eig = sym.symmetric_eigenvalues();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for &e in eig.iter() {
        lo = lo.min(e);
        hi = hi.max(e.abs());
    }
    if !(lo > 1e-20 * hi) {
        return Err(Error::RankDeficient { smallest: lo.max(0.0).sqrt(), largest: hi.sqrt() });
    }
    let inv = sym
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::RankDeficient { smallest: lo.max(0.0).sqrt(), largest: hi.sqrt() })?;
    Ok(0.5 * (inv + inv.transpose()))
}

/// `(AᵀA)⁻¹` for a stacked whitened Jacobian `A` (m × 3), through the QR
/// factor of `A` rather than the normal matrix. Error grows with `κ(A)`
/// instead of `κ(A)²`.
pub fn sqrt_info_covariance(a: &DMatrix<f64>) -> Result<Matrix3<f64>> {
    if a.ncols() != 3 || a.nrows() < 3 {
        return Err(Error::InvalidInput(format!("need an m × 3 Jacobian with m ≥ 3, got {} × {}", a.nrows(), a.ncols())));
    }
    let r = a.clone().qr().r();
    let diag: Vec<f64> = (0..3).map(|i| r[(i, i)].abs()).collect();
    let hi = diag.iter().cloned().fold(0.0, f64::max);
    let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(lo > 1e-10 * hi) {
        return Err(Error::RankDeficient { smallest: lo, largest: hi });
    }
    let r3 = Matrix3::from_fn(|i, j| r[(i, j)]);
    let rinv = r3.solve_upper_triangular(&Matrix3::identity()).ok_or(Error::RankDeficient { smallest: lo, largest: hi })?;
    Ok(symmetrize(rinv * rinv.transpose()))
}

pub(crate) fn symmetrize(m: Matrix3<f64>) -> Matrix3<f64> {
    0.5 * (m + m.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if v.norm() > 0.1 && v.norm() < 1.0 {
                return v.normalize();
            }
        }
    }

    #[test]
    fn skew_matches_cross_product() {
        let a = Vector3::new(1.0, 2.0, 3.0);
        let b = Vector3::new(4.0, 5.0, 6.0);
        assert_eq!(skew(&a) * b, a.cross(&b));
        assert_eq!(skew(&a).transpose(), -skew(&a));
    }

    #[test]
    fn skew_cubed_identity() {
        let b = Vector3::new(0.3, -2.0, 1.7);
        let s = skew(&b);
        let lhs = s * s * s;
        let rhs = -b.norm_squared() * s;
        assert!((lhs - rhs).norm() <= 1e-12 * rhs.norm());
    }

    #[test]
    fn skew_squared_projector() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let a = random_unit(&mut rng);
            let s = skew(&a);
            let lhs = -(s * s);
            let rhs = Matrix3::identity() - a * a.transpose();
            assert!((lhs - rhs).abs().max() < 1e-14);
        }
    }

    #[test]
    fn rotation_validation() {
        assert!(Rotation::new(Matrix3::identity()).is_ok());
        assert!(Rotation::new(Matrix3::identity() * 1.001).is_err());
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Rotation::new(reflect).is_err());
    }

    #[test]
    fn rotation_composition_stays_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut r = Rotation::identity();
        for _ in 0..1000 {
            let step = Rotation::from_axis_angle(&random_unit(&mut rng), rng.random_range(-3.0..3.0));
            r = r.compose(&step);
            assert!(Rotation::new(*r.matrix()).is_ok());
        }
    }

    #[test]
    fn quaternion_round_trip() {
        let r = Rotation::from_axis_angle(&Vector3::new(1.0, -2.0, 0.5), 0.7);
        let q = r.to_quaternion();
        let back = Rotation::from_quaternion(q).unwrap();
        assert!((back.matrix() - r.matrix()).abs().max() < 1e-14);
        // 90° about z, scalar last.
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let rz = Rotation::from_quaternion([0.0, 0.0, h, h]).unwrap();
        let x = rz.apply(&Vector3::x());
        assert!((x - Vector3::y()).norm() < 1e-15);
        assert!(Rotation::from_quaternion([0.0, 0.0, 0.0, 2.0]).is_err());
    }

    #[test]
    fn look_along_puts_boresight_on_third_axis() {
        let b = Vector3::new(1.0, 0.0, -1.0);
        let r = Rotation::look_along(&b, &Vector3::y()).unwrap();
        let c = r.apply(&b.normalize());
        assert!((c - Vector3::z()).norm() < 1e-15);
    }

    #[test]
    fn backends_agree_on_well_conditioned_stacks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = DMatrix::from_fn(12, 3, |_, _| rng.random_range(-1.0..1.0));
            let xt = DVector::from_vec(vec![1.0, -2.0, 0.5]);
            let b = &a * &xt + DVector::from_fn(12, |_, _| 1e-3 * rng.random_range(-1.0..1.0));
            let qr = solve_stacked(&a, &b, LeastSquaresBackend::QrFactorization).unwrap();
            let ne = solve_stacked(&a, &b, LeastSquaresBackend::NormalEquations).unwrap();
            assert!((&qr - &ne).norm() <= 1e-8 * qr.norm());
            let tls = solve_stacked(&a, &b, LeastSquaresBackend::TotalLeastSquaresSvd).unwrap();
            assert!((&tls - &xt).norm() < 1e-2);
        }
    }

    #[test]
    fn exact_system_solved_by_every_backend() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, -1.0]);
        let x = DVector::from_vec(vec![3.0, -4.0]);
        let b = &a * &x;
        for be in [
            LeastSquaresBackend::NormalEquations,
            LeastSquaresBackend::QrFactorization,
            LeastSquaresBackend::TotalLeastSquaresSvd,
        ] {
            let got = solve_stacked(&a, &b, be).unwrap();
            assert!((&got - &x).norm() < 1e-12, "{be:?}");
        }
    }

    #[test]
    fn rank_deficient_detected() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            solve_stacked(&a, &b, LeastSquaresBackend::QrFactorization),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn null_direction_of_known_vector() {
        let a = DMatrix::from_row_slice(3, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let v = null_direction(&a).unwrap();
        assert!((v - Vector4::new(0.0, 0.0, 0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn null_direction_recovers_planted_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let planted = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
            let planted = if planted[3] < 0.0 { -planted } else { planted };
            // Rows spanning the orthogonal complement of `planted`.
            let mut rows = DMatrix::zeros(6, 4);
            for r in 0..6 {
                let g = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0));
                let g = g - planted * planted.dot(&g);
                rows.set_row(r, &g.transpose());
            }
            let b = rows.transpose() * &rows;
            let v = null_direction(&b).unwrap();
            assert!((v - planted).norm() < 1e-10);
        }
    }

    #[test]
    fn ambiguous_null_space() {
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let mut a3 = DMatrix::zeros(3, 4);
        a3.view_mut((0, 0), (2, 4)).copy_from(&a);
        assert_eq!(null_direction(&a3), Err(Error::AmbiguousNullSpace));
    }

    #[test]
    fn dehomogenize_rejects_infinity() {
        assert_eq!(dehomogenize(&Vector4::new(1.0, 0.0, 0.0, 0.0)), Err(Error::PointAtInfinity));
        assert_eq!(dehomogenize(&Vector4::new(2.0, 4.0, 6.0, 2.0)).unwrap(), Vector3::new(1.0, 2.0, 3.0));
    }
}
