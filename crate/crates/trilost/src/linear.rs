//! Linear triangulation: the DLT and its Plücker and collinearity
//! equivalents, plus the pairwise explicit-range method.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Matrix3x4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::LosObservation;
use crate::error::{Error, Result};
use crate::geometry::{
    dehomogenize, null_direction, singular_values, skew, solve_stacked_detailed, spd_inverse, symmetrize,
    SolverOptions,
};
use crate::optimal::{companion, lost_gamma, residual_covariance};

/// How each line of sight is scaled before it enters the DLT rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LosNormalization {
    /// `ℓ ∝ K⁻¹ū`, the image-plane point with unit third component.
    #[default]
    ImagePlane,
    /// `ℓ = a`, the unit vector.
    UnitVector,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub condition_number: f64,
    pub residual_norm: f64,
    /// Per observation: the anchor lies behind the estimate along its ray.
    pub negative_range: Vec<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangulationEstimate {
    pub position: Vector3<f64>,
    /// First-order covariance; `None` when the method has no analytic form.
    pub covariance: Option<Matrix3<f64>>,
    pub diagnostics: Diagnostics,
}

impl TriangulationEstimate {
    pub fn total_std(&self) -> Option<f64> {
        self.covariance.map(|p| p.trace().max(0.0).sqrt())
    }
}

pub(crate) fn require_at_least(obs: &[LosObservation], needed: usize) -> Result<()> {
    if obs.len() < needed {
        return Err(Error::TooFewObservations { needed, got: obs.len() });
    }
    Ok(())
}

/// Camera-frame line of sight under the chosen normalization.
pub(crate) fn los_camera(ob: &LosObservation, norm: LosNormalization) -> Vector3<f64> {
    match norm {
        LosNormalization::ImagePlane => ob.xbar(),
        LosNormalization::UnitVector => ob.unit_los(),
    }
}

pub(crate) fn negative_ranges(obs: &[LosObservation], r: &Vector3<f64>) -> Vec<bool> {
    obs.iter().map(|ob| ob.los_local().dot(&(ob.anchor - r)) < 0.0).collect()
}

/// `[ℓ×]T` and `[ℓ×]T p` for every observation, stacked.
pub fn dlt_system(obs: &[LosObservation], norm: LosNormalization) -> (DMatrix<f64>, DVector<f64>) {
    let n = obs.len();
    let mut a = DMatrix::zeros(3 * n, 3);
    let mut b = DVector::zeros(3 * n);
    for (i, ob) in obs.iter().enumerate() {
        let h = skew(&los_camera(ob, norm)) * ob.attitude.matrix();
        a.fixed_view_mut::<3, 3>(3 * i, 0).copy_from(&h);
        b.fixed_rows_mut::<3>(3 * i).copy_from(&(h * ob.anchor));
    }
    (a, b)
}

pub fn dlt_triangulate(
    obs: &[LosObservation],
    norm: LosNormalization,
    opts: impl Into<SolverOptions>,
) -> Result<TriangulationEstimate> {
    require_at_least(obs, 2)?;
    let (a, b) = dlt_system(obs, norm);
    let sol = solve_stacked_detailed(&a, &b, opts)?;
    let position = Vector3::new(sol.x[0], sol.x[1], sol.x[2]);
    Ok(TriangulationEstimate {
        position,
        covariance: dlt_covariance(obs, norm).ok(),
        diagnostics: Diagnostics {
            condition_number: sol.condition_number(),
            residual_norm: sol.residual_norm,
            negative_range: negative_ranges(obs, &position),
            warnings: vec![],
        },
    })
}

/// Residual covariance of the three DLT rows of `ob`, with the range factor
/// taken from the companion observation.
fn dlt_row_covariance(obs: &[LosObservation], i: usize, norm: LosNormalization) -> Result<Matrix3<f64>> {
    let ob = &obs[i];
    let gamma = lost_gamma(obs, i, companion(i, obs.len()))?;
    let xbar = ob.xbar();
    let r = residual_covariance(&xbar, &ob.image_plane_cov(), gamma);
    Ok(match norm {
        LosNormalization::ImagePlane => r,
        LosNormalization::UnitVector => r / xbar.norm_squared(),
    })
}

/// Sandwich covariance `(HᵀH)⁻¹ (Σ Hᵢᵀ R̃ᵢ Hᵢ) (HᵀH)⁻¹` of the DLT estimate.
pub fn dlt_covariance(obs: &[LosObservation], norm: LosNormalization) -> Result<Matrix3<f64>> {
    require_at_least(obs, 2)?;
    let mut hth = Matrix3::zeros();
    let mut mid = Matrix3::zeros();
    for (i, ob) in obs.iter().enumerate() {
        let h = skew(&los_camera(ob, norm)) * ob.attitude.matrix();
        hth += h.transpose() * h;
        mid += h.transpose() * dlt_row_covariance(obs, i, norm)? * h;
    }
    let inv = spd_inverse(&hth)?;
    Ok(symmetrize(inv * mid * inv))
}

fn plucker_block(l: &Vector3<f64>, p: &Vector3<f64>) -> nalgebra::Matrix4<f64> {
    let mut blk = nalgebra::Matrix4::zeros();
    blk.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(l));
    blk.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.cross(l));
    blk.fixed_view_mut::<1, 3>(3, 0).copy_from(&l.cross(p).transpose());
    blk
}

pub fn plucker_system(obs: &[LosObservation], norm: LosNormalization) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(4 * obs.len(), 4);
    for (i, ob) in obs.iter().enumerate() {
        let l = ob.attitude.matrix().transpose() * los_camera(ob, norm);
        a.fixed_view_mut::<4, 4>(4 * i, 0).copy_from(&plucker_block(&l, &ob.anchor));
    }
    a
}

/// Point closest to all lines of position in the dual-Plücker sense.
pub fn plucker_triangulate(obs: &[LosObservation]) -> Result<TriangulationEstimate> {
    plucker_triangulate_with(obs, LosNormalization::ImagePlane)
}

pub fn plucker_triangulate_with(obs: &[LosObservation], norm: LosNormalization) -> Result<TriangulationEstimate> {
    require_at_least(obs, 2)?;
    let a = plucker_system(obs, norm);
    let v = null_direction(&a)?;
    let position = dehomogenize(&v)?;
    let sv = singular_values(&a);
    Ok(TriangulationEstimate {
        position,
        covariance: plucker_covariance(obs, norm, &a, &v).ok(),
        diagnostics: Diagnostics {
            condition_number: sv[0] / sv[2],
            residual_norm: (&a * DVector::from_column_slice(v.as_slice())).norm(),
            negative_range: negative_ranges(obs, &position),
            warnings: vec![],
        },
    })
}

/// First-order covariance of the dehomogenized Plücker null vector.
fn plucker_covariance(
    obs: &[LosObservation],
    norm: LosNormalization,
    a: &DMatrix<f64>,
    v: &nalgebra::Vector4<f64>,
) -> Result<Matrix3<f64>> {
    let svd = a.clone().svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    // Pseudoinverse of the rank-3 part.
    let mut pinv = DMatrix::zeros(4, a.nrows());
    for &k in &order[..3] {
        let s = svd.singular_values[k];
        pinv += vt.row(k).transpose() * u.column(k).transpose() / s;
    }
    let vr = Vector3::new(v[0], v[1], v[2]);
    let v4 = v[3];
    let mut cov_rows = DMatrix::zeros(a.nrows(), a.nrows());
    for (i, ob) in obs.iter().enumerate() {
        let mut g = nalgebra::Matrix4x3::zeros();
        g.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&vr) + v4 * skew(&ob.anchor)));
        g.fixed_view_mut::<1, 3>(3, 0).copy_from(&ob.anchor.cross(&vr).transpose());
        let t = ob.attitude.matrix();
        let mut r_l = t.transpose() * ob.image_plane_cov() * t;
        if norm == LosNormalization::UnitVector {
            // Only the component orthogonal to the ray matters to first order.
            r_l /= ob.xbar().norm_squared();
        }
        let blk = g * r_l * g.transpose();
        cov_rows.view_mut((4 * i, 4 * i), (4, 4)).copy_from(&blk);
    }
    let cov_v = &pinv * cov_rows * pinv.transpose();
    let mut jac = Matrix3x4::zeros();
    jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Matrix3::identity() / v4));
    jac.set_column(3, &(-vr / (v4 * v4)));
    let cov_v = nalgebra::Matrix4::from_fn(|r, c| cov_v[(r, c)]);
    Ok(symmetrize(jac * cov_v * jac.transpose()))
}

/// First two DLT rows of one observation: `S[x̄×]T` and `S[x̄×]T p`.
pub fn collinearity_rows(ob: &LosObservation) -> (Matrix2x3<f64>, Vector2<f64>) {
    let h3 = skew(&ob.xbar()) * ob.attitude.matrix();
    let h: Matrix2x3<f64> = h3.fixed_view::<2, 3>(0, 0).into_owned();
    let b = h * ob.anchor;
    (h, b)
}

pub fn collinearity_triangulate(
    obs: &[LosObservation],
    opts: impl Into<SolverOptions>,
) -> Result<TriangulationEstimate> {
    require_at_least(obs, 2)?;
    let n = obs.len();
    let mut a = DMatrix::zeros(2 * n, 3);
    let mut b = DVector::zeros(2 * n);
    for (i, ob) in obs.iter().enumerate() {
        let (h, rhs) = collinearity_rows(ob);
        a.fixed_view_mut::<2, 3>(2 * i, 0).copy_from(&h);
        b.fixed_rows_mut::<2>(2 * i).copy_from(&rhs);
    }
    let sol = solve_stacked_detailed(&a, &b, opts)?;
    let position = Vector3::new(sol.x[0], sol.x[1], sol.x[2]);
    Ok(TriangulationEstimate {
        position,
        covariance: collinearity_covariance(obs).ok(),
        diagnostics: Diagnostics {
            condition_number: sol.condition_number(),
            residual_norm: sol.residual_norm,
            negative_range: negative_ranges(obs, &position),
            warnings: vec![],
        },
    })
}

pub fn collinearity_covariance(obs: &[LosObservation]) -> Result<Matrix3<f64>> {
    require_at_least(obs, 2)?;
    let mut hth = Matrix3::zeros();
    let mut mid = Matrix3::zeros();
    for (i, _) in obs.iter().enumerate() {
        let (h, _) = collinearity_rows(&obs[i]);
        let r = dlt_row_covariance(obs, i, LosNormalization::ImagePlane)?;
        let r2 = r.fixed_view::<2, 2>(0, 0).into_owned();
        hth += h.transpose() * h;
        mid += h.transpose() * r2 * h;
    }
    let inv = spd_inverse(&hth)?;
    Ok(symmetrize(inv * mid * inv))
}

/// Observations above this count trigger a row-growth warning.
pub const EXPLICIT_RANGE_WARN_N: usize = 50;

fn local_unit(ob: &LosObservation) -> Vector3<f64> {
    ob.attitude.matrix().transpose() * ob.unit_los()
}

/// Ranges from every pairwise pair of range equations, both orderings.
pub fn explicit_range_ranges(obs: &[LosObservation], opts: impl Into<SolverOptions>) -> Result<(DVector<f64>, f64, f64)> {
    require_at_least(obs, 2)?;
    let n = obs.len();
    let a_loc: Vec<Vector3<f64>> = obs.iter().map(local_unit).collect();
    let rows = n * (n - 1);
    let mut a = DMatrix::zeros(rows, n);
    let mut b = DVector::zeros(rows);
    let mut r = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = obs[j].anchor - obs[i].anchor;
            let c = a_loc[i].dot(&a_loc[j]);
            a[(r, i)] = -1.0;
            a[(r, j)] = c;
            b[r] = a_loc[i].dot(&d);
            a[(r + 1, i)] = -c;
            a[(r + 1, j)] = 1.0;
            b[r + 1] = a_loc[j].dot(&d);
            r += 2;
        }
    }
    let sol = solve_stacked_detailed(&a, &b, opts)?;
    let cond = sol.condition_number();
    Ok((sol.x, cond, sol.residual_norm))
}

pub fn explicit_range_triangulate(
    obs: &[LosObservation],
    opts: impl Into<SolverOptions>,
) -> Result<TriangulationEstimate> {
    let (rho, cond, res) = explicit_range_ranges(obs, opts)?;
    let n = obs.len();
    let mut position = Vector3::zeros();
    for (i, ob) in obs.iter().enumerate() {
        position += ob.anchor - rho[i] * local_unit(ob);
    }
    position /= n as f64;
    let mut warnings = vec![];
    if n > EXPLICIT_RANGE_WARN_N {
        warnings.push(format!("{n} observations produce {} pairwise rows", n * (n - 1)));
    }
    Ok(TriangulationEstimate {
        position,
        covariance: if n == 2 { explicit_range_covariance_n2(obs).ok() } else { None },
        diagnostics: Diagnostics {
            condition_number: cond,
            residual_norm: res,
            negative_range: rho.iter().map(|&r| r < 0.0).collect(),
            warnings,
        },
    })
}

/// Linearized covariance of the two-observation explicit-range estimate.
pub fn explicit_range_covariance_n2(obs: &[LosObservation]) -> Result<Matrix3<f64>> {
    if obs.len() != 2 {
        return Err(Error::WrongArity { expected: 2, got: obs.len() });
    }
    let (rho, _, _) = explicit_range_ranges(obs, SolverOptions::default())?;
    let a1 = local_unit(&obs[0]);
    let a2 = local_unit(&obs[1]);
    let d = obs[1].anchor - obs[0].anchor;
    let c = a1.dot(&a2);
    let denom = c * c - 1.0;
    if denom.abs() < 1e-15 {
        return Err(Error::ParallelRays { i: 0, j: 1 });
    }
    let minv = nalgebra::Matrix2::new(1.0, -c, c, -1.0) / denom;
    // Differential of the two range equations with respect to (δa₁, δa₂).
    let mut nmat = nalgebra::Matrix2x6::zeros();
    nmat.fixed_view_mut::<1, 3>(0, 0).copy_from(&(d - rho[1] * a2).transpose());
    nmat.fixed_view_mut::<1, 3>(0, 3).copy_from(&(-rho[1] * a1).transpose());
    nmat.fixed_view_mut::<1, 3>(1, 0).copy_from(&(rho[0] * a2).transpose());
    nmat.fixed_view_mut::<1, 3>(1, 3).copy_from(&(d + rho[0] * a1).transpose());
    let cmat = minv * nmat;
    let amat = nalgebra::Matrix3x2::from_columns(&[a1, a2]);
    let mut bmat = nalgebra::Matrix3x6::zeros();
    bmat.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Matrix3::identity() * rho[0]));
    bmat.fixed_view_mut::<3, 3>(0, 3).copy_from(&(Matrix3::identity() * rho[1]));
    let mut dmat = nalgebra::Matrix6::zeros();
    let mut rx = nalgebra::Matrix6::zeros();
    for (k, ob) in obs.iter().enumerate() {
        let xbar = ob.xbar();
        let ac = xbar / xbar.norm();
        let s = skew(&ac);
        let blk = ob.attitude.matrix().transpose() * s * s / xbar.norm();
        dmat.fixed_view_mut::<3, 3>(3 * k, 3 * k).copy_from(&blk);
        rx.fixed_view_mut::<3, 3>(3 * k, 3 * k).copy_from(&ob.image_plane_cov());
    }
    let g = amat * cmat + bmat;
    let p = 0.25 * g * dmat * rx * dmat.transpose() * g.transpose();
    Ok(symmetrize(p))
}

/// Residuals of the two range equations linking observations `i` and `j`;
/// both vanish at the true ranges.
pub fn law_of_cosines_residual(rho_i: f64, rho_j: f64, obs_i: &LosObservation, obs_j: &LosObservation) -> (f64, f64) {
    let ai = local_unit(obs_i);
    let aj = local_unit(obs_j);
    let d = obs_j.anchor - obs_i.anchor;
    let c = ai.dot(&aj);
    (c * rho_j - rho_i - ai.dot(&d), rho_j - c * rho_i - aj.dot(&d))
}

/// Frobenius-norm helper used by the covariance checks.
pub fn relative_difference(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
