use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::camera::{sts, ImagePlanePoint, LosObservation};
use crate::error::{Error, Result};
use crate::geometry::{skew, solve_stacked_detailed, sqrt_info_covariance, symmetrize, SolverOptions};
use crate::linear::{negative_ranges, require_at_least, Diagnostics, TriangulationEstimate};

/// Companion used to fix the range factor of observation `i`.
pub fn companion(i: usize, n: usize) -> usize {
    (i + 1) % n
}

/// Range-over-norm factor `γᵢ = ‖dᵢⱼ × ℓⱼ‖ / ‖ℓᵢ × ℓⱼ‖` from the law of sines,
/// with `ℓ = Tᵀ K⁻¹ū` in the localization frame.
pub fn lost_gamma(obs: &[LosObservation], i: usize, j: usize) -> Result<f64> {
    if i == j || i >= obs.len() || j >= obs.len() {
        return Err(Error::InvalidInput(format!("companion pair ({i}, {j})")));
    }
    let li = obs[i].los_local();
    let lj = obs[j].los_local();
    let d = obs[j].anchor - obs[i].anchor;
    let den = li.cross(&lj).norm();
    if den <= 1e-12 * li.norm() * lj.norm() {
        return Err(Error::ParallelRays { i, j });
    }
    Ok(d.cross(&lj).norm() / den)
}

/// `R̃ε = −γ² [x̄×] R_x̄ [x̄×]`: covariance of the DLT residual of one ray.
pub fn residual_covariance(xbar: &Vector3<f64>, r_xbar: &Matrix3<f64>, gamma: f64) -> Matrix3<f64> {
    let s = skew(xbar);
    symmetrize(-gamma * gamma * s * r_xbar * s)
}

/// Moore–Penrose pseudoinverse of `R̃ε`. Its null space is exactly `x̄`, so
/// `(R + c n nᵀ)⁻¹ − n nᵀ / c` is exact for any `c > 0`.
pub fn residual_cov_pseudoinverse(x: &ImagePlanePoint, r_xbar: &Matrix3<f64>, gamma: f64) -> Matrix3<f64> {
    let xbar = x.homogeneous();
    let r = residual_covariance(&xbar, r_xbar, gamma);
    let n = xbar.normalize();
    let c = r.trace();
    let nn = n * n.transpose();
    let inv = (r + c * nn).try_inverse().unwrap_or_else(Matrix3::zeros);
    symmetrize(inv - nn / c)
}

/// Closed form of the pseudoinverse when `R_x = σ² I₂`.
pub fn residual_cov_pseudoinverse_isotropic(x: &ImagePlanePoint, sigma_x: f64, gamma: f64) -> Matrix3<f64> {
    let xbar = x.homogeneous();
    let s = skew(&xbar);
    let s2 = s * s;
    let scale = 1.0 / (sigma_x * sigma_x * gamma * gamma * xbar.norm_squared().powi(2));
    symmetrize(scale * s2 * sts() * s2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LostWeights {
    pub gamma: Vec<f64>,
    pub q: Vec<f64>,
    pub companion: Vec<usize>,
}

/// Law-of-sines weights `qᵢ = 1/(σ_xᵢ γᵢ)`; requires isotropic image noise.
pub fn lost_weights(obs: &[LosObservation]) -> Result<LostWeights> {
    require_at_least(obs, 2)?;
    let n = obs.len();
    let mut w = LostWeights { gamma: Vec::with_capacity(n), q: Vec::with_capacity(n), companion: Vec::with_capacity(n) };
    for i in 0..n {
        let j = companion(i, n);
        let sigma = obs[i].isotropic_sigma_x().ok_or(Error::NonIsotropicNoise)?;
        let g = lost_gamma(obs, i, j)?;
        if !(g > 0.0) {
            return Err(Error::DegenerateGeometry("zero range factor"));
        }
        w.gamma.push(g);
        w.q.push(1.0 / (sigma * g));
        w.companion.push(j);
    }
    Ok(w)
}

fn all_isotropic(obs: &[LosObservation]) -> bool {
    obs.iter().all(|o| o.isotropic_sigma_x().is_some())
}

/// Statistically weighted DLT. One linear solve, no iteration.
///
/// Isotropic image noise uses the `qᵢ`-weighted collinearity rows; any other
/// noise model is whitened with the exact residual pseudoinverse.
pub fn lost_triangulate(obs: &[LosObservation], opts: impl Into<SolverOptions>) -> Result<TriangulationEstimate> {
    require_at_least(obs, 2)?;
    let opts = opts.into();
    let (a, b) = if all_isotropic(obs) { isotropic_system(obs)? } else { general_system(obs)? };
    let sol = solve_stacked_detailed(&a, &b, opts)?;
    let position = Vector3::new(sol.x[0], sol.x[1], sol.x[2]);
    Ok(TriangulationEstimate {
        position,
        covariance: lost_covariance(obs).ok(),
        diagnostics: Diagnostics {
            condition_number: sol.condition_number(),
            residual_norm: sol.residual_norm,
            negative_range: negative_ranges(obs, &position),
            warnings: vec![],
        },
    })
}

fn isotropic_system(obs: &[LosObservation]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let w = lost_weights(obs)?;
    let n = obs.len();
    let mut a = DMatrix::zeros(2 * n, 3);
    let mut b = DVector::zeros(2 * n);
    for (i, ob) in obs.iter().enumerate() {
        let h = skew(&ob.xbar()) * ob.attitude.matrix();
        let h2 = h.fixed_view::<2, 3>(0, 0) * w.q[i];
        a.fixed_view_mut::<2, 3>(2 * i, 0).copy_from(&h2);
        b.fixed_rows_mut::<2>(2 * i).copy_from(&(h2 * ob.anchor));
    }
    Ok((a, b))
}

fn general_weights(obs: &[LosObservation]) -> Result<Vec<Matrix3<f64>>> {
    let n = obs.len();
    (0..n)
        .map(|i| {
            let g = lost_gamma(obs, i, companion(i, n))?;
            let x = ImagePlanePoint::from_homogeneous(&obs[i].xbar());
            Ok(residual_cov_pseudoinverse(&x, &obs[i].image_plane_cov(), g))
        })
        .collect()
}

fn general_system(obs: &[LosObservation]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let weights = general_weights(obs)?;
    let n = obs.len();
    let mut a = DMatrix::zeros(3 * n, 3);
    let mut b = DVector::zeros(3 * n);
    for (i, ob) in obs.iter().enumerate() {
        let eig = weights[i].symmetric_eigen();
        let root = Matrix3::from_diagonal(&eig.eigenvalues.map(|e| e.max(0.0).sqrt())) * eig.eigenvectors.transpose();
        let h = root * skew(&ob.xbar()) * ob.attitude.matrix();
        a.fixed_view_mut::<3, 3>(3 * i, 0).copy_from(&h);
        b.fixed_rows_mut::<3>(3 * i).copy_from(&(h * ob.anchor));
    }
    Ok((a, b))
}

/// `P = −(Σ qᵢ² Tᵢᵀ[x̄ᵢ×]SᵀS[x̄ᵢ×]Tᵢ)⁻¹`, or its pseudoinverse-weighted
/// generalization for non-isotropic noise. Evaluated from the weighted
/// rows of the LOST system itself.
pub fn lost_covariance(obs: &[LosObservation]) -> Result<Matrix3<f64>> {
    require_at_least(obs, 2)?;
    let (a, _) = if all_isotropic(obs) { isotropic_system(obs)? } else { general_system(obs)? };
    sqrt_info_covariance(&a)
}
