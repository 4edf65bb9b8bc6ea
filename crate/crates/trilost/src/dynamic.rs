//! Triangulation of a moving observer whose state obeys linear dynamics.
//!
//! Every line of sight constrains the initial state `ξ₀ = (r₀, v₀)` through
//! the position rows of the state transition matrix:
//! `[ℓᵢ×] T Φ_r(tᵢ) ξ₀ = [ℓᵢ×] T (pᵢ − δrᵢ)`.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x6, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::camera::{LosObservation, K_AXIS};
use crate::error::{Error, Result};
use crate::geometry::{skew, solve_stacked_detailed, SolverOptions};
use crate::optimal::residual_covariance;

/// A state transition matrix `Φ(t, t₀)` for a six-state linear model.
///
/// Implementations must be reentrant: solvers call them from worker threads.
pub trait StmProvider: Sync {
    fn phi(&self, t: f64) -> Matrix6<f64>;

    /// Position rows of `Φ`.
    fn phi_r(&self, t: f64) -> Matrix3x6<f64> {
        self.phi(t).fixed_rows::<3>(0).into_owned()
    }
}

/// Clohessy–Wiltshire relative motion about a circular reference orbit.
/// Axes: x radial, y along-track, z cross-track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CwStm {
    /// Mean motion in rad/s.
    pub mean_motion: f64,
}

impl StmProvider for CwStm {
    fn phi(&self, t: f64) -> Matrix6<f64> {
        cw_stm(t, self.mean_motion)
    }
}

/// Constant-velocity motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DoubleIntegratorStm;

impl StmProvider for DoubleIntegratorStm {
    fn phi(&self, t: f64) -> Matrix6<f64> {
        let mut m = Matrix6::identity();
        m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(Matrix3::identity() * t));
        m
    }
}

/// A stationary observer: `Φ = I`, so velocity never enters the measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StaticStm;

impl StmProvider for StaticStm {
    fn phi(&self, _t: f64) -> Matrix6<f64> {
        Matrix6::identity()
    }
}

pub fn cw_stm(t: f64, n: f64) -> Matrix6<f64> {
    let (s, c) = (n * t).sin_cos();
    let nt = n * t;
    #[rustfmt::skip]
    let m = Matrix6::new(
        4.0 - 3.0 * c,       0.0, 0.0,    s / n,               2.0 * (1.0 - c) / n,     0.0,
        6.0 * (s - nt),      1.0, 0.0,    -2.0 * (1.0 - c) / n, (4.0 * s - 3.0 * nt) / n, 0.0,
        0.0,                 0.0, c,      0.0,                 0.0,                     s / n,
        3.0 * n * s,         0.0, 0.0,    c,                   2.0 * s,                 0.0,
        -6.0 * n * (1.0 - c), 0.0, 0.0,   -2.0 * s,            4.0 * c - 3.0,           0.0,
        0.0,                 0.0, -n * s, 0.0,                 0.0,                     c,
    );
    m
}

/// One line of sight taken at `time`.
///
/// `base.anchor` is the observed point `p` (for relative navigation, the
/// feature on the target body). `camera_offset` is the known displacement
/// `δr` of the camera from the point whose state is estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicObservation {
    pub base: LosObservation,
    /// Seconds since the epoch of `ξ₀`.
    pub time: f64,
    pub camera_offset: Vector3<f64>,
}

impl DynamicObservation {
    pub fn new(base: LosObservation, time: f64, camera_offset: Vector3<f64>) -> Result<Self> {
        if !time.is_finite() || !camera_offset.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite time or offset".into()));
        }
        Ok(DynamicObservation { base, time, camera_offset })
    }

    fn effective_anchor(&self) -> Vector3<f64> {
        self.base.anchor - self.camera_offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicOptions {
    pub solver: SolverOptions,
    /// Smallest-to-largest singular value ratio below which the state is
    /// declared unobservable.
    pub unobservable_tol: f64,
}

impl Default for DynamicOptions {
    fn default() -> Self {
        DynamicOptions { solver: SolverOptions::default(), unobservable_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimate6 {
    pub state: Vector6<f64>,
    /// Sandwich covariance of the stacked solve. `None` when some state
    /// component never reaches the measurements.
    pub covariance: Option<Matrix6<f64>>,
    /// Singular values of the column-equilibrated stacked system, descending.
    pub singular_values: Vec<f64>,
    /// State components with identically zero columns (never observed).
    pub unobservable_states: Vec<usize>,
}

impl StateEstimate6 {
    pub fn position(&self) -> Vector3<f64> {
        self.state.fixed_rows::<3>(0).into_owned()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.state.fixed_rows::<3>(3).into_owned()
    }
}

fn row_block(ob: &DynamicObservation, stm: &dyn StmProvider) -> Matrix3x6<f64> {
    skew(&ob.base.xbar()) * ob.base.attitude.matrix() * stm.phi_r(ob.time)
}

/// Stacked `3n×6` system and its right-hand side.
pub fn dynamic_system(obs: &[DynamicObservation], stm: &dyn StmProvider) -> (DMatrix<f64>, DVector<f64>) {
    let n = obs.len();
    let mut a = DMatrix::zeros(3 * n, 6);
    let mut b = DVector::zeros(3 * n);
    for (i, ob) in obs.iter().enumerate() {
        let h = skew(&ob.base.xbar()) * ob.base.attitude.matrix();
        a.fixed_view_mut::<3, 6>(3 * i, 0).copy_from(&(h * stm.phi_r(ob.time)));
        b.fixed_rows_mut::<3>(3 * i).copy_from(&(h * ob.effective_anchor()));
    }
    (a, b)
}

/// Columns kept after dropping identically zero ones, and their norms.
fn equilibrate(a: &DMatrix<f64>) -> (Vec<usize>, Vec<f64>, DMatrix<f64>) {
    let mut keep = vec![];
    let mut norms = vec![];
    for c in 0..a.ncols() {
        let nrm = a.column(c).norm();
        if nrm > 0.0 {
            keep.push(c);
            norms.push(nrm);
        }
    }
    let mut eq = DMatrix::zeros(a.nrows(), keep.len());
    for (k, &c) in keep.iter().enumerate() {
        eq.set_column(k, &(a.column(c) / norms[k]));
    }
    (keep, norms, eq)
}

fn sorted_svd(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.expect("requested");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let mut v = DMatrix::zeros(a.ncols(), idx.len());
    for (k, &i) in idx.iter().enumerate() {
        v.set_column(k, &vt.row(i).transpose());
    }
    (sv, v)
}

/// Batch least-squares estimate of `ξ₀`.
pub fn dynamic_dlt(obs: &[DynamicObservation], stm: &dyn StmProvider, opts: DynamicOptions) -> Result<StateEstimate6> {
    if obs.len() < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: obs.len() });
    }
    let (a, b) = dynamic_system(obs, stm);
    let (keep, norms, eq) = equilibrate(&a);
    if keep.is_empty() {
        return Err(Error::Unobservable { ratio: 0.0 });
    }
    let (sv, _) = sorted_svd(&eq);
    let ratio = sv.last().copied().unwrap_or(0.0) / sv[0];
    if sv.len() < keep.len() || !(ratio >= opts.unobservable_tol) {
        return Err(Error::Unobservable { ratio });
    }
    let sol = solve_stacked_detailed(&eq, &b, opts.solver)?;
    let mut state = Vector6::zeros();
    for (k, &c) in keep.iter().enumerate() {
        state[c] = sol.x[k] / norms[k];
    }
    let unobservable_states: Vec<usize> = (0..6).filter(|c| !keep.contains(c)).collect();
    let covariance = if unobservable_states.is_empty() { dynamic_covariance(obs, stm, &state).ok() } else { None };
    Ok(StateEstimate6 { state, covariance, singular_values: sv, unobservable_states })
}

/// `(AᵀA)⁻¹ (Σ Hᵢᵀ R̃ᵢ Hᵢ) (AᵀA)⁻¹` with `γᵢ = kᵀ T (pᵢ − δrᵢ − Φ_r ξ̂)`.
pub fn dynamic_covariance(obs: &[DynamicObservation], stm: &dyn StmProvider, state: &Vector6<f64>) -> Result<Matrix6<f64>> {
    let mut ata = Matrix6::zeros();
    let mut mid = Matrix6::zeros();
    for ob in obs {
        let h = row_block(ob, stm);
        let rel = ob.effective_anchor() - stm.phi_r(ob.time) * state;
        let gamma = K_AXIS.dot(&ob.base.attitude.apply(&rel));
        let r = residual_covariance(&ob.base.xbar(), &ob.base.image_plane_cov(), gamma);
        ata += h.transpose() * h;
        mid += h.transpose() * r * h;
    }
    let inv = ata.try_inverse().ok_or(Error::RankDeficient { smallest: 0.0, largest: ata.norm() })?;
    let p = inv * mid * inv;
    Ok((p + p.transpose()) * 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityReport {
    /// Singular values of the column-equilibrated system, descending.
    pub singular_values: Vec<f64>,
    /// Unit null directions in state coordinates.
    pub null_directions: Vec<[f64; 6]>,
    /// One-dimensional null space with every effective anchor at the origin:
    /// any scaled copy of the trajectory fits the bearings.
    pub homothety: bool,
}

pub fn observability_report(obs: &[DynamicObservation], stm: &dyn StmProvider, tol: f64) -> ObservabilityReport {
    let (a, _) = dynamic_system(obs, stm);
    let (keep, norms, eq) = equilibrate(&a);
    let mut null_directions = vec![];
    for c in 0..6 {
        if !keep.contains(&c) {
            let mut d = [0.0; 6];
            d[c] = 1.0;
            null_directions.push(d);
        }
    }
    let mut singular_values = vec![];
    if !keep.is_empty() {
        let (sv, v) = sorted_svd(&eq);
        let top = sv[0];
        for k in 0..keep.len() {
            let s = sv.get(k).copied().unwrap_or(0.0);
            if s < tol * top || k >= sv.len() {
                let mut d = Vector6::zeros();
                for (j, &c) in keep.iter().enumerate() {
                    d[c] = v[(j, k)] / norms[j];
                }
                let d = d.normalize();
                null_directions.push([d[0], d[1], d[2], d[3], d[4], d[5]]);
            }
        }
        singular_values = sv;
    }
    let scale = obs.iter().map(|o| o.base.anchor.norm() + o.camera_offset.norm()).fold(1.0, f64::max);
    let anchors_at_origin = obs.iter().all(|o| o.effective_anchor().norm() <= 1e-9 * scale);
    ObservabilityReport { homothety: null_directions.len() == 1 && anchors_at_origin, singular_values, null_directions }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cw_rhs(n: f64, x: &Vector6<f64>) -> Vector6<f64> {
        Vector6::new(
            x[3],
            x[4],
            x[5],
            3.0 * n * n * x[0] + 2.0 * n * x[4],
            -2.0 * n * x[3],
            -n * n * x[2],
        )
    }

    fn rk4(n: f64, x0: Vector6<f64>, t: f64, steps: usize) -> Vector6<f64> {
        let h = t / steps as f64;
        let mut x = x0;
        for _ in 0..steps {
            let k1 = cw_rhs(n, &x);
            let k2 = cw_rhs(n, &(x + k1 * (h / 2.0)));
            let k3 = cw_rhs(n, &(x + k2 * (h / 2.0)));
            let k4 = cw_rhs(n, &(x + k3 * h));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        x
    }

    const N: f64 = 0.00113;

    #[test]
    fn identity_at_epoch() {
        assert_eq!(cw_stm(0.0, N), Matrix6::identity());
    }

    #[test]
    fn matches_rk4() {
        let x0 = Vector6::new(120.0, -40.0, 15.0, 0.05, -0.2, 0.01);
        for t in [10.0, 500.0, 2500.0, 5000.0] {
            let a = cw_stm(t, N) * x0;
            let b = rk4(N, x0, t, 20_000);
            assert!((a - b).norm() <= 1e-8 * b.norm(), "t = {t}");
        }
    }

    #[test]
    fn satisfies_ode() {
        let h = 1e-3;
        for t in [100.0, 1234.0] {
            let d = (cw_stm(t + h, N) - cw_stm(t - h, N)) / (2.0 * h);
            let phi = cw_stm(t, N);
            for c in 0..6 {
                let want = cw_rhs(N, &phi.column(c).into_owned());
                let got = d.column(c).into_owned();
                assert!((got - want).norm() <= 1e-6 * want.norm().max(1e-12));
            }
        }
    }

    #[test]
    fn bounded_orbit_is_periodic() {
        // ẏ₀ = −2n x₀ removes the secular drift.
        let x0 = Vector6::new(100.0, 0.0, 0.0, 0.0, -2.0 * N * 100.0, 0.0);
        let period = 2.0 * std::f64::consts::PI / N;
        let x = cw_stm(period, N) * x0;
        assert!((x - x0).fixed_rows::<3>(0).norm() <= 1e-8 * x0.fixed_rows::<3>(0).norm());
    }

    #[test]
    fn double_integrator_blocks() {
        let p = DoubleIntegratorStm.phi(2.0);
        assert_eq!(p[(0, 3)], 2.0);
        assert_eq!(StaticStm.phi_r(5.0), Matrix3x6::identity());
    }
}
