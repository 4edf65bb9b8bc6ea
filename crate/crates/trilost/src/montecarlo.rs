//! Seeded, parallel Monte Carlo over scenario truth points.
//!
//! Draw `d` at truth point `k` uses its own ChaCha8 stream derived from
//! `(seed, k, d)`, so a report is bit-identical for any worker count. Draws
//! are evaluated in fixed-size chunks and folded into the moments strictly
//! in draw order.

use std::io::Write;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{LosObservation, PixelPoint};
use crate::error::{Error, Result};
use crate::geometry::SolverOptions;
use crate::scenarios::{Method, ScenarioConfig};

const CHUNK: usize = 4096;

/// Fraction of failed draws above which a run is flagged as suspicious.
pub const SUSPICIOUS_FAILURE_RATE: f64 = 1e-3;

/// Worker cap from `TRILOST_THREADS`, if set to a positive integer.
pub fn env_threads() -> Option<usize> {
    std::env::var("TRILOST_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub method: Method,
    pub mean_error: [f64; 3],
    pub sample_covariance: Matrix3<f64>,
    /// `sqrt(trace(sample covariance))`.
    pub total_std: f64,
    pub analytic_covariance: Option<Matrix3<f64>>,
    pub analytic_std: Option<f64>,
    /// Mean of `eᵀP⁻¹e` over successful draws; 3 when the covariance is right.
    pub nees_mean: Option<f64>,
    pub successes: usize,
    pub failures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimates: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub a: Method,
    pub b: Method,
    /// Total std of the per-draw difference of the two estimates.
    pub difference_std: f64,
    pub a_closer: usize,
    pub b_closer: usize,
    pub ties: usize,
}

impl PairStats {
    /// Fraction of decided draws in which `a` is closer to the truth.
    pub fn a_closer_fraction(&self) -> f64 {
        self.a_closer as f64 / (self.a_closer + self.b_closer).max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub truth: [f64; 3],
    pub methods: Vec<MethodStats>,
    pub pairs: Vec<PairStats>,
    pub suspicious: bool,
}

impl PointReport {
    pub fn method(&self, m: Method) -> Result<&MethodStats> {
        self.methods.iter().find(|s| s.method == m).ok_or_else(|| Error::MissingMethod(m.to_string()))
    }

    pub fn pair(&self, a: Method, b: Method) -> Result<&PairStats> {
        self.pairs
            .iter()
            .find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
            .ok_or_else(|| Error::MissingMethod(format!("{a}/{b}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub schema: u32,
    pub scenario: String,
    pub seed: u64,
    pub samples: usize,
    pub points: Vec<PointReport>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[derive(Default)]
pub struct McOptions {
    pub solver: SolverOptions,
    /// Keep every per-draw estimate in the report.
    pub keep_estimates: bool,
    /// Worker cap; `None` uses `TRILOST_THREADS` or all cores.
    pub threads: Option<usize>,
}


/// Per-draw generator for truth point `point` and draw `draw`.
pub fn draw_rng(seed: u64, point: usize, draw: u64) -> ChaCha8Rng {
    // splitmix64 of (seed, point) picks the key; the draw picks the stream.
    let mut z = seed ^ (point as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let mut rng = ChaCha8Rng::seed_from_u64(z);
    rng.set_stream(draw);
    rng
}

/// Adds pixel noise `L z`, `z ~ N(0, I)`, to every observation.
pub fn perturb<R: Rng>(rng: &mut R, obs: &[LosObservation]) -> Vec<LosObservation> {
    obs.iter()
        .map(|o| {
            let z = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            let e = o.pixel_cov.cholesky_l() * z;
            o.with_pixel(PixelPoint::new(o.pixel.u + e.x, o.pixel.v + e.y))
        })
        .collect()
}

/// Welford accumulator for 3-vectors.
#[derive(Debug, Clone, Default)]
struct Moments {
    n: usize,
    mean: Vector3<f64>,
    m2: Matrix3<f64>,
}

impl Moments {
    fn push(&mut self, x: &Vector3<f64>) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean).transpose();
    }

    fn covariance(&self) -> Matrix3<f64> {
        if self.n < 2 {
            return Matrix3::zeros();
        }
        let c = self.m2 / (self.n - 1) as f64;
        (c + c.transpose()) * 0.5
    }
}

struct MethodAcc {
    moments: Moments,
    nees_sum: f64,
    failures: usize,
    estimates: Vec<[f64; 3]>,
}

struct PairAcc {
    moments: Moments,
    a_closer: usize,
    b_closer: usize,
    ties: usize,
}

type DrawResult = Vec<Option<Vector3<f64>>>;

fn run_point(
    cfg: &ScenarioConfig,
    k: usize,
    opts: &McOptions,
) -> Result<PointReport> {
    let truth = Vector3::from(cfg.truth[k]);
    let clean = cfg.observations(k)?;
    let methods = &cfg.methods;
    let analytic: Vec<Option<Matrix3<f64>>> = methods.iter().map(|m| m.analytic_covariance(&clean).ok()).collect();
    let info: Vec<Option<Matrix3<f64>>> =
        analytic.iter().map(|p| p.and_then(|p| p.try_inverse())).collect();

    let mut acc: Vec<MethodAcc> = methods
        .iter()
        .map(|_| MethodAcc { moments: Moments::default(), nees_sum: 0.0, failures: 0, estimates: vec![] })
        .collect();
    let npairs = methods.len() * methods.len().saturating_sub(1) / 2;
    let mut pairs: Vec<PairAcc> =
        (0..npairs).map(|_| PairAcc { moments: Moments::default(), a_closer: 0, b_closer: 0, ties: 0 }).collect();

    let draw = |d: usize| -> DrawResult {
        let mut rng = draw_rng(cfg.seed, k, d as u64);
        let obs = perturb(&mut rng, &clean);
        methods.iter().map(|m| m.solve(&obs, opts.solver).ok().map(|e| e.position)).collect()
    };

    let mut start = 0;
    while start < cfg.samples {
        let end = (start + CHUNK).min(cfg.samples);
        let chunk: Vec<DrawResult> = (start..end).into_par_iter().map(draw).collect();
        for res in &chunk {
            for (i, r) in res.iter().enumerate() {
                match r {
                    Some(p) if p.iter().all(|v| v.is_finite()) => {
                        let e = p - truth;
                        acc[i].moments.push(&e);
                        if let Some(w) = &info[i] {
                            acc[i].nees_sum += (e.transpose() * w * e)[0];
                        }
                        if opts.keep_estimates {
                            acc[i].estimates.push([p.x, p.y, p.z]);
                        }
                    }
                    _ => acc[i].failures += 1,
                }
            }
            let mut q = 0;
            for i in 0..methods.len() {
                for j in (i + 1)..methods.len() {
                    if let (Some(a), Some(b)) = (res[i], res[j]) {
                        pairs[q].moments.push(&(a - b));
                        let (da, db) = ((a - truth).norm(), (b - truth).norm());
                        if da < db {
                            pairs[q].a_closer += 1;
                        } else if db < da {
                            pairs[q].b_closer += 1;
                        } else {
                            pairs[q].ties += 1;
                        }
                    }
                    q += 1;
                }
            }
        }
        start = end;
    }

    let mut suspicious = false;
    let stats = methods
        .iter()
        .zip(acc)
        .zip(&analytic)
        .map(|((m, a), p)| {
            let cov = a.moments.covariance();
            suspicious |= a.failures as f64 > SUSPICIOUS_FAILURE_RATE * cfg.samples as f64;
            let n = a.moments.n;
            MethodStats {
                method: *m,
                mean_error: [a.moments.mean.x, a.moments.mean.y, a.moments.mean.z],
                sample_covariance: cov,
                total_std: cov.trace().max(0.0).sqrt(),
                analytic_covariance: *p,
                analytic_std: p.map(|p| p.trace().max(0.0).sqrt()),
                nees_mean: if p.is_some() && n > 0 { Some(a.nees_sum / n as f64) } else { None },
                successes: n,
                failures: a.failures,
                estimates: opts.keep_estimates.then_some(a.estimates),
            }
        })
        .collect();
    let mut pair_stats = Vec::with_capacity(npairs);
    let mut q = 0;
    for i in 0..methods.len() {
        for j in (i + 1)..methods.len() {
            let p = &pairs[q];
            pair_stats.push(PairStats {
                a: methods[i],
                b: methods[j],
                difference_std: p.moments.covariance().trace().max(0.0).sqrt(),
                a_closer: p.a_closer,
                b_closer: p.b_closer,
                ties: p.ties,
            });
            q += 1;
        }
    }
    Ok(PointReport { truth: cfg.truth[k], methods: stats, pairs: pair_stats, suspicious })
}

pub fn run_monte_carlo(cfg: &ScenarioConfig) -> Result<MonteCarloReport> {
    run_monte_carlo_with(cfg, &McOptions::default())
}

pub fn run_monte_carlo_with(cfg: &ScenarioConfig, opts: &McOptions) -> Result<MonteCarloReport> {
    cfg.validate()?;
    let body = || -> Result<Vec<PointReport>> { (0..cfg.truth.len()).map(|k| run_point(cfg, k, opts)).collect() };
    let points = match opts.threads.or_else(env_threads) {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?
            .install(body)?,
        None => body()?,
    };
    Ok(MonteCarloReport {
        schema: crate::scenarios::SCHEMA_VERSION,
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        samples: cfg.samples,
        points,
    })
}

/// `100 (σ_baseline / σ_reference − 1)` from sample statistics.
pub fn precision_loss(point: &PointReport, baseline: Method, reference: Method) -> Result<f64> {
    let b = point.method(baseline)?.total_std;
    let r = point.method(reference)?.total_std;
    Ok(100.0 * (b / r - 1.0))
}

/// Same as [`precision_loss`] from the analytic covariances.
pub fn analytic_precision_loss(point: &PointReport, baseline: Method, reference: Method) -> Result<f64> {
    let b = point.method(baseline)?.analytic_std.ok_or_else(|| Error::MissingMethod(format!("{baseline} covariance")))?;
    let r = point.method(reference)?.analytic_std.ok_or_else(|| Error::MissingMethod(format!("{reference} covariance")))?;
    Ok(100.0 * (b / r - 1.0))
}

/// Analytic loss of `baseline` relative to `reference` at noise-free
/// observations, no sampling.
pub fn analytic_loss_at(obs: &[LosObservation], baseline: Method, reference: Method) -> Result<f64> {
    let b = baseline.analytic_covariance(obs)?.trace().sqrt();
    let r = reference.analytic_covariance(obs)?.trace().sqrt();
    Ok(100.0 * (b / r - 1.0))
}

/// Method used as the loss reference in CSV output.
fn reference_method(methods: &[Method]) -> Method {
    if methods.contains(&Method::Lost) {
        Method::Lost
    } else {
        methods[0]
    }
}

/// Flat table, one row per method per truth point:
/// `x, y, method, sigma_analytic, sigma_sample, loss_pct`.
pub fn write_csv<W: Write>(report: &MonteCarloReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["x", "y", "method", "sigma_analytic", "sigma_sample", "loss_pct"]).map_err(io)?;
    for p in &report.points {
        let methods: Vec<Method> = p.methods.iter().map(|m| m.method).collect();
        let reference = reference_method(&methods);
        for m in &p.methods {
            let loss = precision_loss(p, m.method, reference)?;
            w.write_record([
                p.truth[0].to_string(),
                p.truth[1].to_string(),
                m.method.to_string(),
                m.analytic_std.map(|s| s.to_string()).unwrap_or_default(),
                m.total_std.to_string(),
                loss.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapRow {
    pub x: f64,
    pub y: f64,
    pub method: Method,
    pub sigma_analytic: f64,
    pub loss_pct: f64,
}

/// Analytic total std of every method at every truth point, no sampling.
pub fn analytic_map(cfg: &ScenarioConfig) -> Result<Vec<MapRow>> {
    let reference = reference_method(&cfg.methods);
    let rows: Vec<Result<Vec<MapRow>>> = (0..cfg.truth.len())
        .into_par_iter()
        .map(|k| {
            let obs = cfg.observations(k)?;
            let r = reference.analytic_covariance(&obs)?.trace().sqrt();
            cfg.methods
                .iter()
                .map(|m| {
                    let s = m.analytic_covariance(&obs)?.trace().sqrt();
                    Ok(MapRow { x: cfg.truth[k][0], y: cfg.truth[k][1], method: *m, sigma_analytic: s, loss_pct: 100.0 * (s / r - 1.0) })
                })
                .collect()
        })
        .collect();
    let mut out = vec![];
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

pub fn write_map_csv<W: Write>(rows: &[MapRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["x", "y", "method", "sigma_analytic", "sigma_sample", "loss_pct"]).map_err(io)?;
    for r in rows {
        w.write_record([r.x.to_string(), r.y.to_string(), r.method.to_string(), r.sigma_analytic.to_string(), String::new(), r.loss_pct.to_string()])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
