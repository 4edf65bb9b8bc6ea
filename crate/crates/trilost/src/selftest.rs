//! Fast invariant checks run by `trilost selftest`.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::camera::{CameraIntrinsics, LosObservation, PixelCovariance};
use crate::dynamic::{dynamic_dlt, observability_report, DynamicOptions};
use crate::geometry::{Rotation, SolverOptions};
use crate::io::{bundler_to_string, parse_bundler_str, synthetic_dataset, ParseOptions};
use crate::linear::relative_difference;
use crate::optimal::{hs_covariance, lost_covariance};
use crate::scenarios::{build_relnav, Method};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_pair(rng: &mut ChaCha8Rng) -> Option<(Vector3<f64>, Vec<LosObservation>)> {
    let k = CameraIntrinsics::from_fov(60.0, 1024.0).ok()?;
    let truth = Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), 0.0);
    let cov = PixelCovariance::isotropic(0.2).ok()?;
    let obs: Option<Vec<_>> = (0..2)
        .map(|i| {
            let p = Vector3::new(
                rng.random_range(-300.0..300.0),
                rng.random_range(-300.0..300.0),
                rng.random_range(100.0..900.0) * if i == 0 { 1.0 } else { 0.7 },
            );
            let t = Rotation::look_along(&(p - truth), &Vector3::y()).ok()?;
            LosObservation::synthesize(&truth, &p, k, t, cov)
        })
        .collect();
    Some((truth, obs?))
}

pub fn run() -> Vec<Check> {
    let mut out = vec![];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);

    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..100 {
        let Some((truth, obs)) = random_pair(&mut rng) else { continue };
        for m in Method::ALL.iter().filter(|m| **m != Method::Quat) {
            match m.solve(&obs, SolverOptions::default()) {
                Ok(e) => worst = worst.max((e.position - truth).norm() / obs[0].anchor.norm()),
                Err(_) => failures += 1,
            }
        }
    }
    out.push(Check {
        name: "noise-free exactness",
        passed: worst < 1e-9 && failures == 0,
        detail: format!("worst relative error {worst:e}, {failures} failures"),
    });

    let mut worst = 0.0f64;
    for _ in 0..100 {
        let Some((_, obs)) = random_pair(&mut rng) else { continue };
        if let (Ok(a), Ok(b)) = (hs_covariance(&obs[0], &obs[1]), lost_covariance(&obs)) {
            worst = worst.max(relative_difference(&a, &b));
        }
    }
    out.push(Check { name: "two-view covariance parity", passed: worst < 1e-12, detail: format!("worst {worst:e}") });

    let chief = build_relnav(Vector3::zeros(), 10, 0.1).map(|s| {
        let rep = observability_report(&s.observations, &s.stm, 1e-8);
        rep.homothety
    });
    let offset = build_relnav(Vector3::new(10.0, 0.0, 0.0), 10, 0.1).and_then(|s| {
        let est = dynamic_dlt(&s.observations, &s.stm, DynamicOptions::default())?;
        Ok((est.state - s.truth).norm() / s.truth.norm())
    });
    let passed = matches!(chief, Ok(true)) && matches!(offset, Ok(e) if e < 1e-6);
    out.push(Check { name: "relative navigation observability", passed, detail: format!("homothety {chief:?}, offset error {offset:?}") });

    let ds = synthetic_dataset(&mut rng, 20, 4, 0.5);
    let rt = parse_bundler_str(&bundler_to_string(&ds), ParseOptions::default());
    out.push(Check { name: "bundler round trip", passed: rt.as_ref() == Ok(&ds), detail: String::new() });
    out
}
