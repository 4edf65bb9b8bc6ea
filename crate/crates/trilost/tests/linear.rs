mod common;

use common::*;
use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trilost::camera::{CameraIntrinsics, LosObservation, PixelCovariance, PixelPoint};
use trilost::geometry::{LeastSquaresBackend, Rotation, SolverOptions};
use trilost::linear::*;

fn fixture_a(shift: Vector3<f64>) -> Vec<LosObservation> {
    let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 0.0).unwrap();
    let cov = PixelCovariance::isotropic(1e-3).unwrap();
    [(1.0, Vector3::new(1.0, 0.0, 1.0)), (-1.0, Vector3::new(-1.0, 0.0, 1.0))]
        .into_iter()
        .map(|(u, p)| LosObservation::new(PixelPoint::new(u, 0.0), k, Rotation::identity(), p + shift, cov).unwrap())
        .collect()
}

fn sample_cov(samples: &[Vector3<f64>]) -> Matrix3<f64> {
    let n = samples.len() as f64;
    let mean = samples.iter().fold(Vector3::zeros(), |a, s| a + s) / n;
    samples.iter().fold(Matrix3::zeros(), |a, s| a + (s - mean) * (s - mean).transpose()) / (n - 1.0)
}

type Check<'a> = (&'a str, Matrix3<f64>, Vec<Vector3<f64>>);

#[test]
fn fixture_a_all_formulations() {
    let obs = fixture_a(Vector3::zeros());
    let opts = SolverOptions::default();
    let ests = [
        dlt_triangulate(&obs, LosNormalization::ImagePlane, opts).unwrap().position,
        dlt_triangulate(&obs, LosNormalization::UnitVector, opts).unwrap().position,
        plucker_triangulate(&obs).unwrap().position,
        collinearity_triangulate(&obs, opts).unwrap().position,
        explicit_range_triangulate(&obs, opts).unwrap().position,
    ];
    for e in ests {
        assert!(e.norm() < 1e-12, "{e}");
    }
}

#[test]
fn translating_anchors_translates_solution() {
    let shift = Vector3::new(5.0, 5.0, 5.0);
    let a = dlt_triangulate(&fixture_a(Vector3::zeros()), LosNormalization::ImagePlane, SolverOptions::default()).unwrap();
    let b = dlt_triangulate(&fixture_a(shift), LosNormalization::ImagePlane, SolverOptions::default()).unwrap();
    assert!((b.position - a.position - shift).norm() < 1e-12);
}

#[test]
fn fixture_a_covariance_vanishes_with_sigma() {
    let mut obs = fixture_a(Vector3::zeros());
    for o in &mut obs {
        o.pixel_cov = PixelCovariance::isotropic(1e-10).unwrap();
    }
    let p = dlt_covariance(&obs, LosNormalization::ImagePlane).unwrap();
    assert!(p.norm() < 1e-18);
}

#[test]
fn noise_free_random_geometries() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let opts = SolverOptions::default();
    for k in 0..300 {
        let n = 2 + k % 6;
        let (truth, obs) = random_geometry(&mut rng, n, 0.1);
        let s = scene_scale(&truth, &obs);
        for est in [
            dlt_triangulate(&obs, LosNormalization::ImagePlane, opts).unwrap(),
            dlt_triangulate(&obs, LosNormalization::UnitVector, opts).unwrap(),
            plucker_triangulate(&obs).unwrap(),
            collinearity_triangulate(&obs, opts).unwrap(),
            explicit_range_triangulate(&obs, opts).unwrap(),
        ] {
            assert!(rel(&est.position, &truth, s) < 1e-9);
            assert!(est.diagnostics.negative_range.iter().all(|&b| !b));
        }
    }
}

#[test]
fn unit_vector_dlt_equals_explicit_range_for_two_views() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..1000 {
        let (truth, clean) = random_geometry(&mut rng, 2, 2.0);
        let obs = noisy(&mut rng, &clean);
        let a = dlt_triangulate(&obs, LosNormalization::UnitVector, SolverOptions::default()).unwrap();
        let b = explicit_range_triangulate(&obs, SolverOptions::default()).unwrap();
        assert!(rel(&a.position, &b.position, scene_scale(&truth, &obs)) < 1e-10);
    }
}

#[test]
fn backends_agree_on_well_conditioned_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..100 {
        let (truth, clean) = random_geometry(&mut rng, 4, 1.0);
        let obs = noisy(&mut rng, &clean);
        let qr = dlt_triangulate(&obs, LosNormalization::ImagePlane, LeastSquaresBackend::QrFactorization).unwrap();
        let ne = dlt_triangulate(&obs, LosNormalization::ImagePlane, LeastSquaresBackend::NormalEquations).unwrap();
        assert!(rel(&qr.position, &ne.position, scene_scale(&truth, &obs)) < 1e-8);
        let tls = dlt_triangulate(&obs, LosNormalization::ImagePlane, LeastSquaresBackend::TotalLeastSquaresSvd).unwrap();
        assert!(rel(&tls.position, &truth, scene_scale(&truth, &obs)) < 1e-2);
    }
}

#[test]
fn law_of_cosines_residual_vanishes_at_truth() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    for _ in 0..100 {
        let (truth, obs) = random_geometry(&mut rng, 2, 0.1);
        let r0 = (obs[0].anchor - truth).norm();
        let r1 = (obs[1].anchor - truth).norm();
        let (e0, e1) = law_of_cosines_residual(r0, r1, &obs[0], &obs[1]);
        assert!(e0.abs() < 1e-9 * r0.max(r1) && e1.abs() < 1e-9 * r0.max(r1));
    }
}

#[test]
fn explicit_range_warns_on_large_n() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let (_, obs) = random_geometry(&mut rng, EXPLICIT_RANGE_WARN_N + 1, 0.1);
    let est = explicit_range_triangulate(&obs, SolverOptions::default()).unwrap();
    assert_eq!(est.diagnostics.warnings.len(), 1);
}

#[test]
fn too_few_observations() {
    let obs = fixture_a(Vector3::zeros());
    assert!(dlt_triangulate(&obs[..1], LosNormalization::ImagePlane, SolverOptions::default()).is_err());
    assert!(plucker_triangulate(&obs[..1]).is_err());
}

#[test]
fn analytic_covariances_match_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let opts = SolverOptions::default();
    for n in [2usize, 4] {
        let (_, obs) = random_geometry(&mut rng, n, 0.5);
        let draws: Vec<Vec<LosObservation>> = (0..20_000).map(|_| noisy(&mut rng, &obs)).collect();
        let mut checks: Vec<Check> = vec![
            (
                "dlt",
                dlt_covariance(&obs, LosNormalization::ImagePlane).unwrap(),
                draws.iter().map(|d| dlt_triangulate(d, LosNormalization::ImagePlane, opts).unwrap().position).collect(),
            ),
            (
                "dlt-unit",
                dlt_covariance(&obs, LosNormalization::UnitVector).unwrap(),
                draws.iter().map(|d| dlt_triangulate(d, LosNormalization::UnitVector, opts).unwrap().position).collect(),
            ),
            (
                "plucker",
                plucker_triangulate(&obs).unwrap().covariance.unwrap(),
                draws.iter().map(|d| plucker_triangulate(d).unwrap().position).collect(),
            ),
            (
                "collinearity",
                collinearity_covariance(&obs).unwrap(),
                draws.iter().map(|d| collinearity_triangulate(d, opts).unwrap().position).collect(),
            ),
        ];
        if n == 2 {
            checks.push((
                "explicit-range",
                explicit_range_covariance_n2(&obs).unwrap(),
                draws.iter().map(|d| explicit_range_triangulate(d, opts).unwrap().position).collect(),
            ));
        }
        for (name, analytic, samples) in checks {
            let d = relative_difference(&sample_cov(&samples), &analytic);
            assert!(d < 0.05, "{name} n={n}: {d}");
        }
    }
}
