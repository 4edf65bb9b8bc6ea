//! Bundler `.out` reconstruction files, observation/estimate JSON, and
//! re-triangulation of reconstructed point clouds.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use log::warn;
use nalgebra::{Matrix2, Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, LosObservation, PixelCovariance, PixelPoint};
use crate::error::{Error, Result};
use crate::geometry::{Rotation, SolverOptions};
use crate::linear::{Diagnostics, TriangulationEstimate, EXPLICIT_RANGE_WARN_N};
use crate::scenarios::Method;

pub const BUNDLER_HEADER: &str = "# Bundle file v0.3";

#[derive(Debug, Clone, PartialEq)]
pub struct BundlerCamera {
    pub focal: f64,
    pub k1: f64,
    pub k2: f64,
    /// Bundler world-to-camera rotation (camera looks down its −z axis).
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundlerView {
    pub camera: usize,
    pub key: usize,
    /// Keypoint relative to the image center, y up.
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundlerPoint {
    pub position: Vector3<f64>,
    pub color: [u8; 3],
    pub views: Vec<BundlerView>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BundlerDataset {
    pub cameras: Vec<BundlerCamera>,
    pub points: Vec<BundlerPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParseOptions {
    /// Reject files with non-zero radial distortion instead of warning.
    pub strict: bool,
}

/// A camera in this crate's convention: pinhole looking down +z with image
/// v pointing down.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub intrinsics: CameraIntrinsics,
    /// Scene-to-camera rotation.
    pub attitude: Rotation,
    /// Camera center in the scene frame.
    pub center: Vector3<f64>,
}

/// The only place Bundler's camera convention is translated.
///
/// Bundler maps a scene point `X` to `P = R X + t` and projects
/// `(x, y) = −f (Pₓ, P_y) / P_z`, with y up and the origin at the image
/// center. Flipping the second and third camera axes gives a +z-looking
/// camera with v down:
///
/// * attitude `T = diag(1, −1, −1) R`
/// * center `c = −Rᵀ t`
/// * intrinsics `K = diag(f, f, 1)` (principal point at the origin)
/// * pixel `(u, v) = (x, −y)`
///
/// Returns `None` for unregistered cameras (zero focal length or a
/// non-rotation matrix, as Bundler writes for images it failed to place).
pub fn bundler_to_pose(cam: &BundlerCamera) -> Option<CameraPose> {
    if !(cam.focal > 0.0 && cam.focal.is_finite()) {
        return None;
    }
    let flip = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
    // Bundler prints rotations with limited precision.
    let attitude = Rotation::nearest(flip * cam.rotation, 1e-4).ok()?;
    let center = -(cam.rotation.transpose() * cam.translation);
    let intrinsics = CameraIntrinsics::new(cam.focal, cam.focal, 0.0, 0.0, 0.0).ok()?;
    Some(CameraPose { intrinsics, attitude, center })
}

/// Inverse of [`bundler_to_pose`] (distortion-free).
pub fn pose_to_bundler(pose: &CameraPose) -> BundlerCamera {
    let flip = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
    let rotation = flip * pose.attitude.matrix();
    BundlerCamera { focal: pose.intrinsics.dx, k1: 0.0, k2: 0.0, rotation, translation: -(rotation * pose.center) }
}

pub fn bundler_view_to_pixel(view: &BundlerView) -> PixelPoint {
    PixelPoint::new(view.x, -view.y)
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(body: &'a str, first_line: usize) -> Self {
        let items = body
            .lines()
            .enumerate()
            .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + first_line, t)))
            .collect();
        Tokens { items, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.items.len() - self.pos
    }

    fn next_raw(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let t = self.items.get(self.pos).copied().ok_or_else(|| Error::TruncatedFile(format!("expected {what}")))?;
        self.pos += 1;
        Ok(t)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let (line, t) = self.next_raw(what)?;
        let v: f64 = t.parse().map_err(|_| Error::Parse { line, msg: format!("bad {what} '{t}'") })?;
        if !v.is_finite() {
            return Err(Error::Parse { line, msg: format!("non-finite {what}") });
        }
        Ok(v)
    }

    fn usize(&mut self, what: &str) -> Result<(usize, usize)> {
        let (line, t) = self.next_raw(what)?;
        let v = t.parse().map_err(|_| Error::Parse { line, msg: format!("bad {what} '{t}'") })?;
        Ok((line, v))
    }

    fn vec3(&mut self, what: &str) -> Result<Vector3<f64>> {
        Ok(Vector3::new(self.f64(what)?, self.f64(what)?, self.f64(what)?))
    }
}

const CAMERA_TOKENS: usize = 15;
const MIN_POINT_TOKENS: usize = 7;

pub fn parse_bundler_str(text: &str, opts: ParseOptions) -> Result<BundlerDataset> {
    let (header, body) = match text.split_once('\n') {
        Some((h, b)) => (h, b),
        None => (text, ""),
    };
    if header.trim_end() != BUNDLER_HEADER {
        return Err(Error::MalformedHeader(header.chars().take(64).collect()));
    }
    let mut tok = Tokens::new(body, 2);
    let (_, ncam) = tok.usize("camera count")?;
    let (_, npts) = tok.usize("point count")?;
    let need = ncam.checked_mul(CAMERA_TOKENS).zip(npts.checked_mul(MIN_POINT_TOKENS)).and_then(|(a, b)| a.checked_add(b));
    if need.is_none_or(|n| n > tok.remaining()) {
        return Err(Error::TruncatedFile(format!("{ncam} cameras and {npts} points claimed, {} tokens present", tok.remaining())));
    }
    let mut cameras = Vec::with_capacity(ncam);
    let mut distorted = 0usize;
    for _ in 0..ncam {
        let focal = tok.f64("focal length")?;
        let k1 = tok.f64("k1")?;
        let k2 = tok.f64("k2")?;
        let mut rotation = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                rotation[(r, c)] = tok.f64("rotation")?;
            }
        }
        let translation = tok.vec3("translation")?;
        if k1 != 0.0 || k2 != 0.0 {
            distorted += 1;
        }
        cameras.push(BundlerCamera { focal, k1, k2, rotation, translation });
    }
    if distorted > 0 {
        if opts.strict {
            return Err(Error::InvalidInput(format!("{distorted} cameras carry radial distortion (strict mode)")));
        }
        warn!("{distorted} cameras carry radial distortion; ignored by the pinhole model");
    }
    let mut points = Vec::with_capacity(npts);
    for _ in 0..npts {
        let position = tok.vec3("point position")?;
        let mut color = [0u8; 3];
        for c in &mut color {
            let (line, v) = tok.usize("color")?;
            *c = u8::try_from(v).map_err(|_| Error::Parse { line, msg: format!("color {v} out of range") })?;
        }
        let (line, nviews) = tok.usize("view count")?;
        if nviews == 0 {
            return Err(Error::Parse { line, msg: "empty view list".into() });
        }
        if nviews.checked_mul(4).is_none_or(|n| n > tok.remaining()) {
            return Err(Error::TruncatedFile(format!("line {line}: {nviews} views claimed")));
        }
        let mut views = Vec::with_capacity(nviews);
        for _ in 0..nviews {
            let (line, camera) = tok.usize("view camera")?;
            if camera >= ncam {
                return Err(Error::IndexOutOfRange(format!("line {line}: camera {camera} of {ncam}")));
            }
            let (_, key) = tok.usize("keypoint index")?;
            let x = tok.f64("keypoint x")?;
            let y = tok.f64("keypoint y")?;
            views.push(BundlerView { camera, key, x, y });
        }
        points.push(BundlerPoint { position, color, views });
    }
    if tok.remaining() > 0 {
        let (line, _) = tok.items[tok.pos];
        return Err(Error::Parse { line, msg: "trailing data".into() });
    }
    Ok(BundlerDataset { cameras, points })
}

pub fn parse_bundler(path: impl AsRef<Path>, opts: ParseOptions) -> Result<BundlerDataset> {
    let text = std::fs::read_to_string(path)?;
    parse_bundler_str(&text, opts)
}

/// Bundler text with shortest round-trip float formatting.
pub fn bundler_to_string(ds: &BundlerDataset) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{BUNDLER_HEADER}");
    let _ = writeln!(s, "{} {}", ds.cameras.len(), ds.points.len());
    for c in &ds.cameras {
        let _ = writeln!(s, "{} {} {}", c.focal, c.k1, c.k2);
        for r in 0..3 {
            let _ = writeln!(s, "{} {} {}", c.rotation[(r, 0)], c.rotation[(r, 1)], c.rotation[(r, 2)]);
        }
        let _ = writeln!(s, "{} {} {}", c.translation.x, c.translation.y, c.translation.z);
    }
    for p in &ds.points {
        let _ = writeln!(s, "{} {} {}", p.position.x, p.position.y, p.position.z);
        let _ = writeln!(s, "{} {} {}", p.color[0], p.color[1], p.color[2]);
        let _ = write!(s, "{}", p.views.len());
        for v in &p.views {
            let _ = write!(s, " {} {} {} {}", v.camera, v.key, v.x, v.y);
        }
        s.push('\n');
    }
    s
}

pub fn write_bundler<W: Write>(ds: &BundlerDataset, mut out: W) -> Result<()> {
    out.write_all(bundler_to_string(ds).as_bytes())?;
    Ok(())
}

/// Forward-projected synthetic reconstruction: points in a unit-scale
/// cluster, cameras at strongly varying distances all facing the cluster.
pub fn synthetic_dataset<R: Rng>(rng: &mut R, n_points: usize, n_cameras: usize, sigma_px: f64) -> BundlerDataset {
    let half_fov = 30f64.to_radians().tan();
    let mut poses = Vec::with_capacity(n_cameras);
    while poses.len() < n_cameras {
        let dir = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample::<f64, _>(StandardNormal).abs());
        if dir.norm() < 1e-3 {
            continue;
        }
        let dist = 15.0 * 20f64.powf(rng.random::<f64>());
        let center = dist * dir.normalize();
        let aim = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let Ok(attitude) = Rotation::look_along(&(aim - center), &Vector3::z()) else { continue };
        let focal = rng.random_range(800.0..2500.0);
        let intrinsics = CameraIntrinsics::new(focal, focal, 0.0, 0.0, 0.0).expect("positive focal");
        poses.push(CameraPose { intrinsics, attitude, center });
    }
    let mut points = Vec::with_capacity(n_points);
    while points.len() < n_points {
        let x = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let mut views = vec![];
        for (ci, pose) in poses.iter().enumerate() {
            let c = pose.attitude.apply(&(x - pose.center));
            if c.z <= 0.0 || (c.x / c.z).abs() > half_fov || (c.y / c.z).abs() > half_fov {
                continue;
            }
            let u = pose.intrinsics.dx * c.x / c.z + sigma_px * rng.sample::<f64, _>(StandardNormal);
            let v = pose.intrinsics.dy * c.y / c.z + sigma_px * rng.sample::<f64, _>(StandardNormal);
            views.push(BundlerView { camera: ci, key: points.len(), x: u, y: -v });
        }
        if views.len() >= 2 {
            points.push(BundlerPoint { position: x, color: [128, 128, 128], views });
        }
    }
    BundlerDataset { cameras: poses.iter().map(pose_to_bundler).collect(), points }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionOptions {
    /// Keypoint standard deviation in pixels; Bundler files carry none.
    pub sigma_px: f64,
    pub solver: SolverOptions,
    /// Run explicit-range even when a point has more than 50 views.
    pub allow_large_explicit_range: bool,
}

impl Default for ReconstructionOptions {
    fn default() -> Self {
        ReconstructionOptions { sigma_px: 0.5, solver: SolverOptions::default(), allow_large_explicit_range: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub index: usize,
    pub reference: [f64; 3],
    pub views: usize,
    /// Per method: estimate, or `None` on failure.
    pub estimates: Vec<Option<[f64; 3]>>,
    pub residuals: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Bin edges; the first and last bins are open-ended.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Decade bins from 1e-9 to 1e3 plus underflow and overflow bins.
    pub fn decades(values: &[f64]) -> Self {
        let edges: Vec<f64> = (-9..=3).map(|e| 10f64.powi(e)).collect();
        let mut counts = vec![0; edges.len() + 1];
        for &v in values {
            let k = edges.partition_point(|&e| e <= v);
            counts[k] += 1;
        }
        Histogram { edges, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub solved: usize,
    pub failed: usize,
    pub median_residual: Option<f64>,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub schema: u32,
    pub methods: Vec<Method>,
    pub skipped_cameras: usize,
    pub points: Vec<PointResult>,
    pub summaries: Vec<MethodSummary>,
}

impl ReconstructionReport {
    pub fn summary(&self, m: Method) -> Result<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == m).ok_or_else(|| Error::MissingMethod(m.to_string()))
    }
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

/// Observations of one reconstructed point from its views; views through
/// unregistered cameras are dropped.
pub fn point_observations(poses: &[Option<CameraPose>], point: &BundlerPoint, sigma_px: f64) -> Result<Vec<LosObservation>> {
    let cov = PixelCovariance::isotropic(sigma_px)?;
    point
        .views
        .iter()
        .filter_map(|v| poses.get(v.camera).and_then(Option::as_ref).map(|p| (v, p)))
        .map(|(v, p)| LosObservation::new(bundler_view_to_pixel(v), p.intrinsics, p.attitude, p.center, cov))
        .collect()
}

/// Re-triangulates every point (intersection form: anchors are camera
/// centers) and compares against the stored positions.
pub fn retriangulate(ds: &BundlerDataset, methods: &[Method], opts: &ReconstructionOptions) -> Result<ReconstructionReport> {
    if methods.is_empty() {
        return Err(Error::InvalidInput("no methods requested".into()));
    }
    let poses: Vec<Option<CameraPose>> = ds.cameras.iter().map(bundler_to_pose).collect();
    let skipped_cameras = poses.iter().filter(|p| p.is_none()).count();
    let points: Vec<PointResult> = ds
        .points
        .par_iter()
        .enumerate()
        .map(|(index, pt)| {
            let mut res = PointResult {
                index,
                reference: [pt.position.x, pt.position.y, pt.position.z],
                views: pt.views.len(),
                estimates: vec![],
                residuals: vec![],
                failures: vec![],
            };
            let obs = point_observations(&poses, pt, opts.sigma_px);
            for m in methods {
                let out = match &obs {
                    Err(e) => Err(e.clone()),
                    Ok(o) if o.len() < 2 => Err(Error::TooFewObservations { needed: 2, got: o.len() }),
                    Ok(o) if *m == Method::ExplicitRange && o.len() > EXPLICIT_RANGE_WARN_N && !opts.allow_large_explicit_range => {
                        Err(Error::InvalidInput(format!("explicit-range refused for {} views", o.len())))
                    }
                    Ok(o) => m.solve(o, opts.solver),
                };
                match out {
                    Ok(TriangulationEstimate { position, .. }) if position.iter().all(|v| v.is_finite()) => {
                        res.estimates.push(Some([position.x, position.y, position.z]));
                        res.residuals.push(Some((position - pt.position).norm()));
                    }
                    Ok(_) => {
                        res.estimates.push(None);
                        res.residuals.push(None);
                        res.failures.push(format!("{m}: non-finite estimate"));
                    }
                    Err(e) => {
                        res.estimates.push(None);
                        res.residuals.push(None);
                        res.failures.push(format!("{m}: {e}"));
                    }
                }
            }
            res
        })
        .collect();
    let summaries = methods
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let mut r: Vec<f64> = points.iter().filter_map(|p| p.residuals[k]).collect();
            let histogram = Histogram::decades(&r);
            MethodSummary { method: *m, solved: r.len(), failed: points.len() - r.len(), median_residual: median(&mut r), histogram }
        })
        .collect();
    Ok(ReconstructionReport { schema: 1, methods: methods.to_vec(), skipped_cameras, points, summaries })
}

/// `method, bin_lo, bin_hi, count` for every method's histogram.
pub fn write_histogram_csv<W: Write>(report: &ReconstructionReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["method", "bin_lo", "bin_hi", "count", "median"]).map_err(io)?;
    for s in &report.summaries {
        let h = &s.histogram;
        for (k, count) in h.counts.iter().enumerate() {
            let lo = if k == 0 { 0.0 } else { h.edges[k - 1] };
            let hi = h.edges.get(k).copied().unwrap_or(f64::INFINITY);
            let med = s.median_residual.map(|m| m.to_string()).unwrap_or_default();
            w.write_record([s.method.to_string(), lo.to_string(), hi.to_string(), count.to_string(), med]).map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Camera orientation in observation files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttitudeJson {
    /// Scalar-last Hamilton quaternion `[x, y, z, w]` of the scene-to-camera
    /// rotation.
    Quaternion([f64; 4]),
    /// Row-major scene-to-camera rotation matrix.
    Matrix([[f64; 3]; 3]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicsJson {
    pub dx: f64,
    pub dy: f64,
    #[serde(default)]
    pub alpha: f64,
    pub up: f64,
    pub vp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationJson {
    pub pixel: [f64; 2],
    pub intrinsics: IntrinsicsJson,
    pub attitude: AttitudeJson,
    pub anchor: [f64; 3],
    /// Isotropic pixel sigma; ignored when `pixel_cov` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_px: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_cov: Option<[[f64; 2]; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationFile {
    pub schema: u32,
    pub observations: Vec<ObservationJson>,
}

impl ObservationJson {
    pub fn to_observation(&self) -> Result<LosObservation> {
        let i = &self.intrinsics;
        let k = CameraIntrinsics::new(i.dx, i.dy, i.alpha, i.up, i.vp)?;
        let attitude = match &self.attitude {
            AttitudeJson::Quaternion(q) => Rotation::from_quaternion(*q)?,
            AttitudeJson::Matrix(m) => Rotation::new(Matrix3::from_fn(|r, c| m[r][c]))?,
        };
        let cov = match (self.pixel_cov, self.sigma_px) {
            (Some(c), _) => PixelCovariance::new(Matrix2::new(c[0][0], c[0][1], c[1][0], c[1][1]))?,
            (None, Some(s)) => PixelCovariance::isotropic(s)?,
            (None, None) => return Err(Error::InvalidInput("observation needs sigma_px or pixel_cov".into())),
        };
        LosObservation::new(PixelPoint::new(self.pixel[0], self.pixel[1]), k, attitude, Vector3::from(self.anchor), cov)
    }

    pub fn from_observation(o: &LosObservation) -> Self {
        let k = &o.intrinsics;
        let m = o.attitude.matrix();
        let c = o.pixel_cov.matrix();
        ObservationJson {
            pixel: [o.pixel.u, o.pixel.v],
            intrinsics: IntrinsicsJson { dx: k.dx, dy: k.dy, alpha: k.alpha, up: k.up, vp: k.vp },
            attitude: AttitudeJson::Matrix([[m[(0, 0)], m[(0, 1)], m[(0, 2)]], [m[(1, 0)], m[(1, 1)], m[(1, 2)]], [m[(2, 0)], m[(2, 1)], m[(2, 2)]]]),
            anchor: [o.anchor.x, o.anchor.y, o.anchor.z],
            sigma_px: o.pixel_cov.scalar_sigma(),
            pixel_cov: if o.pixel_cov.scalar_sigma().is_some() { None } else { Some([[c[(0, 0)], c[(0, 1)]], [c[(1, 0)], c[(1, 1)]]]) },
        }
    }
}

impl ObservationFile {
    pub fn from_json(s: &str) -> Result<Self> {
        let f: ObservationFile = serde_json::from_str(s).map_err(|e| Error::InvalidInput(format!("observations: {e}")))?;
        if f.schema != 1 {
            return Err(Error::InvalidInput(format!("unsupported schema {}", f.schema)));
        }
        Ok(f)
    }

    pub fn observations(&self) -> Result<Vec<LosObservation>> {
        self.observations.iter().map(ObservationJson::to_observation).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateJson {
    pub schema: u32,
    pub method: Method,
    pub position: [f64; 3],
    pub covariance: Option<[[f64; 3]; 3]>,
    pub total_std: Option<f64>,
    pub diagnostics: Diagnostics,
}

impl EstimateJson {
    pub fn new(method: Method, est: &TriangulationEstimate) -> Self {
        let p = est.position;
        EstimateJson {
            schema: 1,
            method,
            position: [p.x, p.y, p.z],
            covariance: est.covariance.map(|c| [[c[(0, 0)], c[(0, 1)], c[(0, 2)]], [c[(1, 0)], c[(1, 1)], c[(1, 2)]], [c[(2, 0)], c[(2, 1)], c[(2, 2)]]]),
            total_std: est.total_std(),
            diagnostics: est.diagnostics.clone(),
        }
    }
}
