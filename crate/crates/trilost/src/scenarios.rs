//! Declarative scenario descriptions and builders for the descent (TRN),
//! Uranian-moon and relative-navigation examples.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, LosObservation, PixelCovariance};
use crate::dynamic::{cw_stm, CwStm, DynamicObservation};
use crate::error::{Error, Result};
use crate::geometry::{Rotation, SolverOptions};
use crate::linear::{
    collinearity_covariance, collinearity_triangulate, dlt_covariance, dlt_triangulate, explicit_range_covariance_n2,
    explicit_range_triangulate, plucker_triangulate, LosNormalization, TriangulationEstimate,
};
use crate::optimal::{hs_covariance, hs_triangulate, lost_covariance, lost_triangulate, quat_triangulate};

pub const SCHEMA_VERSION: u32 = 1;

/// Triangulation method selectable from configs and the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Dlt,
    DltUnit,
    Plucker,
    Collinearity,
    ExplicitRange,
    Hs,
    Quat,
    Lost,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Dlt,
        Method::DltUnit,
        Method::Plucker,
        Method::Collinearity,
        Method::ExplicitRange,
        Method::Hs,
        Method::Quat,
        Method::Lost,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dlt => "dlt",
            Method::DltUnit => "dlt-unit",
            Method::Plucker => "plucker",
            Method::Collinearity => "collinearity",
            Method::ExplicitRange => "explicit-range",
            Method::Hs => "hs",
            Method::Quat => "quat",
            Method::Lost => "lost",
        }
    }

    pub fn solve(self, obs: &[LosObservation], opts: SolverOptions) -> Result<TriangulationEstimate> {
        match self {
            Method::Dlt => dlt_triangulate(obs, LosNormalization::ImagePlane, opts),
            Method::DltUnit => dlt_triangulate(obs, LosNormalization::UnitVector, opts),
            Method::Plucker => plucker_triangulate(obs),
            Method::Collinearity => collinearity_triangulate(obs, opts),
            Method::ExplicitRange => explicit_range_triangulate(obs, opts),
            Method::Hs => {
                let [a, b] = two(obs)?;
                Ok(hs_triangulate(a, b, None)?.estimate)
            }
            Method::Quat => {
                let [a, b] = two(obs)?;
                Ok(quat_triangulate(a, b)?.estimate)
            }
            Method::Lost => lost_triangulate(obs, opts),
        }
    }

    /// First-order covariance at the given (usually noise-free) observations.
    pub fn analytic_covariance(self, obs: &[LosObservation]) -> Result<Matrix3<f64>> {
        match self {
            Method::Dlt => dlt_covariance(obs, LosNormalization::ImagePlane),
            Method::DltUnit => dlt_covariance(obs, LosNormalization::UnitVector),
            Method::Plucker => plucker_triangulate(obs)?
                .covariance
                .ok_or(Error::DegenerateGeometry("no Plücker covariance")),
            Method::Collinearity => collinearity_covariance(obs),
            Method::ExplicitRange => explicit_range_covariance_n2(obs),
            Method::Hs => {
                let [a, b] = two(obs)?;
                hs_covariance(a, b)
            }
            Method::Quat | Method::Lost => lost_covariance(obs),
        }
    }
}

fn two(obs: &[LosObservation]) -> Result<[&LosObservation; 2]> {
    match obs {
        [a, b] => Ok([a, b]),
        _ => Err(Error::WrongArity { expected: 2, got: obs.len() }),
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method '{s}'")))
    }
}

pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CameraModel {
    /// Square detector of `pixels` across spanning `fov_deg`.
    Fov { fov_deg: f64, pixels: f64 },
    /// Square detector defined by its field of view and per-pixel angle.
    FovIfov { fov_deg: f64, ifov_rad: f64 },
    Intrinsics { dx: f64, dy: f64, #[serde(default)] alpha: f64, up: f64, vp: f64 },
}

impl CameraModel {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        match *self {
            CameraModel::Fov { fov_deg, pixels } => CameraIntrinsics::from_fov(fov_deg, pixels),
            CameraModel::FovIfov { fov_deg, ifov_rad } => CameraIntrinsics::from_fov_ifov(fov_deg, ifov_rad),
            CameraModel::Intrinsics { dx, dy, alpha, up, vp } => CameraIntrinsics::new(dx, dy, alpha, up, vp),
        }
    }

    /// Full field of view in degrees (along the first detector axis).
    pub fn fov_deg(&self) -> Result<f64> {
        match *self {
            CameraModel::Fov { fov_deg, .. } | CameraModel::FovIfov { fov_deg, .. } => Ok(fov_deg),
            CameraModel::Intrinsics { dx, up, .. } => {
                Ok((2.0 * (up / dx).atan()).to_degrees())
            }
        }
    }
}

/// How a camera is oriented. The rotation maps scene vectors into camera
/// coordinates; quaternions are scalar-last Hamilton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AttitudeSpec {
    Matrix { rows: [[f64; 3]; 3] },
    Quaternion { xyzw: [f64; 4] },
    Boresight { boresight: [f64; 3], up: [f64; 3] },
    /// Boresight toward a target, recomputed at every truth point.
    PointAt { target: usize, up: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub model: CameraModel,
    pub attitude: AttitudeSpec,
}

/// A known point and the camera that images it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub position: [f64; 3],
    pub camera: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibilityRule {
    pub planet_center: [f64; 3],
    pub planet_radius: f64,
    /// Radius of each target body, in target order.
    pub target_radii: Vec<f64>,
    /// Unit vector toward the sun.
    pub sun_direction: [f64; 3],
    #[serde(default = "default_clearance")]
    pub clearance_fraction: f64,
    #[serde(default = "default_fill")]
    pub max_fill_fraction: f64,
    #[serde(default = "default_sun")]
    pub sun_exclusion_deg: f64,
}

fn default_clearance() -> f64 {
    0.05
}
fn default_fill() -> f64 {
    0.80
}
fn default_sun() -> f64 {
    30.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "target", rename_all = "kebab-case")]
pub enum Visibility {
    Visible,
    InsidePlanet,
    Occluded(usize),
    Clearance(usize),
    Overfill(usize),
    SunExclusion(usize),
}

impl Visibility {
    pub fn is_visible(self) -> bool {
        self == Visibility::Visible
    }
}

fn angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

fn half_angle(radius: f64, dist: f64) -> f64 {
    (radius / dist).min(1.0).asin()
}

impl VisibilityRule {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("clearance_fraction", self.clearance_fraction), ("max_fill_fraction", self.max_fill_fraction)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidInput(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.planet_radius >= 0.0) || self.target_radii.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::InvalidInput("radii must be non-negative".into()));
        }
        if Vector3::from(self.sun_direction).norm() == 0.0 {
            return Err(Error::InvalidInput("sun direction must be non-zero".into()));
        }
        Ok(())
    }

    /// Checks one target seen from `observer` with a camera of `fov_deg`.
    pub fn check_target(&self, observer: &Vector3<f64>, target: &Vector3<f64>, index: usize, fov_deg: f64) -> Visibility {
        let fov = fov_deg.to_radians();
        let planet = Vector3::from(self.planet_center);
        let to_planet = planet - observer;
        let to_target = target - observer;
        let (dp, dt) = (to_planet.norm(), to_target.norm());
        if dp <= self.planet_radius {
            return Visibility::InsidePlanet;
        }
        let radius = self.target_radii.get(index).copied().unwrap_or(0.0);
        let sep = angle(&to_planet, &to_target);
        let theta_p = half_angle(self.planet_radius, dp);
        let theta_t = half_angle(radius, dt);
        if sep < theta_p + theta_t && dt > dp {
            return Visibility::Occluded(index);
        }
        if sep - theta_p - theta_t < self.clearance_fraction * fov {
            return Visibility::Clearance(index);
        }
        if 2.0 * theta_t > self.max_fill_fraction * fov {
            return Visibility::Overfill(index);
        }
        let sun = Vector3::from(self.sun_direction);
        if angle(&sun, &to_target) < self.sun_exclusion_deg.to_radians() {
            return Visibility::SunExclusion(index);
        }
        Visibility::Visible
    }
}

/// A complete, serializable scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub schema: u32,
    #[serde(default)]
    pub name: String,
    /// Length unit of every position in the file: `m` or `km`.
    pub length_unit: String,
    pub cameras: Vec<CameraSpec>,
    pub targets: Vec<TargetSpec>,
    /// Observer positions to evaluate.
    pub truth: Vec<[f64; 3]>,
    pub sigma_px: f64,
    pub methods: Vec<Method>,
    pub samples: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visibility: Option<VisibilityRule>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!("unsupported schema {}", self.schema)));
        }
        if self.length_unit != "m" && self.length_unit != "km" {
            return Err(Error::InvalidInput(format!("length_unit must be 'm' or 'km', got '{}'", self.length_unit)));
        }
        if self.cameras.is_empty() || self.targets.len() < 2 || self.truth.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidInput("need cameras, ≥ 2 targets, truth points and methods".into()));
        }
        for cam in &self.cameras {
            let fov = cam.model.fov_deg()?;
            if !(fov > 0.0 && fov < 180.0) {
                return Err(Error::InvalidInput(format!("field of view {fov}° outside (0, 180)")));
            }
            cam.model.intrinsics()?;
            if let AttitudeSpec::PointAt { target, .. } = cam.attitude {
                if target >= self.targets.len() {
                    return Err(Error::IndexOutOfRange(format!("point-at target {target}")));
                }
            }
        }
        if let Some(t) = self.targets.iter().find(|t| t.camera >= self.cameras.len()) {
            return Err(Error::IndexOutOfRange(format!("camera {}", t.camera)));
        }
        if !(self.sigma_px > 0.0 && self.sigma_px.is_finite()) {
            return Err(Error::InvalidInput("sigma_px must be positive".into()));
        }
        if self.samples == 0 {
            return Err(Error::InvalidInput("samples must be at least 1".into()));
        }
        if let Some(v) = &self.visibility {
            v.validate()?;
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(s).map_err(|e| Error::InvalidInput(format!("scenario: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    fn attitude(&self, cam: &CameraSpec, observer: &Vector3<f64>) -> Result<Rotation> {
        match &cam.attitude {
            AttitudeSpec::Matrix { rows } => Rotation::new(Matrix3::from_fn(|r, c| rows[r][c])),
            AttitudeSpec::Quaternion { xyzw } => Rotation::from_quaternion(*xyzw),
            AttitudeSpec::Boresight { boresight, up } => Rotation::look_along(&Vector3::from(*boresight), &Vector3::from(*up)),
            AttitudeSpec::PointAt { target, up } => {
                let p = Vector3::from(self.targets[*target].position);
                Rotation::look_along(&(p - observer), &Vector3::from(*up))
            }
        }
    }

    /// Noise-free observations of every target from truth point `k`.
    pub fn observations(&self, k: usize) -> Result<Vec<LosObservation>> {
        let observer = Vector3::from(self.truth[k]);
        let cov = PixelCovariance::isotropic(self.sigma_px)?;
        self.targets
            .iter()
            .map(|t| {
                let cam = &self.cameras[t.camera];
                let att = self.attitude(cam, &observer)?;
                let p = Vector3::from(t.position);
                LosObservation::synthesize(&observer, &p, cam.model.intrinsics()?, att, cov)
                    .ok_or(Error::DegenerateGeometry("target behind camera"))
            })
            .collect()
    }

    /// Visibility of all targets from truth point `k`; visible when no rule
    /// is configured.
    pub fn visibility_at(&self, k: usize) -> Result<Visibility> {
        let Some(rule) = &self.visibility else { return Ok(Visibility::Visible) };
        let observer = Vector3::from(self.truth[k]);
        for (i, t) in self.targets.iter().enumerate() {
            let fov = self.cameras[t.camera].model.fov_deg()?;
            let v = rule.check_target(&observer, &Vector3::from(t.position), i, fov);
            if !v.is_visible() {
                return Ok(v);
            }
        }
        Ok(Visibility::Visible)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrnVariant {
    /// Nadir camera, two landmarks 300 m apart straddling the ground track.
    Nadir,
    /// Camera canted 45° forward, landmarks 300 m and 3 km downrange.
    Canted45,
}

impl FromStr for TrnVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nadir" => Ok(TrnVariant::Nadir),
            "canted45" | "canted" => Ok(TrnVariant::Canted45),
            _ => Err(Error::InvalidInput(format!("unknown TRN variant '{s}'"))),
        }
    }
}

pub const TRN_MIN_ALTITUDE: f64 = 200.0;
pub const TRN_MAX_ALTITUDE: f64 = 2000.0;

/// Descent scenario: lander at `(0, 0, altitude)` above a flat surface,
/// 90° × 90° camera with 1024² pixels, σ = 0.1 px.
pub fn build_trn_scenario(variant: TrnVariant, altitude: f64) -> Result<ScenarioConfig> {
    if !(TRN_MIN_ALTITUDE..=TRN_MAX_ALTITUDE).contains(&altitude) {
        return Err(Error::OutOfEnvelope { altitude, min: TRN_MIN_ALTITUDE, max: TRN_MAX_ALTITUDE });
    }
    let (targets, boresight) = match variant {
        TrnVariant::Nadir => ([[150.0, 0.0, 30.0], [-150.0, 0.0, 0.0]], [0.0, 0.0, -1.0]),
        TrnVariant::Canted45 => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            ([[300.0, 0.0, 0.0], [3000.0, 0.0, 0.0]], [s, 0.0, -s])
        }
    };
    let name = match variant {
        TrnVariant::Nadir => "trn-nadir",
        TrnVariant::Canted45 => "trn-canted45",
    };
    Ok(ScenarioConfig {
        schema: SCHEMA_VERSION,
        name: format!("{name}-{altitude}m"),
        length_unit: "m".into(),
        cameras: vec![CameraSpec {
            model: CameraModel::Fov { fov_deg: 90.0, pixels: 1024.0 },
            attitude: AttitudeSpec::Boresight { boresight, up: [0.0, 1.0, 0.0] },
        }],
        targets: targets.iter().map(|p| TargetSpec { position: *p, camera: 0 }).collect(),
        truth: vec![[0.0, 0.0, altitude]],
        sigma_px: 0.1,
        methods: vec![Method::Dlt, Method::Hs, Method::Quat, Method::Lost],
        samples: 1000,
        seed: 1,
        visibility: None,
    })
}

pub const URANUS_RADIUS_KM: f64 = 25_559.0;
pub const TITANIA_RADIUS_KM: f64 = 788.4;
pub const OBERON_RADIUS_KM: f64 = 761.4;
/// Titania and Oberon at the reference epoch, Uranus-centered, km.
pub const TITANIA_KM: [f64; 3] = [2.8607e5, -3.2961e5, -3.3944e2];
pub const OBERON_KM: [f64; 3] = [5.0811e5, -2.8608e5, -9.0978e2];

pub fn uranus_visibility() -> VisibilityRule {
    VisibilityRule {
        planet_center: [0.0; 3],
        planet_radius: URANUS_RADIUS_KM,
        target_radii: vec![TITANIA_RADIUS_KM, OBERON_RADIUS_KM],
        sun_direction: [-1.0, 0.0, 0.0],
        clearance_fraction: default_clearance(),
        max_fill_fraction: default_fill(),
        sun_exclusion_deg: default_sun(),
    }
}

/// Two cameras (7° FOV, 60 μrad IFOV), each pointed at its moon, and a
/// square grid of candidate spacecraft positions in the equatorial plane.
pub fn uranus_config(extent_km: f64, resolution: usize) -> Result<ScenarioConfig> {
    if !(extent_km > 0.0) || resolution < 2 {
        return Err(Error::InvalidInput("extent must be positive and resolution at least 2".into()));
    }
    let model = CameraModel::FovIfov { fov_deg: 7.0, ifov_rad: 60e-6 };
    let cameras = (0..2)
        .map(|t| CameraSpec { model: model.clone(), attitude: AttitudeSpec::PointAt { target: t, up: [0.0, 0.0, 1.0] } })
        .collect();
    let half = extent_km / 2.0;
    let step = extent_km / (resolution - 1) as f64;
    let mut truth = Vec::with_capacity(resolution * resolution);
    for iy in 0..resolution {
        for ix in 0..resolution {
            truth.push([-half + ix as f64 * step, -half + iy as f64 * step, 0.0]);
        }
    }
    Ok(ScenarioConfig {
        schema: SCHEMA_VERSION,
        name: "uranus-moons".into(),
        length_unit: "km".into(),
        cameras,
        targets: vec![TargetSpec { position: TITANIA_KM, camera: 0 }, TargetSpec { position: OBERON_KM, camera: 1 }],
        truth,
        sigma_px: 0.1,
        methods: vec![Method::Dlt, Method::Hs, Method::Lost],
        samples: 1000,
        seed: 1,
        visibility: Some(uranus_visibility()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub position: [f64; 3],
    pub visibility: Visibility,
}

pub fn build_uranus_grid(extent_km: f64, resolution: usize) -> Result<Vec<GridPoint>> {
    let cfg = uranus_config(extent_km, resolution)?;
    (0..cfg.truth.len())
        .map(|k| Ok(GridPoint { position: cfg.truth[k], visibility: cfg.visibility_at(k)? }))
        .collect()
}

/// Keeps only truth points where every target is visible.
pub fn restrict_to_visible(cfg: &ScenarioConfig) -> Result<ScenarioConfig> {
    let mut out = cfg.clone();
    out.truth = (0..cfg.truth.len())
        .filter_map(|k| match cfg.visibility_at(k) {
            Ok(v) if v.is_visible() => Some(Ok(cfg.truth[k])),
            Ok(_) => None,
            Err(e) => Some(Err(e)),
        })
        .collect::<Result<_>>()?;
    Ok(out)
}

/// Angles-only relative navigation: a deputy on a bounded CW orbit
/// photographs the chief.
#[derive(Debug, Clone, PartialEq)]
pub struct RelNavScenario {
    pub stm: CwStm,
    pub truth: Vector6<f64>,
    pub observations: Vec<DynamicObservation>,
}

/// Low-orbit mean motion (≈ 93 min period), rad/s.
pub const RELNAV_MEAN_MOTION: f64 = 0.00113;

/// `epochs` images over a quarter period, all of the chief feature at
/// `target_offset` (zero for the chief's center).
pub fn build_relnav(target_offset: Vector3<f64>, epochs: usize, sigma_px: f64) -> Result<RelNavScenario> {
    if epochs < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: epochs });
    }
    let n = RELNAV_MEAN_MOTION;
    let x0 = 200.0;
    let truth = Vector6::new(x0, -300.0, 40.0, 0.02, -2.0 * n * x0, -0.01);
    let stm = CwStm { mean_motion: n };
    let quarter = 0.5 * std::f64::consts::PI / n;
    let k = CameraIntrinsics::from_fov(20.0, 1024.0)?;
    let cov = PixelCovariance::isotropic(sigma_px)?;
    let observations = (0..epochs)
        .map(|i| {
            let t = quarter * i as f64 / (epochs - 1) as f64;
            let r = (cw_stm(t, n) * truth).fixed_rows::<3>(0).into_owned();
            let att = Rotation::look_along(&(target_offset - r), &Vector3::z())?;
            let base = LosObservation::synthesize(&r, &target_offset, k, att, cov)
                .ok_or(Error::DegenerateGeometry("chief behind camera"))?;
            DynamicObservation::new(base, t, Vector3::zeros())
        })
        .collect::<Result<_>>()?;
    Ok(RelNavScenario { stm, truth, observations })
}
