use thiserror::Error;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad or inconsistent input data.
    Data,
    /// The inputs were well formed but the numerics broke down.
    Numerical,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("stacked system is rank deficient (smallest singular value {smallest:e}, largest {largest:e})")]
    RankDeficient { smallest: f64, largest: f64 },

    #[error("null space of the homogeneous system is not one-dimensional")]
    AmbiguousNullSpace,

    #[error("homogeneous point has a zero last component")]
    PointAtInfinity,

    #[error("vector is not unit length (norm {norm})")]
    NotUnit { norm: f64 },

    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error("operation requires exactly {expected} observations, got {got}")]
    WrongArity { expected: usize, got: usize },

    #[error("camera positions coincide; the baseline is zero")]
    CoincidentCameras,

    #[error("no real stationary point of the two-view cost was found")]
    NoRealRoot,

    #[error("baseline expressed in the camera frame is zero")]
    DegenerateBaseline,

    #[error("image-plane noise is not isotropic")]
    NonIsotropicNoise,

    #[error("intrinsics must have square pixels and zero skew for this solver")]
    NonSquarePixels,

    #[error("lines of sight {i} and {j} are parallel")]
    ParallelRays { i: usize, j: usize },

    #[error("observations must share one camera attitude and calibration")]
    SharedCameraRequired,

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),

    #[error("state is unobservable (singular value ratio {ratio:e})")]
    Unobservable { ratio: f64 },

    #[error("altitude {altitude} m outside the supported envelope [{min}, {max}] m")]
    OutOfEnvelope { altitude: f64, min: f64, max: f64 },

    #[error("method `{0}` not present in report")]
    MissingMethod(String),

    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("malformed Bundler header: {0}")]
    MalformedHeader(String),

    #[error("Bundler file truncated: {0}")]
    TruncatedFile(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            RankDeficient { .. }
            | AmbiguousNullSpace
            | PointAtInfinity
            | NoRealRoot
            | ParallelRays { .. }
            | DegenerateGeometry(_)
            | Unobservable { .. }
            | CoincidentCameras
            | DegenerateBaseline => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        use Error::*;
        match self {
            RankDeficient { .. } => "rank_deficient",
            AmbiguousNullSpace => "ambiguous_null_space",
            PointAtInfinity => "point_at_infinity",
            NotUnit { .. } => "not_unit",
            TooFewObservations { .. } => "too_few_observations",
            WrongArity { .. } => "wrong_arity",
            CoincidentCameras => "coincident_cameras",
            NoRealRoot => "no_real_root",
            DegenerateBaseline => "degenerate_baseline",
            NonIsotropicNoise => "non_isotropic_noise",
            NonSquarePixels => "non_square_pixels",
            ParallelRays { .. } => "parallel_rays",
            SharedCameraRequired => "shared_camera_required",
            DegenerateGeometry(_) => "degenerate_geometry",
            Unobservable { .. } => "unobservable",
            OutOfEnvelope { .. } => "out_of_envelope",
            MissingMethod(_) => "missing_method",
            InvalidRotation(_) => "invalid_rotation",
            InvalidInput(_) => "invalid_input",
            MalformedHeader(_) => "malformed_header",
            TruncatedFile(_) => "truncated_file",
            IndexOutOfRange(_) => "index_out_of_range",
            Parse { .. } => "parse",
            Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
