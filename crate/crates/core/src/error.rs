use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("chart point ({0}, {1}) lies outside the chart domain")]
    OutOfDomain(f64, f64),

    #[error("orbit did not exit within T_max = {t_max} (trapping suspected)")]
    TrappedOrbit { t_max: f64 },

    #[error("integrator step failure at t = {t}: {reason}")]
    StepFailure { t: f64, reason: String },

    #[error("scene is not strictly convex: boundary margin = {margin}")]
    NonConvex { margin: f64 },

    #[error("thermostat curvature is not negative on the grid (max K_E = {max_ke})")]
    CurvatureNotNegative { max_ke: f64 },

    #[error("velocity is not g-unit: |v|_g = {norm}")]
    NonUnitVelocity { norm: f64 },

    #[error("gauge field is singular at ({0}, {1})")]
    SingularGauge(f64, f64),

    #[error("bundle rank mismatch: {0} vs {1}")]
    RankMismatch(usize, usize),

    #[error("fiber bandwidth overflow: top-mode mass fraction {0:.3e}")]
    BandwidthOverflow(f64),

    #[error("tensor field does not vanish on the boundary (max |p| = {0:.3e})")]
    BoundaryNonVanishing(f64),

    #[error("no spectral gap in singular values separates a numerical kernel")]
    NoSpectralGap,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
