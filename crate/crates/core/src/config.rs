//! Experiment configuration: JSON schema, validation, seeded construction
//! of connection pairs and gauges, and the config hash embedded in reports.

use crate::error::{Error, Result};
use crate::ode::OdeOptions;
use crate::scene::Scene;
use crate::transport::{ConnectionPair, GaugeField, MatrixPoly};
use crate::CMat;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::Arc;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairConfig {
    Zero { n: usize },
    /// Constant matrices given entrywise as [re, im], row-major.
    Constant {
        a1: Vec<Vec<[f64; 2]>>,
        a2: Vec<Vec<[f64; 2]>>,
        phi: Vec<Vec<[f64; 2]>>,
    },
    /// Seeded random polynomial pair; `unitary` draws skew-Hermitian
    /// coefficients for A and Phi.
    Random { n: usize, degree: usize, scale: f64, unitary: bool },
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig::Zero { n: 1 }
    }
}

fn parse_matrix(rows: &[Vec<[f64; 2]>]) -> Result<CMat> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config("constant pair matrices must be square".into()));
    }
    Ok(CMat::from_fn(n, n, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1])))
}

impl PairConfig {
    pub fn rank(&self) -> usize {
        match self {
            PairConfig::Zero { n } | PairConfig::Random { n, .. } => *n,
            PairConfig::Constant { a1, .. } => a1.len(),
        }
    }

    pub fn build(&self, seed: u64) -> Result<ConnectionPair> {
        match self {
            PairConfig::Zero { n } => Ok(ConnectionPair::zero(*n)),
            PairConfig::Constant { a1, a2, phi } => {
                let (a1, a2, phi) = (parse_matrix(a1)?, parse_matrix(a2)?, parse_matrix(phi)?);
                if a2.nrows() != a1.nrows() || phi.nrows() != a1.nrows() {
                    return Err(Error::RankMismatch(a1.nrows(), a2.nrows().max(phi.nrows())));
                }
                ConnectionPair::new(
                    Arc::new(MatrixPoly::constant(a1)),
                    Arc::new(MatrixPoly::constant(a2)),
                    Arc::new(MatrixPoly::constant(phi)),
                )
            }
            PairConfig::Random { n, degree, scale, unitary } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut draw = || {
                    if *unitary {
                        MatrixPoly::random_skew_hermitian(*n, *degree, *scale, &mut rng)
                    } else {
                        MatrixPoly::random(*n, *degree, *scale, &mut rng)
                    }
                };
                let a1 = draw();
                let a2 = draw();
                let phi = draw();
                ConnectionPair::new(Arc::new(a1), Arc::new(a2), Arc::new(phi))
                    .map(|p| p.with_unitary_flags(*unitary, *unitary))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FanConfig {
    pub n_s: usize,
    pub n_alpha: usize,
}

impl Default for FanConfig {
    fn default() -> Self {
        FanConfig { n_s: 16, n_alpha: 8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    /// Cells per axis of the bounding-square grid (even).
    pub cells: usize,
    /// Fiber resolution (power of two).
    pub ntheta: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { cells: 48, ntheta: 32 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Tensor order of the leading source component.
    pub m: usize,
    /// Total polynomial degree of the coefficient basis.
    pub d: usize,
    pub alpha: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig { m: 1, d: 4, alpha: 1e-10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigidityConfig {
    /// Amplitude of the boundary-fixed gauge bump.
    pub amplitude: f64,
}

impl Default for RigidityConfig {
    fn default() -> Self {
        RigidityConfig { amplitude: 0.3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyConfig {
    /// (cells, ntheta) ladder for the identity suite; residual orders are
    /// fit across successive levels.
    pub resolutions: Vec<(usize, usize)>,
    pub tolerance: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { resolutions: vec![(32, 32), (64, 32)], tolerance: 1e-4 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceConfig {
    /// Entry for the single-ray commands: boundary chart angle and influx
    /// angle alpha in (-pi/2, pi/2).
    pub phi: f64,
    pub alpha: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig { phi: 0.0, alpha: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scene: Scene,
    #[serde(default)]
    pub pair: PairConfig,
    #[serde(default)]
    pub fan: FanConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub rigidity: RigidityConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub ray: TraceConfig,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scene.radius > 0.0) {
            return Err(Error::Config("chart radius must be positive".into()));
        }
        if self.fan.n_s < 2 || self.fan.n_alpha < 2 {
            return Err(Error::Config("fan needs at least 2 points per direction".into()));
        }
        if !self.grid.ntheta.is_power_of_two() || self.grid.ntheta < 8 {
            return Err(Error::Config("ntheta must be a power of two, at least 8".into()));
        }
        if self.grid.cells % 2 != 0 || self.grid.cells < 8 {
            return Err(Error::Config("grid cells must be even, at least 8".into()));
        }
        for &(c, t) in &self.verify.resolutions {
            if c % 2 != 0 || c < 8 || !t.is_power_of_two() || t < 8 {
                return Err(Error::Config(format!("bad verify resolution ({c}, {t})")));
            }
        }
        if !(self.verify.tolerance > 0.0) || !(self.kernel.alpha > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.kernel.m > 2 {
            return Err(Error::Config("tensor order m > 2 is out of scope".into()));
        }
        if self.ray.alpha.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Config("influx angle must lie in (-pi/2, pi/2)".into()));
        }
        Ok(())
    }

    pub fn ode_options(&self) -> OdeOptions {
        OdeOptions::for_chart_radius(self.scene.radius)
    }

    pub fn build_pair(&self) -> Result<ConnectionPair> {
        self.pair.build(self.seed)
    }

    /// Boundary-fixed gauge used by the rigidity command, drawn from the
    /// run seed.
    pub fn build_gauge(&self) -> GaugeField {
        let n = self.pair.rank();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9);
        GaugeField::boundary_fixed_bump(
            n,
            self.scene.radius,
            self.rigidity.amplitude,
            MatrixPoly::random(n, 1, 1.0, &mut rng),
        )
    }

    /// SHA-256 of the canonical serialized form, hex encoded.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{ScalarField, VectorField};

    fn base_json() -> String {
        r#"{
            "scene": {
                "radius": 1.0,
                "sigma": {"kind": "zero"},
                "e_field": {"kind": "radial", "c": 0.5}
            }
        }"#
        .to_string()
    }

    #[test]
    fn parses_minimal_config_with_defaults() {
        let cfg = ExperimentConfig::from_json(&base_json()).unwrap();
        assert_eq!(cfg.fan.n_s, 16);
        assert_eq!(cfg.grid.ntheta, 32);
        assert!(matches!(cfg.pair, PairConfig::Zero { n: 1 }));
        assert!(matches!(cfg.scene.e_field, VectorField::Radial { .. }));
        assert!(matches!(cfg.scene.sigma, ScalarField::Zero));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::from_json(&base_json()).unwrap();
        let b = ExperimentConfig::from_json(&base_json()).unwrap();
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.seed = 7;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn rejects_bad_resolutions() {
        let mut cfg = ExperimentConfig::from_json(&base_json()).unwrap();
        cfg.grid.ntheta = 24;
        assert!(cfg.validate().is_err());
        cfg.grid.ntheta = 32;
        cfg.grid.cells = 9;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_malformed_json() {
        assert!(ExperimentConfig::from_json("{\"scene\": 3}").is_err());
        assert!(ExperimentConfig::from_json("not json").is_err());
    }

    #[test]
    fn constant_pair_round_trip() {
        let json = r#"{
            "scene": {"radius": 1.0, "sigma": {"kind": "zero"}, "e_field": {"kind": "zero"}},
            "pair": {"kind": "constant",
                     "a1": [[[0.0, 1.0]]], "a2": [[[0.5, 0.0]]], "phi": [[[1.0, 0.0]]]}
        }"#;
        let cfg = ExperimentConfig::from_json(json).unwrap();
        let pair = cfg.build_pair().unwrap();
        assert_eq!(pair.n, 1);
        assert!((pair.a1.eval([0.0, 0.0])[(0, 0)] - Complex64::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn random_pair_is_seed_deterministic() {
        let json = r#"{
            "scene": {"radius": 1.0, "sigma": {"kind": "zero"}, "e_field": {"kind": "zero"}},
            "pair": {"kind": "random", "n": 2, "degree": 1, "scale": 0.5, "unitary": true},
            "seed": 11
        }"#;
        let cfg = ExperimentConfig::from_json(json).unwrap();
        let p1 = cfg.build_pair().unwrap();
        let p2 = cfg.build_pair().unwrap();
        let x = [0.3, -0.4];
        assert!((p1.a1.eval(x) - p2.a1.eval(x)).norm() < 1e-15);
        assert!(p1.unitary_a);
    }
}
