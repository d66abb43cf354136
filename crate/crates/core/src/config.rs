//! Run configuration files.
//!
//! A config is a single JSON document. `horizon`, `steps`, `n_alpha`,
//! `n_beta` and `system` are required; everything else has a default.
//!
//! ```json
//! {
//!   "system": { "kind": "bloch", "alpha": [-1, 1], "beta": [0.9, 1.1],
//!               "x0": [0, 0, 1], "xt": [1, 0, 0] },
//!   "horizon": 1.0, "steps": 300, "n_alpha": 4, "n_beta": 3,
//!   "solver": { "lambda0": 0.01 }
//! }
//! ```

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dynamics::TimeGrid;
use crate::error::{Error, Result};
use crate::moments::{lift, MomentSystem, ParamInterval};
use crate::synth::SolverConfig;
use crate::systems::{bloch_system, raman_nath_default_bounds, raman_nath_system, ControlBounds, EnsembleSystem};
use crate::verify::GridSpec;

/// Amplitude and slew limits; an omitted side is unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSpec {
    pub u_min: Option<f64>,
    pub u_max: Option<f64>,
    pub du_min: Option<f64>,
    pub du_max: Option<f64>,
}

impl BoundsSpec {
    pub fn resolve(&self) -> ControlBounds {
        ControlBounds {
            u_min: self.u_min.unwrap_or(f64::NEG_INFINITY),
            u_max: self.u_max.unwrap_or(f64::INFINITY),
            du_min: self.du_min.unwrap_or(f64::NEG_INFINITY),
            du_max: self.du_max.unwrap_or(f64::INFINITY),
        }
    }

    fn from_bounds(b: &ControlBounds) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        Self {
            u_min: finite(b.u_min),
            u_max: finite(b.u_max),
            du_min: finite(b.du_min),
            du_max: finite(b.du_max),
        }
    }
}

/// How the entries of a member state should be read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    #[default]
    Real,
    /// First half real parts, second half imaginary parts.
    ComplexHalves,
}

fn default_omega_r() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Bloch {
        alpha: ParamInterval,
        beta: ParamInterval,
        x0: [f64; 3],
        xt: [f64; 3],
        #[serde(default)]
        bounds: Option<BoundsSpec>,
    },
    RamanNath {
        /// Highest momentum order kept, `N'`.
        n_max: usize,
        /// Target momentum order, `n'`.
        target_order: usize,
        alpha: ParamInterval,
        beta: ParamInterval,
        #[serde(default = "default_omega_r")]
        omega_r: f64,
        /// Defaults to `[0, 10 n']`.
        #[serde(default)]
        bounds: Option<BoundsSpec>,
    },
    Matrices {
        /// Drift `𝒜`, row-major nested arrays.
        a: Vec<Vec<f64>>,
        /// Control generators `ℬᵢ`.
        b: Vec<Vec<Vec<f64>>>,
        alpha: ParamInterval,
        beta: ParamInterval,
        x0: Vec<f64>,
        xt: Vec<f64>,
        #[serde(default)]
        bounds: Option<BoundsSpec>,
        #[serde(default)]
        layout: LayoutKind,
    },
}

fn matrix(key: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if nr == 0 || rows.iter().any(|r| r.len() != nc) {
        return Err(Error::config(key, "expected a non-empty rectangular nested array"));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

impl SystemSpec {
    pub fn build(&self) -> Result<EnsembleSystem> {
        match self {
            SystemSpec::Bloch {
                alpha,
                beta,
                x0,
                xt,
                bounds,
            } => Ok(bloch_system(
                *alpha,
                *beta,
                *x0,
                *xt,
                bounds.unwrap_or_default().resolve(),
            )),
            SystemSpec::RamanNath {
                n_max,
                target_order,
                alpha,
                beta,
                omega_r,
                bounds,
            } => raman_nath_system(
                *n_max,
                *target_order,
                *alpha,
                *beta,
                *omega_r,
                bounds.map(|b| b.resolve()),
            ),
            SystemSpec::Matrices {
                a,
                b,
                alpha,
                beta,
                x0,
                xt,
                bounds,
                ..
            } => {
                let a = matrix("system.a", a)?;
                let b = b.iter().map(|bi| matrix("system.b", bi)).collect::<Result<Vec<_>>>()?;
                EnsembleSystem::from_matrices(
                    a,
                    b,
                    *alpha,
                    *beta,
                    DVector::from_column_slice(x0),
                    DVector::from_column_slice(xt),
                    bounds.unwrap_or_default().resolve(),
                )
            }
        }
    }

    pub fn layout(&self, n: usize) -> StateLayout {
        match self {
            SystemSpec::Bloch { .. } => StateLayout::real(vec!["x".into(), "y".into(), "z".into()]),
            SystemSpec::RamanNath { n_max, .. } => {
                StateLayout::complex_halves((0..=*n_max).map(|j| format!("C{}", 2 * j)).collect())
            }
            SystemSpec::Matrices { layout, .. } => match layout {
                LayoutKind::Real => StateLayout::real((1..=n).map(|j| format!("x{j}")).collect()),
                LayoutKind::ComplexHalves => {
                    StateLayout::complex_halves((0..n / 2).map(|j| format!("c{j}")).collect())
                }
            },
        }
    }
}

/// Column naming of member states, written into reports so that consumers
/// can pair real and imaginary parts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StateLayout {
    pub kind: LayoutKind,
    /// Column names in state order.
    pub columns: Vec<String>,
    /// `(re, im)` column indices per complex amplitude.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<(usize, usize)>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub amplitudes: Vec<String>,
}

impl StateLayout {
    fn real(columns: Vec<String>) -> Self {
        Self {
            kind: LayoutKind::Real,
            columns,
            pairs: Vec::new(),
            amplitudes: Vec::new(),
        }
    }

    fn complex_halves(amplitudes: Vec<String>) -> Self {
        let h = amplitudes.len();
        let columns = amplitudes
            .iter()
            .map(|a| format!("re_{a}"))
            .chain(amplitudes.iter().map(|a| format!("im_{a}")))
            .collect();
        Self {
            kind: LayoutKind::ComplexHalves,
            columns,
            pairs: (0..h).map(|j| (j, j + h)).collect(),
            amplitudes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    /// Final time `T`.
    pub horizon: f64,
    /// Number of control intervals `K`.
    pub steps: usize,
    pub n_alpha: usize,
    pub n_beta: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

const OPTIONAL_KEYS: [&str; 4] = ["solver", "grid", "output_dir", "seed"];

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let key = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.contains("field"))
                .unwrap_or("config")
                .to_string();
            Error::Config { key, message: msg }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::config("horizon", format!("must be positive, got {}", self.horizon)));
        }
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        self.solver.validate()?;
        self.grid
            .validate()
            .map_err(|e| Error::config("grid", e.to_string()))?;
        if let SystemSpec::RamanNath {
            n_max, target_order, ..
        } = self.system
        {
            if target_order < 1 || target_order > n_max {
                return Err(Error::config(
                    "system.target_order",
                    format!("must lie in 1..={n_max}, got {target_order}"),
                ));
            }
        }
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.horizon, self.steps)
    }

    pub fn build_system(&self) -> Result<EnsembleSystem> {
        self.system.build()
    }

    pub fn lift(&self, sys: &EnsembleSystem) -> Result<MomentSystem> {
        lift(sys, self.n_alpha, self.n_beta, None)
    }

    /// The config with every default written out, including system bounds.
    pub fn resolved(&self) -> RunConfig {
        let mut out = self.clone();
        match &mut out.system {
            SystemSpec::RamanNath {
                target_order, bounds, ..
            } => {
                if bounds.is_none() {
                    *bounds = Some(BoundsSpec::from_bounds(&raman_nath_default_bounds(*target_order)));
                }
            }
            SystemSpec::Bloch { bounds, .. } | SystemSpec::Matrices { bounds, .. } => {
                bounds.get_or_insert_with(BoundsSpec::default);
            }
        }
        out
    }
}

/// Keys (dotted) that were absent from the file and took default values.
pub fn defaulted_keys(text: &str) -> Result<Vec<String>> {
    let raw: Value = serde_json::from_str(text)?;
    let mut out = Vec::new();
    for key in OPTIONAL_KEYS {
        if raw.get(key).is_none() {
            out.push(key.to_string());
        }
    }
    let nested = |section: &str, defaults: Value, out: &mut Vec<String>| {
        if let (Some(given), Value::Object(all)) = (raw.get(section), defaults) {
            for k in all.keys() {
                if given.get(k).is_none() {
                    out.push(format!("{section}.{k}"));
                }
            }
        }
    };
    nested("solver", serde_json::to_value(SolverConfig::default())?, &mut out);
    nested("grid", serde_json::to_value(GridSpec::default())?, &mut out);
    if let Some(sys) = raw.get("system") {
        if sys.get("bounds").is_none() {
            out.push("system.bounds".into());
        }
        if sys.get("kind").and_then(Value::as_str) == Some("raman_nath") && sys.get("omega_r").is_none() {
            out.push("system.omega_r".into());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BLOCH: &str = r#"{
        "system": {"kind": "bloch", "alpha": [-1, 1], "beta": [0.9, 1.1], "x0": [0, 0, 1], "xt": [1, 0, 0]},
        "horizon": 1.0, "steps": 30, "n_alpha": 2, "n_beta": 1
    }"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::from_json(BLOCH).unwrap();
        assert_eq!(cfg.solver, SolverConfig::default());
        assert_eq!(cfg.grid, GridSpec::default());
        let sys = cfg.build_system().unwrap();
        assert_eq!((sys.n(), sys.m()), (3, 2));
        let d = defaulted_keys(BLOCH).unwrap();
        assert!(d.contains(&"solver".to_string()) && d.contains(&"system.bounds".to_string()));
    }

    #[test]
    fn missing_horizon_is_named() {
        let text = BLOCH.replace("\"horizon\": 1.0,", "");
        let err = RunConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("horizon"), "{err}");
        let err = RunConfig::from_json(&BLOCH.replace("1.0,", "-1.0,")).unwrap_err();
        assert!(err.to_string().contains("horizon"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected_with_name() {
        let text = BLOCH.replace("\"steps\"", "\"stepz\": 3, \"steps\"");
        let err = RunConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("stepz"), "{err}");
        let text = BLOCH.replace("\"n_beta\": 1", "\"n_beta\": 1, \"solver\": {\"lamda0\": 1}");
        assert!(RunConfig::from_json(&text).unwrap_err().to_string().contains("lamda0"));
    }

    #[test]
    fn zero_grid_rejected() {
        let text = BLOCH.replace("\"n_beta\": 1", "\"n_beta\": 1, \"grid\": {\"n_alpha_pts\": 0}");
        let err = RunConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("grid"), "{err}");
    }

    #[test]
    fn raman_nath_resolution() {
        let text = r#"{
            "system": {"kind": "raman_nath", "n_max": 7, "target_order": 2, "alpha": [0.95, 1.05], "beta": [0.9, 1.1]},
            "horizon": 6.0, "steps": 600, "n_alpha": 6, "n_beta": 3
        }"#;
        let cfg = RunConfig::from_json(text).unwrap();
        let sys = cfg.build_system().unwrap();
        assert_eq!(sys.n(), 16);
        assert_eq!((sys.bounds.u_min, sys.bounds.u_max), (0.0, 20.0));
        let r = cfg.resolved();
        let SystemSpec::RamanNath { bounds, omega_r, .. } = r.system else {
            panic!()
        };
        assert_eq!(omega_r, 1.0);
        assert_eq!(bounds.unwrap().u_max, Some(20.0));
        let layout = cfg.system.layout(16);
        assert_eq!(layout.pairs[1], (1, 9));
        assert_eq!(layout.amplitudes[1], "C2");
        let bad = text.replace("\"target_order\": 2", "\"target_order\": 9");
        assert!(RunConfig::from_json(&bad).unwrap_err().to_string().contains("target_order"));
    }

    #[test]
    fn explicit_matrices() {
        let text = r#"{
            "system": {"kind": "matrices", "a": [[0, -1], [1, 0]], "b": [[[0, 0], [0, 0]]],
                       "alpha": [0.5, 1.5], "beta": [0.9, 1.1], "x0": [1, 0], "xt": [0, 1],
                       "bounds": {"u_min": -2, "u_max": 2}},
            "horizon": 1.0, "steps": 4, "n_alpha": 1, "n_beta": 0
        }"#;
        let cfg = RunConfig::from_json(text).unwrap();
        let sys = cfg.build_system().unwrap();
        assert_eq!(sys.bounds.u_max, 2.0);
        assert!(sys.bounds.du_max.is_infinite());
        let ragged = text.replace("[[0, -1], [1, 0]]", "[[0, -1], [1]]");
        assert!(RunConfig::from_json(&ragged).unwrap().build_system().is_err());
    }

    #[test]
    fn resolved_round_trips() {
        let cfg = RunConfig::from_json(BLOCH).unwrap().resolved();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }
}
