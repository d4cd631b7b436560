//! JSON problem configuration: schema, validation, and the bundled
//! benchmark instances.
//!
//! A config names its dimensions explicitly and gives the dynamics as one
//! expression string per state coordinate. Everything is validated up front
//! (lengths, box orientation, covariance definiteness, containment) so later
//! stages can assume a well-formed [`SystemSpec`].

use crate::expr::{self, ParseError};
use crate::geometry::AxisBox;
use crate::system::{Horizon, SystemSpec};
use nalgebra::DMatrix;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    /// JSON syntax or schema violation, with the path to the offending field.
    #[error("config field `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("dynamics[{index}]: {source}")]
    Dynamics {
        index: usize,
        source: ParseError,
    },
    #[error("dynamics must have exactly one expression per state dimension (expected {expected}, got {got})")]
    DynamicsCount { expected: usize, got: usize },
    #[error("`{field}` must list {expected} values, got {got}")]
    WrongLength {
        field: String,
        expected: usize,
        got: usize,
    },
    #[error("`{field}` has lower > upper in coordinate {coord}")]
    InvertedBox { field: String, coord: usize },
    #[error("`{field}` must have positive width in every coordinate")]
    DegenerateBox { field: String },
    #[error("covariance must be symmetric")]
    CovarianceNotSymmetric,
    #[error("covariance not positive-definite")]
    CovarianceNotPositiveDefinite,
    #[error("initial set must be contained in the domain")]
    InitialOutsideDomain,
    #[error("initial set overlaps the interior of obstacle {index}")]
    InitialHitsObstacle { index: usize },
    #[error("horizon must be a positive integer or \"infinite\", got {got}")]
    BadHorizon { got: String },
    #[error("grids[{index}] must list {expected} positive counts")]
    BadGrid { index: usize, expected: usize },
    #[error("unknown benchmark `{name}` (available: {available})")]
    UnknownBenchmark { name: String, available: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    name: Option<String>,
    /// Free-form commentary; not interpreted.
    #[serde(default)]
    #[allow(dead_code)]
    notes: Option<String>,
    dimensions: RawDimensions,
    dynamics: Vec<String>,
    noise: RawNoise,
    domain: RawBox,
    initial: RawBox,
    #[serde(default)]
    obstacles: Vec<RawBox>,
    control: RawBox,
    horizon: RawHorizon,
    #[serde(default)]
    grids: Vec<Vec<usize>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDimensions {
    state: usize,
    control: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    /// Row-major `n × n` covariance.
    covariance: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawHorizon {
    Steps(u64),
    Word(String),
}

fn check_box(raw: &RawBox, field: &str, dim: usize) -> Result<AxisBox, ConfigError> {
    for (part, v) in [("lower", &raw.lower), ("upper", &raw.upper)] {
        if v.len() != dim {
            return Err(ConfigError::WrongLength {
                field: format!("{field}.{part}"),
                expected: dim,
                got: v.len(),
            });
        }
    }
    for d in 0..dim {
        if raw.lower[d] > raw.upper[d] {
            return Err(ConfigError::InvertedBox {
                field: field.to_string(),
                coord: d + 1,
            });
        }
    }
    Ok(AxisBox::new(raw.lower.clone(), raw.upper.clone()))
}

/// Parse and validate a JSON problem description.
pub fn load_spec(text: &str) -> Result<SystemSpec, ConfigError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let raw: RawConfig =
        serde_path_to_error::deserialize(&mut de).map_err(|e| ConfigError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;

    let n = raw.dimensions.state;
    let m = raw.dimensions.control;
    if n == 0 {
        return Err(ConfigError::Schema {
            path: "dimensions.state".into(),
            message: "state dimension must be at least 1".into(),
        });
    }
    if m == 0 {
        return Err(ConfigError::Schema {
            path: "dimensions.control".into(),
            message: "control dimension must be at least 1".into(),
        });
    }

    if raw.dynamics.len() != n {
        return Err(ConfigError::DynamicsCount {
            expected: n,
            got: raw.dynamics.len(),
        });
    }
    let dynamics = raw
        .dynamics
        .iter()
        .enumerate()
        .map(|(i, src)| {
            expr::parse(src, n, m).map_err(|source| ConfigError::Dynamics { index: i, source })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let cov = &raw.noise.covariance;
    if cov.len() != n || cov.iter().any(|row| row.len() != n) {
        return Err(ConfigError::WrongLength {
            field: "noise.covariance".into(),
            expected: n,
            got: if cov.len() != n {
                cov.len()
            } else {
                cov.iter().map(|r| r.len()).find(|&l| l != n).unwrap_or(n)
            },
        });
    }
    let sigma = DMatrix::from_fn(n, n, |i, j| cov[i][j]);
    let scale = sigma.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    if (&sigma - sigma.transpose()).iter().any(|v| v.abs() > 1e-10 * scale) {
        return Err(ConfigError::CovarianceNotSymmetric);
    }
    let eig = nalgebra::SymmetricEigen::new(sigma.clone());
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(ConfigError::CovarianceNotPositiveDefinite);
    }

    let domain = check_box(&raw.domain, "domain", n)?;
    if (0..n).any(|d| domain.lo[d] >= domain.hi[d]) {
        return Err(ConfigError::DegenerateBox {
            field: "domain".into(),
        });
    }
    let initial = check_box(&raw.initial, "initial", n)?;
    let control = check_box(&raw.control, "control", m)?;
    let obstacles = raw
        .obstacles
        .iter()
        .enumerate()
        .map(|(i, b)| check_box(b, &format!("obstacles[{i}]"), n))
        .collect::<Result<Vec<_>, _>>()?;

    if (0..n).any(|d| initial.lo[d] < domain.lo[d] || initial.hi[d] > domain.hi[d]) {
        return Err(ConfigError::InitialOutsideDomain);
    }
    for (i, ob) in obstacles.iter().enumerate() {
        // Open-interior overlap in every dimension means initial states start
        // unsafe.
        let overlaps = (0..n).all(|d| initial.lo[d].max(ob.lo[d]) < initial.hi[d].min(ob.hi[d]));
        if overlaps {
            return Err(ConfigError::InitialHitsObstacle { index: i });
        }
    }

    let horizon = match raw.horizon {
        RawHorizon::Steps(s) if s >= 1 => Horizon::Finite(s),
        RawHorizon::Steps(s) => {
            return Err(ConfigError::BadHorizon { got: s.to_string() })
        }
        RawHorizon::Word(w) if w == "infinite" => Horizon::Infinite,
        RawHorizon::Word(w) => return Err(ConfigError::BadHorizon { got: w }),
    };

    for (i, g) in raw.grids.iter().enumerate() {
        if g.len() != n || g.iter().any(|&c| c == 0) {
            return Err(ConfigError::BadGrid {
                index: i,
                expected: n,
            });
        }
    }

    Ok(SystemSpec {
        name: raw.name.unwrap_or_else(|| "unnamed".into()),
        n,
        m,
        dynamics,
        sigma,
        domain,
        initial,
        obstacles,
        control,
        horizon,
        grids: raw.grids,
    })
}

/// Names of the bundled benchmark instances, in table order.
pub const BENCHMARK_NAMES: [&str; 4] = [
    "linear-convex",
    "linear-nonconvex",
    "temperature-3room",
    "unicycle-4d",
];

/// Raw JSON text of a bundled benchmark config.
pub fn benchmark_text(name: &str) -> Option<&'static str> {
    match name {
        "linear-convex" => Some(include_str!("../../../configs/linear-convex.json")),
        "linear-nonconvex" => Some(include_str!("../../../configs/linear-nonconvex.json")),
        "temperature-3room" => Some(include_str!("../../../configs/temperature-3room.json")),
        "unicycle-4d" => Some(include_str!("../../../configs/unicycle-4d.json")),
        _ => None,
    }
}

/// Load a bundled benchmark by name.
pub fn load_benchmark(name: &str) -> Result<SystemSpec, ConfigError> {
    let text = benchmark_text(name).ok_or_else(|| ConfigError::UnknownBenchmark {
        name: name.to_string(),
        available: BENCHMARK_NAMES.join(", "),
    })?;
    load_spec(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_benchmarks_load_and_validate() {
        for name in BENCHMARK_NAMES {
            let spec = load_benchmark(name).unwrap();
            assert_eq!(spec.name, name);
            assert!(!spec.grids.is_empty(), "{name} should carry table grids");
        }
        let lin = load_benchmark("linear-convex").unwrap();
        assert_eq!((lin.n, lin.m), (2, 2));
        assert_eq!(lin.sigma, DMatrix::from_diagonal_element(2, 2, 0.01));
        assert_eq!(lin.domain, AxisBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]));
        assert_eq!(lin.initial, AxisBox::new(vec![0.4, 0.4], vec![0.5, 0.5]));
        assert_eq!(lin.horizon, Horizon::Finite(50));

        let uni = load_benchmark("unicycle-4d").unwrap();
        assert_eq!((uni.n, uni.m), (4, 2));
        assert_eq!(uni.grids, vec![vec![4, 8, 4, 4]]);

        assert!(matches!(
            load_benchmark("no-such-bench"),
            Err(ConfigError::UnknownBenchmark { .. })
        ));
    }

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "dimensions": {"state": 1, "control": 1},
            "dynamics": ["0.5*x1 + u1"],
            "noise": {"covariance": [[1.0]]},
            "domain": {"lower": [-1.0], "upper": [1.0]},
            "initial": {"lower": [-0.1], "upper": [0.1]},
            "control": {"lower": [-1.0], "upper": [1.0]},
            "horizon": 10
        })
    }

    fn load_value(v: serde_json::Value) -> Result<SystemSpec, ConfigError> {
        load_spec(&v.to_string())
    }

    #[test]
    fn minimal_config_loads() {
        let spec = load_value(minimal()).unwrap();
        assert_eq!(spec.name, "unnamed");
        assert!(spec.obstacles.is_empty());
        assert!(spec.grids.is_empty());
    }

    #[test]
    fn schema_errors_name_the_field_path() {
        let mut v = minimal();
        v["noise"]["covariance"] = serde_json::json!([["x"]]);
        let err = load_value(v).unwrap_err();
        match err {
            ConfigError::Schema { path, .. } => {
                assert!(path.contains("noise.covariance"), "path was {path}")
            }
            other => panic!("unexpected error {other}"),
        }

        let mut v = minimal();
        v["extra_field"] = serde_json::json!(1);
        assert!(matches!(load_value(v), Err(ConfigError::Schema { .. })));
    }

    #[test]
    fn covariance_checks() {
        let mut v = minimal();
        v["noise"]["covariance"] = serde_json::json!([[0.0]]);
        let err = load_value(v).unwrap_err();
        assert_eq!(err.to_string(), "covariance not positive-definite");

        let mut v = minimal();
        v["dimensions"]["state"] = serde_json::json!(2);
        v["dynamics"] = serde_json::json!(["x1", "x2"]);
        v["noise"]["covariance"] = serde_json::json!([[1.0, 0.5], [0.0, 1.0]]);
        v["domain"] = serde_json::json!({"lower": [-1.0, -1.0], "upper": [1.0, 1.0]});
        v["initial"] = serde_json::json!({"lower": [-0.1, -0.1], "upper": [0.1, 0.1]});
        assert!(matches!(
            load_value(v),
            Err(ConfigError::CovarianceNotSymmetric)
        ));
    }

    #[test]
    fn geometry_checks() {
        let mut v = minimal();
        v["initial"] = serde_json::json!({"lower": [-2.0], "upper": [0.1]});
        assert!(matches!(
            load_value(v),
            Err(ConfigError::InitialOutsideDomain)
        ));

        let mut v = minimal();
        v["obstacles"] = serde_json::json!([{"lower": [0.0], "upper": [0.3]}]);
        assert!(matches!(
            load_value(v),
            Err(ConfigError::InitialHitsObstacle { index: 0 })
        ));

        // Obstacle touching the initial set only at a face is allowed.
        let mut v = minimal();
        v["obstacles"] = serde_json::json!([{"lower": [0.1], "upper": [0.3]}]);
        assert!(load_value(v).is_ok());

        let mut v = minimal();
        v["domain"] = serde_json::json!({"lower": [1.0], "upper": [-1.0]});
        assert!(matches!(load_value(v), Err(ConfigError::InvertedBox { .. })));
    }

    #[test]
    fn dynamics_and_horizon_checks() {
        let mut v = minimal();
        v["dynamics"] = serde_json::json!(["x2"]);
        assert!(matches!(
            load_value(v),
            Err(ConfigError::Dynamics { index: 0, .. })
        ));

        let mut v = minimal();
        v["dynamics"] = serde_json::json!(["x1", "x1"]);
        assert!(matches!(
            load_value(v),
            Err(ConfigError::DynamicsCount {
                expected: 1,
                got: 2
            })
        ));

        let mut v = minimal();
        v["horizon"] = serde_json::json!("forever");
        assert!(matches!(load_value(v), Err(ConfigError::BadHorizon { .. })));

        let mut v = minimal();
        v["horizon"] = serde_json::json!("infinite");
        assert_eq!(load_value(v).unwrap().horizon, Horizon::Infinite);

        let mut v = minimal();
        v["horizon"] = serde_json::json!(0);
        assert!(matches!(load_value(v), Err(ConfigError::BadHorizon { .. })));
    }
}
