//! Experiment configuration: a single JSON document with per-experiment
//! defaults, strict key checking, and range validation.

use serde::{Deserialize, Serialize};

use dcc_core::copula::NormalizerKind;
use dcc_core::marginals::MarginalMode;

/// Which experiment a config drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Synthetic,
    Pima,
}

impl Experiment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::Synthetic => "synthetic",
            Experiment::Pima => "pima",
        }
    }
}

/// Fully resolved configuration. Serialization of this struct (stable field
/// order) is what the config hash covers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    /// Seeds of a sweep; a single-element list for ordinary runs.
    pub seeds: Vec<u64>,
    /// Marginal strategies to ablate (synthetic runs all requested modes;
    /// the clinical experiment uses exactly one).
    pub modes: Vec<MarginalMode>,
    pub rho: f64,
    pub n_per_class: usize,
    pub bandwidth_scale: f64,
    pub bandwidth_exponent: f64,
    pub smoothness_r: f64,
    pub width_const: f64,
    pub normalizer: NormalizerKind,
    pub lambda: f64,
    pub penalty_bins: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub tau: f64,
    pub input_csv: String,
    /// Resolution per axis of the decision-region export.
    pub region_grid: usize,
    /// Resolution per axis of the copula density probe export.
    pub probe_resolution: usize,
}

/// Raw JSON shape: everything optional, unknown keys rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Option<Experiment>,
    seed: Option<u64>,
    seeds: Option<Vec<u64>>,
    modes: Option<Vec<String>>,
    rho: Option<f64>,
    n_per_class: Option<usize>,
    bandwidth: Option<RawBandwidth>,
    net: Option<RawNet>,
    normalizer: Option<RawNormalizer>,
    lambda: Option<f64>,
    penalty_bins: Option<usize>,
    optimizer: Option<RawOptimizer>,
    tau: Option<f64>,
    input_csv: Option<String>,
    region_grid: Option<usize>,
    probe_resolution: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBandwidth {
    scale: Option<f64>,
    exponent: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNet {
    r: Option<f64>,
    width_const: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNormalizer {
    kind: Option<String>,
    resolution: Option<usize>,
    points: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptimizer {
    lr: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
}

/// A rejected configuration, naming the offending key.
#[derive(Debug)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config key {:?}: {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn bad(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Parse and validate a JSON config document (empty text selects all
/// defaults), resolving per-experiment defaults.
pub fn validate_config(text: &str, experiment: Experiment) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = if text.trim().is_empty() {
        RawConfig::default()
    } else {
        serde_json::from_str(text).map_err(|e| ConfigError {
            key: "<document>".into(),
            message: e.to_string(),
        })?
    };
    if let Some(exp) = raw.experiment {
        if exp != experiment {
            return Err(bad(
                "experiment",
                format!(
                    "config says {:?} but the {} subcommand was invoked",
                    exp.as_str(),
                    experiment.as_str()
                ),
            ));
        }
    }

    let seed = raw.seed.unwrap_or(42);
    let seeds = match raw.seeds {
        Some(s) if s.is_empty() => return Err(bad("seeds", "must be nonempty when present")),
        Some(s) => s,
        None => vec![seed],
    };

    let modes = match (&raw.modes, experiment) {
        (Some(list), _) => {
            if list.is_empty() {
                return Err(bad("modes", "must be nonempty when present"));
            }
            list.iter()
                .map(|s| MarginalMode::parse(s).map_err(|e| bad("modes", e.to_string())))
                .collect::<Result<Vec<_>, _>>()?
        }
        (None, Experiment::Synthetic) => vec![
            MarginalMode::OracleNormal,
            MarginalMode::Pooled,
            MarginalMode::PerClass,
        ],
        (None, Experiment::Pima) => vec![MarginalMode::PerClass],
    };
    if experiment == Experiment::Pima && modes.len() != 1 {
        return Err(bad("modes", "the clinical experiment takes exactly one mode"));
    }

    let rho = raw.rho.unwrap_or(0.995);
    if !rho.is_finite() || rho.abs() >= 1.0 {
        return Err(bad("rho", format!("must satisfy |rho| < 1, got {rho}")));
    }
    let n_per_class = raw.n_per_class.unwrap_or(2000);
    if n_per_class < 5 {
        return Err(bad("n_per_class", "must be at least 5"));
    }

    let bandwidth = raw.bandwidth.unwrap_or_default();
    let bandwidth_scale = bandwidth.scale.unwrap_or(10.0);
    if !(bandwidth_scale.is_finite() && bandwidth_scale > 0.0) {
        return Err(bad("bandwidth.scale", "must be positive"));
    }
    let bandwidth_exponent = bandwidth.exponent.unwrap_or(-0.51);
    if !bandwidth_exponent.is_finite() {
        return Err(bad("bandwidth.exponent", "must be finite"));
    }

    let net = raw.net.unwrap_or_default();
    let smoothness_r = net.r.unwrap_or(match experiment {
        Experiment::Synthetic => 2.0,
        Experiment::Pima => 12.0,
    });
    if !(smoothness_r.is_finite() && smoothness_r > 0.0) {
        return Err(bad("net.r", "must be positive"));
    }
    let width_const = net.width_const.unwrap_or(4.0);
    if !(width_const.is_finite() && width_const > 0.0) {
        return Err(bad("net.width_const", "must be positive"));
    }

    let rn = raw.normalizer.unwrap_or_default();
    let default_kind = match experiment {
        Experiment::Synthetic => "grid",
        Experiment::Pima => "sobol",
    };
    let normalizer = match rn.kind.as_deref().unwrap_or(default_kind) {
        "grid" => {
            let resolution = rn.resolution.unwrap_or(256);
            if resolution < 2 {
                return Err(bad("normalizer.resolution", "must be at least 2"));
            }
            NormalizerKind::Grid { resolution }
        }
        "sobol" => {
            let points = rn.points.unwrap_or(65_536);
            if points < 2 {
                return Err(bad("normalizer.points", "must be at least 2"));
            }
            NormalizerKind::Sobol { points }
        }
        other => {
            return Err(bad(
                "normalizer.kind",
                format!("expected \"grid\" or \"sobol\", got {other:?}"),
            ))
        }
    };

    let lambda = raw.lambda.unwrap_or(0.1);
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(bad("lambda", "must be nonnegative"));
    }
    let penalty_bins = raw.penalty_bins.unwrap_or(16);
    if penalty_bins == 0 {
        return Err(bad("penalty_bins", "must be positive"));
    }

    let opt = raw.optimizer.unwrap_or_default();
    let (default_lr, default_epochs, default_batch) = match experiment {
        Experiment::Synthetic => (1e-3, 500, 256),
        Experiment::Pima => (8e-4, 700, 128),
    };
    let lr = opt.lr.unwrap_or(default_lr);
    if !(lr.is_finite() && lr > 0.0) {
        return Err(bad("optimizer.lr", "must be positive"));
    }
    let epochs = opt.epochs.unwrap_or(default_epochs);
    if epochs == 0 {
        return Err(bad("optimizer.epochs", "must be positive"));
    }
    let batch_size = opt.batch_size.unwrap_or(default_batch);
    if batch_size == 0 {
        return Err(bad("optimizer.batch_size", "must be positive"));
    }

    let tau = raw.tau.unwrap_or(1.0);
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(bad("tau", "must be nonnegative"));
    }

    let region_grid = raw.region_grid.unwrap_or(101);
    if region_grid < 2 {
        return Err(bad("region_grid", "must be at least 2"));
    }
    let probe_resolution = raw.probe_resolution.unwrap_or(64);
    if probe_resolution < 2 {
        return Err(bad("probe_resolution", "must be at least 2"));
    }

    Ok(ExperimentConfig {
        experiment,
        seed,
        seeds,
        modes,
        rho,
        n_per_class,
        bandwidth_scale,
        bandwidth_exponent,
        smoothness_r,
        width_const,
        normalizer,
        lambda,
        penalty_bins,
        lr,
        epochs,
        batch_size,
        tau,
        input_csv: raw.input_csv.unwrap_or_else(|| "data/pima.csv".to_string()),
        region_grid,
        probe_resolution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_full_default_synthetic() {
        let cfg = validate_config("", Experiment::Synthetic).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.rho, 0.995);
        assert_eq!(cfg.n_per_class, 2000);
        assert_eq!(cfg.lr, 1e-3);
        assert_eq!(cfg.epochs, 500);
        assert_eq!(cfg.batch_size, 256);
        assert_eq!(cfg.normalizer, NormalizerKind::Grid { resolution: 256 });
        assert_eq!(cfg.smoothness_r, 2.0);
        assert_eq!(cfg.lambda, 0.1);
        assert_eq!(cfg.modes.len(), 3);
    }

    #[test]
    fn pima_defaults_match_protocol() {
        let cfg = validate_config("{}", Experiment::Pima).unwrap();
        assert_eq!(cfg.lr, 8e-4);
        assert_eq!(cfg.epochs, 700);
        assert_eq!(cfg.batch_size, 128);
        assert_eq!(cfg.normalizer, NormalizerKind::Sobol { points: 65_536 });
        assert_eq!(cfg.smoothness_r, 12.0);
        assert_eq!(cfg.modes, vec![MarginalMode::PerClass]);
        assert_eq!(cfg.tau, 1.0);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = validate_config(r#"{"rho": 0.5, "bogus_key": 1}"#, Experiment::Synthetic)
            .unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
    }

    #[test]
    fn out_of_range_values_name_the_key() {
        let err = validate_config(r#"{"rho": 1.5}"#, Experiment::Synthetic).unwrap_err();
        assert_eq!(err.key, "rho");
        let err = validate_config(
            r#"{"optimizer": {"batch_size": 0}}"#,
            Experiment::Synthetic,
        )
        .unwrap_err();
        assert_eq!(err.key, "optimizer.batch_size");
        let err = validate_config(r#"{"lambda": -0.5}"#, Experiment::Synthetic).unwrap_err();
        assert_eq!(err.key, "lambda");
    }

    #[test]
    fn experiment_mismatch_is_rejected() {
        let err = validate_config(r#"{"experiment": "pima"}"#, Experiment::Synthetic).unwrap_err();
        assert_eq!(err.key, "experiment");
    }

    #[test]
    fn mode_list_override() {
        let cfg = validate_config(r#"{"modes": ["pooled"]}"#, Experiment::Synthetic).unwrap();
        assert_eq!(cfg.modes, vec![MarginalMode::Pooled]);
        let err = validate_config(r#"{"modes": ["nope"]}"#, Experiment::Synthetic).unwrap_err();
        assert_eq!(err.key, "modes");
    }
}
