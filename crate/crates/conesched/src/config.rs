//! JSON run configuration.
//!
//! One document describes a complete run: the system (queue count,
//! environments with their proportions and service sets), the schedule
//! matrix, the traffic and environment traces, the horizon, and the seed.
//! Unknown keys are rejected so typos fail loudly, and every number must
//! be finite.
//!
//! ```json
//! {
//!   "queues": 2,
//!   "environments": [
//!     { "pi": 0.5, "services": [[1.0, 0.0], [0.0, 1.0]] },
//!     { "pi": 0.5, "services": [[1.0, 1.0]] }
//!   ],
//!   "matrix": [[1.0, 0.0], [0.0, 1.0]],
//!   "traffic": { "kind": "fluid", "load": [0.4, 0.4] },
//!   "envtrace": { "kind": "periodic", "cycle_length": 10.0 },
//!   "horizon": 1000.0,
//!   "seed": 42
//! }
//! ```

use crate::model::{
    EnvTraceKind, EnvironmentSpec, EnvironmentTrace, ModelError, ScheduleMatrix, ServiceVector,
    SystemSpec, TrafficKind, TrafficTrace, DEFAULT_CLOSURE_CAP,
};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("configuration does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The parsed form of the configuration document.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub queues: usize,
    pub environments: Vec<EnvironmentConfig>,
    pub matrix: Vec<Vec<f64>>,
    pub traffic: TrafficConfig,
    pub envtrace: EnvTraceConfig,
    pub horizon: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    /// Long-run proportion of time this environment is active.
    pub pi: f64,
    /// Service vectors available in this environment, one row per vector.
    pub services: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrafficConfig {
    Fluid {
        load: Vec<f64>,
    },
    Jobs {
        load: Vec<f64>,
        sigma: Vec<f64>,
    },
    Stochastic {
        load: Vec<f64>,
        mean_job: Vec<f64>,
        window: f64,
        burst: f64,
    },
    AdversarialEnv {
        load: Vec<f64>,
        /// 1-based environment id targeted by the bursts.
        target_env: usize,
        window: f64,
        burst: f64,
    },
    AdversarialSchedule {
        load: Vec<f64>,
        window: f64,
        burst: f64,
        info_lag: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvTraceConfig {
    Periodic { cycle_length: f64 },
    RandomHolding { mean_cycle: f64 },
}

/// Model objects assembled from a [`RunConfig`], ready to hand to
/// `simulate` or the region operations.
#[derive(Debug, Clone)]
pub struct BuiltConfig {
    /// The system with every environment's service set completed.
    pub spec: SystemSpec,
    pub matrix: ScheduleMatrix,
    pub traffic: TrafficTrace,
    pub envtrace: EnvironmentTrace,
    pub horizon: f64,
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.check_finite()?;
        Ok(cfg)
    }

    /// The target load vector, regardless of traffic kind.
    pub fn load(&self) -> &[f64] {
        match &self.traffic {
            TrafficConfig::Fluid { load }
            | TrafficConfig::Jobs { load, .. }
            | TrafficConfig::Stochastic { load, .. }
            | TrafficConfig::AdversarialEnv { load, .. }
            | TrafficConfig::AdversarialSchedule { load, .. } => load,
        }
    }

    /// Builds the model objects. Service sets are completed here; the
    /// schedule matrix is kept even when its validity flags fail, since
    /// simulating an invalid matrix is exactly how the counterexamples run.
    pub fn build(&self) -> Result<BuiltConfig, ConfigError> {
        if self.horizon <= 0.0 {
            return Err(ConfigError::Invalid("horizon must be positive".into()));
        }
        if self.environments.is_empty() {
            return Err(ConfigError::Invalid("no environments given".into()));
        }
        let mut envs = Vec::with_capacity(self.environments.len());
        let mut pi = Vec::with_capacity(self.environments.len());
        for (i, env) in self.environments.iter().enumerate() {
            let mut services = Vec::with_capacity(env.services.len());
            for row in &env.services {
                services.push(ServiceVector::new(row.clone())?);
            }
            envs.push(EnvironmentSpec::new(i + 1, services));
            pi.push(env.pi);
        }
        let spec = SystemSpec::new(self.queues, envs, pi)?.completed(DEFAULT_CLOSURE_CAP)?;
        let matrix = ScheduleMatrix::new(self.matrix.clone())?;
        let traffic = self.traffic_trace()?;
        let envtrace = EnvironmentTrace {
            kind: match self.envtrace {
                EnvTraceConfig::Periodic { cycle_length } => EnvTraceKind::Periodic { cycle_length },
                EnvTraceConfig::RandomHolding { mean_cycle } => {
                    EnvTraceKind::RandomHolding { mean_cycle }
                }
            },
            pi: spec.pi().to_vec(),
        };
        Ok(BuiltConfig {
            spec,
            matrix,
            traffic,
            envtrace,
            horizon: self.horizon,
            seed: self.seed,
        })
    }

    fn traffic_trace(&self) -> Result<TrafficTrace, ConfigError> {
        let load = self.load().to_vec();
        let kind = match &self.traffic {
            TrafficConfig::Fluid { .. } => TrafficKind::Fluid,
            TrafficConfig::Jobs { sigma, .. } => TrafficKind::Jobs {
                sigma: sigma.clone(),
            },
            TrafficConfig::Stochastic {
                mean_job,
                window,
                burst,
                ..
            } => TrafficKind::Stochastic {
                mean_job: mean_job.clone(),
                window: *window,
                burst: *burst,
            },
            TrafficConfig::AdversarialEnv {
                target_env,
                window,
                burst,
                ..
            } => {
                if *target_env == 0 || *target_env > self.environments.len() {
                    return Err(ConfigError::Invalid(format!(
                        "target_env {} is not an environment id in 1..={}",
                        target_env,
                        self.environments.len()
                    )));
                }
                TrafficKind::AdversarialEnv {
                    target_env: target_env - 1,
                    window: *window,
                    burst: *burst,
                }
            }
            TrafficConfig::AdversarialSchedule {
                window,
                burst,
                info_lag,
                ..
            } => TrafficKind::AdversarialSchedule {
                window: *window,
                burst: *burst,
                info_lag: *info_lag,
            },
        };
        Ok(TrafficTrace { kind, load })
    }

    fn check_finite(&self) -> Result<(), ConfigError> {
        let bad = |what: &str| Err(ConfigError::Invalid(format!("{what} must be finite")));
        if !self.horizon.is_finite() {
            return bad("horizon");
        }
        for env in &self.environments {
            if !env.pi.is_finite() {
                return bad("environment pi");
            }
            for row in &env.services {
                if row.iter().any(|v| !v.is_finite()) {
                    return bad("service entry");
                }
            }
        }
        for row in &self.matrix {
            if row.iter().any(|v| !v.is_finite()) {
                return bad("matrix entry");
            }
        }
        if self.load().iter().any(|v| !v.is_finite()) {
            return bad("load entry");
        }
        let extras: &[f64] = match &self.traffic {
            TrafficConfig::Fluid { .. } => &[],
            TrafficConfig::Jobs { sigma, .. } => sigma,
            TrafficConfig::Stochastic {
                mean_job,
                window,
                burst,
                ..
            } => {
                if !window.is_finite() || !burst.is_finite() {
                    return bad("traffic parameter");
                }
                mean_job
            }
            TrafficConfig::AdversarialEnv { window, burst, .. } => {
                if !window.is_finite() || !burst.is_finite() {
                    return bad("traffic parameter");
                }
                &[]
            }
            TrafficConfig::AdversarialSchedule {
                window,
                burst,
                info_lag,
                ..
            } => {
                if !window.is_finite() || !burst.is_finite() || !info_lag.is_finite() {
                    return bad("traffic parameter");
                }
                &[]
            }
        };
        if extras.iter().any(|v| !v.is_finite()) {
            return bad("traffic parameter");
        }
        match self.envtrace {
            EnvTraceConfig::Periodic { cycle_length } if !cycle_length.is_finite() => {
                bad("cycle_length")
            }
            EnvTraceConfig::RandomHolding { mean_cycle } if !mean_cycle.is_finite() => {
                bad("mean_cycle")
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "queues": 2,
        "environments": [
            { "pi": 0.5, "services": [[1.0, 0.0], [0.0, 1.0]] },
            { "pi": 0.5, "services": [[1.0, 1.0]] }
        ],
        "matrix": [[1.0, 0.0], [0.0, 1.0]],
        "traffic": { "kind": "fluid", "load": [0.4, 0.4] },
        "envtrace": { "kind": "periodic", "cycle_length": 10.0 },
        "horizon": 1000.0,
        "seed": 42
    }"#;

    #[test]
    fn sample_document_builds() {
        let cfg = RunConfig::from_json(SAMPLE).unwrap();
        let built = cfg.build().unwrap();
        assert_eq!(built.spec.queues(), 2);
        assert_eq!(built.spec.environments().len(), 2);
        // Completion adds the zero vector to the split pair.
        assert_eq!(built.spec.env(0).services().len(), 3);
        assert!(built.matrix.validity().is_cone_valid());
        assert_eq!(built.traffic.load, vec![0.4, 0.4]);
        assert_eq!(built.horizon, 1000.0);
        assert_eq!(built.seed, 42);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let doc = SAMPLE.replace("\"seed\": 42", "\"seed\": 42, \"extra\": 1");
        assert!(matches!(
            RunConfig::from_json(&doc),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn non_finite_numbers_are_rejected() {
        // 1e999 overflows to infinity when parsed.
        let doc = SAMPLE.replace("1000.0", "1e999");
        assert!(matches!(
            RunConfig::from_json(&doc),
            Err(ConfigError::Invalid(_)) | Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn adversarial_target_env_is_one_based() {
        let doc = SAMPLE.replace(
            r#"{ "kind": "fluid", "load": [0.4, 0.4] }"#,
            r#"{ "kind": "adversarial-env", "load": [0.4, 0.4], "target_env": 2, "window": 5.0, "burst": 1.0 }"#,
        );
        let built = RunConfig::from_json(&doc).unwrap().build().unwrap();
        match built.traffic.kind {
            TrafficKind::AdversarialEnv { target_env, .. } => assert_eq!(target_env, 1),
            ref other => panic!("wrong kind: {other:?}"),
        }

        let bad = doc.replace("\"target_env\": 2", "\"target_env\": 3");
        assert!(RunConfig::from_json(&bad).unwrap().build().is_err());
    }

    #[test]
    fn invalid_matrix_still_builds_with_flags() {
        let doc = SAMPLE.replace("[[1.0, 0.0], [0.0, 1.0]]", "[[2.0, 1.0], [1.0, 2.0]]");
        let built = RunConfig::from_json(&doc).unwrap().build().unwrap();
        assert!(!built.matrix.validity().is_cone_valid());
    }

    #[test]
    fn bad_horizon_is_rejected_at_build() {
        let doc = SAMPLE.replace("\"horizon\": 1000.0", "\"horizon\": 0.0");
        assert!(RunConfig::from_json(&doc).unwrap().build().is_err());
    }
}
