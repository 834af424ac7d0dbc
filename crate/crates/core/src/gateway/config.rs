use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::http::{HttpCaptioner, HttpEvaluator, HttpGenerator, HttpReasoner};
use super::mock::{MockBackend, MockScript};
use super::retry::RetryPolicy;
use super::subprocess::SubprocessBackend;
use super::{GatewayError, Gateways};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpChat,
    Subprocess,
    Mock,
}

/// Connection settings for one backend. Credentials are never stored here:
/// `auth_env_var` names the environment variable that holds the bearer token.
///
/// `endpoint` is a URL for `http_chat`, a shell command line for
/// `subprocess`, and an optional path to a mock script file for `mock`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: String,
    pub auth_env_var: Option<String>,
    pub model: Option<String>,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub retry_backoff_s: f64,
    pub rate_limit_per_s: Option<f64>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: String::new(),
            auth_env_var: None,
            model: None,
            timeout_s: 120.0,
            max_retries: 2,
            retry_backoff_s: 1.0,
            rate_limit_per_s: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(GatewayError::Config("timeout_s must be positive".into()));
        }
        if !(self.retry_backoff_s > 0.0 && self.retry_backoff_s.is_finite()) {
            return Err(GatewayError::Config("retry_backoff_s must be positive".into()));
        }
        if let Some(r) = self.rate_limit_per_s {
            if !(r > 0.0 && r.is_finite()) {
                return Err(GatewayError::Config("rate_limit_per_s must be positive".into()));
            }
        }
        if matches!(self.kind, BackendKind::HttpChat | BackendKind::Subprocess)
            && self.endpoint.trim().is_empty()
        {
            return Err(GatewayError::Config(
                "endpoint is required for http_chat and subprocess backends".into(),
            ));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s)
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy::new(
            self.max_retries,
            Duration::from_secs_f64(self.retry_backoff_s),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub reasoner: BackendConfig,
    pub generator: BackendConfig,
    pub captioner: BackendConfig,
    pub evaluator: BackendConfig,
}

impl GatewayConfig {
    /// Builds the adapters. Mock roles that name the same script share one
    /// [`MockBackend`], so its counters and transcript cover all of them.
    pub fn build(&self) -> Result<Gateways, GatewayError> {
        let mut mocks: HashMap<String, Arc<MockBackend>> = HashMap::new();
        let mut mock_for = |cfg: &BackendConfig| -> Result<Arc<MockBackend>, GatewayError> {
            if let Some(m) = mocks.get(&cfg.endpoint) {
                return Ok(m.clone());
            }
            let script = if cfg.endpoint.trim().is_empty() {
                MockScript::default()
            } else {
                MockScript::load(&PathBuf::from(&cfg.endpoint))?
            };
            let backend = Arc::new(MockBackend::new(script));
            mocks.insert(cfg.endpoint.clone(), backend.clone());
            Ok(backend)
        };

        for cfg in [&self.reasoner, &self.generator, &self.captioner, &self.evaluator] {
            cfg.validate()?;
        }

        let reasoner: Arc<dyn super::Reasoner> = match self.reasoner.kind {
            BackendKind::HttpChat => Arc::new(HttpReasoner::new(self.reasoner.clone())?),
            BackendKind::Subprocess => Arc::new(SubprocessBackend::new(self.reasoner.clone())),
            BackendKind::Mock => mock_for(&self.reasoner)?,
        };
        let generator: Arc<dyn super::VideoGenerator> = match self.generator.kind {
            BackendKind::HttpChat => Arc::new(HttpGenerator::new(self.generator.clone())?),
            BackendKind::Subprocess => Arc::new(SubprocessBackend::new(self.generator.clone())),
            BackendKind::Mock => mock_for(&self.generator)?,
        };
        let captioner: Arc<dyn super::Captioner> = match self.captioner.kind {
            BackendKind::HttpChat => Arc::new(HttpCaptioner::new(self.captioner.clone())?),
            BackendKind::Subprocess => Arc::new(SubprocessBackend::new(self.captioner.clone())),
            BackendKind::Mock => mock_for(&self.captioner)?,
        };
        let evaluator: Arc<dyn super::Evaluator> = match self.evaluator.kind {
            BackendKind::HttpChat => Arc::new(HttpEvaluator::new(self.evaluator.clone())?),
            BackendKind::Subprocess => Arc::new(SubprocessBackend::new(self.evaluator.clone())),
            BackendKind::Mock => mock_for(&self.evaluator)?,
        };
        Ok(Gateways {
            reasoner,
            generator,
            captioner,
            evaluator,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let cfg: BackendConfig = serde_json::from_str(r#"{"kind": "http_chat"}"#).unwrap();
        assert_eq!(cfg.max_retries, 2);
        assert!(cfg.validate().is_err(), "http backend needs an endpoint");

        let cfg: BackendConfig =
            serde_json::from_str(r#"{"kind": "mock", "timeout_s": 0}"#).unwrap();
        assert!(cfg.validate().is_err());

        assert!(serde_json::from_str::<BackendConfig>(r#"{"api_key": "sk-..."}"#).is_err());
    }

    #[test]
    fn all_mock_build() {
        GatewayConfig::default().build().unwrap();
    }
}
