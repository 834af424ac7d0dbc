use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use physprompt_core::domain::{RefinementPolicy, VideoParams};
use physprompt_core::gateway::{BackendConfig, BackendKind, GatewayConfig};
use physprompt_core::prompt_kit::TemplatePaths;
use serde::{Deserialize, Serialize};

pub const DEFAULT_SESSION_ROOT: &str = "sessions";

/// A bad or missing config file, or flags that do not add up.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Markdown,
    Csv,
}

/// The config file. Every command-line flag has a key here; flags win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub prompt: Option<String>,
    pub dataset: Option<PathBuf>,
    pub policy: RefinementPolicy,
    pub video: VideoParams,
    pub backends: GatewayConfig,
    pub templates: TemplatePaths,
    pub session_root: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub round: Option<u32>,
    pub format: Option<Format>,
    pub binarize_threshold: Option<f64>,
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub prompt: Option<String>,
    pub dataset: Option<PathBuf>,
    pub max_rounds: Option<u32>,
    pub tau: Option<f64>,
    pub epsilon: Option<f64>,
    pub parallelism: Option<usize>,
    pub session_root: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub round: Option<u32>,
    pub format: Option<Format>,
    pub threshold: Option<f64>,
}

impl Config {
    /// Reads `path` if given, otherwise starts from defaults (all mock
    /// backends). Relative paths inside the file are taken relative to it.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            ConfigError(format!(
                "cannot read config file {}: {e}\nhint: pass an existing JSON file with --config, or omit it to use mock backends",
                path.display()
            ))
        })?;
        let mut cfg: Config = serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.dataset, &mut self.session_root, &mut self.report_dir]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        for p in [
            &mut self.templates.rule_extraction,
            &mut self.templates.mismatch_analysis,
            &mut self.templates.stepback_refine,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        // mock endpoints are script paths; other kinds are URLs or commands
        for b in [
            &mut self.backends.reasoner,
            &mut self.backends.generator,
            &mut self.backends.captioner,
            &mut self.backends.evaluator,
        ] {
            rebase_mock(b, base);
        }
    }

    pub fn apply(&mut self, o: Overrides) {
        macro_rules! take {
            ($($field:ident),*) => {$(
                if o.$field.is_some() {
                    self.$field = o.$field;
                }
            )*};
        }
        take!(prompt, dataset, parallelism, session_root, report_dir, round, format);
        if let Some(t) = o.threshold {
            self.binarize_threshold = Some(t);
        }
        if let Some(n) = o.max_rounds {
            self.policy.max_rounds = n;
        }
        if let Some(t) = o.tau {
            self.policy.satisfaction_threshold = t;
        }
        if let Some(e) = o.epsilon {
            self.policy.convergence_epsilon = e;
        }
    }

    pub fn session_root(&self) -> PathBuf {
        self.session_root
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_SESSION_ROOT))
    }

    /// Defaults to a `reports` directory next to the session root.
    pub fn report_dir(&self) -> PathBuf {
        self.report_dir.clone().unwrap_or_else(|| {
            let root = self.session_root();
            match root.parent() {
                Some(parent) => parent.join("reports"),
                None => PathBuf::from("reports"),
            }
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn rebase_mock(b: &mut BackendConfig, base: &Path) {
    if b.kind == BackendKind::Mock && !b.endpoint.trim().is_empty() {
        let p = Path::new(&b.endpoint);
        if p.is_relative() {
            b.endpoint = base.join(p).display().to_string();
        }
    }
}
