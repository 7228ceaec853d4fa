//! TOML experiment configuration.
//!
//! One file describes one experiment. Every section is optional; see
//! `ExperimentConfig::default` for the values used when a key is absent. The
//! top-level `seed` is the only source of randomness: it replaces
//! `cohort.seed`, and the autoencoder and dictionary seeds are derived from it.

use std::fs;
use std::path::{Path, PathBuf};

use connfp::convae::TrainConfig;
use connfp::fingerprint::{AeLayout, Method, PipelineConfig, Preprocess, RefineTarget};
use connfp::synth::{default_partition, CohortConfig, NetworkPartition};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Allowed range for `K`, `L` and the grid bounds.
pub const KL_BOUNDS: (usize, usize) = (2, 64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Read the cohort written by `synth` from this directory instead of
    /// generating it from `[cohort]`.
    pub cohort_dir: Option<PathBuf>,
    pub cohort: CohortConfig,
    /// Defaults to the first cohort session.
    pub train_session: Option<String>,
    /// Defaults to every other session.
    pub test_sessions: Option<Vec<String>>,
    pub methods: Vec<Method>,
    pub k_atoms: usize,
    pub sparsity: usize,
    pub ksvd_iters: usize,
    pub n_perm: usize,
    pub refine_target: RefineTarget,
    pub fisher_z: bool,
    /// Also identify session 2 against session 1 and report the mean.
    pub both_directions: bool,
    pub preprocess: Preprocess,
    pub ae: AeConfig,
    pub grid: GridConfig,
    pub ablation: AblationConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeConfig {
    pub architecture: AeLayout,
    /// `training.seed` is ignored in favour of the derived seed.
    pub training: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub method: Method,
    /// Inclusive `[first, last]`.
    pub k_range: [usize; 2],
    pub l_range: [usize; 2],
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            method: Method::ConvaeSdl,
            k_range: [2, 15],
            l_range: [2, 15],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub method: Method,
    pub n_networks: usize,
    /// Explicit ROI → network map; overrides `n_networks`.
    pub assignment: Option<Vec<usize>>,
    pub names: Option<Vec<String>>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            method: Method::ConvaeSdl,
            n_networks: 12,
            assignment: None,
            names: None,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let pipe = PipelineConfig::default();
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            cohort_dir: None,
            cohort: CohortConfig::default(),
            train_session: None,
            test_sessions: None,
            methods: Method::ALL.to_vec(),
            k_atoms: pipe.k_atoms,
            sparsity: pipe.sparsity,
            ksvd_iters: pipe.ksvd_iters,
            n_perm: 1000,
            refine_target: pipe.refine_target,
            fisher_z: pipe.fisher_z,
            both_directions: false,
            preprocess: pipe.preprocess,
            ae: AeConfig::default(),
            grid: GridConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub refine_target: Option<RefineTarget>,
    pub fisher_z: bool,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn check_kl(field: &str, v: usize) -> CliResult<()> {
    let (lo, hi) = KL_BOUNDS;
    if !(lo..=hi).contains(&v) {
        return Err(config_err(format!("{field} must lie in [{lo}, {hi}], got {v}")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path, overrides: &Overrides) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => config_err(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        if let Some(t) = o.refine_target {
            self.refine_target = t;
        }
        if o.fisher_z {
            self.fisher_z = true;
        }
        self.cohort.seed = self.seed;
    }

    /// Checks that do not need the cohort on disk.
    pub fn validate(&self) -> CliResult<()> {
        self.cohort
            .validate()
            .map_err(|e| config_err(format!("cohort.{}", strip_kind(&e))))?;
        check_kl("k_atoms", self.k_atoms)?;
        check_kl("sparsity", self.sparsity)?;
        if self.sparsity > self.k_atoms {
            return Err(config_err(format!(
                "sparsity ({}) must not exceed k_atoms ({})",
                self.sparsity, self.k_atoms
            )));
        }
        for (name, [a, b]) in [("grid.k_range", self.grid.k_range), ("grid.l_range", self.grid.l_range)] {
            check_kl(name, a)?;
            check_kl(name, b)?;
            if a > b {
                return Err(config_err(format!("{name} is empty: [{a}, {b}]")));
            }
        }
        if self.ksvd_iters == 0 {
            return Err(config_err("ksvd_iters must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(config_err("methods must not be empty"));
        }
        self.ae
            .training
            .validate()
            .map_err(|e| config_err(format!("ae.training.{}", strip_kind(&e))))?;
        if self.ae.architecture.conv.iter().any(|c| c.kernel == 0 || c.stride == 0 || c.out_channels == 0) {
            return Err(config_err("ae.architecture.conv: kernel, stride and out_channels must be positive"));
        }
        if let Some(b) = &self.preprocess.bandpass {
            if !(b.sample_rate_hz > 0.0 && 0.0 <= b.low_hz && b.low_hz <= b.high_hz) {
                return Err(config_err("preprocess.bandpass needs 0 <= low_hz <= high_hz and sample_rate_hz > 0"));
            }
        }
        if self.cohort_dir.is_none() {
            self.sessions(&self.cohort.sessions)?;
        }
        Ok(())
    }

    /// Resolve `(train, tests)` against the sessions actually present.
    pub fn sessions(&self, available: &[String]) -> CliResult<(String, Vec<String>)> {
        let train = match &self.train_session {
            Some(s) => s.clone(),
            None => available.first().cloned().ok_or_else(|| config_err("cohort has no sessions"))?,
        };
        let tests = match &self.test_sessions {
            Some(t) => t.clone(),
            None => available.iter().filter(|s| **s != train).cloned().collect(),
        };
        if !available.contains(&train) {
            return Err(config_err(format!("train_session: unknown session {train:?}")));
        }
        if tests.is_empty() {
            return Err(config_err("test_sessions: no test session"));
        }
        if let Some(bad) = tests.iter().find(|t| !available.contains(t)) {
            return Err(config_err(format!("test_sessions: unknown session {bad:?}")));
        }
        Ok((train, tests))
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            k_atoms: self.k_atoms,
            sparsity: self.sparsity,
            ksvd_iters: self.ksvd_iters,
            ae_layout: self.ae.architecture.clone(),
            ae_train: self.ae.training.clone(),
            refine_target: self.refine_target,
            fisher_z: self.fisher_z,
            preprocess: self.preprocess.clone(),
            seed: self.seed,
        }
    }

    pub fn grid_ranges(&self) -> (Vec<usize>, Vec<usize>) {
        let [k0, k1] = self.grid.k_range;
        let [l0, l1] = self.grid.l_range;
        ((k0..=k1).collect(), (l0..=l1).collect())
    }

    pub fn partition(&self, p: usize) -> CliResult<NetworkPartition> {
        let a = &self.ablation;
        let part = match &a.assignment {
            Some(assign) => {
                if assign.len() != p {
                    return Err(config_err(format!(
                        "ablation.assignment has {} entries, cohort has {p} ROIs",
                        assign.len()
                    )));
                }
                let n = assign.iter().max().map_or(0, |m| m + 1);
                let names = a.names.clone().unwrap_or_else(|| (0..n).map(|g| format!("net-{g:02}")).collect());
                NetworkPartition::new(assign.clone(), names)
            }
            None => default_partition(p, a.n_networks).and_then(|part| match &a.names {
                Some(names) => NetworkPartition::new(part.assignment().to_vec(), names.clone()),
                None => Ok(part),
            }),
        };
        part.map_err(|e| config_err(format!("ablation: {}", strip_kind(&e))))
    }
}

/// Error text without the `configuration error:` style prefix.
fn strip_kind(e: &connfp::Error) -> String {
    match e {
        connfp::Error::Config(m) | connfp::Error::Argument(m) | connfp::Error::Dimension(m) | connfp::Error::Degenerate(m) => {
            m.clone()
        }
        other => other.to_string(),
    }
}
