//! Synthetic multi-session cohorts.
//!
//! Each series is an additive low-rank latent factor model:
//!
//! ```text
//! x(i, s) = a·A_i·u + t·B_s·v + g·G·w + σ·ε
//! ```
//!
//! `A_i` is drawn once per subject and reused in every session, `B_s` once per
//! session and shared by all subjects, `G` once for the whole cohort. The time
//! processes `u, v, w, ε` are i.i.d. standard normal and redrawn for every
//! (subject, session) pair. Loading entries are `N(0, 1/rank)` so each
//! component adds roughly `strength²` of variance per ROI.
//!
//! Random streams (see [`crate::seed::stream`]), all under `config.seed`:
//!
//! | stream id                     | draws                      |
//! |-------------------------------|----------------------------|
//! | `0`                           | group loading `G`          |
//! | `1 + s`                       | task loading `B_s`         |
//! | `(1 << 32) + i`               | subject loading `A_i`      |
//! | `(2 << 32) + (i << 16) + s`   | `u, v, w, ε` for `(i, s)`  |
//!
//! Loadings are filled row-major; the time processes are drawn in the order
//! `u`, `v`, `w`, `ε`, each row-major (component × time).

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub n_subjects: usize,
    pub p_rois: usize,
    pub n_timepoints: usize,
    pub sessions: Vec<String>,
    pub subject_strength: f64,
    pub group_strength: f64,
    pub task_strength: f64,
    pub noise_std: f64,
    pub rank_subject: usize,
    pub rank_group: usize,
    pub rank_task: usize,
    /// Restrict the subject-specific loading to these ROIs (all ROIs when
    /// absent). Used to plant identity signal inside one network.
    pub subject_rois: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_subjects: 30,
            p_rois: 32,
            n_timepoints: 300,
            sessions: ["rest", "motor", "wm", "emotion"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            subject_strength: 1.0,
            group_strength: 2.0,
            task_strength: 3.0,
            noise_std: 1.0,
            rank_subject: 4,
            rank_group: 4,
            rank_task: 4,
            subject_rois: None,
            seed: 0,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(Error::Config("n_subjects must be at least 2".into()));
        }
        if self.p_rois < 4 {
            return Err(Error::Config("p_rois must be at least 4".into()));
        }
        if self.n_timepoints < self.p_rois {
            return Err(Error::Config(format!(
                "n_timepoints ({}) must be at least p_rois ({})",
                self.n_timepoints, self.p_rois
            )));
        }
        if self.sessions.is_empty() {
            return Err(Error::Config("sessions must not be empty".into()));
        }
        for (k, s) in self.sessions.iter().enumerate() {
            if self.sessions[..k].contains(s) {
                return Err(Error::Config(format!("sessions: duplicate label {s:?}")));
            }
        }
        if self.sessions.len() > 1 << 16 || self.n_subjects > 1 << 16 {
            return Err(Error::Config("cohort too large for stream layout".into()));
        }
        for (name, v) in [
            ("subject_strength", self.subject_strength),
            ("group_strength", self.group_strength),
            ("task_strength", self.task_strength),
            ("noise_std", self.noise_std),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, r) in [
            ("rank_subject", self.rank_subject),
            ("rank_group", self.rank_group),
            ("rank_task", self.rank_task),
        ] {
            if r == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if let Some(rois) = &self.subject_rois {
            if let Some(&bad) = rois.iter().find(|&&r| r >= self.p_rois) {
                return Err(Error::Config(format!(
                    "subject_rois: ROI {bad} out of range for p_rois = {}",
                    self.p_rois
                )));
            }
        }
        Ok(())
    }
}

/// Per-subject, per-session `p × T` series.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesSet {
    subject_ids: Vec<String>,
    session_labels: Vec<String>,
    /// Subject-major: index `subject * n_sessions + session`.
    series: Vec<Array2<f64>>,
}

impl TimeSeriesSet {
    /// Assemble a set from subject-major series, checking shapes and values.
    pub fn new(
        subject_ids: Vec<String>,
        session_labels: Vec<String>,
        series: Vec<Array2<f64>>,
    ) -> Result<Self> {
        if subject_ids.is_empty() || session_labels.is_empty() {
            return Err(Error::Argument("empty subject or session list".into()));
        }
        if series.len() != subject_ids.len() * session_labels.len() {
            return Err(Error::Dimension(format!(
                "expected {} series, got {}",
                subject_ids.len() * session_labels.len(),
                series.len()
            )));
        }
        let shape = series[0].dim();
        for (k, x) in series.iter().enumerate() {
            if x.dim() != shape {
                return Err(Error::Dimension(format!(
                    "series {k} has shape {:?}, expected {:?}",
                    x.dim(),
                    shape
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Degenerate(format!("series {k} has non-finite samples")));
            }
        }
        Ok(Self {
            subject_ids,
            session_labels,
            series,
        })
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn session_labels(&self) -> &[String] {
        &self.session_labels
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    /// `(p_rois, n_timepoints)`.
    pub fn shape(&self) -> (usize, usize) {
        self.series[0].dim()
    }

    pub fn session_index(&self, label: &str) -> Result<usize> {
        self.session_labels
            .iter()
            .position(|s| s == label)
            .ok_or_else(|| Error::Config(format!("unknown session {label:?}")))
    }

    pub fn get(&self, subject: usize, session: usize) -> &Array2<f64> {
        &self.series[subject * self.session_labels.len() + session]
    }

    /// All subjects' series for one session, in subject order.
    pub fn session(&self, session: usize) -> Vec<&Array2<f64>> {
        (0..self.n_subjects()).map(|i| self.get(i, session)).collect()
    }
}

fn normal_matrix(rng: &mut impl rand::Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    for v in m.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = scale * z;
    }
    m
}

const SUBJECT_STREAM: u64 = 1 << 32;
const SERIES_STREAM: u64 = 2 << 32;

pub fn generate_cohort(config: &CohortConfig) -> Result<TimeSeriesSet> {
    config.validate()?;
    let p = config.p_rois;
    let t = config.n_timepoints;
    let load = |rank: usize| 1.0 / (rank as f64).sqrt();

    let group = normal_matrix(&mut seed::stream(config.seed, 0), p, config.rank_group, load(config.rank_group));
    let tasks: Vec<Array2<f64>> = (0..config.sessions.len())
        .map(|s| {
            let mut rng = seed::stream(config.seed, 1 + s as u64);
            normal_matrix(&mut rng, p, config.rank_task, load(config.rank_task))
        })
        .collect();
    let subjects: Vec<Array2<f64>> = (0..config.n_subjects)
        .map(|i| {
            let mut rng = seed::stream(config.seed, SUBJECT_STREAM + i as u64);
            let mut a = normal_matrix(&mut rng, p, config.rank_subject, load(config.rank_subject));
            if let Some(rois) = &config.subject_rois {
                for r in (0..p).filter(|r| !rois.contains(r)) {
                    a.row_mut(r).fill(0.0);
                }
            }
            a
        })
        .collect();

    let mut series = Vec::with_capacity(config.n_subjects * config.sessions.len());
    for (i, a) in subjects.iter().enumerate() {
        for (s, b) in tasks.iter().enumerate() {
            let mut rng = seed::stream(config.seed, SERIES_STREAM + ((i as u64) << 16) + s as u64);
            let u = normal_matrix(&mut rng, config.rank_subject, t, 1.0);
            let v = normal_matrix(&mut rng, config.rank_task, t, 1.0);
            let w = normal_matrix(&mut rng, config.rank_group, t, 1.0);
            let eps = normal_matrix(&mut rng, p, t, 1.0);
            let x = a.dot(&u) * config.subject_strength
                + b.dot(&v) * config.task_strength
                + group.dot(&w) * config.group_strength
                + eps * config.noise_std;
            series.push(x);
        }
    }
    let subject_ids = (0..config.n_subjects).map(|i| format!("sub-{i:03}")).collect();
    TimeSeriesSet::new(subject_ids, config.sessions.clone(), series)
}

/// Assignment of ROIs to functional networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkPartition {
    assignment: Vec<usize>,
    names: Vec<String>,
}

impl NetworkPartition {
    pub fn new(assignment: Vec<usize>, names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("partition needs at least one network".into()));
        }
        let mut counts = vec![0usize; names.len()];
        for (roi, &g) in assignment.iter().enumerate() {
            match counts.get_mut(g) {
                Some(c) => *c += 1,
                None => {
                    return Err(Error::Config(format!(
                        "ROI {roi} assigned to network {g}, only {} exist",
                        names.len()
                    )))
                }
            }
        }
        if let Some(g) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Config(format!("network {g} ({}) is empty", names[g])));
        }
        Ok(Self { assignment, names })
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_networks(&self) -> usize {
        self.names.len()
    }

    pub fn p_rois(&self) -> usize {
        self.assignment.len()
    }

    /// ROIs belonging to network `g`, ascending.
    pub fn rois_of(&self, g: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&r| self.assignment[r] == g)
            .collect()
    }
}

/// Contiguous, near-equal blocks; the first `p % n` networks get one extra ROI.
pub fn default_partition(p_rois: usize, n_networks: usize) -> Result<NetworkPartition> {
    if n_networks == 0 || n_networks > p_rois {
        return Err(Error::Config(format!(
            "cannot split {p_rois} ROIs into {n_networks} networks"
        )));
    }
    let base = p_rois / n_networks;
    let extra = p_rois % n_networks;
    let mut assignment = Vec::with_capacity(p_rois);
    for g in 0..n_networks {
        let size = base + usize::from(g < extra);
        assignment.extend(std::iter::repeat_n(g, size));
    }
    let names = (0..n_networks).map(|g| format!("net-{g:02}")).collect();
    NetworkPartition::new(assignment, names)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CohortConfig {
        CohortConfig {
            n_subjects: 3,
            p_rois: 6,
            n_timepoints: 20,
            sessions: vec!["a".into(), "b".into()],
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_cohort(&small()).unwrap();
        let b = generate_cohort(&small()).unwrap();
        assert_eq!(a, b);
        let mut other = small();
        other.seed = 12;
        assert_ne!(a, generate_cohort(&other).unwrap());
    }

    #[test]
    fn shapes_and_labels() {
        let set = generate_cohort(&small()).unwrap();
        assert_eq!(set.n_subjects(), 3);
        assert_eq!(set.shape(), (6, 20));
        assert_eq!(set.session_index("b").unwrap(), 1);
        assert!(set.session_index("c").is_err());
        assert_eq!(set.subject_ids()[2], "sub-002");
    }

    #[test]
    fn zero_signal_is_pure_noise() {
        let cfg = CohortConfig {
            n_subjects: 2,
            p_rois: 4,
            n_timepoints: 8,
            subject_strength: 0.0,
            group_strength: 0.0,
            task_strength: 0.0,
            noise_std: 1.0,
            seed: 7,
            ..Default::default()
        };
        let set = generate_cohort(&cfg).unwrap();
        assert!(set.get(1, 3).iter().all(|v| v.is_finite()));
        // With no latent signal each series is exactly the noise stream scaled by 1.
        let mut zero_noise = cfg.clone();
        zero_noise.noise_std = 0.0;
        let silent = generate_cohort(&zero_noise).unwrap();
        assert!(silent.get(0, 0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn subject_rois_confine_subject_loading() {
        let cfg = CohortConfig {
            subject_strength: 1.0,
            group_strength: 0.0,
            task_strength: 0.0,
            noise_std: 0.0,
            subject_rois: Some(vec![0, 1]),
            ..small()
        };
        let set = generate_cohort(&cfg).unwrap();
        let x = set.get(0, 0);
        assert!(x.row(0).iter().any(|&v| v != 0.0));
        for r in 2..6 {
            assert!(x.row(r).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            CohortConfig { n_subjects: 1, ..small() },
            CohortConfig { p_rois: 3, ..small() },
            CohortConfig { n_timepoints: 5, ..small() },
            CohortConfig { noise_std: -1.0, ..small() },
            CohortConfig { task_strength: f64::NAN, ..small() },
            CohortConfig { rank_task: 0, ..small() },
            CohortConfig { sessions: vec![], ..small() },
            CohortConfig { sessions: vec!["a".into(), "a".into()], ..small() },
            CohortConfig { subject_rois: Some(vec![6]), ..small() },
        ];
        for cfg in bad {
            assert!(matches!(generate_cohort(&cfg), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    fn block_sizes(part: &NetworkPartition) -> Vec<usize> {
        (0..part.n_networks()).map(|g| part.rois_of(g).len()).collect()
    }

    #[test]
    fn partition_block_sizes() {
        assert_eq!(block_sizes(&default_partition(12, 12).unwrap()), vec![1; 12]);
        assert_eq!(block_sizes(&default_partition(16, 4).unwrap()), vec![4, 4, 4, 4]);
        let p = default_partition(10, 3).unwrap();
        assert_eq!(block_sizes(&p), vec![4, 3, 3]);
        assert_eq!(p.assignment(), &[0, 0, 0, 0, 1, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn partition_errors() {
        assert!(default_partition(3, 4).is_err());
        assert!(default_partition(3, 0).is_err());
        assert!(NetworkPartition::new(vec![0, 0, 2], vec!["a".into(), "b".into(), "c".into()]).is_err());
        assert!(NetworkPartition::new(vec![0, 3], vec!["a".into()]).is_err());
    }
}
