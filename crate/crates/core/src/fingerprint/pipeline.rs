//! Experiment drivers: full identification pipeline, (K, L) grid search and
//! network ablation.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{identify, similarity_matrix, IdentificationResult};
use crate::connectome::{bandpass, detrend, exclude_networks, fisher_z, pearson_fc, group_average, upper_triangle, Connectome};
use crate::convae::{self, Activation, Architecture, ConvSpec, TrainConfig};
use crate::seed;
use crate::sparse::{ksvd, refine};
use crate::synth::{NetworkPartition, TimeSeriesSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Similarity of the raw connectomes.
    FinnRaw,
    /// Subtract the training-session group average, then K-SVD refinement.
    BaselineGroupavg,
    /// Subtract the autoencoder reconstruction, then K-SVD refinement.
    ConvaeSdl,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::FinnRaw, Method::BaselineGroupavg, Method::ConvaeSdl];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::FinnRaw => "finn_raw",
            Method::BaselineGroupavg => "baseline_groupavg",
            Method::ConvaeSdl => "convae_sdl",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Which matrix the sparse reconstruction is subtracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineTarget {
    #[default]
    Residual,
    Original,
}

impl FromStr for RefineTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residual" => Ok(RefineTarget::Residual),
            "original" => Ok(RefineTarget::Original),
            _ => Err(Error::Config(format!("unknown refine target {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub low_hz: f64,
    pub high_hz: f64,
    pub sample_rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preprocess {
    pub detrend: bool,
    pub bandpass: Option<Band>,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            detrend: true,
            bandpass: None,
        }
    }
}

/// Autoencoder layout independent of `p`, so it can follow ROI exclusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeLayout {
    pub conv: Vec<ConvSpec>,
    pub latent: Option<usize>,
    pub activation: Activation,
}

impl Default for AeLayout {
    fn default() -> Self {
        let arch = Architecture::default_for(0);
        Self {
            conv: arch.conv,
            latent: arch.latent,
            activation: arch.activation,
        }
    }
}

impl AeLayout {
    pub fn for_p(&self, p: usize) -> Architecture {
        Architecture {
            p,
            conv: self.conv.clone(),
            latent: self.latent,
            activation: self.activation,
        }
    }
}

/// Everything the pipeline needs beyond the cohort and session pair.
///
/// `seed` drives all randomness: the autoencoder uses `derive(seed,
/// "autoencoder")` (the seed inside `ae_train` is ignored) and the dictionary
/// of session `s` uses `derive(seed, "ksvd/<s>")`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub k_atoms: usize,
    pub sparsity: usize,
    pub ksvd_iters: usize,
    pub ae_layout: AeLayout,
    pub ae_train: TrainConfig,
    pub refine_target: RefineTarget,
    pub fisher_z: bool,
    pub preprocess: Preprocess,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k_atoms: 4,
            sparsity: 2,
            ksvd_iters: 30,
            ae_layout: AeLayout::default(),
            ae_train: TrainConfig::default(),
            refine_target: RefineTarget::Residual,
            fisher_z: false,
            preprocess: Preprocess::default(),
            seed: 0,
        }
    }
}

/// Connectomes of every subject in one session, after preprocessing.
pub fn build_connectomes(cohort: &TimeSeriesSet, session: usize, pre: &Preprocess) -> Result<Vec<Connectome>> {
    let label = &cohort.session_labels()[session];
    (0..cohort.n_subjects())
        .into_par_iter()
        .map(|i| {
            let mut x = cohort.get(i, session).clone();
            if pre.detrend {
                x = detrend(&x)?;
            }
            if let Some(b) = &pre.bandpass {
                x = bandpass(&x, b.low_hz, b.high_hz, b.sample_rate_hz)?;
            }
            pearson_fc(&x, &cohort.subject_ids()[i], label)
        })
        .collect()
}

/// Per-session inputs to identification: what similarity is computed on, and
/// for the refined methods, the residuals and originals.
struct SessionPair {
    train: Vec<Array2<f64>>,
    test: Vec<Array2<f64>>,
}

fn matrices(conns: &[Connectome], fisher: bool) -> Vec<Array2<f64>> {
    conns
        .iter()
        .map(|c| if fisher { fisher_z(c.matrix()) } else { c.matrix().clone() })
        .collect()
}

fn zero_diagonal(mut m: Array2<f64>) -> Array2<f64> {
    m.diag_mut().fill(0.0);
    m
}

/// Residuals of both sessions for a refined method.
fn residuals(method: Method, train: &[Array2<f64>], test: &[Array2<f64>], cfg: &PipelineConfig) -> Result<SessionPair> {
    match method {
        Method::FinnRaw => Ok(SessionPair {
            train: train.to_vec(),
            test: test.to_vec(),
        }),
        Method::BaselineGroupavg => {
            let p = train[0].nrows();
            let mut mean = Array2::<f64>::zeros((p, p));
            for m in train {
                mean += m;
            }
            mean /= train.len() as f64;
            let sub = |set: &[Array2<f64>]| set.iter().map(|m| zero_diagonal(m - &mean)).collect();
            Ok(SessionPair {
                train: sub(train),
                test: sub(test),
            })
        }
        Method::ConvaeSdl => {
            let arch = cfg.ae_layout.for_p(train[0].nrows());
            let train_cfg = TrainConfig {
                seed: seed::derive(cfg.seed, "autoencoder"),
                ..cfg.ae_train.clone()
            };
            let (params, history) = convae::train_matrices(train, &arch, &train_cfg)?;
            log::info!(
                "autoencoder trained: loss {:.4e} -> {:.4e}",
                history[0],
                history.last().copied().unwrap_or(f64::NAN)
            );
            let res = |set: &[Array2<f64>]| -> Result<Vec<Array2<f64>>> {
                set.par_iter().map(|m| convae::residual_matrix(m, &params)).collect()
            };
            Ok(SessionPair {
                train: res(train)?,
                test: res(test)?,
            })
        }
    }
}

/// One dictionary for one session's residual edge vectors, then subtract each
/// subject's sparse reconstruction from its residual (or original) matrix.
fn refine_session(
    residuals: &[Array2<f64>],
    originals: &[Array2<f64>],
    label: &str,
    k: usize,
    l: usize,
    cfg: &PipelineConfig,
) -> Result<Vec<Array2<f64>>> {
    let p = residuals[0].nrows();
    let edges: Vec<Vec<f64>> = residuals.iter().map(|r| upper_triangle(r.view())).collect();
    let m = edges[0].len();
    let y = Array2::from_shape_fn((m, edges.len()), |(e, i)| edges[i][e]);
    let (dict, codes, report) = ksvd(&y, k, l, cfg.ksvd_iters, seed::derive(cfg.seed, &format!("ksvd/{label}")))?;
    log::debug!(
        "K-SVD {label} (K={k}, L={l}, p={p}): objective {:?}",
        report.objective_history.last()
    );
    residuals
        .iter()
        .zip(originals)
        .enumerate()
        .map(|(i, (r, c))| {
            let target = match cfg.refine_target {
                RefineTarget::Residual => r,
                RefineTarget::Original => c,
            };
            refine(target, &dict, &codes.column(i))
        })
        .collect()
}

fn check_kl(k: usize, l: usize) -> Result<()> {
    if k == 0 || l == 0 || l > k {
        return Err(Error::Config(format!("need 1 <= L <= K, got K = {k}, L = {l}")));
    }
    Ok(())
}

fn check_sets(train: &[Connectome], test: &[Connectome]) -> Result<()> {
    if train.len() != test.len() || train.len() < 2 {
        return Err(Error::Argument(format!(
            "sessions must hold the same subjects (at least 2), got {} and {}",
            train.len(),
            test.len()
        )));
    }
    Ok(())
}

/// Identification from prebuilt connectomes of the training (rows) and test
/// (columns) sessions.
pub fn run_on_connectomes(
    train: &[Connectome],
    test: &[Connectome],
    method: Method,
    cfg: &PipelineConfig,
) -> Result<IdentificationResult> {
    check_sets(train, test)?;
    if method != Method::FinnRaw {
        check_kl(cfg.k_atoms, cfg.sparsity)?;
    }
    let (a, b) = (matrices(train, cfg.fisher_z), matrices(test, cfg.fisher_z));
    let pair = residuals(method, &a, &b, cfg)?;
    if method == Method::FinnRaw {
        return Ok(identify(&similarity_matrix(&pair.train, &pair.test)?));
    }
    let (ltrain, ltest) = (&train[0].session_label, &test[0].session_label);
    let r1 = refine_session(&pair.train, &a, &format!("train/{ltrain}"), cfg.k_atoms, cfg.sparsity, cfg)?;
    let r2 = refine_session(&pair.test, &b, &format!("test/{ltest}"), cfg.k_atoms, cfg.sparsity, cfg)?;
    Ok(identify(&similarity_matrix(&r1, &r2)?))
}

/// Build both sessions' connectomes from the cohort and run one method.
pub fn run_pipeline(
    cohort: &TimeSeriesSet,
    train_session: &str,
    test_session: &str,
    method: Method,
    cfg: &PipelineConfig,
) -> Result<IdentificationResult> {
    let (s1, s2) = (cohort.session_index(train_session)?, cohort.session_index(test_session)?);
    let train = build_connectomes(cohort, s1, &cfg.preprocess)?;
    let test = build_connectomes(cohort, s2, &cfg.preprocess)?;
    run_on_connectomes(&train, &test, method, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub k: usize,
    pub l: usize,
    /// `None` for infeasible cells (`L > K`).
    pub accuracy: Option<f64>,
}

/// Accuracy over every `(K, L)` pair; the residual model (group average or
/// autoencoder) is fitted once and shared by all cells.
pub fn grid_search(
    cohort: &TimeSeriesSet,
    train_session: &str,
    test_session: &str,
    method: Method,
    k_range: &[usize],
    l_range: &[usize],
    cfg: &PipelineConfig,
) -> Result<Vec<GridCell>> {
    if k_range.is_empty() || l_range.is_empty() {
        return Err(Error::Config("grid ranges must be nonempty".into()));
    }
    let (s1, s2) = (cohort.session_index(train_session)?, cohort.session_index(test_session)?);
    let train = build_connectomes(cohort, s1, &cfg.preprocess)?;
    let test = build_connectomes(cohort, s2, &cfg.preprocess)?;
    let (a, b) = (matrices(&train, cfg.fisher_z), matrices(&test, cfg.fisher_z));
    let pair = residuals(method, &a, &b, cfg)?;
    let raw = if method == Method::FinnRaw {
        Some(identify(&similarity_matrix(&a, &b)?).accuracy)
    } else {
        None
    };
    let cells: Vec<(usize, usize)> = k_range
        .iter()
        .flat_map(|&k| l_range.iter().map(move |&l| (k, l)))
        .collect();
    cells
        .par_iter()
        .map(|&(k, l)| {
            if k == 0 || l == 0 || l > k {
                return Ok(GridCell { k, l, accuracy: None });
            }
            if let Some(acc) = raw {
                return Ok(GridCell { k, l, accuracy: Some(acc) });
            }
            let r1 = refine_session(&pair.train, &a, &format!("train/{train_session}"), k, l, cfg)?;
            let r2 = refine_session(&pair.test, &b, &format!("test/{test_session}"), k, l, cfg)?;
            let acc = identify(&similarity_matrix(&r1, &r2)?).accuracy;
            Ok(GridCell { k, l, accuracy: Some(acc) })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub network: usize,
    pub name: String,
    pub accuracy: Option<f64>,
    pub delta: Option<f64>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub baseline_accuracy: f64,
    pub rows: Vec<AblationRow>,
}

/// Fewest ROIs a reduced connectome may keep: three ROIs give three edges,
/// the minimum for a non-degenerate edge correlation and a K-SVD signal.
pub const MIN_ABLATION_ROIS: usize = 3;

/// Rerun the pipeline once per network with that network's ROIs removed from
/// both sessions.
pub fn ablation(
    cohort: &TimeSeriesSet,
    partition: &NetworkPartition,
    train_session: &str,
    test_session: &str,
    method: Method,
    cfg: &PipelineConfig,
) -> Result<AblationReport> {
    let (p, _) = cohort.shape();
    if partition.p_rois() != p {
        return Err(Error::Config(format!(
            "partition covers {} ROIs, cohort has {p}",
            partition.p_rois()
        )));
    }
    let (s1, s2) = (cohort.session_index(train_session)?, cohort.session_index(test_session)?);
    let train = build_connectomes(cohort, s1, &cfg.preprocess)?;
    let test = build_connectomes(cohort, s2, &cfg.preprocess)?;
    let baseline = run_on_connectomes(&train, &test, method, cfg)?.accuracy;

    let rows = (0..partition.n_networks())
        .map(|g| {
            let name = partition.names()[g].clone();
            let excluded = BTreeSet::from([g]);
            let remaining = p - partition.rois_of(g).len();
            if remaining < MIN_ABLATION_ROIS {
                let warning = format!("excluding {name} leaves {remaining} ROI(s); skipped");
                log::warn!("{warning}");
                return Ok(AblationRow { network: g, name, accuracy: None, delta: None, warning: Some(warning) });
            }
            let reduce = |set: &[Connectome]| -> Result<Vec<Connectome>> {
                set.iter().map(|c| exclude_networks(c, partition, &excluded)).collect()
            };
            let acc = run_on_connectomes(&reduce(&train)?, &reduce(&test)?, method, cfg)?.accuracy;
            Ok(AblationRow {
                network: g,
                name,
                accuracy: Some(acc),
                delta: Some(acc - baseline),
                warning: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport {
        baseline_accuracy: baseline,
        rows,
    })
}

/// Group-average connectome of one session (exposed for reporting).
pub fn session_group_average(cohort: &TimeSeriesSet, session: &str, pre: &Preprocess) -> Result<Connectome> {
    let conns = build_connectomes(cohort, cohort.session_index(session)?, pre)?;
    group_average(&conns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_cohort, CohortConfig};

    fn cohort(subject_strength: f64, seed: u64) -> TimeSeriesSet {
        generate_cohort(&CohortConfig {
            n_subjects: 8,
            p_rois: 12,
            n_timepoints: 100,
            sessions: vec!["rest".into(), "motor".into()],
            subject_strength,
            task_strength: 1.0,
            group_strength: 1.0,
            noise_std: 0.5,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    fn quick_cfg() -> PipelineConfig {
        PipelineConfig {
            k_atoms: 3,
            sparsity: 1,
            ksvd_iters: 5,
            ae_layout: AeLayout {
                conv: vec![
                    ConvSpec { out_channels: 2, kernel: 3, stride: 2 },
                    ConvSpec { out_channels: 4, kernel: 3, stride: 2 },
                ],
                latent: Some(8),
                activation: Activation::Tanh,
            },
            ae_train: TrainConfig { epochs: 5, batch_size: 4, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("nope".parse::<Method>().is_err());
        assert_eq!("original".parse::<RefineTarget>().unwrap(), RefineTarget::Original);
    }

    #[test]
    fn every_method_runs_and_is_deterministic() {
        let c = cohort(3.0, 1);
        for method in Method::ALL {
            let a = run_pipeline(&c, "rest", "motor", method, &quick_cfg()).unwrap();
            let b = run_pipeline(&c, "rest", "motor", method, &quick_cfg()).unwrap();
            assert_eq!(a, b);
            assert!((0.0..=1.0).contains(&a.accuracy));
        }
    }

    #[test]
    fn refine_target_and_fisher_z_options() {
        let c = cohort(3.0, 2);
        let cfg = PipelineConfig { refine_target: RefineTarget::Original, fisher_z: true, ..quick_cfg() };
        let r = run_pipeline(&c, "rest", "motor", Method::BaselineGroupavg, &cfg).unwrap();
        assert!((0.0..=1.0).contains(&r.accuracy));
        let cfg = PipelineConfig {
            preprocess: Preprocess {
                detrend: true,
                bandpass: Some(Band { low_hz: 0.01, high_hz: 0.25, sample_rate_hz: 1.0 }),
            },
            ..quick_cfg()
        };
        assert!(run_pipeline(&c, "rest", "motor", Method::FinnRaw, &cfg).is_ok());
    }

    #[test]
    fn configuration_errors() {
        let c = cohort(1.0, 3);
        assert!(matches!(run_pipeline(&c, "rest", "sleep", Method::FinnRaw, &quick_cfg()), Err(Error::Config(_))));
        let cfg = PipelineConfig { k_atoms: 2, sparsity: 3, ..quick_cfg() };
        assert!(matches!(run_pipeline(&c, "rest", "motor", Method::ConvaeSdl, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn grid_cells_match_single_runs() {
        let c = cohort(3.0, 4);
        let cfg = quick_cfg();
        for method in [Method::BaselineGroupavg, Method::ConvaeSdl] {
            let grid = grid_search(&c, "rest", "motor", method, &[3], &[1], &cfg).unwrap();
            let single = run_pipeline(&c, "rest", "motor", method, &cfg).unwrap();
            assert_eq!(grid, vec![GridCell { k: 3, l: 1, accuracy: Some(single.accuracy) }]);
        }
        let grid = grid_search(&c, "rest", "motor", Method::BaselineGroupavg, &[2, 3], &[1, 3], &cfg).unwrap();
        assert_eq!(grid.len(), 4);
        assert_eq!(grid[1], GridCell { k: 2, l: 3, accuracy: None });
        assert!(grid[3].accuracy.is_some());
        assert!(grid_search(&c, "rest", "motor", Method::FinnRaw, &[], &[1], &cfg).is_err());
    }

    #[test]
    fn ablation_rows_per_network() {
        let c = cohort(3.0, 5);
        let part = crate::synth::default_partition(12, 4).unwrap();
        let report = ablation(&c, &part, "rest", "motor", Method::BaselineGroupavg, &quick_cfg()).unwrap();
        assert_eq!(report.rows.len(), 4);
        let base = run_pipeline(&c, "rest", "motor", Method::BaselineGroupavg, &quick_cfg()).unwrap();
        assert_eq!(report.baseline_accuracy, base.accuracy);
        for row in &report.rows {
            let acc = row.accuracy.unwrap();
            assert_eq!(row.delta.unwrap(), acc - report.baseline_accuracy);
        }
    }

    #[test]
    fn ablation_skips_networks_leaving_too_few_rois() {
        let c = cohort(3.0, 6);
        let part = NetworkPartition::new(
            [vec![0; 10], vec![1; 2]].concat(),
            vec!["big".into(), "small".into()],
        )
        .unwrap();
        let report = ablation(&c, &part, "rest", "motor", Method::FinnRaw, &quick_cfg()).unwrap();
        assert!(report.rows[0].accuracy.is_none() && report.rows[0].warning.is_some());
        assert!(report.rows[1].accuracy.is_some());
    }
}
