use std::collections::BTreeMap;
use std::path::Path;

use connfp::fingerprint::{
    ablation, grid_search, identify, permutation_test, run_pipeline, IdentificationResult, Method,
};
use connfp::seed;
use connfp::synth::{generate_cohort, TimeSeriesSet};
use serde::{Deserialize, Serialize};

use crate::cohort_io::{read_cohort, write_cohort};
use crate::config::ExperimentConfig;
use crate::container::{parse_header, Header, MatrixContainer};
use crate::error::{CliError, CliResult};
use crate::output::{Manifest, OutputDir};

fn manifest(command: &str, cfg: &ExperimentConfig, set: &TimeSeriesSet) -> CliResult<Manifest> {
    Ok(Manifest {
        command: command.into(),
        seed: cfg.seed,
        subjects: set.subject_ids().to_vec(),
        sessions: set.session_labels().to_vec(),
        config: serde_json::to_value(cfg).map_err(|e| CliError::Runtime(e.to_string()))?,
        files: Vec::new(),
    })
}

fn load_cohort(cfg: &ExperimentConfig) -> CliResult<TimeSeriesSet> {
    match &cfg.cohort_dir {
        Some(dir) => {
            log::info!("reading cohort from {}", dir.display());
            read_cohort(dir)
        }
        None => {
            log::info!(
                "generating cohort: {} subjects, {} ROIs, {} sessions",
                cfg.cohort.n_subjects,
                cfg.cohort.p_rois,
                cfg.cohort.sessions.len()
            );
            Ok(generate_cohort(&cfg.cohort)?)
        }
    }
}

pub fn synth(cfg: &ExperimentConfig) -> CliResult<()> {
    let set = generate_cohort(&cfg.cohort)?;
    let mut out = OutputDir::create(&cfg.output_dir)?;
    write_cohort(&mut out, &set, cfg.seed)?;
    let path = out.finish(manifest("synth", cfg, &set)?)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationRow {
    pub train_session: String,
    pub test_session: String,
    pub method: Method,
    pub n_subjects: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    pub p_value: Option<f64>,
    pub reverse_accuracy: Option<f64>,
    pub mean_accuracy: Option<f64>,
}

#[derive(Debug, Serialize)]
struct PermutationJson<'a> {
    method: Method,
    train_session: &'a str,
    test_session: &'a str,
    n_perm: usize,
    seed: u64,
    observed_accuracy: f64,
    p_value: f64,
    null_mean_accuracy: f64,
    /// `null_histogram[c]` = permutations scoring exactly `c` hits.
    null_histogram: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct SummaryRecord {
    train_session: String,
    test_session: String,
    accuracy: BTreeMap<Method, f64>,
    p_value: BTreeMap<Method, f64>,
}

#[derive(Debug, Serialize)]
struct Summary {
    n_subjects: usize,
    methods: Vec<Method>,
    records: Vec<SummaryRecord>,
}

fn pair_name(method: Method, train: &str, test: &str) -> String {
    format!("{method}_{train}_{test}")
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<()> {
    let set = load_cohort(cfg)?;
    let (train, tests) = cfg.sessions(set.session_labels())?;
    let pipe = cfg.pipeline();
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for test in &tests {
        let mut record = SummaryRecord {
            train_session: train.clone(),
            test_session: test.clone(),
            accuracy: BTreeMap::new(),
            p_value: BTreeMap::new(),
        };
        for &method in &cfg.methods {
            log::info!("{method}: {train} -> {test}");
            let result = run_pipeline(&set, &train, test, method, &pipe)?;
            let name = pair_name(method, &train, test);
            write_similarity(&mut out, &format!("similarity/{name}.cfm"), &result, cfg.seed, method, &train, test)?;
            let reverse = cfg
                .both_directions
                .then(|| identify(&result.simmat.transposed()).accuracy);
            let p_value = if cfg.n_perm > 0 {
                let perm_seed = seed::derive(cfg.seed, &format!("permutation/{name}"));
                let report = permutation_test(&result, cfg.n_perm, perm_seed)?;
                let n = result.predictions.len();
                let mut hist = vec![0; n + 1];
                for a in &report.null_accuracies {
                    hist[(a * n as f64).round() as usize] += 1;
                }
                out.write_json(
                    &format!("permutation/{name}.json"),
                    &PermutationJson {
                        method,
                        train_session: &train,
                        test_session: test,
                        n_perm: cfg.n_perm,
                        seed: perm_seed,
                        observed_accuracy: report.observed_accuracy,
                        p_value: report.p_value,
                        null_mean_accuracy: report.null_accuracies.iter().sum::<f64>() / cfg.n_perm as f64,
                        null_histogram: hist,
                    },
                )?;
                record.p_value.insert(method, report.p_value);
                Some(report.p_value)
            } else {
                None
            };
            log::info!("{method}: accuracy {:.4}", result.accuracy);
            record.accuracy.insert(method, result.accuracy);
            rows.push(IdentificationRow {
                train_session: train.clone(),
                test_session: test.clone(),
                method,
                n_subjects: result.predictions.len(),
                n_correct: result.n_correct,
                accuracy: result.accuracy,
                p_value,
                reverse_accuracy: reverse,
                mean_accuracy: reverse.map(|r| 0.5 * (r + result.accuracy)),
            });
        }
        records.push(record);
    }
    out.write_csv("identification.csv", &rows)?;
    out.write_json(
        "summary.json",
        &Summary {
            n_subjects: set.n_subjects(),
            methods: cfg.methods.clone(),
            records,
        },
    )?;
    out.finish(manifest("run", cfg, &set)?)?;
    Ok(())
}

fn write_similarity(
    out: &mut OutputDir,
    rel: &str,
    result: &IdentificationResult,
    seed: u64,
    method: Method,
    train: &str,
    test: &str,
) -> CliResult<()> {
    let mut h = Header::new((0, 0), "similarity", seed);
    h.meta.insert("method".into(), method.to_string());
    h.meta.insert("rows".into(), train.into());
    h.meta.insert("cols".into(), test.into());
    out.write_container(rel, &MatrixContainer::new(h, result.simmat.values().clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub k: usize,
    pub l: usize,
    pub accuracy: f64,
}

pub fn grid(cfg: &ExperimentConfig) -> CliResult<()> {
    let set = load_cohort(cfg)?;
    let (train, tests) = cfg.sessions(set.session_labels())?;
    let (ks, ls) = cfg.grid_ranges();
    let method = cfg.grid.method;
    let mut out = OutputDir::create(&cfg.output_dir)?;
    for test in &tests {
        log::info!("grid {method}: {train} -> {test}, {} cells", ks.len() * ls.len());
        let cells = grid_search(&set, &train, test, method, &ks, &ls, &cfg.pipeline())?;
        let rows: Vec<GridRow> = cells
            .into_iter()
            .filter_map(|c| c.accuracy.map(|accuracy| GridRow { k: c.k, l: c.l, accuracy }))
            .collect();
        out.write_csv(&format!("grid/{}.csv", pair_name(method, &train, test)), &rows)?;
    }
    out.finish(manifest("grid", cfg, &set)?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCsvRow {
    /// Empty for the unablated baseline row.
    pub network: Option<usize>,
    pub name: String,
    pub excluded_rois: usize,
    pub accuracy: Option<f64>,
    pub delta: Option<f64>,
    pub note: String,
}

pub fn ablate(cfg: &ExperimentConfig) -> CliResult<()> {
    let set = load_cohort(cfg)?;
    let (train, tests) = cfg.sessions(set.session_labels())?;
    let part = cfg.partition(set.shape().0)?;
    let method = cfg.ablation.method;
    let mut out = OutputDir::create(&cfg.output_dir)?;
    for test in &tests {
        log::info!("ablation {method}: {train} -> {test}, {} networks", part.n_networks());
        let report = ablation(&set, &part, &train, test, method, &cfg.pipeline())?;
        let mut rows = vec![AblationCsvRow {
            network: None,
            name: "baseline".into(),
            excluded_rois: 0,
            accuracy: Some(report.baseline_accuracy),
            delta: Some(0.0),
            note: String::new(),
        }];
        rows.extend(report.rows.into_iter().map(|r| AblationCsvRow {
            network: Some(r.network),
            excluded_rois: part.rois_of(r.network).len(),
            name: r.name,
            accuracy: r.accuracy,
            delta: r.delta,
            note: r.warning.unwrap_or_default(),
        }));
        out.write_csv(&format!("ablation/{}.csv", pair_name(method, &train, test)), &rows)?;
    }
    out.finish(manifest("ablate", cfg, &set)?)?;
    Ok(())
}

/// Pretty-printed header of a container.
pub fn inspect(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let header = parse_header(&bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    serde_json::to_string_pretty(&header).map_err(|e| CliError::Runtime(e.to_string()))
}
