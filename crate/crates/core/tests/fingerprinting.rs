use connfp::connectome::{pearson_fc, upper_triangle};
use connfp::fingerprint::{grid_search, run_pipeline, Method, PipelineConfig};
use connfp::synth::{generate_cohort, CohortConfig};

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

fn high_signal(seed: u64) -> CohortConfig {
    CohortConfig {
        n_subjects: 10,
        p_rois: 16,
        n_timepoints: 200,
        subject_strength: 5.0,
        task_strength: 0.0,
        group_strength: 0.0,
        noise_std: 0.1,
        seed,
        ..Default::default()
    }
}

#[test]
fn pure_noise_sessions_are_uncorrelated_within_subject() {
    let mut r = Vec::new();
    for seed in 0..200 {
        let set = generate_cohort(&CohortConfig {
            n_subjects: 2,
            p_rois: 4,
            n_timepoints: 8,
            subject_strength: 0.0,
            task_strength: 0.0,
            group_strength: 0.0,
            noise_std: 1.0,
            sessions: vec!["a".into(), "b".into()],
            seed,
            ..Default::default()
        })
        .unwrap();
        for s in 0..2 {
            let a = pearson_fc(set.get(s, 0), "s", "a").unwrap();
            let b = pearson_fc(set.get(s, 1), "s", "b").unwrap();
            let ea = upper_triangle(a.matrix().view());
            let eb = upper_triangle(b.matrix().view());
            let c = pearson(&ea, &eb);
            if c.is_finite() {
                r.push(c);
            }
        }
    }
    let (mean, se) = mean_se(&r);
    assert!(mean.abs() <= 3.0 * se, "mean {mean} se {se}");
}

#[test]
fn high_subject_signal_identifies_everyone() {
    let set = generate_cohort(&high_signal(3)).unwrap();
    let cfg = PipelineConfig::default();
    let labels = set.session_labels().to_vec();
    for a in &labels {
        for b in labels.iter().filter(|b| *b != a) {
            let r = run_pipeline(&set, a, b, Method::FinnRaw, &cfg).unwrap();
            assert_eq!(r.accuracy, 1.0, "{a} -> {b}");
        }
    }
}

#[test]
fn task_signal_alone_does_not_identify() {
    let mut acc = Vec::new();
    let mut n = 0;
    for seed in 0..20 {
        let cohort = CohortConfig { subject_strength: 0.0, task_strength: 5.0, ..high_signal(seed) };
        n = cohort.n_subjects;
        let set = generate_cohort(&cohort).unwrap();
        acc.push(run_pipeline(&set, "rest", "motor", Method::FinnRaw, &PipelineConfig::default()).unwrap().accuracy);
    }
    let (mean, se) = mean_se(&acc);
    let chance = 1.0 / n as f64;
    // The shared task pattern makes every connectome nearly the same, so all
    // predictions can land on one subject: exactly 1/n with zero spread.
    assert!((mean - chance).abs() <= 3.0 * se + 1e-12, "mean {mean} se {se}");
}

#[test]
fn accuracy_rises_with_subject_strength() {
    let mut means = Vec::new();
    for strength in [0.0, 1.0, 5.0] {
        let mut acc = Vec::new();
        for seed in 0..10 {
            let set = generate_cohort(&CohortConfig {
                n_subjects: 15,
                p_rois: 16,
                n_timepoints: 150,
                sessions: vec!["rest".into(), "motor".into()],
                subject_strength: strength,
                seed,
                ..Default::default()
            })
            .unwrap();
            let r = run_pipeline(&set, "rest", "motor", Method::FinnRaw, &PipelineConfig::default()).unwrap();
            acc.push(r.accuracy);
        }
        means.push(mean_se(&acc).0);
    }
    assert!(means[0] < means[1] && means[1] < means[2], "{means:?}");
}

#[test]
fn full_grid_on_a_small_cohort() {
    let set = generate_cohort(&CohortConfig {
        n_subjects: 16,
        p_rois: 12,
        n_timepoints: 100,
        sessions: vec!["rest".into(), "motor".into()],
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let range: Vec<usize> = (2..=15).collect();
    let cells =
        grid_search(&set, "rest", "motor", Method::BaselineGroupavg, &range, &range, &PipelineConfig::default()).unwrap();
    assert_eq!(cells.len(), 14 * 14);
    let mut feasible = 0;
    for c in &cells {
        match c.accuracy {
            Some(a) => {
                assert!(c.l <= c.k);
                assert!((0.0..=1.0).contains(&a));
                feasible += 1;
            }
            None => assert!(c.l > c.k),
        }
    }
    assert_eq!(feasible, (2..=15).map(|k| k - 1).sum::<usize>());
}
