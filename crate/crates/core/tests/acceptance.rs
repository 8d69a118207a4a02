//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use explain_agree::agreement::{Metric, Ranking, RankingGrid};
use explain_agree::attribution::{self, AttributionConfig, ShapMode};
use explain_agree::dataset;
use explain_agree::evaluation::{auc, spearman, RhoStatus};
use explain_agree::experiment::{emit_outputs, run_experiment, DatasetSpec, ExperimentConfig, ExperimentReport};
use explain_agree::model::{self, init_params, Architecture, MlpParams, Target};
use explain_agree::rng::{rng_from, Rng};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normal_vec(rng: &mut Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| normal(rng)).collect()
}

// Criterion 1 ---------------------------------------------------------------

fn random_attribution(rng: &mut Rng, k: usize) -> Vec<f64> {
    match rng.random_range(0..3) {
        0 => normal_vec(rng, k),
        // small integers: many ties and exact zeros
        1 => (0..k).map(|_| f64::from(rng.random_range(-3i32..=3))).collect(),
        _ => {
            let mut v = normal_vec(rng, k);
            for i in 1..k {
                if rng.random_bool(0.3) {
                    let j = rng.random_range(0..i);
                    v[i] = if rng.random_bool(0.5) { v[j] } else { -v[j] };
                }
            }
            v
        }
    }
}

fn metric_properties() -> Outcome {
    let start = Instant::now();
    let k_features = 12;
    let pairs = 10_000;
    let mut rng = rng_from(1, &[]);
    let mut checks = 0u64;
    let mut violations = Vec::new();
    for p in 0..pairs {
        let a = random_attribution(&mut rng, k_features);
        let b = random_attribution(&mut rng, k_features);
        let (ca, cb) = (rng.random_range(0.01..100.0), rng.random_range(0.01..100.0));
        let sa: Vec<f64> = a.iter().map(|v| v * ca).collect();
        let sb: Vec<f64> = b.iter().map(|v| v * cb).collect();
        let (ra, rb, rsa, rsb) = (Ranking::new(&a), Ranking::new(&b), Ranking::new(&sa), Ranking::new(&sb));
        for k in 1..=k_features {
            let (ta, tb) = (ra.top_k(k).unwrap(), rb.top_k(k).unwrap());
            let (tsa, tsb) = (rsa.top_k(k).unwrap(), rsb.top_k(k).unwrap());
            let mut v = [0.0; 4];
            for (slot, m) in Metric::ALL.iter().enumerate() {
                let x = m.evaluate(&ta, &tb).unwrap();
                v[slot] = x;
                let steps = x * k as f64;
                let ok = [
                    (0.0..=1.0).contains(&x),
                    x == m.evaluate(&tb, &ta).unwrap(),
                    m.evaluate(&ta, &ta).unwrap() == 1.0,
                    (steps - steps.round()).abs() < 1e-12,
                    x == m.evaluate(&tsa, &tsb).unwrap(),
                ];
                checks += ok.len() as u64;
                for (name, good) in ["range", "symmetry", "identity", "quantization", "scale"].iter().zip(ok) {
                    if !good {
                        violations.push(format!("pair {p} k={k} {m} {name}"));
                    }
                }
            }
            let [fa, sa_, ra_, sra] = v;
            checks += 4;
            if !(sra <= sa_ && sa_ <= fa && sra <= ra_ && ra_ <= fa) {
                violations.push(format!("pair {p} k={k} ordering FA={fa} SA={sa_} RA={ra_} SRA={sra}"));
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = violations.is_empty() && elapsed < Duration::from_secs(30);
    Outcome::new(
        pass,
        format!(
            "{pairs} pairs, {checks} checks, {} violations{}, {:.1}s",
            violations.len(),
            violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default(),
            elapsed.as_secs_f64()
        ),
    )
}

// Criterion 2 ---------------------------------------------------------------

fn full_k_feature_agreement(report: &ExperimentReport) -> Outcome {
    let k = report.manifest.n_features;
    let mut epochs: Vec<usize> = report.attributions.iter().map(|a| a.epoch).collect();
    epochs.sort();
    epochs.dedup();
    let mut values = 0usize;
    let mut bad = 0usize;
    for &e in &epochs {
        let attrs: Vec<_> = report.attributions.iter().filter(|a| a.epoch == e).cloned().collect();
        let grid = RankingGrid::new(&attrs).unwrap();
        for pair in grid.pair_values(Metric::Fa, k).unwrap() {
            values += pair.len();
            bad += pair.iter().filter(|v| **v != 1.0).count();
        }
    }
    let rows = report.summaries.iter().filter(|s| s.metric == Metric::Fa && s.k == k).collect::<Vec<_>>();
    let bad_rows = rows.iter().filter(|s| s.overall_mean != 1.0).count();
    Outcome::new(
        bad == 0 && bad_rows == 0 && values > 0 && rows.len() == epochs.len(),
        format!(
            "{values} (pair, instance, epoch) values at k={k} across {} epochs, {bad} differ from 1; {} summary rows, {bad_rows} differ",
            epochs.len(),
            rows.len()
        ),
    )
}

// Criterion 3 ---------------------------------------------------------------

fn randomized_net(rng: &mut Rng, input: usize, hidden: Vec<usize>, seed: u64, bias: f64) -> MlpParams {
    let arch = Architecture::new(input, hidden).unwrap();
    let mut p = init_params(&arch, seed);
    for layer in &mut p.layers {
        for b in &mut layer.bias {
            *b = rng.random_range(-bias..bias);
        }
    }
    p
}

fn gradient_check() -> Outcome {
    let mut rng = rng_from(3, &[]);
    let h = 1e-5;
    let mut coords = 0;
    let mut worst = 0.0f64;
    let mut failures = 0;
    for draw in 0..100u64 {
        let input = rng.random_range(2..=10);
        let hidden = vec![rng.random_range(2..=12), rng.random_range(2..=12)];
        let p = randomized_net(&mut rng, input, hidden, draw, 0.5);
        let x = normal_vec(&mut rng, input);
        for target in [Target::Logit, Target::Probability] {
            let g = model::input_gradient(&p, &x, target).unwrap();
            for i in 0..input {
                let mut up = x.clone();
                let mut down = x.clone();
                up[i] += h;
                down[i] -= h;
                let fd = (model::output(&p, &up, target).unwrap() - model::output(&p, &down, target).unwrap()) / (2.0 * h);
                let abs = (g[i] - fd).abs();
                let scale = g[i].abs().max(fd.abs());
                let rel = if scale > 0.0 { abs / scale } else { 0.0 };
                coords += 1;
                worst = worst.max(rel);
                if abs >= 1e-6 && rel >= 1e-4 {
                    failures += 1;
                }
            }
        }
    }
    Outcome::new(
        failures == 0,
        format!("100 draws, {coords} coordinates, {failures} failures, worst relative error {worst:.2e}"),
    )
}

// Criterion 4 ---------------------------------------------------------------

fn linear_model(w: &[f64], b: f64) -> MlpParams {
    let mut p = init_params(&Architecture::linear(w.len()), 0);
    p.layers[0].weights = w.to_vec();
    p.layers[0].bias = vec![b];
    p
}

fn permutation_shapley(f: &dyn Fn(&[f64]) -> f64, x: &[f64], b: &[f64]) -> Vec<f64> {
    let k = x.len();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut phi = vec![0.0; k];
    let mut count = 0.0;
    // Heap's algorithm
    let mut c = vec![0usize; k];
    let mut visit = |perm: &[usize]| {
        let mut z = b.to_vec();
        let mut prev = f(&z);
        for &j in perm {
            z[j] = x[j];
            let cur = f(&z);
            phi[j] += cur - prev;
            prev = cur;
        }
        count += 1.0;
    };
    visit(&perm);
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    phi.iter().map(|v| v / count).collect()
}

fn attribution_oracles() -> Outcome {
    let mut rng = rng_from(4, &[]);
    let mut problems: Vec<String> = Vec::new();
    let k = 8;
    for model_id in 0..20 {
        let w = normal_vec(&mut rng, k);
        let b = normal(&mut rng);
        let x = normal_vec(&mut rng, k);
        let p = linear_model(&w, b);
        let cfg = AttributionConfig::default();
        let wx: Vec<f64> = w.iter().zip(&x).map(|(w, x)| w * x).collect();
        if attribution::vanilla_gradient(&p, &x, &cfg).unwrap() != w {
            problems.push(format!("linear {model_id}: vanilla != w"));
        }
        let exact_shap = AttributionConfig { shap_mode: ShapMode::Exact, ..cfg.clone() };
        let checks = [
            ("input_x_gradient", attribution::input_x_gradient(&p, &x, &cfg).unwrap()),
            ("integrated_gradients", attribution::integrated_gradients(&p, &x, &cfg).unwrap()),
            ("deeplift", attribution::deeplift_rescale(&p, &x, &cfg).unwrap()),
            ("occlusion", attribution::occlusion(&p, &x, &cfg).unwrap()),
            ("kernel_shap", attribution::kernel_shap(&p, &x, model_id, &exact_shap).unwrap()),
        ];
        for (name, s) in checks {
            let err = s.iter().zip(&wx).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if err >= 1e-9 {
                problems.push(format!("linear {model_id}: {name} off by {err:.2e}"));
            }
        }
        let lime_cfg = AttributionConfig { lime_samples: 5000, lime_ridge: 1e-6, ..cfg.clone() };
        let lime = attribution::lime(&p, &x, model_id, &lime_cfg).unwrap();
        let rel = lime.iter().zip(&w).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max);
        if rel >= 0.02 {
            problems.push(format!("linear {model_id}: LIME relative error {rel:.3}"));
        }
    }

    let mut ig_residuals = Vec::new();
    for seed in 0..50u64 {
        let p = randomized_net(&mut rng, 6, vec![8, 5], seed, 0.3);
        let x = normal_vec(&mut rng, 6);
        let base = [0.0; 6];
        let cfg = AttributionConfig::default();
        let f = |z: &[f64]| model::output(&p, z, Target::Logit).unwrap();
        let oracle = permutation_shapley(&f, &x, &base);
        let shap = attribution::kernel_shap(&p, &x, seed as usize, &cfg).unwrap();
        let err = shap.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if err >= 1e-6 {
            problems.push(format!("net {seed}: KernelSHAP vs permutation Shapley {err:.2e}"));
        }
        for target in [Target::Logit, Target::Probability] {
            let cfg = AttributionConfig { target, ..AttributionConfig::default() };
            let s = attribution::deeplift_rescale(&p, &x, &cfg).unwrap();
            let gap = model::output(&p, &x, target).unwrap() - model::output(&p, &base, target).unwrap();
            let err = (s.iter().sum::<f64>() - gap).abs();
            if err >= 1e-6 {
                problems.push(format!("net {seed}: DeepLIFT {target:?} summation gap {err:.2e}"));
            }
        }
        let ig_cfg = AttributionConfig { ig_steps: 300, ..AttributionConfig::default() };
        let (_, residual) = attribution::integrated_gradients_with_residual(&p, &x, &ig_cfg).unwrap();
        ig_residuals.push(residual);
    }
    let ig_fail = ig_residuals.iter().filter(|r| **r >= 1e-3).count();
    let ig_max = ig_residuals.iter().copied().fold(0.0, f64::max);
    if ig_fail > 0 {
        problems.push(format!("IG residual >= 1e-3 on {ig_fail}/50 nets (max {ig_max:.2e})"));
    }
    Outcome::new(
        problems.is_empty(),
        format!(
            "20 linear models, 50 rectifier nets; max IG residual {ig_max:.2e}{}",
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
        ),
    )
}

// Criterion 5 ---------------------------------------------------------------

fn pair_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut total, mut pairs) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi == 1 && yj == 0 {
                pairs += 1.0;
                total += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    total / pairs
}

fn auc_and_spearman() -> Outcome {
    let mut rng = rng_from(5, &[]);
    let mut worst = 0.0f64;
    let mut tied_inputs = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=200);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 1;
        labels[1] = 0;
        let scores: Vec<f64> = if rng.random_bool(0.5) {
            tied_inputs += 1;
            (0..n).map(|_| f64::from(rng.random_range(0..6)) / 5.0).collect()
        } else {
            (0..n).map(|_| rng.random::<f64>()).collect()
        };
        worst = worst.max((auc(&scores, &labels).unwrap() - pair_auc(&scores, &labels)).abs());
    }
    let hand = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
    let mut monotone_ok = true;
    for n in 3..40 {
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).exp()).collect();
        let up: Vec<f64> = xs.iter().map(|v| v.ln() * 3.0 - 1.0).collect();
        let down: Vec<f64> = xs.iter().map(|v| -v.powi(3)).collect();
        monotone_ok &= spearman(&xs, &up).unwrap() == 1.0 && spearman(&xs, &down).unwrap() == -1.0;
    }
    Outcome::new(
        worst < 1e-12 && hand == 0.8 && monotone_ok,
        format!(
            "1000 AUC inputs ({tied_inputs} with ties), max deviation {worst:.1e}; hand example rho = {hand}; monotone series {}",
            if monotone_ok { "give +-1" } else { "FAILED" }
        ),
    )
}

// Criterion 6 ---------------------------------------------------------------

fn public_student_csv() -> Option<PathBuf> {
    let candidates = [
        std::env::var_os("EXPLAIN_AGREE_STUDENT_CSV").map(PathBuf::from),
        Some(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/xAPI-Edu-Data.csv")),
    ];
    candidates.into_iter().flatten().find(|p| p.is_file())
}

fn synthetic_run() -> (ExperimentReport, Duration, tempfile::TempDir) {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::synthetic(400, 12, 6.0);
    cfg.seed = 6;
    let report = run_experiment(&cfg).expect("synthetic run");
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&report, dir.path()).unwrap();
    (report, start.elapsed(), dir)
}

fn reproduction(synthetic: &(ExperimentReport, Duration, tempfile::TempDir)) -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    let fixture = dataset::parse_csv(common::student_table_csv().as_bytes()).unwrap();
    let d = dataset::preprocess_amrieh(&fixture).unwrap();
    let shape_ok = d.n() == 269 && d.k() == 12;
    pass &= shape_ok;
    notes.push(format!("recipe on a 480-row schema fixture gives {}x{}", d.n(), d.k()));

    match public_student_csv() {
        Some(path) => {
            let mut cfg = ExperimentConfig::synthetic(0, 0, 0.0);
            cfg.dataset = DatasetSpec::Amrieh { path: path.clone() };
            match run_experiment(&cfg) {
                Ok(report) => {
                    let best = report.epochs.iter().map(|e| e.test_auc).fold(f64::NEG_INFINITY, f64::max);
                    let shape = (report.dataset.n, report.dataset.feature_names.len());
                    pass &= shape == (269, 12) && best >= 0.9;
                    notes.push(format!("public data {}x{}, best test AUC {best:.4}", shape.0, shape.1));
                }
                Err(e) => {
                    pass = false;
                    notes.push(format!("public data run failed: {e}"));
                }
            }
        }
        None => {
            pass = false;
            notes.push(
                "public student-performance CSV not found (set EXPLAIN_AGREE_STUDENT_CSV or place it at data/xAPI-Edu-Data.csv); best-AUC >= 0.9 unverified"
                    .into(),
            );
        }
    }

    let (report, elapsed, dir) = synthetic;
    let text = std::fs::read_to_string(dir.path().join("correlations.csv")).unwrap();
    let cells = text.lines().count() - 1;
    let undefined: Vec<String> = report
        .correlations
        .iter()
        .filter(|c| c.status != RhoStatus::Defined && c.status != RhoStatus::ConstantAgreement)
        .map(|c| format!("{}@{}:{}", c.metric, c.k, c.status.as_str()))
        .collect();
    let constant = report.correlations.iter().filter(|c| c.status == RhoStatus::ConstantAgreement).count();
    let synthetic_ok = cells == 48 && undefined.is_empty() && *elapsed < Duration::from_secs(15 * 60);
    pass &= synthetic_ok;
    let best = report.epochs.iter().map(|e| e.test_auc).fold(f64::NEG_INFINITY, f64::max);
    notes.push(format!(
        "synthetic n=400 K=12: {cells} correlation cells, {constant} constant-agreement, {} other undefined{}, best test AUC {best:.4}, {:.0}s",
        undefined.len(),
        if undefined.is_empty() { String::new() } else { format!(" ({})", undefined.join(", ")) },
        elapsed.as_secs_f64()
    ));
    Outcome::new(pass, notes.join("; "))
}

// Criterion 7 ---------------------------------------------------------------

fn determinism() -> Outcome {
    let mut cfg = ExperimentConfig::synthetic(150, 6, 2.0);
    cfg.seed = 7;
    cfg.hidden_dims = vec![8, 4];
    cfg.training.epochs = 6;
    let mut trees = Vec::new();
    for threads in [1, 4, 1] {
        cfg.threads = Some(threads);
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment(&cfg).unwrap();
        emit_outputs(&report, dir.path()).unwrap();
        trees.push(common::read_tree(dir.path()));
    }
    let d_threads = common::tree_diff(&trees[0], &trees[1]);
    let d_repeat = common::tree_diff(&trees[0], &trees[2]);
    Outcome::new(
        d_threads.is_empty() && d_repeat.is_empty() && !trees[0].is_empty(),
        format!(
            "{} files compared; differing across thread counts: {}; across repeats: {}",
            trees[0].len(),
            d_threads.len(),
            d_repeat.len()
        ),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        }
    }
}

fn main() {
    let synthetic = panic::catch_unwind(synthetic_run).ok();
    type Criterion<'a> = (&'static str, Box<dyn FnOnce() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("metric properties", Box::new(metric_properties)),
        ("feature agreement at k=K", Box::new(|| match &synthetic {
            Some(s) => full_k_feature_agreement(&s.0),
            None => Outcome::new(false, "synthetic run failed"),
        })),
        ("gradient correctness", Box::new(gradient_check)),
        ("attribution oracles", Box::new(attribution_oracles)),
        ("AUC and Spearman", Box::new(auc_and_spearman)),
        ("desk-scale reproduction", Box::new(|| match &synthetic {
            Some(s) => reproduction(s),
            None => Outcome::new(false, "synthetic run failed"),
        })),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let o = guarded(run);
        failed += usize::from(!o.pass);
        println!("criterion {} ({name}): {} - {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} of 7 criteria passed", 7 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
