//! End-to-end acceptance checks. Prints one PASS/FAIL/SKIP line per
//! criterion; tolerances are pinned below. Runs without the libtest harness
//! so the lines are always visible.
//!
//! The MovieLens criteria look for the dataset in `$GRAPHON_MOVIELENS` or
//! `data/ml-100k` under the workspace root and are skipped when absent.

use std::path::PathBuf;
use std::time::Instant;

use graphon_core::experiment::{read_csv, run_movielens, run_sourceloc, run_spectra, ExperimentConfig, ExperimentKind, Preset};
use graphon_core::gnn::{
    build_model, Architecture, GnnModel, LayerArch, ModelConfig, Nonlinearity, PoolingStrategy,
    Summarizer,
};
use graphon_core::gnn::pool::graphon_assignment;
use graphon_core::graphgen::{sample_by_integration, Graph};
use graphon_core::graphon::{Graphon, GraphonSignal, Partition};
use graphon_core::gsp::{eigendecompose, filter_apply, gft, FilterTaps};
use graphon_core::train::{adam_step, cross_entropy, mse, AdamState};
use graphon_core::wsp::{convergence_diagnostic, wft, wspectrum, DiagnosticOptions};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SPECTRAL_TOL: f64 = 1e-3;
const EXACT_TOL: f64 = 1e-10;
const CONVERGENCE_FINAL_TOL: f64 = 5e-3;
const GRADIENT_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-5;
const SOURCELOC_MIN_ACC: f64 = 0.85;
const MOVIELENS_MAX_RMSE: f64 = 1.35;
const REPLICATIONS: usize = 5;
const MOVIELENS_SPLITS: usize = 3;

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

fn judged(ok: bool, detail: String) -> Outcome {
    Outcome {
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        detail,
    }
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("graphon-acceptance-{}", std::process::id())).join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn criterion_1() -> Outcome {
    let b = wspectrum(&Graphon::bilinear(), 500, 20).unwrap();
    let p = wspectrum(&Graphon::polynomial(), 500, 20).unwrap();
    let s5 = 1.0 / 20f64.sqrt();
    let eb = (b.eigenvalues()[0] - 1.0 / 3.0).abs();
    let top = p.eigenvalues()[0];
    let bottom = p.eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
    let ep = (top - (1.0 / 6.0 + s5)).abs().max((bottom - (1.0 / 6.0 - s5)).abs());
    judged(
        eb < SPECTRAL_TOL && ep < SPECTRAL_TOL,
        format!("bilinear sigma1 err {eb:.2e}; polynomial pair ({top:.5}, {bottom:.5}) err {ep:.2e}"),
    )
}

fn criterion_2() -> Outcome {
    let n = 30;
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let w: f64 = rng.gen();
            s[(i, j)] = w;
            s[(j, i)] = w;
        }
    }
    let g = Graph::from_adjacency(s.clone()).unwrap();
    let spec = eigendecompose(&g).unwrap();
    let ws = wspectrum(&Graphon::induced(&s).unwrap(), n, n).unwrap();
    let eig_err = spec
        .eigenvalues()
        .iter()
        .zip(ws.eigenvalues())
        .map(|(l, s)| (l / n as f64 - s).abs())
        .fold(0.0, f64::max);
    let x = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let xh = gft(&spec, &x).unwrap();
    let xw = wft(&ws, &GraphonSignal::induced(x.as_slice()).unwrap());
    let coef_err = xh
        .iter()
        .zip(&xw.coefficients)
        .map(|(a, b)| (a / (n as f64).sqrt() - b).abs())
        .fold(0.0, f64::max);
    judged(
        eig_err < EXACT_TOL && coef_err < EXACT_TOL && ws.eigenvalues().len() == n,
        format!("eigenvalue err {eig_err:.2e}, coefficient err {coef_err:.2e}"),
    )
}

fn criterion_3() -> Outcome {
    let x = GraphonSignal::from_fn(|u| 3f64.sqrt() * u);
    let table =
        convergence_diagnostic(&Graphon::bilinear(), &[50, 100, 200, 400], &x, 20, DiagnosticOptions::default()).unwrap();
    let errs: Vec<f64> = table.coefficient_errors(1).into_iter().map(|(_, e)| e).collect();
    let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
    let last = errs.last().copied().unwrap_or(f64::NAN);
    judged(
        errs.len() == 4 && decreasing && last < CONVERGENCE_FINAL_TOL,
        format!("j=1 errors {}", errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(" > ")),
    )
}

fn fd_error(model: &mut GnnModel, x: &DMatrix<f64>, c: &DVector<f64>) -> f64 {
    let (_, cache) = model.forward(x).unwrap();
    let analytic = model.backward(&cache, c).unwrap().flat();
    let base = model.params_flat();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + FD_STEP;
        model.set_params_flat(&p).unwrap();
        let plus = model.predict(x).unwrap().dot(c);
        p[i] = base[i] - FD_STEP;
        model.set_params_flat(&p).unwrap();
        let minus = model.predict(x).unwrap().dot(c);
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max((analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-3));
    }
    model.set_params_flat(&base).unwrap();
    worst
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut models = 0;
    for &strategy in &PoolingStrategy::ALL {
        for nl in [Nonlinearity::Relu, Nonlinearity::Tanh] {
            for summ in [Summarizer::Mean, Summarizer::Max] {
                let n0 = rng.gen_range(8..16);
                let n1 = rng.gen_range(3..n0);
                let n2 = rng.gen_range(1..=n1);
                let arch = Architecture {
                    input_features: rng.gen_range(1..3),
                    layers: vec![
                        LayerArch { features: rng.gen_range(2..4), taps: rng.gen_range(1..4), nonlinearity: nl, summarizer: summ },
                        LayerArch { features: rng.gen_range(1..3), taps: rng.gen_range(1..4), nonlinearity: nl, summarizer: summ },
                    ],
                    outputs: rng.gen_range(1..4),
                };
                let fin = arch.input_features;
                let mut model =
                    build_model(&Graphon::polynomial(), &ModelConfig::new(vec![n0, n1, n2], arch, strategy, rng.gen())).unwrap();
                let x = DMatrix::from_fn(n0, fin, |_, _| rng.gen_range(-1.0..1.0));
                let c = DVector::from_fn(model.outputs(), |_, _| rng.gen_range(-1.0..1.0));
                worst = worst.max(fd_error(&mut model, &x, &c));
                models += 1;
            }
        }
    }
    judged(worst <= GRADIENT_TOL, format!("{models} models, max relative error {worst:.2e}"))
}

fn sourceloc_config(sizes: Vec<usize>, strategies: Vec<PoolingStrategy>, out: PathBuf) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::Sourceloc);
    cfg.graphons = vec!["poly".into()];
    cfg.sizes = vec![sizes];
    cfg.strategies = strategies;
    cfg.replications = REPLICATIONS;
    cfg.out = out;
    cfg
}

fn criterion_5() -> Outcome {
    let cfg = sourceloc_config(vec![100, 50, 10], vec![PoolingStrategy::Graphon], scratch("c5"));
    let report = run_sourceloc(&cfg).unwrap();
    let fin = report.results.value(0, "final_acc_mean").unwrap();
    let best = report.results.value(0, "best_val_acc_mean").unwrap();
    let sd = report.results.value(0, "final_acc_std").unwrap();
    judged(
        fin >= SOURCELOC_MIN_ACC,
        format!(
            "graphon pooling test accuracy {:.1} ± {:.1} % (best-validation model {:.1} %), threshold {:.0} %",
            100.0 * fin,
            100.0 * sd,
            100.0 * best,
            100.0 * SOURCELOC_MIN_ACC
        ),
    )
}

fn criterion_6() -> Outcome {
    let cfg = sourceloc_config(
        vec![200, 20, 10],
        vec![PoolingStrategy::Graphon, PoolingStrategy::SelectionZeropad],
        scratch("c6"),
    );
    let report = run_sourceloc(&cfg).unwrap();
    let g = report.results.value(0, "final_acc_mean").unwrap();
    let s = report.results.value(1, "final_acc_mean").unwrap();
    judged(g > s, format!("graphon {:.1} % vs selection {:.1} %", 100.0 * g, 100.0 * s))
}

fn movielens_path() -> Option<PathBuf> {
    let candidate = std::env::var_os("GRAPHON_MOVIELENS")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k"));
    candidate.join("u.data").is_file().then_some(candidate)
}

/// Criteria 7 and 8 share one run.
fn criteria_7_8() -> (Outcome, Outcome) {
    let Some(path) = movielens_path() else {
        let skip = || Outcome {
            verdict: Verdict::Skip,
            detail: "MovieLens 100k not found (set GRAPHON_MOVIELENS to the directory containing u.data)".into(),
        };
        return (skip(), skip());
    };
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::Movielens);
    cfg.movielens.path = Some(path);
    cfg.sizes = vec![vec![50, 10]];
    cfg.strategies = vec![PoolingStrategy::Graphon, PoolingStrategy::CoarsenHem];
    cfg.replications = MOVIELENS_SPLITS;
    cfg.out = scratch("c7");
    let report = run_movielens(&cfg).unwrap();
    let rmse = report.results.value(0, "final_rmse_mean").unwrap();
    let sd = report.results.value(0, "final_rmse_std").unwrap();
    let gap_g = report.results.value(0, "final_gap_mean").unwrap();
    let gap_c = report.results.value(1, "final_gap_mean").unwrap();
    (
        judged(rmse <= MOVIELENS_MAX_RMSE, format!("graphon pooling RMSE {rmse:.4} ± {sd:.4}, threshold {MOVIELENS_MAX_RMSE}")),
        judged(gap_g < gap_c, format!("final val−train gap: graphon {gap_g:.4} vs coarsening {gap_c:.4}")),
    )
}

fn outputs_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn criterion_9() -> Outcome {
    let mut cfg = ExperimentConfig::preset(ExperimentKind::Sourceloc, Preset::Quick);
    cfg.sizes = vec![vec![40, 16, 8]];
    cfg.training.epochs = 8;
    cfg.sourceloc.n_train = 120;
    cfg.sourceloc.n_val = 30;
    cfg.sourceloc.n_test = 30;
    let mut spectra = ExperimentConfig::preset(ExperimentKind::Spectra, Preset::Quick);
    let mut runs = Vec::new();
    for attempt in ["a", "b"] {
        cfg.out = scratch(&format!("c9-sourceloc-{attempt}"));
        run_sourceloc(&cfg).unwrap();
        spectra.out = scratch(&format!("c9-spectra-{attempt}"));
        run_spectra(&spectra).unwrap();
        let mut files = outputs_bytes(&cfg.out);
        files.extend(outputs_bytes(&spectra.out));
        runs.push(files);
    }
    let reparsed = runs[0].len();
    let parse_ok = outputs_bytes(&cfg.out).iter().all(|(name, _)| read_csv(cfg.out.join(name)).is_ok());
    judged(
        runs[0] == runs[1] && parse_ok && reparsed > 2,
        format!("{reparsed} CSV files compared byte-for-byte across two runs"),
    )
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut failed = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failed.push(name.to_string());
        }
    };

    let kernels = [Graphon::exponential(2.3).unwrap(), Graphon::bilinear(), Graphon::polynomial()];
    let mut sym = true;
    let mut range = true;
    for w in &kernels {
        for _ in 0..1000 {
            let (u, v): (f64, f64) = (rng.gen(), rng.gen());
            sym &= w.eval(u, v).unwrap().to_bits() == w.eval(v, u).unwrap().to_bits();
        }
        for a in 0..=100 {
            for b in 0..=100 {
                let v = w.eval(a as f64 / 100.0, b as f64 / 100.0).unwrap();
                range &= (0.0..=1.0).contains(&v);
            }
        }
    }
    check("graphon symmetry", sym);
    check("graphon range", range);

    let grid = Partition::uniform(20).unwrap();
    for (name, w) in [("bilinear", Graphon::bilinear()), ("polynomial", Graphon::polynomial())] {
        let s8 = sample_by_integration(&w, &grid, 8).unwrap();
        let s32 = sample_by_integration(&w, &grid, 32).unwrap();
        let d = (s8.shift() - s32.shift()).amax();
        check(&format!("{name} quadrature 8 vs 32 below 1e-6 (measured {d:.2e})"), d < 1e-6);
    }

    let g = sample_by_integration(&Graphon::exponential(2.3).unwrap(), &Partition::uniform(25).unwrap(), 4).unwrap();
    let spec = eigendecompose(&g).unwrap();
    let taps = FilterTaps::new((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let x = DVector::from_fn(25, |_, _| rng.gen_range(-1.0..1.0));
    let lhs = filter_apply(&taps, &g, &(g.shift() * &x)).unwrap();
    let rhs = g.shift() * filter_apply(&taps, &g, &x).unwrap();
    check("filter shift-invariance", (&lhs - &rhs).amax() <= 1e-10 * rhs.amax().max(1.0));
    check("Parseval", (gft(&spec, &x).unwrap().norm() - x.norm()).abs() < 1e-10);

    let mut partition = true;
    for nf in 1..60 {
        for nc in 1..=nf {
            let a = graphon_assignment(nf, nc).unwrap();
            // non-decreasing, starts at 0, ends at nc-1, no gaps: contiguous cover
            partition &= a[0] == 0 && a[nf - 1] == nc - 1 && a.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1);
        }
    }
    check("pooling partition", partition);

    let logits = DVector::from_fn(7, |_, _| rng.gen_range(-20.0..20.0));
    check("softmax gradient sums to zero", cross_entropy(&logits, 3).unwrap().1.sum().abs() < 1e-12);
    let (l, gr) = mse(&DVector::from_element(1, 3.0), &DVector::from_element(1, 5.0), &[true]).unwrap();
    check("mse example", l == 4.0 && gr[0] == -4.0);
    let mut adam = AdamState::new(1, 0.01);
    let mut p = vec![0.0];
    let mut bounded = true;
    for _ in 0..500 {
        let before = p[0];
        adam_step(&mut adam, &mut p, &[1234.5]).unwrap();
        bounded &= (p[0] - before).abs() <= 0.01 * (1.0 + 1e-6);
    }
    check("ADAM step bound", bounded);

    judged(
        failed.is_empty(),
        if failed.is_empty() {
            "sampled invariants hold (full suites run as unit/property tests)".into()
        } else {
            format!("failing: {}", failed.join("; "))
        },
    )
}

fn main() {
    // libtest-style flags such as --list are ignored; this target has no filters.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results: Vec<(usize, Outcome, f64)> = Vec::new();
    let singles: [(usize, fn() -> Outcome); 6] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
    ];
    for (n, f) in singles {
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed().as_secs_f64();
        print_line(n, &o, secs);
        results.push((n, o, secs));
    }
    let start = Instant::now();
    let (c7, c8) = criteria_7_8();
    let secs = start.elapsed().as_secs_f64();
    print_line(7, &c7, secs);
    print_line(8, &c8, 0.0);
    results.push((7, c7, secs));
    results.push((8, c8, 0.0));
    for (n, f) in [(9, criterion_9 as fn() -> Outcome), (10, criterion_10)] {
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed().as_secs_f64();
        print_line(n, &o, secs);
        results.push((n, o, secs));
    }

    let count = |v: fn(&Verdict) -> bool| results.iter().filter(|(_, o, _)| v(&o.verdict)).count();
    println!(
        "acceptance summary: {} pass, {} fail, {} skipped",
        count(|v| matches!(v, Verdict::Pass)),
        count(|v| matches!(v, Verdict::Fail)),
        count(|v| matches!(v, Verdict::Skip))
    );
    let _ = std::fs::remove_dir_all(std::env::temp_dir().join(format!("graphon-acceptance-{}", std::process::id())));
}

fn print_line(n: usize, o: &Outcome, secs: f64) {
    let tag = match o.verdict {
        Verdict::Pass => "PASS",
        Verdict::Fail => "FAIL",
        Verdict::Skip => "SKIP",
    };
    println!("criterion {n:>2}: {tag} — {} [{secs:.1} s]", o.detail);
}
