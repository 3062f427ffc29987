//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The training criteria (6, 7, 8) need hours on a single core and run only
//! with `MSGWTCN_ACCEPTANCE_FULL=1`. With `MSGWTCN_ACCEPTANCE_STRICT=1` any
//! FAIL makes the process exit non-zero.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use msgwtcn::analysis::{diagonal_contribution_report, median, median_drop_by_scale, replicate_seed, train_and_test, RunOutcome};
use msgwtcn::data::{synth_generate, Dataset, NormMode, SynthParams, Topology};
use msgwtcn::graph::LaplacianKind;
use msgwtcn::model::{new_model, ModelConfig};
use msgwtcn::rng::split_seed;
use msgwtcn::spectral::{chebyshev_wavelet, eig_sym, exact_wavelet, exact_wavelet_from};
use msgwtcn::tensor::{grad_check, Tensor};
use msgwtcn::topology::{grid_graph, random_connected_graph};
use msgwtcn::training::TrainConfig;

const BIN: &str = env!("CARGO_BIN_EXE_msgwtcn");
const SCALES: [f64; 3] = [0.85, 3.85, 5.85];

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = Result<Outcome, String>;

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Check) -> (Check, Duration) {
    let start = Instant::now();
    let r = f();
    let took = start.elapsed();
    let r = match (r, limit) {
        (Ok(o), Some(l)) if took > l => Ok(Outcome {
            pass: false,
            detail: format!("{}; runtime {:.1}s over the {:.0}s limit", o.detail, took.as_secs_f64(), l.as_secs_f64()),
        }),
        (r, _) => r,
    };
    (r, took)
}

fn input(b: usize, p: usize, n: usize, seed: u64) -> Tensor {
    let data = (0..b * p * n).map(|i| ((i as f64 + seed as f64) * 0.731).sin() * 0.5 + 0.5).collect();
    Tensor::new(vec![b, p, n, 1], data).expect("shape")
}

fn wavelet_identity() -> Check {
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let n = 5 + (split_seed(2024, i) % 46) as usize;
        let g = random_connected_graph(n, split_seed(7, i));
        let l = g.laplacian(LaplacianKind::SymmetricNormalized).map_err(|e| e.to_string())?;
        let es = eig_sym(&l).map_err(|e| e.to_string())?;
        for s in [0.001, 0.85, 3.85, 5.85, 6.0] {
            let b = exact_wavelet_from(&es, s).map_err(|e| e.to_string())?;
            worst = worst.max(b.identity_error());
        }
    }
    Ok(Outcome { pass: worst < 1e-8, detail: format!("max |ΨΨ⁻¹ - I| = {worst:.3e} over 20 graphs x 5 scales") })
}

fn chebyshev_convergence() -> Check {
    let g = random_connected_graph(30, 31);
    let l = g.laplacian(LaplacianKind::SymmetricNormalized).map_err(|e| e.to_string())?;
    let orders = [3, 5, 10, 20, 30];
    let mut pass = true;
    let mut parts = Vec::new();
    for s in SCALES {
        let exact = exact_wavelet(&l, s).map_err(|e| e.to_string())?;
        let errs: Vec<f64> = orders
            .iter()
            .map(|&k| {
                let c = chebyshev_wavelet(&l, s, k, 2.0, 0.0).map_err(|e| e.to_string())?;
                Ok(c.psi.max_abs_diff(&exact.psi).max(c.psi_inv.max_abs_diff(&exact.psi_inv)))
            })
            .collect::<Result<_, String>>()?;
        pass &= errs.windows(2).all(|w| w[1] <= w[0]);
        if s == 0.85 {
            pass &= errs[4] < 1e-6;
        }
        let cells: Vec<String> = orders.iter().zip(&errs).map(|(k, e)| format!("k={k}:{e:.2e}")).collect();
        parts.push(format!("s={s} [{}]", cells.join(" ")));
    }
    Ok(Outcome { pass, detail: parts.join("; ") })
}

fn gradient_check() -> Check {
    let cfg = ModelConfig { num_layers: 2, ..Default::default() };
    let m = new_model(cfg, random_connected_graph(6, 5), 2).map_err(|e| e.to_string())?;
    let x = input(2, 12, 6, 1);
    let target = Tensor::full(&[2, 1, 6, 1], 0.3);
    let params: Vec<Tensor> = m.params().iter().map(|p| p.value.clone()).collect();
    let report = grad_check(
        |tape, vars| {
            let xv = tape.constant(x.clone());
            let tv = tape.constant(target.clone());
            let y = m.forward_on(tape, vars, xv, None)?;
            tape.mse_loss(y, tv)
        },
        &params,
        1e-5,
        200,
        7,
    )
    .map_err(|e| e.to_string())?;
    let name = &m.params()[report.worst.0].name;
    Ok(Outcome {
        pass: report.max_rel_error < 1e-4,
        detail: format!(
            "max rel error {:.3e} at {name}[{}] over {} coordinates",
            report.max_rel_error, report.worst.1, report.coords_checked
        ),
    })
}

fn causality() -> Check {
    let (n, p) = (6, 12);
    let m = new_model(ModelConfig::default(), random_connected_graph(n, 4), 3).map_err(|e| e.to_string())?;
    let x = input(2, p, n, 0);
    let base = m.forward_all_slots(&x).map_err(|e| e.to_string())?;
    if base.shape()[1] != p {
        return Err(format!("all-slot output has shape {:?}", base.shape()));
    }
    let per_slot: usize = base.shape()[2..].iter().product();
    let mut pass = true;
    for t in 0..p {
        let mut xp = x.clone();
        for b in 0..2 {
            for k in 0..n {
                xp.data_mut()[(b * p + t) * n + k] += 0.37;
            }
        }
        let out = m.forward_all_slots(&xp).map_err(|e| e.to_string())?;
        for b in 0..2 {
            let row = |d: &[f64]| d[b * p * per_slot..(b + 1) * p * per_slot].to_vec();
            let (o, r) = (row(out.data()), row(base.data()));
            let unaffected = o[..t * per_slot].iter().zip(&r[..t * per_slot]).all(|(a, c)| a.to_bits() == c.to_bits());
            pass &= unaffected && o[t * per_slot..] != r[t * per_slot..];
        }
    }
    Ok(Outcome { pass, detail: format!("perturbed each of {p} slots; earlier outputs bitwise equal, later ones changed") })
}

fn locality_ordering() -> Check {
    let l = grid_graph(10, 10).laplacian(LaplacianKind::SymmetricNormalized).map_err(|e| e.to_string())?;
    let es = eig_sym(&l).map_err(|e| e.to_string())?;
    let ratios: Vec<f64> = SCALES
        .iter()
        .map(|&s| exact_wavelet_from(&es, s).map(|b| b.psi.diagonal_mass_ratio()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    Ok(Outcome {
        pass: ratios.windows(2).all(|w| w[1] < w[0]),
        detail: format!("diagonal mass ratio {:.4} > {:.4} > {:.4}", ratios[0], ratios[1], ratios[2]),
    })
}

fn cli(dir: &Path, cmd: &str, args: &[String]) -> Result<(), String> {
    let o = Command::new(BIN).arg(cmd).arg("--outdir").arg(dir).args(args).output().map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{cmd} failed: {}", String::from_utf8_lossy(&o.stderr)))
    }
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    let topo = "synth.topology={\"kind\":\"grid\",\"width\":3,\"height\":3}";
    cli(&data, "gen-synth", &["--set".into(), topo.into(), "--set".into(), "synth.steps=600".into()])?;
    let args: Vec<String> = [
        format!("data.graph={}", data.join("graph.csv").display()),
        format!("data.speeds={}", data.join("speeds.csv").display()),
        "train.max_epochs=2".into(),
    ]
    .into_iter()
    .flat_map(|s| ["--set".to_string(), s])
    .chain(["--threads=1".to_string(), "--seed=5".to_string()])
    .collect();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    cli(&a, "train", &args)?;
    cli(&b, "train", &args)?;
    let mut pass = true;
    for f in ["history.csv", "model.ckpt"] {
        let read = |d: &Path| std::fs::read(d.join(f)).map_err(|e| e.to_string());
        pass &= read(&a)? == read(&b)?;
    }
    Ok(Outcome { pass, detail: "history.csv and model.ckpt compared byte for byte".into() })
}

/// Trained runs shared by the convergence, multi-scale and analysis criteria.
struct Runs {
    multi: Vec<RunOutcome>,
    single: Vec<Vec<RunOutcome>>,
    seconds_multi: f64,
    seconds_all: f64,
}

fn train_runs() -> Result<Runs, String> {
    let (graph, series) =
        synth_generate(&Topology::Grid { width: 6, height: 8 }, 4000, 0, &SynthParams::default()).map_err(|e| e.to_string())?;
    let model = ModelConfig::default();
    let data =
        Dataset::prepare(&series, model.history, model.horizon, [0.7, 0.1, 0.2], NormMode::PerNode).map_err(|e| e.to_string())?;
    let train = TrainConfig::default();
    let run = |scales: Vec<f64>| -> Result<Vec<RunOutcome>, String> {
        (0..3)
            .map(|r| {
                let cfg = ModelConfig { scales: scales.clone(), ..model.clone() };
                let o = train_and_test(&graph, &data, &cfg, &train, replicate_seed(0, r)).map_err(|e| e.to_string())?;
                eprintln!(
                    "  scales {:?} replicate {r}: epochs {} best {} test mae {:.4} persistence {:.4}",
                    scales,
                    o.history.records.len() - 1,
                    o.history.best_epoch,
                    o.test.mae,
                    o.persistence_test_mae
                );
                Ok(o)
            })
            .collect()
    };
    let start = Instant::now();
    let multi = run(SCALES.to_vec())?;
    let seconds_multi = start.elapsed().as_secs_f64();
    let single = SCALES.iter().map(|&s| run(vec![s])).collect::<Result<_, _>>()?;
    Ok(Runs { multi, single, seconds_multi, seconds_all: start.elapsed().as_secs_f64() })
}

fn med(runs: &[RunOutcome], f: impl Fn(&RunOutcome) -> f64) -> Result<f64, String> {
    median(&runs.iter().map(f).collect::<Vec<_>>()).map_err(|e| e.to_string())
}

fn convergence(r: &Runs) -> Check {
    let test = med(&r.multi, |o| o.test.mae)?;
    let persistence = r.multi[0].persistence_test_mae;
    let mut pass = test <= 0.6 * persistence;
    let mut detail = format!("median test MAE {test:.4} vs 0.6 x persistence {:.4} (ratio {:.3})", 0.6 * persistence, test / persistence);
    if r.seconds_multi > 900.0 {
        pass = false;
        detail.push_str(&format!("; runtime {:.0}s over the 900s limit", r.seconds_multi));
    }
    Ok(Outcome { pass, detail })
}

fn multi_scale(r: &Runs) -> Check {
    let multi = med(&r.multi, |o| o.test.mae)?;
    let singles: Vec<f64> = r.single.iter().map(|rs| med(rs, |o| o.test.mae)).collect::<Result<_, _>>()?;
    let best = singles.iter().copied().fold(f64::INFINITY, f64::min);
    let mut pass = multi <= 1.02 * best;
    let mut detail = format!(
        "multi {multi:.4} vs single {:.4}/{:.4}/{:.4} (bound {:.4})",
        singles[0],
        singles[1],
        singles[2],
        1.02 * best
    );
    if r.seconds_all > 2700.0 {
        pass = false;
        detail.push_str(&format!("; runtime {:.0}s over the 2700s limit", r.seconds_all));
    }
    Ok(Outcome { pass, detail })
}

fn weight_analysis(r: &Runs) -> Check {
    let start = Instant::now();
    let mut low = Vec::new();
    let mut high = Vec::new();
    for o in &r.multi {
        let report = diagonal_contribution_report(&o.model).map_err(|e| e.to_string())?;
        let drops = median_drop_by_scale(&report, &SCALES).map_err(|e| e.to_string())?;
        low.push(drops[0]);
        high.push(drops[2]);
    }
    let (lo, hi) = (median(&low).map_err(|e| e.to_string())?, median(&high).map_err(|e| e.to_string())?);
    Ok(Outcome {
        pass: lo > hi && start.elapsed() < Duration::from_secs(60),
        detail: format!("median relative drop s=0.85 {lo:.4} vs s=5.85 {hi:.4}"),
    })
}

fn report(id: &str, name: &str, r: Check, took: Duration, fails: &mut usize) {
    match r {
        Ok(o) => {
            if !o.pass {
                *fails += 1;
            }
            let tag = if o.pass { "PASS" } else { "FAIL" };
            println!("{tag} {id} {name}: {} [{:.1}s]", o.detail, took.as_secs_f64());
        }
        Err(e) => {
            *fails += 1;
            println!("FAIL {id} {name}: error {e} [{:.1}s]", took.as_secs_f64());
        }
    }
}

fn flag(name: &str) -> bool {
    std::env::var(name).is_ok_and(|v| v == "1")
}

fn main() {
    let mut fails = 0;
    let secs = Duration::from_secs;
    let cheap: [(&str, &str, Option<Duration>, fn() -> Check); 6] = [
        ("1", "wavelet identity", Some(secs(10)), wavelet_identity),
        ("2", "chebyshev convergence", Some(secs(30)), chebyshev_convergence),
        ("3", "gradient check", Some(secs(60)), gradient_check),
        ("4", "causality", None, causality),
        ("5", "locality ordering", Some(secs(5)), locality_ordering),
        ("9", "determinism", None, determinism),
    ];
    for (id, name, limit, f) in cheap {
        let (r, took) = timed(limit, f);
        report(id, name, r, took, &mut fails);
    }
    if flag("MSGWTCN_ACCEPTANCE_FULL") {
        let start = Instant::now();
        match train_runs() {
            Ok(runs) => {
                let took = start.elapsed();
                report("6", "convergence", convergence(&runs), took, &mut fails);
                report("7", "multi-scale benefit", multi_scale(&runs), took, &mut fails);
                let (r, took) = timed(Some(secs(60)), || weight_analysis(&runs));
                report("8", "weight analysis", r, took, &mut fails);
            }
            Err(e) => {
                for (id, name) in [("6", "convergence"), ("7", "multi-scale benefit"), ("8", "weight analysis")] {
                    report(id, name, Err(e.clone()), start.elapsed(), &mut fails);
                }
            }
        }
    } else {
        for (id, name) in [("6", "convergence"), ("7", "multi-scale benefit"), ("8", "weight analysis")] {
            println!("SKIP {id} {name}: set MSGWTCN_ACCEPTANCE_FULL=1 to train the 12 synthetic models");
        }
    }
    println!("10 reproduction harness: not asserted; run `msgwtcn ablate` and `msgwtcn scale-scan` on your own data");
    println!("acceptance: {fails} FAIL");
    if fails > 0 && flag("MSGWTCN_ACCEPTANCE_STRICT") {
        std::process::exit(1);
    }
}
