//! Subcommand implementations.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use msgwtcn::analysis::{
    ablation_run, diagonal_contribution_report, extract_weight_matrices, link_importance, mae, median_drop_by_scale,
    scale_scan as run_scan, write_diagonal_csv, write_link_csv, write_scan_csv, NodeSubset,
};
use msgwtcn::data::{synth_generate, Dataset, SpeedSeries, Split};
use msgwtcn::graph::Graph;
use msgwtcn::model::{load_checkpoint, load_checkpoint_for_graph, new_model, save_checkpoint, Checkpoint, Model};
use msgwtcn::par;
use msgwtcn::training::{evaluate as score, predict as forecast, train_with, TrainConfig, HISTORY_HEADER};
use serde_json::json;

use crate::config::{resolve, RunConfig};
use crate::{CliError, Common};

type Res = Result<(), CliError>;

/// Resolves the config, prepares `outdir`, echoes the resolved config and
/// runs `f`.
pub fn run(c: &Common, f: fn(&RunConfig, &Path) -> Res) -> Res {
    if let Some(n) = c.threads {
        par::configure_threads(n);
    }
    let cfg = resolve(c.config.as_deref(), &c.set, c.seed)?;
    fs::create_dir_all(&c.outdir).map_err(|e| CliError::io(format!("{}: {e}", c.outdir.display())))?;
    write_json(&c.outdir.join("config.resolved.json"), &serde_json::to_value(&cfg).expect("serializable"))?;
    f(&cfg, &c.outdir)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, v: &serde_json::Value) -> Res {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, v).map_err(|e| CliError::io(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn load_data(cfg: &RunConfig) -> Result<(Graph, SpeedSeries), CliError> {
    let graph = cfg.data.graph.as_ref().ok_or_else(|| CliError::config("data.graph is required"))?;
    let speeds = cfg.data.speeds.as_ref().ok_or_else(|| CliError::config("data.speeds is required"))?;
    Ok(Dataset::load(graph, speeds)?)
}

fn warn(model: &Model) {
    if let Some(w) = model.config().receptive_field_warning() {
        eprintln!("warning: {w}");
    }
    for w in model.conditioning_warnings(1e-3) {
        eprintln!("warning: {w}");
    }
}

pub fn gen_synth(cfg: &RunConfig, out: &Path) -> Res {
    let s = &cfg.synth;
    let (graph, series) = synth_generate(&s.topology, s.steps, cfg.seed, &s.params)?;
    let mut g = create(&out.join("graph.csv"))?;
    graph.write_csv(&mut g)?;
    g.flush()?;
    let mut w = create(&out.join("speeds.csv"))?;
    series.write_csv(&mut w)?;
    w.flush()?;
    write_json(
        &out.join("manifest.json"),
        &json!({
            "seed": cfg.seed,
            "topology": s.topology,
            "steps": s.steps,
            "params": s.params,
            "nodes": graph.n(),
            "rows": series.len(),
        }),
    )
}

pub fn train(cfg: &RunConfig, out: &Path) -> Res {
    let (graph, series) = load_data(cfg)?;
    let m = &cfg.model;
    let data = Dataset::prepare(&series, m.history, m.horizon, cfg.data.split, cfg.data.norm_mode)?;
    let mut model = new_model(m.clone(), graph, cfg.seed)?;
    warn(&model);
    let mut log = create(&out.join("history.csv"))?;
    writeln!(log, "{HISTORY_HEADER}")?;
    let history = train_with(&mut model, &data, &cfg.train, |r| {
        writeln!(log, "{}", r.csv_line())?;
        log.flush()?;
        eprintln!("epoch {:>3}  train_loss {:.6e}  val_mae {:.4}", r.epoch, r.train_loss, r.val.mae);
        Ok(())
    })?;
    save_checkpoint(&model, Some(&data.normalizer), out.join("model.ckpt"))?;
    let test = score(&model, &data.test, &data.normalizer)?;
    let persistence = mae(data.test.persistence().data(), data.test.raw_targets.data())?;
    write_json(
        &out.join("metrics.json"),
        &json!({
            "best_epoch": history.best_epoch,
            "epochs_run": history.records.len() - 1,
            "stopped_early": history.stopped_early,
            "val": history.best().val,
            "test": test,
            "persistence_test_mae": persistence,
            "num_params": model.num_params(),
        }),
    )
}

/// Checkpoint plus the dataset windowed and normalized as at training time.
fn checkpoint_and_data(cfg: &RunConfig, out: &Path) -> Result<(Checkpoint, Dataset, SpeedSeries), CliError> {
    let path = cfg.checkpoint_path(out);
    if !path.exists() {
        return Err(CliError::io(format!("checkpoint {} not found", path.display())));
    }
    let (graph, series) = load_data(cfg)?;
    let ckpt = load_checkpoint_for_graph(&path, &graph)?;
    let m = ckpt.model.config();
    let data = match &ckpt.normalizer {
        Some(norm) => Dataset::with_normalizer(&series, m.history, m.horizon, cfg.data.split, norm.clone())?,
        None => Dataset::prepare(&series, m.history, m.horizon, cfg.data.split, cfg.data.norm_mode)?,
    };
    Ok((ckpt, data, series))
}

fn eval_split(cfg: &RunConfig) -> Result<Split, CliError> {
    match cfg.eval_split {
        Split::All => Err(CliError::config("eval_split must be train, val or test")),
        s => Ok(s),
    }
}

pub fn evaluate(cfg: &RunConfig, out: &Path) -> Res {
    let split = eval_split(cfg)?;
    let (ckpt, data, _) = checkpoint_and_data(cfg, out)?;
    let set = data.split_set(split).expect("concrete split");
    let metrics = score(&ckpt.model, set, &data.normalizer)?;
    let v = serde_json::to_value(metrics).expect("serializable");
    write_json(&out.join("evaluation.json"), &v)?;
    println!("{v}");
    Ok(())
}

pub fn predict(cfg: &RunConfig, out: &Path) -> Res {
    let split = eval_split(cfg)?;
    let (ckpt, data, series) = checkpoint_and_data(cfg, out)?;
    let set = data.split_set(split).expect("concrete split");
    let pred = forecast(&ckpt.model, &set.inputs, TrainConfig::default().batch_size)?;
    let raw = data.normalizer.invert_slice(pred.data(), set.channels());
    let (t, n, c) = (set.horizon(), set.n(), set.channels());
    let ids = series.node_ids();
    let mut w = create(&out.join("predictions.csv"))?;
    let mut header = vec!["target_time".to_string()];
    for h in 0..t {
        for id in ids {
            for ch in 0..c {
                let mut name = id.clone();
                if t > 1 {
                    name.push_str(&format!("@{}", h + 1));
                }
                if c > 1 {
                    name.push_str(&format!("#{ch}"));
                }
                header.push(name);
            }
        }
    }
    writeln!(w, "{}", header.join(","))?;
    let per = t * n * c;
    for (s, &start) in set.start_rows.iter().enumerate() {
        let ts = series.timestamps()[start + set.history()].format("%Y-%m-%dT%H:%M:%S");
        let cells: Vec<String> = raw[s * per..(s + 1) * per].iter().map(f64::to_string).collect();
        writeln!(w, "{ts},{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn analyze(cfg: &RunConfig, out: &Path) -> Res {
    let path = cfg.checkpoint_path(out);
    if !path.exists() {
        return Err(CliError::io(format!("checkpoint {} not found", path.display())));
    }
    let model = load_checkpoint(&path)?.model;
    let report = diagonal_contribution_report(&model)?;
    let mut w = create(&out.join("diagonal_report.csv"))?;
    write_diagonal_csv(&report, &mut w)?;
    w.flush()?;
    let links = link_importance(&model, cfg.analysis.percentile)?;
    let mut w = create(&out.join("link_importance.csv"))?;
    write_link_csv(&links, &mut w)?;
    w.flush()?;
    if cfg.analysis.write_matrices {
        let dir = out.join("weights");
        fs::create_dir_all(&dir)?;
        for m in extract_weight_matrices(&model)? {
            let mut w = create(&dir.join(format!("layer{}_scale{}.csv", m.layer, m.scale)))?;
            m.matrix.write_csv(&mut w)?;
            w.flush()?;
        }
    }
    let scales = &model.config().scales;
    let drops = median_drop_by_scale(&report, scales)?;
    let summary: Vec<_> = scales.iter().zip(&drops).map(|(s, d)| json!({"scale": s, "median_relative_drop": d})).collect();
    write_json(
        &out.join("analysis.json"),
        &json!({"diagonal_drop": summary, "warnings": model.conditioning_warnings(1e-3)}),
    )
}

pub fn ablate(cfg: &RunConfig, out: &Path) -> Res {
    let (graph, series) = load_data(cfg)?;
    let subsets = if cfg.ablation.subsets.is_empty() {
        vec![NodeSubset { name: "full".into(), node_ids: graph.node_ids().to_vec() }]
    } else {
        cfg.ablation.subsets.clone()
    };
    let table = ablation_run(&graph, &series, &subsets, &cfg.ablation.scale_sets, &cfg.experiment(), cfg.seed)?;
    let mut w = create(&out.join("ablation.csv"))?;
    table.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn scale_scan(cfg: &RunConfig, out: &Path) -> Res {
    let (graph, series) = load_data(cfg)?;
    let rows = run_scan(&graph, &series, &cfg.scan.grid, &cfg.experiment(), cfg.seed)?;
    let mut w = create(&out.join("scale_scan.csv"))?;
    write_scan_csv(&rows, &mut w)?;
    w.flush()?;
    Ok(())
}
