//! Data loading, configuration, synthetic models and the command drivers
//! behind the `mtmcmc` binary.

pub mod config;
pub mod data;
pub mod experiments;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use config::RunConfig;
use data::{load_csv, load_csv_encoded};

fn prepare_out_dir(out: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("effective_config.toml"), cfg.to_toml())?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn schema(cfg: &RunConfig) -> Result<&data::DataSchema> {
    cfg.data
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("a [data] section naming the column roles is required".into()))
}

/// Fits on `train`, predicts `test`; writes `metrics.json` and `predictions.csv`.
pub fn cmd_fit_predict(train: &Path, test: &Path, cfg: &RunConfig, out: &Path) -> Result<experiments::FitReport> {
    let (train_ds, encoding) = load_csv(train, schema(cfg)?)?;
    let test_ds = load_csv_encoded(test, &encoding)?;
    prepare_out_dir(out, cfg)?;
    let report = experiments::fit_predict(cfg, &train_ds, &test_ds)?;
    write_json(&out.join("metrics.json"), &report)?;
    let mut w = csv::Writer::from_path(out.join("predictions.csv"))?;
    if let Some(ev) = &report.evaluation {
        let classes = ev.records.first().and_then(|r| r.probabilities.as_ref()).map_or(0, Vec::len);
        let mut header = vec!["index".to_string(), "prediction".to_string(), "y".to_string()];
        header.extend((0..classes).map(|c| format!("p{c}")));
        w.write_record(&header)?;
        for r in &ev.records {
            let mut rec = vec![r.index.to_string(), r.prediction.to_string(), r.y.to_string()];
            if let Some(p) = &r.probabilities {
                rec.extend(p.iter().map(|v| v.to_string()));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(report)
}

#[derive(Debug, Serialize)]
struct SynthSummary {
    n_train: usize,
    n_test: usize,
    bayes_error_test: Option<f64>,
}

/// Writes `train.csv`, `test.csv` and `true_model.json`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    prepare_out_dir(out, cfg)?;
    let s = &cfg.synth;
    let (train, model) = synth::synth_generate(cfg, s.model_seed, s.data_seed, s.n_train)?;
    // the test set comes from the same model on a separate stream
    let (test, _) = synth::synth_generate(cfg, s.model_seed, s.data_seed ^ 0x5EED_7E57, s.n_test)?;
    let paths = vec![out.join("train.csv"), out.join("test.csv"), out.join("true_model.json")];
    train.write_csv(&paths[0])?;
    test.write_csv(&paths[1])?;
    write_json(&paths[2], &model)?;
    let summary = SynthSummary {
        n_train: train.len(),
        n_test: test.len(),
        bayes_error_test: model.bayes_error(&test.rows())?,
    };
    write_json(&out.join("metrics.json"), &summary)?;
    Ok(paths)
}

/// Writes `convergence.csv` (mean JS per accepted count and kind),
/// `convergence_runs.csv` and `metrics.json`.
pub fn cmd_convergence(cfg: &RunConfig, out: &Path) -> Result<Vec<experiments::KindConvergence>> {
    prepare_out_dir(out, cfg)?;
    let result = experiments::convergence(cfg)?;
    let mut w = csv::Writer::from_path(out.join("convergence.csv"))?;
    w.write_record(["kind", "accepted", "js_mean"])?;
    for k in &result {
        for (c, v) in &k.mean_trace {
            w.write_record([kind_label(k.kind), c.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("convergence_runs.csv"))?;
    w.write_record(["kind", "replication", "accepted", "js"])?;
    for k in &result {
        for (rep, t) in k.traces.iter().enumerate() {
            for (c, v) in t {
                w.write_record([kind_label(k.kind), rep.to_string(), c.to_string(), v.to_string()])?;
            }
        }
    }
    w.flush()?;
    #[derive(Serialize)]
    struct Summary {
        kind: String,
        final_js: f64,
        mean_acceptance_ratio: f64,
        acceptance_ratios: Vec<f64>,
    }
    let summary: Vec<Summary> = result
        .iter()
        .map(|k| Summary {
            kind: kind_label(k.kind),
            final_js: k.final_js(),
            mean_acceptance_ratio: k.mean_acceptance_ratio,
            acceptance_ratios: k.acceptance_ratios.clone(),
        })
        .collect();
    write_json(&out.join("metrics.json"), &summary)?;
    Ok(result)
}

fn kind_label(k: config::ProposalName) -> String {
    serde_json::to_value(k).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn model_label(m: config::TrueModelName) -> String {
    serde_json::to_value(m).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// Writes `acceptance.csv` (one row per model and proposal) and `metrics.json`.
pub fn cmd_proposal_compare(cfg: &RunConfig, out: &Path) -> Result<Vec<experiments::AcceptanceRow>> {
    prepare_out_dir(out, cfg)?;
    let rows = experiments::proposal_compare(cfg)?;
    let mut w = csv::Writer::from_path(out.join("acceptance.csv"))?;
    w.write_record(["model", "kind", "acceptance_ratio"])?;
    for r in &rows {
        w.write_record([model_label(r.model), kind_label(r.kind), r.mean_acceptance_ratio.to_string()])?;
    }
    w.flush()?;
    write_json(&out.join("metrics.json"), &rows)?;
    Ok(rows)
}

/// Writes `trace.csv`: one row per iteration with its phase and acceptance.
pub fn cmd_likelihood_trace(train: &Path, cfg: &RunConfig, out: &Path) -> Result<Vec<f64>> {
    let (ds, _) = load_csv(train, schema(cfg)?)?;
    prepare_out_dir(out, cfg)?;
    let run = experiments::likelihood_trace(cfg, &ds)?;
    let accepted: std::collections::HashSet<usize> = run.accepted_at.iter().copied().collect();
    let burn = run.log_likelihood_trace.len() - 1 - run.samples.len();
    let mut w = csv::Writer::from_path(out.join("trace.csv"))?;
    w.write_record(["iteration", "phase", "log_likelihood", "accepted"])?;
    for (t, &ll) in run.log_likelihood_trace.iter().enumerate() {
        let (phase, acc) = if t == 0 {
            ("init", String::new())
        } else if t <= burn {
            ("burn_in", String::new())
        } else {
            ("sample", u8::from(accepted.contains(&(t - 1 - burn))).to_string())
        };
        w.write_record([t.to_string(), phase.to_string(), ll.to_string(), acc])?;
    }
    w.flush()?;
    write_json(
        &out.join("metrics.json"),
        &serde_json::json!({
            "iterations": run.log_likelihood_trace.len() - 1,
            "burn_in_accepted": run.burn_in_accepted,
            "acceptance_ratio": run.acceptance_ratio(),
        }),
    )?;
    Ok(run.log_likelihood_trace)
}
