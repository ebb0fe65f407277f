//! Run artifacts: results table, summary, config echo and tidy plot data.

use std::path::Path;

use anyhow::{anyhow, bail, Context};
use serde_json::{json, Map, Value};

use crate::config::ExperimentConfig;
use crate::experiments::{Report, Table};

pub const RESULTS: &str = "results.csv";
pub const SUMMARY: &str = "summary.json";
pub const CONFIG_ECHO: &str = "config_echo.json";
pub const PLOT_DATA: &str = "plot_data.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    NumericalAbort,
}

impl Status {
    fn label(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::NumericalAbort => "numerical_abort",
        }
    }
}

fn write_table(path: &Path, table: &Table) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn base_summary(cfg: &ExperimentConfig, status: Status) -> Map<String, Value> {
    let mut s = Map::new();
    s.insert("experiment".into(), json!(cfg.experiment.name()));
    s.insert("seed".into(), json!(cfg.seed));
    s.insert("status".into(), json!(status.label()));
    s.insert("thresholds".into(), json!(cfg.thresholds));
    s.insert("defaults".into(), json!(cfg.defaults.0));
    s
}

fn write_config_echo(dir: &Path, cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let echo = json!({
        "experiment": cfg.experiment.name(),
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "config": cfg.source,
        "defaults": cfg.defaults.0,
    });
    write_json(&dir.join(CONFIG_ECHO), &echo)
}

/// Writes every artifact of a completed run and returns its status.
pub fn write_report(dir: &Path, cfg: &ExperimentConfig, report: &Report) -> anyhow::Result<Status> {
    let status = if report.checks.iter().all(|c| c.pass) { Status::Pass } else { Status::Fail };
    write_table(&dir.join(RESULTS), &report.results)?;
    let mut summary = base_summary(cfg, status);
    let checks: Vec<Value> =
        report.checks.iter().map(|c| json!({ "name": c.name, "value": c.value, "pass": c.pass })).collect();
    summary.insert("checks".into(), Value::Array(checks));
    summary.insert("metrics".into(), json!(report.metrics));
    write_json(&dir.join(SUMMARY), &Value::Object(summary))?;
    write_config_echo(dir, cfg)?;
    emit_plot_data(dir)?;
    Ok(status)
}

/// Records a numerical abort with the failing round when known.
pub fn write_abort(dir: &Path, cfg: &ExperimentConfig, err: &viscosplit::Error) -> anyhow::Result<()> {
    let mut summary = base_summary(cfg, Status::NumericalAbort);
    summary.insert("error".into(), json!(err.to_string()));
    summary.insert("round".into(), json!(err.round()));
    write_json(&dir.join(SUMMARY), &Value::Object(summary))?;
    write_config_echo(dir, cfg)
}

fn read_results(dir: &Path) -> anyhow::Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(dir.join(RESULTS))?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r.records().map(|rec| Ok(rec?.iter().map(str::to_string).collect())).collect::<anyhow::Result<_>>()?;
    Ok((header, rows))
}

fn column(header: &[String], name: &str) -> anyhow::Result<usize> {
    header.iter().position(|h| h == name).ok_or_else(|| anyhow!("results.csv has no column {name}"))
}

fn parse_f64(s: &str) -> anyhow::Result<f64> {
    s.parse().with_context(|| format!("not a number: {s}"))
}

/// Converts `results.csv` into long-format `plot_data.csv` with columns
/// `series,x,y`.
pub fn emit_plot_data(dir: &Path) -> anyhow::Result<()> {
    let (summary_path, results_path) = (dir.join(SUMMARY), dir.join(RESULTS));
    if !summary_path.is_file() || !results_path.is_file() {
        bail!("missing artifacts in {}", dir.display());
    }
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(&summary_path)?)?;
    let experiment = summary["experiment"].as_str().ok_or_else(|| anyhow!("summary.json has no experiment"))?;
    let (header, rows) = read_results(dir)?;
    let col = |name: &str| column(&header, name);
    let mut out: Vec<(String, String, String)> = Vec::new();
    match experiment {
        "converge" | "matrix-trotter" => {
            let (n, e) = (col("n")?, col("error")?);
            for r in &rows {
                out.push((format!("n={}", r[n]), r[n].clone(), r[e].clone()));
            }
        }
        "viscosity-limit" => {
            let (nu, d) = (col("nu")?, col("difference")?);
            let mut pts = rows.iter().map(|r| Ok((parse_f64(&r[nu])?, r))).collect::<anyhow::Result<Vec<_>>>()?;
            pts.sort_by(|a, b| b.0.total_cmp(&a.0));
            for (_, r) in pts {
                out.push(("difference".into(), r[nu].clone(), r[d].clone()));
            }
        }
        "commutator" => {
            let (t, d) = (col("t")?, col("defect")?);
            for r in &rows {
                out.push(("defect".into(), r[t].clone(), r[d].clone()));
            }
        }
        "heat-bound" => {
            let (delta, t, y) = (col("delta")?, col("t")?, col("ratio_over_initial")?);
            for r in &rows {
                out.push((format!("delta={}", r[delta]), r[t].clone(), r[y].clone()));
            }
        }
        "finsler-probe" => {
            let (s, y) = (col("sample")?, col("ratio")?);
            for r in &rows {
                out.push(("ratio".into(), r[s].clone(), r[y].clone()));
            }
        }
        "simulate" => {
            let t = col("time")?;
            for (c, name) in header.iter().enumerate().filter(|(_, h)| *h != "time" && *h != "round") {
                for r in &rows {
                    out.push((name.clone(), r[t].clone(), r[c].clone()));
                }
            }
        }
        other => bail!("unknown experiment {other} in summary.json"),
    }
    let table = Table {
        header: vec!["series".into(), "x".into(), "y".into()],
        rows: out.into_iter().map(|(s, x, y)| vec![s, x, y]).collect(),
    };
    write_table(&dir.join(PLOT_DATA), &table)
}
