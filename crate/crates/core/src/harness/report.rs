//! Aggregate tables over the runs of an output directory.
//!
//! `report` reads `runs/<run_id>/{trace.csv,run.json}` and writes into
//! `<dir>/report/`:
//!
//! * `curves.csv`: per configuration, the median over seeds of target loss
//!   and distance to `theta*` at each step;
//! * `summary_table.csv`: per configuration, median and max of every summary metric;
//! * `init_comparison.csv`: per metric and optimizer, one row per init mode,
//!   written only for optimizers that were run with both modes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::run::{RunRecord, RunSummary, RUN_FILE, TRACE_FILE};
use super::trace::TrainingTrace;
use crate::error::{Error, Result};

pub const REPORT_DIR: &str = "report";
pub const CURVES_FILE: &str = "curves.csv";
pub const SUMMARY_TABLE_FILE: &str = "summary_table.csv";
pub const INIT_COMPARISON_FILE: &str = "init_comparison.csv";

/// 17 significant digits, the trace format.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Middle value of the sorted sample; the mean of the two middle values for
/// even counts. Panics on an empty slice.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn max(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// One run directory as loaded from disk.
#[derive(Clone, Debug)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub record: Option<RunRecord>,
    pub trace: TrainingTrace,
}

impl LoadedRun {
    fn label(&self) -> String {
        match &self.record {
            Some(r) => r.config_label(),
            None => self.dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        }
    }

    fn summary(&self) -> Option<&RunSummary> {
        self.record.as_ref()?.summary.as_ref()
    }
}

/// Run directories under `dir/runs`, or `dir` itself when it holds a trace.
pub fn load_runs(dir: &Path) -> Result<Vec<LoadedRun>> {
    let mut dirs = Vec::new();
    if dir.join(TRACE_FILE).is_file() {
        dirs.push(dir.to_path_buf());
    }
    let runs = dir.join("runs");
    if runs.is_dir() {
        for entry in fs::read_dir(&runs)? {
            let path = entry?.path();
            if path.join(TRACE_FILE).is_file() {
                dirs.push(path);
            }
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::NoData(format!("no traces under {}", dir.display())));
    }
    dirs.into_iter()
        .map(|d| {
            let trace = TrainingTrace::read_csv(&d.join(TRACE_FILE))?;
            let meta = d.join(RUN_FILE);
            let record = if meta.is_file() { Some(serde_json::from_str(&fs::read_to_string(&meta)?)?) } else { None };
            Ok(LoadedRun { dir: d, record, trace })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub curves: PathBuf,
    pub summary_table: PathBuf,
    pub init_comparison: Option<PathBuf>,
    pub n_runs: usize,
}

pub fn report(dir: &Path) -> Result<ReportFiles> {
    let runs = load_runs(dir)?;
    let out = dir.join(REPORT_DIR);
    fs::create_dir_all(&out)?;
    let files = ReportFiles {
        curves: out.join(CURVES_FILE),
        summary_table: out.join(SUMMARY_TABLE_FILE),
        init_comparison: init_comparison_csv(&runs).map(|_| out.join(INIT_COMPARISON_FILE)),
        n_runs: runs.len(),
    };
    fs::write(&files.curves, curves_csv(&runs))?;
    fs::write(&files.summary_table, summary_table_csv(&runs))?;
    if let (Some(path), Some(text)) = (&files.init_comparison, init_comparison_csv(&runs)) {
        fs::write(path, text)?;
    }
    Ok(files)
}

fn by_label(runs: &[LoadedRun]) -> BTreeMap<String, Vec<&LoadedRun>> {
    let mut groups: BTreeMap<String, Vec<&LoadedRun>> = BTreeMap::new();
    for r in runs {
        groups.entry(r.label()).or_default().push(r);
    }
    groups
}

pub fn curves_csv(runs: &[LoadedRun]) -> String {
    let mut out = String::from("config,k,step,n_runs,median_target_loss,median_dist_to_pretrained\n");
    for (label, group) in by_label(runs) {
        let k = group[0].record.as_ref().map(|r| r.k.to_string()).unwrap_or_default();
        let mut steps: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for run in &group {
            for row in &run.trace.rows {
                let e = steps.entry(row.step).or_default();
                e.0.push(row.target_loss);
                e.1.push(row.dist_to_pretrained);
            }
        }
        for (step, (loss, dist)) in steps {
            let _ = writeln!(
                out,
                "{label},{k},{step},{},{},{}",
                loss.len(),
                fmt_real(median(&loss)),
                fmt_real(median(&dist))
            );
        }
    }
    out
}

type Metric = (&'static str, fn(&RunSummary) -> f64);

const METRICS: [Metric; 5] = [
    ("final_target_loss", |s| s.final_target_loss),
    ("best_target_loss", |s| s.best_target_loss),
    ("final_eval_loss", |s| s.final_eval_loss),
    ("final_dist_to_pretrained", |s| s.final_dist_to_pretrained),
    // never reaching the threshold sorts last
    ("steps_to_threshold", |s| s.steps_to_threshold.map_or(f64::INFINITY, |v| v as f64)),
];

fn fmt_metric(x: f64) -> String {
    if x.is_finite() {
        fmt_real(x)
    } else {
        String::new()
    }
}

pub fn summary_table_csv(runs: &[LoadedRun]) -> String {
    let mut out = String::from("config,optimizer,init,k,t0,gamma,n_runs,n_failed");
    for (name, _) in METRICS {
        let _ = write!(out, ",median_{name},max_{name}");
    }
    out.push('\n');
    for (label, group) in by_label(runs) {
        let ok: Vec<&RunSummary> = group.iter().filter_map(|r| r.summary()).collect();
        let meta = match &group[0].record {
            Some(r) => format!("{},{},{},{},{}", r.optimizer, r.init, r.k, r.t0, r.gamma),
            None => ",,,,".to_string(),
        };
        let _ = write!(out, "{label},{meta},{},{}", group.len(), group.len() - ok.len());
        for (_, get) in METRICS {
            if ok.is_empty() {
                out.push_str(",,");
            } else {
                let v: Vec<f64> = ok.iter().map(|s| get(s)).collect();
                let _ = write!(out, ",{},{}", fmt_metric(median(&v)), fmt_metric(max(&v)));
            }
        }
        out.push('\n');
    }
    out
}

/// `None` unless some optimizer was run with both init modes.
pub fn init_comparison_csv(runs: &[LoadedRun]) -> Option<String> {
    let mut cells: BTreeMap<(String, String), Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        if let (Some(rec), Some(s)) = (&r.record, r.summary()) {
            cells.entry((rec.optimizer.to_string(), rec.init.clone())).or_default().push(s);
        }
    }
    let both: Vec<String> = cells
        .keys()
        .map(|(opt, _)| opt.clone())
        .filter(|opt| ["random", "pretrained"].iter().all(|i| cells.contains_key(&(opt.clone(), i.to_string()))))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if both.is_empty() {
        return None;
    }
    let mut out = String::from("metric,optimizer,init,n_runs,median,max,median_minus_pretrained\n");
    for (name, get) in METRICS {
        for opt in &both {
            let med = |init: &str| {
                let v: Vec<f64> = cells[&(opt.clone(), init.to_string())].iter().map(|s| get(s)).collect();
                (median(&v), max(&v), v.len())
            };
            let (pi_med, _, _) = med("pretrained");
            for init in ["pretrained", "random"] {
                let (m, x, n) = med(init);
                let _ = writeln!(out, "{name},{opt},{init},{n},{},{},{}", fmt_metric(m), fmt_metric(x), fmt_metric(m - pi_med));
            }
        }
    }
    Some(out)
}
