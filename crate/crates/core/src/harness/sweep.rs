//! Cartesian sweeps over `(optimizer, init, k, t0, gamma, seed)`.
//!
//! A grid file uses the config syntax with comma-separated lists:
//!
//! ```text
//! k=0.05,0.1,0.2,0.5,1
//! t0=100,250,500,1000
//! gamma=5000
//! seeds=1,2
//! ```
//!
//! `init` and `optimizer` may also be listed. Omitted keys take the single
//! value from the base config.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::config::{parse_assignments, parse_list, ExperimentConfig, InitMode};
use super::report::{fmt_real, median};
use super::run::{build_penalty, prepare_finetune, pretrain_to_dir, run_into_dir, FinetuneSetup, RunRecord};
use crate::error::{Error, Result};
use crate::optim::OptimizerKind;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const BEST_FILE: &str = "best.txt";

pub const SUMMARY_HEADER: &str = "run_id,optimizer,init,k,t0,gamma,seed,status,final_target_loss,best_target_loss,\
steps_to_threshold,final_dist_to_pretrained,final_eval_loss,threshold,config_hash";

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub k: Vec<f64>,
    pub t0: Vec<u64>,
    pub gamma: Vec<f64>,
    pub seeds: Vec<u64>,
    pub init: Vec<InitMode>,
    pub optimizer: Vec<OptimizerKind>,
}

impl Grid {
    /// The single point described by `base`.
    pub fn from_base(base: &ExperimentConfig) -> Self {
        Grid {
            k: vec![base.shifting.k],
            t0: vec![base.shifting.t0],
            gamma: vec![base.penalty.gamma],
            seeds: base.seeds.clone(),
            init: vec![base.finetune.init],
            optimizer: vec![base.finetune.optimizer],
        }
    }

    pub fn parse(text: &str, base: &ExperimentConfig) -> Result<Self> {
        let mut grid = Grid::from_base(base);
        for (line, key, value) in parse_assignments(text)? {
            let at = |e: Error| match e {
                Error::Config(m) | Error::InvalidArgument(m) => Error::config(format!("grid line {line}: {m}")),
                other => other,
            };
            match key.as_str() {
                "k" => grid.k = parse_list(&key, &value).map_err(at)?,
                "t0" => grid.t0 = parse_list(&key, &value).map_err(at)?,
                "gamma" => grid.gamma = parse_list(&key, &value).map_err(at)?,
                "seeds" => grid.seeds = parse_list(&key, &value).map_err(at)?,
                "init" => grid.init = parse_list(&key, &value).map_err(at)?,
                "optimizer" => grid.optimizer = parse_list(&key, &value).map_err(at)?,
                other => return Err(Error::config(format!("grid line {line}: unknown key '{other}'"))),
            }
        }
        Ok(grid)
    }

    pub fn load(path: &Path, base: &ExperimentConfig) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Grid::parse(&text, base)
    }

    pub fn len(&self) -> usize {
        [self.k.len(), self.t0.len(), self.gamma.len(), self.seeds.len(), self.init.len(), self.optimizer.len()]
            .iter()
            .product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every point as a concrete config and seed, de-duplicated by run id
    /// and ordered by it.
    pub fn points(&self, base: &ExperimentConfig) -> Vec<(ExperimentConfig, u64)> {
        let mut out = BTreeMap::new();
        for &optimizer in &self.optimizer {
            for &init in &self.init {
                for &k in &self.k {
                    for &t0 in &self.t0 {
                        for &gamma in &self.gamma {
                            for &seed in &self.seeds {
                                let mut cfg = base.clone();
                                cfg.finetune.optimizer = optimizer;
                                cfg.finetune.init = init;
                                cfg.shifting.k = k;
                                cfg.shifting.t0 = t0;
                                cfg.penalty.gamma = gamma;
                                cfg.seeds = vec![seed];
                                out.insert(super::run::run_id(&cfg, seed), (cfg, seed));
                            }
                        }
                    }
                }
            }
        }
        out.into_values().collect()
    }
}

/// Pretrains once, fine-tunes every grid point (in parallel), and writes
/// `summary.csv` and `best.txt` under `base.output_dir`. Individual run
/// failures are recorded in the summary and do not abort the sweep.
pub fn sweep(base: &ExperimentConfig, grid: &Grid) -> Result<Vec<RunRecord>> {
    base.validate()?;
    if grid.is_empty() {
        return Err(Error::config("sweep grid is empty"));
    }
    let pre = pretrain_to_dir(base)?;
    let shared = prepare_finetune(base, &pre.theta_star)?;
    // penalties differ only in gamma
    let mut setups: BTreeMap<u64, std::result::Result<FinetuneSetup, String>> = BTreeMap::new();
    for &gamma in &grid.gamma {
        let mut cfg = base.clone();
        cfg.penalty.gamma = gamma;
        let setup = build_penalty(&cfg, &shared.pair.source, &pre.theta_star)
            .map(|penalty| FinetuneSetup { penalty, ..shared.clone() })
            .map_err(|e| e.to_string());
        setups.insert(gamma.to_bits(), setup);
    }

    let points = grid.points(base);
    let records: Vec<RunRecord> = points
        .par_iter()
        .map(|(cfg, seed)| -> Result<RunRecord> {
            if let Err(e) = cfg.validate() {
                return Ok(failed_record(cfg, *seed, &e.to_string()));
            }
            let setup = match &setups[&cfg.penalty.gamma.to_bits()] {
                Ok(setup) => setup,
                Err(why) => return Ok(failed_record(cfg, *seed, why)),
            };
            Ok(run_into_dir(cfg, setup, *seed)?.1)
        })
        .collect::<Result<_>>()?;

    fs::write(base.output_dir.join(SUMMARY_FILE), summary_csv(&records))?;
    if let Some(line) = best_line(&records) {
        println!("{line}");
        fs::write(base.output_dir.join(BEST_FILE), line + "\n")?;
    }
    Ok(records)
}

fn failed_record(cfg: &ExperimentConfig, seed: u64, why: &str) -> RunRecord {
    let mut r = RunRecord::new(cfg, seed);
    r.status = "failed".into();
    r.error = Some(why.to_string());
    r
}

pub fn summary_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{},{},{},{},{},{},{}", r.run_id, r.optimizer, r.init, r.k, r.t0, r.gamma, r.seed, r.status);
        match &r.summary {
            Some(s) => {
                let _ = write!(
                    out,
                    ",{},{},{},{},{},{},{}",
                    fmt_real(s.final_target_loss),
                    fmt_real(s.best_target_loss),
                    s.steps_to_threshold.map(|v| v.to_string()).unwrap_or_default(),
                    fmt_real(s.final_dist_to_pretrained),
                    fmt_real(s.final_eval_loss),
                    s.threshold.map(fmt_real).unwrap_or_default(),
                    s.config_hash
                );
            }
            None => out.push_str(",,,,,,,"),
        }
        out.push('\n');
    }
    out
}

/// Configuration with the lowest median final target loss over its seeds.
pub fn best_line(records: &[RunRecord]) -> Option<String> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        if let Some(s) = &r.summary {
            groups.entry(r.config_label()).or_default().push(s.final_target_loss);
        }
    }
    let (label, med) = groups
        .into_iter()
        .map(|(label, v)| (label, median(&v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    Some(format!("best: {label} median_final_target_loss={}", fmt_real(med)))
}

/// Distinct labels in `records`, for quick grid sanity checks.
pub fn config_labels(records: &[RunRecord]) -> BTreeSet<String> {
    records.iter().map(RunRecord::config_label).collect()
}
