//! Pretraining simulation: quadratic penalties that stand in for the source
//! objective without source data, plus the curvature estimators behind them.
//!
//! Approximation chain, from most to least faithful:
//! exact Hessian `H(theta*)` -> diagonal empirical Fisher `N F_i` -> one
//! shared coefficient `gamma`. The prior Hessian term is not modelled.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{check_len, Error, Result};
use crate::numkit::{ParamVector, RandomSource};
use crate::tasks::{Task, TaskKind};

/// Coefficient used by the reference experiments.
pub const DEFAULT_GAMMA: f64 = 5000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyKind {
    None,
    Isotropic,
    DiagonalFisher,
}

impl PenaltyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PenaltyKind::None => "none",
            PenaltyKind::Isotropic => "isotropic",
            PenaltyKind::DiagonalFisher => "diagonal-fisher",
        }
    }
}

impl FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PenaltyKind::None),
            "isotropic" => Ok(PenaltyKind::Isotropic),
            "diagonal-fisher" => Ok(PenaltyKind::DiagonalFisher),
            other => Err(Error::invalid(format!("unknown penalty kind '{other}'"))),
        }
    }
}

/// Quadratic penalty anchored at the pretrained parameters `theta*`.
///
/// * isotropic: `0.5 * gamma * sum_i (theta_i - theta*_i)^2`
/// * diagonal-fisher: `0.5 * N * sum_i F_i (theta_i - theta*_i)^2`
///
/// A parameter vector may be longer than `theta*`; the extra trailing
/// coordinates (a new task head) are not penalized.
#[derive(Clone, Debug, PartialEq)]
pub struct PenaltyModel {
    kind: PenaltyKind,
    theta_star: ParamVector,
    gamma: f64,
    fisher_diag: Option<ParamVector>,
    n_obs: u64,
}

impl PenaltyModel {
    pub fn none(theta_star: ParamVector) -> Self {
        PenaltyModel { kind: PenaltyKind::None, theta_star, gamma: 0.0, fisher_diag: None, n_obs: 0 }
    }

    pub fn isotropic(theta_star: ParamVector, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::invalid(format!("gamma must be >= 0, got {gamma}")));
        }
        Ok(PenaltyModel { kind: PenaltyKind::Isotropic, theta_star, gamma, fisher_diag: None, n_obs: 0 })
    }

    pub fn diagonal_fisher(theta_star: ParamVector, fisher_diag: ParamVector, n_obs: u64) -> Result<Self> {
        check_len(theta_star.len(), fisher_diag.len())?;
        if fisher_diag.iter().any(|f| *f < 0.0) {
            return Err(Error::invalid("Fisher diagonal entries must be >= 0"));
        }
        if n_obs == 0 {
            return Err(Error::invalid("observation count must be >= 1"));
        }
        Ok(PenaltyModel {
            kind: PenaltyKind::DiagonalFisher,
            theta_star,
            gamma: 0.0,
            fisher_diag: Some(fisher_diag),
            n_obs,
        })
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    pub fn theta_star(&self) -> &ParamVector {
        &self.theta_star
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn fisher_diag(&self) -> Option<&ParamVector> {
        self.fisher_diag.as_ref()
    }

    pub fn n_obs(&self) -> u64 {
        self.n_obs
    }

    fn check(&self, theta: &ParamVector) -> Result<()> {
        if theta.len() < self.theta_star.len() {
            return Err(Error::Dimension { expected: self.theta_star.len(), found: theta.len() });
        }
        Ok(())
    }

    pub fn loss(&self, theta: &ParamVector) -> Result<f64> {
        penalty_loss(self, theta)
    }

    pub fn grad(&self, theta: &ParamVector) -> Result<ParamVector> {
        penalty_grad(self, theta)
    }

    /// Writes `<stem>.json` plus `<stem>.theta_star.bin` (and
    /// `<stem>.fisher.bin` for the Fisher kind) into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let theta_name = format!("{stem}.theta_star.bin");
        checkpoint::write_params(&dir.join(&theta_name), &self.theta_star)?;
        let fisher_name = match &self.fisher_diag {
            Some(f) => {
                let name = format!("{stem}.fisher.bin");
                checkpoint::write_params(&dir.join(&name), f)?;
                Some(name)
            }
            None => None,
        };
        let file = PenaltyFile {
            kind: self.kind,
            gamma: self.gamma,
            n_obs: self.n_obs,
            fisher_diag: fisher_name,
            theta_star: theta_name,
        };
        let path = dir.join(format!("{stem}.json"));
        fs::write(&path, serde_json::to_string_pretty(&file)?)?;
        Ok(path)
    }

    /// Reads a penalty written by [`save`](Self::save); array paths resolve
    /// relative to the JSON file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file: PenaltyFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let theta_star = checkpoint::read_params(&base.join(&file.theta_star))?;
        match file.kind {
            PenaltyKind::None => Ok(PenaltyModel::none(theta_star)),
            PenaltyKind::Isotropic => PenaltyModel::isotropic(theta_star, file.gamma),
            PenaltyKind::DiagonalFisher => {
                let name = file.fisher_diag.ok_or_else(|| Error::invalid("diagonal-fisher penalty needs fisher_diag"))?;
                let fisher = checkpoint::read_params(&base.join(name))?;
                PenaltyModel::diagonal_fisher(theta_star, fisher, file.n_obs)
            }
        }
    }
}

/// On-disk JSON form of a [`PenaltyModel`].
#[derive(Debug, Serialize, Deserialize)]
struct PenaltyFile {
    kind: PenaltyKind,
    gamma: f64,
    n_obs: u64,
    fisher_diag: Option<String>,
    theta_star: String,
}

pub fn penalty_loss(pen: &PenaltyModel, theta: &ParamVector) -> Result<f64> {
    pen.check(theta)?;
    let disp = theta.iter().zip(pen.theta_star.iter()).map(|(t, s)| t - s);
    Ok(match pen.kind {
        PenaltyKind::None => 0.0,
        PenaltyKind::Isotropic => 0.5 * pen.gamma * disp.map(|d| d * d).sum::<f64>(),
        PenaltyKind::DiagonalFisher => {
            let f = pen.fisher_diag.as_ref().expect("fisher kind carries a diagonal");
            0.5 * pen.n_obs as f64 * disp.zip(f.iter()).map(|(d, f)| f * (d * d)).sum::<f64>()
        }
    })
}

pub fn penalty_grad(pen: &PenaltyModel, theta: &ParamVector) -> Result<ParamVector> {
    pen.check(theta)?;
    let covered = pen.theta_star.len();
    let mut out = vec![0.0; theta.len()];
    match pen.kind {
        PenaltyKind::None => {}
        PenaltyKind::Isotropic => {
            for (i, o) in out.iter_mut().take(covered).enumerate() {
                *o = pen.gamma * (theta[i] - pen.theta_star[i]);
            }
        }
        PenaltyKind::DiagonalFisher => {
            let f = pen.fisher_diag.as_ref().expect("fisher kind carries a diagonal");
            let n = pen.n_obs as f64;
            for (i, o) in out.iter_mut().take(covered).enumerate() {
                *o = n * (f[i] * (theta[i] - pen.theta_star[i]));
            }
        }
    }
    ParamVector::from_computed(out, 0, "penalty gradient")
}

/// Diagonal empirical Fisher at `theta*`: the mean squared per-sample
/// log-likelihood gradient over `n_samples` rows of the task's own data.
///
/// Rows are a random subset without replacement when `n_samples` does not
/// exceed the dataset, otherwise i.i.d. draws with replacement. The sum runs
/// in draw order. Returns the diagonal and the dataset size `N`.
pub fn estimate_diag_fisher(
    task: &Task,
    theta_star: &ParamVector,
    n_samples: usize,
    rng: &mut RandomSource,
) -> Result<(ParamVector, u64)> {
    if task.kind() == TaskKind::Quadratic {
        return Err(Error::UnsupportedTask("quadratic tasks define no likelihood".into()));
    }
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be >= 1"));
    }
    check_len(task.dim(), theta_star.len())?;
    let rows = task.n_samples();
    let picks: Vec<usize> = if n_samples <= rows {
        let mut perm = rng.permutation(rows);
        perm.truncate(n_samples);
        perm
    } else {
        (0..n_samples).map(|_| rng.index(rows)).collect()
    };
    let mut acc = vec![0.0; task.dim()];
    for &i in &picks {
        let g = task.sample_log_likelihood_grad(theta_star, i)?;
        for (a, gi) in acc.iter_mut().zip(&g) {
            *a += gi * gi;
        }
    }
    let inv = 1.0 / n_samples as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok((ParamVector::from_computed(acc, 0, "Fisher diagonal")?, rows as u64))
}

/// Curvature of the source objective at `theta*`.
#[derive(Clone, Debug, PartialEq)]
pub enum HessianSummary {
    /// Row-major `dim x dim` symmetric matrix.
    Full { dim: usize, values: Vec<f64> },
    Diagonal(ParamVector),
}

impl HessianSummary {
    pub fn dim(&self) -> usize {
        match self {
            HessianSummary::Full { dim, .. } => *dim,
            HessianSummary::Diagonal(d) => d.len(),
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        match self {
            HessianSummary::Full { dim, values } => (0..*dim).map(|i| values[i * dim + i]).collect(),
            HessianSummary::Diagonal(d) => d.as_slice().to_vec(),
        }
    }

    /// Second-order term `0.5 (theta - theta*)^T H (theta - theta*)`.
    pub fn quadratic_form(&self, theta: &ParamVector, theta_star: &ParamVector) -> Result<f64> {
        check_len(self.dim(), theta.len())?;
        check_len(self.dim(), theta_star.len())?;
        let d: Vec<f64> = theta.iter().zip(theta_star.iter()).map(|(a, b)| a - b).collect();
        Ok(match self {
            HessianSummary::Full { dim, values } => {
                let mut s = 0.0;
                for i in 0..*dim {
                    let row: f64 = (0..*dim).map(|j| values[i * dim + j] * d[j]).sum();
                    s += d[i] * row;
                }
                0.5 * s
            }
            HessianSummary::Diagonal(h) => 0.5 * d.iter().zip(h.iter()).map(|(d, h)| h * d * d).sum::<f64>(),
        })
    }

    /// Same matrix with its off-diagonal entries dropped.
    pub fn to_diagonal(&self) -> HessianSummary {
        HessianSummary::Diagonal(ParamVector::from_vec_unchecked(self.diagonal()))
    }
}

/// Exact Hessian of a quadratic task (its curvature matrix).
pub fn analytic_hessian_quadratic(task: &Task) -> Result<HessianSummary> {
    match task.curvature() {
        Some(a) => Ok(HessianSummary::Full { dim: task.dim(), values: a.to_vec() }),
        None => Err(Error::UnsupportedTask(format!("{} task has no closed-form Hessian", task.kind()))),
    }
}

/// Least-squares scalar fit to the Hessian diagonal: its mean.
pub fn fit_isotropic_gamma(hess: &HessianSummary) -> f64 {
    let diag = hess.diagonal();
    // offset by the first entry so a constant diagonal is returned exactly
    let base = diag[0];
    base + diag.iter().map(|d| d - base).sum::<f64>() / diag.len() as f64
}
