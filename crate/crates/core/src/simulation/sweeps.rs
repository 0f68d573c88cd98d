//! Monte Carlo sweeps over covariate noise, sample size and slice count.
//! Each sweep emits one tidy row per trial and configuration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rng::trial_seed;
use super::{population_group_stats, simulate_trial, LatentPopulation, SimScenario};
use crate::bootstrap::{bootstrap_bounds, Analysis, BootstrapConfig};
use crate::bounds::BoundReport;
use crate::data::Stratum;
use crate::diagnostics::{covariate_r2, DiagnosticKind};
use crate::error::{Error, Result};
use crate::slicing::{aggregate_slices, quantile_labels, SliceBoundary, SliceInput, SlicePlan, SlicedResult};

/// Sliced bounds from exact population quantities: unweighted quantiles of
/// covariate `t`, count shares, and per-slice potential-outcome group stats.
/// `secondary` splits each primary slice on another covariate.
pub fn population_sliced_bounds(
    pop: &LatentPopulation,
    t: usize,
    bins: usize,
    secondary: Option<(usize, usize)>,
) -> Result<SlicedResult> {
    let units = &pop.units;
    let keys: Vec<_> = units.iter().map(|u| (u.x[t], 0.0)).collect();
    let primary = quantile_labels(&keys, None, bins)?;
    let mut cells: Vec<Vec<usize>> = Vec::new();
    for k in 0..bins {
        let members: Vec<usize> = (0..units.len()).filter(|&i| primary[i] == k).collect();
        match secondary {
            Some((s, l_bins)) => {
                let keys: Vec<_> = members.iter().map(|&i| (units[i].x[s], 0.0)).collect();
                let inner = quantile_labels(&keys, None, l_bins)?;
                for l in 0..l_bins {
                    cells.push(members.iter().zip(&inner).filter(|(_, &m)| m == l).map(|(&i, _)| i).collect());
                }
            }
            None => cells.push(members),
        }
    }
    let n = units.len() as f64;
    let inputs = cells
        .iter()
        .map(|c| {
            let range = |v: &mut dyn Iterator<Item = f64>| {
                v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)))
            };
            SliceInput {
                n: c.len(),
                share: c.len() as f64 / n,
                boundary: Some(SliceBoundary {
                    primary: range(&mut c.iter().map(|&i| units[i].x[t])),
                    secondary: secondary.map(|(s, _)| range(&mut c.iter().map(|&i| units[i].x[s]))),
                }),
                stats: population_group_stats(c.iter().map(|&i| &units[i])),
            }
        })
        .collect();
    aggregate_slices(inputs)
}

/// Unsliced bounds from exact population quantities.
pub fn population_bounds(pop: &LatentPopulation) -> Result<BoundReport> {
    crate::bounds::bound_report(&crate::estimators::identify(&pop.group_stats()?)?)
}

fn widths(r: &BoundReport) -> (f64, f64) {
    (r.itt_lqc.width(), r.itt_hqc.width())
}

fn run_trials<T: Send>(trials: usize, workers: usize, f: impl Fn(usize) -> T + Sync + Send) -> Result<Vec<T>> {
    let work = || (0..trials).into_par_iter().map(&f).collect::<Vec<_>>();
    if workers > 0 {
        Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?
            .install(work))
    } else {
        Ok(work())
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}

/// Which covariate(s) to slice on in the noise grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateChoice {
    None,
    X1,
    X2,
    X3,
    /// `x1` slices, each split on `x3`.
    X1X3,
}

impl CovariateChoice {
    pub const ALL: [CovariateChoice; 5] = [Self::None, Self::X1, Self::X2, Self::X3, Self::X1X3];

    pub fn label(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::X1 => "x1",
            Self::X2 => "x2",
            Self::X3 => "x3",
            Self::X1X3 => "x1*x3",
        }
    }

    pub fn plan(self, bins: usize, secondary_bins: usize) -> Option<SlicePlan> {
        match self {
            Self::None => None,
            Self::X1 => Some(SlicePlan::new("x1", bins)),
            Self::X2 => Some(SlicePlan::new("x2", bins)),
            Self::X3 => Some(SlicePlan::new("x3", bins)),
            Self::X1X3 => Some(SlicePlan::new("x1", bins).with_secondary("x3", secondary_bins)),
        }
    }

    /// The diagnostic matching the covariate's role.
    fn diagnostic(self) -> Option<(&'static str, DiagnosticKind)> {
        match self {
            Self::X1 => Some(("x1", DiagnosticKind::Principal)),
            Self::X2 => Some(("x2", DiagnosticKind::Compliance)),
            Self::X3 => Some(("x3", DiagnosticKind::Prognostic)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseGridConfig {
    /// Noise variances σ², applied to all three covariates.
    pub variances: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_secondary_bins")]
    pub secondary_bins: usize,
    #[serde(default = "all_choices")]
    pub choices: Vec<CovariateChoice>,
    #[serde(default)]
    pub workers: usize,
}

fn default_bins() -> usize {
    4
}

fn default_secondary_bins() -> usize {
    3
}

fn all_choices() -> Vec<CovariateChoice> {
    CovariateChoice::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseGridRow {
    pub variance: f64,
    pub trial: usize,
    pub seed: u64,
    pub covariate: &'static str,
    pub width_lqc: Option<f64>,
    pub width_hqc: Option<f64>,
    /// Width as a percentage of the unsliced width in the same trial.
    pub pct_lqc: Option<f64>,
    pub pct_hqc: Option<f64>,
    pub r2: Option<f64>,
    pub error: Option<String>,
}

pub fn run_noise_grid(scenario: &SimScenario, cfg: &NoiseGridConfig) -> Result<Vec<NoiseGridRow>> {
    if cfg.variances.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidInput("noise variances must be non-negative".into()));
    }
    let mut rows = Vec::new();
    for &var in &cfg.variances {
        let sd = var.sqrt();
        let sc = scenario.with_noise([sd; 3]);
        let per_trial = run_trials(cfg.trials, cfg.workers, |t| noise_trial(&sc, cfg, var, t))?;
        rows.extend(per_trial.into_iter().flatten());
    }
    Ok(rows)
}

fn noise_trial(sc: &SimScenario, cfg: &NoiseGridConfig, variance: f64, t: usize) -> Vec<NoiseGridRow> {
    let seed = trial_seed(cfg.seed, t as u64);
    let base_row = |choice: CovariateChoice| NoiseGridRow {
        variance,
        trial: t,
        seed,
        covariate: choice.label(),
        width_lqc: None,
        width_hqc: None,
        pct_lqc: None,
        pct_hqc: None,
        r2: None,
        error: None,
    };
    let data = simulate_trial(sc, seed).and_then(|(_, ds)| Analysis::Unsliced.run(&ds).map(|r| (ds, r)));
    let (ds, raw) = match data {
        Ok(v) => v,
        Err(e) => {
            return cfg
                .choices
                .iter()
                .map(|&c| NoiseGridRow { error: Some(e.to_string()), ..base_row(c) })
                .collect()
        }
    };
    let (raw_l, raw_h) = widths(&raw);
    cfg.choices
        .iter()
        .map(|&choice| {
            let mut row = base_row(choice);
            let report = match choice.plan(cfg.bins, cfg.secondary_bins) {
                None => Ok(raw.clone()),
                Some(plan) => Analysis::Sliced(plan).run(&ds),
            };
            match report {
                Ok(r) => {
                    let (l, h) = widths(&r);
                    row.width_lqc = Some(l);
                    row.width_hqc = Some(h);
                    row.pct_lqc = (raw_l > 0.0).then(|| 100.0 * (l / raw_l));
                    row.pct_hqc = (raw_h > 0.0).then(|| 100.0 * (h / raw_h));
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            if let Some((name, kind)) = choice.diagnostic() {
                row.r2 = covariate_r2(&ds, name, kind).ok().map(|d| d.r2);
            }
            row
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseGridSummary {
    pub variance: f64,
    pub covariate: &'static str,
    pub trials: usize,
    pub mean_width_lqc: f64,
    pub mean_width_hqc: f64,
    pub mean_pct_lqc: f64,
    pub mean_pct_hqc: f64,
    pub mean_r2: Option<f64>,
}

/// Means per (variance, covariate) over successful trials.
pub fn summarize_noise_grid(rows: &[NoiseGridRow]) -> Vec<NoiseGridSummary> {
    let mut keys: Vec<(f64, &'static str)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|&(v, c)| v == r.variance && c == r.covariate) {
            keys.push((r.variance, r.covariate));
        }
    }
    keys.into_iter()
        .map(|(v, c)| {
            let ok: Vec<&NoiseGridRow> = rows
                .iter()
                .filter(|r| r.variance == v && r.covariate == c && r.error.is_none())
                .collect();
            let mean = |f: &dyn Fn(&NoiseGridRow) -> Option<f64>| {
                let vals: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            };
            NoiseGridSummary {
                variance: v,
                covariate: c,
                trials: ok.len(),
                mean_width_lqc: mean(&|r| r.width_lqc).unwrap_or(f64::NAN),
                mean_width_hqc: mean(&|r| r.width_hqc).unwrap_or(f64::NAN),
                mean_pct_lqc: mean(&|r| r.pct_lqc).unwrap_or(f64::NAN),
                mean_pct_hqc: mean(&|r| r.pct_hqc).unwrap_or(f64::NAN),
                mean_r2: mean(&|r| r.r2),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSizeRow {
    pub n: usize,
    pub trial: usize,
    pub seed: u64,
    pub width_lqc: Option<f64>,
    pub width_hqc: Option<f64>,
    pub error: Option<String>,
}

/// Unsliced bound widths for each population size.
pub fn run_sample_size_sweep(
    scenario: &SimScenario,
    n_list: &[usize],
    trials: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<SampleSizeRow>> {
    let mut rows = Vec::new();
    for &n in n_list {
        let sc = scenario.with_n(n);
        sc.validate()?;
        rows.extend(run_trials(trials, workers, |t| {
            let s = trial_seed(seed, t as u64);
            let res = simulate_trial(&sc, s).and_then(|(_, ds)| Analysis::Unsliced.run(&ds));
            let (w, error) = match res {
                Ok(r) => (Some(widths(&r)), None),
                Err(e) => (None, Some(e.to_string())),
            };
            SampleSizeRow {
                n,
                trial: t,
                seed: s,
                width_lqc: w.map(|w| w.0),
                width_hqc: w.map(|w| w.1),
                error,
            }
        })?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WidthSummary {
    /// Sweep setting (population size or slice count).
    pub setting: usize,
    pub trials: usize,
    pub failed: usize,
    pub mean_width_lqc: f64,
    pub sd_width_lqc: f64,
    pub mean_width_hqc: f64,
    pub sd_width_hqc: f64,
}

fn width_summary(setting: usize, widths: &[(f64, f64)], failed: usize) -> WidthSummary {
    let (ml, sl) = mean_sd(&widths.iter().map(|w| w.0).collect::<Vec<_>>());
    let (mh, sh) = mean_sd(&widths.iter().map(|w| w.1).collect::<Vec<_>>());
    WidthSummary {
        setting,
        trials: widths.len(),
        failed,
        mean_width_lqc: ml,
        sd_width_lqc: sl,
        mean_width_hqc: mh,
        sd_width_hqc: sh,
    }
}

pub fn summarize_sample_size(rows: &[SampleSizeRow]) -> Vec<WidthSummary> {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let sel: Vec<&SampleSizeRow> = rows.iter().filter(|r| r.n == n).collect();
            let ok: Vec<(f64, f64)> = sel.iter().filter_map(|r| r.width_lqc.zip(r.width_hqc)).collect();
            width_summary(n, &ok, sel.len() - ok.len())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceCountConfig {
    pub bins: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    /// Covariate index to slice on (0 = x1).
    #[serde(default)]
    pub covariate: usize,
    /// When set, each trial also runs a bootstrap.
    #[serde(default)]
    pub bootstrap_replicates: Option<usize>,
    #[serde(default)]
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceCountRow {
    pub bins: usize,
    pub trial: usize,
    pub seed: u64,
    pub width_lqc: Option<f64>,
    pub width_hqc: Option<f64>,
    /// Width of the same slicing computed from exact population quantities.
    pub oracle_width_lqc: Option<f64>,
    pub oracle_width_hqc: Option<f64>,
    pub adjusted_width_lqc: Option<f64>,
    pub adjusted_width_hqc: Option<f64>,
    pub covered_lqc: Option<bool>,
    pub covered_hqc: Option<bool>,
    pub error: Option<String>,
}

pub fn run_slice_count_sweep(scenario: &SimScenario, cfg: &SliceCountConfig) -> Result<Vec<SliceCountRow>> {
    if cfg.covariate > 2 {
        return Err(Error::InvalidInput("covariate index must be 0, 1 or 2".into()));
    }
    let name = super::COVARIATE_NAMES[cfg.covariate];
    let mut rows = Vec::new();
    for &k in &cfg.bins {
        rows.extend(run_trials(cfg.trials, cfg.workers, |t| {
            let seed = trial_seed(cfg.seed, t as u64);
            let mut row = SliceCountRow {
                bins: k,
                trial: t,
                seed,
                width_lqc: None,
                width_hqc: None,
                oracle_width_lqc: None,
                oracle_width_hqc: None,
                adjusted_width_lqc: None,
                adjusted_width_hqc: None,
                covered_lqc: None,
                covered_hqc: None,
                error: None,
            };
            let res = (|| -> Result<()> {
                let (pop, ds) = simulate_trial(scenario, seed)?;
                let analysis = Analysis::Sliced(SlicePlan::new(name, k));
                let est = analysis.run(&ds)?;
                (row.width_lqc, row.width_hqc) = (Some(est.itt_lqc.width()), Some(est.itt_hqc.width()));
                let oracle = population_sliced_bounds(&pop, cfg.covariate, k, None)?.aggregate;
                (row.oracle_width_lqc, row.oracle_width_hqc) =
                    (Some(oracle.itt_lqc.width()), Some(oracle.itt_hqc.width()));
                if let Some(b) = cfg.bootstrap_replicates {
                    let adj = bootstrap_bounds(&ds, &analysis, &BootstrapConfig::new(b, seed))?;
                    let truth = pop.true_itt();
                    row.adjusted_width_lqc = Some(adj.itt_lqc.width());
                    row.adjusted_width_hqc = Some(adj.itt_hqc.width());
                    row.covered_lqc = truth.lqc.map(|v| adj.adjusted(Stratum::Lqc).contains(v));
                    row.covered_hqc = truth.hqc.map(|v| adj.adjusted(Stratum::Hqc).contains(v));
                }
                Ok(())
            })();
            if let Err(e) = res {
                row.error = Some(e.to_string());
            }
            row
        })?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceCountSummary {
    pub widths: WidthSummary,
    pub mean_oracle_width_lqc: f64,
    pub mean_oracle_width_hqc: f64,
    pub mean_adjusted_width_lqc: Option<f64>,
    pub mean_adjusted_width_hqc: Option<f64>,
    pub coverage_lqc: Option<f64>,
    pub coverage_hqc: Option<f64>,
}

pub fn summarize_slice_count(rows: &[SliceCountRow]) -> Vec<SliceCountSummary> {
    let mut ks: Vec<usize> = rows.iter().map(|r| r.bins).collect();
    ks.dedup();
    ks.into_iter()
        .map(|k| {
            let sel: Vec<&SliceCountRow> = rows.iter().filter(|r| r.bins == k).collect();
            let ok: Vec<&SliceCountRow> = sel.iter().copied().filter(|r| r.error.is_none()).collect();
            let est: Vec<(f64, f64)> = ok.iter().filter_map(|r| r.width_lqc.zip(r.width_hqc)).collect();
            let mean_of = |f: &dyn Fn(&SliceCountRow) -> Option<f64>| {
                let v: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            SliceCountSummary {
                widths: width_summary(k, &est, sel.len() - ok.len()),
                mean_oracle_width_lqc: mean_of(&|r| r.oracle_width_lqc).unwrap_or(f64::NAN),
                mean_oracle_width_hqc: mean_of(&|r| r.oracle_width_hqc).unwrap_or(f64::NAN),
                mean_adjusted_width_lqc: mean_of(&|r| r.adjusted_width_lqc),
                mean_adjusted_width_hqc: mean_of(&|r| r.adjusted_width_hqc),
                coverage_lqc: mean_of(&|r| r.covered_lqc.map(|c| f64::from(u8::from(c)))),
                coverage_hqc: mean_of(&|r| r.covered_hqc.map(|c| f64::from(u8::from(c)))),
            }
        })
        .collect()
}

/// Serializes rows as CSV with a header.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}
