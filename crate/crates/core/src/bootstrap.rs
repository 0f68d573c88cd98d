//! Percentile case-resampling bootstrap for the ITT bounds.
//!
//! Each replicate draws N records with replacement and reruns the whole
//! analysis, slicing included. The adjusted interval takes the α-quantile of
//! replicate lower endpoints and the (1−α)-quantile of replicate upper ones.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{bound_report, BoundInterval, BoundReport, TradeoffSegment};
use crate::data::{Dataset, PerStratum, Stratum, UnitRecord};
use crate::error::{Error, Result};
use crate::estimators::{identify, GroupStats};
use crate::simulation::rng::{stream, trial_seed, Purpose};
use crate::simulation::{simulate_trial, SimScenario};
use crate::slicing::{nested_slice_bounds_view, PlanColumns, SlicePlan};

fn default_replicates() -> usize {
    1000
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleUnit {
    #[default]
    Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    #[serde(default = "default_replicates")]
    pub n_replicates: usize,
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub percentile_alpha: f64,
    #[serde(default)]
    pub resample_unit: ResampleUnit,
    /// Worker threads; 0 runs on the current rayon pool.
    #[serde(default)]
    pub workers: usize,
}

impl BootstrapConfig {
    pub fn new(n_replicates: usize, seed: u64) -> Self {
        BootstrapConfig {
            n_replicates,
            seed,
            percentile_alpha: default_alpha(),
            resample_unit: ResampleUnit::Record,
            workers: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_replicates == 0 {
            return Err(Error::InvalidInput("at least one bootstrap replicate is required".into()));
        }
        if !(self.percentile_alpha > 0.0 && self.percentile_alpha < 0.5) {
            return Err(Error::InvalidInput(format!(
                "percentile_alpha must be in (0, 0.5), got {}",
                self.percentile_alpha
            )));
        }
        Ok(())
    }
}

/// What is recomputed on each replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Analysis {
    Unsliced,
    Sliced(SlicePlan),
}

impl Analysis {
    pub fn run(&self, ds: &Dataset) -> Result<BoundReport> {
        let cols = match self {
            Analysis::Unsliced => None,
            Analysis::Sliced(plan) => Some(plan.columns(ds)?),
        };
        self.run_view(&ds.view(), cols)
    }

    fn run_view(&self, records: &[&UnitRecord], cols: Option<PlanColumns>) -> Result<BoundReport> {
        match (self, cols) {
            (Analysis::Sliced(plan), Some(cols)) => Ok(nested_slice_bounds_view(records, cols, plan)?.aggregate),
            _ => bound_report(&identify(&GroupStats::from_records(records.iter().copied())?)?),
        }
    }
}

/// Endpoints from one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicateEndpoints {
    pub itt_lqc: BoundInterval,
    pub itt_hqc: BoundInterval,
    pub mu_lqc1: BoundInterval,
    pub mu_hqc1: BoundInterval,
    pub segment: Option<TradeoffSegment>,
}

impl ReplicateEndpoints {
    fn from_report(r: &BoundReport) -> Self {
        ReplicateEndpoints {
            itt_lqc: r.itt_lqc,
            itt_hqc: r.itt_hqc,
            mu_lqc1: r.mu_lqc1,
            mu_hqc1: r.mu_hqc1,
            segment: r.segment,
        }
    }

    fn clipped(&self) -> bool {
        self.mu_lqc1.is_clipped() || self.mu_hqc1.is_clipped()
    }

    fn itt(&self, g: Stratum) -> &BoundInterval {
        if g == Stratum::Lqc {
            &self.itt_lqc
        } else {
            &self.itt_hqc
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replicate {
    pub index: usize,
    pub endpoints: Option<ReplicateEndpoints>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdjustedInterval {
    pub lo: f64,
    pub hi: f64,
}

impl AdjustedInterval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjustedBounds {
    pub raw: BoundReport,
    pub itt_lqc: AdjustedInterval,
    pub itt_hqc: AdjustedInterval,
    pub n_replicates: usize,
    pub failures: usize,
    pub failure_reasons: BTreeMap<String, usize>,
    /// Share of successful replicates whose mean bounds hit a [0,1] clip.
    pub clip_rate: f64,
    pub alpha: f64,
    #[serde(skip)]
    pub replicates: Vec<Replicate>,
}

impl AdjustedBounds {
    pub fn adjusted(&self, g: Stratum) -> &AdjustedInterval {
        match g {
            Stratum::Lqc => &self.itt_lqc,
            Stratum::Hqc => &self.itt_hqc,
            _ => panic!("{g} is not a complier stratum"),
        }
    }

    /// One JSON object per replicate.
    pub fn replicate_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.replicates {
            let v = serde_json::json!({
                "replicate": r.index,
                "itt_lqc_lo": r.endpoints.map(|e| e.itt_lqc.lo),
                "itt_lqc_hi": r.endpoints.map(|e| e.itt_lqc.hi),
                "itt_hqc_lo": r.endpoints.map(|e| e.itt_hqc.lo),
                "itt_hqc_hi": r.endpoints.map(|e| e.itt_hqc.hi),
                "mu_lqc1_lo": r.endpoints.map(|e| e.mu_lqc1.lo),
                "mu_lqc1_hi": r.endpoints.map(|e| e.mu_lqc1.hi),
                "mu_hqc1_lo": r.endpoints.map(|e| e.mu_hqc1.lo),
                "mu_hqc1_hi": r.endpoints.map(|e| e.mu_hqc1.hi),
                "clipped": r.endpoints.map(|e| e.clipped()),
                "failure": r.failure,
            });
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }

    /// Feasible segments of the first `n` successful replicates.
    pub fn sampled_segments(&self, n: usize) -> Vec<(usize, TradeoffSegment)> {
        self.replicates
            .iter()
            .filter_map(|r| r.endpoints.and_then(|e| e.segment).map(|s| (r.index, s)))
            .take(n)
            .collect()
    }
}

/// Lower-interpolation quantile index on `b` sorted values: `ceil(q·b) − 1`.
pub fn quantile_index(q: f64, b: usize) -> usize {
    let pos = (q * b as f64 - 1e-9).ceil();
    (pos.max(1.0) as usize - 1).min(b - 1)
}

fn run_replicate(
    records: &[UnitRecord],
    analysis: &Analysis,
    cols: Option<PlanColumns>,
    seed: u64,
    r: usize,
) -> Replicate {
    let n = records.len();
    let mut rng = stream(seed, Purpose::Bootstrap, r as u64);
    let sample: Vec<&UnitRecord> = (0..n).map(|_| &records[rng.random_range(0..n)]).collect();
    match analysis.run_view(&sample, cols) {
        Ok(rep) => Replicate {
            index: r,
            endpoints: Some(ReplicateEndpoints::from_report(&rep)),
            failure: None,
        },
        Err(e) => Replicate {
            index: r,
            endpoints: None,
            failure: Some(e.to_string()),
        },
    }
}

pub fn bootstrap_bounds(ds: &Dataset, analysis: &Analysis, cfg: &BootstrapConfig) -> Result<AdjustedBounds> {
    cfg.validate()?;
    let raw = analysis.run(ds)?;
    let cols = match analysis {
        Analysis::Unsliced => None,
        Analysis::Sliced(plan) => Some(plan.columns(ds)?),
    };
    let records = ds.records();
    let work = || -> Vec<Replicate> {
        (0..cfg.n_replicates)
            .into_par_iter()
            .map(|r| run_replicate(records, analysis, cols, cfg.seed, r))
            .collect()
    };
    let replicates = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?
            .install(work)
    } else {
        work()
    };

    let mut failure_reasons = BTreeMap::new();
    for f in replicates.iter().filter_map(|r| r.failure.as_ref()) {
        *failure_reasons.entry(f.clone()).or_insert(0) += 1;
    }
    let ok: Vec<&ReplicateEndpoints> = replicates.iter().filter_map(|r| r.endpoints.as_ref()).collect();
    let failures = replicates.len() - ok.len();
    if 2 * failures > replicates.len() {
        return Err(Error::TooManyFailures {
            failed: failures,
            total: replicates.len(),
        });
    }
    if failures > 0 {
        log::warn!("{failures} of {} bootstrap replicates failed", replicates.len());
    }
    let clip_rate = ok.iter().filter(|e| e.clipped()).count() as f64 / ok.len() as f64;

    let alpha = cfg.percentile_alpha;
    let adjust = |g: Stratum| {
        let mut lo: Vec<f64> = ok.iter().map(|e| e.itt(g).lo).collect();
        let mut hi: Vec<f64> = ok.iter().map(|e| e.itt(g).hi).collect();
        lo.sort_by(f64::total_cmp);
        hi.sort_by(f64::total_cmp);
        AdjustedInterval {
            lo: lo[quantile_index(alpha, lo.len())],
            hi: hi[quantile_index(1.0 - alpha, hi.len())],
        }
    };
    Ok(AdjustedBounds {
        itt_lqc: adjust(Stratum::Lqc),
        itt_hqc: adjust(Stratum::Hqc),
        raw,
        n_replicates: cfg.n_replicates,
        failures,
        failure_reasons,
        clip_rate,
        alpha,
        replicates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverageTrial {
    pub trial: usize,
    pub seed: u64,
    pub true_itt_lqc: f64,
    pub true_itt_hqc: f64,
    pub raw_lqc: BoundInterval,
    pub raw_hqc: BoundInterval,
    pub adjusted_lqc: AdjustedInterval,
    pub adjusted_hqc: AdjustedInterval,
}

impl CoverageTrial {
    pub fn covered(&self, g: Stratum, adjusted: bool) -> bool {
        match (g, adjusted) {
            (Stratum::Lqc, true) => self.adjusted_lqc.contains(self.true_itt_lqc),
            (Stratum::Lqc, false) => self.raw_lqc.contains(self.true_itt_lqc),
            (Stratum::Hqc, true) => self.adjusted_hqc.contains(self.true_itt_hqc),
            (Stratum::Hqc, false) => self.raw_hqc.contains(self.true_itt_hqc),
            _ => panic!("{g} is not a complier stratum"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageSummary {
    pub trials: Vec<CoverageTrial>,
    pub failed_trials: usize,
    pub adjusted: PerStratum<Option<f64>>,
    pub unadjusted: PerStratum<Option<f64>>,
}

/// Simulates `n_trials` datasets and records whether raw and adjusted
/// bounds contain the true complier ITTs. Trial `t` uses the seed derived
/// from `(cfg.seed, t)` for both the data and its replicates.
pub fn coverage_experiment(
    scenario: &SimScenario,
    analysis: &Analysis,
    cfg: &BootstrapConfig,
    n_trials: usize,
) -> Result<CoverageSummary> {
    cfg.validate()?;
    let run = |t: usize| -> Result<CoverageTrial> {
        let seed = trial_seed(cfg.seed, t as u64);
        let (pop, ds) = simulate_trial(scenario, seed)?;
        let truth = pop.true_itt();
        let (Some(tl), Some(th)) = (truth.lqc, truth.hqc) else {
            return Err(Error::Undefined("complier stratum empty in population".into()));
        };
        let inner = BootstrapConfig { seed, workers: 0, ..cfg.clone() };
        let adj = bootstrap_bounds(&ds, analysis, &inner)?;
        Ok(CoverageTrial {
            trial: t,
            seed,
            true_itt_lqc: tl,
            true_itt_hqc: th,
            raw_lqc: adj.raw.itt_lqc,
            raw_hqc: adj.raw.itt_hqc,
            adjusted_lqc: adj.itt_lqc,
            adjusted_hqc: adj.itt_hqc,
        })
    };
    let work = || (0..n_trials).into_par_iter().map(run).collect::<Vec<_>>();
    let results = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?
            .install(work)
    } else {
        work()
    };
    let mut trials = Vec::new();
    let mut failed = 0;
    for r in results {
        match r {
            Ok(t) => trials.push(t),
            Err(e) => {
                log::warn!("coverage trial failed: {e}");
                failed += 1;
            }
        }
    }
    let rate = |g: Stratum, adjusted: bool| {
        (!trials.is_empty())
            .then(|| trials.iter().filter(|t| t.covered(g, adjusted)).count() as f64 / trials.len() as f64)
    };
    let per = |adjusted: bool| PerStratum {
        eat: None,
        lqat: None,
        hqat: None,
        lqc: rate(Stratum::Lqc, adjusted),
        hqc: rate(Stratum::Hqc, adjusted),
    };
    Ok(CoverageSummary {
        adjusted: per(true),
        unadjusted: per(false),
        trials,
        failed_trials: failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Arm, Category};

    #[test]
    fn quantile_index_arithmetic() {
        assert_eq!(quantile_index(0.05, 20), 0);
        assert_eq!(quantile_index(0.95, 20), 18);
        assert_eq!(quantile_index(0.05, 100), 4);
        assert_eq!(quantile_index(0.95, 100), 94);
        assert_eq!(quantile_index(0.05, 1), 0);
        assert_eq!(quantile_index(0.95, 1), 0);
        assert_eq!(quantile_index(0.1, 7), 0);
        assert_eq!(quantile_index(0.9, 7), 6);
    }

    #[test]
    fn config_validation() {
        assert!(BootstrapConfig::new(0, 1).validate().is_err());
        let mut c = BootstrapConfig::new(10, 1);
        c.percentile_alpha = 0.5;
        assert!(c.validate().is_err());
    }

    fn six_group_dataset(copies: usize) -> Dataset {
        let mut recs = Vec::new();
        let groups = [
            (0, Category::E, true),
            (0, Category::Lq, true),
            (0, Category::Lq, false),
            (0, Category::Hq, true),
            (1, Category::E, true),
            (1, Category::E, false),
            (1, Category::E, true),
            (1, Category::Lq, false),
            (1, Category::Hq, true),
        ];
        for c in 0..copies {
            for (i, &(z, s, y)) in groups.iter().enumerate() {
                recs.push(UnitRecord {
                    unit_id: format!("{c}-{i}"),
                    z: Arm::from_z(z).unwrap(),
                    s,
                    y,
                    prob_treat: 0.5,
                    covariates: vec![],
                });
            }
        }
        Dataset::from_records(vec![], recs).unwrap()
    }

    #[test]
    fn identical_records_cannot_span_both_arms() {
        let rec = UnitRecord {
            unit_id: "a".into(),
            z: Arm::Control,
            s: Category::Lq,
            y: true,
            prob_treat: 0.5,
            covariates: vec![],
        };
        let ds = Dataset::from_records(vec![], vec![rec; 5]).unwrap();
        // identical records put everyone in one arm, so nothing is estimable
        let err = bootstrap_bounds(&ds, &Analysis::Unsliced, &BootstrapConfig::new(20, 3)).unwrap_err();
        assert_eq!(err, Error::EmptyArm(Arm::Treatment));
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let ds = six_group_dataset(30);
        let mut a = BootstrapConfig::new(64, 9);
        a.workers = 1;
        let mut b = a.clone();
        b.workers = 4;
        let ra = bootstrap_bounds(&ds, &Analysis::Unsliced, &a).unwrap();
        let rb = bootstrap_bounds(&ds, &Analysis::Unsliced, &b).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(ra.replicates, rb.replicates);
        assert_eq!(ra.replicate_json_lines().lines().count(), 64);
    }

    #[test]
    fn adjusted_envelopes_replicate_medians() {
        let ds = six_group_dataset(40);
        let adj = bootstrap_bounds(&ds, &Analysis::Unsliced, &BootstrapConfig::new(200, 5)).unwrap();
        for g in [Stratum::Lqc, Stratum::Hqc] {
            let mut lo: Vec<f64> = adj.replicates.iter().filter_map(|r| r.endpoints).map(|e| e.itt(g).lo).collect();
            let mut hi: Vec<f64> = adj.replicates.iter().filter_map(|r| r.endpoints).map(|e| e.itt(g).hi).collect();
            lo.sort_by(f64::total_cmp);
            hi.sort_by(f64::total_cmp);
            assert!(adj.adjusted(g).lo <= lo[lo.len() / 2]);
            assert!(adj.adjusted(g).hi >= hi[hi.len() / 2]);
        }
    }
}
