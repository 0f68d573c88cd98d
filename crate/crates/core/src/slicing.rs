//! Covariate slicing: bound each quantile slice separately, then average the
//! slice endpoints with post-stratified complier weights.
//!
//! Within a slice the complier mixture is different, so the per-slice linear
//! constraint is tighter; the weighted average of per-slice extremes is never
//! wider than the pooled extremes at population scale.

use serde::{Deserialize, Serialize};

use crate::bounds::{bound_report, BoundInterval, BoundReport, TradeoffSegment};
use crate::data::{Dataset, PerStratum, Stratum, UnitRecord};
use crate::error::{Error, Result};
use crate::estimators::{identify_control_side, identify_proportions, GroupStats, StrataEstimates};

/// Guards `ceil` against cumulative-sum rounding just above a slice edge.
const EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantileRule {
    /// Quantiles of the weight-normalized covariate distribution.
    #[default]
    Weighted,
    /// Quantiles of the raw records.
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShareRule {
    /// Slice share = slice weight total / overall weight total.
    #[default]
    Weighted,
    /// Slice share = slice record count / record count.
    Count,
}

fn default_bins() -> usize {
    4
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlicePlan {
    pub covariate: String,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub secondary_covariate: Option<String>,
    /// Bins of the secondary covariate within each primary slice.
    #[serde(default = "one")]
    pub secondary_bins: usize,
    #[serde(default)]
    pub tie_breaker: Option<String>,
    #[serde(default)]
    pub quantiles: QuantileRule,
    #[serde(default)]
    pub shares: ShareRule,
}

impl SlicePlan {
    pub fn new(covariate: impl Into<String>, bins: usize) -> Self {
        SlicePlan {
            covariate: covariate.into(),
            bins,
            secondary_covariate: None,
            secondary_bins: 1,
            tie_breaker: None,
            quantiles: QuantileRule::default(),
            shares: ShareRule::default(),
        }
    }

    pub fn with_secondary(mut self, covariate: impl Into<String>, bins: usize) -> Self {
        self.secondary_covariate = Some(covariate.into());
        self.secondary_bins = bins;
        self
    }

    pub fn with_tie_breaker(mut self, covariate: impl Into<String>) -> Self {
        self.tie_breaker = Some(covariate.into());
        self
    }

    pub fn with_rules(mut self, quantiles: QuantileRule, shares: ShareRule) -> Self {
        self.quantiles = quantiles;
        self.shares = shares;
        self
    }

    pub fn n_slices(&self) -> usize {
        self.bins * self.secondary_bins.max(1)
    }

    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::InvalidPlan("bins must be at least 1".into()));
        }
        if self.secondary_covariate.is_some() && self.secondary_bins == 0 {
            return Err(Error::InvalidPlan("secondary bins must be at least 1".into()));
        }
        ds.covariate_index(&self.covariate)?;
        if let Some(s) = &self.secondary_covariate {
            ds.covariate_index(s)?;
        }
        if let Some(t) = &self.tie_breaker {
            ds.covariate_index(t)?;
        }
        Ok(())
    }
}

/// Labels `0..k` by quantile position of `keys`, ordered by `(key.0, key.1)`
/// then input order. With weights, position is the inclusive cumulative
/// normalized weight and the label is `ceil(k·F) − 1` (left-continuous
/// inverse CDF); without, it is `ceil(k(j+1)/n) − 1`.
pub fn quantile_labels(keys: &[(f64, f64)], weights: Option<&[f64]>, k: usize) -> Result<Vec<usize>> {
    let n = keys.len();
    if k == 0 {
        return Err(Error::InvalidPlan("bins must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::NoRecords);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        keys[a]
            .0
            .total_cmp(&keys[b].0)
            .then(keys[a].1.total_cmp(&keys[b].1))
            .then(a.cmp(&b))
    });
    let distinct = 1 + order.windows(2).filter(|w| keys[w[0]] != keys[w[1]]).count();
    if k > distinct {
        return Err(Error::InvalidPlan(format!(
            "{k} bins requested but only {distinct} distinct covariate values"
        )));
    }
    let mut labels = vec![0; n];
    match weights {
        None => {
            for (j, &i) in order.iter().enumerate() {
                labels[i] = (k * (j + 1)).div_ceil(n) - 1;
            }
        }
        Some(w) => {
            if w.len() != n {
                return Err(Error::InvalidInput("weights and keys differ in length".into()));
            }
            let total: f64 = w.iter().sum();
            let mut cum = 0.0;
            for &i in &order {
                cum += w[i];
                let pos = (k as f64 * cum / total - EDGE_EPS).ceil();
                labels[i] = (pos.max(1.0) as usize - 1).min(k - 1);
            }
        }
    }
    Ok(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SliceBoundary {
    /// Range of the primary covariate in the slice.
    pub primary: (f64, f64),
    pub secondary: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceAssignment {
    /// Slice label per record; `None` for records excluded for missing values.
    pub labels: Vec<Option<usize>>,
    pub n_slices: usize,
    pub excluded: usize,
    pub boundaries: Vec<SliceBoundary>,
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Covariate column indices a plan refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanColumns {
    pub primary: usize,
    pub secondary: Option<usize>,
    pub tie_breaker: Option<usize>,
}

impl SlicePlan {
    pub fn columns(&self, ds: &Dataset) -> Result<PlanColumns> {
        self.validate(ds)?;
        let idx = |name: &Option<String>| name.as_deref().map(|n| ds.covariate_index(n)).transpose();
        Ok(PlanColumns {
            primary: ds.covariate_index(&self.covariate)?,
            secondary: idx(&self.secondary_covariate)?,
            tie_breaker: idx(&self.tie_breaker)?,
        })
    }
}

pub fn assign_slices(ds: &Dataset, plan: &SlicePlan) -> Result<SliceAssignment> {
    assign_slices_view(&ds.view(), plan.columns(ds)?, plan)
}

/// [`assign_slices`] over borrowed records with resolved columns.
pub fn assign_slices_view(records: &[&UnitRecord], cols: PlanColumns, plan: &SlicePlan) -> Result<SliceAssignment> {
    let (jp, js, jt) = (cols.primary, cols.secondary, cols.tie_breaker);

    let key = |r: &UnitRecord, j: usize| -> Option<(f64, f64)> {
        let x = r.covariates[j]?;
        let t = match jt {
            Some(t) => r.covariates[t]?,
            None => 0.0,
        };
        Some((x, t))
    };
    let included: Vec<usize> = (0..records.len())
        .filter(|&i| key(records[i], jp).is_some() && js.is_none_or(|s| records[i].covariates[s].is_some()))
        .collect();
    let excluded = records.len() - included.len();
    if excluded > 0 {
        log::warn!("{excluded} records lack a slicing covariate and were excluded");
    }
    if included.is_empty() {
        return Err(Error::NoRecords);
    }

    let weights_of = |idx: &[usize]| -> Option<Vec<f64>> {
        (plan.quantiles == QuantileRule::Weighted).then(|| idx.iter().map(|&i| records[i].weight()).collect())
    };
    let keys: Vec<_> = included.iter().map(|&i| key(records[i], jp).unwrap()).collect();
    let primary = quantile_labels(&keys, weights_of(&included).as_deref(), plan.bins)?;

    let mut labels = vec![None; records.len()];
    let mut boundaries = Vec::new();
    match js {
        None => {
            for (&i, &l) in included.iter().zip(&primary) {
                labels[i] = Some(l);
            }
            for k in 0..plan.bins {
                let members = included.iter().zip(&primary).filter(|(_, &l)| l == k);
                boundaries.push(SliceBoundary {
                    primary: range(members.map(|(&i, _)| records[i].covariates[jp].unwrap())),
                    secondary: None,
                });
            }
        }
        Some(js) => {
            let l_bins = plan.secondary_bins;
            for k in 0..plan.bins {
                let members: Vec<usize> = included
                    .iter()
                    .zip(&primary)
                    .filter(|(_, &l)| l == k)
                    .map(|(&i, _)| i)
                    .collect();
                let keys: Vec<_> = members.iter().map(|&i| key(records[i], js).unwrap()).collect();
                let inner = quantile_labels(&keys, weights_of(&members).as_deref(), l_bins)
                    .map_err(|e| Error::SliceFailed { slice: k, message: e.to_string() })?;
                for (&i, &l) in members.iter().zip(&inner) {
                    labels[i] = Some(k * l_bins + l);
                }
                let prange = range(members.iter().map(|&i| records[i].covariates[jp].unwrap()));
                for l in 0..l_bins {
                    let cell = members.iter().zip(&inner).filter(|(_, &m)| m == l);
                    boundaries.push(SliceBoundary {
                        primary: prange,
                        secondary: Some(range(cell.map(|(&i, _)| records[i].covariates[js].unwrap()))),
                    });
                }
            }
        }
    }
    Ok(SliceAssignment {
        labels,
        n_slices: plan.n_slices(),
        excluded,
        boundaries,
    })
}

/// Inputs for aggregating one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceInput {
    pub n: usize,
    pub share: f64,
    pub boundary: Option<SliceBoundary>,
    pub stats: Result<GroupStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceResult {
    pub index: usize,
    pub n: usize,
    pub share: f64,
    pub boundary: Option<SliceBoundary>,
    pub pi: Option<PerStratum<f64>>,
    pub estimates: Option<StrataEstimates>,
    pub report: Option<BoundReport>,
    /// Aggregation weights `share·π_r^k / π_r`; zero for vacuous slices.
    pub weight_lqc: f64,
    pub weight_hqc: f64,
    /// Why the slice contributes no bounds, if it does not.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlicedResult {
    pub slices: Vec<SliceResult>,
    /// Post-stratified strata proportions `Σ_k share_k π^k`.
    pub pi: PerStratum<f64>,
    pub aggregate: BoundReport,
    pub excluded_records: usize,
    pub warnings: Vec<String>,
}

/// Row of the per-slice table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceRow {
    pub slice: usize,
    pub lo: f64,
    pub hi: f64,
    pub secondary_lo: Option<f64>,
    pub secondary_hi: Option<f64>,
    pub n: usize,
    pub share: f64,
    pub pi_eat: Option<f64>,
    pub pi_lqat: Option<f64>,
    pub pi_hqat: Option<f64>,
    pub pi_lqc: Option<f64>,
    pub pi_hqc: Option<f64>,
    /// `π_hqc/π_lqc`, which is the unclipped LQC bound width.
    pub ratio: Option<f64>,
    pub itt_lqc_lo: Option<f64>,
    pub itt_lqc_hi: Option<f64>,
    pub itt_hqc_lo: Option<f64>,
    pub itt_hqc_hi: Option<f64>,
    pub weight_lqc: f64,
    pub weight_hqc: f64,
}

impl SlicedResult {
    pub fn slice_rows(&self) -> Vec<SliceRow> {
        self.slices
            .iter()
            .map(|s| {
                let b = s.boundary;
                let pi = |f: fn(&PerStratum<f64>) -> f64| s.pi.as_ref().map(f);
                let itt = |g: Stratum| s.report.as_ref().map(|r| *r.itt(g));
                SliceRow {
                    slice: s.index,
                    lo: b.map_or(f64::NAN, |b| b.primary.0),
                    hi: b.map_or(f64::NAN, |b| b.primary.1),
                    secondary_lo: b.and_then(|b| b.secondary.map(|x| x.0)),
                    secondary_hi: b.and_then(|b| b.secondary.map(|x| x.1)),
                    n: s.n,
                    share: s.share,
                    pi_eat: pi(|p| p.eat),
                    pi_lqat: pi(|p| p.lqat),
                    pi_hqat: pi(|p| p.hqat),
                    pi_lqc: pi(|p| p.lqc),
                    pi_hqc: pi(|p| p.hqc),
                    ratio: s.pi.and_then(|p| (p.lqc > 0.0).then(|| p.hqc / p.lqc)),
                    itt_lqc_lo: itt(Stratum::Lqc).map(|i| i.lo),
                    itt_lqc_hi: itt(Stratum::Lqc).map(|i| i.hi),
                    itt_hqc_lo: itt(Stratum::Hqc).map(|i| i.lo),
                    itt_hqc_hi: itt(Stratum::Hqc).map(|i| i.hi),
                    weight_lqc: s.weight_lqc,
                    weight_hqc: s.weight_hqc,
                }
            })
            .collect()
    }
}

fn weighted_interval(parts: &[(f64, &BoundInterval)]) -> BoundInterval {
    let sum = |f: fn(&BoundInterval) -> f64| parts.iter().map(|(w, b)| w * f(b)).sum::<f64>();
    BoundInterval {
        lo: sum(|b| b.lo),
        hi: sum(|b| b.hi),
        raw_lo: sum(|b| b.raw_lo),
        raw_hi: sum(|b| b.raw_hi),
        clipped_lo: parts.iter().any(|(_, b)| b.clipped_lo),
        clipped_hi: parts.iter().any(|(_, b)| b.clipped_hi),
        vacuous: false,
    }
}

/// Combines per-slice statistics into a sliced result. Slices whose group
/// statistics failed, or which have no compliers, carry no bounds; complier
/// weights are normalized over the slices that do.
pub fn aggregate_slices(inputs: Vec<SliceInput>) -> Result<SlicedResult> {
    let mut warnings = Vec::new();
    let mut slices: Vec<SliceResult> = inputs
        .into_iter()
        .enumerate()
        .map(|(index, input)| {
            let mut res = SliceResult {
                index,
                n: input.n,
                share: input.share,
                boundary: input.boundary,
                pi: None,
                estimates: None,
                report: None,
                weight_lqc: 0.0,
                weight_hqc: 0.0,
                failure: None,
            };
            let outcome = input.stats.and_then(|gs| {
                let props = identify_proportions(&gs);
                res.pi = Some(props.pi);
                let est = identify_control_side(&gs, &props)?;
                let report = bound_report(&est)?;
                res.estimates = Some(est);
                res.report = Some(report);
                Ok(())
            });
            if let Err(e) = outcome {
                res.failure = Some(e.to_string());
            }
            res
        })
        .collect();

    let stat_share: f64 = slices.iter().filter(|s| s.pi.is_some()).map(|s| s.share).sum();
    if !(stat_share > 0.0) {
        return Err(Error::Undefined("no slice has estimable group statistics".into()));
    }
    let mut pi = PerStratum::<f64>::default();
    for s in &slices {
        if let Some(p) = &s.pi {
            for r in Stratum::ALL {
                pi[r] += s.share * p[r] / stat_share;
            }
        }
    }
    for s in &slices {
        if let Some(f) = &s.failure {
            let lost = s.pi.map_or(0.0, |p| p.lqc + p.hqc);
            let msg = format!("slice {} contributes no bounds ({f}); complier share {lost:.4} dropped", s.index);
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    if slices.iter().all(|s| s.report.is_none()) {
        return Err(Error::Undefined("no slice yields bounds".into()));
    }

    // Complier share per group over slices with nonvacuous bounds.
    let usable = |s: &SliceResult, g: Stratum| s.report.as_ref().is_some_and(|r| !r.itt(g).vacuous);
    let denom = |g: Stratum| -> f64 {
        slices
            .iter()
            .filter(|s| usable(s, g))
            .map(|s| s.share * s.pi.unwrap()[g])
            .sum()
    };
    let (den_l, den_h) = (denom(Stratum::Lqc), denom(Stratum::Hqc));
    for s in slices.iter_mut() {
        if usable(s, Stratum::Lqc) {
            s.weight_lqc = s.share * s.pi.unwrap().lqc / den_l;
        }
        if usable(s, Stratum::Hqc) {
            s.weight_hqc = s.share * s.pi.unwrap().hqc / den_h;
        }
    }

    let group = |g: Stratum, den: f64| -> (BoundInterval, BoundInterval, Option<f64>) {
        if !(den > 0.0) {
            return (BoundInterval::vacuous(0.0, 1.0), BoundInterval::vacuous(-1.0, 1.0), None);
        }
        let w = |s: &SliceResult| if g == Stratum::Lqc { s.weight_lqc } else { s.weight_hqc };
        let parts: Vec<_> = slices.iter().filter(|s| usable(s, g)).map(|s| (w(s), s.report.as_ref().unwrap())).collect();
        let mean = weighted_interval(&parts.iter().map(|(w, r)| (*w, r.treated_mean(g))).collect::<Vec<_>>());
        let itt = weighted_interval(&parts.iter().map(|(w, r)| (*w, r.itt(g))).collect::<Vec<_>>());
        let mu0 = parts
            .iter()
            .map(|(w, r)| w * if g == Stratum::Lqc { r.mu_lqc_0 } else { r.mu_hqc_0 }.unwrap())
            .sum();
        (mean, itt, Some(mu0))
    };
    let (mu_lqc1, itt_lqc, mu_lqc_0) = group(Stratum::Lqc, den_l);
    let (mu_hqc1, itt_hqc, mu_hqc_0) = group(Stratum::Hqc, den_h);

    let with_reports = || slices.iter().filter_map(|s| s.report.as_ref().map(|r| (s.share, r)));
    let complier_mass: f64 = with_reports().map(|(sh, r)| sh * (r.pi_lqc + r.pi_hqc)).sum();
    let m1 = with_reports().map(|(sh, r)| sh * (r.pi_lqc + r.pi_hqc) * r.m1).sum::<f64>() / complier_mass;

    let segment = match (mu_lqc_0, mu_hqc_0) {
        (Some(l0), Some(h0)) => Some(TradeoffSegment {
            endpoint_a: (itt_lqc.lo, itt_hqc.hi),
            endpoint_b: (itt_lqc.hi, itt_hqc.lo),
            pi_lqc: den_l,
            pi_hqc: den_h,
            m1,
            mu_lqc_0: l0,
            mu_hqc_0: h0,
        }),
        _ => None,
    };
    let mut unstable: Vec<Stratum> = slices
        .iter()
        .filter_map(|s| s.report.as_ref())
        .flat_map(|r| r.unstable.iter().copied())
        .collect();
    unstable.sort();
    unstable.dedup();

    let ratio = |a: f64, b: f64| (b > 0.0).then(|| a / b);
    let aggregate = BoundReport {
        pi_lqc: den_l,
        pi_hqc: den_h,
        m1,
        mu_lqc_0,
        mu_hqc_0,
        mu_lqc1,
        mu_hqc1,
        itt_lqc,
        itt_hqc,
        segment,
        width_ratio: (ratio(den_h, den_l), ratio(den_l, den_h)),
        unstable,
    };
    Ok(SlicedResult {
        slices,
        pi,
        aggregate,
        excluded_records: 0,
        warnings,
    })
}

/// Bounds per slice of an existing assignment, aggregated.
pub fn sliced_bounds(ds: &Dataset, assignment: &SliceAssignment, plan: &SlicePlan) -> Result<SlicedResult> {
    sliced_bounds_view(&ds.view(), assignment, plan)
}

pub fn sliced_bounds_view(records: &[&UnitRecord], assignment: &SliceAssignment, plan: &SlicePlan) -> Result<SlicedResult> {
    let mut members: Vec<Vec<&UnitRecord>> = vec![Vec::new(); assignment.n_slices];
    for (&r, l) in records.iter().zip(&assignment.labels) {
        if let Some(l) = l {
            members[*l].push(r);
        }
    }
    let total_w: f64 = members.iter().flatten().map(|r| r.weight()).sum();
    let total_n: usize = members.iter().map(Vec::len).sum();
    let inputs = members
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let share = match plan.shares {
                ShareRule::Weighted => m.iter().map(|r| r.weight()).sum::<f64>() / total_w,
                ShareRule::Count => m.len() as f64 / total_n as f64,
            };
            let stats = if m.is_empty() {
                Err(Error::SliceFailed { slice: k, message: "empty slice".into() })
            } else {
                GroupStats::from_records(m.iter().copied())
            };
            SliceInput {
                n: m.len(),
                share,
                boundary: assignment.boundaries.get(k).copied(),
                stats,
            }
        })
        .collect();
    let mut res = aggregate_slices(inputs)?;
    res.excluded_records = assignment.excluded;
    Ok(res)
}

/// Slicing on the primary covariate, and within each primary slice on the
/// secondary covariate when the plan names one.
pub fn nested_slice_bounds(ds: &Dataset, plan: &SlicePlan) -> Result<SlicedResult> {
    nested_slice_bounds_view(&ds.view(), plan.columns(ds)?, plan)
}

pub fn nested_slice_bounds_view(records: &[&UnitRecord], cols: PlanColumns, plan: &SlicePlan) -> Result<SlicedResult> {
    let assignment = assign_slices_view(records, cols, plan)?;
    sliced_bounds_view(records, &assignment, plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::BoundReport;
    use crate::data::{Arm, Category};
    use crate::estimators::{estimate_group_stats, identify};

    #[test]
    fn eight_distinct_values_four_bins() {
        let keys: Vec<_> = [5.0, 1.0, 7.0, 3.0, 2.0, 8.0, 4.0, 6.0].iter().map(|&x| (x, 0.0)).collect();
        let l = quantile_labels(&keys, None, 4).unwrap();
        assert_eq!(l, vec![2, 0, 3, 1, 0, 3, 1, 2]);
        let lw = quantile_labels(&keys, Some(&[1.5; 8]), 4).unwrap();
        assert_eq!(l, lw);
    }

    #[test]
    fn unweighted_sizes_within_one() {
        for n in [7usize, 10, 13, 101] {
            for k in 1..=6.min(n) {
                let keys: Vec<_> = (0..n).map(|i| ((i * 37 % n) as f64, 0.0)).collect();
                let l = quantile_labels(&keys, None, k).unwrap();
                let sizes: Vec<usize> = (0..k).map(|b| l.iter().filter(|&&x| x == b).count()).collect();
                let (mn, mx) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
                assert!(mx - mn <= 1, "n={n} k={k} {sizes:?}");
            }
        }
    }

    #[test]
    fn tie_breaker_separates_equal_values() {
        let keys: Vec<_> = (0..6).map(|i| (1.0, (5 - i) as f64)).collect();
        let l = quantile_labels(&keys, None, 3).unwrap();
        assert_eq!(l, vec![2, 2, 1, 1, 0, 0]);
        let flat: Vec<_> = (0..6).map(|_| (1.0, 0.0)).collect();
        assert!(matches!(quantile_labels(&flat, None, 2), Err(Error::InvalidPlan(_))));
    }

    #[test]
    fn weighted_labels_follow_weight_mass() {
        let keys: Vec<_> = (0..4).map(|i| (i as f64, 0.0)).collect();
        // cumulative 0.7, 0.8, 0.9, 1.0 of total weight
        let l = quantile_labels(&keys, Some(&[7.0, 1.0, 1.0, 1.0]), 2).unwrap();
        assert_eq!(l, vec![1, 1, 1, 1]);
        let l = quantile_labels(&keys, Some(&[1.0, 1.0, 1.0, 7.0]), 2).unwrap();
        assert_eq!(l, vec![0, 0, 0, 1]);
    }

    fn toy_dataset() -> Dataset {
        // Two populations that differ in complier mix, indexed by covariate value.
        let mut recs = Vec::new();
        let mut push = |z: u8, s: Category, y: bool, x: f64, copies: usize| {
            for _ in 0..copies {
                recs.push(UnitRecord {
                    unit_id: format!("r{}", recs.len()),
                    z: Arm::from_z(z).unwrap(),
                    s,
                    y,
                    prob_treat: 0.5,
                    covariates: vec![Some(x), Some(recs.len() as f64)],
                });
            }
        };
        use Category::*;
        for (x, lq) in [(0.0, 8usize), (1.0, 2)] {
            let hq = 10 - lq;
            push(0, Lq, true, x, lq);
            push(0, Hq, false, x, hq);
            push(0, E, true, x, 2);
            push(1, E, true, x, 6);
            push(1, E, false, x, 4);
            push(1, Lq, false, x, 1);
            push(1, Hq, true, x, 1);
        }
        Dataset::from_records(vec!["x".into(), "t".into()], recs).unwrap()
    }

    #[test]
    fn single_slice_equals_unsliced() {
        let ds = toy_dataset();
        let plan = SlicePlan::new("x", 1);
        let res = nested_slice_bounds(&ds, &plan).unwrap();
        let raw: BoundReport = bound_report(&identify(&estimate_group_stats(&ds).unwrap()).unwrap()).unwrap();
        let a = &res.aggregate;
        for g in [Stratum::Lqc, Stratum::Hqc] {
            assert!((a.itt(g).lo - raw.itt(g).lo).abs() < 1e-12);
            assert!((a.itt(g).hi - raw.itt(g).hi).abs() < 1e-12);
        }
        assert!((a.m1 - raw.m1).abs() < 1e-12);
    }

    #[test]
    fn weights_sum_to_one_and_constraint_holds() {
        let ds = toy_dataset();
        let plan = SlicePlan::new("x", 2).with_tie_breaker("t");
        let res = nested_slice_bounds(&ds, &plan).unwrap();
        let wl: f64 = res.slices.iter().map(|s| s.weight_lqc).sum();
        let wh: f64 = res.slices.iter().map(|s| s.weight_hqc).sum();
        assert!((wl - 1.0).abs() < 1e-10 && (wh - 1.0).abs() < 1e-10);
        let seg = res.aggregate.segment.unwrap();
        assert!(seg.constraint_residual(seg.endpoint_a).abs() < 1e-12);
        assert!(seg.constraint_residual(seg.endpoint_b).abs() < 1e-12);
        let ps: f64 = res.slices.iter().map(|s| s.share * s.pi.unwrap().lqc).sum();
        assert_eq!(ps, res.pi.lqc);
    }

    #[test]
    fn secondary_single_bin_matches_primary_only() {
        let ds = toy_dataset();
        let a = nested_slice_bounds(&ds, &SlicePlan::new("x", 2).with_tie_breaker("t")).unwrap();
        let b = nested_slice_bounds(&ds, &SlicePlan::new("x", 2).with_tie_breaker("t").with_secondary("t", 1)).unwrap();
        assert_eq!(a.aggregate, b.aggregate);
    }

    #[test]
    fn unknown_covariate_rejected() {
        let ds = toy_dataset();
        assert!(matches!(
            nested_slice_bounds(&ds, &SlicePlan::new("nope", 2)),
            Err(Error::UnknownCovariate(_))
        ));
        assert!(matches!(
            nested_slice_bounds(&ds, &SlicePlan::new("x", 0)),
            Err(Error::InvalidPlan(_))
        ));
    }

    #[test]
    fn missing_covariates_are_excluded() {
        let ds = toy_dataset();
        let mut recs = ds.records().to_vec();
        recs[0].covariates[0] = None;
        let ds = Dataset::from_records(vec!["x".into(), "t".into()], recs).unwrap();
        let res = nested_slice_bounds(&ds, &SlicePlan::new("x", 2).with_tie_breaker("t")).unwrap();
        assert_eq!(res.excluded_records, 1);
        assert_eq!(res.slices.iter().map(|s| s.n).sum::<usize>(), ds.len() - 1);
    }
}
