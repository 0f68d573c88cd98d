//! Weighted group statistics and the point-identified strata parameters.
//!
//! Group proportions and means use the Hájek (self-normalized) estimator with
//! inverse assignment-probability weights. Strata proportions, always-taker
//! means, complier control means and the overall complier means `M0`/`M1`
//! follow from these six groups by mixture algebra.

use serde::Serialize;

use crate::data::{Arm, Category, Dataset, ObservedGroup, PerGroup, PerStratum, Stratum, UnitRecord};
use crate::error::{Error, Result};

/// Complier proportions below this are flagged unstable.
pub const UNSTABLE_PROPORTION: f64 = 1e-6;

/// Self-normalized weighted mean `Σ w v / Σ w`.
pub fn hajek_mean(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.len() != weights.len() {
        return Err(Error::InvalidInput(format!(
            "{} values but {} weights",
            values.len(),
            weights.len()
        )));
    }
    if values.is_empty() {
        return Err(Error::Undefined("weighted mean of an empty sample".into()));
    }
    let (num, den) = values
        .iter()
        .zip(weights)
        .fold((0.0, 0.0), |(n, d), (&v, &w)| (n + w * v, d + w));
    Ok(num / den)
}

/// Horvitz-Thompson mean `Σ w v / N` for a known population size.
pub fn horvitz_thompson_mean(values: &[f64], weights: &[f64], n_population: f64) -> Result<f64> {
    if !(n_population > 0.0) {
        return Err(Error::InvalidInput(format!(
            "population size must be positive, got {n_population}"
        )));
    }
    if values.len() != weights.len() {
        return Err(Error::InvalidInput(format!(
            "{} values but {} weights",
            values.len(),
            weights.len()
        )));
    }
    let total: f64 = values.iter().zip(weights).map(|(v, w)| v * w).sum();
    Ok(total / n_population)
}

/// The six directly identifiable groups: counts, proportions within arm, means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStats {
    pub n: PerGroup<usize>,
    /// Estimate of the share of the population that would land in each group.
    pub p_hat: PerGroup<f64>,
    /// Group mean; `None` for an empty group.
    pub y_hat: PerGroup<Option<f64>>,
}

impl GroupStats {
    /// Group statistics of the binary outcome.
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a UnitRecord>) -> Result<Self> {
        Self::from_values(records, |r| Some(r.outcome())).map(|(gs, _)| gs)
    }

    /// Group statistics of an arbitrary per-record value. Records for which
    /// `value` returns `None` are left out entirely; their count is returned.
    pub fn from_values<'a>(
        records: impl IntoIterator<Item = &'a UnitRecord>,
        value: impl Fn(&UnitRecord) -> Option<f64>,
    ) -> Result<(Self, usize)> {
        let mut n = PerGroup::<usize>::default();
        let mut wsum = PerGroup::<f64>::default();
        let mut wv = PerGroup::<f64>::default();
        let mut excluded = 0;
        for r in records {
            let Some(v) = value(r) else {
                excluded += 1;
                continue;
            };
            let g = r.group();
            let w = r.weight();
            n[g] += 1;
            wsum[g] += w;
            wv[g] += w * v;
        }
        let mut p_hat = PerGroup::<f64>::default();
        for arm in Arm::ALL {
            let total: f64 = Category::ALL
                .iter()
                .map(|&c| wsum[ObservedGroup::new(arm, c)])
                .sum();
            if total <= 0.0 {
                return Err(Error::EmptyArm(arm));
            }
            for c in Category::ALL {
                let g = ObservedGroup::new(arm, c);
                p_hat[g] = wsum[g] / total;
            }
        }
        let y_hat = PerGroup::from_fn(|g| (n[g] > 0).then(|| wv[g] / wsum[g]));
        Ok((GroupStats { n, p_hat, y_hat }, excluded))
    }

    /// Builds statistics from published marginals. Each arm's proportions are
    /// rescaled by their sum so they share one normalizer, as the estimator does.
    pub fn from_marginals(p_hat: PerGroup<f64>, y_hat: PerGroup<Option<f64>>) -> Result<Self> {
        let mut p = p_hat;
        for arm in Arm::ALL {
            let total: f64 = Category::ALL
                .iter()
                .map(|&c| p_hat[ObservedGroup::new(arm, c)])
                .sum();
            if !(total > 0.0) {
                return Err(Error::EmptyArm(arm));
            }
            for c in Category::ALL {
                let g = ObservedGroup::new(arm, c);
                if p_hat[g] < 0.0 {
                    return Err(Error::InvalidInput(format!("negative proportion for {g}")));
                }
                if p_hat[g] > 0.0 && y_hat[g].is_none() {
                    return Err(Error::EmptyGroup(g));
                }
                p[g] = p_hat[g] / total;
            }
        }
        let n = PerGroup::from_fn(|g| usize::from(p[g] > 0.0));
        Ok(GroupStats { n, p_hat: p, y_hat })
    }

    pub fn p(&self, arm: Arm, c: Category) -> f64 {
        self.p_hat[ObservedGroup::new(arm, c)]
    }

    pub fn y(&self, arm: Arm, c: Category) -> Option<f64> {
        self.y_hat[ObservedGroup::new(arm, c)]
    }

    /// `p̂ · Ŷ`, zero for an empty group.
    fn mass(&self, arm: Arm, c: Category) -> f64 {
        let p = self.p(arm, c);
        if p == 0.0 {
            0.0
        } else {
            p * self.y(arm, c).unwrap_or(0.0)
        }
    }
}

pub fn estimate_group_stats(ds: &Dataset) -> Result<GroupStats> {
    GroupStats::from_records(ds.records())
}

/// A quantity pulled back into its admissible range.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Truncation {
    pub quantity: String,
    pub raw: f64,
    pub clipped: f64,
}

fn clip_unit(name: &str, raw: f64, log: &mut Vec<Truncation>) -> f64 {
    let clipped = raw.clamp(0.0, 1.0);
    if clipped != raw {
        log::debug!("clipped {name} from {raw} to {clipped}");
        log.push(Truncation {
            quantity: name.to_string(),
            raw,
            clipped,
        });
    }
    clipped
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrataProportions {
    pub pi: PerStratum<f64>,
    pub truncation_log: Vec<Truncation>,
}

/// Strata shares from group proportions, complier differences truncated to [0,1].
pub fn identify_proportions(gs: &GroupStats) -> StrataProportions {
    use Arm::*;
    use Category::*;
    let mut log = Vec::new();
    let pi = PerStratum {
        eat: gs.p(Control, E),
        lqat: gs.p(Treatment, Lq),
        hqat: gs.p(Treatment, Hq),
        lqc: clip_unit("pi_lqc", gs.p(Control, Lq) - gs.p(Treatment, Lq), &mut log),
        hqc: clip_unit("pi_hqc", gs.p(Control, Hq) - gs.p(Treatment, Hq), &mut log),
    };
    StrataProportions {
        pi,
        truncation_log: log,
    }
}

/// Point-identified strata parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrataEstimates {
    pub pi: PerStratum<f64>,
    pub mu_eat: Option<f64>,
    pub mu_lqat: Option<f64>,
    pub mu_hqat: Option<f64>,
    /// Complier control means; `None` when the complier share is zero.
    pub mu_lqc_0: Option<f64>,
    pub mu_hqc_0: Option<f64>,
    pub m0: Option<f64>,
    pub m1: f64,
    pub truncation_log: Vec<Truncation>,
    /// Complier strata whose share is positive but below [`UNSTABLE_PROPORTION`].
    pub unstable: Vec<Stratum>,
}

impl StrataEstimates {
    pub fn control_mean(&self, s: Stratum) -> Option<f64> {
        match s {
            Stratum::Eat => self.mu_eat,
            Stratum::Lqat => self.mu_lqat,
            Stratum::Hqat => self.mu_hqat,
            Stratum::Lqc => self.mu_lqc_0,
            Stratum::Hqc => self.mu_hqc_0,
        }
    }

    pub fn complier_share(&self) -> f64 {
        self.pi.lqc + self.pi.hqc
    }
}

/// Complier control mean from the `(0,c)` and `(1,c)` groups.
fn complier_control_mean(gs: &GroupStats, c: Category, pi: f64) -> Option<f64> {
    (pi > 0.0).then(|| (gs.mass(Arm::Control, c) - gs.mass(Arm::Treatment, c)) / pi)
}

/// Always-taker means, complier control means, `M0` and `M1`.
pub fn identify_control_side(gs: &GroupStats, props: &StrataProportions) -> Result<StrataEstimates> {
    use Arm::*;
    use Category::*;
    let pi = props.pi;
    let mut log = props.truncation_log.clone();

    let program_gap = gs.p(Treatment, E) - gs.p(Control, E);
    if !(program_gap > 0.0) {
        return Err(Error::NoCompliers);
    }
    let m1_raw = (gs.mass(Treatment, E) - gs.mass(Control, E)) / program_gap;
    let m1 = clip_unit("M1", m1_raw, &mut log);

    let mu_lqc_0 = complier_control_mean(gs, Lq, pi.lqc).map(|v| clip_unit("mu_lqc_0", v, &mut log));
    let mu_hqc_0 = complier_control_mean(gs, Hq, pi.hqc).map(|v| clip_unit("mu_hqc_0", v, &mut log));

    let m0 = match (mu_lqc_0, mu_hqc_0) {
        (Some(l), Some(h)) => Some((pi.lqc * l + pi.hqc * h) / (pi.lqc + pi.hqc)),
        (Some(l), None) => Some(l),
        (None, Some(h)) => Some(h),
        (None, None) => None,
    };

    let unstable = [Stratum::Lqc, Stratum::Hqc]
        .into_iter()
        .filter(|&s| pi[s] > 0.0 && pi[s] < UNSTABLE_PROPORTION)
        .collect::<Vec<_>>();
    if !unstable.is_empty() {
        log::warn!("complier share below {UNSTABLE_PROPORTION}: {unstable:?}");
    }

    Ok(StrataEstimates {
        pi,
        mu_eat: gs.y(Control, E),
        mu_lqat: gs.y(Treatment, Lq),
        mu_hqat: gs.y(Treatment, Hq),
        mu_lqc_0,
        mu_hqc_0,
        m0,
        m1,
        truncation_log: log,
        unstable,
    })
}

/// Proportions then control side in one step.
pub fn identify(gs: &GroupStats) -> Result<StrataEstimates> {
    identify_control_side(gs, &identify_proportions(gs))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovariateMeans {
    pub means: PerStratum<Option<f64>>,
    /// Records dropped for a missing covariate value.
    pub excluded: usize,
}

/// Per-stratum covariate means via the outcome identification algebra, unclipped.
pub fn stratum_covariate_means(ds: &Dataset, covariate: &str) -> Result<CovariateMeans> {
    use Arm::*;
    use Category::*;
    let j = ds.covariate_index(covariate)?;
    let (gs, excluded) = GroupStats::from_values(ds.records(), |r| r.covariates[j])?;
    if excluded > 0 {
        log::info!("{excluded} records lack `{covariate}` and were excluded");
    }
    let pi_lqc = gs.p(Control, Lq) - gs.p(Treatment, Lq);
    let pi_hqc = gs.p(Control, Hq) - gs.p(Treatment, Hq);
    let means = PerStratum {
        eat: gs.y(Control, E),
        lqat: gs.y(Treatment, Lq),
        hqat: gs.y(Treatment, Hq),
        lqc: complier_control_mean(&gs, Lq, pi_lqc),
        hqc: complier_control_mean(&gs, Hq, pi_hqc),
    };
    Ok(CovariateMeans { means, excluded })
}
