//! Sharp bounds on the complier treated means and complier ITT effects.
//!
//! Only the pooled complier treated mean `M1` is identified. Any split of it
//! between the two complier groups with means in `[0,1]` is consistent with the
//! data, so the feasible `(μ_lqc(1), μ_hqc(1))` pairs form a line segment.

use serde::Serialize;

use crate::data::Stratum;
use crate::error::{Error, Result};
use crate::estimators::StrataEstimates;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundInterval {
    pub lo: f64,
    pub hi: f64,
    /// Endpoints before truncation to the admissible range.
    pub raw_lo: f64,
    pub raw_hi: f64,
    pub clipped_lo: bool,
    pub clipped_hi: bool,
    /// No information: the complier group is empty.
    pub vacuous: bool,
}

impl BoundInterval {
    pub fn point(v: f64) -> Self {
        Self::from_raw(v, v, f64::NEG_INFINITY, f64::INFINITY)
    }

    /// Full admissible range `[min, max]`, flagged vacuous.
    pub fn vacuous(min: f64, max: f64) -> Self {
        BoundInterval {
            lo: min,
            hi: max,
            raw_lo: min,
            raw_hi: max,
            clipped_lo: false,
            clipped_hi: false,
            vacuous: true,
        }
    }

    fn from_raw(raw_lo: f64, raw_hi: f64, min: f64, max: f64) -> Self {
        let lo = raw_lo.max(min);
        let hi = raw_hi.min(max);
        BoundInterval {
            lo,
            hi,
            raw_lo,
            raw_hi,
            clipped_lo: lo != raw_lo,
            clipped_hi: hi != raw_hi,
            vacuous: false,
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn is_clipped(&self) -> bool {
        self.clipped_lo || self.clipped_hi
    }

    /// Same interval shifted down by `c`, keeping flags.
    fn shifted(&self, c: f64) -> Self {
        BoundInterval {
            lo: self.lo - c,
            hi: self.hi - c,
            raw_lo: self.raw_lo - c,
            raw_hi: self.raw_hi - c,
            ..*self
        }
    }
}

/// Bounds on `μ_lqc(1)` and `μ_hqc(1)`.
pub fn complier_mean_bounds(pi_lqc: f64, pi_hqc: f64, m1: f64) -> Result<(BoundInterval, BoundInterval)> {
    if !(pi_lqc >= 0.0 && pi_hqc >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "complier proportions must be non-negative, got ({pi_lqc}, {pi_hqc})"
        )));
    }
    if pi_lqc + pi_hqc <= 0.0 {
        return Err(Error::NoCompliers);
    }
    if !(0.0..=1.0).contains(&m1) {
        return Err(Error::InvalidInput(format!("M1 must lie in [0,1], got {m1}")));
    }
    if pi_lqc == 0.0 {
        return Ok((BoundInterval::vacuous(0.0, 1.0), BoundInterval::point(m1)));
    }
    if pi_hqc == 0.0 {
        return Ok((BoundInterval::point(m1), BoundInterval::vacuous(0.0, 1.0)));
    }
    let total = (pi_lqc + pi_hqc) * m1;
    let one = |own: f64, other: f64| {
        BoundInterval::from_raw((total - other) / own, total / own, 0.0, 1.0)
    };
    Ok((one(pi_lqc, pi_hqc), one(pi_hqc, pi_lqc)))
}

/// ITT bound for one group: mean bound less its control mean.
fn itt_one(mean: &BoundInterval, mu0: Option<f64>, which: Stratum) -> Result<BoundInterval> {
    if mean.vacuous {
        return Ok(BoundInterval::vacuous(-1.0, 1.0));
    }
    let c = mu0.ok_or_else(|| Error::Undefined(format!("{which} control mean")))?;
    Ok(mean.shifted(c))
}

pub fn itt_bounds(
    mean_bounds: (BoundInterval, BoundInterval),
    mu_lqc_0: Option<f64>,
    mu_hqc_0: Option<f64>,
) -> Result<(BoundInterval, BoundInterval)> {
    Ok((
        itt_one(&mean_bounds.0, mu_lqc_0, Stratum::Lqc)?,
        itt_one(&mean_bounds.1, mu_hqc_0, Stratum::Hqc)?,
    ))
}

/// Feasible ITT pairs: the segment between two extremal allocations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TradeoffSegment {
    /// `(ITT_lqc low, ITT_hqc high)`.
    pub endpoint_a: (f64, f64),
    /// `(ITT_lqc high, ITT_hqc low)`.
    pub endpoint_b: (f64, f64),
    pub pi_lqc: f64,
    pub pi_hqc: f64,
    pub m1: f64,
    pub mu_lqc_0: f64,
    pub mu_hqc_0: f64,
}

impl TradeoffSegment {
    /// Point at `t ∈ [0,1]` from `endpoint_a` to `endpoint_b`.
    pub fn at(&self, t: f64) -> (f64, f64) {
        let (a, b) = (self.endpoint_a, self.endpoint_b);
        (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
    }

    /// `π_lqc μ_lqc(1) + π_hqc μ_hqc(1) − (π_lqc + π_hqc) M1` at an ITT pair.
    pub fn constraint_residual(&self, itt: (f64, f64)) -> f64 {
        self.pi_lqc * (itt.0 + self.mu_lqc_0) + self.pi_hqc * (itt.1 + self.mu_hqc_0)
            - (self.pi_lqc + self.pi_hqc) * self.m1
    }
}

pub fn tradeoff_segment(
    pi_lqc: f64,
    pi_hqc: f64,
    m1: f64,
    mu_lqc_0: f64,
    mu_hqc_0: f64,
) -> Result<TradeoffSegment> {
    if !(pi_lqc > 0.0 && pi_hqc > 0.0) {
        return Err(Error::InvalidInput(
            "trade-off segment needs both complier proportions positive".into(),
        ));
    }
    let (l, h) = complier_mean_bounds(pi_lqc, pi_hqc, m1)?;
    Ok(TradeoffSegment {
        endpoint_a: (l.lo - mu_lqc_0, h.hi - mu_hqc_0),
        endpoint_b: (l.hi - mu_lqc_0, h.lo - mu_hqc_0),
        pi_lqc,
        pi_hqc,
        m1,
        mu_lqc_0,
        mu_hqc_0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub pi_lqc: f64,
    pub pi_hqc: f64,
    pub m1: f64,
    pub mu_lqc_0: Option<f64>,
    pub mu_hqc_0: Option<f64>,
    pub mu_lqc1: BoundInterval,
    pub mu_hqc1: BoundInterval,
    pub itt_lqc: BoundInterval,
    pub itt_hqc: BoundInterval,
    /// Absent when either complier group is empty.
    pub segment: Option<TradeoffSegment>,
    /// `π_hqc/π_lqc` (the LQC width before clipping) and its reciprocal.
    pub width_ratio: (Option<f64>, Option<f64>),
    pub unstable: Vec<Stratum>,
}

/// One printable row per complier group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub group: Stratum,
    pub control_mean: Option<f64>,
    pub treated_lo: f64,
    pub treated_hi: f64,
    pub itt_lo: f64,
    pub itt_hi: f64,
    pub width: f64,
    /// Width as a percentage of a reference (usually unsliced) width.
    pub pct_of_reference: Option<f64>,
    pub vacuous: bool,
    pub clipped: bool,
}

impl BoundReport {
    pub fn from_parts(
        pi_lqc: f64,
        pi_hqc: f64,
        m1: f64,
        mu_lqc_0: Option<f64>,
        mu_hqc_0: Option<f64>,
    ) -> Result<Self> {
        let means = complier_mean_bounds(pi_lqc, pi_hqc, m1)?;
        let (itt_lqc, itt_hqc) = itt_bounds(means, mu_lqc_0, mu_hqc_0)?;
        let segment = match (mu_lqc_0, mu_hqc_0) {
            (Some(l0), Some(h0)) if pi_lqc > 0.0 && pi_hqc > 0.0 => {
                Some(tradeoff_segment(pi_lqc, pi_hqc, m1, l0, h0)?)
            }
            _ => None,
        };
        let ratio = |a: f64, b: f64| (b > 0.0).then(|| a / b);
        Ok(BoundReport {
            pi_lqc,
            pi_hqc,
            m1,
            mu_lqc_0,
            mu_hqc_0,
            mu_lqc1: means.0,
            mu_hqc1: means.1,
            itt_lqc,
            itt_hqc,
            segment,
            width_ratio: (ratio(pi_hqc, pi_lqc), ratio(pi_lqc, pi_hqc)),
            unstable: Vec::new(),
        })
    }

    pub fn itt(&self, s: Stratum) -> &BoundInterval {
        match s {
            Stratum::Lqc => &self.itt_lqc,
            Stratum::Hqc => &self.itt_hqc,
            _ => panic!("{s} is not a complier stratum"),
        }
    }

    pub fn treated_mean(&self, s: Stratum) -> &BoundInterval {
        match s {
            Stratum::Lqc => &self.mu_lqc1,
            Stratum::Hqc => &self.mu_hqc1,
            _ => panic!("{s} is not a complier stratum"),
        }
    }

    pub fn rows(&self, reference: Option<&BoundReport>) -> Vec<BoundRow> {
        [Stratum::Lqc, Stratum::Hqc]
            .into_iter()
            .map(|s| {
                let mean = self.treated_mean(s);
                let itt = self.itt(s);
                let pct = reference.and_then(|r| {
                    let w = r.itt(s).width();
                    (w > 0.0).then(|| 100.0 * itt.width() / w)
                });
                BoundRow {
                    group: s,
                    control_mean: if s == Stratum::Lqc { self.mu_lqc_0 } else { self.mu_hqc_0 },
                    treated_lo: mean.lo,
                    treated_hi: mean.hi,
                    itt_lo: itt.lo,
                    itt_hi: itt.hi,
                    width: itt.width(),
                    pct_of_reference: pct,
                    vacuous: itt.vacuous,
                    clipped: mean.is_clipped(),
                }
            })
            .collect()
    }
}

pub fn bound_report(est: &StrataEstimates) -> Result<BoundReport> {
    let mut r = BoundReport::from_parts(est.pi.lqc, est.pi.hqc, est.m1, est.mu_lqc_0, est.mu_hqc_0)?;
    r.unstable = est.unstable.clone();
    Ok(r)
}

/// A unit with known stratum and treated outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledUnit {
    pub stratum: Stratum,
    pub y1: f64,
}

/// Extremal complier treated means by direct allocation: sort the pooled
/// complier outcomes and fill one group from the top (or bottom).
pub fn sharp_bound_oracle(units: &[LabeledUnit]) -> Result<(BoundInterval, BoundInterval)> {
    let mut pooled: Vec<f64> = units
        .iter()
        .filter(|u| u.stratum.is_complier())
        .map(|u| u.y1)
        .collect();
    if pooled.is_empty() {
        return Err(Error::NoCompliers);
    }
    pooled.sort_by(|a, b| b.total_cmp(a));
    let n_l = units.iter().filter(|u| u.stratum == Stratum::Lqc).count();
    let n_h = pooled.len() - n_l;
    let extremes = |k: usize| {
        if k == 0 {
            return BoundInterval::vacuous(0.0, 1.0);
        }
        let hi = pooled[..k].iter().sum::<f64>() / k as f64;
        let lo = pooled[pooled.len() - k..].iter().sum::<f64>() / k as f64;
        BoundInterval::from_raw(lo, hi, f64::NEG_INFINITY, f64::INFINITY)
    };
    Ok((extremes(n_l), extremes(n_h)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn echs_shaped_mean_bounds() {
        let (l, h) = complier_mean_bounds(0.72, 0.11, 0.95).unwrap();
        assert!(close(l.lo, 0.94, 0.01) && close(l.hi, 1.0, 0.01), "{l:?}");
        // The hqc lower end amplifies M1 rounding by (π_lqc+π_hqc)/π_hqc ≈ 7.5.
        assert!(close(h.lo, (0.83 * 0.95 - 0.72) / 0.11, 1e-12) && h.hi == 1.0, "{h:?}");
        assert!(l.clipped_hi && h.clipped_hi);
        assert!(!l.clipped_lo && !h.clipped_lo);
    }

    #[test]
    fn zero_hqc_share_pins_lqc() {
        let (l, h) = complier_mean_bounds(0.3, 0.0, 0.42).unwrap();
        assert_eq!((l.lo, l.hi), (0.42, 0.42));
        assert!(h.vacuous && h.lo == 0.0 && h.hi == 1.0);
        let (li, hi) = itt_bounds((l, h), Some(0.4), None).unwrap();
        assert!(close(li.lo, 0.02, 1e-15));
        assert!(hi.vacuous && hi.lo == -1.0 && hi.hi == 1.0);
    }

    #[test]
    fn m1_one_forces_both_to_one() {
        let (l, h) = complier_mean_bounds(0.4, 0.6, 1.0).unwrap();
        assert_eq!((l.lo, l.hi, h.lo, h.hi), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn no_compliers_is_an_error() {
        assert_eq!(complier_mean_bounds(0.0, 0.0, 0.5), Err(Error::NoCompliers));
    }

    #[test]
    fn point_bound_shift() {
        let (l, h) = itt_bounds((BoundInterval::point(0.7), BoundInterval::point(0.7)), Some(0.2), Some(0.9)).unwrap();
        assert!(close(l.lo, 0.5, 1e-15) && close(l.hi, 0.5, 1e-15));
        assert!(close(h.lo, -0.2, 1e-15) && close(h.hi, -0.2, 1e-15));
    }

    #[test]
    fn undefined_control_mean_propagates() {
        let m = complier_mean_bounds(0.4, 0.2, 0.5).unwrap();
        assert!(matches!(itt_bounds(m, None, Some(0.1)), Err(Error::Undefined(_))));
    }

    #[test]
    fn symmetric_segment() {
        let seg = tradeoff_segment(0.3, 0.3, 0.5, 0.5, 0.5).unwrap();
        assert!(close(seg.endpoint_a.0, -0.5, 1e-15) && close(seg.endpoint_a.1, 0.5, 1e-15));
        assert!(close(seg.endpoint_b.0, 0.5, 1e-15) && close(seg.endpoint_b.1, -0.5, 1e-15));
        assert!(seg.constraint_residual(seg.at(0.5)).abs() < 1e-15);
    }

    #[test]
    fn segment_endpoints_satisfy_constraint_under_clipping() {
        for &(pl, ph, m1) in &[(0.72, 0.11, 0.95), (0.1, 0.6, 0.2), (0.5, 0.5, 0.9), (0.05, 0.9, 0.01)] {
            let seg = tradeoff_segment(pl, ph, m1, 0.3, 0.6).unwrap();
            assert!(seg.constraint_residual(seg.endpoint_a).abs() < 1e-12);
            assert!(seg.constraint_residual(seg.endpoint_b).abs() < 1e-12);
        }
    }

    #[test]
    fn unclipped_width_is_share_ratio() {
        let (l, h) = complier_mean_bounds(0.5, 0.2, 0.5).unwrap();
        assert!(!l.is_clipped() && h.clipped_lo);
        assert!(close(l.width(), 0.2 / 0.5, 1e-12));
    }

    #[test]
    fn report_itt_is_mean_minus_control() {
        let r = BoundReport::from_parts(0.72, 0.11, 0.95, Some(0.86), Some(0.98)).unwrap();
        assert!(close(r.itt_lqc.lo, r.mu_lqc1.lo - 0.86, 1e-15));
        assert!(close(r.itt_hqc.hi, r.mu_hqc1.hi - 0.98, 1e-15));
        let rows = r.rows(Some(&r));
        assert_eq!(rows.len(), 2);
        assert!(close(rows[0].pct_of_reference.unwrap(), 100.0, 1e-12));
    }

    #[test]
    fn oracle_all_ones() {
        let units: Vec<_> = [Stratum::Lqc, Stratum::Hqc, Stratum::Lqc, Stratum::Eat]
            .iter()
            .map(|&s| LabeledUnit { stratum: s, y1: 1.0 })
            .collect();
        let (l, h) = sharp_bound_oracle(&units).unwrap();
        assert_eq!((l.lo, l.hi, h.lo, h.hi), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn oracle_matches_formula_on_small_population() {
        // 3 lqc, 2 hqc; pooled treated outcomes 1,1,1,0,0
        let units = [
            (Stratum::Lqc, 1.0),
            (Stratum::Lqc, 0.0),
            (Stratum::Lqc, 1.0),
            (Stratum::Hqc, 1.0),
            (Stratum::Hqc, 0.0),
            (Stratum::Eat, 0.0),
        ]
        .map(|(stratum, y1)| LabeledUnit { stratum, y1 });
        let (ol, oh) = sharp_bound_oracle(&units).unwrap();
        let (fl, fh) = complier_mean_bounds(3.0 / 6.0, 2.0 / 6.0, 3.0 / 5.0).unwrap();
        assert!(close(ol.lo, fl.lo, 1e-12) && close(ol.hi, fl.hi, 1e-12));
        assert!(close(oh.lo, fh.lo, 1e-12) && close(oh.hi, fh.hi, 1e-12));
        assert!(close(ol.lo, 1.0 / 3.0, 1e-12) && close(ol.hi, 1.0, 1e-12));
        assert!(close(oh.lo, 0.0, 1e-12) && close(oh.hi, 1.0, 1e-12));
    }
}
