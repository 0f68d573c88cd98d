//! Latent-trait data-generating process for three-way compliance trials.
//!
//! Each unit has three standard-normal traits. `U1` sets the background
//! context (which alternative the unit would attend without the program),
//! `U2` sets program take-up, `U3` drives the binary outcome. Covariates are
//! noisy copies `X_t = U_t + σ_t ε_t`, so `x1` is a principal variable, `x2` a
//! compliance variable and `x3` a prognostic one.

pub mod normal;
pub mod rng;
pub mod sweeps;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bounds::LabeledUnit;
use crate::data::{Arm, Category, Dataset, ObservedGroup, PerGroup, PerStratum, Stratum, UnitRecord};
use crate::error::{Error, Result};
use crate::estimators::GroupStats;

use normal::{inverse_normal_cdf, logistic};
use rng::{stream, Purpose};

pub use sweeps::*;

pub const COVARIATE_NAMES: [&str; 3] = ["x1", "x2", "x3"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentMechanism {
    /// Independent coin flip per unit.
    #[default]
    Bernoulli,
    /// Exactly `round(treat_frac · n)` units treated.
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplierOmega {
    pub lqc: f64,
    pub hqc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimScenario {
    #[serde(default)]
    pub name: String,
    pub n: usize,
    pub treat_frac: f64,
    pub beta: f64,
    pub pi: PerStratum<f64>,
    pub omega0: PerStratum<f64>,
    pub omega1: ComplierOmega,
    #[serde(default)]
    pub noise_sd: [f64; 3],
    #[serde(default)]
    pub assignment: AssignmentMechanism,
}

const ECHS_TOML: &str = include_str!("../../presets/echs.toml");
const AUXILIARY_TOML: &str = include_str!("../../presets/auxiliary.toml");

impl SimScenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: SimScenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "echs" => Self::from_toml(ECHS_TOML),
            "auxiliary" => Self::from_toml(AUXILIARY_TOML),
            other => Err(Error::InvalidScenario(format!("unknown preset `{other}`"))),
        }
    }

    pub fn echs() -> Self {
        Self::preset("echs").expect("shipped preset is valid")
    }

    pub fn auxiliary() -> Self {
        Self::preset("auxiliary").expect("shipped preset is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if !(self.treat_frac > 0.0 && self.treat_frac < 1.0) {
            return bad(format!("treat_frac must be in (0,1), got {}", self.treat_frac));
        }
        if !self.beta.is_finite() {
            return bad("beta must be finite".into());
        }
        if self.pi.iter().any(|(_, &p)| !(p >= 0.0)) {
            return bad("strata proportions must be non-negative".into());
        }
        let total: f64 = self.pi.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("strata proportions sum to {total}, not 1"));
        }
        if self.noise_sd.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return bad("noise_sd entries must be finite and non-negative".into());
        }
        let omegas = self.omega0.iter().map(|(_, &w)| w).chain([self.omega1.lqc, self.omega1.hqc]);
        if omegas.into_iter().any(|w| !w.is_finite()) {
            return bad("omega values must be finite".into());
        }
        derive_thresholds(&self.pi).map(|_| ())
    }

    pub fn with_noise(&self, sd: [f64; 3]) -> Self {
        SimScenario { noise_sd: sd, ..self.clone() }
    }

    pub fn with_n(&self, n: usize) -> Self {
        SimScenario { n, ..self.clone() }
    }

    fn omega(&self, r: Stratum, arm: Arm) -> f64 {
        match (r, arm) {
            (Stratum::Lqc, Arm::Treatment) => self.omega1.lqc,
            (Stratum::Hqc, Arm::Treatment) => self.omega1.hqc,
            _ => self.omega0[r],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    /// Share of units in the low-quality background context.
    pub gamma0: f64,
    /// Program take-up probability under treatment, by context.
    pub gamma1_hq: f64,
    pub gamma1_lq: f64,
}

pub fn derive_thresholds(pi: &PerStratum<f64>) -> Result<Thresholds> {
    let rest = 1.0 - pi.eat;
    let hq = pi.hqc + pi.hqat;
    let lq = pi.lqc + pi.lqat;
    if !(rest > 0.0) {
        return Err(Error::InvalidScenario("always-taker share must be below 1".into()));
    }
    if !(hq > 0.0) || !(lq > 0.0) {
        return Err(Error::InvalidScenario(
            "each background context needs a positive share".into(),
        ));
    }
    Ok(Thresholds {
        gamma0: 1.0 - hq / rest,
        gamma1_hq: pi.hqc / hq * rest + pi.eat,
        gamma1_lq: pi.lqc / lq * rest + pi.eat,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentUnit {
    pub u: [f64; 3],
    pub x: [f64; 3],
    /// Alternative attended when not in the program (`Lq` or `Hq`).
    pub context: Category,
    pub s0: Category,
    pub s1: Category,
    pub stratum: Stratum,
    pub y0: bool,
    pub y1: bool,
}

impl LatentUnit {
    pub fn behaviour(&self, arm: Arm) -> Category {
        match arm {
            Arm::Control => self.s0,
            Arm::Treatment => self.s1,
        }
    }

    pub fn outcome(&self, arm: Arm) -> bool {
        match arm {
            Arm::Control => self.y0,
            Arm::Treatment => self.y1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentPopulation {
    pub units: Vec<LatentUnit>,
}

pub fn simulate_population(scenario: &SimScenario, seed: u64) -> Result<LatentPopulation> {
    scenario.validate()?;
    let th = derive_thresholds(&scenario.pi)?;
    let cut_context = inverse_normal_cdf(th.gamma0);
    let cut_eat = inverse_normal_cdf(1.0 - scenario.pi.eat);
    let cut_hq = inverse_normal_cdf(1.0 - th.gamma1_hq);
    let cut_lq = inverse_normal_cdf(1.0 - th.gamma1_lq);

    let mut latent = stream(seed, Purpose::Latent, 0);
    let mut noise = stream(seed, Purpose::Noise, 0);
    let mut outcome = stream(seed, Purpose::Outcome, 0);

    let units = (0..scenario.n)
        .map(|_| {
            let u: [f64; 3] = std::array::from_fn(|_| latent.sample(StandardNormal));
            let eps: [f64; 3] = std::array::from_fn(|_| noise.sample(StandardNormal));
            let v: f64 = outcome.random();

            let context = if u[0] > cut_context { Category::Hq } else { Category::Lq };
            let s0 = if u[1] > cut_eat { Category::E } else { context };
            let cut1 = if context == Category::Hq { cut_hq } else { cut_lq };
            let s1 = if u[1] > cut1 { Category::E } else { context };
            let stratum = Stratum::from_behaviour(s0, s1).expect("thresholds nest");
            let y = |arm| v < logistic(scenario.beta * u[2] + scenario.omega(stratum, arm));
            LatentUnit {
                u,
                x: std::array::from_fn(|t| u[t] + scenario.noise_sd[t] * eps[t]),
                context,
                s0,
                s1,
                stratum,
                y0: y(Arm::Control),
                y1: y(Arm::Treatment),
            }
        })
        .collect();
    Ok(LatentPopulation { units })
}

/// Exact finite-population analogue of [`GroupStats`]: `p_zs` is the share
/// of units that would be in category `s` under arm `z`, and `Ŷ_zs` their
/// mean potential outcome.
pub fn population_group_stats<'a>(units: impl IntoIterator<Item = &'a LatentUnit>) -> Result<GroupStats> {
    let mut n = PerGroup::<usize>::default();
    let mut ysum = PerGroup::<usize>::default();
    let mut total = 0usize;
    for u in units {
        total += 1;
        for arm in Arm::ALL {
            let g = ObservedGroup::new(arm, u.behaviour(arm));
            n[g] += 1;
            ysum[g] += usize::from(u.outcome(arm));
        }
    }
    if total == 0 {
        return Err(Error::NoRecords);
    }
    Ok(GroupStats {
        n,
        p_hat: PerGroup::from_fn(|g| n[g] as f64 / total as f64),
        y_hat: PerGroup::from_fn(|g| (n[g] > 0).then(|| ysum[g] as f64 / n[g] as f64)),
    })
}

impl LatentPopulation {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn strata_counts(&self) -> PerStratum<usize> {
        let mut c = PerStratum::<usize>::default();
        for u in &self.units {
            c[u.stratum] += 1;
        }
        c
    }

    /// Per-stratum mean of `Y(1) − Y(0)`; `None` for an empty stratum.
    pub fn true_itt(&self) -> PerStratum<Option<f64>> {
        PerStratum::from_fn(|s| {
            let (n, d) = self
                .units
                .iter()
                .filter(|u| u.stratum == s)
                .fold((0usize, 0i64), |(n, d), u| (n + 1, d + u.y1 as i64 - u.y0 as i64));
            (n > 0).then(|| d as f64 / n as f64)
        })
    }

    /// Mean treated-minus-control outcome over all compliers.
    pub fn complier_effect(&self) -> Option<f64> {
        let (n, d) = self
            .units
            .iter()
            .filter(|u| u.stratum.is_complier())
            .fold((0usize, 0i64), |(n, d), u| (n + 1, d + u.y1 as i64 - u.y0 as i64));
        (n > 0).then(|| d as f64 / n as f64)
    }

    pub fn group_stats(&self) -> Result<GroupStats> {
        population_group_stats(&self.units)
    }

    pub fn labeled_units(&self) -> Vec<LabeledUnit> {
        self.units
            .iter()
            .map(|u| LabeledUnit { stratum: u.stratum, y1: f64::from(u.y1 as u8) })
            .collect()
    }

    pub fn covariate(&self, t: usize) -> Vec<f64> {
        self.units.iter().map(|u| u.x[t]).collect()
    }

    /// Randomizes and reveals one arm per unit.
    pub fn assign(&self, scenario: &SimScenario, seed: u64) -> Result<Dataset> {
        let n = self.units.len();
        let mut rng = stream(seed, Purpose::Assignment, 0);
        let (treated, prob) = match scenario.assignment {
            AssignmentMechanism::Bernoulli => (
                (0..n).map(|_| rng.random::<f64>() < scenario.treat_frac).collect::<Vec<_>>(),
                scenario.treat_frac,
            ),
            AssignmentMechanism::Complete => {
                let m = ((scenario.treat_frac * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
                let mut flags: Vec<bool> = (0..n).map(|i| i < m).collect();
                flags.shuffle(&mut rng);
                (flags, m as f64 / n as f64)
            }
        };
        let records = self
            .units
            .iter()
            .zip(treated)
            .enumerate()
            .map(|(i, (u, t))| {
                let arm = if t { Arm::Treatment } else { Arm::Control };
                UnitRecord {
                    unit_id: format!("u{i}"),
                    z: arm,
                    s: u.behaviour(arm),
                    y: u.outcome(arm),
                    prob_treat: prob,
                    covariates: u.x.iter().map(|&x| Some(x)).collect(),
                }
            })
            .collect();
        Dataset::from_records(COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(), records)
    }
}

/// Population plus one randomized, observed dataset.
pub fn simulate_trial(scenario: &SimScenario, seed: u64) -> Result<(LatentPopulation, Dataset)> {
    let pop = simulate_population(scenario, seed)?;
    let ds = pop.assign(scenario, seed)?;
    Ok((pop, ds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        let e = SimScenario::echs();
        assert_eq!(e.n, 3820);
        assert_eq!(e.omega0.hqc, 13.0);
        assert_eq!(e.omega1.lqc, 9.6);
        let a = SimScenario::auxiliary();
        assert_eq!(a.beta, 4.0);
        assert!(SimScenario::preset("nope").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = ECHS_TOML.replace("beta = 5.65", "beta = 5.65\nbogus = 1");
        assert!(SimScenario::from_toml(&text).is_err());
    }

    #[test]
    fn echs_thresholds() {
        let th = derive_thresholds(&SimScenario::echs().pi).unwrap();
        assert!((th.gamma0 - 0.8557).abs() < 1e-4, "{th:?}");
        assert!((th.gamma1_hq - 0.7921).abs() < 1e-4);
        assert!((th.gamma1_lq - 0.8714).abs() < 1e-4);
    }

    #[test]
    fn half_compliers_threshold() {
        let pi = PerStratum { eat: 0.0, lqat: 0.2, hqat: 0.3, lqc: 0.2, hqc: 0.3 };
        assert!((derive_thresholds(&pi).unwrap().gamma1_hq - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_context_is_an_error() {
        let pi = PerStratum { eat: 0.2, lqat: 0.4, hqat: 0.0, lqc: 0.4, hqc: 0.0 };
        assert!(derive_thresholds(&pi).is_err());
    }

    #[test]
    fn zero_noise_copies_traits() {
        let pop = simulate_population(&SimScenario::echs().with_n(200), 3).unwrap();
        assert!(pop.units.iter().all(|u| u.x == u.u));
    }

    #[test]
    fn always_takers_have_zero_effect() {
        let pop = simulate_population(&SimScenario::echs(), 11).unwrap();
        let itt = pop.true_itt();
        assert_eq!(itt.eat, Some(0.0));
        assert_eq!(itt.lqat, Some(0.0));
        assert_eq!(itt.hqat, Some(0.0));
        assert!(itt.lqc.unwrap() > 0.0);
    }

    #[test]
    fn true_itt_matches_manual_average() {
        let pop = simulate_population(&SimScenario::auxiliary().with_n(50), 5).unwrap();
        let itt = pop.true_itt();
        for s in Stratum::ALL {
            let members: Vec<_> = pop.units.iter().filter(|u| u.stratum == s).collect();
            let manual = (!members.is_empty()).then(|| {
                members.iter().map(|u| (u.y1 as i32 - u.y0 as i32) as f64).sum::<f64>() / members.len() as f64
            });
            assert_eq!(itt[s], manual, "{s}");
        }
    }

    #[test]
    fn null_model_has_no_effect_on_average() {
        let mut sc = SimScenario::echs().with_n(20_000);
        sc.beta = 0.0;
        sc.omega0 = PerStratum::from_fn(|_| 0.3);
        sc.omega1 = ComplierOmega { lqc: 0.3, hqc: 0.3 };
        let pop = simulate_population(&sc, 1).unwrap();
        assert_eq!(pop.complier_effect(), Some(0.0));
    }

    #[test]
    fn population_is_deterministic() {
        let sc = SimScenario::echs().with_n(300);
        let a = simulate_trial(&sc, 42).unwrap();
        let b = simulate_trial(&sc, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, simulate_population(&sc, 43).unwrap());
    }

    #[test]
    fn noise_does_not_change_latent_draws() {
        let sc = SimScenario::echs().with_n(100);
        let a = simulate_population(&sc, 9).unwrap();
        let b = simulate_population(&sc.with_noise([0.5, 1.0, 2.0]), 9).unwrap();
        for (x, y) in a.units.iter().zip(&b.units) {
            assert_eq!((x.u, x.stratum, x.y0, x.y1), (y.u, y.stratum, y.y0, y.y1));
        }
    }

    #[test]
    fn complete_randomization_treats_exact_count() {
        let mut sc = SimScenario::echs().with_n(100);
        sc.assignment = AssignmentMechanism::Complete;
        let (_, ds) = simulate_trial(&sc, 2).unwrap();
        assert_eq!(ds.records().iter().filter(|r| r.z == Arm::Treatment).count(), 58);
        assert!(ds.records().iter().all(|r| r.prob_treat == 0.58));
    }

    #[test]
    fn population_stats_split_each_arm() {
        let pop = simulate_population(&SimScenario::echs().with_n(500), 4).unwrap();
        let gs = pop.group_stats().unwrap();
        for arm in Arm::ALL {
            let s: f64 = Category::ALL.iter().map(|&c| gs.p(arm, c)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
