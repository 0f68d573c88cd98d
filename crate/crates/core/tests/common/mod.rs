//! Invariant checks shared by the property suite and the acceptance suite.
//! Each returns `Err` with a description of the first violation.

#![allow(dead_code)]

use psbounds::bootstrap::{bootstrap_bounds, Analysis, BootstrapConfig};
use psbounds::bounds::{complier_mean_bounds, sharp_bound_oracle};
use psbounds::data::group_partition;
use psbounds::estimators::{estimate_group_stats, hajek_mean, identify, GroupStats};
use psbounds::simulation::{
    population_bounds, population_sliced_bounds, simulate_population, simulate_trial, ComplierOmega,
    LatentPopulation, SimScenario,
};
use psbounds::slicing::SlicePlan;
use psbounds::{Arm, Category, Dataset, PerGroup, PerStratum, Stratum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Published ECHS group shares and outcome means, rounded, in group order 0e, 0lq, 0hq, 1e, 1lq, 1hq.
pub const ECHS_P: [f64; 6] = [0.03, 0.83, 0.14, 0.86, 0.12, 0.03];
pub const ECHS_Y: [f64; 6] = [1.00, 0.86, 0.97, 0.95, 0.84, 0.90];

pub fn echs_published_stats() -> GroupStats {
    let p = PerGroup(ECHS_P);
    let y = PerGroup(ECHS_Y.map(Some));
    GroupStats::from_marginals(p, y).expect("table values are valid")
}

/// A scenario with random strata shares, outcome model and size, always
/// leaving both background contexts populated.
pub fn random_scenario(rng: &mut impl Rng, n_max: usize) -> SimScenario {
    loop {
        let raw: [f64; 5] = std::array::from_fn(|_| rng.random_range(0.0..1.0f64));
        let total: f64 = raw.iter().sum();
        let pi = PerStratum {
            eat: raw[0] / total,
            lqat: raw[1] / total,
            hqat: raw[2] / total,
            lqc: raw[3] / total,
            hqc: raw[4] / total,
        };
        let mut omega = || rng.random_range(-2.5..2.5);
        let omega0 = PerStratum {
            eat: omega(),
            lqat: omega(),
            hqat: omega(),
            lqc: omega(),
            hqc: omega(),
        };
        let omega1 = ComplierOmega { lqc: omega(), hqc: omega() };
        let s = SimScenario {
            name: "random".into(),
            n: rng.random_range(2..=n_max),
            treat_frac: rng.random_range(0.2..0.8),
            beta: rng.random_range(0.0..5.0),
            pi,
            omega0,
            omega1,
            noise_sd: [rng.random_range(0.0..1.5), rng.random_range(0.0..1.5), rng.random_range(0.0..1.5)],
            assignment: Default::default(),
        };
        if s.validate().is_ok() {
            return s;
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A simulated dataset with at least one record in each arm.
pub fn random_dataset(seed: u64, n_max: usize) -> Dataset {
    let mut r = rng(seed);
    loop {
        let s = random_scenario(&mut r, n_max.max(4));
        let s = s.with_n(s.n.max(4));
        if let Ok((_, ds)) = simulate_trial(&s, r.random()) {
            if ds.records().iter().any(|u| u.z == Arm::Treatment) && ds.records().iter().any(|u| u.z == Arm::Control)
            {
                return ds;
            }
        }
    }
}

pub fn partition(ds: &Dataset) -> Check {
    let parts = group_partition(ds);
    let mut seen = vec![0u8; ds.len()];
    let mut total = 0;
    for (g, members) in parts.iter() {
        for &i in members {
            seen[i] += 1;
            ensure(ds.records()[i].group() == g, || format!("record {i} filed under {g}"))?;
        }
        total += members.len();
    }
    ensure(total == ds.len(), || format!("groups hold {total} of {} records", ds.len()))?;
    ensure(seen.iter().all(|&c| c == 1), || "groups overlap or miss records".into())?;
    ensure(ds.weights().iter().all(|&w| w > 1.0), || "weight not above 1".into())
}

/// Hájek means are unchanged when every weight is multiplied by `c`.
pub fn weight_scale_invariance(values: &[f64], weights: &[f64], c: f64) -> Check {
    let base = hajek_mean(values, weights).map_err(|e| e.to_string())?;
    let scaled: Vec<f64> = weights.iter().map(|w| w * c).collect();
    let after = hajek_mean(values, &scaled).map_err(|e| e.to_string())?;
    ensure((base - after).abs() <= 1e-12, || format!("{base} became {after} at scale {c}"))
}

/// Observed control mixtures decompose into strata when nothing was clipped.
pub fn mixture_identity(gs: &GroupStats) -> Check {
    let Ok(est) = identify(gs) else { return Ok(()) };
    if !est.truncation_log.is_empty() {
        return Ok(());
    }
    for (c, comp, at) in [
        (Category::Lq, est.mu_lqc_0, est.mu_lqat),
        (Category::Hq, est.mu_hqc_0, est.mu_hqat),
    ] {
        let (pc, pa) = match c {
            Category::Lq => (est.pi.lqc, est.pi.lqat),
            _ => (est.pi.hqc, est.pi.hqat),
        };
        let Some(y0) = gs.y(Arm::Control, c) else { continue };
        let lhs = gs.p(Arm::Control, c) * y0;
        let rhs = pc * comp.unwrap_or(0.0) + pa * at.unwrap_or(0.0);
        ensure((lhs - rhs).abs() <= 1e-10, || format!("{c}: {lhs} vs {rhs}"))?;
    }
    Ok(())
}

/// Unclipped LQC mean interval width is `π_hqc/π_lqc`.
pub fn width_law(pi_l: f64, pi_h: f64, m1: f64) -> Check {
    let (l, h) = complier_mean_bounds(pi_l, pi_h, m1).map_err(|e| e.to_string())?;
    if l.is_clipped() || h.is_clipped() || l.vacuous || h.vacuous {
        return Ok(());
    }
    let (wl, wh) = (l.width(), h.width());
    let tol = 1e-10 * (1.0 + pi_h / pi_l + pi_l / pi_h);
    ensure((wl - pi_h / pi_l).abs() <= tol, || format!("lqc width {wl} vs {}", pi_h / pi_l))?;
    ensure((wh - pi_l / pi_h).abs() <= tol, || format!("hqc width {wh} vs {}", pi_l / pi_h))
}

/// Formula bounds on exact population quantities equal the greedy oracle.
pub fn formula_matches_oracle(pop: &LatentPopulation, tol: f64) -> Check {
    let Ok(report) = population_bounds(pop) else { return Ok(()) };
    let (ol, oh) = sharp_bound_oracle(&pop.labeled_units()).map_err(|e| e.to_string())?;
    for (name, f, o) in [("lqc", report.mu_lqc1, ol), ("hqc", report.mu_hqc1, oh)] {
        ensure(f.vacuous == o.vacuous, || format!("{name}: vacuous flag differs"))?;
        ensure((f.lo - o.lo).abs() <= tol && (f.hi - o.hi).abs() <= tol, || {
            format!("{name}: formula [{}, {}] vs oracle [{}, {}]", f.lo, f.hi, o.lo, o.hi)
        })?;
    }
    Ok(())
}

/// Sliced population bounds sit inside the unsliced ones.
pub fn subset_at_population_scale(pop: &LatentPopulation, t: usize, bins: usize) -> Check {
    let Ok(whole) = population_bounds(pop) else { return Ok(()) };
    let Ok(sliced) = population_sliced_bounds(pop, t, bins, None) else { return Ok(()) };
    let agg = &sliced.aggregate;
    for (name, outer, inner) in [("lqc", whole.itt_lqc, agg.itt_lqc), ("hqc", whole.itt_hqc, agg.itt_hqc)] {
        ensure(inner.lo >= outer.lo - 1e-12 && inner.hi <= outer.hi + 1e-12, || {
            format!("{name}: sliced [{}, {}] not in [{}, {}]", inner.lo, inner.hi, outer.lo, outer.hi)
        })?;
    }
    Ok(())
}

pub fn forbidden_strata(pop: &LatentPopulation) -> Check {
    use Category::*;
    for (i, u) in pop.units.iter().enumerate() {
        let ok = match (u.s0, u.s1) {
            (E, s1) => s1 == E,
            (s0, s1) => s1 == E || s1 == s0,
        };
        ensure(ok, || format!("unit {i} switches {} -> {}", u.s0, u.s1))?;
        ensure(Stratum::from_behaviour(u.s0, u.s1) == Some(u.stratum), || {
            format!("unit {i} labelled {} for ({}, {})", u.stratum, u.s0, u.s1)
        })?;
        if !u.stratum.is_complier() {
            ensure(u.y0 == u.y1, || format!("always-taker {i} has an offer effect"))?;
        }
    }
    Ok(())
}

/// Same seed gives the same population, and bootstrap output does not
/// depend on the worker count.
pub fn determinism(scenario: &SimScenario, seed: u64, replicates: usize) -> Check {
    let a = simulate_population(scenario, seed).map_err(|e| e.to_string())?;
    let b = simulate_population(scenario, seed).map_err(|e| e.to_string())?;
    ensure(a == b, || "population differs between runs".into())?;
    let ds = a.assign(scenario, seed).map_err(|e| e.to_string())?;
    let ds2 = b.assign(scenario, seed).map_err(|e| e.to_string())?;
    ensure(ds == ds2, || "assignment differs between runs".into())?;
    let analysis = Analysis::Sliced(SlicePlan::new("x1", 2));
    let run = |workers| {
        let cfg = BootstrapConfig { workers, ..BootstrapConfig::new(replicates, seed) };
        bootstrap_bounds(&ds, &analysis, &cfg).map(|r| r.replicate_json_lines())
    };
    match (run(1), run(3)) {
        (Ok(x), Ok(y)) => ensure(x == y, || "bootstrap output depends on worker count".into()),
        (Err(x), Err(y)) => ensure(x.to_string() == y.to_string(), || "errors differ by worker count".into()),
        _ => Err("bootstrap succeeded for one worker count only".into()),
    }
}

/// Estimated group stats from a dataset, or `None` if an arm is empty.
pub fn dataset_stats(ds: &Dataset) -> Option<GroupStats> {
    estimate_group_stats(ds).ok()
}
