//! Subcommand implementations.

use std::fs::File;
use std::io::BufReader;

use psbounds::bootstrap::{bootstrap_bounds, Analysis, BootstrapConfig};
use psbounds::bounds::{bound_report, BoundReport};
use psbounds::data::{read_csv, IngestOptions};
use psbounds::diagnostics::{covariate_r2, DiagnosticKind};
use psbounds::estimators::{estimate_group_stats, identify, GroupStats, StrataEstimates};
use psbounds::simulation::{
    self, run_noise_grid, run_sample_size_sweep, run_slice_count_sweep, simulate_trial, summarize_noise_grid,
    summarize_sample_size, summarize_slice_count, CovariateChoice, NoiseGridConfig, NoiseGridSummary,
    SimScenario, SliceCountConfig, WidthSummary,
};
use psbounds::slicing::{nested_slice_bounds, SlicePlan, SlicedResult};
use psbounds::{Dataset, PerGroup, Stratum};

use crate::config::{AnalysisConfig, NoiseGridSpec};
use crate::output::{warn, Output};
use crate::table::{Cell, Table};
use crate::{CliError, Common, SliceArgs};

/// Published ECHS group shares and outcome means, order 0e, 0lq, 0hq, 1e, 1lq, 1hq.
const ECHS_P: [f64; 6] = [0.03, 0.83, 0.14, 0.86, 0.12, 0.03];
const ECHS_Y: [f64; 6] = [1.00, 0.86, 0.97, 0.95, 0.84, 0.90];

const REPLICATE_VARIANCES: [f64; 6] = [0.0, 0.25, 0.5, 1.0, 2.0, 3.0];

struct Context {
    cfg: AnalysisConfig,
    out: Output,
    workers: Option<usize>,
}

fn context(common: &Common) -> Result<Context, CliError> {
    let cfg = match &common.config {
        Some(p) => AnalysisConfig::load(p)?,
        None => AnalysisConfig::default(),
    };
    let out = Output {
        format: common.format.or(cfg.format).unwrap_or_default(),
        out_dir: common.out_dir.clone().or_else(|| cfg.out_dir.clone()),
    };
    Ok(Context { cfg, out, workers: common.workers })
}

impl Context {
    fn dataset(&self, common: &Common) -> Result<Dataset, CliError> {
        let path = common
            .input
            .clone()
            .or_else(|| self.cfg.input.clone())
            .ok_or_else(|| CliError::Config("no input file; pass --input or set `input` in the config".into()))?;
        let file = File::open(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let opts = IngestOptions {
            aliases: self.cfg.aliases.clone(),
            default_prob_treat: self.cfg.default_prob_treat,
        };
        read_csv(BufReader::new(file), &opts).map_err(|e| match e {
            psbounds::Error::Io(m) => CliError::Input(format!("{}: {m}", path.display())),
            e => e.into(),
        })
    }

    fn plan(&self, args: &SliceArgs) -> Result<Option<SlicePlan>, CliError> {
        let base = self.cfg.slicing.clone();
        let covariate = args.covariate.clone().or_else(|| base.as_ref().map(|p| p.covariate.clone()));
        let Some(covariate) = covariate else {
            if args.slices.is_some() || args.secondary_covariate.is_some() {
                return Err(CliError::Config("slicing options need --covariate".into()));
            }
            return Ok(None);
        };
        let mut plan = base.unwrap_or_else(|| SlicePlan::new(covariate.clone(), 4));
        plan.covariate = covariate;
        if let Some(k) = args.slices {
            plan.bins = k;
        }
        if let Some(c) = &args.secondary_covariate {
            plan.secondary_covariate = Some(c.clone());
            if plan.secondary_bins < 2 && args.secondary_slices.is_none() {
                plan.secondary_bins = 3;
            }
        }
        if let Some(k) = args.secondary_slices {
            plan.secondary_bins = k;
        }
        if let Some(t) = &args.tie_breaker {
            plan.tie_breaker = Some(t.clone());
        }
        Ok(Some(plan))
    }

    fn sim_workers(&self) -> usize {
        self.workers.or(self.cfg.simulation.workers).unwrap_or(0)
    }
}

fn plan_label(p: &SlicePlan) -> String {
    match &p.secondary_covariate {
        Some(s) => format!("{}[{}]*{}[{}]", p.covariate, p.bins, s, p.secondary_bins),
        None => format!("{}[{}]", p.covariate, p.bins),
    }
}

fn warn_estimates(est: &StrataEstimates) {
    for t in &est.truncation_log {
        warn(format!("{} truncated from {} to {}", t.quantity, t.raw, t.clipped));
    }
    for s in &est.unstable {
        warn(format!("{s} share is positive but below {}", psbounds::estimators::UNSTABLE_PROPORTION));
    }
}

fn groups_table(gs: &GroupStats) -> Table {
    let mut t = Table::new("groups", &["group", "n", "p_hat", "y_hat"]);
    for (g, n) in gs.n.iter() {
        t.push(vec![Cell::Text(g.to_string()), Cell::Int(*n), Cell::Prop(gs.p_hat[g]), Cell::opt_prop(gs.y_hat[g])]);
    }
    t
}

fn strata_table(est: &StrataEstimates, report: &BoundReport) -> Table {
    let mut t = Table::new(
        "strata",
        &["stratum", "pi", "mu0", "mu1_lo", "mu1_hi", "itt_lo", "itt_hi"],
    );
    let order = [Stratum::Eat, Stratum::Hqat, Stratum::Hqc, Stratum::Lqat, Stratum::Lqc];
    for s in order {
        let mu0 = est.control_mean(s);
        let row = if s.is_complier() {
            let (m, i) = (report.treated_mean(s), report.itt(s));
            [Cell::Prop(m.lo), Cell::Prop(m.hi), Cell::Prop(i.lo), Cell::Prop(i.hi)]
        } else {
            // Always-takers have the same outcome under both arms.
            let zero = || mu0.map_or(Cell::Missing, |_| Cell::Prop(0.0));
            [Cell::opt_prop(mu0), Cell::opt_prop(mu0), zero(), zero()]
        };
        let mut cells = vec![Cell::Text(s.name().into()), Cell::Prop(est.pi[s]), Cell::opt_prop(mu0)];
        cells.extend(row);
        t.push(cells);
    }
    t
}

fn summary_table(est: &StrataEstimates) -> Table {
    let mut t = Table::new("summary", &["quantity", "value"]);
    t.push(vec![Cell::Text("complier_share".into()), Cell::Prop(est.complier_share())]);
    t.push(vec![Cell::Text("m0".into()), Cell::opt_prop(est.m0)]);
    t.push(vec![Cell::Text("m1".into()), Cell::Prop(est.m1)]);
    t.push(vec![Cell::Text("effect".into()), Cell::opt_prop(est.m0.map(|m0| est.m1 - m0))]);
    t
}

fn bounds_table(name: &str, entries: &[(String, &BoundReport)]) -> Table {
    let mut t = Table::new(
        name,
        &["slicing", "group", "mu0", "mu1_lo", "mu1_hi", "itt_lo", "itt_hi", "width", "pct_of_none"],
    );
    let reference = entries.first().map(|e| e.1);
    for (label, report) in entries {
        for r in report.rows(reference) {
            t.push(vec![
                Cell::Text(label.clone()),
                Cell::Text(r.group.name().into()),
                Cell::opt_prop(r.control_mean),
                Cell::Prop(r.treated_lo),
                Cell::Prop(r.treated_hi),
                Cell::Prop(r.itt_lo),
                Cell::Prop(r.itt_hi),
                Cell::Prop(r.width),
                Cell::opt_pct(r.pct_of_reference),
            ]);
        }
    }
    t
}

fn slices_table(res: &SlicedResult) -> Table {
    let mut t = Table::new(
        "slices",
        &[
            "slice", "lo", "hi", "secondary_lo", "secondary_hi", "n", "share", "pi_lqc", "pi_hqc", "ratio",
            "itt_lqc_lo", "itt_lqc_hi", "itt_hqc_lo", "itt_hqc_hi", "weight_lqc", "weight_hqc",
        ],
    );
    for r in res.slice_rows() {
        let num = |v: f64| if v.is_finite() { Cell::Num(v) } else { Cell::Missing };
        t.push(vec![
            Cell::Int(r.slice),
            num(r.lo),
            num(r.hi),
            r.secondary_lo.map_or(Cell::Missing, num),
            r.secondary_hi.map_or(Cell::Missing, num),
            Cell::Int(r.n),
            Cell::Prop(r.share),
            Cell::opt_prop(r.pi_lqc),
            Cell::opt_prop(r.pi_hqc),
            r.ratio.map_or(Cell::Missing, Cell::Num),
            Cell::opt_prop(r.itt_lqc_lo),
            Cell::opt_prop(r.itt_lqc_hi),
            Cell::opt_prop(r.itt_hqc_lo),
            Cell::opt_prop(r.itt_hqc_hi),
            Cell::Num(r.weight_lqc),
            Cell::Num(r.weight_hqc),
        ]);
    }
    t
}

fn sliced(ds: &Dataset, plan: &SlicePlan) -> Result<SlicedResult, CliError> {
    plan.validate(ds)?;
    let res = nested_slice_bounds(ds, plan)?;
    if res.excluded_records > 0 {
        warn(format!("{} records excluded for missing slicing covariates", res.excluded_records));
    }
    for w in &res.warnings {
        warn(w);
    }
    Ok(res)
}

pub fn estimate(common: &Common) -> Result<(), CliError> {
    let ctx = context(common)?;
    let ds = ctx.dataset(common)?;
    let gs = estimate_group_stats(&ds)?;
    let est = identify(&gs)?;
    warn_estimates(&est);
    let report = bound_report(&est)?;
    ctx.out.emit(&[groups_table(&gs), strata_table(&est, &report), summary_table(&est)], &[])
}

pub fn bounds(common: &Common, args: &SliceArgs) -> Result<(), CliError> {
    let ctx = context(common)?;
    let ds = ctx.dataset(common)?;
    let est = identify(&estimate_group_stats(&ds)?)?;
    warn_estimates(&est);
    let none = bound_report(&est)?;
    let mut tables = Vec::new();
    match ctx.plan(args)? {
        Some(plan) => {
            let res = sliced(&ds, &plan)?;
            tables.push(bounds_table("bounds", &[("none".into(), &none), (plan_label(&plan), &res.aggregate)]));
            tables.push(slices_table(&res));
        }
        None => tables.push(bounds_table("bounds", &[("none".into(), &none)])),
    }
    ctx.out.emit(&tables, &[])
}

pub fn bootstrap(common: &Common, args: &SliceArgs, seed: u64, replicates: Option<usize>) -> Result<(), CliError> {
    let ctx = context(common)?;
    let ds = ctx.dataset(common)?;
    let section = &ctx.cfg.bootstrap;
    let mut cfg = BootstrapConfig::new(replicates.or(section.replicates).unwrap_or(1000), seed);
    if let Some(a) = section.percentile_alpha {
        cfg.percentile_alpha = a;
    }
    cfg.workers = ctx.workers.or(section.workers).unwrap_or(0);
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let (analysis, label) = match ctx.plan(args)? {
        Some(plan) => {
            plan.validate(&ds)?;
            let label = plan_label(&plan);
            (Analysis::Sliced(plan), label)
        }
        None => (Analysis::Unsliced, "none".to_string()),
    };
    let adj = bootstrap_bounds(&ds, &analysis, &cfg)?;
    for (reason, n) in &adj.failure_reasons {
        warn(format!("{n} replicates failed: {reason}"));
    }

    let mut t = Table::new("adjusted", &["slicing", "group", "raw_lo", "raw_hi", "adjusted_lo", "adjusted_hi", "width"]);
    for g in [Stratum::Lqc, Stratum::Hqc] {
        let (raw, a) = (adj.raw.itt(g), adj.adjusted(g));
        t.push(vec![
            Cell::Text(label.clone()),
            Cell::Text(g.name().into()),
            Cell::Prop(raw.lo),
            Cell::Prop(raw.hi),
            Cell::Prop(a.lo),
            Cell::Prop(a.hi),
            Cell::Prop(a.width()),
        ]);
    }
    let mut s = Table::new("bootstrap", &["quantity", "value"]);
    s.push(vec![Cell::Text("replicates".into()), Cell::Int(adj.n_replicates)]);
    s.push(vec![Cell::Text("failures".into()), Cell::Int(adj.failures)]);
    s.push(vec![Cell::Text("clip_rate".into()), Cell::Prop(adj.clip_rate)]);
    s.push(vec![Cell::Text("alpha".into()), Cell::Num(adj.alpha)]);
    ctx.out.emit(&[t, s], &[("replicates.jsonl", adj.replicate_json_lines())])
}

pub fn diagnose(common: &Common, covariates: Vec<String>, kinds: Vec<DiagnosticKind>) -> Result<(), CliError> {
    let ctx = context(common)?;
    let ds = ctx.dataset(common)?;
    let pick = |flag: Vec<String>, cfg: &[String]| if flag.is_empty() { cfg.to_vec() } else { flag };
    let mut covariates = pick(covariates, &ctx.cfg.diagnostics.covariates);
    if covariates.is_empty() {
        covariates = ds.covariate_names();
    }
    let mut kinds = if kinds.is_empty() { ctx.cfg.diagnostics.kinds.clone() } else { kinds };
    if kinds.is_empty() {
        kinds = DiagnosticKind::ALL.to_vec();
    }
    let mut t = Table::new("diagnostics", &["covariate", "kind", "n", "r2"]);
    for c in &covariates {
        for &k in &kinds {
            let r = covariate_r2(&ds, c, k)?;
            for w in &r.warnings {
                warn(format!("{c} ({k}): {w}"));
            }
            t.push(vec![Cell::Text(c.clone()), Cell::Text(k.to_string()), Cell::Int(r.n), Cell::Num(r.r2)]);
        }
    }
    ctx.out.emit(&[t], &[])
}

fn noise_summary_table(rows: &[NoiseGridSummary]) -> Table {
    let mut t = Table::new(
        "noise_grid_summary",
        &["variance", "covariate", "trials", "width_lqc", "width_hqc", "pct_lqc", "pct_hqc", "r2"],
    );
    for r in rows {
        t.push(vec![
            Cell::Num(r.variance),
            Cell::Text(r.covariate.into()),
            Cell::Int(r.trials),
            Cell::Prop(r.mean_width_lqc),
            Cell::Prop(r.mean_width_hqc),
            Cell::Pct(r.mean_pct_lqc),
            Cell::Pct(r.mean_pct_hqc),
            r.mean_r2.map_or(Cell::Missing, Cell::Num),
        ]);
    }
    t
}

fn width_table(name: &str, setting: &str, rows: &[&WidthSummary]) -> Table {
    let mut t = Table::new(
        name,
        &[setting, "trials", "failed", "mean_width_lqc", "sd_width_lqc", "mean_width_hqc", "sd_width_hqc"],
    );
    for r in rows {
        t.push(vec![
            Cell::Int(r.setting),
            Cell::Int(r.trials),
            Cell::Int(r.failed),
            Cell::Prop(r.mean_width_lqc),
            Cell::Prop(r.sd_width_lqc),
            Cell::Prop(r.mean_width_hqc),
            Cell::Prop(r.sd_width_hqc),
        ]);
    }
    t
}

fn noise_grid(
    scenario: &SimScenario,
    spec: &NoiseGridSpec,
    seed: u64,
    workers: usize,
) -> Result<(Table, String), CliError> {
    let cfg = NoiseGridConfig {
        variances: spec.variances.clone(),
        trials: spec.trials,
        seed,
        bins: spec.bins,
        secondary_bins: spec.secondary_bins,
        choices: spec.choices.clone(),
        workers,
    };
    let rows = run_noise_grid(scenario, &cfg)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        warn(format!("{failed} noise-grid cells failed; see noise_grid.csv"));
    }
    Ok((noise_summary_table(&summarize_noise_grid(&rows)), simulation::to_csv(&rows)?))
}

pub fn simulate(
    common: &Common,
    seed: u64,
    preset: Option<&str>,
    variances: Vec<f64>,
    trials: Option<usize>,
) -> Result<(), CliError> {
    let ctx = context(common)?;
    let scenario = ctx.cfg.scenario(preset)?;
    let workers = ctx.sim_workers();
    let sim = &ctx.cfg.simulation;
    let mut tables = Vec::new();
    let mut files = Vec::new();

    let configured = sim.noise_grid.is_some() || sim.sample_size.is_some() || sim.slice_count.is_some();
    let grid = match &sim.noise_grid {
        Some(spec) => Some(NoiseGridSpec {
            variances: if variances.is_empty() { spec.variances.clone() } else { variances },
            trials: trials.unwrap_or(spec.trials),
            ..spec.clone()
        }),
        None if !configured || !variances.is_empty() => Some(NoiseGridSpec {
            variances: if variances.is_empty() { vec![0.0] } else { variances },
            trials: trials.unwrap_or(30),
            bins: 4,
            secondary_bins: 3,
            choices: CovariateChoice::ALL.to_vec(),
        }),
        None => None,
    };
    if let Some(spec) = grid {
        let (t, raw) = noise_grid(&scenario, &spec, seed, workers)?;
        tables.push(t);
        files.push(("noise_grid.csv", raw));
    }
    if let Some(spec) = &sim.sample_size {
        let rows = run_sample_size_sweep(&scenario, &spec.n, spec.trials, seed, workers)?;
        let summary = summarize_sample_size(&rows);
        tables.push(width_table("sample_size_summary", "n", &summary.iter().collect::<Vec<_>>()));
        files.push(("sample_size.csv", simulation::to_csv(&rows)?));
    }
    if let Some(spec) = &sim.slice_count {
        let sc = match spec.noise_sd {
            Some(sd) => scenario.with_noise(sd),
            None => scenario.clone(),
        };
        let cfg = SliceCountConfig {
            bins: spec.bins.clone(),
            trials: spec.trials,
            seed,
            covariate: spec.covariate,
            bootstrap_replicates: spec.bootstrap_replicates,
            workers,
        };
        let rows = run_slice_count_sweep(&sc, &cfg)?;
        let summary = summarize_slice_count(&rows);
        tables.push(width_table(
            "slice_count_summary",
            "slices",
            &summary.iter().map(|s| &s.widths).collect::<Vec<_>>(),
        ));
        let mut t = Table::new(
            "slice_count_oracle",
            &["slices", "oracle_width_lqc", "oracle_width_hqc", "adjusted_width_lqc", "adjusted_width_hqc", "coverage_lqc", "coverage_hqc"],
        );
        for s in &summary {
            t.push(vec![
                Cell::Int(s.widths.setting),
                Cell::Prop(s.mean_oracle_width_lqc),
                Cell::Prop(s.mean_oracle_width_hqc),
                Cell::opt_prop(s.mean_adjusted_width_lqc),
                Cell::opt_prop(s.mean_adjusted_width_hqc),
                Cell::opt_prop(s.coverage_lqc),
                Cell::opt_prop(s.coverage_hqc),
            ]);
        }
        tables.push(t);
        files.push(("slice_count.csv", simulation::to_csv(&rows)?));
    }
    ctx.out.emit(&tables, &files)
}

pub fn replicate(common: &Common, seed: u64, trials: usize) -> Result<(), CliError> {
    let ctx = context(common)?;
    let workers = ctx.sim_workers();
    let mut tables = Vec::new();

    let published = GroupStats::from_marginals(PerGroup(ECHS_P), PerGroup(ECHS_Y.map(Some)))?;
    let est = identify(&published)?;
    let report = bound_report(&est)?;
    let mut t = strata_table(&est, &report);
    t.name = "published_strata".into();
    tables.push(t);
    let mut t = summary_table(&est);
    t.name = "published_summary".into();
    tables.push(t);

    let scenario = SimScenario::echs();
    let (_, ds) = simulate_trial(&scenario, seed)?;
    let gs = estimate_group_stats(&ds)?;
    let sim_est = identify(&gs)?;
    let mut t = groups_table(&gs);
    t.name = "simulated_groups".into();
    tables.push(t);
    let sim_report = bound_report(&sim_est)?;
    let mut t = strata_table(&sim_est, &sim_report);
    t.name = "simulated_strata".into();
    tables.push(t);

    let mut reports = vec![("none".to_string(), sim_report)];
    for choice in &CovariateChoice::ALL[1..] {
        let plan = choice.plan(4, 3).expect("sliced choice has a plan");
        reports.push((choice.label().to_string(), sliced(&ds, &plan)?.aggregate));
    }
    let entries: Vec<(String, &BoundReport)> = reports.iter().map(|(l, r)| (l.clone(), r)).collect();
    tables.push(bounds_table("simulated_bounds", &entries));

    let spec = NoiseGridSpec {
        variances: REPLICATE_VARIANCES.to_vec(),
        trials,
        bins: 4,
        secondary_bins: 3,
        choices: CovariateChoice::ALL.to_vec(),
    };
    let (t, raw) = noise_grid(&scenario, &spec, seed, workers)?;
    tables.push(t);
    let mut sample = Vec::new();
    psbounds::data::write_csv(&ds, &mut sample)?;
    let sample = String::from_utf8(sample).map_err(|e| CliError::Other(e.to_string()))?;
    ctx.out.emit(&tables, &[("noise_grid.csv", raw), ("simulated_data.csv", sample)])
}
