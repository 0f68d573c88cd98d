//! Covariate usefulness diagnostics: weighted logistic regression and
//! McFadden's pseudo-R².
//!
//! - principal: among control units outside the program, does the covariate
//!   predict low- versus high-quality alternative?
//! - compliance: among treated units, does it predict program take-up?
//! - prognostic: among control units, does it predict the outcome beyond
//!   the attended-category dummies?

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{Arm, Category, Dataset, UnitRecord};
use crate::error::{Error, Result};
use crate::estimators::estimate_group_stats;

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-8;
const RIDGE: f64 = 1e-10;
const MAX_HALVINGS: usize = 40;
/// Above this control program share the compliance recipe mixes in many always-takers.
const COMPLIANCE_WARN_SHARE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogisticFit {
    /// Intercept first, then one slope per design column.
    pub coefficients: Vec<f64>,
    pub log_likelihood: f64,
    /// Log-likelihood of the comparison model (intercept-only unless nested).
    pub null_log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Fitted probabilities collapse onto the labels.
    pub separated: bool,
    /// The response is constant.
    pub degenerate: bool,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn log_likelihood(y: &[f64], w: &[f64], eta: &[f64]) -> f64 {
    y.iter()
        .zip(w)
        .zip(eta)
        .map(|((&y, &w), &e)| -w * (y * softplus(-e) + (1.0 - y) * softplus(e)))
        .sum()
}

fn linear_predictor(x: &[Vec<f64>], beta: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| beta[0] + x.iter().zip(&beta[1..]).map(|(col, b)| col[i] * b).sum::<f64>())
        .collect()
}

/// Solves `a · s = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut s = vec![0.0; n];
    for c in (0..n).rev() {
        let tail: f64 = (c + 1..n).map(|k| a[c][k] * s[k]).sum();
        s[c] = (b[c] - tail) / a[c][c];
    }
    Some(s)
}

fn check_inputs(y: &[f64], x: &[Vec<f64>], w: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Undefined("logistic fit on an empty sample".into()));
    }
    if w.len() != y.len() || x.iter().any(|c| c.len() != y.len()) {
        return Err(Error::InvalidInput("design, response and weights differ in length".into()));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidInput("logistic response must be 0/1".into()));
    }
    if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput("weights must be positive".into()));
    }
    Ok(())
}

/// Newton/IRLS maximization of the weighted log-likelihood with step-halving.
fn irls(y: &[f64], x: &[Vec<f64>], w: &[f64]) -> (Vec<f64>, f64, bool, usize) {
    let n = y.len();
    let d = x.len() + 1;
    let ybar = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / w.iter().sum::<f64>();
    let mut beta = vec![0.0; d];
    beta[0] = (ybar / (1.0 - ybar)).ln();
    let mut eta = linear_predictor(x, &beta, n);
    let mut ll = log_likelihood(y, w, &eta);
    let col = |j: usize, i: usize| if j == 0 { 1.0 } else { x[j - 1][i] };

    for iter in 1..=MAX_ITER {
        let mut info = vec![vec![0.0; d]; d];
        let mut score = vec![0.0; d];
        for i in 0..n {
            let p = crate::simulation::normal::logistic(eta[i]);
            let v = w[i] * p * (1.0 - p);
            let r = w[i] * (y[i] - p);
            for j in 0..d {
                score[j] += col(j, i) * r;
                for k in 0..=j {
                    info[j][k] += col(j, i) * col(k, i) * v;
                }
            }
        }
        for j in 0..d {
            for k in 0..j {
                info[k][j] = info[j][k];
            }
            info[j][j] += RIDGE;
        }
        let Some(step) = solve(info, score) else {
            return (beta, ll, false, iter);
        };

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let cand_eta = linear_predictor(x, &cand, n);
            let cand_ll = log_likelihood(y, w, &cand_eta);
            if cand_ll >= ll - 1e-12 * ll.abs() {
                accepted = Some((cand, cand_eta, cand_ll));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, cand_eta, cand_ll)) = accepted else {
            return (beta, ll, false, iter);
        };
        let change = beta.iter().zip(&cand).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        beta = cand;
        eta = cand_eta;
        ll = cand_ll;
        if change < TOL {
            return (beta, ll, true, iter);
        }
    }
    (beta, ll, false, MAX_ITER)
}

fn degenerate_fit(d: usize) -> LogisticFit {
    LogisticFit {
        coefficients: vec![0.0; d],
        log_likelihood: 0.0,
        null_log_likelihood: 0.0,
        converged: true,
        iterations: 0,
        separated: false,
        degenerate: true,
    }
}

/// Weighted logistic regression of `y` on an intercept plus the columns of `x`,
/// compared against the intercept-only model.
pub fn fit_logistic(y: &[f64], x: &[Vec<f64>], w: &[f64]) -> Result<LogisticFit> {
    fit_nested(y, &[], x, w)
}

/// Fits `y` on `base ∪ extra`; the comparison model uses `base` alone.
pub fn fit_nested(y: &[f64], base: &[Vec<f64>], extra: &[Vec<f64>], w: &[f64]) -> Result<LogisticFit> {
    let full: Vec<Vec<f64>> = base.iter().chain(extra).cloned().collect();
    check_inputs(y, &full, w)?;
    if y.iter().all(|&v| v == y[0]) {
        log::warn!("logistic response is constant");
        return Ok(degenerate_fit(full.len() + 1));
    }
    let (beta, ll, converged, iterations) = irls(y, &full, w);
    let (_, ll0, _, _) = irls(y, base, w);
    let separated = -ll < 1e-6 * -ll0;
    if separated {
        log::warn!("logistic fit is (quasi-)separated");
    } else if !converged {
        log::warn!("logistic fit did not converge in {iterations} iterations");
    }
    Ok(LogisticFit {
        coefficients: beta,
        log_likelihood: ll,
        null_log_likelihood: ll0,
        converged,
        iterations,
        separated,
        degenerate: false,
    })
}

/// `1 − logL(M)/logL(M0)`, kept within `[0,1]`.
pub fn mcfadden_r2(fit: &LogisticFit) -> Result<f64> {
    if fit.degenerate {
        log::warn!("constant response: R² reported as 0");
        return Ok(0.0);
    }
    if fit.separated {
        log::warn!("separated fit: R² reported as 1");
        return Ok(1.0);
    }
    if !(fit.null_log_likelihood < 0.0) || !fit.log_likelihood.is_finite() {
        return Err(Error::Undefined("McFadden R² needs a negative null log-likelihood".into()));
    }
    let r2 = 1.0 - fit.log_likelihood / fit.null_log_likelihood;
    if r2 < 0.0 {
        log::debug!("McFadden R² {r2} clipped to 0");
    }
    Ok(r2.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagnosticKind {
    Principal,
    Compliance,
    Prognostic,
}

impl DiagnosticKind {
    pub const ALL: [DiagnosticKind; 3] = [Self::Principal, Self::Compliance, Self::Prognostic];
}

impl fmt::Display for DiagnosticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Principal => "principal",
            Self::Compliance => "compliance",
            Self::Prognostic => "prognostic",
        })
    }
}

impl std::str::FromStr for DiagnosticKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "principal" => Ok(Self::Principal),
            "compliance" => Ok(Self::Compliance),
            "prognostic" => Ok(Self::Prognostic),
            other => Err(Error::InvalidInput(format!("unknown diagnostic kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovariateR2 {
    pub covariate: String,
    pub kind: DiagnosticKind,
    pub r2: f64,
    /// Records in the regression subgroup.
    pub n: usize,
    pub warnings: Vec<String>,
    pub fit: LogisticFit,
}

pub fn covariate_r2(ds: &Dataset, covariate: &str, kind: DiagnosticKind) -> Result<CovariateR2> {
    let j = ds.covariate_index(covariate)?;
    let mut warnings = Vec::new();

    let subgroup: Box<dyn Fn(&UnitRecord) -> bool> = match kind {
        DiagnosticKind::Principal => Box::new(|r| r.z == Arm::Control && r.s != Category::E),
        DiagnosticKind::Compliance => Box::new(|r| r.z == Arm::Treatment),
        DiagnosticKind::Prognostic => Box::new(|r| r.z == Arm::Control),
    };
    let mut rows: Vec<(&UnitRecord, f64)> = ds
        .records()
        .iter()
        .filter(|r| subgroup(r))
        .filter_map(|r| r.covariates[j].map(|x| (r, x)))
        .collect();
    if rows.is_empty() {
        return Err(Error::Undefined(format!("{kind} subgroup is empty")));
    }
    let missing = ds.records().iter().filter(|r| subgroup(r)).count() - rows.len();
    if missing > 0 {
        warnings.push(format!("{missing} records lack `{covariate}`"));
    }
    if kind == DiagnosticKind::Prognostic {
        // A category with a constant outcome drives its dummy to infinity; in
        // that limit its records add nothing to either likelihood.
        let constant = |c: Category| {
            let mut ys = rows.iter().filter(|(r, _)| r.s == c).map(|(r, _)| r.y);
            ys.next().is_some_and(|first| ys.all(|y| y == first))
        };
        let drop: Vec<Category> = Category::ALL.into_iter().filter(|&c| constant(c)).collect();
        if !drop.is_empty() && rows.iter().any(|(r, _)| !drop.contains(&r.s)) {
            log::debug!("prognostic fit drops constant-outcome categories {drop:?}");
            rows.retain(|(r, _)| !drop.contains(&r.s));
        }
    }

    let response = |r: &UnitRecord| -> f64 {
        let b = match kind {
            DiagnosticKind::Principal => r.s == Category::Lq,
            DiagnosticKind::Compliance => r.s == Category::E,
            DiagnosticKind::Prognostic => r.y,
        };
        f64::from(u8::from(b))
    };
    let y: Vec<f64> = rows.iter().map(|(r, _)| response(r)).collect();
    let w: Vec<f64> = rows.iter().map(|(r, _)| r.weight()).collect();
    let x = vec![rows.iter().map(|(_, x)| *x).collect::<Vec<f64>>()];

    let fit = match kind {
        DiagnosticKind::Prognostic => {
            let present: Vec<Category> = Category::ALL
                .into_iter()
                .filter(|&c| rows.iter().any(|(r, _)| r.s == c))
                .collect();
            let dummies: Vec<Vec<f64>> = present[1..]
                .iter()
                .map(|&c| rows.iter().map(|(r, _)| f64::from(u8::from(r.s == c))).collect())
                .collect();
            fit_nested(&y, &dummies, &x, &w)?
        }
        DiagnosticKind::Compliance => {
            let p0e = estimate_group_stats(ds)?.p(Arm::Control, Category::E);
            if p0e > COMPLIANCE_WARN_SHARE {
                warnings.push(format!(
                    "control program share {p0e:.3} exceeds {COMPLIANCE_WARN_SHARE}: take-up mixes in always-takers"
                ));
            }
            fit_logistic(&y, &x, &w)?
        }
        DiagnosticKind::Principal => fit_logistic(&y, &x, &w)?,
    };
    if fit.degenerate {
        warnings.push("response is constant in the subgroup; R² set to 0".into());
    }
    if fit.separated {
        warnings.push("perfect separation; R² set to 1".into());
    }
    if !fit.converged && !fit.separated {
        warnings.push(format!("did not converge in {} iterations", fit.iterations));
    }
    for msg in &warnings {
        log::warn!("{covariate} ({kind}): {msg}");
    }
    Ok(CovariateR2 {
        covariate: covariate.to_string(),
        kind,
        r2: mcfadden_r2(&fit)?,
        n: rows.len(),
        warnings,
        fit,
    })
}

/// Diagnostics for every (covariate, kind) pair.
pub fn diagnostic_table(ds: &Dataset, covariates: &[String], kinds: &[DiagnosticKind]) -> Result<Vec<CovariateR2>> {
    let mut out = Vec::new();
    for c in covariates {
        for &k in kinds {
            out.push(covariate_r2(ds, c, k)?);
        }
    }
    Ok(out)
}
