//! Per-level mean estimates and their ATE/ATTE compositions under three
//! constructions:
//!
//! - **IoC** — plain regression adjustment: average the fitted outcome over
//!   the evaluation rows.
//! - **IwC** — IoC plus an inverse-propensity-weighted residual correction,
//!   the estimator recovered from the orthogonal score functions.
//! - **DRE** — the classical doubly-robust estimator; with the empirical
//!   `m_j = N_j / N` its conditional form coincides with IwC, with an
//!   external `m_j` it differs (and is not orthogonal in that slot).
//!
//! Division guards come solely from propensity clipping in the learners;
//! nothing here winsorizes.

use serde::{Deserialize, Serialize};

use crate::data::{subpopulation, ObservationTable, TreatmentCoding};
use crate::error::{Error, Result};
use crate::learners::{OutcomeModel, PropensityModel};
use crate::numeric::CompensatedSum;

/// Estimator family tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Ioc,
    Iwc,
    Dre,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Ioc => "ioc",
            Self::Iwc => "iwc",
            Self::Dre => "dre",
        };
        write!(f, "{s}")
    }
}

/// The fitted nuisances plus the rows the estimators average over
/// (out-of-sample test rows in the benchmark protocol).
pub struct NuisanceBundle<'a> {
    pub outcome: &'a dyn OutcomeModel,
    pub propensity: &'a dyn PropensityModel,
    pub eval_rows: &'a [usize],
}

impl<'a> NuisanceBundle<'a> {
    pub fn new(
        outcome: &'a dyn OutcomeModel,
        propensity: &'a dyn PropensityModel,
        eval_rows: &'a [usize],
    ) -> Result<Self> {
        if eval_rows.is_empty() {
            return Err(Error::ShapeMismatch("eval_rows is empty".into()));
        }
        if outcome.n_levels() != propensity.n_levels() {
            return Err(Error::DimensionMismatch(format!(
                "outcome model has {} levels, propensity model {}",
                outcome.n_levels(),
                propensity.n_levels()
            )));
        }
        Ok(Self { outcome, propensity, eval_rows })
    }

    pub fn n_levels(&self) -> usize {
        self.outcome.n_levels()
    }
}

/// `theta_o^i`: mean of `g_hat(d^i, u, z)` over the evaluation rows.
pub fn theta_ioc(table: &ObservationTable, bundle: &NuisanceBundle, level: usize) -> Result<f64> {
    let mut s = CompensatedSum::new();
    for &r in bundle.eval_rows {
        s.add(bundle.outcome.predict(level, table.u_row(r), table.z_row(r))?);
    }
    Ok(s.value() / bundle.eval_rows.len() as f64)
}

/// `theta_o^{i|j}`: mean of `g_hat(d^i, ., .)` over the level-`given` rows.
pub fn theta_ioc_conditional(
    table: &ObservationTable,
    bundle: &NuisanceBundle,
    level: usize,
    given: usize,
) -> Result<f64> {
    let (rows_j, n_j) = subpopulation(table, given, Some(bundle.eval_rows));
    if n_j == 0 {
        return Err(Error::EmptyTreatedGroup(given));
    }
    let mut s = CompensatedSum::new();
    for &r in &rows_j {
        s.add(bundle.outcome.predict(level, table.u_row(r), table.z_row(r))?);
    }
    Ok(s.value() / n_j as f64)
}

/// `theta_w^i`: the IoC term plus the weighted residual correction
/// `(1/N) sum over rows with d = i of (y - g_hat(d^i,u,z)) / P_hat_i(x,z)`.
pub fn theta_iwc(table: &ObservationTable, bundle: &NuisanceBundle, level: usize) -> Result<f64> {
    Ok(theta_iwc_with_diagnostics(table, bundle, level)?.0)
}

/// Same as [`theta_iwc`], also reporting the largest IPW weight used.
pub fn theta_iwc_with_diagnostics(
    table: &ObservationTable,
    bundle: &NuisanceBundle,
    level: usize,
) -> Result<(f64, f64)> {
    let n = bundle.eval_rows.len() as f64;
    let mut s = CompensatedSum::new();
    let mut max_weight = 0.0_f64;
    for &r in bundle.eval_rows {
        s.add(bundle.outcome.predict(level, table.u_row(r), table.z_row(r))?);
    }
    for &r in bundle.eval_rows {
        if table.label(r) == level {
            let g = bundle.outcome.predict(level, table.u_row(r), table.z_row(r))?;
            let p = bundle.propensity.predict(table.x_row(r), table.z_row(r))?;
            let weight = 1.0 / p[level];
            max_weight = max_weight.max(weight);
            s.add((table.outcome(r) - g) * weight);
        }
    }
    Ok((s.value() / n, max_weight))
}

/// `theta_w^{i|j}`: `(1/N_j) { sum over level-j rows of g_hat(d^i,.,.)
/// + sum over level-i rows of (P_hat_j / P_hat_i)(y - g_hat(d^i,.,.)) }`.
pub fn theta_iwc_conditional(
    table: &ObservationTable,
    bundle: &NuisanceBundle,
    level: usize,
    given: usize,
) -> Result<f64> {
    let (_, n_j) = subpopulation(table, given, Some(bundle.eval_rows));
    if n_j == 0 {
        return Err(Error::EmptyTreatedGroup(given));
    }
    let mut s = CompensatedSum::new();
    for &r in bundle.eval_rows {
        let d = table.label(r);
        if d == given {
            s.add(bundle.outcome.predict(level, table.u_row(r), table.z_row(r))?);
        }
        if d == level {
            let g = bundle.outcome.predict(level, table.u_row(r), table.z_row(r))?;
            let p = bundle.propensity.predict(table.x_row(r), table.z_row(r))?;
            s.add(p[given] / p[level] * (table.outcome(r) - g));
        }
    }
    Ok(s.value() / n_j as f64)
}

/// Doubly-robust conditional estimate: the root of the empirical DR score
/// with the supplied marginal `m_j`. With `m_j = N_j / N` this equals
/// [`theta_iwc_conditional`] algebraically.
pub fn theta_dre_conditional(
    table: &ObservationTable,
    bundle: &NuisanceBundle,
    level: usize,
    given: usize,
    m_j: f64,
) -> Result<f64> {
    if !(m_j > 0.0) {
        return Err(Error::Domain(format!("m_j must be positive, got {m_j}")));
    }
    let (_, n_j) = subpopulation(table, given, Some(bundle.eval_rows));
    if n_j == 0 {
        return Err(Error::EmptyTreatedGroup(given));
    }
    let n = bundle.eval_rows.len() as f64;
    let mut s = CompensatedSum::new();
    for &r in bundle.eval_rows {
        let d = table.label(r);
        if d == given {
            s.add(bundle.outcome.predict(level, table.u_row(r), table.z_row(r))?);
        }
        if d == level {
            let g = bundle.outcome.predict(level, table.u_row(r), table.z_row(r))?;
            let p = bundle.propensity.predict(table.x_row(r), table.z_row(r))?;
            s.add(p[given] / p[level] * (table.outcome(r) - g));
        }
    }
    Ok(s.value() / (n * m_j))
}

/// Per-level means, conditional means, and the derived effect matrices.
/// `theta_given[i][j]` holds the counterfactual mean of level `i` over the
/// level-`j` sub-population; the diagonal holds factual means. Missing
/// sub-populations yield `None` rather than NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectTensor {
    pub theta: Vec<f64>,
    pub theta_given: Vec<Vec<Option<f64>>>,
    /// `ate[i][k] = theta[i] - theta[k]`; antisymmetric by construction.
    pub ate: Vec<Vec<f64>>,
    /// `atte[i][k][j] = theta_given[i][j] - theta_given[k][j]`.
    pub atte: Vec<Vec<Vec<Option<f64>>>>,
}

impl EffectTensor {
    pub fn from_thetas(theta: Vec<f64>, theta_given: Vec<Vec<Option<f64>>>) -> Self {
        let n = theta.len();
        let ate: Vec<Vec<f64>> =
            (0..n).map(|i| (0..n).map(|k| theta[i] - theta[k]).collect()).collect();
        let atte: Vec<Vec<Vec<Option<f64>>>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|k| {
                        (0..n)
                            .map(|j| match (theta_given[i][j], theta_given[k][j]) {
                                (Some(a), Some(b)) => Some(a - b),
                                _ => None,
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { theta, theta_given, ate, atte }
    }

    pub fn n_levels(&self) -> usize {
        self.theta.len()
    }
}

/// Largest inverse-propensity weights encountered while building a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct IpwDiagnostics {
    pub max_weight_unconditional: f64,
    pub max_ratio_conditional: f64,
}

/// Full set of estimates for one experiment: one [`EffectTensor`] per
/// estimator family plus counts and IPW diagnostics. Serializes to JSON with
/// level labels from the coding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub levels: Vec<f64>,
    pub n: usize,
    pub n_j: Vec<usize>,
    pub ioc: EffectTensor,
    pub iwc: EffectTensor,
    pub dre: EffectTensor,
    pub diagnostics: IpwDiagnostics,
}

impl EstimateReport {
    pub fn family(&self, family: Family) -> &EffectTensor {
        match family {
            Family::Ioc => &self.ioc,
            Family::Iwc => &self.iwc,
            Family::Dre => &self.dre,
        }
    }
}

/// Evaluates every estimator family over the evaluation rows.
///
/// Diagonals of `theta_given` are the factual outcome means per level (for
/// IwC this is also what the conditional formula reduces to at `i = j`).
/// Levels with no evaluation rows get `None` conditional entries. The DRE
/// unconditional estimator coincides with IwC and is aliased; its
/// conditional entries use the empirical `m_j = N_j / N`, which makes them
/// equal to IwC as well (the distinction matters only for external `m_j`).
pub fn full_report(
    table: &ObservationTable,
    bundle: &NuisanceBundle,
    coding: &TreatmentCoding,
) -> Result<EstimateReport> {
    let n_levels = bundle.n_levels();
    if coding.n_levels() != n_levels {
        return Err(Error::DimensionMismatch(format!(
            "coding has {} levels, models have {n_levels}",
            coding.n_levels()
        )));
    }
    let n = bundle.eval_rows.len();

    // Cache predictions and propensities over the eval rows.
    let mut g_hat = vec![vec![0.0; n_levels]; n];
    let mut p_hat = vec![Vec::new(); n];
    for (idx, &r) in bundle.eval_rows.iter().enumerate() {
        for (level, slot) in g_hat[idx].iter_mut().enumerate() {
            *slot = bundle.outcome.predict(level, table.u_row(r), table.z_row(r))?;
        }
        p_hat[idx] = bundle.propensity.predict(table.x_row(r), table.z_row(r))?;
    }
    let labels: Vec<usize> = bundle.eval_rows.iter().map(|&r| table.label(r)).collect();
    let ys: Vec<f64> = bundle.eval_rows.iter().map(|&r| table.outcome(r)).collect();

    let mut n_j = vec![0usize; n_levels];
    for &l in &labels {
        n_j[l] += 1;
    }

    let mut diagnostics = IpwDiagnostics::default();

    // Unconditional thetas.
    let mut theta_ioc_v = vec![0.0; n_levels];
    let mut theta_iwc_v = vec![0.0; n_levels];
    for level in 0..n_levels {
        let mut ioc = CompensatedSum::new();
        let mut corr = CompensatedSum::new();
        for idx in 0..n {
            ioc.add(g_hat[idx][level]);
            if labels[idx] == level {
                let w = 1.0 / p_hat[idx][level];
                diagnostics.max_weight_unconditional = diagnostics.max_weight_unconditional.max(w);
                corr.add((ys[idx] - g_hat[idx][level]) * w);
            }
        }
        theta_ioc_v[level] = ioc.value() / n as f64;
        theta_iwc_v[level] = (ioc.value() + corr.value()) / n as f64;
    }

    // Conditional matrices. Diagonal: factual mean of observed outcomes.
    let factual: Vec<Option<f64>> = (0..n_levels)
        .map(|j| {
            if n_j[j] == 0 {
                return None;
            }
            let mut s = CompensatedSum::new();
            for idx in 0..n {
                if labels[idx] == j {
                    s.add(ys[idx]);
                }
            }
            Some(s.value() / n_j[j] as f64)
        })
        .collect();

    let mut given_ioc = vec![vec![None; n_levels]; n_levels];
    let mut given_iwc = vec![vec![None; n_levels]; n_levels];
    for i in 0..n_levels {
        for j in 0..n_levels {
            if n_j[j] == 0 {
                continue;
            }
            if i == j {
                given_ioc[i][j] = factual[j];
                given_iwc[i][j] = factual[j];
                continue;
            }
            let mut base = CompensatedSum::new();
            let mut corr = CompensatedSum::new();
            for idx in 0..n {
                if labels[idx] == j {
                    base.add(g_hat[idx][i]);
                }
                if labels[idx] == i {
                    let ratio = p_hat[idx][j] / p_hat[idx][i];
                    diagnostics.max_ratio_conditional = diagnostics.max_ratio_conditional.max(ratio);
                    corr.add(ratio * (ys[idx] - g_hat[idx][i]));
                }
            }
            given_ioc[i][j] = Some(base.value() / n_j[j] as f64);
            given_iwc[i][j] = Some((base.value() + corr.value()) / n_j[j] as f64);
        }
    }

    let ioc = EffectTensor::from_thetas(theta_ioc_v, given_ioc);
    let iwc = EffectTensor::from_thetas(theta_iwc_v, given_iwc.clone());
    // DRE: unconditional score equals the IwC score; conditional entries use
    // the empirical m_j, which also reproduces IwC.
    let dre = EffectTensor::from_thetas(iwc.theta.clone(), given_iwc);

    Ok(EstimateReport {
        levels: coding.levels().to_vec(),
        n,
        n_j,
        ioc,
        iwc,
        dre,
        diagnostics,
    })
}
