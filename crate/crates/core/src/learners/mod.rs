//! Pluggable nuisance learners: outcome regressors `g_hat(d, u, z)` and the
//! multinomial-logistic propensity model `P_hat_i(x, z)`.
//!
//! Five outcome families are built in, each with fixed configured
//! hyperparameters and fully seeded, deterministic training:
//!
//! - **OLS** — exact least squares, minimum-norm on rank-deficient designs.
//! - **RIDGE** — penalized normal equations via SVD, intercept unpenalized.
//! - **LASSO** — cyclic coordinate descent with soft-thresholding.
//! - **RANDOM_FOREST** — CART regression trees on bootstrap resamples.
//! - **MLP** — fully-connected tanh net trained by mini-batch gradient
//!   descent on squared error.
//!
//! Linear families default to one regressor per treatment level; forest and
//! MLP default to a single joint regressor with the treatment index appended
//! as an input feature.

mod forest;
mod linear;
mod mlp;
mod propensity;

pub use forest::ForestParams;
pub use linear::{LassoPenalty, LinearFit};
pub use mlp::MlpParams;
pub use propensity::{
    clip_simplex, fit_propensity, FittedPropensityModel, PropensityConfig, PropensityFitInfo,
};

use serde::{Deserialize, Serialize};

use crate::data::ObservationTable;
use crate::error::{Error, Result};

/// Outcome regressor family tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeFamily {
    Ols,
    Ridge,
    Lasso,
    RandomForest,
    Mlp,
}

impl std::fmt::Display for OutcomeFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Ols => "ols",
            Self::Ridge => "ridge",
            Self::Lasso => "lasso",
            Self::RandomForest => "random_forest",
            Self::Mlp => "mlp",
        };
        write!(f, "{s}")
    }
}

/// Family plus hyperparameters. `per_level = None` picks the family default:
/// per-level fits for the linear families, a joint fit for forest and MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum OutcomeModelSpec {
    Ols {
        #[serde(default)]
        per_level: Option<bool>,
    },
    Ridge {
        lambda: f64,
        #[serde(default)]
        per_level: Option<bool>,
    },
    Lasso {
        penalty: LassoPenalty,
        #[serde(default = "default_lasso_tol")]
        tol: f64,
        #[serde(default = "default_lasso_sweeps")]
        max_sweeps: usize,
        #[serde(default)]
        per_level: Option<bool>,
    },
    RandomForest {
        #[serde(flatten)]
        params: ForestParams,
        #[serde(default)]
        per_level: Option<bool>,
    },
    Mlp {
        #[serde(flatten)]
        params: MlpParams,
        #[serde(default)]
        per_level: Option<bool>,
    },
}

fn default_lasso_tol() -> f64 {
    1e-10
}

fn default_lasso_sweeps() -> usize {
    10_000
}

impl OutcomeModelSpec {
    pub fn ols() -> Self {
        Self::Ols { per_level: None }
    }

    pub fn ridge_default() -> Self {
        Self::Ridge { lambda: 1e-6, per_level: None }
    }

    pub fn lasso_default() -> Self {
        Self::Lasso {
            penalty: LassoPenalty::FractionOfMax(1e-3),
            tol: default_lasso_tol(),
            max_sweeps: default_lasso_sweeps(),
            per_level: None,
        }
    }

    pub fn forest_default() -> Self {
        Self::RandomForest { params: ForestParams::default(), per_level: None }
    }

    pub fn mlp_default() -> Self {
        Self::Mlp { params: MlpParams::default(), per_level: None }
    }

    pub fn family(&self) -> OutcomeFamily {
        match self {
            Self::Ols { .. } => OutcomeFamily::Ols,
            Self::Ridge { .. } => OutcomeFamily::Ridge,
            Self::Lasso { .. } => OutcomeFamily::Lasso,
            Self::RandomForest { .. } => OutcomeFamily::RandomForest,
            Self::Mlp { .. } => OutcomeFamily::Mlp,
        }
    }

    /// Effective per-level flag after applying the family default.
    pub fn per_level(&self) -> bool {
        let explicit = match self {
            Self::Ols { per_level }
            | Self::Ridge { per_level, .. }
            | Self::Lasso { per_level, .. }
            | Self::RandomForest { per_level, .. }
            | Self::Mlp { per_level, .. } => *per_level,
        };
        explicit.unwrap_or(matches!(
            self.family(),
            OutcomeFamily::Ols | OutcomeFamily::Ridge | OutcomeFamily::Lasso
        ))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Ols { .. } => Ok(()),
            Self::Ridge { lambda, .. } => {
                if *lambda < 0.0 {
                    return Err(Error::InvalidConfig("ridge lambda must be >= 0".into()));
                }
                Ok(())
            }
            Self::Lasso { penalty, tol, max_sweeps, .. } => {
                penalty.validate()?;
                if *tol <= 0.0 || *max_sweeps == 0 {
                    return Err(Error::InvalidConfig("lasso tol must be > 0, max_sweeps >= 1".into()));
                }
                Ok(())
            }
            Self::RandomForest { params, .. } => params.validate(),
            Self::Mlp { params, .. } => params.validate(),
        }
    }
}

/// A fitted outcome regressor. Prediction is a pure, finite function of
/// `(level, u, z)`.
pub trait OutcomeModel: Sync {
    fn predict(&self, level: usize, u: &[f64], z: &[f64]) -> Result<f64>;
    fn n_levels(&self) -> usize;
}

/// A fitted propensity model: `(x, z)` to a clipped probability simplex over
/// the treatment levels.
pub trait PropensityModel: Sync {
    fn predict(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>>;
    fn n_levels(&self) -> usize;
}

/// Per-family learned parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ModelParams {
    Linear { fits: Vec<LinearFit> },
    Forest { forests: Vec<forest::Forest> },
    Mlp { nets: Vec<mlp::Mlp> },
}

/// A fitted outcome model: family tag, layout, and the learned parameters
/// (one entry per level when `per_level`, a single joint entry otherwise).
/// Serializes to a stable JSON schema via serde.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedOutcomeModel {
    pub family: OutcomeFamily,
    pub per_level: bool,
    pub n_levels: usize,
    pub p_u: usize,
    pub p_z: usize,
    params: ModelParams,
}

impl FittedOutcomeModel {
    /// Builds a per-level linear model directly from coefficient vectors
    /// (ordered `[u..., z...]`) and intercepts. Used for externally supplied
    /// fixtures and for replaying serialized models.
    pub fn from_linear_fits(family: OutcomeFamily, p_u: usize, p_z: usize, fits: Vec<LinearFit>) -> Self {
        let n_levels = fits.len();
        Self { family, per_level: true, n_levels, p_u, p_z, params: ModelParams::Linear { fits } }
    }

    /// Coefficients of the per-level linear fits, when this is a linear model.
    pub fn linear_fits(&self) -> Option<&[LinearFit]> {
        match &self.params {
            ModelParams::Linear { fits } => Some(fits),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    fn check_dims(&self, u: &[f64], z: &[f64], level: usize) -> Result<()> {
        if u.len() != self.p_u || z.len() != self.p_z {
            return Err(Error::DimensionMismatch(format!(
                "expected (p_u={}, p_z={}), got ({}, {})",
                self.p_u,
                self.p_z,
                u.len(),
                z.len()
            )));
        }
        if level >= self.n_levels {
            return Err(Error::DimensionMismatch(format!(
                "level {level} out of range (n_levels={})",
                self.n_levels
            )));
        }
        Ok(())
    }
}

impl OutcomeModel for FittedOutcomeModel {
    fn predict(&self, level: usize, u: &[f64], z: &[f64]) -> Result<f64> {
        self.check_dims(u, z, level)?;
        let mut features = Vec::with_capacity(self.p_u + self.p_z + 1);
        features.extend_from_slice(u);
        features.extend_from_slice(z);
        if !self.per_level {
            features.push(level as f64);
        }
        let idx = if self.per_level { level } else { 0 };
        let value = match &self.params {
            ModelParams::Linear { fits } => fits[idx].predict(&features),
            ModelParams::Forest { forests } => forests[idx].predict(&features),
            ModelParams::Mlp { nets } => nets[idx].predict(&features),
        };
        Ok(value)
    }

    fn n_levels(&self) -> usize {
        self.n_levels
    }
}

/// Trains an outcome regressor on the given rows. Deterministic in
/// `(spec, table, rows, seed)`.
pub fn fit_outcome_model(
    spec: &OutcomeModelSpec,
    table: &ObservationTable,
    rows: &[usize],
    seed: u64,
) -> Result<FittedOutcomeModel> {
    spec.validate()?;
    if rows.is_empty() {
        return Err(Error::ShapeMismatch("training rows are empty".into()));
    }
    let n_levels = table.max_label_plus_one().max(2);
    let per_level = spec.per_level();

    // Feature layout: [u..., z...] for per-level fits, [u..., z..., d] joint.
    let gather = |subset: &[usize], with_level: bool| -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut xs = Vec::with_capacity(subset.len());
        let mut ys = Vec::with_capacity(subset.len());
        for &r in subset {
            let mut f = Vec::with_capacity(table.p_u() + table.p_z() + 1);
            f.extend_from_slice(table.u_row(r));
            f.extend_from_slice(table.z_row(r));
            if with_level {
                f.push(table.label(r) as f64);
            }
            xs.push(f);
            ys.push(table.outcome(r));
        }
        (xs, ys)
    };

    let groups: Vec<Vec<usize>> = if per_level {
        let mut g = vec![Vec::new(); n_levels];
        for &r in rows {
            g[table.label(r)].push(r);
        }
        for (level, rows_l) in g.iter().enumerate() {
            if rows_l.is_empty() {
                return Err(Error::LevelMissingInTrain(level));
            }
        }
        g
    } else {
        vec![rows.to_vec()]
    };

    let params = match spec {
        OutcomeModelSpec::Ols { .. } => {
            let mut fits = Vec::with_capacity(groups.len());
            for g in &groups {
                let (xs, ys) = gather(g, !per_level);
                fits.push(linear::fit_ols(&xs, &ys)?);
            }
            ModelParams::Linear { fits }
        }
        OutcomeModelSpec::Ridge { lambda, .. } => {
            let mut fits = Vec::with_capacity(groups.len());
            for g in &groups {
                let (xs, ys) = gather(g, !per_level);
                fits.push(linear::fit_ridge(&xs, &ys, *lambda)?);
            }
            ModelParams::Linear { fits }
        }
        OutcomeModelSpec::Lasso { penalty, tol, max_sweeps, .. } => {
            let mut fits = Vec::with_capacity(groups.len());
            for g in &groups {
                let (xs, ys) = gather(g, !per_level);
                fits.push(linear::fit_lasso(&xs, &ys, penalty, *tol, *max_sweeps)?);
            }
            ModelParams::Linear { fits }
        }
        OutcomeModelSpec::RandomForest { params, .. } => {
            let mut forests = Vec::with_capacity(groups.len());
            for (k, g) in groups.iter().enumerate() {
                let (xs, ys) = gather(g, !per_level);
                let sub_seed = crate::numeric::splitmix64(seed ^ (k as u64).wrapping_add(0x51ab));
                forests.push(forest::fit_forest(&xs, &ys, params, sub_seed)?);
            }
            ModelParams::Forest { forests }
        }
        OutcomeModelSpec::Mlp { params, .. } => {
            let mut nets = Vec::with_capacity(groups.len());
            for (k, g) in groups.iter().enumerate() {
                let (xs, ys) = gather(g, !per_level);
                let sub_seed = crate::numeric::splitmix64(seed ^ (k as u64).wrapping_add(0x77cd));
                nets.push(mlp::fit_mlp(&xs, &ys, params, sub_seed)?);
            }
            ModelParams::Mlp { nets }
        }
    };

    Ok(FittedOutcomeModel {
        family: spec.family(),
        per_level,
        n_levels,
        p_u: table.p_u(),
        p_z: table.p_z(),
        params,
    })
}
