//! End-to-end estimation: nuisance fits, pseudo-outcomes, list search and
//! cost minimization.

use serde::{Deserialize, Serialize};

use crate::costmin::{min_cost_equivalent, MinCostOptions, MinCostResult};
use crate::data::{bin, build_grid, BinIndex, CutoffGrid, Dataset, GridPolicy};
use crate::error::Result;
use crate::models::{
    fit_outcome_weighted, fit_propensity_weighted, FittedOutcome, FittedPropensity, OutcomeSpec, Penalty,
    PropensitySpec,
};
use crate::regime::{CostModel, DecisionList};
use crate::scalar::Scalar;
use crate::search::{find_list, SearchConfig, SearchInput, SearchTrace};
use crate::value::{pseudo_outcomes, InfluenceModel, PseudoOutcomeMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FitConfig<T: Scalar = f64> {
    pub propensity: PropensitySpec,
    pub outcome: OutcomeSpec,
    pub grid: GridPolicy<T>,
    pub search: SearchConfig,
    /// Replace the searched list by its cheapest sample-equivalent.
    pub mincost: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs: Option<CostModel<T>>,
}

impl<T: Scalar> FitConfig<T> {
    /// Sample-proportion propensity and cross-validated LASSO outcome model.
    pub fn standard(data: &Dataset<T>, seed: u64) -> Self {
        FitConfig {
            propensity: PropensitySpec::SampleProportion,
            outcome: OutcomeSpec::lasso(data.outcome_kind(), seed),
            grid: GridPolicy::default(),
            search: SearchConfig::default(),
            mincost: true,
            costs: None,
        }
    }

    fn cost_model(&self, p: usize) -> CostModel<T> {
        self.costs.clone().unwrap_or_else(|| CostModel::uniform(p))
    }
}

/// A fitted pair of nuisance models with everything derived from them.
#[derive(Debug, Clone)]
pub struct Nuisance<T: Scalar = f64> {
    pub propensity: FittedPropensity,
    pub outcome: FittedOutcome,
    pub xi: PseudoOutcomeMatrix<T>,
    pub influence: InfluenceModel,
}

impl<T: Scalar> Nuisance<T> {
    pub fn fit(data: &Dataset<T>, propensity: &PropensitySpec, outcome: &OutcomeSpec) -> Result<Self> {
        Self::fit_weighted(data, propensity, outcome, &vec![1.0; data.n()])
    }

    /// Weighted fits; `xi` and `influence` describe `n^{-1} sum_i W_i xi_i`.
    pub fn fit_weighted(
        data: &Dataset<T>,
        propensity: &PropensitySpec,
        outcome: &OutcomeSpec,
        weights: &[f64],
    ) -> Result<Self> {
        let propensity = fit_propensity_weighted(data, propensity, weights)?;
        let outcome = fit_outcome_weighted(data, outcome, weights)?;
        Self::from_models(data, propensity, outcome, weights)
    }

    pub fn from_models(
        data: &Dataset<T>,
        propensity: FittedPropensity,
        outcome: FittedOutcome,
        weights: &[f64],
    ) -> Result<Self> {
        let xi = pseudo_outcomes(data, &propensity, &outcome).weighted(weights);
        let influence = InfluenceModel::weighted(data, &propensity, &outcome, weights)?;
        Ok(Nuisance {
            propensity,
            outcome,
            xi,
            influence,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FitResult<T: Scalar = f64> {
    pub config: FitConfig<T>,
    pub nuisance: Nuisance<T>,
    pub grid: CutoffGrid<T>,
    pub bins: BinIndex,
    /// Highest-valued list found by the search.
    pub searched: DecisionList<T>,
    pub trace: SearchTrace<T>,
    pub mincost: Option<MinCostResult<T>>,
    /// The reported regime: the cheapest equivalent when cost minimization ran.
    pub regime: DecisionList<T>,
    pub value: T,
    /// Plug-in variance of the estimated value, treating the regime as fixed.
    pub variance: f64,
    pub cost: T,
}

impl<T: Scalar> FitResult<T> {
    pub fn recommendations(&self, data: &Dataset<T>) -> Vec<usize> {
        self.regime.recommend(data.covariates())
    }
}

/// Runs the list search on fitted nuisances over a fixed grid.
pub fn search_nuisance<T: Scalar>(
    data: &Dataset<T>,
    nuisance: &Nuisance<T>,
    grid: &CutoffGrid<T>,
    bins: &BinIndex,
    config: &SearchConfig,
) -> Result<(DecisionList<T>, SearchTrace<T>)> {
    find_list(
        &SearchInput {
            covariates: data.covariates(),
            xi: &nuisance.xi,
            bins,
            grid,
            variance: &nuisance.influence,
        },
        config,
    )
}

pub fn fit<T: Scalar>(data: &Dataset<T>, config: &FitConfig<T>) -> Result<FitResult<T>> {
    config.search.validate()?;
    let nuisance = Nuisance::fit(data, &config.propensity, &config.outcome)?;
    fit_with_nuisance(data, config, nuisance)
}

/// Search and cost minimization on already fitted nuisances.
pub fn fit_with_nuisance<T: Scalar>(data: &Dataset<T>, config: &FitConfig<T>, nuisance: Nuisance<T>) -> Result<FitResult<T>> {
    let grid = build_grid(data.covariates(), &config.grid)?;
    let bins = bin(data.covariates(), &grid)?;
    let (searched, trace) = search_nuisance(data, &nuisance, &grid, &bins, &config.search)?;
    let costs = config.cost_model(data.p());
    let mincost = config.mincost.then(|| {
        min_cost_equivalent(
            &searched,
            data.covariates(),
            &costs,
            MinCostOptions::new(config.search.l_max.max(searched.len())),
        )
    });
    let regime = mincost.as_ref().map_or_else(|| searched.clone(), |r| r.list.clone());
    let recs = regime.recommend(data.covariates());
    let value = nuisance.xi.value_of(&recs);
    let variance = nuisance.influence.variance_of_value(&recs);
    let cost = costs.empirical_cost(&regime, data.covariates());
    Ok(FitResult {
        config: config.clone(),
        nuisance,
        grid,
        bins,
        searched,
        trace,
        mincost,
        regime,
        value,
        variance,
        cost,
    })
}

/// Outcome spec for refits that must reuse an already selected penalty.
pub fn frozen_outcome_spec(spec: &OutcomeSpec, fitted: &FittedOutcome) -> OutcomeSpec {
    let mut spec = spec.clone();
    if let (Penalty::Lasso(cfg), Some(lambda)) = (&mut spec.penalty, fitted.lambda()) {
        cfg.lambda = Some(lambda);
    }
    spec
}
