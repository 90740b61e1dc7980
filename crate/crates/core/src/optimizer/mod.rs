//! Penalized maximum-likelihood fitting: a trust-region inner solver and
//! UBRE smoothing-parameter selection, alternated until both settle.

mod fit;
mod smoothing;
mod trust_region;

pub use fit::{
    fit, fit_likelihood, fit_outcome_only, fit_selection_only, fit_with_options, starting_values, ConvergenceReport, CoreFit, CurvePoint,
    Equation, FitOptions, FittedModel, StartingValues, Structure, TermEdf,
};
pub use smoothing::{search_bfgs, search_coordinate, select_lambda, ubre, UbreEval, UbreState, LOG_LAMBDA_MAX, LOG_LAMBDA_MIN};
pub use trust_region::{solve_subproblem, trust_region_maximize, Objective, TrustRegionOptions, TrustRegionResult};
