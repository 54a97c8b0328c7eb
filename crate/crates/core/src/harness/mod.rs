//! Simulation harness: data generators, Monte Carlo risk estimation,
//! resolvability oracles, the split-and-aggregate universal strategy and
//! rate sweeps.

mod estimators;
mod generator;
mod oracle;
mod risk;
mod strategy;
mod sweep;

pub use estimators::{
    AggregatorSpec, Estimator, EstimatorSpec, FittedModel, LinearPiece, MlsEstimator, OlsEstimator, Predictor, SelectionEstimator,
};
pub use generator::{generate, orthonormal_design, Dataset, DesignKind, GeneratorSpec, PreparedGenerator, TruthSpec};
pub use oracle::{resolvability_from_set, resolvability_oracle, OracleValue};
pub use risk::{estimate_risk, estimate_risk_detailed, RiskOptions, RiskReport, RiskRun, BudgetSpec};
pub use strategy::{universal_aggregate, Aggregator, StrategyConfig, UniversalEstimator, UniversalFit};
pub use sweep::{log_log_slope, rate_sweep, ExperimentConfig, SweepAxis, SweepRow, SweepTable};
