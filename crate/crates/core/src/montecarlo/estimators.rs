use serde::{Deserialize, Serialize};

use crate::criterion::Criterion;
use crate::model::ValidatedModel;
use crate::policy::FeedbackPolicy;

use super::paths::{InitialState, Simulator};
use super::{McError, PathConfig, PathStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    /// `J = −(1/θ)ln E[e^{−θ ln V_T}]`, with a delta-method standard error.
    pub value: PathStats,
    /// The sample of `e^{−θ ln V_T}`.
    pub raw: PathStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleCheck {
    pub stats: PathStats,
    /// `|mean − 1| ≤ 3·SE`.
    pub passed: bool,
}

fn simulator<'a>(
    model: &'a ValidatedModel,
    criterion: &Criterion,
    policy: &'a dyn FeedbackPolicy,
    x0: &[f64],
    cfg: &PathConfig,
) -> Result<Simulator<'a>, McError> {
    Simulator::new(model, criterion, policy, &InitialState::Fixed(x0.to_vec()), cfg)
}

/// Estimates the criterion of `policy` from `x0` under the physical measure.
pub fn estimate_value_direct(
    model: &ValidatedModel,
    criterion: &Criterion,
    policy: &dyn FeedbackPolicy,
    x0: &[f64],
    cfg: &PathConfig,
) -> Result<ValueEstimate, McError> {
    let sim = simulator(model, criterion, policy, x0, cfg)?;
    let theta = criterion.theta();
    let samples = sim.collect(|sim, i, s| Ok((-theta * sim.physical(i, s, None)?.log_wealth).exp()))?;
    let raw = PathStats::from_samples("raw_exponential_utility", &samples);
    let value = PathStats {
        estimator: "criterion_value".into(),
        mean: -raw.mean.ln() / theta,
        std_error: raw.std_error / (theta * raw.mean),
        num_paths: raw.num_paths,
    };
    Ok(ValueEstimate { value, raw })
}

/// Estimates `Φ̃(0, x0) = E[exp(θ∫g ds − θ ln v)]` with the factor driven by
/// the changed-measure drift and no jumps.
pub fn simulate_changed_measure(
    model: &ValidatedModel,
    criterion: &Criterion,
    policy: &dyn FeedbackPolicy,
    x0: &[f64],
    cfg: &PathConfig,
) -> Result<PathStats, McError> {
    let sim = simulator(model, criterion, policy, x0, cfg)?;
    let offset = sim.theta * sim.log_v;
    let samples = sim.collect(|sim, i, s| Ok((sim.changed(i, s)? - offset).exp()))?;
    Ok(PathStats::from_samples("changed_measure", &samples))
}

/// Sample mean of the density `χ_T` of the measure change.
pub fn martingale_check(
    model: &ValidatedModel,
    criterion: &Criterion,
    policy: &dyn FeedbackPolicy,
    x0: &[f64],
    cfg: &PathConfig,
) -> Result<MartingaleCheck, McError> {
    let sim = simulator(model, criterion, policy, x0, cfg)?;
    let samples = sim.collect(|sim, i, s| Ok(sim.physical(i, s, None)?.log_density.exp()))?;
    let stats = PathStats::from_samples("density_mean", &samples);
    let passed = stats.within(1.0, 3.0);
    Ok(MartingaleCheck { stats, passed })
}
