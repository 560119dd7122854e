//! Expected optimum, measured welfare of learning dynamics and the resulting
//! price-of-anarchy estimates.

pub mod lower_bound;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::availability::AvailabilityModel;
use crate::error::{Error, Result};
use crate::learning::{
    empirical_distribution, max_fixed_action_regret, mean_and_se, run_repeated, EmpiricalDistribution, LearnerSpec,
    LearningTrace, Mode,
};
use crate::mechanism::ComposedScenario;
use crate::rng;
use crate::scalar::Scalar;
use crate::smoothness::SmoothnessParams;

/// Estimate with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate<S> {
    pub value: S,
    pub mode: Mode,
    pub samples: Option<usize>,
    /// 95% half-width (Monte Carlo only).
    pub confidence_radius: Option<S>,
}

impl<S: Scalar> Estimate<S> {
    fn exact(value: S) -> Self {
        Self {
            value,
            mode: Mode::Exact,
            samples: None,
            confidence_radius: None,
        }
    }

    fn sampled(xs: &[S]) -> Self {
        let (value, se) = mean_and_se(xs);
        Self {
            value,
            mode: Mode::Mc,
            samples: Some(xs.len()),
            confidence_radius: Some(S::lit(1.96) * se),
        }
    }
}

/// `E_A[max_x Σ_i v_i(x)]`; Monte Carlo over `samples` realizations from
/// `seed` when the availability support exceeds `budget`.
pub fn expected_opt_welfare<S: Scalar>(
    scenario: &ComposedScenario<S>,
    budget: u128,
    samples: usize,
    seed: u64,
) -> Result<Estimate<S>> {
    let model = scenario.availability();
    if model.support_size() <= budget {
        let mut total = S::zero();
        for (a, p) in model.enumerate_support(budget)? {
            total += p * scenario.optimum(&a, budget)?.welfare;
        }
        return Ok(Estimate::exact(total));
    }
    if samples < 2 {
        return Err(Error::budget("availability support", model.support_size(), budget));
    }
    let mut rng = rng::availability(seed);
    let xs = (0..samples)
        .map(|_| Ok(scenario.optimum(&model.sample_with(&mut rng), budget)?.welfare))
        .collect::<Result<Vec<S>>>()?;
    Ok(Estimate::sampled(&xs))
}

/// Time average of realized welfare `Σ_i v_i(x_i)` over a trace.
pub fn welfare_of_trace<S: Scalar>(scenario: &ComposedScenario<S>, trace: &LearningTrace<S>) -> S {
    let m = scenario.mechanism_count();
    let t = trace.rounds();
    let total: S = (0..t)
        .map(|r| {
            let x = trace.outcomes(r);
            (0..scenario.bidders())
                .map(|i| scenario.valuation(i).value(&x[i * m..(i + 1) * m]))
                .sum::<S>()
        })
        .sum();
    total / S::from_count(t)
}

/// `E[Σ_i v_i(f(b))]` with `b ~ dist` and availability drawn independently
/// from the scenario's model.
pub fn expected_welfare<S: Scalar>(
    scenario: &ComposedScenario<S>,
    dist: &EmpiricalDistribution<S>,
    budget: u128,
    samples: usize,
    seed: u64,
) -> Result<Estimate<S>> {
    let (n, m) = (scenario.bidders(), scenario.mechanism_count());
    let model = scenario.availability();
    let mut outcomes = vec![0; n * m];
    let mut payments = vec![S::zero(); n * m];
    let welfare = |bids: &[usize], a: &crate::availability::AvailabilityRealization, outcomes: &mut [usize], payments: &mut [S]| -> S {
        scenario.apply_into(bids, a, outcomes, payments);
        (0..n).map(|i| scenario.valuation(i).value(&outcomes[i * m..(i + 1) * m])).sum()
    };
    let size = model.support_size().saturating_mul(dist.support.len() as u128);
    if size <= budget {
        let support = model.enumerate_support(budget)?;
        let mut total = S::zero();
        for (b, pb) in &dist.support {
            for (a, pa) in &support {
                total += *pb * *pa * welfare(b.as_slice(), a, &mut outcomes, &mut payments);
            }
        }
        return Ok(Estimate::exact(total));
    }
    if samples < 2 {
        return Err(Error::budget("welfare enumeration", size, budget));
    }
    let mut rng = rng::draws(seed);
    let xs: Vec<S> = (0..samples)
        .map(|_| {
            let a = model.sample_with(&mut rng);
            let b = dist.sample(&mut rng).clone();
            welfare(b.as_slice(), &a, &mut outcomes, &mut payments)
        })
        .collect();
    Ok(Estimate::sampled(&xs))
}

/// Which price-of-anarchy statement applies to an availability model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Independent,
    EverybodyOrNobody,
    Fixed,
}

impl BoundKind {
    pub fn of<S: Scalar>(model: &AvailabilityModel<S>) -> Self {
        match model {
            AvailabilityModel::Independent { .. } => BoundKind::Independent,
            AvailabilityModel::EverybodyOrNobody { .. } => BoundKind::EverybodyOrNobody,
            AvailabilityModel::Fixed { .. } => BoundKind::Fixed,
        }
    }

    /// Bound implied by `(λ, μ1, μ2)`-smoothness of every mechanism, with
    /// correlation gap `gamma` for independent availability.
    pub fn theorem_bound<S: Scalar>(self, params: &SmoothnessParams<S>, gamma: S) -> S {
        let base = params.poa_bound();
        match self {
            BoundKind::Independent => gamma * base,
            BoundKind::EverybodyOrNobody => S::lit(4.0) * S::dmr_gap() * base / params.lambda,
            BoundKind::Fixed => base,
        }
    }

    /// Constants quoted for simultaneous first-price auctions with
    /// submodular bidders: `e/(e−1)` with fixed availability, `1/(1−1/e)²`
    /// independent, `4/(1−1/e)³` everybody-or-nobody.
    pub fn first_price_bound<S: Scalar>(self) -> S {
        let g = S::dmr_gap();
        match self {
            BoundKind::Independent => g * g,
            BoundKind::EverybodyOrNobody => S::lit(4.0) * g * g * g,
            BoundKind::Fixed => g,
        }
    }
}

/// Extra ratio allowed by average regret `ε`: `10·ε·n / OPT` (infinite when
/// `OPT = 0 < ε`).
pub fn regret_slack<S: Scalar>(epsilon: S, bidders: usize, opt: S) -> S {
    let eps = epsilon.max(S::zero());
    if eps == S::zero() {
        S::zero()
    } else if opt > S::zero() {
        S::lit(10.0) * eps * S::from_count(bidders) / opt
    } else {
        S::infinity()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct PoAReport<S> {
    pub seed: u64,
    pub horizon: usize,
    pub expected_opt_welfare: S,
    /// Expected welfare of the empirical bid distribution under fresh
    /// availability.
    pub empirical_welfare: S,
    /// Time-averaged realized welfare of the run.
    pub trace_welfare: S,
    /// `expected_opt_welfare / empirical_welfare` (infinite if the latter is 0
    /// while the former is positive, 1 if both vanish).
    pub ratio: S,
    pub bound_kind: BoundKind,
    /// Bound from the certified smoothness parameters.
    pub theorem_bound: S,
    /// Bound the ratio is tested against.
    pub gate_bound: S,
    /// Largest average regret against a fixed joint action.
    pub epsilon: S,
    pub regret_slack: S,
    pub mode: Mode,
    /// Set when some bidders observe availability.
    pub aware_bidders: Vec<usize>,
    pub holds: bool,
}

/// How a PoA run is gated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct PoAGate<S> {
    /// Certified smoothness parameters of every mechanism.
    pub params: SmoothnessParams<S>,
    /// Correlation gap for independent availability.
    #[serde(default = "default_gamma")]
    pub gamma: S,
    /// Bound to gate on; defaults to the first-price constants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<S>,
}

fn default_gamma<S: Scalar>() -> S {
    S::dmr_gap()
}

impl<S: Scalar> Default for PoAGate<S> {
    fn default() -> Self {
        Self {
            params: SmoothnessParams {
                lambda: S::lit(0.5),
                mu1: S::one(),
                mu2: S::zero(),
            },
            gamma: S::dmr_gap(),
            bound: None,
        }
    }
}

fn ratio<S: Scalar>(opt: S, welfare: S) -> S {
    if welfare > S::zero() {
        opt / welfare
    } else if opt > S::zero() {
        S::infinity()
    } else {
        S::one()
    }
}

/// Runs the learning dynamics for one seed and compares the measured ratio
/// with the gate bound plus regret slack.
pub fn empirical_poa<S: Scalar>(
    scenario: &ComposedScenario<S>,
    spec: &LearnerSpec<S>,
    horizon: usize,
    seed: u64,
    gate: &PoAGate<S>,
    budget: u128,
) -> Result<(PoAReport<S>, LearningTrace<S>)> {
    gate.params.validate()?;
    let opt = expected_opt_welfare(scenario, budget, 100_000, seed)?;
    let trace = run_repeated(scenario, spec, horizon, seed)?;
    let report = poa_from_trace(scenario, &trace, opt.value, gate, budget)?;
    Ok((report, trace))
}

/// Report for an existing trace and a known expected optimum.
pub fn poa_from_trace<S: Scalar>(
    scenario: &ComposedScenario<S>,
    trace: &LearningTrace<S>,
    opt: S,
    gate: &PoAGate<S>,
    budget: u128,
) -> Result<PoAReport<S>> {
    let dist = empirical_distribution(trace)?;
    let welfare = expected_welfare(scenario, &dist, budget, 100_000, trace.seed)?;
    let kind = BoundKind::of(scenario.availability());
    let theorem_bound = kind.theorem_bound(&gate.params, gate.gamma);
    let gate_bound = gate.bound.unwrap_or_else(|| kind.first_price_bound());
    let epsilon = max_fixed_action_regret(scenario, trace).max(S::zero());
    let slack = regret_slack(epsilon, scenario.bidders(), opt);
    let r = ratio(opt, welfare.value);
    Ok(PoAReport {
        seed: trace.seed,
        horizon: trace.rounds(),
        expected_opt_welfare: opt,
        empirical_welfare: welfare.value,
        trace_welfare: welfare_of_trace(scenario, trace),
        ratio: r,
        bound_kind: kind,
        theorem_bound,
        gate_bound,
        epsilon,
        regret_slack: slack,
        mode: welfare.mode,
        aware_bidders: trace.aware_bidders.clone(),
        holds: r <= gate_bound + slack + S::tolerance(),
    })
}

/// [`empirical_poa`] for each seed, in parallel; reports are in seed order.
pub fn empirical_poa_sweep<S: Scalar>(
    scenario: &ComposedScenario<S>,
    spec: &LearnerSpec<S>,
    horizon: usize,
    seeds: &[u64],
    gate: &PoAGate<S>,
    budget: u128,
) -> Result<Vec<PoAReport<S>>> {
    gate.params.validate()?;
    let opt = expected_opt_welfare(scenario, budget, 100_000, seeds.first().copied().unwrap_or(0))?;
    seeds
        .par_iter()
        .map(|&seed| {
            let trace = run_repeated(scenario, spec, horizon, seed)?;
            poa_from_trace(scenario, &trace, opt.value, gate, budget)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::ProductLattice;
    use crate::mechanism::Mechanism;
    use crate::valuation::Valuation;

    fn single(q: f64) -> ComposedScenario<f64> {
        let mech = Mechanism::first_price(1, vec![0.0, 1.0, 2.0]).unwrap();
        let v = Valuation::additive(ProductLattice::boolean(1), vec![vec![0.0, 2.0]]).unwrap();
        ComposedScenario::new(vec![mech], vec![v], AvailabilityModel::independent(vec![vec![q]]).unwrap()).unwrap()
    }

    #[test]
    fn expected_opt_examples() {
        assert_eq!(expected_opt_welfare(&single(0.0), 100, 0, 0).unwrap().value, 0.0);
        assert_eq!(expected_opt_welfare(&single(0.5), 100, 0, 0).unwrap().value, 1.0);
    }

    #[test]
    fn trace_welfare_is_utilities_plus_payments() {
        let s = single(0.7);
        let trace = run_repeated(&s, &LearnerSpec::default(), 300, 4).unwrap();
        let direct: f64 = (0..trace.rounds())
            .map(|t| trace.utility(t, 0) + trace.payment(t, 0))
            .sum::<f64>()
            / 300.0;
        assert!((welfare_of_trace(&s, &trace) - direct).abs() < 1e-12);
    }

    #[test]
    fn single_bidder_ratio_approaches_one() {
        let s = single(1.0);
        let (r, _) = empirical_poa(&s, &LearnerSpec::default(), 4000, 1, &PoAGate::default(), 1 << 20).unwrap();
        assert!(r.ratio < 1.05, "{r:?}");
        assert!(r.holds);
    }

    #[test]
    fn slack_grows_with_regret() {
        assert_eq!(regret_slack(0.0, 2, 3.0), 0.0);
        assert!((regret_slack(0.03_f64, 2, 3.0) - 0.2).abs() < 1e-12);
        assert!(regret_slack(0.1_f64, 2, 0.0).is_infinite());
    }

    #[test]
    fn bounds_match_quoted_constants() {
        let e = std::f64::consts::E;
        let g = 1.0 / (1.0 - 1.0 / e);
        assert!((BoundKind::Independent.first_price_bound::<f64>() - g * g).abs() < 1e-12);
        assert!((BoundKind::EverybodyOrNobody.first_price_bound::<f64>() - 4.0 * g * g * g).abs() < 1e-12);
        let p = SmoothnessParams::new(0.5, 1.0, 0.0).unwrap();
        assert!((BoundKind::EverybodyOrNobody.theorem_bound(&p, g) - 4.0 * g * 2.0 / 0.5).abs() < 1e-12);
    }
}
