//! Repeated availability-oblivious play: Hedge and Exp3 learners, the round
//! loop, empirical bid distributions and regret audits.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::availability::AvailabilityRealization;
use crate::error::{Error, Result};
use crate::mechanism::{BidProfile, ComposedScenario};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;

/// Multiplicative weights over a finite action set, kept in log space.
#[derive(Clone, Debug, PartialEq)]
pub struct Hedge<S> {
    log_weights: Vec<S>,
    step: S,
    range: S,
}

impl<S: Scalar> Hedge<S> {
    /// `step` multiplies `utility / range` in the exponent.
    pub fn new(actions: usize, step: S, range: S) -> Result<Self> {
        if actions == 0 {
            return Err(Error::Parameter("learner needs at least one action".into()));
        }
        if !(step >= S::zero()) || !(range > S::zero()) {
            return Err(Error::Parameter("step size must be nonnegative and range positive".into()));
        }
        Ok(Self {
            log_weights: vec![S::zero(); actions],
            step,
            range,
        })
    }

    /// `√(8 ln K / T)`.
    pub fn default_step(actions: usize, horizon: usize) -> S {
        (S::lit(8.0) * S::from_count(actions).ln() / S::from_count(horizon.max(1))).sqrt()
    }

    pub fn actions(&self) -> usize {
        self.log_weights.len()
    }

    pub fn step(&self) -> S {
        self.step
    }

    pub fn probabilities(&self) -> Vec<S> {
        softmax(&self.log_weights)
    }

    /// `w_a ← w_a · exp(step · u_a / range)`.
    pub fn update(&mut self, utilities: &[S]) -> Result<()> {
        if utilities.len() != self.actions() {
            return Err(Error::Parameter(format!(
                "{} utilities for {} actions",
                utilities.len(),
                self.actions()
            )));
        }
        check_range(utilities, self.range)?;
        for (w, &u) in self.log_weights.iter_mut().zip(utilities) {
            *w += self.step * u / self.range;
        }
        let max = self.log_weights.iter().copied().fold(S::neg_infinity(), S::max);
        for w in &mut self.log_weights {
            *w -= max;
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        sample_index(&self.probabilities(), rng)
    }
}

/// Importance-weighted Hedge for bandit feedback.
#[derive(Clone, Debug, PartialEq)]
pub struct Exp3<S> {
    log_weights: Vec<S>,
    gamma: S,
    range: S,
}

impl<S: Scalar> Exp3<S> {
    pub fn new(actions: usize, gamma: S, range: S) -> Result<Self> {
        if actions == 0 {
            return Err(Error::Parameter("learner needs at least one action".into()));
        }
        if !(gamma > S::zero() && gamma <= S::one()) || !(range > S::zero()) {
            return Err(Error::Parameter("exploration rate must lie in (0, 1]".into()));
        }
        Ok(Self {
            log_weights: vec![S::zero(); actions],
            gamma,
            range,
        })
    }

    /// `min(1, √(K ln K / ((e − 1) T)))`.
    pub fn default_gamma(actions: usize, horizon: usize) -> S {
        let k = S::from_count(actions.max(2));
        (k * k.ln() / ((S::e() - S::one()) * S::from_count(horizon.max(1))))
            .sqrt()
            .min(S::one())
    }

    pub fn probabilities(&self) -> Vec<S> {
        let k = S::from_count(self.log_weights.len());
        softmax(&self.log_weights)
            .into_iter()
            .map(|p| (S::one() - self.gamma) * p + self.gamma / k)
            .collect()
    }

    /// Feeds back the utility of the played action.
    pub fn update(&mut self, action: usize, utility: S) -> Result<()> {
        check_range(&[utility], self.range)?;
        let p = self.probabilities()[action];
        let gain = (utility / self.range + S::one()) / S::lit(2.0);
        let k = S::from_count(self.log_weights.len());
        self.log_weights[action] += self.gamma / k * gain / p;
        let max = self.log_weights.iter().copied().fold(S::neg_infinity(), S::max);
        for w in &mut self.log_weights {
            *w -= max;
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        sample_index(&self.probabilities(), rng)
    }
}

fn check_range<S: Scalar>(utilities: &[S], range: S) -> Result<()> {
    let limit = range * (S::one() + S::tolerance()) + S::tolerance();
    match utilities.iter().find(|u| !(u.abs() <= limit)) {
        Some(u) => Err(Error::Range {
            value: u.as_f64(),
            range: range.as_f64(),
        }),
        None => Ok(()),
    }
}

fn softmax<S: Scalar>(log_weights: &[S]) -> Vec<S> {
    let max = log_weights.iter().copied().fold(S::neg_infinity(), S::max);
    let w: Vec<S> = log_weights.iter().map(|&l| (l - max).exp()).collect();
    let total: S = w.iter().copied().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn sample_index<S: Scalar>(probs: &[S], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p.as_f64();
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Expected average regret bound of [`Hedge`] with the default step:
/// `2 · range · √(ln K / T)`.
pub fn hedge_regret_bound<S: Scalar>(range: S, actions: usize, horizon: usize) -> S {
    S::lit(2.0) * range * (S::from_count(actions).ln() / S::from_count(horizon.max(1))).sqrt()
}

/// Action set of a learner.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    /// One learner over the product of all per-mechanism grids.
    #[default]
    FullJoint,
    /// One learner per mechanism.
    Factored,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    /// Counterfactual utilities of every own action each round.
    #[default]
    Full,
    /// Only the realized utility (Exp3).
    Bandit,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct LearnerSpec<S> {
    #[serde(default)]
    pub action_space: ActionSpace,
    #[serde(default)]
    pub feedback: Feedback,
    /// Hedge step (applied to `u / range`) or Exp3 exploration rate; defaults
    /// to the horizon-tuned value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<S>,
    /// Bidders that observe availability and best-respond to it each round.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aware_bidders: Vec<usize>,
}

#[derive(Clone, Debug)]
enum Learner<S> {
    Hedge(Hedge<S>),
    Exp3(Exp3<S>),
}

impl<S: Scalar> Learner<S> {
    fn new(spec: &LearnerSpec<S>, actions: usize, horizon: usize, range: S) -> Result<Self> {
        Ok(match spec.feedback {
            Feedback::Full => Learner::Hedge(Hedge::new(
                actions,
                spec.step_size.unwrap_or_else(|| Hedge::default_step(actions, horizon)),
                range,
            )?),
            Feedback::Bandit => Learner::Exp3(Exp3::new(
                actions,
                spec.step_size.unwrap_or_else(|| Exp3::default_gamma(actions, horizon)),
                range,
            )?),
        })
    }

    fn sample(&self, rng: &mut Rng) -> usize {
        match self {
            Learner::Hedge(h) => h.sample(rng),
            Learner::Exp3(e) => e.sample(rng),
        }
    }

    fn update(&mut self, played: usize, utilities: impl FnOnce() -> Vec<S>, realized: S) -> Result<()> {
        match self {
            Learner::Hedge(h) => h.update(&utilities()),
            Learner::Exp3(e) => e.update(played, realized),
        }
    }
}

/// Per-round record of a repeated run, stored flat.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningTrace<S> {
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub aware_bidders: Vec<usize>,
    /// `rounds × n × m` grid indices.
    bids: Vec<u32>,
    /// `rounds × n × m`.
    available: Vec<bool>,
    /// `rounds × n × m` outcome elements.
    outcomes: Vec<u32>,
    /// `rounds × n × m`.
    payments: Vec<S>,
    /// `rounds × n`.
    utilities: Vec<S>,
}

impl<S: Scalar> LearningTrace<S> {
    pub fn rounds(&self) -> usize {
        self.utilities.len() / self.n.max(1)
    }

    fn cells(&self, t: usize) -> std::ops::Range<usize> {
        let c = self.n * self.m;
        t * c..(t + 1) * c
    }

    pub fn bids(&self, t: usize) -> Vec<usize> {
        self.bids[self.cells(t)].iter().map(|&b| b as usize).collect()
    }

    pub fn bid_profile(&self, t: usize) -> BidProfile {
        BidProfile::new(self.n, self.m, self.bids(t)).expect("trace dimensions")
    }

    pub fn availability(&self, t: usize) -> AvailabilityRealization {
        AvailabilityRealization::new(self.n, self.m, self.available[self.cells(t)].to_vec()).expect("trace dimensions")
    }

    pub fn outcomes(&self, t: usize) -> Vec<usize> {
        self.outcomes[self.cells(t)].iter().map(|&x| x as usize).collect()
    }

    pub fn utility(&self, t: usize, i: usize) -> S {
        self.utilities[t * self.n + i]
    }

    /// Total payment of bidder `i` in round `t`.
    pub fn payment(&self, t: usize, i: usize) -> S {
        let base = t * self.n * self.m + i * self.m;
        self.payments[base..base + self.m].iter().copied().sum()
    }

    /// Time-averaged utility of bidder `i`.
    pub fn average_utility(&self, i: usize) -> S {
        let t = self.rounds();
        (0..t).map(|r| self.utility(r, i)).sum::<S>() / S::from_count(t)
    }

    /// Row per (round, bidder, mechanism).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["round", "bidder", "mechanism", "bid", "available", "outcome", "payment", "utility"])?;
        for t in 0..self.rounds() {
            for i in 0..self.n {
                for j in 0..self.m {
                    let c = t * self.n * self.m + i * self.m + j;
                    out.write_record([
                        t.to_string(),
                        i.to_string(),
                        j.to_string(),
                        self.bids[c].to_string(),
                        u8::from(self.available[c]).to_string(),
                        self.outcomes[c].to_string(),
                        self.payments[c].to_string(),
                        self.utility(t, i).to_string(),
                    ])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs `horizon` rounds of oblivious learning.
pub fn run_repeated<S: Scalar>(
    scenario: &ComposedScenario<S>,
    spec: &LearnerSpec<S>,
    horizon: usize,
    seed: u64,
) -> Result<LearningTrace<S>> {
    run_repeated_with(scenario, spec, horizon, seed, |_, _| {})
}

/// [`run_repeated`] with a hook that may rewrite each round's availability
/// after bids are drawn.
pub fn run_repeated_with<S: Scalar>(
    scenario: &ComposedScenario<S>,
    spec: &LearnerSpec<S>,
    horizon: usize,
    seed: u64,
    mut hook: impl FnMut(usize, &mut AvailabilityRealization),
) -> Result<LearningTrace<S>> {
    if horizon == 0 {
        return Err(Error::Parameter("horizon must be at least 1".into()));
    }
    let (n, m) = (scenario.bidders(), scenario.mechanism_count());
    if let Some(&i) = spec.aware_bidders.iter().find(|&&i| i >= n) {
        return Err(Error::Parameter(format!("aware bidder {i} does not exist")));
    }
    let aware: Vec<bool> = (0..n).map(|i| spec.aware_bidders.contains(&i)).collect();
    let ranges: Vec<S> = (0..n).map(|i| scenario.utility_range(i)).collect();
    let mut learners: Vec<Vec<Learner<S>>> = (0..n)
        .map(|i| match spec.action_space {
            ActionSpace::FullJoint => Ok(vec![Learner::new(spec, scenario.joint_action_count(i), horizon, ranges[i])?]),
            ActionSpace::Factored => (0..m)
                .map(|j| Learner::new(spec, scenario.mechanism(j).grid(i).len(), horizon, ranges[i]))
                .collect(),
        })
        .collect::<Result<_>>()?;
    let mut bidder_rngs: Vec<Rng> = (0..n).map(|i| rng::bidder(seed, i)).collect();
    let mut avail_rng = rng::availability(seed);

    let cells = n * m;
    let mut trace = LearningTrace {
        n,
        m,
        seed,
        aware_bidders: spec.aware_bidders.clone(),
        bids: Vec::with_capacity(horizon * cells),
        available: Vec::with_capacity(horizon * cells),
        outcomes: Vec::with_capacity(horizon * cells),
        payments: Vec::with_capacity(horizon * cells),
        utilities: Vec::with_capacity(horizon * n),
    };
    let mut bids = vec![0usize; cells];
    let mut played = vec![vec![0usize; m]; n];
    let mut outcomes = vec![0usize; cells];
    let mut payments = vec![S::zero(); cells];
    let mut joint = vec![0usize; m];

    for t in 0..horizon {
        for i in 0..n {
            if aware[i] {
                continue;
            }
            match spec.action_space {
                ActionSpace::FullJoint => {
                    let a = learners[i][0].sample(&mut bidder_rngs[i]);
                    played[i][0] = a;
                    scenario.decode_joint(i, a, &mut joint);
                    bids[i * m..(i + 1) * m].copy_from_slice(&joint);
                }
                ActionSpace::Factored => {
                    for j in 0..m {
                        let a = learners[i][j].sample(&mut bidder_rngs[i]);
                        played[i][j] = a;
                        bids[i * m + j] = a;
                    }
                }
            }
        }
        let mut a = scenario.availability().sample_with(&mut avail_rng);
        hook(t, &mut a);
        for i in (0..n).filter(|&i| aware[i]) {
            bids[i * m..(i + 1) * m].fill(0);
        }
        for i in (0..n).filter(|&i| aware[i]) {
            let utilities = scenario.joint_action_utilities(i, &bids, &a);
            let best = utilities
                .iter()
                .enumerate()
                .fold(0, |b, (k, &u)| if u > utilities[b] + S::tolerance() { k } else { b });
            scenario.decode_joint(i, best, &mut joint);
            bids[i * m..(i + 1) * m].copy_from_slice(&joint);
        }
        scenario.apply_into(&bids, &a, &mut outcomes, &mut payments);
        let realized: Vec<S> = (0..n)
            .map(|i| {
                let row = &outcomes[i * m..(i + 1) * m];
                scenario.valuation(i).value(row) - payments[i * m..(i + 1) * m].iter().copied().sum::<S>()
            })
            .collect();

        for i in (0..n).filter(|&i| !aware[i]) {
            match spec.action_space {
                ActionSpace::FullJoint => {
                    learners[i][0].update(played[i][0], || scenario.joint_action_utilities(i, &bids, &a), realized[i])?;
                }
                ActionSpace::Factored => {
                    let table = scenario.own_bid_table(i, &bids, &a);
                    let mut x: Vec<usize> = outcomes[i * m..(i + 1) * m].to_vec();
                    let own_pay: S = payments[i * m..(i + 1) * m].iter().copied().sum();
                    for j in 0..m {
                        let current = x[j];
                        let base_pay = own_pay - payments[i * m + j];
                        let mut utilities = Vec::with_capacity(table[j].len());
                        for &(e, p) in &table[j] {
                            x[j] = e;
                            utilities.push(scenario.valuation(i).value(&x) - base_pay - p);
                        }
                        x[j] = current;
                        learners[i][j].update(played[i][j], || utilities, realized[i])?;
                    }
                }
            }
        }

        trace.bids.extend(bids.iter().map(|&b| b as u32));
        trace.available.extend_from_slice(a.cells());
        trace.outcomes.extend(outcomes.iter().map(|&x| x as u32));
        trace.payments.extend_from_slice(&payments);
        trace.utilities.extend_from_slice(&realized);
    }
    Ok(trace)
}

/// Independent runs for each seed, in parallel.
pub fn run_replicates<S: Scalar>(
    scenario: &ComposedScenario<S>,
    spec: &LearnerSpec<S>,
    horizon: usize,
    seeds: &[u64],
) -> Result<Vec<LearningTrace<S>>> {
    seeds
        .par_iter()
        .map(|&seed| run_repeated(scenario, spec, horizon, seed))
        .collect()
}

/// Time-averaged joint bid distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution<S> {
    pub support: Vec<(BidProfile, S)>,
}

impl<S: Scalar> EmpiricalDistribution<S> {
    pub fn point_mass(b: BidProfile) -> Self {
        Self {
            support: vec![(b, S::one())],
        }
    }

    pub fn uniform(profiles: Vec<BidProfile>) -> Self {
        let w = S::one() / S::from_count(profiles.len().max(1));
        Self {
            support: profiles.into_iter().map(|b| (b, w)).collect(),
        }
    }

    pub fn total_mass(&self) -> S {
        self.support.iter().map(|(_, p)| *p).sum()
    }

    pub fn sample(&self, rng: &mut Rng) -> &BidProfile {
        let probs: Vec<S> = self.support.iter().map(|(_, p)| *p).collect();
        &self.support[sample_index(&probs, rng)].0
    }
}

/// Frequencies of observed bid profiles, ordered by profile.
pub fn empirical_distribution<S: Scalar>(trace: &LearningTrace<S>) -> Result<EmpiricalDistribution<S>> {
    let t = trace.rounds();
    if t == 0 {
        return Err(Error::Parameter("empty trace".into()));
    }
    let cells = trace.n * trace.m;
    let mut counts: BTreeMap<&[u32], usize> = BTreeMap::new();
    for r in 0..t {
        *counts.entry(&trace.bids[r * cells..(r + 1) * cells]).or_default() += 1;
    }
    let total = S::from_count(t);
    Ok(EmpiricalDistribution {
        support: counts
            .into_iter()
            .map(|(bids, c)| {
                let b = BidProfile::new(trace.n, trace.m, bids.iter().map(|&x| x as usize).collect())
                    .expect("trace dimensions");
                (b, S::from_count(c) / total)
            })
            .collect(),
    })
}

/// Distribution over joint bids of one bidder, independent of availability.
pub type Deviation<S> = Vec<(Vec<usize>, S)>;

fn deviation_utility<S: Scalar>(
    scenario: &ComposedScenario<S>,
    i: usize,
    bids: &[usize],
    a: &AvailabilityRealization,
    deviation: &Deviation<S>,
    scratch: &mut Vec<usize>,
) -> S {
    let m = scenario.mechanism_count();
    scratch.clear();
    scratch.extend_from_slice(bids);
    let mut total = S::zero();
    let mut outcomes = vec![0; bids.len()];
    let mut payments = vec![S::zero(); bids.len()];
    for (row, p) in deviation {
        scratch[i * m..(i + 1) * m].copy_from_slice(row);
        scenario.apply_into(scratch, a, &mut outcomes, &mut payments);
        let pay: S = payments[i * m..(i + 1) * m].iter().copied().sum();
        total += *p * (scenario.valuation(i).value(&outcomes[i * m..(i + 1) * m]) - pay);
    }
    total
}

fn validate_deviation<S: Scalar>(scenario: &ComposedScenario<S>, i: usize, deviation: &Deviation<S>) -> Result<()> {
    if i >= scenario.bidders() {
        return Err(Error::Parameter(format!("bidder {i} does not exist")));
    }
    for (row, p) in deviation {
        if row.len() != scenario.mechanism_count()
            || row.iter().enumerate().any(|(j, &b)| b >= scenario.mechanism(j).grid(i).len())
        {
            return Err(Error::Parameter(format!("deviation bid {row:?} is off the grid")));
        }
        if !(*p >= S::zero()) {
            return Err(Error::Parameter("deviation probabilities must be nonnegative".into()));
        }
    }
    let total: S = deviation.iter().map(|(_, p)| *p).sum();
    if (total - S::one()).abs() > S::tolerance() * S::lit(1e3) {
        return Err(Error::Parameter(format!("deviation probabilities sum to {total}")));
    }
    Ok(())
}

/// Average gain of bidder `i` from replacing its played bids by `deviation`
/// in every round; positive means positive regret.
pub fn regret_against<S: Scalar>(
    scenario: &ComposedScenario<S>,
    trace: &LearningTrace<S>,
    i: usize,
    deviation: &Deviation<S>,
) -> Result<S> {
    validate_deviation(scenario, i, deviation)?;
    let mut scratch = Vec::new();
    let mut total = S::zero();
    for t in 0..trace.rounds() {
        let a = trace.availability(t);
        total += deviation_utility(scenario, i, &trace.bids(t), &a, deviation, &mut scratch) - trace.utility(t, i);
    }
    Ok(total / S::from_count(trace.rounds()))
}

/// Average regret of bidder `i` against every fixed joint action, in
/// [`ComposedScenario::decode_joint`] order.
pub fn fixed_action_regrets<S: Scalar>(scenario: &ComposedScenario<S>, trace: &LearningTrace<S>, i: usize) -> Vec<S> {
    let k = scenario.joint_action_count(i);
    let mut sums = vec![S::zero(); k];
    let mut realized = S::zero();
    for t in 0..trace.rounds() {
        let a = trace.availability(t);
        for (s, u) in sums.iter_mut().zip(scenario.joint_action_utilities(i, &trace.bids(t), &a)) {
            *s += u;
        }
        realized += trace.utility(t, i);
    }
    let t = S::from_count(trace.rounds());
    sums.into_iter().map(|s| (s - realized) / t).collect()
}

/// Largest average regret over all bidders and fixed joint actions.
pub fn max_fixed_action_regret<S: Scalar>(scenario: &ComposedScenario<S>, trace: &LearningTrace<S>) -> S {
    (0..scenario.bidders())
        .flat_map(|i| fixed_action_regrets(scenario, trace, i))
        .fold(S::neg_infinity(), S::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    Mc,
}

/// Candidate deviation of one bidder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BidderDeviation<S> {
    pub bidder: usize,
    pub distribution: Deviation<S>,
}

/// Every fixed joint action of every bidder.
pub fn fixed_action_deviations<S: Scalar>(scenario: &ComposedScenario<S>) -> Vec<BidderDeviation<S>> {
    let m = scenario.mechanism_count();
    let mut joint = vec![0; m];
    (0..scenario.bidders())
        .flat_map(|i| {
            (0..scenario.joint_action_count(i))
                .map(|a| {
                    scenario.decode_joint(i, a, &mut joint);
                    BidderDeviation {
                        bidder: i,
                        distribution: vec![(joint.clone(), S::one())],
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CceEntry<S> {
    pub bidder: usize,
    pub deviation: usize,
    pub gain: S,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CceReport<S> {
    pub mode: Mode,
    pub epsilon: S,
    pub samples: Option<usize>,
    /// 95% half-width of the largest gain estimate (Monte Carlo only).
    pub confidence_radius: Option<S>,
    pub entries: Vec<CceEntry<S>>,
    pub max_gain: S,
}

impl<S: Scalar> CceReport<S> {
    pub fn holds(&self) -> bool {
        self.entries.iter().all(|e| !e.flagged)
    }
}

/// Checks Def.-1 style deviations of `dist` combined with the scenario's
/// availability model; exact when the joint support fits `budget`, otherwise
/// `samples` Monte Carlo draws from `seed`.
pub fn verify_oblivious_cce<S: Scalar>(
    scenario: &ComposedScenario<S>,
    dist: &EmpiricalDistribution<S>,
    epsilon: S,
    deviations: &[BidderDeviation<S>],
    budget: u128,
    samples: usize,
    seed: u64,
) -> Result<CceReport<S>> {
    for d in deviations {
        validate_deviation(scenario, d.bidder, &d.distribution)?;
    }
    let avail_size = scenario.availability().support_size();
    let exact_size = avail_size.saturating_mul(dist.support.len() as u128);
    let mut scratch = Vec::new();
    let gain_at = |d: &BidderDeviation<S>, b: &BidProfile, a: &AvailabilityRealization, scratch: &mut Vec<usize>| {
        let bids = b.as_slice();
        let mut realized = vec![0; bids.len()];
        let mut pay = vec![S::zero(); bids.len()];
        scenario.apply_into(bids, a, &mut realized, &mut pay);
        let m = scenario.mechanism_count();
        let i = d.bidder;
        let u = scenario.valuation(i).value(&realized[i * m..(i + 1) * m]) - pay[i * m..(i + 1) * m].iter().copied().sum::<S>();
        deviation_utility(scenario, i, bids, a, &d.distribution, scratch) - u
    };
    let (mode, gains, radius, used) = if exact_size <= budget {
        let support = scenario.availability().enumerate_support(budget)?;
        let gains: Vec<S> = deviations
            .iter()
            .map(|d| {
                let mut g = S::zero();
                for (b, pb) in &dist.support {
                    for (a, pa) in &support {
                        g += *pb * *pa * gain_at(d, b, a, &mut scratch);
                    }
                }
                g
            })
            .collect();
        (Mode::Exact, gains, None, None)
    } else {
        if samples < 2 {
            return Err(Error::Parameter("Monte Carlo needs at least two samples".into()));
        }
        let mut draw_rng = rng::draws(seed);
        let mut avail_rng = rng::availability(seed);
        let draws: Vec<(BidProfile, AvailabilityRealization)> = (0..samples)
            .map(|_| {
                (
                    dist.sample(&mut draw_rng).clone(),
                    scenario.availability().sample_with(&mut avail_rng),
                )
            })
            .collect();
        let mut worst_radius = S::zero();
        let mut best_gain = S::neg_infinity();
        let gains: Vec<S> = deviations
            .iter()
            .map(|d| {
                let xs: Vec<S> = draws.iter().map(|(b, a)| gain_at(d, b, a, &mut scratch)).collect();
                let (mean, se) = mean_and_se(&xs);
                if mean > best_gain {
                    best_gain = mean;
                    worst_radius = S::lit(1.96) * se;
                }
                mean
            })
            .collect();
        (Mode::Mc, gains, Some(worst_radius), Some(samples))
    };
    let entries: Vec<CceEntry<S>> = deviations
        .iter()
        .zip(&gains)
        .enumerate()
        .map(|(k, (d, &gain))| CceEntry {
            bidder: d.bidder,
            deviation: k,
            gain,
            flagged: gain > epsilon + S::tolerance(),
        })
        .collect();
    Ok(CceReport {
        mode,
        epsilon,
        samples: used,
        confidence_radius: radius,
        max_gain: gains.iter().copied().fold(S::neg_infinity(), S::max),
        entries,
    })
}

/// Sample mean and its standard error.
pub fn mean_and_se<S: Scalar>(xs: &[S]) -> (S, S) {
    let n = S::from_count(xs.len());
    let mean = xs.iter().copied().sum::<S>() / n;
    if xs.len() < 2 {
        return (mean, S::zero());
    }
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / (n - S::one());
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::availability::AvailabilityModel;

    fn single_item(q: f64) -> ComposedScenario<f64> {
        let mech = crate::mechanism::Mechanism::first_price_auction(&[2.0], vec![0.0, 1.0, 2.0]).unwrap();
        let v = crate::valuation::Valuation::additive(crate::lattice::ProductLattice::boolean(1), vec![vec![0.0, 2.0]]).unwrap();
        ComposedScenario::new(vec![mech], vec![v], AvailabilityModel::independent(vec![vec![q]]).unwrap()).unwrap()
    }

    #[test]
    fn hedge_equal_utilities_keep_probabilities() {
        let mut h = Hedge::<f64>::new(3, 0.5, 1.0).unwrap();
        h.update(&[0.3, 0.3, 0.3]).unwrap();
        assert!(h.probabilities().iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn hedge_concentrates_on_better_action() {
        let t = 1000;
        let mut h = Hedge::<f64>::new(2, (2f64.ln() / t as f64).sqrt(), 1.0).unwrap();
        for _ in 0..t {
            h.update(&[1.0, 0.0]).unwrap();
        }
        assert!(h.probabilities()[0] > 0.95);
    }

    #[test]
    fn hedge_rejects_out_of_range() {
        let mut h = Hedge::<f64>::new(2, 0.1, 1.0).unwrap();
        assert!(matches!(h.update(&[2.0, 0.0]), Err(Error::Range { .. })));
    }

    #[test]
    fn single_bidder_learns_to_bid_one() {
        let s = single_item(1.0);
        let trace = run_repeated(&s, &LearnerSpec::default(), 2000, 3).unwrap();
        let late: f64 = (1500..2000).map(|t| trace.bids(t)[0] as f64).sum::<f64>() / 500.0;
        assert!((late - 1.0).abs() < 0.05, "late average bid {late}");
    }

    #[test]
    fn zero_availability_keeps_uniform_play() {
        let s = single_item(0.0);
        let trace = run_repeated(&s, &LearnerSpec::default(), 300, 1).unwrap();
        assert!((0..300).all(|t| trace.utility(t, 0) == 0.0));
        let counts = (0..300).fold([0; 3], |mut c, t| {
            c[trace.bids(t)[0]] += 1;
            c
        });
        assert!(counts.iter().all(|&c| c > 60), "{counts:?}");
    }

    #[test]
    fn bandit_and_factored_run() {
        let s = single_item(0.5);
        for spec in [
            LearnerSpec {
                feedback: Feedback::Bandit,
                ..Default::default()
            },
            LearnerSpec {
                action_space: ActionSpace::Factored,
                ..Default::default()
            },
            LearnerSpec {
                aware_bidders: vec![0],
                ..Default::default()
            },
        ] {
            let trace = run_repeated(&s, &spec, 200, 9).unwrap();
            assert_eq!(trace.rounds(), 200);
        }
    }

    #[test]
    fn aware_bidder_best_responds() {
        let s = single_item(0.5);
        let spec = LearnerSpec {
            aware_bidders: vec![0],
            ..Default::default()
        };
        let trace = run_repeated(&s, &spec, 100, 2).unwrap();
        for t in 0..100 {
            let expect = usize::from(trace.availability(t).get(0, 0));
            assert_eq!(trace.bids(t)[0], expect);
        }
    }

    #[test]
    fn empirical_distribution_point_mass() {
        let s = single_item(1.0);
        let trace = run_repeated(&s, &LearnerSpec::default(), 1, 0).unwrap();
        let d = empirical_distribution(&trace).unwrap();
        assert_eq!(d.support.len(), 1);
        assert_eq!(d.support[0].1, 1.0);
    }

    #[test]
    fn replaying_own_play_has_zero_regret() {
        let s = single_item(0.7);
        let trace = run_repeated(&s, &LearnerSpec::default(), 1, 4).unwrap();
        let own = vec![(trace.bids(0), 1.0)];
        assert!(regret_against(&s, &trace, 0, &own).unwrap().abs() < 1e-12);
    }

    #[test]
    fn cce_flags_dominated_profile() {
        let s = single_item(1.0);
        let dist = EmpiricalDistribution::point_mass(BidProfile::new(1, 1, vec![2]).unwrap());
        let devs = fixed_action_deviations(&s);
        let r = verify_oblivious_cce(&s, &dist, 0.0, &devs, 1_000, 0, 0).unwrap();
        assert!(!r.holds());
        assert_eq!(r.max_gain, 1.0);
        let r = verify_oblivious_cce(&s, &dist, 2.0, &devs, 1_000, 0, 0).unwrap();
        assert!(r.holds());
    }
}
