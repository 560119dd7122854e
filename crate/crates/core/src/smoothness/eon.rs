//! Deviation for everybody-or-nobody admission and numerical checks of the
//! inequalities chained in its analysis.

use std::collections::{BTreeMap, HashMap};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_budget, Error, Result};
use crate::learning::{mean_and_se, Deviation, EmpiricalDistribution, Mode};
use crate::mechanism::{BidProfile, ComposedScenario, MechValues};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::smoothness::{SmoothnessParams, WillingnessTable};

/// Marginals of the optimum conditioned on each mechanism being available.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimumDistribution<S> {
    /// `Pr[A_j = 1]`.
    pub q: Vec<S>,
    /// `per_mechanism[j]`: `(x_j^ℓ, r_j^ℓ)`, one per-bidder outcome of
    /// mechanism `j` with its conditional probability. Empty when `q_j = 0`.
    pub per_mechanism: Vec<Vec<(Vec<usize>, S)>>,
    /// `E[v_i(x*)]` per bidder.
    pub expected_values: Vec<S>,
}

impl<S: Scalar> OptimumDistribution<S> {
    pub fn expected_welfare(&self) -> S {
        self.expected_values.iter().copied().sum()
    }
}

/// Requires every realization in the support to have identical rows.
pub fn optimum_distribution<S: Scalar>(scenario: &ComposedScenario<S>, budget: u128) -> Result<OptimumDistribution<S>> {
    let (n, m) = (scenario.bidders(), scenario.mechanism_count());
    let model = scenario.availability();
    let mut tables: Vec<BTreeMap<Vec<usize>, S>> = vec![BTreeMap::new(); m];
    let mut expected_values = vec![S::zero(); n];
    let mut q = vec![S::zero(); m];
    for (a, p) in model.enumerate_support(budget)? {
        if !a.rows_identical() {
            return Err(Error::Parameter(
                "optimum distribution needs availability shared by all bidders".into(),
            ));
        }
        let opt = scenario.optimum(&a, budget)?;
        for (i, ev) in expected_values.iter_mut().enumerate() {
            *ev += p * scenario.valuation(i).value(&opt.bidder_outcome(i));
        }
        for j in 0..m {
            if a.get(0, j) {
                q[j] += p;
                *tables[j].entry(opt.per_mechanism[j].clone()).or_insert(S::zero()) += p;
            }
        }
    }
    let per_mechanism = tables
        .into_iter()
        .zip(&q)
        .map(|(t, &qj)| t.into_iter().map(|(x, p)| (x, p / qj)).collect())
        .collect();
    Ok(OptimumDistribution {
        q,
        per_mechanism,
        expected_values,
    })
}

/// Which bidder's `z` enters `w^i_{i',j}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WReading {
    /// `z^i` of the constructing bidder for every `i'`.
    #[default]
    Constructor,
    /// `z^{i'}` of the bidder whose value is being replaced; `t̃` stays `t̃^i`.
    Recipient,
}

/// One bidder's draws: `Some(ℓ)` selects `x_j^ℓ`, `None` is bottom.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EonDraws {
    pub z: Vec<Option<usize>>,
    pub t: Vec<Option<usize>>,
}

/// Realized deviation of one bidder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EonDeviation<S> {
    pub bidder: usize,
    /// `2 / λ`.
    pub alpha: S,
    pub draws: EonDraws,
    /// `z` as per-bidder outcomes, `[j][i']`.
    pub z: Vec<Vec<usize>>,
    /// `t̃` as per-bidder outcomes, `[j][i']`.
    pub t_tilde: Vec<Vec<usize>>,
    /// `w^i_{i',j}` indexed `[i'][j][e]`.
    pub w_tables: Vec<Vec<Vec<S>>>,
    pub bids: Vec<usize>,
}

/// Everything `w`, `z` and `t̃` depend on.
pub struct EonConstruction<'a, S> {
    scenario: &'a ComposedScenario<S>,
    dist: OptimumDistribution<S>,
    lambda: S,
    alpha: S,
    reading: WReading,
}

type Law<S> = Vec<(Option<usize>, S)>;

impl<'a, S: Scalar> EonConstruction<'a, S> {
    /// Rejects `λ ∉ (0, 2]`, where `r/α` would not be a distribution.
    pub fn new(scenario: &'a ComposedScenario<S>, lambda: S, reading: WReading, budget: u128) -> Result<Self> {
        if !(lambda > S::zero() && lambda <= S::lit(2.0)) {
            return Err(Error::Parameter(format!("lambda must lie in (0, 2], got {lambda}")));
        }
        let dist = optimum_distribution(scenario, budget)?;
        Ok(Self {
            scenario,
            dist,
            lambda,
            alpha: S::lit(2.0) / lambda,
            reading,
        })
    }

    pub fn lambda(&self) -> S {
        self.lambda
    }

    pub fn alpha(&self) -> S {
        self.alpha
    }

    pub fn optimum(&self) -> &OptimumDistribution<S> {
        &self.dist
    }

    fn law(&self, j: usize, scale: S) -> Law<S> {
        let mut law: Law<S> = self.dist.per_mechanism[j]
            .iter()
            .enumerate()
            .filter(|(_, (_, r))| *r > S::zero())
            .map(|(l, (_, r))| (Some(l), *r * scale))
            .collect();
        let rest = S::one() - law.iter().map(|(_, p)| *p).sum::<S>();
        if rest > S::tolerance() {
            law.push((None, rest));
        }
        law
    }

    /// Law of `z_j`: `x_j^ℓ` with probability `r_j^ℓ / α`.
    pub fn z_law(&self, j: usize) -> Law<S> {
        self.law(j, S::one() / self.alpha)
    }

    /// Law of `t̃_j`: `x_j^ℓ` with probability `q_j r_j^ℓ`.
    pub fn t_law(&self, j: usize) -> Law<S> {
        self.law(j, self.dist.q[j])
    }

    fn laws(&self) -> Vec<Law<S>> {
        let m = self.scenario.mechanism_count();
        (0..m).map(|j| self.z_law(j)).chain((0..m).map(|j| self.t_law(j))).collect()
    }

    pub fn draw_space_size(&self) -> u128 {
        self.laws().iter().fold(1u128, |acc, l| acc.saturating_mul(l.len() as u128))
    }

    /// Every draw with positive probability.
    pub fn enumerate_draws(&self, budget: u128) -> Result<Vec<(EonDraws, S)>> {
        check_budget("deviation draw space", self.draw_space_size(), budget)?;
        let laws = self.laws();
        let m = self.scenario.mechanism_count();
        let mut out = Vec::new();
        let mut choice = vec![0usize; laws.len()];
        loop {
            let picks: Vec<Option<usize>> = choice.iter().zip(&laws).map(|(&c, l)| l[c].0).collect();
            let p = choice.iter().zip(&laws).fold(S::one(), |acc, (&c, l)| acc * l[c].1);
            out.push((
                EonDraws {
                    z: picks[..m].to_vec(),
                    t: picks[m..].to_vec(),
                },
                p,
            ));
            let mut k = laws.len();
            loop {
                if k == 0 {
                    return Ok(out);
                }
                k -= 1;
                choice[k] += 1;
                if choice[k] < laws[k].len() {
                    break;
                }
                choice[k] = 0;
            }
        }
    }

    pub fn sample_draws(&self, rng: &mut Rng) -> EonDraws {
        let m = self.scenario.mechanism_count();
        let mut pick = |law: Law<S>| -> Option<usize> {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (x, p) in &law {
                acc += p.as_f64();
                if u < acc {
                    return *x;
                }
            }
            law.last().and_then(|(x, _)| *x)
        };
        let z = (0..m).map(|j| pick(self.z_law(j))).collect();
        let t = (0..m).map(|j| pick(self.t_law(j))).collect();
        EonDraws { z, t }
    }

    fn outcome(&self, j: usize, choice: Option<usize>, k: usize) -> usize {
        match choice {
            Some(l) => self.dist.per_mechanism[j][l].0[k],
            None => self.scenario.mechanism(j).outcome_lattice(k).bottom(),
        }
    }

    /// `t̃` as bidder `k`'s outcome vector.
    pub fn t_vector(&self, k: usize, draws: &EonDraws) -> Vec<usize> {
        (0..self.scenario.mechanism_count())
            .map(|j| self.outcome(j, draws.t[j], k))
            .collect()
    }

    /// `w_{k,j}(e) = v_k(t̃_{<j}, e ∧ z_j, ⊥) − v_k(t̃_{<j}, ⊥)` with `t̃` from
    /// `t_source` and `z` from `z_source`.
    pub fn w_table(&self, k: usize, j: usize, t_source: &EonDraws, z_source: &EonDraws) -> Vec<S> {
        let m = self.scenario.mechanism_count();
        let v = self.scenario.valuation(k);
        let mut x: Vec<usize> = (0..m)
            .map(|c| {
                if c < j {
                    self.outcome(c, t_source.t[c], k)
                } else {
                    self.scenario.mechanism(c).outcome_lattice(k).bottom()
                }
            })
            .collect();
        let base = v.value(&x);
        let lattice = self.scenario.mechanism(j).outcome_lattice(k);
        let zc = self.outcome(j, z_source.z[j], k);
        (0..lattice.len())
            .map(|e| {
                x[j] = lattice.meet(e, zc);
                v.value(&x) - base
            })
            .collect()
    }

    /// Value profile bidder `i` pretends everybody has on mechanism `j`.
    /// `draws[k]` are bidder `k`'s draws; only `draws[i]` is read under the
    /// constructor reading.
    pub fn values_for(&self, i: usize, j: usize, draws: &[EonDraws]) -> MechValues<S> {
        (0..self.scenario.bidders())
            .map(|k| {
                let z_source = match self.reading {
                    WReading::Constructor => &draws[i],
                    WReading::Recipient => &draws[k],
                };
                self.w_table(k, j, &draws[i], z_source)
            })
            .collect()
    }

    /// Joint deviation bid of bidder `i`.
    pub fn deviation_bids(&self, i: usize, draws: &[EonDraws]) -> Result<Vec<usize>> {
        (0..self.scenario.mechanism_count())
            .map(|j| Ok(self.scenario.mechanism(j).deviation(&self.values_for(i, j, draws), None)?[i]))
            .collect()
    }

    fn realize(&self, i: usize, draws: &[EonDraws]) -> Result<EonDeviation<S>> {
        let (n, m) = (self.scenario.bidders(), self.scenario.mechanism_count());
        let own = &draws[i];
        let w_tables = (0..n)
            .map(|k| {
                (0..m)
                    .map(|j| {
                        let z_source = match self.reading {
                            WReading::Constructor => own,
                            WReading::Recipient => &draws[k],
                        };
                        self.w_table(k, j, own, z_source)
                    })
                    .collect()
            })
            .collect();
        Ok(EonDeviation {
            bidder: i,
            alpha: self.alpha,
            draws: own.clone(),
            z: (0..m).map(|j| (0..n).map(|k| self.outcome(j, own.z[j], k)).collect()).collect(),
            t_tilde: (0..m).map(|j| (0..n).map(|k| self.outcome(j, own.t[j], k)).collect()).collect(),
            w_tables,
            bids: self.deviation_bids(i, draws)?,
        })
    }

    /// Exact law of bidder `i`'s deviation bid.
    pub fn bid_distribution(&self, i: usize, budget: u128) -> Result<Deviation<S>> {
        let mut law: BTreeMap<Vec<usize>, S> = BTreeMap::new();
        for (draws, p) in self.joint_draws(budget)? {
            *law.entry(self.deviation_bids(i, &draws)?).or_insert(S::zero()) += p;
        }
        Ok(law.into_iter().collect())
    }

    /// Draw vectors relevant to one bidder's deviation with their
    /// probabilities: the bidder's own draws (copied into every slot) under the
    /// constructor reading, every bidder's draws otherwise.
    fn joint_draws(&self, budget: u128) -> Result<Vec<(Vec<EonDraws>, S)>> {
        let n = self.scenario.bidders();
        let single = self.enumerate_draws(budget)?;
        match self.reading {
            WReading::Constructor => Ok(single.into_iter().map(|(d, p)| (vec![d; n], p)).collect()),
            WReading::Recipient => {
                let size = (single.len() as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
                check_budget("joint deviation draws", size, budget)?;
                let mut out: Vec<(Vec<EonDraws>, S)> = vec![(Vec::new(), S::one())];
                for _ in 0..n {
                    out = out
                        .into_iter()
                        .flat_map(|(ds, p)| {
                            single.iter().map(move |(d, q)| {
                                let mut next = ds.clone();
                                next.push(d.clone());
                                (next, p * *q)
                            })
                        })
                        .collect();
                }
                Ok(out)
            }
        }
    }

    /// Quantities of bidder `i` that do not depend on availability or bids.
    fn prepare(&self, i: usize, draws: &[EonDraws]) -> Result<Prepared<S>> {
        let m = self.scenario.mechanism_count();
        let own = &draws[i];
        let w: Vec<Vec<S>> = (0..m).map(|j| self.w_table(i, j, own, own)).collect();
        let w_z = (0..m)
            .map(|j| self.dist.q[j] * w[j][self.outcome(j, own.z[j], i)])
            .sum();
        Ok(Prepared {
            bids: self.deviation_bids(i, draws)?,
            v_t: self.scenario.valuation(i).value(&self.t_vector(i, own)),
            w_z,
            w,
        })
    }
}

struct Prepared<S> {
    bids: Vec<usize>,
    /// Own `w^i_{i,j}` tables.
    w: Vec<Vec<S>>,
    /// `v_i(t̃^i)`.
    v_t: S,
    /// `Σ_j q_j w^i_{i,j}(z^i_j)`.
    w_z: S,
}

/// Draws `z^i, t̃^i` from `seed` (every bidder draws from its own stream) and
/// returns the realized deviation together with the exact law of its bid.
pub fn build_eon_deviation<S: Scalar>(
    scenario: &ComposedScenario<S>,
    i: usize,
    lambda: S,
    seed: u64,
    reading: WReading,
    budget: u128,
) -> Result<(EonDeviation<S>, Deviation<S>)> {
    if i >= scenario.bidders() {
        return Err(Error::Parameter(format!("bidder {i} does not exist")));
    }
    let c = EonConstruction::new(scenario, lambda, reading, budget)?;
    let draws: Vec<EonDraws> = (0..scenario.bidders())
        .map(|k| c.sample_draws(&mut rng::bidder(seed, k)))
        .collect();
    Ok((c.realize(i, &draws)?, c.bid_distribution(i, budget)?))
}

/// One side-by-side comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck<S> {
    pub name: String,
    pub bidder: Option<usize>,
    /// Equality rather than `lhs ≥ rhs`.
    pub equality: bool,
    pub lhs: S,
    pub rhs: S,
    /// `lhs − rhs` (mean of paired differences in Monte Carlo mode).
    pub slack: S,
    pub std_error: Option<S>,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct LemmaChainReport<S> {
    pub mode: Mode,
    pub reading: WReading,
    pub params: SmoothnessParams<S>,
    pub alpha: S,
    pub samples: Option<usize>,
    /// `Σ_i E[v_i(x*)]`.
    pub expected_opt_value: S,
    pub checks: Vec<LemmaCheck<S>>,
}

impl<S: Scalar> LemmaChainReport<S> {
    pub fn holds(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    pub fn check(&self, name: &str, bidder: Option<usize>) -> Option<&LemmaCheck<S>> {
        self.checks.iter().find(|c| c.name == name && c.bidder == bidder)
    }
}

#[derive(Clone, Debug)]
pub struct ChainOptions {
    pub mode: Mode,
    /// Monte Carlo sample count.
    pub samples: usize,
    pub seed: u64,
    pub reading: WReading,
    pub budget: u128,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Exact,
            samples: 100_000,
            seed: 0,
            reading: WReading::Constructor,
            budget: crate::DEFAULT_BUDGET,
        }
    }
}

/// Per-realization left and right sides of every check, in report order.
struct Sides<S> {
    names: Vec<(String, Option<usize>, bool)>,
    lhs: Vec<S>,
    rhs: Vec<S>,
}

/// Checks, for bids `b` drawn from `opponents` independently of the
/// deviation draws and availability:
///
/// * `value_bound`: `E[v_i(f(b'_i, b_−i))] ≥ Σ_j E[w^i_{i,j}(f_j)] − E[v_i(t̃^i)]/(α(α+1))`
/// * `w_smoothness`: `Σ_i Σ_j E[w^i_{i,j}(f_j) − p_{i,j}] ≥ λ Σ_i Σ_j q_j E[w^i_{i,j}(z^i_j)] − μ1 Σ E[p_i(b)] − μ2 Σ E[h_i]`
/// * `w_expectation`: `Σ_j q_j E[w^i_{i,j}(z^i_j)] = E[v_i(t̃^i)]/α`
/// * `aggregate`: `Σ_i E[u_i(b'_i, b_−i)] ≥ (1 − 1/e)(λ²/4) Σ_i E[v_i(x*)] − μ1 Σ E[p_i(b)] − μ2 Σ E[h_i]`
///
/// Each bidder's own draws stand in for the common representative draw.
pub fn check_lemma_chain_eon<S: Scalar>(
    scenario: &ComposedScenario<S>,
    params: SmoothnessParams<S>,
    opponents: &EmpiricalDistribution<S>,
    opts: &ChainOptions,
) -> Result<LemmaChainReport<S>> {
    params.validate()?;
    if opponents.support.is_empty() {
        return Err(Error::Parameter("opponent bid distribution is empty".into()));
    }
    for (b, _) in &opponents.support {
        scenario.validate_profile(b)?;
    }
    let c = EonConstruction::new(scenario, params.lambda, opts.reading, opts.budget)?;
    let (n, m) = (scenario.bidders(), scenario.mechanism_count());
    let wtp: Option<Vec<WillingnessTable<S>>> = if params.mu2 > S::zero() {
        Some(scenario.mechanisms().iter().map(WillingnessTable::new).collect::<Result<_>>()?)
    } else {
        None
    };
    let alpha = c.alpha;
    let opt_value = c.dist.expected_welfare();
    let gap = S::one() - S::one() / S::e();
    let agg_target = gap * params.lambda * params.lambda / S::lit(4.0) * opt_value;

    let mut names = Vec::new();
    for i in 0..n {
        names.push(("value_bound".to_string(), Some(i), false));
    }
    for i in 0..n {
        names.push(("w_expectation".to_string(), Some(i), true));
    }
    names.push(("w_smoothness".to_string(), None, false));
    names.push(("aggregate".to_string(), None, false));
    let k = names.len();
    let (l3, agg) = (2 * n, 2 * n + 1);

    // Terms of (A, b) shared by all bidders: μ1 Σ p_i(b) + μ2 Σ h_i.
    let mut outcomes = vec![0; n * m];
    let mut payments = vec![S::zero(); n * m];
    let mut global = |b: &BidProfile, a: &crate::availability::AvailabilityRealization| -> S {
        scenario.apply_into(b.as_slice(), a, &mut outcomes, &mut payments);
        let mut g = params.mu1 * payments.iter().copied().sum::<S>();
        if let Some(tables) = &wtp {
            let mut col = vec![0; n];
            for (j, t) in tables.iter().enumerate() {
                for (i, cj) in col.iter_mut().enumerate() {
                    *cj = outcomes[i * m + j];
                }
                for i in 0..n {
                    let bid = if a.get(i, j) { b.get(i, j) } else { 0 };
                    g += params.mu2 * t.get(i, bid, &col);
                }
            }
        }
        g
    };
    let mut dev_out = vec![0; n * m];
    let mut dev_pay = vec![S::zero(); n * m];
    let mut bidder_terms =
        |i: usize, prep: &Prepared<S>, b: &BidProfile, a: &crate::availability::AvailabilityRealization, lhs: &mut [S], rhs: &mut [S], w: S| {
            let mut bids = b.as_slice().to_vec();
            bids[i * m..(i + 1) * m].copy_from_slice(&prep.bids);
            scenario.apply_into(&bids, a, &mut dev_out, &mut dev_pay);
            let row = &dev_out[i * m..(i + 1) * m];
            let v_dev = scenario.valuation(i).value(row);
            let pay_dev: S = dev_pay[i * m..(i + 1) * m].iter().copied().sum();
            let w_dev: S = (0..m).map(|j| prep.w[j][row[j]]).sum();
            lhs[i] += w * v_dev;
            rhs[i] += w * (w_dev - prep.v_t / (alpha * (alpha + S::one())));
            lhs[n + i] += w * prep.w_z;
            rhs[n + i] += w * prep.v_t / alpha;
            lhs[l3] += w * (w_dev - pay_dev);
            rhs[l3] += w * params.lambda * prep.w_z;
            lhs[agg] += w * (v_dev - pay_dev);
        };

    let model = scenario.availability();
    let (sides, samples) = match opts.mode {
        Mode::Exact => {
            let support = model.enumerate_support(opts.budget)?;
            let per_bidder: Vec<Vec<(S, Prepared<S>)>> = (0..n)
                .map(|i| {
                    c.joint_draws(opts.budget)?
                        .into_iter()
                        .map(|(d, p)| Ok((p, c.prepare(i, &d)?)))
                        .collect::<Result<_>>()
                })
                .collect::<Result<_>>()?;
            let draw_terms: u128 = per_bidder.iter().map(|v| v.len() as u128).sum();
            check_budget(
                "lemma chain enumeration",
                (support.len() as u128)
                    .saturating_mul(opponents.support.len() as u128)
                    .saturating_mul(draw_terms),
                opts.budget,
            )?;
            let mut lhs = vec![S::zero(); k];
            let mut rhs = vec![S::zero(); k];
            for (a, pa) in &support {
                for (b, pb) in &opponents.support {
                    let w_ab = *pa * *pb;
                    let g = global(b, a);
                    rhs[l3] -= w_ab * g;
                    rhs[agg] -= w_ab * g;
                    for (i, preps) in per_bidder.iter().enumerate() {
                        for (p, prep) in preps {
                            bidder_terms(i, prep, b, a, &mut lhs, &mut rhs, w_ab * *p);
                        }
                    }
                }
            }
            rhs[agg] += agg_target;
            (
                Sides { names, lhs, rhs },
                None,
            )
        }
        Mode::Mc => {
            if opts.samples < 2 {
                return Err(Error::Parameter("Monte Carlo needs at least two samples".into()));
            }
            let mut rng = rng::draws(opts.seed);
            let mut cache: HashMap<(usize, Vec<EonDraws>), Prepared<S>> = HashMap::new();
            let mut lhs_s = vec![Vec::with_capacity(opts.samples); k];
            let mut rhs_s = vec![Vec::with_capacity(opts.samples); k];
            for _ in 0..opts.samples {
                let a = model.sample_with(&mut rng);
                let b = opponents.sample(&mut rng).clone();
                let draws: Vec<EonDraws> = (0..n).map(|_| c.sample_draws(&mut rng)).collect();
                let mut lhs = vec![S::zero(); k];
                let mut rhs = vec![S::zero(); k];
                let g = global(&b, &a);
                rhs[l3] -= g;
                rhs[agg] += agg_target - g;
                for i in 0..n {
                    let key = match opts.reading {
                        WReading::Constructor => (i, vec![draws[i].clone()]),
                        WReading::Recipient => (i, draws.clone()),
                    };
                    if !cache.contains_key(&key) {
                        let prep = c.prepare(i, &draws)?;
                        cache.insert(key.clone(), prep);
                    }
                    bidder_terms(i, &cache[&key], &b, &a, &mut lhs, &mut rhs, S::one());
                }
                for x in 0..k {
                    lhs_s[x].push(lhs[x]);
                    rhs_s[x].push(rhs[x]);
                }
            }
            return Ok(finish_mc(names, lhs_s, rhs_s, params, alpha, opt_value, opts));
        }
    };
    let tol = S::tolerance();
    let checks = sides
        .names
        .into_iter()
        .enumerate()
        .map(|(x, (name, bidder, equality))| {
            let slack = sides.lhs[x] - sides.rhs[x];
            LemmaCheck {
                name,
                bidder,
                equality,
                lhs: sides.lhs[x],
                rhs: sides.rhs[x],
                slack,
                std_error: None,
                holds: if equality { slack.abs() <= tol } else { slack >= -tol },
            }
        })
        .collect();
    Ok(LemmaChainReport {
        mode: Mode::Exact,
        reading: opts.reading,
        params,
        alpha,
        samples,
        expected_opt_value: opt_value,
        checks,
    })
}

fn finish_mc<S: Scalar>(
    names: Vec<(String, Option<usize>, bool)>,
    lhs_s: Vec<Vec<S>>,
    rhs_s: Vec<Vec<S>>,
    params: SmoothnessParams<S>,
    alpha: S,
    opt_value: S,
    opts: &ChainOptions,
) -> LemmaChainReport<S> {
    let tol = S::tolerance();
    let three = S::lit(3.0);
    let checks = names
        .into_iter()
        .enumerate()
        .map(|(x, (name, bidder, equality))| {
            let diffs: Vec<S> = lhs_s[x].iter().zip(&rhs_s[x]).map(|(l, r)| *l - *r).collect();
            let (slack, se) = mean_and_se(&diffs);
            let (lhs, _) = mean_and_se(&lhs_s[x]);
            let (rhs, _) = mean_and_se(&rhs_s[x]);
            LemmaCheck {
                name,
                bidder,
                equality,
                lhs,
                rhs,
                slack,
                std_error: Some(se),
                holds: if equality {
                    slack.abs() <= three * se + tol
                } else {
                    slack >= -three * se - tol
                },
            }
        })
        .collect();
    LemmaChainReport {
        mode: Mode::Mc,
        reading: opts.reading,
        params,
        alpha,
        samples: Some(opts.samples),
        expected_opt_value: opt_value,
        checks,
    }
}

/// Every bid profile of the scenario with equal weight.
pub fn uniform_opponents<S: Scalar>(scenario: &ComposedScenario<S>, budget: u128) -> Result<EmpiricalDistribution<S>> {
    let (n, m) = (scenario.bidders(), scenario.mechanism_count());
    let sizes: Vec<usize> = (0..n)
        .flat_map(|i| (0..m).map(move |j| scenario.mechanism(j).grid(i).len()))
        .collect();
    let total = sizes.iter().fold(1u128, |acc, &s| acc.saturating_mul(s as u128));
    check_budget("bid profile enumeration", total, budget)?;
    let mut profiles = Vec::with_capacity(total as usize);
    let mut cur = vec![0usize; n * m];
    loop {
        profiles.push(BidProfile::new(n, m, cur.clone())?);
        let mut c = cur.len();
        loop {
            if c == 0 {
                return Ok(EmpiricalDistribution::uniform(profiles));
            }
            c -= 1;
            cur[c] += 1;
            if cur[c] < sizes[c] {
                break;
            }
            cur[c] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::availability::AvailabilityModel;
    use crate::lattice::ProductLattice;
    use crate::mechanism::Mechanism;
    use crate::valuation::Valuation;

    fn single(q: f64) -> ComposedScenario<f64> {
        let mech = Mechanism::first_price(1, vec![0.0, 0.5, 1.0, 1.5, 2.0]).unwrap();
        let v = Valuation::additive(ProductLattice::boolean(1), vec![vec![0.0, 2.0]]).unwrap();
        ComposedScenario::new(vec![mech], vec![v], AvailabilityModel::everybody_or_nobody(1, vec![q]).unwrap()).unwrap()
    }

    #[test]
    fn optimum_distribution_single_item() {
        let d = optimum_distribution(&single(0.5), 1000).unwrap();
        assert_eq!(d.per_mechanism[0], vec![(vec![1], 1.0)]);
        assert_eq!(d.expected_values, vec![1.0]);
        let d = optimum_distribution(&single(0.0), 1000).unwrap();
        assert!(d.per_mechanism[0].is_empty());
    }

    #[test]
    fn ties_go_to_the_first_bidder() {
        let mech = Mechanism::first_price_auction(&[2.0, 2.0], vec![0.0, 1.0, 2.0]).unwrap();
        let s = ComposedScenario::<f64>::new(
            vec![mech],
            vec![
                Valuation::additive(ProductLattice::boolean(1), vec![vec![0.0, 2.0]]).unwrap(),
                Valuation::additive(ProductLattice::boolean(1), vec![vec![0.0, 2.0]]).unwrap(),
            ],
            AvailabilityModel::always(2, 1),
        )
        .unwrap();
        let d = optimum_distribution(&s, 1000).unwrap();
        assert_eq!(d.per_mechanism[0], vec![(vec![1, 0], 1.0)]);
    }

    #[test]
    fn laws_are_distributions() {
        let s = single(0.5);
        let c = EonConstruction::new(&s, 0.5, WReading::Constructor, 1000).unwrap();
        assert_eq!(c.z_law(0), vec![(Some(0), 0.25), (None, 0.75)]);
        assert_eq!(c.t_law(0), vec![(Some(0), 0.5), (None, 0.5)]);
        let total: f64 = c.enumerate_draws(1000).unwrap().iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn w_vanishes_at_bottom_and_for_bottom_z() {
        let s = single(0.5);
        let c = EonConstruction::new(&s, 0.5, WReading::Constructor, 1000).unwrap();
        for (d, _) in c.enumerate_draws(1000).unwrap() {
            let w = c.w_table(0, 0, &d, &d);
            assert_eq!(w[0], 0.0);
            if d.z[0].is_none() {
                assert!(w.iter().all(|&x| x == 0.0));
            } else {
                assert_eq!(w[1], 2.0);
            }
        }
    }

    #[test]
    fn rejects_lambda_above_two() {
        assert!(EonConstruction::new(&single(0.5), 2.5, WReading::Constructor, 1000).is_err());
        assert!(EonConstruction::new(&single(0.5), 0.0, WReading::Constructor, 1000).is_err());
    }

    #[test]
    fn exact_chain_holds_on_single_item() {
        let s = single(0.5);
        let params = SmoothnessParams::new(0.5, 1.0, 0.0).unwrap();
        let opp = uniform_opponents(&s, 1000).unwrap();
        let r = check_lemma_chain_eon(&s, params, &opp, &ChainOptions::default()).unwrap();
        assert!(r.holds(), "{r:?}");
        let c = r.check("w_expectation", Some(0)).unwrap();
        // E[w(z)] = 2·(1/4), scaled by q = 1/2; E[v(t̃)]/α = 2·(1/2)/4
        assert!((c.lhs - 0.25).abs() < 1e-15 && (c.rhs - 0.25).abs() < 1e-15);
    }

    #[test]
    fn deviation_bid_law_sums_to_one() {
        let s = single(0.5);
        let (dev, law) = build_eon_deviation(&s, 0, 0.5, 3, WReading::Constructor, 1000).unwrap();
        assert_eq!(dev.alpha, 4.0);
        let total: f64 = law.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-15);
        // z = win w.p. 1/4 leads to bidding half of 2
        assert_eq!(law, vec![(vec![0], 0.75), (vec![2], 0.25)]);
    }

    fn two_by_two(q: f64) -> ComposedScenario<f64> {
        use crate::valuation::SetFunction;
        let grid: Vec<f64> = (0..=8).map(|k| k as f64 * 0.25).collect();
        let mech = Mechanism::first_price(2, grid).unwrap();
        let a = Valuation::set_function(
            2,
            SetFunction::BudgetAdditive {
                values: vec![2.0, 1.5],
                cap: 3.0,
            },
        )
        .unwrap();
        let b = Valuation::xos(ProductLattice::boolean(2), vec![vec![vec![0.0, 1.5], vec![0.0, 0.0]], vec![vec![0.0, 0.0], vec![0.0, 2.0]]]).unwrap();
        ComposedScenario::new(vec![mech.clone(), mech], vec![a, b], AvailabilityModel::everybody_or_nobody(2, vec![q, 0.75]).unwrap()).unwrap()
    }

    #[test]
    fn both_readings_hold_exactly_on_two_by_two() {
        let s = two_by_two(0.5);
        let params = SmoothnessParams::new(0.5, 1.0, 0.0).unwrap();
        let mut rng = rng::draws(1);
        let all = uniform_opponents(&s, 1 << 20).unwrap();
        let opp = EmpiricalDistribution::uniform((0..40).map(|_| all.sample(&mut rng).clone()).collect());
        for reading in [WReading::Constructor, WReading::Recipient] {
            let opts = ChainOptions {
                reading,
                ..ChainOptions::default()
            };
            let r = check_lemma_chain_eon(&s, params, &opp, &opts).unwrap();
            assert!(r.holds(), "{reading:?}: {r:#?}");
        }
    }

    #[test]
    fn monte_carlo_matches_exact() {
        let s = two_by_two(0.5);
        let params = SmoothnessParams::new(0.5, 1.0, 0.0).unwrap();
        let opp = EmpiricalDistribution::uniform(vec![BidProfile::new(2, 2, vec![1, 2, 3, 0]).unwrap()]);
        let exact = check_lemma_chain_eon(&s, params, &opp, &ChainOptions::default()).unwrap();
        let mc = check_lemma_chain_eon(
            &s,
            params,
            &opp,
            &ChainOptions {
                mode: Mode::Mc,
                samples: 20_000,
                seed: 9,
                ..ChainOptions::default()
            },
        )
        .unwrap();
        for (e, m) in exact.checks.iter().zip(&mc.checks) {
            assert!((e.slack - m.slack).abs() <= 4.0 * m.std_error.unwrap() + 1e-12, "{e:?} {m:?}");
        }
    }
}
