//! Oblivious deviation for independent admission: each mechanism's bid is
//! drawn as if that mechanism were available, from the availability-aware
//! smoothness deviation, independently across mechanisms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::availability::{AvailabilityModel, AvailabilityRealization};
use crate::error::{Error, Result};
use crate::learning::Deviation;
use crate::mechanism::{BidProfile, ComposedScenario, MechValues, Optimum};
use crate::scalar::Scalar;
use crate::valuation::Valuation;

/// Product-form deviation of one bidder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndependentDeviation<S> {
    pub bidder: usize,
    pub gamma: S,
    /// `per_mechanism[j]`: distribution of the grid bid on mechanism `j`.
    pub per_mechanism: Vec<Vec<(usize, S)>>,
}

impl<S: Scalar> IndependentDeviation<S> {
    /// Joint distribution (product of the per-mechanism laws).
    pub fn joint(&self) -> Deviation<S> {
        let mut out: Deviation<S> = vec![(Vec::new(), S::one())];
        for law in &self.per_mechanism {
            out = out
                .into_iter()
                .flat_map(|(bids, p)| {
                    law.iter().map(move |&(b, q)| {
                        let mut next = bids.clone();
                        next.push(b);
                        (next, p * q)
                    })
                })
                .collect();
        }
        out
    }
}

/// Shared state: XOS forms of the valuations and cached optima.
pub struct DeviationBuilder<'a, S> {
    scenario: &'a ComposedScenario<S>,
    xos: Vec<Valuation<S>>,
    gamma: S,
    budget: u128,
    optima: BTreeMap<AvailabilityRealization, Optimum<S>>,
}

impl<'a, S: Scalar> DeviationBuilder<'a, S> {
    /// `gamma` scales valuations down to `v / gamma` before the smoothness
    /// deviation is applied.
    pub fn new(scenario: &'a ComposedScenario<S>, gamma: S, budget: u128) -> Result<Self> {
        if !(gamma >= S::one()) {
            return Err(Error::Parameter(format!("gamma must be at least 1, got {gamma}")));
        }
        let xos = scenario
            .valuations()
            .iter()
            .map(|v| v.to_xos(budget))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scenario,
            xos,
            gamma,
            budget,
            optima: BTreeMap::new(),
        })
    }

    fn optimum(&mut self, a: &AvailabilityRealization) -> Result<Optimum<S>> {
        if let Some(o) = self.optima.get(a) {
            return Ok(o.clone());
        }
        let o = self.scenario.optimum(a, self.budget)?;
        self.optima.insert(a.clone(), o.clone());
        Ok(o)
    }

    /// Availability-aware deviation bids of bidder `i` for the full profile
    /// `a`: the XOS member supporting each bidder at the optimum defines the
    /// per-mechanism values, and each mechanism's rule targets the optimum.
    pub fn aware_bids(&mut self, i: usize, a: &AvailabilityRealization) -> Result<Vec<usize>> {
        let opt = self.optimum(a)?;
        let n = self.scenario.bidders();
        let members: Vec<usize> = (0..n)
            .map(|k| self.xos[k].eval_xos(&opt.bidder_outcome(k)).map(|(_, l)| l))
            .collect::<Result<_>>()?;
        (0..self.scenario.mechanism_count())
            .map(|j| {
                let values: MechValues<S> = (0..n)
                    .map(|k| {
                        let family = self.xos[k].xos_family().expect("xos form");
                        let f = self.scenario.mechanism(j).outcome_lattice(k);
                        let target = opt.per_mechanism[j][k];
                        (0..f.len())
                            .map(|e| family[members[k]][j][f.meet(e, target)] / self.gamma)
                            .collect()
                    })
                    .collect();
                Ok(self.scenario.mechanism(j).deviation(&values, Some(&opt.per_mechanism[j]))?[i])
            })
            .collect()
    }

    /// Oblivious product-form deviation of bidder `i`.
    pub fn build(&mut self, i: usize) -> Result<IndependentDeviation<S>> {
        let model = self.scenario.availability().clone();
        let per_mechanism = (0..self.scenario.mechanism_count())
            .map(|j| {
                let conditioned = model.with_entry(i, j, S::one())?;
                let mut law: BTreeMap<usize, S> = BTreeMap::new();
                for (a, p) in conditioned.enumerate_support(self.budget)? {
                    let b = self.aware_bids(i, &a)?[j];
                    *law.entry(b).or_insert(S::zero()) += p;
                }
                Ok(law.into_iter().collect())
            })
            .collect::<Result<_>>()?;
        Ok(IndependentDeviation {
            bidder: i,
            gamma: self.gamma,
            per_mechanism,
        })
    }

    /// Distribution of the aware deviation's joint bid given bidder `i`'s
    /// true availability row; the other rows are resampled from the model.
    pub fn aware_distribution(&mut self, i: usize, own_row: &[bool]) -> Result<Deviation<S>> {
        let mut law: BTreeMap<Vec<usize>, S> = BTreeMap::new();
        for (mut a, p) in others_support(self.scenario.availability(), i, self.budget)? {
            for (j, &avail) in own_row.iter().enumerate() {
                a.set(i, j, avail);
            }
            let b = self.aware_bids(i, &a)?;
            *law.entry(b).or_insert(S::zero()) += p;
        }
        Ok(law.into_iter().collect())
    }
}

/// Support of the availability of every bidder except `i` (row `i` left
/// unavailable in the returned realizations).
fn others_support<S: Scalar>(
    model: &AvailabilityModel<S>,
    i: usize,
    budget: u128,
) -> Result<Vec<(AvailabilityRealization, S)>> {
    let m = model.mechanisms();
    let mut masked = model.clone();
    for j in 0..m {
        masked = masked.with_entry(i, j, S::zero())?;
    }
    masked.enumerate_support(budget)
}

fn own_support<S: Scalar>(model: &AvailabilityModel<S>, i: usize, budget: u128) -> Result<Vec<(Vec<bool>, S)>> {
    let row: Vec<S> = (0..model.mechanisms()).map(|j| model.marginal(i, j)).collect();
    Ok(AvailabilityModel::independent(vec![row])?
        .enumerate_support(budget)?
        .into_iter()
        .map(|(a, p)| (a.row(0).to_vec(), p))
        .collect())
}

/// `build_independent_deviation` entry point.
pub fn build_independent_deviation<S: Scalar>(
    scenario: &ComposedScenario<S>,
    i: usize,
    gamma: S,
    budget: u128,
) -> Result<IndependentDeviation<S>> {
    if i >= scenario.bidders() {
        return Err(Error::Parameter(format!("bidder {i} does not exist")));
    }
    DeviationBuilder::new(scenario, gamma, budget)?.build(i)
}

/// One compared outcome probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalRow<S> {
    pub context: usize,
    pub mechanism: usize,
    pub outcome: usize,
    pub oblivious: S,
    pub aware: S,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalComparison<S> {
    pub bidder: usize,
    pub contexts: usize,
    pub max_abs_diff: S,
    pub rows: Vec<MarginalRow<S>>,
}

/// Compares `Pr[f_j(b'_i, b_−i) = y | A_−i, b_−i]` of the oblivious deviation
/// with that of the aware deviation, for every mechanism `j`, outcome `y` of
/// bidder `i`, availability of the others and opponent profile in `opponents`
/// (row `i` of each profile is ignored).
pub fn compare_marginals<S: Scalar>(
    scenario: &ComposedScenario<S>,
    i: usize,
    gamma: S,
    opponents: &[BidProfile],
    budget: u128,
) -> Result<MarginalComparison<S>> {
    if !matches!(scenario.availability(), AvailabilityModel::Independent { .. }) {
        return Err(Error::Parameter("marginal comparison needs independent availability".into()));
    }
    let mut builder = DeviationBuilder::new(scenario, gamma, budget)?;
    let oblivious = builder.build(i)?;
    let model = scenario.availability();
    let own = own_support(model, i, budget)?;
    let aware: Vec<(Vec<bool>, S, Deviation<S>)> = own
        .into_iter()
        .map(|(row, p)| {
            let d = builder.aware_distribution(i, &row)?;
            Ok((row, p, d))
        })
        .collect::<Result<_>>()?;
    let (n, m) = (scenario.bidders(), scenario.mechanism_count());
    let mut rows = Vec::new();
    let mut context = 0;
    let mut max_abs_diff = S::zero();
    let mut col = vec![0; n];
    let mut eval = |j: usize, bids: &BidProfile, others: &AvailabilityRealization, own_bid: usize| -> usize {
        for k in 0..n {
            col[k] = if k == i {
                own_bid
            } else if others.get(k, j) {
                bids.get(k, j)
            } else {
                0
            };
        }
        scenario.mechanism(j).evaluate(&col).0[i]
    };
    for (others, _) in others_support(model, i, budget)? {
        for bids in opponents {
            scenario.validate_profile(bids)?;
            for j in 0..m {
                let q = model.marginal(i, j);
                let lattice = scenario.mechanism(j).outcome_lattice(i);
                let mut obl = vec![S::zero(); lattice.len()];
                obl[eval(j, bids, &others, 0)] += S::one() - q;
                for &(b, p) in &oblivious.per_mechanism[j] {
                    obl[eval(j, bids, &others, b)] += q * p;
                }
                let mut awr = vec![S::zero(); lattice.len()];
                for (row, p_row, dist) in &aware {
                    for (joint, p) in dist {
                        let b = if row[j] { joint[j] } else { 0 };
                        awr[eval(j, bids, &others, b)] += *p_row * *p;
                    }
                }
                for y in 0..lattice.len() {
                    let d = (obl[y] - awr[y]).abs();
                    if d > max_abs_diff {
                        max_abs_diff = d;
                    }
                    rows.push(MarginalRow {
                        context,
                        mechanism: j,
                        outcome: y,
                        oblivious: obl[y],
                        aware: awr[y],
                    });
                }
            }
            context += 1;
        }
    }
    Ok(MarginalComparison {
        bidder: i,
        contexts: context,
        max_abs_diff,
        rows,
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::Mechanism;
    use crate::valuation::SetFunction;

    fn scenario(q: f64) -> ComposedScenario<f64> {
        let grid = vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0];
        let mech = Mechanism::first_price(1, grid).unwrap();
        let v = Valuation::set_function(
            2,
            SetFunction::BudgetAdditive {
                values: vec![2.0, 1.5],
                cap: 3.0,
            },
        )
        .unwrap();
        ComposedScenario::new(
            vec![mech.clone(), mech],
            vec![v],
            AvailabilityModel::independent(vec![vec![q, q]]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn certain_availability_matches_full_information_deviation() {
        let s = scenario(1.0);
        let d = build_independent_deviation(&s, 0, 1.0, 1 << 20).unwrap();
        // optimum wins both items; the supporting member gives 2 and the marginal 1
        assert_eq!(d.per_mechanism, vec![vec![(4, 1.0)], vec![(2, 1.0)]]);
    }

    #[test]
    fn half_availability_mixes_marginal_bids() {
        let s = scenario(0.5);
        let d = build_independent_deviation(&s, 0, 1.0, 1 << 20).unwrap();
        // item 1 alone is worth 1.5 (bid 0.75), with item 0 its marginal is 1 (bid 0.5)
        assert_eq!(d.per_mechanism[1], vec![(2, 0.5), (3, 0.5)]);
        let total: f64 = d.joint().iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn marginals_match_on_single_bidder() {
        let s = scenario(0.5);
        let cmp = compare_marginals(&s, 0, f64::dmr_gap(), &[BidProfile::zeros(1, 2)], 1 << 20).unwrap();
        assert!(cmp.max_abs_diff < 1e-12);
        assert_eq!(cmp.contexts, 1);
    }
}
