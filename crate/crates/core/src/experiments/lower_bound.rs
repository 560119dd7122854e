//! The single-bidder instance where oblivious bidding loses a growing factor:
//! `k` groups of `k` items, `v(S) = 2·max_ℓ |S ∩ M_ℓ|`, each item available
//! independently with probability `1/k`, first-price grid `{0, 1, 2}`.
//!
//! Bidding 1 on `r_ℓ` items of group `ℓ` wins `Y_ℓ ~ Bin(r_ℓ, 1/k)` of them,
//! so `E[v] = 2 Σ_{d≥1} (1 − Π_ℓ Pr[Y_ℓ ≤ d − 1])` and the expected payment
//! is `Σ r_ℓ / k`. Bids of 2 are dominated and never considered.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::availability::AvailabilityModel;
use crate::error::{Error, Result};
use crate::mechanism::{ComposedScenario, Mechanism};
use crate::scalar::Scalar;
use crate::valuation::Valuation;

/// Largest `k` accepted.
pub const MAX_K: usize = 64;

fn check_k(k: usize) -> Result<()> {
    if k == 0 || k > MAX_K {
        return Err(Error::Parameter(format!("k must lie in 1..={MAX_K}, got {k}")));
    }
    Ok(())
}

/// `cdf[r][d] = Pr[Bin(r, 1/k) ≤ d]` for `r, d ∈ 0..=k`.
fn cdf_table<S: Scalar>(k: usize) -> Vec<Vec<S>> {
    let p = S::one() / S::from_count(k);
    (0..=k)
        .map(|r| {
            // pmf by the recurrence P(d+1) = P(d)·(r−d)/(d+1)·p/(1−p)
            let mut pmf = vec![S::zero(); k + 1];
            if k == 1 {
                pmf[r] = S::one();
            } else {
                pmf[0] = (S::one() - p).powi(r as i32);
                for d in 0..r {
                    pmf[d + 1] = pmf[d] * S::from_count(r - d) / S::from_count(d + 1) * p / (S::one() - p);
                }
            }
            let mut acc = S::zero();
            pmf.iter()
                .map(|&x| {
                    acc += x;
                    acc.min(S::one())
                })
                .collect()
        })
        .collect()
}

/// `2·E[max_ℓ Y_ℓ]` with `k` i.i.d. `Y_ℓ ~ Bin(k, 1/k)`: the expected value
/// of bidding after seeing availability.
pub fn lb_optimal_value<S: Scalar>(k: usize) -> Result<S> {
    check_k(k)?;
    let cdf = cdf_table::<S>(k);
    Ok(S::lit(2.0) * (1..=k).map(|d| S::one() - cdf[k][d - 1].powi(k as i32)).sum::<S>())
}

/// Oblivious bid summarized by per-group counts of items bid at 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObliviousBid<S> {
    /// Nonincreasing counts `r_1 ≥ r_2 ≥ …`, zeros dropped.
    pub r: Vec<usize>,
    pub expected_value: S,
    pub expected_utility: S,
}

/// Search space for [`lb_best_oblivious`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchSpace {
    /// Groups with `r ≥ k/2`, then at most one smaller group, then zeros.
    Reduced,
    /// Every nonincreasing vector; only for `k ≤ 6`.
    Unrestricted,
}

struct Search<'a, S> {
    k: usize,
    cdf: &'a [Vec<S>],
    reduced: bool,
    best: ObliviousBid<S>,
}

impl<S: Scalar> Search<'_, S> {
    /// `prod[d] = Π_ℓ Pr[Y_ℓ ≤ d]` over the groups chosen so far.
    fn value(&self, prod: &[S]) -> S {
        S::lit(2.0) * prod[..self.k].iter().map(|&p| S::one() - p).sum::<S>()
    }

    fn gain(&self, prod: &[S], r: usize) -> S {
        S::lit(2.0)
            * (0..self.k)
                .map(|d| prod[d] * (S::one() - self.cdf[r][d]))
                .sum::<S>()
            - S::from_count(r) / S::from_count(self.k)
    }

    fn consider(&mut self, r: &[usize], prod: &[S]) {
        let value = self.value(prod);
        let utility = value - S::from_count(r.iter().sum::<usize>()) / S::from_count(self.k);
        let better = utility > self.best.expected_utility + S::tolerance()
            || ((utility - self.best.expected_utility).abs() <= S::tolerance()
                && r.iter().sum::<usize>() < self.best.r.iter().sum::<usize>());
        if better {
            self.best = ObliviousBid {
                r: r.to_vec(),
                expected_value: value,
                expected_utility: utility,
            };
        }
    }

    /// Depth-first over nonincreasing count vectors; `cap` bounds the next
    /// count, `big` whether only large groups have been placed.
    fn dfs(&mut self, r: &mut Vec<usize>, prod: &[S], cap: usize, big: bool) {
        self.consider(r, prod);
        let remaining = self.k - r.len();
        if remaining == 0 || cap == 0 || (self.reduced && !big) {
            return;
        }
        let utility = self.value(prod) - S::from_count(r.iter().sum::<usize>()) / S::from_count(self.k);
        let best_gain = (1..=cap).map(|x| self.gain(prod, x)).fold(S::zero(), S::max);
        if utility + S::from_count(remaining) * best_gain <= self.best.expected_utility + S::tolerance() {
            return;
        }
        for x in (1..=cap).rev() {
            let next: Vec<S> = (0..=self.k).map(|d| prod[d] * self.cdf[x][d]).collect();
            r.push(x);
            self.dfs(r, &next, x, 2 * x >= self.k);
            r.pop();
        }
    }
}

/// Utility-maximizing oblivious pure bid, the all-zero bid included; ties
/// prefer fewer items.
pub fn lb_best_oblivious<S: Scalar>(k: usize, space: SearchSpace) -> Result<ObliviousBid<S>> {
    check_k(k)?;
    if space == SearchSpace::Unrestricted && k > 6 {
        return Err(Error::Parameter("unrestricted search is limited to k ≤ 6".into()));
    }
    let cdf = cdf_table::<S>(k);
    let mut search = Search {
        k,
        cdf: &cdf,
        reduced: space == SearchSpace::Reduced,
        best: ObliviousBid {
            r: Vec::new(),
            expected_value: S::zero(),
            expected_utility: S::zero(),
        },
    };
    let prod = vec![S::one(); k + 1];
    search.dfs(&mut Vec::new(), &prod, k, true);
    Ok(search.best)
}

/// Expected value and utility of an arbitrary count vector.
pub fn evaluate_counts<S: Scalar>(k: usize, r: &[usize]) -> Result<(S, S)> {
    check_k(k)?;
    if r.len() > k || r.iter().any(|&x| x > k) {
        return Err(Error::Parameter("count vector does not fit the instance".into()));
    }
    let cdf = cdf_table::<S>(k);
    let value = S::lit(2.0)
        * (0..k)
            .map(|d| S::one() - r.iter().map(|&x| cdf[x][d]).fold(S::one(), |a, b| a * b))
            .sum::<S>();
    Ok((value, value - S::from_count(r.iter().sum::<usize>()) / S::from_count(k)))
}

/// The instance as a composed scenario (grid `{0, 1, 2}`, items of group
/// `ℓ` at positions `ℓk..(ℓ+1)k`). Only small `k` is enumerable.
pub fn lb_scenario<S: Scalar>(k: usize) -> Result<ComposedScenario<S>> {
    check_k(k)?;
    let m = k * k;
    let mech = Mechanism::first_price(1, vec![S::zero(), S::one(), S::lit(2.0)])?;
    ComposedScenario::new(
        vec![mech; m],
        vec![Valuation::group_max(k, S::lit(2.0))],
        AvailabilityModel::independent(vec![vec![S::one() / S::from_count(k); m]])?,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundRow<S> {
    pub k: usize,
    pub opt_value: S,
    pub best_oblivious: ObliviousBid<S>,
    /// `opt_value / best_oblivious.expected_value`.
    pub ratio: S,
}

pub fn lower_bound_sweep<S: Scalar>(ks: &[usize]) -> Result<Vec<LowerBoundRow<S>>> {
    ks.iter()
        .map(|&k| {
            let opt_value = lb_optimal_value(k)?;
            let best = lb_best_oblivious(k, SearchSpace::Reduced)?;
            let ratio = if best.expected_value > S::zero() {
                opt_value / best.expected_value
            } else {
                S::infinity()
            };
            Ok(LowerBoundRow {
                k,
                opt_value,
                best_oblivious: best,
                ratio,
            })
        })
        .collect()
}

/// CSV with columns `k, optValue, bestObliviousValue, ratio`.
pub fn write_sweep_csv<S: Scalar, W: Write>(rows: &[LowerBoundRow<S>], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["k", "optValue", "bestObliviousValue", "ratio"])?;
    for row in rows {
        out.write_record([
            row.k.to_string(),
            row.opt_value.to_string(),
            row.best_oblivious.expected_value.to_string(),
            row.ratio.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_k_values() {
        assert_eq!(lb_optimal_value::<f64>(1).unwrap(), 2.0);
        assert_eq!(lb_optimal_value::<f64>(2).unwrap(), 2.75);
        let b = lb_best_oblivious::<f64>(1, SearchSpace::Reduced).unwrap();
        assert_eq!(b.r, vec![1]);
        assert_eq!(b.expected_utility, 1.0);
    }

    #[test]
    fn reduced_search_matches_unrestricted() {
        for k in 1..=6 {
            let a = lb_best_oblivious::<f64>(k, SearchSpace::Reduced).unwrap();
            let b = lb_best_oblivious::<f64>(k, SearchSpace::Unrestricted).unwrap();
            assert!((a.expected_utility - b.expected_utility).abs() < 1e-12, "k={k}: {a:?} {b:?}");
        }
    }

    #[test]
    fn evaluate_counts_agrees_with_search() {
        let b = lb_best_oblivious::<f64>(9, SearchSpace::Reduced).unwrap();
        let (v, u) = evaluate_counts::<f64>(9, &b.r).unwrap();
        assert!((v - b.expected_value).abs() < 1e-12 && (u - b.expected_utility).abs() < 1e-12);
    }

    #[test]
    fn scenario_optimum_matches_closed_form() {
        let s = lb_scenario::<f64>(2).unwrap();
        let opt = crate::experiments::expected_opt_welfare(&s, 1 << 20, 0, 0).unwrap();
        assert!((opt.value - 2.75).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range_k() {
        assert!(lb_optimal_value::<f64>(0).is_err());
        assert!(lb_optimal_value::<f64>(65).is_err());
        assert!(lb_best_oblivious::<f64>(7, SearchSpace::Unrestricted).is_err());
    }
}
