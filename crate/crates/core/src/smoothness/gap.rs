//! Correlation gap of a valuation for a convex combination of outcome
//! vectors, and a generator of random monotone DMR valuations.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{OutcomeLattice, ProductLattice};
use crate::learning::{mean_and_se, Mode};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::valuation::Valuation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport<S> {
    /// `Σ_j α_j v(x^j)`.
    pub lhs: S,
    /// `E[v(y)]` with `y_c = x^j_c` independently with probability `α_j`.
    pub rhs: S,
    /// `lhs / rhs`; infinite when `rhs = 0 < lhs`, 1 when both vanish.
    pub ratio: S,
    pub mode: Mode,
    pub samples: Option<usize>,
    /// 95% half-width of `rhs` (Monte Carlo only).
    pub confidence_radius: Option<S>,
}

fn validate<S: Scalar>(v: &Valuation<S>, xs: &[Vec<usize>], alphas: &[S]) -> Result<()> {
    if xs.is_empty() || xs.len() != alphas.len() {
        return Err(Error::Parameter("need one weight per outcome vector".into()));
    }
    for x in xs {
        v.lattice().validate(x)?;
    }
    if alphas.iter().any(|a| !(*a >= S::zero() && *a <= S::one())) {
        return Err(Error::Parameter("weights must lie in [0, 1]".into()));
    }
    let total: S = alphas.iter().copied().sum();
    let tol = if S::tolerance() < S::lit(1e-6) { S::lit(1e-12) } else { S::lit(1e-5) };
    if (total - S::one()).abs() > tol {
        return Err(Error::Parameter(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

fn ratio<S: Scalar>(lhs: S, rhs: S) -> S {
    if rhs > S::zero() {
        lhs / rhs
    } else if lhs > S::zero() {
        S::infinity()
    } else {
        S::one()
    }
}

/// Exact when `k'^m` (with `k'` the number of positive weights) fits
/// `budget`, otherwise `samples` Monte Carlo draws from `seed`.
pub fn correlation_gap<S: Scalar>(
    v: &Valuation<S>,
    xs: &[Vec<usize>],
    alphas: &[S],
    budget: u128,
    samples: usize,
    seed: u64,
) -> Result<GapReport<S>> {
    validate(v, xs, alphas)?;
    let lhs: S = xs.iter().zip(alphas).map(|(x, a)| *a * v.value(x)).sum();
    let support: Vec<usize> = (0..xs.len()).filter(|&j| alphas[j] > S::zero()).collect();
    let m = v.lattice().dim();
    let size = (support.len() as u128).checked_pow(m as u32).unwrap_or(u128::MAX);
    let mut y = vec![0usize; m];
    if size <= budget {
        let mut choice = vec![0usize; m];
        let mut rhs = S::zero();
        loop {
            let mut p = S::one();
            for c in 0..m {
                let j = support[choice[c]];
                p *= alphas[j];
                y[c] = xs[j][c];
            }
            rhs += p * v.value(&y);
            let mut c = m;
            loop {
                if c == 0 {
                    return Ok(GapReport {
                        lhs,
                        rhs,
                        ratio: ratio(lhs, rhs),
                        mode: Mode::Exact,
                        samples: None,
                        confidence_radius: None,
                    });
                }
                c -= 1;
                choice[c] += 1;
                if choice[c] < support.len() {
                    break;
                }
                choice[c] = 0;
            }
        }
    }
    if samples < 2 {
        return Err(Error::budget("correlation gap enumeration", size, budget));
    }
    let mut rng = rng::draws(seed);
    let draws: Vec<S> = (0..samples)
        .map(|_| {
            for c in 0..m {
                y[c] = xs[pick(alphas, &mut rng)][c];
            }
            v.value(&y)
        })
        .collect();
    let (rhs, se) = mean_and_se(&draws);
    Ok(GapReport {
        lhs,
        rhs,
        ratio: ratio(lhs, rhs),
        mode: Mode::Mc,
        samples: Some(samples),
        confidence_radius: Some(S::lit(1.96) * se),
    })
}

fn pick<S: Scalar>(alphas: &[S], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (j, a) in alphas.iter().enumerate() {
        acc += a.as_f64();
        if u < acc {
            return j;
        }
    }
    alphas.iter().rposition(|a| *a > S::zero()).unwrap_or(0)
}

/// Concave nondecreasing link used by [`random_dmr_valuation`].
#[derive(Clone, Copy, Debug, PartialEq)]
enum Concave {
    Identity,
    Cap(f64),
    Sqrt,
    Saturating,
}

impl Concave {
    fn apply(self, t: f64) -> f64 {
        match self {
            Concave::Identity => t,
            Concave::Cap(c) => t.min(c),
            Concave::Sqrt => t.sqrt(),
            Concave::Saturating => 1.0 - (-t).exp(),
        }
    }
}

/// Random monotone DMR valuation on a product of `m` chains with 2 to
/// `max_len` elements: a positive combination of concave nondecreasing
/// functions of monotone modular functions.
pub fn random_dmr_valuation<S: Scalar>(rng: &mut Rng, m: usize, max_len: usize) -> Result<Valuation<S>> {
    if m == 0 || max_len < 2 {
        return Err(Error::Parameter("need at least one factor with two elements".into()));
    }
    let factors = (0..m)
        .map(|_| OutcomeLattice::chain(rng.gen_range(2..=max_len)))
        .collect::<Result<Vec<_>>>()?;
    let lattice = ProductLattice::new(factors);
    let terms = rng.gen_range(1..=3);
    let parts: Vec<(f64, Concave, Vec<Vec<f64>>)> = (0..terms)
        .map(|_| {
            let modular: Vec<Vec<f64>> = lattice
                .factors()
                .iter()
                .map(|f| {
                    let mut acc = 0.0;
                    (0..f.len())
                        .map(|e| {
                            if e > 0 {
                                acc += rng.gen_range(0.0..2.0);
                            }
                            acc
                        })
                        .collect()
                })
                .collect();
            let link = match rng.gen_range(0..4) {
                0 => Concave::Identity,
                1 => Concave::Cap(rng.gen_range(0.5..4.0)),
                2 => Concave::Sqrt,
                _ => Concave::Saturating,
            };
            (rng.gen_range(0.1..3.0), link, modular)
        })
        .collect();
    Valuation::from_fn(lattice, |x| {
        let total: f64 = parts
            .iter()
            .map(|(c, g, a)| c * g.apply(x.iter().zip(a).map(|(&e, comp)| comp[e]).sum()))
            .sum();
        S::lit(total)
    })
}

/// Random convex combination: up to `max_k` outcome vectors and weights
/// summing to one.
pub fn random_combination<S: Scalar>(rng: &mut Rng, lattice: &ProductLattice, max_k: usize) -> (Vec<Vec<usize>>, Vec<S>) {
    let k = rng.gen_range(1..=max_k.max(1));
    let xs: Vec<Vec<usize>> = (0..k)
        .map(|_| lattice.factors().iter().map(|f| rng.gen_range(0..f.len())).collect())
        .collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut alphas: Vec<S> = raw.iter().map(|r| S::lit(r / total)).collect();
    let rest: S = alphas[..k - 1].iter().copied().sum();
    alphas[k - 1] = S::one() - rest;
    (xs, alphas)
}

/// Guard for [`crate::valuation::check_dmr`] on generated instances.
pub fn dmr_check_budget(lattice: &ProductLattice) -> u128 {
    let s = lattice.size_u128();
    s.saturating_mul(s).saturating_mul(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::valuation::{check_dmr, check_monotone, DmrCheck, SetFunction};

    #[test]
    fn coverage_example_is_four_thirds() {
        let v = Valuation::<f64>::set_function(
            2,
            SetFunction::Coverage {
                weights: vec![1.0],
                covers: vec![vec![0], vec![0]],
            },
        )
        .unwrap();
        let r = correlation_gap(&v, &[vec![1, 0], vec![0, 1]], &[0.5, 0.5], 1000, 0, 0).unwrap();
        assert_eq!(r.lhs, 1.0);
        assert_eq!(r.rhs, 0.75);
        assert!((r.ratio - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_vector_has_ratio_one() {
        let v = Valuation::<f64>::additive(ProductLattice::boolean(2), vec![vec![0.0, 1.0], vec![0.0, 3.0]]).unwrap();
        let r = correlation_gap(&v, &[vec![1, 1]], &[1.0], 1000, 0, 0).unwrap();
        assert_eq!(r.ratio, 1.0);
    }

    #[test]
    fn weights_must_sum_to_one() {
        let v = Valuation::<f64>::additive(ProductLattice::boolean(1), vec![vec![0.0, 1.0]]).unwrap();
        assert!(correlation_gap(&v, &[vec![1], vec![0]], &[0.5, 0.4], 1000, 0, 0).is_err());
    }

    #[test]
    fn monte_carlo_agrees_with_exact() {
        let v = Valuation::<f64>::set_function(
            3,
            SetFunction::BudgetAdditive {
                values: vec![1.0, 2.0, 1.5],
                cap: 2.5,
            },
        )
        .unwrap();
        let xs = vec![vec![1, 0, 1], vec![0, 1, 1], vec![1, 1, 0]];
        let alphas = [0.2, 0.5, 0.3];
        let exact = correlation_gap(&v, &xs, &alphas, 1000, 0, 0).unwrap();
        let mc = correlation_gap(&v, &xs, &alphas, 1, 200_000, 5).unwrap();
        assert_eq!(mc.mode, Mode::Mc);
        assert!((exact.rhs - mc.rhs).abs() < 4.0 * mc.confidence_radius.unwrap());
    }

    #[test]
    fn generated_valuations_are_monotone_dmr() {
        let mut rng = rng::draws(11);
        for _ in 0..20 {
            let v: Valuation<f64> = random_dmr_valuation(&mut rng, 3, 3).unwrap();
            let budget = dmr_check_budget(v.lattice());
            assert_eq!(check_dmr(&v, budget).unwrap(), DmrCheck::Ok);
            assert!(check_monotone(&v, budget).unwrap().is_ok());
        }
    }
}
