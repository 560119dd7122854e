//! Weak smoothness of single mechanisms, the availability-oblivious
//! deviations built from it, and the correlation gap.

pub mod eon;
pub mod gap;
pub mod independent;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_budget, Error, Result};
use crate::mechanism::{MechValues, Mechanism, MAX_PROFILES};
use crate::scalar::Scalar;
use crate::sinr::SinrInstance;

fn zero<S: Scalar>() -> S {
    S::zero()
}

/// `(λ, μ1, μ2)` of weak smoothness.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct SmoothnessParams<S> {
    pub lambda: S,
    pub mu1: S,
    #[serde(default = "zero")]
    pub mu2: S,
}

impl<S: Scalar> SmoothnessParams<S> {
    pub fn new(lambda: S, mu1: S, mu2: S) -> Result<Self> {
        let p = Self { lambda, mu1, mu2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > S::zero()) {
            return Err(Error::Parameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.mu1 >= S::zero()) || !(self.mu2 >= S::zero()) {
            return Err(Error::Parameter("mu1 and mu2 must be nonnegative".into()));
        }
        Ok(())
    }

    /// `(max(1, μ1) + μ2) / λ`.
    pub fn poa_bound(&self) -> S {
        (self.mu1.max(S::one()) + self.mu2) / self.lambda
    }
}

/// Deviation bids computed for one valuation profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationEntry<S> {
    pub values: MechValues<S>,
    pub bids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CertificateStatus<S> {
    Verified,
    Counterexample {
        bids: Vec<usize>,
        values: MechValues<S>,
        slack: S,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct SmoothnessCertificate<S> {
    pub params: SmoothnessParams<S>,
    pub status: CertificateStatus<S>,
    /// Smallest `lhs − rhs` over everything checked.
    pub min_slack: S,
    pub profiles_checked: usize,
    pub deviation_table: Vec<DeviationEntry<S>>,
}

impl<S: Scalar> SmoothnessCertificate<S> {
    pub fn verified(&self) -> bool {
        matches!(self.status, CertificateStatus::Verified)
    }
}

/// `h_i(b_i, x)` for every `(i, b_i, x)` that occurs.
#[derive(Clone, Debug)]
pub struct WillingnessTable<S> {
    table: HashMap<(usize, usize, Vec<usize>), S>,
}

impl<S: Scalar> WillingnessTable<S> {
    pub fn new(mech: &Mechanism<S>) -> Result<Self> {
        check_budget("willingness-to-pay table", mech.profile_count(), MAX_PROFILES)?;
        let n = mech.bidders();
        let mut table: HashMap<(usize, usize, Vec<usize>), S> = HashMap::new();
        let mut bids = vec![0; n];
        let mut outcomes = vec![0; n];
        let mut payments = vec![S::zero(); n];
        for p in 0..mech.profile_count() as usize {
            mech.decode_profile(p, &mut bids);
            mech.evaluate_into(&bids, &mut outcomes, &mut payments);
            for i in 0..n {
                let e = table.entry((i, bids[i], outcomes.clone())).or_insert(payments[i]);
                *e = e.max(payments[i]);
            }
        }
        Ok(Self { table })
    }

    /// 0 for pairs no opponent profile produces.
    pub fn get(&self, i: usize, b_i: usize, x: &[usize]) -> S {
        self.table
            .get(&(i, b_i, x.to_vec()))
            .copied()
            .unwrap_or(S::zero())
    }
}

/// Every profile in which each bidder values the top of a win/lose lattice at
/// one of `levels` (and bottom at 0).
pub fn value_profiles<S: Scalar>(n: usize, levels: &[S]) -> Vec<MechValues<S>> {
    let k = levels.len();
    let total = k.pow(n as u32);
    (0..total)
        .map(|mut idx| {
            let mut profile = vec![Vec::new(); n];
            for i in (0..n).rev() {
                profile[i] = vec![S::zero(), levels[idx % k]];
                idx /= k;
            }
            profile
        })
        .collect()
}

/// Exhaustive check of weak smoothness for the mechanism's registered
/// deviation rule: for every valuation profile and every bid vector,
/// `Σ_i v_i(f(b'_i, b_−i)) − p_i(b'_i, b_−i) ≥ λ·OPT − μ1·Σ p_i(b) − μ2·Σ h_i(b_i, f(b))`.
pub fn verify_smoothness<S: Scalar>(
    mech: &Mechanism<S>,
    profiles: &[MechValues<S>],
    params: SmoothnessParams<S>,
    budget: u128,
) -> Result<SmoothnessCertificate<S>> {
    params.validate()?;
    let n = mech.bidders();
    for (k, values) in profiles.iter().enumerate() {
        if values.len() != n || values.iter().enumerate().any(|(i, v)| v.len() != mech.outcome_lattice(i).len()) {
            return Err(Error::Config(format!("valuation profile {k} does not match the mechanism")));
        }
    }
    let bid_profiles = mech.profile_count();
    check_budget(
        "smoothness enumeration",
        bid_profiles.saturating_mul(profiles.len() as u128),
        budget,
    )?;
    let wtp = if params.mu2 > S::zero() {
        Some(WillingnessTable::new(mech)?)
    } else {
        None
    };
    let all = vec![true; n];
    let mut table = Vec::with_capacity(profiles.len());
    let mut min_slack = S::infinity();
    let mut status = CertificateStatus::Verified;
    let mut bids = vec![0; n];
    let mut dev = vec![0; n];
    let mut outcomes = vec![0; n];
    let mut payments = vec![S::zero(); n];
    for values in profiles {
        let (opt, _) = mech.welfare_argmax(values, &all)?;
        let b_dev = mech.deviation(values, None)?;
        for p in 0..bid_profiles as usize {
            mech.decode_profile(p, &mut bids);
            mech.evaluate_into(&bids, &mut outcomes, &mut payments);
            let mut rhs = params.lambda * opt - params.mu1 * payments.iter().copied().sum::<S>();
            if let Some(w) = &wtp {
                rhs -= params.mu2 * (0..n).map(|i| w.get(i, bids[i], &outcomes)).sum::<S>();
            }
            let mut lhs = S::zero();
            for i in 0..n {
                dev.copy_from_slice(&bids);
                dev[i] = b_dev[i];
                mech.evaluate_into(&dev, &mut outcomes, &mut payments);
                lhs += values[i][outcomes[i]] - payments[i];
            }
            let slack = lhs - rhs;
            if slack < min_slack {
                min_slack = slack;
            }
            if slack < -S::tolerance() && matches!(status, CertificateStatus::Verified) {
                status = CertificateStatus::Counterexample {
                    bids: bids.clone(),
                    values: values.clone(),
                    slack,
                };
            }
        }
        table.push(DeviationEntry {
            values: values.clone(),
            bids: b_dev,
        });
    }
    Ok(SmoothnessCertificate {
        params,
        status,
        min_slack,
        profiles_checked: profiles.len() * bid_profiles as usize,
        deviation_table: table,
    })
}

/// Smoothness of the channel game in mechanism form (value 2 for success,
/// price 1 for transmitting) with `λ = 1/2, μ1 = 2·C, μ2 = 0`, `C` the
/// instance's empirical interference constant.
pub fn channel_certificate<S: Scalar>(instance: &SinrInstance<S>, budget: u128) -> Result<SmoothnessCertificate<S>> {
    let mech = Mechanism::channel_access(instance.clone())?;
    let c = instance.empirical_c()?;
    let params = SmoothnessParams::new(S::lit(0.5), S::lit(2.0) * c, S::zero())?;
    let profiles = vec![vec![vec![S::zero(), S::lit(2.0)]; instance.len()]];
    verify_smoothness(&mech, &profiles, params, budget)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn auction() -> Mechanism<f64> {
        Mechanism::first_price(2, vec![0.0, 1.0, 2.0]).unwrap()
    }

    #[test]
    fn half_value_certifies_half_one_zero() {
        let cert = verify_smoothness(
            &auction(),
            &value_profiles(2, &[0.0, 2.0]),
            SmoothnessParams::new(0.5, 1.0, 0.0).unwrap(),
            1_000_000,
        )
        .unwrap();
        assert!(cert.verified(), "{:?}", cert.status);
        assert_eq!(cert.profiles_checked, 36);
    }

    #[test]
    fn full_lambda_fails() {
        let cert = verify_smoothness(
            &auction(),
            &value_profiles(2, &[0.0, 2.0]),
            SmoothnessParams::new(1.0, 0.0, 0.0).unwrap(),
            1_000_000,
        )
        .unwrap();
        match cert.status {
            CertificateStatus::Counterexample { slack, .. } => assert!(slack < 0.0),
            CertificateStatus::Verified => panic!("expected a counterexample"),
        }
    }

    #[test]
    fn rejects_nonpositive_lambda() {
        assert!(SmoothnessParams::new(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn willingness_matches_direct_enumeration() {
        let m = auction();
        let w = WillingnessTable::new(&m).unwrap();
        for b in 0..3 {
            for x in [[0, 0], [1, 0], [0, 1]] {
                assert_eq!(w.get(0, b, &x), m.willingness_to_pay(0, b, &x).unwrap());
            }
        }
    }

    #[test]
    fn value_profile_count() {
        assert_eq!(value_profiles(3, &[0.0, 1.0, 2.0]).len(), 27);
    }
}
