//! Single mechanisms over finite bid grids and their simultaneous composition
//! under availability masking.
//!
//! Bids are stored as grid indices; index 0 is always the bid 0, which yields
//! the bottom outcome at zero payment.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::availability::{AvailabilityModel, AvailabilityRealization};
use crate::error::{check_budget, Error, Result};
use crate::lattice::{OutcomeLattice, ProductLattice};
use crate::scalar::Scalar;
use crate::sinr::SinrInstance;
use crate::valuation::Valuation;

/// Per-mechanism valuation profile: `values[i][e]` is bidder `i`'s value for
/// element `e` of its outcome lattice in this mechanism.
pub type MechValues<S> = Vec<Vec<S>>;

/// Largest number of bid profiles a mechanism may enumerate.
pub const MAX_PROFILES: u128 = 1 << 22;

/// Deterministic smoothness deviation registered with a mechanism.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationRule {
    /// Bid the largest grid bid not above half the value of the target outcome.
    HalfValue,
    /// Bid the top grid bid iff the target outcome is above bottom.
    TransmitOnTarget,
    ZeroBid,
}

#[derive(Clone, Debug, PartialEq)]
enum Kind<S> {
    FirstPrice,
    ChannelAccess(SinrInstance<S>),
    /// Row-major tables over bid profiles (mixed radix, last bidder fastest).
    CustomTable { outcomes: Vec<usize>, payments: Vec<S> },
}

#[derive(Debug)]
struct Enumeration {
    /// Achievable outcome vectors with the minimal sets of nonzero bidders producing them.
    achievable: Vec<(Vec<usize>, Vec<u64>)>,
}

/// A mechanism `(f_j, p_j)` over per-bidder bid grids.
#[derive(Clone, Debug)]
pub struct Mechanism<S> {
    kind: Kind<S>,
    grids: Vec<Vec<S>>,
    lattices: Vec<OutcomeLattice>,
    deviation: DeviationRule,
    values: Option<Vec<S>>,
    cache: OnceLock<Arc<Enumeration>>,
}

impl<S: PartialEq> PartialEq for Mechanism<S> {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.grids == other.grids
            && self.lattices == other.lattices
            && self.deviation == other.deviation
            && self.values == other.values
    }
}

fn validate_grid<S: Scalar>(grid: &[S]) -> Result<()> {
    if grid.first() != Some(&S::zero()) {
        return Err(Error::InvalidGrid("grid must start with the bid 0".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidGrid("grid must be strictly increasing".into()));
    }
    Ok(())
}

impl<S: Scalar> Mechanism<S> {
    /// First-price auction over `grid` for `n` bidders: the highest bid wins
    /// (ties to the lowest index) and pays its bid; all-zero bids sell nothing.
    pub fn first_price(n: usize, grid: Vec<S>) -> Result<Self> {
        validate_grid(&grid)?;
        Ok(Self {
            kind: Kind::FirstPrice,
            grids: vec![grid; n],
            lattices: vec![OutcomeLattice::boolean(); n],
            deviation: DeviationRule::HalfValue,
            values: None,
            cache: OnceLock::new(),
        })
    }

    /// First-price auction carrying a default per-bidder value for the item.
    pub fn first_price_auction(values: &[S], grid: Vec<S>) -> Result<Self> {
        if values.iter().any(|v| !(*v >= S::zero())) {
            return Err(Error::InvalidValuation("item values must be nonnegative".into()));
        }
        let mut mech = Self::first_price(values.len(), grid)?;
        mech.values = Some(values.to_vec());
        Ok(mech)
    }

    /// Channel-access game: transmitting costs 1, a successful transmission is
    /// the top outcome.
    pub fn channel_access(instance: SinrInstance<S>) -> Result<Self> {
        instance.validate()?;
        let n = instance.len();
        Ok(Self {
            kind: Kind::ChannelAccess(instance),
            grids: vec![vec![S::zero(), S::one()]; n],
            lattices: vec![OutcomeLattice::boolean(); n],
            deviation: DeviationRule::TransmitOnTarget,
            values: Some(vec![S::lit(2.0); n]),
            cache: OnceLock::new(),
        })
    }

    /// Explicit outcome and payment tables indexed by bid profile.
    pub fn custom_table(
        grids: Vec<Vec<S>>,
        lattices: Vec<OutcomeLattice>,
        outcomes: Vec<usize>,
        payments: Vec<S>,
        deviation: DeviationRule,
    ) -> Result<Self> {
        let n = grids.len();
        for g in &grids {
            validate_grid(g)?;
        }
        if lattices.len() != n {
            return Err(Error::Config(format!("{} outcome lattices for {n} bidders", lattices.len())));
        }
        let profiles = grids.iter().map(Vec::len).product::<usize>();
        if outcomes.len() != profiles * n || payments.len() != profiles * n {
            return Err(Error::Config(format!(
                "custom table needs {} outcome and payment entries",
                profiles * n
            )));
        }
        let mech = Self {
            kind: Kind::CustomTable { outcomes, payments },
            grids,
            lattices,
            deviation,
            values: None,
            cache: OnceLock::new(),
        };
        let mut bids = vec![0; n];
        for p in 0..profiles {
            mech.decode_profile(p, &mut bids);
            for i in 0..n {
                let (x, pay) = mech.table_entry(p, i);
                if !mech.lattices[i].contains(x) {
                    return Err(Error::InvalidOutcome(format!("profile {p}: bidder {i} outcome {x}")));
                }
                if !(pay >= S::zero()) {
                    return Err(Error::Config(format!("profile {p}: negative payment for bidder {i}")));
                }
                if bids[i] == 0 && (x != mech.lattices[i].bottom() || pay != S::zero()) {
                    return Err(Error::Config(format!(
                        "profile {p}: bidder {i} bids 0 but does not receive bottom at zero payment"
                    )));
                }
            }
        }
        Ok(mech)
    }

    fn table_entry(&self, profile: usize, i: usize) -> (usize, S) {
        match &self.kind {
            Kind::CustomTable { outcomes, payments } => {
                let n = self.bidders();
                (outcomes[profile * n + i], payments[profile * n + i])
            }
            _ => unreachable!("table_entry on a non-table mechanism"),
        }
    }

    pub fn with_deviation(mut self, rule: DeviationRule) -> Self {
        self.deviation = rule;
        self
    }

    pub fn bidders(&self) -> usize {
        self.grids.len()
    }

    pub fn grid(&self, i: usize) -> &[S] {
        &self.grids[i]
    }

    pub fn outcome_lattice(&self, i: usize) -> &OutcomeLattice {
        &self.lattices[i]
    }

    pub fn deviation_rule(&self) -> DeviationRule {
        self.deviation
    }

    /// Default per-bidder item values, if the mechanism carries them.
    pub fn default_values(&self) -> Option<&[S]> {
        self.values.as_deref()
    }

    pub fn sinr_instance(&self) -> Option<&SinrInstance<S>> {
        match &self.kind {
            Kind::ChannelAccess(inst) => Some(inst),
            _ => None,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        true
    }

    /// Number of bid profiles.
    pub fn profile_count(&self) -> u128 {
        self.grids.iter().fold(1u128, |acc, g| acc.saturating_mul(g.len() as u128))
    }

    /// Bid profile with index `p` (mixed radix, last bidder fastest).
    pub fn decode_profile(&self, mut p: usize, bids: &mut [usize]) {
        for i in (0..self.bidders()).rev() {
            let k = self.grids[i].len();
            bids[i] = p % k;
            p /= k;
        }
    }

    pub fn encode_profile(&self, bids: &[usize]) -> usize {
        bids.iter().zip(&self.grids).fold(0, |acc, (&b, g)| acc * g.len() + b)
    }

    /// Outcome element and payment of every bidder for `bids` (grid indices).
    pub fn evaluate_into(&self, bids: &[usize], outcomes: &mut [usize], payments: &mut [S]) {
        let n = self.bidders();
        match &self.kind {
            Kind::FirstPrice => {
                outcomes[..n].fill(0);
                payments[..n].fill(S::zero());
                let mut winner = None;
                let mut best = S::zero();
                for i in 0..n {
                    let bid = self.grids[i][bids[i]];
                    if bid > best {
                        best = bid;
                        winner = Some(i);
                    }
                }
                if let Some(w) = winner {
                    outcomes[w] = 1;
                    payments[w] = best;
                }
            }
            Kind::ChannelAccess(inst) => {
                let transmitters: Vec<usize> = (0..n).filter(|&i| bids[i] != 0).collect();
                outcomes[..n].fill(0);
                payments[..n].fill(S::zero());
                for &i in &transmitters {
                    payments[i] = self.grids[i][bids[i]];
                    outcomes[i] = usize::from(inst.succeeds(i, &transmitters));
                }
            }
            Kind::CustomTable { .. } => {
                let p = self.encode_profile(bids);
                for i in 0..n {
                    let (x, pay) = self.table_entry(p, i);
                    outcomes[i] = x;
                    payments[i] = pay;
                }
            }
        }
    }

    pub fn evaluate(&self, bids: &[usize]) -> (Vec<usize>, Vec<S>) {
        let n = self.bidders();
        let mut outcomes = vec![0; n];
        let mut payments = vec![S::zero(); n];
        self.evaluate_into(bids, &mut outcomes, &mut payments);
        (outcomes, payments)
    }

    /// Entry point for randomized mechanisms; library mechanisms ignore the seed.
    pub fn evaluate_seeded(&self, bids: &[usize], _seed: u64) -> (Vec<usize>, Vec<S>) {
        self.evaluate(bids)
    }

    /// Evaluation with unavailable bidders forced to bid 0.
    pub fn evaluate_masked(&self, bids: &[usize], available: &[bool]) -> (Vec<usize>, Vec<S>) {
        let masked: Vec<usize> = bids
            .iter()
            .zip(available)
            .map(|(&b, &a)| if a { b } else { 0 })
            .collect();
        self.evaluate(&masked)
    }

    /// Largest payment bidder `i` can be charged.
    pub fn max_payment(&self, i: usize) -> S {
        match &self.kind {
            Kind::FirstPrice | Kind::ChannelAccess(_) => *self.grids[i].last().expect("nonempty grid"),
            Kind::CustomTable { payments, .. } => {
                let n = self.bidders();
                payments.iter().skip(i).step_by(n).copied().fold(S::zero(), S::max)
            }
        }
    }

    fn enumeration(&self) -> Result<Arc<Enumeration>> {
        if let Some(e) = self.cache.get() {
            return Ok(e.clone());
        }
        let n = self.bidders();
        check_budget("mechanism bid profiles", self.profile_count(), MAX_PROFILES)?;
        if n > 64 {
            return Err(Error::Config("at most 64 bidders per mechanism".into()));
        }
        let mut supports: BTreeMap<Vec<usize>, Vec<u64>> = BTreeMap::new();
        let mut bids = vec![0; n];
        let mut outcomes = vec![0; n];
        let mut payments = vec![S::zero(); n];
        for p in 0..self.profile_count() as usize {
            self.decode_profile(p, &mut bids);
            self.evaluate_into(&bids, &mut outcomes, &mut payments);
            let support = bids
                .iter()
                .enumerate()
                .fold(0u64, |acc, (i, &b)| if b != 0 { acc | 1 << i } else { acc });
            let entry = supports.entry(outcomes.clone()).or_default();
            if !entry.iter().any(|&s| s & support == s) {
                entry.retain(|&s| s & support != support);
                entry.push(support);
            }
        }
        let e = Arc::new(Enumeration {
            achievable: supports.into_iter().collect(),
        });
        Ok(self.cache.get_or_init(|| e).clone())
    }

    /// Outcome vectors produced by some bid profile in which unavailable
    /// bidders bid 0, in increasing lexicographic order.
    pub fn achievable_outcomes(&self, available: &[bool]) -> Result<Vec<Vec<usize>>> {
        let mask = available
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &a)| if a { acc | 1 << i } else { acc });
        Ok(self
            .enumeration()?
            .achievable
            .iter()
            .filter(|(_, sups)| sups.iter().any(|&s| s & mask == s))
            .map(|(x, _)| x.clone())
            .collect())
    }

    /// `h_i(b_i, x) = max p_i(b)` over opponent bids with `f(b) = x`; 0 if
    /// `x` cannot occur with own bid `b_i`.
    pub fn willingness_to_pay(&self, i: usize, b_i: usize, x: &[usize]) -> Result<S> {
        check_budget("willingness-to-pay profiles", self.profile_count(), MAX_PROFILES)?;
        let n = self.bidders();
        let mut bids = vec![0; n];
        let mut outcomes = vec![0; n];
        let mut payments = vec![S::zero(); n];
        let mut best = None::<S>;
        for p in 0..self.profile_count() as usize {
            self.decode_profile(p, &mut bids);
            if bids[i] != b_i {
                continue;
            }
            self.evaluate_into(&bids, &mut outcomes, &mut payments);
            if outcomes == x {
                best = Some(best.map_or(payments[i], |b| b.max(payments[i])));
            }
        }
        Ok(best.unwrap_or(S::zero()))
    }

    /// Welfare of per-bidder outcome `x` under `values`.
    pub fn welfare(values: &MechValues<S>, x: &[usize]) -> S {
        values.iter().zip(x).map(|(v, &e)| v[e]).sum()
    }

    /// Welfare-maximizing achievable outcome under `values`; ties go to the
    /// lexicographically greatest outcome vector.
    pub fn welfare_argmax(&self, values: &MechValues<S>, available: &[bool]) -> Result<(S, Vec<usize>)> {
        let candidates = self.achievable_outcomes(available)?;
        let best = candidates
            .iter()
            .map(|x| Self::welfare(values, x))
            .fold(S::neg_infinity(), S::max);
        let x = candidates
            .iter()
            .rev()
            .find(|x| Self::welfare(values, x) >= best - S::tolerance())
            .expect("bottom outcome is always achievable")
            .clone();
        Ok((best, x))
    }

    /// Deviation bids of every bidder for valuation profile `values`, aiming
    /// at `target` (the welfare maximizer if `None`).
    pub fn deviation(&self, values: &MechValues<S>, target: Option<&[usize]>) -> Result<Vec<usize>> {
        let n = self.bidders();
        if values.len() != n {
            return Err(Error::Config(format!("{} value rows for {n} bidders", values.len())));
        }
        let owned;
        let target = match target {
            Some(t) => t,
            None => {
                owned = self.welfare_argmax(values, &vec![true; n])?.1;
                &owned
            }
        };
        Ok((0..n)
            .map(|i| {
                let above_bottom = target[i] != self.lattices[i].bottom();
                match self.deviation {
                    DeviationRule::ZeroBid => 0,
                    DeviationRule::TransmitOnTarget => {
                        if above_bottom {
                            self.grids[i].len() - 1
                        } else {
                            0
                        }
                    }
                    DeviationRule::HalfValue => {
                        if !above_bottom {
                            return 0;
                        }
                        let half = values[i][target[i]] / S::lit(2.0);
                        self.grids[i]
                            .iter()
                            .rposition(|&g| g <= half + S::tolerance())
                            .unwrap_or(0)
                    }
                }
            })
            .collect())
    }
}

/// Serialized mechanism descriptor.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MechanismSpec<S> {
    FirstPrice {
        grid: Vec<S>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bidders: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        values: Option<Vec<S>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        deviation: Option<DeviationRule>,
    },
    ChannelAccess {
        instance: SinrInstance<S>,
    },
    CustomTable {
        grids: Vec<Vec<S>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lattices: Option<Vec<OutcomeLattice>>,
        entries: Vec<TableRow<S>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        deviation: Option<DeviationRule>,
    },
}

/// One bid profile of a custom table.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRow<S> {
    pub bids: Vec<usize>,
    pub outcome: Vec<usize>,
    pub payments: Vec<S>,
}

impl<S: Scalar> TryFrom<MechanismSpec<S>> for Mechanism<S> {
    type Error = Error;

    fn try_from(spec: MechanismSpec<S>) -> Result<Self> {
        match spec {
            MechanismSpec::FirstPrice {
                grid,
                bidders,
                values,
                deviation,
            } => {
                let mech = match (bidders, values) {
                    (_, Some(values)) => {
                        if bidders.is_some_and(|n| n != values.len()) {
                            return Err(Error::Config("first_price: bidders disagrees with values".into()));
                        }
                        Mechanism::first_price_auction(&values, grid)?
                    }
                    (Some(n), None) => Mechanism::first_price(n, grid)?,
                    (None, None) => {
                        return Err(Error::Config("first_price needs `bidders` or `values`".into()))
                    }
                };
                Ok(match deviation {
                    Some(rule) => mech.with_deviation(rule),
                    None => mech,
                })
            }
            MechanismSpec::ChannelAccess { instance } => Mechanism::channel_access(instance),
            MechanismSpec::CustomTable {
                grids,
                lattices,
                entries,
                deviation,
            } => {
                let n = grids.len();
                let lattices = lattices.unwrap_or_else(|| vec![OutcomeLattice::boolean(); n]);
                let profiles = grids.iter().map(Vec::len).product::<usize>();
                let mut outcomes = vec![None; profiles * n];
                let mut payments = vec![S::zero(); profiles * n];
                for row in entries {
                    if row.bids.len() != n || row.outcome.len() != n || row.payments.len() != n {
                        return Err(Error::Config(format!("custom table row {:?} has wrong length", row.bids)));
                    }
                    if row.bids.iter().zip(&grids).any(|(&b, g)| b >= g.len()) {
                        return Err(Error::Config(format!("custom table row {:?} is off the grid", row.bids)));
                    }
                    let p = row.bids.iter().zip(&grids).fold(0, |acc, (&b, g)| acc * g.len() + b);
                    for i in 0..n {
                        outcomes[p * n + i] = Some(row.outcome[i]);
                        payments[p * n + i] = row.payments[i];
                    }
                }
                let outcomes = outcomes
                    .into_iter()
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| Error::Config("custom table does not cover every bid profile".into()))?;
                Mechanism::custom_table(grids, lattices, outcomes, payments, deviation.unwrap_or(DeviationRule::ZeroBid))
            }
        }
    }
}

impl<S: Scalar> From<Mechanism<S>> for MechanismSpec<S> {
    fn from(m: Mechanism<S>) -> Self {
        match &m.kind {
            Kind::FirstPrice => MechanismSpec::FirstPrice {
                grid: m.grids.first().cloned().unwrap_or_else(|| vec![S::zero()]),
                bidders: if m.values.is_some() { None } else { Some(m.bidders()) },
                values: m.values.clone(),
                deviation: (m.deviation != DeviationRule::HalfValue).then_some(m.deviation),
            },
            Kind::ChannelAccess(inst) => MechanismSpec::ChannelAccess { instance: inst.clone() },
            Kind::CustomTable { .. } => {
                let n = m.bidders();
                let mut bids = vec![0; n];
                let entries = (0..m.profile_count() as usize)
                    .map(|p| {
                        m.decode_profile(p, &mut bids);
                        let (outcome, payments) = (0..n).map(|i| m.table_entry(p, i)).unzip();
                        TableRow {
                            bids: bids.clone(),
                            outcome,
                            payments,
                        }
                    })
                    .collect();
                MechanismSpec::CustomTable {
                    grids: m.grids.clone(),
                    lattices: Some(m.lattices.clone()),
                    entries,
                    deviation: Some(m.deviation),
                }
            }
        }
    }
}

impl<S: Scalar> Serialize for Mechanism<S> {
    fn serialize<Ser: serde::Serializer>(&self, s: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        MechanismSpec::from(self.clone()).serialize(s)
    }
}

impl<'de, S: Scalar> Deserialize<'de> for Mechanism<S> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let spec = MechanismSpec::deserialize(d)?;
        Mechanism::try_from(spec).map_err(serde::de::Error::custom)
    }
}

/// Joint bids of all bidders on all mechanisms, `n × m` grid indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BidProfile {
    n: usize,
    m: usize,
    bids: Vec<usize>,
}

impl BidProfile {
    pub fn new(n: usize, m: usize, bids: Vec<usize>) -> Result<Self> {
        if bids.len() != n * m {
            return Err(Error::Config(format!("bid profile has {} entries, expected {n}×{m}", bids.len())));
        }
        Ok(Self { n, m, bids })
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            bids: vec![0; n * m],
        }
    }

    pub fn bidders(&self) -> usize {
        self.n
    }

    pub fn mechanisms(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> usize {
        self.bids[i * self.m + j]
    }

    pub fn set(&mut self, i: usize, j: usize, b: usize) {
        self.bids[i * self.m + j] = b;
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.bids[i * self.m..(i + 1) * self.m]
    }

    pub fn set_row(&mut self, i: usize, row: &[usize]) {
        self.bids[i * self.m..(i + 1) * self.m].copy_from_slice(row);
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.bids
    }

    /// Bids on mechanism `j` of every bidder.
    pub fn column(&self, j: usize) -> Vec<usize> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }
}

/// Per-bidder outcome vectors and payments of a composed evaluation, `n × m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeOutcome<S> {
    pub n: usize,
    pub m: usize,
    pub outcomes: Vec<usize>,
    pub payments: Vec<S>,
}

impl<S: Scalar> CompositeOutcome<S> {
    pub fn bidder_outcome(&self, i: usize) -> &[usize] {
        &self.outcomes[i * self.m..(i + 1) * self.m]
    }

    pub fn bidder_payments(&self, i: usize) -> &[S] {
        &self.payments[i * self.m..(i + 1) * self.m]
    }

    pub fn total_payment(&self, i: usize) -> S {
        self.bidder_payments(i).iter().copied().sum()
    }
}

/// Welfare-maximizing composed outcome for one availability realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimum<S> {
    pub welfare: S,
    /// `per_mechanism[j][i]`: outcome element of bidder `i` in mechanism `j`.
    pub per_mechanism: Vec<Vec<usize>>,
}

impl<S> Optimum<S> {
    /// Outcome vector of bidder `i` across mechanisms.
    pub fn bidder_outcome(&self, i: usize) -> Vec<usize> {
        self.per_mechanism.iter().map(|x| x[i]).collect()
    }
}

/// Mechanisms, valuations and availability of one composed market.
#[derive(Clone, Debug, PartialEq)]
pub struct ComposedScenario<S> {
    mechanisms: Vec<Mechanism<S>>,
    valuations: Vec<Valuation<S>>,
    availability: AvailabilityModel<S>,
}

impl<S: Scalar> ComposedScenario<S> {
    pub fn new(
        mechanisms: Vec<Mechanism<S>>,
        valuations: Vec<Valuation<S>>,
        availability: AvailabilityModel<S>,
    ) -> Result<Self> {
        let n = valuations.len();
        let m = mechanisms.len();
        if n == 0 || m == 0 {
            return Err(Error::Config("scenario needs at least one bidder and one mechanism".into()));
        }
        for (j, mech) in mechanisms.iter().enumerate() {
            if mech.bidders() != n {
                return Err(Error::Config(format!(
                    "mechanism {j} has {} bidders, scenario has {n} valuations",
                    mech.bidders()
                )));
            }
        }
        for (i, v) in valuations.iter().enumerate() {
            let lat = v.lattice();
            if lat.dim() != m {
                return Err(Error::Config(format!(
                    "valuation {i} covers {} mechanisms, scenario has {m}",
                    lat.dim()
                )));
            }
            for (j, mech) in mechanisms.iter().enumerate() {
                if lat.factor(j) != mech.outcome_lattice(i) {
                    return Err(Error::Config(format!(
                        "valuation {i} factor {j} does not match the outcome lattice of mechanism {j}"
                    )));
                }
            }
        }
        availability.validate()?;
        if availability.bidders() != n || availability.mechanisms() != m {
            return Err(Error::Config(format!(
                "availability is {}×{}, scenario is {n}×{m}",
                availability.bidders(),
                availability.mechanisms()
            )));
        }
        Ok(Self {
            mechanisms,
            valuations,
            availability,
        })
    }

    pub fn bidders(&self) -> usize {
        self.valuations.len()
    }

    pub fn mechanism_count(&self) -> usize {
        self.mechanisms.len()
    }

    pub fn mechanisms(&self) -> &[Mechanism<S>] {
        &self.mechanisms
    }

    pub fn mechanism(&self, j: usize) -> &Mechanism<S> {
        &self.mechanisms[j]
    }

    pub fn valuations(&self) -> &[Valuation<S>] {
        &self.valuations
    }

    pub fn valuation(&self, i: usize) -> &Valuation<S> {
        &self.valuations[i]
    }

    pub fn availability(&self) -> &AvailabilityModel<S> {
        &self.availability
    }

    pub fn with_availability(&self, availability: AvailabilityModel<S>) -> Result<Self> {
        Self::new(self.mechanisms.clone(), self.valuations.clone(), availability)
    }

    /// Product lattice of bidder `i`'s outcomes.
    pub fn bidder_lattice(&self, i: usize) -> &ProductLattice {
        self.valuations[i].lattice()
    }

    pub fn validate_profile(&self, b: &BidProfile) -> Result<()> {
        if b.bidders() != self.bidders() || b.mechanisms() != self.mechanism_count() {
            return Err(Error::Config("bid profile dimensions do not match the scenario".into()));
        }
        for i in 0..self.bidders() {
            for j in 0..self.mechanism_count() {
                if b.get(i, j) >= self.mechanisms[j].grid(i).len() {
                    return Err(Error::Config(format!("bid of bidder {i} on mechanism {j} is off the grid")));
                }
            }
        }
        Ok(())
    }

    fn validate_availability(&self, a: &AvailabilityRealization) -> Result<()> {
        if a.bidders() != self.bidders() || a.mechanisms() != self.mechanism_count() {
            return Err(Error::Config("availability dimensions do not match the scenario".into()));
        }
        Ok(())
    }

    /// Unchecked composed evaluation into `n × m` buffers.
    pub fn apply_into(&self, bids: &[usize], a: &AvailabilityRealization, outcomes: &mut [usize], payments: &mut [S]) {
        let (n, m) = (self.bidders(), self.mechanism_count());
        let mut col = vec![0; n];
        let mut out = vec![0; n];
        let mut pay = vec![S::zero(); n];
        for (j, mech) in self.mechanisms.iter().enumerate() {
            for i in 0..n {
                col[i] = if a.get(i, j) { bids[i * m + j] } else { 0 };
            }
            mech.evaluate_into(&col, &mut out, &mut pay);
            for i in 0..n {
                outcomes[i * m + j] = out[i];
                payments[i * m + j] = pay[i];
            }
        }
    }

    /// Evaluates every mechanism with unavailable bids forced to 0.
    pub fn apply_composed(&self, b: &BidProfile, a: &AvailabilityRealization) -> Result<CompositeOutcome<S>> {
        self.validate_profile(b)?;
        self.validate_availability(a)?;
        let (n, m) = (self.bidders(), self.mechanism_count());
        let mut outcomes = vec![0; n * m];
        let mut payments = vec![S::zero(); n * m];
        self.apply_into(b.as_slice(), a, &mut outcomes, &mut payments);
        Ok(CompositeOutcome {
            n,
            m,
            outcomes,
            payments,
        })
    }

    /// `v_i(f(b)) − p_i(b)` under availability `a`.
    pub fn utility(&self, i: usize, b: &BidProfile, a: &AvailabilityRealization) -> Result<S> {
        let out = self.apply_composed(b, a)?;
        Ok(self.valuations[i].value(out.bidder_outcome(i)) - out.total_payment(i))
    }

    /// Every bidder's utility for an evaluated outcome.
    pub fn utilities(&self, out: &CompositeOutcome<S>) -> Vec<S> {
        (0..self.bidders())
            .map(|i| self.valuations[i].value(out.bidder_outcome(i)) - out.total_payment(i))
            .collect()
    }

    /// `Σ_i v_i(x_i)` of an evaluated outcome.
    pub fn welfare(&self, out: &CompositeOutcome<S>) -> S {
        (0..self.bidders()).map(|i| self.valuations[i].value(out.bidder_outcome(i))).sum()
    }

    /// Bound on `|u_i|`: largest value plus the largest total payment.
    pub fn utility_range(&self, i: usize) -> S {
        let pay: S = self.mechanisms.iter().map(|m| m.max_payment(i)).sum();
        (self.valuations[i].max_value() + pay).max(S::tolerance())
    }

    /// Number of joint bids (across mechanisms) available to bidder `i`.
    pub fn joint_action_count(&self, i: usize) -> usize {
        self.mechanisms.iter().map(|m| m.grid(i).len()).product()
    }

    /// Joint bid with index `a` (last mechanism fastest).
    pub fn decode_joint(&self, i: usize, mut a: usize, out: &mut [usize]) {
        for j in (0..self.mechanism_count()).rev() {
            let k = self.mechanisms[j].grid(i).len();
            out[j] = a % k;
            a /= k;
        }
    }

    pub fn encode_joint(&self, i: usize, bids: &[usize]) -> usize {
        bids.iter()
            .zip(&self.mechanisms)
            .fold(0, |acc, (&b, m)| acc * m.grid(i).len() + b)
    }

    /// Outcome element and payment of bidder `i` on every mechanism for each
    /// own grid bid, holding the other bidders' bids in `bids` (`n × m`) fixed.
    /// Entry `[j][c]` is the result of bidding grid index `c` on mechanism `j`.
    pub fn own_bid_table(&self, i: usize, bids: &[usize], a: &AvailabilityRealization) -> Vec<Vec<(usize, S)>> {
        let (n, m) = (self.bidders(), self.mechanism_count());
        let mut col = vec![0; n];
        let mut out = vec![0; n];
        let mut pay = vec![S::zero(); n];
        (0..m)
            .map(|j| {
                let mech = &self.mechanisms[j];
                for k in 0..n {
                    col[k] = if a.get(k, j) { bids[k * m + j] } else { 0 };
                }
                let grid_len = mech.grid(i).len();
                if !a.get(i, j) {
                    col[i] = 0;
                    mech.evaluate_into(&col, &mut out, &mut pay);
                    return vec![(out[i], pay[i]); grid_len];
                }
                (0..grid_len)
                    .map(|c| {
                        col[i] = c;
                        mech.evaluate_into(&col, &mut out, &mut pay);
                        (out[i], pay[i])
                    })
                    .collect()
            })
            .collect()
    }

    /// Utility of every joint action of bidder `i` (in [`Self::decode_joint`]
    /// order) against the other bids in `bids` under availability `a`.
    pub fn joint_action_utilities(&self, i: usize, bids: &[usize], a: &AvailabilityRealization) -> Vec<S> {
        let table = self.own_bid_table(i, bids, a);
        let m = self.mechanism_count();
        let count = self.joint_action_count(i);
        let mut choice = vec![0usize; m];
        let mut x = vec![0usize; m];
        let mut utilities = Vec::with_capacity(count);
        loop {
            let mut pay = S::zero();
            for j in 0..m {
                let (e, p) = table[j][choice[j]];
                x[j] = e;
                pay += p;
            }
            utilities.push(self.valuations[i].value(&x) - pay);
            if !advance(&mut choice, &table) {
                break;
            }
        }
        utilities
    }

    /// Number of joint outcomes searched by [`Self::optimum`] when every
    /// bidder is available.
    pub fn outcome_space_size(&self) -> Result<u128> {
        let all = vec![true; self.bidders()];
        let mut size = 1u128;
        for m in &self.mechanisms {
            size = size.saturating_mul(m.achievable_outcomes(&all)?.len() as u128);
        }
        Ok(size)
    }

    /// Welfare-maximizing achievable outcome for realization `a`.
    ///
    /// Ties go to the lexicographically greatest joint outcome, read
    /// mechanism by mechanism.
    pub fn optimum(&self, a: &AvailabilityRealization, budget: u128) -> Result<Optimum<S>> {
        self.validate_availability(a)?;
        let (n, m) = (self.bidders(), self.mechanism_count());
        let options: Vec<Vec<Vec<usize>>> = (0..m)
            .map(|j| self.mechanisms[j].achievable_outcomes(&a.column(j)))
            .collect::<Result<_>>()?;
        let size = options.iter().fold(1u128, |acc, o| acc.saturating_mul(o.len() as u128));
        check_budget("optimum search", size, budget)?;
        let mut choice = vec![0usize; m];
        let mut x = vec![vec![0usize; m]; n];
        let mut welfare_of = |choice: &[usize]| -> S {
            for (j, &c) in choice.iter().enumerate() {
                for (i, row) in x.iter_mut().enumerate() {
                    row[j] = options[j][c][i];
                }
            }
            x.iter().enumerate().map(|(i, row)| self.valuations[i].value(row)).sum()
        };
        let mut welfares = Vec::with_capacity(size as usize);
        loop {
            welfares.push(welfare_of(&choice));
            if !advance(&mut choice, &options) {
                break;
            }
        }
        let best = welfares.iter().copied().fold(S::neg_infinity(), S::max);
        let pick = welfares
            .iter()
            .rposition(|&w| w >= best - S::tolerance())
            .expect("nonempty search");
        let mut rem = pick;
        for j in (0..m).rev() {
            choice[j] = rem % options[j].len();
            rem /= options[j].len();
        }
        Ok(Optimum {
            welfare: best,
            per_mechanism: (0..m).map(|j| options[j][choice[j]].clone()).collect(),
        })
    }
}

/// Odometer increment over `options` (last position fastest).
fn advance<T>(choice: &mut [usize], options: &[Vec<T>]) -> bool {
    for j in (0..choice.len()).rev() {
        choice[j] += 1;
        if choice[j] < options[j].len() {
            return true;
        }
        choice[j] = 0;
    }
    false
}

/// Serialized scenario; valuations default to additive item values carried
/// by the mechanisms, availability defaults to always available.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct ScenarioSpec<S> {
    pub mechanisms: Vec<Mechanism<S>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valuations: Option<Vec<Valuation<S>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub availability: Option<AvailabilityModel<S>>,
}

impl<S: Scalar> TryFrom<ScenarioSpec<S>> for ComposedScenario<S> {
    type Error = Error;

    fn try_from(spec: ScenarioSpec<S>) -> Result<Self> {
        let m = spec.mechanisms.len();
        let n = spec.mechanisms.first().map_or(0, Mechanism::bidders);
        let valuations = match spec.valuations {
            Some(v) => v,
            None => (0..n)
                .map(|i| {
                    let lattice = ProductLattice::new(
                        spec.mechanisms.iter().map(|mech| mech.outcome_lattice(i).clone()).collect(),
                    );
                    let comps = spec
                        .mechanisms
                        .iter()
                        .enumerate()
                        .map(|(j, mech)| {
                            let v = mech.default_values().ok_or_else(|| {
                                Error::Config(format!("mechanism {j} carries no values and no valuations were given"))
                            })?;
                            if mech.outcome_lattice(i).len() != 2 {
                                return Err(Error::Config(format!(
                                    "default valuations need win/lose outcomes on mechanism {j}"
                                )));
                            }
                            Ok(vec![S::zero(), v[i]])
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Valuation::additive(lattice, comps)
                })
                .collect::<Result<_>>()?,
        };
        let availability = spec
            .availability
            .unwrap_or_else(|| AvailabilityModel::always(valuations.len(), m));
        ComposedScenario::new(spec.mechanisms, valuations, availability)
    }
}

impl<S: Scalar> From<ComposedScenario<S>> for ScenarioSpec<S> {
    fn from(s: ComposedScenario<S>) -> Self {
        ScenarioSpec {
            mechanisms: s.mechanisms,
            valuations: Some(s.valuations),
            availability: Some(s.availability),
        }
    }
}

impl<S: Scalar> Serialize for ComposedScenario<S> {
    fn serialize<Ser: serde::Serializer>(&self, s: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        ScenarioSpec::from(self.clone()).serialize(s)
    }
}

impl<'de, S: Scalar> Deserialize<'de> for ComposedScenario<S> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let spec = ScenarioSpec::deserialize(d)?;
        ComposedScenario::try_from(spec).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::valuation::SetFunction;

    fn auction() -> Mechanism<f64> {
        Mechanism::first_price_auction(&[2.0, 2.0], vec![0.0, 1.0, 2.0]).unwrap()
    }

    #[test]
    fn first_price_examples() {
        let m = auction();
        assert_eq!(m.evaluate(&[2, 1]), (vec![1, 0], vec![2.0, 0.0]));
        assert_eq!(m.evaluate(&[1, 1]), (vec![1, 0], vec![1.0, 0.0]));
        assert_eq!(m.evaluate(&[0, 0]), (vec![0, 0], vec![0.0, 0.0]));
        assert_eq!(m.evaluate(&[0, 2]), (vec![0, 1], vec![0.0, 2.0]));
    }

    #[test]
    fn grid_must_contain_zero() {
        assert!(matches!(
            Mechanism::<f64>::first_price(2, vec![1.0, 2.0]),
            Err(Error::InvalidGrid(_))
        ));
    }

    #[test]
    fn willingness_to_pay_examples() {
        let m = auction();
        assert_eq!(m.willingness_to_pay(0, 2, &[1, 0]).unwrap(), 2.0);
        assert_eq!(m.willingness_to_pay(0, 0, &[0, 1]).unwrap(), 0.0);
        assert_eq!(m.willingness_to_pay(0, 2, &[0, 1]).unwrap(), 0.0);
        assert_eq!(m.willingness_to_pay(0, 2, &[0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn achievable_respects_mask() {
        let m = auction();
        assert_eq!(m.achievable_outcomes(&[true, true]).unwrap(), vec![vec![0, 0], vec![0, 1], vec![1, 0]]);
        assert_eq!(m.achievable_outcomes(&[false, true]).unwrap(), vec![vec![0, 0], vec![0, 1]]);
    }

    #[test]
    fn half_value_targets_argmax() {
        let m = auction();
        let values = vec![vec![0.0, 2.0], vec![0.0, 2.0]];
        assert_eq!(m.welfare_argmax(&values, &[true, true]).unwrap(), (2.0, vec![1, 0]));
        assert_eq!(m.deviation(&values, None).unwrap(), vec![1, 0]);
        let values = vec![vec![0.0, 0.0], vec![0.0, 2.0]];
        assert_eq!(m.deviation(&values, None).unwrap(), vec![0, 1]);
    }

    fn two_item_single_bidder() -> ComposedScenario<f64> {
        let mech = Mechanism::first_price(1, vec![0.0, 1.0, 2.0]).unwrap();
        let v = Valuation::set_function(
            2,
            SetFunction::BudgetAdditive {
                values: vec![2.0, 2.0],
                cap: 3.0,
            },
        )
        .unwrap();
        ComposedScenario::new(vec![mech.clone(), mech], vec![v], AvailabilityModel::always(1, 2)).unwrap()
    }

    #[test]
    fn composed_masking() {
        let s = two_item_single_bidder();
        let b = BidProfile::new(1, 2, vec![1, 1]).unwrap();
        let a = AvailabilityRealization::new(1, 2, vec![true, false]).unwrap();
        let out = s.apply_composed(&b, &a).unwrap();
        assert_eq!(out.outcomes, vec![1, 0]);
        assert_eq!(out.payments, vec![1.0, 0.0]);
        assert_eq!(s.utility(0, &b, &a).unwrap(), 1.0);
        let none = AvailabilityRealization::all(1, 2, false);
        let out = s.apply_composed(&b, &none).unwrap();
        assert_eq!(out.outcomes, vec![0, 0]);
        assert_eq!(out.payments, vec![0.0, 0.0]);
        assert_eq!(s.utility(0, &BidProfile::zeros(1, 2), &AvailabilityRealization::all(1, 2, true)).unwrap(), 0.0);
    }

    #[test]
    fn optimum_tie_break_prefers_bidder_zero() {
        let s: ComposedScenario<f64> = serde_json::from_str(
            r#"{"mechanisms":[{"kind":"first_price","grid":[0,1,2],"values":[2,2]}]}"#,
        )
        .unwrap();
        let opt = s.optimum(&AvailabilityRealization::all(2, 1, true), 1000).unwrap();
        assert_eq!(opt.welfare, 2.0);
        assert_eq!(opt.per_mechanism, vec![vec![1, 0]]);
    }

    #[test]
    fn channel_mechanism_form() {
        use crate::sinr::{Link, SinrInstance};
        let l = Link { sx: 0.0, sy: 0.0, rx: 1.0, ry: 0.0 };
        let far = Link { sx: 100.0, sy: 0.0, rx: 101.0, ry: 0.0 };
        let inst = SinrInstance::new(vec![l, l, far], 1.0, 3.0, 1.5, 0.0).unwrap();
        let m = Mechanism::channel_access(inst.clone()).unwrap();
        for mask in 0..8usize {
            let bids: Vec<usize> = (0..3).map(|i| mask >> i & 1).collect();
            let (out, pay) = m.evaluate(&bids);
            let expect = inst.channel_utilities(&bids.iter().map(|&b| b == 1).collect::<Vec<_>>());
            for i in 0..3 {
                assert_eq!(2.0 * out[i] as f64 - pay[i], expect[i]);
            }
        }
    }

    #[test]
    fn custom_table_checks_masking() {
        let lat = vec![OutcomeLattice::boolean(); 1];
        // bid 0 wins: violates the masking rule
        let bad = Mechanism::custom_table(vec![vec![0.0, 1.0]], lat.clone(), vec![1, 1], vec![0.0, 1.0], DeviationRule::ZeroBid);
        assert!(bad.is_err());
        let ok = Mechanism::custom_table(vec![vec![0.0, 1.0]], lat, vec![0, 1], vec![0.0, 1.0], DeviationRule::ZeroBid).unwrap();
        let json = serde_json::to_string(&ok).unwrap();
        let back: Mechanism<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ok);
    }

    #[test]
    fn scenario_roundtrip() {
        let s = two_item_single_bidder();
        let json = serde_json::to_string(&s).unwrap();
        let back: ComposedScenario<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
