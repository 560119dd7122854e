//! Stochastic admission: which (bidder, mechanism) pairs may bid in a round.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_budget, Error, Result};
use crate::rng::{self, Rng};
use crate::scalar::Scalar;
use crate::valuation::{SetFunction, Valuation};

/// Availability distribution over `n × m` 0/1 matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AvailabilityModel<S> {
    /// `probs[i][j] = Pr[A_ij = 1]`, all entries independent.
    Independent { probs: Vec<Vec<S>> },
    /// Column `j` is available to every bidder with probability `probs[j]`.
    EverybodyOrNobody { bidders: usize, probs: Vec<S> },
    /// Deterministic 0/1 matrix.
    Fixed { matrix: Vec<Vec<u8>> },
}

/// One realized `n × m` availability matrix, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AvailabilityRealization {
    n: usize,
    m: usize,
    cells: Vec<bool>,
}

impl AvailabilityRealization {
    pub fn new(n: usize, m: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != n * m {
            return Err(Error::Config(format!(
                "availability has {} cells, expected {n}×{m}",
                cells.len()
            )));
        }
        Ok(Self { n, m, cells })
    }

    pub fn all(n: usize, m: usize, available: bool) -> Self {
        Self {
            n,
            m,
            cells: vec![available; n * m],
        }
    }

    pub fn bidders(&self) -> usize {
        self.n
    }

    pub fn mechanisms(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.m + j]
    }

    pub fn set(&mut self, i: usize, j: usize, available: bool) {
        self.cells[i * self.m + j] = available;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.cells[i * self.m..(i + 1) * self.m]
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    /// Availability of mechanism `j` for every bidder.
    pub fn column(&self, j: usize) -> Vec<bool> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    /// Every row equal, as produced by everybody-or-nobody sampling.
    pub fn rows_identical(&self) -> bool {
        (1..self.n).all(|i| self.row(i) == self.row(0))
    }
}

impl<S: Scalar> AvailabilityModel<S> {
    pub fn independent(probs: Vec<Vec<S>>) -> Result<Self> {
        let model = AvailabilityModel::Independent { probs };
        model.validate()?;
        Ok(model)
    }

    pub fn everybody_or_nobody(bidders: usize, probs: Vec<S>) -> Result<Self> {
        let model = AvailabilityModel::EverybodyOrNobody { bidders, probs };
        model.validate()?;
        Ok(model)
    }

    pub fn fixed(matrix: Vec<Vec<bool>>) -> Result<Self> {
        let model = AvailabilityModel::Fixed {
            matrix: matrix
                .into_iter()
                .map(|row| row.into_iter().map(u8::from).collect())
                .collect(),
        };
        model.validate()?;
        Ok(model)
    }

    /// Everything available to everyone.
    pub fn always(n: usize, m: usize) -> Self {
        AvailabilityModel::Fixed {
            matrix: vec![vec![1; m]; n],
        }
    }

    pub fn bidders(&self) -> usize {
        match self {
            AvailabilityModel::Independent { probs } => probs.len(),
            AvailabilityModel::EverybodyOrNobody { bidders, .. } => *bidders,
            AvailabilityModel::Fixed { matrix } => matrix.len(),
        }
    }

    pub fn mechanisms(&self) -> usize {
        match self {
            AvailabilityModel::Independent { probs } => probs.first().map_or(0, Vec::len),
            AvailabilityModel::EverybodyOrNobody { probs, .. } => probs.len(),
            AvailabilityModel::Fixed { matrix } => matrix.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.mechanisms();
        let check_prob = |q: S, what: String| -> Result<()> {
            if !(q >= S::zero() && q <= S::one()) {
                return Err(Error::Config(format!("{what} = {q} is not a probability")));
            }
            Ok(())
        };
        match self {
            AvailabilityModel::Independent { probs } => {
                for (i, row) in probs.iter().enumerate() {
                    if row.len() != m {
                        return Err(Error::Config(format!("availability row {i} has {} entries, expected {m}", row.len())));
                    }
                    for (j, q) in row.iter().enumerate() {
                        check_prob(*q, format!("q[{i}][{j}]"))?;
                    }
                }
            }
            AvailabilityModel::EverybodyOrNobody { probs, .. } => {
                for (j, q) in probs.iter().enumerate() {
                    check_prob(*q, format!("q[{j}]"))?;
                }
            }
            AvailabilityModel::Fixed { matrix } => {
                for (i, row) in matrix.iter().enumerate() {
                    if row.len() != m {
                        return Err(Error::Config(format!("availability row {i} has {} entries, expected {m}", row.len())));
                    }
                    if row.iter().any(|&a| a > 1) {
                        return Err(Error::Config(format!("fixed availability row {i} must contain only 0 and 1")));
                    }
                }
            }
        }
        Ok(())
    }

    /// `Pr[A_ij = 1]`.
    pub fn marginal(&self, i: usize, j: usize) -> S {
        match self {
            AvailabilityModel::Independent { probs } => probs[i][j],
            AvailabilityModel::EverybodyOrNobody { probs, .. } => probs[j],
            AvailabilityModel::Fixed { matrix } => {
                if matrix[i][j] == 1 {
                    S::one()
                } else {
                    S::zero()
                }
            }
        }
    }

    pub fn is_everybody_or_nobody(&self) -> bool {
        matches!(self, AvailabilityModel::EverybodyOrNobody { .. })
    }

    /// Same model with `Pr[A_ij = 1]` replaced by `q`.
    ///
    /// Only defined for independent availability, where conditioning on one
    /// entry leaves the others untouched.
    pub fn with_entry(&self, i: usize, j: usize, q: S) -> Result<Self> {
        match self {
            AvailabilityModel::Independent { probs } => {
                let mut probs = probs.clone();
                probs[i][j] = q;
                AvailabilityModel::independent(probs)
            }
            AvailabilityModel::Fixed { .. } if q == self.marginal(i, j) => Ok(self.clone()),
            _ => Err(Error::Parameter(
                "entrywise conditioning requires independent availability".into(),
            )),
        }
    }

    /// One realization from the availability stream of `seed`.
    pub fn sample(&self, seed: u64) -> AvailabilityRealization {
        self.sample_with(&mut rng::availability(seed))
    }

    /// Draws one realization; consumes one uniform per random entry (per
    /// column under everybody-or-nobody).
    pub fn sample_with(&self, rng: &mut Rng) -> AvailabilityRealization {
        let (n, m) = (self.bidders(), self.mechanisms());
        let mut cells = vec![false; n * m];
        match self {
            AvailabilityModel::Independent { probs } => {
                for (cell, q) in cells.iter_mut().zip(probs.iter().flatten()) {
                    *cell = bernoulli(rng, *q);
                }
            }
            AvailabilityModel::EverybodyOrNobody { probs, .. } => {
                for (j, q) in probs.iter().enumerate() {
                    let a = bernoulli(rng, *q);
                    for i in 0..n {
                        cells[i * m + j] = a;
                    }
                }
            }
            AvailabilityModel::Fixed { matrix } => {
                for (cell, a) in cells.iter_mut().zip(matrix.iter().flatten()) {
                    *cell = *a == 1;
                }
            }
        }
        AvailabilityRealization { n, m, cells }
    }

    /// Support size before pruning of zero-probability entries.
    pub fn support_size(&self) -> u128 {
        let free = match self {
            AvailabilityModel::Independent { probs } => probs.iter().flatten().filter(|q| is_random(**q)).count(),
            AvailabilityModel::EverybodyOrNobody { probs, .. } => probs.iter().filter(|q| is_random(**q)).count(),
            AvailabilityModel::Fixed { .. } => 0,
        };
        1u128.checked_shl(free as u32).unwrap_or(u128::MAX)
    }

    /// Every realization with positive probability, with its probability.
    ///
    /// Entries with probability 0 or 1 are fixed; the remaining ones are
    /// enumerated with the first random entry most significant and
    /// "available" before "unavailable".
    pub fn enumerate_support(&self, budget: u128) -> Result<Vec<(AvailabilityRealization, S)>> {
        check_budget("availability support", self.support_size(), budget)?;
        let (n, m) = (self.bidders(), self.mechanisms());
        // (cells controlled by this coin, probability of "available")
        let mut base = vec![false; n * m];
        let mut coins: Vec<(Vec<usize>, S)> = Vec::new();
        match self {
            AvailabilityModel::Independent { probs } => {
                for (idx, q) in probs.iter().flatten().enumerate() {
                    if is_random(*q) {
                        coins.push((vec![idx], *q));
                    } else {
                        base[idx] = *q >= S::one();
                    }
                }
            }
            AvailabilityModel::EverybodyOrNobody { probs, .. } => {
                for (j, q) in probs.iter().enumerate() {
                    let cells: Vec<usize> = (0..n).map(|i| i * m + j).collect();
                    if is_random(*q) {
                        coins.push((cells, *q));
                    } else {
                        for c in cells {
                            base[c] = *q >= S::one();
                        }
                    }
                }
            }
            AvailabilityModel::Fixed { matrix } => {
                for (cell, a) in base.iter_mut().zip(matrix.iter().flatten()) {
                    *cell = *a == 1;
                }
            }
        }
        let u = coins.len();
        let mut out = Vec::with_capacity(1 << u);
        for mask in 0usize..(1 << u) {
            let mut cells = base.clone();
            let mut p = S::one();
            for (k, (targets, q)) in coins.iter().enumerate() {
                let unavailable = mask >> (u - 1 - k) & 1 == 1;
                p *= if unavailable { S::one() - *q } else { *q };
                for &c in targets {
                    cells[c] = !unavailable;
                }
            }
            out.push((AvailabilityRealization { n, m, cells }, p));
        }
        Ok(out)
    }
}

fn is_random<S: Scalar>(q: S) -> bool {
    q > S::zero() && q < S::one()
}

fn bernoulli<S: Scalar>(rng: &mut Rng, q: S) -> bool {
    let u: f64 = rng.gen();
    u < q.as_f64()
}

/// Upper bound on copies per item in [`unit_demand_transform`].
pub const MAX_COPIES: usize = 8;

/// One copy of an item produced by [`unit_demand_transform`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemCopy<S> {
    pub item: usize,
    pub copy: usize,
    pub value: S,
    /// Independent availability probability of this copy.
    pub prob: S,
    /// Set when no residual mass remains for this copy.
    pub never_available: bool,
}

/// Unit-demand bidder rewritten as fixed values on independently available copies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitDemandFragment<S> {
    pub copies: Vec<ItemCopy<S>>,
}

impl<S: Scalar> UnitDemandFragment<S> {
    /// Unit-demand valuation over the copies.
    pub fn valuation(&self) -> Result<Valuation<S>> {
        Valuation::set_function(
            self.copies.len(),
            SetFunction::UnitDemand {
                values: self.copies.iter().map(|c| c.value).collect(),
            },
        )
    }

    /// Availability row of the bidder over the copies.
    pub fn availability_row(&self) -> Vec<S> {
        self.copies.iter().map(|c| c.prob).collect()
    }

    /// Exact distribution of the best available copy of `item` (0 if none),
    /// merged by value and sorted by decreasing value.
    pub fn max_value_distribution(&self, item: usize) -> Vec<(S, S)> {
        let copies: Vec<&ItemCopy<S>> = self.copies.iter().filter(|c| c.item == item).collect();
        let mut dist: Vec<(S, S)> = Vec::new();
        for mask in 0usize..(1 << copies.len()) {
            let mut p = S::one();
            let mut best = S::zero();
            for (k, c) in copies.iter().enumerate() {
                if mask >> k & 1 == 1 {
                    p *= c.prob;
                    best = best.max(c.value);
                } else {
                    p *= S::one() - c.prob;
                }
            }
            if p > S::zero() {
                push_merged(&mut dist, best, p);
            }
        }
        dist.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite values"));
        dist
    }
}

fn push_merged<S: Scalar>(dist: &mut Vec<(S, S)>, value: S, p: S) {
    match dist.iter_mut().find(|(v, _)| *v == value) {
        Some(entry) => entry.1 += p,
        None => dist.push((value, p)),
    }
}

/// Splits each item's random value into copies with fixed values and
/// independent availability.
///
/// `value_dists[j]` lists `(v^(k), q^(k))` with values non-increasing and
/// probabilities summing to 1. Equal values are merged first. Copy `k` gets
/// probability `q^(k) / Σ_{k' ≥ k} q^(k')`.
pub fn unit_demand_transform<S: Scalar>(value_dists: &[Vec<(S, S)>]) -> Result<UnitDemandFragment<S>> {
    let mut copies = Vec::new();
    for (item, dist) in value_dists.iter().enumerate() {
        if dist.is_empty() {
            return Err(Error::Config(format!("item {item} has an empty value distribution")));
        }
        if dist.windows(2).any(|w| w[0].0 < w[1].0) {
            return Err(Error::Config(format!("item {item}: values must be non-increasing")));
        }
        if dist.iter().any(|(v, q)| *v < S::zero() || *q < S::zero() || *q > S::one()) {
            return Err(Error::Config(format!("item {item}: negative value or invalid probability")));
        }
        let total: S = dist.iter().map(|(_, q)| *q).sum();
        if (total - S::one()).abs() > S::tolerance() {
            return Err(Error::Config(format!("item {item}: probabilities sum to {total}")));
        }
        let mut merged: Vec<(S, S)> = Vec::new();
        for &(v, q) in dist {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += q,
                _ => merged.push((v, q)),
            }
        }
        if merged.len() > MAX_COPIES {
            return Err(Error::Config(format!(
                "item {item} has {} distinct values, at most {MAX_COPIES} supported",
                merged.len()
            )));
        }
        let mut residual = S::one();
        for (copy, &(value, q)) in merged.iter().enumerate() {
            let (prob, never_available) = if residual > S::zero() {
                ((q / residual).min(S::one()), false)
            } else {
                (S::zero(), true)
            };
            copies.push(ItemCopy {
                item,
                copy,
                value,
                prob,
                never_available,
            });
            residual = (residual - q).max(S::zero());
            if residual <= S::tolerance() {
                residual = S::zero();
            }
        }
    }
    Ok(UnitDemandFragment { copies })
}
