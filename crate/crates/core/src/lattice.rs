//! Finite outcome lattices and their products.
//!
//! Every (bidder, mechanism) slot has an [`OutcomeLattice`] whose elements are
//! addressed by index. A bidder's outcome space is the [`ProductLattice`] of
//! its slots, and an [`OutcomeVector`] picks one element per factor.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_budget, Error, Result};

/// Finite lattice stored as an explicit order table with precomputed join and meet.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LatticeSpec", into = "LatticeSpec")]
pub struct OutcomeLattice {
    labels: Vec<String>,
    /// `leq[a * n + b]` is `a ⪯ b`.
    leq: Vec<bool>,
    join: Vec<usize>,
    meet: Vec<usize>,
    bottom: usize,
    top: usize,
}

/// Serialized form: element labels plus the covering relation `(lower, upper)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub elements: Vec<String>,
    pub covers: Vec<(usize, usize)>,
}

impl fmt::Debug for OutcomeLattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OutcomeLattice")
            .field("elements", &self.labels)
            .field("bottom", &self.bottom)
            .finish()
    }
}

impl OutcomeLattice {
    /// Builds a lattice from labels and a generating relation (`lower ≺ upper`).
    ///
    /// The relation is closed reflexively and transitively; the result must be
    /// antisymmetric and every pair must have a unique least upper bound and
    /// greatest lower bound.
    pub fn from_covers(labels: Vec<String>, covers: &[(usize, usize)]) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidLattice("lattice has no elements".into()));
        }
        let mut leq = vec![false; n * n];
        for a in 0..n {
            leq[a * n + a] = true;
        }
        for &(lo, hi) in covers {
            if lo >= n || hi >= n {
                return Err(Error::InvalidLattice(format!(
                    "cover ({lo}, {hi}) references an element outside 0..{n}"
                )));
            }
            leq[lo * n + hi] = true;
        }
        // Warshall closure.
        for k in 0..n {
            for a in 0..n {
                if !leq[a * n + k] {
                    continue;
                }
                for b in 0..n {
                    if leq[k * n + b] {
                        leq[a * n + b] = true;
                    }
                }
            }
        }
        for a in 0..n {
            for b in (a + 1)..n {
                if leq[a * n + b] && leq[b * n + a] {
                    return Err(Error::InvalidLattice(format!(
                        "order is not antisymmetric: {} and {} are mutually below each other",
                        labels[a], labels[b]
                    )));
                }
            }
        }
        let least_of = |cands: &[usize], below: bool| -> Option<usize> {
            cands.iter().copied().find(|&c| {
                cands.iter().all(|&d| {
                    if below {
                        leq[c * n + d]
                    } else {
                        leq[d * n + c]
                    }
                })
            })
        };
        let mut join = vec![0; n * n];
        let mut meet = vec![0; n * n];
        for a in 0..n {
            for b in 0..n {
                let uppers: Vec<usize> = (0..n)
                    .filter(|&u| leq[a * n + u] && leq[b * n + u])
                    .collect();
                let lowers: Vec<usize> = (0..n)
                    .filter(|&l| leq[l * n + a] && leq[l * n + b])
                    .collect();
                join[a * n + b] = least_of(&uppers, true).ok_or_else(|| {
                    Error::InvalidLattice(format!(
                        "{} and {} have no least upper bound",
                        labels[a], labels[b]
                    ))
                })?;
                meet[a * n + b] = least_of(&lowers, false).ok_or_else(|| {
                    Error::InvalidLattice(format!(
                        "{} and {} have no greatest lower bound",
                        labels[a], labels[b]
                    ))
                })?;
            }
        }
        let all: Vec<usize> = (0..n).collect();
        let bottom = least_of(&all, true)
            .ok_or_else(|| Error::InvalidLattice("no bottom element".into()))?;
        let top = least_of(&all, false)
            .ok_or_else(|| Error::InvalidLattice("no top element".into()))?;
        Ok(Self {
            labels,
            leq,
            join,
            meet,
            bottom,
            top,
        })
    }

    /// Totally ordered lattice `0 ≺ 1 ≺ … ≺ len-1`.
    pub fn chain(len: usize) -> Result<Self> {
        let labels = (0..len).map(|i| format!("c{i}")).collect();
        let covers: Vec<_> = (1..len).map(|i| (i - 1, i)).collect();
        Self::from_covers(labels, &covers)
    }

    /// The two-element win/lose lattice of a single-item auction: `lose ≺ win`.
    pub fn boolean() -> Self {
        Self::from_covers(vec!["lose".into(), "win".into()], &[(0, 1)])
            .expect("two-element chain is a lattice")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, a: usize) -> &str {
        &self.labels[a]
    }

    pub fn bottom(&self) -> usize {
        self.bottom
    }

    pub fn top(&self) -> usize {
        self.top
    }

    pub fn contains(&self, a: usize) -> bool {
        a < self.len()
    }

    /// `a ⪯ b`.
    #[inline]
    pub fn leq(&self, a: usize, b: usize) -> bool {
        self.leq[a * self.len() + b]
    }

    #[inline]
    pub fn join(&self, a: usize, b: usize) -> usize {
        self.join[a * self.len() + b]
    }

    #[inline]
    pub fn meet(&self, a: usize, b: usize) -> usize {
        self.meet[a * self.len() + b]
    }

    /// Whether `a ∧ (b ∨ c) = (a ∧ b) ∨ (a ∧ c)` for all triples.
    pub fn is_distributive(&self) -> bool {
        let n = self.len();
        (0..n).all(|a| {
            (0..n).all(|b| {
                (0..n).all(|c| self.meet(a, self.join(b, c)) == self.join(self.meet(a, b), self.meet(a, c)))
            })
        })
    }

    /// Covering pairs `(a, b)` with `a ≺ b` and nothing strictly between.
    pub fn covering_relation(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        let mut out = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if a == b || !self.leq(a, b) {
                    continue;
                }
                let between = (0..n).any(|c| c != a && c != b && self.leq(a, c) && self.leq(c, b));
                if !between {
                    out.push((a, b));
                }
            }
        }
        out
    }
}

impl TryFrom<LatticeSpec> for OutcomeLattice {
    type Error = Error;

    fn try_from(spec: LatticeSpec) -> Result<Self> {
        Self::from_covers(spec.elements, &spec.covers)
    }
}

impl From<OutcomeLattice> for LatticeSpec {
    fn from(l: OutcomeLattice) -> Self {
        LatticeSpec {
            covers: l.covering_relation(),
            elements: l.labels,
        }
    }
}

/// One element per factor of a [`ProductLattice`].
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutcomeVector(pub Vec<usize>);

impl OutcomeVector {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<usize>> for OutcomeVector {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

impl std::ops::Index<usize> for OutcomeVector {
    type Output = usize;

    fn index(&self, j: usize) -> &usize {
        &self.0[j]
    }
}

/// Ordered list of factor lattices with the componentwise order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProductLattice {
    factors: Vec<OutcomeLattice>,
}

impl ProductLattice {
    pub fn new(factors: Vec<OutcomeLattice>) -> Self {
        Self { factors }
    }

    /// `m` copies of the win/lose lattice, i.e. the subsets of `m` items.
    pub fn boolean(m: usize) -> Self {
        Self::new(vec![OutcomeLattice::boolean(); m])
    }

    pub fn factors(&self) -> &[OutcomeLattice] {
        &self.factors
    }

    pub fn factor(&self, j: usize) -> &OutcomeLattice {
        &self.factors[j]
    }

    /// Number of factors.
    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    /// Total number of outcome vectors, `None` on overflow.
    pub fn size(&self) -> Option<usize> {
        self.factors
            .iter()
            .try_fold(1usize, |acc, f| acc.checked_mul(f.len()))
    }

    pub fn size_u128(&self) -> u128 {
        self.factors
            .iter()
            .fold(1u128, |acc, f| acc.saturating_mul(f.len() as u128))
    }

    pub fn bottom(&self) -> OutcomeVector {
        OutcomeVector(self.factors.iter().map(|f| f.bottom()).collect())
    }

    pub fn top(&self) -> OutcomeVector {
        OutcomeVector(self.factors.iter().map(|f| f.top()).collect())
    }

    pub fn validate(&self, x: &[usize]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::InvalidOutcome(format!(
                "outcome has {} components, lattice has {} factors",
                x.len(),
                self.dim()
            )));
        }
        for (j, (&e, f)) in x.iter().zip(&self.factors).enumerate() {
            if !f.contains(e) {
                return Err(Error::InvalidOutcome(format!(
                    "component {j} is {e}, factor has {} elements",
                    f.len()
                )));
            }
        }
        Ok(())
    }

    /// Componentwise least upper bound.
    pub fn join(&self, x: &[usize], y: &[usize]) -> Result<OutcomeVector> {
        self.validate(x)?;
        self.validate(y)?;
        Ok(self.join_unchecked(x, y))
    }

    /// Componentwise greatest lower bound.
    pub fn meet(&self, x: &[usize], y: &[usize]) -> Result<OutcomeVector> {
        self.validate(x)?;
        self.validate(y)?;
        Ok(self.meet_unchecked(x, y))
    }

    pub(crate) fn join_unchecked(&self, x: &[usize], y: &[usize]) -> OutcomeVector {
        OutcomeVector(
            self.factors
                .iter()
                .zip(x.iter().zip(y))
                .map(|(f, (&a, &b))| f.join(a, b))
                .collect(),
        )
    }

    pub(crate) fn meet_unchecked(&self, x: &[usize], y: &[usize]) -> OutcomeVector {
        OutcomeVector(
            self.factors
                .iter()
                .zip(x.iter().zip(y))
                .map(|(f, (&a, &b))| f.meet(a, b))
                .collect(),
        )
    }

    /// Product order `x ⪯ y`.
    pub fn leq(&self, x: &[usize], y: &[usize]) -> bool {
        self.factors
            .iter()
            .zip(x.iter().zip(y))
            .all(|(f, (&a, &b))| f.leq(a, b))
    }

    /// Mixed-radix index of `x` (last component varies fastest).
    #[inline]
    pub fn index_of(&self, x: &[usize]) -> usize {
        let mut idx = 0;
        for (f, &e) in self.factors.iter().zip(x) {
            idx = idx * f.len() + e;
        }
        idx
    }

    /// Inverse of [`index_of`](Self::index_of).
    pub fn vector_at(&self, mut idx: usize) -> OutcomeVector {
        let mut out = vec![0; self.dim()];
        for (slot, f) in out.iter_mut().zip(&self.factors).rev() {
            *slot = idx % f.len();
            idx /= f.len();
        }
        OutcomeVector(out)
    }

    /// All outcome vectors in canonical index order.
    pub fn iter(&self) -> impl Iterator<Item = OutcomeVector> + '_ {
        let n = self.size().unwrap_or(usize::MAX);
        (0..n).map(move |i| self.vector_at(i))
    }

    /// All outcome vectors, refusing lattices larger than `budget`.
    pub fn enumerate(&self, budget: u128) -> Result<Vec<OutcomeVector>> {
        check_budget("product lattice enumeration", self.size_u128(), budget)?;
        Ok(self.iter().collect())
    }

    /// Whether every factor is distributive (then so is the product).
    pub fn is_distributive(&self) -> bool {
        self.factors.iter().all(OutcomeLattice::is_distributive)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diamond() -> OutcomeLattice {
        // bottom < a, b < top
        OutcomeLattice::from_covers(
            vec!["0".into(), "a".into(), "b".into(), "1".into()],
            &[(0, 1), (0, 2), (1, 3), (2, 3)],
        )
        .unwrap()
    }

    fn m3() -> OutcomeLattice {
        OutcomeLattice::from_covers(
            vec!["0".into(), "a".into(), "b".into(), "c".into(), "1".into()],
            &[(0, 1), (0, 2), (0, 3), (1, 4), (2, 4), (3, 4)],
        )
        .unwrap()
    }

    #[test]
    fn boolean_join_of_complements_is_top() {
        let p = ProductLattice::boolean(2);
        assert_eq!(p.join(&[1, 0], &[0, 1]).unwrap(), OutcomeVector(vec![1, 1]));
        assert_eq!(p.meet(&[1, 0], &[0, 1]).unwrap(), OutcomeVector(vec![0, 0]));
    }

    #[test]
    fn join_is_idempotent_and_bottom_is_identity() {
        let p = ProductLattice::new(vec![diamond(), OutcomeLattice::chain(3).unwrap()]);
        let bot = p.bottom();
        for x in p.iter() {
            assert_eq!(p.join(x.as_slice(), x.as_slice()).unwrap(), x);
            assert_eq!(p.join(x.as_slice(), bot.as_slice()).unwrap(), x);
            assert!(p.leq(bot.as_slice(), x.as_slice()));
        }
    }

    #[test]
    fn invalid_component_is_rejected() {
        let p = ProductLattice::boolean(2);
        assert!(matches!(
            p.join(&[2, 0], &[0, 0]),
            Err(Error::InvalidOutcome(_))
        ));
        assert!(matches!(p.join(&[0], &[0, 0]), Err(Error::InvalidOutcome(_))));
    }

    #[test]
    fn rejects_non_lattices() {
        // two incomparable maximal elements: no join
        let err = OutcomeLattice::from_covers(
            vec!["0".into(), "a".into(), "b".into()],
            &[(0, 1), (0, 2)],
        );
        assert!(matches!(err, Err(Error::InvalidLattice(_))));
        // cycle
        let err = OutcomeLattice::from_covers(vec!["a".into(), "b".into()], &[(0, 1), (1, 0)]);
        assert!(matches!(err, Err(Error::InvalidLattice(_))));
    }

    #[test]
    fn distributivity() {
        assert!(diamond().is_distributive());
        assert!(OutcomeLattice::chain(4).unwrap().is_distributive());
        assert!(!m3().is_distributive());
    }

    #[test]
    fn index_roundtrip() {
        let p = ProductLattice::new(vec![diamond(), OutcomeLattice::chain(3).unwrap()]);
        assert_eq!(p.size(), Some(12));
        for (i, x) in p.iter().enumerate() {
            assert_eq!(p.index_of(x.as_slice()), i);
        }
    }

    #[test]
    fn serde_roundtrip_through_covers() {
        let l = diamond();
        let s = serde_json::to_string(&l).unwrap();
        assert!(s.contains("covers"));
        let back: OutcomeLattice = serde_json::from_str(&s).unwrap();
        assert_eq!(back, l);
    }

    #[test]
    fn lattice_laws_exhaustive_small() {
        let lats = vec![
            diamond(),
            m3(),
            OutcomeLattice::chain(6).unwrap(),
            OutcomeLattice::boolean(),
        ];
        for l in lats {
            let n = l.len();
            for a in 0..n {
                assert!(l.leq(l.bottom(), a));
                for b in 0..n {
                    assert_eq!(l.join(a, b), l.join(b, a));
                    assert_eq!(l.meet(a, b), l.meet(b, a));
                    assert_eq!(l.join(a, l.meet(a, b)), a);
                    assert_eq!(l.meet(a, l.join(a, b)), a);
                }
            }
        }
    }
}
