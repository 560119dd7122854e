//! Valuation functions over product lattices and checkers for their defining
//! properties (monotonicity, diminishing marginal returns, submodularity).

use serde::{Deserialize, Serialize};

use crate::error::{check_budget, Error, Result};
use crate::lattice::{OutcomeLattice, OutcomeVector, ProductLattice};
use crate::scalar::Scalar;

/// Representation tag of a [`Valuation`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValuationKind {
    Table,
    Xos,
    SetFunction,
}

/// Set functions on `m` items, read on the boolean product lattice (item `j`
/// is in the set iff component `j` is the top element).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetFunction<S> {
    /// Weighted coverage: item `j` covers the ground elements `covers[j]`.
    Coverage { weights: Vec<S>, covers: Vec<Vec<usize>> },
    /// `min(cap, Σ_{j ∈ S} values[j])`.
    BudgetAdditive { values: Vec<S>, cap: S },
    /// `max_{j ∈ S} values[j]`.
    UnitDemand { values: Vec<S> },
    /// Explicit table indexed by the bitmask of the set (bit `j` = item `j`).
    Tabulated { values: Vec<S> },
}

impl<S: Scalar> SetFunction<S> {
    fn eval(&self, items: impl Iterator<Item = bool> + Clone) -> S {
        match self {
            SetFunction::Coverage { weights, covers } => {
                let mut covered = vec![false; weights.len()];
                for (j, inside) in items.enumerate() {
                    if inside {
                        for &e in &covers[j] {
                            covered[e] = true;
                        }
                    }
                }
                covered
                    .iter()
                    .zip(weights)
                    .filter(|(c, _)| **c)
                    .map(|(_, w)| *w)
                    .sum()
            }
            SetFunction::BudgetAdditive { values, cap } => {
                let total: S = items
                    .zip(values)
                    .filter(|(inside, _)| *inside)
                    .map(|(_, v)| *v)
                    .sum();
                total.min(*cap)
            }
            SetFunction::UnitDemand { values } => items
                .zip(values)
                .filter(|(inside, _)| *inside)
                .fold(S::zero(), |acc, (_, v)| acc.max(*v)),
            SetFunction::Tabulated { values } => {
                let mask = items
                    .enumerate()
                    .fold(0usize, |acc, (j, inside)| acc | (usize::from(inside) << j));
                values[mask]
            }
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidValuation(msg));
        match self {
            SetFunction::Coverage { weights, covers } => {
                if covers.len() != m {
                    return bad(format!("coverage lists {} items, expected {m}", covers.len()));
                }
                if let Some(e) = covers.iter().flatten().find(|&&e| e >= weights.len()) {
                    return bad(format!("coverage references ground element {e}"));
                }
                if weights.iter().any(|w| *w < S::zero()) {
                    return bad("coverage weights must be nonnegative".into());
                }
            }
            SetFunction::BudgetAdditive { values, cap } => {
                if values.len() != m {
                    return bad(format!("budget-additive lists {} items, expected {m}", values.len()));
                }
                if values.iter().any(|v| *v < S::zero()) || *cap < S::zero() {
                    return bad("budget-additive values must be nonnegative".into());
                }
            }
            SetFunction::UnitDemand { values } => {
                if values.len() != m {
                    return bad(format!("unit-demand lists {} items, expected {m}", values.len()));
                }
                if values.iter().any(|v| *v < S::zero()) {
                    return bad("unit-demand values must be nonnegative".into());
                }
            }
            SetFunction::Tabulated { values } => {
                if m >= usize::BITS as usize || values.len() != 1usize << m {
                    return bad(format!("tabulated set function needs 2^{m} entries"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Repr<S> {
    /// Dense table in [`ProductLattice::index_of`] order.
    Table(Vec<S>),
    /// `family[k][j][e]`: value of element `e` of factor `j` in additive function `k`.
    Xos(Vec<Vec<Vec<S>>>),
    SetFunction(SetFunction<S>),
}

/// Monotone, normalized valuation over a bidder's product lattice of outcomes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "ValuationSpec<S>",
    into = "ValuationSpec<S>",
    bound = "S: Scalar"
)]
pub struct Valuation<S> {
    lattice: ProductLattice,
    repr: Repr<S>,
}

impl<S: Scalar> Valuation<S> {
    /// Dense table in canonical index order of `lattice`.
    pub fn table(lattice: ProductLattice, values: Vec<S>) -> Result<Self> {
        if Some(values.len()) != lattice.size() {
            return Err(Error::InvalidValuation(format!(
                "table has {} entries, lattice has {:?} outcomes",
                values.len(),
                lattice.size()
            )));
        }
        let v = Self {
            lattice,
            repr: Repr::Table(values),
        };
        v.validate()?;
        Ok(v)
    }

    /// Tabulates `f` over every outcome vector of `lattice`.
    pub fn from_fn(lattice: ProductLattice, f: impl Fn(&[usize]) -> S) -> Result<Self> {
        let values = lattice.iter().map(|x| f(x.as_slice())).collect();
        Self::table(lattice, values)
    }

    /// Pointwise maximum of the additive functions in `family`.
    pub fn xos(lattice: ProductLattice, family: Vec<Vec<Vec<S>>>) -> Result<Self> {
        if family.is_empty() {
            return Err(Error::InvalidValuation("XOS family is empty".into()));
        }
        for (k, member) in family.iter().enumerate() {
            if member.len() != lattice.dim() {
                return Err(Error::InvalidValuation(format!(
                    "XOS member {k} has {} components, lattice has {}",
                    member.len(),
                    lattice.dim()
                )));
            }
            for (j, comp) in member.iter().enumerate() {
                if comp.len() != lattice.factor(j).len() {
                    return Err(Error::InvalidValuation(format!(
                        "XOS member {k} component {j} has {} entries, factor has {}",
                        comp.len(),
                        lattice.factor(j).len()
                    )));
                }
                if comp.iter().any(|x| *x < S::zero()) {
                    return Err(Error::InvalidValuation(format!(
                        "XOS member {k} component {j} has a negative entry"
                    )));
                }
            }
        }
        let v = Self {
            lattice,
            repr: Repr::Xos(family),
        };
        v.validate()?;
        Ok(v)
    }

    /// Additive valuation: XOS with a single member.
    pub fn additive(lattice: ProductLattice, components: Vec<Vec<S>>) -> Result<Self> {
        Self::xos(lattice, vec![components])
    }

    pub fn set_function(items: usize, function: SetFunction<S>) -> Result<Self> {
        function.validate(items)?;
        let v = Self {
            lattice: ProductLattice::boolean(items),
            repr: Repr::SetFunction(function),
        };
        v.validate()?;
        Ok(v)
    }

    /// The lower-bound valuation `v(S) = weight · max_ℓ |S ∩ M_ℓ|` on `k²`
    /// items split into `k` consecutive groups of `k`.
    pub fn group_max(k: usize, weight: S) -> Self {
        let m = k * k;
        let family = (0..k)
            .map(|group| {
                (0..m)
                    .map(|j| {
                        let w = if j / k == group { weight } else { S::zero() };
                        vec![S::zero(), w]
                    })
                    .collect()
            })
            .collect();
        Self::xos(ProductLattice::boolean(m), family).expect("group-max valuation is well formed")
    }

    pub fn lattice(&self) -> &ProductLattice {
        &self.lattice
    }

    pub fn kind(&self) -> ValuationKind {
        match self.repr {
            Repr::Table(_) => ValuationKind::Table,
            Repr::Xos(_) => ValuationKind::Xos,
            Repr::SetFunction(_) => ValuationKind::SetFunction,
        }
    }

    /// Additive family of an XOS valuation.
    pub fn xos_family(&self) -> Option<&[Vec<Vec<S>>]> {
        match &self.repr {
            Repr::Xos(f) => Some(f),
            _ => None,
        }
    }

    /// Value at `x`; components are assumed valid for the lattice.
    #[inline]
    pub fn value(&self, x: &[usize]) -> S {
        match &self.repr {
            Repr::Table(t) => t[self.lattice.index_of(x)],
            Repr::Xos(family) => family
                .iter()
                .map(|member| additive_value(member, x))
                .fold(S::neg_infinity(), S::max),
            Repr::SetFunction(f) => {
                let lat = &self.lattice;
                f.eval(x.iter().enumerate().map(move |(j, &e)| e != lat.factor(j).bottom()))
            }
        }
    }

    pub fn value_checked(&self, x: &[usize]) -> Result<S> {
        self.lattice.validate(x)?;
        Ok(self.value(x))
    }

    /// XOS evaluation returning the value and the smallest maximizing index.
    pub fn eval_xos(&self, x: &[usize]) -> Result<(S, usize)> {
        let family = match &self.repr {
            Repr::Xos(f) => f,
            _ => {
                return Err(Error::InvalidValuation(format!(
                    "eval_xos on a {:?} valuation",
                    self.kind()
                )))
            }
        };
        if family.is_empty() {
            return Err(Error::InvalidValuation("XOS family is empty".into()));
        }
        self.lattice.validate(x)?;
        let mut best = (additive_value(&family[0], x), 0);
        for (k, member) in family.iter().enumerate().skip(1) {
            let v = additive_value(member, x);
            if v > best.0 {
                best = (v, k);
            }
        }
        Ok(best)
    }

    /// Largest value attained anywhere on the lattice.
    pub fn max_value(&self) -> S {
        match &self.repr {
            Repr::Table(t) => t.iter().copied().fold(S::zero(), S::max),
            Repr::Xos(family) => family
                .iter()
                .map(|member| {
                    member
                        .iter()
                        .map(|c| c.iter().copied().fold(S::zero(), S::max))
                        .sum::<S>()
                })
                .fold(S::zero(), S::max),
            Repr::SetFunction(_) => self
                .lattice
                .iter()
                .map(|x| self.value(x.as_slice()))
                .fold(S::zero(), S::max),
        }
    }

    /// `c · v` for `c ≥ 0`.
    pub fn scaled(&self, c: S) -> Self {
        let repr = match &self.repr {
            Repr::Table(t) => Repr::Table(t.iter().map(|v| *v * c).collect()),
            Repr::Xos(f) => Repr::Xos(
                f.iter()
                    .map(|m| m.iter().map(|comp| comp.iter().map(|v| *v * c).collect()).collect())
                    .collect(),
            ),
            Repr::SetFunction(_) => {
                return Self {
                    lattice: self.lattice.clone(),
                    repr: Repr::Table(self.lattice.iter().map(|x| self.value(x.as_slice()) * c).collect()),
                }
            }
        };
        Self {
            lattice: self.lattice.clone(),
            repr,
        }
    }

    /// Dense copy in the table representation.
    pub fn to_table(&self, budget: u128) -> Result<Self> {
        check_budget("valuation tabulation", self.lattice.size_u128(), budget)?;
        Ok(Self {
            lattice: self.lattice.clone(),
            repr: Repr::Table(self.lattice.iter().map(|x| self.value(x.as_slice())).collect()),
        })
    }

    /// XOS form of the valuation. Non-XOS valuations get one additive member
    /// per outcome `x`, built from the marginals along `x`:
    /// `a^x_j(e) = v(x_<j, e ∧ x_j, ⊥) − v(x_<j, ⊥)`. The result is checked to
    /// reproduce `v` everywhere, which holds for monotone DMR valuations.
    pub fn to_xos(&self, budget: u128) -> Result<Self> {
        if let Repr::Xos(_) = self.repr {
            return Ok(self.clone());
        }
        let size = self.lattice.size_u128();
        check_budget("XOS conversion", size.saturating_mul(size), budget)?;
        let lat = &self.lattice;
        let m = lat.dim();
        let mut family = Vec::with_capacity(size as usize);
        let mut point = vec![0usize; m];
        for x in lat.iter() {
            let x = x.as_slice();
            let mut member = Vec::with_capacity(m);
            for j in 0..m {
                let f = lat.factor(j);
                point[..j].copy_from_slice(&x[..j]);
                for (p, fac) in point[j..].iter_mut().zip(&lat.factors()[j..]) {
                    *p = fac.bottom();
                }
                let base = self.value(&point);
                member.push(
                    (0..f.len())
                        .map(|e| {
                            point[j] = f.meet(e, x[j]);
                            let gain = self.value(&point) - base;
                            point[j] = f.bottom();
                            gain
                        })
                        .collect::<Vec<S>>(),
                );
            }
            family.push(member);
        }
        let xos = Self {
            lattice: lat.clone(),
            repr: Repr::Xos(family),
        };
        let tol = S::tolerance() * (S::one() + self.max_value());
        if let Some(y) = lat.iter().find(|y| (xos.value(y.as_slice()) - self.value(y.as_slice())).abs() > tol) {
            return Err(Error::InvalidValuation(format!(
                "marginal supporting family does not reproduce the valuation at {:?}",
                y.as_slice()
            )));
        }
        Ok(xos)
    }

    fn validate(&self) -> Result<()> {
        let tol = S::tolerance();
        let at_bottom = self.value(self.lattice.bottom().as_slice());
        if at_bottom.abs() > tol {
            return Err(Error::InvalidValuation(format!(
                "value at the bottom outcome is {at_bottom}, expected 0"
            )));
        }
        if let Repr::Table(t) = &self.repr {
            if let Some(v) = t.iter().find(|v| **v < -tol || v.is_nan()) {
                return Err(Error::InvalidValuation(format!("negative table value {v}")));
            }
        }
        Ok(())
    }
}

#[inline]
fn additive_value<S: Scalar>(member: &[Vec<S>], x: &[usize]) -> S {
    member.iter().zip(x).map(|(comp, &e)| comp[e]).sum()
}

/// Dense materialization used by the exhaustive checkers.
struct Dense<S> {
    lattice: ProductLattice,
    values: Vec<S>,
    n: usize,
    join: Vec<u32>,
    meet: Vec<u32>,
    leq: Vec<bool>,
}

impl<S: Scalar> Dense<S> {
    fn new(v: &Valuation<S>) -> Self {
        let lattice = v.lattice().clone();
        let points: Vec<OutcomeVector> = lattice.iter().collect();
        let n = points.len();
        let values = points.iter().map(|x| v.value(x.as_slice())).collect();
        let mut join = vec![0u32; n * n];
        let mut meet = vec![0u32; n * n];
        let mut leq = vec![false; n * n];
        for (a, x) in points.iter().enumerate() {
            for (b, y) in points.iter().enumerate() {
                join[a * n + b] = lattice.index_of(lattice.join_unchecked(x.as_slice(), y.as_slice()).as_slice()) as u32;
                meet[a * n + b] = lattice.index_of(lattice.meet_unchecked(x.as_slice(), y.as_slice()).as_slice()) as u32;
                leq[a * n + b] = lattice.leq(x.as_slice(), y.as_slice());
            }
        }
        Self {
            lattice,
            values,
            n,
            join,
            meet,
            leq,
        }
    }

    fn point(&self, idx: usize) -> OutcomeVector {
        self.lattice.vector_at(idx)
    }
}

/// Result of [`check_dmr`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DmrCheck<S> {
    Ok,
    /// `z ⪰ y` but `v(t ∨ y) − v(y) < v(t ∨ z) − v(z)`.
    Counterexample {
        z: OutcomeVector,
        y: OutcomeVector,
        t: OutcomeVector,
        gain_at_y: S,
        gain_at_z: S,
    },
}

impl<S> DmrCheck<S> {
    pub fn is_ok(&self) -> bool {
        matches!(self, DmrCheck::Ok)
    }
}

/// Pairwise counterexample reported by [`check_monotone`] and [`check_submodular`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PairCheck {
    Ok,
    Counterexample { x: OutcomeVector, y: OutcomeVector },
}

impl PairCheck {
    pub fn is_ok(&self) -> bool {
        matches!(self, PairCheck::Ok)
    }
}

fn cube(n: u128) -> u128 {
    n.saturating_mul(n).saturating_mul(n)
}

/// Diminishing marginal returns: for all `z ⪰ y` and all `t`,
/// `v(t ∨ y) − v(y) ≥ v(t ∨ z) − v(z)`.
///
/// Needs `|X|³ ≤ budget`.
pub fn check_dmr<S: Scalar>(v: &Valuation<S>, budget: u128) -> Result<DmrCheck<S>> {
    check_budget("DMR triple enumeration", cube(v.lattice().size_u128()), budget)?;
    let d = Dense::new(v);
    let n = d.n;
    let tol = S::tolerance();
    for y in 0..n {
        for z in 0..n {
            if !d.leq[y * n + z] {
                continue;
            }
            for t in 0..n {
                let gain_y = d.values[d.join[t * n + y] as usize] - d.values[y];
                let gain_z = d.values[d.join[t * n + z] as usize] - d.values[z];
                if gain_y < gain_z - tol {
                    return Ok(DmrCheck::Counterexample {
                        z: d.point(z),
                        y: d.point(y),
                        t: d.point(t),
                        gain_at_y: gain_y,
                        gain_at_z: gain_z,
                    });
                }
            }
        }
    }
    Ok(DmrCheck::Ok)
}

/// Lattice submodularity: `v(x ∨ y) + v(x ∧ y) ≤ v(x) + v(y)` for all pairs.
pub fn check_submodular<S: Scalar>(v: &Valuation<S>, budget: u128) -> Result<PairCheck> {
    let size = v.lattice().size_u128();
    check_budget("submodularity pair enumeration", size.saturating_mul(size), budget)?;
    let d = Dense::new(v);
    let n = d.n;
    let tol = S::tolerance();
    for x in 0..n {
        for y in (x + 1)..n {
            let lhs = d.values[d.join[x * n + y] as usize] + d.values[d.meet[x * n + y] as usize];
            if lhs > d.values[x] + d.values[y] + tol {
                return Ok(PairCheck::Counterexample {
                    x: d.point(x),
                    y: d.point(y),
                });
            }
        }
    }
    Ok(PairCheck::Ok)
}

/// Monotonicity: `x ⪯ y ⇒ v(x) ≤ v(y)` over all comparable pairs.
pub fn check_monotone<S: Scalar>(v: &Valuation<S>, budget: u128) -> Result<PairCheck> {
    let size = v.lattice().size_u128();
    check_budget("monotonicity pair enumeration", size.saturating_mul(size), budget)?;
    let lattice = v.lattice();
    let points: Vec<OutcomeVector> = lattice.iter().collect();
    let values: Vec<S> = points.iter().map(|x| v.value(x.as_slice())).collect();
    let tol = S::tolerance();
    for (a, x) in points.iter().enumerate() {
        for (b, y) in points.iter().enumerate() {
            if a != b && lattice.leq(x.as_slice(), y.as_slice()) && values[a] > values[b] + tol {
                return Ok(PairCheck::Counterexample {
                    x: x.clone(),
                    y: y.clone(),
                });
            }
        }
    }
    Ok(PairCheck::Ok)
}

/// Both formulations of submodularity evaluated on the same valuation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmodularityCrossCheck {
    pub distributive: bool,
    pub dmr_holds: bool,
    pub submodular_holds: bool,
}

impl SubmodularityCrossCheck {
    pub fn agree(&self) -> bool {
        self.dmr_holds == self.submodular_holds
    }
}

pub fn cross_check_submodularity<S: Scalar>(
    v: &Valuation<S>,
    budget: u128,
) -> Result<SubmodularityCrossCheck> {
    Ok(SubmodularityCrossCheck {
        distributive: v.lattice().is_distributive(),
        dmr_holds: check_dmr(v, budget)?.is_ok(),
        submodular_holds: check_submodular(v, budget)?.is_ok(),
    })
}

/// Accepted spellings of a product lattice in scenario files.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LatticeShape {
    Boolean { boolean: usize },
    Chains { chains: Vec<usize> },
    Explicit(ProductLattice),
}

impl LatticeShape {
    pub fn build(self) -> Result<ProductLattice> {
        Ok(match self {
            LatticeShape::Boolean { boolean } => ProductLattice::boolean(boolean),
            LatticeShape::Chains { chains } => ProductLattice::new(
                chains
                    .into_iter()
                    .map(OutcomeLattice::chain)
                    .collect::<Result<_>>()?,
            ),
            LatticeShape::Explicit(p) => p,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry<S> {
    pub outcome: Vec<usize>,
    pub value: S,
}

/// Serialized valuation: kind tag plus a table or additive family.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValuationSpec<S> {
    Table {
        lattice: LatticeShape,
        entries: Vec<TableEntry<S>>,
    },
    Xos {
        lattice: LatticeShape,
        family: Vec<Vec<Vec<S>>>,
    },
    SetFunction {
        items: usize,
        function: SetFunction<S>,
    },
}

impl<S: Scalar> TryFrom<ValuationSpec<S>> for Valuation<S> {
    type Error = Error;

    fn try_from(spec: ValuationSpec<S>) -> Result<Self> {
        match spec {
            ValuationSpec::Table { lattice, entries } => {
                let lattice = lattice.build()?;
                let size = lattice
                    .size()
                    .ok_or_else(|| Error::InvalidValuation("table lattice too large".into()))?;
                let mut values = vec![None; size];
                for entry in entries {
                    lattice.validate(&entry.outcome)?;
                    let idx = lattice.index_of(&entry.outcome);
                    if values[idx].replace(entry.value).is_some() {
                        return Err(Error::InvalidValuation(format!(
                            "duplicate table entry for outcome {:?}",
                            entry.outcome
                        )));
                    }
                }
                let values = values
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| {
                        v.ok_or_else(|| {
                            Error::InvalidValuation(format!(
                                "table is missing outcome {:?}",
                                lattice.vector_at(i).0
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Valuation::table(lattice, values)
            }
            ValuationSpec::Xos { lattice, family } => Valuation::xos(lattice.build()?, family),
            ValuationSpec::SetFunction { items, function } => Valuation::set_function(items, function),
        }
    }
}

impl<S: Scalar> From<Valuation<S>> for ValuationSpec<S> {
    fn from(v: Valuation<S>) -> Self {
        match v.repr {
            Repr::Table(values) => ValuationSpec::Table {
                entries: values
                    .into_iter()
                    .enumerate()
                    .map(|(i, value)| TableEntry {
                        outcome: v.lattice.vector_at(i).0,
                        value,
                    })
                    .collect(),
                lattice: LatticeShape::Explicit(v.lattice),
            },
            Repr::Xos(family) => ValuationSpec::Xos {
                lattice: LatticeShape::Explicit(v.lattice),
                family,
            },
            Repr::SetFunction(function) => ValuationSpec::SetFunction {
                items: v.lattice.dim(),
                function,
            },
        }
    }
}
