//! Wireless channel access under the SINR interference model.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

/// Sender and receiver positions of one link, in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link<S> {
    pub sx: S,
    pub sy: S,
    pub rx: S,
    pub ry: S,
}

/// Links in the plane with uniform power, path loss, threshold and noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinrInstance<S> {
    pub links: Vec<Link<S>>,
    pub power: S,
    pub alpha_pl: S,
    pub beta: S,
    #[serde(default)]
    pub noise: S,
}

/// `a[j][i]` for every ordered pair plus the links whose formula degenerates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterferenceMatrix<S> {
    pub a: Vec<Vec<S>>,
    /// Links that cannot succeed even alone; their column is capped at 1.
    pub degenerate: Vec<usize>,
}

/// Largest feasible set and the instance-level interference constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelGameCertificate<S> {
    pub max_feasible_set: Vec<usize>,
    pub empirical_c: S,
    pub feasible_sets: usize,
    pub degenerate_links: Vec<usize>,
}

/// Outcome of the exhaustive deviation check over all transmit profiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSmoothnessReport<S> {
    pub certificate: ChannelGameCertificate<S>,
    pub profiles_checked: usize,
    pub min_slack: S,
    /// First transmit set violating the inequality, with its slack.
    pub counterexample: Option<(Vec<usize>, S)>,
}

impl<S> ChannelSmoothnessReport<S> {
    pub fn holds(&self) -> bool {
        self.counterexample.is_none()
    }
}

/// Largest `n` accepted by the subset searches.
pub const MAX_LINKS: usize = 20;
/// Largest `n` for the exhaustive profile check.
pub const MAX_PROFILE_LINKS: usize = 12;

impl<S: Scalar> SinrInstance<S> {
    pub fn new(links: Vec<Link<S>>, power: S, alpha_pl: S, beta: S, noise: S) -> Result<Self> {
        let inst = Self {
            links,
            power,
            alpha_pl,
            beta,
            noise,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.power > S::zero() && self.alpha_pl > S::zero() && self.beta > S::zero()) {
            return Err(Error::Config("power, path loss and threshold must be positive".into()));
        }
        if !(self.noise >= S::zero()) {
            return Err(Error::Config("noise must be nonnegative".into()));
        }
        for (i, _) in self.links.iter().enumerate() {
            if !(self.distance(i, i) > S::zero()) {
                return Err(Error::Config(format!("link {i} has zero length")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Euclidean distance from sender `j` to receiver `i`.
    pub fn distance(&self, j: usize, i: usize) -> S {
        let (s, r) = (&self.links[j], &self.links[i]);
        (s.sx - r.rx).hypot(s.sy - r.ry)
    }

    fn received(&self, j: usize, i: usize) -> S {
        self.power / self.distance(j, i).powf(self.alpha_pl)
    }

    /// Whether link `i` decodes while the links in `transmitters` send
    /// (`i` itself is ignored if listed).
    pub fn succeeds(&self, i: usize, transmitters: &[usize]) -> bool {
        let interference: S = transmitters
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| self.received(j, i))
            .sum();
        self.received(i, i) / (interference + self.noise) >= self.beta
    }

    /// Success flag of every link when exactly the members of `set` transmit;
    /// non-members are reported as unsuccessful.
    pub fn sinr_feasible(&self, set: &[usize]) -> Vec<bool> {
        let mut ok = vec![false; self.len()];
        for &i in set {
            ok[i] = self.succeeds(i, set);
        }
        ok
    }

    /// Every member of `set` succeeds.
    pub fn is_feasible(&self, set: &[usize]) -> bool {
        set.iter().all(|&i| self.succeeds(i, set))
    }

    /// Per-link utility: 1 for a successful transmission, −1 for a failed
    /// one, 0 when silent.
    pub fn channel_utilities(&self, transmit: &[bool]) -> Vec<S> {
        let set: Vec<usize> = (0..self.len()).filter(|&i| transmit[i]).collect();
        let ok = self.sinr_feasible(&set);
        (0..self.len())
            .map(|i| match (transmit[i], ok[i]) {
                (false, _) => S::zero(),
                (true, true) => S::one(),
                (true, false) => -S::one(),
            })
            .collect()
    }

    pub fn interference_matrix(&self) -> InterferenceMatrix<S> {
        let n = self.len();
        let mut a = vec![vec![S::zero(); n]; n];
        let mut degenerate = Vec::new();
        for i in 0..n {
            let dii = self.distance(i, i).powf(self.alpha_pl);
            let denom = S::one() / self.beta - dii * self.noise / self.power;
            if denom <= S::zero() {
                degenerate.push(i);
            }
            for j in 0..n {
                if j == i {
                    continue;
                }
                a[j][i] = if denom <= S::zero() {
                    S::one()
                } else {
                    (dii / self.distance(j, i).powf(self.alpha_pl) / denom).min(S::one())
                };
            }
        }
        InterferenceMatrix { a, degenerate }
    }

    /// Every nonempty feasible set, each as an increasing index list, in
    /// lexicographic order.
    pub fn feasible_sets(&self) -> Result<Vec<Vec<usize>>> {
        if self.len() > MAX_LINKS {
            return Err(Error::budget("feasible-set search", 1u128 << self.len(), 1u128 << MAX_LINKS));
        }
        let mut out = Vec::new();
        let mut current = Vec::new();
        self.extend_feasible(0, &mut current, &mut out);
        Ok(out)
    }

    // Supersets of infeasible sets are infeasible, so the search only extends feasible prefixes.
    fn extend_feasible(&self, from: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        for i in from..self.len() {
            current.push(i);
            if self.is_feasible(current) {
                out.push(current.clone());
                self.extend_feasible(i + 1, current, out);
            }
            current.pop();
        }
    }

    /// Maximum-cardinality feasible set; ties go to the lexicographically smallest.
    pub fn max_feasible_set(&self) -> Result<Vec<usize>> {
        let mut best: Vec<usize> = Vec::new();
        for set in self.feasible_sets()? {
            if set.len() > best.len() {
                best = set;
            }
        }
        Ok(best)
    }

    /// `max_{S' feasible, j} Σ_{i ∈ S' \ {j}} a[j][i]`.
    pub fn empirical_c(&self) -> Result<S> {
        let a = self.interference_matrix().a;
        let mut c = S::zero();
        for set in self.feasible_sets()? {
            for (j, row) in a.iter().enumerate() {
                let sum: S = set.iter().filter(|&&i| i != j).map(|&i| row[i]).sum();
                c = c.max(sum);
            }
        }
        Ok(c)
    }

    pub fn certificate(&self) -> Result<ChannelGameCertificate<S>> {
        Ok(ChannelGameCertificate {
            max_feasible_set: self.max_feasible_set()?,
            empirical_c: self.empirical_c()?,
            feasible_sets: self.feasible_sets()?.len(),
            degenerate_links: self.interference_matrix().degenerate,
        })
    }

    /// Checks `Σ_{i ∈ S} u_i(transmit, b_{−i}) ≥ |S| − 2C|T|` for every
    /// transmit set `T`, where `S` is the maximum feasible set and `C` the
    /// empirical interference constant.
    pub fn verify_channel_smoothness(&self) -> Result<ChannelSmoothnessReport<S>> {
        let n = self.len();
        if n > MAX_PROFILE_LINKS {
            return Err(Error::budget("transmit profiles", 1u128 << n, 1u128 << MAX_PROFILE_LINKS));
        }
        let certificate = self.certificate()?;
        let s = &certificate.max_feasible_set;
        let two_c = S::lit(2.0) * certificate.empirical_c;
        let mut min_slack = S::infinity();
        let mut counterexample = None;
        for mask in 0usize..(1 << n) {
            let t: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
            let lhs: S = s
                .iter()
                .map(|&i| if self.succeeds(i, &t) { S::one() } else { -S::one() })
                .sum();
            let rhs = S::from_count(s.len()) - two_c * S::from_count(t.len());
            let slack = lhs - rhs;
            if slack < min_slack {
                min_slack = slack;
            }
            if slack < -S::tolerance() && counterexample.is_none() {
                counterexample = Some((t, slack));
            }
        }
        Ok(ChannelSmoothnessReport {
            certificate,
            profiles_checked: 1 << n,
            min_slack,
            counterexample,
        })
    }

    /// Random instance: senders uniform in a `side × side` square, each
    /// receiver at distance `[min_len, max_len]` from its sender.
    pub fn random(
        n: usize,
        side: S,
        min_len: S,
        max_len: S,
        constants: (S, S, S, S),
        seed: u64,
    ) -> Result<Self> {
        let mut rng = rng::draws(seed);
        let mut unit = || S::lit(rng.gen::<f64>());
        let links = (0..n)
            .map(|_| {
                let (sx, sy) = (side * unit(), side * unit());
                let len = min_len + (max_len - min_len) * unit();
                let angle = S::lit(std::f64::consts::TAU) * unit();
                Link {
                    sx,
                    sy,
                    rx: sx + len * angle.cos(),
                    ry: sy + len * angle.sin(),
                }
            })
            .collect();
        let (power, alpha_pl, beta, noise) = constants;
        Self::new(links, power, alpha_pl, beta, noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(sx: f64, sy: f64, rx: f64, ry: f64) -> Link<f64> {
        Link { sx, sy, rx, ry }
    }

    fn instance(links: Vec<Link<f64>>, beta: f64, noise: f64) -> SinrInstance<f64> {
        SinrInstance::new(links, 1.0, 3.0, beta, noise).unwrap()
    }

    #[test]
    fn singleton_success() {
        let inst = instance(vec![link(0.0, 0.0, 1.0, 0.0)], 2.0, 0.0);
        assert_eq!(inst.sinr_feasible(&[0]), vec![true]);
        // p / (d^α ν) = 1 / 0.4 = 2.5
        assert!(instance(vec![link(0.0, 0.0, 1.0, 0.0)], 2.0, 0.4).succeeds(0, &[0]));
        assert!(!instance(vec![link(0.0, 0.0, 1.0, 0.0)], 3.0, 0.4).succeeds(0, &[0]));
    }

    #[test]
    fn colocated_links_have_unit_ratio() {
        let l = link(0.0, 0.0, 1.0, 0.0);
        // both links see ratio exactly 1
        assert_eq!(instance(vec![l, l], 1.0, 0.0).sinr_feasible(&[0, 1]), vec![true, true]);
        assert_eq!(instance(vec![l, l], 1.01, 0.0).sinr_feasible(&[0, 1]), vec![false, false]);
    }

    #[test]
    fn utilities() {
        let l = link(0.0, 0.0, 1.0, 0.0);
        let inst = instance(vec![l, l], 1.5, 0.0);
        assert_eq!(inst.channel_utilities(&[false, false]), vec![0.0, 0.0]);
        assert_eq!(inst.channel_utilities(&[true, false]), vec![1.0, 0.0]);
        assert_eq!(inst.channel_utilities(&[true, true]), vec![-1.0, -1.0]);
    }

    #[test]
    fn max_feasible_examples() {
        let far: Vec<Link<f64>> = (0..4).map(|k| link(100.0 * k as f64, 0.0, 100.0 * k as f64 + 1.0, 0.0)).collect();
        assert_eq!(instance(far, 1.5, 0.0).max_feasible_set().unwrap(), vec![0, 1, 2, 3]);
        let l = link(0.0, 0.0, 1.0, 0.0);
        assert_eq!(instance(vec![l; 3], 1.5, 0.0).max_feasible_set().unwrap(), vec![0]);
        assert!(instance(vec![], 1.5, 0.0).max_feasible_set().unwrap().is_empty());
    }

    #[test]
    fn degenerate_link_flagged() {
        let inst = instance(vec![link(0.0, 0.0, 10.0, 0.0), link(50.0, 0.0, 51.0, 0.0)], 1.0, 0.01);
        let m = inst.interference_matrix();
        assert_eq!(m.degenerate, vec![0]);
        assert_eq!(m.a[1][0], 1.0);
        assert!(m.a[0][1] < 1.0);
    }

    #[test]
    fn single_link_smoothness() {
        let r = instance(vec![link(0.0, 0.0, 1.0, 0.0)], 1.5, 0.0).verify_channel_smoothness().unwrap();
        assert!(r.holds());
        assert_eq!(r.certificate.max_feasible_set, vec![0]);
        assert_eq!(r.profiles_checked, 2);
    }

    #[test]
    fn random_instances_are_reproducible() {
        let c = (1.0, 3.0, 1.5, 1e-6);
        let a = SinrInstance::<f64>::random(6, 50.0, 1.0, 8.0, c, 3).unwrap();
        let b = SinrInstance::<f64>::random(6, 50.0, 1.0, 8.0, c, 3).unwrap();
        assert_eq!(a, b);
    }
}
