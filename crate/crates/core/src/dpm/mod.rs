//! Dirichlet-process machinery: cluster bookkeeping, the Polya urn,
//! stick-breaking, and the hyperparameter posteriors.

mod alpha;
mod psi;
mod stick;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gaussian::{sample_categorical, sample_niw, GaussianCluster, NiwParams, RngStream};

pub use alpha::{
    alpha_acceptance_prob, alpha_log_likelihood, alpha_log_posterior, antoniak_expected_clusters,
    exact_expected_clusters, sample_alpha_mh, stirling_first_kind_log, AlphaPrior,
};
pub use psi::{psi_acceptance_prob, sample_psi_mh, sample_psi_prior, PsiPrior};
pub use stick::{default_truncation, stick_breaking, StickBreaking};

pub type ClusterId = u64;

/// Base measure `G₀` of a Dirichlet process.
///
/// `Discrete` supports small finite-alphabet problems where the exact
/// posterior can be enumerated.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseMeasure {
    Niw(NiwParams),
    Discrete {
        atoms: Vec<Arc<GaussianCluster>>,
        probs: Vec<f64>,
    },
}

impl BaseMeasure {
    pub fn discrete(atoms: Vec<GaussianCluster>, probs: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != probs.len() {
            return Err(invalid("discrete base needs one probability per atom"));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid("discrete base probabilities must be nonnegative and sum to 1"));
        }
        Ok(Self::Discrete {
            atoms: atoms.into_iter().map(Arc::new).collect(),
            probs,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            BaseMeasure::Niw(p) => p.dim(),
            BaseMeasure::Discrete { atoms, .. } => atoms[0].dim(),
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> Arc<GaussianCluster> {
        match self {
            BaseMeasure::Niw(p) => Arc::new(sample_niw(p, rng)),
            BaseMeasure::Discrete { atoms, probs } => atoms[sample_categorical(probs, rng)].clone(),
        }
    }

    pub fn niw(&self) -> Option<&NiwParams> {
        match self {
            BaseMeasure::Niw(p) => Some(p),
            BaseMeasure::Discrete { .. } => None,
        }
    }
}

/// Scale and base measure of a Dirichlet process.
#[derive(Debug, Clone, PartialEq)]
pub struct DpHyper {
    pub alpha: f64,
    pub base: BaseMeasure,
}

impl DpHyper {
    pub fn new(alpha: f64, base: BaseMeasure) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(invalid(format!("DP scale must be positive, got {alpha}")));
        }
        Ok(Self { alpha, base })
    }

    pub fn niw(alpha: f64, psi: NiwParams) -> Result<Self> {
        Self::new(alpha, BaseMeasure::Niw(psi))
    }
}

#[derive(Debug, Clone)]
struct Slot {
    atom: Arc<GaussianCluster>,
    count: usize,
}

/// Where a new urn member goes.
#[derive(Debug, Clone, PartialEq)]
pub enum AtomChoice {
    Existing(ClusterId),
    Fresh(Arc<GaussianCluster>),
}

/// Occupancy of the distinct atoms `θ'_{1:M}` of an urn.
///
/// A batch registry also records which cluster each index uses. A
/// sequential registry (used by particle paths) keeps counts only, so
/// cloning costs `O(M)` regardless of how long the path is.
#[derive(Debug, Clone)]
pub struct ClusterRegistry {
    assignments: Option<Vec<Option<ClusterId>>>,
    slots: BTreeMap<ClusterId, Slot>,
    next_id: ClusterId,
    n: usize,
}

impl ClusterRegistry {
    /// Registry over `len` indices, all initially unassigned.
    pub fn with_len(len: usize) -> Self {
        Self {
            assignments: Some(vec![None; len]),
            slots: BTreeMap::new(),
            next_id: 0,
            n: 0,
        }
    }

    pub fn sequential() -> Self {
        Self {
            assignments: None,
            slots: BTreeMap::new(),
            next_id: 0,
            n: 0,
        }
    }

    /// Number of assigned members `n`.
    pub fn n_assigned(&self) -> usize {
        self.n
    }

    /// Number of distinct atoms `M`.
    pub fn n_clusters(&self) -> usize {
        self.slots.len()
    }

    pub fn assignment(&self, idx: usize) -> Option<ClusterId> {
        self.assignments.as_ref().and_then(|a| a[idx])
    }

    pub fn atom(&self, id: ClusterId) -> Option<&Arc<GaussianCluster>> {
        self.slots.get(&id).map(|s| &s.atom)
    }

    pub fn count(&self, id: ClusterId) -> usize {
        self.slots.get(&id).map_or(0, |s| s.count)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClusterId, &Arc<GaussianCluster>, usize)> {
        self.slots.iter().map(|(&id, s)| (id, &s.atom, s.count))
    }

    pub fn distinct_atoms(&self) -> Vec<Arc<GaussianCluster>> {
        self.slots.values().map(|s| s.atom.clone()).collect()
    }

    fn add(&mut self, choice: AtomChoice) -> ClusterId {
        self.n += 1;
        match choice {
            AtomChoice::Existing(id) => {
                self.slots
                    .get_mut(&id)
                    .expect("existing choice refers to a live cluster")
                    .count += 1;
                id
            }
            AtomChoice::Fresh(atom) => {
                let id = self.next_id;
                self.next_id += 1;
                self.slots.insert(id, Slot { atom, count: 1 });
                id
            }
        }
    }

    fn remove(&mut self, id: ClusterId) {
        let slot = self.slots.get_mut(&id).expect("removal of a live cluster");
        slot.count -= 1;
        if slot.count == 0 {
            self.slots.remove(&id);
        }
        self.n -= 1;
    }

    /// Assigns index `idx`, releasing any previous assignment first.
    pub fn assign(&mut self, idx: usize, choice: AtomChoice) -> ClusterId {
        self.unassign(idx);
        let id = self.add(choice);
        self.assignments.as_mut().expect("assign needs a batch registry")[idx] = Some(id);
        id
    }

    pub fn unassign(&mut self, idx: usize) -> Option<ClusterId> {
        let old = self.assignments.as_mut().expect("unassign needs a batch registry")[idx].take();
        if let Some(id) = old {
            self.remove(id);
        }
        old
    }

    /// Adds one member without recording an index.
    pub fn push(&mut self, choice: AtomChoice) -> ClusterId {
        self.add(choice)
    }

    /// Verifies that counts reconcile with the recorded assignments.
    pub fn check(&self) -> std::result::Result<(), String> {
        let total: usize = self.slots.values().map(|s| s.count).sum();
        if total != self.n {
            return Err(format!("counts sum to {total} but {} members are recorded", self.n));
        }
        if self.slots.values().any(|s| s.count == 0) {
            return Err("empty cluster left in registry".into());
        }
        if let Some(asg) = &self.assignments {
            let mut tally: BTreeMap<ClusterId, usize> = BTreeMap::new();
            for id in asg.iter().flatten() {
                if !self.slots.contains_key(id) {
                    return Err(format!("assignment references dead cluster {id}"));
                }
                *tally.entry(*id).or_default() += 1;
            }
            for (id, s) in &self.slots {
                if tally.get(id).copied().unwrap_or(0) != s.count {
                    return Err(format!("cluster {id} count {} disagrees with assignments", s.count));
                }
            }
        }
        Ok(())
    }
}

/// Leave-one-out urn predictive: existing atoms weighted by occupancy and a
/// fresh base-measure draw weighted by `α`, normalized by `α + n`.
#[derive(Debug, Clone)]
pub struct UrnConditional {
    pub existing: Vec<(ClusterId, Arc<GaussianCluster>, f64)>,
    pub fresh: f64,
}

impl UrnConditional {
    pub fn sample(&self, base: &BaseMeasure, rng: &mut RngStream) -> (AtomChoice, Arc<GaussianCluster>) {
        let mut weights: Vec<f64> = self.existing.iter().map(|e| e.2).collect();
        weights.push(self.fresh);
        let k = sample_categorical(&weights, rng);
        if k < self.existing.len() {
            let (id, atom, _) = &self.existing[k];
            (AtomChoice::Existing(*id), atom.clone())
        } else {
            let atom = base.sample(rng);
            (AtomChoice::Fresh(atom.clone()), atom)
        }
    }

    pub fn total(&self) -> f64 {
        self.fresh + self.existing.iter().map(|e| e.2).sum::<f64>()
    }
}

/// `p(θ_t | θ_{−t})`: the urn over every assigned member except `exclude`.
pub fn polya_conditional(registry: &ClusterRegistry, exclude: Option<usize>, alpha: f64) -> UrnConditional {
    let skip = exclude.and_then(|i| registry.assignment(i));
    let n = registry.n_assigned() - usize::from(skip.is_some());
    let norm = alpha + n as f64;
    let existing = registry
        .iter()
        .filter_map(|(id, atom, count)| {
            let c = count - usize::from(skip == Some(id));
            (c > 0).then(|| (id, atom.clone(), c as f64 / norm))
        })
        .collect();
    UrnConditional {
        existing,
        fresh: alpha / norm,
    }
}

/// Summary of one urn state, stored per retained iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrnSnapshot {
    pub alpha: f64,
    pub base: Option<NiwParams>,
    pub atoms: Vec<(ClusterId, GaussianCluster, usize)>,
}

impl UrnSnapshot {
    pub fn capture(registry: &ClusterRegistry, hyper: &DpHyper) -> Self {
        Self {
            alpha: hyper.alpha,
            base: hyper.base.niw().cloned(),
            atoms: registry
                .iter()
                .map(|(id, a, c)| (id, (**a).clone(), c))
                .collect(),
        }
    }

    pub fn n_assigned(&self) -> usize {
        self.atoms.iter().map(|a| a.2).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atom(m: f64) -> Arc<GaussianCluster> {
        Arc::new(GaussianCluster::scalar(m, 1.0).unwrap())
    }

    #[test]
    fn registry_reconciles_after_mutations() {
        let mut reg = ClusterRegistry::with_len(5);
        let a = reg.assign(0, AtomChoice::Fresh(atom(1.0)));
        reg.check().unwrap();
        reg.assign(1, AtomChoice::Existing(a));
        reg.check().unwrap();
        let b = reg.assign(2, AtomChoice::Fresh(atom(2.0)));
        reg.check().unwrap();
        assert_eq!(reg.n_clusters(), 2);
        reg.assign(2, AtomChoice::Existing(a));
        reg.check().unwrap();
        assert_eq!(reg.count(b), 0);
        assert_eq!(reg.n_clusters(), 1);
        assert_eq!(reg.count(a), 3);
        reg.unassign(0);
        reg.check().unwrap();
        assert_eq!(reg.n_assigned(), 2);
    }

    #[test]
    fn urn_weights_three_existing() {
        let mut reg = ClusterRegistry::with_len(4);
        let a = reg.assign(0, AtomChoice::Fresh(atom(0.0)));
        reg.assign(1, AtomChoice::Fresh(atom(1.0)));
        reg.assign(2, AtomChoice::Existing(a));
        reg.assign(3, AtomChoice::Fresh(atom(2.0)));
        // Excluding index 3 leaves three values: two share atom `a`.
        let urn = polya_conditional(&reg, Some(3), 1.0);
        assert_eq!(urn.existing.len(), 2);
        assert_eq!(urn.existing[0].2, 0.5);
        assert_eq!(urn.existing[1].2, 0.25);
        assert_eq!(urn.fresh, 0.25);
        assert_eq!(urn.total(), 1.0);
    }

    #[test]
    fn empty_urn_is_fresh() {
        let mut reg = ClusterRegistry::with_len(1);
        reg.assign(0, AtomChoice::Fresh(atom(0.0)));
        let urn = polya_conditional(&reg, Some(0), 2.5);
        assert!(urn.existing.is_empty());
        assert_eq!(urn.fresh, 1.0);
    }

    #[test]
    fn fresh_frequency() {
        let mut reg = ClusterRegistry::with_len(3);
        reg.assign(0, AtomChoice::Fresh(atom(0.0)));
        reg.assign(1, AtomChoice::Fresh(atom(1.0)));
        let urn = polya_conditional(&reg, Some(2), 2.0);
        let base = BaseMeasure::Niw(NiwParams::scalar(0.0, 1.0, 3.0, 1.0).unwrap());
        let mut rng = RngStream::new(1, 0);
        let n = 100_000;
        let fresh = (0..n)
            .filter(|_| matches!(urn.sample(&base, &mut rng).0, AtomChoice::Fresh(_)))
            .count() as f64;
        let p = 0.5;
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((fresh / n as f64 - p).abs() < 3.0 * sd);
    }
}
