//! Priors over the per-step noise clusters `θ_t` of one noise side, and the
//! bookkeeping of which cluster each step currently uses.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dpm::{polya_conditional, AtomChoice, ClusterId, ClusterRegistry, DpHyper, UrnSnapshot};
use crate::error::{invalid, Result};
use crate::gaussian::{sample_categorical, GaussianCluster, RngStream};

/// Probability of the DPM branch in a spike-and-DPM mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SpikeMass {
    /// Known probability `λ` of a non-spike draw.
    Fixed(f64),
    /// `λ ~ Beta(ζ, τ)`, integrated out.
    Beta { zeta: f64, tau: f64 },
}

/// Prior law of the cluster sequence on one noise side.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseProcess {
    /// Every step uses the same known cluster.
    Fixed(Arc<GaussianCluster>),
    /// Known finite mixture; steps are i.i.d. over the components.
    Finite {
        atoms: Vec<Arc<GaussianCluster>>,
        probs: Vec<f64>,
    },
    /// Dirichlet process mixture.
    Dpm(DpHyper),
    /// Mixture of a point mass at `spike_atom` and a Dirichlet process mixture.
    SpikeDpm {
        hyper: DpHyper,
        spike: SpikeMass,
        spike_atom: Arc<GaussianCluster>,
    },
}

impl NoiseProcess {
    pub fn fixed(cluster: GaussianCluster) -> Self {
        NoiseProcess::Fixed(Arc::new(cluster))
    }

    pub fn finite(atoms: Vec<GaussianCluster>, probs: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != probs.len() {
            return Err(invalid("finite mixture needs one probability per component"));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid("finite mixture probabilities must be nonnegative and sum to 1"));
        }
        let d = atoms[0].dim();
        if atoms.iter().any(|a| a.dim() != d) {
            return Err(invalid("finite mixture components differ in dimension"));
        }
        Ok(NoiseProcess::Finite {
            atoms: atoms.into_iter().map(Arc::new).collect(),
            probs,
        })
    }

    pub fn spike_dpm(hyper: DpHyper, spike: SpikeMass, spike_atom: GaussianCluster) -> Result<Self> {
        match spike {
            SpikeMass::Fixed(p) if !(0.0..=1.0).contains(&p) => {
                return Err(invalid("spike mixture probability must lie in [0, 1]"))
            }
            SpikeMass::Beta { zeta, tau } if !(zeta > 0.0 && tau > 0.0) => {
                return Err(invalid("Beta parameters must be positive"))
            }
            _ => {}
        }
        if spike_atom.dim() != hyper.base.dim() {
            return Err(invalid("spike atom dimension differs from the base measure"));
        }
        Ok(NoiseProcess::SpikeDpm {
            hyper,
            spike,
            spike_atom: Arc::new(spike_atom),
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            NoiseProcess::Fixed(c) => c.dim(),
            NoiseProcess::Finite { atoms, .. } => atoms[0].dim(),
            NoiseProcess::Dpm(h) => h.base.dim(),
            NoiseProcess::SpikeDpm { hyper, .. } => hyper.base.dim(),
        }
    }

    pub fn hyper(&self) -> Option<&DpHyper> {
        match self {
            NoiseProcess::Dpm(h) | NoiseProcess::SpikeDpm { hyper: h, .. } => Some(h),
            _ => None,
        }
    }

    pub fn hyper_mut(&mut self) -> Option<&mut DpHyper> {
        match self {
            NoiseProcess::Dpm(h) | NoiseProcess::SpikeDpm { hyper: h, .. } => Some(h),
            _ => None,
        }
    }

    /// True for processes whose clusters are sampled by Metropolis-Hastings
    /// with an urn proposal.
    pub fn is_urn(&self) -> bool {
        self.hyper().is_some()
    }
}

/// The cluster a step currently uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Fixed,
    Component(usize),
    Spike,
    Atom(ClusterId),
}

/// An outcome of a conditional prior draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    Fixed,
    Component(usize),
    Spike,
    Existing(ClusterId),
    Fresh,
}

/// Normalized discrete mixture over the outcomes of `p(θ_t | θ_{−t})`.
#[derive(Debug, Clone)]
pub struct Conditional {
    pub entries: Vec<(Choice, f64)>,
}

impl Conditional {
    pub fn weight(&self, choice: Choice) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.0 == choice)
            .map(|e| e.1)
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }
}

/// A drawn cluster together with how it enters the side's bookkeeping.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub choice: Choice,
    pub cluster: Arc<GaussianCluster>,
}

/// Current cluster labels of one noise side.
///
/// Batch sides record the label of every step. Sequential sides only keep
/// urn counts, which is all the prior predictive of the next step needs.
#[derive(Debug, Clone)]
pub struct NoiseSide {
    process: NoiseProcess,
    registry: ClusterRegistry,
    labels: Option<Vec<Option<Label>>>,
    n_spike: usize,
}

impl NoiseSide {
    pub fn batch(process: NoiseProcess, len: usize) -> Self {
        Self {
            process,
            registry: ClusterRegistry::with_len(len),
            labels: Some(vec![None; len]),
            n_spike: 0,
        }
    }

    pub fn sequential(process: NoiseProcess) -> Self {
        Self {
            process,
            registry: ClusterRegistry::sequential(),
            labels: None,
            n_spike: 0,
        }
    }

    pub fn process(&self) -> &NoiseProcess {
        &self.process
    }

    pub fn hyper_mut(&mut self) -> Option<&mut DpHyper> {
        self.process.hyper_mut()
    }

    /// Replaces the cluster of a `Fixed` process.
    pub fn set_fixed(&mut self, cluster: GaussianCluster) -> Result<()> {
        match &mut self.process {
            NoiseProcess::Fixed(c) => {
                *c = Arc::new(cluster);
                Ok(())
            }
            _ => Err(invalid("only a fixed noise process has a replaceable cluster")),
        }
    }

    pub fn registry(&self) -> &ClusterRegistry {
        &self.registry
    }

    pub fn n_spike(&self) -> usize {
        self.n_spike
    }

    pub fn len(&self) -> usize {
        self.labels.as_ref().map_or(0, |l| l.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self, idx: usize) -> Option<Label> {
        self.labels.as_ref().and_then(|l| l[idx])
    }

    pub fn labels(&self) -> Vec<Label> {
        self.labels
            .as_ref()
            .map(|l| l.iter().map(|x| x.expect("all steps labelled")).collect())
            .unwrap_or_default()
    }

    pub fn cluster_for(&self, label: Label) -> Arc<GaussianCluster> {
        match (label, &self.process) {
            (Label::Fixed, NoiseProcess::Fixed(c)) => c.clone(),
            (Label::Component(k), NoiseProcess::Finite { atoms, .. }) => atoms[k].clone(),
            (Label::Spike, NoiseProcess::SpikeDpm { spike_atom, .. }) => spike_atom.clone(),
            (Label::Atom(id), _) => self
                .registry
                .atom(id)
                .expect("label refers to a live cluster")
                .clone(),
            (l, p) => panic!("label {l:?} does not belong to process {p:?}"),
        }
    }

    /// Cluster currently used at step `idx` (0-based).
    pub fn cluster(&self, idx: usize) -> Arc<GaussianCluster> {
        self.cluster_for(self.label(idx).expect("step is labelled"))
    }

    /// `p(θ_idx | θ_{−idx})` for a batch side, or the prior predictive of the
    /// next step when `exclude` is `None`. Unlabelled steps are ignored.
    pub fn conditional(&self, exclude: Option<usize>) -> Conditional {
        let current = exclude.and_then(|i| self.label(i));
        let entries = match &self.process {
            NoiseProcess::Fixed(_) => vec![(Choice::Fixed, 1.0)],
            NoiseProcess::Finite { probs, .. } => probs
                .iter()
                .enumerate()
                .map(|(k, &p)| (Choice::Component(k), p))
                .collect(),
            NoiseProcess::Dpm(h) => urn_entries(&self.registry, exclude, h.alpha, 1.0),
            NoiseProcess::SpikeDpm { hyper, spike, .. } => {
                let n_spike = self.n_spike - usize::from(current == Some(Label::Spike));
                let n_urn = self.registry.n_assigned() - usize::from(matches!(current, Some(Label::Atom(_))));
                let p = match *spike {
                    SpikeMass::Fixed(lambda) => lambda,
                    SpikeMass::Beta { zeta, tau } => {
                        let a = zeta + n_urn as f64;
                        let b = tau + n_spike as f64;
                        a / (a + b)
                    }
                };
                let mut e = vec![(Choice::Spike, 1.0 - p)];
                e.extend(urn_entries(&self.registry, exclude, hyper.alpha, p));
                e
            }
        };
        Conditional { entries }
    }

    pub fn sample(&self, cond: &Conditional, rng: &mut RngStream) -> Proposal {
        let weights: Vec<f64> = cond.entries.iter().map(|e| e.1).collect();
        let choice = cond.entries[sample_categorical(&weights, rng)].0;
        self.realize(choice, rng)
    }

    /// Cluster for a chosen outcome; `Fresh` draws from the base measure.
    pub fn realize(&self, choice: Choice, rng: &mut RngStream) -> Proposal {
        let cluster = match choice {
            Choice::Fixed => self.cluster_for(Label::Fixed),
            Choice::Component(k) => self.cluster_for(Label::Component(k)),
            Choice::Spike => self.cluster_for(Label::Spike),
            Choice::Existing(id) => self.cluster_for(Label::Atom(id)),
            Choice::Fresh => self
                .process
                .hyper()
                .expect("fresh draws need a DP side")
                .base
                .sample(rng),
        };
        Proposal { choice, cluster }
    }

    fn release(&mut self, idx: usize) {
        let labels = self.labels.as_mut().expect("batch side");
        match labels[idx].take() {
            Some(Label::Spike) => self.n_spike -= 1,
            Some(Label::Atom(_)) => {
                self.registry.unassign(idx);
            }
            _ => {}
        }
    }

    /// Sets the label of step `idx` (batch sides).
    pub fn set(&mut self, idx: usize, proposal: &Proposal) -> Label {
        self.release(idx);
        let label = match proposal.choice {
            Choice::Fixed => Label::Fixed,
            Choice::Component(k) => Label::Component(k),
            Choice::Spike => {
                self.n_spike += 1;
                Label::Spike
            }
            Choice::Existing(id) => Label::Atom(self.registry.assign(idx, AtomChoice::Existing(id))),
            Choice::Fresh => Label::Atom(
                self.registry
                    .assign(idx, AtomChoice::Fresh(proposal.cluster.clone())),
            ),
        };
        self.labels.as_mut().expect("batch side")[idx] = Some(label);
        label
    }

    /// Appends a step (sequential sides).
    pub fn push(&mut self, proposal: &Proposal) -> Label {
        match proposal.choice {
            Choice::Fixed => Label::Fixed,
            Choice::Component(k) => Label::Component(k),
            Choice::Spike => {
                self.n_spike += 1;
                Label::Spike
            }
            Choice::Existing(id) => Label::Atom(self.registry.push(AtomChoice::Existing(id))),
            Choice::Fresh => Label::Atom(self.registry.push(AtomChoice::Fresh(proposal.cluster.clone()))),
        }
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        self.registry.check()?;
        if let Some(labels) = &self.labels {
            let spikes = labels.iter().filter(|l| **l == Some(Label::Spike)).count();
            if spikes != self.n_spike {
                return Err(format!("{spikes} spike labels but spike count {}", self.n_spike));
            }
            for (i, l) in labels.iter().enumerate() {
                if let Some(Label::Atom(id)) = l {
                    if self.registry.assignment(i) != Some(*id) {
                        return Err(format!("label {i} disagrees with the registry"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> SideSnapshot {
        SideSnapshot {
            labels: self.labels(),
            urn: self
                .process
                .hyper()
                .map(|h| UrnSnapshot::capture(&self.registry, h)),
            fixed: match &self.process {
                NoiseProcess::Fixed(c) => Some((**c).clone()),
                _ => None,
            },
        }
    }
}

fn urn_entries(registry: &ClusterRegistry, exclude: Option<usize>, alpha: f64, scale: f64) -> Vec<(Choice, f64)> {
    let urn = polya_conditional(registry, exclude, alpha);
    let mut e: Vec<(Choice, f64)> = urn
        .existing
        .iter()
        .map(|(id, _, w)| (Choice::Existing(*id), scale * w))
        .collect();
    e.push((Choice::Fresh, scale * urn.fresh));
    e
}

/// Labels and urn state of one side at one retained iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideSnapshot {
    pub labels: Vec<Label>,
    pub urn: Option<UrnSnapshot>,
    pub fixed: Option<GaussianCluster>,
}
