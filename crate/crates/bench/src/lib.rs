//! Fixtures shared by the benchmarks.

use dpmss::apps::{
    build_changepoint_statespace, changepoint_processes, synth_changepoint_data, ChangePointModel, ChangePointSynth,
};
use dpmss::mcmc::ChainState;
use dpmss::noise::NoiseProcess;
use dpmss::statespace::{LinearGaussianModel, NoisePair};
use dpmss::{GaussianCluster, RngStream};
use nalgebra::DVector;

/// The change-point model with a synthetic series of the given length.
pub struct Fixture {
    pub model: LinearGaussianModel,
    pub v: NoiseProcess,
    pub w: NoiseProcess,
    pub z: Vec<DVector<f64>>,
}

impl Fixture {
    pub fn changepoint(horizon: usize, seed: u64) -> Self {
        let model = build_changepoint_statespace().expect("valid model");
        let (v, w) = changepoint_processes(&ChangePointModel::default()).expect("valid processes");
        let synth = ChangePointSynth { horizon, ..ChangePointSynth::default() };
        let z = synth_changepoint_data(&synth, &mut RngStream::new(seed, 0)).expect("valid synth").z;
        Self { model, v, w, z }
    }

    /// A chain state drawn from the prior.
    pub fn chain(&self, seed: u64) -> ChainState {
        let mut st = ChainState::new(self.model.clone(), self.v.clone(), self.w.clone(), self.z.len()).expect("valid");
        st.init_from_prior(&mut RngStream::new(seed, 1));
        st
    }

    /// Fixed per-step noise: no jump, accurate observations.
    pub fn quiet_thetas(&self) -> Vec<NoisePair> {
        let v = GaussianCluster::zero(2);
        let w = GaussianCluster::scalar(0.0, 0.1).expect("valid");
        vec![NoisePair::new(v, w); self.z.len()]
    }
}
