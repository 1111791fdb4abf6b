//! Ready-made model bundles: blind deconvolution of sparse spike trains and
//! change-point detection in trend series, plus posterior density summaries.

pub mod changepoint;
pub mod deconv;
pub mod density;

pub use changepoint::{
    build_changepoint_statespace, changepoint_processes, jump_posterior_mcmc, jump_posterior_rbpf,
    synth_changepoint_data, ChangePointData, ChangePointModel, ChangePointSynth,
};
pub use deconv::{
    build_deconv_statespace, e_mse, run_deconv, run_deconv_benchmark, run_deconv_on, sample_h_posterior, sample_sigma_w2_posterior,
    simulate_deconv, spike_urn_conditional, ChainInit, DeconvAux, DeconvData, DeconvModel, DeconvRun, DeconvSetup, DeconvVariant,
    VariantSummary, DATA_STREAM,
};
pub use density::density_grid;
