//! Experiment configuration read from TOML. Unknown fields are rejected.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use dpmss::apps::{ChainInit, ChangePointModel, ChangePointSynth, DeconvModel, DeconvSetup, DeconvVariant};
use dpmss::mcmc::{HyperParams, SideHyper, UpdateScheme};
use dpmss::{AlphaPrior, DpHyper, GaussianCluster, LinearGaussianModel, NiwParams, NoiseProcess, PsiPrior, SpikeMass};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Mcmc,
    Rbpf,
    DeconvBench,
    Changepoint,
    Simulate,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Mcmc => "mcmc",
            Mode::Rbpf => "rbpf",
            Mode::DeconvBench => "deconv-bench",
            Mode::Changepoint => "changepoint",
            Mode::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must match the subcommand when given.
    #[serde(default)]
    pub mode: Option<Mode>,
    /// Defaults to the deconvolution preset, or the change-point preset in
    /// change-point mode.
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub hyper: HyperSpec,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub io: IoSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum ModelSpec {
    Deconv(DeconvSpec),
    Changepoint(ChangepointSpec),
    Custom(CustomSpec),
}

/// Normal-inverse-Wishart parameters with plain arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NiwSpec {
    pub mu0: Vec<f64>,
    pub kappa0: f64,
    pub nu0: f64,
    pub lambda0: Vec<Vec<f64>>,
}

impl NiwSpec {
    pub fn from_params(p: &NiwParams) -> Self {
        Self {
            mu0: p.mu0.iter().copied().collect(),
            kappa0: p.kappa0,
            nu0: p.nu0,
            lambda0: rows_of(&p.lambda0),
        }
    }

    pub fn to_params(&self) -> CliResult<NiwParams> {
        let d = self.mu0.len();
        let lambda0 = matrix("lambda0", &self.lambda0, d, d)?;
        Ok(NiwParams::new(DVector::from_column_slice(&self.mu0), self.kappa0, self.nu0, lambda0)?)
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Builds a matrix from rows, checking the shape when `rows`/`cols` are
/// nonzero.
pub fn matrix(name: &str, data: &[Vec<f64>], rows: usize, cols: usize) -> CliResult<DMatrix<f64>> {
    let r = data.len();
    let c = data.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || data.iter().any(|row| row.len() != c) {
        return Err(CliError::Config(format!("{name} must be a non-empty rectangular array of rows")));
    }
    if (rows != 0 && r != rows) || (cols != 0 && c != cols) {
        return Err(CliError::Config(format!("{name} must be {rows} x {cols}, found {r} x {c}")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| data[i][j]))
}

/// Blind deconvolution preset: the data generator and the inference model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeconvSpec {
    pub variant: String,
    pub horizon: usize,
    /// True filter used by the generator and by the particle filter.
    pub h_true: Vec<f64>,
    pub lambda: f64,
    pub sigma_w2: f64,
    /// True impulse density as `[weight, mean, variance]` rows.
    pub mixture: Vec<[f64; 3]>,
    /// Starting filter of the sampler; zeros when absent.
    pub h_init: Option<Vec<f64>>,
    /// `Σ_h = h_prior_scale · I`.
    pub h_prior_scale: f64,
    pub alpha: f64,
    pub base: NiwSpec,
    pub lambda_prior: [f64; 2],
    pub sigma_w2_prior: [f64; 2],
    pub init: ChainInit,
}

impl Default for DeconvSpec {
    fn default() -> Self {
        let setup = DeconvSetup::default();
        let model = setup.default_model();
        Self {
            variant: "M1".into(),
            horizon: setup.horizon,
            h_true: setup.h.clone(),
            lambda: setup.lambda,
            sigma_w2: setup.sigma_w2,
            mixture: setup.mixture.iter().map(|&(w, m, v)| [w, m, v]).collect(),
            h_init: None,
            h_prior_scale: 100.0,
            alpha: model.alpha,
            base: NiwSpec::from_params(&model.base),
            lambda_prior: [model.lambda_prior.0, model.lambda_prior.1],
            sigma_w2_prior: [model.sigma_w2_prior.0, model.sigma_w2_prior.1],
            init: model.init,
        }
    }
}

impl DeconvSpec {
    pub fn setup(&self) -> DeconvSetup {
        DeconvSetup {
            horizon: self.horizon,
            h: self.h_true.clone(),
            lambda: self.lambda,
            sigma_w2: self.sigma_w2,
            mixture: self.mixture.iter().map(|c| (c[0], c[1], c[2])).collect(),
        }
    }

    pub fn model(&self, alpha_prior: AlphaPrior) -> CliResult<DeconvModel> {
        let l = self.h_true.len();
        let h = self.h_init.clone().unwrap_or_else(|| vec![0.0; l]);
        if h.len() != l {
            return Err(CliError::Config(format!("h_init must have {l} coefficients like h_true")));
        }
        let model = DeconvModel {
            h,
            sigma_w2: self.sigma_w2,
            lambda_prior: (self.lambda_prior[0], self.lambda_prior[1]),
            h_prior_cov: DMatrix::identity(l, l) * self.h_prior_scale,
            alpha: self.alpha,
            base: self.base.to_params()?,
            alpha_prior,
            sigma_w2_prior: (self.sigma_w2_prior[0], self.sigma_w2_prior[1]),
            init: self.init,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn variant(&self) -> CliResult<DeconvVariant> {
        parse_variant(&self.variant)
    }
}

pub fn parse_variant(name: &str) -> CliResult<DeconvVariant> {
    DeconvVariant::parse(name).ok_or_else(|| CliError::Config(format!("unknown variant \"{name}\", expected M1..M8")))
}

/// Change-point preset: local linear trend with jumps and outliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChangepointSpec {
    pub lambda_w: f64,
    pub sigma1_w: f64,
    pub sigma2_w: f64,
    pub jump_prob: f64,
    pub alpha: f64,
    pub base: NiwSpec,
    /// Generator used when no input series is given.
    pub synth: ChangePointSynth,
}

impl Default for ChangepointSpec {
    fn default() -> Self {
        let m = ChangePointModel::default();
        Self {
            lambda_w: m.lambda_w,
            sigma1_w: m.sigma1_w,
            sigma2_w: m.sigma2_w,
            jump_prob: m.jump_prob,
            alpha: m.alpha,
            base: NiwSpec::from_params(&m.base),
            synth: ChangePointSynth::default(),
        }
    }
}

impl ChangepointSpec {
    pub fn model(&self) -> CliResult<ChangePointModel> {
        let m = ChangePointModel {
            lambda_w: self.lambda_w,
            sigma1_w: self.sigma1_w,
            sigma2_w: self.sigma2_w,
            jump_prob: self.jump_prob,
            alpha: self.alpha,
            base: self.base.to_params()?,
        };
        m.validate()?;
        Ok(m)
    }
}

/// A Gaussian cluster with plain arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl ClusterSpec {
    fn to_cluster(&self, name: &str) -> CliResult<GaussianCluster> {
        let d = self.mean.len();
        let cov = matrix(name, &self.cov, d, d)?;
        Ok(GaussianCluster::new(DVector::from_column_slice(&self.mean), cov)?)
    }
}

/// Prior law of one noise side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Fixed(ClusterSpec),
    Finite(FiniteSpec),
    Dpm(DpmSpec),
    SpikeDpm(SpikeDpmSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteSpec {
    pub atoms: Vec<ClusterSpec>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpmSpec {
    pub alpha: f64,
    pub base: NiwSpec,
}

/// Spike at zero mixed with a DPM. Exactly one of `nonspike_prob` (known
/// `λ`) or `nonspike_beta` (`λ ~ Beta(ζ, τ)`) must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikeDpmSpec {
    pub alpha: f64,
    pub base: NiwSpec,
    #[serde(default)]
    pub nonspike_prob: Option<f64>,
    #[serde(default)]
    pub nonspike_beta: Option<[f64; 2]>,
}

impl NoiseSpec {
    pub fn to_process(&self, side: &str) -> CliResult<NoiseProcess> {
        Ok(match self {
            NoiseSpec::Fixed(c) => NoiseProcess::fixed(c.to_cluster(&format!("{side}.cov"))?),
            NoiseSpec::Finite(f) => {
                let atoms = f
                    .atoms
                    .iter()
                    .map(|a| a.to_cluster(&format!("{side}.atoms.cov")))
                    .collect::<CliResult<Vec<_>>>()?;
                NoiseProcess::finite(atoms, f.probs.clone())?
            }
            NoiseSpec::Dpm(d) => NoiseProcess::Dpm(DpHyper::niw(d.alpha, d.base.to_params()?)?),
            NoiseSpec::SpikeDpm(s) => {
                let spike = match (s.nonspike_prob, s.nonspike_beta) {
                    (Some(p), None) => SpikeMass::Fixed(p),
                    (None, Some([zeta, tau])) => SpikeMass::Beta { zeta, tau },
                    _ => {
                        return Err(CliError::Config(format!(
                            "{side}: give exactly one of nonspike_prob or nonspike_beta"
                        )))
                    }
                };
                let psi = s.base.to_params()?;
                let atom = GaussianCluster::zero(psi.dim());
                NoiseProcess::spike_dpm(DpHyper::niw(s.alpha, psi)?, spike, atom)?
            }
        })
    }
}

/// A time-invariant model given by its matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSpec {
    pub f: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub init_mean: Vec<f64>,
    pub init_cov: Vec<Vec<f64>>,
    pub v: NoiseSpec,
    pub w: NoiseSpec,
    /// Series length used by simulate mode.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

fn default_horizon() -> usize {
    100
}

impl CustomSpec {
    pub fn model(&self) -> CliResult<LinearGaussianModel> {
        let n = self.init_mean.len();
        let f = matrix("f", &self.f, n, n)?;
        let g = matrix("g", &self.g, n, 0)?;
        let h = matrix("h", &self.h, 0, n)?;
        let p0 = matrix("init_cov", &self.init_cov, n, n)?;
        Ok(LinearGaussianModel::time_invariant(
            f,
            g,
            h,
            DVector::from_column_slice(&self.init_mean),
            p0,
        )?)
    }

    pub fn processes(&self) -> CliResult<(NoiseProcess, NoiseProcess)> {
        Ok((self.v.to_process("v")?, self.w.to_process("w")?))
    }
}

/// Base-measure hyperprior with plain arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiPriorSpec {
    pub mu_mean: Vec<f64>,
    pub mu_cov: Vec<Vec<f64>>,
    pub log_kappa_mean: f64,
    pub log_kappa_sd: f64,
    pub nu_excess_rate: f64,
    pub lambda_inv_dof: f64,
    pub lambda_inv_scale: Vec<Vec<f64>>,
}

impl PsiPriorSpec {
    fn to_prior(&self) -> CliResult<PsiPrior> {
        let d = self.mu_mean.len();
        let p = PsiPrior {
            mu_mean: DVector::from_column_slice(&self.mu_mean),
            mu_cov: matrix("mu_cov", &self.mu_cov, d, d)?,
            log_kappa_mean: self.log_kappa_mean,
            log_kappa_sd: self.log_kappa_sd,
            nu_excess_rate: self.nu_excess_rate,
            lambda_inv_dof: self.lambda_inv_dof,
            lambda_inv_scale: matrix("lambda_inv_scale", &self.lambda_inv_scale, d, d)?,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Which hyperparameters `φ = (α, ψ)` are sampled, and their priors. The
/// current values live in the model spec. For the deconvolution preset the
/// variant decides whether `α` is sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperSpec {
    pub alpha_prior: AlphaPrior,
    pub sample_alpha_v: bool,
    pub sample_alpha_w: bool,
    pub psi_prior_v: Option<PsiPriorSpec>,
    pub psi_prior_w: Option<PsiPriorSpec>,
    pub scheme: UpdateScheme,
}

impl Default for HyperSpec {
    fn default() -> Self {
        Self {
            alpha_prior: AlphaPrior { eta: 3.0, nu: 3.0 },
            sample_alpha_v: false,
            sample_alpha_w: false,
            psi_prior_v: None,
            psi_prior_w: None,
            scheme: UpdateScheme::Joint,
        }
    }
}

impl HyperSpec {
    pub fn params(&self) -> CliResult<HyperParams> {
        AlphaPrior::new(self.alpha_prior.eta, self.alpha_prior.nu)?;
        let side = |alpha: bool, psi: &Option<PsiPriorSpec>| -> CliResult<SideHyper> {
            Ok(SideHyper {
                sample_alpha: alpha,
                psi_prior: psi.as_ref().map(PsiPriorSpec::to_prior).transpose()?,
            })
        };
        Ok(HyperParams {
            alpha_prior: self.alpha_prior,
            v: side(self.sample_alpha_v, &self.psi_prior_v)?,
            w: side(self.sample_alpha_w, &self.psi_prior_w)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    #[default]
    Mcmc,
    Rbpf,
}

/// Grid for the estimated state-noise density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensitySpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
    /// Base-measure draws per iteration for the fresh-cluster term.
    pub base_draws: usize,
}

impl Default for DensitySpec {
    fn default() -> Self {
        Self {
            min: -4.0,
            max: 5.0,
            points: 181,
            base_draws: 100,
        }
    }
}

impl DensitySpec {
    pub fn grid(&self) -> Vec<f64> {
        let step = (self.max - self.min) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.min + step * i as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    /// Total sweeps per chain, burn-in included.
    pub iterations: usize,
    /// Defaults to three quarters of `iterations`.
    pub burn_in: Option<usize>,
    pub particles: usize,
    pub lag: usize,
    /// Resampling threshold on `N_eff`; defaults to half the particles.
    pub ess_threshold: Option<f64>,
    /// Single-run modes use the first seed; the benchmark uses all.
    pub seeds: Vec<u64>,
    /// Inference engine of change-point mode.
    pub engine: Engine,
    /// Variants of the deconvolution benchmark.
    pub variants: Vec<String>,
    pub density: DensitySpec,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            iterations: 2500,
            burn_in: None,
            particles: 1000,
            lag: 10,
            ess_threshold: None,
            seeds: vec![0],
            engine: Engine::Mcmc,
            variants: DeconvVariant::ALL.iter().map(|v| v.name().to_string()).collect(),
            density: DensitySpec::default(),
        }
    }
}

impl RunSpec {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(3 * self.iterations / 4)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSpec {
    /// Observation series; synthetic data is generated when absent.
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Fills the mode and the default model, then checks mode requirements.
    pub fn resolve(mut self, mode: Mode) -> CliResult<Self> {
        if let Some(m) = self.mode {
            if m != mode {
                return Err(CliError::Config(format!(
                    "config is for mode \"{}\" but the \"{}\" subcommand was run",
                    m.name(),
                    mode.name()
                )));
            }
        }
        self.mode = Some(mode);
        if self.model.is_none() {
            self.model = Some(match mode {
                Mode::Changepoint => ModelSpec::Changepoint(ChangepointSpec::default()),
                _ => ModelSpec::Deconv(DeconvSpec::default()),
            });
        }
        self.validate()?;
        Ok(self)
    }

    pub fn model(&self) -> &ModelSpec {
        self.model.as_ref().expect("resolved configs carry a model")
    }

    pub fn seed(&self) -> u64 {
        self.run.seeds[0]
    }

    fn validate(&self) -> CliResult<()> {
        let mode = self.mode.expect("set by resolve");
        let run = &self.run;
        let fail = |m: &str| Err(CliError::Config(m.to_string()));
        if run.seeds.is_empty() {
            return fail("run.seeds must not be empty");
        }
        match (mode, self.model()) {
            (Mode::DeconvBench, ModelSpec::Deconv(_)) => {}
            (Mode::DeconvBench, _) => return fail("deconv-bench mode needs the deconv model preset"),
            (Mode::Changepoint, ModelSpec::Changepoint(_)) => {}
            (Mode::Changepoint, _) => return fail("changepoint mode needs the changepoint model preset"),
            (Mode::Mcmc | Mode::Rbpf, ModelSpec::Custom(_)) if self.io.input.is_none() => {
                return fail("a custom model needs io.input")
            }
            _ => {}
        }
        if let ModelSpec::Deconv(d) = self.model() {
            d.variant()?;
        }
        let uses_chain = matches!(mode, Mode::Mcmc | Mode::DeconvBench)
            || (mode == Mode::Changepoint && run.engine == Engine::Mcmc);
        if uses_chain && run.burn_in() >= run.iterations {
            return fail("run.burn_in must be smaller than run.iterations");
        }
        let uses_particles = mode == Mode::Rbpf || (mode == Mode::Changepoint && run.engine == Engine::Rbpf);
        if uses_particles && run.particles < 2 {
            return fail("run.particles must be at least 2");
        }
        if mode == Mode::DeconvBench {
            if run.variants.is_empty() {
                return fail("run.variants must not be empty");
            }
            for v in &run.variants {
                parse_variant(v)?;
            }
        }
        if run.density.points < 2 || !(run.density.max > run.density.min) {
            return fail("run.density needs at least 2 points and max > min");
        }
        self.hyper.params()?;
        Ok(())
    }
}
