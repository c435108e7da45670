//! Run configuration, the train-analyze-export pipeline and the self-check.

use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    barycenter_field, curl_rms, energy_estimate, integrate_field, path_discrepancy, pushforward_measure,
    reconstruct_u_1d, w2_empirical_1d, w2_energy_point, Component, EmpiricalMeasure, FieldGrid, HistogramSpec,
    Normalization, PathMode, Reference, W2EnergyPoint, TWO_WELL_ATOMS,
};
use crate::error::{Error, Result};
use crate::network::{NetworkConfig, PotentialNetwork, TrunkMode};
use crate::optimizer::{AdamConfig, PlateauConfig};
use crate::problems::{Case, LossBreakdown, LossWeights, ProblemSpec};
use crate::sampling::{
    antithetic_gaussian_samples, gaussian_samples, stream_rng, uniform_grid, Batch, GridSpec, LatentSampling, Stream,
};
use crate::trainer::{train_with, CheckpointPolicy, TrainConfig, TrainState};

pub const CONFIG_FILE: &str = "config.toml";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const FIELD_FILE: &str = "field.csv";
pub const FAILURE_MARKER: &str = "FAILED";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub case: Case,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            case: Case::Bolza1d,
            seed: 0,
            out: PathBuf::from("runs/bolza-1d"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub depth: usize,
    pub width: usize,
    pub trunk_mode: TrunkMode,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let d = NetworkConfig::default();
        Self {
            depth: d.depth,
            width: d.hidden_width,
            trunk_mode: d.trunk_mode,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub alpha: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            lambda1: w.energy,
            lambda2: w.boundary,
            lambda3: w.curl,
            alpha: ProblemSpec::DEFAULT_ALPHA,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub plateau_threshold: f64,
    pub min_lr: f64,
    pub batch_initial: usize,
    pub batch_multiplier: usize,
    pub batch_period: usize,
    pub batch_cap: usize,
    pub latent_sampling: LatentSampling,
    pub line_x: usize,
    pub line_xi: usize,
    /// 0 steps on the full interval grid.
    pub line_subsample: usize,
    pub boundary_spatial: usize,
    pub boundary_latent: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::new(Case::Bolza1d);
        Self {
            epochs: t.epochs,
            lr: t.adam.lr,
            plateau_factor: t.plateau.factor,
            plateau_patience: t.plateau.patience,
            plateau_threshold: t.plateau.threshold,
            min_lr: t.plateau.min_lr,
            batch_initial: t.batch_initial,
            batch_multiplier: t.batch_multiplier,
            batch_period: t.batch_period,
            batch_cap: t.batch_cap,
            latent_sampling: t.latent_sampling,
            line_x: t.line_grid.0,
            line_xi: t.line_grid.1,
            line_subsample: 0,
            boundary_spatial: t.boundary_grid.0,
            boundary_latent: t.boundary_grid.1,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Latent draws per pushforward.
    pub samples: usize,
    /// Draw latents in sign-flipped pairs.
    pub antithetic: bool,
    pub histogram_bins: usize,
    pub histogram_lo: f64,
    pub histogram_hi: f64,
    /// Evenly spaced probe points on `[0, 1]` for the interval problem.
    pub line_probes: usize,
    /// Spatial nodes per side of the planar probe grid.
    pub probe_spatial: usize,
    /// Latent nodes per side of the planar probe grid.
    pub probe_latent: usize,
    pub anchors: Vec<[f64; 2]>,
    pub path: PathMode,
    pub normalization: Normalization,
    /// Epochs between points of the Wasserstein-energy trace; 0 disables it.
    pub trace_every: usize,
    /// Coercivity constant of the trace bound.
    pub coercivity: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            antithetic: true,
            histogram_bins: 81,
            histogram_lo: -2.0,
            histogram_hi: 2.0,
            line_probes: 11,
            probe_spatial: 33,
            probe_latent: 17,
            anchors: vec![[0.5, 0.5], [0.25, 0.75], [0.75, 0.25]],
            path: PathMode::StaircaseXY,
            normalization: Normalization::Normalized,
            trace_every: 100,
            coercivity: 4.0,
        }
    }
}

impl AnalysisConfig {
    pub fn histogram(&self) -> HistogramSpec {
        HistogramSpec {
            lo: self.histogram_lo,
            hi: self.histogram_hi,
            bins: self.histogram_bins,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.histogram().validate()?;
        if self.samples == 0 {
            return Err(Error::config("analysis.samples", "must be at least 1"));
        }
        if self.antithetic && self.samples % 2 != 0 {
            return Err(Error::config("analysis.samples", "must be even with antithetic draws"));
        }
        if self.line_probes < 2 {
            return Err(Error::config("analysis.line_probes", "must be at least 2"));
        }
        if self.probe_spatial < 3 || self.probe_latent < 2 {
            return Err(Error::config("analysis.probe_spatial", "needs 3 spatial and 2 latent nodes"));
        }
        for a in &self.anchors {
            if !a.iter().all(|v| (0.0..=1.0).contains(v)) {
                return Err(Error::config("analysis.anchors", "must lie in the unit square"));
            }
        }
        if !(self.coercivity > 0.0) {
            return Err(Error::config("analysis.coercivity", "must be positive"));
        }
        Ok(())
    }
}

/// Everything a run needs; a run directory holds it as `config.toml`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub network: NetworkSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    pub fn new(case: Case) -> Self {
        let mut c = Self::default();
        c.run.case = case;
        c.run.out = PathBuf::from("runs").join(case.as_str());
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn problem(&self) -> ProblemSpec {
        ProblemSpec {
            case: self.run.case,
            alpha: self.loss.alpha,
        }
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            input_dim: self.run.case.input_dim(),
            depth: self.network.depth,
            hidden_width: self.network.width,
            trunk_mode: self.network.trunk_mode,
            seed: self.run.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            problem: self.problem(),
            weights: LossWeights {
                energy: self.loss.lambda1,
                boundary: self.loss.lambda2,
                curl: self.loss.lambda3,
            },
            epochs: t.epochs,
            seed: self.run.seed,
            adam: AdamConfig {
                lr: t.lr,
                ..AdamConfig::default()
            },
            plateau: PlateauConfig {
                factor: t.plateau_factor,
                patience: t.plateau_patience,
                min_lr: t.min_lr,
                threshold: t.plateau_threshold,
            },
            batch_initial: t.batch_initial,
            batch_multiplier: t.batch_multiplier,
            batch_period: t.batch_period,
            batch_cap: t.batch_cap,
            latent_sampling: t.latent_sampling,
            line_grid: (t.line_x, t.line_xi),
            line_subsample: (t.line_subsample > 0).then_some(t.line_subsample),
            boundary_grid: (t.boundary_spatial, t.boundary_latent),
            checkpoint_every: t.checkpoint_every,
        }
    }

    /// Checks every field; errors name the offending one.
    pub fn validate(&self) -> Result<()> {
        self.network_config().validate()?;
        self.train_config().validate()?;
        self.analysis.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub component: Component,
    pub mean: f64,
    /// Mass within 0.25 of either well.
    pub mass_near_wells: f64,
    pub mass_minus_well: f64,
    pub mass_plus_well: f64,
    /// Mass in `[−0.25, 0.25]`.
    pub mass_near_zero: f64,
    /// Distance to `½δ₋₁ + ½δ₊₁`.
    pub w2_two_well: f64,
}

impl ComponentStats {
    fn of(m: &EmpiricalMeasure) -> Result<Self> {
        Ok(Self {
            component: m.component,
            mean: m.mean(),
            mass_near_wells: m.mass_near(&[-1.0, 1.0], 0.25),
            mass_minus_well: m.mass_in(-1.25, -0.75),
            mass_plus_well: m.mass_in(0.75, 1.25),
            mass_near_zero: m.mass_in(-0.25, 0.25),
            w2_two_well: w2_empirical_1d(&m.samples, Reference::Atoms(&TWO_WELL_ATOMS))?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorReport {
    pub point: Vec<f64>,
    pub components: Vec<ComponentStats>,
}

impl AnchorReport {
    pub fn component(&self, c: Component) -> Option<&ComponentStats> {
        self.components.iter().find(|s| s.component == c)
    }
}

/// The metrics document of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub case: Case,
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: Option<LossBreakdown<f64>>,
    /// Energy term on the probe grid.
    pub energy: f64,
    pub anchors: Vec<AnchorReport>,
    pub max_abs_u: f64,
    /// Largest gap between the two staircase reconstructions.
    pub path_discrepancy: Option<f64>,
    pub curl_rms: Option<f64>,
    /// RMS of `u(1,y) − αy` and `u(x,1) − αx` with latent means as in the losses.
    pub boundary_residual_rms: Option<[f64; 2]>,
    pub w2_energy_trace: Vec<W2EnergyPoint>,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(Error::from)
}

fn analysis_latents(cfg: &AnalysisConfig, seed: u64, dim: usize) -> Result<Vec<f64>> {
    let mut rng = stream_rng(seed, Stream::Analysis);
    if cfg.antithetic {
        antithetic_gaussian_samples(cfg.samples, dim, &mut rng)
    } else {
        gaussian_samples(cfg.samples, dim, &mut rng)
    }
}

fn line_probe_grid(train: &TrainConfig) -> Result<Batch<f64>> {
    uniform_grid(&GridSpec::line(train.line_grid.0, train.line_grid.1))
}

fn line_probes(cfg: &AnalysisConfig) -> Vec<f64> {
    let n = cfg.line_probes - 1;
    (0..=n).map(|k| k as f64 / n as f64).collect()
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    (s / n.max(1) as f64).sqrt()
}

/// Pushforwards at the anchors, the reconstructed field and the energy,
/// with artifacts written under `out`.
pub fn analyze_network(
    net: &PotentialNetwork<f64>,
    train: &TrainConfig,
    cfg: &AnalysisConfig,
    out: &Path,
) -> Result<Metrics> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let case = train.problem.case;
    let hist = cfg.histogram();
    let mut anchors = Vec::new();
    let (field, energy, discrepancy, curl, residual) = if case.is_planar() {
        let latents = analysis_latents(cfg, train.seed, 2)?;
        for (k, a) in cfg.anchors.iter().enumerate() {
            let mut components = Vec::new();
            for comp in [Component::Xi, Component::Tau] {
                let m = pushforward_measure(net, a, comp, &latents, &hist)?;
                write(&out.join(format!("hist_{k}_{}.csv", comp.as_str())), &m.histogram.to_csv())?;
                components.push(ComponentStats::of(&m)?);
            }
            anchors.push(AnchorReport {
                point: a.to_vec(),
                components,
            });
        }
        let grid: Batch<f64> = uniform_grid(&GridSpec::square(cfg.probe_spatial, cfg.probe_latent))?;
        let raw = barycenter_field(net, &grid, Normalization::Unnormalized)?;
        let raw_u = integrate_field(&raw, cfg.path)?;
        let scale = match cfg.normalization {
            Normalization::Unnormalized => 1.0,
            Normalization::Normalized => grid.weights.len() as f64 / grid.weights.iter().sum::<f64>(),
        };
        let scaled = |v: &Option<Vec<f64>>| v.as_ref().map(|v| v.iter().map(|x| x * scale).collect());
        let mut field = FieldGrid {
            v1: scaled(&raw.v1),
            v2: scaled(&raw.v2),
            ..raw.clone()
        };
        field.u = integrate_field(&field, cfg.path)?;
        let alpha = train.problem.boundary_slope();
        let n = raw.xs.len();
        let right = rms((0..n).map(|j| raw_u[(n - 1) * n + j] - alpha * raw.ys[j]));
        let top = rms((0..n).map(|i| raw_u[i * n + n - 1] - alpha * raw.xs[i]));
        let energy = energy_estimate(net, &train.problem, &grid)?;
        (field.clone(), energy, Some(path_discrepancy(&field)?), Some(curl_rms(&field)?), Some([right, top]))
    } else {
        let latents = analysis_latents(cfg, train.seed, 1)?;
        for (k, &x) in line_probes(cfg).iter().enumerate() {
            let m = pushforward_measure(net, &[x], Component::Xi, &latents, &hist)?;
            write(&out.join(format!("hist_{k}_xi.csv")), &m.histogram.to_csv())?;
            anchors.push(AnchorReport {
                point: vec![x],
                components: vec![ComponentStats::of(&m)?],
            });
        }
        let grid = line_probe_grid(train)?;
        let field = reconstruct_u_1d(net, &grid)?;
        let energy = energy_estimate(net, &train.problem, &grid)?;
        (field, energy, None, None, None)
    };
    write(&out.join(FIELD_FILE), &field.to_csv())?;
    Ok(Metrics {
        case,
        seed: train.seed,
        epochs: 0,
        final_loss: None,
        energy,
        anchors,
        max_abs_u: field.max_abs_u(),
        path_discrepancy: discrepancy,
        curl_rms: curl,
        boundary_residual_rms: residual,
        w2_energy_trace: Vec::new(),
    })
}

fn write_metrics(m: &Metrics, out: &Path) -> Result<()> {
    write(&out.join(METRICS_FILE), &serde_json::to_string_pretty(m).expect("metrics serialize"))
}

/// A trace point for the interval problem, or nothing for the others.
fn trace_point(
    net: &PotentialNetwork<f64>,
    epoch: usize,
    train: &TrainConfig,
    cfg: &AnalysisConfig,
    latents: &[f64],
) -> Result<Option<W2EnergyPoint>> {
    if train.problem.case != Case::Bolza1d || cfg.trace_every == 0 {
        return Ok(None);
    }
    let grid = line_probe_grid(train)?;
    w2_energy_point(net, epoch, &grid, &line_probes(cfg), latents, cfg.coercivity).map(Some)
}

fn run_inner(config: &RunConfig, out: &Path) -> Result<Metrics> {
    write(&out.join(CONFIG_FILE), &config.to_toml())?;
    let train = config.train_config();
    let net = PotentialNetwork::init_xavier(config.network_config())?;
    let mut state = TrainState::new(net, &train);
    let cfg = &config.analysis;
    let latents = analysis_latents(cfg, train.seed, 1)?;
    let mut trace: Vec<W2EnergyPoint> = trace_point(&state.net, 0, &train, cfg, &latents)?.into_iter().collect();
    let mut failure = None;
    let result = train_with(&train, &mut state, &CheckpointPolicy::in_dir(out.join(CHECKPOINT_DIR)), |e| {
        let epoch = e.record.epoch;
        if cfg.trace_every > 0 && (epoch % cfg.trace_every == 0 || epoch == e.config.epochs) {
            match trace_point(&e.state.net, epoch, e.config, cfg, &latents) {
                Ok(p) => trace.extend(p),
                Err(err) => {
                    failure = Some(err);
                    return ControlFlow::Break(());
                }
            }
        }
        ControlFlow::Continue(())
    });
    write(&out.join(HISTORY_FILE), &state.record.to_csv())?;
    result?;
    if let Some(err) = failure {
        return Err(err);
    }
    let mut metrics = analyze_network(&state.net, &train, cfg, out)?;
    metrics.epochs = state.epoch;
    metrics.final_loss = state.record.epochs.last().map(|e| e.loss.clone());
    metrics.w2_energy_trace = trace;
    write_metrics(&metrics, out)?;
    Ok(metrics)
}

/// Trains and analyzes into `config.run.out`. A failure leaves the partial
/// directory with a marker file holding the error.
pub fn run(config: &RunConfig) -> Result<Metrics> {
    config.validate()?;
    let out = &config.run.out;
    fs::create_dir_all(out)?;
    let marker = out.join(FAILURE_MARKER);
    if marker.exists() {
        fs::remove_file(&marker)?;
    }
    run_inner(config, out).inspect_err(|e| {
        let _ = fs::write(&marker, format!("{e}\n"));
    })
}

/// Analyzes a stored training checkpoint into `out`.
pub fn analyze(checkpoint: &Path, cfg: &AnalysisConfig, out: &Path) -> Result<Metrics> {
    if !checkpoint.is_file() {
        return Err(Error::Checkpoint {
            path: checkpoint.to_path_buf(),
            reason: "no such file".into(),
        });
    }
    let (state, train) = TrainState::<f64>::load(checkpoint)?;
    let mut metrics = analyze_network(&state.net, &train, cfg, out)?;
    metrics.epochs = state.epoch;
    metrics.final_loss = state.record.epochs.last().map(|e| e.loss.clone());
    write_metrics(&metrics, out)?;
    Ok(metrics)
}

pub mod check;
