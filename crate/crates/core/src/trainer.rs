//! The epoch loop.
//!
//! An epoch is one optimizer step. The interval problem steps on its full
//! grid; the plane problems draw a fresh stochastic meshgrid per epoch whose
//! size grows geometrically, and evaluate boundary penalties on a fixed grid.

use std::fs;
use std::io::Write as _;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::checkpoint::{restore_network, store_network, Container};
use crate::network::PotentialNetwork;
use crate::optimizer::{adam_step, scheduler_step, AdamConfig, AdamState, PlateauConfig, PlateauScheduler};
use crate::problems::{loss_and_gradient, Case, LossBreakdown, LossWeights, ProblemSpec, Samples};
use crate::sampling::{
    rng_at, rng_position, stochastic_meshgrid, stream_rng, uniform_grid, Batch, GridSpec, LatentSampling,
    MeshgridSpec, Rng, Stream,
};
use crate::scalar::Real;

pub const HISTORY_HEADER: &str = "epoch,total,energy,boundary,curl,lr,batch_size,seconds";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub problem: ProblemSpec,
    pub weights: LossWeights,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub plateau: PlateauConfig,
    /// Meshgrid side at epoch 1: that many spatial and latent draws.
    pub batch_initial: usize,
    pub batch_multiplier: usize,
    pub batch_period: usize,
    /// Largest meshgrid side; `batch_cap²` samples per batch.
    pub batch_cap: usize,
    pub latent_sampling: LatentSampling,
    /// Interval problem grid: x nodes and ξ nodes.
    pub line_grid: (usize, usize),
    /// Draw this many x rows of the interval grid per epoch instead of all.
    pub line_subsample: Option<usize>,
    /// Boundary-penalty grid of the plane problems: nodes per spatial side
    /// and per latent side.
    pub boundary_grid: (usize, usize),
    /// Checkpoint every this many epochs; the last epoch is always saved.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn new(case: Case) -> Self {
        Self {
            problem: ProblemSpec::new(case),
            weights: LossWeights::default(),
            epochs: 2000,
            seed: 0,
            adam: AdamConfig::default(),
            plateau: PlateauConfig::default(),
            batch_initial: 5,
            batch_multiplier: 2,
            batch_period: 250,
            batch_cap: 64,
            latent_sampling: LatentSampling::WeightedUniform,
            line_grid: (201, 201),
            line_subsample: None,
            boundary_grid: (17, 9),
            checkpoint_every: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        self.weights.validate()?;
        self.adam.validate()?;
        self.plateau.validate()?;
        let positive = [
            ("batch_initial", self.batch_initial),
            ("batch_multiplier", self.batch_multiplier),
            ("batch_period", self.batch_period),
            ("batch_cap", self.batch_cap),
            ("checkpoint_every", self.checkpoint_every),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        for (name, (a, b)) in [("line_grid", self.line_grid), ("boundary_grid", self.boundary_grid)] {
            if a < 2 || b < 2 {
                return Err(Error::config(name, "needs at least 2 nodes per axis"));
            }
        }
        if let Some(k) = self.line_subsample {
            if k == 0 || k > self.line_grid.0 {
                return Err(Error::config("line_subsample", "must lie in 1..=x nodes"));
            }
        }
        Ok(())
    }
}

/// `initial · multiplier^⌊epoch/period⌋`, capped.
pub fn batch_schedule(epoch: usize, config: &TrainConfig) -> usize {
    let mut size = config.batch_initial;
    for _ in 0..epoch / config.batch_period {
        size = size.saturating_mul(config.batch_multiplier);
        if size >= config.batch_cap {
            return config.batch_cap;
        }
    }
    size.min(config.batch_cap)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown<f64>,
    /// Learning rate used for this epoch's step.
    pub lr: f64,
    /// Interior samples evaluated.
    pub batch_size: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRecord>,
}

impl TrainRecord {
    pub fn totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss.total).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{},{:.6}\n",
                e.epoch,
                e.loss.total,
                e.loss.energy_term,
                e.loss.boundary_terms.iter().sum::<f64>(),
                e.loss.curl_term,
                e.lr,
                e.batch_size,
                e.seconds
            ));
        }
        out
    }

    /// The CSV without the wall-clock column.
    pub fn to_csv_without_time(&self) -> String {
        self.to_csv()
            .lines()
            .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Everything needed to continue training bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T: Real> {
    pub net: PotentialNetwork<T>,
    pub adam: AdamState<T>,
    pub scheduler: PlateauScheduler,
    /// Completed epochs.
    pub epoch: usize,
    pub batch_rng_position: u128,
    pub record: TrainRecord,
}

impl<T: Real> TrainState<T> {
    pub fn new(net: PotentialNetwork<T>, config: &TrainConfig) -> Self {
        let len = net.params().len();
        Self {
            net,
            adam: AdamState::new(len, config.adam),
            scheduler: PlateauScheduler::new(config.plateau),
            epoch: 0,
            batch_rng_position: rng_position(&stream_rng(config.seed, Stream::Batching)),
            record: TrainRecord::default(),
        }
    }

    pub fn to_container(&self, config: &TrainConfig) -> Container {
        let mut c = Container::default();
        store_network(&mut c, &self.net);
        c.set("train.epoch", self.epoch);
        c.set("train.adam_t", self.adam.t);
        c.set("train.lr", format!("{:e}", self.adam.lr));
        c.set("train.scheduler_best", format!("{:e}", self.scheduler.best));
        c.set("train.scheduler_bad_epochs", self.scheduler.bad_epochs);
        c.set("train.rng_position", self.batch_rng_position);
        c.set("train.config", serde_json::to_string(config).expect("config serializes"));
        // wall-clock times are left out so checkpoints are reproducible
        let mut record = self.record.clone();
        record.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
        c.set("train.history", serde_json::to_string(&record).expect("record serializes"));
        c.push_array("adam.m", self.adam.m.iter().map(|v| v.to_f64_lossy()).collect());
        c.push_array("adam.v", self.adam.v.iter().map(|v| v.to_f64_lossy()).collect());
        c
    }

    /// Restores a state and the configuration it was trained with.
    pub fn from_container(c: &Container) -> Result<(Self, TrainConfig)> {
        let bad = |what: &str| Error::Checkpoint {
            path: PathBuf::new(),
            reason: format!("bad or missing {what}"),
        };
        let net: PotentialNetwork<T> = restore_network(c)?;
        let config: TrainConfig =
            serde_json::from_str(c.get("train.config").ok_or_else(|| bad("train.config"))?).map_err(|_| bad("train.config"))?;
        let record: TrainRecord =
            serde_json::from_str(c.get("train.history").ok_or_else(|| bad("train.history"))?).map_err(|_| bad("train.history"))?;
        let to_t = |name: &str| -> Result<Vec<T>> {
            let a = c.array(name).ok_or_else(|| bad(name))?;
            if a.len() != net.params().len() {
                return Err(bad(name));
            }
            Ok(a.iter().map(|&v| T::of(v)).collect())
        };
        let adam = AdamState {
            config: config.adam,
            m: to_t("adam.m")?,
            v: to_t("adam.v")?,
            t: c.parse("train.adam_t")?,
            lr: c.parse("train.lr")?,
        };
        let scheduler = PlateauScheduler {
            config: config.plateau,
            best: c.parse("train.scheduler_best")?,
            bad_epochs: c.parse("train.scheduler_bad_epochs")?,
        };
        let state = Self {
            net,
            adam,
            scheduler,
            epoch: c.parse("train.epoch")?,
            batch_rng_position: c.parse("train.rng_position")?,
            record,
        };
        Ok((state, config))
    }

    pub fn save(&self, config: &TrainConfig, path: &Path) -> Result<()> {
        self.to_container(config).save(path)
    }

    pub fn load(path: &Path) -> Result<(Self, TrainConfig)> {
        Self::from_container(&Container::load(path)?).map_err(|e| match e {
            Error::Checkpoint { reason, .. } => Error::Checkpoint {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }
}

/// Per-epoch sample source.
struct Sampler<T: Real> {
    fixed: Option<Samples<T>>,
    boundary: Option<Batch<T>>,
    rng: Rng,
}

impl<T: Real> Sampler<T> {
    fn new(config: &TrainConfig, rng_position: u128) -> Result<Self> {
        let rng = rng_at(config.seed, Stream::Batching, rng_position);
        if config.problem.case.is_planar() {
            let (n, k) = config.boundary_grid;
            Ok(Self {
                fixed: None,
                boundary: Some(uniform_grid(&GridSpec::square(n, k))?),
                rng,
            })
        } else {
            let (n, m) = config.line_grid;
            Ok(Self {
                fixed: Some(Samples::grid(uniform_grid(&GridSpec::line(n, m))?)),
                boundary: None,
                rng,
            })
        }
    }

    fn next(&mut self, epoch: usize, config: &TrainConfig) -> Result<Samples<T>> {
        if let Some(full) = &self.fixed {
            let Some(k) = config.line_subsample else {
                return Ok(full.clone());
            };
            let b = &full.interior;
            let mut rows = index::sample(&mut self.rng, b.spatial_count(), k).into_vec();
            rows.sort_unstable();
            let spatial: Vec<T> = rows.iter().map(|&r| b.spatial[r]).collect();
            let mut sub = Batch {
                spatial: spatial.clone(),
                grid: Some((spatial, Vec::new())),
                rng_position: Some(rng_position(&self.rng)),
                ..b.clone()
            };
            sub.latent = b.latent.clone();
            return Ok(Samples::grid(sub));
        }
        let size = batch_schedule(epoch, config);
        let spec = MeshgridSpec::unit_square(config.latent_sampling);
        let interior = stochastic_meshgrid(&spec, size, &mut self.rng)?;
        Ok(Samples {
            interior,
            boundary: self.boundary.clone(),
        })
    }
}

/// What the observer sees after each completed epoch.
pub struct EpochEvent<'a, T: Real> {
    pub record: &'a EpochRecord,
    pub state: &'a TrainState<T>,
    pub config: &'a TrainConfig,
}

/// Where and how often to write checkpoints.
#[derive(Clone, Debug, Default)]
pub struct CheckpointPolicy {
    pub dir: Option<PathBuf>,
}

impl CheckpointPolicy {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()) }
    }

    pub fn path_for(dir: &Path, epoch: usize) -> PathBuf {
        dir.join(format!("epoch_{epoch:05}.ckpt"))
    }

    fn save<T: Real>(&self, state: &TrainState<T>, config: &TrainConfig) -> Result<()> {
        if let Some(dir) = &self.dir {
            fs::create_dir_all(dir)?;
            let path = Self::path_for(dir, state.epoch);
            state.save(config, &path)?;
            fs::copy(&path, dir.join("latest.ckpt"))?;
        }
        Ok(())
    }
}

fn term_of_bad_gradient<T: Real>(
    config: &TrainConfig,
    net: &PotentialNetwork<T>,
    samples: &Samples<T>,
) -> &'static str {
    let w = config.weights;
    let parts = [
        ("energy", LossWeights { boundary: 0.0, curl: 0.0, ..w }),
        ("boundary", LossWeights { energy: 0.0, curl: 0.0, ..w }),
        ("curl", LossWeights { energy: 0.0, boundary: 0.0, ..w }),
    ];
    for (name, pw) in parts {
        if let Ok((_, g)) = loss_and_gradient(&config.problem, net, samples, &pw) {
            if g.iter().any(|v| !v.is_finite()) {
                return name;
            }
        }
    }
    "total"
}

/// Runs epochs `state.epoch + 1 ..= config.epochs`.
///
/// `observe` runs after each epoch (and after its checkpoint, if due);
/// returning `Break` stops early with the state as it is. On a non-finite
/// loss or gradient the state is left at the last good epoch and the error
/// names the offending term.
pub fn train_with<T: Real>(
    config: &TrainConfig,
    state: &mut TrainState<T>,
    checkpoints: &CheckpointPolicy,
    mut observe: impl FnMut(EpochEvent<'_, T>) -> ControlFlow<()>,
) -> Result<()> {
    config.validate()?;
    if state.net.input_dim() != config.problem.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: config.problem.input_dim(),
            got: state.net.input_dim(),
        });
    }
    if state.epoch == 0 {
        checkpoints.save(state, config)?;
    }
    let mut sampler = Sampler::<T>::new(config, state.batch_rng_position)?;
    while state.epoch < config.epochs {
        let epoch = state.epoch + 1;
        let started = Instant::now();
        let samples = sampler.next(epoch, config)?;
        let (loss, grad) = loss_and_gradient(&config.problem, &state.net, &samples, &config.weights)?;
        if let Some(term) = loss.first_non_finite() {
            return Err(Error::NonFinite {
                term: term.into(),
                epoch,
            });
        }
        let lr = state.adam.lr;
        if let Err(e) = adam_step(&mut state.adam, state.net.params_mut().as_mut_slice(), &grad) {
            return Err(match e {
                Error::NonFiniteGradient { .. } => Error::NonFinite {
                    term: format!("{} gradient", term_of_bad_gradient(config, &state.net, &samples)),
                    epoch,
                },
                other => other,
            });
        }
        let loss = loss.to_f64();
        state.adam.lr = scheduler_step(&mut state.scheduler, lr, loss.total);
        state.epoch = epoch;
        state.batch_rng_position = rng_position(&sampler.rng);
        state.record.epochs.push(EpochRecord {
            epoch,
            loss,
            lr,
            batch_size: samples.interior.len(),
            seconds: started.elapsed().as_secs_f64(),
        });
        if epoch % config.checkpoint_every == 0 || epoch == config.epochs {
            checkpoints.save(state, config)?;
        }
        let record = state.record.epochs.last().expect("just pushed");
        if observe(EpochEvent { record, state, config }).is_break() {
            break;
        }
    }
    Ok(())
}

/// Trains `net` from scratch for `config.epochs` epochs.
pub fn train<T: Real>(config: &TrainConfig, net: PotentialNetwork<T>) -> Result<(PotentialNetwork<T>, TrainRecord)> {
    let mut state = TrainState::new(net, config);
    train_with(config, &mut state, &CheckpointPolicy::default(), |_| ControlFlow::Continue(()))?;
    Ok((state.net, state.record))
}

pub fn write_history(record: &TrainRecord, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(record.to_csv().as_bytes())?;
    Ok(())
}
