//! The residual potential network `F(x, ξ; θ)`.
//!
//! Each block maps the trunk state `z ↦ σ(W² σ(W¹ z + b¹) + b²) + z` with
//! σ the exact GELU; a scalar affine head reads out `F`. The pushforward map
//! is the latent gradient `∇_ξ F`.

mod backprop;
pub mod checkpoint;

use rand::distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Dirs, Jet2, Lane, ParamLayout, ParameterVector, Role};
use crate::error::{Error, Result};
use crate::sampling::{stream_rng, Stream};
use crate::scalar::{Real, Scalar};

pub use backprop::Workspace;

/// How the trunk is laid out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrunkMode {
    /// Blocks act on the raw input width `n`, hidden width `m`.
    LiteralBlock,
    /// A linear lift to width `m`; blocks act at width `m`.
    LiftedTrunk,
}

impl TrunkMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrunkMode::LiteralBlock => "literal-block",
            TrunkMode::LiftedTrunk => "lifted-trunk",
        }
    }
}

impl std::str::FromStr for TrunkMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal-block" => Ok(TrunkMode::LiteralBlock),
            "lifted-trunk" => Ok(TrunkMode::LiftedTrunk),
            other => Err(Error::config(
                "trunk_mode",
                format!("expected literal-block or lifted-trunk, got {other:?}"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub depth: usize,
    pub hidden_width: usize,
    pub trunk_mode: TrunkMode,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_dim: 2,
            depth: 4,
            hidden_width: 25,
            trunk_mode: TrunkMode::LiteralBlock,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim != 2 && self.input_dim != 4 {
            return Err(Error::config("input_dim", "must be 2 or 4"));
        }
        if self.depth < 1 {
            return Err(Error::config("depth", "must be at least 1"));
        }
        if self.hidden_width < 1 {
            return Err(Error::config("hidden_width", "must be at least 1"));
        }
        Ok(())
    }

    pub fn layout(&self) -> ParamLayout {
        let lifted = self.trunk_mode == TrunkMode::LiftedTrunk;
        ParamLayout {
            input_dim: self.input_dim,
            depth: self.depth,
            hidden: self.hidden_width,
            trunk: if lifted {
                self.hidden_width
            } else {
                self.input_dim
            },
            lifted,
        }
    }
}

/// Number of trainable reals for `config`.
///
/// Literal blocks: `2N(mn + m + n)` plus `n + 1` for the head.
pub fn param_count(config: &NetworkConfig) -> usize {
    config.layout().len()
}

/// Anything whose input jets the losses and the analysis can query.
pub trait Potential<T: Real>: Sync {
    fn input_dim(&self) -> usize;

    /// `F` at `point` with partials along `dirs`. `point.len()` must equal
    /// [`input_dim`](Self::input_dim).
    fn jet(&self, point: &[T], dirs: Dirs) -> Jet2<T>;

    /// Jets at consecutive points of a flat array, appended to `out`.
    fn jets(&self, points: &[T], dirs: Dirs, out: &mut Vec<Jet2<T>>) {
        for p in points.chunks(self.input_dim()) {
            out.push(self.jet(p, dirs));
        }
    }
}

/// A potential given by a closure over jets; the same jet machinery as the
/// network, without the network.
pub struct JetFn<F> {
    dim: usize,
    f: F,
}

impl<F> JetFn<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<T, F> Potential<T> for JetFn<F>
where
    T: Real,
    F: Fn(&[Jet2<T>]) -> Jet2<T> + Sync,
{
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn jet(&self, point: &[T], dirs: Dirs) -> Jet2<T> {
        (self.f)(&Jet2::seed_point(point, dirs))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PotentialNetwork<T: Real> {
    config: NetworkConfig,
    params: ParameterVector<T>,
}

impl<T: Real> PotentialNetwork<T> {
    /// Xavier-uniform weights, zero biases, deterministic in `config.seed`.
    pub fn init_xavier(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let mut params = ParameterVector::zeros(layout);
        let mut rng = stream_rng(config.seed, Stream::Init);
        for seg in layout.segments() {
            let is_weight = matches!(
                seg.role,
                Role::LiftWeight | Role::Weight1(_) | Role::Weight2(_) | Role::HeadWeight
            );
            if !is_weight {
                continue;
            }
            // rows = fan_out, cols = fan_in
            let limit = (6.0 / (seg.rows + seg.cols) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            for v in params.slice_mut(seg.role) {
                *v = T::of(dist.sample(&mut rng));
            }
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: NetworkConfig, params: ParameterVector<T>) -> Result<Self> {
        config.validate()?;
        if *params.layout() != config.layout() {
            return Err(Error::LayoutMismatch {
                expected: config.layout().len(),
                got: params.len(),
            });
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layout(&self) -> ParamLayout {
        self.config.layout()
    }

    pub fn params(&self) -> &ParameterVector<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterVector<T> {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                got,
            });
        }
        Ok(())
    }

    /// `F(point)`.
    pub fn eval(&self, point: &[T]) -> Result<T> {
        self.check_dim(point.len())?;
        Ok(forward(&self.layout(), self.params.as_slice(), point))
    }

    /// `F(point)` with exact partials along `dirs` and their mixed partial.
    pub fn forward_jet(&self, point: &[T], dirs: Dirs) -> Result<Jet2<T>> {
        self.check_dim(point.len())?;
        let n = self.config.input_dim;
        if dirs.first >= n || dirs.second >= n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: dirs.first.max(dirs.second) + 1,
            });
        }
        Ok(self.jet(point, dirs))
    }
}

impl<T: Real> Potential<T> for PotentialNetwork<T> {
    fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    fn jet(&self, point: &[T], dirs: Dirs) -> Jet2<T> {
        Workspace::with(&self.layout(), |ws| {
            ws.forward(&self.layout(), self.params.as_slice(), point, dirs)
        })
    }

    fn jets(&self, points: &[T], dirs: Dirs, out: &mut Vec<Jet2<T>>) {
        let layout = self.layout();
        let mut ws = Workspace::new(&layout);
        for p in points.chunks(layout.input_dim) {
            out.push(ws.forward(&layout, self.params.as_slice(), p, dirs));
        }
    }
}

/// The network forward pass, generic over the parameter scalar `E` (plain
/// reals or tape variables) and the lane type `L` (scalars or jets).
pub fn forward<E: Scalar, L: Lane<E>>(layout: &ParamLayout, params: &[E], input: &[L]) -> L {
    let (h, t, n) = (layout.hidden, layout.trunk, layout.input_dim);
    let affine = |x: &[L], w: &[E], b: &[E], rows: usize, cols: usize, out: &mut Vec<L>| {
        out.clear();
        for r in 0..rows {
            let mut acc = L::splat(b[r]);
            for c in 0..cols {
                acc = x[c].mul_add(w[r * cols + c], acc);
            }
            out.push(acc);
        }
    };
    let seg = |role: Role| &params[layout.segment(role).range()];

    let mut z: Vec<L> = Vec::with_capacity(t);
    if layout.lifted {
        affine(input, seg(Role::LiftWeight), seg(Role::LiftBias), h, n, &mut z);
    } else {
        z.extend_from_slice(input);
    }
    let mut hidden: Vec<L> = Vec::with_capacity(h);
    let mut next: Vec<L> = Vec::with_capacity(t);
    for b in 0..layout.depth {
        affine(&z, seg(Role::Weight1(b)), seg(Role::Bias1(b)), h, t, &mut hidden);
        for v in hidden.iter_mut() {
            *v = v.gelu();
        }
        affine(&hidden, seg(Role::Weight2(b)), seg(Role::Bias2(b)), t, h, &mut next);
        for (zi, gi) in z.iter_mut().zip(&next) {
            *zi = gi.gelu().plus(*zi);
        }
    }
    let w = seg(Role::HeadWeight);
    let mut acc = L::splat(seg(Role::HeadBias)[0]);
    for c in 0..t {
        acc = z[c].mul_add(w[c], acc);
    }
    acc
}
