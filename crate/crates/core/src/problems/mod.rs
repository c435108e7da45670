//! The four variational problems and their losses.
//!
//! A loss is evaluated in two stages. First every sample's input derivatives
//! (`F_ξ`, `F_τ`, `F_xτ`, `F_yξ`) are collected into a table; then the table
//! is reduced to the loss terms by code generic over [`Scalar`]. Gradients
//! reuse the same reduction on tape variables to get one adjoint per table
//! entry, and push those adjoints through the network with the fused
//! per-sample adjoint.

mod assemble;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_params, Jet2, Tape, Var};
use crate::error::{Error, Result};
use crate::network::{forward, Potential, PotentialNetwork, Workspace};
use crate::sampling::Batch;
use crate::scalar::{Real, Scalar};

use assemble::{Columns, Density};

/// Samples per parallel work item. Fixed so that reductions do not depend
/// on the number of threads.
pub const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Case {
    /// `∫((u')²−1)² + u²` on `[0,1]`, zero boundary values.
    #[serde(rename = "bolza-1d")]
    Bolza1d,
    /// `∫(u_x²−1)² + u_y²` on the unit square, zero boundary values.
    #[serde(rename = "quasi-1d")]
    Quasi1d,
    /// `∫(u_x²−1)² + (u_y²−1)²` on the unit square, zero boundary values.
    FourWell,
    /// As [`Case::Quasi1d`] with `u(1,y) = αy`, `u(x,1) = αx`.
    TwoWellAffine,
}

impl Case {
    pub const ALL: [Case; 4] = [Case::Bolza1d, Case::Quasi1d, Case::FourWell, Case::TwoWellAffine];

    pub fn as_str(&self) -> &'static str {
        match self {
            Case::Bolza1d => "bolza-1d",
            Case::Quasi1d => "quasi-1d",
            Case::FourWell => "four-well",
            Case::TwoWellAffine => "two-well-affine",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Case::Bolza1d => 2,
            _ => 4,
        }
    }

    pub fn is_planar(&self) -> bool {
        !matches!(self, Case::Bolza1d)
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Case::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                Error::config(
                    "case",
                    format!("unknown case {s:?}; expected bolza-1d, quasi-1d, four-well or two-well-affine"),
                )
            })
    }
}

/// A problem instance: which energy, and the boundary slope for the affine case.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub case: Case,
    pub alpha: f64,
}

impl ProblemSpec {
    pub const DEFAULT_ALPHA: f64 = 1e-2;

    pub fn new(case: Case) -> Self {
        Self {
            case,
            alpha: Self::DEFAULT_ALPHA,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.case.input_dim()
    }

    /// Slope of the affine boundary data; zero for the homogeneous cases.
    pub fn boundary_slope(&self) -> f64 {
        match self.case {
            Case::TwoWellAffine => self.alpha,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() {
            return Err(Error::config("alpha", "must be finite"));
        }
        Ok(())
    }

    fn density(&self) -> Density {
        match self.case {
            Case::FourWell => Density::FourWell,
            _ => Density::WellPlusQuadratic,
        }
    }

    fn interior_columns(&self) -> Columns {
        if self.case.is_planar() {
            Columns::Interior
        } else {
            Columns::Line
        }
    }
}

/// Penalty weights `λ₁` (energy), `λ₂` (boundary), `λ₃` (curl).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub energy: f64,
    pub boundary: f64,
    pub curl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            energy: 1.0,
            boundary: 10.0,
            curl: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(energy: f64, boundary: f64, curl: f64) -> Result<Self> {
        let w = Self { energy, boundary, curl };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.energy), ("lambda2", self.boundary), ("lambda3", self.curl)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(name, "must be finite and nonnegative"));
            }
        }
        if self.energy <= 0.0 {
            return Err(Error::config("lambda1", "must be positive"));
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            energy: self.energy * c,
            boundary: self.boundary * c,
            curl: self.curl * c,
        }
    }
}

/// The loss terms of one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    pub energy_term: T,
    pub boundary_terms: Vec<T>,
    pub curl_term: T,
    pub total: T,
}

impl<T: Scalar> LossBreakdown<T> {
    fn new(w: &LossWeights, energy_term: T, boundary_terms: Vec<T>, curl_term: T) -> Self {
        let c = T::constant;
        let mut b = c(0.0);
        for &t in &boundary_terms {
            b = b + t;
        }
        let total = c(w.energy) * energy_term + c(w.boundary) * b + c(w.curl) * curl_term;
        Self {
            energy_term,
            boundary_terms,
            curl_term,
            total,
        }
    }

    fn map<U>(&self, f: impl Fn(&T) -> U) -> LossBreakdown<U> {
        LossBreakdown {
            energy_term: f(&self.energy_term),
            boundary_terms: self.boundary_terms.iter().map(&f).collect(),
            curl_term: f(&self.curl_term),
            total: f(&self.total),
        }
    }
}

impl<T: Real> LossBreakdown<T> {
    pub fn boundary_sum(&self) -> T {
        self.boundary_terms.iter().copied().sum()
    }

    /// Name of the first non-finite term, checked in the order energy,
    /// boundary, curl, total.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        if !self.energy_term.is_finite() {
            Some("energy")
        } else if self.boundary_terms.iter().any(|v| !v.is_finite()) {
            Some("boundary")
        } else if !self.curl_term.is_finite() {
            Some("curl")
        } else if !self.total.is_finite() {
            Some("total")
        } else {
            None
        }
    }

    pub fn to_f64(&self) -> LossBreakdown<f64> {
        self.map(|v| v.to_f64_lossy())
    }
}

/// Interior samples plus, for the plane problems, the grid the boundary
/// penalties are evaluated on.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples<T> {
    pub interior: Batch<T>,
    /// When `None`, the boundary penalties use `interior`, which must then
    /// be a tensor grid.
    pub boundary: Option<Batch<T>>,
}

impl<T: Real> Samples<T> {
    pub fn grid(batch: Batch<T>) -> Self {
        Self {
            interior: batch,
            boundary: None,
        }
    }

    pub fn with_boundary(interior: Batch<T>, boundary: Batch<T>) -> Self {
        Self {
            interior,
            boundary: Some(boundary),
        }
    }

    fn boundary_batch(&self) -> &Batch<T> {
        self.boundary.as_ref().unwrap_or(&self.interior)
    }
}

fn weights_f64<T: Real>(b: &Batch<T>) -> Vec<f64> {
    b.weights.iter().map(|w| w.to_f64_lossy()).collect()
}

fn grid_axes<T: Real>(b: &Batch<T>) -> Result<(Vec<f64>, Vec<f64>)> {
    match &b.grid {
        Some((xs, ys)) if !xs.is_empty() && !ys.is_empty() => Ok((
            xs.iter().map(|v| v.to_f64_lossy()).collect(),
            ys.iter().map(|v| v.to_f64_lossy()).collect(),
        )),
        _ => Err(Error::NeedsGrid("boundary penalty")),
    }
}

fn check_batch<T: Real>(b: &Batch<T>, input_dim: usize, physical: usize) -> Result<()> {
    if b.input_dim() != input_dim {
        return Err(Error::DimensionMismatch {
            expected: input_dim,
            got: b.input_dim(),
        });
    }
    if b.physical_dim != physical {
        return Err(Error::DimensionMismatch {
            expected: physical,
            got: b.physical_dim,
        });
    }
    if b.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

fn check<T: Real>(problem: &ProblemSpec, input_dim: usize, samples: &Samples<T>) -> Result<()> {
    if input_dim != problem.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.input_dim(),
            got: input_dim,
        });
    }
    let physical = if problem.case.is_planar() { 2 } else { 1 };
    check_batch(&samples.interior, input_dim, physical)?;
    if problem.case.is_planar() {
        let b = samples.boundary_batch();
        check_batch(b, input_dim, 2)?;
        grid_axes(b)?;
    }
    Ok(())
}

/// Fills the derivative table of `batch` for `cols`, row `s·L + l` per sample.
fn table<T: Real, P: Potential<T> + ?Sized>(pot: &P, batch: &Batch<T>, cols: Columns) -> Vec<T> {
    let width = cols.width();
    let total = batch.len();
    let dim = batch.input_dim();
    let mut out = vec![T::zero(); total * width];
    out.par_chunks_mut(CHUNK * width)
        .enumerate()
        .for_each(|(chunk, rows)| {
            let start = chunk * CHUNK;
            let count = rows.len() / width;
            let l = batch.latent_count();
            let mut points = vec![T::zero(); count * dim];
            for r in 0..count {
                let idx = start + r;
                batch.input(idx / l, idx % l, &mut points[r * dim..(r + 1) * dim]);
            }
            let mut jets = Vec::with_capacity(count);
            for pass in cols.passes() {
                jets.clear();
                pot.jets(&points, pass.dirs, &mut jets);
                for (r, j) in jets.iter().enumerate() {
                    let row = &mut rows[r * width..(r + 1) * width];
                    if let Some(k) = pass.d0 {
                        row[k] = j.d1[0];
                    }
                    if let Some(k) = pass.d1 {
                        row[k] = j.d1[1];
                    }
                    if let Some(k) = pass.dd {
                        row[k] = j.d12;
                    }
                }
            }
        });
    out
}

/// Reduces derivative tables to the loss breakdown of `problem`.
fn reduce<S: Scalar, T: Real>(
    problem: &ProblemSpec,
    samples: &Samples<T>,
    interior: &[S],
    boundary: Option<&[S]>,
    w: &LossWeights,
) -> Result<LossBreakdown<S>> {
    let iw = weights_f64(&samples.interior);
    if !problem.case.is_planar() {
        let (energy, bc) = assemble::line(interior, samples.interior.spatial_count(), &iw);
        return Ok(LossBreakdown::new(w, energy, vec![bc], S::constant(0.0)));
    }
    let (energy, curl) = assemble::interior(interior, samples.interior.spatial_count(), &iw, problem.density());
    let bb = samples.boundary_batch();
    let (xs, ys) = grid_axes(bb)?;
    let bt = boundary.expect("boundary table");
    let terms = assemble::boundary(bt, &xs, &ys, &weights_f64(bb), problem.boundary_slope());
    Ok(LossBreakdown::new(w, energy, terms.to_vec(), curl))
}

/// Loss of `problem` for any potential.
pub fn evaluate<T: Real, P: Potential<T> + ?Sized>(
    problem: &ProblemSpec,
    pot: &P,
    samples: &Samples<T>,
    w: &LossWeights,
) -> Result<LossBreakdown<T>> {
    check(problem, pot.input_dim(), samples)?;
    let it = table(pot, &samples.interior, problem.interior_columns());
    let bt = problem
        .case
        .is_planar()
        .then(|| table(pot, samples.boundary_batch(), Columns::Boundary));
    reduce(problem, samples, &it, bt.as_deref(), w)
}

pub fn loss_bolza_1d<T: Real, P: Potential<T> + ?Sized>(
    pot: &P,
    grid: &Batch<T>,
    w: &LossWeights,
) -> Result<LossBreakdown<T>> {
    evaluate(&ProblemSpec::new(Case::Bolza1d), pot, &Samples::grid(grid.clone()), w)
}

pub fn loss_quasi_1d<T: Real, P: Potential<T> + ?Sized>(
    pot: &P,
    samples: &Samples<T>,
    w: &LossWeights,
) -> Result<LossBreakdown<T>> {
    evaluate(&ProblemSpec::new(Case::Quasi1d), pot, samples, w)
}

pub fn loss_four_well<T: Real, P: Potential<T> + ?Sized>(
    pot: &P,
    samples: &Samples<T>,
    w: &LossWeights,
) -> Result<LossBreakdown<T>> {
    evaluate(&ProblemSpec::new(Case::FourWell), pot, samples, w)
}

pub fn loss_two_well_affine<T: Real, P: Potential<T> + ?Sized>(
    pot: &P,
    samples: &Samples<T>,
    w: &LossWeights,
    alpha: f64,
) -> Result<LossBreakdown<T>> {
    let problem = ProblemSpec {
        case: Case::TwoWellAffine,
        alpha,
    };
    problem.validate()?;
    evaluate(&problem, pot, samples, w)
}

/// The curl penalty shared by the plane problems, on the interior samples.
pub fn curl_penalty<T: Real, P: Potential<T> + ?Sized>(pot: &P, batch: &Batch<T>) -> Result<T> {
    if pot.input_dim() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            got: pot.input_dim(),
        });
    }
    check_batch(batch, 4, 2)?;
    let t = table(pot, batch, Columns::Interior);
    let (_, curl) = assemble::interior(&t, batch.spatial_count(), &weights_f64(batch), Density::WellPlusQuadratic);
    Ok(curl)
}

/// Only the energy term, for reporting on a fixed probe set.
pub fn energy_term<T: Real, P: Potential<T> + ?Sized>(problem: &ProblemSpec, pot: &P, batch: &Batch<T>) -> Result<T> {
    let physical = if problem.case.is_planar() { 2 } else { 1 };
    check_batch(batch, problem.input_dim(), physical)?;
    let iw = weights_f64(batch);
    let t = table(pot, batch, problem.interior_columns());
    Ok(if problem.case.is_planar() {
        assemble::interior(&t, batch.spatial_count(), &iw, problem.density()).0
    } else {
        assemble::line(&t, batch.spatial_count(), &iw).0
    })
}

/// Pushes per-entry table adjoints through the network, accumulating
/// `∂loss/∂θ` in fixed sample chunks summed in chunk order.
fn backprop_table<T: Real>(net: &PotentialNetwork<T>, batch: &Batch<T>, cols: Columns, adj: &[T]) -> Vec<T> {
    let layout = net.layout();
    let params = net.params().as_slice();
    let width = cols.width();
    let total = batch.len();
    let dim = batch.input_dim();
    let l = batch.latent_count();
    let chunks = total.div_ceil(CHUNK);
    let partials: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut ws = Workspace::new(&layout);
            let mut grad = vec![T::zero(); layout.len()];
            let mut point = vec![T::zero(); dim];
            for idx in chunk * CHUNK..((chunk + 1) * CHUNK).min(total) {
                let a = &adj[idx * width..(idx + 1) * width];
                batch.input(idx / l, idx % l, &mut point);
                for pass in cols.passes() {
                    let pick = |k: Option<usize>| k.map_or(T::zero(), |k| a[k]);
                    let bar = Jet2::new(T::zero(), [pick(pass.d0), pick(pass.d1)], pick(pass.dd));
                    if bar == Jet2::constant(T::zero()) {
                        continue;
                    }
                    ws.forward(&layout, params, &point, pass.dirs);
                    ws.backward(&layout, params, bar, &mut grad);
                }
            }
            grad
        })
        .collect();
    let mut grad = vec![T::zero(); layout.len()];
    for p in partials {
        for (g, v) in grad.iter_mut().zip(p) {
            *g += v;
        }
    }
    grad
}

/// Loss value and exact parameter gradient of `λ`-weighted total.
pub fn loss_and_gradient<T: Real>(
    problem: &ProblemSpec,
    net: &PotentialNetwork<T>,
    samples: &Samples<T>,
    w: &LossWeights,
) -> Result<(LossBreakdown<T>, Vec<T>)> {
    check(problem, net.input_dim(), samples)?;
    let icols = problem.interior_columns();
    let it = table(net, &samples.interior, icols);
    let bt = problem
        .case
        .is_planar()
        .then(|| table(net, samples.boundary_batch(), Columns::Boundary));

    let tape = Tape::with_capacity(8 * (it.len() + bt.as_ref().map_or(0, Vec::len)));
    let iv: Vec<Var<T>> = it.iter().map(|&v| tape.input(v)).collect();
    let bv: Option<Vec<Var<T>>> = bt.as_ref().map(|b| b.iter().map(|&v| tape.input(v)).collect());
    let loss = reduce(problem, samples, &iv, bv.as_deref(), w)?;
    tape.finalize(loss.total);
    let adj = tape.adjoints(T::one())?;
    let ia: Vec<T> = iv.iter().map(|&v| Tape::adjoint_of(&adj, v)).collect();

    let mut grad = backprop_table(net, &samples.interior, icols, &ia);
    if let Some(bv) = &bv {
        let ba: Vec<T> = bv.iter().map(|&v| Tape::adjoint_of(&adj, v)).collect();
        let g = backprop_table(net, samples.boundary_batch(), Columns::Boundary, &ba);
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((loss.map(|v| v.value()), grad))
}

/// Same result as [`loss_and_gradient`], with the whole computation (network
/// jets included) recorded on one tape. Slow; meant for small networks.
pub fn loss_and_gradient_tape<T: Real>(
    problem: &ProblemSpec,
    net: &PotentialNetwork<T>,
    samples: &Samples<T>,
    w: &LossWeights,
) -> Result<(LossBreakdown<T>, Vec<T>)> {
    check(problem, net.input_dim(), samples)?;
    let layout = net.layout();
    let tape = Tape::new();
    let theta = tape.parameters(net.params().as_slice());
    let tape_table = |batch: &Batch<T>, cols: Columns| -> Vec<Var<T>> {
        let width = cols.width();
        let mut out = vec![<Var<T> as Scalar>::constant(0.0); batch.len() * width];
        let mut point = vec![T::zero(); batch.input_dim()];
        let l = batch.latent_count();
        for idx in 0..batch.len() {
            batch.input(idx / l, idx % l, &mut point);
            let p: Vec<Var<T>> = point
                .iter()
                .map(|v| <Var<T> as Scalar>::constant(v.to_f64_lossy()))
                .collect();
            for pass in cols.passes() {
                let j = forward(&layout, &theta, &Jet2::seed_point(&p, pass.dirs));
                let row = &mut out[idx * width..(idx + 1) * width];
                if let Some(k) = pass.d0 {
                    row[k] = j.d1[0];
                }
                if let Some(k) = pass.d1 {
                    row[k] = j.d1[1];
                }
                if let Some(k) = pass.dd {
                    row[k] = j.d12;
                }
            }
        }
        out
    };
    let it = tape_table(&samples.interior, problem.interior_columns());
    let bt = problem
        .case
        .is_planar()
        .then(|| tape_table(samples.boundary_batch(), Columns::Boundary));
    let loss = reduce(problem, samples, &it, bt.as_deref(), w)?;
    tape.finalize(loss.total);
    let grad = grad_params(&tape, T::one())?;
    Ok((loss.map(|v| v.value()), grad))
}
