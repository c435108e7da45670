//! Read-only diagnostics of a potential: pushforward samples and histograms,
//! reconstructed fields, barycenters, energies and Wasserstein distances.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Dirs, Jet2};
use crate::error::{Error, Result};
use crate::network::Potential;
use crate::problems::{energy_term, ProblemSpec, CHUNK};
use crate::sampling::{gaussian_samples, Batch, Rng};
use crate::scalar::Real;

/// Which latent partial of `F` is sampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    #[serde(rename = "dF/dxi")]
    Xi,
    #[serde(rename = "dF/dtau")]
    Tau,
}

impl Component {
    pub fn as_str(&self) -> &'static str {
        match self {
            Component::Xi => "xi",
            Component::Tau => "tau",
        }
    }
}

/// The two-atom measure `½δ₋₁ + ½δ₊₁` as `(location, mass)` pairs.
pub const TWO_WELL_ATOMS: [(f64, f64); 2] = [(-1.0, 0.5), (1.0, 0.5)];

fn latent_dirs(physical: usize) -> Dirs {
    Dirs::new(physical, physical + 1)
}

/// Jets at consecutive points, fanned out in fixed chunks.
fn jets<T: Real, P: Potential<T> + ?Sized>(pot: &P, points: &[T], dirs: Dirs) -> Vec<Jet2<T>> {
    let dim = pot.input_dim();
    points
        .par_chunks(CHUNK * dim)
        .flat_map_iter(|chunk| {
            let mut out = Vec::with_capacity(chunk.len() / dim);
            pot.jets(chunk, dirs, &mut out);
            out
        })
        .collect()
}

/// Latent partials `(F_ξ, F_τ)` at every `(spatial, latent)` pair of
/// `batch`, flattened spatial-major. `F_τ` is zero in one dimension.
fn latent_gradients<T: Real, P: Potential<T> + ?Sized>(pot: &P, batch: &Batch<T>) -> Vec<[f64; 2]> {
    let dim = batch.input_dim();
    let mut points = vec![T::zero(); batch.len() * dim];
    for (idx, p) in points.chunks_mut(dim).enumerate() {
        batch.input(idx / batch.latent_count(), idx % batch.latent_count(), p);
    }
    let planar = batch.latent_dim == 2;
    let dirs = if planar { latent_dirs(batch.physical_dim) } else { Dirs::new(1, 1) };
    jets(pot, &points, dirs)
        .into_iter()
        .map(|j| {
            let tau = if planar { j.d1[1].to_f64_lossy() } else { 0.0 };
            [j.d1[0].to_f64_lossy(), tau]
        })
        .collect()
}

/// The chosen latent partial at `(anchor, ℓ)` for each latent `ℓ` in the
/// flat array `latents`.
pub fn pushforward_samples<T: Real, P: Potential<T> + ?Sized>(
    pot: &P,
    anchor: &[T],
    component: Component,
    latents: &[T],
) -> Result<Vec<f64>> {
    let physical = anchor.len();
    let latent_dim = pot.input_dim().checked_sub(physical).filter(|&d| d > 0).ok_or(
        Error::DimensionMismatch {
            expected: pot.input_dim(),
            got: physical,
        },
    )?;
    if component == Component::Tau && latent_dim < 2 {
        return Err(Error::config("component", "tau needs a two-dimensional latent"));
    }
    let batch = Batch::from_points(physical, anchor.to_vec(), latent_dim, latents.to_vec());
    let k = if component == Component::Xi { 0 } else { 1 };
    Ok(latent_gradients(pot, &batch).into_iter().map(|g| g[k]).collect())
}

/// Bin layout for pushforward histograms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self { lo: -2.0, hi: 2.0, bins: 81 }
    }
}

impl HistogramSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::config("histogram_bins", "must be at least 1"));
        }
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::config("histogram_range", "needs finite lo < hi"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Values outside the range land in the end bins, so the counts always
    /// sum to the number of values.
    pub fn new(values: &[f64], spec: &HistogramSpec) -> Self {
        let width = (spec.hi - spec.lo) / spec.bins as f64;
        let edges = (0..=spec.bins).map(|k| spec.lo + k as f64 * width).collect();
        let mut counts = vec![0u64; spec.bins];
        for &v in values {
            let k = ((v - spec.lo) / width).floor();
            let k = if k.is_nan() { 0 } else { (k.max(0.0) as usize).min(spec.bins - 1) };
            counts[k] += 1;
        }
        Self { edges, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_of(&self, v: f64) -> usize {
        let bins = self.counts.len();
        self.edges[1..bins].partition_point(|&e| e <= v)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.edges[k], self.edges[k + 1], c));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub anchor: Vec<f64>,
    pub component: Component,
    pub samples: Vec<f64>,
    pub histogram: Histogram,
}

impl EmpiricalMeasure {
    /// Fraction of samples in `[lo, hi]`.
    pub fn mass_in(&self, lo: f64, hi: f64) -> f64 {
        mass_in(&self.samples, lo, hi)
    }

    /// Fraction of samples within `radius` of any of `centers`.
    pub fn mass_near(&self, centers: &[f64], radius: f64) -> f64 {
        let hits = self
            .samples
            .iter()
            .filter(|&&v| centers.iter().any(|c| (v - c).abs() <= radius))
            .count();
        hits as f64 / self.samples.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }
}

pub fn mass_in(samples: &[f64], lo: f64, hi: f64) -> f64 {
    samples.iter().filter(|&&v| (lo..=hi).contains(&v)).count() as f64 / samples.len() as f64
}

/// Draws `count` standard Gaussian latents and bins the chosen partial at
/// `anchor`.
pub fn pushforward_histogram<T: Real, P: Potential<T> + ?Sized>(
    pot: &P,
    anchor: &[T],
    component: Component,
    count: usize,
    spec: &HistogramSpec,
    rng: &mut Rng,
) -> Result<EmpiricalMeasure> {
    spec.validate()?;
    let latent_dim = pot.input_dim().saturating_sub(anchor.len());
    let latents: Vec<T> = gaussian_samples(count, latent_dim, rng)?;
    pushforward_measure(pot, anchor, component, &latents, spec)
}

/// As [`pushforward_histogram`] on given latents.
pub fn pushforward_measure<T: Real, P: Potential<T> + ?Sized>(
    pot: &P,
    anchor: &[T],
    component: Component,
    latents: &[T],
    spec: &HistogramSpec,
) -> Result<EmpiricalMeasure> {
    let samples = pushforward_samples(pot, anchor, component, latents)?;
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(EmpiricalMeasure {
        anchor: anchor.iter().map(|v| v.to_f64_lossy()).collect(),
        component,
        histogram: Histogram::new(&samples, spec),
        samples,
    })
}

/// Kolmogorov-Smirnov distance between samples and a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0, |d, (i, &v)| {
        let f = cdf(v);
        d.max((i + 1) as f64 / n - f).max(f - i as f64 / n)
    })
}

/// One-sample KS critical distance at the 1% level.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// Second argument of [`w2_empirical_1d`].
#[derive(Clone, Copy, Debug)]
pub enum Reference<'a> {
    Samples(&'a [f64]),
    /// `(location, mass)` pairs; masses are normalized.
    Atoms(&'a [(f64, f64)]),
}

/// A step quantile function: value `vals[k]` on `(cum[k-1], cum[k]]`.
struct Quantile {
    cum: Vec<f64>,
    vals: Vec<f64>,
}

impl Quantile {
    fn of_samples(s: &[f64]) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut vals = s.to_vec();
        vals.sort_by(f64::total_cmp);
        let n = vals.len() as f64;
        let cum = (1..=vals.len()).map(|i| i as f64 / n).collect();
        Ok(Self { cum, vals })
    }

    fn of_atoms(atoms: &[(f64, f64)]) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptyInput);
        }
        if atoms.iter().any(|&(x, m)| !(x.is_finite() && m > 0.0)) {
            return Err(Error::config("atoms", "need finite locations and positive masses"));
        }
        let mut a = atoms.to_vec();
        a.sort_by(|p, q| p.0.total_cmp(&q.0));
        let total: f64 = a.iter().map(|p| p.1).sum();
        let mut acc = 0.0;
        let mut cum = Vec::with_capacity(a.len());
        for &(_, m) in &a {
            acc += m;
            cum.push(acc / total);
        }
        *cum.last_mut().expect("non-empty") = 1.0;
        Ok(Self {
            cum,
            vals: a.into_iter().map(|p| p.0).collect(),
        })
    }
}

/// Wasserstein-2 distance between one-dimensional laws via their quantile
/// functions; with equal sample counts this is sorted-sample pairing.
pub fn w2_empirical_1d(a: &[f64], b: Reference<'_>) -> Result<f64> {
    let qa = Quantile::of_samples(a)?;
    let qb = match b {
        Reference::Samples(s) => Quantile::of_samples(s)?,
        Reference::Atoms(atoms) => Quantile::of_atoms(atoms)?,
    };
    let (mut i, mut j, mut t, mut acc) = (0, 0, 0.0, 0.0);
    while i < qa.vals.len() && j < qb.vals.len() {
        let next = qa.cum[i].min(qb.cum[j]);
        let d = qa.vals[i] - qb.vals[j];
        acc += (next - t) * d * d;
        t = next;
        if qa.cum[i] <= next {
            i += 1;
        }
        if qb.cum[j] <= next {
            j += 1;
        }
    }
    Ok(acc.max(0.0).sqrt())
}

/// How latent means are normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `Σ w f / Σ w`: a probability mean.
    #[default]
    Normalized,
    /// `(1/M) Σ w f`: the convention inside the losses.
    Unnormalized,
}

/// Nodal values on a tensor grid (`ys` empty in one dimension), x-major.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub u: Vec<f64>,
    pub v1: Option<Vec<f64>>,
    pub v2: Option<Vec<f64>>,
}

impl FieldGrid {
    fn ny(&self) -> usize {
        self.ys.len().max(1)
    }

    /// `u` at node `(i, j)`.
    pub fn u_at(&self, i: usize, j: usize) -> f64 {
        self.u[i * self.ny() + j]
    }

    pub fn max_abs_u(&self) -> f64 {
        self.u.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_csv(&self) -> String {
        let planar = !self.ys.is_empty();
        let mut out = String::from(if planar { "x,y,u" } else { "x,u" });
        let v = self.v1.as_ref().zip(self.v2.as_ref());
        if v.is_some() {
            out.push_str(",V1,V2");
        }
        out.push('\n');
        for (i, &x) in self.xs.iter().enumerate() {
            for j in 0..self.ny() {
                let s = i * self.ny() + j;
                out.push_str(&format!("{x}"));
                if planar {
                    out.push_str(&format!(",{}", self.ys[j]));
                }
                out.push_str(&format!(",{}", self.u[s]));
                if let Some((v1, v2)) = v {
                    out.push_str(&format!(",{},{}", v1[s], v2[s]));
                }
                out.push('\n');
            }
        }
        out
    }
}

fn grid_axes<T: Real>(batch: &Batch<T>, what: &'static str) -> Result<(Vec<f64>, Vec<f64>)> {
    let (xs, ys) = batch.grid.as_ref().ok_or(Error::NeedsGrid(what))?;
    Ok((
        xs.iter().map(|v| v.to_f64_lossy()).collect(),
        ys.iter().map(|v| v.to_f64_lossy()).collect(),
    ))
}

/// Per-node latent means of `(F_ξ, F_τ)`.
fn latent_means<T: Real, P: Potential<T> + ?Sized>(
    pot: &P,
    batch: &Batch<T>,
    norm: Normalization,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if pot.input_dim() != batch.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: pot.input_dim(),
            got: batch.input_dim(),
        });
    }
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    let g = latent_gradients(pot, batch);
    let w: Vec<f64> = batch.weights.iter().map(|v| v.to_f64_lossy()).collect();
    let denom = match norm {
        Normalization::Normalized => w.iter().sum::<f64>(),
        Normalization::Unnormalized => w.len() as f64,
    };
    let l = w.len();
    let mut v1 = Vec::with_capacity(batch.spatial_count());
    let mut v2 = Vec::with_capacity(batch.spatial_count());
    for s in 0..batch.spatial_count() {
        let (mut a, mut b) = (0.0, 0.0);
        for (k, &wk) in w.iter().enumerate() {
            let [gx, gt] = g[s * l + k];
            a += gx * wk;
            b += gt * wk;
        }
        v1.push(a / denom);
        v2.push(b / denom);
    }
    Ok((v1, v2))
}

/// `U(x_n) = (1/N) Σ_{i≤n} (1/M) Σ_j F_ξ(x_i, ξ_j) e^{−ξ_j²/2}` on a line grid.
pub fn reconstruct_u_1d<T: Real, P: Potential<T> + ?Sized>(pot: &P, grid: &Batch<T>) -> Result<FieldGrid> {
    if grid.physical_dim != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: grid.physical_dim,
        });
    }
    let (xs, _) = grid_axes(grid, "field reconstruction")?;
    let (v, _) = latent_means(pot, grid, Normalization::Unnormalized)?;
    let n = xs.len() as f64;
    let mut acc = 0.0;
    let u = v
        .iter()
        .map(|&m| {
            acc += m;
            acc / n
        })
        .collect();
    Ok(FieldGrid {
        xs,
        u,
        ..FieldGrid::default()
    })
}

/// Latent means of `(F_ξ, F_τ)` at each spatial node of a planar grid.
pub fn barycenter_field<T: Real, P: Potential<T> + ?Sized>(
    pot: &P,
    grid: &Batch<T>,
    norm: Normalization,
) -> Result<FieldGrid> {
    if grid.physical_dim != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: grid.physical_dim,
        });
    }
    let (xs, ys) = grid_axes(grid, "barycenter field")?;
    let (v1, v2) = latent_means(pot, grid, norm)?;
    Ok(FieldGrid {
        u: vec![0.0; v1.len()],
        xs,
        ys,
        v1: Some(v1),
        v2: Some(v2),
    })
}

/// Integration path from the origin for planar reconstruction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathMode {
    /// Along x at `y = 0`, then along y.
    #[default]
    #[serde(rename = "staircase-xy")]
    StaircaseXY,
    /// Along y at `x = 0`, then along x.
    #[serde(rename = "staircase-yx")]
    StaircaseYX,
    /// The segment from the origin, on bilinearly interpolated `V`.
    #[serde(rename = "straight")]
    Straight,
}

fn trapezoid(nodes: &[f64], vals: impl Fn(usize) -> f64, upto: usize) -> f64 {
    (1..=upto)
        .map(|k| 0.5 * (nodes[k] - nodes[k - 1]) * (vals(k) + vals(k - 1)))
        .sum()
}

fn bilinear(xs: &[f64], ys: &[f64], f: &[f64], x: f64, y: f64) -> f64 {
    let cell = |nodes: &[f64], v: f64| {
        let k = nodes.partition_point(|&n| n <= v).clamp(1, nodes.len() - 1) - 1;
        (k, (v - nodes[k]) / (nodes[k + 1] - nodes[k]))
    };
    let (i, s) = cell(xs, x);
    let (j, t) = cell(ys, y);
    let m = ys.len();
    let at = |a: usize, b: usize| f[a * m + b];
    (1.0 - s) * (1.0 - t) * at(i, j) + s * (1.0 - t) * at(i + 1, j) + (1.0 - s) * t * at(i, j + 1) + s * t * at(i + 1, j + 1)
}

/// Integrates a nodal field `V` from the origin node; `u(0, 0) = 0`.
/// Requires the grid to start at the origin.
pub fn integrate_field(field: &FieldGrid, path: PathMode) -> Result<Vec<f64>> {
    let (xs, ys) = (&field.xs, &field.ys);
    let (v1, v2) = field
        .v1
        .as_ref()
        .zip(field.v2.as_ref())
        .ok_or(Error::config("field", "needs V1 and V2"))?;
    let (n, m) = (xs.len(), ys.len());
    if n < 2 || m < 2 {
        return Err(Error::config("field", "needs at least 2 nodes per axis"));
    }
    let at = |f: &[f64], i: usize, j: usize| f[i * m + j];
    let mut u = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            u[i * m + j] = match path {
                PathMode::StaircaseXY => {
                    trapezoid(xs, |k| at(v1, k, 0), i) + trapezoid(ys, |k| at(v2, i, k), j)
                }
                PathMode::StaircaseYX => {
                    trapezoid(ys, |k| at(v2, 0, k), j) + trapezoid(xs, |k| at(v1, k, j), i)
                }
                PathMode::Straight => {
                    let (dx, dy) = (xs[i] - xs[0], ys[j] - ys[0]);
                    let steps = i.max(j).max(1) * 2;
                    let ts: Vec<f64> = (0..=steps).map(|k| k as f64 / steps as f64).collect();
                    let g = |k: usize| {
                        let (x, y) = (xs[0] + ts[k] * dx, ys[0] + ts[k] * dy);
                        bilinear(xs, ys, v1, x, y) * dx + bilinear(xs, ys, v2, x, y) * dy
                    };
                    trapezoid(&ts, g, steps)
                }
            };
        }
    }
    Ok(u)
}

/// Largest nodal gap between the two staircase reconstructions.
pub fn path_discrepancy(field: &FieldGrid) -> Result<f64> {
    let a = integrate_field(field, PathMode::StaircaseXY)?;
    let b = integrate_field(field, PathMode::StaircaseYX)?;
    Ok(a.iter().zip(&b).fold(0.0, |m, (p, q)| m.max((p - q).abs())))
}

/// Barycenter field of a planar grid and `u` integrated along `path`.
pub fn reconstruct_u_2d<T: Real, P: Potential<T> + ?Sized>(
    pot: &P,
    grid: &Batch<T>,
    path: PathMode,
    norm: Normalization,
) -> Result<FieldGrid> {
    let mut field = barycenter_field(pot, grid, norm)?;
    field.u = integrate_field(&field, path)?;
    Ok(field)
}

/// Root-mean-square central-difference curl `∂V₂/∂x − ∂V₁/∂y` over interior nodes.
pub fn curl_rms(field: &FieldGrid) -> Result<f64> {
    let (v1, v2) = field
        .v1
        .as_ref()
        .zip(field.v2.as_ref())
        .ok_or(Error::config("field", "needs V1 and V2"))?;
    let (xs, ys) = (&field.xs, &field.ys);
    let (n, m) = (xs.len(), ys.len());
    if n < 3 || m < 3 {
        return Err(Error::config("field", "needs at least 3 nodes per axis"));
    }
    let mut acc = 0.0;
    for i in 1..n - 1 {
        for j in 1..m - 1 {
            let d2x = (v2[(i + 1) * m + j] - v2[(i - 1) * m + j]) / (xs[i + 1] - xs[i - 1]);
            let d1y = (v1[i * m + j + 1] - v1[i * m + j - 1]) / (ys[j + 1] - ys[j - 1]);
            acc += (d2x - d1y).powi(2);
        }
    }
    Ok((acc / ((n - 2) * (m - 2)) as f64).sqrt())
}

/// The energy term alone on a fixed probe set.
pub fn energy_estimate<T: Real, P: Potential<T> + ?Sized>(
    pot: &P,
    problem: &ProblemSpec,
    probe: &Batch<T>,
) -> Result<f64> {
    Ok(energy_term(problem, pot, probe)?.to_f64_lossy())
}

/// One row of the Wasserstein-versus-energy diagnostic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct W2EnergyPoint {
    pub epoch: usize,
    pub energy: f64,
    /// Mean over probe points of `W₂²` to the two-atom measure.
    pub w2_sq: f64,
    /// `energy / c`.
    pub bound: f64,
    /// `w2_sq / bound`; at most 1 when the bound holds.
    pub ratio: f64,
}

/// Evaluates the diagnostic for an interval-problem potential.
pub fn w2_energy_point<T: Real, P: Potential<T> + ?Sized>(
    pot: &P,
    epoch: usize,
    probe: &Batch<T>,
    probes_x: &[f64],
    latents: &[T],
    coercivity: f64,
) -> Result<W2EnergyPoint> {
    let energy = energy_estimate(pot, &ProblemSpec::new(crate::problems::Case::Bolza1d), probe)?;
    let mut acc = 0.0;
    for &x in probes_x {
        let s = pushforward_samples(pot, &[T::of(x)], Component::Xi, latents)?;
        acc += w2_empirical_1d(&s, Reference::Atoms(&TWO_WELL_ATOMS))?.powi(2);
    }
    let w2_sq = acc / probes_x.len().max(1) as f64;
    let bound = energy / coercivity;
    Ok(W2EnergyPoint {
        epoch,
        energy,
        w2_sq,
        bound,
        ratio: w2_sq / bound,
    })
}
