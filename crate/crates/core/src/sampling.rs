//! Grids, stochastic meshgrid batches, and Gaussian latent draws.
//!
//! A [`Batch`] is a product set: every spatial point is paired with every
//! latent point. That is the index structure of the losses (spatial sums
//! outside, latent means inside), whether the points come from a fixed grid
//! or from random draws.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Named sub-streams of the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init,
    Batching,
    Analysis,
    Worker(u32),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Batching => 2,
            Stream::Analysis => 3,
            Stream::Worker(k) => 1024 + k as u64,
        }
    }
}

pub type Rng = ChaCha8Rng;

/// The RNG for `stream` under `master_seed`. Streams never overlap.
pub fn stream_rng(master_seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream.id());
    rng
}

/// Position of `rng` within its stream, for checkpointing.
pub fn rng_position(rng: &Rng) -> u128 {
    rng.get_word_pos()
}

pub fn rng_at(master_seed: u64, stream: Stream, position: u128) -> Rng {
    let mut rng = stream_rng(master_seed, stream);
    rng.set_word_pos(position);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisKind {
    X,
    Y,
    Xi,
    Tau,
}

impl AxisKind {
    pub fn is_latent(self) -> bool {
        matches!(self, AxisKind::Xi | AxisKind::Tau)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub kind: AxisKind,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(kind: AxisKind, lo: f64, hi: f64, count: usize) -> Self {
        Self { kind, lo, hi, count }
    }

    /// Endpoint-inclusive, ascending nodes.
    pub fn nodes<T: Real>(&self) -> Vec<T> {
        let last = self.count - 1;
        (0..self.count)
            .map(|k| {
                if k == last {
                    T::of(self.hi)
                } else {
                    T::of(self.lo + (self.hi - self.lo) * k as f64 / last as f64)
                }
            })
            .collect()
    }
}

/// Trapezoid-rule integral of `exp(−v²/2)` over the nodes of `axis`.
pub fn gaussian_mass(axis: &Axis) -> f64 {
    let nodes: Vec<f64> = axis.nodes();
    nodes
        .windows(2)
        .map(|w| 0.5 * (w[1] - w[0]) * (gaussian_weight(&w[..1]) + gaussian_weight(&w[1..])))
        .sum()
}

/// Axes of a tensor-product grid; physical axes first (x, y), then latent (ξ, τ).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
}

impl GridSpec {
    /// x ∈ [0,1] with `nx` nodes and ξ ∈ [−2,2] with `nxi` nodes.
    pub fn line(nx: usize, nxi: usize) -> Self {
        Self {
            axes: vec![
                Axis::new(AxisKind::X, 0.0, 1.0, nx),
                Axis::new(AxisKind::Xi, -2.0, 2.0, nxi),
            ],
        }
    }

    /// The 201 × 201 grid of the one-dimensional problem.
    pub fn bolza_default() -> Self {
        Self::line(201, 201)
    }

    /// Unit square with `n` nodes per side and `[−2,2]²` with `k` nodes per side.
    pub fn square(n: usize, k: usize) -> Self {
        Self {
            axes: vec![
                Axis::new(AxisKind::X, 0.0, 1.0, n),
                Axis::new(AxisKind::Y, 0.0, 1.0, n),
                Axis::new(AxisKind::Xi, -2.0, 2.0, k),
                Axis::new(AxisKind::Tau, -2.0, 2.0, k),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for a in &self.axes {
            if a.count < 2 {
                return Err(Error::config("grid", format!("{:?} axis needs at least 2 points", a.kind)));
            }
            if !(a.lo.is_finite() && a.hi.is_finite()) || a.lo >= a.hi {
                return Err(Error::config("grid", format!("{:?} axis range must be finite and increasing", a.kind)));
            }
        }
        let physical: Vec<_> = self.axes.iter().filter(|a| !a.kind.is_latent()).collect();
        let ordered = self
            .axes
            .windows(2)
            .all(|w| !(w[0].kind.is_latent() && !w[1].kind.is_latent()));
        if physical.is_empty() || physical.len() > 2 || !ordered {
            return Err(Error::config("grid", "expected 1–2 physical axes followed by latent axes"));
        }
        Ok(())
    }
}

/// How latent points are drawn and weighted in stochastic batches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentSampling {
    /// Uniform on the truncation box, weighted by `exp(−|ℓ|²/2)`.
    WeightedUniform,
    /// Standard normal draws with unit weights.
    ImportanceNormal,
}

impl LatentSampling {
    pub fn as_str(&self) -> &'static str {
        match self {
            LatentSampling::WeightedUniform => "weighted-uniform",
            LatentSampling::ImportanceNormal => "importance-normal",
        }
    }
}

impl std::str::FromStr for LatentSampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted-uniform" => Ok(LatentSampling::WeightedUniform),
            "importance-normal" => Ok(LatentSampling::ImportanceNormal),
            other => Err(Error::config(
                "latent_sampling",
                format!("expected weighted-uniform or importance-normal, got {other:?}"),
            )),
        }
    }
}

/// Unnormalized Gaussian weight `exp(−|ℓ|²/2)`.
pub fn gaussian_weight<T: Real>(latent: &[T]) -> T {
    let sq = latent.iter().fold(T::zero(), |acc, &v| acc + v * v);
    (-(sq * T::of(0.5))).exp()
}

/// Product set of spatial points and weighted latent points.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub physical_dim: usize,
    pub latent_dim: usize,
    /// Flat, `physical_dim` reals per point.
    pub spatial: Vec<T>,
    /// Axis nodes when `spatial` is a tensor grid: `(xs, ys)` with points in
    /// x-major order (`s = i·|ys| + j`); `ys` is empty in one dimension.
    pub grid: Option<(Vec<T>, Vec<T>)>,
    /// Flat, `latent_dim` reals per point.
    pub latent: Vec<T>,
    pub weights: Vec<T>,
    /// Word position of the batching stream after this batch was drawn.
    pub rng_position: Option<u128>,
}

impl<T: Real> Batch<T> {
    pub fn spatial_count(&self) -> usize {
        self.spatial.len() / self.physical_dim
    }

    pub fn latent_count(&self) -> usize {
        self.weights.len()
    }

    pub fn len(&self) -> usize {
        self.spatial_count() * self.latent_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.physical_dim + self.latent_dim
    }

    pub fn spatial_point(&self, s: usize) -> &[T] {
        &self.spatial[s * self.physical_dim..(s + 1) * self.physical_dim]
    }

    pub fn latent_point(&self, l: usize) -> &[T] {
        &self.latent[l * self.latent_dim..(l + 1) * self.latent_dim]
    }

    /// Writes the concatenated input `(spatial, latent)` for pair `(s, l)`.
    pub fn input(&self, s: usize, l: usize, out: &mut [T]) {
        out[..self.physical_dim].copy_from_slice(self.spatial_point(s));
        out[self.physical_dim..].copy_from_slice(self.latent_point(l));
    }

    /// `(N, M)` when the spatial set is a tensor grid (`M = 1` in one dimension).
    pub fn grid_shape(&self) -> Option<(usize, usize)> {
        self.grid
            .as_ref()
            .map(|(xs, ys)| (xs.len(), ys.len().max(1)))
    }

    /// Builds a product batch from explicit spatial and latent point lists
    /// with Gaussian weights.
    pub fn from_points(physical_dim: usize, spatial: Vec<T>, latent_dim: usize, latent: Vec<T>) -> Self {
        let weights = latent
            .chunks(latent_dim.max(1))
            .map(|l| if latent_dim == 0 { T::one() } else { gaussian_weight(l) })
            .collect();
        Self {
            physical_dim,
            latent_dim,
            spatial,
            grid: None,
            latent,
            weights,
            rng_position: None,
        }
    }
}

fn tensor_product<T: Real>(axes: &[Vec<T>]) -> Vec<T> {
    let mut points: Vec<Vec<T>> = vec![Vec::new()];
    for nodes in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                nodes.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    points.into_iter().flatten().collect()
}

/// Deterministic tensor-product grid with endpoint inclusion.
pub fn uniform_grid<T: Real>(spec: &GridSpec) -> Result<Batch<T>> {
    spec.validate()?;
    let physical: Vec<Vec<T>> = spec
        .axes
        .iter()
        .filter(|a| !a.kind.is_latent())
        .map(Axis::nodes)
        .collect();
    let latent: Vec<Vec<T>> = spec
        .axes
        .iter()
        .filter(|a| a.kind.is_latent())
        .map(Axis::nodes)
        .collect();
    let mut batch = Batch::from_points(
        physical.len(),
        tensor_product(&physical),
        latent.len(),
        tensor_product(&latent),
    );
    if latent.is_empty() {
        batch.weights = vec![T::one()];
    }
    batch.grid = Some((
        physical[0].clone(),
        physical.get(1).cloned().unwrap_or_default(),
    ));
    Ok(batch)
}

/// Ranges and latent law for stochastic batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshgridSpec {
    pub physical: Vec<(f64, f64)>,
    pub latent_dim: usize,
    /// Truncation box side for weighted-uniform sampling.
    pub latent_range: (f64, f64),
    pub sampling: LatentSampling,
}

impl MeshgridSpec {
    pub fn unit_square(sampling: LatentSampling) -> Self {
        Self {
            physical: vec![(0.0, 1.0), (0.0, 1.0)],
            latent_dim: 2,
            latent_range: (-2.0, 2.0),
            sampling,
        }
    }
}

/// `batch_size` uniform spatial points crossed with `batch_size` latent points.
pub fn stochastic_meshgrid<T: Real>(spec: &MeshgridSpec, batch_size: usize, rng: &mut Rng) -> Result<Batch<T>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size", "must be at least 1"));
    }
    let mut spatial = Vec::with_capacity(batch_size * spec.physical.len());
    let dists: Vec<Uniform<f64>> = spec
        .physical
        .iter()
        .map(|&(lo, hi)| Uniform::new_inclusive(lo, hi).map_err(|_| Error::config("physical range", "invalid")))
        .collect::<Result<_>>()?;
    for _ in 0..batch_size {
        for d in &dists {
            spatial.push(T::of(d.sample(rng)));
        }
    }
    let mut latent = Vec::with_capacity(batch_size * spec.latent_dim);
    let weights = match spec.sampling {
        LatentSampling::WeightedUniform => {
            let (lo, hi) = spec.latent_range;
            let d = Uniform::new_inclusive(lo, hi).map_err(|_| Error::config("latent_range", "invalid"))?;
            for _ in 0..batch_size * spec.latent_dim {
                latent.push(T::of(d.sample(rng)));
            }
            latent.chunks(spec.latent_dim).map(gaussian_weight).collect()
        }
        LatentSampling::ImportanceNormal => {
            for _ in 0..batch_size * spec.latent_dim {
                let v: f64 = StandardNormal.sample(rng);
                latent.push(T::of(v));
            }
            vec![T::one(); batch_size]
        }
    };
    Ok(Batch {
        physical_dim: spec.physical.len(),
        latent_dim: spec.latent_dim,
        spatial,
        grid: None,
        latent,
        weights,
        rng_position: Some(rng_position(rng)),
    })
}

/// `count` i.i.d. standard normal points in dimension `dim`, flat.
pub fn gaussian_samples<T: Real>(count: usize, dim: usize, rng: &mut Rng) -> Result<Vec<T>> {
    if count == 0 {
        return Err(Error::config("count", "must be at least 1"));
    }
    Ok((0..count * dim)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            T::of(v)
        })
        .collect())
}

/// Like [`gaussian_samples`] but in sign-flipped pairs `(ℓ, −ℓ)`, so the
/// empirical base measure is exactly symmetric. `count` must be even.
pub fn antithetic_gaussian_samples<T: Real>(count: usize, dim: usize, rng: &mut Rng) -> Result<Vec<T>> {
    if count == 0 || count % 2 != 0 {
        return Err(Error::config("count", "must be a positive even number"));
    }
    let half = gaussian_samples::<T>(count / 2, dim, rng)?;
    let mut out = Vec::with_capacity(count * dim);
    for p in half.chunks(dim) {
        out.extend_from_slice(p);
        out.extend(p.iter().map(|&v| -v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_point_axis() {
        let spec = GridSpec {
            axes: vec![Axis::new(AxisKind::X, 0.0, 1.0, 3)],
        };
        let b: Batch<f64> = uniform_grid(&spec).unwrap();
        assert_eq!(b.spatial, vec![0.0, 0.5, 1.0]);
        assert_eq!(b.weights, vec![1.0]);
    }

    #[test]
    fn latent_grid_weights() {
        let b: Batch<f64> = uniform_grid(&GridSpec::bolza_default()).unwrap();
        assert_eq!(b.latent_count(), 201);
        assert_eq!(b.spatial_count(), 201);
        assert_eq!(b.latent[0], -2.0);
        assert_eq!(b.latent[200], 2.0);
        assert_eq!(b.weights[100], 1.0);
        assert!((b.weights[0] - (-2.0f64).exp()).abs() < 1e-15);
        assert!((b.weights[0] - 0.1353).abs() < 1e-4);
        let spacing = (b.latent[200] - b.latent[0]) / 200.0;
        assert!((spacing - 0.02).abs() < 1e-15);
        for (l, w) in b.latent.iter().zip(&b.weights) {
            assert_eq!(*w, (-0.5 * l * l).exp());
        }
        assert!(b.latent.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn grid_spec_validation() {
        let mut s = GridSpec::line(1, 5);
        assert!(s.validate().is_err());
        s = GridSpec::line(5, 5);
        s.axes[1].hi = f64::INFINITY;
        assert!(s.validate().is_err());
    }

    #[test]
    fn stochastic_batches_are_reproducible_and_in_range() {
        let spec = MeshgridSpec::unit_square(LatentSampling::WeightedUniform);
        let mut r1 = stream_rng(7, Stream::Batching);
        let mut r2 = stream_rng(7, Stream::Batching);
        let a: Batch<f64> = stochastic_meshgrid(&spec, 32, &mut r1).unwrap();
        let b: Batch<f64> = stochastic_meshgrid(&spec, 32, &mut r2).unwrap();
        assert_eq!(a, b);
        assert!(a.spatial.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(a.latent.iter().all(|&v| (-2.0..=2.0).contains(&v)));
        for l in 0..a.latent_count() {
            assert_eq!(a.weights[l], gaussian_weight(a.latent_point(l)));
        }
        // resuming from the recorded position continues the same stream
        let c: Batch<f64> = stochastic_meshgrid(&spec, 8, &mut r1).unwrap();
        let mut r3 = rng_at(7, Stream::Batching, a.rng_position.unwrap());
        let d: Batch<f64> = stochastic_meshgrid(&spec, 8, &mut r3).unwrap();
        assert_eq!(c, d);
        assert!(stochastic_meshgrid::<f64>(&spec, 0, &mut r3).is_err());
    }

    #[test]
    fn streams_are_independent() {
        let mut a = stream_rng(1, Stream::Batching);
        let mut b = stream_rng(1, Stream::Analysis);
        let x: Vec<f64> = gaussian_samples(4, 1, &mut a).unwrap();
        let y: Vec<f64> = gaussian_samples(4, 1, &mut b).unwrap();
        assert_ne!(x, y);
    }

    #[test]
    fn antithetic_pairs() {
        let mut r = stream_rng(3, Stream::Analysis);
        let s: Vec<f64> = antithetic_gaussian_samples(6, 2, &mut r).unwrap();
        assert_eq!(s.len(), 12);
        assert_eq!(s[0], -s[2]);
        assert_eq!(s[1], -s[3]);
        assert!(antithetic_gaussian_samples::<f64>(5, 1, &mut r).is_err());
    }

    fn erf_mass() -> f64 {
        use statrs::function::erf::erf;
        (2.0 * std::f64::consts::PI).sqrt() * erf(2.0 / 2f64.sqrt())
    }

    #[test]
    fn gaussian_mass_of_the_latent_axis() {
        let axis = Axis::new(AxisKind::Xi, -2.0, 2.0, 201);
        let exact = erf_mass();
        assert!((exact - 2.3926).abs() < 1e-4);
        assert!((gaussian_mass(&axis) - exact).abs() < 1e-3);
        // the plain node average times the width undercounts by about 9e-3
        let b: Batch<f64> = uniform_grid(&GridSpec::line(2, 201)).unwrap();
        let naive = b.weights.iter().sum::<f64>() / 201.0 * 4.0;
        assert!((naive - 2.383_348).abs() < 1e-6, "{naive}");
    }

    fn moments(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        (mean, v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0))
    }

    fn ks_uniform(v: &[f64], lo: f64, hi: f64) -> f64 {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len() as f64;
        s.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
            let f = (x - lo) / (hi - lo);
            d.max((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
    }

    #[test]
    fn importance_normal_latent_moments() {
        let n = 100_000;
        let spec = MeshgridSpec {
            physical: vec![(0.0, 1.0)],
            latent_dim: 1,
            latent_range: (-2.0, 2.0),
            sampling: LatentSampling::ImportanceNormal,
        };
        let b: Batch<f64> = stochastic_meshgrid(&spec, n, &mut stream_rng(5, Stream::Batching)).unwrap();
        let (mean, var) = moments(&b.latent);
        let se = 1.0 / (n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "{mean}");
        // variance of the sample variance of a normal is 2/(n−1)
        assert!((var - 1.0).abs() < 3.0 * (2.0 / (n as f64 - 1.0)).sqrt(), "{var}");
        assert!(b.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn weighted_uniform_latent_moments() {
        let n = 100_000;
        let spec = MeshgridSpec::unit_square(LatentSampling::WeightedUniform);
        let b: Batch<f64> = stochastic_meshgrid(&spec, n, &mut stream_rng(5, Stream::Batching)).unwrap();
        let xi: Vec<f64> = b.latent.iter().step_by(2).copied().collect();
        let (mean, var) = moments(&xi);
        // uniform on [−2, 2]: variance 4/3, fourth central moment 16/5
        let se = (4.0 / 3.0 / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se);
        assert!((var - 4.0 / 3.0).abs() < 3.0 * ((16.0 / 5.0 - 16.0 / 9.0) / n as f64).sqrt());
    }

    #[test]
    fn physical_draws_are_uniform() {
        let n = 10_000;
        let spec = MeshgridSpec::unit_square(LatentSampling::WeightedUniform);
        let b: Batch<f64> = stochastic_meshgrid(&spec, n, &mut stream_rng(9, Stream::Batching)).unwrap();
        for axis in 0..2 {
            let v: Vec<f64> = b.spatial.iter().skip(axis).step_by(2).copied().collect();
            assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
            assert!(ks_uniform(&v, 0.0, 1.0) < 1.628 / (n as f64).sqrt());
        }
    }

    #[test]
    fn gaussian_sample_statistics() {
        let n = 10_000;
        let mut r = stream_rng(4, Stream::Analysis);
        let s: Vec<f64> = gaussian_samples(n, 1, &mut r).unwrap();
        let pos = s.iter().filter(|&&v| v > 0.0).count() as f64 / n as f64;
        assert!((pos - 0.5).abs() < 3.0 * 0.5 / (n as f64).sqrt());
        let p: Vec<f64> = gaussian_samples(n, 2, &mut r).unwrap();
        let (a, b): (Vec<f64>, Vec<f64>) = p.chunks(2).map(|c| (c[0], c[1])).unzip();
        let (ma, va) = moments(&a);
        let (mb, vb) = moments(&b);
        let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n as f64 - 1.0);
        let corr = cov / (va * vb).sqrt();
        assert!(corr.abs() < 3.0 / (n as f64).sqrt(), "{corr}");
        let one: Vec<f64> = gaussian_samples(1, 1, &mut stream_rng(4, Stream::Init)).unwrap();
        let again: Vec<f64> = gaussian_samples(1, 1, &mut stream_rng(4, Stream::Init)).unwrap();
        assert_eq!(one, again);
    }
}
