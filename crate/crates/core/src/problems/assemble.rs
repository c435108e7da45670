//! Loss assembly from per-sample derivative tables.
//!
//! Everything here is generic over [`Scalar`], so the same code gives loss
//! values (on reals) and per-entry adjoints (on tape variables).

use crate::autodiff::Dirs;
use crate::scalar::Scalar;

/// Which derivatives a table stores per sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Columns {
    /// `[F_ξ]` for the interval problem; axes (x, ξ).
    Line,
    /// `[F_ξ, F_τ, F_xτ, F_yξ]`; axes (x, y, ξ, τ).
    Interior,
    /// `[F_ξ, F_τ]` on the boundary grid.
    Boundary,
}

/// One jet pass and where its channels land in the table row.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Pass {
    pub dirs: Dirs,
    pub d0: Option<usize>,
    pub d1: Option<usize>,
    pub dd: Option<usize>,
}

const LINE: [Pass; 1] = [Pass {
    dirs: Dirs::new(1, 1),
    d0: Some(0),
    d1: None,
    dd: None,
}];

const INTERIOR: [Pass; 2] = [
    Pass {
        dirs: Dirs::new(0, 3),
        d0: None,
        d1: Some(1),
        dd: Some(2),
    },
    Pass {
        dirs: Dirs::new(1, 2),
        d0: None,
        d1: Some(0),
        dd: Some(3),
    },
];

const BOUNDARY: [Pass; 1] = [Pass {
    dirs: Dirs::new(2, 3),
    d0: Some(0),
    d1: Some(1),
    dd: None,
}];

impl Columns {
    pub fn width(self) -> usize {
        match self {
            Columns::Line => 1,
            Columns::Interior => 4,
            Columns::Boundary => 2,
        }
    }

    pub fn passes(self) -> &'static [Pass] {
        match self {
            Columns::Line => &LINE,
            Columns::Interior => &INTERIOR,
            Columns::Boundary => &BOUNDARY,
        }
    }
}

pub(crate) const XI: usize = 0;
pub(crate) const TAU: usize = 1;
pub(crate) const X_TAU: usize = 2;
pub(crate) const Y_XI: usize = 3;

fn c<S: Scalar>(v: f64) -> S {
    S::constant(v)
}

fn two_well<S: Scalar>(p: S) -> S {
    (p * p - c(1.0)).square()
}

/// Interval problem on an `n × m` product grid (x ascending).
/// Returns `(energy, boundary)`.
pub(crate) fn line<S: Scalar>(f: &[S], n: usize, weights: &[f64]) -> (S, S) {
    let m = weights.len();
    let (inv_n, inv_m) = (1.0 / n as f64, 1.0 / m as f64);
    let mut well = c::<S>(0.0);
    let mut u_sq = c::<S>(0.0);
    let mut running = c::<S>(0.0);
    for i in 0..n {
        let row = &f[i * m..(i + 1) * m];
        let mut e = c::<S>(0.0);
        let mut v = c::<S>(0.0);
        for (k, &w) in weights.iter().enumerate() {
            e = e + two_well(row[k]) * c(w);
            v = v + row[k] * c(w);
        }
        well = well + e * c(inv_m);
        running = running + v * c(inv_m);
        u_sq = u_sq + (running * c(inv_n)).square();
    }
    let energy = (well + u_sq) * c(inv_n);
    let boundary = (running * c(inv_n)).square();
    (energy, boundary)
}

/// Energy density of the plane problems on one table row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Density {
    /// `((F_ξ)² − 1)² + (F_τ)²`
    WellPlusQuadratic,
    /// `((F_ξ)² − 1)² + ((F_τ)² − 1)²`
    FourWell,
}

fn density<S: Scalar>(d: Density, xi: S, tau: S) -> S {
    match d {
        Density::WellPlusQuadratic => two_well(xi) + tau.square(),
        Density::FourWell => two_well(xi) + two_well(tau),
    }
}

/// Weighted energy and curl penalty over `spatial` points, each paired with
/// every latent weight. Returns `(energy, curl)`.
pub(crate) fn interior<S: Scalar>(t: &[S], spatial: usize, weights: &[f64], d: Density) -> (S, S) {
    let l = weights.len();
    let w = Columns::Interior.width();
    let (inv_s, inv_l) = (1.0 / spatial as f64, 1.0 / l as f64);
    let mut energy = c::<S>(0.0);
    let mut curl = c::<S>(0.0);
    for s in 0..spatial {
        let mut e = c::<S>(0.0);
        let mut a = c::<S>(0.0);
        let mut b = c::<S>(0.0);
        for (k, &wk) in weights.iter().enumerate() {
            let row = &t[(s * l + k) * w..(s * l + k + 1) * w];
            e = e + density(d, row[XI], row[TAU]) * c(wk);
            a = a + row[X_TAU] * c(wk);
            b = b + row[Y_XI] * c(wk);
        }
        energy = energy + e;
        curl = curl + ((a - b) * c(inv_l)).square();
    }
    (energy * c(inv_s * inv_l), curl * c(inv_s))
}

/// The two boundary penalties on an `xs × ys` grid (x-major) with targets
/// `α·y` and `α·x`. Returns `[right edge, top edge]`.
pub(crate) fn boundary<S: Scalar>(t: &[S], xs: &[f64], ys: &[f64], weights: &[f64], alpha: f64) -> [S; 2] {
    let (n, m, l) = (xs.len(), ys.len(), weights.len());
    let w = Columns::Boundary.width();
    let inv_l = 1.0 / l as f64;
    // per-node weighted latent means of F_ξ and F_τ
    let mut v1 = Vec::with_capacity(n * m);
    let mut v2 = Vec::with_capacity(n * m);
    for node in 0..n * m {
        let mut a = c::<S>(0.0);
        let mut b = c::<S>(0.0);
        for (k, &wk) in weights.iter().enumerate() {
            let row = &t[(node * l + k) * w..(node * l + k + 1) * w];
            a = a + row[XI] * c(wk);
            b = b + row[TAU] * c(wk);
        }
        v1.push(a * c(inv_l));
        v2.push(b * c(inv_l));
    }
    let mut right = c::<S>(0.0);
    for (j, &y) in ys.iter().enumerate() {
        let mut acc = c::<S>(0.0);
        for i in 0..n {
            acc = acc + v1[i * m + j];
        }
        right = right + (acc * c(1.0 / n as f64) - c(alpha * y)).square();
    }
    let mut top = c::<S>(0.0);
    for (i, &x) in xs.iter().enumerate() {
        let mut acc = c::<S>(0.0);
        for j in 0..m {
            acc = acc + v2[i * m + j];
        }
        top = top + (acc * c(1.0 / m as f64) - c(alpha * x)).square();
    }
    [right, top]
}
