//! Second-order forward-mode jets.
//!
//! A [`Jet2`] carries a value, its partials along two tracked input
//! directions, and the single mixed partial along both. Seeding the same
//! input in both slots yields a pure second partial.

use std::ops::{Add, Mul, Neg, Sub};

use crate::scalar::Scalar;

/// The pair of input axes a jet tracks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dirs {
    pub first: usize,
    pub second: usize,
}

impl Dirs {
    pub const fn new(first: usize, second: usize) -> Self {
        Self { first, second }
    }

    pub const fn swapped(self) -> Self {
        Self {
            first: self.second,
            second: self.first,
        }
    }
}

/// Value plus first partials along two directions plus their mixed partial.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet2<S> {
    pub value: S,
    pub d1: [S; 2],
    pub d12: S,
}

impl<S: Scalar> Jet2<S> {
    pub fn new(value: S, d1: [S; 2], d12: S) -> Self {
        Self { value, d1, d12 }
    }

    /// A jet with no dependence on the tracked directions.
    pub fn constant(value: S) -> Self {
        let z = S::constant(0.0);
        Self {
            value,
            d1: [z, z],
            d12: z,
        }
    }

    /// Seeds input `axis` with unit tangents in whichever slots track it.
    pub fn seed(value: S, axis: usize, dirs: Dirs) -> Self {
        let unit = |hit: bool| if hit { S::constant(1.0) } else { S::constant(0.0) };
        Self {
            value,
            d1: [unit(axis == dirs.first), unit(axis == dirs.second)],
            d12: S::constant(0.0),
        }
    }

    /// Seeds every coordinate of `point` for the given directions.
    pub fn seed_point(point: &[S], dirs: Dirs) -> Vec<Self> {
        point
            .iter()
            .enumerate()
            .map(|(axis, &v)| Self::seed(v, axis, dirs))
            .collect()
    }

    /// `self * w` for a scalar `w`.
    #[inline]
    pub fn scale(self, w: S) -> Self {
        Self {
            value: self.value * w,
            d1: [self.d1[0] * w, self.d1[1] * w],
            d12: self.d12 * w,
        }
    }

    /// Exact GELU pushed through the jet (chain rule to second order).
    #[inline]
    pub fn gelu(self) -> Self {
        let [g, g1, g2] = self.value.gelu_parts();
        Self {
            value: g,
            d1: [g1 * self.d1[0], g1 * self.d1[1]],
            d12: g1 * self.d12 + g2 * self.d1[0] * self.d1[1],
        }
    }

    /// Applies a smooth scalar function given its value and first two derivatives at `self.value`.
    #[inline]
    pub fn chain(self, f: S, f1: S, f2: S) -> Self {
        Self {
            value: f,
            d1: [f1 * self.d1[0], f1 * self.d1[1]],
            d12: f1 * self.d12 + f2 * self.d1[0] * self.d1[1],
        }
    }

    pub fn powi(self, n: u32) -> Self {
        let mut acc = Self::constant(S::constant(1.0));
        for _ in 0..n {
            acc = acc * self;
        }
        acc
    }
}

impl<S: Scalar> Add for Jet2<S> {
    type Output = Self;

    #[inline]
    fn add(self, rhs: Self) -> Self {
        Self {
            value: self.value + rhs.value,
            d1: [self.d1[0] + rhs.d1[0], self.d1[1] + rhs.d1[1]],
            d12: self.d12 + rhs.d12,
        }
    }
}

impl<S: Scalar> Sub for Jet2<S> {
    type Output = Self;

    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Self {
            value: self.value - rhs.value,
            d1: [self.d1[0] - rhs.d1[0], self.d1[1] - rhs.d1[1]],
            d12: self.d12 - rhs.d12,
        }
    }
}

impl<S: Scalar> Neg for Jet2<S> {
    type Output = Self;

    #[inline]
    fn neg(self) -> Self {
        Self {
            value: -self.value,
            d1: [-self.d1[0], -self.d1[1]],
            d12: -self.d12,
        }
    }
}

impl<S: Scalar> Mul for Jet2<S> {
    type Output = Self;

    /// Leibniz rule: (uv)₁₂ = u₁₂v + u₁v₂ + u₂v₁ + uv₁₂.
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Self {
            value: self.value * rhs.value,
            d1: [
                self.d1[0] * rhs.value + self.value * rhs.d1[0],
                self.d1[1] * rhs.value + self.value * rhs.d1[1],
            ],
            d12: self.d12 * rhs.value
                + self.d1[0] * rhs.d1[1]
                + self.d1[1] * rhs.d1[0]
                + self.value * rhs.d12,
        }
    }
}

/// One neuron lane of the network: either a bare scalar or a jet.
///
/// The network forward pass is written once against this trait, so the plain
/// evaluation and the value channel of a jet evaluation run the same
/// floating-point operations in the same order.
pub trait Lane<E: Scalar>: Copy {
    fn splat(c: E) -> Self;

    /// `acc + self * w`
    fn mul_add(self, w: E, acc: Self) -> Self;

    fn plus(self, other: Self) -> Self;

    fn gelu(self) -> Self;
}

impl<E: Scalar> Lane<E> for E {
    #[inline]
    fn splat(c: E) -> Self {
        c
    }

    #[inline]
    fn mul_add(self, w: E, acc: Self) -> Self {
        acc + self * w
    }

    #[inline]
    fn plus(self, other: Self) -> Self {
        self + other
    }

    #[inline]
    fn gelu(self) -> Self {
        self.gelu_parts()[0]
    }
}

impl<E: Scalar> Lane<E> for Jet2<E> {
    #[inline]
    fn splat(c: E) -> Self {
        Jet2::constant(c)
    }

    #[inline]
    fn mul_add(self, w: E, acc: Self) -> Self {
        acc + self.scale(w)
    }

    #[inline]
    fn plus(self, other: Self) -> Self {
        self + other
    }

    #[inline]
    fn gelu(self) -> Self {
        Jet2::gelu(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Real;
    use proptest::prelude::*;

    fn eval<F: Fn(&[Jet2<f64>]) -> Jet2<f64>>(f: F, p: &[f64], dirs: Dirs) -> Jet2<f64> {
        f(&Jet2::seed_point(p, dirs))
    }

    #[test]
    fn gelu_jet_at_zero() {
        let out = Jet2::new(0.0, [1.0, 0.0], 0.0).gelu();
        assert_eq!(out.value, 0.0);
        assert_eq!(out.d1, [0.5, 0.0]);
        assert_eq!(out.d12, 0.0);
    }

    #[test]
    fn unseeded_jet_stays_unseeded() {
        for &t in &[-3.0, -0.1, 0.0, 0.7, 5.0] {
            let j = Jet2::constant(t).gelu().gelu() * Jet2::constant(t);
            assert_eq!(j.d1, [0.0, 0.0]);
            assert_eq!(j.d12, 0.0);
        }
    }

    #[test]
    fn gelu_jet_matches_finite_differences_at_one() {
        let h = 1e-5;
        let j = Jet2::new(1.0f64, [1.0, 1.0], 0.0).gelu();
        assert!((j.value - 0.8413447460685429).abs() < 1e-15);
        let g = <f64 as Real>::gelu;
        let fd1 = (g(1.0 + h) - g(1.0 - h)) / (2.0 * h);
        let fd2 = (g(1.0 + h) - 2.0 * g(1.0) + g(1.0 - h)) / (h * h);
        assert!((j.d1[0] - fd1).abs() <= 1e-6 * fd1.abs());
        // the second difference at h=1e-5 carries ~1e-6 relative rounding error
        assert!((j.d12 - fd2).abs() <= 1e-4 * fd2.abs());
        let fd2b = (g(1.0 + 1e-3) - 2.0 * g(1.0) + g(1.0 - 1e-3)) / 1e-6;
        assert!((j.d12 - fd2b).abs() <= 1e-6 * fd2b.abs());
    }

    #[test]
    fn x_times_xi_squared() {
        let f = |v: &[Jet2<f64>]| v[0] * v[1] * v[1];
        let j = eval(f, &[2.0, 3.0], Dirs::new(0, 1));
        assert_eq!(j.value, 18.0);
        assert_eq!(j.d1, [9.0, 12.0]);
        assert_eq!(j.d12, 6.0);
    }

    #[test]
    fn separable_mixed_partials_vanish() {
        // ξ g(x) + τ h(y) with x,y,ξ,τ = axes 0..3
        let f = |v: &[Jet2<f64>]| v[2] * v[0].gelu().gelu() + v[3] * (v[1] * v[1]).gelu();
        for p in [[0.1, 0.9, -1.0, 0.3], [0.7, 0.2, 1.5, -2.0]] {
            assert_eq!(eval(f, &p, Dirs::new(0, 3)).d12, 0.0);
            assert_eq!(eval(f, &p, Dirs::new(1, 2)).d12, 0.0);
        }
    }

    #[test]
    fn pure_second_partial_with_repeated_axis() {
        // d²/dξ² of x ξ³ = 6 x ξ
        let f = |v: &[Jet2<f64>]| v[0] * v[1].powi(3);
        let j = eval(f, &[1.5, -2.0], Dirs::new(1, 1));
        assert_eq!(j.d1, [12.0 * 1.5, 12.0 * 1.5]);
        assert_eq!(j.d12, 6.0 * 1.5 * -2.0);
    }

    proptest! {
        // Degree-4 polynomial p(a,b) = c0 a⁴ + c1 a²b² + c2 a b³ + c3 a b + c4 b
        // against its symbolic partials.
        #[test]
        fn exact_on_quartic_polynomials(
            c in prop::array::uniform5(-3.0f64..3.0),
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
        ) {
            let f = |v: &[Jet2<f64>]| {
                let k = |x: f64| Jet2::constant(x);
                k(c[0]) * v[0].powi(4)
                    + k(c[1]) * v[0].powi(2) * v[1].powi(2)
                    + k(c[2]) * v[0] * v[1].powi(3)
                    + k(c[3]) * v[0] * v[1]
                    + k(c[4]) * v[1]
            };
            let j = eval(f, &[a, b], Dirs::new(0, 1));
            let pa = 4.0 * c[0] * a.powi(3) + 2.0 * c[1] * a * b * b + c[2] * b.powi(3) + c[3] * b;
            let pb = 2.0 * c[1] * a * a * b + 3.0 * c[2] * a * b * b + c[3] * a + c[4];
            let pab = 4.0 * c[1] * a * b + 3.0 * c[2] * b * b + c[3];
            let tol = |x: f64| 1e-12 * (1.0 + x.abs()) * 64.0;
            prop_assert!((j.d1[0] - pa).abs() <= tol(pa));
            prop_assert!((j.d1[1] - pb).abs() <= tol(pb));
            prop_assert!((j.d12 - pab).abs() <= tol(pab));

            let jaa = eval(f, &[a, b], Dirs::new(0, 0));
            let paa = 12.0 * c[0] * a * a + 2.0 * c[1] * b * b;
            prop_assert!((jaa.d12 - paa).abs() <= tol(paa));
        }

        #[test]
        fn product_rule_on_first_partials(
            u in prop::array::uniform4(-3.0f64..3.0),
            v in prop::array::uniform4(-3.0f64..3.0),
        ) {
            let a = Jet2::new(u[0], [u[1], u[2]], u[3]);
            let b = Jet2::new(v[0], [v[1], v[2]], v[3]);
            let p = a * b;
            prop_assert_eq!(p.d1[0], u[1] * v[0] + u[0] * v[1]);
            prop_assert_eq!(p.d1[1], u[2] * v[0] + u[0] * v[2]);
        }
    }
}
