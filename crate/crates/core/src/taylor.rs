//! Truncated Taylor arithmetic used as the derivative oracle for moduli,
//! weights and smooth coefficient families.
//!
//! A [`Jet`] stores normalized Taylor coefficients `c[k] = f^(k)(x0) / k!`.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Number of stored coefficients; derivatives up to order 8 are available.
pub const JET_LEN: usize = 9;

/// Highest derivative order a jet can carry.
pub const MAX_ORDER: usize = JET_LEN - 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    c: [f64; JET_LEN],
    n: usize,
}

impl Jet {
    /// Constant jet of the given order.
    pub fn constant(v: f64, order: usize) -> Self {
        assert!(order <= MAX_ORDER, "jet order {order} exceeds {MAX_ORDER}");
        let mut c = [0.0; JET_LEN];
        c[0] = v;
        Jet { c, n: order + 1 }
    }

    /// The independent variable `x0 + h`.
    pub fn variable(x0: f64, order: usize) -> Self {
        let mut j = Self::constant(x0, order);
        if order >= 1 {
            j.c[1] = 1.0;
        }
        j
    }

    pub fn from_coeffs(coeffs: &[f64]) -> Self {
        assert!(!coeffs.is_empty() && coeffs.len() <= JET_LEN);
        let mut c = [0.0; JET_LEN];
        c[..coeffs.len()].copy_from_slice(coeffs);
        Jet { c, n: coeffs.len() }
    }

    pub fn order(&self) -> usize {
        self.n - 1
    }

    pub fn coeff(&self, k: usize) -> f64 {
        if k < self.n {
            self.c[k]
        } else {
            0.0
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c[..self.n]
    }

    /// k-th derivative at the expansion point.
    pub fn derivative(&self, k: usize) -> f64 {
        self.coeff(k) * factorial(k)
    }

    /// Formal derivative in the expansion variable (order drops by one).
    pub fn differentiate(&self) -> Self {
        let mut c = [0.0; JET_LEN];
        let n = self.n.saturating_sub(1).max(1);
        for k in 1..self.n {
            c[k - 1] = k as f64 * self.c[k];
        }
        Jet { c, n }
    }

    /// Derivative kept at the same length: the top coefficient becomes 0,
    /// so only the first `order - 1` coefficients of the result are exact.
    pub fn differentiate_padded(&self) -> Self {
        let mut c = [0.0; JET_LEN];
        for k in 1..self.n {
            c[k - 1] = k as f64 * self.c[k];
        }
        Jet { c, n: self.n }
    }

    fn zero_like(&self) -> Self {
        Jet {
            c: [0.0; JET_LEN],
            n: self.n,
        }
    }

    fn common(a: &Self, b: &Self) -> usize {
        a.n.min(b.n)
    }

    pub fn exp(self) -> Self {
        let mut e = self.zero_like();
        e.c[0] = self.c[0].exp();
        for k in 1..self.n {
            let mut s = 0.0;
            for i in 1..=k {
                s += i as f64 * self.c[i] * e.c[k - i];
            }
            e.c[k] = s / k as f64;
        }
        e
    }

    pub fn ln(self) -> Self {
        let a0 = self.c[0];
        let mut l = self.zero_like();
        l.c[0] = a0.ln();
        for k in 1..self.n {
            let mut s = 0.0;
            for i in 1..k {
                s += i as f64 * l.c[i] * self.c[k - i];
            }
            l.c[k] = (self.c[k] - s / k as f64) / a0;
        }
        l
    }

    pub fn powf(self, r: f64) -> Self {
        if self.n == 1 {
            return Jet::constant(self.c[0].powf(r), 0);
        }
        (self.ln() * r).exp()
    }

    pub fn sqrt(self) -> Self {
        self.powf(0.5)
    }

    /// Simultaneous sine and cosine.
    pub fn sin_cos(self) -> (Self, Self) {
        let mut s = self.zero_like();
        let mut c = self.zero_like();
        s.c[0] = self.c[0].sin();
        c.c[0] = self.c[0].cos();
        for k in 1..self.n {
            let mut ss = 0.0;
            let mut cc = 0.0;
            for i in 1..=k {
                let ia = i as f64 * self.c[i];
                ss += ia * c.c[k - i];
                cc += ia * s.c[k - i];
            }
            s.c[k] = ss / k as f64;
            c.c[k] = -cc / k as f64;
        }
        (s, c)
    }
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * i as f64)
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        let mut r = self;
        r.n = Jet::common(&self, &o);
        for k in 0..r.n {
            r.c[k] = self.c[k] + o.c[k];
        }
        r
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        let mut r = self;
        r.n = Jet::common(&self, &o);
        for k in 0..r.n {
            r.c[k] = self.c[k] - o.c[k];
        }
        r
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let n = Jet::common(&self, &o);
        let mut c = [0.0; JET_LEN];
        for k in 0..n {
            let mut s = 0.0;
            for i in 0..=k {
                s += self.c[i] * o.c[k - i];
            }
            c[k] = s;
        }
        Jet { c, n }
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, o: Jet) -> Jet {
        let n = Jet::common(&self, &o);
        let mut q = [0.0; JET_LEN];
        for k in 0..n {
            let mut s = self.c[k];
            for i in 1..=k {
                s -= o.c[i] * q[k - i];
            }
            q[k] = s / o.c[0];
        }
        Jet { c: q, n }
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        let mut r = self;
        for k in 0..r.n {
            r.c[k] = -r.c[k];
        }
        r
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, v: f64) -> Jet {
        self.c[0] += v;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(mut self, v: f64) -> Jet {
        self.c[0] -= v;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(mut self, v: f64) -> Jet {
        for k in 0..self.n {
            self.c[k] *= v;
        }
        self
    }
}

impl Div<f64> for Jet {
    type Output = Jet;
    fn div(mut self, v: f64) -> Jet {
        for k in 0..self.n {
            self.c[k] /= v;
        }
        self
    }
}

/// Scalar abstraction shared by plain `f64` evaluation and jet evaluation,
/// so each closed-form formula is written once.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// A constant carrying the same jet order as `self`.
    fn lift(&self, v: f64) -> Self;
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn powf(self, r: f64) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    fn recip(self) -> Self {
        self.lift(1.0) / self
    }
}

impl Real for f64 {
    fn lift(&self, v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn powf(self, r: f64) -> Self {
        f64::powf(self, r)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
}

impl Real for Jet {
    fn lift(&self, v: f64) -> Self {
        Jet::constant(v, self.order())
    }
    fn value(&self) -> f64 {
        self.c[0]
    }
    fn exp(self) -> Self {
        Jet::exp(self)
    }
    fn ln(self) -> Self {
        Jet::ln(self)
    }
    fn powf(self, r: f64) -> Self {
        Jet::powf(self, r)
    }
    fn sqrt(self) -> Self {
        Jet::sqrt(self)
    }
    fn sin(self) -> Self {
        self.sin_cos().0
    }
    fn cos(self) -> Self {
        self.sin_cos().1
    }
}

/// k-th derivative of `f` at `x` by central differences with Richardson
/// extrapolation; used for functions without a registered closed form.
pub fn richardson_derivative(f: &dyn Fn(f64) -> f64, k: usize, x: f64, h0: f64) -> f64 {
    if k == 0 {
        return f(x);
    }
    let stencil = |h: f64| -> f64 {
        // k-th central difference: sum_i (-1)^i C(k,i) f(x + (k/2 - i) h) / h^k
        let mut s = 0.0;
        let mut binom = 1.0;
        for i in 0..=k {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            s += sign * binom * f(x + (k as f64 / 2.0 - i as f64) * h);
            binom = binom * (k - i) as f64 / (i + 1) as f64;
        }
        s / h.powi(k as i32)
    };
    let levels = 4;
    let mut table = vec![vec![0.0; levels]; levels];
    let mut h = h0;
    for row in table.iter_mut() {
        row[0] = stencil(h);
        h /= 2.0;
    }
    for j in 1..levels {
        let fac = 4f64.powi(j as i32);
        for i in j..levels {
            table[i][j] = (fac * table[i][j - 1] - table[i - 1][j - 1]) / (fac - 1.0);
        }
    }
    table[levels - 1][levels - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn exp_ln_roundtrip() {
        let x = Jet::variable(0.7, 8);
        let y = x.exp().ln();
        for k in 0..=8 {
            assert!(close(y.coeff(k), x.coeff(k), 1e-13), "k={k}");
        }
    }

    #[test]
    fn sin_derivatives_cycle() {
        let x = Jet::variable(0.3, 8);
        let s = Real::sin(x);
        let expected = [0.3f64.sin(), 0.3f64.cos(), -0.3f64.sin(), -0.3f64.cos()];
        for k in 0..=8 {
            assert!(close(s.derivative(k), expected[k % 4], 1e-12), "k={k}");
        }
    }

    #[test]
    fn powf_matches_falling_factorial() {
        let x = Jet::variable(2.0, 6);
        let p = x.powf(2.5);
        let mut coef = 1.0;
        for k in 0..=6 {
            let want = coef * 2f64.powf(2.5 - k as f64);
            assert!(close(p.derivative(k), want, 1e-12), "k={k}");
            coef *= 2.5 - k as f64;
        }
    }

    #[test]
    fn division_inverts_multiplication() {
        let x = Jet::variable(1.3, 8);
        let a = x.exp() + 2.0;
        let b = x.sqrt() * 3.0;
        let q = (a * b) / b;
        for k in 0..=8 {
            assert!(close(q.coeff(k), a.coeff(k), 1e-12));
        }
    }

    #[test]
    fn richardson_agrees_with_jets() {
        let f = |x: f64| (x * x + 1.0).ln();
        let j = (Jet::variable(1.5, 4) * Jet::variable(1.5, 4) + 1.0).ln();
        for k in 1..=3 {
            let fd = richardson_derivative(&f, k, 1.5, 0.05);
            assert!(close(fd, j.derivative(k), 1e-7), "k={k}: {fd} vs {}", j.derivative(k));
        }
    }

    #[test]
    fn differentiate_shifts_coefficients() {
        let x = Jet::variable(0.5, 5);
        let e = x.exp();
        let d = e.differentiate();
        for k in 0..5 {
            assert!(close(d.derivative(k), 0.5f64.exp(), 1e-12));
        }
    }
}
