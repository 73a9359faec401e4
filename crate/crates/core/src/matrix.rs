//! Closed-form algebra on symmetric 2x2 matrices.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric matrix `[[a, b], [b, c]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Matrix2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Eigenvalues (descending) and matching unit eigenvectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymEigen {
    pub values: [f64; 2],
    pub vectors: [[f64; 2]; 2],
}

impl Matrix2 {
    pub const ZERO: Matrix2 = Matrix2 {
        a: 0.0,
        b: 0.0,
        c: 0.0,
    };

    pub const IDENTITY: Matrix2 = Matrix2 {
        a: 1.0,
        b: 0.0,
        c: 1.0,
    };

    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn diag(a: f64, c: f64) -> Self {
        Self { a, b: 0.0, c }
    }

    /// `v v^T`
    pub fn outer(v: [f64; 2]) -> Self {
        Self {
            a: v[0] * v[0],
            b: v[0] * v[1],
            c: v[1] * v[1],
        }
    }

    /// Symmetrized view of a general 2x2 matrix.
    pub fn from_rows(m: [[f64; 2]; 2]) -> Self {
        Self {
            a: m[0][0],
            b: 0.5 * (m[0][1] + m[1][0]),
            c: m[1][1],
        }
    }

    pub fn to_rows(&self) -> [[f64; 2]; 2] {
        [[self.a, self.b], [self.b, self.c]]
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            a: self.a * s,
            b: self.b * s,
            c: self.c * s,
        }
    }

    pub fn trace(&self) -> f64 {
        self.a + self.c
    }

    pub fn det(&self) -> f64 {
        self.a * self.c - self.b * self.b
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite()
    }

    pub fn max_abs(&self) -> f64 {
        self.a.abs().max(self.b.abs()).max(self.c.abs())
    }

    pub fn mul_vec(&self, v: [f64; 2]) -> [f64; 2] {
        [self.a * v[0] + self.b * v[1], self.b * v[0] + self.c * v[1]]
    }

    /// `(a + c)/2 +- sqrt(((a - c)/2)^2 + b^2)`, largest first.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let mean = 0.5 * (self.a + self.c);
        let half_gap = (0.5 * (self.a - self.c)).hypot(self.b);
        [mean + half_gap, mean - half_gap]
    }

    pub fn eigen(&self) -> SymEigen {
        let values = self.eigenvalues();
        let v1 = if self.b == 0.0 {
            if self.a >= self.c {
                [1.0, 0.0]
            } else {
                [0.0, 1.0]
            }
        } else {
            let p = [values[0] - self.c, self.b];
            let q = [self.b, values[0] - self.a];
            let np = p[0].hypot(p[1]);
            let nq = q[0].hypot(q[1]);
            if np >= nq {
                [p[0] / np, p[1] / np]
            } else {
                [q[0] / nq, q[1] / nq]
            }
        };
        let v2 = [-v1[1], v1[0]];
        SymEigen {
            values,
            vectors: [v1, v2],
        }
    }

    /// Rebuild `V diag(g(lambda)) V^T` from an eigendecomposition.
    fn spectral_map(&self, g: impl Fn(f64) -> f64) -> Self {
        let e = self.eigen();
        let [v1, v2] = e.vectors;
        let [g1, g2] = [g(e.values[0]), g(e.values[1])];
        Self {
            a: g1 * v1[0] * v1[0] + g2 * v2[0] * v2[0],
            b: g1 * v1[0] * v1[1] + g2 * v2[0] * v2[1],
            c: g1 * v1[1] * v1[1] + g2 * v2[1] * v2[1],
        }
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::InvalidInput(format!(
                "matrix {self:?} is singular"
            )));
        }
        Ok(Self {
            a: self.c / det,
            b: -self.b / det,
            c: self.a / det,
        })
    }

    pub fn require_positive_definite(&self) -> Result<()> {
        let ev = self.eigenvalues();
        if !(ev[1] > 0.0) || !self.is_finite() {
            return Err(Error::NotPositiveDefinite { eigenvalues: ev });
        }
        Ok(())
    }

    pub fn require_negative_definite(&self) -> Result<()> {
        let ev = self.eigenvalues();
        if !(ev[0] < 0.0) || !self.is_finite() {
            return Err(Error::NotNegativeDefinite { eigenvalues: ev });
        }
        Ok(())
    }

    /// Symmetric square root of a positive definite matrix.
    pub fn sqrt(&self) -> Result<Self> {
        self.require_positive_definite()?;
        Ok(self.spectral_map(f64::sqrt))
    }

    /// Symmetric inverse square root of a positive definite matrix.
    pub fn inv_sqrt(&self) -> Result<Self> {
        self.require_positive_definite()?;
        Ok(self.spectral_map(|l| 1.0 / l.sqrt()))
    }

    /// Condition number `|lambda|_max / |lambda|_min`; infinite when singular.
    pub fn condition(&self) -> f64 {
        let [l1, l2] = self.eigenvalues();
        let (hi, lo) = (l1.abs().max(l2.abs()), l1.abs().min(l2.abs()));
        if lo == 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    /// `X^T self X` for symmetric `X`, symmetrized.
    pub fn congruence(&self, x: &Matrix2) -> Self {
        let prod = mul_rows(mul_rows(x.to_rows(), self.to_rows()), x.to_rows());
        Self::from_rows(prod)
    }

    /// `self other self` for symmetric operands, symmetrized.
    pub fn sandwich(&self, inner: &Matrix2) -> Self {
        inner.congruence(self)
    }
}

fn mul_rows(x: [[f64; 2]; 2], y: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [
            x[0][0] * y[0][0] + x[0][1] * y[1][0],
            x[0][0] * y[0][1] + x[0][1] * y[1][1],
        ],
        [
            x[1][0] * y[0][0] + x[1][1] * y[1][0],
            x[1][0] * y[0][1] + x[1][1] * y[1][1],
        ],
    ]
}

impl Add for Matrix2 {
    type Output = Matrix2;
    fn add(self, rhs: Matrix2) -> Matrix2 {
        Matrix2::new(self.a + rhs.a, self.b + rhs.b, self.c + rhs.c)
    }
}

impl Sub for Matrix2 {
    type Output = Matrix2;
    fn sub(self, rhs: Matrix2) -> Matrix2 {
        Matrix2::new(self.a - rhs.a, self.b - rhs.b, self.c - rhs.c)
    }
}

impl Neg for Matrix2 {
    type Output = Matrix2;
    fn neg(self) -> Matrix2 {
        Matrix2::new(-self.a, -self.b, -self.c)
    }
}

impl Mul<f64> for Matrix2 {
    type Output = Matrix2;
    fn mul(self, s: f64) -> Matrix2 {
        self.scale(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spd() -> impl Strategy<Value = Matrix2> {
        (0.1f64..10.0, -1.0f64..1.0, 0.1f64..10.0).prop_map(|(a, rho, c)| {
            Matrix2::new(a, 0.95 * rho * (a * c).sqrt(), c)
        })
    }

    #[test]
    fn eigen_of_diagonal() {
        let m = Matrix2::diag(2.0, 5.0);
        let e = m.eigen();
        assert_eq!(e.values, [5.0, 2.0]);
        assert_eq!(e.vectors[0], [0.0, 1.0]);
    }

    #[test]
    fn inverse_of_singular_fails() {
        assert!(Matrix2::new(1.0, 1.0, 1.0).inverse().is_err());
    }

    #[test]
    fn definiteness_checks() {
        assert!(Matrix2::new(-2.0, 0.5, -1.0).require_negative_definite().is_ok());
        assert!(Matrix2::new(-2.0, 2.0, -1.0).require_negative_definite().is_err());
        assert!(Matrix2::ZERO.require_positive_definite().is_err());
    }

    proptest! {
        #[test]
        fn eigenpairs_satisfy_definition(m in spd()) {
            let e = m.eigen();
            for i in 0..2 {
                let v = e.vectors[i];
                let mv = m.mul_vec(v);
                let scale = m.max_abs();
                prop_assert!((mv[0] - e.values[i] * v[0]).abs() < 1e-12 * scale);
                prop_assert!((mv[1] - e.values[i] * v[1]).abs() < 1e-12 * scale);
            }
            prop_assert!(e.values[0] >= e.values[1]);
        }

        #[test]
        fn inv_sqrt_whitens(m in spd()) {
            let w = m.inv_sqrt().unwrap();
            let i = m.congruence(&w);
            prop_assert!((i.a - 1.0).abs() < 1e-10);
            prop_assert!(i.b.abs() < 1e-10);
            prop_assert!((i.c - 1.0).abs() < 1e-10);
            let s = m.sqrt().unwrap();
            let back = Matrix2::IDENTITY.congruence(&s);
            prop_assert!((back - m).max_abs() < 1e-10 * m.max_abs());
        }

        #[test]
        fn inverse_roundtrip(m in spd()) {
            let inv = m.inverse().unwrap();
            let prod = mul_rows(m.to_rows(), inv.to_rows());
            prop_assert!((prod[0][0] - 1.0).abs() < 1e-10);
            prop_assert!(prod[0][1].abs() < 1e-10);
            prop_assert!((prod[1][1] - 1.0).abs() < 1e-10);
        }
    }
}
