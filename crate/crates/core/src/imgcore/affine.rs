use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SINGULAR_EPS: f64 = 1e-12;

/// Six-parameter affine map `x' = a1·x + a2·y + a3`, `y' = a4·x + a5·y + a6`.
///
/// Serializes as `{"affine": [a1, a2, a3, a4, a5, a6]}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub affine: [f64; 6],
}

impl AffineParams {
    pub const IDENTITY: Self = Self {
        affine: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    };

    pub fn new(a: [f64; 6]) -> Self {
        Self { affine: a }
    }

    pub fn identity() -> Self {
        Self::IDENTITY
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::new([1.0, 0.0, tx, 0.0, 1.0, ty])
    }

    #[inline]
    pub fn params(&self) -> [f64; 6] {
        self.affine
    }

    #[inline]
    pub fn det(&self) -> f64 {
        let a = &self.affine;
        a[0] * a[4] - a[1] * a[3]
    }

    pub fn is_finite(&self) -> bool {
        self.affine.iter().all(|v| v.is_finite())
    }

    /// Fails on non-finite entries or a (numerically) zero determinant.
    pub fn validate(&self) -> Result<()> {
        let det = self.det();
        if !self.is_finite() || !det.is_finite() || det.abs() < SINGULAR_EPS {
            return Err(Error::SingularTransform(det));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let a = &self.affine;
        (a[0] * x + a[1] * y + a[2], a[3] * x + a[4] * y + a[5])
    }

    pub fn inverse(&self) -> Result<Self> {
        self.validate()?;
        let [a1, a2, a3, a4, a5, a6] = self.affine;
        let det = self.det();
        let i1 = a5 / det;
        let i2 = -a2 / det;
        let i4 = -a4 / det;
        let i5 = a1 / det;
        Ok(Self::new([
            i1,
            i2,
            -(i1 * a3 + i2 * a6),
            i4,
            i5,
            -(i4 * a3 + i5 * a6),
        ]))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let [a1, a2, a3, a4, a5, a6] = self.affine;
        let [b1, b2, b3, b4, b5, b6] = other.affine;
        Self::new([
            a1 * b1 + a2 * b4,
            a1 * b2 + a2 * b5,
            a1 * b3 + a2 * b6 + a3,
            a4 * b1 + a5 * b4,
            a4 * b2 + a5 * b5,
            a4 * b3 + a5 * b6 + a6,
        ])
    }

    /// Re-expresses the map for an image rescaled by `factor` (coordinates
    /// multiplied by `factor`): the linear part is unchanged and the
    /// translation scales.
    pub fn rescaled(&self, factor: f64) -> Self {
        let mut a = self.affine;
        a[2] *= factor;
        a[5] *= factor;
        Self::new(a)
    }
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl From<[f64; 6]> for AffineParams {
    fn from(a: [f64; 6]) -> Self {
        Self::new(a)
    }
}
