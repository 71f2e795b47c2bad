use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// Global parameter order for every vector and matrix in the crate.
pub const PARAMETER_ORDER: [&str; 3] = ["s0", "s", "q"];

/// Index into [`PARAMETER_ORDER`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    Centroid = 0,
    Separation = 1,
    Intensity = 2,
}

impl Param {
    pub const ALL: [Param; 3] = [Param::Centroid, Param::Separation, Param::Intensity];

    pub fn name(self) -> &'static str {
        PARAMETER_ORDER[self as usize]
    }
}

#[derive(Deserialize)]
struct RawParams<T> {
    s0: T,
    s: T,
    q: T,
}

/// Centroid `s0`, separation `s ≥ 0` and relative intensity `q ∈ (0, 1)`.
///
/// The source of weight `q` sits at `s0 + s/2`, the other at `s0 − s/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams<T>", bound(deserialize = "T: Real"))]
pub struct SourceParams<T> {
    s0: T,
    s: T,
    q: T,
}

impl<T: Real> TryFrom<RawParams<T>> for SourceParams<T> {
    type Error = Error;

    fn try_from(raw: RawParams<T>) -> Result<Self> {
        Self::new(raw.s0, raw.s, raw.q)
    }
}

impl<T: Real> SourceParams<T> {
    pub fn new(s0: T, s: T, q: T) -> Result<Self> {
        if !s0.is_finite() || !s.is_finite() || !q.is_finite() {
            return Err(Error::InvalidParameter("parameters must be finite".into()));
        }
        if s < T::zero() {
            return Err(Error::InvalidParameter(format!(
                "separation must be non-negative, got {}",
                to_f64(s)
            )));
        }
        if !(q > T::zero() && q < T::one()) {
            return Err(Error::InvalidParameter(format!(
                "relative intensity must lie in (0, 1), got {}",
                to_f64(q)
            )));
        }
        Ok(Self { s0, s, q })
    }

    pub fn s0(&self) -> T {
        self.s0
    }

    pub fn s(&self) -> T {
        self.s
    }

    pub fn q(&self) -> T {
        self.q
    }

    pub fn get(&self, p: Param) -> T {
        match p {
            Param::Centroid => self.s0,
            Param::Separation => self.s,
            Param::Intensity => self.q,
        }
    }

    pub fn to_array(&self) -> [T; 3] {
        [self.s0, self.s, self.q]
    }

    /// Offset of the `q`-weighted source from a measurement centered at `x0`.
    pub fn a_plus(&self, x0: T) -> T {
        self.s0 + self.s * lit(0.5) - x0
    }

    /// Offset of the `(1 − q)`-weighted source from a measurement centered at `x0`.
    pub fn a_minus(&self, x0: T) -> T {
        self.s0 - self.s * lit(0.5) - x0
    }

    /// `𝒬² = 4q(1 − q)`.
    pub fn intensity_factor(&self) -> T {
        lit::<T>(4.0) * self.q * (T::one() - self.q)
    }

    /// The same physical scene after reflection about `x0`: the labels of the
    /// two sources swap, so `q → 1 − q` and `s0 → 2x0 − s0`.
    pub fn mirrored(&self, x0: T) -> Self {
        Self {
            s0: x0 + x0 - self.s0,
            s: self.s,
            q: T::one() - self.q,
        }
    }

    pub fn with_s0(&self, s0: T) -> Result<Self> {
        Self::new(s0, self.s, self.q)
    }

    pub fn with_s(&self, s: T) -> Result<Self> {
        Self::new(self.s0, s, self.q)
    }

    pub fn with_q(&self, q: T) -> Result<Self> {
        Self::new(self.s0, self.s, q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_closed_intensity_interval() {
        assert!(SourceParams::new(0.0, 0.1, 0.0).is_err());
        assert!(SourceParams::new(0.0, 0.1, 1.0).is_err());
        assert!(SourceParams::new(0.0, -0.1, 0.5).is_err());
        assert!(SourceParams::new(f64::NAN, 0.1, 0.5).is_err());
        assert!(SourceParams::new(0.0, 0.0, 0.5).is_ok());
    }

    #[test]
    fn offsets() {
        let p = SourceParams::<f64>::new(0.2, 0.1, 0.3).unwrap();
        assert!((p.a_plus(0.0) - 0.25).abs() < 1e-15);
        assert!((p.a_minus(0.2) + 0.05).abs() < 1e-15);
        let m = p.mirrored(0.0);
        assert!((m.s0() + 0.2).abs() < 1e-15 && (m.q() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn serde_validates() {
        let ok: SourceParams<f64> = serde_json::from_str(r#"{"s0":0,"s":0.1,"q":0.3}"#).unwrap();
        assert_eq!(ok.to_array(), [0.0, 0.1, 0.3]);
        assert!(serde_json::from_str::<SourceParams<f64>>(r#"{"s0":0,"s":0.1,"q":1.5}"#).is_err());
    }
}
