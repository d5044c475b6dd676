//! Mirror maps: the bridge between the unconstrained mirror space `z` and the
//! primal constraint set `x = ∇Φ*(z)`.
//!
//! Two maps are provided. The quadratic map `Φ(x) = ½‖x‖²` makes mirror and
//! primal space coincide. The negative-entropy map `Φ(x) = Σ xᵢ log xᵢ` has
//! conjugate `Φ*(z) = log Σ exp(zᵢ)`, so `∇Φ*` is the softmax and the primal
//! iterates live in the open probability simplex. Both can be scaled by a
//! positive constant `c` (`Φ → cΦ`), which scales the strong-convexity
//! constant to `μ = c`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MirrorError {
    #[error("non-finite mirror coordinate at index {index}: {value}")]
    NonFinite { index: usize, value: f64 },
    #[error("point outside the domain of the mirror map at index {index}: {value}")]
    OutsideDomain { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("mirror map scale must be positive and finite, got {0}")]
    InvalidScale(f64),
}

/// Which potential generates the map. Config files use the tokens
/// `"euclidean"` and `"entropy"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Euclidean,
    #[serde(alias = "negative_entropy")]
    Entropy,
}

impl std::str::FromStr for MapKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean" => Ok(MapKind::Euclidean),
            "entropy" | "negative_entropy" => Ok(MapKind::Entropy),
            other => Err(format!("unknown mirror map `{other}` (expected `euclidean` or `entropy`)")),
        }
    }
}

impl std::fmt::Display for MapKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MapKind::Euclidean => f.write_str("euclidean"),
            MapKind::Entropy => f.write_str("entropy"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorMap {
    kind: MapKind,
    dim: usize,
    scale: f64,
}

impl MirrorMap {
    pub fn euclidean(dim: usize) -> Self {
        Self { kind: MapKind::Euclidean, dim, scale: 1.0 }
    }

    pub fn entropy(dim: usize) -> Self {
        Self { kind: MapKind::Entropy, dim, scale: 1.0 }
    }

    pub fn new(kind: MapKind, dim: usize) -> Self {
        Self { kind, dim, scale: 1.0 }
    }

    /// The map generated by `c·Φ`.
    pub fn scaled(self, c: f64) -> Result<Self, MirrorError> {
        if !(c.is_finite() && c > 0.0) {
            return Err(MirrorError::InvalidScale(c));
        }
        Ok(Self { scale: self.scale * c, ..self })
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Strong-convexity constant of Φ (w.r.t. ‖·‖₂ for the quadratic map,
    /// ‖·‖₁ on the simplex for entropy).
    pub fn mu(&self) -> f64 {
        self.scale
    }

    /// Lipschitz constant of `∇Φ*`, i.e. `1/μ`.
    pub fn lipschitz_of_conjugate(&self) -> f64 {
        1.0 / self.mu()
    }

    fn check_len(&self, got: usize) -> Result<(), MirrorError> {
        if got != self.dim {
            return Err(MirrorError::Dimension { expected: self.dim, got });
        }
        Ok(())
    }

    /// `∇Φ*(z)`, rejecting non-finite input.
    pub fn grad_conjugate(&self, z: &[f64]) -> Result<Vec<f64>, MirrorError> {
        self.check_len(z.len())?;
        if let Some((index, &value)) = z.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(MirrorError::NonFinite { index, value });
        }
        let mut out = vec![0.0; z.len()];
        self.grad_conjugate_into(z, &mut out);
        Ok(out)
    }

    /// Unchecked hot-path variant of [`grad_conjugate`](Self::grad_conjugate).
    pub fn grad_conjugate_into(&self, z: &[f64], out: &mut [f64]) {
        let inv = 1.0 / self.scale;
        match self.kind {
            MapKind::Euclidean => {
                for (o, &v) in out.iter_mut().zip(z) {
                    *o = v * inv;
                }
            }
            MapKind::Entropy => softmax_into(z, inv, out),
        }
    }

    /// `Φ*(z)`.
    pub fn conjugate(&self, z: &[f64]) -> f64 {
        match self.kind {
            MapKind::Euclidean => 0.5 * z.iter().map(|v| v * v).sum::<f64>() / self.scale,
            MapKind::Entropy => self.scale * log_sum_exp(z, 1.0 / self.scale),
        }
    }

    /// `Φ(x)`; `+∞` outside the simplex for the entropy map.
    pub fn potential(&self, x: &[f64]) -> f64 {
        match self.kind {
            MapKind::Euclidean => 0.5 * self.scale * x.iter().map(|v| v * v).sum::<f64>(),
            MapKind::Entropy => {
                if x.iter().any(|&v| v < 0.0) {
                    return f64::INFINITY;
                }
                self.scale * x.iter().map(|&v| xlogx(v)).sum::<f64>()
            }
        }
    }

    /// `∇Φ(x)`. For entropy this is `c·log x`, one representative of the
    /// class `c·log x + t·1` that all map back to `x`.
    pub fn grad_potential(&self, x: &[f64]) -> Result<Vec<f64>, MirrorError> {
        self.check_len(x.len())?;
        match self.kind {
            MapKind::Euclidean => Ok(x.iter().map(|v| v * self.scale).collect()),
            MapKind::Entropy => x
                .iter()
                .enumerate()
                .map(|(index, &value)| {
                    if value > 0.0 && value.is_finite() {
                        Ok(self.scale * value.ln())
                    } else {
                        Err(MirrorError::OutsideDomain { index, value })
                    }
                })
                .collect(),
        }
    }

    /// A mirror point mapping to `x`. Zero simplex coordinates, which have
    /// no finite preimage, are sent to `c·log(f64::MIN_POSITIVE)`.
    pub fn preimage(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            MapKind::Euclidean => x.iter().map(|v| v * self.scale).collect(),
            MapKind::Entropy => x.iter().map(|v| self.scale * v.max(f64::MIN_POSITIVE).ln()).collect(),
        }
    }

    /// Gradient in `z` of `f(∇Φ*(z))` given `x = ∇Φ*(z)` and `g = ∇f(x)`:
    /// `g/c` for the quadratic map, `x∘(g − ⟨x, g⟩1)/c` for entropy.
    pub fn pullback_into(&self, x: &[f64], g: &[f64], out: &mut [f64]) {
        let inv = 1.0 / self.scale;
        match self.kind {
            MapKind::Euclidean => {
                for (o, v) in out.iter_mut().zip(g) {
                    *o = v * inv;
                }
            }
            MapKind::Entropy => {
                let inner: f64 = x.iter().zip(g).map(|(a, b)| a * b).sum();
                for ((o, xi), gi) in out.iter_mut().zip(x).zip(g) {
                    *o = xi * (gi - inner) * inv;
                }
            }
        }
    }

    /// Bregman divergence `D_Φ(x, y)`: `c·½‖x−y‖²` or `c·KL(x‖y)`.
    pub fn bregman(&self, x: &[f64], y: &[f64]) -> Result<f64, MirrorError> {
        self.check_len(x.len())?;
        self.check_len(y.len())?;
        match self.kind {
            MapKind::Euclidean => {
                let s: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                Ok(0.5 * self.scale * s)
            }
            MapKind::Entropy => {
                let mut kl = 0.0;
                for (index, (&a, &b)) in x.iter().zip(y).enumerate() {
                    if !(b > 0.0) || !b.is_finite() {
                        return Err(MirrorError::OutsideDomain { index, value: b });
                    }
                    if !(a >= 0.0) || !a.is_finite() {
                        return Err(MirrorError::OutsideDomain { index, value: a });
                    }
                    if a > 0.0 {
                        kl += a * (a / b).ln();
                    }
                }
                // On the simplex the linear terms of Σ x log x − x cancel;
                // keep them so that slightly-off-simplex inputs stay non-negative.
                let sx: f64 = x.iter().sum();
                let sy: f64 = y.iter().sum();
                Ok((self.scale * (kl - sx + sy)).max(0.0))
            }
        }
    }

    /// Supremum of the Laplacian `ΔΦ*` over mirror space: `d/c` for the
    /// quadratic map, `1/c` for entropy (`Δ log Σ eᶻ = Σ sᵢ(1−sᵢ) ≤ 1`).
    pub fn laplacian_conjugate_bound(&self) -> f64 {
        match self.kind {
            MapKind::Euclidean => self.dim as f64 / self.scale,
            MapKind::Entropy => 1.0 / self.scale,
        }
    }

    /// `ΔΦ*(z)` evaluated exactly.
    pub fn laplacian_conjugate(&self, z: &[f64]) -> f64 {
        match self.kind {
            MapKind::Euclidean => self.dim as f64 / self.scale,
            MapKind::Entropy => {
                let mut s = vec![0.0; z.len()];
                softmax_into(z, 1.0 / self.scale, &mut s);
                s.iter().map(|p| p * (1.0 - p)).sum::<f64>() / self.scale
            }
        }
    }

    /// Φ-diameter of the primal domain with the barycenter as reference
    /// point: `√(2c log d)` on the simplex; unbounded for the quadratic map.
    pub fn diameter(&self) -> Option<f64> {
        match self.kind {
            MapKind::Euclidean => None,
            MapKind::Entropy => Some((2.0 * self.scale * (self.dim as f64).ln()).sqrt()),
        }
    }
}

fn xlogx(v: f64) -> f64 {
    if v > 0.0 { v * v.ln() } else { 0.0 }
}

/// `log Σ exp(a·zᵢ)` with max-subtraction.
pub fn log_sum_exp(z: &[f64], a: f64) -> f64 {
    let m = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(a * v));
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|&v| (a * v - m).exp()).sum::<f64>().ln()
}

/// Softmax of `a·z` with max-subtraction so that large mirror coordinates
/// cannot overflow.
pub fn softmax_into(z: &[f64], a: f64, out: &mut [f64]) {
    let m = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(a * v));
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        let e = (a * v - m).exp();
        *o = e;
        total += e;
    }
    let inv = 1.0 / total;
    for o in out.iter_mut() {
        *o *= inv;
    }
}
