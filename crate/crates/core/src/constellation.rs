//! Single-layer integer constellations and rational-dimension encoding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Symbol};

/// The point set `A·{−Q, …, Q}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constellation {
    q: u32,
    a: f64,
    points: Vec<f64>,
}

impl Constellation {
    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn amplitude(&self) -> f64 {
        self.a
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn cardinality(&self) -> usize {
        self.points.len()
    }

    /// Largest per-symbol power, `A²Q²`.
    pub fn max_power(&self) -> f64 {
        let p = self.a * self.q as f64;
        p * p
    }
}

pub fn build_constellation(q: u32, a: f64) -> Result<Constellation> {
    if q == 0 {
        return Err(Error::invalid("Q must be at least 1"));
    }
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::invalid(format!("amplitude must be positive, got {a}")));
    }
    let qi = q as i64;
    let points = (-qi..=qi).map(|u| a * u as f64).collect();
    Ok(Constellation { q, a, points })
}

/// Per-antenna weights of the two messages sharing one real scalar.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingPair {
    pub a: f64,
    pub b: f64,
}

impl EncodingPair {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if a == 0.0 || b == 0.0 || !a.is_finite() || !b.is_finite() {
            return Err(Error::invalid("encoding weights must be finite and nonzero"));
        }
        Ok(EncodingPair { a, b })
    }
}

fn check_range(s: i64, q: u32) -> Result<()> {
    if s.unsigned_abs() > q as u64 {
        return Err(Error::invalid(format!("symbol {s} outside {{-{q}..{q}}}")));
    }
    Ok(())
}

/// `A·(a·u + b·v)` for `u, v ∈ {−Q..Q}`.
pub fn encode_antenna(u: i64, v: i64, pair: EncodingPair, amplitude: f64, q: u32) -> Result<f64> {
    check_range(u, q)?;
    check_range(v, q)?;
    Ok(amplitude * (pair.a * u as f64 + pair.b * v as f64))
}

/// True iff the `(2Q+1)²` values `a·u + b·v` are pairwise separated by more than `tol`.
pub fn unique_decomposition_check(pair: EncodingPair, q: u32, tol: f64) -> Result<bool> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    if q == 0 {
        return Err(Error::invalid("Q must be at least 1"));
    }
    let qi = q as i64;
    let mut values: Vec<f64> = Vec::with_capacity(((2 * qi + 1) * (2 * qi + 1)) as usize);
    for u in -qi..=qi {
        for v in -qi..=qi {
            values.push(pair.a * u as f64 + pair.b * v as f64);
        }
    }
    values.sort_by(f64::total_cmp);
    Ok(values.windows(2).all(|w| w[1] - w[0] > tol))
}

/// Amplitude law `A = scale·Q^exponent`. With `scale = 1` and an integer
/// exponent `k` this is the layered rule `A = Q^k`, under which the received
/// minimum distance `A·Q^{−k}` stays at the noise-removal threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingLaw {
    pub exponent: f64,
    pub scale: f64,
}

impl ScalingLaw {
    pub fn layers(k: u32) -> Self {
        ScalingLaw { exponent: k as f64, scale: 1.0 }
    }

    pub fn amplitude(&self, q: u32) -> f64 {
        self.scale * (q as f64).powf(self.exponent)
    }

    /// Transmit power `A²Q²·streams`, where `streams` counts real scalar
    /// streams per transmit antenna. Grows like `Q^{2(k+1)}`.
    pub fn power(&self, q: u32, streams: u32) -> f64 {
        let a = self.amplitude(q);
        let qf = q as f64;
        a * a * qf * qf * streams as f64
    }

    /// Predicted minimum distance `A·Q^{−k}`.
    pub fn predicted_min_distance(&self, q: u32) -> f64 {
        self.amplitude(q) * (q as f64).powf(-self.exponent)
    }
}

/// Uniform draw from `{−Q..Q}` (real) or its Gaussian-integer square (complex).
pub fn draw_symbol<R: Rng + ?Sized>(rng: &mut R, q: u32, complex: bool) -> Symbol {
    let qi = q as i64;
    let re = rng.random_range(-qi..=qi);
    let im = if complex { rng.random_range(-qi..=qi) } else { 0 };
    Symbol::new(re, im)
}
