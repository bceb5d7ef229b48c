//! Receive chain: constellation enumeration, property Γ, hard decisions,
//! normalization and joint decoding across antennas, and the analytic
//! error and rate bounds.
//!
//! Every complex scalar is handled as two real coordinates and every Gaussian
//! integer as two integer variables (real part first). A *provenance tuple*
//! lists the integer value of every variable, target first, in term order.

use num_complex::Complex64;
use serde::Serialize;

use crate::xchannel::ScalarField;
use crate::{Error, Result, Symbol};

pub const DEFAULT_ENUMERATION_CAP: usize = 10_000_000;
pub const DEFAULT_DISTINCT_TOL: f64 = 1e-9;
/// Above this many points [`MessageDecoder::build`] switches to the factored
/// search when the constellation allows it.
pub const DEFAULT_EXHAUSTIVE_LIMIT: usize = 250_000;

/// Inclusive integer range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SymbolRange {
    pub lo: i64,
    pub hi: i64,
}

impl SymbolRange {
    pub fn new(lo: i64, hi: i64) -> Self {
        SymbolRange { lo, hi }
    }

    pub fn symmetric(q: i64) -> Self {
        SymbolRange { lo: -q, hi: q }
    }

    pub fn width(&self) -> i64 {
        self.hi - self.lo + 1
    }

    pub fn contains(&self, s: i64) -> bool {
        (self.lo..=self.hi).contains(&s)
    }
}

/// One integer stream (or bundle) seen at the receiver.
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    /// Per-antenna coefficient.
    pub gains: Vec<Complex64>,
    pub range: SymbolRange,
}

/// Unnormalized per-antenna coefficients of every term at one receiver.
#[derive(Clone, Debug, PartialEq)]
pub struct RawGains {
    pub field: ScalarField,
    pub terms: Vec<Term>,
}

impl RawGains {
    pub fn antennas(&self) -> usize {
        self.terms.first().map_or(0, |t| t.gains.len())
    }
}

/// Gains after normalizing the target coefficient to 1 on every antenna.
#[derive(Clone, Debug, PartialEq)]
pub struct GainTable {
    pub field: ScalarField,
    pub target: Vec<Complex64>,
    pub target_range: SymbolRange,
    pub interference: Vec<Term>,
    /// Noise standard deviation multiplier per antenna (`1/|g_l|`).
    pub noise_scale: Vec<f64>,
}

impl GainTable {
    pub fn antennas(&self) -> usize {
        self.target.len()
    }

    /// Per-antenna noise variance after normalization.
    pub fn noise_variances(&self, variance: f64) -> Vec<f64> {
        self.noise_scale.iter().map(|s| variance * s * s).collect()
    }

    /// Whitening weights `1/noise_scale`; multiplying normalized antenna `l`
    /// by its weight restores the original noise level on every antenna.
    pub fn whitening_weights(&self) -> Vec<f64> {
        self.noise_scale.iter().map(|s| 1.0 / s).collect()
    }

    /// Table without the target normalization applied to antenna weights:
    /// convenient for a single antenna with unit gain.
    pub fn single(field: ScalarField, target_range: SymbolRange, interference: Vec<Term>) -> Self {
        let n = interference.first().map_or(1, |t| t.gains.len());
        GainTable {
            field,
            target: vec![Complex64::new(1.0, 0.0); n],
            target_range,
            interference,
            noise_scale: vec![1.0; n],
        }
    }
}

/// Divides each antenna row by the target's coefficient on that antenna.
pub fn normalize_for_target(raw: &RawGains, target: usize) -> Result<GainTable> {
    let t = raw.terms.get(target).ok_or_else(|| Error::invalid(format!("no term {target}")))?;
    let n = t.gains.len();
    if n == 0 || raw.terms.iter().any(|x| x.gains.len() != n) {
        return Err(Error::invalid("terms disagree on the antenna count"));
    }
    if let Some(l) = t.gains.iter().position(|g| g.norm() == 0.0 || !g.norm().is_finite()) {
        return Err(Error::invalid(format!("target coefficient is zero at antenna {l}")));
    }
    let interference = raw
        .terms
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target)
        .map(|(_, term)| Term {
            gains: term.gains.iter().zip(&t.gains).map(|(g, g0)| g / g0).collect(),
            range: term.range,
        })
        .collect();
    Ok(GainTable {
        field: raw.field,
        target: vec![Complex64::new(1.0, 0.0); n],
        target_range: t.range,
        interference,
        noise_scale: t.gains.iter().map(|g| 1.0 / g.norm()).collect(),
    })
}

/// Real-coordinate view of a weighted gain table.
#[derive(Clone, Debug)]
struct RealForm {
    dim: usize,
    cols: Vec<Vec<f64>>,
    ranges: Vec<SymbolRange>,
    n_target: usize,
    complex: bool,
}

impl RealForm {
    fn new(table: &GainTable, weights: &[f64]) -> Result<Self> {
        let n = table.antennas();
        if weights.len() != n {
            return Err(Error::invalid("one weight per antenna is required"));
        }
        for t in &table.interference {
            if t.gains.len() != n {
                return Err(Error::invalid("terms disagree on the antenna count"));
            }
        }
        let complex = table.field.is_complex();
        let dim = n * table.field.real_dims();
        let mut cols = Vec::new();
        let mut ranges = Vec::new();
        let all = std::iter::once((&table.target, table.target_range))
            .chain(table.interference.iter().map(|t| (&t.gains, t.range)));
        for (gains, range) in all {
            if range.lo > range.hi {
                return Err(Error::invalid("empty symbol range"));
            }
            if complex {
                let mut re = vec![0.0; dim];
                let mut im = vec![0.0; dim];
                for (l, g) in gains.iter().enumerate() {
                    re[2 * l] = weights[l] * g.re;
                    re[2 * l + 1] = weights[l] * g.im;
                    im[2 * l] = -weights[l] * g.im;
                    im[2 * l + 1] = weights[l] * g.re;
                }
                cols.push(re);
                cols.push(im);
                ranges.push(range);
                ranges.push(range);
            } else {
                cols.push(gains.iter().zip(weights).map(|(g, w)| w * g.re).collect());
                ranges.push(range);
            }
        }
        Ok(RealForm { dim, cols, ranges, n_target: if complex { 2 } else { 1 }, complex })
    }

    fn coords(&self, y: &[Complex64], weights: &[f64]) -> Result<Vec<f64>> {
        if y.len() != weights.len() {
            return Err(Error::invalid(format!("receive vector has {} entries, expected {}", y.len(), weights.len())));
        }
        Ok(if self.complex {
            y.iter().zip(weights).flat_map(|(z, w)| [w * z.re, w * z.im]).collect()
        } else {
            y.iter().zip(weights).map(|(z, w)| w * z.re).collect()
        })
    }

    fn symbol(&self, tuple: &[i64]) -> Symbol {
        if self.complex {
            Symbol::new(tuple[0], tuple[1])
        } else {
            Symbol::new(tuple[0], 0)
        }
    }

    fn count(&self, vars: &[usize]) -> Option<u64> {
        vars.iter().try_fold(1u64, |acc, &v| acc.checked_mul(self.ranges[v].width() as u64))
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Ties round toward the smaller integer.
fn round_half_down(x: f64) -> f64 {
    (x - 0.5).ceil()
}

/// Exhaustively enumerated noiseless receive points.
#[derive(Clone, Debug)]
pub struct ReceivedConstellation {
    form: RealForm,
    weights: Vec<f64>,
    strides: Vec<u64>,
    coords: Vec<f64>,
    codes: Vec<u64>,
    d_min: f64,
    tol: f64,
}

/// Nearest-point decision.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Decision {
    pub decoded: Symbol,
    pub distance: f64,
    pub provenance: Vec<i64>,
}

impl Decision {
    pub fn against(&self, truth: Symbol) -> DecodeOutcome {
        DecodeOutcome { decoded: self.decoded, correct: self.decoded == truth, distance: self.distance }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecodeOutcome {
    pub decoded: Symbol,
    pub correct: bool,
    pub distance: f64,
}

impl ReceivedConstellation {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Real dimension of the receive space.
    pub fn dim(&self) -> usize {
        self.form.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.form.dim..(i + 1) * self.form.dim]
    }

    /// Provenance tuple of entry `i`.
    pub fn tuple(&self, i: usize) -> Vec<i64> {
        self.decode_code(self.codes[i])
    }

    /// All transmit tuples landing on the point of entry `i` (within tolerance).
    pub fn provenance(&self, i: usize) -> Vec<Vec<i64>> {
        let p = self.point(i);
        let mut out = Vec::new();
        let x0 = p[0];
        let start = self.lower_bound(x0 - self.tol);
        for j in start..self.len() {
            let q = self.point(j);
            if q[0] > x0 + self.tol {
                break;
            }
            if dist2(p, q).sqrt() <= self.tol {
                out.push(self.tuple(j));
            }
        }
        out.sort();
        out
    }

    pub fn target_of(&self, i: usize) -> Symbol {
        self.form.symbol(&self.tuple(i))
    }

    /// Minimum distance between points with distinct targets (0 under a
    /// property Γ violation).
    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    fn decode_code(&self, code: u64) -> Vec<i64> {
        self.strides
            .iter()
            .zip(&self.form.ranges)
            .map(|(s, r)| r.lo + ((code / s) % r.width() as u64) as i64)
            .collect()
    }

    fn target_key(&self, code: u64) -> u64 {
        code / self.strides[self.form.n_target - 1]
    }

    fn lower_bound(&self, x0: f64) -> usize {
        let dim = self.form.dim;
        let (mut lo, mut hi) = (0, self.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.coords[mid * dim] < x0 {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }

    fn nearest_real(&self, y: &[f64]) -> (f64, u64) {
        let dim = self.form.dim;
        let n = self.len();
        let start = self.lower_bound(y[0]);
        let mut best = (f64::INFINITY, u64::MAX);
        let consider = |j: usize, best: &mut (f64, u64)| {
            let d = dist2(y, &self.coords[j * dim..(j + 1) * dim]);
            let code = self.codes[j];
            if d < best.0 || (d == best.0 && code < best.1) {
                *best = (d, code);
            }
        };
        let mut right = start;
        let mut left = start;
        loop {
            let mut moved = false;
            if right < n {
                let dx = self.coords[right * dim] - y[0];
                if dx * dx <= best.0 {
                    consider(right, &mut best);
                    right += 1;
                    moved = true;
                } else {
                    right = n;
                }
            }
            if left > 0 {
                let dx = y[0] - self.coords[(left - 1) * dim];
                if dx * dx <= best.0 {
                    consider(left - 1, &mut best);
                    left -= 1;
                    moved = true;
                } else {
                    left = 0;
                }
            }
            if !moved {
                break;
            }
        }
        best
    }
}

/// Enumerates every noiseless receive point of a normalized gain table.
pub fn enumerate_received(table: &GainTable, cap: usize) -> Result<ReceivedConstellation> {
    let n = table.antennas();
    enumerate_weighted(table, &vec![1.0; n], cap, DEFAULT_DISTINCT_TOL)
}

/// As [`enumerate_received`], in a receive space whose antenna `l` is scaled
/// by `weights[l]`.
pub fn enumerate_weighted(table: &GainTable, weights: &[f64], cap: usize, tol: f64) -> Result<ReceivedConstellation> {
    let form = RealForm::new(table, weights)?;
    let vars: Vec<usize> = (0..form.cols.len()).collect();
    let total = form.count(&vars).filter(|&c| c <= cap as u64).ok_or_else(|| {
        Error::Budget(format!("received constellation exceeds the {cap}-point enumeration cap"))
    })? as usize;
    let nv = vars.len();
    let dim = form.dim;
    let mut strides = vec![1u64; nv];
    for v in (0..nv.saturating_sub(1)).rev() {
        strides[v] = strides[v + 1] * form.ranges[v + 1].width() as u64;
    }

    // Odometer with prefix sums so every point equals the left-to-right sum.
    let mut digits: Vec<i64> = form.ranges.iter().map(|r| r.lo).collect();
    let mut prefix = vec![0.0; (nv + 1) * dim];
    let refresh = |prefix: &mut Vec<f64>, digits: &[i64], from: usize| {
        for v in from..nv {
            for d in 0..dim {
                prefix[(v + 1) * dim + d] = prefix[v * dim + d] + form.cols[v][d] * digits[v] as f64;
            }
        }
    };
    refresh(&mut prefix, &digits, 0);
    let mut raw = Vec::with_capacity(total * dim);
    for _ in 0..total {
        raw.extend_from_slice(&prefix[nv * dim..]);
        let mut v = nv;
        while v > 0 {
            v -= 1;
            if digits[v] < form.ranges[v].hi {
                digits[v] += 1;
                break;
            }
            digits[v] = form.ranges[v].lo;
        }
        refresh(&mut prefix, &digits, v);
    }

    let mut order: Vec<u32> = (0..total as u32).collect();
    order.sort_unstable_by(|&a, &b| raw[a as usize * dim].total_cmp(&raw[b as usize * dim]).then(a.cmp(&b)));
    let mut coords = Vec::with_capacity(total * dim);
    for &i in &order {
        coords.extend_from_slice(&raw[i as usize * dim..(i as usize + 1) * dim]);
    }
    drop(raw);
    let codes: Vec<u64> = order.into_iter().map(u64::from).collect();

    let mut rc = ReceivedConstellation { form, weights: weights.to_vec(), strides, coords, codes, d_min: 0.0, tol };
    rc.d_min = sweep_d_min(&rc);
    Ok(rc)
}

fn sweep_d_min(rc: &ReceivedConstellation) -> f64 {
    let dim = rc.form.dim;
    let n = rc.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        let p = &rc.coords[i * dim..(i + 1) * dim];
        let ti = rc.target_key(rc.codes[i]);
        for j in i + 1..n {
            let q = &rc.coords[j * dim..(j + 1) * dim];
            let dx = q[0] - p[0];
            if dx * dx > best {
                break;
            }
            if rc.target_key(rc.codes[j]) != ti {
                best = best.min(dist2(p, q));
            }
        }
    }
    best.sqrt()
}

/// True iff no receive point is claimed by two distinct target symbols.
pub fn check_property_gamma(rc: &ReceivedConstellation) -> bool {
    rc.d_min > rc.tol
}

/// Nearest point in the (weighted) Euclidean norm; exact ties go to the
/// lexicographically smallest provenance tuple.
pub fn hard_decode(y: &[Complex64], rc: &ReceivedConstellation) -> Result<Decision> {
    if rc.is_empty() {
        return Err(Error::invalid("empty constellation"));
    }
    let yr = rc.form.coords(y, &rc.weights)?;
    let (d2, code) = rc.nearest_real(&yr);
    let tuple = rc.decode_code(code);
    Ok(Decision { decoded: rc.form.symbol(&tuple), distance: d2.sqrt(), provenance: tuple })
}

/// Exact nearest-point search that enumerates only part of the variables.
///
/// Interference variables whose columns are mutually orthogonal ("inner")
/// decouple once the rest is fixed: each is the clamped rounding of its own
/// projection. Only the remaining ("outer") variables are enumerated, which
/// keeps large bundle ranges and Gaussian-integer bundles cheap.
#[derive(Clone, Debug)]
pub struct FactoredSearch {
    form: RealForm,
    weights: Vec<f64>,
    outer: Vec<usize>,
    inner: Vec<usize>,
    inner_norm2: Vec<f64>,
    outer_points: Vec<f64>,
    n_outer: usize,
    d_min: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl FactoredSearch {
    fn partition(form: &RealForm) -> (Vec<usize>, Vec<usize>) {
        let mut cand: Vec<usize> = (form.n_target..form.cols.len()).collect();
        cand.sort_by_key(|&v| std::cmp::Reverse(form.ranges[v].width()));
        let mut inner: Vec<usize> = Vec::new();
        for v in cand {
            let a = &form.cols[v];
            let na = dot(a, a).sqrt();
            if na == 0.0 {
                continue;
            }
            if inner.iter().all(|&u| {
                let b = &form.cols[u];
                dot(a, b).abs() <= 1e-12 * na * dot(b, b).sqrt()
            }) {
                inner.push(v);
            }
        }
        inner.sort_unstable();
        let outer = (0..form.cols.len()).filter(|v| !inner.contains(v)).collect();
        (outer, inner)
    }

    pub fn new(table: &GainTable, weights: &[f64], cap: usize) -> Result<Self> {
        let form = RealForm::new(table, weights)?;
        let (outer, inner) = Self::partition(&form);
        let n_outer = form
            .count(&outer)
            .filter(|&c| c <= cap as u64)
            .ok_or_else(|| Error::Budget(format!("factored search exceeds the {cap}-combination cap")))?
            as usize;
        let dim = form.dim;
        let mut outer_points = Vec::with_capacity(n_outer * dim);
        let mut digits: Vec<i64> = outer.iter().map(|&v| form.ranges[v].lo).collect();
        for _ in 0..n_outer {
            let mut p = vec![0.0; dim];
            for (k, &v) in outer.iter().enumerate() {
                for (d, pd) in p.iter_mut().enumerate() {
                    *pd += form.cols[v][d] * digits[k] as f64;
                }
            }
            outer_points.extend_from_slice(&p);
            let mut k = outer.len();
            while k > 0 {
                k -= 1;
                if digits[k] < form.ranges[outer[k]].hi {
                    digits[k] += 1;
                    break;
                }
                digits[k] = form.ranges[outer[k]].lo;
            }
        }
        let inner_norm2 = inner.iter().map(|&v| dot(&form.cols[v], &form.cols[v])).collect();
        let mut fs = FactoredSearch {
            form,
            weights: weights.to_vec(),
            outer,
            inner,
            inner_norm2,
            outer_points,
            n_outer,
            d_min: 0.0,
        };
        fs.d_min = fs.difference_d_min(cap.saturating_mul(64))?;
        Ok(fs)
    }

    pub fn inner_count(&self) -> usize {
        self.inner.len()
    }

    pub fn outer_combinations(&self) -> usize {
        self.n_outer
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    fn outer_digits(&self, mut idx: usize) -> Vec<i64> {
        let mut digits = vec![0; self.outer.len()];
        for k in (0..self.outer.len()).rev() {
            let r = self.form.ranges[self.outer[k]];
            let w = r.width() as usize;
            digits[k] = r.lo + (idx % w) as i64;
            idx /= w;
        }
        digits
    }

    /// Residual after fixing the outer part at `base` and rounding the inner
    /// variables within `ranges`; returns (squared distance, inner values).
    fn settle(&self, r: &mut [f64], ranges: impl Fn(usize) -> SymbolRange, values: &mut [i64]) -> f64 {
        for (t, &v) in self.inner.iter().enumerate() {
            let col = &self.form.cols[v];
            let proj = dot(r, col) / self.inner_norm2[t];
            let rg = ranges(v);
            let s = round_half_down(proj).clamp(rg.lo as f64, rg.hi as f64);
            values[t] = s as i64;
            for (rd, cd) in r.iter_mut().zip(col) {
                *rd -= cd * s;
            }
        }
        dot(r, r)
    }

    fn full_tuple(&self, outer_idx: usize, inner: &[i64]) -> Vec<i64> {
        let mut tuple = vec![0; self.form.cols.len()];
        for (k, d) in self.outer.iter().zip(self.outer_digits(outer_idx)) {
            tuple[*k] = d;
        }
        for (k, d) in self.inner.iter().zip(inner) {
            tuple[*k] = *d;
        }
        tuple
    }

    pub fn decode(&self, y: &[Complex64]) -> Result<Decision> {
        let yr = self.form.coords(y, &self.weights)?;
        let dim = self.form.dim;
        let mut r = vec![0.0; dim];
        let mut vals = vec![0i64; self.inner.len()];
        let mut best = (f64::INFINITY, 0usize, Vec::new());
        for idx in 0..self.n_outer {
            let o = &self.outer_points[idx * dim..(idx + 1) * dim];
            for d in 0..dim {
                r[d] = yr[d] - o[d];
            }
            let d2 = self.settle(&mut r, |v| self.form.ranges[v], &mut vals);
            if d2 < best.0 {
                best = (d2, idx, vals.clone());
            } else if d2 == best.0 && self.full_tuple(idx, &vals) < self.full_tuple(best.1, &best.2) {
                best = (d2, idx, vals.clone());
            }
        }
        let tuple = self.full_tuple(best.1, &best.2);
        Ok(Decision { decoded: self.form.symbol(&tuple), distance: best.0.sqrt(), provenance: tuple })
    }

    /// Minimum over difference vectors with a nonzero target part. Every box
    /// difference is realized by two in-range tuples, so this equals the
    /// pairwise minimum over points with distinct targets.
    fn difference_d_min(&self, cap: usize) -> Result<f64> {
        let form = &self.form;
        let dim = form.dim;
        let diff = |v: usize| {
            let w = form.ranges[v].width() - 1;
            SymbolRange::new(-w, w)
        };
        let outer_ranges: Vec<SymbolRange> = self.outer.iter().map(|&v| diff(v)).collect();
        let total = outer_ranges
            .iter()
            .try_fold(1u64, |acc, r| acc.checked_mul(r.width() as u64))
            .filter(|&c| c <= cap as u64)
            .ok_or_else(|| Error::Budget("difference enumeration exceeds its cap".into()))?;
        let n_t = form.n_target;
        let mut digits: Vec<i64> = outer_ranges.iter().map(|r| r.lo).collect();
        let mut best = f64::INFINITY;
        let mut r = vec![0.0; dim];
        let mut vals = vec![0i64; self.inner.len()];
        for _ in 0..total {
            // Target variables lead the outer list; keep one sign per ± pair.
            let lead = digits[..n_t].iter().find(|&&d| d != 0);
            if matches!(lead, Some(&d) if d > 0) {
                r.iter_mut().for_each(|x| *x = 0.0);
                for (k, &v) in self.outer.iter().enumerate() {
                    for d in 0..dim {
                        r[d] -= form.cols[v][d] * digits[k] as f64;
                    }
                }
                best = best.min(self.settle(&mut r, diff, &mut vals));
            }
            let mut k = digits.len();
            while k > 0 {
                k -= 1;
                if digits[k] < outer_ranges[k].hi {
                    digits[k] += 1;
                    break;
                }
                digits[k] = outer_ranges[k].lo;
            }
        }
        Ok(best.sqrt())
    }
}

/// Decoder for one target stream: the exhaustive constellation when it is
/// small enough, the factored search otherwise.
#[derive(Clone, Debug)]
pub enum MessageDecoder {
    Exhaustive(ReceivedConstellation),
    Factored(FactoredSearch),
}

impl MessageDecoder {
    pub fn build(table: &GainTable, weights: &[f64], cap: usize, exhaustive_limit: usize) -> Result<Self> {
        let form = RealForm::new(table, weights)?;
        let all: Vec<usize> = (0..form.cols.len()).collect();
        let total = form.count(&all).unwrap_or(u64::MAX);
        if total <= exhaustive_limit as u64 {
            return Ok(MessageDecoder::Exhaustive(enumerate_weighted(table, weights, cap, DEFAULT_DISTINCT_TOL)?));
        }
        let (outer, inner) = FactoredSearch::partition(&form);
        if !inner.is_empty() && form.count(&outer).is_some_and(|c| c <= cap as u64) {
            return Ok(MessageDecoder::Factored(FactoredSearch::new(table, weights, cap)?));
        }
        Ok(MessageDecoder::Exhaustive(enumerate_weighted(table, weights, cap, DEFAULT_DISTINCT_TOL)?))
    }

    pub fn decode(&self, y: &[Complex64]) -> Result<Decision> {
        match self {
            MessageDecoder::Exhaustive(rc) => hard_decode(y, rc),
            MessageDecoder::Factored(fs) => fs.decode(y),
        }
    }

    pub fn d_min(&self) -> f64 {
        match self {
            MessageDecoder::Exhaustive(rc) => rc.d_min(),
            MessageDecoder::Factored(fs) => fs.d_min(),
        }
    }

    pub fn property_gamma(&self) -> bool {
        self.d_min() > DEFAULT_DISTINCT_TOL
    }
}

/// A target stream prepared for repeated joint decoding: normalized,
/// whitened, and with its decoder built.
#[derive(Clone, Debug)]
pub struct PreparedTarget {
    raw_target: Vec<Complex64>,
    table: GainTable,
    decoder: MessageDecoder,
}

impl PreparedTarget {
    pub fn new(raw: &RawGains, target: usize, cap: usize, exhaustive_limit: usize) -> Result<Self> {
        let table = normalize_for_target(raw, target)?;
        let weights = table.whitening_weights();
        let decoder = MessageDecoder::build(&table, &weights, cap, exhaustive_limit)?;
        Ok(PreparedTarget { raw_target: raw.terms[target].gains.clone(), table, decoder })
    }

    pub fn table(&self) -> &GainTable {
        &self.table
    }

    pub fn decoder(&self) -> &MessageDecoder {
        &self.decoder
    }

    /// Minimum distance in whitened units, where the noise standard
    /// deviation equals the original per-antenna one.
    pub fn whitened_d_min(&self) -> f64 {
        self.decoder.d_min()
    }

    /// Decodes from raw (unnormalized) antenna samples.
    pub fn decode(&self, y: &[Complex64]) -> Result<Decision> {
        if y.len() != self.raw_target.len() {
            return Err(Error::invalid("receive vector length differs from the antenna count"));
        }
        let normalized: Vec<Complex64> = y.iter().zip(&self.raw_target).map(|(v, g)| v / g).collect();
        self.decoder.decode(&normalized)
    }
}

/// Normalizes for `target`, whitens, and hard-decodes `y` against the joint
/// constellation across all antennas in `gains`.
pub fn joint_decode_message(y: &[Complex64], gains: &RawGains, target: usize, truth: Symbol) -> Result<DecodeOutcome> {
    let p = PreparedTarget::new(gains, target, DEFAULT_ENUMERATION_CAP, DEFAULT_EXHAUSTIVE_LIMIT)?;
    if !p.decoder.property_gamma() {
        return Err(Error::Infeasible("property Γ fails for this target".into()));
    }
    Ok(p.decode(y)?.against(truth))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ErrorBound {
    /// `exp(−d²/(8σ²))`
    pub exp_form: f64,
    /// `2·Q(d/(2σ))`, the exact two-sided tail of one real dimension.
    pub q_form: f64,
}

pub fn gaussian_q(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

pub fn error_probability_bound(d_min: f64, sigma: f64) -> Result<ErrorBound> {
    if !(d_min >= 0.0) || !(sigma > 0.0) {
        return Err(Error::invalid("need d_min ≥ 0 and sigma > 0"));
    }
    let x = d_min / (2.0 * sigma);
    Ok(ErrorBound { exp_form: (-x * x / 2.0).exp(), q_form: (2.0 * gaussian_q(x)).min(1.0) })
}

/// `log₂(card) − 1 − P_e·log₂(card)`; may be negative.
pub fn rate_lower_bound(cardinality: u64, p_e: f64) -> Result<f64> {
    if cardinality < 2 || !(0.0..=1.0).contains(&p_e) {
        return Err(Error::invalid("need cardinality ≥ 2 and 0 ≤ P_e ≤ 1"));
    }
    let l = (cardinality as f64).log2();
    Ok(l - 1.0 - p_e * l)
}

/// [`rate_lower_bound`] clamped at 0.
pub fn reported_rate(cardinality: u64, p_e: f64) -> Result<f64> {
    Ok(rate_lower_bound(cardinality, p_e)?.max(0.0))
}

pub fn noise_removal_check(d_min: f64, noise_variance: f64) -> bool {
    d_min > noise_variance.sqrt()
}
