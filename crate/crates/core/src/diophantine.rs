//! Exhaustive oracles and series calculators for simultaneous approximation
//! of linear forms: classical (`‖q·X_i‖` per form) and hybrid (one common
//! `p` for every form), over the integers and the Gaussian integers.
//!
//! A point `X` is an `m×n` matrix; form `i` is `L_i(q) = Σ_k q_k X[k][i]`.
//! Norms are the sup norm `max|q_k|`, with complex moduli in complex mode.

use std::cmp::Ordering;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::least_squares_slope;
use crate::xchannel::ScalarField;
use crate::{seed, Error, Result, Symbol};

pub const DEFAULT_FORM_BUDGET: u64 = 100_000_000;
/// Quantile used when calibrating the complex Dirichlet constant.
pub const DIRICHLET_QUANTILE: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormMode {
    Classical,
    Hybrid,
}

impl FormMode {
    pub fn tag(self) -> &'static str {
        match self {
            FormMode::Classical => "classical",
            FormMode::Hybrid => "hybrid",
        }
    }

    /// Exponent `κ` of the Dirichlet-type bound `c·N^{−κ}`.
    pub fn dirichlet_exponent(self, m: usize, n: usize) -> f64 {
        match self {
            FormMode::Classical => m as f64 / n as f64,
            FormMode::Hybrid => (m as f64 + 1.0) / n as f64 - 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesVariant {
    Classical,
    Hybrid,
    ComplexClassical,
    ComplexHybrid,
}

impl SeriesVariant {
    pub fn new(mode: FormMode, field: ScalarField) -> Self {
        match (mode, field) {
            (FormMode::Classical, ScalarField::Real) => SeriesVariant::Classical,
            (FormMode::Hybrid, ScalarField::Real) => SeriesVariant::Hybrid,
            (FormMode::Classical, ScalarField::Complex) => SeriesVariant::ComplexClassical,
            (FormMode::Hybrid, ScalarField::Complex) => SeriesVariant::ComplexHybrid,
        }
    }

    fn is_hybrid(self) -> bool {
        matches!(self, SeriesVariant::Hybrid | SeriesVariant::ComplexHybrid)
    }

    /// Summand is `r^base · ψ(r)^power`.
    fn shape(self, m: usize, n: usize) -> (f64, f64) {
        let (m, n) = (m as f64, n as f64);
        match self {
            SeriesVariant::Classical => (m - 1.0, n),
            SeriesVariant::Hybrid => (m - n, n),
            SeriesVariant::ComplexClassical => (2.0 * m - 1.0, 2.0 * n),
            SeriesVariant::ComplexHybrid => (2.0 * (m - n), 2.0 * n),
        }
    }
}

/// Approximating function `ψ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ApproxFunction {
    /// `r^(exponent − epsilon)`
    Power { exponent: f64, epsilon: f64 },
    /// `r^exponent · (ln r)^log_exponent`, evaluated at `max(r, 2)`.
    LogPower { exponent: f64, log_exponent: f64 },
    Constant { value: f64 },
    /// `values[r − 1]`, held at the last entry beyond the table.
    Tabulated { values: Vec<f64> },
}

impl ApproxFunction {
    pub fn power(exponent: f64, epsilon: f64) -> Self {
        ApproxFunction::Power { exponent, epsilon }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ApproxFunction::Power { exponent, epsilon } if !(exponent - epsilon).is_finite() => {
                Err(Error::invalid("power exponent must be finite"))
            }
            ApproxFunction::LogPower { exponent, log_exponent } if !(exponent.is_finite() && log_exponent.is_finite()) => {
                Err(Error::invalid("log-power exponents must be finite"))
            }
            ApproxFunction::Constant { value } if !(*value > 0.0 && value.is_finite()) => {
                Err(Error::invalid("constant ψ must be positive"))
            }
            ApproxFunction::Tabulated { values } => {
                if values.is_empty() || values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(Error::invalid("tabulated ψ needs positive finite values"));
                }
                if values.windows(2).any(|w| w[1] > w[0]) {
                    return Err(Error::invalid("tabulated ψ must be non-increasing"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        match self {
            ApproxFunction::Power { exponent, epsilon } => r.powf(exponent - epsilon),
            ApproxFunction::LogPower { exponent, log_exponent } => {
                let r = r.max(2.0);
                r.powf(*exponent) * r.ln().powf(*log_exponent)
            }
            ApproxFunction::Constant { value } => *value,
            ApproxFunction::Tabulated { values } => {
                let i = (r.floor().max(1.0) as usize - 1).min(values.len() - 1);
                values[i]
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Convergent,
    Divergent,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeriesReport {
    pub variant: SeriesVariant,
    pub partial_sums: Vec<f64>,
    /// Power of `r` in the summand (tail fit for tabulated ψ).
    pub effective_exponent: f64,
    pub verdict: Verdict,
}

fn check_hybrid_dims(m: usize, n: usize) -> Result<()> {
    if m + 1 <= n {
        return Err(Error::invalid(format!("hybrid approximation needs m+1 > n, got m={m}, n={n}")));
    }
    Ok(())
}

fn check_dims(m: usize, n: usize) -> Result<()> {
    if m == 0 || n == 0 {
        return Err(Error::invalid("m and n must be positive"));
    }
    Ok(())
}

/// Partial sums of the Khintchine–Groshev series for `variant`, with a
/// convergence verdict exact for the power and log-power families.
pub fn kg_series(psi: &ApproxFunction, m: usize, n: usize, r_max: usize, variant: SeriesVariant) -> Result<SeriesReport> {
    check_dims(m, n)?;
    if variant.is_hybrid() {
        check_hybrid_dims(m, n)?;
    }
    if r_max < 1 {
        return Err(Error::invalid("R_max must be at least 1"));
    }
    psi.validate()?;
    let (base, power) = variant.shape(m, n);
    let term = |r: f64| r.powf(base) * psi.eval(r).powf(power);
    let mut acc = 0.0;
    let partial_sums: Vec<f64> = (1..=r_max)
        .map(|r| {
            acc += term(r as f64);
            acc
        })
        .collect();

    let (effective_exponent, convergent) = match psi {
        ApproxFunction::Power { exponent, epsilon } => {
            let e = base + power * (exponent - epsilon);
            (e, e < -1.0)
        }
        ApproxFunction::LogPower { exponent, log_exponent } => {
            let e = base + power * exponent;
            let l = power * log_exponent;
            (e, e < -1.0 - 1e-12 || ((e + 1.0).abs() <= 1e-12 && l < -1.0))
        }
        ApproxFunction::Constant { .. } => (base, base < -1.0),
        ApproxFunction::Tabulated { .. } => {
            let lo = (r_max / 2).max(1);
            let (xs, ys): (Vec<f64>, Vec<f64>) =
                (lo..=r_max).map(|r| ((r as f64).ln(), term(r as f64).ln())).unzip();
            let e = least_squares_slope(&xs, &ys).unwrap_or(base);
            (e, e < -1.0)
        }
    };
    Ok(SeriesReport {
        variant,
        partial_sums,
        effective_exponent,
        verdict: if convergent { Verdict::Convergent } else { Verdict::Divergent },
    })
}

/// `m×n` matrix of linear-form coefficients, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFormsPoint {
    pub m: usize,
    pub n: usize,
    pub field: ScalarField,
    pub entries: Vec<Complex64>,
}

impl LinearFormsPoint {
    pub fn new(m: usize, n: usize, field: ScalarField, entries: Vec<Complex64>) -> Result<Self> {
        check_dims(m, n)?;
        if entries.len() != m * n {
            return Err(Error::invalid(format!("{m}x{n} point needs {} entries, got {}", m * n, entries.len())));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("entries must be finite"));
        }
        if field == ScalarField::Real && entries.iter().any(|z| z.im != 0.0) {
            return Err(Error::invalid("real point with a non-zero imaginary part"));
        }
        Ok(LinearFormsPoint { m, n, field, entries })
    }

    pub fn real(m: usize, n: usize, entries: &[f64]) -> Result<Self> {
        Self::new(m, n, ScalarField::Real, entries.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    pub fn zeros(m: usize, n: usize, field: ScalarField) -> Self {
        LinearFormsPoint { m, n, field, entries: vec![Complex64::new(0.0, 0.0); m * n] }
    }

    pub fn get(&self, k: usize, i: usize) -> Complex64 {
        self.entries[k * self.n + i]
    }

    /// Translate by integers into `[−½, ½]` (real) or `[0, 1)²` (complex).
    /// Approximation properties are invariant under such shifts.
    pub fn reduced(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|z| match self.field {
                ScalarField::Real => Complex64::new(z.re - z.re.round(), 0.0),
                ScalarField::Complex => Complex64::new(z.re - z.re.floor(), z.im - z.im.floor()),
            })
            .collect();
        LinearFormsPoint { entries, ..self.clone() }
    }

    pub fn in_domain(&self) -> bool {
        self.entries.iter().all(|z| match self.field {
            ScalarField::Real => (-0.5..=0.5).contains(&z.re),
            ScalarField::Complex => (0.0..1.0).contains(&z.re) && (0.0..1.0).contains(&z.im),
        })
    }

    /// Uniform sample from the fundamental domain.
    pub fn sample<R: Rng>(rng: &mut R, m: usize, n: usize, field: ScalarField) -> Self {
        let entries = (0..m * n)
            .map(|_| match field {
                ScalarField::Real => Complex64::new(rng.random_range(-0.5..0.5), 0.0),
                ScalarField::Complex => Complex64::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)),
            })
            .collect();
        LinearFormsPoint { m, n, field, entries }
    }

    fn forms_real(&self, q: &[i64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for (k, &qk) in q.iter().enumerate() {
                s += qk as f64 * self.entries[k * self.n + i].re;
            }
            *o = s;
        }
    }

    fn forms_complex(&self, q: &[Symbol], out: &mut [Complex64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = Complex64::new(0.0, 0.0);
            for (k, qk) in q.iter().enumerate() {
                s += Complex64::new(qk.re as f64, qk.im as f64) * self.entries[k * self.n + i];
            }
            *o = s;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApproxWitness {
    pub q: Vec<Symbol>,
    /// One integer per form; all equal in hybrid mode.
    pub p: Vec<Symbol>,
    pub error: f64,
    pub norm: f64,
}

/// Ties round toward the smaller integer.
fn round_half_down(x: f64) -> f64 {
    (x - 0.5).ceil()
}

fn symbol_cmp(a: &[Symbol], b: &[Symbol]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match (x.re, x.im).cmp(&(y.re, y.im)) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Total order on witnesses: error, then norm, then `q` lexicographically.
pub fn witness_cmp(a: &ApproxWitness, b: &ApproxWitness) -> Ordering {
    a.error
        .total_cmp(&b.error)
        .then(a.norm.total_cmp(&b.norm))
        .then_with(|| symbol_cmp(&a.q, &b.q))
}

fn sup_norm(q: &[Symbol]) -> f64 {
    q.iter().map(|z| ((z.re * z.re + z.im * z.im) as f64).sqrt()).fold(0.0, f64::max)
}

/// `q` and `u·q` for a unit `u` have the same error; only the representative
/// whose first non-zero entry is positive (real) or in the first quadrant
/// `re > 0, im ≥ 0` (complex) is searched.
fn is_canonical(q: &[Symbol]) -> bool {
    match q.iter().find(|z| z.re != 0 || z.im != 0) {
        Some(z) => z.re > 0 && z.im >= 0,
        None => false,
    }
}

fn budget_check(x: &LinearFormsPoint, big_n: usize, budget: u64) -> Result<()> {
    let side = 2 * big_n as u64 + 1;
    let dims = x.m * x.field.real_dims();
    let total = (0..dims).try_fold(1u64, |acc, _| acc.checked_mul(side));
    match total {
        Some(t) if t <= budget => Ok(()),
        _ => Err(Error::Budget(format!(
            "search over (2N+1)^{dims} with N={big_n} exceeds the budget of {budget}"
        ))),
    }
}

/// Calls `f` for every canonical `q` with `0 < |q| ≤ big_n` in lexicographic
/// order. Stops early when `f` returns `false`.
fn for_each_canonical(m: usize, field: ScalarField, big_n: usize, mut f: impl FnMut(&[Symbol]) -> bool) {
    let n = big_n as i64;
    let complex = field.is_complex();
    let dims = if complex { 2 * m } else { m };
    let mut digits = vec![-n; dims];
    let mut q = vec![Symbol::new(0, 0); m];
    loop {
        let mut inside = true;
        for k in 0..m {
            q[k] = if complex { Symbol::new(digits[2 * k], digits[2 * k + 1]) } else { Symbol::new(digits[k], 0) };
            if complex && q[k].re * q[k].re + q[k].im * q[k].im > n * n {
                inside = false;
            }
        }
        if inside && is_canonical(&q) && !f(&q) {
            return;
        }
        let mut d = dims;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            if digits[d] < n {
                digits[d] += 1;
                break;
            }
            digits[d] = -n;
        }
    }
}

/// Best `p` for fixed forms. Writes the common or per-form integers and
/// returns the sup error.
struct Fitter<'a> {
    x: &'a LinearFormsPoint,
    mode: FormMode,
    re: Vec<f64>,
    cx: Vec<Complex64>,
}

impl<'a> Fitter<'a> {
    fn new(x: &'a LinearFormsPoint, mode: FormMode) -> Self {
        Fitter { x, mode, re: vec![0.0; x.n], cx: vec![Complex64::new(0.0, 0.0); x.n] }
    }

    /// Lower bound on the error of `q`, cheap to evaluate.
    fn lower_bound(&mut self, q: &[Symbol]) -> f64 {
        match (self.x.field, self.mode) {
            (_, FormMode::Classical) => 0.0,
            (ScalarField::Real, FormMode::Hybrid) => {
                let qr: Vec<i64> = q.iter().map(|z| z.re).collect();
                self.x.forms_real(&qr, &mut self.re);
                let (lo, hi) = min_max(&self.re);
                (hi - lo) / 2.0
            }
            (ScalarField::Complex, FormMode::Hybrid) => {
                self.x.forms_complex(q, &mut self.cx);
                enclosing_circle(&self.cx).1
            }
        }
    }

    fn fit(&mut self, q: &[Symbol], p: &mut Vec<Symbol>) -> f64 {
        p.clear();
        match self.x.field {
            ScalarField::Real => {
                let qr: Vec<i64> = q.iter().map(|z| z.re).collect();
                self.x.forms_real(&qr, &mut self.re);
                match self.mode {
                    FormMode::Classical => {
                        let mut err: f64 = 0.0;
                        for &l in &self.re {
                            let pi = round_half_down(l);
                            err = err.max((l - pi).abs());
                            p.push(Symbol::new(pi as i64, 0));
                        }
                        err
                    }
                    FormMode::Hybrid => {
                        let (lo, hi) = min_max(&self.re);
                        let centre = round_half_down((lo + hi) / 2.0);
                        let mut best = (f64::INFINITY, 0.0);
                        for cand in [centre - 1.0, centre, centre + 1.0] {
                            let e = self.re.iter().map(|l| (l - cand).abs()).fold(0.0, f64::max);
                            if e < best.0 {
                                best = (e, cand);
                            }
                        }
                        p.resize(self.x.n, Symbol::new(best.1 as i64, 0));
                        best.0
                    }
                }
            }
            ScalarField::Complex => {
                self.x.forms_complex(q, &mut self.cx);
                match self.mode {
                    FormMode::Classical => {
                        let mut err: f64 = 0.0;
                        for l in &self.cx {
                            let pi = Complex64::new(round_half_down(l.re), round_half_down(l.im));
                            err = err.max((l - pi).norm());
                            p.push(Symbol::new(pi.re as i64, pi.im as i64));
                        }
                        err
                    }
                    FormMode::Hybrid => {
                        let (c, r) = enclosing_circle(&self.cx);
                        let sup = |cand: Complex64, ls: &[Complex64]| ls.iter().map(|l| (l - cand).norm()).fold(0.0, f64::max);
                        let p0 = Complex64::new(round_half_down(c.re), round_half_down(c.im));
                        let e0 = sup(p0, &self.cx);
                        // Every p satisfies sup² ≥ r² + |p − c|², so only this disc can beat p0.
                        let reach = (e0 * e0 - r * r).max(0.0).sqrt() + 1e-9;
                        let mut best = (f64::INFINITY, p0);
                        let mut a = (c.re - reach).floor();
                        while a <= c.re + reach {
                            let mut b = (c.im - reach).floor();
                            while b <= c.im + reach {
                                let cand = Complex64::new(a, b);
                                if (cand - c).norm() <= reach {
                                    let e = sup(cand, &self.cx);
                                    if e < best.0 {
                                        best = (e, cand);
                                    }
                                }
                                b += 1.0;
                            }
                            a += 1.0;
                        }
                        p.resize(self.x.n, Symbol::new(best.1.re as i64, best.1.im as i64));
                        best.0
                    }
                }
            }
        }
    }
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Smallest disc containing every point: (centre, radius). Brute force over
/// the pair and triple circles, fine for a handful of forms.
fn enclosing_circle(pts: &[Complex64]) -> (Complex64, f64) {
    match pts.len() {
        0 => return (Complex64::new(0.0, 0.0), 0.0),
        1 => return (pts[0], 0.0),
        _ => {}
    }
    let covers = |c: Complex64, r: f64| pts.iter().all(|p| (p - c).norm() <= r * (1.0 + 1e-12) + 1e-15);
    let mut best: Option<(Complex64, f64)> = None;
    let mut offer = |c: Complex64, r: f64| {
        if best.is_none_or(|(_, br)| r < br) && covers(c, r) {
            best = Some((c, r));
        }
    };
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let c = (pts[i] + pts[j]) / 2.0;
            offer(c, (pts[i] - c).norm());
            for k in j + 1..pts.len() {
                if let Some(c) = circumcentre(pts[i], pts[j], pts[k]) {
                    offer(c, (pts[i] - c).norm());
                }
            }
        }
    }
    best.unwrap_or_else(|| {
        let c = pts.iter().sum::<Complex64>() / pts.len() as f64;
        (c, pts.iter().map(|p| (p - c).norm()).fold(0.0, f64::max))
    })
}

fn circumcentre(a: Complex64, b: Complex64, c: Complex64) -> Option<Complex64> {
    let (b, c) = (b - a, c - a);
    let d = 2.0 * (b.re * c.im - b.im * c.re);
    if d.abs() < 1e-300 {
        return None;
    }
    let (nb, nc) = (b.norm_sqr(), c.norm_sqr());
    Some(a + Complex64::new((c.im * nb - b.im * nc) / d, (b.re * nc - c.re * nb) / d))
}

/// Minimum approximation error over `0 < |q| ≤ big_n`, with the optimal `p`
/// for each `q`. Ties are broken by [`witness_cmp`] over canonical `q`.
pub fn min_form_distance(x: &LinearFormsPoint, big_n: usize, mode: FormMode, budget: u64) -> Result<ApproxWitness> {
    check_dims(x.m, x.n)?;
    if mode == FormMode::Hybrid {
        check_hybrid_dims(x.m, x.n)?;
    }
    if big_n < 1 {
        return Err(Error::invalid("N must be at least 1"));
    }
    budget_check(x, big_n, budget)?;
    let mut fitter = Fitter::new(x, mode);
    let mut best: Option<ApproxWitness> = None;
    let mut p = Vec::with_capacity(x.n);
    for_each_canonical(x.m, x.field, big_n, |q| {
        if let Some(b) = &best {
            if fitter.lower_bound(q) > b.error {
                return true;
            }
        }
        let error = fitter.fit(q, &mut p);
        let cand = ApproxWitness { q: q.to_vec(), p: p.clone(), error, norm: sup_norm(q) };
        if best.as_ref().is_none_or(|b| witness_cmp(&cand, b) == Ordering::Less) {
            best = Some(cand);
        }
        true
    });
    best.ok_or_else(|| Error::invalid("empty search range"))
}

/// Independent exhaustive search used to cross-check [`min_form_distance`]:
/// every non-zero `q` in reverse little-endian order, `p` found by scanning
/// the whole candidate window, no shared helpers.
pub fn reference_min_form_distance(x: &LinearFormsPoint, big_n: usize, mode: FormMode, budget: u64) -> Result<ApproxWitness> {
    check_dims(x.m, x.n)?;
    if mode == FormMode::Hybrid {
        check_hybrid_dims(x.m, x.n)?;
    }
    if big_n < 1 {
        return Err(Error::invalid("N must be at least 1"));
    }
    budget_check(x, big_n, budget)?;
    let complex = x.field.is_complex();
    let (m, n) = (x.m, x.n);
    let big = big_n as i64;
    let dims = if complex { 2 * m } else { m };
    let mut digits = vec![big; dims];
    // (error, norm, non-canonical, q, p)
    let mut best: Option<(f64, f64, bool, Vec<(i64, i64)>, Vec<(i64, i64)>)> = None;
    let total = (2 * big + 1).pow(dims as u32);
    for _ in 0..total {
        let q: Vec<(i64, i64)> =
            (0..m).map(|k| if complex { (digits[2 * k], digits[2 * k + 1]) } else { (digits[k], 0) }).collect();
        // little-endian decrement
        for d in digits.iter_mut() {
            if *d > -big {
                *d -= 1;
                break;
            }
            *d = big;
        }
        if q.iter().all(|&(a, b)| a == 0 && b == 0) {
            continue;
        }
        let norm2 = q.iter().map(|&(a, b)| a * a + b * b).max().unwrap();
        if complex && norm2 > big * big {
            continue;
        }
        let norm = (norm2 as f64).sqrt();
        let lead = q.iter().find(|&&(a, b)| a != 0 || b != 0).unwrap();
        let non_canonical = !(lead.0 > 0 && lead.1 >= 0);

        let forms: Vec<Complex64> = (0..n)
            .map(|i| {
                let mut s = Complex64::new(0.0, 0.0);
                for (k, &(a, b)) in q.iter().enumerate() {
                    s += Complex64::new(a as f64, b as f64) * x.entries[k * n + i];
                }
                s
            })
            .collect();
        let dist = |l: Complex64, p: (i64, i64)| -> f64 {
            if complex {
                (l - Complex64::new(p.0 as f64, p.1 as f64)).norm()
            } else {
                (l.re - p.0 as f64).abs()
            }
        };
        let window = |lo: Complex64, hi: Complex64| -> Vec<(i64, i64)> {
            let (a0, a1) = (lo.re.floor() as i64 - 1, hi.re.ceil() as i64 + 1);
            let (b0, b1) = if complex { (lo.im.floor() as i64 - 1, hi.im.ceil() as i64 + 1) } else { (0, 0) };
            let mut out = Vec::new();
            for a in a0..=a1 {
                for b in b0..=b1 {
                    out.push((a, b));
                }
            }
            out
        };

        let (error, p) = match mode {
            FormMode::Classical => {
                let mut err: f64 = 0.0;
                let mut ps = Vec::with_capacity(n);
                for &l in &forms {
                    let mut bp = (f64::INFINITY, (0, 0));
                    for cand in window(l, l) {
                        let e = dist(l, cand);
                        if e < bp.0 {
                            bp = (e, cand);
                        }
                    }
                    err = err.max(bp.0);
                    ps.push(bp.1);
                }
                (err, ps)
            }
            FormMode::Hybrid => {
                let lo = Complex64::new(
                    forms.iter().map(|z| z.re).fold(f64::INFINITY, f64::min),
                    forms.iter().map(|z| z.im).fold(f64::INFINITY, f64::min),
                );
                let hi = Complex64::new(
                    forms.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max),
                    forms.iter().map(|z| z.im).fold(f64::NEG_INFINITY, f64::max),
                );
                // no p can do better than half the spread along either axis
                let floor = ((hi.re - lo.re) / 2.0).max((hi.im - lo.im) / 2.0);
                if let Some(b) = &best {
                    if floor > b.0 {
                        continue;
                    }
                }
                let mut bp = (f64::INFINITY, (0, 0));
                for cand in window(lo, hi) {
                    let e = forms.iter().map(|&l| dist(l, cand)).fold(0.0, f64::max);
                    if e < bp.0 {
                        bp = (e, cand);
                    }
                }
                (bp.0, vec![bp.1; n])
            }
        };
        let better = match &best {
            None => true,
            Some(b) => {
                (error, norm, non_canonical, &q, &p).partial_cmp(&(b.0, b.1, b.2, &b.3, &b.4)) == Some(Ordering::Less)
            }
        };
        if better {
            best = Some((error, norm, non_canonical, q, p));
        }
    }
    let (error, norm, _, q, p) = best.ok_or_else(|| Error::invalid("empty search range"))?;
    Ok(ApproxWitness {
        q: q.into_iter().map(|(a, b)| Symbol::new(a, b)).collect(),
        p: p.into_iter().map(|(a, b)| Symbol::new(a, b)).collect(),
        error,
        norm,
    })
}

/// `(m+2)·2·N^{−(m+1)/n+1}`
pub fn dirichlet_hybrid_bound(m: usize, n: usize, big_n: usize) -> f64 {
    (m as f64 + 2.0) * 2.0 * (big_n as f64).powf(-FormMode::Hybrid.dirichlet_exponent(m, n))
}

/// Whether the best hybrid approximation with `|q| ≤ N` beats the Dirichlet
/// bound.
pub fn dirichlet_hybrid_check(x: &LinearFormsPoint, big_n: usize) -> Result<(bool, ApproxWitness)> {
    if x.field.is_complex() {
        return Err(Error::invalid("the hybrid Dirichlet bound is stated for real points"));
    }
    check_hybrid_dims(x.m, x.n)?;
    let w = min_form_distance(x, big_n, FormMode::Hybrid, DEFAULT_FORM_BUDGET)?;
    Ok((w.error < dirichlet_hybrid_bound(x.m, x.n, big_n), w))
}

/// Nearest-rank quantile of `error·N^κ` over `samples` uniform complex points.
pub fn calibrate_complex_dirichlet(m: usize, n: usize, mode: FormMode, big_n: usize, samples: usize, seed: u64) -> Result<f64> {
    if samples == 0 {
        return Err(Error::invalid("calibration needs at least one sample"));
    }
    let kappa = mode.dirichlet_exponent(m, n);
    let mut scaled = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = seed::rng(seed::derive(seed, &[s as u64]));
            let x = LinearFormsPoint::sample(&mut rng, m, n, ScalarField::Complex);
            let w = min_form_distance(&x, big_n, mode, DEFAULT_FORM_BUDGET)?;
            Ok(w.error * (big_n as f64).powf(kappa))
        })
        .collect::<Result<Vec<f64>>>()?;
    scaled.sort_by(f64::total_cmp);
    let rank = ((DIRICHLET_QUANTILE * samples as f64).ceil() as usize).clamp(1, samples);
    Ok(scaled[rank - 1])
}

/// `error < c·N^{−κ}` for the best approximation with `|q|₂ ≤ N`.
pub fn complex_dirichlet_check(x: &LinearFormsPoint, big_n: usize, mode: FormMode, c: f64) -> Result<(bool, ApproxWitness)> {
    if !x.field.is_complex() {
        return Err(Error::invalid("expected a complex point"));
    }
    if mode == FormMode::Hybrid {
        check_hybrid_dims(x.m, x.n)?;
    }
    let w = min_form_distance(x, big_n, mode, DEFAULT_FORM_BUDGET)?;
    let bound = c * (big_n as f64).powf(-mode.dirichlet_exponent(x.m, x.n));
    Ok((w.error < bound, w))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeasureEstimate {
    pub hits: usize,
    pub samples: usize,
    pub fraction: f64,
}

/// Whether some `q` with `n0 < |q| ≤ n_max` has error below `ψ(|q|)`.
pub fn has_witness_in_shell(x: &LinearFormsPoint, psi: &ApproxFunction, mode: FormMode, n0: usize, n_max: usize) -> bool {
    let mut fitter = Fitter::new(x, mode);
    let mut p = Vec::with_capacity(x.n);
    let mut hit = false;
    let floor = n0 as f64;
    for_each_canonical(x.m, x.field, n_max, |q| {
        let norm = sup_norm(q);
        if norm <= floor {
            return true;
        }
        let bound = psi.eval(norm);
        if fitter.lower_bound(q) >= bound {
            return true;
        }
        if fitter.fit(q, &mut p) < bound {
            hit = true;
            return false;
        }
        true
    });
    hit
}

/// Monte Carlo fraction of uniform points admitting a `ψ`-approximation with
/// `n0 < |q| ≤ n_max`. Sample `s` is drawn from `derive(seed, [s])`, so the
/// result does not depend on the thread count.
#[allow(clippy::too_many_arguments)]
pub fn estimate_approximable_measure(
    psi: &ApproxFunction,
    m: usize,
    n: usize,
    mode: FormMode,
    field: ScalarField,
    samples: usize,
    n0: usize,
    n_max: usize,
    seed: u64,
) -> Result<MeasureEstimate> {
    check_dims(m, n)?;
    if mode == FormMode::Hybrid {
        check_hybrid_dims(m, n)?;
    }
    psi.validate()?;
    if samples == 0 || n_max <= n0 {
        return Err(Error::invalid("need samples > 0 and N_max > N0"));
    }
    budget_check(&LinearFormsPoint::zeros(m, n, field), n_max, DEFAULT_FORM_BUDGET)?;
    let hits = (0..samples)
        .into_par_iter()
        .filter(|&s| {
            let mut rng = seed::rng(seed::derive(seed, &[s as u64]));
            let x = LinearFormsPoint::sample(&mut rng, m, n, field);
            has_witness_in_shell(&x, psi, mode, n0, n_max)
        })
        .count();
    Ok(MeasureEstimate { hits, samples, fraction: hits as f64 / samples as f64 })
}

/// `min error(q)·|q|^{κ+offset}` over `1 ≤ |q| ≤ n_max`, with `κ` the
/// Dirichlet exponent of `mode`.
pub fn badly_approximable_constant(x: &LinearFormsPoint, n_max: usize, mode: FormMode, exponent_offset: f64) -> Result<f64> {
    Ok(badly_approximable_profile(x, &[n_max], mode, exponent_offset)?[0])
}

/// [`badly_approximable_constant`] at every cut-off in `n_maxes` from one pass.
pub fn badly_approximable_profile(x: &LinearFormsPoint, n_maxes: &[usize], mode: FormMode, exponent_offset: f64) -> Result<Vec<f64>> {
    check_dims(x.m, x.n)?;
    if mode == FormMode::Hybrid {
        check_hybrid_dims(x.m, x.n)?;
    }
    let top = n_maxes.iter().copied().max().ok_or_else(|| Error::invalid("no cut-offs given"))?;
    if top < 1 {
        return Err(Error::invalid("N_max must be at least 1"));
    }
    budget_check(x, top, DEFAULT_FORM_BUDGET)?;
    let kappa = mode.dirichlet_exponent(x.m, x.n) + exponent_offset;
    // shell[s] = min over ⌈|q|⌉ = s
    let mut shell = vec![f64::INFINITY; top + 1];
    let mut fitter = Fitter::new(x, mode);
    let mut p = Vec::with_capacity(x.n);
    for_each_canonical(x.m, x.field, top, |q| {
        let norm = sup_norm(q);
        let s = (norm.ceil() as usize).min(top);
        let v = fitter.fit(q, &mut p) * norm.powf(kappa);
        shell[s] = shell[s].min(v);
        true
    });
    let mut running = f64::INFINITY;
    let prefix: Vec<f64> = shell
        .iter()
        .map(|&v| {
            running = running.min(v);
            running
        })
        .collect();
    Ok(n_maxes.iter().map(|&nm| prefix[nm.min(top)]).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CensusShell {
    pub r: usize,
    /// `#{q ∈ ℤ[i] : |q| ≤ r}`
    pub disc_count: u64,
    /// `#{(q₁, q₂) : r < max|q_k| ≤ r+1}`
    pub pair_shell: u64,
    /// `#{(q₁, q₂, p) : r < max|q_k| ≤ r+1, |p| < max|q_k|}`
    pub resonant: u64,
}

/// Gaussian-integer counts for `r = 0..=r_max`.
pub fn gaussian_lattice_census(r_max: usize) -> Result<Vec<CensusShell>> {
    if r_max > 2000 {
        return Err(Error::invalid("census radius is limited to 2000"));
    }
    let top = (r_max + 1) * (r_max + 1);
    let mut by_norm = vec![0u64; top + 1];
    let reach = r_max as i64 + 1;
    for a in -reach..=reach {
        for b in -reach..=reach {
            let s = (a * a + b * b) as usize;
            if s <= top {
                by_norm[s] += 1;
            }
        }
    }
    // within[s] = #{q : |q|² ≤ s}
    let mut within = by_norm;
    for s in 1..=top {
        within[s] += within[s - 1];
    }
    Ok((0..=r_max)
        .map(|r| {
            let (lo, hi) = (r * r, (r + 1) * (r + 1));
            let resonant = (lo + 1..=hi)
                .map(|s| (within[s] * within[s] - within[s - 1] * within[s - 1]) * within[s - 1])
                .sum();
            CensusShell {
                r,
                disc_count: within[lo],
                pair_shell: within[hi] * within[hi] - within[lo] * within[lo],
                resonant,
            }
        })
        .collect())
}

/// Log-log least-squares slope of the resonant count over `r_lo ≤ r ≤ r_hi`.
pub fn census_slope(shells: &[CensusShell], r_lo: usize, r_hi: usize) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = shells
        .iter()
        .filter(|s| s.r >= r_lo.max(1) && s.r <= r_hi && s.resonant > 0)
        .map(|s| ((s.r as f64).ln(), (s.resonant as f64).ln()))
        .unzip();
    least_squares_slope(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn real(m: usize, n: usize, e: &[f64]) -> LinearFormsPoint {
        LinearFormsPoint::real(m, n, e).unwrap()
    }

    #[test]
    fn zero_point_is_exact() {
        let w = min_form_distance(&LinearFormsPoint::zeros(2, 1, ScalarField::Real), 3, FormMode::Hybrid, DEFAULT_FORM_BUDGET).unwrap();
        assert_eq!(w.error, 0.0);
        assert_eq!(w.p, vec![Symbol::new(0, 0)]);
        assert_eq!(w.q, vec![Symbol::new(0, 0), Symbol::new(1, 0)]);
    }

    #[test]
    fn half_is_hit_at_two() {
        for mode in [FormMode::Classical, FormMode::Hybrid] {
            let w = min_form_distance(&real(1, 1, &[0.5]), 2, mode, DEFAULT_FORM_BUDGET).unwrap();
            assert_eq!((w.error, w.q[0].re, w.p[0].re), (0.0, 2, 1));
        }
    }

    #[test]
    fn quadratic_irrationals_match_reference() {
        let x = real(2, 1, &[2f64.sqrt() - 1.0, 3f64.sqrt() - 1.0]).reduced();
        assert!(x.in_domain());
        for mode in [FormMode::Classical, FormMode::Hybrid] {
            let a = min_form_distance(&x, 50, mode, DEFAULT_FORM_BUDGET).unwrap();
            let b = reference_min_form_distance(&x, 50, mode, DEFAULT_FORM_BUDGET).unwrap();
            assert_eq!(a, b);
            assert!(a.error < 1.0 / 2500.0);
        }
    }

    #[test]
    fn reference_agrees_on_random_points() {
        let mut rng = seed::rng(3);
        for (m, n) in [(1, 1), (2, 1), (2, 2), (3, 2)] {
            for _ in 0..10 {
                let big_n = rng.random_range(1..=8);
                let x = LinearFormsPoint::sample(&mut rng, m, n, ScalarField::Real);
                for mode in [FormMode::Classical, FormMode::Hybrid] {
                    let a = min_form_distance(&x, big_n, mode, DEFAULT_FORM_BUDGET).unwrap();
                    let b = reference_min_form_distance(&x, big_n, mode, DEFAULT_FORM_BUDGET).unwrap();
                    assert_eq!(a, b, "m={m} n={n} N={big_n} {mode:?}");
                }
            }
        }
    }

    #[test]
    fn complex_reference_agrees() {
        let mut rng = seed::rng(4);
        for (m, n) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            for _ in 0..6 {
                let big_n = rng.random_range(1..=4);
                let x = LinearFormsPoint::sample(&mut rng, m, n, ScalarField::Complex);
                for mode in [FormMode::Classical, FormMode::Hybrid] {
                    if mode == FormMode::Hybrid && m + 1 <= n {
                        continue;
                    }
                    let a = min_form_distance(&x, big_n, mode, DEFAULT_FORM_BUDGET).unwrap();
                    let b = reference_min_form_distance(&x, big_n, mode, DEFAULT_FORM_BUDGET).unwrap();
                    assert_eq!(a, b, "m={m} n={n} N={big_n} {mode:?}");
                }
            }
        }
    }

    #[test]
    fn hybrid_rejects_degenerate_shape() {
        let x = LinearFormsPoint::zeros(1, 2, ScalarField::Real);
        assert!(min_form_distance(&x, 3, FormMode::Hybrid, DEFAULT_FORM_BUDGET).is_err());
        assert!(min_form_distance(&x, 3, FormMode::Classical, DEFAULT_FORM_BUDGET).is_ok());
        assert!(kg_series(&ApproxFunction::power(-1.0, 0.0), 1, 2, 10, SeriesVariant::Hybrid).is_err());
    }

    #[test]
    fn budget_is_enforced() {
        let x = LinearFormsPoint::zeros(3, 1, ScalarField::Real);
        assert!(matches!(min_form_distance(&x, 300, FormMode::Classical, 1000), Err(Error::Budget(_))));
    }

    #[test]
    fn enclosing_circle_examples() {
        let c = |a, b| Complex64::new(a, b);
        let (o, r) = enclosing_circle(&[c(0.0, 0.0), c(2.0, 0.0), c(1.0, 0.1)]);
        assert!((o - c(1.0, 0.0)).norm() < 1e-12 && (r - 1.0).abs() < 1e-12);
        let (o, r) = enclosing_circle(&[c(0.0, 0.0), c(2.0, 0.0), c(1.0, 3f64.sqrt())]);
        assert!((o - c(1.0, 1.0 / 3f64.sqrt())).norm() < 1e-12);
        assert!((r - 2.0 / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn series_verdicts() {
        let (m, n) = (2, 1);
        let crit = -((m as f64 + 1.0) / n as f64) + 1.0;
        let conv = kg_series(&ApproxFunction::power(crit, 0.5), m, n, 1000, SeriesVariant::Hybrid).unwrap();
        assert_eq!(conv.verdict, Verdict::Convergent);
        assert!((conv.effective_exponent + 1.5).abs() < 1e-12);
        let harmonic = kg_series(&ApproxFunction::power(crit, 0.0), m, n, 1000, SeriesVariant::Hybrid).unwrap();
        assert_eq!(harmonic.verdict, Verdict::Divergent);
        let h1000: f64 = (1..=1000).map(|r| 1.0 / r as f64).sum();
        assert!((harmonic.partial_sums[999] - h1000).abs() < 1e-9);

        let log2 = ApproxFunction::LogPower { exponent: -1.0, log_exponent: -2.0 };
        let log1 = ApproxFunction::LogPower { exponent: -1.0, log_exponent: -1.0 };
        assert_eq!(kg_series(&log2, 1, 1, 100, SeriesVariant::Classical).unwrap().verdict, Verdict::Convergent);
        assert_eq!(kg_series(&log1, 1, 1, 100, SeriesVariant::Classical).unwrap().verdict, Verdict::Divergent);

        let table = ApproxFunction::Tabulated { values: (1..=400).map(|r| (r as f64).powf(-2.0)).collect() };
        let t = kg_series(&table, 1, 1, 400, SeriesVariant::Classical).unwrap();
        assert_eq!(t.verdict, Verdict::Convergent);
        assert!((t.effective_exponent + 2.0).abs() < 1e-9);
    }

    #[test]
    fn complex_series_shapes() {
        let psi = ApproxFunction::power(-2.0, 0.0);
        let c = kg_series(&psi, 2, 1, 10, SeriesVariant::ComplexClassical).unwrap();
        assert_eq!(c.effective_exponent, -1.0);
        assert_eq!(c.verdict, Verdict::Divergent);
        let h = kg_series(&psi, 2, 1, 10, SeriesVariant::ComplexHybrid).unwrap();
        assert_eq!(h.effective_exponent, -2.0);
        assert_eq!(h.verdict, Verdict::Convergent);
    }

    #[test]
    fn tabulated_must_decrease() {
        assert!(ApproxFunction::Tabulated { values: vec![1.0, 2.0] }.validate().is_err());
        assert!(ApproxFunction::Tabulated { values: vec![] }.validate().is_err());
    }

    #[test]
    fn dirichlet_examples() {
        assert!((dirichlet_hybrid_bound(2, 1, 10) - 0.08).abs() < 1e-15);
        let (ok, w) = dirichlet_hybrid_check(&LinearFormsPoint::zeros(2, 1, ScalarField::Real), 10).unwrap();
        assert!(ok && w.error == 0.0);
        let mut rng = seed::rng(9);
        for _ in 0..50 {
            let x = LinearFormsPoint::sample(&mut rng, 2, 1, ScalarField::Real);
            assert!(dirichlet_hybrid_check(&x, 10).unwrap().0);
        }
    }

    #[test]
    fn constant_psi_is_always_hit() {
        let est = estimate_approximable_measure(
            &ApproxFunction::Constant { value: 1.0 },
            2,
            1,
            FormMode::Hybrid,
            ScalarField::Real,
            40,
            1,
            3,
            1,
        )
        .unwrap();
        assert_eq!(est.fraction, 1.0);
    }

    #[test]
    fn rational_row_kills_the_constant() {
        let x = real(2, 1, &[0.25, 0.1234567]);
        let early = badly_approximable_constant(&x, 3, FormMode::Hybrid, 0.0).unwrap();
        let late = badly_approximable_constant(&x, 4, FormMode::Hybrid, 0.0).unwrap();
        assert!(early > 0.0);
        assert_eq!(late, 0.0);
        let prof = badly_approximable_profile(&x, &[3, 4, 10], FormMode::Hybrid, 0.0).unwrap();
        assert_eq!(prof, vec![early, 0.0, 0.0]);
    }

    #[test]
    fn census_small_radii() {
        let c = gaussian_lattice_census(3).unwrap();
        assert_eq!(c[1].disc_count, 5);
        assert_eq!(c[0].disc_count, 1);
        // pairs with max modulus in (0, 1]: 5² − 1
        assert_eq!(c[0].pair_shell, 24);
        // brute force resonant count for r = 1
        let pts: Vec<(i64, i64)> = (-3..=3).flat_map(|a| (-3..=3).map(move |b| (a, b))).collect();
        let n2 = |p: &(i64, i64)| p.0 * p.0 + p.1 * p.1;
        let mut brute = 0u64;
        for a in &pts {
            for b in &pts {
                let s = n2(a).max(n2(b));
                if s > 1 && s <= 4 {
                    brute += pts.iter().filter(|p| n2(p) < s).count() as u64;
                }
            }
        }
        assert_eq!(c[1].resonant, brute);
    }

    proptest! {
        #[test]
        fn error_is_monotone_in_n(seed in 0u64..200) {
            let mut rng = seed::rng(seed);
            let x = LinearFormsPoint::sample(&mut rng, 2, 1, ScalarField::Real);
            let mut prev = f64::INFINITY;
            for big_n in 1..=8 {
                let c = min_form_distance(&x, big_n, FormMode::Classical, DEFAULT_FORM_BUDGET).unwrap();
                prop_assert!(c.error <= prev);
                prev = c.error;
            }
        }

        #[test]
        fn hybrid_never_beats_classical(seed in 0u64..200, big_n in 1usize..6) {
            let mut rng = seed::rng(seed);
            let x = LinearFormsPoint::sample(&mut rng, 3, 2, ScalarField::Real);
            let c = min_form_distance(&x, big_n, FormMode::Classical, DEFAULT_FORM_BUDGET).unwrap();
            let h = min_form_distance(&x, big_n, FormMode::Hybrid, DEFAULT_FORM_BUDGET).unwrap();
            prop_assert!(h.error >= c.error);
        }

        #[test]
        fn witness_error_is_consistent(seed in 0u64..200) {
            let mut rng = seed::rng(seed);
            let x = LinearFormsPoint::sample(&mut rng, 2, 2, ScalarField::Complex);
            let w = min_form_distance(&x, 3, FormMode::Hybrid, DEFAULT_FORM_BUDGET).unwrap();
            let mut err: f64 = 0.0;
            for i in 0..2 {
                let mut l = Complex64::new(0.0, 0.0);
                for k in 0..2 {
                    l += Complex64::new(w.q[k].re as f64, w.q[k].im as f64) * x.get(k, i);
                }
                err = err.max((l - Complex64::new(w.p[i].re as f64, w.p[i].im as f64)).norm());
            }
            prop_assert!((err - w.error).abs() < 1e-12);
            prop_assert!(w.p[0] == w.p[1]);
        }
    }
}
