//! Alignment precoders and the symbolic receive models they induce.
//!
//! K×2: `x^i = A[(H^{i,2})^{-1} I² u^i + (H^{i,1})^{-1} I¹ v^i]`, which collapses
//! all v-interference at receiver 1 onto `I¹ Σ_i v^i` (and symmetrically at
//! receiver 2).
//!
//! 2×K: transmitter 1 sends `Σ_j ρ^j u^j`, transmitter 2 sends `Σ_j ζ^j v^j`.
//! At receiver `i`, the interfering `u^j` is aligned with `v^{σ_i(j)}`, where
//! `σ_i` is the cyclic pairing returned by [`paired_v`].

use std::collections::VecDeque;

use num_complex::Complex64;
use serde::Serialize;

use crate::decoder::{RawGains, SymbolRange, Term};
use crate::linalg::{self, c, frobenius, inverse, CMat, CVec};
use crate::xchannel::{ScalarField, TopologyKind, XTopology, DEFAULT_COND_CEILING};
use crate::{Error, Result};

pub const DEFAULT_ALIGNMENT_TOL: f64 = 1e-9;

fn require_kind(topology: &XTopology, kind: TopologyKind) -> Result<()> {
    if topology.kind() != kind {
        return Err(Error::invalid(format!(
            "expected a {} topology, got {}",
            kind.tag(),
            topology.kind().tag()
        )));
    }
    Ok(())
}

fn checked_inverse(topology: &XTopology, tx: usize, rx: usize) -> Result<CMat> {
    let ch = topology.channel(tx, rx);
    if ch.condition_number() > DEFAULT_COND_CEILING {
        return Err(Error::Singular(format!(
            "H^({},{}) has condition number {:.3e}",
            tx + 1,
            rx + 1,
            ch.condition_number()
        )));
    }
    inverse(ch.entries())
}

/// Interference bases `I¹`, `I²` of the K×2 scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionSetKx2 {
    pub i1: CMat,
    pub i2: CMat,
}

impl DirectionSetKx2 {
    pub fn identity(m: usize) -> Self {
        DirectionSetKx2 { i1: linalg::identity(m), i2: linalg::identity(m) }
    }

    pub fn new(i1: CMat, i2: CMat) -> Result<Self> {
        for (name, m) in [("I1", &i1), ("I2", &i2)] {
            if !m.is_square() || linalg::condition_number(m) > DEFAULT_COND_CEILING {
                return Err(Error::invalid(format!("{name} must be square and invertible")));
            }
        }
        if i1.nrows() != i2.nrows() {
            return Err(Error::invalid("I1 and I2 differ in size"));
        }
        Ok(DirectionSetKx2 { i1, i2 })
    }
}

/// Per-transmitter linear maps of the K×2 scheme (before the `A` scaling).
#[derive(Clone, Debug, PartialEq)]
pub struct Kx2Precoder {
    /// `(H^{i,2})^{-1} I²`
    pub u_maps: Vec<CMat>,
    /// `(H^{i,1})^{-1} I¹`
    pub v_maps: Vec<CMat>,
}

impl Kx2Precoder {
    pub fn apply(&self, u: &[CVec], v: &[CVec], amplitude: f64) -> Result<Vec<CVec>> {
        let k = self.u_maps.len();
        if u.len() != k || v.len() != k {
            return Err(Error::invalid(format!("expected {k} u and v message vectors")));
        }
        let m = self.u_maps[0].nrows();
        if u.iter().chain(v).any(|x| x.len() != m) {
            return Err(Error::invalid(format!("message vectors must have length {m}")));
        }
        Ok((0..k)
            .map(|i| (&self.u_maps[i] * &u[i] + &self.v_maps[i] * &v[i]) * c(amplitude, 0.0))
            .collect())
    }
}

pub fn kx2_precoder(topology: &XTopology, dirs: &DirectionSetKx2) -> Result<Kx2Precoder> {
    require_kind(topology, TopologyKind::KbyTwo)?;
    if dirs.i1.nrows() != topology.m() {
        return Err(Error::invalid("direction set size differs from M"));
    }
    let mut u_maps = Vec::with_capacity(topology.k());
    let mut v_maps = Vec::with_capacity(topology.k());
    for i in 0..topology.k() {
        u_maps.push(checked_inverse(topology, i, 1)? * &dirs.i2);
        v_maps.push(checked_inverse(topology, i, 0)? * &dirs.i1);
    }
    Ok(Kx2Precoder { u_maps, v_maps })
}

/// Transmit vectors `x^i` of the K×2 scheme, scaled by `amplitude`.
pub fn precode_kx2(
    topology: &XTopology,
    dirs: &DirectionSetKx2,
    u: &[CVec],
    v: &[CVec],
    amplitude: f64,
) -> Result<Vec<CVec>> {
    kx2_precoder(topology, dirs)?.apply(u, v, amplitude)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstraintResidual {
    /// 1-based receiver index.
    pub receiver: usize,
    pub label: String,
    /// Relative Frobenius residual of the constraint.
    pub residual: f64,
}

/// One row of the 2×K pairing table (1-based indices): at `receiver`,
/// `u^{u_index}` shares a bundle with `v^{v_index}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PairingEntry {
    pub receiver: usize,
    pub u_index: usize,
    pub v_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub scheme: String,
    pub max_residual: f64,
    /// Number of distinct interference directions seen at each receiver.
    pub per_receiver_interference_rank: Vec<usize>,
    pub constraints: Vec<ConstraintResidual>,
    pub pairing: Vec<PairingEntry>,
    /// Largest |d − 1| over bundle coefficients `u + d·v` (2×K only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_coupling_deviation: Option<f64>,
}

impl AlignmentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Greedy count of pairwise non-parallel columns.
fn count_directions(cols: &[CVec], tol: f64) -> usize {
    let mut reps: Vec<CVec> = Vec::new();
    for col in cols {
        let n = col.norm();
        if n == 0.0 {
            continue;
        }
        let parallel = reps.iter().any(|r| {
            let proj = r * (r.dotc(col) / r.norm_squared());
            (col - proj).norm() <= tol * n
        });
        if !parallel {
            reps.push(col.clone());
        }
    }
    reps.len()
}

fn columns(m: &CMat) -> Vec<CVec> {
    (0..m.ncols()).map(|j| m.column(j).into_owned()).collect()
}

pub fn verify_alignment_kx2(topology: &XTopology, dirs: &DirectionSetKx2) -> Result<AlignmentReport> {
    let pre = kx2_precoder(topology, dirs)?;
    verify_precoder_kx2(topology, dirs, &pre)
}

/// Checks that the v-interference at receiver 1 equals `I¹` for every
/// transmitter (and the u-interference at receiver 2 equals `I²`).
pub fn verify_precoder_kx2(topology: &XTopology, dirs: &DirectionSetKx2, pre: &Kx2Precoder) -> Result<AlignmentReport> {
    require_kind(topology, TopologyKind::KbyTwo)?;
    let mut constraints = Vec::new();
    let mut ranks = Vec::new();
    for (rx, basis, maps, name) in [(0, &dirs.i1, &pre.v_maps, "v"), (1, &dirs.i2, &pre.u_maps, "u")] {
        let mut cols = Vec::new();
        for (i, map) in maps.iter().enumerate() {
            let eff = topology.h(i, rx) * map;
            let residual = frobenius(&(&eff - basis)) / frobenius(basis);
            constraints.push(ConstraintResidual {
                receiver: rx + 1,
                label: format!("H^({},{}) P_{name}^{} = I^{}", i + 1, rx + 1, i + 1, rx + 1),
                residual,
            });
            cols.extend(columns(&eff));
        }
        ranks.push(count_directions(&cols, 1e-6));
    }
    let max_residual = constraints.iter().map(|c| c.residual).fold(0.0, f64::max);
    Ok(AlignmentReport {
        scheme: "kx2".into(),
        max_residual,
        per_receiver_interference_rank: ranks,
        constraints,
        pairing: Vec::new(),
        max_coupling_deviation: None,
    })
}

/// The 2×K pairing `σ_i(j)` (0-based): index of the `v` message that shares a
/// bundle with `u^j` at receiver `i`, or `None` when `j == i`.
///
/// In 1-based terms: `j+1` when `j ∉ {i, i−1, K}`, `j+2` when `j = i−1`
/// (wrapping past `K` to 1), `1` when `j = K ≠ i` and `i ≠ 1`, `2` when
/// `j = K` and `i = 1`.
pub fn paired_v(k: usize, i: usize, j: usize) -> Option<usize> {
    if i >= k || j >= k || i == j {
        return None;
    }
    let (i1, j1) = (i + 1, j + 1);
    let s = if j1 == k {
        if i1 == 1 {
            2
        } else {
            1
        }
    } else if j1 + 1 == i1 {
        j1 + 2
    } else {
        j1 + 1
    };
    let s = if s > k { s - k } else { s };
    Some(s - 1)
}

/// Precoding directions of the 2×K scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionSet2xK {
    pub rho: Vec<CMat>,
    pub zeta: Vec<CMat>,
    /// `pairing[i][j] = σ_i(j)` (0-based).
    pub pairing: Vec<Vec<Option<usize>>>,
    /// `coupling[i][j][c] = d` such that the bundle in column `c` is
    /// `u^j_c + d·v^{σ_i(j)}_c`. Equal to 1 on exactly aligned constraints.
    pub coupling: Vec<Vec<Option<Vec<Complex64>>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Node {
    Rho(usize),
    Zeta(usize),
}

struct Edge {
    rx: usize,
    j: usize,
    k: usize,
}

fn describe(e: &Edge) -> String {
    format!("receiver {}: rho^{} ~ zeta^{}", e.rx + 1, e.j + 1, e.k + 1)
}

fn is_scalar(m: &CMat, tol: f64) -> bool {
    let n = m.nrows();
    let mean = m.trace() / n as f64;
    frobenius(&(m - linalg::identity(n) * mean)) <= tol * frobenius(m).max(1e-300)
}

/// Solves the pairing constraints `H^{1,i} ρ^j ∥ H^{2,i} ζ^{σ_i(j)}` (column
/// by column) for all receivers at once.
///
/// Constraints form a graph over the ρ's and ζ's. A spanning tree fixes every
/// direction up to a common generator `X` per component; each remaining edge
/// closes a cycle whose matrix `C` must satisfy `C X = X Λ`, so `X` is taken
/// from the eigenvectors of the first non-scalar cycle matrix and checked
/// against the others. `Λ` shows up as the bundle coupling on that edge.
pub fn design_directions_2xk(topology: &XTopology, tol: f64) -> Result<DirectionSet2xK> {
    require_kind(topology, TopologyKind::TwoByK)?;
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let k = topology.k();
    let m = topology.m();
    let real = topology.field() == ScalarField::Real;

    let mut t = Vec::with_capacity(k);
    let mut t_inv = Vec::with_capacity(k);
    for rx in 0..k {
        let ti = checked_inverse(topology, 1, rx)? * topology.h(0, rx);
        t_inv.push(inverse(&ti)?);
        t.push(ti);
    }

    let mut edges = Vec::new();
    let mut pairing = vec![vec![None; k]; k];
    for rx in 0..k {
        for j in 0..k {
            if let Some(kk) = paired_v(k, rx, j) {
                pairing[rx][j] = Some(kk);
                edges.push(Edge { rx, j, k: kk });
            }
        }
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); 2 * k];
    let slot = |n: Node| match n {
        Node::Rho(j) => j,
        Node::Zeta(j) => k + j,
    };
    for (e_idx, e) in edges.iter().enumerate() {
        adj[slot(Node::Rho(e.j))].push(e_idx);
        adj[slot(Node::Zeta(e.k))].push(e_idx);
    }

    let mut lmap: Vec<Option<CMat>> = vec![None; 2 * k];
    let mut component = vec![usize::MAX; 2 * k];
    let mut tree_edge = vec![false; edges.len()];
    let mut roots = Vec::new();
    for start in 0..2 * k {
        if lmap[start].is_some() {
            continue;
        }
        let comp = roots.len();
        roots.push(start);
        lmap[start] = Some(linalg::identity(m));
        component[start] = comp;
        let mut queue = VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            for &e_idx in &adj[node] {
                let e = &edges[e_idx];
                let (rho, zeta) = (slot(Node::Rho(e.j)), slot(Node::Zeta(e.k)));
                let other = if node == rho { zeta } else { rho };
                if lmap[other].is_some() {
                    continue;
                }
                let l = lmap[node].as_ref().unwrap();
                let next = if node == rho { &t[e.rx] * l } else { &t_inv[e.rx] * l };
                lmap[other] = Some(next);
                component[other] = comp;
                tree_edge[e_idx] = true;
                queue.push_back(other);
            }
        }
    }
    let lmap: Vec<CMat> = lmap.into_iter().map(Option::unwrap).collect();

    let cycle = |e: &Edge| -> Result<CMat> {
        let lz = &lmap[slot(Node::Zeta(e.k))];
        let lr = &lmap[slot(Node::Rho(e.j))];
        Ok(inverse(lz)? * &t[e.rx] * lr)
    };

    let mut generators = Vec::with_capacity(roots.len());
    for comp in 0..roots.len() {
        let cycle_edges: Vec<usize> = (0..edges.len())
            .filter(|&e| !tree_edge[e] && component[slot(Node::Rho(edges[e].j))] == comp)
            .collect();
        let mut x = linalg::identity(m);
        for &e_idx in &cycle_edges {
            let cm = cycle(&edges[e_idx])?;
            if is_scalar(&cm, tol) {
                continue;
            }
            let pairs = linalg::eigenpairs(&cm, 1e-9)?;
            if real {
                if let Some((l, _)) = pairs.iter().find(|(l, _)| l.im.abs() > 1e-9 * l.norm()) {
                    return Err(Error::Infeasible(format!(
                        "cycle closed at {} has complex eigenvalue {:.6}{:+.6}i; no real direction exists",
                        describe(&edges[e_idx]),
                        l.re,
                        l.im
                    )));
                }
            }
            let cols: Vec<CVec> = pairs
                .into_iter()
                .map(|(_, v)| if real { v.map(|z| c(z.re, 0.0)) } else { v })
                .collect();
            x = CMat::from_columns(&cols);
            if linalg::condition_number(&x) > DEFAULT_COND_CEILING {
                return Err(Error::Infeasible(format!(
                    "cycle closed at {} is defective (no eigenbasis)",
                    describe(&edges[e_idx])
                )));
            }
            break;
        }
        let x_inv = inverse(&x)?;
        for &e_idx in &cycle_edges {
            let d = &x_inv * cycle(&edges[e_idx])? * &x;
            let off = CMat::from_fn(m, m, |a, b| if a == b { c(0.0, 0.0) } else { d[(a, b)] });
            if frobenius(&off) > 1e-7 * frobenius(&d) {
                return Err(Error::Infeasible(format!(
                    "cycle closed at {} shares no eigen-directions with the other cycles of its component",
                    describe(&edges[e_idx])
                )));
            }
        }
        // Column scales from a non-integer power of channel magnitudes, which
        // keeps them out of every integer monomial relation among the gains.
        let src = if comp < k { &t[comp] } else { &t_inv[comp - k] };
        let scales = CMat::from_fn(m, m, |a, b| {
            if a == b {
                c(src[(a, a)].norm().max(1e-3).powf(std::f64::consts::FRAC_1_PI), 0.0)
            } else {
                c(0.0, 0.0)
            }
        });
        generators.push(x * scales);
    }

    let rho: Vec<CMat> = (0..k)
        .map(|j| {
            let s = slot(Node::Rho(j));
            &lmap[s] * &generators[component[s]]
        })
        .collect();
    let zeta: Vec<CMat> = (0..k)
        .map(|j| {
            let s = slot(Node::Zeta(j));
            &lmap[s] * &generators[component[s]]
        })
        .collect();

    let mut coupling = vec![vec![None; k]; k];
    for e in &edges {
        let a = topology.h(0, e.rx) * &rho[e.j];
        let b = topology.h(1, e.rx) * &zeta[e.k];
        let d: Vec<Complex64> = (0..m)
            .map(|col| {
                let ac = a.column(col);
                let bc = b.column(col);
                let lambda = bc.dotc(&ac) / bc.norm_squared();
                let d = c(1.0, 0.0) / lambda;
                if (d - c(1.0, 0.0)).norm() <= tol {
                    c(1.0, 0.0)
                } else {
                    d
                }
            })
            .collect();
        coupling[e.rx][e.j] = Some(d);
    }
    let set = DirectionSet2xK { rho, zeta, pairing, coupling };
    let report = verify_directions_2xk(topology, &set)?;
    if report.max_residual > tol {
        return Err(Error::Infeasible(format!(
            "alignment residual {:.3e} exceeds tolerance {tol:.1e}",
            report.max_residual
        )));
    }
    Ok(set)
}

/// Direction residual of every pairing constraint: the relative Frobenius
/// distance between `H^{1,i} ρ^j` and `H^{2,i} ζ^{σ_i(j)} D` with `D` the
/// least-squares diagonal.
pub fn verify_directions_2xk(topology: &XTopology, dirs: &DirectionSet2xK) -> Result<AlignmentReport> {
    require_kind(topology, TopologyKind::TwoByK)?;
    let k = topology.k();
    let mut constraints = Vec::new();
    let mut pairing = Vec::new();
    let mut ranks = Vec::new();
    let mut max_dev: f64 = 0.0;
    for rx in 0..k {
        let mut cols = Vec::new();
        for j in 0..k {
            let Some(kk) = paired_v(k, rx, j) else { continue };
            pairing.push(PairingEntry { receiver: rx + 1, u_index: j + 1, v_index: kk + 1 });
            let a = topology.h(0, rx) * &dirs.rho[j];
            let b = topology.h(1, rx) * &dirs.zeta[kk];
            let mut fitted = b.clone();
            for col in 0..a.ncols() {
                let bc = b.column(col).into_owned();
                let lambda = bc.dotc(&a.column(col)) / bc.norm_squared();
                fitted.set_column(col, &(bc * lambda));
                max_dev = max_dev.max((c(1.0, 0.0) / lambda - c(1.0, 0.0)).norm());
            }
            constraints.push(ConstraintResidual {
                receiver: rx + 1,
                label: format!("H^(1,{r}) rho^{} || H^(2,{r}) zeta^{}", j + 1, kk + 1, r = rx + 1),
                residual: frobenius(&(&a - &fitted)) / frobenius(&a),
            });
            cols.extend(columns(&a));
            cols.extend(columns(&b));
        }
        ranks.push(count_directions(&cols, 1e-6));
    }
    let max_residual = constraints.iter().map(|c| c.residual).fold(0.0, f64::max);
    Ok(AlignmentReport {
        scheme: "2xk".into(),
        max_residual,
        per_receiver_interference_rank: ranks,
        constraints,
        pairing,
        max_coupling_deviation: Some(max_dev),
    })
}

/// Transmit vectors of the 2×K scheme: `x¹ = A Σ ρ^j u^j`, `x² = A Σ ζ^j v^j`.
pub fn precode_2xk(dirs: &DirectionSet2xK, u: &[CVec], v: &[CVec], amplitude: f64) -> Result<Vec<CVec>> {
    let k = dirs.rho.len();
    if u.len() != k || v.len() != k {
        return Err(Error::invalid(format!("expected {k} u and v message vectors")));
    }
    let m = dirs.rho[0].nrows();
    if u.iter().chain(v).any(|x| x.len() != m) {
        return Err(Error::invalid(format!("message vectors must have length {m}")));
    }
    let mut x1 = CVec::zeros(m);
    let mut x2 = CVec::zeros(m);
    for j in 0..k {
        x1 += &dirs.rho[j] * &u[j];
        x2 += &dirs.zeta[j] * &v[j];
    }
    Ok(vec![x1 * c(amplitude, 0.0), x2 * c(amplitude, 0.0)])
}

/// Identifies one integer message component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum MessageRef {
    U { index: usize, col: usize },
    V { index: usize, col: usize },
}

/// All message vectors of one channel use.
#[derive(Clone, Debug, PartialEq)]
pub struct Messages {
    pub u: Vec<CVec>,
    pub v: Vec<CVec>,
}

impl Messages {
    pub fn get(&self, r: MessageRef) -> Complex64 {
        match r {
            MessageRef::U { index, col } => self.u[index][col],
            MessageRef::V { index, col } => self.v[index][col],
        }
    }

    pub fn zeros(k: usize, m: usize) -> Self {
        Messages { u: vec![CVec::zeros(m); k], v: vec![CVec::zeros(m); k] }
    }
}

/// A receive-side stream: gain column times `Σ coeff·message`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceiveStream {
    pub gain: CVec,
    pub parts: Vec<(MessageRef, Complex64)>,
    pub desired: bool,
}

impl ReceiveStream {
    /// True when every coefficient is exactly 1, so the stream is an integer bundle.
    pub fn is_integer(&self) -> bool {
        self.parts.iter().all(|(_, d)| *d == c(1.0, 0.0))
    }
}

/// Noiseless receive structure at one receiver, in units of `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceiverModel {
    pub receiver: usize,
    pub field: ScalarField,
    pub streams: Vec<ReceiveStream>,
}

/// Which integer each decoding term carries.
#[derive(Clone, Debug, PartialEq)]
pub struct TermOrigin {
    pub parts: Vec<MessageRef>,
}

impl ReceiverModel {
    pub fn desired(&self) -> impl Iterator<Item = (usize, MessageRef)> + '_ {
        self.streams
            .iter()
            .enumerate()
            .filter(|(_, s)| s.desired)
            .map(|(i, s)| (i, s.parts[0].0))
    }

    pub fn bundle_count(&self) -> usize {
        self.streams.iter().filter(|s| !s.desired).count()
    }

    /// Noiseless signal `Σ gain·(Σ coeff·msg)` and the per-stream values.
    pub fn evaluate(&self, msgs: &Messages) -> (CVec, Vec<Complex64>) {
        let m = self.streams[0].gain.len();
        let mut y = CVec::zeros(m);
        let mut values = Vec::with_capacity(self.streams.len());
        for s in &self.streams {
            let val: Complex64 = s.parts.iter().map(|(r, d)| msgs.get(*r) * d).sum();
            y += &s.gain * val;
            values.push(val);
        }
        (y, values)
    }

    /// Integer decoding terms restricted to `antennas`: integer bundles stay
    /// merged with range `±(parts)·Q`; non-integer bundles split into one term
    /// per message. Returns the gains and the message composition of each term.
    pub fn raw_gains(&self, q: u32, antennas: &[usize]) -> (RawGains, Vec<TermOrigin>) {
        let qi = q as i64;
        let mut terms = Vec::new();
        let mut origins = Vec::new();
        for s in &self.streams {
            if s.is_integer() {
                let w = qi * s.parts.len() as i64;
                terms.push(Term {
                    gains: antennas.iter().map(|&l| s.gain[l]).collect(),
                    range: SymbolRange::new(-w, w),
                });
                origins.push(TermOrigin { parts: s.parts.iter().map(|p| p.0).collect() });
            } else {
                for (r, d) in &s.parts {
                    terms.push(Term {
                        gains: antennas.iter().map(|&l| s.gain[l] * d).collect(),
                        range: SymbolRange::new(-qi, qi),
                    });
                    origins.push(TermOrigin { parts: vec![*r] });
                }
            }
        }
        (RawGains { field: self.field, terms }, origins)
    }
}

/// Receive models of the K×2 scheme: receiver 1 sees `u^i` through
/// `H^{i,1}(H^{i,2})^{-1}I²` plus bundles `Γ_c = Σ_i v^i_c` on `I¹`;
/// receiver 2 is symmetric with `Θ_c = Σ_i u^i_c` on `I²`.
pub fn received_model_kx2(topology: &XTopology, dirs: &DirectionSetKx2) -> Result<Vec<ReceiverModel>> {
    let pre = kx2_precoder(topology, dirs)?;
    let k = topology.k();
    let m = topology.m();
    let one = c(1.0, 0.0);
    let mut models = Vec::with_capacity(2);
    for rx in 0..2 {
        let mut streams = Vec::new();
        for i in 0..k {
            let g = if rx == 0 { topology.h(i, 0) * &pre.u_maps[i] } else { topology.h(i, 1) * &pre.v_maps[i] };
            for col in 0..m {
                let r = if rx == 0 { MessageRef::U { index: i, col } } else { MessageRef::V { index: i, col } };
                streams.push(ReceiveStream { gain: g.column(col).into_owned(), parts: vec![(r, one)], desired: true });
            }
        }
        let basis = if rx == 0 { &dirs.i1 } else { &dirs.i2 };
        for col in 0..m {
            let parts = (0..k)
                .map(|i| {
                    let r = if rx == 0 { MessageRef::V { index: i, col } } else { MessageRef::U { index: i, col } };
                    (r, one)
                })
                .collect();
            streams.push(ReceiveStream { gain: basis.column(col).into_owned(), parts, desired: false });
        }
        models.push(ReceiverModel { receiver: rx, field: topology.field(), streams });
    }
    Ok(models)
}

/// Receive models of the 2×K scheme: at receiver `i`, desired `u^i`, `v^i`
/// and `M(K−1)` bundles `u^j_c + d·v^{σ_i(j)}_c` on `H^{1,i} ρ^j`.
pub fn received_model_2xk(topology: &XTopology, dirs: &DirectionSet2xK) -> Result<Vec<ReceiverModel>> {
    require_kind(topology, TopologyKind::TwoByK)?;
    let k = topology.k();
    let m = topology.m();
    let one = c(1.0, 0.0);
    let mut models = Vec::with_capacity(k);
    for rx in 0..k {
        let mut streams = Vec::new();
        let gu = topology.h(0, rx) * &dirs.rho[rx];
        let gv = topology.h(1, rx) * &dirs.zeta[rx];
        for col in 0..m {
            streams.push(ReceiveStream {
                gain: gu.column(col).into_owned(),
                parts: vec![(MessageRef::U { index: rx, col }, one)],
                desired: true,
            });
        }
        for col in 0..m {
            streams.push(ReceiveStream {
                gain: gv.column(col).into_owned(),
                parts: vec![(MessageRef::V { index: rx, col }, one)],
                desired: true,
            });
        }
        for j in 0..k {
            let Some(kk) = dirs.pairing[rx][j] else { continue };
            let d = dirs.coupling[rx][j].as_ref().expect("coupling recorded for every pair");
            let g = topology.h(0, rx) * &dirs.rho[j];
            for col in 0..m {
                streams.push(ReceiveStream {
                    gain: g.column(col).into_owned(),
                    parts: vec![(MessageRef::U { index: j, col }, one), (MessageRef::V { index: kk, col }, d[col])],
                    desired: false,
                });
            }
        }
        models.push(ReceiverModel { receiver: rx, field: topology.field(), streams });
    }
    Ok(models)
}

/// The three single-antenna MAC users over `A·{−Q..Q}`.
#[derive(Clone, Debug, PartialEq)]
pub struct MacStreams {
    pub q: u32,
    pub amplitude: f64,
    /// 2×3 gains: row = receive antenna, column = user.
    pub gains: CMat,
}

impl MacStreams {
    /// Each user's constellation points.
    pub fn stream_points(&self) -> Vec<f64> {
        let qi = self.q as i64;
        (-qi..=qi).map(|s| self.amplitude * s as f64).collect()
    }

    /// Noiseless received pair `A·(h_1 u¹ + h_2 u² + h_3 u³)`.
    pub fn received(&self, u: &[Complex64; 3]) -> CVec {
        let s = CVec::from_column_slice(u);
        (&self.gains * s) * c(self.amplitude, 0.0)
    }

    pub fn model(&self, field: ScalarField) -> ReceiverModel {
        let streams = (0..3)
            .map(|j| ReceiveStream {
                gain: self.gains.column(j).into_owned(),
                parts: vec![(MessageRef::U { index: j, col: 0 }, c(1.0, 0.0))],
                desired: true,
            })
            .collect();
        ReceiverModel { receiver: 0, field, streams }
    }
}

pub fn build_mac_streams(topology: &XTopology, q: u32, amplitude: f64) -> Result<MacStreams> {
    require_kind(topology, TopologyKind::SimoMac)?;
    if topology.n_tx() != 3 || topology.rx_antennas() != 2 {
        return Err(Error::invalid("the MAC needs 3 users and 2 receive antennas"));
    }
    if q == 0 || !(amplitude > 0.0) {
        return Err(Error::invalid("need Q ≥ 1 and A > 0"));
    }
    let gains = CMat::from_fn(2, 3, |l, j| topology.h(j, 0)[(l, 0)]);
    Ok(MacStreams { q, amplitude, gains })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::xchannel::{sample_topology, ScalarField::*, TopologyKind::*};
    use std::collections::HashSet;

    fn ceiling() -> f64 {
        DEFAULT_COND_CEILING
    }

    #[test]
    fn scalar_kx2_example() {
        let h = |x: f64| crate::linalg::from_real_rows(&[&[x]]);
        let topo = XTopology::from_matrices(KbyTwo, Real, 0, vec![vec![h(2.0), h(4.0)]]);
        // K = 1 is rejected by the constructor's shape rules only if n_rx != 2; it is allowed here.
        let topo = topo.unwrap();
        let one = CVec::from_element(1, c(1.0, 0.0));
        let x = precode_kx2(&topo, &DirectionSetKx2::identity(1), &[one.clone()], &[one], 1.0).unwrap();
        assert!((x[0][0] - c(0.75, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn zero_messages_zero_signal() {
        let topo = sample_topology(KbyTwo, 3, 2, Complex, 3, ceiling()).unwrap();
        let z = vec![CVec::zeros(2); 3];
        let x = precode_kx2(&topo, &DirectionSetKx2::identity(2), &z, &z, 5.0).unwrap();
        assert!(x.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn interference_collapses_at_receiver_one() {
        let topo = sample_topology(KbyTwo, 3, 2, Real, 17, ceiling()).unwrap();
        let dirs = DirectionSetKx2::identity(2);
        let mut rng = crate::seed::rng(1);
        let v: Vec<CVec> = (0..3)
            .map(|_| CVec::from_fn(2, |_, _| c(rand::Rng::random_range(&mut rng, -3..=3) as f64, 0.0)))
            .collect();
        let zero = vec![CVec::zeros(2); 3];
        let x = precode_kx2(&topo, &dirs, &zero, &v, 1.0).unwrap();
        let y = crate::xchannel::noiseless_receive(&topo, &x).unwrap();
        let gamma: CVec = v.iter().sum();
        assert!((&y[0] - &dirs.i1 * gamma).norm() < 1e-10);
    }

    #[test]
    fn alignment_report_and_corruption() {
        let topo = sample_topology(KbyTwo, 3, 2, Complex, 8, ceiling()).unwrap();
        let mut rng = crate::seed::rng(2);
        let rnd = |rng: &mut rand_chacha::ChaCha8Rng| {
            CMat::from_fn(2, 2, |_, _| c(rand::Rng::random_range(rng, -1.0..1.0), rand::Rng::random_range(rng, -1.0..1.0)))
        };
        let dirs = DirectionSetKx2::new(rnd(&mut rng), rnd(&mut rng)).unwrap();
        let report = verify_alignment_kx2(&topo, &dirs).unwrap();
        assert!(report.max_residual <= 1e-10, "{}", report.max_residual);
        assert_eq!(report.per_receiver_interference_rank, vec![2, 2]);
        let mut pre = kx2_precoder(&topo, &dirs).unwrap();
        pre.v_maps[1][(0, 0)] += c(1e-3, 0.0);
        let bad = verify_precoder_kx2(&topo, &dirs, &pre).unwrap();
        assert!(bad.max_residual > 1e-5);
        assert!(bad.per_receiver_interference_rank[0] > 2);
    }

    #[test]
    fn pairing_is_a_bijection_onto_other_indices() {
        for k in 2..=9 {
            for i in 0..k {
                let images: HashSet<usize> = (0..k).filter_map(|j| paired_v(k, i, j)).collect();
                let expect: HashSet<usize> = (0..k).filter(|&x| x != i).collect();
                assert_eq!(images, expect, "K={k}, i={i}");
                assert_eq!(paired_v(k, i, i), None);
            }
        }
    }

    #[test]
    fn pairing_case_table() {
        // 1-based cases for K = 4.
        let s = |i: usize, j: usize| paired_v(4, i - 1, j - 1).map(|x| x + 1);
        assert_eq!(s(3, 1), Some(2)); // j ∉ {i, i−1, K}
        assert_eq!(s(3, 2), Some(4)); // j = i−1
        assert_eq!(s(4, 3), Some(1)); // j = i−1, wraps
        assert_eq!(s(2, 4), Some(1)); // j = K, i ≠ 1
        assert_eq!(s(1, 4), Some(2)); // j = K, i = 1
    }

    #[test]
    fn two_by_two_scalar_closed_form() {
        for seed in 0..20 {
            let topo = sample_topology(TwoByK, 2, 1, Real, seed, ceiling()).unwrap();
            let dirs = design_directions_2xk(&topo, 1e-10).unwrap();
            // receiver 1: u^2 pairs with v^2; receiver 2: u^1 pairs with v^1.
            let h = |tx, rx| topo.h(tx, rx)[(0, 0)];
            let z2 = dirs.rho[1][(0, 0)] * h(0, 0) / h(1, 0);
            let z1 = dirs.rho[0][(0, 0)] * h(0, 1) / h(1, 1);
            assert!((dirs.zeta[1][(0, 0)] - z2).norm() < 1e-10 * z2.norm());
            assert!((dirs.zeta[0][(0, 0)] - z1).norm() < 1e-10 * z1.norm());
            let r = verify_directions_2xk(&topo, &dirs).unwrap();
            assert!(r.max_residual < 1e-10);
            assert!(r.max_coupling_deviation.unwrap() < 1e-12);
        }
    }

    #[test]
    fn complex_three_user_design() {
        for seed in 0..10 {
            let topo = sample_topology(TwoByK, 3, 2, Complex, seed, ceiling()).unwrap();
            let dirs = design_directions_2xk(&topo, 1e-9).unwrap();
            let r = verify_directions_2xk(&topo, &dirs).unwrap();
            assert!(r.max_residual <= 1e-9);
            assert!(r.per_receiver_interference_rank.iter().all(|&x| x == 4));
        }
    }

    #[test]
    fn real_mode_complex_spectrum_is_flagged() {
        let mut seen = false;
        for seed in 0..200 {
            let topo = sample_topology(TwoByK, 3, 2, Real, seed, ceiling()).unwrap();
            match design_directions_2xk(&topo, 1e-9) {
                Err(Error::Infeasible(msg)) => {
                    assert!(msg.contains("receiver"), "{msg}");
                    seen = true;
                }
                Err(e) => panic!("{e}"),
                Ok(d) => assert!(verify_directions_2xk(&topo, &d).unwrap().max_residual <= 1e-9),
            }
        }
        assert!(seen);
    }

    #[test]
    fn model_counts() {
        let topo = sample_topology(TwoByK, 2, 1, Real, 4, ceiling()).unwrap();
        let d = design_directions_2xk(&topo, 1e-9).unwrap();
        for model in received_model_2xk(&topo, &d).unwrap() {
            assert_eq!(model.bundle_count(), 1);
        }
        let topo = sample_topology(TwoByK, 3, 2, Complex, 4, ceiling()).unwrap();
        let d = design_directions_2xk(&topo, 1e-9).unwrap();
        for model in received_model_2xk(&topo, &d).unwrap() {
            assert_eq!(model.desired().count(), 4);
            assert_eq!(model.bundle_count(), 4);
            let (y, vals) = model.evaluate(&Messages::zeros(3, 2));
            assert_eq!(y.norm(), 0.0);
            assert!(vals.iter().all(|v| v.norm() == 0.0));
        }
    }

    #[test]
    fn bundles_follow_the_pairing() {
        let topo = sample_topology(TwoByK, 4, 1, Complex, 9, ceiling()).unwrap();
        let d = design_directions_2xk(&topo, 1e-9).unwrap();
        for model in received_model_2xk(&topo, &d).unwrap() {
            for s in model.streams.iter().filter(|s| !s.desired) {
                let (MessageRef::U { index: j, .. }, MessageRef::V { index: kk, .. }) = (s.parts[0].0, s.parts[1].0) else {
                    panic!("bundle must be u + v");
                };
                assert_eq!(paired_v(4, model.receiver, j), Some(kk));
            }
        }
    }

    #[test]
    fn model_matches_transmission_2xk() {
        let topo = sample_topology(TwoByK, 3, 2, Complex, 12, ceiling()).unwrap();
        let dirs = design_directions_2xk(&topo, 1e-9).unwrap();
        let mut rng = crate::seed::rng(5);
        let mut draw = || CVec::from_fn(2, |_, _| c(rand::Rng::random_range(&mut rng, -2..=2) as f64, rand::Rng::random_range(&mut rng, -2..=2) as f64));
        let msgs = Messages { u: (0..3).map(|_| draw()).collect(), v: (0..3).map(|_| draw()).collect() };
        let x = precode_2xk(&dirs, &msgs.u, &msgs.v, 1.0).unwrap();
        let y = crate::xchannel::noiseless_receive(&topo, &x).unwrap();
        for model in received_model_2xk(&topo, &dirs).unwrap() {
            let (ym, _) = model.evaluate(&msgs);
            assert!((&ym - &y[model.receiver]).norm() < 1e-9 * (1.0 + ym.norm()));
        }
    }

    #[test]
    fn mac_streams() {
        let topo = sample_topology(SimoMac, 3, 2, Real, 1, ceiling()).unwrap();
        let s = build_mac_streams(&topo, 1, 2.5).unwrap();
        assert_eq!(s.stream_points(), vec![-2.5, 0.0, 2.5]);
        let u = [c(1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0)];
        let y = s.received(&u);
        let g = &s.gains;
        for l in 0..2 {
            let expect = 2.5 * (g[(l, 0)].re - g[(l, 1)].re + g[(l, 2)].re);
            assert!((y[l].re - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn mac_map_is_injective_at_q3() {
        let topo = sample_topology(SimoMac, 3, 2, Real, 6, ceiling()).unwrap();
        let s = build_mac_streams(&topo, 3, 1.0).unwrap();
        let mut pts = Vec::new();
        for a in -3..=3 {
            for b in -3..=3 {
                for cc in -3..=3 {
                    let y = s.received(&[c(a as f64, 0.0), c(b as f64, 0.0), c(cc as f64, 0.0)]);
                    pts.push((y[0].re, y[1].re));
                }
            }
        }
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                let d = ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt();
                assert!(d > 1e-9);
            }
        }
    }
}
