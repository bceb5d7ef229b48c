//! X-channel and SIMO MAC topologies, channel generation and AWGN.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{c, condition_number, CMat, CVec};
use crate::{seed, Error, Result};

pub const DEFAULT_COND_CEILING: f64 = 1e6;
pub const MAX_RESAMPLES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarField {
    Real,
    Complex,
}

impl ScalarField {
    /// Real dimensions carried by one scalar.
    pub fn real_dims(self) -> usize {
        match self {
            ScalarField::Real => 1,
            ScalarField::Complex => 2,
        }
    }

    pub fn is_complex(self) -> bool {
        self == ScalarField::Complex
    }

    pub fn tag(self) -> &'static str {
        match self {
            ScalarField::Real => "real",
            ScalarField::Complex => "complex",
        }
    }
}

/// Channel gains from one transmitter to one receiver (rows: receive
/// antennas, columns: transmit antennas).
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMatrix {
    entries: CMat,
    condition_number: f64,
}

impl ChannelMatrix {
    pub fn new(entries: CMat) -> Self {
        let condition_number = condition_number(&entries);
        ChannelMatrix { entries, condition_number }
    }

    pub fn entries(&self) -> &CMat {
        &self.entries
    }

    pub fn condition_number(&self) -> f64 {
        self.condition_number
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TopologyKind {
    #[serde(rename = "kx2")]
    KbyTwo,
    #[serde(rename = "2xk")]
    TwoByK,
    #[serde(rename = "mac")]
    SimoMac,
}

impl TopologyKind {
    pub fn tag(self) -> &'static str {
        match self {
            TopologyKind::KbyTwo => "kx2",
            TopologyKind::TwoByK => "2xk",
            TopologyKind::SimoMac => "mac",
        }
    }
}

/// A fully connected network. `channel(tx, rx)` is `H^{tx,rx}`.
#[derive(Clone, Debug, PartialEq)]
pub struct XTopology {
    kind: TopologyKind,
    k: usize,
    m: usize,
    field: ScalarField,
    seed: u64,
    channels: Vec<Vec<ChannelMatrix>>,
}

impl XTopology {
    /// Builds a topology from explicit matrices indexed `[tx][rx]`.
    pub fn from_matrices(
        kind: TopologyKind,
        field: ScalarField,
        seed: u64,
        channels: Vec<Vec<CMat>>,
    ) -> Result<Self> {
        let n_tx = channels.len();
        let n_rx = channels.first().map_or(0, |r| r.len());
        if n_tx == 0 || n_rx == 0 || channels.iter().any(|r| r.len() != n_rx) {
            return Err(Error::invalid("every transmitter needs a channel to every receiver"));
        }
        let rows = channels[0][0].nrows();
        let cols = channels[0][0].ncols();
        if channels.iter().flatten().any(|h| h.nrows() != rows || h.ncols() != cols) {
            return Err(Error::invalid("channel matrices must share one shape"));
        }
        if field == ScalarField::Real && channels.iter().flatten().any(|h| crate::linalg::max_imag(h) != 0.0) {
            return Err(Error::invalid("real topology with complex entries"));
        }
        let (k, m) = match kind {
            TopologyKind::KbyTwo => {
                if n_rx != 2 || rows != cols {
                    return Err(Error::invalid("K×2 topology needs 2 receivers and square channels"));
                }
                (n_tx, rows)
            }
            TopologyKind::TwoByK => {
                if n_tx != 2 || rows != cols {
                    return Err(Error::invalid("2×K topology needs 2 transmitters and square channels"));
                }
                (n_rx, rows)
            }
            TopologyKind::SimoMac => {
                if n_rx != 1 || cols != 1 {
                    return Err(Error::invalid("SIMO MAC needs one receiver and single-antenna users"));
                }
                (n_tx, rows)
            }
        };
        let channels = channels
            .into_iter()
            .map(|row| row.into_iter().map(ChannelMatrix::new).collect())
            .collect();
        Ok(XTopology { kind, k, m, field, seed, channels })
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    /// K for the X channels, the number of users for the MAC.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Antennas per node (receive antennas for the MAC).
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn field(&self) -> ScalarField {
        self.field
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_tx(&self) -> usize {
        self.channels.len()
    }

    pub fn n_rx(&self) -> usize {
        self.channels[0].len()
    }

    pub fn channel(&self, tx: usize, rx: usize) -> &ChannelMatrix {
        &self.channels[tx][rx]
    }

    pub fn h(&self, tx: usize, rx: usize) -> &CMat {
        self.channels[tx][rx].entries()
    }

    pub fn tx_antennas(&self) -> usize {
        self.channels[0][0].entries().ncols()
    }

    pub fn rx_antennas(&self) -> usize {
        self.channels[0][0].entries().nrows()
    }

    pub fn to_doc(&self) -> TopologyDoc {
        let mut channels = Vec::new();
        for (tx, row) in self.channels.iter().enumerate() {
            for (rx, h) in row.iter().enumerate() {
                let e = h.entries();
                let mut re = Vec::with_capacity(e.len());
                let mut im = Vec::with_capacity(e.len());
                for i in 0..e.nrows() {
                    for j in 0..e.ncols() {
                        re.push(e[(i, j)].re);
                        im.push(e[(i, j)].im);
                    }
                }
                channels.push(ChannelDoc {
                    tx,
                    rx,
                    rows: e.nrows(),
                    cols: e.ncols(),
                    re,
                    im: self.field.is_complex().then_some(im),
                });
            }
        }
        TopologyDoc { kind: self.kind, field: self.field, k: self.k, m: self.m, seed: self.seed, channels }
    }

    pub fn from_doc(doc: &TopologyDoc) -> Result<Self> {
        let n_tx = doc.channels.iter().map(|c| c.tx + 1).max().unwrap_or(0);
        let n_rx = doc.channels.iter().map(|c| c.rx + 1).max().unwrap_or(0);
        let mut grid: Vec<Vec<Option<CMat>>> = vec![vec![None; n_rx]; n_tx];
        for ch in &doc.channels {
            if ch.re.len() != ch.rows * ch.cols || ch.im.as_ref().is_some_and(|im| im.len() != ch.re.len()) {
                return Err(Error::invalid(format!("channel ({}, {}) has wrong entry count", ch.tx, ch.rx)));
            }
            let m = CMat::from_fn(ch.rows, ch.cols, |i, j| {
                let idx = i * ch.cols + j;
                c(ch.re[idx], ch.im.as_ref().map_or(0.0, |im| im[idx]))
            });
            grid[ch.tx][ch.rx] = Some(m);
        }
        let channels = grid
            .into_iter()
            .map(|row| row.into_iter().collect::<Option<Vec<_>>>())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::invalid("topology document is missing channels"))?;
        let topo = XTopology::from_matrices(doc.kind, doc.field, doc.seed, channels)?;
        if topo.k != doc.k || topo.m != doc.m {
            return Err(Error::invalid("K or M does not match the channel shapes"));
        }
        Ok(topo)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("topology serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: TopologyDoc = serde_json::from_str(s).map_err(|e| Error::invalid(e.to_string()))?;
        Self::from_doc(&doc)
    }
}

/// JSON replay format for a topology; entries are row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDoc {
    pub kind: TopologyKind,
    pub field: ScalarField,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
    pub channels: Vec<ChannelDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelDoc {
    pub tx: usize,
    pub rx: usize,
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<Vec<f64>>,
}

fn draw_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, field: ScalarField) -> CMat {
    let mut m = CMat::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = if field.is_complex() { rng.sample(StandardNormal) } else { 0.0 };
            m[(i, j)] = c(re, im);
        }
    }
    m
}

/// Draws i.i.d. standard normal channels, resampling any square matrix whose
/// condition number exceeds `cond_ceiling`. The MAC ignores `k` and `m` and
/// always has three single-antenna users and one two-antenna receiver.
pub fn sample_topology(
    kind: TopologyKind,
    k: usize,
    m: usize,
    field: ScalarField,
    seed: u64,
    cond_ceiling: f64,
) -> Result<XTopology> {
    let (n_tx, n_rx, rows, cols) = match kind {
        TopologyKind::KbyTwo => (k, 2, m, m),
        TopologyKind::TwoByK => (2, k, m, m),
        TopologyKind::SimoMac => (3, 1, 2, 1),
    };
    if kind != TopologyKind::SimoMac && (k < 2 || m < 1) {
        return Err(Error::invalid(format!("need K ≥ 2 and M ≥ 1, got K={k}, M={m}")));
    }
    if !(cond_ceiling >= 1.0) {
        return Err(Error::invalid("condition-number ceiling must be at least 1"));
    }
    let mut rng = seed::rng(seed);
    let mut resamples = 0;
    let mut channels = Vec::with_capacity(n_tx);
    for _ in 0..n_tx {
        let mut row = Vec::with_capacity(n_rx);
        for _ in 0..n_rx {
            loop {
                let h = draw_matrix(&mut rng, rows, cols, field);
                if rows != cols || condition_number(&h) <= cond_ceiling {
                    row.push(h);
                    break;
                }
                resamples += 1;
                if resamples > MAX_RESAMPLES {
                    return Err(Error::Singular(format!(
                        "no channel below condition number {cond_ceiling} after {MAX_RESAMPLES} resamples"
                    )));
                }
            }
        }
        channels.push(row);
    }
    XTopology::from_matrices(kind, field, seed, channels)
}

/// Additive white Gaussian noise with the given variance per real dimension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub variance: f64,
}

/// Noiseless `Σ_j H^{j,i} x^j` for every receiver `i`.
pub fn noiseless_receive(topology: &XTopology, x: &[CVec]) -> Result<Vec<CVec>> {
    if x.len() != topology.n_tx() {
        return Err(Error::invalid(format!("expected {} transmit vectors, got {}", topology.n_tx(), x.len())));
    }
    let dim = topology.tx_antennas();
    if let Some(bad) = x.iter().find(|v| v.len() != dim) {
        return Err(Error::invalid(format!("transmit vector has length {}, expected {dim}", bad.len())));
    }
    Ok((0..topology.n_rx())
        .map(|rx| {
            let mut y = CVec::zeros(topology.rx_antennas());
            for (tx, xv) in x.iter().enumerate() {
                y += topology.h(tx, rx) * xv;
            }
            y
        })
        .collect())
}

/// `y^i = Σ_j H^{j,i} x^j + z^i`. Noise is drawn receiver by receiver,
/// antenna by antenna (real part, then imaginary part in complex mode).
pub fn transmit(topology: &XTopology, x: &[CVec], noise: NoiseModel, seed: u64) -> Result<Vec<CVec>> {
    if !(noise.variance >= 0.0) {
        return Err(Error::invalid("noise variance must be non-negative"));
    }
    let mut y = noiseless_receive(topology, x)?;
    if noise.variance > 0.0 {
        let sigma = noise.variance.sqrt();
        let mut rng = seed::rng(seed);
        let complex = topology.field().is_complex();
        for yv in y.iter_mut() {
            for z in yv.iter_mut() {
                let re: f64 = rng.sample(StandardNormal);
                z.re += sigma * re;
                if complex {
                    let im: f64 = rng.sample(StandardNormal);
                    z.im += sigma * im;
                }
            }
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::inverse;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn kx2_scalar_gains() {
        let t = sample_topology(TopologyKind::KbyTwo, 2, 1, ScalarField::Real, 7, DEFAULT_COND_CEILING).unwrap();
        assert_eq!((t.n_tx(), t.n_rx()), (2, 2));
        for tx in 0..2 {
            for rx in 0..2 {
                let h = t.h(tx, rx)[(0, 0)];
                assert!(h.re.is_finite() && h.re != 0.0 && h.im == 0.0);
            }
        }
    }

    #[test]
    fn mac_shape() {
        let t = sample_topology(TopologyKind::SimoMac, 0, 0, ScalarField::Real, 1, DEFAULT_COND_CEILING).unwrap();
        assert_eq!((t.n_tx(), t.n_rx(), t.rx_antennas(), t.tx_antennas()), (3, 1, 2, 1));
        assert_eq!((t.k(), t.m()), (3, 2));
    }

    #[test]
    fn twobyk_complex_invertible() {
        let t = sample_topology(TopologyKind::TwoByK, 3, 2, ScalarField::Complex, 42, DEFAULT_COND_CEILING).unwrap();
        assert_eq!(t.n_tx() * t.n_rx(), 6);
        for tx in 0..2 {
            for rx in 0..3 {
                let h = t.h(tx, rx);
                assert_eq!((h.nrows(), h.ncols()), (2, 2));
                assert!(h.determinant().norm() > 1e-12);
                assert!(inverse(h).is_ok());
            }
        }
    }

    #[test]
    fn tight_ceiling_fails() {
        let r = sample_topology(TopologyKind::KbyTwo, 3, 3, ScalarField::Real, 5, 1.0 + 1e-9);
        assert!(matches!(r, Err(Error::Singular(_))));
    }

    #[test]
    fn degenerate_single_link() {
        let t = XTopology::from_matrices(
            TopologyKind::SimoMac,
            ScalarField::Real,
            0,
            vec![vec![crate::linalg::from_real_rows(&[&[2.0]])]],
        )
        .unwrap();
        let y = transmit(&t, &[CVec::from_element(1, c(3.0, 0.0))], NoiseModel { variance: 0.0 }, 0).unwrap();
        assert_eq!(y[0][0], c(6.0, 0.0));
    }

    #[test]
    fn zero_in_zero_out() {
        let t = sample_topology(TopologyKind::KbyTwo, 3, 2, ScalarField::Complex, 9, DEFAULT_COND_CEILING).unwrap();
        let x = vec![CVec::zeros(2); 3];
        let y = transmit(&t, &x, NoiseModel { variance: 0.0 }, 1).unwrap();
        assert!(y.iter().all(|v| v.iter().all(|z| *z == c(0.0, 0.0))));
    }

    #[test]
    fn dimension_mismatch() {
        let t = sample_topology(TopologyKind::KbyTwo, 2, 2, ScalarField::Real, 9, DEFAULT_COND_CEILING).unwrap();
        assert!(transmit(&t, &[CVec::zeros(2)], NoiseModel { variance: 0.0 }, 1).is_err());
        assert!(transmit(&t, &[CVec::zeros(2), CVec::zeros(3)], NoiseModel { variance: 0.0 }, 1).is_err());
    }

    #[test]
    fn noiseless_matches_scalar_loops() {
        let t = sample_topology(TopologyKind::KbyTwo, 3, 2, ScalarField::Complex, 21, DEFAULT_COND_CEILING).unwrap();
        let mut rng = seed::rng(4);
        let x: Vec<CVec> = (0..3).map(|_| CVec::from_fn(2, |_, _| c(rng.random(), rng.random()))).collect();
        let y = transmit(&t, &x, NoiseModel { variance: 0.0 }, 0).unwrap();
        for rx in 0..2 {
            for l in 0..2 {
                let mut acc = c(0.0, 0.0);
                for tx in 0..3 {
                    for n in 0..2 {
                        acc += t.h(tx, rx)[(l, n)] * x[tx][n];
                    }
                }
                assert!((acc - y[rx][l]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn noise_variance_is_calibrated() {
        let t = XTopology::from_matrices(
            TopologyKind::SimoMac,
            ScalarField::Complex,
            0,
            vec![vec![CMat::from_element(2, 1, c(1.0, 0.0))]],
        )
        .unwrap();
        let x = [CVec::from_element(1, c(0.5, -0.25))];
        let clean = noiseless_receive(&t, &x).unwrap();
        let mut sum = [0.0f64; 4];
        let draws = 50_000;
        for d in 0..draws {
            let y = transmit(&t, &x, NoiseModel { variance: 1.0 }, seed::derive(77, &[d])).unwrap();
            for l in 0..2 {
                let z = y[0][l] - clean[0][l];
                sum[2 * l] += z.re * z.re;
                sum[2 * l + 1] += z.im * z.im;
            }
        }
        for s in sum {
            let var = s / draws as f64;
            assert!((var - 1.0).abs() < 0.02, "{var}");
        }
    }

    #[test]
    fn json_roundtrip() {
        for kind in [TopologyKind::KbyTwo, TopologyKind::TwoByK, TopologyKind::SimoMac] {
            for field in [ScalarField::Real, ScalarField::Complex] {
                let t = sample_topology(kind, 3, 2, field, 5, DEFAULT_COND_CEILING).unwrap();
                let back = XTopology::from_json(&t.to_json()).unwrap();
                assert_eq!(back, t);
            }
        }
    }

    #[test]
    fn seeded_determinism() {
        let a = sample_topology(TopologyKind::TwoByK, 3, 2, ScalarField::Complex, 99, DEFAULT_COND_CEILING).unwrap();
        let b = sample_topology(TopologyKind::TwoByK, 3, 2, ScalarField::Complex, 99, DEFAULT_COND_CEILING).unwrap();
        assert_eq!(a, b);
        let x = vec![CVec::from_element(2, c(1.0, 1.0)); 2];
        let n = NoiseModel { variance: 1.0 };
        assert_eq!(transmit(&a, &x, n, 3).unwrap(), transmit(&b, &x, n, 3).unwrap());
    }

    proptest! {
        #[test]
        fn transmit_is_linear(seed in 0u64..1000, s in -3.0f64..3.0) {
            let t = sample_topology(TopologyKind::KbyTwo, 2, 2, ScalarField::Complex, seed, DEFAULT_COND_CEILING).unwrap();
            let mut rng = crate::seed::rng(seed + 1);
            let x1: Vec<CVec> = (0..2).map(|_| CVec::from_fn(2, |_, _| c(rng.random(), rng.random()))).collect();
            let x2: Vec<CVec> = (0..2).map(|_| CVec::from_fn(2, |_, _| c(rng.random(), rng.random()))).collect();
            let sum: Vec<CVec> = x1.iter().zip(&x2).map(|(a, b)| a + b * c(s, 0.0)).collect();
            let n = NoiseModel { variance: 0.0 };
            let y1 = transmit(&t, &x1, n, 0).unwrap();
            let y2 = transmit(&t, &x2, n, 0).unwrap();
            let ys = transmit(&t, &sum, n, 0).unwrap();
            for rx in 0..2 {
                let d = &ys[rx] - (&y1[rx] + &y2[rx] * c(s, 0.0));
                prop_assert!(d.norm() < 1e-12);
            }
        }
    }
}
