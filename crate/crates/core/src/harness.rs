//! Experiment configuration, Monte Carlo orchestration and result output.
//!
//! Every random stream is derived from the configured seed and a fixed index
//! path, and results are merged in trial order, so the CSV bytes depend only
//! on the configuration and never on the worker count.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::alignment::{
    build_mac_streams, design_directions_2xk, kx2_precoder, precode_2xk, received_model_2xk, received_model_kx2,
    verify_alignment_kx2, verify_directions_2xk, DirectionSet2xK, DirectionSetKx2, Kx2Precoder, MessageRef, Messages,
    ReceiverModel, DEFAULT_ALIGNMENT_TOL,
};
use crate::constellation::{draw_symbol, ScalingLaw};
use crate::decoder::{
    error_probability_bound, reported_rate, PreparedTarget, DEFAULT_DISTINCT_TOL, DEFAULT_ENUMERATION_CAP,
    DEFAULT_EXHAUSTIVE_LIMIT,
};
use crate::diophantine::{
    badly_approximable_profile, calibrate_complex_dirichlet, census_slope, dirichlet_hybrid_bound,
    estimate_approximable_measure, gaussian_lattice_census, kg_series, min_form_distance, ApproxFunction, FormMode,
    LinearFormsPoint, SeriesVariant, Verdict, DEFAULT_FORM_BUDGET,
};
use crate::linalg::{c, least_squares_slope, CVec};
use crate::xchannel::{sample_topology, transmit, NoiseModel, ScalarField, TopologyKind, XTopology, DEFAULT_COND_CEILING};
use crate::{seed, Error, Result, Symbol};

pub const CSV_HEADER: [&str; 13] =
    ["scenario", "seed", "trial", "K", "M", "field", "Q", "A", "P", "d_min", "err_rate", "rate_bound", "dof_estimate"];
pub const DIOPH_HEADER: [&str; 8] = ["m", "n", "mode", "field", "N", "statistic", "value", "seed"];
pub const CENSUS_HEADER: [&str; 9] = ["scenario", "seed", "trial", "K", "M", "field", "max_residual", "feasible", "min_rank"];

pub const DEFAULT_Q_LIST: [u32; 5] = [2, 3, 4, 6, 8];
/// Target whitened `d_min` in units of the noise deviation when `A_rule.scale`
/// is `"calibrated"`.
pub const DEFAULT_MARGIN: f64 = 6.0;
pub const DEFAULT_MAX_ATTEMPTS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "kx2")]
    Kx2,
    #[serde(rename = "2xk")]
    TwoByK,
    #[serde(rename = "mac")]
    Mac,
    #[serde(rename = "dioph")]
    Dioph,
    #[serde(rename = "align-census")]
    AlignCensus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MacStrategy {
    PerAntenna,
    Joint,
}

impl MacStrategy {
    pub fn tag(self) -> &'static str {
        match self {
            MacStrategy::PerAntenna => "mac-per-antenna",
            MacStrategy::Joint => "mac-joint",
        }
    }

    /// `A = Q²` for single-antenna decoding, `A = Q^{1/2}` for joint decoding.
    pub fn exponent(self) -> f64 {
        match self {
            MacStrategy::PerAntenna => 2.0,
            MacStrategy::Joint => 0.5,
        }
    }

    pub fn target_dof(self) -> f64 {
        match self {
            MacStrategy::PerAntenna => 1.0 / 3.0,
            MacStrategy::Joint => 2.0 / 3.0,
        }
    }

    fn antennas(self) -> Vec<usize> {
        match self {
            MacStrategy::PerAntenna => vec![0],
            MacStrategy::Joint => vec![0, 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScaleRule {
    Fixed(f64),
    Named(String),
}

impl Default for ScaleRule {
    fn default() -> Self {
        ScaleRule::Named("calibrated".into())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ARule {
    /// Defaults to `K` for the X channels and to the strategy exponent for the MAC.
    #[serde(default)]
    pub exponent: Option<f64>,
    #[serde(default)]
    pub scale: ScaleRule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub alignment: f64,
    pub distinct: f64,
    pub cond_ceiling: f64,
    pub enumeration_cap: usize,
    pub exhaustive_limit: usize,
    pub max_attempts: usize,
    pub margin: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            alignment: DEFAULT_ALIGNMENT_TOL,
            distinct: DEFAULT_DISTINCT_TOL,
            cond_ceiling: DEFAULT_COND_CEILING,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            exhaustive_limit: DEFAULT_EXHAUSTIVE_LIMIT,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            margin: DEFAULT_MARGIN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiophCell {
    pub m: usize,
    pub n: usize,
    pub mode: FormMode,
    #[serde(default = "real_field")]
    pub field: ScalarField,
    /// Defaults to the critical hybrid exponent with `epsilon = 0.5`.
    #[serde(default)]
    pub psi: Option<ApproxFunction>,
    #[serde(rename = "N_list", default = "default_n_list")]
    pub n_list: Vec<usize>,
    #[serde(rename = "N0_list", default = "default_n0_list")]
    pub n0_list: Vec<usize>,
    #[serde(rename = "N_max", default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(rename = "R_max", default = "default_r_max")]
    pub r_max: usize,
}

fn real_field() -> ScalarField {
    ScalarField::Real
}
fn default_n_list() -> Vec<usize> {
    vec![5, 10, 20]
}
fn default_n0_list() -> Vec<usize> {
    vec![2, 20]
}
fn default_n_max() -> usize {
    60
}
fn default_samples() -> usize {
    200
}
fn default_r_max() -> usize {
    1000
}

impl DiophCell {
    pub fn basic(m: usize, n: usize, mode: FormMode, field: ScalarField) -> Self {
        DiophCell {
            m,
            n,
            mode,
            field,
            psi: None,
            n_list: default_n_list(),
            n0_list: default_n0_list(),
            n_max: default_n_max(),
            samples: default_samples(),
            r_max: default_r_max(),
        }
    }

    pub fn psi(&self) -> ApproxFunction {
        self.psi.clone().unwrap_or_else(|| {
            ApproxFunction::power(-FormMode::Hybrid.dirichlet_exponent(self.m, self.n), 0.5)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiophConfig {
    pub cells: Vec<DiophCell>,
    pub census_r_max: usize,
    pub census_r_lo: usize,
    pub calibration_samples: usize,
}

impl Default for DiophConfig {
    fn default() -> Self {
        DiophConfig {
            cells: vec![
                DiophCell::basic(2, 1, FormMode::Hybrid, ScalarField::Real),
                DiophCell::basic(2, 2, FormMode::Hybrid, ScalarField::Real),
            ],
            census_r_max: 120,
            census_r_lo: 20,
            calibration_samples: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(rename = "K", default)]
    pub k: Option<usize>,
    #[serde(rename = "M", default)]
    pub m: Option<usize>,
    #[serde(default = "real_field")]
    pub field: ScalarField,
    #[serde(rename = "Q_list", default = "default_q_list")]
    pub q_list: Vec<u32>,
    #[serde(rename = "A_rule", default)]
    pub a_rule: ARule,
    #[serde(default = "default_noise")]
    pub noise_variance: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Message draws per trial and `Q`.
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub strategies: Option<Vec<MacStrategy>>,
    /// Topologies checked by `align-census`; both by default.
    #[serde(default)]
    pub kinds: Option<Vec<TopologyKind>>,
    #[serde(default)]
    pub dioph: Option<DiophConfig>,
}

fn default_q_list() -> Vec<u32> {
    DEFAULT_Q_LIST.to_vec()
}
fn default_noise() -> f64 {
    1.0
}
fn default_trials() -> usize {
    20
}
fn default_draws() -> usize {
    1000
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario) -> Self {
        ExperimentConfig {
            scenario,
            k: None,
            m: None,
            field: ScalarField::Real,
            q_list: default_q_list(),
            a_rule: ARule::default(),
            noise_variance: default_noise(),
            trials: default_trials(),
            draws: default_draws(),
            seed: 0,
            output: None,
            tolerances: Tolerances::default(),
            threads: None,
            strategies: None,
            kinds: None,
            dioph: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// TOML for `.toml` files, JSON otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "toml") {
            Self::from_toml(&text)
        } else {
            Self::from_json(&text)
        }
    }

    /// `K` with the scenario default.
    pub fn k(&self) -> usize {
        self.k.unwrap_or(match self.scenario {
            Scenario::Mac => 3,
            _ => 2,
        })
    }

    pub fn m(&self) -> usize {
        self.m.unwrap_or(match self.scenario {
            Scenario::Mac => 2,
            _ => 1,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return bad("trials must be positive".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        let t = &self.tolerances;
        if !(t.alignment > 0.0 && t.distinct > 0.0 && t.cond_ceiling >= 1.0 && t.margin > 0.0) {
            return bad("tolerances must be positive (cond_ceiling ≥ 1)".into());
        }
        if t.enumeration_cap == 0 || t.max_attempts == 0 {
            return bad("enumeration_cap and max_attempts must be positive".into());
        }
        match self.scenario {
            Scenario::Kx2 | Scenario::TwoByK | Scenario::Mac => {
                if self.draws == 0 {
                    return bad("draws must be positive".into());
                }
                if self.q_list.is_empty() || self.q_list.contains(&0) {
                    return bad("Q_list must be non-empty with every Q ≥ 1".into());
                }
                if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
                    return bad("noise_variance must be a finite non-negative number".into());
                }
                if let Some(e) = self.a_rule.exponent {
                    if !(e >= 0.0 && e.is_finite()) {
                        return bad("A_rule.exponent must be finite and non-negative".into());
                    }
                }
                match &self.a_rule.scale {
                    ScaleRule::Fixed(s) if !(*s > 0.0 && s.is_finite()) => {
                        return bad("A_rule.scale must be positive".into());
                    }
                    ScaleRule::Named(s) if s != "calibrated" => {
                        return bad(format!("A_rule.scale must be a number or \"calibrated\", got {s:?}"));
                    }
                    _ => {}
                }
            }
            Scenario::Dioph => {
                let d = self.dioph.clone().unwrap_or_default();
                for (i, cell) in d.cells.iter().enumerate() {
                    if cell.m == 0 || cell.n == 0 || cell.samples == 0 || cell.r_max == 0 {
                        return bad(format!("dioph cell {i}: m, n, samples and R_max must be positive"));
                    }
                    if cell.mode == FormMode::Hybrid && cell.m + 1 <= cell.n {
                        return bad(format!("dioph cell {i}: hybrid mode needs m+1 > n"));
                    }
                    if cell.n_list.contains(&0) || cell.n0_list.iter().any(|&n0| n0 >= cell.n_max) {
                        return bad(format!("dioph cell {i}: need N ≥ 1 and every N0 < N_max"));
                    }
                    cell.psi().validate().map_err(|e| Error::Config(format!("dioph cell {i}: {e}")))?;
                }
                if d.census_r_max == 0 || d.census_r_lo >= d.census_r_max || d.calibration_samples == 0 {
                    return bad("census radii must satisfy 0 ≤ r_lo < r_max and calibration_samples > 0".into());
                }
            }
            Scenario::AlignCensus => {}
        }
        match self.scenario {
            Scenario::Kx2 | Scenario::TwoByK | Scenario::AlignCensus => {
                if self.k() < 2 || self.m() < 1 {
                    return bad(format!("need K ≥ 2 and M ≥ 1, got K={}, M={}", self.k(), self.m()));
                }
            }
            Scenario::Mac => {
                if self.k() != 3 || self.m() != 2 {
                    return bad("the MAC scenario has K=3 users and M=2 receive antennas".into());
                }
            }
            Scenario::Dioph => {}
        }
        Ok(())
    }
}

/// One CSV row: a (trial, Q) cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub scenario: String,
    pub seed: u64,
    pub trial: usize,
    pub k: usize,
    pub m: usize,
    pub field: ScalarField,
    pub q: u32,
    pub a: f64,
    pub p: f64,
    pub d_min: f64,
    pub err_rate: f64,
    pub rate_bound: f64,
    pub dof_estimate: f64,
    /// Symbol decisions behind `err_rate`.
    pub decisions: usize,
    pub noise_sigma: f64,
}

impl TrialRecord {
    /// The analytic error bound at this cell's `d_min`; 1 without noise.
    pub fn error_bound(&self) -> f64 {
        if self.noise_sigma > 0.0 {
            error_probability_bound(self.d_min, self.noise_sigma).map_or(1.0, |b| b.exp_form)
        } else if self.d_min > 0.0 {
            0.0
        } else {
            1.0
        }
    }

    /// True when the empirical rate exceeds the bound by more than three
    /// binomial standard errors.
    pub fn violates_bound(&self) -> bool {
        let b = self.error_bound();
        let se = (b * (1.0 - b) / self.decisions.max(1) as f64).sqrt();
        self.err_rate > b + 3.0 * se + 1e-12
    }

    fn csv_row(&self) -> [String; 13] {
        [
            self.scenario.clone(),
            self.seed.to_string(),
            self.trial.to_string(),
            self.k.to_string(),
            self.m.to_string(),
            self.field.tag().to_string(),
            self.q.to_string(),
            self.a.to_string(),
            self.p.to_string(),
            self.d_min.to_string(),
            self.err_rate.to_string(),
            self.rate_bound.to_string(),
            self.dof_estimate.to_string(),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<TrialRecord>,
    pub csv: String,
    pub summary: serde_json::Value,
}

fn write_csv<const N: usize>(header: [&str; N], rows: impl IntoIterator<Item = [String; N]>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn records_to_csv(records: &[TrialRecord]) -> Result<String> {
    write_csv(CSV_HEADER, records.iter().map(TrialRecord::csv_row))
}

/// Least-squares slope of the mean rate per `Q` against `½·log₂P` (real) or
/// `log₂P` (complex).
pub fn estimate_dof_slope(records: &[TrialRecord]) -> Result<f64> {
    let mut by_q: BTreeMap<u32, (f64, f64, usize, ScalarField)> = BTreeMap::new();
    for r in records {
        let e = by_q.entry(r.q).or_insert((0.0, 0.0, 0, r.field));
        e.0 += r.rate_bound;
        e.1 += r.p;
        e.2 += 1;
    }
    if by_q.len() < 3 {
        return Err(Error::invalid(format!("need records at 3 or more distinct Q values, got {}", by_q.len())));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = by_q
        .values()
        .map(|&(rate, p, n, field)| {
            let lp = (p / n as f64).log2();
            (if field.is_complex() { lp } else { 0.5 * lp }, rate / n as f64)
        })
        .unzip();
    if ys.iter().all(|&y| y == 0.0) {
        return Err(Error::invalid("every rate is zero; the slope is degenerate"));
    }
    least_squares_slope(&xs, &ys).ok_or_else(|| Error::invalid("degenerate power grid"))
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) })
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Runs the configured scenario.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    match config.scenario {
        Scenario::Kx2 => run_kx2(config),
        Scenario::TwoByK => run_2xk(config),
        Scenario::Mac => run_mac(config),
        Scenario::Dioph => run_dioph(config),
        Scenario::AlignCensus => run_align_census(config),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scheme {
    Kx2,
    TwoByK,
    Mac(MacStrategy),
}

impl Scheme {
    fn tag(self) -> &'static str {
        match self {
            Scheme::Kx2 => "kx2",
            Scheme::TwoByK => "2xk",
            Scheme::Mac(s) => s.tag(),
        }
    }

    fn kind(self) -> TopologyKind {
        match self {
            Scheme::Kx2 => TopologyKind::KbyTwo,
            Scheme::TwoByK => TopologyKind::TwoByK,
            Scheme::Mac(_) => TopologyKind::SimoMac,
        }
    }

    /// Real scalar streams per transmit antenna.
    fn streams(self, k: usize) -> u32 {
        match self {
            Scheme::Kx2 => 2,
            Scheme::TwoByK => k as u32,
            Scheme::Mac(_) => 1,
        }
    }

    fn exponent(self, cfg: &ExperimentConfig) -> f64 {
        cfg.a_rule.exponent.unwrap_or(match self {
            Scheme::Kx2 | Scheme::TwoByK => cfg.k() as f64,
            Scheme::Mac(s) => s.exponent(),
        })
    }
}

enum Plan {
    Kx2(Kx2Precoder),
    TwoByK(DirectionSet2xK),
    Mac,
}

struct Realization {
    topology: XTopology,
    plan: Plan,
    models: Vec<ReceiverModel>,
    antennas: Vec<usize>,
}

struct Target {
    rx: usize,
    msg: MessageRef,
    prepared: PreparedTarget,
}

#[derive(Debug)]
enum Rejection {
    Singular,
    Infeasible,
    Gamma,
}

impl Realization {
    fn build(scheme: Scheme, cfg: &ExperimentConfig, topo_seed: u64) -> Result<Self> {
        let (k, m) = (cfg.k(), cfg.m());
        let topology = sample_topology(scheme.kind(), k, m, cfg.field, topo_seed, cfg.tolerances.cond_ceiling)?;
        let (plan, models, antennas) = match scheme {
            Scheme::Kx2 => {
                let dirs = DirectionSetKx2::identity(m);
                let pre = kx2_precoder(&topology, &dirs)?;
                let models = received_model_kx2(&topology, &dirs)?;
                (Plan::Kx2(pre), models, (0..m).collect())
            }
            Scheme::TwoByK => {
                let dirs = design_directions_2xk(&topology, cfg.tolerances.alignment)?;
                let models = received_model_2xk(&topology, &dirs)?;
                (Plan::TwoByK(dirs), models, (0..m).collect())
            }
            Scheme::Mac(s) => {
                let model = build_mac_streams(&topology, 1, 1.0)?.model(cfg.field);
                (Plan::Mac, vec![model], s.antennas())
            }
        };
        Ok(Realization { topology, plan, models, antennas })
    }

    fn targets(&self, q: u32, tol: &Tolerances) -> Result<Vec<Target>> {
        let mut out = Vec::new();
        for (rx, model) in self.models.iter().enumerate() {
            let (raw, origins) = model.raw_gains(q, &self.antennas);
            for (_, msg) in model.desired() {
                let t = origins
                    .iter()
                    .position(|o| o.parts == [msg])
                    .ok_or_else(|| Error::invalid("desired stream missing from the receive model"))?;
                let prepared = PreparedTarget::new(&raw, t, tol.enumeration_cap, tol.exhaustive_limit)?;
                out.push(Target { rx, msg, prepared });
            }
        }
        Ok(out)
    }

    fn draw_messages<R: Rng>(&self, rng: &mut R, q: u32, k: usize, m: usize) -> Messages {
        let complex = self.topology.field().is_complex();
        let vec_of = |len: usize, rng: &mut R| {
            CVec::from_fn(len, |_, _| {
                let s = draw_symbol(rng, q, complex);
                c(s.re as f64, s.im as f64)
            })
        };
        match self.plan {
            Plan::Mac => Messages { u: (0..3).map(|_| vec_of(1, rng)).collect(), v: Vec::new() },
            _ => {
                let u = (0..k).map(|_| vec_of(m, rng)).collect();
                let v = (0..k).map(|_| vec_of(m, rng)).collect();
                Messages { u, v }
            }
        }
    }

    fn encode(&self, msgs: &Messages, amplitude: f64) -> Result<Vec<CVec>> {
        match &self.plan {
            Plan::Kx2(pre) => pre.apply(&msgs.u, &msgs.v, amplitude),
            Plan::TwoByK(dirs) => precode_2xk(dirs, &msgs.u, &msgs.v, amplitude),
            Plan::Mac => Ok(msgs.u.iter().map(|u| u * c(amplitude, 0.0)).collect()),
        }
    }
}

struct Accepted {
    trial: usize,
    topo_seed: u64,
    /// Minimum whitened `d_min` over targets at `A = 1`, per `Q`.
    d1: Vec<f64>,
}

struct TrialOutcome {
    accepted: Option<Accepted>,
    rejections: Vec<Rejection>,
}

fn classify(e: &Error) -> Option<Rejection> {
    match e {
        Error::Singular(_) => Some(Rejection::Singular),
        Error::Infeasible(_) => Some(Rejection::Infeasible),
        _ => None,
    }
}

fn accept_trial(scheme: Scheme, cfg: &ExperimentConfig, trial: usize) -> Result<TrialOutcome> {
    let mut rejections = Vec::new();
    for attempt in 0..cfg.tolerances.max_attempts {
        let topo_seed = seed::derive(cfg.seed, &[trial as u64, attempt as u64]);
        let real = match Realization::build(scheme, cfg, topo_seed) {
            Ok(r) => r,
            Err(e) => match classify(&e) {
                Some(r) => {
                    rejections.push(r);
                    continue;
                }
                None => return Err(e),
            },
        };
        let mut d1 = Vec::with_capacity(cfg.q_list.len());
        let mut gamma_ok = true;
        for &q in &cfg.q_list {
            let targets = match real.targets(q, &cfg.tolerances) {
                Ok(t) => t,
                Err(e) => match classify(&e) {
                    Some(_) => {
                        gamma_ok = false;
                        break;
                    }
                    None => return Err(e),
                },
            };
            let d = targets.iter().map(|t| t.prepared.whitened_d_min()).fold(f64::INFINITY, f64::min);
            if !(d > cfg.tolerances.distinct) {
                gamma_ok = false;
                break;
            }
            d1.push(d);
        }
        if gamma_ok {
            return Ok(TrialOutcome { accepted: Some(Accepted { trial, topo_seed, d1 }), rejections });
        }
        rejections.push(Rejection::Gamma);
    }
    Ok(TrialOutcome { accepted: None, rejections })
}

fn simulate_trial(
    scheme: Scheme,
    cfg: &ExperimentConfig,
    acc: &Accepted,
    law: ScalingLaw,
) -> Result<Vec<TrialRecord>> {
    let real = Realization::build(scheme, cfg, acc.topo_seed)?;
    let (k, m) = (cfg.k(), cfg.m());
    let field = cfg.field;
    let sigma = cfg.noise_variance.sqrt();
    let streams = scheme.streams(k) * field.real_dims() as u32;
    let mut out = Vec::with_capacity(cfg.q_list.len());
    for (qi, &q) in cfg.q_list.iter().enumerate() {
        let targets = real.targets(q, &cfg.tolerances)?;
        let a = law.amplitude(q);
        let p = law.power(q, streams);
        let mut rng = seed::rng(seed::derive(cfg.seed, &[acc.trial as u64, u64::MAX, qi as u64]));
        let mut errors = 0usize;
        let mut decisions = 0usize;
        for _ in 0..cfg.draws {
            let msgs = real.draw_messages(&mut rng, q, k, m);
            let x = real.encode(&msgs, a)?;
            let noise_seed: u64 = rng.random();
            let y = transmit(&real.topology, &x, NoiseModel { variance: cfg.noise_variance }, noise_seed)?;
            for t in &targets {
                let yr: Vec<Complex64> = real.antennas.iter().map(|&l| y[t.rx][l] / a).collect();
                let d = t.prepared.decode(&yr)?;
                let truth = msgs.get(t.msg);
                let truth = Symbol::new(truth.re.round() as i64, truth.im.round() as i64);
                errors += (d.decoded != truth) as usize;
                decisions += 1;
            }
        }
        let err_rate = errors as f64 / decisions as f64;
        let side = 2 * q as u64 + 1;
        let card = if field.is_complex() { side * side } else { side };
        let rate_bound = reported_rate(card, err_rate)?;
        let lp = p.log2();
        let dof_estimate = rate_bound / if field.is_complex() { lp } else { 0.5 * lp };
        out.push(TrialRecord {
            scenario: scheme.tag().to_string(),
            seed: cfg.seed,
            trial: acc.trial,
            k,
            m,
            field,
            q,
            a,
            p,
            d_min: acc.d1[qi] * a,
            err_rate,
            rate_bound,
            dof_estimate,
            decisions,
            noise_sigma: sigma,
        });
    }
    Ok(out)
}

struct SchemeRun {
    records: Vec<TrialRecord>,
    summary: serde_json::Value,
}

fn run_scheme(scheme: Scheme, cfg: &ExperimentConfig) -> Result<SchemeRun> {
    let outcomes = with_pool(cfg.threads, || {
        (0..cfg.trials).into_par_iter().map(|t| accept_trial(scheme, cfg, t)).collect::<Result<Vec<_>>>()
    })??;
    let mut counts = BTreeMap::from([("singular", 0usize), ("infeasible", 0), ("gamma", 0)]);
    for o in &outcomes {
        for r in &o.rejections {
            *counts
                .get_mut(match r {
                    Rejection::Singular => "singular",
                    Rejection::Infeasible => "infeasible",
                    Rejection::Gamma => "gamma",
                })
                .unwrap() += 1;
        }
    }
    let accepted: Vec<&Accepted> = outcomes.iter().filter_map(|o| o.accepted.as_ref()).collect();
    let failed_trials = cfg.trials - accepted.len();
    if accepted.is_empty() {
        return Err(Error::Infeasible(format!(
            "{}: no valid realization in {} attempts for any of the {} trials",
            scheme.tag(),
            cfg.tolerances.max_attempts,
            cfg.trials
        )));
    }
    let exponent = scheme.exponent(cfg);
    let sigma = cfg.noise_variance.sqrt();
    let (scale, calibration) = match &cfg.a_rule.scale {
        ScaleRule::Fixed(s) => (*s, json!({ "rule": "fixed" })),
        ScaleRule::Named(_) if sigma == 0.0 => (1.0, json!({ "rule": "calibrated", "note": "noiseless run uses scale 1" })),
        ScaleRule::Named(_) => {
            let pooled: Vec<f64> = accepted
                .iter()
                .flat_map(|a| a.d1.iter().zip(&cfg.q_list).map(|(d, &q)| d * (q as f64).powf(exponent)))
                .collect();
            let med = median(pooled).unwrap_or(1.0);
            (
                cfg.tolerances.margin * sigma / med,
                json!({ "rule": "calibrated", "margin": cfg.tolerances.margin, "median_normalized_d_min": med }),
            )
        }
    };
    let law = ScalingLaw { exponent, scale };
    let per_trial = with_pool(cfg.threads, || {
        accepted.par_iter().map(|a| simulate_trial(scheme, cfg, a, law)).collect::<Result<Vec<_>>>()
    })??;
    let records: Vec<TrialRecord> = per_trial.into_iter().flatten().collect();

    let slope = estimate_dof_slope(&records).ok();
    let attempts: usize = outcomes.iter().map(|o| o.rejections.len() + o.accepted.is_some() as usize).sum();
    let rejected: usize = counts.values().sum();
    let bound_violations = records.iter().filter(|r| r.violates_bound()).count();
    let summary = json!({
        "scenario": scheme.tag(),
        "seed": cfg.seed,
        "K": cfg.k(),
        "M": cfg.m(),
        "field": cfg.field.tag(),
        "Q_list": cfg.q_list,
        "trials": cfg.trials,
        "accepted_trials": accepted.len(),
        "failed_trials": failed_trials,
        "attempts": attempts,
        "rejections": counts,
        "rejection_rate": rejected as f64 / attempts.max(1) as f64,
        "A_rule": { "exponent": exponent, "scale": scale, "calibration": calibration },
        "measured_slope": slope,
        "bound_violations": bound_violations,
    });
    Ok(SchemeRun { records, summary })
}

fn x_summary(cfg: &ExperimentConfig, run: &SchemeRun) -> serde_json::Value {
    let (k, m) = (cfg.k() as f64, cfg.m() as f64);
    let per_message = 1.0 / (k + 1.0);
    let total = if cfg.field.is_complex() { 4.0 * k * m / (k + 1.0) } else { 2.0 * k * m / (k + 1.0) };
    let mut s = run.summary.clone();
    let slope = s["measured_slope"].as_f64();
    s["targets"] = json!({ "per_message_dof": per_message, "total_dof": total, "messages": 2.0 * k * m });
    s["measured_total_dof"] = json!(slope.map(|x| x * 2.0 * k * m));
    s
}

pub fn run_kx2(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let run = run_scheme(Scheme::Kx2, cfg)?;
    let summary = x_summary(cfg, &run);
    Ok(RunOutput { csv: records_to_csv(&run.records)?, records: run.records, summary })
}

pub fn run_2xk(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let run = run_scheme(Scheme::TwoByK, cfg)?;
    let summary = x_summary(cfg, &run);
    Ok(RunOutput { csv: records_to_csv(&run.records)?, records: run.records, summary })
}

/// Runs both decoding strategies on the same channel draws.
pub fn run_mac(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let strategies = cfg.strategies.clone().unwrap_or(vec![MacStrategy::PerAntenna, MacStrategy::Joint]);
    let mut records = Vec::new();
    let mut per = serde_json::Map::new();
    for s in &strategies {
        let run = run_scheme(Scheme::Mac(*s), cfg)?;
        let mut summary = run.summary;
        summary["targets"] = json!({ "per_user_dof": s.target_dof(), "total_dof": 3.0 * s.target_dof() });
        per.insert(s.tag().to_string(), summary);
        records.extend(run.records);
    }
    let slope = |tag: &str| per.get(tag).and_then(|v| v["measured_slope"].as_f64());
    let separation = match (slope("mac-joint"), slope("mac-per-antenna")) {
        (Some(j), Some(p)) => Some(j - p),
        _ => None,
    };
    let summary = json!({
        "scenario": "mac",
        "seed": cfg.seed,
        "strategies": per,
        "slope_separation": separation,
    });
    Ok(RunOutput { csv: records_to_csv(&records)?, records, summary })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DminExponents {
    pub per_antenna: Vec<f64>,
    pub joint: Vec<f64>,
    pub median_per_antenna: f64,
    pub median_joint: f64,
}

/// Log-log slopes of the whitened `d_min` of user 1 against `Q` at `A = 1`,
/// single-antenna and joint, over `draws` channel draws.
pub fn mac_dmin_exponents(q_list: &[u32], draws: usize, base_seed: u64, field: ScalarField) -> Result<DminExponents> {
    if q_list.len() < 2 || draws == 0 {
        return Err(Error::invalid("need at least two Q values and one draw"));
    }
    let xs: Vec<f64> = q_list.iter().map(|&q| (q as f64).ln()).collect();
    let rows = (0..draws)
        .into_par_iter()
        .map(|d| {
            let topo = sample_topology(TopologyKind::SimoMac, 3, 2, field, seed::derive(base_seed, &[d as u64]), DEFAULT_COND_CEILING)?;
            let model = build_mac_streams(&topo, 1, 1.0)?.model(field);
            let mut out = [0.0; 2];
            for (slot, antennas) in [vec![0usize], vec![0, 1]].iter().enumerate() {
                let mut ys = Vec::with_capacity(q_list.len());
                for &q in q_list {
                    let (raw, _) = model.raw_gains(q, antennas);
                    let p = PreparedTarget::new(&raw, 0, DEFAULT_ENUMERATION_CAP, DEFAULT_ENUMERATION_CAP)?;
                    ys.push(p.whitened_d_min().max(1e-300).ln());
                }
                out[slot] = least_squares_slope(&xs, &ys).unwrap_or(f64::NAN);
            }
            Ok(out)
        })
        .collect::<Result<Vec<[f64; 2]>>>()?;
    let per_antenna: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let joint: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    Ok(DminExponents {
        median_per_antenna: median(per_antenna.clone()).unwrap(),
        median_joint: median(joint.clone()).unwrap(),
        per_antenna,
        joint,
    })
}

/// Alignment census: K×2 collapse residuals and 2×K design feasibility.
pub fn run_align_census(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let kinds = cfg.kinds.clone().unwrap_or(vec![TopologyKind::KbyTwo, TopologyKind::TwoByK]);
    let (k, m) = (cfg.k(), cfg.m());
    let mut rows = Vec::new();
    let mut summary = serde_json::Map::new();
    for kind in kinds {
        if kind == TopologyKind::SimoMac {
            return Err(Error::Config("align-census covers kx2 and 2xk".into()));
        }
        let results = with_pool(cfg.threads, || {
            (0..cfg.trials)
                .into_par_iter()
                .map(|t| {
                    let s = seed::derive(cfg.seed, &[t as u64]);
                    let topo = sample_topology(kind, k, m, cfg.field, s, cfg.tolerances.cond_ceiling)?;
                    let report = match kind {
                        TopologyKind::KbyTwo => verify_alignment_kx2(&topo, &DirectionSetKx2::identity(m)).map(Some)?,
                        _ => match design_directions_2xk(&topo, cfg.tolerances.alignment) {
                            Ok(d) => Some(verify_directions_2xk(&topo, &d)?),
                            Err(Error::Infeasible(_)) => None,
                            Err(e) => return Err(e),
                        },
                    };
                    Ok((t, report))
                })
                .collect::<Result<Vec<_>>>()
        })??;
        let mut worst: f64 = 0.0;
        let mut feasible = 0;
        let mut reports = Vec::new();
        for (t, report) in &results {
            reports.push(json!({ "trial": t, "report": report }));
            let (res, ok, rank) = match report {
                Some(r) => {
                    worst = worst.max(r.max_residual);
                    feasible += 1;
                    let rank = r.per_receiver_interference_rank.iter().copied().min().unwrap_or(0);
                    (r.max_residual.to_string(), "1", rank.to_string())
                }
                None => (String::from("NaN"), "0", String::from("0")),
            };
            rows.push([
                kind.tag().to_string(),
                cfg.seed.to_string(),
                t.to_string(),
                k.to_string(),
                m.to_string(),
                cfg.field.tag().to_string(),
                res,
                ok.to_string(),
                rank,
            ]);
        }
        summary.insert(
            kind.tag().to_string(),
            json!({
                "trials": cfg.trials,
                "feasible": feasible,
                "failure_rate": 1.0 - feasible as f64 / cfg.trials as f64,
                "max_residual": worst,
                "reports": reports,
            }),
        );
    }
    let summary = json!({ "scenario": "align-census", "seed": cfg.seed, "K": k, "M": m, "field": cfg.field.tag(), "kinds": summary });
    Ok(RunOutput { records: Vec::new(), csv: write_csv(CENSUS_HEADER, rows)?, summary })
}

struct DiophRows {
    rows: Vec<[String; 8]>,
    seed: u64,
}

impl DiophRows {
    fn push(&mut self, cell: &DiophCell, big_n: usize, statistic: &str, value: String) {
        self.rows.push([
            cell.m.to_string(),
            cell.n.to_string(),
            cell.mode.tag().to_string(),
            cell.field.tag().to_string(),
            big_n.to_string(),
            statistic.to_string(),
            value,
            self.seed.to_string(),
        ]);
    }
}

fn dioph_cell(cfg: &ExperimentConfig, d: &DiophConfig, idx: usize, cell: &DiophCell, out: &mut DiophRows) -> Result<serde_json::Value> {
    let psi = cell.psi();
    let variant = SeriesVariant::new(cell.mode, cell.field);
    let series = kg_series(&psi, cell.m, cell.n, cell.r_max, variant)?;
    let convergent = series.verdict == Verdict::Convergent;
    out.push(cell, cell.r_max, "series_partial_sum", series.partial_sums.last().unwrap().to_string());
    out.push(cell, cell.r_max, "series_exponent", series.effective_exponent.to_string());
    out.push(cell, cell.r_max, "series_convergent", (convergent as u8).to_string());

    let cell_seed = seed::derive(cfg.seed, &[idx as u64]);
    let points: Vec<LinearFormsPoint> = (0..cell.samples)
        .map(|s| {
            let mut rng = seed::rng(seed::derive(cell_seed, &[0, s as u64]));
            LinearFormsPoint::sample(&mut rng, cell.m, cell.n, cell.field)
        })
        .collect();
    let kappa = cell.mode.dirichlet_exponent(cell.m, cell.n);
    let complex_c = if cell.field.is_complex() {
        let c = calibrate_complex_dirichlet(
            cell.m,
            cell.n,
            cell.mode,
            *cell.n_list.iter().max().unwrap_or(&1),
            d.calibration_samples,
            seed::derive(cell_seed, &[1]),
        )?;
        Some(c)
    } else {
        None
    };
    let mut n_list = cell.n_list.clone();
    n_list.sort_unstable();
    n_list.dedup();
    let profiles = points
        .par_iter()
        .map(|x| badly_approximable_profile(x, &n_list, cell.mode, 0.0))
        .collect::<Result<Vec<_>>>()?;
    for (j, &big_n) in n_list.iter().enumerate() {
        let errors = points
            .par_iter()
            .map(|x| min_form_distance(x, big_n, cell.mode, DEFAULT_FORM_BUDGET).map(|w| w.error))
            .collect::<Result<Vec<f64>>>()?;
        out.push(cell, big_n, "min_error_median", median(errors.clone()).unwrap().to_string());
        let bound = match (cell.field, cell.mode, complex_c) {
            (ScalarField::Real, FormMode::Hybrid, _) => Some(dirichlet_hybrid_bound(cell.m, cell.n, big_n)),
            (ScalarField::Complex, _, Some(c)) => Some(c * (big_n as f64).powf(-kappa)),
            _ => None,
        };
        if let Some(b) = bound {
            let pass = errors.iter().filter(|&&e| e < b).count() as f64 / errors.len() as f64;
            out.push(cell, big_n, "dirichlet_bound", b.to_string());
            out.push(cell, big_n, "dirichlet_pass_fraction", pass.to_string());
        }
        let consts: Vec<f64> = profiles.iter().map(|p| p[j]).collect();
        out.push(cell, big_n, "bad_constant_median", median(consts).unwrap().to_string());
    }
    if let Some(c) = complex_c {
        out.push(cell, *n_list.last().unwrap(), "dirichlet_constant", c.to_string());
    }

    let mut fractions = Vec::new();
    for &n0 in &cell.n0_list {
        let est = estimate_approximable_measure(
            &psi,
            cell.m,
            cell.n,
            cell.mode,
            cell.field,
            cell.samples,
            n0,
            cell.n_max,
            seed::derive(cell_seed, &[2, n0 as u64]),
        )?;
        out.push(cell, n0, "approximable_fraction", est.fraction.to_string());
        fractions.push(est.fraction);
    }
    let mc_divergent = fractions.last().map(|&f| f >= 0.95);
    if let Some(div) = mc_divergent {
        out.push(cell, cell.n_max, "mc_divergent", (div as u8).to_string());
        out.push(cell, cell.n_max, "verdict_agree", ((div != convergent) as u8).to_string());
    }
    Ok(json!({
        "m": cell.m, "n": cell.n, "mode": cell.mode.tag(), "field": cell.field.tag(),
        "psi": psi, "series_verdict": series.verdict, "approximable_fractions": fractions,
        "mc_divergent": mc_divergent, "dirichlet_constant": complex_c,
    }))
}

/// Sweeps the configured (m, n, mode, field, ψ) cells. A cell whose search
/// exceeds its budget is reported as skipped and the sweep continues.
pub fn run_dioph(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let d = cfg.dioph.clone().unwrap_or_default();
    let mut out = DiophRows { rows: Vec::new(), seed: cfg.seed };
    let mut cells = Vec::new();
    let census = if d.cells.iter().any(|c| c.field.is_complex()) {
        let shells = gaussian_lattice_census(d.census_r_max)?;
        let slope = census_slope(&shells, d.census_r_lo, d.census_r_max);
        let top = shells.last().unwrap();
        let ratio = top.disc_count as f64 / (std::f64::consts::PI * (top.r * top.r) as f64);
        Some((slope, ratio))
    } else {
        None
    };
    with_pool(cfg.threads, || -> Result<()> {
        for (idx, cell) in d.cells.iter().enumerate() {
            let start = out.rows.len();
            match dioph_cell(cfg, &d, idx, cell, &mut out) {
                Ok(s) => cells.push(s),
                Err(Error::Budget(msg)) => {
                    out.rows.truncate(start);
                    out.push(cell, cell.n_max, "skipped", "budget".into());
                    cells.push(json!({ "m": cell.m, "n": cell.n, "skipped": msg }));
                    continue;
                }
                Err(e) => return Err(e),
            }
            if let (true, Some((slope, ratio))) = (cell.field.is_complex(), census) {
                out.push(cell, d.census_r_max, "census_slope", slope.map_or("NaN".into(), |s| s.to_string()));
                out.push(cell, d.census_r_max, "census_disc_ratio", ratio.to_string());
            }
        }
        Ok(())
    })??;
    let summary = json!({
        "scenario": "dioph",
        "seed": cfg.seed,
        "cells": cells,
        "census": census.map(|(s, r)| json!({ "slope": s, "disc_ratio": r, "r_lo": d.census_r_lo, "r_max": d.census_r_max })),
    });
    Ok(RunOutput { records: Vec::new(), csv: write_csv(DIOPH_HEADER, out.rows)?, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(q: u32, p: f64, rate: f64, field: ScalarField) -> TrialRecord {
        TrialRecord {
            scenario: "t".into(),
            seed: 0,
            trial: 0,
            k: 2,
            m: 1,
            field,
            q,
            a: 1.0,
            p,
            d_min: 1.0,
            err_rate: 0.0,
            rate_bound: rate,
            dof_estimate: 0.0,
            decisions: 1,
            noise_sigma: 1.0,
        }
    }

    #[test]
    fn synthetic_slope_is_recovered() {
        let recs: Vec<TrialRecord> = [2u32, 3, 4, 6]
            .iter()
            .map(|&q| {
                let p = (q as f64).powi(6);
                record(q, p, 0.7 + (1.0 / 3.0) * 0.5 * p.log2(), ScalarField::Real)
            })
            .collect();
        assert!((estimate_dof_slope(&recs).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let complex: Vec<TrialRecord> = [2u32, 3, 4]
            .iter()
            .map(|&q| {
                let p = (q as f64).powi(6);
                record(q, p, 0.25 * p.log2(), ScalarField::Complex)
            })
            .collect();
        assert!((estimate_dof_slope(&complex).unwrap() - 0.25).abs() < 1e-12);
        assert!(estimate_dof_slope(&recs[..2]).is_err());
    }

    #[test]
    fn config_parsing_and_validation() {
        let cfg = ExperimentConfig::from_json(r#"{"scenario":"kx2","K":3,"M":2,"Q_list":[2,3],"A_rule":{"exponent":3,"scale":2.5},"seed":7}"#).unwrap();
        assert_eq!((cfg.k(), cfg.m(), cfg.seed), (3, 2, 7));
        assert_eq!(cfg.a_rule.scale, ScaleRule::Fixed(2.5));
        assert!(matches!(ExperimentConfig::from_json(r#"{"scenario":"kx2","bogus":1}"#), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_json(r#"{"scenario":"kx2","Q_list":[]}"#), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_json(r#"{"scenario":"mac","K":2}"#), Err(Error::Config(_))));
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"scenario":"kx2","A_rule":{"scale":"loud"}}"#),
            Err(Error::Config(_))
        ));
        let t = ExperimentConfig::from_toml("scenario = \"2xk\"\nK = 3\nfield = \"complex\"\n").unwrap();
        assert_eq!(t.field, ScalarField::Complex);
        let d = ExperimentConfig::from_json(
            r#"{"scenario":"dioph","dioph":{"cells":[{"m":1,"n":2,"mode":"hybrid"}]}}"#,
        );
        assert!(matches!(d, Err(Error::Config(_))));
    }

    #[test]
    fn power_accounting() {
        let mut cfg = ExperimentConfig::new(Scenario::Kx2);
        cfg.q_list = vec![2, 3];
        cfg.trials = 2;
        cfg.draws = 20;
        cfg.a_rule.scale = ScaleRule::Fixed(3.0);
        let out = run(&cfg).unwrap();
        for r in &out.records {
            let a = 3.0 * (r.q as f64).powi(2);
            assert_eq!(r.a, a);
            assert_eq!(r.p, a * a * (r.q as f64).powi(2) * 2.0);
        }
        assert!(out.csv.starts_with("scenario,seed,trial,K,M,field,Q,A,P,d_min,err_rate,rate_bound,dof_estimate\n"));
    }

    #[test]
    fn noiseless_runs_are_error_free() {
        for scenario in [Scenario::Kx2, Scenario::TwoByK, Scenario::Mac] {
            let mut cfg = ExperimentConfig::new(scenario);
            cfg.q_list = vec![2, 3];
            cfg.trials = 3;
            cfg.draws = 100;
            cfg.noise_variance = 0.0;
            let out = run(&cfg).unwrap();
            assert!(!out.records.is_empty());
            assert!(out.records.iter().all(|r| r.err_rate == 0.0), "{scenario:?}");
        }
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let mut cfg = ExperimentConfig::new(Scenario::Mac);
        cfg.q_list = vec![2, 3, 4];
        cfg.trials = 4;
        cfg.draws = 50;
        cfg.threads = Some(1);
        let a = run(&cfg).unwrap().csv;
        cfg.threads = Some(3);
        let b = run(&cfg).unwrap().csv;
        assert_eq!(a, b);
    }

    #[test]
    fn dioph_default_grid() {
        let mut cfg = ExperimentConfig::new(Scenario::Dioph);
        let mut d = DiophConfig::default();
        for c in &mut d.cells {
            c.samples = 10;
            c.n_list = vec![3, 5];
            c.n0_list = vec![2];
            c.n_max = 8;
            c.r_max = 50;
        }
        d.cells.push(DiophCell { samples: 5, n_list: vec![2], n0_list: vec![1], n_max: 3, r_max: 50, ..DiophCell::basic(1, 1, FormMode::Classical, ScalarField::Complex) });
        d.calibration_samples = 20;
        d.census_r_max = 30;
        d.census_r_lo = 10;
        cfg.dioph = Some(d);
        let out = run(&cfg).unwrap();
        assert!(out.csv.starts_with("m,n,mode,field,N,statistic,value,seed\n"));
        assert!(out.csv.contains("2,1,hybrid,real,"));
        assert!(out.csv.contains("2,2,hybrid,real,"));
        assert!(out.csv.contains("census_slope"));
        assert!(out.csv.contains("dirichlet_pass_fraction"));
    }

    #[test]
    fn oversized_dioph_cell_is_skipped() {
        let mut cfg = ExperimentConfig::new(Scenario::Dioph);
        let big = DiophCell { samples: 2, n_list: vec![2], n0_list: vec![1], n_max: 400, r_max: 10, ..DiophCell::basic(3, 1, FormMode::Hybrid, ScalarField::Complex) };
        cfg.dioph = Some(DiophConfig { cells: vec![big], calibration_samples: 2, ..DiophConfig::default() });
        let out = run(&cfg).unwrap();
        assert!(out.csv.contains(",skipped,budget,"));
    }
}
