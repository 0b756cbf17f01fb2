//! End-to-end experiments: simulate a federated round, turn the first-layer
//! gradient into a hidden subset sum instance, attack a row subsample and
//! check the recovered inputs against the planted batch.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flsim::{self, Dataset, Encoding, FlError, Loss, TrainConfig};
use crate::hssp::{
    self, AttackMethod, AttackParams, AttackReport, HsspError, HsspInstance, PlantedInstance,
};
use crate::linalg::{self, IntMatrix, Modulus};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Fl(#[from] FlError),
    #[error(transparent)]
    Hssp(#[from] HsspError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Class-structured random 8-bit images, sized to the model input.
    Synthetic { samples: usize, classes: usize, seed: u64 },
    Csv { path: PathBuf, has_label: bool, scale: f64 },
    Idx { images: PathBuf, labels: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub layer_sizes: Vec<usize>,
    pub batch: usize,
    pub clients: usize,
    pub method: AttackMethod,
    /// Rows given to the attack; the per-method default when unset.
    pub subsample: Option<usize>,
    pub trials: usize,
    pub seed: u64,
    pub q_bits: Option<u64>,
    /// Leading input coordinates placed in the instance.
    pub features: usize,
    /// All samples of a client batch share one label.
    pub same_label: bool,
    pub train_rounds: usize,
    pub scale: u32,
    /// Fresh subsamples tried after a failed attack.
    pub max_resamples: usize,
    pub report: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic { samples: 1000, classes: 10, seed: 0 },
            layer_sizes: vec![3072, 500, 100, 10],
            batch: 10,
            clients: 1,
            method: AttackMethod::Ns,
            subsample: None,
            trials: 10,
            seed: 0,
            q_bits: None,
            features: 20,
            same_label: false,
            train_rounds: 0,
            scale: flsim::DEFAULT_SCALE,
            max_resamples: 5,
            report: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// Hidden rank of the attacked instance.
    pub fn hidden_rank(&self) -> usize {
        self.batch * self.clients
    }

    pub fn neurons(&self) -> usize {
        self.layer_sizes.get(1).copied().unwrap_or(0)
    }

    pub fn subsample_rows(&self) -> usize {
        self.subsample.unwrap_or_else(|| default_subsample(self.method, self.hidden_rank(), self.neurons()))
    }

    pub fn modulus_bits(&self) -> Result<u64> {
        if let Some(b) = self.q_bits {
            return Ok(b);
        }
        let b = self.hidden_rank();
        let sized = hssp::q_size_for(self.subsample_rows().max(b + 1), b)?;
        Ok(sized.max(Encoding::min_q_bits(self.scale, 1.0, b, self.features)))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |s: String| Err(PipelineError::Config(s));
        if self.layer_sizes.len() < 2 {
            return err("need at least one weight layer".into());
        }
        if self.batch == 0 || self.clients == 0 || self.trials == 0 {
            return err("batch, clients and trials must be positive".into());
        }
        if self.features == 0 || self.features > self.layer_sizes[0] {
            return err(format!("features {} not in [1, {}]", self.features, self.layer_sizes[0]));
        }
        let m = self.subsample_rows();
        if m > self.neurons() {
            return err(format!("subsample {m} exceeds {} neurons", self.neurons()));
        }
        if self.hidden_rank() > self.neurons() {
            return err("more hidden samples than neurons".into());
        }
        // Encoded inputs are small, so with fewer features than samples the
        // integer left kernel of X adds short vectors orthogonal to H that
        // are not orthogonal to A.
        if self.features < self.hidden_rank() {
            return err(format!(
                "features {} below the hidden rank {}",
                self.features,
                self.hidden_rank()
            ));
        }
        Ok(())
    }
}

/// `2B` for the lattice attack, `B^2 + B` for the linearized system and
/// `B^2` for moment descent, capped by the number of neurons.
pub fn default_subsample(method: AttackMethod, batch: usize, neurons: usize) -> usize {
    let m = match method {
        AttackMethod::Ns => 2 * batch,
        AttackMethod::Multivariate => batch * batch + batch,
        AttackMethod::Statistical => batch * batch,
    };
    m.min(neurons)
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let dim = cfg.layer_sizes.first().copied().unwrap_or(0);
    let data = match &cfg.data {
        DataSource::Synthetic { samples, classes, seed } => flsim::synthetic_images(*samples, dim, *classes, *seed),
        DataSource::Csv { path, has_label, scale } => flsim::load_csv(path, *has_label, *scale)?,
        DataSource::Idx { images, labels } => {
            flsim::idx_dataset(&flsim::load_idx(images)?, &flsim::load_idx(labels)?)?
        }
    };
    if data.dim() != dim {
        return Err(PipelineError::Config(format!(
            "dataset has {} features, model input is {dim}",
            data.dim()
        )));
    }
    if data.classes() > *cfg.layer_sizes.last().unwrap() {
        return Err(PipelineError::Config("more classes than model outputs".into()));
    }
    Ok(data)
}

/// `m` distinct rows of `h`, uniformly at random, with their indices.
pub fn subsample_rows(h: &IntMatrix, m: usize, seed: u64) -> (IntMatrix, Vec<usize>) {
    let m = m.min(h.rows());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = rand::seq::index::sample(&mut rng, h.rows(), m).into_vec();
    (h.select_rows(&idx), idx)
}

/// Indices of the first occurrence of every distinct nonzero row.
pub fn informative_rows(h: &IntMatrix) -> Vec<usize> {
    let mut seen = HashSet::new();
    (0..h.rows())
        .filter(|&i| h.row(i).iter().any(|v| !v.is_zero()) && seen.insert(h.row(i).to_vec()))
        .collect()
}

#[derive(Clone, Debug)]
pub struct BuiltInstance {
    pub planted: PlantedInstance,
    pub encoding: Encoding,
}

/// One federated round on a freshly initialized model. The instance is the
/// aggregate of the clients' binary-regime gradients.
pub fn build_instance(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<BuiltInstance> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_ba7c);
    let q = Modulus::new(linalg::random_prime(cfg.modulus_bits()?.max(2), &mut rng)).map_err(HsspError::from)?;
    let enc = Encoding::new(cfg.scale, q)?;
    let mut model = flsim::mlp_init(&cfg.layer_sizes, seed)?;
    if cfg.train_rounds > 0 {
        let tc = TrainConfig { rounds: cfg.train_rounds, seed, ..TrainConfig::default() };
        model = flsim::train(&model, data, &tc)?;
    }
    let mut last = None;
    for _ in 0..20 {
        let mut bundles = Vec::new();
        let mut inputs = Vec::new();
        for _ in 0..cfg.clients {
            let batch = if cfg.same_label {
                let label = data.labels[rng.gen_range(0..data.len())];
                data.class_batch(label, cfg.batch, &mut rng)?
            } else {
                data.random_batch(cfg.batch, &mut rng)?
            };
            bundles.push(flsim::first_layer_grads(&model, &batch, Loss::CrossEntropy)?);
            inputs.push(batch.x.columns(0, cfg.features).into_owned());
        }
        match flsim::secure_aggregate_instance(&bundles, &inputs, &enc) {
            Ok((_, planted)) => return Ok(BuiltInstance { planted, encoding: enc }),
            Err(FlError::RankDeficientMask(b)) => last = Some(FlError::RankDeficientMask(b)),
            Err(e) => return Err(e.into()),
        }
    }
    Err(last.expect("at least one attempt").into())
}

fn recover_on(
    method: AttackMethod,
    sub: &HsspInstance,
    full: &HsspInstance,
    seed: u64,
    timings: &mut BTreeMap<String, Duration>,
) -> hssp::Result<(IntMatrix, IntMatrix)> {
    let b = sub.batch();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, Duration>| {
        *timings.entry(name.to_string()).or_default() += clock.elapsed();
        clock = Instant::now();
    };
    let u = hssp::ns_step1(sub);
    lap("step1", timings);
    let u = u?;
    let out = match method {
        AttackMethod::Ns => {
            let mut beta = b.min(10);
            loop {
                let found = hssp::ns_step2_candidates(&u, b, beta)
                    .and_then(|c| hssp::resolve_candidates(&c, sub, full, 1000));
                if found.is_ok() || beta >= b {
                    break found;
                }
                beta = (2 * beta).min(b);
            }
        }
        AttackMethod::Multivariate | AttackMethod::Statistical => {
            let a = if method == AttackMethod::Multivariate {
                hssp::multivariate_recover(&u, b)
            } else {
                hssp::statistical_recover(&u, b, seed)
            };
            a.and_then(|a| {
                let x = hssp::solve_x(&a, sub)?;
                let full_a = hssp::extend_rows(&x, full).ok_or(HsspError::NoBinarySolution)?;
                Ok((full_a, x))
            })
        }
    };
    lap("step2", timings);
    out
}

/// Attack `m` rows of the planted instance. A failed attempt is repeated on
/// a fresh subsample, at most `max_resamples` times. Only the attack is
/// timed.
pub fn attack_instance(
    planted: &PlantedInstance,
    method: AttackMethod,
    m: usize,
    seed: u64,
    max_resamples: usize,
) -> AttackReport {
    let full = &planted.instance;
    let b = full.batch();
    let params = AttackParams {
        m_rows: full.m_rows(),
        batch: b,
        dim: full.dim(),
        m,
        q_bits: full.q().bits(),
        seed,
    };
    let mut report = AttackReport {
        method,
        recovered_x: None,
        recovered_a: None,
        permutation: None,
        success: false,
        timings: BTreeMap::new(),
        params,
        mse: None,
        attempts: 0,
        error: None,
    };
    let start = Instant::now();
    let pool = informative_rows(full.h());
    let take = m.min(pool.len());
    report.timings.insert("subsample".into(), start.elapsed());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 0..=max_resamples {
        let t = Instant::now();
        let idx: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), take).iter().map(|i| pool[i]).collect();
        let sub = full.select_rows(&idx);
        *report.timings.get_mut("subsample").unwrap() += t.elapsed();
        report.attempts = attempt + 1;
        let sub = match sub {
            Ok(s) => s,
            Err(e) => {
                report.error = Some(e.to_string());
                break;
            }
        };
        match recover_on(method, &sub, full, seed.wrapping_add(attempt as u64), &mut report.timings) {
            Ok((a, x)) => {
                report.error = None;
                report.recovered_a = Some(a);
                report.recovered_x = Some(x);
                break;
            }
            Err(e) => report.error = Some(e.to_string()),
        }
        if take == pool.len() && method != AttackMethod::Statistical {
            break;
        }
    }
    if let (Some(a), Some(x)) = (&report.recovered_a, &report.recovered_x) {
        let t = Instant::now();
        let valid = hssp::verify_solution(full, a, x);
        report.permutation = hssp::match_up_to_permutation(x, &planted.x);
        let mse = integer_mse(x, &planted.x, report.permutation.as_deref(), full.q());
        report.mse = Some(mse);
        report.success = valid && report.permutation.is_some() && mse == 0.0;
        if !report.success && report.error.is_none() {
            report.error = Some("recovered solution differs from the planted batch".into());
        }
        report.timings.insert("verify".into(), t.elapsed());
    }
    report
}

/// Mean squared difference of centered residues, rows of `x_rec` paired by
/// `perm` if given and in order otherwise.
fn integer_mse(x_rec: &IntMatrix, x_true: &IntMatrix, perm: Option<&[usize]>, q: &Modulus) -> f64 {
    if x_rec.shape() != x_true.shape() {
        return f64::INFINITY;
    }
    let mut total = 0.0;
    for i in 0..x_rec.rows() {
        let j = perm.map_or(i, |p| p[i]);
        for (a, b) in x_rec.row(i).iter().zip(x_true.row(j)) {
            let d = q.center(&(a - b)).to_f64().unwrap_or(f64::INFINITY);
            total += d * d;
        }
    }
    total / (x_rec.rows() * x_rec.cols()) as f64
}

/// Decoded recovered inputs, rows in the order of the planted batch.
pub fn decoded_inputs(report: &AttackReport, enc: &Encoding) -> Option<DMatrix<f64>> {
    let x = report.recovered_x.as_ref()?;
    let perm = report.permutation.as_ref()?;
    let mut order = vec![0; perm.len()];
    for (i, &j) in perm.iter().enumerate() {
        order[j] = i;
    }
    Some(flsim::decode_int(&x.select_rows(&order), enc))
}

/// Build the configured instance for `cfg.seed`, attack it and write the
/// JSON report if a path is configured. Attack failures are reported, not
/// returned as errors.
pub fn run_attack(cfg: &ExperimentConfig) -> Result<AttackReport> {
    let data = load_dataset(cfg)?;
    run_attack_on(cfg, &data, cfg.seed)
}

pub fn run_attack_on(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<AttackReport> {
    let built = build_instance(cfg, data, seed)?;
    let report = attack_instance(&built.planted, cfg.method, cfg.subsample_rows(), seed, cfg.max_resamples);
    if let Some(path) = &cfg.report {
        std::fs::write(path, serde_json::to_string_pretty(&report.to_json()).expect("serializable"))?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub mean_runtime_ms: f64,
    pub success_rate: f64,
    pub trials: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_HEADER: &str = "param,mean_runtime_ms,success_rate,trials";

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(out, "{},{:.3},{:.4},{}", r.param, r.mean_runtime_ms, r.success_rate, r.trials).unwrap();
        }
        out
    }

    pub fn row(&self, param: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.param == param)
    }
}

/// `trials` seeded runs of `cfg`; seeds `cfg.seed, cfg.seed + 1, ...`.
pub fn run_trials(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<AttackReport>> {
    (0..cfg.trials as u64)
        .map(|t| {
            let built = build_instance(cfg, data, cfg.seed + t)?;
            Ok(attack_instance(&built.planted, cfg.method, cfg.subsample_rows(), cfg.seed + t, cfg.max_resamples))
        })
        .collect()
}

fn summarize(param: String, reports: &[AttackReport]) -> SweepRow {
    let n = reports.len();
    let ms: f64 = reports.iter().map(|r| r.total_time().as_secs_f64() * 1e3).sum();
    let ok = reports.iter().filter(|r| r.success).count();
    SweepRow { param, mean_runtime_ms: ms / n as f64, success_rate: ok as f64 / n as f64, trials: n }
}

fn check_sorted(values: &[usize]) -> Result<()> {
    if values.is_empty() || values.windows(2).any(|w| w[0] > w[1]) {
        return Err(PipelineError::Config("sweep values must be non-empty and ascending".into()));
    }
    Ok(())
}

pub fn bench_subsample_sweep(cfg: &ExperimentConfig, data: &Dataset, m_values: &[usize]) -> Result<SweepResult> {
    check_sorted(m_values)?;
    let mut rows = Vec::new();
    for &m in m_values {
        let c = ExperimentConfig { subsample: Some(m), ..cfg.clone() };
        rows.push(summarize(m.to_string(), &run_trials(&c, data)?));
    }
    Ok(SweepResult { rows })
}

/// Batch-size sweep; the subsample follows the per-method default unless
/// `cfg.subsample` is set.
pub fn bench_batch_sweep(cfg: &ExperimentConfig, data: &Dataset, b_values: &[usize]) -> Result<SweepResult> {
    check_sorted(b_values)?;
    let mut rows = Vec::new();
    for &b in b_values {
        let c = ExperimentConfig { batch: b, ..cfg.clone() };
        rows.push(summarize(b.to_string(), &run_trials(&c, data)?));
    }
    Ok(SweepResult { rows })
}

/// For each `N`, the aggregate of `N` clients with batch `cfg.batch`
/// (param `n<N>`) next to a single client with batch `N * cfg.batch`
/// (param `b<NB>`).
pub fn bench_defense(cfg: &ExperimentConfig, data: &Dataset, n_values: &[usize]) -> Result<SweepResult> {
    check_sorted(n_values)?;
    if n_values[0] == 0 {
        return Err(PipelineError::Config("client counts must be positive".into()));
    }
    let mut rows = Vec::new();
    for &n in n_values {
        let agg = ExperimentConfig { clients: n, ..cfg.clone() };
        rows.push(summarize(format!("n{n}"), &run_trials(&agg, data)?));
        let single = ExperimentConfig { clients: 1, batch: n * cfg.batch, ..cfg.clone() };
        rows.push(summarize(format!("b{}", n * cfg.batch), &run_trials(&single, data)?));
    }
    Ok(SweepResult { rows })
}
