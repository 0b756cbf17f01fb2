//! A small federated-learning simulator for fully connected ReLU networks.
//!
//! For a batch `X` (`B x u`) the first-layer weight gradient factors as
//! `G_w = (1/B) (L ⊙ R) X`, where `R` is the binary activation mask of the
//! first layer and `L` holds `∂ℓ_j/∂y_{m,j}`. With `L ≡ 1` the scaled gradient
//! `B G_w` is an instance of the hidden subset sum problem with `A = R`; the
//! helpers here build those instances after fixed-point encoding.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_traits::{Signed, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hssp::{HsspError, HsspInstance, PlantedInstance};
use crate::linalg::{self, unit_pivots_mod, Int, IntMatrix, Modulus};

#[derive(Debug, Error)]
pub enum FlError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no neuron with a nonzero bias gradient")]
    NoActiveNeuron,
    #[error("activation mask is not of full rank {0} modulo q")]
    RankDeficientMask(usize),
    #[error("value {0} does not fit the encoding range")]
    Overflow(f64),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Hssp(#[from] HsspError),
}

pub type Result<T> = std::result::Result<T, FlError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CrossEntropy,
    SumOfOutputs,
}

/// Fully connected network. Hidden layers use ReLU. The output layer is
/// linear, except for a single-layer model whose only layer is ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl MlpModel {
    pub fn new(weights: Vec<DMatrix<f64>>, biases: Vec<DVector<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(FlError::Shape("need one bias vector per weight matrix".into()));
        }
        let mut layer_sizes = vec![weights[0].ncols()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.ncols() != *layer_sizes.last().unwrap() || w.nrows() != b.len() {
                return Err(FlError::Shape(format!(
                    "layer {}x{} with bias {} after width {}",
                    w.nrows(),
                    w.ncols(),
                    b.len(),
                    layer_sizes.last().unwrap()
                )));
            }
            layer_sizes.push(w.nrows());
        }
        Ok(MlpModel { layer_sizes, weights, biases })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Number of first-layer neurons.
    pub fn neurons(&self) -> usize {
        self.layer_sizes[1]
    }

    pub fn first_layer(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.weights[0], &self.biases[0])
    }

    fn relu_at(&self, layer: usize) -> bool {
        layer + 1 < self.weights.len() || self.weights.len() == 1
    }

    /// Per-layer pre-activations and activations for one sample.
    fn forward(&self, x: &DVector<f64>) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let mut acts = vec![x.clone()];
        let mut pres = Vec::with_capacity(self.weights.len());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = w * acts.last().unwrap() + b;
            let a = if self.relu_at(l) { z.map(|v| v.max(0.0)) } else { z.clone() };
            pres.push(z);
            acts.push(a);
        }
        (pres, acts)
    }

    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        self.forward(x).1.pop().unwrap()
    }

    /// Mean loss over the batch.
    pub fn loss(&self, batch: &Batch, loss: Loss) -> f64 {
        let total: f64 = (0..batch.size())
            .map(|j| sample_loss(&self.output(&batch.sample(j)), batch.labels[j], loss))
            .sum();
        total / batch.size() as f64
    }

    pub fn predict(&self, x: &DVector<f64>) -> usize {
        self.output(x).argmax().0
    }

    pub fn to_json(&self) -> String {
        let ck = Checkpoint {
            layer_sizes: self.layer_sizes.clone(),
            weights: self.weights.iter().map(row_major).collect(),
            biases: self.biases.iter().map(|b| b.iter().copied().collect()).collect(),
        };
        serde_json::to_string(&ck).expect("serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s).map_err(|e| FlError::Format(e.to_string()))?;
        let n = ck.layer_sizes.len();
        if n < 2 || ck.weights.len() != n - 1 || ck.biases.len() != n - 1 {
            return Err(FlError::Format("layer count does not match the arrays".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..n - 1 {
            let (r, c) = (ck.layer_sizes[l + 1], ck.layer_sizes[l]);
            if ck.weights[l].len() != r * c || ck.biases[l].len() != r {
                return Err(FlError::Format(format!("layer {l} has the wrong number of entries")));
            }
            weights.push(DMatrix::from_row_slice(r, c, &ck.weights[l]));
            biases.push(DVector::from_column_slice(&ck.biases[l]));
        }
        MlpModel::new(weights, biases)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        MlpModel::from_json(&fs::read_to_string(path)?)
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

fn sample_loss(out: &DVector<f64>, label: usize, loss: Loss) -> f64 {
    match loss {
        Loss::SumOfOutputs => out.sum(),
        Loss::CrossEntropy => {
            let mx = out.max();
            let lse = mx + out.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            lse - out[label]
        }
    }
}

fn loss_grad(out: &DVector<f64>, label: usize, loss: Loss) -> DVector<f64> {
    match loss {
        Loss::SumOfOutputs => DVector::from_element(out.len(), 1.0),
        Loss::CrossEntropy => {
            let mx = out.max();
            let mut p = out.map(|v| (v - mx).exp());
            let s = p.sum();
            p /= s;
            p[label] -= 1.0;
            p
        }
    }
}

/// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn mlp_init(layer_sizes: &[usize], seed: u64) -> Result<MlpModel> {
    if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
        return Err(FlError::Shape(format!("invalid layer sizes {layer_sizes:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..=bound)));
        biases.push(DVector::from_fn(fan_out, |_, _| rng.gen_range(-bound..=bound)));
    }
    MlpModel::new(weights, biases)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// One sample per row.
    pub x: DMatrix<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(x: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        if x.nrows() == 0 || x.nrows() != labels.len() {
            return Err(FlError::Shape(format!("{} samples with {} labels", x.nrows(), labels.len())));
        }
        Ok(Batch { x, labels })
    }

    pub fn size(&self) -> usize {
        self.x.nrows()
    }

    pub fn sample(&self, j: usize) -> DVector<f64> {
        self.x.row(j).transpose()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub g_w: DMatrix<f64>,
    pub g_b: DVector<f64>,
    /// `∂ℓ_j/∂y_{m,j}`, one column per sample.
    pub l_factor: DMatrix<f64>,
    pub r_mask: IntMatrix,
    pub y_pre: DMatrix<f64>,
}

impl GradientBundle {
    /// `L ⊙ R`.
    pub fn d_factor(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.l_factor.nrows(), self.l_factor.ncols(), |m, j| {
            if self.r_mask.row(m)[j].is_zero() {
                0.0
            } else {
                self.l_factor[(m, j)]
            }
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rm = |m: &DMatrix<f64>| serde_json::json!({ "rows": m.nrows(), "cols": m.ncols(), "data": row_major(m) });
        let mask: Vec<u8> = self.r_mask.entries().iter().map(|v| u8::from(!v.is_zero())).collect();
        serde_json::json!({
            "g_w": rm(&self.g_w),
            "g_b": self.g_b.iter().copied().collect::<Vec<_>>(),
            "l_factor": rm(&self.l_factor),
            "r_mask": { "rows": self.r_mask.rows(), "cols": self.r_mask.cols(), "data": mask },
            "y_pre": rm(&self.y_pre),
        })
    }
}

fn check_batch(model: &MlpModel, batch: &Batch) -> Result<()> {
    if batch.x.ncols() != model.input_dim() {
        return Err(FlError::Shape(format!(
            "batch has {} features, model expects {}",
            batch.x.ncols(),
            model.input_dim()
        )));
    }
    let k = *model.layer_sizes.last().unwrap();
    if let Some(&l) = batch.labels.iter().find(|&&l| l >= k) {
        return Err(FlError::Shape(format!("label {l} out of range for {k} outputs")));
    }
    Ok(())
}

/// Gradients of every layer, `(dW_l, db_l)`, plus the first-layer factors.
fn backprop(model: &MlpModel, batch: &Batch, loss: Loss) -> (Vec<(DMatrix<f64>, DVector<f64>)>, GradientBundle) {
    let b = batch.size();
    let m = model.neurons();
    let inv_b = 1.0 / b as f64;
    let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = model
        .weights
        .iter()
        .map(|w| (DMatrix::zeros(w.nrows(), w.ncols()), DVector::zeros(w.nrows())))
        .collect();
    let mut l_factor = DMatrix::zeros(m, b);
    let mut y_pre = DMatrix::zeros(m, b);
    let mut mask = vec![Int::zero(); m * b];
    for j in 0..b {
        let (pres, acts) = model.forward(&batch.sample(j));
        let mut g = loss_grad(acts.last().unwrap(), batch.labels[j], loss);
        for l in (0..model.weights.len()).rev() {
            if l == 0 {
                l_factor.set_column(j, &g);
            }
            let dz = if model.relu_at(l) {
                g.zip_map(&pres[l], |gv, z| if z > 0.0 { gv } else { 0.0 })
            } else {
                g.clone()
            };
            grads[l].0.ger(inv_b, &dz, &acts[l], 1.0);
            grads[l].1.axpy(inv_b, &dz, 1.0);
            if l > 0 {
                g = model.weights[l].tr_mul(&dz);
            }
        }
        y_pre.set_column(j, &pres[0]);
        for i in 0..m {
            if pres[0][i] > 0.0 {
                mask[i * b + j] = Int::from(1);
            }
        }
    }
    let bundle = GradientBundle {
        g_w: grads[0].0.clone(),
        g_b: grads[0].1.clone(),
        l_factor,
        r_mask: IntMatrix::from_vec(m, b, mask).expect("shape"),
        y_pre,
    };
    (grads, bundle)
}

/// First-layer gradients of the mean batch loss with their `L`, `R` factors.
pub fn first_layer_grads(model: &MlpModel, batch: &Batch, loss: Loss) -> Result<GradientBundle> {
    check_batch(model, batch)?;
    Ok(backprop(model, batch, loss).1)
}

/// Closed-form recovery of a single sample: `x = g_w[m,:] / g_b[m]`.
pub fn single_sample_reconstruct(bundle: &GradientBundle) -> Result<DVector<f64>> {
    let m = (0..bundle.g_b.len()).find(|&m| bundle.g_b[m] != 0.0).ok_or(FlError::NoActiveNeuron)?;
    Ok(bundle.g_w.row(m).transpose() / bundle.g_b[m])
}

#[derive(Clone, Debug)]
pub struct FlRound {
    pub g_w: DMatrix<f64>,
    pub g_b: DVector<f64>,
    pub clients: Vec<GradientBundle>,
    /// `(D_1 ... D_N)` with `D_i = L_i ⊙ R_i`.
    pub stacked_d: DMatrix<f64>,
    /// `(X_1; ...; X_N)`.
    pub stacked_x: DMatrix<f64>,
}

pub fn fl_round(model: &MlpModel, client_batches: &[Batch], loss: Loss) -> Result<FlRound> {
    if client_batches.is_empty() {
        return Err(FlError::Shape("need at least one client".into()));
    }
    let clients = client_batches
        .iter()
        .map(|b| first_layer_grads(model, b, loss))
        .collect::<Result<Vec<_>>>()?;
    let n = clients.len() as f64;
    let mut g_w = DMatrix::zeros(clients[0].g_w.nrows(), clients[0].g_w.ncols());
    let mut g_b = DVector::zeros(clients[0].g_b.len());
    for c in &clients {
        g_w += &c.g_w;
        g_b += &c.g_b;
    }
    g_w /= n;
    g_b /= n;
    let ds: Vec<DMatrix<f64>> = clients.iter().map(GradientBundle::d_factor).collect();
    let stacked_d = hstack(&ds);
    let stacked_x = vstack(&client_batches.iter().map(|b| b.x.clone()).collect::<Vec<_>>());
    Ok(FlRound { g_w, g_b, clients, stacked_d, stacked_x })
}

fn hstack(ms: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = ms[0].nrows();
    let cols: usize = ms.iter().map(|m| m.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for m in ms {
        out.view_mut((0, c), (rows, m.ncols())).copy_from(m);
        c += m.ncols();
    }
    out
}

fn vstack(ms: &[DMatrix<f64>]) -> DMatrix<f64> {
    let cols = ms[0].ncols();
    let rows: usize = ms.iter().map(|m| m.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for m in ms {
        out.view_mut((r, 0), (m.nrows(), cols)).copy_from(m);
        r += m.nrows();
    }
    out
}

fn sgd_step(model: &MlpModel, grads: &[(DMatrix<f64>, DVector<f64>)], eta: f64) -> MlpModel {
    let weights = model.weights.iter().zip(grads).map(|(w, g)| w - &g.0 * eta).collect();
    let biases = model.biases.iter().zip(grads).map(|(b, g)| b - &g.1 * eta).collect();
    MlpModel { layer_sizes: model.layer_sizes.clone(), weights, biases }
}

/// Each client takes one local step of size `eta`, the server averages the
/// resulting models.
pub fn weight_sharing_round(model: &MlpModel, client_batches: &[Batch], loss: Loss, eta: f64) -> Result<MlpModel> {
    if client_batches.is_empty() {
        return Err(FlError::Shape("need at least one client".into()));
    }
    let mut local = Vec::with_capacity(client_batches.len());
    for b in client_batches {
        check_batch(model, b)?;
        local.push(sgd_step(model, &backprop(model, b, loss).0, eta));
    }
    let n = local.len() as f64;
    let mut avg = local[0].clone();
    for m in &local[1..] {
        for (a, w) in avg.weights.iter_mut().zip(&m.weights) {
            *a += w;
        }
        for (a, b) in avg.biases.iter_mut().zip(&m.biases) {
            *a += b;
        }
    }
    for w in &mut avg.weights {
        *w /= n;
    }
    for b in &mut avg.biases {
        *b /= n;
    }
    Ok(avg)
}

/// Fixed-point encoding of reals as residues modulo `q`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoding {
    pub scale: u32,
    pub q: Modulus,
}

pub const DEFAULT_SCALE: u32 = 256;

impl Encoding {
    pub fn new(scale: u32, q: Modulus) -> Result<Self> {
        if !scale.is_power_of_two() {
            return Err(FlError::Format(format!("scale {scale} is not a power of two")));
        }
        Ok(Encoding { scale, q })
    }

    /// Bits of a modulus that keeps `A X` with `|x| <= max_abs` free of
    /// wrap-around for a binary `A` with `batch` columns.
    pub fn min_q_bits(scale: u32, max_abs: f64, batch: usize, dim: usize) -> u64 {
        let bound = 2.0 * scale as f64 * max_abs.max(1.0) * batch as f64 * dim as f64;
        bound.log2().ceil() as u64 + 1
    }
}

pub fn encode_real(mat: &DMatrix<f64>, enc: &Encoding) -> Result<IntMatrix> {
    let s = enc.scale as f64;
    let mut data = Vec::with_capacity(mat.len());
    for i in 0..mat.nrows() {
        for j in 0..mat.ncols() {
            let v = mat[(i, j)];
            if !v.is_finite() {
                return Err(FlError::Overflow(v));
            }
            let r = linalg::round_f64(s * v);
            if Int::from(2) * r.abs() >= *enc.q.value() {
                return Err(FlError::Overflow(v));
            }
            data.push(enc.q.reduce(&r));
        }
    }
    Ok(IntMatrix::from_vec(mat.nrows(), mat.ncols(), data).expect("shape"))
}

pub fn decode_int(mat: &IntMatrix, enc: &Encoding) -> DMatrix<f64> {
    let s = enc.scale as f64;
    DMatrix::from_fn(mat.rows(), mat.cols(), |i, j| {
        enc.q.center(&mat.row(i)[j]).to_f64().unwrap_or(f64::NAN) / s
    })
}

/// `H = R encode(X) mod q`, the scaled gradient under `L ≡ 1`.
/// `inputs` holds one sample per row, restricted to the attacked features.
pub fn binary_regime_instance(
    bundle: &GradientBundle,
    inputs: &DMatrix<f64>,
    enc: &Encoding,
) -> Result<(HsspInstance, PlantedInstance)> {
    planted(bundle.r_mask.clone(), encode_real(inputs, enc)?, enc)
}

/// Instance seen by an aggregator that sums `N` clients: `A = (R_1 ... R_N)`
/// and `X` stacks the clients' encoded inputs.
pub fn secure_aggregate_instance(
    bundles: &[GradientBundle],
    inputs: &[DMatrix<f64>],
    enc: &Encoding,
) -> Result<(HsspInstance, PlantedInstance)> {
    if bundles.is_empty() || bundles.len() != inputs.len() {
        return Err(FlError::Shape("need one input matrix per client bundle".into()));
    }
    let mut a = bundles[0].r_mask.clone();
    let mut x = encode_real(&inputs[0], enc)?;
    for (b, inp) in bundles.iter().zip(inputs).skip(1) {
        a = a.hconcat(&b.r_mask).map_err(HsspError::from)?;
        x = x.vconcat(&encode_real(inp, enc)?).map_err(HsspError::from)?;
    }
    planted(a, x, enc)
}

fn planted(a: IntMatrix, x: IntMatrix, enc: &Encoding) -> Result<(HsspInstance, PlantedInstance)> {
    let batch = a.cols();
    if x.rows() != batch {
        return Err(FlError::Shape(format!("mask has {batch} columns, inputs have {} rows", x.rows())));
    }
    if unit_pivots_mod(&a, &enc.q, batch).is_none() {
        return Err(FlError::RankDeficientMask(batch));
    }
    let h = a.mul_mod(&x, &enc.q).map_err(HsspError::from)?;
    let inst = HsspInstance::new(enc.q.clone(), h, batch)?;
    let p = PlantedInstance::new(inst.clone(), a, x)?;
    Ok((inst, p))
}

// ---------------------------------------------------------------------------
// Data

/// Samples in rows with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn batch(&self, idx: &[usize]) -> Result<Batch> {
        let x = self.features.select_rows(idx);
        Batch::new(x, idx.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn random_batch<R: Rng + ?Sized>(&self, b: usize, rng: &mut R) -> Result<Batch> {
        if b > self.len() {
            return Err(FlError::Shape(format!("batch {b} from {} samples", self.len())));
        }
        let idx: Vec<usize> = rand::seq::index::sample(rng, self.len(), b).into_vec();
        self.batch(&idx)
    }

    /// `b` distinct samples that all carry `label`.
    pub fn class_batch<R: Rng + ?Sized>(&self, label: usize, b: usize, rng: &mut R) -> Result<Batch> {
        let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == label).collect();
        if idx.len() < b {
            return Err(FlError::Shape(format!("class {label} has {} samples, need {b}", idx.len())));
        }
        idx.shuffle(rng);
        idx.truncate(b);
        self.batch(&idx)
    }

    /// First `k` features only.
    pub fn truncate_features(&self, k: usize) -> Dataset {
        let k = k.min(self.dim());
        Dataset { features: self.features.columns(0, k).into_owned(), labels: self.labels.clone() }
    }
}

/// 8-bit images scaled to `[0, 1]`: a random prototype per class plus
/// per-pixel noise, clipped to `0..=255`.
pub fn synthetic_images(n: usize, dim: usize, classes: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = classes.max(1);
    let protos: Vec<Vec<f64>> =
        (0..classes).map(|_| (0..dim).map(|_| rng.gen_range(32.0..224.0)).collect()).collect();
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let c = rng.gen_range(0..classes);
        labels.push(c);
        for p in &protos[c] {
            let noise: f64 = rng.gen_range(-96.0..96.0);
            data.push((p + noise).round().clamp(0.0, 255.0) / 255.0);
        }
    }
    Dataset { features: DMatrix::from_row_slice(n, dim, &data), labels }
}

/// One sample per line, numeric features and an optional trailing label.
/// A first line that does not parse as numbers is treated as a header.
pub fn load_csv(path: impl AsRef<Path>, has_label: bool, scale: f64) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| FlError::Format(e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| FlError::Format(e.to_string()))?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if line == 0 => continue,
            Err(e) => return Err(FlError::Format(format!("line {}: {e}", line + 1))),
        }
    }
    let width = rows.first().map_or(0, Vec::len);
    let dim = width.saturating_sub(usize::from(has_label));
    if dim == 0 {
        return Err(FlError::Format("no feature columns".into()));
    }
    let mut data = Vec::with_capacity(rows.len() * dim);
    let mut labels = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(FlError::Format(format!("row {i} has {} fields, expected {width}", r.len())));
        }
        data.extend(r[..dim].iter().map(|v| v * scale));
        labels.push(if has_label {
            let l = r[dim];
            if l < 0.0 || l.fract() != 0.0 {
                return Err(FlError::Format(format!("row {i} label {l} is not a class index")));
            }
            l as usize
        } else {
            0
        });
    }
    Ok(Dataset { features: DMatrix::from_row_slice(rows.len(), dim, &data), labels })
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Unsigned-byte IDX tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
            .ok_or_else(|| FlError::Format("truncated IDX header".into()))
    };
    let magic = word(0)?;
    let ndims = match magic {
        IDX_IMAGES_MAGIC => 3,
        IDX_LABELS_MAGIC => 1,
        _ => return Err(FlError::Format(format!("unsupported IDX magic {magic:#010x}"))),
    };
    let dims = (1..=ndims).map(|i| word(i).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let start = 4 * (ndims + 1);
    let len: usize = dims.iter().product();
    if bytes.len() != start + len {
        return Err(FlError::Format(format!("IDX body has {} bytes, expected {len}", bytes.len() - start)));
    }
    Ok(IdxTensor { dims, data: bytes[start..].to_vec() })
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxTensor> {
    parse_idx(&fs::read(path)?)
}

pub fn write_idx(t: &IdxTensor) -> Vec<u8> {
    let magic = if t.dims.len() == 3 { IDX_IMAGES_MAGIC } else { IDX_LABELS_MAGIC };
    let mut out = magic.to_be_bytes().to_vec();
    for &d in &t.dims {
        out.extend((d as u32).to_be_bytes());
    }
    out.extend(&t.data);
    out
}

/// Images and labels as a dataset with pixels scaled to `[0, 1]`.
pub fn idx_dataset(images: &IdxTensor, labels: &IdxTensor) -> Result<Dataset> {
    if images.dims.len() != 3 || labels.dims.len() != 1 || images.dims[0] != labels.dims[0] {
        return Err(FlError::Format("image and label tensors do not match".into()));
    }
    let n = images.dims[0];
    let dim = images.dims[1] * images.dims[2];
    let data: Vec<f64> = images.data.iter().map(|&p| p as f64 / 255.0).collect();
    Ok(Dataset {
        features: DMatrix::from_row_slice(n, dim, &data),
        labels: labels.data.iter().map(|&l| l as usize).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rounds: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { rounds: 10, batch: 32, lr: 0.03, seed: 0 }
    }
}

/// Plain minibatch SGD on cross-entropy.
pub fn train(model: &MlpModel, data: &Dataset, cfg: &TrainConfig) -> Result<MlpModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut m = model.clone();
    for _ in 0..cfg.rounds {
        let b = data.random_batch(cfg.batch.min(data.len()), &mut rng)?;
        check_batch(&m, &b)?;
        let grads = backprop(&m, &b, Loss::CrossEntropy).0;
        m = sgd_step(&m, &grads, cfg.lr);
    }
    Ok(m)
}

/// Maximum entry of `|a - b|` divided by the maximum entry of `|a|`.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a.amax();
    let diff = (a - b).amax();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_random(seed: u64, sizes: &[usize], b: usize) -> (MlpModel, Batch) {
        let model = mlp_init(sizes, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let x = DMatrix::from_fn(b, sizes[0], |_, _| rng.gen_range(-1.0..1.0));
        let k = *sizes.last().unwrap();
        let labels = (0..b).map(|_| rng.gen_range(0..k)).collect();
        (model, Batch::new(x, labels).unwrap())
    }

    #[test]
    fn init_shapes_and_determinism() {
        let m = mlp_init(&[2, 2, 2], 1).unwrap();
        assert_eq!(m.weights()[0].shape(), (2, 2));
        assert_eq!(m.biases()[1].len(), 2);
        assert_eq!(m, mlp_init(&[2, 2, 2], 1).unwrap());
        assert_ne!(m, mlp_init(&[2, 2, 2], 2).unwrap());
        let big = mlp_init(&[3072, 500, 100, 10], 0).unwrap();
        assert_eq!(big.layer_sizes(), &[3072, 500, 100, 10]);
        let bound = 1.0 / 3072f64.sqrt();
        assert!(big.weights()[0].amax() <= bound);
        assert!(mlp_init(&[4], 0).is_err());
    }

    #[test]
    fn hand_backprop_example() {
        let model = MlpModel::new(vec![DMatrix::identity(2, 2)], vec![DVector::zeros(2)]).unwrap();
        let batch = Batch::new(DMatrix::from_row_slice(1, 2, &[1.0, -1.0]), vec![0]).unwrap();
        let g = first_layer_grads(&model, &batch, Loss::SumOfOutputs).unwrap();
        assert_eq!(g.r_mask, IntMatrix::from_i64(&[&[1], &[0]]));
        assert_eq!(g.g_w, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0]));
        assert_eq!(g.g_b, DVector::from_column_slice(&[1.0, 0.0]));
    }

    #[test]
    fn dead_relu_gives_zero_gradient() {
        let mut model = mlp_init(&[3, 4, 2], 5).unwrap();
        model.weights[0].fill(0.0);
        model.biases[0].fill(-1.0);
        let (_, batch) = small_random(5, &[3, 4, 2], 3);
        let g = first_layer_grads(&model, &batch, Loss::CrossEntropy).unwrap();
        assert_eq!(g.g_w.amax(), 0.0);
        assert_eq!(g.g_b.amax(), 0.0);
        assert!(matches!(single_sample_reconstruct(&g), Err(FlError::NoActiveNeuron)));
    }

    #[test]
    fn factorization_and_mask() {
        for (seed, sizes) in [(1, vec![6, 8, 5, 3]), (2, vec![5, 7, 4]), (3, vec![4, 6])] {
            let (model, batch) = small_random(seed, &sizes, 4);
            for loss in [Loss::CrossEntropy, Loss::SumOfOutputs] {
                let g = first_layer_grads(&model, &batch, loss).unwrap();
                let d = g.d_factor();
                let prod = &d * &batch.x / batch.size() as f64;
                assert!(relative_error(&g.g_w, &prod) <= 1e-12);
                let gb = &d * DVector::from_element(batch.size(), 1.0) / batch.size() as f64;
                assert!((&g.g_b - gb).amax() <= 1e-12 * g.g_b.amax().max(1.0));
                let (w, b) = model.first_layer();
                for j in 0..batch.size() {
                    let z = w * batch.sample(j) + b;
                    for m in 0..z.len() {
                        assert_eq!(g.r_mask.row(m)[j] == Int::from(1), z[m] > 0.0);
                    }
                }
            }
        }
    }

    fn perturbed(model: &MlpModel, m: usize, k: usize, bias: bool, h: f64) -> MlpModel {
        let mut p = model.clone();
        if bias {
            p.biases[0][m] += h;
        } else {
            p.weights[0][(m, k)] += h;
        }
        p
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (model, batch) = small_random(9, &[5, 6, 4, 3], 3);
        for loss in [Loss::CrossEntropy, Loss::SumOfOutputs] {
            let g = first_layer_grads(&model, &batch, loss).unwrap();
            let h = 1e-6;
            for m in 0..6 {
                for k in 0..5 {
                    let fd = (perturbed(&model, m, k, false, h).loss(&batch, loss)
                        - perturbed(&model, m, k, false, -h).loss(&batch, loss))
                        / (2.0 * h);
                    assert!((fd - g.g_w[(m, k)]).abs() <= 1e-4 * (1.0 + fd.abs()), "{fd} {}", g.g_w[(m, k)]);
                }
                let fd = (perturbed(&model, m, 0, true, h).loss(&batch, loss)
                    - perturbed(&model, m, 0, true, -h).loss(&batch, loss))
                    / (2.0 * h);
                assert!((fd - g.g_b[m]).abs() <= 1e-4 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn single_sample_recovery() {
        let bundle = GradientBundle {
            g_w: DMatrix::from_row_slice(1, 2, &[2.0, -4.0]),
            g_b: DVector::from_column_slice(&[2.0]),
            l_factor: DMatrix::from_element(1, 1, 1.0),
            r_mask: IntMatrix::from_i64(&[&[1]]),
            y_pre: DMatrix::from_element(1, 1, 1.0),
        };
        assert_eq!(single_sample_reconstruct(&bundle).unwrap(), DVector::from_column_slice(&[1.0, -2.0]));
        let (model, batch) = small_random(4, &[7, 10, 3], 1);
        let g = first_layer_grads(&model, &batch, Loss::CrossEntropy).unwrap();
        let x = single_sample_reconstruct(&g).unwrap();
        assert!((x - batch.sample(0)).amax() <= 1e-9);
    }

    #[test]
    fn rounds_average_and_stack() {
        let (model, b1) = small_random(3, &[5, 6, 3], 4);
        let single = first_layer_grads(&model, &b1, Loss::CrossEntropy).unwrap();
        let r1 = fl_round(&model, std::slice::from_ref(&b1), Loss::CrossEntropy).unwrap();
        assert_eq!(r1.g_w, single.g_w);
        let r2 = fl_round(&model, &[b1.clone(), b1.clone()], Loss::CrossEntropy).unwrap();
        assert!((&r2.g_w - &single.g_w).amax() <= 1e-15);
        let batches: Vec<Batch> = (0..3).map(|s| small_random(3 + 10 * s, &[5, 6, 3], 4).1).collect();
        let r = fl_round(&model, &batches, Loss::CrossEntropy).unwrap();
        let prod = &r.stacked_d * &r.stacked_x / 12.0;
        assert!(relative_error(&r.g_w, &prod) <= 1e-9);
    }

    #[test]
    fn weight_sharing_matches_gradient_sharing() {
        let (model, _) = small_random(6, &[5, 6, 3], 2);
        let batches: Vec<Batch> = (0..4).map(|s| small_random(60 + s, &[5, 6, 3], 2).1).collect();
        assert_eq!(weight_sharing_round(&model, &batches, Loss::CrossEntropy, 0.0).unwrap(), model);
        let eta = 0.03;
        let ws = weight_sharing_round(&model, &batches, Loss::CrossEntropy, eta).unwrap();
        let r = fl_round(&model, &batches, Loss::CrossEntropy).unwrap();
        let expected = &model.weights()[0] - &r.g_w * eta;
        assert!((&ws.weights()[0] - expected).amax() <= 1e-12);
        let one = weight_sharing_round(&model, &batches[..1], Loss::CrossEntropy, eta).unwrap();
        let g = first_layer_grads(&model, &batches[0], Loss::CrossEntropy).unwrap();
        assert_eq!(one.weights()[0], &model.weights()[0] - &g.g_w * eta);
    }

    fn enc(bits: u64) -> Encoding {
        let mut rng = ChaCha8Rng::seed_from_u64(bits);
        Encoding::new(256, Modulus::new(linalg::random_prime(bits, &mut rng)).unwrap()).unwrap()
    }

    #[test]
    fn encoding_examples_and_roundtrip() {
        let e = enc(40);
        let v = DMatrix::from_row_slice(1, 2, &[0.5, -0.5]);
        let m = encode_real(&v, &e).unwrap();
        assert_eq!(m.row(0)[0], Int::from(128));
        assert_eq!(m.row(0)[1], e.q.value() - Int::from(128));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = DMatrix::from_fn(20, 20, |_, _| rng.gen_range(-100.0..100.0));
        let back = decode_int(&encode_real(&r, &e).unwrap(), &e);
        assert!((back - r).amax() <= 1.0 / 512.0);
        let small = Encoding::new(256, Modulus::new(1000).unwrap()).unwrap();
        assert!(matches!(
            encode_real(&DMatrix::from_element(1, 1, 2.0), &small),
            Err(FlError::Overflow(_))
        ));
        assert!(Encoding::new(100, Modulus::new(7).unwrap()).is_err());
    }

    #[test]
    fn pixel_encoding_is_injective() {
        let e = enc(20);
        let px = DMatrix::from_fn(1, 256, |_, j| j as f64 / 255.0);
        let m = encode_real(&px, &e).unwrap();
        let mut vals: Vec<Int> = m.entries().to_vec();
        vals.dedup();
        assert_eq!(vals.len(), 256);
    }

    #[test]
    fn binary_regime_example() {
        let e = Encoding::new(1, Modulus::new(101).unwrap()).unwrap();
        let bundle = GradientBundle {
            g_w: DMatrix::zeros(3, 2),
            g_b: DVector::zeros(3),
            l_factor: DMatrix::zeros(3, 2),
            r_mask: IntMatrix::from_i64(&[&[1, 0], &[0, 1], &[1, 1]]),
            y_pre: DMatrix::zeros(3, 2),
        };
        let x = DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 4.0, 5.0]);
        let (inst, p) = binary_regime_instance(&bundle, &x, &e).unwrap();
        assert_eq!(inst.h(), &IntMatrix::from_i64(&[&[2, 3], &[4, 5], &[6, 8]]));
        assert_eq!(p.a, bundle.r_mask);
        let mut dead = bundle.clone();
        dead.r_mask = IntMatrix::from_i64(&[&[1, 1], &[0, 0], &[1, 1]]);
        assert!(matches!(binary_regime_instance(&dead, &x, &e), Err(FlError::RankDeficientMask(2))));

        let (inst2, _) = secure_aggregate_instance(&[bundle.clone()], &[x.clone()], &e).unwrap();
        assert_eq!(inst2, inst);
    }

    #[test]
    fn sum_of_outputs_single_layer_is_binary_regime() {
        let (model, batch) = small_random(8, &[6, 12], 3);
        let g = first_layer_grads(&model, &batch, Loss::SumOfOutputs).unwrap();
        let d = g.d_factor();
        for m in 0..12 {
            for j in 0..3 {
                let r = if g.r_mask.row(m)[j].is_zero() { 0.0 } else { 1.0 };
                assert_eq!(d[(m, j)], r);
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = mlp_init(&[4, 3, 2], 11).unwrap();
        assert_eq!(MlpModel::from_json(&m.to_json()).unwrap(), m);
        assert!(MlpModel::from_json("{\"layer_sizes\":[2,2],\"weights\":[[1]],\"biases\":[[0,0]]}").is_err());
    }

    #[test]
    fn idx_roundtrip_and_dataset() {
        let images = IdxTensor { dims: vec![2, 2, 2], data: vec![0, 255, 51, 102, 1, 2, 3, 4] };
        let labels = IdxTensor { dims: vec![2], data: vec![3, 1] };
        let bytes = write_idx(&images);
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(parse_idx(&bytes).unwrap(), images);
        let ds = idx_dataset(&images, &parse_idx(&write_idx(&labels)).unwrap()).unwrap();
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.features[(0, 1)], 1.0);
        assert_eq!(ds.labels, vec![3, 1]);
        assert!(parse_idx(&[0, 0, 8, 2, 0, 0, 0, 1]).is_err());
        assert!(parse_idx(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn training_changes_model() {
        let data = synthetic_images(64, 8, 3, 1);
        let model = mlp_init(&[8, 6, 3], 0).unwrap();
        let cfg = TrainConfig { rounds: 5, batch: 8, lr: 0.03, seed: 2 };
        let trained = train(&model, &data, &cfg).unwrap();
        assert_ne!(trained, model);
        assert_eq!(trained, train(&model, &data, &cfg).unwrap());
    }
}
