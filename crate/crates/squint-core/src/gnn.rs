//! Learned hybrid beamformer: a bipartite graph network with one analog node
//! and one digital node per subcarrier.
//!
//! Edge `k` carries the subcarrier's channel matrix (split into real and
//! imaginary parts) as its feature. Each of the `L` updating rounds runs a
//! message-passing step and a node-update step through four dense networks
//! shared across rounds and across digital nodes; messages toward the analog
//! node are aggregated with an entrywise mean, which is what makes the
//! analog output independent of subcarrier ordering and lets a model trained
//! at one subcarrier count run at any other. A final reconstruction turns
//! the analog state into unit-modulus phases and the digital states into
//! power-normalized precoders, so the output satisfies the hardware
//! constraints no matter how (un)trained the networks are.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::channel::ChannelRealization;
use crate::io;
use crate::linalg::ComplexMatrix;
use crate::parallel;
use crate::system::{
    spectral_efficiency, trace_negative_se, HybridBeamformer, LinkBudget,
};
use crate::tensor::RealTensor;
use crate::{Error, Result};

const MODEL_MAGIC: [u8; 4] = *b"SQNN";
const MODEL_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Dimensions
// ---------------------------------------------------------------------------

/// Antenna/stream dimensions a model is bound to. The subcarrier count is
/// deliberately absent: the same weights serve any number of digital nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_rf: usize,
    pub n_streams: usize,
}

impl ModelDims {
    pub fn new(n_tx: usize, n_rx: usize, n_rf: usize, n_streams: usize) -> Result<Self> {
        let dims = ModelDims { n_tx, n_rx, n_rf, n_streams };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rx == 0 || self.n_streams == 0 || self.n_streams > self.n_rf || self.n_rf > self.n_tx
        {
            return Err(Error::Config(format!(
                "need 1 <= n_streams <= n_rf <= n_tx and n_rx >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Length of an edge feature: real and imaginary channel entries.
    pub fn edge_width(&self) -> usize {
        2 * self.n_tx * self.n_rx
    }

    /// Length of the analog node state: one phase per analog entry.
    pub fn analog_width(&self) -> usize {
        self.n_tx * self.n_rf
    }

    /// Length of a digital node state: real and imaginary precoder entries.
    pub fn digital_width(&self) -> usize {
        2 * self.n_rf * self.n_streams
    }
}

// ---------------------------------------------------------------------------
// Dense sub-networks
// ---------------------------------------------------------------------------

/// Input → 2·input → 2·input → output, rectified between the affine maps.
#[derive(Clone, Debug)]
struct Mlp {
    weights: [RealTensor; 3],
    biases: [RealTensor; 3],
}

impl Mlp {
    /// He-style initialization: weight entries drawn row by row from
    /// `N(0, 2/fan_in)`, biases zero.
    fn init(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let hidden = 2 * input;
        let shapes = [(hidden, input), (hidden, hidden), (output, hidden)];
        let weights = shapes.map(|(rows, cols)| {
            let dist = Normal::new(0.0, (2.0 / cols as f64).sqrt()).expect("positive deviation");
            let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
            RealTensor::matrix(rows, cols, data).expect("shape matches data")
        });
        let biases = shapes.map(|(rows, _)| RealTensor::zeros(&[rows, 1]));
        Mlp { weights, biases }
    }

    fn from_tensors(tensors: &mut impl Iterator<Item = RealTensor>) -> Result<Self> {
        let mut next = || {
            tensors
                .next()
                .ok_or_else(|| Error::Format("model payload ended mid-network".into()))
        };
        let (w1, b1, w2, b2, w3, b3) = (next()?, next()?, next()?, next()?, next()?, next()?);
        Ok(Mlp { weights: [w1, w2, w3], biases: [b1, b2, b3] })
    }

    fn check_widths(&self, input: usize, output: usize, name: &str) -> Result<()> {
        let hidden = 2 * input;
        let want = [(hidden, input), (hidden, hidden), (output, hidden)];
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if w.dims() != want[i] || b.dims() != (want[i].0, 1) {
                return Err(Error::Format(format!(
                    "network {name} layer {i}: {:?} weights for declared dimensions",
                    w.dims()
                )));
            }
        }
        Ok(())
    }
}

/// Tape handles for one sub-network's parameters.
struct MlpNodes {
    weights: [NodeId; 3],
    biases: [NodeId; 3],
}

impl MlpNodes {
    /// Register the network's parameters on the tape, appending their node
    /// handles to `handles` in the same weight/bias interleaving that
    /// `GnnModel::parameters` uses.
    fn register(mlp: &Mlp, tape: &mut Tape, handles: &mut Vec<NodeId>) -> Self {
        let mut reg = |t: &RealTensor| {
            let id = tape.param(Arc::new(t.clone()));
            handles.push(id);
            id
        };
        let w1 = reg(&mlp.weights[0]);
        let b1 = reg(&mlp.biases[0]);
        let w2 = reg(&mlp.weights[1]);
        let b2 = reg(&mlp.biases[1]);
        let w3 = reg(&mlp.weights[2]);
        let b3 = reg(&mlp.biases[2]);
        MlpNodes { weights: [w1, w2, w3], biases: [b1, b2, b3] }
    }

    fn apply(&self, tape: &mut Tape, input: NodeId) -> Result<NodeId> {
        let a1 = tape.affine_cols(self.weights[0], input, self.biases[0])?;
        let h1 = tape.relu(a1)?;
        let a2 = tape.affine_cols(self.weights[1], h1, self.biases[1])?;
        let h2 = tape.relu(a2)?;
        tape.affine_cols(self.weights[2], h2, self.biases[2])
    }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// The four dense networks and the round count. `message_in` produces the
/// analog-bound messages, `message_out` the digital-bound ones,
/// `update_analog` and `update_digital` refresh the node states.
#[derive(Clone, Debug)]
pub struct GnnModel {
    dims: ModelDims,
    rounds: usize,
    message_in: Mlp,
    message_out: Mlp,
    update_analog: Mlp,
    update_digital: Mlp,
}

/// Serialized header of a model file.
#[derive(Serialize, Deserialize)]
struct ModelHeader {
    dims: ModelDims,
    rounds: usize,
    values: u64,
    endianness: String,
}

impl GnnModel {
    /// Fresh model with He-initialized weights. Networks are initialized in
    /// the order analog-message, digital-message, analog-update,
    /// digital-update.
    pub fn new(dims: ModelDims, rounds: usize, seed: u64) -> Result<Self> {
        dims.validate()?;
        if rounds == 0 {
            return Err(Error::Config("at least one updating round is required".into()));
        }
        let (e, a, d) = (dims.edge_width(), dims.analog_width(), dims.digital_width());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(GnnModel {
            dims,
            rounds,
            message_in: Mlp::init(e + a + d + a, a, &mut rng),
            message_out: Mlp::init(e + d + a + d, d, &mut rng),
            update_analog: Mlp::init(a + d + e, a, &mut rng),
            update_digital: Mlp::init(d + a + e, d, &mut rng),
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    fn networks(&self) -> [&Mlp; 4] {
        [&self.message_in, &self.message_out, &self.update_analog, &self.update_digital]
    }

    fn networks_mut(&mut self) -> [&mut Mlp; 4] {
        [
            &mut self.message_in,
            &mut self.message_out,
            &mut self.update_analog,
            &mut self.update_digital,
        ]
    }

    /// All parameter tensors in the canonical order: per network (analog
    /// message, digital message, analog update, digital update) the weight
    /// and bias of each layer in turn.
    pub fn parameters(&self) -> Vec<&RealTensor> {
        let mut out = Vec::with_capacity(24);
        for m in self.networks() {
            for (w, b) in m.weights.iter().zip(&m.biases) {
                out.push(w);
                out.push(b);
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut RealTensor> {
        let mut out = Vec::with_capacity(24);
        for m in self.networks_mut() {
            for (w, b) in m.weights.iter_mut().zip(m.biases.iter_mut()) {
                out.push(w);
                out.push(b);
            }
        }
        out
    }

    fn register(&self, tape: &mut Tape) -> ([MlpNodes; 4], Vec<NodeId>) {
        let mut handles = Vec::with_capacity(24);
        let nodes = self.networks().map(|m| MlpNodes::register(m, tape, &mut handles));
        (nodes, handles)
    }

    fn check_channel(&self, channel: &ChannelRealization) -> Result<()> {
        let h = channel.subcarrier(0);
        if h.rows() != self.dims.n_rx || h.cols() != self.dims.n_tx {
            return Err(Error::dim(
                "gnn forward",
                format!(
                    "{}x{} channel for a {}x{} model",
                    h.rows(),
                    h.cols(),
                    self.dims.n_rx,
                    self.dims.n_tx
                ),
            ));
        }
        Ok(())
    }

    // ── file format ─────────────────────────────────────────────────────

    /// Write the model: magic, version, JSON header, then every parameter
    /// tensor's entries as little-endian doubles in canonical order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let values: u64 = self.parameters().iter().map(|t| t.numel() as u64).sum();
        let header = serde_json::to_vec(&ModelHeader {
            dims: self.dims,
            rounds: self.rounds,
            values,
            endianness: "LE".into(),
        })?;
        io::write_frame_start(&mut w, &MODEL_MAGIC, MODEL_VERSION, &header)?;
        for t in self.parameters() {
            io::write_f64s(&mut w, t.data())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let header = io::read_frame_start(&mut r, &MODEL_MAGIC, MODEL_VERSION, "model header")?;
        let header: ModelHeader = serde_json::from_slice(&header)?;
        if header.endianness != "LE" {
            return Err(Error::Format(format!(
                "unsupported endianness tag {:?}",
                header.endianness
            )));
        }
        let reference = GnnModel::new(header.dims, header.rounds, 0)?;
        let declared: u64 = reference.parameters().iter().map(|t| t.numel() as u64).sum();
        if declared != header.values {
            return Err(Error::Format(format!(
                "header claims {} parameter values, dimensions imply {declared}",
                header.values
            )));
        }
        let mut tensors = Vec::with_capacity(24);
        for t in reference.parameters() {
            let (rows, cols) = t.dims();
            let data = io::read_f64s(&mut r, rows * cols, "model weights")?;
            tensors.push(RealTensor::matrix(rows, cols, data)?);
        }
        io::expect_eof(&mut r, "model file")?;

        let mut iter = tensors.into_iter();
        let model = GnnModel {
            dims: header.dims,
            rounds: header.rounds,
            message_in: Mlp::from_tensors(&mut iter)?,
            message_out: Mlp::from_tensors(&mut iter)?,
            update_analog: Mlp::from_tensors(&mut iter)?,
            update_digital: Mlp::from_tensors(&mut iter)?,
        };
        let (e, a, d) = (
            model.dims.edge_width(),
            model.dims.analog_width(),
            model.dims.digital_width(),
        );
        model.message_in.check_widths(e + a + d + a, a, "analog message")?;
        model.message_out.check_widths(e + d + a + d, d, "digital message")?;
        model.update_analog.check_widths(a + d + e, a, "analog update")?;
        model.update_digital.check_widths(d + a + e, d, "digital update")?;
        Ok(model)
    }
}

// ---------------------------------------------------------------------------
// Graph construction
// ---------------------------------------------------------------------------

/// Channel matrix as a real feature vector: all real parts column by
/// column, then all imaginary parts.
pub fn edge_feature(h: &ComplexMatrix) -> RealTensor {
    let (rows, cols) = (h.rows(), h.cols());
    let mut data = Vec::with_capacity(2 * rows * cols);
    for j in 0..cols {
        for i in 0..rows {
            data.push(h.get(i, j).re);
        }
    }
    for j in 0..cols {
        for i in 0..rows {
            data.push(h.get(i, j).im);
        }
    }
    RealTensor::matrix(2 * rows * cols, 1, data).expect("shape matches data")
}

/// Random starting point of the iteration: analog phases and one digital
/// vector drawn from the generator, messages zero.
///
/// Draw order: the analog entries first, uniform over [0, 2π); then a
/// single standard-normal digital vector. Every digital node starts from
/// that same vector — with all-zero initial messages this is what makes the
/// analog output exactly independent of subcarrier order and the digital
/// outputs exactly equivariant to it.
#[derive(Clone, Debug)]
pub struct GraphInit {
    /// Analog state, `analog_width × 1`, entries in [0, 2π).
    pub analog: RealTensor,
    /// Shared initial digital state, `digital_width × 1`.
    pub digital: RealTensor,
}

impl GnnModel {
    pub fn init_graph(&self, rng: &mut impl Rng) -> GraphInit {
        let analog = RealTensor::matrix(
            self.dims.analog_width(),
            1,
            (0..self.dims.analog_width())
                .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
                .collect(),
        )
        .expect("shape matches data");
        let normal = Normal::new(0.0, 1.0).expect("unit deviation");
        let digital = RealTensor::matrix(
            self.dims.digital_width(),
            1,
            (0..self.dims.digital_width()).map(|_| normal.sample(rng)).collect(),
        )
        .expect("shape matches data");
        GraphInit { analog, digital }
    }
}

/// Pack per-sample columns side by side: entry `(i, b)` of the result is
/// entry `i` of `columns[b]`.
fn pack_columns(columns: &[&RealTensor]) -> RealTensor {
    let rows = columns[0].numel();
    let cols = columns.len();
    let mut out = RealTensor::zeros(&[rows, cols]);
    for (b, col) in columns.iter().enumerate() {
        for i in 0..rows {
            out.data_mut()[i * cols + b] = col.data()[i];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Traced forward pass
// ---------------------------------------------------------------------------

struct TracedBatch {
    /// Mean over the batch of the per-sample negative spectral efficiency.
    loss: NodeId,
    /// Analog beamformer node per sample.
    analog: Vec<NodeId>,
    /// Digital beamformer nodes per sample, one per subcarrier.
    digital: Vec<Vec<NodeId>>,
    /// Parameter handles in `parameters()` order.
    params: Vec<NodeId>,
}

impl GnnModel {
    /// Build the whole batched computation — graph rounds, reconstruction,
    /// rate — on one tape. Subcarrier `k` of sample `b` lives in column
    /// `b·K + k`; the per-sample aggregations are grouped means over K
    /// consecutive columns, so one matrix product per network serves the
    /// entire batch.
    fn trace_batch(
        &self,
        tape: &mut Tape,
        channels: &[&ChannelRealization],
        inits: &[GraphInit],
        budget: LinkBudget,
    ) -> Result<TracedBatch> {
        if channels.is_empty() || channels.len() != inits.len() {
            return Err(Error::Config(format!(
                "{} channels with {} graph initializers",
                channels.len(),
                inits.len()
            )));
        }
        let n_sub = channels[0].n_subcarriers();
        for ch in channels {
            self.check_channel(ch)?;
            if ch.n_subcarriers() != n_sub {
                return Err(Error::dim(
                    "gnn batch",
                    "mixed subcarrier counts in one batch",
                ));
            }
        }
        let batch = channels.len();
        let dims = self.dims;
        let ([f_msg_in, f_msg_out, f_upd_a, f_upd_d], params) = self.register(tape);

        // Edge features: one column per (sample, subcarrier).
        let mut edge_cols = RealTensor::zeros(&[dims.edge_width(), batch * n_sub]);
        for (b, ch) in channels.iter().enumerate() {
            for (k, h) in ch.subcarriers().iter().enumerate() {
                let feature = edge_feature(h);
                let total = batch * n_sub;
                for i in 0..dims.edge_width() {
                    edge_cols.data_mut()[i * total + b * n_sub + k] = feature.data()[i];
                }
            }
        }
        let edges = tape.constant_real(edge_cols);

        let analog_cols = pack_columns(&inits.iter().map(|g| &g.analog).collect::<Vec<_>>());
        let mut x = tape.constant_real(analog_cols);
        let digital_shared: Vec<&RealTensor> = inits
            .iter()
            .flat_map(|g| std::iter::repeat_n(&g.digital, n_sub))
            .collect();
        let mut c = tape.constant_real(pack_columns(&digital_shared));
        let mut msg_a =
            tape.constant_real(RealTensor::zeros(&[dims.analog_width(), batch * n_sub]));
        let mut msg_d =
            tape.constant_real(RealTensor::zeros(&[dims.digital_width(), batch * n_sub]));
        let edge_mean = tape.mean_cols(edges, n_sub)?;

        for _ in 0..self.rounds {
            // Both messages read the previous round's states and messages.
            let msg_d_mean = tape.mean_cols(msg_d, n_sub)?;
            let msg_d_mean_bk = tape.broadcast_cols(msg_d_mean, n_sub)?;
            let x_bk = tape.broadcast_cols(x, n_sub)?;
            let in_a = tape.concat_rows(&[edges, x_bk, msg_d_mean_bk, msg_a])?;
            let new_msg_a = f_msg_in.apply(tape, in_a)?;
            let in_d = tape.concat_rows(&[edges, c, msg_a, msg_d])?;
            let new_msg_d = f_msg_out.apply(tape, in_d)?;

            // Node updates consume the fresh messages.
            let new_msg_d_mean = tape.mean_cols(new_msg_d, n_sub)?;
            let in_x = tape.concat_rows(&[x, new_msg_d_mean, edge_mean])?;
            let new_x = f_upd_a.apply(tape, in_x)?;
            let in_c = tape.concat_rows(&[c, new_msg_a, edges])?;
            let new_c = f_upd_d.apply(tape, in_c)?;

            (x, c, msg_a, msg_d) = (new_x, new_c, new_msg_a, new_msg_d);
        }

        // Reconstruction and rate, per sample.
        let mut analog_nodes = Vec::with_capacity(batch);
        let mut digital_nodes = Vec::with_capacity(batch);
        let mut losses = Vec::with_capacity(batch);
        for (b, ch) in channels.iter().enumerate() {
            let x_col = tape.slice_cols(x, b, 1)?;
            let phases = tape.reshape_col_major(x_col, dims.n_tx, dims.n_rf)?;
            let analog = tape.exp_j(phases)?;

            let half = dims.n_rf * dims.n_streams;
            let mut per_sub = Vec::with_capacity(n_sub);
            for k in 0..n_sub {
                let col = tape.slice_cols(c, b * n_sub + k, 1)?;
                let re = tape.slice_rows(col, 0, half)?;
                let im = tape.slice_rows(col, half, half)?;
                let re_m = tape.reshape_col_major(re, dims.n_rf, dims.n_streams)?;
                let im_m = tape.reshape_col_major(im, dims.n_rf, dims.n_streams)?;
                let raw = tape.make_complex(re_m, im_m)?;
                let cascade = tape.matmul(analog, raw)?;
                let norm = tape.frob_norm(cascade)?;
                per_sub.push(tape.div_by_scalar(raw, norm)?);
            }
            losses.push(trace_negative_se(tape, ch, analog, &per_sub, budget)?);
            analog_nodes.push(analog);
            digital_nodes.push(per_sub);
        }
        let total = tape.add_n(&losses)?;
        let loss = tape.scale_const(total, 1.0 / batch as f64);
        Ok(TracedBatch { loss, analog: analog_nodes, digital: digital_nodes, params })
    }

    /// Design a beamformer for one channel. The random generator seeds the
    /// iteration's starting point; a fixed seed gives a fixed output.
    pub fn forward(
        &self,
        channel: &ChannelRealization,
        rng: &mut impl Rng,
        budget: LinkBudget,
    ) -> Result<HybridBeamformer> {
        let init = self.init_graph(rng);
        let mut designs = self.forward_batch(&[channel], &[init], budget)?;
        Ok(designs.pop().expect("one design per channel"))
    }

    /// Design beamformers for several channels in one traced pass. Every
    /// per-channel result is bit-identical to [`GnnModel::forward`] with the
    /// same starting point; batching only lets the network weights stream
    /// through the cache once per batch instead of once per channel.
    pub fn forward_batch(
        &self,
        channels: &[&ChannelRealization],
        inits: &[GraphInit],
        budget: LinkBudget,
    ) -> Result<Vec<HybridBeamformer>> {
        let mut tape = Tape::new();
        let traced = self.trace_batch(&mut tape, channels, inits, budget)?;
        let mut designs = Vec::with_capacity(channels.len());
        for b in 0..channels.len() {
            let analog = tape.complex(traced.analog[b])?.clone();
            let digital = traced.digital[b]
                .iter()
                .map(|&id| Ok(tape.complex(id)?.clone()))
                .collect::<Result<Vec<_>>>()?;
            designs.push(HybridBeamformer { analog, digital });
        }
        Ok(designs)
    }

    /// Mean negative spectral efficiency of the batch under the given
    /// starting points — the training objective.
    pub fn batch_loss(
        &self,
        channels: &[&ChannelRealization],
        inits: &[GraphInit],
        budget: LinkBudget,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let traced = self.trace_batch(&mut tape, channels, inits, budget)?;
        Ok(tape.real(traced.loss)?.scalar_value())
    }

    /// Batch loss plus its gradient with respect to every parameter, in
    /// `parameters()` order.
    pub fn batch_gradient(
        &self,
        channels: &[&ChannelRealization],
        inits: &[GraphInit],
        budget: LinkBudget,
    ) -> Result<(f64, Vec<RealTensor>)> {
        let mut tape = Tape::new();
        let traced = self.trace_batch(&mut tape, channels, inits, budget)?;
        let loss = tape.real(traced.loss)?.scalar_value();
        let grads = tape.backward(traced.loss)?;
        let tensors = self
            .parameters()
            .iter()
            .zip(&traced.params)
            .map(|(p, &id)| grads.real_or_zeros(id, p))
            .collect();
        Ok((loss, tensors))
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Mini-batch training schedule and optimizer constants.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// The learning rate is halved after every this many epochs.
    pub halving_period: usize,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            halving_period: 300,
            batch_size: 100,
            batches_per_epoch: 100,
            epochs: 300,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate.is_finite()
            && self.learning_rate >= 0.0
            && self.halving_period >= 1
            && self.batch_size >= 1
            && self.batches_per_epoch >= 1
            && self.beta1 >= 0.0
            && self.beta1 < 1.0
            && self.beta2 >= 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training parameters: {self:?}")))
        }
    }

    /// Learning rate in force during the given (0-based) epoch.
    pub fn rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * 0.5f64.powi((epoch / self.halving_period) as i32)
    }
}

/// One epoch of the training trace.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean over the epoch's batches of the mean batch loss.
    pub train_loss: f64,
    /// Mean spectral efficiency over the held-out channels.
    pub holdout_se: f64,
}

/// Adam accumulators, one pair per parameter tensor.
struct Adam {
    first: Vec<RealTensor>,
    second: Vec<RealTensor>,
    steps: u64,
}

impl Adam {
    fn new(parameters: &[&RealTensor]) -> Self {
        Adam {
            first: parameters.iter().map(|p| RealTensor::zeros_like(p)).collect(),
            second: parameters.iter().map(|p| RealTensor::zeros_like(p)).collect(),
            steps: 0,
        }
    }

    fn step(
        &mut self,
        parameters: &mut [&mut RealTensor],
        gradients: &[RealTensor],
        rate: f64,
        cfg: &TrainConfig,
    ) {
        self.steps += 1;
        let bias1 = 1.0 - cfg.beta1.powi(self.steps as i32);
        let bias2 = 1.0 - cfg.beta2.powi(self.steps as i32);
        for ((param, grad), (m, v)) in parameters
            .iter_mut()
            .zip(gradients)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let (m, v) = (m.data_mut(), v.data_mut());
            for (i, (p, g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                *p -= rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Mean spectral efficiency of the model over the given channels with one
/// deterministic starting point per channel.
pub fn mean_holdout_se(
    model: &GnnModel,
    holdout: &[ChannelRealization],
    budget: LinkBudget,
    seed: u64,
) -> Result<f64> {
    if holdout.is_empty() {
        return Err(Error::Config("empty held-out set".into()));
    }
    // Small batches amortize the weight streaming without growing the tape
    // beyond a few dozen megabytes for large arrays.
    const CHUNK: usize = 16;
    let chunks: Vec<&[ChannelRealization]> = holdout.chunks(CHUNK).collect();
    let sums = parallel::map_indexed(chunks.len(), |ci| -> Result<f64> {
        let chunk = chunks[ci];
        let refs: Vec<&ChannelRealization> = chunk.iter().collect();
        let inits: Vec<GraphInit> = (0..chunk.len())
            .map(|j| {
                let global = (ci * CHUNK + j) as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(global));
                model.init_graph(&mut rng)
            })
            .collect();
        let designs = model.forward_batch(&refs, &inits, budget)?;
        let mut sum = 0.0;
        for (ch, bf) in chunk.iter().zip(&designs) {
            sum += spectral_efficiency(ch, bf, budget)?;
        }
        Ok(sum)
    });
    let mut sum = 0.0;
    for r in sums {
        sum += r?;
    }
    Ok(sum / holdout.len() as f64)
}

impl GnnModel {
    /// Mini-batch training against the negative mean rate.
    ///
    /// Every epoch runs `batches_per_epoch` optimizer steps on batches drawn
    /// by cycling through seeded reshuffles of the training set, then scores
    /// the held-out channels with fixed per-channel starting points so the
    /// trace reflects parameter movement only. Aborts with a numerical error
    /// if a batch loss stops being finite.
    pub fn train(
        &mut self,
        training: &[ChannelRealization],
        holdout: &[ChannelRealization],
        cfg: &TrainConfig,
        budget: LinkBudget,
    ) -> Result<Vec<EpochRecord>> {
        cfg.validate()?;
        if training.is_empty() {
            return Err(Error::Config("empty training set".into()));
        }
        for ch in training.iter().chain(holdout) {
            self.check_channel(ch)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = Vec::new();
        let draw = |rng: &mut ChaCha8Rng, order: &mut Vec<usize>| -> usize {
            if order.is_empty() {
                order.extend(0..training.len());
                // Fisher–Yates, back to front.
                for i in (1..order.len()).rev() {
                    let j = rng.random_range(0..=i);
                    order.swap(i, j);
                }
            }
            order.pop().expect("refilled above")
        };

        let mut adam = Adam::new(&self.parameters());
        let mut trace = Vec::with_capacity(cfg.epochs);
        let eval_seed = cfg.seed ^ 0x5eed_ba5e;
        for epoch in 0..cfg.epochs {
            let rate = cfg.rate_at(epoch);
            let mut epoch_loss = 0.0;
            for batch in 0..cfg.batches_per_epoch {
                let picks: Vec<usize> =
                    (0..cfg.batch_size).map(|_| draw(&mut rng, &mut order)).collect();
                let channels: Vec<&ChannelRealization> =
                    picks.iter().map(|&i| &training[i]).collect();
                let inits: Vec<GraphInit> =
                    (0..cfg.batch_size).map(|_| self.init_graph(&mut rng)).collect();
                let (loss, grads) = self.batch_gradient(&channels, &inits, budget)?;
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!(
                        "training diverged: loss {loss} at epoch {epoch}, batch {batch}"
                    )));
                }
                epoch_loss += loss;
                adam.step(&mut self.parameters_mut(), &grads, rate, cfg);
            }
            let holdout_se = if holdout.is_empty() {
                f64::NAN
            } else {
                mean_holdout_se(self, holdout, budget, eval_seed)?
            };
            trace.push(EpochRecord {
                epoch,
                learning_rate: rate,
                train_loss: epoch_loss / cfg.batches_per_epoch as f64,
                holdout_se,
            });
        }
        Ok(trace)
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_channel, ArrayGeometry, SystemConfig};
    use crate::linalg::Complex64;
    use crate::system::validate_beamformer;
    use tempfile::tempdir;

    fn tiny_config() -> SystemConfig {
        SystemConfig::new(
            ArrayGeometry::new(2, 2),
            ArrayGeometry::new(2, 1),
            2,
            2,
            2,
            300e9,
            30e9,
        )
        .unwrap()
    }

    fn tiny_dims() -> ModelDims {
        ModelDims::new(4, 2, 2, 2).unwrap()
    }

    fn channels(cfg: &SystemConfig, count: usize, seed: u64) -> Vec<ChannelRealization> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| generate_channel(cfg, &mut rng).unwrap()).collect()
    }

    // 1. edge feature layout: j·I₂ puts zeros first, then the identity
    //    pattern, column-major
    #[test]
    fn edge_feature_separates_real_and_imaginary() {
        let h = ComplexMatrix::from_fn(2, 2, |i, j| {
            if i == j {
                Complex64::new(0.0, 1.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let e = edge_feature(&h);
        assert_eq!(e.data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);

        // round trip: the vector determines the matrix exactly
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = ComplexMatrix::from_fn(3, 2, |_, _| {
            Complex64::new(rng.random::<f64>(), rng.random::<f64>())
        });
        let e = edge_feature(&h);
        for j in 0..2 {
            for i in 0..3 {
                assert_eq!(e.data()[j * 3 + i], h.get(i, j).re);
                assert_eq!(e.data()[6 + j * 3 + i], h.get(i, j).im);
            }
        }
    }

    // 2. initial states: phases in range, deterministic under the seed
    #[test]
    fn graph_init_is_seeded_and_in_range() {
        let model = GnnModel::new(tiny_dims(), 2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let init = model.init_graph(&mut rng);
        assert_eq!(init.analog.dims(), (8, 1));
        assert_eq!(init.digital.dims(), (8, 1));
        for &v in init.analog.data() {
            assert!((0.0..std::f64::consts::TAU).contains(&v));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let again = model.init_graph(&mut rng);
        assert_eq!(init.analog.data(), again.analog.data());
        assert_eq!(init.digital.data(), again.digital.data());
    }

    // 3. construction rejects zero rounds and inconsistent dimensions
    #[test]
    fn model_construction_validates() {
        assert!(matches!(GnnModel::new(tiny_dims(), 0, 0), Err(Error::Config(_))));
        assert!(ModelDims::new(4, 2, 5, 2).is_err()); // n_rf > n_tx
        assert!(ModelDims::new(4, 2, 2, 3).is_err()); // n_streams > n_rf
        let model = GnnModel::new(tiny_dims(), 2, 0).unwrap();
        // 4 networks × 3 layers × (weight + bias)
        assert_eq!(model.parameters().len(), 24);
    }

    // 4. forward output obeys both hardware constraints even untrained
    #[test]
    fn forward_satisfies_constraints() {
        let cfg = tiny_config();
        let model = GnnModel::new(tiny_dims(), 2, 7).unwrap();
        let budget = LinkBudget::new(0.0).unwrap();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let channel = generate_channel(&cfg, &mut rng).unwrap();
            let bf = model.forward(&channel, &mut rng, budget).unwrap();
            assert_eq!(bf.analog.rows(), 4);
            assert_eq!(bf.analog.cols(), 2);
            assert_eq!(bf.digital.len(), 2);
            let report = validate_beamformer(&bf, 1e-9).unwrap();
            assert!(report.passes(), "{report:?}");
        }
    }

    // 5. same seed, same channel → bit-identical output
    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_config();
        let model = GnnModel::new(tiny_dims(), 2, 11).unwrap();
        let budget = LinkBudget::new(0.0).unwrap();
        let channel = channels(&cfg, 1, 2).pop().unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            model.forward(&channel, &mut rng, budget).unwrap()
        };
        let (a, b) = (run(9), run(9));
        assert_eq!(a.analog, b.analog);
        assert_eq!(a.digital, b.digital);
        // a different starting point moves the output
        let c = run(10);
        assert_ne!(a.analog, c.analog);
    }

    // 5b. batching channels together changes no per-channel design
    #[test]
    fn forward_batch_matches_single() {
        let cfg = tiny_config();
        let model = GnnModel::new(tiny_dims(), 2, 17).unwrap();
        let budget = LinkBudget::new(0.0).unwrap();
        let chs = channels(&cfg, 3, 5);
        let inits: Vec<GraphInit> = (0..3u64)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + i);
                model.init_graph(&mut rng)
            })
            .collect();
        let refs: Vec<&ChannelRealization> = chs.iter().collect();
        let batched = model.forward_batch(&refs, &inits, budget).unwrap();
        for (i, ch) in chs.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
            let single = model.forward(ch, &mut rng, budget).unwrap();
            assert_eq!(single.analog, batched[i].analog);
            assert_eq!(single.digital, batched[i].digital);
        }
    }

    // 6. trained dimensions accept any subcarrier count at inference
    #[test]
    fn forward_transfers_across_subcarrier_counts() {
        let model = GnnModel::new(tiny_dims(), 2, 13).unwrap();
        let budget = LinkBudget::new(0.0).unwrap();
        for k in [1usize, 2, 7] {
            let mut cfg = tiny_config();
            cfg.n_subcarriers = k;
            let channel = channels(&cfg, 1, k as u64).pop().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let bf = model.forward(&channel, &mut rng, budget).unwrap();
            assert_eq!(bf.digital.len(), k);
            assert!(validate_beamformer(&bf, 1e-9).unwrap().passes());
        }
    }

    // 7. analog output ignores subcarrier order; digital output follows it
    #[test]
    fn forward_is_permutation_equivariant() {
        let cfg = tiny_config();
        let model = GnnModel::new(tiny_dims(), 2, 17).unwrap();
        let budget = LinkBudget::new(0.0).unwrap();
        let channel = channels(&cfg, 1, 3).pop().unwrap();
        let swapped = ChannelRealization::from_matrices(vec![
            channel.subcarrier(1).clone(),
            channel.subcarrier(0).clone(),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let direct = model.forward(&channel, &mut rng, budget).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let permuted = model.forward(&swapped, &mut rng, budget).unwrap();
        assert_eq!(direct.analog, permuted.analog);
        assert_eq!(direct.digital[0], permuted.digital[1]);
        assert_eq!(direct.digital[1], permuted.digital[0]);
    }

    // 8. duplicated subcarriers produce identical digital precoders
    #[test]
    fn identical_edges_update_identically() {
        let cfg = tiny_config();
        let model = GnnModel::new(tiny_dims(), 2, 19).unwrap();
        let budget = LinkBudget::new(0.0).unwrap();
        let channel = channels(&cfg, 1, 5).pop().unwrap();
        let doubled = ChannelRealization::from_matrices(vec![
            channel.subcarrier(0).clone(),
            channel.subcarrier(0).clone(),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let bf = model.forward(&doubled, &mut rng, budget).unwrap();
        assert_eq!(bf.digital[0], bf.digital[1]);
    }

    // 9. the traced batch loss equals the negative mean of eager rates
    #[test]
    fn batch_loss_matches_eager_rate() {
        let cfg = tiny_config();
        let model = GnnModel::new(tiny_dims(), 2, 23).unwrap();
        let budget = LinkBudget::new(3.0).unwrap();
        let set = channels(&cfg, 3, 8);
        let refs: Vec<&ChannelRealization> = set.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let inits: Vec<GraphInit> = (0..3).map(|_| model.init_graph(&mut rng)).collect();
        let loss = model.batch_loss(&refs, &inits, budget).unwrap();

        let mut mean_rate = 0.0;
        for (ch, init) in set.iter().zip(&inits) {
            let mut tape = Tape::new();
            let traced = model.trace_batch(&mut tape, &[ch], &[init.clone()], budget).unwrap();
            let analog = tape.complex(traced.analog[0]).unwrap().clone();
            let digital: Vec<ComplexMatrix> = traced.digital[0]
                .iter()
                .map(|&id| tape.complex(id).unwrap().clone())
                .collect();
            let bf = HybridBeamformer { analog, digital };
            mean_rate += spectral_efficiency(ch, &bf, budget).unwrap();
        }
        mean_rate /= 3.0;
        assert!((loss + mean_rate).abs() < 1e-12, "{loss} vs −{mean_rate}");
    }

    // 10. gradients flow to every parameter tensor of every network
    #[test]
    fn batch_gradient_reaches_all_parameters() {
        let cfg = tiny_config();
        let model = GnnModel::new(tiny_dims(), 2, 29).unwrap();
        let budget = LinkBudget::new(0.0).unwrap();
        let set = channels(&cfg, 2, 9);
        let refs: Vec<&ChannelRealization> = set.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inits: Vec<GraphInit> = (0..2).map(|_| model.init_graph(&mut rng)).collect();
        let (loss, grads) = model.batch_gradient(&refs, &inits, budget).unwrap();
        assert!(loss.is_finite());
        assert_eq!(grads.len(), 24);
        for (g, p) in grads.iter().zip(model.parameters()) {
            assert_eq!(g.dims(), p.dims());
            assert!(g.data().iter().any(|v| *v != 0.0), "an all-zero gradient tensor");
        }
    }

    // 11. a zero learning rate leaves the weights bit-identical
    #[test]
    fn zero_rate_training_is_a_no_op() {
        let cfg = tiny_config();
        let mut model = GnnModel::new(tiny_dims(), 2, 31).unwrap();
        let before: Vec<RealTensor> = model.parameters().into_iter().cloned().collect();
        let set = channels(&cfg, 4, 10);
        let cfg_train = TrainConfig {
            learning_rate: 0.0,
            batch_size: 2,
            batches_per_epoch: 2,
            epochs: 2,
            ..TrainConfig::default()
        };
        let trace = model
            .train(&set, &set[..2], &cfg_train, LinkBudget::new(0.0).unwrap())
            .unwrap();
        assert_eq!(trace.len(), 2);
        for (now, then) in model.parameters().iter().zip(&before) {
            assert_eq!(now.data(), then.data());
        }
        // identical parameters on identical holdout inits → identical SE
        assert_eq!(trace[0].holdout_se, trace[1].holdout_se);
    }

    // 12. a short training run improves the held-out rate
    #[test]
    fn training_improves_holdout_rate() {
        let cfg = tiny_config();
        let mut model = GnnModel::new(tiny_dims(), 2, 37).unwrap();
        let budget = LinkBudget::new(0.0).unwrap();
        let train_set = channels(&cfg, 40, 11);
        let holdout = channels(&cfg, 10, 12);
        let before = mean_holdout_se(&model, &holdout, budget, 99).unwrap();
        let cfg_train = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 10,
            batches_per_epoch: 10,
            epochs: 10,
            seed: 5,
            ..TrainConfig::default()
        };
        let trace = model.train(&train_set, &holdout, &cfg_train, budget).unwrap();
        assert_eq!(trace.len(), 10);
        assert!(trace.iter().all(|r| r.holdout_se.is_finite() && r.train_loss.is_finite()));
        let after = mean_holdout_se(&model, &holdout, budget, 99).unwrap();
        assert!(
            after > before,
            "held-out SE did not improve: {before} → {after}"
        );
    }

    // 13. full-batch descent at a small step decreases the loss steadily
    #[test]
    fn small_step_descent_is_monotone() {
        let cfg = tiny_config();
        let mut model = GnnModel::new(tiny_dims(), 2, 41).unwrap();
        let budget = LinkBudget::new(0.0).unwrap();
        let set = channels(&cfg, 3, 14);
        let refs: Vec<&ChannelRealization> = set.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let inits: Vec<GraphInit> = (0..3).map(|_| model.init_graph(&mut rng)).collect();
        let mut last = f64::INFINITY;
        for _ in 0..10 {
            let (loss, grads) = model.batch_gradient(&refs, &inits, budget).unwrap();
            assert!(loss <= last + 1e-12, "loss rose from {last} to {loss}");
            last = loss;
            for (p, g) in model.parameters_mut().into_iter().zip(&grads) {
                for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                    *pv -= 1e-5 * gv;
                }
            }
        }
    }

    // 14. save/load round trip is bit-exact and rejects mismatches
    #[test]
    fn model_file_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.sqnn");
        let model = GnnModel::new(tiny_dims(), 2, 43).unwrap();
        model.save(&path).unwrap();
        let loaded = GnnModel::load(&path).unwrap();
        assert_eq!(loaded.dims(), model.dims());
        assert_eq!(loaded.rounds(), model.rounds());
        for (a, b) in model.parameters().iter().zip(loaded.parameters()) {
            assert_eq!(a.data(), b.data());
        }

        // forward agrees bit for bit after the round trip
        let cfg = tiny_config();
        let channel = channels(&cfg, 1, 16).pop().unwrap();
        let budget = LinkBudget::new(0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = model.forward(&channel, &mut rng, budget).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = loaded.forward(&channel, &mut rng, budget).unwrap();
        assert_eq!(a.analog, b.analog);
        assert_eq!(a.digital, b.digital);

        // corrupt the magic
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        match GnnModel::load(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("magic"), "{msg}"),
            other => panic!("expected a format error, got {other:?}"),
        }

        // truncate the payload
        bytes[0] ^= 0xff;
        bytes.truncate(bytes.len() - 9);
        std::fs::write(&path, &bytes).unwrap();
        match GnnModel::load(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("truncated"), "{msg}"),
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    // 15. channels with the wrong antenna counts are rejected
    #[test]
    fn forward_rejects_mismatched_channels() {
        let model = GnnModel::new(tiny_dims(), 2, 47).unwrap();
        let wrong = ChannelRealization::from_matrices(vec![ComplexMatrix::zeros(3, 4)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            model.forward(&wrong, &mut rng, LinkBudget::new(0.0).unwrap()),
            Err(Error::Dimension { .. })
        ));
    }

    // 16. the learning-rate schedule halves at each period boundary
    #[test]
    fn rate_schedule_halves() {
        let cfg = TrainConfig { learning_rate: 2e-4, halving_period: 300, ..TrainConfig::default() };
        assert_eq!(cfg.rate_at(0), 2e-4);
        assert_eq!(cfg.rate_at(299), 2e-4);
        assert_eq!(cfg.rate_at(300), 1e-4);
        assert_eq!(cfg.rate_at(599), 1e-4);
        assert_eq!(cfg.rate_at(600), 5e-5);
    }
}
