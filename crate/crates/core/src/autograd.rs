//! Backpropagation through time over the unrolled layer × timestep graph.
//!
//! The forward pass runs the network in spiking mode (strict threshold,
//! binary activations) or relaxed mode (the smooth arctan stand-in, used by
//! gradient checks). The backward pass is one chain-rule engine for every
//! sharing scheme: each sharing chain threads a single carry derivative
//! backwards through its (layer, group, timestep) slots, in the exact
//! reverse of the forward consume order. An intermediate block slot
//! therefore receives the next slot's membrane path, and the block-final
//! slot receives the block-first slot of the next timestep — the temporal
//! path that lets shared weights train on time structure.
//!
//! Membrane potentials for the surrogate derivative come either from the
//! cached tape or, in recompute mode, from the algebraic inverse of the
//! soft-reset update applied while walking backwards (see `memsave`).

use crate::error::{Error, Result};
use crate::lif::{apply_reset, step_from_post, FiringMode, LifParams, ResetMode};
use crate::memsave::reverse_slice;
use crate::network::{InputCoding, LayerKind, Network, NetworkSpec};
use crate::sharing::{step_layer_grouped, BlockState, SharingBlock};
use crate::tensor::{
    conv1d, conv1d_dense, conv1d_grad_input, conv1d_grad_weights, matvec, matvec_dense,
    matvec_grad_input, matvec_grad_weights, real, BitTensor, InputRef, Real, Tensor,
};

/// Derivative of the arctan firing relaxation, evaluated at `u_raw − θ`:
/// elementwise `1 / (1 + (π·x)²)`.
pub fn surrogate_derivative<F: Real>(u_minus_theta: &Tensor<F>) -> Tensor<F> {
    u_minus_theta.map(surrogate_derivative_scalar)
}

#[inline]
pub(crate) fn surrogate_derivative_scalar<F: Real>(x: F) -> F {
    let pix = real::<F>(std::f64::consts::PI) * x;
    F::one() / (F::one() + pix * pix)
}

/// What the forward pass records for the backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordMode {
    /// Inference only; nothing recorded.
    None,
    /// Spikes plus every slot's pre-reset membrane.
    Cached,
    /// Spikes plus one final carry snapshot per chain; membranes are
    /// reverse-recomputed during backward.
    Recompute,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions {
    pub firing: FiringMode,
    pub record: RecordMode,
}

impl ForwardOptions {
    pub fn training(record: RecordMode) -> Self {
        ForwardOptions {
            firing: FiringMode::Spiking,
            record,
        }
    }

    pub fn inference() -> Self {
        ForwardOptions {
            firing: FiringMode::Spiking,
            record: RecordMode::None,
        }
    }

    pub fn relaxed() -> Self {
        ForwardOptions {
            firing: FiringMode::Relaxed,
            record: RecordMode::Cached,
        }
    }
}

/// Stored activations: bit-packed in spiking mode, dense in relaxed mode.
#[derive(Clone, Debug)]
pub enum SpikeStore<F: Real> {
    Binary(BitTensor),
    Analog(Tensor<F>),
}

impl<F: Real> SpikeStore<F> {
    pub fn as_input(&self) -> InputRef<'_, F> {
        match self {
            SpikeStore::Binary(b) => InputRef::Binary(b),
            SpikeStore::Analog(t) => InputRef::Dense(t),
        }
    }

    /// Values of a contiguous flat range (one channel group slab).
    pub fn slice_values(&self, start: usize, len: usize) -> Vec<F> {
        match self {
            SpikeStore::Binary(b) => b.unpack_range(start, len),
            SpikeStore::Analog(t) => t.data()[start..start + len].to_vec(),
        }
    }

    pub fn count_ones(&self) -> usize {
        match self {
            SpikeStore::Binary(b) => b.count_ones(),
            SpikeStore::Analog(_) => 0,
        }
    }
}

/// Storage counters gathered while running; memory-model laws are checked
/// against these in tests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MemCounters {
    /// Membrane floats resident during forward (per-layer state or chain
    /// carries).
    pub live_membrane_floats: usize,
    /// Membrane floats cached on the tape for backward.
    pub cached_membrane_floats: usize,
    /// Number of cached membrane tensors.
    pub cached_membrane_tensors: usize,
    /// Floats in final carry snapshots (recompute mode).
    pub snapshot_floats: usize,
    /// Number of final carry snapshots (recompute mode).
    pub snapshot_tensors: usize,
}

#[derive(Clone, Debug)]
pub struct ForwardTrace<F: Real = f32> {
    pub firing: FiringMode,
    pub record: RecordMode,
    /// `[layer][timestep]` spike record.
    spikes: Vec<Vec<SpikeStore<F>>>,
    /// `[layer][timestep]` pre-reset membranes (cached mode only).
    membranes: Vec<Vec<Tensor<F>>>,
    /// Final carry per chain (recompute mode only).
    finals: Vec<BlockState<F>>,
    pub logits: Vec<F>,
    pub logits_per_t: Vec<Vec<F>>,
    /// Total spikes per layer across all timesteps (spiking mode).
    pub spike_counts: Vec<usize>,
    pub counters: MemCounters,
    input: Tensor<F>,
    seq_columns: Vec<Tensor<F>>,
}

impl<F: Real> ForwardTrace<F> {
    pub fn spikes_at(&self, layer: usize, t: usize) -> &SpikeStore<F> {
        &self.spikes[layer][t]
    }

    pub fn membrane_at(&self, layer: usize, t: usize) -> Option<&Tensor<F>> {
        self.membranes.get(layer).and_then(|per_t| per_t.get(t))
    }

    pub fn chain_finals(&self) -> &[BlockState<F>] {
        &self.finals
    }

    fn input_at(&self, t: usize) -> &Tensor<F> {
        if self.seq_columns.is_empty() {
            &self.input
        } else {
            &self.seq_columns[t]
        }
    }

    /// Argmax class of the accumulated logits.
    pub fn predicted(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.logits.iter().enumerate() {
            if v > self.logits[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Clone, Debug)]
pub struct GradientSet<F: Real = f32> {
    pub layers: Vec<Tensor<F>>,
    pub readout: Tensor<F>,
}

impl<F: Real> GradientSet<F> {
    pub fn zeros_like(net: &Network<F>) -> Self {
        GradientSet {
            layers: net
                .weights
                .iter()
                .map(|w| Tensor::zeros(w.shape().to_vec()))
                .collect(),
            readout: Tensor::zeros(net.readout.shape().to_vec()),
        }
    }

    pub fn iter_all(&self) -> impl Iterator<Item = &F> {
        self.layers
            .iter()
            .flat_map(|t| t.data().iter())
            .chain(self.readout.data().iter())
    }

    pub fn accumulate(&mut self, other: &GradientSet<F>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (av, bv) in a.data_mut().iter_mut().zip(b.data()) {
                *av = *av + *bv;
            }
        }
        for (av, bv) in self.readout.data_mut().iter_mut().zip(other.readout.data()) {
            *av = *av + *bv;
        }
    }

    pub fn scale(&mut self, factor: F) {
        for t in self.layers.iter_mut().chain(std::iter::once(&mut self.readout)) {
            for v in t.data_mut() {
                *v = *v * factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter_all().all(|v| v.is_finite())
    }

    /// `max |a − b| / (|b| + floor)` over all components.
    pub fn max_rel_deviation(&self, other: &GradientSet<F>, floor: f64) -> f64 {
        let mut worst = 0.0f64;
        for (a, b) in self.iter_all().zip(other.iter_all()) {
            let av = a.to_f64().unwrap();
            let bv = b.to_f64().unwrap();
            let rel = (av - bv).abs() / (bv.abs() + floor);
            worst = worst.max(rel);
        }
        worst
    }
}

/// Numerically stable softmax cross-entropy; returns the loss and
/// `∂L/∂logits = softmax(logits) − onehot(label)`.
pub fn softmax_cross_entropy<F: Real>(logits: &[F], label: usize) -> (F, Vec<F>) {
    let mut m = logits[0];
    for &v in logits {
        if v > m {
            m = v;
        }
    }
    let exps: Vec<F> = logits.iter().map(|&v| (v - m).exp()).collect();
    let sum: F = exps.iter().fold(F::zero(), |acc, &e| acc + e);
    let loss = sum.ln() - (logits[label] - m);
    let mut grad: Vec<F> = exps.iter().map(|&e| e / sum).collect();
    grad[label] = grad[label] - F::one();
    (loss, grad)
}

// ---- forward ----

fn linear_forward<F: Real>(
    kind: LayerKind,
    w: &Tensor<F>,
    input: &InputRef<'_, F>,
) -> Result<Tensor<F>> {
    match (kind, input) {
        (LayerKind::Dense, InputRef::Dense(x)) => matvec_dense(w, x),
        (LayerKind::Dense, InputRef::Binary(b)) => matvec(w, b),
        (LayerKind::Conv1d { padding, .. }, InputRef::Dense(x)) => conv1d_dense(w, x, padding),
        (LayerKind::Conv1d { padding, .. }, InputRef::Binary(b)) => conv1d(w, b, padding),
    }
}

fn pool_logits<F: Real>(spec: &NetworkSpec, x_out: &Tensor<F>) -> Vec<F> {
    match spec.readout.kind {
        LayerKind::Dense => x_out.data().to_vec(),
        LayerKind::Conv1d { .. } => {
            let classes = spec.readout.classes;
            let l = x_out.len() / classes;
            let inv = real::<F>(1.0 / l as f64);
            (0..classes)
                .map(|c| {
                    x_out.data()[c * l..(c + 1) * l]
                        .iter()
                        .fold(F::zero(), |acc, &v| acc + v)
                        * inv
                })
                .collect()
        }
    }
}

fn unpool_dlogits<F: Real>(spec: &NetworkSpec, dlogits: &[F]) -> Vec<F> {
    match spec.readout.kind {
        LayerKind::Dense => dlogits.to_vec(),
        LayerKind::Conv1d { .. } => {
            let shape = spec.readout_shape();
            let l = shape[1];
            let inv = real::<F>(1.0 / l as f64);
            let mut out = Vec::with_capacity(dlogits.len() * l);
            for &d in dlogits {
                let v = d * inv;
                out.extend(std::iter::repeat(v).take(l));
            }
            out
        }
    }
}

enum LifState<F: Real> {
    /// Baseline: one post-reset membrane per layer.
    PerLayer(Vec<Tensor<F>>),
    /// Shared schemes: one carry per chain.
    Blocks(Vec<SharingBlock<F>>),
}

/// Run the network over all timesteps for one sample.
///
/// `input` must have shape `[channels, length]` from the spec's input
/// section. Under sequential coding, timestep `t` consumes column `t`.
pub fn forward<F: Real>(
    net: &Network<F>,
    input: &Tensor<F>,
    opts: ForwardOptions,
) -> Result<ForwardTrace<F>> {
    let spec = &net.spec;
    let expected = vec![spec.input.channels, spec.input.length];
    if input.shape() != expected.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "forward input",
            left: input.shape().to_vec(),
            right: expected,
        });
    }
    if !input.is_finite() {
        return Err(Error::NonFinite("forward input"));
    }
    if opts.record == RecordMode::Recompute {
        if !spec.scheme.is_shared() {
            return Err(Error::config(
                "recompute backward applies to shared schemes; baseline trains in cached mode",
            ));
        }
        if spec.lif.reset == ResetMode::Hard {
            return Err(Error::config(
                "recompute backward requires soft reset: hard reset destroys the residual \
                 membrane needed for reverse computation",
            ));
        }
        if opts.firing == FiringMode::Relaxed {
            return Err(Error::config(
                "recompute backward requires spiking forward (bit-packed tape)",
            ));
        }
    }

    let p: LifParams<F> = spec.lif.params()?;
    let n_layers = spec.layers.len();
    let t_steps = spec.timesteps;
    let chains = spec.chains();
    let mut chain_of_layer = vec![usize::MAX; n_layers];
    for (ci, c) in chains.iter().enumerate() {
        for &l in &c.layers {
            chain_of_layer[l] = ci;
        }
    }

    let mut state = if spec.scheme.is_shared() {
        let blocks: Result<Vec<SharingBlock<F>>> = chains
            .iter()
            .map(|c| SharingBlock::new(c.layers.clone(), c.groups, spec.activation_len(c.layers[0])))
            .collect();
        LifState::Blocks(blocks?)
    } else {
        LifState::PerLayer(
            (0..n_layers)
                .map(|l| Tensor::zeros(spec.activation_shape(l)))
                .collect(),
        )
    };

    let mut counters = MemCounters::default();
    counters.live_membrane_floats = match &state {
        LifState::PerLayer(us) => us.iter().map(|u| u.len()).sum(),
        LifState::Blocks(bs) => bs.iter().map(|b| b.state.group_len()).sum(),
    };

    let seq_columns: Vec<Tensor<F>> = match spec.coding {
        InputCoding::Direct => Vec::new(),
        InputCoding::Sequential => {
            let c = spec.input.channels;
            let l = spec.input.length;
            (0..t_steps)
                .map(|t| {
                    Tensor::new(
                        vec![c],
                        (0..c).map(|ci| input.data()[ci * l + t]).collect(),
                    )
                    .expect("column shape")
                })
                .collect()
        }
    };

    let mut spikes: Vec<Vec<SpikeStore<F>>> = (0..n_layers).map(|_| Vec::new()).collect();
    let mut membranes: Vec<Vec<Tensor<F>>> = (0..n_layers).map(|_| Vec::new()).collect();
    let mut spike_counts = vec![0usize; n_layers];
    let mut logits = vec![F::zero(); spec.readout.classes];
    let mut logits_per_t = Vec::with_capacity(t_steps);

    for t in 0..t_steps {
        for l in 0..n_layers {
            let x = {
                let input_ref = if l == 0 {
                    let it = if seq_columns.is_empty() {
                        input
                    } else {
                        &seq_columns[t]
                    };
                    InputRef::Dense(it)
                } else {
                    spikes[l - 1][t].as_input()
                };
                linear_forward(spec.layers[l].kind, &net.weights[l], &input_ref)?
            };
            let (u_raw, o) = match &mut state {
                LifState::PerLayer(us) => {
                    let (u_raw, o) = step_from_post(us[l].data(), x.data(), &p, opts.firing);
                    let post = apply_reset(&u_raw, &o, &p);
                    us[l] = Tensor::new(us[l].shape().to_vec(), post)?;
                    let shape = x.shape().to_vec();
                    (Tensor::new(shape.clone(), u_raw)?, Tensor::new(shape, o)?)
                }
                LifState::Blocks(blocks) => {
                    let b = &mut blocks[chain_of_layer[l]];
                    step_layer_grouped(&mut b.state, &x, b.groups, &p, opts.firing)?
                }
            };
            let store = match opts.firing {
                FiringMode::Spiking => {
                    let packed = BitTensor::pack(&o);
                    spike_counts[l] += packed.count_ones();
                    SpikeStore::Binary(packed)
                }
                FiringMode::Relaxed => SpikeStore::Analog(o),
            };
            spikes[l].push(store);
            if opts.record == RecordMode::Cached {
                counters.cached_membrane_floats += u_raw.len();
                counters.cached_membrane_tensors += 1;
                membranes[l].push(u_raw);
            }
        }
        let x_out = linear_forward(
            spec.readout.kind,
            &net.readout,
            &spikes[n_layers - 1][t].as_input(),
        )?;
        let pooled = pool_logits(spec, &x_out);
        if pooled.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite readout activation".into()));
        }
        for (acc, v) in logits.iter_mut().zip(&pooled) {
            *acc = *acc + *v;
        }
        logits_per_t.push(pooled);
    }

    let finals = match (&state, opts.record) {
        (LifState::Blocks(blocks), RecordMode::Recompute) => {
            let finals: Vec<BlockState<F>> = blocks.iter().map(|b| b.state.clone()).collect();
            counters.snapshot_tensors = finals.len();
            counters.snapshot_floats = finals.iter().map(|f| f.group_len()).sum();
            finals
        }
        _ => Vec::new(),
    };

    Ok(ForwardTrace {
        firing: opts.firing,
        record: opts.record,
        spikes,
        membranes,
        finals,
        logits,
        logits_per_t,
        spike_counts,
        counters,
        input: input.clone(),
        seq_columns,
    })
}

// ---- backward ----

pub(crate) enum MembraneSource<F> {
    Cached,
    /// Live reverse-recomputed membranes, one per chain, plus the running
    /// peak float count.
    Live {
        live: Vec<Tensor<F>>,
        peak_floats: usize,
    },
}

/// Backward over a cached-mode trace. `dlogits_per_t[t]` is the loss
/// gradient with respect to the timestep-`t` pooled readout; for a loss on
/// accumulated logits this is the same vector at every `t`.
pub fn backward<F: Real>(
    net: &Network<F>,
    trace: &ForwardTrace<F>,
    dlogits_per_t: &[Vec<F>],
) -> Result<GradientSet<F>> {
    if trace.record != RecordMode::Cached {
        return Err(Error::State(
            "cached backward needs a cached-mode trace".into(),
        ));
    }
    let (grads, _) = run_backward(net, trace, dlogits_per_t, MembraneSource::Cached)?;
    Ok(grads)
}

pub(crate) fn run_backward<F: Real>(
    net: &Network<F>,
    trace: &ForwardTrace<F>,
    dlogits_per_t: &[Vec<F>],
    mut source: MembraneSource<F>,
) -> Result<(GradientSet<F>, usize)> {
    let spec = &net.spec;
    let n_layers = spec.layers.len();
    let t_steps = spec.timesteps;
    if dlogits_per_t.len() != t_steps
        || dlogits_per_t.iter().any(|d| d.len() != spec.readout.classes)
    {
        return Err(Error::State(format!(
            "loss gradient must supply {} timesteps × {} classes",
            t_steps, spec.readout.classes
        )));
    }
    for (l, per_t) in trace.spikes.iter().enumerate() {
        if per_t.len() != t_steps {
            return Err(Error::State(format!(
                "spike tape for layer {} holds {} of {} timesteps",
                l + 1,
                per_t.len(),
                t_steps
            )));
        }
    }

    let p: LifParams<F> = spec.lif.params()?;
    let detach = spec.lif.detach_reset;
    let chains = spec.chains();
    let mut chain_of_layer = vec![(usize::MAX, 0usize); n_layers];
    for (ci, c) in chains.iter().enumerate() {
        for (pos, &l) in c.layers.iter().enumerate() {
            chain_of_layer[l] = (ci, pos);
        }
    }

    let mut grads = GradientSet::zeros_like(net);
    // carry derivative per chain: dL/du_raw of the chain successor slot
    let mut carry_delta: Vec<Vec<F>> = chains
        .iter()
        .map(|c| vec![F::zero(); spec.activation_len(c.layers[0]) / c.groups])
        .collect();

    let last = n_layers - 1;
    for t in (0..t_steps).rev() {
        // readout
        let dx_out = unpool_dlogits(spec, &dlogits_per_t[t]);
        let grad_o_last = {
            let in_spikes = trace.spikes[last][t].as_input();
            accumulate_linear_grads(
                spec.readout.kind,
                &net.readout,
                &mut grads.readout,
                &dx_out,
                &in_spikes,
                &spec.activation_shape(last),
                true,
            )
        };
        let mut grad_o = grad_o_last.expect("readout always propagates to the last LIF layer");

        for l in (0..n_layers).rev() {
            let (ci, pos) = chain_of_layer[l];
            let chain = &chains[ci];
            let act_len = spec.activation_len(l);
            let n_groups = chain.groups;
            let slab = act_len / n_groups;
            let theta = p.theta;

            // weighted input of this slot, needed only to reverse the carry
            let x_l_t: Option<Tensor<F>> = match source {
                MembraneSource::Cached => None,
                MembraneSource::Live { .. } => Some({
                    let input_ref = if l == 0 {
                        InputRef::Dense(trace.input_at(t))
                    } else {
                        trace.spikes[l - 1][t].as_input()
                    };
                    linear_forward(spec.layers[l].kind, &net.weights[l], &input_ref)?
                }),
            };

            let mut delta_full = vec![F::zero(); act_len];
            for g in (0..n_groups).rev() {
                let u_raw_g: Vec<F> = match &source {
                    MembraneSource::Cached => {
                        let m = trace.membranes.get(l).and_then(|per_t| per_t.get(t)).ok_or(
                            Error::State(format!("membrane tape missing for layer {}", l + 1)),
                        )?;
                        m.data()[g * slab..(g + 1) * slab].to_vec()
                    }
                    MembraneSource::Live { live, .. } => live[ci].data().to_vec(),
                };
                let o_e: Vec<F> = trace.spikes[l][t].slice_values(g * slab, slab);
                let dnext = &carry_delta[ci];
                let mut delta = vec![F::zero(); slab];
                for i in 0..slab {
                    let fprime = surrogate_derivative_scalar(u_raw_g[i] - theta);
                    let carry_factor = match (p.reset, detach) {
                        (ResetMode::Soft, false) => p.lambda * (F::one() - theta * fprime),
                        (ResetMode::Soft, true) => p.lambda,
                        (ResetMode::Hard, false) => {
                            p.lambda * ((F::one() - o_e[i]) - u_raw_g[i] * fprime)
                        }
                        (ResetMode::Hard, true) => p.lambda * (F::one() - o_e[i]),
                    };
                    delta[i] = grad_o[g * slab + i] * fprime + dnext[i] * carry_factor;
                }
                delta_full[g * slab..(g + 1) * slab].copy_from_slice(&delta);
                carry_delta[ci] = delta;

                // walk the live membrane back to the chain-predecessor slot
                if let MembraneSource::Live { live, .. } = &mut source {
                    let x = x_l_t.as_ref().expect("recompute keeps weighted input");
                    let xg = &x.data()[g * slab..(g + 1) * slab];
                    let prev = chain_predecessor(chain, pos, g, t);
                    let o_prev: Vec<F> = match prev {
                        Some((pl, pg, pt)) => {
                            trace.spikes[pl][pt].slice_values(pg * slab, slab)
                        }
                        None => vec![F::zero(); slab],
                    };
                    let u_prev = match prev {
                        Some(_) => reverse_slice(&u_raw_g, xg, &o_prev, &p)?,
                        None => vec![F::zero(); slab],
                    };
                    live[ci] = Tensor::new(live[ci].shape().to_vec(), u_prev)?;
                }
            }

            let in_shape = spec.layer_input_shape(l);
            let propagate = l > 0;
            let grad_prev = {
                let input_ref = if l == 0 {
                    InputRef::Dense(trace.input_at(t))
                } else {
                    trace.spikes[l - 1][t].as_input()
                };
                accumulate_linear_grads(
                    spec.layers[l].kind,
                    &net.weights[l],
                    &mut grads.layers[l],
                    &delta_full,
                    &input_ref,
                    &in_shape,
                    propagate,
                )
            };
            if let Some(g_prev) = grad_prev {
                grad_o = g_prev;
            }
        }
    }

    let peak = match source {
        MembraneSource::Cached => 0,
        MembraneSource::Live { peak_floats, .. } => peak_floats,
    };
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok((grads, peak))
}

/// Chain-order predecessor of slot `(layer pos, group g, timestep t)`:
/// the previous group, else the previous member layer's last group, else the
/// block-final slot of the previous timestep, else none (chain start).
fn chain_predecessor(
    chain: &crate::network::ChainSpec,
    pos: usize,
    g: usize,
    t: usize,
) -> Option<(usize, usize, usize)> {
    let n = chain.groups;
    if g > 0 {
        Some((chain.layers[pos], g - 1, t))
    } else if pos > 0 {
        Some((chain.layers[pos - 1], n - 1, t))
    } else if t > 0 {
        Some((*chain.layers.last().unwrap(), n - 1, t - 1))
    } else {
        None
    }
}

/// Accumulate dW into `dw` and, when `propagate` is set, return the
/// gradient with respect to the layer's input.
fn accumulate_linear_grads<F: Real>(
    kind: LayerKind,
    w: &Tensor<F>,
    dw: &mut Tensor<F>,
    delta: &[F],
    input: &InputRef<'_, F>,
    in_shape: &[usize],
    propagate: bool,
) -> Option<Vec<F>> {
    match kind {
        LayerKind::Dense => {
            matvec_grad_weights(dw, delta, input);
            propagate.then(|| matvec_grad_input(w, delta))
        }
        LayerKind::Conv1d { padding, .. } => {
            let l_in = in_shape[1];
            let l_out = delta.len() / w.shape()[0];
            conv1d_grad_weights(dw, delta, l_out, input, l_in, padding);
            propagate.then(|| conv1d_grad_input(w, delta, l_in, padding))
        }
    }
}

/// Per-layer spike rate of a trace: spikes / (neurons · timesteps).
pub fn spike_rates<F: Real>(spec: &NetworkSpec, trace: &ForwardTrace<F>) -> Vec<f64> {
    trace
        .spike_counts
        .iter()
        .enumerate()
        .map(|(l, &count)| count as f64 / (spec.activation_len(l) * spec.timesteps) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{InputSpec, LayerSpec, LifConfig, ReadoutSpec, SharingScheme};

    fn dense_spec(scheme: SharingScheme, widths: &[usize], t: usize) -> NetworkSpec {
        let layers = widths
            .iter()
            .map(|&w| LayerSpec {
                kind: LayerKind::Dense,
                out: w,
            })
            .collect::<Vec<_>>();
        let blocks = if scheme.shares_layers() && widths.len() > 1 {
            vec![(0..widths.len()).collect()]
        } else {
            vec![]
        };
        NetworkSpec {
            version: 1,
            scheme,
            timesteps: t,
            lif: LifConfig::default(),
            coding: InputCoding::Direct,
            input: InputSpec {
                channels: 2,
                length: 2,
            },
            layers,
            readout: ReadoutSpec {
                kind: LayerKind::Dense,
                classes: 2,
            },
            blocks,
        }
    }

    fn sample_input() -> Tensor<f32> {
        Tensor::from_slice(vec![2, 2], &[0.9, -0.3, 0.4, 1.2]).unwrap()
    }

    #[test]
    fn surrogate_values() {
        let x = Tensor::from_slice(vec![3], &[0.0f64, 1.0 / std::f64::consts::PI, 1e6]).unwrap();
        let d = surrogate_derivative(&x);
        assert!((d.data()[0] - 1.0).abs() < 1e-12);
        assert!((d.data()[1] - 0.5).abs() < 1e-12);
        assert!(d.data()[2] < 1e-10);
    }

    #[test]
    fn forward_is_deterministic_and_finite() {
        let spec = dense_spec(SharingScheme::CrossLayer, &[4, 4], 3);
        let net: Network<f32> = Network::init(spec, 11).unwrap();
        let a = forward(&net, &sample_input(), ForwardOptions::training(RecordMode::Cached))
            .unwrap();
        let b = forward(&net, &sample_input(), ForwardOptions::training(RecordMode::Cached))
            .unwrap();
        assert_eq!(a.logits, b.logits);
        assert!(a.logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_loss_grad_gives_zero_gradients() {
        let spec = dense_spec(SharingScheme::CrossChannel { groups: 2 }, &[4, 4], 2);
        let net: Network<f32> = Network::init(spec.clone(), 3).unwrap();
        let trace = forward(&net, &sample_input(), ForwardOptions::training(RecordMode::Cached))
            .unwrap();
        let zeros = vec![vec![0.0f32; 2]; spec.timesteps];
        let grads = backward(&net, &trace, &zeros).unwrap();
        assert!(grads.iter_all().all(|&v| v == 0.0));
    }

    #[test]
    fn recompute_rejects_baseline_and_hard_reset() {
        let spec = dense_spec(SharingScheme::Baseline, &[4], 2);
        let net: Network<f32> = Network::init(spec, 3).unwrap();
        assert!(matches!(
            forward(&net, &sample_input(), ForwardOptions::training(RecordMode::Recompute)),
            Err(Error::Config(_))
        ));

        let mut spec = dense_spec(SharingScheme::CrossLayer, &[4, 4], 2);
        spec.lif.reset = ResetMode::Hard;
        let net: Network<f32> = Network::init(spec, 3).unwrap();
        assert!(matches!(
            forward(&net, &sample_input(), ForwardOptions::training(RecordMode::Recompute)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn hard_reset_forward_runs_for_all_schemes() {
        for scheme in [
            SharingScheme::Baseline,
            SharingScheme::CrossLayer,
            SharingScheme::CrossChannel { groups: 2 },
            SharingScheme::CrossLayerChannel { groups: 2 },
        ] {
            let mut spec = dense_spec(scheme, &[4, 4], 3);
            spec.lif.reset = ResetMode::Hard;
            let net: Network<f32> = Network::init(spec, 5).unwrap();
            forward(&net, &sample_input(), ForwardOptions::training(RecordMode::Cached))
                .unwrap();
        }
    }

    #[test]
    fn softmax_ce_gradient_sums_to_zero() {
        let (loss, grad) = softmax_cross_entropy(&[1.0f64, -0.5, 0.2], 1);
        assert!(loss > 0.0);
        let s: f64 = grad.iter().sum();
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn backward_requires_cached_trace() {
        let spec = dense_spec(SharingScheme::CrossLayer, &[4, 4], 2);
        let net: Network<f32> = Network::init(spec.clone(), 3).unwrap();
        let trace = forward(&net, &sample_input(), ForwardOptions::inference()).unwrap();
        let dlog = vec![vec![0.1f32, -0.1]; spec.timesteps];
        assert!(matches!(
            backward(&net, &trace, &dlog),
            Err(Error::State(_))
        ));
    }
}
