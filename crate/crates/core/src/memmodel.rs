//! Analytic memory accounting for LIF state, weights, and spike activations.
//!
//! Counts are bytes per sample, with membranes and weights at 32 bits and
//! spike activations at 1 bit. Reported megabytes are decimal (10^6 bytes).
//! The laws these counts obey — backward = T × forward for a baseline
//! network, backward = forward for shared schemes, and buffer reductions of
//! m, n, and m·n for layer, channel, and combined sharing — are checked
//! against the runtime instrumentation counters in tests.

use crate::error::{Error, Result};
use crate::network::NetworkSpec;

pub const BYTES_PER_MEMBRANE: u64 = 4;
pub const BYTES_PER_WEIGHT: u64 = 4;
pub const BYTES_PER_MB: f64 = 1e6;

/// What the LIF backward accounting assumes is stored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemMode {
    /// Inference: nothing retained for backward.
    Forward,
    /// Standard BPTT: every (layer, group, timestep) membrane cached.
    BackwardCached,
    /// Reverse recomputation: only the per-chain carry snapshot retained.
    /// A baseline network cannot reverse-recompute, so it is accounted at
    /// its cached cost.
    BackwardRecompute,
}

/// Per-chain buffer accounting.
#[derive(Clone, Debug)]
pub struct BlockMem {
    /// 0-based member layer indices.
    pub layers: Vec<usize>,
    pub groups: usize,
    /// Bytes of the one live buffer this chain owns.
    pub buffer_bytes: u64,
    /// Baseline bytes of the member layers divided by the buffer bytes
    /// (m·n on uniform blocks).
    pub reduction: f64,
}

#[derive(Clone, Debug)]
pub struct MemReport {
    pub scheme: String,
    pub timesteps: usize,
    pub lif_forward: u64,
    pub lif_backward: u64,
    pub weights: u64,
    pub spikes_forward: u64,
    pub spikes_backward: u64,
    pub blocks: Vec<BlockMem>,
}

impl MemReport {
    pub fn lif_forward_mb(&self) -> f64 {
        self.lif_forward as f64 / BYTES_PER_MB
    }

    pub fn lif_backward_mb(&self) -> f64 {
        self.lif_backward as f64 / BYTES_PER_MB
    }
}

fn lif_forward_bytes(spec: &NetworkSpec) -> u64 {
    spec.chains()
        .iter()
        .map(|c| (spec.activation_len(c.layers[0]) / c.groups) as u64 * BYTES_PER_MEMBRANE)
        .sum()
}

fn lif_cached_bytes(spec: &NetworkSpec, timesteps: usize) -> u64 {
    (0..spec.layers.len())
        .map(|l| spec.activation_len(l) as u64 * BYTES_PER_MEMBRANE)
        .sum::<u64>()
        * timesteps as u64
}

/// Analytic byte counts for a network under the given accounting mode.
pub fn lif_bytes(spec: &NetworkSpec, timesteps: usize, mode: MemMode) -> MemReport {
    let forward = lif_forward_bytes(spec);
    let backward = match mode {
        MemMode::Forward => 0,
        MemMode::BackwardCached => lif_cached_bytes(spec, timesteps),
        MemMode::BackwardRecompute => {
            if spec.scheme.is_shared() {
                forward
            } else {
                lif_cached_bytes(spec, timesteps)
            }
        }
    };
    let weights = spec.param_count() as u64 * BYTES_PER_WEIGHT;
    let spike_plane: u64 = (0..spec.layers.len())
        .map(|l| spec.activation_len(l).div_ceil(8) as u64)
        .sum();
    let blocks = spec
        .chains()
        .iter()
        .map(|c| {
            let member_bytes: u64 = c
                .layers
                .iter()
                .map(|&l| spec.activation_len(l) as u64 * BYTES_PER_MEMBRANE)
                .sum();
            let buffer_bytes =
                (spec.activation_len(c.layers[0]) / c.groups) as u64 * BYTES_PER_MEMBRANE;
            BlockMem {
                layers: c.layers.clone(),
                groups: c.groups,
                buffer_bytes,
                reduction: member_bytes as f64 / buffer_bytes as f64,
            }
        })
        .collect();
    MemReport {
        scheme: spec.scheme.name(),
        timesteps,
        lif_forward: forward,
        lif_backward: backward,
        weights,
        spikes_forward: spike_plane,
        spikes_backward: spike_plane * timesteps as u64,
        blocks,
    }
}

/// Accounting for the scheme's natural training mode: cached for a baseline
/// network, reverse recomputation for shared schemes.
pub fn mem_report(spec: &NetworkSpec, timesteps: usize) -> MemReport {
    let mode = if spec.scheme.is_shared() {
        MemMode::BackwardRecompute
    } else {
        MemMode::BackwardCached
    };
    lif_bytes(spec, timesteps, mode)
}

/// Forward and backward LIF memory ratios of a baseline report over an
/// efficient one.
pub fn efficiency_ratios(base: &MemReport, eff: &MemReport) -> Result<(f64, f64)> {
    if eff.lif_forward == 0 || eff.lif_backward == 0 {
        return Err(Error::Numeric(
            "efficiency ratio needs nonzero efficient-scheme memory".into(),
        ));
    }
    Ok((
        base.lif_forward as f64 / eff.lif_forward as f64,
        base.lif_backward as f64 / eff.lif_backward as f64,
    ))
}

/// Machine-parseable key=value rendering.
pub fn format_kv(r: &MemReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("scheme = {}\n", r.scheme));
    s.push_str(&format!("timesteps = {}\n", r.timesteps));
    s.push_str(&format!("lif_forward_bytes = {}\n", r.lif_forward));
    s.push_str(&format!("lif_backward_bytes = {}\n", r.lif_backward));
    s.push_str(&format!("weight_bytes = {}\n", r.weights));
    s.push_str(&format!("spikes_forward_bytes = {}\n", r.spikes_forward));
    s.push_str(&format!("spikes_backward_bytes = {}\n", r.spikes_backward));
    for (i, b) in r.blocks.iter().enumerate() {
        let layers: Vec<String> = b.layers.iter().map(|l| (l + 1).to_string()).collect();
        s.push_str(&format!(
            "block{}_layers = {}\nblock{}_groups = {}\nblock{}_buffer_bytes = {}\nblock{}_reduction = {}\n",
            i + 1,
            layers.join(","),
            i + 1,
            b.groups,
            i + 1,
            b.buffer_bytes,
            i + 1,
            b.reduction
        ));
    }
    s
}

/// Human-readable table.
pub fn format_table(r: &MemReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("LIF memory ({}, T={}):\n", r.scheme, r.timesteps));
    s.push_str(&format!(
        "  forward  {:>12} B  ({:.4} MB)\n",
        r.lif_forward,
        r.lif_forward_mb()
    ));
    s.push_str(&format!(
        "  backward {:>12} B  ({:.4} MB)\n",
        r.lif_backward,
        r.lif_backward_mb()
    ));
    s.push_str(&format!(
        "weights    {:>12} B   spikes fwd {} B   spikes bwd {} B\n",
        r.weights, r.spikes_forward, r.spikes_backward
    ));
    s.push_str("blocks:\n");
    for b in &r.blocks {
        let layers: Vec<String> = b.layers.iter().map(|l| (l + 1).to_string()).collect();
        s.push_str(&format!(
            "  layers [{}] x{} groups: buffer {} B, reduction {:.2}x\n",
            layers.join(","),
            b.groups,
            b.buffer_bytes,
            b.reduction
        ));
    }
    s
}
