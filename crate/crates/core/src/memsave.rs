//! Memory-efficient backward pass.
//!
//! Instead of caching one membrane tensor per (layer, group, timestep), the
//! forward pass keeps only the bit-packed spike tape and one final carry
//! snapshot per sharing chain. During backward the soft-reset update is
//! inverted step by step: the predecessor slot's pre-reset membrane is
//!
//! `u_prev = (u_next − x_next)/λ + θ·o_prev`
//!
//! with the weighted input `x_next` recomputed from the spike tape. Peak
//! fp32 membrane residency in backward is therefore one buffer per chain —
//! one block buffer — independent of block depth, group count, and timestep
//! count. Hard reset multiplies the residual away, so this mode refuses it.

use crate::autograd::{run_backward, ForwardTrace, GradientSet, MembraneSource, RecordMode};
use crate::error::{Error, Result};
use crate::lif::{LifParams, ResetMode};
use crate::network::Network;
use crate::tensor::{BitTensor, Real, Tensor};

/// Counters from a recompute-mode backward run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RecomputeStats {
    /// Peak membrane floats live during backward: the sum of chain buffer
    /// sizes (one group-sized buffer per chain).
    pub peak_membrane_floats: usize,
    /// Number of live membrane buffers (= number of chains).
    pub live_buffers: usize,
}

/// Live backward state: one reverse-walked membrane buffer per chain.
pub struct ReverseContext<F = f32> {
    live: Vec<Tensor<F>>,
    peak_floats: usize,
}

impl<F: Real> ReverseContext<F> {
    /// Seed the live buffers from the forward pass's final carry snapshots.
    pub fn from_trace(trace: &ForwardTrace<F>) -> Result<Self> {
        if trace.record != RecordMode::Recompute {
            return Err(Error::State(
                "recompute backward needs a recompute-mode trace".into(),
            ));
        }
        let live: Vec<Tensor<F>> = trace
            .chain_finals()
            .iter()
            .map(|f| f.u.clone())
            .collect();
        let peak_floats = live.iter().map(|t| t.len()).sum();
        Ok(ReverseContext { live, peak_floats })
    }

    pub fn stats(&self) -> RecomputeStats {
        RecomputeStats {
            peak_membrane_floats: self.peak_floats,
            live_buffers: self.live.len(),
        }
    }
}

fn check_invertible<F: Real>(p: &LifParams<F>) -> Result<()> {
    if p.reset == ResetMode::Hard {
        return Err(Error::config(
            "reverse membrane computation requires soft reset",
        ));
    }
    if p.lambda == F::zero() {
        return Err(Error::Numeric(
            "reverse membrane computation divides by the decay factor; it must be nonzero".into(),
        ));
    }
    Ok(())
}

/// Elementwise inverse of the shared soft-reset step. Arithmetic runs in
/// f64 so the only rounding is the final cast back to `F`.
pub(crate) fn reverse_slice<F: Real>(
    u_next: &[F],
    x_next: &[F],
    o_prev: &[F],
    p: &LifParams<F>,
) -> Result<Vec<F>> {
    check_invertible(p)?;
    let lambda = p.lambda.to_f64().unwrap();
    let theta = p.theta.to_f64().unwrap();
    Ok(u_next
        .iter()
        .zip(x_next)
        .zip(o_prev)
        .map(|((&u, &x), &o)| {
            let v = (u.to_f64().unwrap() - x.to_f64().unwrap()) / lambda
                + theta * o.to_f64().unwrap();
            F::from_f64(v).unwrap()
        })
        .collect())
}

/// Recover the chain-predecessor slot's pre-reset membrane from the current
/// slot's membrane, the current slot's weighted input, and the predecessor's
/// spikes: exact algebraic inverse of the shared soft-reset update.
pub fn reverse_layer<F: Real>(
    u_next: &Tensor<F>,
    x_next: &Tensor<F>,
    o_prev: &BitTensor,
    p: &LifParams<F>,
) -> Result<Tensor<F>> {
    if !u_next.same_shape(x_next) || o_prev.shape() != u_next.shape() {
        return Err(Error::ShapeMismatch {
            op: "reverse_layer",
            left: u_next.shape().to_vec(),
            right: x_next.shape().to_vec(),
        });
    }
    let o: Tensor<F> = o_prev.unpack();
    let data = reverse_slice(u_next.data(), x_next.data(), o.data(), p)?;
    Tensor::new(u_next.shape().to_vec(), data)
}

/// Group-shaped form of [`reverse_layer`]: recovers the previous channel
/// group's (or previous timestep's group-N) membrane.
pub fn reverse_group<F: Real>(
    u_next_group: &Tensor<F>,
    x_next_group: &Tensor<F>,
    o_prev_group: &BitTensor,
    p: &LifParams<F>,
) -> Result<Tensor<F>> {
    reverse_layer(u_next_group, x_next_group, o_prev_group, p)
}

/// Backward pass over a recompute-mode trace: gradients equal the
/// cached-mode result up to the rounding of the reverse computation, while
/// membrane residency stays at one buffer per chain.
pub fn backward_recompute<F: Real>(
    net: &Network<F>,
    trace: &ForwardTrace<F>,
    dlogits_per_t: &[Vec<F>],
) -> Result<(GradientSet<F>, RecomputeStats)> {
    check_invertible(&net.spec.lif.params::<F>()?)?;
    let ctx = ReverseContext::from_trace(trace)?;
    let stats = ctx.stats();
    let (grads, _) = run_backward(
        net,
        trace,
        dlogits_per_t,
        MembraneSource::Live {
            live: ctx.live,
            peak_floats: ctx.peak_floats,
        },
    )?;
    Ok((grads, stats))
}
