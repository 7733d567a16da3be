//! Single-timestep leaky-integrate-and-fire dynamics.
//!
//! Two step forms exist. `lif_step` is the per-layer baseline: it decays the
//! stored post-reset membrane, integrates the weighted input, fires, and
//! applies the reset immediately. `shared_step` is the carry form used by
//! every sharing scheme: the incoming carry holds the *pre-reset* membrane
//! and its spikes, and reset-then-decay is applied at consume time. For a
//! single neuron population the two forms produce bit-identical spike
//! trains; the carry form is what makes a membrane buffer shareable across
//! layers and channel groups.

use crate::error::{Error, Result};
use crate::tensor::{real, BitTensor, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResetMode {
    /// Subtract the threshold after a spike, keeping the suprathreshold
    /// residual. Required for reverse recomputation.
    Soft,
    /// Zero the membrane after a spike. Forward-only: the residual needed
    /// to invert the update is destroyed.
    Hard,
}

/// How the firing nonlinearity is evaluated.
///
/// `Spiking` is the production mode (strict threshold, binary output).
/// `Relaxed` replaces the step with its smooth arctan surrogate so the whole
/// network becomes differentiable; it exists as the oracle for gradient
/// checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FiringMode {
    Spiking,
    Relaxed,
}

#[derive(Clone, Copy, Debug)]
pub struct LifParams<F = f32> {
    pub lambda: F,
    pub theta: F,
    pub reset: ResetMode,
}

impl<F: Real> LifParams<F> {
    pub fn new(lambda: F, theta: F, reset: ResetMode) -> Result<Self> {
        if !(lambda > F::zero() && lambda <= F::one()) {
            return Err(Error::config(format!(
                "decay factor must be in (0,1], got {lambda}"
            )));
        }
        if !(theta > F::zero()) {
            return Err(Error::config(format!(
                "firing threshold must be positive, got {theta}"
            )));
        }
        Ok(LifParams {
            lambda,
            theta,
            reset,
        })
    }

    /// λ = 0.5 (exactly representable, so 1/λ scaling is lossless), θ = 1.
    pub fn default_soft() -> Self {
        LifParams {
            lambda: real(0.5),
            theta: F::one(),
            reset: ResetMode::Soft,
        }
    }
}

/// Membrane potential buffer for one neuron population.
#[derive(Clone, Debug, PartialEq)]
pub struct MembraneState<F: Real = f32> {
    pub u: Tensor<F>,
}

impl<F: Real> MembraneState<F> {
    pub fn zeros(shape: Vec<usize>) -> Self {
        MembraneState {
            u: Tensor::zeros(shape),
        }
    }

    pub fn new(u: Tensor<F>) -> Result<Self> {
        if !u.is_finite() {
            return Err(Error::NonFinite("membrane state"));
        }
        Ok(MembraneState { u })
    }
}

/// Firing value for a membrane already offset by the threshold.
#[inline]
pub fn fire_value<F: Real>(u_minus_theta: F, mode: FiringMode) -> F {
    match mode {
        FiringMode::Spiking => {
            // strict inequality: u == theta does not fire
            if u_minus_theta > F::zero() {
                F::one()
            } else {
                F::zero()
            }
        }
        FiringMode::Relaxed => {
            let pi = real::<F>(std::f64::consts::PI);
            (pi * u_minus_theta).atan() / pi + real(0.5)
        }
    }
}

// ---- slice kernels shared by the step operations and the training engine ----

/// Baseline integrate: `u_raw = λ·u_post + x`, then fire.
pub(crate) fn step_from_post<F: Real>(
    u_post: &[F],
    x: &[F],
    p: &LifParams<F>,
    mode: FiringMode,
) -> (Vec<F>, Vec<F>) {
    let mut u_raw = Vec::with_capacity(x.len());
    let mut o = Vec::with_capacity(x.len());
    for (&u, &xv) in u_post.iter().zip(x) {
        let raw = p.lambda * u + xv;
        u_raw.push(raw);
        o.push(fire_value(raw - p.theta, mode));
    }
    (u_raw, o)
}

/// Carry integrate: reset the carry by its own spikes, decay, add input,
/// then fire. Returns the *pre-reset* membrane; its reset is deferred to the
/// next consumer of the carry.
pub(crate) fn step_from_carry<F: Real>(
    u_carry: &[F],
    o_carry: &[F],
    x: &[F],
    p: &LifParams<F>,
    mode: FiringMode,
) -> (Vec<F>, Vec<F>) {
    let mut u_raw = Vec::with_capacity(x.len());
    let mut o = Vec::with_capacity(x.len());
    for ((&u, &oc), &xv) in u_carry.iter().zip(o_carry).zip(x) {
        let consumed = match p.reset {
            ResetMode::Soft => u - p.theta * oc,
            ResetMode::Hard => u * (F::one() - oc),
        };
        let raw = p.lambda * consumed + xv;
        u_raw.push(raw);
        o.push(fire_value(raw - p.theta, mode));
    }
    (u_raw, o)
}

pub(crate) fn apply_reset<F: Real>(u_raw: &[F], o: &[F], p: &LifParams<F>) -> Vec<F> {
    u_raw
        .iter()
        .zip(o)
        .map(|(&u, &ov)| match p.reset {
            ResetMode::Soft => u - p.theta * ov,
            ResetMode::Hard => u * (F::one() - ov),
        })
        .collect()
}

// ---- public step operations ----

fn check_step_inputs<F: Real>(u: &Tensor<F>, x: &Tensor<F>, op: &'static str) -> Result<()> {
    if !u.same_shape(x) {
        return Err(Error::ShapeMismatch {
            op,
            left: u.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    if !u.is_finite() || !x.is_finite() {
        return Err(Error::NonFinite(op));
    }
    Ok(())
}

/// Baseline per-layer step: decay the stored post-reset membrane, integrate,
/// fire on strict threshold crossing, reset immediately. Returns the
/// post-reset state and the spikes.
pub fn lif_step<F: Real>(
    u_prev: &MembraneState<F>,
    x: &Tensor<F>,
    p: &LifParams<F>,
) -> Result<(MembraneState<F>, BitTensor)> {
    check_step_inputs(&u_prev.u, x, "lif_step")?;
    let (u_raw, o) = step_from_post(u_prev.u.data(), x.data(), p, FiringMode::Spiking);
    let u_post = apply_reset(&u_raw, &o, p);
    let shape = x.shape().to_vec();
    let spikes = BitTensor::pack(&Tensor::new(shape.clone(), o)?);
    Ok((
        MembraneState::new(Tensor::new(shape, u_post)?)?,
        spikes,
    ))
}

/// Shared-neuron step: the carry `(u_carry, o_carry)` is the previous
/// consumer's pre-reset membrane and spikes. Reset and decay apply to the
/// incoming carry; the returned state is the new pre-reset membrane, whose
/// own reset is deferred to the next consumer.
pub fn shared_step<F: Real>(
    u_carry: &MembraneState<F>,
    o_carry: &BitTensor,
    x: &Tensor<F>,
    p: &LifParams<F>,
) -> Result<(MembraneState<F>, BitTensor)> {
    check_step_inputs(&u_carry.u, x, "shared_step")?;
    if o_carry.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            op: "shared_step",
            left: o_carry.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    let o_carry_f: Tensor<F> = o_carry.unpack();
    let (u_raw, o) = step_from_carry(
        u_carry.u.data(),
        o_carry_f.data(),
        x.data(),
        p,
        FiringMode::Spiking,
    );
    let shape = x.shape().to_vec();
    let spikes = BitTensor::pack(&Tensor::new(shape.clone(), o)?);
    Ok((MembraneState::new(Tensor::new(shape, u_raw)?)?, spikes))
}
