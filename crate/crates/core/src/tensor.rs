//! Dense numeric tensors and bit-packed binary tensors.
//!
//! Layout is row-major with channels as the leading per-sample axis, so a
//! channel group is a contiguous slab of the flat buffer. Numeric tensors
//! default to `f32`; the same code instantiates at `f64` for the
//! gradient-checking oracle.

use crate::error::{Error, Result};
use num_traits::{Float, FromPrimitive};
use std::fmt::{Debug, Display};

/// Scalar type over which all tensor math is written.
pub trait Real:
    Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
}
impl Real for f32 {}
impl Real for f64 {}

/// Lift an `f64` constant into `F`.
#[inline]
pub fn real<F: Real>(v: f64) -> F {
    F::from_f64(v).expect("constant representable")
}

/// Dense tensor: positive dimensions, flat row-major buffer.
#[derive(Clone, PartialEq)]
pub struct Tensor<F = f32> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Debug for Tensor<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::config(format!("invalid tensor shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::config(format!(
                "shape {shape:?} implies {n} elements, buffer has {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![F::zero(); n],
        }
    }

    pub fn from_slice(shape: Vec<usize>, data: &[F]) -> Result<Self> {
        Self::new(shape, data.to_vec())
    }

    /// 1-D tensor from values.
    pub fn vector(data: Vec<F>) -> Self {
        let n = data.len();
        Tensor {
            shape: vec![n],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor<F>) -> bool {
        self.shape == other.shape
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Reshape without moving data; element count must match.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape.clone(),
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Convert element type (used when moving between oracle and production
    /// precision in tests).
    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| G::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }
}

/// Split along the leading (channel) axis into `n_groups` contiguous slabs.
///
/// Concatenating the outputs in order reproduces the input exactly.
pub fn channel_split<F: Real>(x: &Tensor<F>, n_groups: usize) -> Result<Vec<Tensor<F>>> {
    let c = x.shape()[0];
    if n_groups == 0 || c % n_groups != 0 {
        return Err(Error::Divisibility {
            channels: c,
            groups: n_groups,
        });
    }
    let mut shape = x.shape().to_vec();
    shape[0] = c / n_groups;
    let slab = x.len() / n_groups;
    Ok(x.data()
        .chunks(slab)
        .map(|chunk| Tensor {
            shape: shape.clone(),
            data: chunk.to_vec(),
        })
        .collect())
}

/// Concatenate along the leading (channel) axis.
pub fn channel_concat<F: Real>(parts: &[Tensor<F>]) -> Result<Tensor<F>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::config("channel_concat of zero tensors"))?;
    let tail_shape = &first.shape()[1..];
    let mut c = 0;
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        if &p.shape()[1..] != tail_shape {
            return Err(Error::ShapeMismatch {
                op: "channel_concat",
                left: first.shape().to_vec(),
                right: p.shape().to_vec(),
            });
        }
        c += p.shape()[0];
        data.extend_from_slice(p.data());
    }
    let mut shape = first.shape().to_vec();
    shape[0] = c;
    Ok(Tensor { shape, data })
}

// ---- bit-packed binary tensors ----

/// Binary tensor packed 64 values per word. Stores only {0,1}; pack → unpack
/// → pack is byte-identical.
#[derive(Clone, PartialEq, Debug)]
pub struct BitTensor {
    shape: Vec<usize>,
    len: usize,
    words: Vec<u64>,
}

impl BitTensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let len: usize = shape.iter().product();
        BitTensor {
            shape,
            len,
            words: vec![0u64; len.div_ceil(64)],
        }
    }

    /// Pack a numeric tensor holding only values 0 and 1.
    pub fn pack<F: Real>(t: &Tensor<F>) -> Self {
        let mut bt = BitTensor::zeros(t.shape().to_vec());
        let half = real::<F>(0.5);
        for (i, &v) in t.data().iter().enumerate() {
            if v > half {
                bt.set(i);
            }
        }
        bt
    }

    pub fn from_bools(shape: Vec<usize>, bits: &[bool]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != bits.len() {
            return Err(Error::config(format!(
                "shape {shape:?} implies {n} bits, got {}",
                bits.len()
            )));
        }
        let mut bt = BitTensor::zeros(shape);
        for (i, &b) in bits.iter().enumerate() {
            if b {
                bt.set(i);
            }
        }
        Ok(bt)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Raw packed words; trailing bits beyond `len` are zero.
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn unpack<F: Real>(&self) -> Tensor<F> {
        let data = (0..self.len)
            .map(|i| if self.get(i) { F::one() } else { F::zero() })
            .collect();
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Unpack a contiguous flat range (a channel slab when channels lead).
    pub fn unpack_range<F: Real>(&self, start: usize, len: usize) -> Vec<F> {
        (start..start + len)
            .map(|i| if self.get(i) { F::one() } else { F::zero() })
            .collect()
    }

    /// Indices of set bits in ascending order, skipping zero words.
    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words
            .iter()
            .enumerate()
            .flat_map(move |(wi, &w)| BitIter { word: w, base: wi * 64 })
    }

    pub fn bitor(&self, other: &BitTensor) -> Result<BitTensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "bitor",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let words = self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| a | b)
            .collect();
        Ok(BitTensor {
            shape: self.shape.clone(),
            len: self.len,
            words,
        })
    }

    pub fn disjoint(&self, other: &BitTensor) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & b == 0)
    }
}

struct BitIter {
    word: u64,
    base: usize,
}

impl Iterator for BitIter {
    type Item = usize;
    fn next(&mut self) -> Option<usize> {
        if self.word == 0 {
            return None;
        }
        let tz = self.word.trailing_zeros() as usize;
        self.word &= self.word - 1;
        Some(self.base + tz)
    }
}

// ---- linear operations ----

fn check_matvec_shapes<F: Real>(w: &Tensor<F>, in_len: usize, in_shape: &[usize]) -> Result<usize> {
    if w.shape().len() != 2 || w.shape()[1] != in_len {
        return Err(Error::ShapeMismatch {
            op: "matvec",
            left: w.shape().to_vec(),
            right: in_shape.to_vec(),
        });
    }
    Ok(w.shape()[0])
}

/// `out[i] = Σ_j W[i,j]·O[j]` for binary `O`: a masked row-sum over the
/// set bits, skipping zero entries entirely.
pub fn matvec<F: Real>(w: &Tensor<F>, spikes: &BitTensor) -> Result<Tensor<F>> {
    let rows = check_matvec_shapes(w, spikes.len(), spikes.shape())?;
    let cols = spikes.len();
    let mut out = vec![F::zero(); rows];
    for j in spikes.iter_ones() {
        let wd = w.data();
        for (i, o) in out.iter_mut().enumerate() {
            *o = *o + wd[i * cols + j];
        }
    }
    Ok(Tensor {
        shape: vec![rows],
        data: out,
    })
}

/// Dense matrix–vector product over a numeric input (analog first-layer
/// input, or relaxed-mode activations).
pub fn matvec_dense<F: Real>(w: &Tensor<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
    let rows = check_matvec_shapes(w, x.len(), x.shape())?;
    let cols = x.len();
    let xd = x.data();
    let wd = w.data();
    let data = (0..rows)
        .map(|i| {
            let row = &wd[i * cols..(i + 1) * cols];
            let mut acc = F::zero();
            for (wv, xv) in row.iter().zip(xd) {
                if *xv != F::zero() {
                    acc = acc + *wv * *xv;
                }
            }
            acc
        })
        .collect();
    Ok(Tensor {
        shape: vec![rows],
        data,
    })
}

fn conv1d_check<F: Real>(
    w: &Tensor<F>,
    in_shape: &[usize],
    padding: usize,
) -> Result<(usize, usize, usize, usize, usize)> {
    if w.shape().len() != 3 || in_shape.len() != 2 || w.shape()[1] != in_shape[0] {
        return Err(Error::ShapeMismatch {
            op: "conv1d",
            left: w.shape().to_vec(),
            right: in_shape.to_vec(),
        });
    }
    let (c_out, c_in, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let l = in_shape[1];
    if k > l + 2 * padding {
        return Err(Error::ShapeMismatch {
            op: "conv1d (kernel larger than padded input)",
            left: vec![c_out, c_in, k],
            right: vec![c_in, l + 2 * padding],
        });
    }
    let l_out = l + 2 * padding - k + 1;
    Ok((c_out, c_in, k, l, l_out))
}

/// Cross-correlation over a binary `[C_in × L]` input with zero padding.
/// `out[co,j] = Σ_{ci,k} W[co,ci,k] · in[ci, j+k-padding]`.
pub fn conv1d<F: Real>(w: &Tensor<F>, spikes: &BitTensor, padding: usize) -> Result<Tensor<F>> {
    let (c_out, _c_in, k, l, l_out) = conv1d_check(w, spikes.shape(), padding)?;
    let mut out = vec![F::zero(); c_out * l_out];
    let wd = w.data();
    // gather-accumulate over fired input positions
    for idx in spikes.iter_ones() {
        let ci = idx / l;
        let jj = idx % l;
        for kk in 0..k {
            let pos = jj + padding;
            if pos < kk {
                continue;
            }
            let j = pos - kk;
            if j >= l_out {
                continue;
            }
            for co in 0..c_out {
                out[co * l_out + j] = out[co * l_out + j] + wd[(co * w.shape()[1] + ci) * k + kk];
            }
        }
    }
    Ok(Tensor {
        shape: vec![c_out, l_out],
        data: out,
    })
}

/// Cross-correlation over a numeric `[C_in × L]` input with zero padding.
pub fn conv1d_dense<F: Real>(w: &Tensor<F>, x: &Tensor<F>, padding: usize) -> Result<Tensor<F>> {
    let (c_out, c_in, k, l, l_out) = conv1d_check(w, x.shape(), padding)?;
    let mut out = vec![F::zero(); c_out * l_out];
    let wd = w.data();
    let xd = x.data();
    for ci in 0..c_in {
        for jj in 0..l {
            let v = xd[ci * l + jj];
            if v == F::zero() {
                continue;
            }
            for kk in 0..k {
                let pos = jj + padding;
                if pos < kk {
                    continue;
                }
                let j = pos - kk;
                if j >= l_out {
                    continue;
                }
                for co in 0..c_out {
                    out[co * l_out + j] = out[co * l_out + j] + wd[(co * c_in + ci) * k + kk] * v;
                }
            }
        }
    }
    Ok(Tensor {
        shape: vec![c_out, l_out],
        data: out,
    })
}

// ---- backward helpers for the linear operations ----

/// dW for a dense layer: `delta ⊗ input` (outer product), accumulated into `dw`.
pub fn matvec_grad_weights<F: Real>(dw: &mut Tensor<F>, delta: &[F], input: &InputRef<'_, F>) {
    let cols = dw.shape()[1];
    let dwd = dw.data_mut();
    match input {
        InputRef::Dense(x) => {
            for (i, &d) in delta.iter().enumerate() {
                if d == F::zero() {
                    continue;
                }
                let row = &mut dwd[i * cols..(i + 1) * cols];
                for (rv, &xv) in row.iter_mut().zip(x.data()) {
                    *rv = *rv + d * xv;
                }
            }
        }
        InputRef::Binary(bits) => {
            for j in bits.iter_ones() {
                for (i, &d) in delta.iter().enumerate() {
                    dwd[i * cols + j] = dwd[i * cols + j] + d;
                }
            }
        }
    }
}

/// dInput for a dense layer: `Wᵀ · delta`.
pub fn matvec_grad_input<F: Real>(w: &Tensor<F>, delta: &[F]) -> Vec<F> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    let wd = w.data();
    let mut out = vec![F::zero(); cols];
    for i in 0..rows {
        let d = delta[i];
        if d == F::zero() {
            continue;
        }
        let row = &wd[i * cols..(i + 1) * cols];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o = *o + wv * d;
        }
    }
    out
}

/// dW for a conv1d layer, accumulated into `dw`.
pub fn conv1d_grad_weights<F: Real>(
    dw: &mut Tensor<F>,
    delta: &[F],
    l_out: usize,
    input: &InputRef<'_, F>,
    l_in: usize,
    padding: usize,
) {
    let (c_in, k) = (dw.shape()[1], dw.shape()[2]);
    let c_out = dw.shape()[0];
    let dwd = dw.data_mut();
    let mut visit = |ci: usize, jj: usize, v: F| {
        for kk in 0..k {
            let pos = jj + padding;
            if pos < kk {
                continue;
            }
            let j = pos - kk;
            if j >= l_out {
                continue;
            }
            for co in 0..c_out {
                let d = delta[co * l_out + j];
                if d != F::zero() {
                    let wi = (co * c_in + ci) * k + kk;
                    dwd[wi] = dwd[wi] + d * v;
                }
            }
        }
    };
    match input {
        InputRef::Dense(x) => {
            for ci in 0..c_in {
                for jj in 0..l_in {
                    let v = x.data()[ci * l_in + jj];
                    if v != F::zero() {
                        visit(ci, jj, v);
                    }
                }
            }
        }
        InputRef::Binary(bits) => {
            for idx in bits.iter_ones() {
                visit(idx / l_in, idx % l_in, F::one());
            }
        }
    }
}

/// dInput for a conv1d layer: full correlation transpose.
pub fn conv1d_grad_input<F: Real>(
    w: &Tensor<F>,
    delta: &[F],
    l_in: usize,
    padding: usize,
) -> Vec<F> {
    let (c_out, c_in, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let l_out = l_in + 2 * padding - k + 1;
    let wd = w.data();
    let mut out = vec![F::zero(); c_in * l_in];
    for co in 0..c_out {
        for j in 0..l_out {
            let d = delta[co * l_out + j];
            if d == F::zero() {
                continue;
            }
            for kk in 0..k {
                let pos = j + kk;
                if pos < padding {
                    continue;
                }
                let jj = pos - padding;
                if jj >= l_in {
                    continue;
                }
                for ci in 0..c_in {
                    out[ci * l_in + jj] = out[ci * l_in + jj] + wd[(co * c_in + ci) * k + kk] * d;
                }
            }
        }
    }
    out
}

/// A layer input that is either an analog tensor or packed spikes.
pub enum InputRef<'a, F> {
    Dense(&'a Tensor<F>),
    Binary(&'a BitTensor),
}

impl<'a, F: Real> InputRef<'a, F> {
    pub fn len(&self) -> usize {
        match self {
            InputRef::Dense(t) => t.len(),
            InputRef::Binary(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            InputRef::Dense(t) => t.shape(),
            InputRef::Binary(b) => b.shape(),
        }
    }
}
