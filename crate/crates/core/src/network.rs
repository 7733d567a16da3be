//! Declarative network description, its text format, and weight storage.
//!
//! A network is an ordered stack of weighted layers, each followed by LIF
//! neurons, plus a weighted readout with no firing: class logits are the
//! readout activations accumulated over all timesteps (spatially averaged
//! for a convolutional readout). Membrane sharing is declared per network:
//! the scheme plus explicit block membership resolve into *chains* — each
//! chain owns exactly one membrane buffer that its member (layer, group)
//! slots consume in a fixed order.

use crate::error::{Error, Result};
use crate::kv::{self, Item};
use crate::lif::{LifParams, ResetMode};
use crate::tensor::{real, Real, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const SPEC_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SharingScheme {
    Baseline,
    CrossLayer,
    CrossChannel { groups: usize },
    CrossLayerChannel { groups: usize },
}

impl SharingScheme {
    pub fn groups(&self) -> usize {
        match self {
            SharingScheme::Baseline | SharingScheme::CrossLayer => 1,
            SharingScheme::CrossChannel { groups }
            | SharingScheme::CrossLayerChannel { groups } => *groups,
        }
    }

    pub fn shares_layers(&self) -> bool {
        matches!(
            self,
            SharingScheme::CrossLayer | SharingScheme::CrossLayerChannel { .. }
        )
    }

    pub fn is_shared(&self) -> bool {
        !matches!(self, SharingScheme::Baseline)
    }

    pub fn name(&self) -> String {
        match self {
            SharingScheme::Baseline => "baseline".into(),
            SharingScheme::CrossLayer => "layer".into(),
            SharingScheme::CrossChannel { groups } => format!("channel#{groups}"),
            SharingScheme::CrossLayerChannel { groups } => format!("layer-channel#{groups}"),
        }
    }

    /// Parse a scheme keyword (`baseline`, `layer`, `channel`,
    /// `layer-channel`) with a separate group count for channel variants.
    pub fn from_keyword(kw: &str, groups: usize) -> Result<Self> {
        match kw {
            "baseline" => Ok(SharingScheme::Baseline),
            "layer" => Ok(SharingScheme::CrossLayer),
            "channel" => Ok(SharingScheme::CrossChannel { groups }),
            "layer-channel" => Ok(SharingScheme::CrossLayerChannel { groups }),
            other => Err(Error::config(format!(
                "unknown sharing scheme `{other}` (expected baseline|layer|channel|layer-channel)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Conv1d { kernel: usize, padding: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub out: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputSpec {
    pub channels: usize,
    pub length: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReadoutSpec {
    pub kind: LayerKind,
    pub classes: usize,
}

/// How the analog input reaches layer 1.
///
/// `Direct`: the standardized features are presented identically at every
/// timestep and the first layer acts as the spike encoder. `Sequential`:
/// timestep `t` sees column `t` of the feature matrix, so the task's time
/// axis maps onto network timesteps (requires a dense first layer and
/// `timesteps == input.length`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputCoding {
    Direct,
    Sequential,
}

#[derive(Clone, Copy, Debug)]
pub struct LifConfig {
    pub lambda: f64,
    pub theta: f64,
    pub reset: ResetMode,
    /// Exclude the reset term from the carry derivative during backward.
    pub detach_reset: bool,
}

impl Default for LifConfig {
    fn default() -> Self {
        LifConfig {
            lambda: 0.5,
            theta: 1.0,
            reset: ResetMode::Soft,
            detach_reset: false,
        }
    }
}

impl LifConfig {
    pub fn params<F: Real>(&self) -> Result<LifParams<F>> {
        LifParams::new(real(self.lambda), real(self.theta), self.reset)
    }
}

/// One resolved sharing chain: ordered member layers and the group count.
/// The chain owns a single membrane buffer of one group's size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainSpec {
    pub layers: Vec<usize>,
    pub groups: usize,
}

#[derive(Clone, Debug)]
pub struct NetworkSpec {
    pub version: u32,
    pub scheme: SharingScheme,
    pub timesteps: usize,
    pub lif: LifConfig,
    pub coding: InputCoding,
    pub input: InputSpec,
    pub layers: Vec<LayerSpec>,
    pub readout: ReadoutSpec,
    /// Declared sharing blocks as 0-based LIF-layer index runs. Layers not
    /// covered by a block form singleton blocks under layer-sharing schemes.
    pub blocks: Vec<Vec<usize>>,
}

impl NetworkSpec {
    /// Shape of the tensor consumed by LIF layer `i`.
    pub fn layer_input_shape(&self, i: usize) -> Vec<usize> {
        if i == 0 {
            match self.coding {
                InputCoding::Direct => vec![self.input.channels, self.input.length],
                InputCoding::Sequential => vec![self.input.channels],
            }
        } else {
            self.activation_shape(i - 1)
        }
    }

    /// Activation shape produced by LIF layer `i`: `[features]` for dense,
    /// `[channels, length]` for conv.
    pub fn activation_shape(&self, i: usize) -> Vec<usize> {
        let mut shape = self.layer_input_shape(i);
        match self.layers[i].kind {
            LayerKind::Dense => vec![self.layers[i].out],
            LayerKind::Conv1d { kernel, padding } => {
                let l = shape.pop().unwrap_or(1);
                vec![self.layers[i].out, l + 2 * padding + 1 - kernel]
            }
        }
    }

    pub fn activation_len(&self, i: usize) -> usize {
        self.activation_shape(i).iter().product()
    }

    /// Shape of the raw (pre-pooling) readout output.
    pub fn readout_shape(&self) -> Vec<usize> {
        let prev = self.activation_shape(self.layers.len() - 1);
        match self.readout.kind {
            LayerKind::Dense => vec![self.readout.classes],
            LayerKind::Conv1d { kernel, padding } => {
                let l = *prev.last().unwrap();
                vec![self.readout.classes, l + 2 * padding + 1 - kernel]
            }
        }
    }

    /// Weight shape of LIF layer `i`.
    pub fn weight_shape(&self, i: usize) -> Vec<usize> {
        let in_shape = self.layer_input_shape(i);
        match self.layers[i].kind {
            LayerKind::Dense => vec![self.layers[i].out, in_shape.iter().product()],
            LayerKind::Conv1d { kernel, .. } => {
                vec![self.layers[i].out, in_shape[0], kernel]
            }
        }
    }

    pub fn readout_weight_shape(&self) -> Vec<usize> {
        let prev = self.activation_shape(self.layers.len() - 1);
        match self.readout.kind {
            LayerKind::Dense => vec![self.readout.classes, prev.iter().product()],
            LayerKind::Conv1d { kernel, .. } => vec![self.readout.classes, prev[0], kernel],
        }
    }

    pub fn param_count(&self) -> usize {
        (0..self.layers.len())
            .map(|i| self.weight_shape(i).iter().product::<usize>())
            .sum::<usize>()
            + self.readout_weight_shape().iter().product::<usize>()
    }

    /// Resolve scheme and declared blocks into sharing chains, in network
    /// order. Under Baseline and CrossChannel every layer is its own chain;
    /// under layer-sharing schemes declared blocks become multi-layer chains
    /// and undeclared layers singleton chains.
    pub fn chains(&self) -> Vec<ChainSpec> {
        let groups = self.scheme.groups();
        if !self.scheme.shares_layers() {
            return (0..self.layers.len())
                .map(|i| ChainSpec {
                    layers: vec![i],
                    groups,
                })
                .collect();
        }
        let mut in_block = vec![false; self.layers.len()];
        for b in &self.blocks {
            for &l in b {
                in_block[l] = true;
            }
        }
        let mut chains: Vec<ChainSpec> = self
            .blocks
            .iter()
            .map(|b| ChainSpec {
                layers: b.clone(),
                groups,
            })
            .collect();
        for (i, covered) in in_block.iter().enumerate() {
            if !covered {
                chains.push(ChainSpec {
                    layers: vec![i],
                    groups,
                });
            }
        }
        chains.sort_by_key(|c| c.layers[0]);
        chains
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SPEC_VERSION {
            return Err(Error::config(format!(
                "unsupported spec version {} (expected {SPEC_VERSION})",
                self.version
            )));
        }
        if self.timesteps == 0 {
            return Err(Error::config("timesteps must be at least 1"));
        }
        if self.layers.is_empty() {
            return Err(Error::config("network needs at least one LIF layer"));
        }
        self.lif.params::<f64>()?;
        let groups = self.scheme.groups();
        if groups == 0 {
            return Err(Error::config("group count must be at least 1"));
        }
        if self.coding == InputCoding::Sequential {
            if self.timesteps != self.input.length {
                return Err(Error::config(format!(
                    "sequential coding requires timesteps == input length ({} != {})",
                    self.timesteps, self.input.length
                )));
            }
            if self.layers[0].kind != LayerKind::Dense {
                return Err(Error::config(
                    "sequential coding requires a dense first layer",
                ));
            }
        }
        // layer geometry
        for i in 0..self.layers.len() {
            let in_shape = self.layer_input_shape(i);
            if let LayerKind::Conv1d { kernel, padding } = self.layers[i].kind {
                if in_shape.len() != 2 {
                    return Err(Error::config(format!(
                        "layer {} is conv1d but its input {:?} is not [channels, length]",
                        i + 1,
                        in_shape
                    )));
                }
                if kernel == 0 || kernel > in_shape[1] + 2 * padding {
                    return Err(Error::config(format!(
                        "layer {}: kernel {kernel} does not fit input length {} with padding {padding}",
                        i + 1,
                        in_shape[1]
                    )));
                }
            }
            if self.layers[i].out == 0 {
                return Err(Error::config(format!("layer {} has zero width", i + 1)));
            }
            // channel grouping slices the leading activation axis
            let channels = self.activation_shape(i)[0];
            if channels % groups != 0 {
                return Err(Error::Divisibility { channels, groups });
            }
        }
        if let LayerKind::Conv1d { kernel, padding } = self.readout.kind {
            let prev = self.activation_shape(self.layers.len() - 1);
            if prev.len() != 2 || kernel == 0 || kernel > prev[1] + 2 * padding {
                return Err(Error::config("readout conv1d does not fit its input"));
            }
        }
        if self.readout.classes < 2 {
            return Err(Error::config("readout needs at least 2 classes"));
        }
        // block declarations
        let mut seen = vec![false; self.layers.len()];
        for b in &self.blocks {
            if b.is_empty() {
                return Err(Error::config("empty sharing block"));
            }
            for (pos, &l) in b.iter().enumerate() {
                if l >= self.layers.len() {
                    return Err(Error::config(format!(
                        "block references layer {} beyond the network",
                        l + 1
                    )));
                }
                if seen[l] {
                    return Err(Error::config(format!(
                        "layer {} appears in more than one block",
                        l + 1
                    )));
                }
                seen[l] = true;
                if pos > 0 && b[pos] != b[pos - 1] + 1 {
                    return Err(Error::config(
                        "block members must be consecutive layers".to_string(),
                    ));
                }
            }
            if self.scheme.shares_layers() {
                let first = self.activation_shape(b[0]);
                for &l in &b[1..] {
                    let shape = self.activation_shape(l);
                    if shape != first {
                        return Err(Error::config(format!(
                            "cross-layer sharing needs identical activation shapes in a block: layer {} has {:?}, layer {} has {:?}",
                            b[0] + 1,
                            first,
                            l + 1,
                            shape
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    // ---- text format ----

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("version = {}\n", self.version));
        let (kw, groups) = match self.scheme {
            SharingScheme::Baseline => ("baseline", 1),
            SharingScheme::CrossLayer => ("layer", 1),
            SharingScheme::CrossChannel { groups } => ("channel", groups),
            SharingScheme::CrossLayerChannel { groups } => ("layer-channel", groups),
        };
        s.push_str(&format!("scheme = {kw}\n"));
        s.push_str(&format!("groups = {groups}\n"));
        s.push_str(&format!("timesteps = {}\n", self.timesteps));
        s.push_str(&format!("lambda = {}\n", self.lif.lambda));
        s.push_str(&format!("theta = {}\n", self.lif.theta));
        s.push_str(&format!(
            "reset = {}\n",
            match self.lif.reset {
                ResetMode::Soft => "soft",
                ResetMode::Hard => "hard",
            }
        ));
        if self.lif.detach_reset {
            s.push_str("detach_reset = true\n");
        }
        s.push_str(&format!(
            "coding = {}\n",
            match self.coding {
                InputCoding::Direct => "direct",
                InputCoding::Sequential => "sequential",
            }
        ));
        s.push_str("\n[input]\n");
        s.push_str(&format!("channels = {}\n", self.input.channels));
        s.push_str(&format!("length = {}\n", self.input.length));
        for layer in &self.layers {
            s.push_str("\n[layer]\n");
            match layer.kind {
                LayerKind::Dense => {
                    s.push_str("kind = dense\n");
                    s.push_str(&format!("out = {}\n", layer.out));
                }
                LayerKind::Conv1d { kernel, padding } => {
                    s.push_str("kind = conv1d\n");
                    s.push_str(&format!("out = {}\n", layer.out));
                    s.push_str(&format!("kernel = {kernel}\n"));
                    s.push_str(&format!("padding = {padding}\n"));
                }
            }
        }
        s.push_str("\n[readout]\n");
        match self.readout.kind {
            LayerKind::Dense => s.push_str("kind = dense\n"),
            LayerKind::Conv1d { kernel, padding } => {
                s.push_str("kind = conv1d\n");
                s.push_str(&format!("kernel = {kernel}\n"));
                s.push_str(&format!("padding = {padding}\n"));
            }
        }
        s.push_str(&format!("classes = {}\n", self.readout.classes));
        for b in &self.blocks {
            s.push_str("\n[block]\n");
            let ids: Vec<String> = b.iter().map(|l| (l + 1).to_string()).collect();
            s.push_str(&format!("layers = {}\n", ids.join(",")));
        }
        s
    }

    pub fn parse(text: &str) -> Result<NetworkSpec> {
        #[derive(Default)]
        struct LayerAcc {
            kind: Option<String>,
            out: Option<usize>,
            kernel: Option<usize>,
            padding: usize,
            classes: Option<usize>,
            line: usize,
        }
        fn finish_layer(acc: &LayerAcc) -> Result<LayerKind> {
            match acc.kind.as_deref() {
                Some("dense") | None => Ok(LayerKind::Dense),
                Some("conv1d") => Ok(LayerKind::Conv1d {
                    kernel: acc.kernel.ok_or(Error::Parse {
                        line: acc.line,
                        msg: "conv1d layer needs `kernel`".into(),
                    })?,
                    padding: acc.padding,
                }),
                Some(other) => Err(Error::Parse {
                    line: acc.line,
                    msg: format!("unknown layer kind `{other}`"),
                }),
            }
        }

        let items = kv::parse(text)?;
        let mut version = None;
        let mut scheme_kw = "baseline".to_string();
        let mut groups = 1usize;
        let mut timesteps = None;
        let mut lif = LifConfig::default();
        let mut coding = InputCoding::Direct;
        let mut input: Option<InputSpec> = None;
        let mut in_channels = None;
        let mut in_length = None;
        let mut layers: Vec<LayerSpec> = Vec::new();
        let mut readout: Option<ReadoutSpec> = None;
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        let mut section = String::new();
        let mut acc = LayerAcc::default();

        let close_section = |section: &str,
                                 acc: &mut LayerAcc,
                                 layers: &mut Vec<LayerSpec>,
                                 readout: &mut Option<ReadoutSpec>,
                                 input: &mut Option<InputSpec>,
                                 in_channels: &mut Option<usize>,
                                 in_length: &mut Option<usize>|
         -> Result<()> {
            match section {
                "" => {}
                "input" => {
                    *input = Some(InputSpec {
                        channels: in_channels.ok_or(Error::Parse {
                            line: acc.line,
                            msg: "[input] needs `channels`".into(),
                        })?,
                        length: in_length.ok_or(Error::Parse {
                            line: acc.line,
                            msg: "[input] needs `length`".into(),
                        })?,
                    });
                }
                "layer" => {
                    let kind = finish_layer(acc)?;
                    layers.push(LayerSpec {
                        kind,
                        out: acc.out.ok_or(Error::Parse {
                            line: acc.line,
                            msg: "[layer] needs `out`".into(),
                        })?,
                    });
                }
                "readout" => {
                    let kind = finish_layer(acc)?;
                    *readout = Some(ReadoutSpec {
                        kind,
                        classes: acc.classes.ok_or(Error::Parse {
                            line: acc.line,
                            msg: "[readout] needs `classes`".into(),
                        })?,
                    });
                }
                "block" => {} // handled inline
                other => {
                    return Err(Error::Parse {
                        line: acc.line,
                        msg: format!("unknown section [{other}]"),
                    })
                }
            }
            *acc = LayerAcc::default();
            Ok(())
        };

        for item in items {
            match item {
                Item::Section { line, name } => {
                    close_section(
                        &section,
                        &mut acc,
                        &mut layers,
                        &mut readout,
                        &mut input,
                        &mut in_channels,
                        &mut in_length,
                    )?;
                    acc.line = line;
                    section = name;
                    if section == "block" {
                        blocks.push(Vec::new());
                    }
                }
                Item::Pair { line, key, value } => {
                    acc.line = line;
                    match (section.as_str(), key.as_str()) {
                        ("", "version") => version = Some(kv::parse_num(line, &key, &value)?),
                        ("", "scheme") => scheme_kw = value,
                        ("", "groups") => groups = kv::parse_num(line, &key, &value)?,
                        ("", "timesteps") => timesteps = Some(kv::parse_num(line, &key, &value)?),
                        ("", "lambda") => lif.lambda = kv::parse_num(line, &key, &value)?,
                        ("", "theta") => lif.theta = kv::parse_num(line, &key, &value)?,
                        ("", "reset") => {
                            lif.reset = match value.as_str() {
                                "soft" => ResetMode::Soft,
                                "hard" => ResetMode::Hard,
                                other => {
                                    return Err(Error::Parse {
                                        line,
                                        msg: format!("unknown reset mode `{other}`"),
                                    })
                                }
                            }
                        }
                        ("", "detach_reset") => {
                            lif.detach_reset = kv::parse_num::<bool>(line, &key, &value)?
                        }
                        ("", "coding") => {
                            coding = match value.as_str() {
                                "direct" => InputCoding::Direct,
                                "sequential" => InputCoding::Sequential,
                                other => {
                                    return Err(Error::Parse {
                                        line,
                                        msg: format!("unknown input coding `{other}`"),
                                    })
                                }
                            }
                        }
                        ("input", "channels") => {
                            in_channels = Some(kv::parse_num(line, &key, &value)?)
                        }
                        ("input", "length") => in_length = Some(kv::parse_num(line, &key, &value)?),
                        ("layer", "kind") | ("readout", "kind") => acc.kind = Some(value),
                        ("layer", "out") => acc.out = Some(kv::parse_num(line, &key, &value)?),
                        ("layer", "kernel") | ("readout", "kernel") => {
                            acc.kernel = Some(kv::parse_num(line, &key, &value)?)
                        }
                        ("layer", "padding") | ("readout", "padding") => {
                            acc.padding = kv::parse_num(line, &key, &value)?
                        }
                        ("readout", "classes") => {
                            acc.classes = Some(kv::parse_num(line, &key, &value)?)
                        }
                        ("block", "layers") => {
                            let ids: Result<Vec<usize>> = value
                                .split(',')
                                .map(|s| {
                                    let id: usize = kv::parse_num(line, "layers", s.trim())?;
                                    if id == 0 {
                                        return Err(Error::Parse {
                                            line,
                                            msg: "block layer ids are 1-based".into(),
                                        });
                                    }
                                    Ok(id - 1)
                                })
                                .collect();
                            *blocks.last_mut().unwrap() = ids?;
                        }
                        (sec, k) => {
                            return Err(Error::Parse {
                                line,
                                msg: format!("unexpected key `{k}` in section [{sec}]"),
                            })
                        }
                    }
                }
            }
        }
        close_section(
            &section,
            &mut acc,
            &mut layers,
            &mut readout,
            &mut input,
            &mut in_channels,
            &mut in_length,
        )?;

        let spec = NetworkSpec {
            version: version.ok_or(Error::Parse {
                line: 1,
                msg: "missing `version`".into(),
            })?,
            scheme: SharingScheme::from_keyword(&scheme_kw, groups)
                .map_err(|e| Error::config(e.to_string()))?,
            timesteps: timesteps.ok_or(Error::Parse {
                line: 1,
                msg: "missing `timesteps`".into(),
            })?,
            lif,
            coding,
            input: input.ok_or(Error::Parse {
                line: 1,
                msg: "missing [input] section".into(),
            })?,
            layers,
            readout: readout.ok_or(Error::Parse {
                line: 1,
                msg: "missing [readout] section".into(),
            })?,
            blocks,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Stable 64-bit digest of the canonical text form, stored in
    /// checkpoints to guard against spec/weight mismatches.
    pub fn hash64(&self) -> u64 {
        let digest = Sha256::digest(self.to_text().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// A network instance: spec plus weight tensors.
#[derive(Clone, Debug)]
pub struct Network<F: Real = f32> {
    pub spec: NetworkSpec,
    pub weights: Vec<Tensor<F>>,
    pub readout: Tensor<F>,
}

impl<F: Real> Network<F> {
    /// Fan-in-scaled uniform init, `bound = sqrt(6/fan_in)`, deterministic
    /// in the seed.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Network<F>> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |shape: Vec<usize>, fan_in: usize| -> Tensor<F> {
            let bound = (6.0 / fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| real::<F>((rng.gen::<f64>() * 2.0 - 1.0) * bound))
                .collect();
            Tensor::new(shape, data).expect("init shape")
        };
        let mut weights = Vec::with_capacity(spec.layers.len());
        for i in 0..spec.layers.len() {
            let shape = spec.weight_shape(i);
            let fan_in = shape[1..].iter().product();
            weights.push(draw(shape, fan_in));
        }
        let ro_shape = spec.readout_weight_shape();
        let ro_fan_in = ro_shape[1..].iter().product();
        let readout = draw(ro_shape, ro_fan_in);
        Ok(Network {
            spec,
            weights,
            readout,
        })
    }

    pub fn zeros_like(spec: NetworkSpec) -> Result<Network<F>> {
        spec.validate()?;
        let weights = (0..spec.layers.len())
            .map(|i| Tensor::zeros(spec.weight_shape(i)))
            .collect();
        let readout = Tensor::zeros(spec.readout_weight_shape());
        Ok(Network {
            spec,
            weights,
            readout,
        })
    }

    pub fn lif_params(&self) -> LifParams<F> {
        self.spec.lif.params().expect("validated spec")
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.readout.len()
    }

    pub fn cast<G: Real>(&self) -> Network<G> {
        Network {
            spec: self.spec.clone(),
            weights: self.weights.iter().map(|w| w.cast()).collect(),
            readout: self.readout.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_spec(scheme: SharingScheme) -> NetworkSpec {
        NetworkSpec {
            version: 1,
            scheme,
            timesteps: 3,
            lif: LifConfig::default(),
            coding: InputCoding::Direct,
            input: InputSpec {
                channels: 2,
                length: 3,
            },
            layers: vec![
                LayerSpec {
                    kind: LayerKind::Dense,
                    out: 4,
                },
                LayerSpec {
                    kind: LayerKind::Dense,
                    out: 4,
                },
            ],
            readout: ReadoutSpec {
                kind: LayerKind::Dense,
                classes: 2,
            },
            blocks: vec![vec![0, 1]],
        }
    }

    #[test]
    fn text_roundtrip() {
        let spec = toy_spec(SharingScheme::CrossLayerChannel { groups: 2 });
        let text = spec.to_text();
        let parsed = NetworkSpec::parse(&text).unwrap();
        assert_eq!(parsed.to_text(), text);
        assert_eq!(parsed.hash64(), spec.hash64());
    }

    #[test]
    fn chains_per_scheme() {
        let spec = toy_spec(SharingScheme::Baseline);
        assert_eq!(spec.chains().len(), 2);
        let spec = toy_spec(SharingScheme::CrossLayer);
        let chains = spec.chains();
        assert_eq!(chains.len(), 1);
        assert_eq!(chains[0].layers, vec![0, 1]);
        let spec = toy_spec(SharingScheme::CrossChannel { groups: 2 });
        let chains = spec.chains();
        assert_eq!(chains.len(), 2);
        assert_eq!(chains[0].groups, 2);
    }

    #[test]
    fn undeclared_layers_become_singleton_chains() {
        let mut spec = toy_spec(SharingScheme::CrossLayer);
        spec.blocks = vec![];
        let chains = spec.chains();
        assert_eq!(chains.len(), 2);
        assert!(chains.iter().all(|c| c.layers.len() == 1));
    }

    #[test]
    fn validates_divisibility() {
        let mut spec = toy_spec(SharingScheme::CrossChannel { groups: 3 });
        spec.blocks = vec![];
        assert!(matches!(
            spec.validate(),
            Err(Error::Divisibility { channels: 4, groups: 3 })
        ));
    }

    #[test]
    fn validates_block_shapes() {
        let mut spec = toy_spec(SharingScheme::CrossLayer);
        spec.layers[1].out = 6;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn validates_sequential_coding() {
        let mut spec = toy_spec(SharingScheme::Baseline);
        spec.coding = InputCoding::Sequential;
        spec.timesteps = 4; // != input length 3
        assert!(spec.validate().is_err());
        spec.timesteps = 3;
        assert!(spec.validate().is_ok());
        spec.layers[0].kind = LayerKind::Conv1d {
            kernel: 1,
            padding: 0,
        };
        assert!(spec.validate().is_err()); // sequential needs dense first layer
    }

    #[test]
    fn conv_shapes() {
        let spec = NetworkSpec {
            version: 1,
            scheme: SharingScheme::Baseline,
            timesteps: 2,
            lif: LifConfig::default(),
            coding: InputCoding::Direct,
            input: InputSpec {
                channels: 3,
                length: 8,
            },
            layers: vec![LayerSpec {
                kind: LayerKind::Conv1d {
                    kernel: 3,
                    padding: 1,
                },
                out: 4,
            }],
            readout: ReadoutSpec {
                kind: LayerKind::Conv1d {
                    kernel: 1,
                    padding: 0,
                },
                classes: 2,
            },
            blocks: vec![],
        };
        spec.validate().unwrap();
        assert_eq!(spec.activation_shape(0), vec![4, 8]);
        assert_eq!(spec.weight_shape(0), vec![4, 3, 3]);
        assert_eq!(spec.readout_shape(), vec![2, 8]);
    }

    #[test]
    fn init_is_deterministic() {
        let spec = toy_spec(SharingScheme::Baseline);
        let a: Network<f32> = Network::init(spec.clone(), 7).unwrap();
        let b: Network<f32> = Network::init(spec, 7).unwrap();
        assert_eq!(a.weights[0], b.weights[0]);
        assert_eq!(a.readout, b.readout);
    }
}
