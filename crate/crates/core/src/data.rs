//! Dataset ingestion and synthesis.
//!
//! Canonical CSV: one sample per row, `f_0,...,f_{C·L-1},label`, features
//! flattened channel-major, UTF-8, LF line endings, header optional. A
//! dataset manifest is a key=value file naming the split CSVs and their
//! schema.

use crate::error::{Error, Result};
use crate::kv::{self, Item};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug)]
pub struct Sample {
    /// `[channels, seq_len]` feature tensor.
    pub features: Tensor<f32>,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct SequenceDataset {
    pub samples: Vec<Sample>,
    pub n_channels: usize,
    pub seq_len: usize,
    pub n_classes: usize,
}

impl SequenceDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CsvSchema {
    pub n_channels: usize,
    pub seq_len: usize,
    /// When set, labels outside `[0, n_classes)` are rejected; otherwise the
    /// class count is inferred as `max label + 1`.
    pub n_classes: Option<usize>,
    pub has_header: bool,
}

/// Load the canonical CSV. Row order is preserved; values parse as fp32.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SequenceDataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    let feat_len = schema.n_channels * schema.seq_len;
    let mut samples = Vec::new();
    let mut max_label = 0usize;
    for (i, record) in reader.records().enumerate() {
        let line = i + 1 + usize::from(schema.has_header);
        let record = record.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if record.len() != feat_len + 1 {
            return Err(Error::Parse {
                line,
                msg: format!(
                    "expected {} feature values + label, got {} fields",
                    feat_len,
                    record.len()
                ),
            });
        }
        let mut values = Vec::with_capacity(feat_len);
        for field in record.iter().take(feat_len) {
            let v: f32 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("invalid feature value `{field}`"),
            })?;
            values.push(v);
        }
        let label: usize = record[feat_len].trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("invalid label `{}`", &record[feat_len]),
        })?;
        if let Some(n) = schema.n_classes {
            if label >= n {
                return Err(Error::data(format!(
                    "label {label} out of range [0, {n}) at line {line}"
                )));
            }
        }
        max_label = max_label.max(label);
        samples.push(Sample {
            features: Tensor::new(vec![schema.n_channels, schema.seq_len], values)?,
            label,
        });
    }
    if samples.is_empty() {
        return Err(Error::data(format!("{} holds no samples", path.display())));
    }
    Ok(SequenceDataset {
        samples,
        n_channels: schema.n_channels,
        seq_len: schema.seq_len,
        n_classes: schema.n_classes.unwrap_or(max_label + 1),
    })
}

/// Write the canonical CSV. Floats print in shortest round-trip form, so a
/// written dataset re-loads value-identical.
pub fn save_csv(ds: &SequenceDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for s in &ds.samples {
        let mut fields: Vec<String> = s.features.data().iter().map(|v| format!("{v}")).collect();
        fields.push(s.label.to_string());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    std::fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Deterministic shuffled split by cumulative-floor boundaries: train gets
/// `[0, ⌊f_train·n⌋)`, validation `[⌊f_train·n⌋, ⌊(f_train+f_val)·n⌋)`, and
/// the remainder goes to test.
pub fn split(
    ds: &SequenceDataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(SequenceDataset, SequenceDataset, SequenceDataset)> {
    let (f_train, f_val, f_test) = fractions;
    let sum = f_train + f_val + f_test;
    if (sum - 1.0).abs() > 1e-9 || f_train < 0.0 || f_val < 0.0 || f_test < 0.0 {
        return Err(Error::config(format!(
            "split fractions must be nonnegative and sum to 1, got {fractions:?}"
        )));
    }
    let n = ds.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let b1 = (f_train * n as f64).floor() as usize;
    let b2 = ((f_train + f_val) * n as f64).floor() as usize;
    let take = |range: &[usize]| SequenceDataset {
        samples: range.iter().map(|&i| ds.samples[i].clone()).collect(),
        n_channels: ds.n_channels,
        seq_len: ds.seq_len,
        n_classes: ds.n_classes,
    };
    Ok((take(&idx[..b1]), take(&idx[b1..b2]), take(&idx[b2..])))
}

/// Per-channel affine standardization fitted on one split only.
#[derive(Clone, Debug)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl Standardizer {
    pub fn fit(train: &SequenceDataset) -> Standardizer {
        let c = train.n_channels;
        let mut mean = vec![0.0f64; c];
        let mut count = vec![0usize; c];
        for s in &train.samples {
            for ci in 0..c {
                for j in 0..train.seq_len {
                    mean[ci] += s.features.data()[ci * train.seq_len + j] as f64;
                    count[ci] += 1;
                }
            }
        }
        for ci in 0..c {
            mean[ci] /= count[ci].max(1) as f64;
        }
        let mut var = vec![0.0f64; c];
        for s in &train.samples {
            for ci in 0..c {
                for j in 0..train.seq_len {
                    let d = s.features.data()[ci * train.seq_len + j] as f64 - mean[ci];
                    var[ci] += d * d;
                }
            }
        }
        let std = var
            .iter()
            .zip(&count)
            .map(|(&v, &n)| (v / n.max(1) as f64).sqrt().max(STD_FLOOR))
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, ds: &mut SequenceDataset) {
        let l = ds.seq_len;
        for s in &mut ds.samples {
            let data = s.features.data_mut();
            for ci in 0..ds.n_channels {
                for j in 0..l {
                    let v = data[ci * l + j] as f64;
                    data[ci * l + j] = ((v - self.mean[ci]) / self.std[ci]) as f32;
                }
            }
        }
    }
}

/// Event positions of the synthetic XOR task for a given sequence length.
pub fn xor_event_positions(seq_len: usize) -> (usize, usize) {
    ((seq_len - 1) / 2, seq_len - 1)
}

/// Synthetic two-event XOR task: a single-channel sequence with unit pulses
/// at two fixed temporal positions; the label is the XOR of the two events.
/// Solvable only by carrying the first event across timesteps, so it
/// exercises the cross-timestep gradient paths. Classes are balanced within
/// one sample.
pub fn synth_temporal_xor(n: usize, seq_len: usize, seed: u64) -> Result<SequenceDataset> {
    if n < 2 || seq_len < 2 {
        return Err(Error::config(
            "temporal XOR needs at least 2 samples and sequence length 2",
        ));
    }
    let (p0, p1) = xor_event_positions(seq_len);
    let combos = [(0u8, 0u8), (0, 1), (1, 0), (1, 1)];
    let mut samples: Vec<Sample> = (0..n)
        .map(|i| {
            let (e0, e1) = combos[i % 4];
            let mut values = vec![0.0f32; seq_len];
            if e0 == 1 {
                values[p0] = 1.0;
            }
            if e1 == 1 {
                values[p1] = 1.0;
            }
            Sample {
                features: Tensor::new(vec![1, seq_len], values).expect("xor sample"),
                label: (e0 ^ e1) as usize,
            }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples.shuffle(&mut rng);
    Ok(SequenceDataset {
        samples,
        n_channels: 1,
        seq_len,
        n_classes: 2,
    })
}

// ---- manifest ----

#[derive(Clone, Debug)]
pub struct Manifest {
    pub n_channels: usize,
    pub seq_len: usize,
    pub n_classes: usize,
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        format!(
            "version = 1\nn_channels = {}\nseq_len = {}\nn_classes = {}\ntrain = {}\nval = {}\ntest = {}\n",
            self.n_channels,
            self.seq_len,
            self.n_classes,
            self.train.display(),
            self.val.display(),
            self.test.display()
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_text())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        let mut n_channels = None;
        let mut seq_len = None;
        let mut n_classes = None;
        let mut train = None;
        let mut val = None;
        let mut test = None;
        for item in kv::parse(text)? {
            if let Item::Pair { line, key, value } = item {
                match key.as_str() {
                    "version" => {
                        let v: u32 = kv::parse_num(line, &key, &value)?;
                        if v != 1 {
                            return Err(Error::data(format!("unsupported manifest version {v}")));
                        }
                    }
                    "n_channels" => n_channels = Some(kv::parse_num(line, &key, &value)?),
                    "seq_len" => seq_len = Some(kv::parse_num(line, &key, &value)?),
                    "n_classes" => n_classes = Some(kv::parse_num(line, &key, &value)?),
                    "train" => train = Some(PathBuf::from(value)),
                    "val" => val = Some(PathBuf::from(value)),
                    "test" => test = Some(PathBuf::from(value)),
                    other => {
                        return Err(Error::Parse {
                            line,
                            msg: format!("unknown manifest key `{other}`"),
                        })
                    }
                }
            }
        }
        let missing = |what: &str| Error::data(format!("manifest missing `{what}`"));
        Ok(Manifest {
            n_channels: n_channels.ok_or_else(|| missing("n_channels"))?,
            seq_len: seq_len.ok_or_else(|| missing("seq_len"))?,
            n_classes: n_classes.ok_or_else(|| missing("n_classes"))?,
            train: train.ok_or_else(|| missing("train"))?,
            val: val.ok_or_else(|| missing("val"))?,
            test: test.ok_or_else(|| missing("test"))?,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
        let mut m = Manifest::parse(&text)?;
        // split paths resolve relative to the manifest
        if let Some(dir) = path.parent() {
            for p in [&mut m.train, &mut m.val, &mut m.test] {
                if p.is_relative() {
                    *p = dir.join(&p);
                }
            }
        }
        Ok(m)
    }

    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            n_channels: self.n_channels,
            seq_len: self.seq_len,
            n_classes: Some(self.n_classes),
            has_header: false,
        }
    }

    pub fn load_split(&self, which: &str) -> Result<SequenceDataset> {
        let path = match which {
            "train" => &self.train,
            "val" => &self.val,
            "test" => &self.test,
            other => return Err(Error::config(format!("unknown split `{other}`"))),
        };
        load_csv(path, &self.schema())
    }
}
