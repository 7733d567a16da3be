//! Finite-difference gradient checking.
//!
//! The network in relaxed firing mode is an ordinary smooth recurrent net,
//! so its true gradient can be measured by central differences. The BPTT
//! engine run on the same relaxed forward must reproduce it; this is the
//! independent oracle that makes the backward wiring falsifiable. Checks
//! run at `f64` through the same generic code the `f32` production path
//! uses.

use crate::autograd::{backward, forward, ForwardOptions, ForwardTrace, GradientSet};
use crate::error::{Error, Result};
use crate::network::{
    InputCoding, InputSpec, LayerKind, LayerSpec, LifConfig, Network, NetworkSpec, ReadoutSpec,
    SharingScheme,
};
use crate::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Loss functions the checker can differentiate.
#[derive(Clone, Debug)]
pub enum CheckLoss {
    /// Softmax cross-entropy on the accumulated logits.
    CrossEntropy { label: usize },
    /// `Σ_t c_t · ⟨proj, logits_t⟩` — per-timestep weights expose the
    /// temporal gradient paths in isolation.
    WeightedLinear { time_weights: Vec<f64>, proj: Vec<f64> },
}

impl CheckLoss {
    fn value(&self, trace: &ForwardTrace<f64>) -> f64 {
        match self {
            CheckLoss::CrossEntropy { label } => {
                crate::autograd::softmax_cross_entropy(&trace.logits, *label).0
            }
            CheckLoss::WeightedLinear { time_weights, proj } => trace
                .logits_per_t
                .iter()
                .zip(time_weights)
                .map(|(lt, &c)| c * lt.iter().zip(proj).map(|(&a, &b)| a * b).sum::<f64>())
                .sum(),
        }
    }

    fn dlogits_per_t(&self, trace: &ForwardTrace<f64>, timesteps: usize) -> Vec<Vec<f64>> {
        match self {
            CheckLoss::CrossEntropy { label } => {
                let (_, d) = crate::autograd::softmax_cross_entropy(&trace.logits, *label);
                vec![d; timesteps]
            }
            CheckLoss::WeightedLinear { time_weights, proj } => time_weights
                .iter()
                .map(|&c| proj.iter().map(|&p| c * p).collect())
                .collect(),
        }
    }
}

/// Relative error with an absolute floor: differences at or below the floor
/// count as zero.
pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    let diff = (a - b).abs();
    if diff <= floor {
        0.0
    } else {
        diff / a.abs().max(b.abs())
    }
}

fn total_loss(net: &Network<f64>, samples: &[(Tensor<f64>, CheckLoss)]) -> Result<f64> {
    let mut acc = 0.0;
    for (input, loss) in samples {
        let trace = forward(net, input, ForwardOptions::relaxed())?;
        acc += loss.value(&trace);
    }
    Ok(acc)
}

/// Gradient of the summed sample losses by the BPTT engine on the relaxed
/// forward.
pub fn bptt_gradients(
    net: &Network<f64>,
    samples: &[(Tensor<f64>, CheckLoss)],
) -> Result<GradientSet<f64>> {
    let mut total = GradientSet::zeros_like(net);
    for (input, loss) in samples {
        let trace = forward(net, input, ForwardOptions::relaxed())?;
        let dlog = loss.dlogits_per_t(&trace, net.spec.timesteps);
        let grads = backward(net, &trace, &dlog)?;
        total.accumulate(&grads);
    }
    Ok(total)
}

/// Central finite differences over every weight of every layer.
pub fn fd_gradients(
    net: &Network<f64>,
    samples: &[(Tensor<f64>, CheckLoss)],
    h: f64,
) -> Result<GradientSet<f64>> {
    let mut work = net.clone();
    let mut grads = GradientSet::zeros_like(net);
    let n_layers = work.weights.len();
    for li in 0..=n_layers {
        let len = if li < n_layers {
            work.weights[li].len()
        } else {
            work.readout.len()
        };
        for idx in 0..len {
            let read = |w: &Network<f64>| {
                if li < n_layers {
                    w.weights[li].data()[idx]
                } else {
                    w.readout.data()[idx]
                }
            };
            let write = |w: &mut Network<f64>, v: f64| {
                if li < n_layers {
                    w.weights[li].data_mut()[idx] = v;
                } else {
                    w.readout.data_mut()[idx] = v;
                }
            };
            let orig = read(&work);
            write(&mut work, orig + h);
            let plus = total_loss(&work, samples)?;
            write(&mut work, orig - h);
            let minus = total_loss(&work, samples)?;
            write(&mut work, orig);
            let g = (plus - minus) / (2.0 * h);
            if li < n_layers {
                grads.layers[li].data_mut()[idx] = g;
            } else {
                grads.readout.data_mut()[idx] = g;
            }
        }
    }
    Ok(grads)
}

/// Max relative error between two gradient sets under the floored metric.
pub fn max_rel_error(a: &GradientSet<f64>, b: &GradientSet<f64>, floor: f64) -> f64 {
    a.iter_all()
        .zip(b.iter_all())
        .map(|(&x, &y)| rel_error(x, y, floor))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub scheme: SharingScheme,
    /// Maximum hidden layers per network (draws 1..=max).
    pub max_layers: usize,
    /// Maximum neurons per layer (rounded down to a multiple of the group
    /// count).
    pub max_neurons: usize,
    /// Maximum timesteps (draws 1..=max).
    pub max_timesteps: usize,
    pub seeds: u64,
    pub base_seed: u64,
    pub h: f64,
    pub floor: f64,
}

impl SuiteConfig {
    pub fn new(scheme: SharingScheme) -> Self {
        SuiteConfig {
            scheme,
            max_layers: 3,
            max_neurons: 8,
            max_timesteps: 4,
            seeds: 20,
            base_seed: 0,
            h: 1e-3,
            floor: 1e-7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub scheme: SharingScheme,
    pub max_rel_err: f64,
    pub networks: usize,
    pub weights_checked: usize,
    pub per_seed: Vec<f64>,
}

/// Draw a random small network for the given scheme.
pub fn random_spec(cfg: &SuiteConfig, rng: &mut ChaCha8Rng) -> NetworkSpec {
    let groups = cfg.scheme.groups();
    let n_layers = rng.gen_range(1..=cfg.max_layers);
    let width_steps = (cfg.max_neurons / groups).max(1);
    let width = groups * rng.gen_range(1..=width_steps);
    let timesteps = rng.gen_range(1..=cfg.max_timesteps);
    let layers = (0..n_layers)
        .map(|_| LayerSpec {
            kind: LayerKind::Dense,
            out: width,
        })
        .collect();
    let blocks = if cfg.scheme.shares_layers() {
        vec![(0..n_layers).collect()]
    } else {
        vec![]
    };
    NetworkSpec {
        version: 1,
        scheme: cfg.scheme,
        timesteps,
        lif: LifConfig::default(),
        coding: InputCoding::Direct,
        input: InputSpec {
            channels: rng.gen_range(1..=3),
            length: rng.gen_range(1..=3),
        },
        layers,
        readout: ReadoutSpec {
            kind: LayerKind::Dense,
            classes: rng.gen_range(2..=3),
        },
        blocks,
    }
}

fn random_samples(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> Vec<(Tensor<f64>, CheckLoss)> {
    let n = rng.gen_range(1..=2);
    (0..n)
        .map(|_| {
            let len = spec.input.channels * spec.input.length;
            let data = (0..len).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let input =
                Tensor::new(vec![spec.input.channels, spec.input.length], data).unwrap();
            let label = rng.gen_range(0..spec.readout.classes);
            (input, CheckLoss::CrossEntropy { label })
        })
        .collect()
}

/// Run the randomized finite-difference suite for one scheme: BPTT versus
/// central differences on the relaxed network.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let mut per_seed = Vec::with_capacity(cfg.seeds as usize);
    let mut weights_checked = 0;
    for seed in 0..cfg.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.base_seed.wrapping_add(seed));
        let spec = random_spec(cfg, &mut rng);
        let net: Network<f64> = Network::init(spec.clone(), cfg.base_seed ^ (seed + 1))?;
        let samples = random_samples(&spec, &mut rng);
        let analytic = bptt_gradients(&net, &samples)?;
        let numeric = fd_gradients(&net, &samples, cfg.h)?;
        weights_checked += net.param_count();
        per_seed.push(max_rel_error(&analytic, &numeric, cfg.floor));
    }
    let max_rel_err = per_seed.iter().copied().fold(0.0, f64::max);
    Ok(SuiteReport {
        scheme: cfg.scheme,
        max_rel_err,
        networks: cfg.seeds as usize,
        weights_checked,
        per_seed,
    })
}

/// The numeric-failure error raised when a suite exceeds its tolerance.
pub fn require_tolerance(report: &SuiteReport, tolerance: f64) -> Result<()> {
    if report.max_rel_err < tolerance {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "gradient check failed for scheme {}: max relative error {:.3e} >= {tolerance:.0e}",
            report.scheme.name(),
            report.max_rel_err
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_suite(scheme: SharingScheme) -> SuiteReport {
        let mut cfg = SuiteConfig::new(scheme);
        cfg.seeds = 4;
        run_suite(&cfg).unwrap()
    }

    #[test]
    fn baseline_matches_finite_differences() {
        let report = quick_suite(SharingScheme::Baseline);
        assert!(report.max_rel_err < 1e-4, "{}", report.max_rel_err);
    }

    #[test]
    fn crosslayer_matches_finite_differences() {
        let report = quick_suite(SharingScheme::CrossLayer);
        assert!(report.max_rel_err < 1e-4, "{}", report.max_rel_err);
    }

    #[test]
    fn crosschannel_matches_finite_differences() {
        let report = quick_suite(SharingScheme::CrossChannel { groups: 2 });
        assert!(report.max_rel_err < 1e-4, "{}", report.max_rel_err);
    }

    #[test]
    fn combined_matches_finite_differences() {
        let report = quick_suite(SharingScheme::CrossLayerChannel { groups: 2 });
        assert!(report.max_rel_err < 1e-4, "{}", report.max_rel_err);
    }

    #[test]
    fn loss_at_first_timestep_only_still_matches() {
        // With loss weight only on t=0 the cross-timestep path carries
        // nothing; the chain algebra must still agree with differences.
        let mut cfg = SuiteConfig::new(SharingScheme::CrossChannel { groups: 2 });
        cfg.seeds = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut spec = random_spec(&cfg, &mut rng);
        spec.timesteps = 3;
        let net: Network<f64> = Network::init(spec.clone(), 17).unwrap();
        let len = spec.input.channels * spec.input.length;
        let input = Tensor::new(
            vec![spec.input.channels, spec.input.length],
            (0..len).map(|i| (i as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        let loss = CheckLoss::WeightedLinear {
            time_weights: vec![1.0, 0.0, 0.0],
            proj: (0..spec.readout.classes)
                .map(|i| 0.5 + i as f64 * 0.25)
                .collect(),
        };
        let samples = vec![(input, loss)];
        let analytic = bptt_gradients(&net, &samples).unwrap();
        let numeric = fd_gradients(&net, &samples, 1e-3).unwrap();
        let err = max_rel_error(&analytic, &numeric, 1e-7);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn conv_layers_match_finite_differences() {
        let spec = NetworkSpec {
            version: 1,
            scheme: SharingScheme::CrossLayerChannel { groups: 2 },
            timesteps: 3,
            lif: LifConfig::default(),
            coding: InputCoding::Direct,
            input: InputSpec {
                channels: 2,
                length: 5,
            },
            layers: vec![
                LayerSpec {
                    kind: LayerKind::Conv1d {
                        kernel: 3,
                        padding: 1,
                    },
                    out: 4,
                },
                LayerSpec {
                    kind: LayerKind::Conv1d {
                        kernel: 3,
                        padding: 1,
                    },
                    out: 4,
                },
            ],
            readout: ReadoutSpec {
                kind: LayerKind::Conv1d {
                    kernel: 1,
                    padding: 0,
                },
                classes: 2,
            },
            blocks: vec![vec![0, 1]],
        };
        let net: Network<f64> = Network::init(spec.clone(), 23).unwrap();
        let len = spec.input.channels * spec.input.length;
        let input = Tensor::new(
            vec![2, 5],
            (0..len).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.4).collect(),
        )
        .unwrap();
        let samples = vec![(input, CheckLoss::CrossEntropy { label: 1 })];
        let analytic = bptt_gradients(&net, &samples).unwrap();
        let numeric = fd_gradients(&net, &samples, 1e-3).unwrap();
        let err = max_rel_error(&analytic, &numeric, 1e-7);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn sequential_coding_matches_finite_differences() {
        let spec = NetworkSpec {
            version: 1,
            scheme: SharingScheme::CrossLayer,
            timesteps: 4,
            lif: LifConfig::default(),
            coding: InputCoding::Sequential,
            input: InputSpec {
                channels: 2,
                length: 4,
            },
            layers: vec![
                LayerSpec {
                    kind: LayerKind::Dense,
                    out: 6,
                },
                LayerSpec {
                    kind: LayerKind::Dense,
                    out: 6,
                },
            ],
            readout: ReadoutSpec {
                kind: LayerKind::Dense,
                classes: 2,
            },
            blocks: vec![vec![0, 1]],
        };
        let net: Network<f64> = Network::init(spec.clone(), 31).unwrap();
        let input = Tensor::new(
            vec![2, 4],
            vec![0.9, -0.2, 0.4, 1.1, -0.7, 0.3, 0.8, -0.1],
        )
        .unwrap();
        let samples = vec![(input, CheckLoss::CrossEntropy { label: 0 })];
        let analytic = bptt_gradients(&net, &samples).unwrap();
        let numeric = fd_gradients(&net, &samples, 1e-3).unwrap();
        let err = max_rel_error(&analytic, &numeric, 1e-7);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn hard_reset_backward_matches_finite_differences() {
        let mut cfg = SuiteConfig::new(SharingScheme::CrossChannel { groups: 2 });
        cfg.seeds = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut spec = random_spec(&cfg, &mut rng);
        spec.lif.reset = crate::lif::ResetMode::Hard;
        let net: Network<f64> = Network::init(spec.clone(), 5).unwrap();
        let samples = random_samples(&spec, &mut rng);
        let analytic = bptt_gradients(&net, &samples).unwrap();
        let numeric = fd_gradients(&net, &samples, 1e-3).unwrap();
        let err = max_rel_error(&analytic, &numeric, 1e-7);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn detached_reset_changes_the_gradient() {
        let mut cfg = SuiteConfig::new(SharingScheme::CrossLayer);
        cfg.seeds = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut spec = random_spec(&cfg, &mut rng);
        spec.timesteps = 4;
        let samples = random_samples(&spec, &mut rng);
        let net: Network<f64> = Network::init(spec.clone(), 2).unwrap();
        let with_reset = bptt_gradients(&net, &samples).unwrap();
        let mut detached_spec = spec;
        detached_spec.lif.detach_reset = true;
        let mut detached_net = net.clone();
        detached_net.spec = detached_spec;
        let without_reset = bptt_gradients(&detached_net, &samples).unwrap();
        let diff = max_rel_error(&with_reset, &without_reset, 1e-12);
        assert!(diff > 1e-6, "detaching the reset path had no effect");
    }

    #[test]
    fn gradient_reaches_the_first_layer_through_time() {
        // loss applied only at the final timestep still trains layer 1
        let mut cfg = SuiteConfig::new(SharingScheme::CrossLayer);
        cfg.seeds = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut spec = random_spec(&cfg, &mut rng);
        spec.timesteps = 3;
        let net: Network<f64> = Network::init(spec.clone(), 41).unwrap();
        let len = spec.input.channels * spec.input.length;
        let input = Tensor::new(
            vec![spec.input.channels, spec.input.length],
            (0..len).map(|i| ((i as f64) * 0.61).cos()).collect(),
        )
        .unwrap();
        let loss = CheckLoss::WeightedLinear {
            time_weights: vec![0.0, 0.0, 1.0],
            proj: vec![1.0; spec.readout.classes],
        };
        let grads = bptt_gradients(&net, &[(input, loss)]).unwrap();
        let first_layer_norm: f64 = grads.layers[0]
            .data()
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        assert!(first_layer_norm > 0.0);
    }
}
