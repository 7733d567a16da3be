//! Property tests for the tensor layer and step dynamics.

use efflif_core::lif::{lif_step, FiringMode, LifParams, MembraneState, ResetMode};
use efflif_core::sharing::{step_layer_grouped, BlockState};
use efflif_core::tensor::{channel_concat, channel_split, matvec, BitTensor, Tensor};
use proptest::prelude::*;

fn bits_strategy(len: usize) -> impl Strategy<Value = Vec<bool>> {
    proptest::collection::vec(any::<bool>(), len)
}

proptest! {
    #[test]
    fn split_concat_roundtrip(
        groups in 1usize..5,
        per_group in 1usize..4,
        tail in 1usize..5,
        seed in any::<u64>(),
    ) {
        let c = groups * per_group;
        let mut state = seed | 1;
        let data: Vec<f32> = (0..c * tail)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 40) as f32 / (1u64 << 24) as f32) - 0.5
            })
            .collect();
        let x = Tensor::new(vec![c, tail], data).unwrap();
        let parts = channel_split(&x, groups).unwrap();
        let back = channel_concat(&parts).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn pack_unpack_pack_is_byte_identical(bits in bits_strategy(130)) {
        let bt = BitTensor::from_bools(vec![bits.len()], &bits).unwrap();
        let unpacked: Tensor<f32> = bt.unpack();
        let repacked = BitTensor::pack(&unpacked);
        prop_assert_eq!(bt.words(), repacked.words());
        for (i, &b) in bits.iter().enumerate() {
            prop_assert_eq!(bt.get(i), b);
        }
    }

    #[test]
    fn matvec_distributes_over_disjoint_spikes(
        rows in 1usize..5,
        cols in 1usize..9,
        mask in bits_strategy(8),
        select in bits_strategy(8),
        wseed in any::<u32>(),
    ) {
        // weights on a 2^-8 grid keep every partial sum exact, so the
        // bit-level identity matvec(W, a|b) == matvec(W,a) + matvec(W,b)
        // holds with float equality whenever a & b == 0
        let mut state = wseed as u64 | 1;
        let w_data: Vec<f32> = (0..rows * cols)
            .map(|_| {
                state = state.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
                (((state >> 48) as i64 - 32768) as f32) / 256.0
            })
            .collect();
        let w = Tensor::new(vec![rows, cols], w_data).unwrap();
        let a_bits: Vec<bool> = (0..cols).map(|i| mask[i] && select[i]).collect();
        let b_bits: Vec<bool> = (0..cols).map(|i| mask[i] && !select[i]).collect();
        let a = BitTensor::from_bools(vec![cols], &a_bits).unwrap();
        let b = BitTensor::from_bools(vec![cols], &b_bits).unwrap();
        prop_assert!(a.disjoint(&b));
        let combined = a.bitor(&b).unwrap();
        let whole = matvec(&w, &combined).unwrap();
        let pa = matvec(&w, &a).unwrap();
        let pb = matvec(&w, &b).unwrap();
        for i in 0..rows {
            prop_assert_eq!(whole.data()[i], pa.data()[i] + pb.data()[i]);
        }
    }

    #[test]
    fn lif_step_stays_finite(
        u0 in proptest::collection::vec(-100.0f32..100.0, 1..6),
        x in proptest::collection::vec(-100.0f32..100.0, 1..6),
        lambda in 0.05f64..1.0,
        soft in any::<bool>(),
    ) {
        let n = u0.len().min(x.len());
        let reset = if soft { ResetMode::Soft } else { ResetMode::Hard };
        let p = LifParams::new(lambda as f32, 1.0, reset).unwrap();
        let state = MembraneState::new(Tensor::new(vec![n], u0[..n].to_vec()).unwrap()).unwrap();
        let xt = Tensor::new(vec![n], x[..n].to_vec()).unwrap();
        let (next, spikes) = lif_step(&state, &xt, &p).unwrap();
        prop_assert!(next.u.is_finite());
        prop_assert!(spikes.count_ones() <= n);
    }

    #[test]
    fn soft_reset_conserves_suprathreshold_charge(
        u0 in -2.0f32..2.0,
        x in -2.0f32..3.0,
    ) {
        let p = LifParams::new(0.5f32, 1.0, ResetMode::Soft).unwrap();
        let state = MembraneState::new(Tensor::vector(vec![u0])).unwrap();
        let (next, spikes) = lif_step(&state, &Tensor::vector(vec![x]), &p).unwrap();
        let raw = 0.5 * u0 + x;
        if spikes.get(0) {
            prop_assert!(raw > 1.0);
            prop_assert_eq!(next.u.data()[0], raw - 1.0);
        } else {
            prop_assert!(raw <= 1.0);
            prop_assert_eq!(next.u.data()[0], raw);
        }
    }

    #[test]
    fn grouped_step_concatenation_matches_manual_groups(
        per_group in 1usize..4,
        groups in 1usize..4,
        xs in proptest::collection::vec(-2.0f32..2.0, 1..13),
    ) {
        // driving the grouped layer step equals stepping each group slab by
        // hand through the same carry
        let slab = per_group;
        let total = slab * groups;
        if xs.len() < total {
            return Ok(());
        }
        let p = LifParams::new(0.5f32, 1.0, ResetMode::Soft).unwrap();
        let x = Tensor::new(vec![total], xs[..total].to_vec()).unwrap();

        let mut grouped = BlockState::zeros(vec![slab]);
        let (u_full, o_full) =
            step_layer_grouped(&mut grouped, &x, groups, &p, FiringMode::Spiking).unwrap();

        let mut manual = BlockState::zeros(vec![slab]);
        for g in 0..groups {
            let xg = Tensor::new(vec![slab], xs[g * slab..(g + 1) * slab].to_vec()).unwrap();
            let (u_g, o_g) =
                step_layer_grouped(&mut manual, &xg, 1, &p, FiringMode::Spiking).unwrap();
            for i in 0..slab {
                prop_assert_eq!(u_full.data()[g * slab + i], u_g.data()[i]);
                prop_assert_eq!(o_full.data()[g * slab + i], o_g.data()[i]);
            }
        }
    }
}
