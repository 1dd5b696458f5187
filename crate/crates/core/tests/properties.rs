//! Property tests across module boundaries.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scenetex::bake::psnr;
use scenetex::diffcore::{ParamStore, Tape, Tensor};
use scenetex::optim::{sample_timestep, TimestepSchedule};
use scenetex::texfield::{GridConfig, HashGridTexture};
use scenetex::xattn::{attention_values, AttentionShape, Segment};

fn grid_config(levels: usize, log_table: u32, min: usize, max: usize) -> GridConfig {
    GridConfig { levels, table_size: 1 << log_table, features: 2, min_resolution: min, max_resolution: max.max(min) }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // bilinear weights sum to one, so a constant table encodes to that constant
    #[test]
    fn constant_tables_encode_to_the_constant(
        levels in 1usize..5, log_table in 4u32..10, min in 2usize..8, max in 2usize..40,
        value in -3.0f64..3.0, u in 0.0f64..=1.0, v in 0.0f64..=1.0,
    ) {
        let mut store = ParamStore::<f64>::new();
        let grid = HashGridTexture::zeros(grid_config(levels, log_table, min, max), &mut store).unwrap();
        for t in store.values_mut() {
            t.data_mut().fill(value);
        }
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let emb = grid.encode(&tape, &p, &[[u, v]]).unwrap();
        for &x in tape.value(emb).data() {
            prop_assert!((x - value).abs() <= 1e-12 * value.abs().max(1.0));
        }
    }

    #[test]
    fn attention_ignores_key_order(
        seed in any::<u64>(), rows in 1usize..9, keys in 1usize..9, heads in 1usize..4, tile in 1usize..5,
    ) {
        use rand::Rng;
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = 2 * heads;
        let mut t = |r: usize| Tensor::<f64>::from_fn(&[r, width], |_| rng.random_range(-2.0..2.0));
        let (q, k, v) = (t(rows), t(keys), t(keys));
        let mut order: Vec<usize> = (0..keys).collect();
        order.shuffle(&mut rng);
        let permute = |x: &Tensor<f64>| Tensor::from_fn(&[keys, width], |i| x.data()[order[i[0]] * width + i[1]]);
        let shape = AttentionShape { heads, query_tile: tile, key_tile: tile };
        let seg = [Segment { q: 0..rows, k: 0..keys }];
        let (a, _) = attention_values(&q, &k, &v, &seg, &shape).unwrap();
        let (b, _) = attention_values(&q, &permute(&k), &permute(&v), &seg, &shape).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn timesteps_stay_in_their_phase_range(iteration in 0u64..20_000, seed in any::<u64>()) {
        let s = TimestepSchedule { anneal_at: 5000, before: [0.02, 0.98], after: [0.02, 0.50] };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [lo, hi] = s.range(iteration);
        for _ in 0..32 {
            let t = sample_timestep(iteration, &s, &mut rng);
            prop_assert!(t >= lo && t <= hi);
        }
    }

    #[test]
    fn psnr_is_symmetric_and_full_mask_is_no_mask(
        a in proptest::collection::vec(0.0f64..=1.0, 30),
        b in proptest::collection::vec(0.0f64..=1.0, 30),
    ) {
        let ab = psnr(&a, &b, None, 3).unwrap();
        prop_assert_eq!(ab, psnr(&b, &a, None, 3).unwrap());
        prop_assert_eq!(ab, psnr(&a, &b, Some(&[true; 10]), 3).unwrap());
    }
}
