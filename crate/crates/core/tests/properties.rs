use avatar_core::data_production::{blend_block, read_dataset, render_pairs, write_dataset};
use avatar_core::engines::{sample_vector, AttrValue, AvatarVector, EngineSchema};
use avatar_core::estimator::{cross_entropy, sce_loss};
use avatar_core::evaluation::paired_t_test;
use avatar_core::generators::{mix_styles, LatentCode, ModelArch};
use avatar_core::image::{ImageTensor, Label};
use avatar_core::inversion::PerceptualMetric;
use proptest::prelude::*;

fn image(seed: u64) -> ImageTensor {
    let t = avatar_core::nn::uniform::<f32>(
        &[1, 3, 32, 32],
        0.0,
        1.0,
        &mut avatar_core::rng::rng(seed),
    );
    ImageTensor::batch_from_tensor(&t).remove(0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sce_is_nonnegative_and_reduces_to_ce(logits in prop::collection::vec(-8.0f64..8.0, 2..10), pick in 0usize..100) {
        let y = pick % logits.len();
        prop_assert!(sce_loss(&logits, y, 1.0, 1.0, -4.0) >= 0.0);
        prop_assert_eq!(sce_loss(&logits, y, 1.0, 0.0, -4.0), cross_entropy(&logits, y));
    }

    #[test]
    fn blend_touches_only_its_block(seed in 0u64..1000, part in 0usize..8, lambda in 0.0f64..=1.0) {
        let a = ModelArch::desk();
        let w = LatentCode::sample_z(&a, seed);
        let noise: Vec<f64> = LatentCode::sample_z(&a, seed + 1).block(0).to_vec();
        let label = Label::from_index(part).unwrap();
        let out = blend_block(&w, label, lambda, &noise);
        for k in 0..a.num_parts {
            if k != part {
                prop_assert_eq!(out.block(k), w.block(k));
            }
        }
        if lambda == 1.0 {
            prop_assert_eq!(out.block(part), &noise[..]);
        }
    }

    #[test]
    fn style_mixing_takes_each_block_from_a_parent(s1 in 0u64..500, s2 in 500u64..1000, p in 0.0f64..=1.0, seed: u64) {
        let a = ModelArch::desk();
        let (w1, w2) = (LatentCode::sample_z(&a, s1), LatentCode::sample_z(&a, s2));
        let m = mix_styles(&w1, &w2, p, seed);
        for k in 0..a.num_parts {
            prop_assert!(m.block(k) == w1.block(k) || m.block(k) == w2.block(k));
        }
    }

    #[test]
    fn vector_json_round_trip(seed: u64, engine_b: bool) {
        let s = if engine_b { EngineSchema::engine_b() } else { EngineSchema::engine_a() };
        let v = sample_vector(&s, seed);
        prop_assert_eq!(AvatarVector::from_json(&s, &v.to_json(&s)).unwrap(), v);
    }

    #[test]
    fn t_test_p_value_is_a_probability(d in prop::collection::vec(-5.0f64..5.0, 2..40)) {
        let (_, p) = paired_t_test(&d);
        prop_assert!((0.0..=1.0).contains(&p));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn perceptual_distance_is_a_symmetric_premetric(s1 in 0u64..1000, s2 in 1000u64..2000) {
        let m = PerceptualMetric::<f32>::new(0);
        let (a, b) = (image(s1), image(s2));
        let ab = m.distance(&a, &b);
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - m.distance(&b, &a)).abs() <= 1e-6 * ab.max(1.0));
        prop_assert!(m.distance(&a, &a) < 1e-9);
    }

    #[test]
    fn dataset_files_round_trip(seed: u64, x in 0.0f64..1.0) {
        let s = EngineSchema::engine_a();
        let mut ds = render_pairs(&s, 3, 16, seed).unwrap();
        // Arbitrary continuous values must survive the JSON manifest exactly.
        let i = s.index_of("eye_size").unwrap();
        ds.samples[0].vector.values[i] = AttrValue::Continuous(x);
        let dir = tempfile::tempdir().unwrap();
        let hash = write_dataset(&ds, dir.path()).unwrap();
        prop_assert_eq!(hash.len(), 64);
        prop_assert_eq!(read_dataset(dir.path()).unwrap(), ds);
    }
}
