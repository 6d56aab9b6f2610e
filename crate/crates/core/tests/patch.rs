//! Mixup, oversampling and patch-splitting invariants.

use asckit::patch::{mix_pair, mixup_batch, one_hot, oversample, split_patches, MixupConfig, Patch, PATCH};
use asckit::spectra::{FrameParams, Matrix, Spectrogram, SpectrogramKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Patch of single-precision values spread over several binades.
fn patch_from_seed(seed: u64, c: usize) -> Patch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 10f32.powi(rng.random_range(-3..4));
    let data = Matrix::from_fn(PATCH, PATCH, |_, _| (rng.random_range(-1.0f32..1.0) * scale) as f64);
    let w: Vec<f64> = (0..c).map(|_| rng.random_range(0.0..1.0)).collect();
    let s: f64 = w.iter().sum();
    Patch::new(data, w.iter().map(|v| v / s).collect(), format!("f{seed}"), 0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mixup_conserves_data_and_labels(s1 in any::<u64>(), s2 in any::<u64>(), gamma in 0.0f64..=1.0, c in 2usize..12) {
        let a = patch_from_seed(s1, c);
        let b = patch_from_seed(s2, c);
        let (p, q) = mix_pair(&a, &b, gamma).unwrap();
        for i in 0..PATCH * PATCH {
            let (x1, x2) = (a.data.data()[i], b.data.data()[i]);
            let (m1, m2) = (p.data.data()[i], q.data.data()[i]);
            prop_assert_eq!(m1 + m2, x1 + x2);
            prop_assert_eq!(m1, m1 as f32 as f64);
        }
        for l in [&p.label, &q.label] {
            prop_assert!(l.iter().all(|&v| v >= 0.0));
            prop_assert!((l.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        for k in 0..c {
            prop_assert!((p.label[k] + q.label[k] - a.label[k] - b.label[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn oversampling_balances_and_keeps_originals(counts in prop::collection::vec(1usize..9, 2..6), seed in any::<u64>()) {
        let c = counts.len();
        let mut patches = Vec::new();
        for (class, &n) in counts.iter().enumerate() {
            for i in 0..n {
                let data = Matrix::from_fn(PATCH, PATCH, |_, _| (class * 100 + i) as f64);
                patches.push(Patch::new(data, one_hot(class, c), format!("c{class}_{i}"), 0).unwrap());
            }
        }
        let out = oversample(patches.clone(), seed).unwrap();
        let max = *counts.iter().max().unwrap();
        prop_assert_eq!(out.len(), max * c);
        prop_assert_eq!(&out[..patches.len()], &patches[..]);
        for class in 0..c {
            prop_assert_eq!(out.iter().filter(|p| p.hard_label() == class).count(), max);
        }
        for extra in &out[patches.len()..] {
            prop_assert!(patches.contains(extra));
        }
        prop_assert_eq!(out, oversample(patches, seed).unwrap());
    }

    #[test]
    fn conservation_survives_wide_dynamic_range(e1 in -40i32..40, e2 in -40i32..40, u in -1.0f32..1.0, v in -1.0f32..1.0, gamma in 0.0f64..=1.0) {
        let x1 = (u * 10f32.powi(e1 / 2)) as f64;
        let x2 = (v * 10f32.powi(e2 / 2)) as f64;
        let a = Patch::new(Matrix::from_fn(PATCH, PATCH, |_, _| x1), one_hot(0, 2), "a", 0).unwrap();
        let b = Patch::new(Matrix::from_fn(PATCH, PATCH, |_, _| x2), one_hot(1, 2), "b", 0).unwrap();
        let (p, q) = mix_pair(&a, &b, gamma).unwrap();
        let (m1, m2) = (p.data.get(0, 0), q.data.get(0, 0));
        prop_assert_eq!(m1 + m2, x1 + x2);
    }

    #[test]
    fn split_covers_whole_patches(t in 1usize..700) {
        let data = Matrix::from_fn(128, t, |f, c| (f + 3 * c) as f64 * 0.25);
        let spec = Spectrogram::new(SpectrogramKind::Gam, data, FrameParams::default(), "x").unwrap();
        let patches = split_patches(&spec, 1, 3).unwrap();
        prop_assert_eq!(patches.len(), (t / PATCH).max(1));
        for (i, p) in patches.iter().enumerate() {
            prop_assert_eq!(p.index, i);
            let col = (i * PATCH) % t;
            prop_assert_eq!(p.data.get(9, 0), spec.data.get(9, col));
        }
    }
}

#[test]
fn gamma_one_is_identity() {
    let a = patch_from_seed(1, 4);
    let b = patch_from_seed(2, 4);
    let (p, q) = mix_pair(&a, &b, 1.0).unwrap();
    assert_eq!(p.data, a.data);
    assert_eq!(q.data, b.data);
    assert_eq!(p.label, a.label);
    assert_eq!(q.label, b.label);
}

#[test]
fn batch_rules() {
    let batch: Vec<Patch> = (0..3).map(|s| patch_from_seed(s, 2)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(mixup_batch(&batch, &MixupConfig::default(), &mut rng).is_err());
    let off = MixupConfig {
        enabled: false,
        ..MixupConfig::default()
    };
    assert_eq!(mixup_batch(&batch[..2], &off, &mut rng).unwrap(), batch[..2].to_vec());
    let mixed = mixup_batch(&batch[..2], &MixupConfig::default(), &mut rng).unwrap();
    assert_eq!(mixed.len(), 2);
    assert!(mix_pair(&batch[0], &batch[1], 1.5).is_err());
}

#[test]
fn coefficients_stay_in_unit_interval() {
    let cfg = MixupConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws: Vec<f64> = (0..2000).map(|_| cfg.draw_gamma(&mut rng).unwrap()).collect();
    assert!(draws.iter().all(|g| (0.0..=1.0).contains(g)));
    // Beta(0.4, 0.4) piles mass near the ends
    let extreme = draws.iter().filter(|&&g| !(0.1..=0.9).contains(&g)).count();
    assert!(extreme > 500, "{extreme}");
}
