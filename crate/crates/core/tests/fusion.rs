//! Late-fusion and report invariants.

use asckit::fusion::{
    dump_probs, evaluate, fuse, fuse_systems, load_probs, patch_mean, predict, Level, ProbVector, Strategy, Truth,
};
use asckit::SpectrogramKind;
use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};
use proptest::strategy::Strategy as Gen;

const KINDS: [SpectrogramKind; 5] = SpectrogramKind::ALL;

fn simplex(c: usize) -> impl Gen<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, c).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    })
}

fn systems(max_s: usize) -> impl Gen<Value = Vec<ProbVector>> {
    (2usize..8, 1..=max_s).prop_flat_map(|(c, s)| {
        prop::collection::vec(simplex(c), s).prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, probs)| ProbVector {
                    probs,
                    level: Level::File,
                    file_id: "f".into(),
                    kinds: vec![KINDS[i % 5]],
                })
                .collect()
        })
    })
}

proptest! {
    #[test]
    fn single_system_is_identity(v in systems(1)) {
        for s in [Strategy::Mean, Strategy::Prod, Strategy::Max] {
            prop_assert_eq!(&fuse(&v, s).unwrap().probs, &v[0].probs);
        }
    }

    #[test]
    fn mean_and_prod_ignore_system_order(v in systems(5), rot in 0usize..5) {
        let mut w = v.clone();
        w.rotate_left(rot % v.len());
        w.reverse();
        for s in [Strategy::Mean, Strategy::Prod] {
            let a = fuse(&v, s).unwrap().probs;
            let b = fuse(&w, s).unwrap().probs;
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-15 * x.abs().max(1e-300) + 1e-300);
            }
        }
    }

    #[test]
    fn prod_argmax_survives_rescaling_a_system(v in systems(5), which in 0usize..5, k in 0.01f64..100.0) {
        let before = predict(&fuse(&v, Strategy::Prod).unwrap().probs).class;
        let mut w = v.clone();
        let i = which % w.len();
        w[i].probs.iter_mut().for_each(|p| *p *= k);
        let fused = fuse(&w, Strategy::Prod).unwrap().probs;
        let base = fuse(&v, Strategy::Prod).unwrap().probs;
        // rescaling multiplies every category by k, so a clear winner stays
        let mut sorted = base.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if sorted[0] > sorted[1] * (1.0 + 1e-9) {
            prop_assert_eq!(predict(&fused).class, before);
        }
    }

    #[test]
    fn mean_stays_on_simplex_and_max_dominates(v in systems(5)) {
        let m = fuse(&v, Strategy::Mean).unwrap();
        prop_assert!((m.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(m.probs.iter().all(|&p| p >= 0.0));
        let x = fuse(&v, Strategy::Max).unwrap();
        for sys in &v {
            for (a, b) in x.probs.iter().zip(&sys.probs) {
                prop_assert!(a >= b);
            }
        }
        prop_assert!(x.probs.iter().all(|&p| p <= 1.0));
    }

    #[test]
    fn patch_mean_is_on_simplex(rows in (2usize..6).prop_flat_map(|c| prop::collection::vec(simplex(c), 1..10))) {
        let v = patch_mean(&rows, "f", SpectrogramKind::Cqt).unwrap();
        prop_assert!((v.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        if rows.len() == 1 {
            prop_assert_eq!(&v.probs, &rows[0]);
        }
    }

    #[test]
    fn argmax_invariant_under_positive_scaling(p in simplex(6), k in 1e-3f64..1e3) {
        let scaled: Vec<f64> = p.iter().map(|v| v * k).collect();
        prop_assert_eq!(predict(&p).class, predict(&scaled).class);
    }

    #[test]
    fn report_counts_are_consistent(labels in prop::collection::vec(0usize..4, 1..40), seed_probs in prop::collection::vec(simplex(4), 40)) {
        let probs: Vec<ProbVector> = labels
            .iter()
            .enumerate()
            .map(|(i, _)| ProbVector {
                probs: seed_probs[i].clone(),
                level: Level::File,
                file_id: format!("f{i}"),
                kinds: vec![SpectrogramKind::Gam],
            })
            .collect();
        let truth: Vec<Truth> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| Truth { file_id: format!("f{i}"), label: l, device: None })
            .collect();
        let cats: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let r = evaluate(&probs, &truth, &cats, None).unwrap();
        let mut weighted = 0.0;
        for k in 0..4 {
            let n = labels.iter().filter(|&&l| l == k).count();
            prop_assert_eq!(r.confusion[k].iter().sum::<usize>(), n);
            if n > 0 {
                weighted += r.per_class[k] * n as f64;
            }
        }
        let trace: usize = (0..4).map(|k| r.confusion[k][k]).sum();
        prop_assert!((r.accuracy - trace as f64 / labels.len() as f64).abs() < 1e-15);
        prop_assert!((r.accuracy - weighted / labels.len() as f64).abs() < 1e-12);
    }
}

fn file_set(kind: SpectrogramKind, n: usize, c: usize, salt: f64) -> Vec<ProbVector> {
    (0..n)
        .map(|i| {
            let w: Vec<f64> = (0..c).map(|k| 1.0 + ((i * 7 + k * 3) as f64 * salt).sin().abs()).collect();
            let s: f64 = w.iter().sum();
            ProbVector {
                probs: w.iter().map(|v| v / s).collect(),
                level: Level::File,
                file_id: format!("clip{i:03}"),
                kinds: vec![kind],
            }
        })
        .collect()
}

#[test]
fn perfect_and_uniform_classifiers() {
    let cats: Vec<String> = (0..4).map(|k| format!("s{k}")).collect();
    let truth: Vec<Truth> = (0..24)
        .map(|i| Truth {
            file_id: format!("clip{i:03}"),
            label: i % 4,
            device: None,
        })
        .collect();
    let perfect: Vec<ProbVector> = truth
        .iter()
        .map(|t| ProbVector {
            probs: (0..4).map(|k| if k == t.label { 1.0 } else { 0.0 }).collect(),
            level: Level::File,
            file_id: t.file_id.clone(),
            kinds: vec![SpectrogramKind::Stft],
        })
        .collect();
    let r = evaluate(&perfect, &truth, &cats, None).unwrap();
    assert_eq!(r.accuracy, 1.0);
    for k in 0..4 {
        for j in 0..4 {
            assert_eq!(r.confusion[k][j], if k == j { 6 } else { 0 });
        }
    }
    let uniform: Vec<ProbVector> = perfect
        .iter()
        .map(|p| ProbVector {
            probs: vec![0.25; 4],
            ..p.clone()
        })
        .collect();
    let r = evaluate(&uniform, &truth, &cats, None).unwrap();
    assert_eq!(r.accuracy, 0.25);
    assert_eq!(r.ties, 24);
}

#[test]
fn fusing_reloaded_files_matches_in_memory() {
    let a = file_set(SpectrogramKind::LogMel, 30, 4, 0.37);
    let b = file_set(SpectrogramKind::Cqt, 30, 4, 0.91);
    let reload = |v: &[ProbVector]| {
        let mut buf = Vec::new();
        dump_probs(&mut buf, v).unwrap();
        load_probs(&buf[..]).unwrap()
    };
    let (ra, rb) = (reload(&a), reload(&b));
    for (x, y) in a.iter().zip(&ra) {
        for (p, q) in x.probs.iter().zip(&y.probs) {
            assert!((p - q).abs() <= 1e-9);
        }
    }
    for s in Strategy::ALL {
        let mem = fuse_systems(&[a.clone(), b.clone()], s).unwrap();
        let disk = fuse_systems(&[ra.clone(), rb.clone()], s).unwrap();
        let fmt = |v: &[ProbVector]| -> Vec<String> {
            v.iter().flat_map(|p| p.probs.iter().map(|x| format!("{x:.9e}"))).collect()
        };
        let (fm, fd) = (fmt(&mem), fmt(&disk));
        for (m, d) in fm.iter().zip(&fd) {
            let (m, d): (f64, f64) = (m.parse().unwrap(), d.parse().unwrap());
            assert!((m - d).abs() <= 2e-9 * m.abs(), "{s}: {m} vs {d}");
        }
        assert_eq!(
            mem.iter().map(|p| predict(&p.probs).class).collect::<Vec<_>>(),
            disk.iter().map(|p| predict(&p.probs).class).collect::<Vec<_>>()
        );
    }
}
