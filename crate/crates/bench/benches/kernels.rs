use std::hint::black_box;

use asckit::engine::{Graph, Mode, Tensor};
use asckit::models::{batch_tensor, Architecture, Network};
use asckit::patch::{one_hot, Patch, PATCH};
use asckit::spectra::{extract, Matrix};
use asckit::{AudioClip, FrameParams, SpectrogramKind};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn clip(seconds: f64, fs: u32) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = (seconds * fs as f64) as usize;
    AudioClip::new((0..n).map(|_| rng.random_range(-0.5..0.5)).collect(), fs, "bench").unwrap()
}

fn front_ends(c: &mut Criterion) {
    let audio = clip(2.2, 16_000);
    let params = FrameParams::default();
    let mut g = c.benchmark_group("front_end_2s2_16k");
    g.sample_size(10);
    for kind in SpectrogramKind::ALL {
        // warm the filter-bank caches outside the timed loop
        extract(&audio, kind, &params).unwrap();
        g.bench_function(kind.as_str(), |b| b.iter(|| extract(black_box(&audio), kind, &params).unwrap()));
    }
    g.finish();
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut rand_tensor = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
    };
    let x = rand_tensor(&[4, 64, 64, 32]);
    let k = rand_tensor(&[7, 7, 32, 64]);
    let bias = rand_tensor(&[64]);
    let mut g = c.benchmark_group("conv2d_7x7_32to64_4x64x64");
    g.sample_size(10);
    g.bench_function("forward", |b| {
        b.iter(|| {
            let mut graph = Graph::new(Mode::Eval);
            let (xv, kv, bv) = (graph.input(x.clone()), graph.input(k.clone()), graph.input(bias.clone()));
            graph.conv2d(xv, kv, bv).unwrap()
        })
    });
    g.bench_function("forward_backward", |b| {
        b.iter(|| {
            let mut graph = Graph::new(Mode::Train);
            let (xv, kv, bv) = (graph.param(x.clone()), graph.param(k.clone()), graph.param(bias.clone()));
            let y = graph.conv2d(xv, kv, bv).unwrap();
            let s = graph.sum_squares(&[y], 1.0).unwrap();
            graph.backward(s).unwrap();
        })
    });
    g.finish();
}

fn inference(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let patches: Vec<Patch> = (0..4)
        .map(|i| {
            let data = Matrix::from_fn(PATCH, PATCH, |_, _| rng.random_range(-1.0f32..1.0) as f64);
            Patch::new(data, one_hot(i % 4, 4), "b", i).unwrap()
        })
        .collect();
    let mut g = c.benchmark_group("eval_forward_4_patches");
    g.sample_size(10);
    for arch in [Architecture::Cdnn, Architecture::Joint] {
        let net = Network::build(arch, 4, 0).unwrap();
        g.bench_function(arch.to_string(), |b| {
            b.iter(|| {
                let mut graph = Graph::new(Mode::Eval);
                let xv = graph.input(batch_tensor(&patches));
                net.forward(&mut graph, xv, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().probs
            })
        });
    }
    g.finish();
}

criterion_group!(benches, front_ends, conv, inference);
criterion_main!(benches);
