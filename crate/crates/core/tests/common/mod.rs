//! Gradient cases shared by the unit and acceptance suites. Each returns
//! the worst relative error between analytic and central-difference
//! gradients (f64, h = 1e-5).

// each test target uses a different subset
#![allow(dead_code)]

use asckit::engine::gradcheck::check;
use asckit::engine::{BnStats, Graph, GruParams, Mode, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

fn random(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn random_simplex(rows: usize, c: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::new();
    for _ in 0..rows {
        let w: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        data.extend(w.iter().map(|v| v / s));
    }
    Tensor::from_vec(&[rows, c], data).unwrap()
}

/// Contracts an arbitrary tensor to a scalar with fixed random weights so
/// every output element influences the loss differently.
fn project(g: &mut Graph<f64>, v: Var, seed: u64) -> Var {
    let n = g.value(v).len();
    let flat = g.reshape(v, &[1, n]).unwrap();
    let w = g.input(random(&[n, 1], seed, 1.0));
    let b = g.input(Tensor::zeros(&[1]));
    let y = g.dense(flat, w, b).unwrap();
    g.reshape(y, &[]).unwrap()
}

fn around_one(shape: &[usize], seed: u64, spread: f64) -> Tensor<f64> {
    let t = random(shape, seed, spread);
    Tensor::from_vec(shape, t.data().iter().map(|v| 1.0 + v).collect()).unwrap()
}

pub fn conv2d() -> Result<f64, String> {
    let mut worst = 0.0f64;
    let inputs = [random(&[1, 6, 6, 2], 1, 1.0), random(&[3, 3, 2, 3], 2, 0.5), random(&[3], 3, 0.1)];
    let r = check(&inputs, Mode::Train, H, |g, v| {
        let y = g.conv2d(v[0], v[1], v[2])?;
        Ok(project(g, y, 9))
    })
    .map_err(|e| e.to_string())?;
    worst = worst.max(r.max_rel_error);
    Ok(worst)
}

pub fn even_kernel_conv2d() -> Result<f64, String> {
    let mut worst = 0.0f64;
    let inputs = [random(&[2, 8, 3, 2], 4, 1.0), random(&[4, 1, 2, 2], 5, 0.5), random(&[2], 6, 0.1)];
    let r = check(&inputs, Mode::Train, H, |g, v| {
        let y = g.conv2d(v[0], v[1], v[2])?;
        Ok(project(g, y, 10))
    })
    .map_err(|e| e.to_string())?;
    worst = worst.max(r.max_rel_error);
    Ok(worst)
}

pub fn batchnorm_train_and_eval() -> Result<f64, String> {
    let mut worst = 0.0f64;
    let inputs = [random(&[2, 3, 3, 2], 7, 2.0), random(&[2], 8, 1.0), random(&[2], 9, 1.0)];
    for mode in [Mode::Train, Mode::Eval] {
        let mut running = BnStats::new(2);
        running.mean = vec![0.3, -0.2];
        running.var = vec![1.5, 0.7];
        let r = check(&inputs, mode, H, |g, v| {
            let y = g.batch_norm(v[0], v[1], v[2], &running)?;
            Ok(project(g, y, 11))
        })
        .map_err(|e| e.to_string())?;
        worst = worst.max(r.max_rel_error);
    }
    Ok(worst)
}

pub fn pooling() -> Result<f64, String> {
    let mut worst = 0.0f64;
    let inputs = [random(&[2, 4, 4, 3], 12, 1.0)];
    let r = check(&inputs, Mode::Train, H, |g, v| {
        let p = g.avg_pool(v[0], 2, 2)?;
        let q = g.avg_pool(p, 2, 1)?;
        Ok(project(g, q, 13))
    })
    .map_err(|e| e.to_string())?;
    worst = worst.max(r.max_rel_error);
    let r = check(&inputs, Mode::Train, H, |g, v| {
        let p = g.global_avg_pool(v[0])?;
        Ok(project(g, p, 14))
    })
    .map_err(|e| e.to_string())?;
    worst = worst.max(r.max_rel_error);
    Ok(worst)
}

pub fn dense_relu_dropout() -> Result<f64, String> {
    let mut worst = 0.0f64;
    let inputs = [random(&[3, 5], 15, 1.0), random(&[5, 4], 16, 1.0), random(&[4], 17, 0.5)];
    let r = check(&inputs, Mode::Train, H, |g, v| {
        let y = g.dense(v[0], v[1], v[2])?;
        let y = g.relu(y);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let y = g.dropout(y, 0.3, &mut rng)?;
        Ok(project(g, y, 18))
    })
    .map_err(|e| e.to_string())?;
    worst = worst.max(r.max_rel_error);
    Ok(worst)
}

pub fn softmax_kl_l2() -> Result<f64, String> {
    let mut worst = 0.0f64;
    let target = random_simplex(3, 4, 19);
    let inputs = [random(&[3, 4], 20, 2.0), random(&[6], 21, 1.0)];
    let r = check(&inputs, Mode::Train, H, |g, v| {
        let p = g.softmax(v[0]);
        g.kl_l2_loss(p, &target, &[v[1]], 1e-2)
    })
    .map_err(|e| e.to_string())?;
    worst = worst.max(r.max_rel_error);
    Ok(worst)
}

pub fn concat_and_mean_last() -> Result<f64, String> {
    let mut worst = 0.0f64;
    let inputs = [random(&[2, 3], 22, 1.0), random(&[2, 2], 23, 1.0), random(&[2, 4, 5], 24, 1.0)];
    let r = check(&inputs, Mode::Train, H, |g, v| {
        let c = g.concat(&[v[0], v[1]])?;
        let m = g.mean_last(v[2])?;
        let m = g.reshape(m, &[2, 4])?;
        let all = g.concat(&[c, m])?;
        Ok(project(g, all, 25))
    })
    .map_err(|e| e.to_string())?;
    worst = worst.max(r.max_rel_error);
    Ok(worst)
}

pub fn bigru_for_all_weights() -> Result<f64, String> {
    let mut worst = 0.0f64;
    let (b, t, d, h) = (1, 3, 4, 3);
    let inputs = [
        random(&[b, t, d], 30, 1.0),
        random(&[d, 3 * h], 31, 0.6),
        random(&[h, 3 * h], 32, 0.6),
        random(&[3 * h], 33, 0.3),
        random(&[d, 3 * h], 34, 0.6),
        random(&[h, 3 * h], 35, 0.6),
        random(&[3 * h], 36, 0.3),
    ];
    let r = check(&inputs, Mode::Train, H, |g, v| {
        let f = GruParams {
            w_input: v[1],
            w_hidden: v[2],
            bias: v[3],
        };
        let bw = GruParams {
            w_input: v[4],
            w_hidden: v[5],
            bias: v[6],
        };
        let y = g.bigru(v[0], f, bw)?;
        Ok(project(g, y, 37))
    })
    .map_err(|e| e.to_string())?;
    worst = worst.max(r.max_rel_error);
    // every weight matrix must receive a non-trivial gradient
    for grad in &r.analytic {
        if !grad.iter().any(|&v| v.abs() > 1e-6) {
            return Err("a weight received no gradient".into());
        }
    }
    Ok(worst)
}

pub fn bigru_with_batch() -> Result<f64, String> {
    let mut worst = 0.0f64;
    let (b, t, d, h) = (2, 4, 2, 2);
    let inputs = [
        random(&[b, t, d], 40, 1.0),
        random(&[d, 3 * h], 41, 0.8),
        random(&[h, 3 * h], 42, 0.8),
        random(&[3 * h], 43, 0.3),
        random(&[d, 3 * h], 44, 0.8),
        random(&[h, 3 * h], 45, 0.8),
        random(&[3 * h], 46, 0.3),
    ];
    let r = check(&inputs, Mode::Train, H, |g, v| {
        let f = GruParams { w_input: v[1], w_hidden: v[2], bias: v[3] };
        let bw = GruParams { w_input: v[4], w_hidden: v[5], bias: v[6] };
        let y = g.bigru(v[0], f, bw)?;
        Ok(project(g, y, 47))
    })
    .map_err(|e| e.to_string())?;
    worst = worst.max(r.max_rel_error);
    Ok(worst)
}

pub fn miniature_cdnn() -> Result<f64, String> {
    let mut worst = 0.0f64;
    let target = random_simplex(1, 3, 30);
    let inputs = [
        random(&[1, 16, 16, 1], 31, 1.0),
        around_one(&[1], 32, 0.2),
        random(&[1], 33, 0.1),
        random(&[3, 3, 1, 4], 34, 0.6),
        random(&[4], 35, 0.1),
        around_one(&[4], 36, 0.2),
        random(&[4], 37, 0.1),
        random(&[3, 3, 4, 6], 38, 0.4),
        random(&[6], 39, 0.1),
        around_one(&[6], 40, 0.2),
        random(&[6], 41, 0.1),
        random(&[6, 3], 42, 0.8),
        random(&[3], 43, 0.1),
    ];
    let r = check(&inputs, Mode::Train, H, |g, v| {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let x = g.batch_norm(v[0], v[1], v[2], &BnStats::new(1))?;
        let x = g.conv2d(x, v[3], v[4])?;
        let x = g.relu(x);
        let x = g.batch_norm(x, v[5], v[6], &BnStats::new(4))?;
        let x = g.avg_pool(x, 2, 2)?;
        let x = g.dropout(x, 0.1, &mut rng)?;
        let x = g.conv2d(x, v[7], v[8])?;
        let x = g.relu(x);
        let x = g.batch_norm(x, v[9], v[10], &BnStats::new(6))?;
        let x = g.global_avg_pool(x)?;
        let x = g.dropout(x, 0.25, &mut rng)?;
        let logits = g.dense(x, v[11], v[12])?;
        let p = g.softmax(logits);
        let params: Vec<Var> = v[1..].to_vec();
        g.kl_l2_loss(p, &target, &params, 1e-3)
    })
    .map_err(|e| e.to_string())?;
    worst = worst.max(r.max_rel_error);
    Ok(worst)
}

pub const ALL: &[(&str, fn() -> Result<f64, String>)] = &[
    ("conv2d", conv2d),
    ("even_kernel_conv2d", even_kernel_conv2d),
    ("batchnorm_train_and_eval", batchnorm_train_and_eval),
    ("pooling", pooling),
    ("dense_relu_dropout", dense_relu_dropout),
    ("softmax_kl_l2", softmax_kl_l2),
    ("concat_and_mean_last", concat_and_mean_last),
    ("bigru_for_all_weights", bigru_for_all_weights),
    ("bigru_with_batch", bigru_with_batch),
    ("miniature_cdnn", miniature_cdnn),
];
