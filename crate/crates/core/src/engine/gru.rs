//! Bidirectional GRU with full backpropagation through time.
//!
//! Per direction the parameters are `w_input: D×3H`, `w_hidden: H×3H` and
//! `bias: 3H`, with gate columns ordered update (z), reset (r), candidate:
//!
//! ```text
//! z  = σ(x·Wz + h·Uz + bz)
//! r  = σ(x·Wr + h·Ur + br)
//! h̃  = tanh(x·Wh + (r⊙h)·Uh + bh)
//! h' = (1 − z)⊙h + z⊙h̃
//! ```

use super::graph::{put_grad, take_grad, Node, Op};
use super::{EngineError, Graph, Real, Tensor, Var};

/// Parameters of one direction, in the order the op consumes them.
#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub w_input: Var,
    pub w_hidden: Var,
    pub bias: Var,
}

struct DirCache<T> {
    params: GruParams,
    reverse: bool,
    // all indexed [step][batch][hidden]
    z: Vec<T>,
    r: Vec<T>,
    cand: Vec<T>,
    h_prev: Vec<T>,
    rh: Vec<T>,
}

pub(crate) struct GruCache<T> {
    x: Var,
    batch: usize,
    steps: usize,
    input_dim: usize,
    hidden: usize,
    dirs: [DirCache<T>; 2],
}

fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

impl<T: Real> Graph<T> {
    /// `x: B×T×D` → `B×T×2H`; forward-time outputs first, then reverse-time.
    pub fn bigru(
        &mut self,
        x: Var,
        forward: GruParams,
        backward: GruParams,
    ) -> Result<Var, EngineError> {
        let [b, t, d] = match *self.shape(x) {
            [b, t, d] if t >= 1 => [b, t, d],
            ref s => return Err(EngineError::Shape(format!("bigru expects B×T×D, got {s:?}"))),
        };
        let h = match *self.shape(forward.w_hidden) {
            [h, h3] if h3 == 3 * h => h,
            ref s => return Err(EngineError::Shape(format!("bigru hidden weight {s:?}"))),
        };
        for p in [forward, backward] {
            if self.shape(p.w_input) != [d, 3 * h]
                || self.shape(p.w_hidden) != [h, 3 * h]
                || self.shape(p.bias) != [3 * h]
            {
                return Err(EngineError::Shape(format!(
                    "bigru parameters inconsistent with D={d}, H={h}"
                )));
            }
        }
        let mut out = vec![T::zero(); b * t * 2 * h];
        let f = self.run_direction(x, forward, false, [b, t, d, h], &mut out, 0);
        let r = self.run_direction(x, backward, true, [b, t, d, h], &mut out, h);
        let value = Tensor::from_vec(&[b, t, 2 * h], out)?;
        let cache = GruCache {
            x,
            batch: b,
            steps: t,
            input_dim: d,
            hidden: h,
            dirs: [f, r],
        };
        let params = [
            forward.w_input,
            forward.w_hidden,
            forward.bias,
            backward.w_input,
            backward.w_hidden,
            backward.bias,
        ];
        let mut inputs = vec![x];
        inputs.extend_from_slice(&params);
        Ok(self.push(value, Op::BiGru(Box::new(cache)), &inputs))
    }

    fn run_direction(
        &self,
        x: Var,
        p: GruParams,
        reverse: bool,
        [b, t, d, h]: [usize; 4],
        out: &mut [T],
        out_offset: usize,
    ) -> DirCache<T> {
        let h3 = 3 * h;
        let xv = self.value(x).data();
        let wx = self.value(p.w_input).data();
        let wh = self.value(p.w_hidden).data();
        let bias = self.value(p.bias).data();

        // input projections for every (batch, step) at once
        let mut xw = Vec::with_capacity(b * t * h3);
        for _ in 0..b * t {
            xw.extend_from_slice(bias);
        }
        T::gemm(b * t, d, h3, T::one(), xv, d, 1, wx, h3, 1, T::one(), &mut xw, h3, 1);

        let n = t * b * h;
        let mut cache = DirCache {
            params: p,
            reverse,
            z: vec![T::zero(); n],
            r: vec![T::zero(); n],
            cand: vec![T::zero(); n],
            h_prev: vec![T::zero(); n],
            rh: vec![T::zero(); n],
        };
        let mut state = vec![T::zero(); b * h];
        let mut hu = vec![T::zero(); b * 2 * h];
        let mut cand_in = vec![T::zero(); b * h];
        for s in 0..t {
            let ti = if reverse { t - 1 - s } else { s };
            let base = s * b * h;
            cache.h_prev[base..base + b * h].copy_from_slice(&state);
            T::gemm(b, h, 2 * h, T::one(), &state, h, 1, wh, h3, 1, T::zero(), &mut hu, 2 * h, 1);
            for bi in 0..b {
                let xrow = &xw[(bi * t + ti) * h3..][..h3];
                for j in 0..h {
                    let k = base + bi * h + j;
                    let z = sigmoid(xrow[j] + hu[bi * 2 * h + j]);
                    let r = sigmoid(xrow[h + j] + hu[bi * 2 * h + h + j]);
                    cache.z[k] = z;
                    cache.r[k] = r;
                    cache.rh[k] = r * state[bi * h + j];
                }
            }
            T::gemm(
                b,
                h,
                h,
                T::one(),
                &cache.rh[base..base + b * h],
                h,
                1,
                &wh[2 * h..],
                h3,
                1,
                T::zero(),
                &mut cand_in,
                h,
                1,
            );
            for bi in 0..b {
                let xrow = &xw[(bi * t + ti) * h3..][..h3];
                for j in 0..h {
                    let k = base + bi * h + j;
                    let c = (xrow[2 * h + j] + cand_in[bi * h + j]).tanh();
                    cache.cand[k] = c;
                    let z = cache.z[k];
                    let hn = (T::one() - z) * state[bi * h + j] + z * c;
                    state[bi * h + j] = hn;
                    out[(bi * t + ti) * 2 * h + out_offset + j] = hn;
                }
            }
        }
        cache
    }
}

pub(crate) fn backward<T: Real>(cache: &GruCache<T>, dout: &[T], nodes: &mut [Node<T>]) {
    let (b, t, d, h) = (cache.batch, cache.steps, cache.input_dim, cache.hidden);
    let h3 = 3 * h;
    let mut dx = take_grad(nodes, cache.x);
    for (dir_idx, dir) in cache.dirs.iter().enumerate() {
        let out_offset = dir_idx * h;
        let mut dwx = take_grad(nodes, dir.params.w_input);
        let mut dwh = take_grad(nodes, dir.params.w_hidden);
        let mut db = take_grad(nodes, dir.params.bias);
        let xv = nodes[cache.x.0].value.data();
        let wx = nodes[dir.params.w_input.0].value.data();
        let wh = nodes[dir.params.w_hidden.0].value.data();

        // gate pre-activation gradients for every (batch, step), laid out like xw
        let mut dxw = vec![T::zero(); b * t * h3];
        let mut dh_next = vec![T::zero(); b * h];
        let mut dh = vec![T::zero(); b * h];
        let mut drh = vec![T::zero(); b * h];
        for s in (0..t).rev() {
            let ti = if dir.reverse { t - 1 - s } else { s };
            let base = s * b * h;
            let step = |v: &[T]| -> Vec<T> { v[base..base + b * h].to_vec() };
            let (z, r, c, hp, rh) = (
                step(&dir.z),
                step(&dir.r),
                step(&dir.cand),
                step(&dir.h_prev),
                step(&dir.rh),
            );
            for bi in 0..b {
                for j in 0..h {
                    let k = bi * h + j;
                    let g = dout[(bi * t + ti) * 2 * h + out_offset + j] + dh_next[k];
                    let row = (bi * t + ti) * h3;
                    dxw[row + j] = g * (c[k] - hp[k]) * z[k] * (T::one() - z[k]);
                    dxw[row + 2 * h + j] = g * z[k] * (T::one() - c[k] * c[k]);
                    dh[k] = g * (T::one() - z[k]);
                }
            }
            // candidate path: (r⊙h)·Uh
            let dcand = &dxw[ti * h3 + 2 * h..];
            if let Some(dwh) = dwh.as_mut() {
                T::gemm(h, b, h, T::one(), &rh, 1, h, dcand, t * h3, 1, T::one(), &mut dwh[2 * h..], h3, 1);
            }
            T::gemm(b, h, h, T::one(), dcand, t * h3, 1, &wh[2 * h..], 1, h3, T::zero(), &mut drh, h, 1);
            for bi in 0..b {
                for j in 0..h {
                    let k = bi * h + j;
                    let row = (bi * t + ti) * h3;
                    dxw[row + h + j] = drh[k] * hp[k] * r[k] * (T::one() - r[k]);
                    dh[k] += drh[k] * r[k];
                }
            }
            // update/reset path: h·[Uz Ur]
            let dzr = &dxw[ti * h3..];
            if let Some(dwh) = dwh.as_mut() {
                T::gemm(h, b, 2 * h, T::one(), &hp, 1, h, dzr, t * h3, 1, T::one(), dwh, h3, 1);
            }
            T::gemm(b, 2 * h, h, T::one(), dzr, t * h3, 1, wh, 1, h3, T::one(), &mut dh, h, 1);
            std::mem::swap(&mut dh_next, &mut dh);
        }
        if let Some(dwx) = dwx.as_mut() {
            T::gemm(d, b * t, h3, T::one(), xv, 1, d, &dxw, h3, 1, T::one(), dwx, h3, 1);
        }
        if let Some(db) = db.as_mut() {
            for row in dxw.chunks(h3) {
                for (g, &v) in db.iter_mut().zip(row) {
                    *g += v;
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(b * t, h3, d, T::one(), &dxw, h3, 1, wx, 1, h3, T::one(), dx, d, 1);
        }
        put_grad(nodes, dir.params.w_input, dwx);
        put_grad(nodes, dir.params.w_hidden, dwh);
        put_grad(nodes, dir.params.bias, db);
    }
    put_grad(nodes, cache.x, dx);
}
