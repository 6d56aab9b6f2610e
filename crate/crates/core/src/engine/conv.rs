//! Stride-1 "same" 2-D cross-correlation on channel-last batches, lowered
//! to one GEMM per image via im2col.

use super::graph::{put_grad, take_grad, Node, Op};
use super::{EngineError, Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    batch: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    pad_top: usize,
    pad_left: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn positions(&self) -> usize {
        self.h * self.w
    }
}

pub(crate) struct ConvCache {
    x: Var,
    kernel: Var,
    bias: Var,
    geom: ConvGeom,
}

/// Gathers every receptive field of one image into a row of `cols`
/// (`h·w` rows of `kh·kw·cin` values, zero outside the image).
fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let row_len = g.patch_len();
    let seg_len = g.kw * g.cin;
    for oy in 0..g.h {
        for ox in 0..g.w {
            let row = &mut cols[(oy * g.w + ox) * row_len..][..row_len];
            let dx_lo = g.pad_left.saturating_sub(ox);
            let dx_hi = g.kw.min(g.w + g.pad_left - ox);
            for dy in 0..g.kh {
                let seg = &mut row[dy * seg_len..(dy + 1) * seg_len];
                let iy = (oy + dy) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.h as isize || dx_lo >= dx_hi {
                    seg.fill(T::zero());
                    continue;
                }
                seg[..dx_lo * g.cin].fill(T::zero());
                seg[dx_hi * g.cin..].fill(T::zero());
                let ix0 = ox + dx_lo - g.pad_left;
                let src = &x[(iy as usize * g.w + ix0) * g.cin..][..(dx_hi - dx_lo) * g.cin];
                seg[dx_lo * g.cin..dx_hi * g.cin].copy_from_slice(src);
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds rows back onto the image.
fn col2im_add<T: Real>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let row_len = g.patch_len();
    let seg_len = g.kw * g.cin;
    for oy in 0..g.h {
        for ox in 0..g.w {
            let row = &cols[(oy * g.w + ox) * row_len..][..row_len];
            let dx_lo = g.pad_left.saturating_sub(ox);
            let dx_hi = g.kw.min(g.w + g.pad_left - ox);
            if dx_lo >= dx_hi {
                continue;
            }
            for dy in 0..g.kh {
                let iy = (oy + dy) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                let seg = &row[dy * seg_len + dx_lo * g.cin..dy * seg_len + dx_hi * g.cin];
                let ix0 = ox + dx_lo - g.pad_left;
                let dst = &mut x[(iy as usize * g.w + ix0) * g.cin..][..seg.len()];
                for (d, &s) in dst.iter_mut().zip(seg) {
                    *d += s;
                }
            }
        }
    }
}

impl<T: Real> Graph<T> {
    /// `x: B×H×W×Cin`, `kernel: kh×kw×Cin×Cout`, `bias: Cout` → `B×H×W×Cout`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var, EngineError> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 4 || ks.len() != 4 {
            return Err(EngineError::Shape(format!(
                "conv2d expects 4-D input and kernel, got {xs:?} and {ks:?}"
            )));
        }
        if ks[2] != xs[3] || bs != [ks[3]] {
            return Err(EngineError::Shape(format!(
                "conv2d: input {xs:?}, kernel {ks:?}, bias {bs:?} are inconsistent"
            )));
        }
        let geom = ConvGeom {
            batch: xs[0],
            h: xs[1],
            w: xs[2],
            cin: xs[3],
            cout: ks[3],
            kh: ks[0],
            kw: ks[1],
            pad_top: (ks[0] - 1) / 2,
            pad_left: (ks[1] - 1) / 2,
        };
        let out = conv_forward(
            self.value(x).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            &geom,
        );
        let value = Tensor::from_vec(&[geom.batch, geom.h, geom.w, geom.cout], out)?;
        Ok(self.push(
            value,
            Op::Conv2d(ConvCache {
                x,
                kernel,
                bias,
                geom,
            }),
            &[x, kernel, bias],
        ))
    }
}

fn conv_forward<T: Real>(x: &[T], kernel: &[T], bias: &[T], g: &ConvGeom) -> Vec<T> {
    let hw = g.positions();
    let k = g.patch_len();
    let mut out = Vec::with_capacity(g.batch * hw * g.cout);
    for _ in 0..g.batch * hw {
        out.extend_from_slice(bias);
    }
    let mut cols = vec![T::zero(); hw * k];
    for b in 0..g.batch {
        im2col(&x[b * hw * g.cin..(b + 1) * hw * g.cin], g, &mut cols);
        let out_b = &mut out[b * hw * g.cout..(b + 1) * hw * g.cout];
        T::gemm(
            hw,
            k,
            g.cout,
            T::one(),
            &cols,
            k,
            1,
            kernel,
            g.cout,
            1,
            T::one(),
            out_b,
            g.cout,
            1,
        );
    }
    out
}

pub(crate) fn backward<T: Real>(cache: &ConvCache, dout: &[T], nodes: &mut [Node<T>]) {
    let g = &cache.geom;
    let hw = g.positions();
    let k = g.patch_len();
    let mut dkernel = take_grad(nodes, cache.kernel);
    let mut dbias = take_grad(nodes, cache.bias);
    let mut dx = take_grad(nodes, cache.x);
    let x = nodes[cache.x.0].value.data();
    let kernel = nodes[cache.kernel.0].value.data();

    let mut cols = vec![T::zero(); hw * k];
    let mut dcols = if dx.is_some() {
        vec![T::zero(); hw * k]
    } else {
        Vec::new()
    };
    for b in 0..g.batch {
        let dout_b = &dout[b * hw * g.cout..(b + 1) * hw * g.cout];
        if let Some(dk) = dkernel.as_mut() {
            im2col(&x[b * hw * g.cin..(b + 1) * hw * g.cin], g, &mut cols);
            // dK += colsᵀ · dY
            T::gemm(
                k,
                hw,
                g.cout,
                T::one(),
                &cols,
                1,
                k,
                dout_b,
                g.cout,
                1,
                T::one(),
                dk,
                g.cout,
                1,
            );
        }
        if let Some(db) = dbias.as_mut() {
            for row in dout_b.chunks(g.cout) {
                for (d, &v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            // dcols = dY · Kᵀ
            T::gemm(
                hw,
                g.cout,
                k,
                T::one(),
                dout_b,
                g.cout,
                1,
                kernel,
                1,
                g.cout,
                T::zero(),
                &mut dcols,
                k,
                1,
            );
            col2im_add(&dcols, g, &mut dx[b * hw * g.cin..(b + 1) * hw * g.cin]);
        }
    }
    put_grad(nodes, cache.kernel, dkernel);
    put_grad(nodes, cache.bias, dbias);
    put_grad(nodes, cache.x, dx);
}
