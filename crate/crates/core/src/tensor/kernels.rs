//! Batched forward/backward kernels.
//!
//! Work is split per leading (batch) item and each item issues the same
//! sequence of GEMM calls whichever execution path runs it. Weight
//! gradients are computed as per-item partials and summed in item order, so
//! the sequential and parallel paths agree bit for bit.

use crate::linalg::{gemm, View};
use crate::par;

/// Sums per-item partial buffers in index order.
fn ordered_sum(partials: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for p in partials {
        out.iter_mut().zip(&p).for_each(|(o, v)| *o += v);
    }
    out
}

/// Geometry of `x [items, rows, cin] -> y [items, rows, cout]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LinearDims {
    pub items: usize,
    pub rows: usize,
    pub cin: usize,
    pub cout: usize,
}

pub(crate) fn linear_forward(x: &[f64], w: &[f64], b: Option<&[f64]>, d: LinearDims) -> Vec<f64> {
    let mut y = vec![0.0; d.items * d.rows * d.cout];
    let in_len = d.rows * d.cin;
    par::for_each_chunk(&mut y, d.rows * d.cout, |i, yi| {
        if let Some(b) = b {
            yi.chunks_mut(d.cout).for_each(|r| r.copy_from_slice(b));
        }
        let xi = View::row_major(&x[i * in_len..(i + 1) * in_len], d.rows, d.cin);
        let wt = View::row_major(w, d.cout, d.cin).t();
        gemm(1.0, xi, wt, 1.0, yi, d.cout, 1);
    });
    y
}

/// Returns `(dx, dw, db)`; `dx` is skipped when not needed.
pub(crate) fn linear_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    d: LinearDims,
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let in_len = d.rows * d.cin;
    let out_len = d.rows * d.cout;
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; d.items * in_len];
        par::for_each_chunk(&mut dx, in_len, |i, dxi| {
            let gi = View::row_major(&gy[i * out_len..(i + 1) * out_len], d.rows, d.cout);
            gemm(1.0, gi, View::row_major(w, d.cout, d.cin), 0.0, dxi, d.cin, 1);
        });
        dx
    });
    let partials = par::map(d.items, |i| {
        let gi = &gy[i * out_len..(i + 1) * out_len];
        let xi = View::row_major(&x[i * in_len..(i + 1) * in_len], d.rows, d.cin);
        let mut dw = vec![0.0; d.cout * d.cin + d.cout];
        let (dwm, dbm) = dw.split_at_mut(d.cout * d.cin);
        gemm(1.0, View::row_major(gi, d.rows, d.cout).t(), xi, 0.0, dwm, d.cin, 1);
        for r in gi.chunks(d.cout) {
            dbm.iter_mut().zip(r).for_each(|(a, v)| *a += v);
        }
        dw
    });
    let mut total = ordered_sum(partials, d.cout * d.cin + d.cout);
    let db = total.split_off(d.cout * d.cin);
    (dx, total, db)
}

/// Geometry of a dilated causal convolution over `x [items, t, n, cin]`
/// producing `y [items, t - out_start, n, cout]` with kernel
/// `w [cout, cin, width]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub items: usize,
    pub t: usize,
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub width: usize,
    pub dilation: usize,
    pub out_start: usize,
}

impl ConvDims {
    fn t_out(&self) -> usize {
        self.t - self.out_start
    }

    /// `(first output slot, rows)` touched by tap `j`, if any.
    fn tap_span(&self, j: usize) -> Option<(usize, usize)> {
        let shift = self.dilation * j;
        let lo = self.out_start.max(shift);
        (lo < self.t).then(|| (lo, (self.t - lo) * self.n))
    }

    /// Kernel tap `j` as a `cin x cout` view (transposed weights).
    fn tap_t<'a>(&self, w: &'a [f64], j: usize) -> View<'a> {
        View { data: &w[j..], rows: self.cin, cols: self.cout, rs: self.width, cs: self.cin * self.width }
    }
}

pub(crate) fn conv_forward(x: &[f64], w: &[f64], b: Option<&[f64]>, d: ConvDims) -> Vec<f64> {
    let in_len = d.t * d.n * d.cin;
    let out_len = d.t_out() * d.n * d.cout;
    let mut y = vec![0.0; d.items * out_len];
    par::for_each_chunk(&mut y, out_len, |i, yi| {
        if let Some(b) = b {
            yi.chunks_mut(d.cout).for_each(|r| r.copy_from_slice(b));
        }
        let xi = &x[i * in_len..(i + 1) * in_len];
        for j in 0..d.width {
            let Some((lo, rows)) = d.tap_span(j) else { continue };
            let src = (lo - d.dilation * j) * d.n * d.cin;
            let dst = (lo - d.out_start) * d.n * d.cout;
            let xv = View::row_major(&xi[src..src + rows * d.cin], rows, d.cin);
            gemm(1.0, xv, d.tap_t(w, j), 1.0, &mut yi[dst..dst + rows * d.cout], d.cout, 1);
        }
    });
    y
}

pub(crate) fn conv_backward(
    x: &[f64],
    w: &[f64],
    gy: &[f64],
    d: ConvDims,
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let in_len = d.t * d.n * d.cin;
    let out_len = d.t_out() * d.n * d.cout;
    let wlen = d.cout * d.cin * d.width;
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; d.items * in_len];
        par::for_each_chunk(&mut dx, in_len, |i, dxi| {
            let gi = &gy[i * out_len..(i + 1) * out_len];
            for j in 0..d.width {
                let Some((lo, rows)) = d.tap_span(j) else { continue };
                let src = (lo - d.out_start) * d.n * d.cout;
                let dst = (lo - d.dilation * j) * d.n * d.cin;
                let gv = View::row_major(&gi[src..src + rows * d.cout], rows, d.cout);
                let tap = d.tap_t(w, j).t();
                gemm(1.0, gv, tap, 1.0, &mut dxi[dst..dst + rows * d.cin], d.cin, 1);
            }
        });
        dx
    });
    let partials = par::map(d.items, |i| {
        let gi = &gy[i * out_len..(i + 1) * out_len];
        let xi = &x[i * in_len..(i + 1) * in_len];
        let mut buf = vec![0.0; wlen + d.cout];
        let (dw, db) = buf.split_at_mut(wlen);
        for j in 0..d.width {
            let Some((lo, rows)) = d.tap_span(j) else { continue };
            let src_g = (lo - d.out_start) * d.n * d.cout;
            let src_x = (lo - d.dilation * j) * d.n * d.cin;
            let gv = View::row_major(&gi[src_g..src_g + rows * d.cout], rows, d.cout).t();
            let xv = View::row_major(&xi[src_x..src_x + rows * d.cin], rows, d.cin);
            gemm(1.0, gv, xv, 0.0, &mut dw[j..], d.cin * d.width, d.width);
        }
        for r in gi.chunks(d.cout) {
            db.iter_mut().zip(r).for_each(|(a, v)| *a += v);
        }
        buf
    });
    let mut total = ordered_sum(partials, wlen + d.cout);
    let db = total.split_off(wlen);
    (dx, total, db)
}

/// Geometry of `y[b, t] = M · x[b, t]` over `x [items, t, n, c]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MixDims {
    pub items: usize,
    pub t: usize,
    pub n: usize,
    pub c: usize,
}

pub(crate) fn node_mix_forward(x: &[f64], m: &[f64], d: MixDims) -> Vec<f64> {
    let block = d.n * d.c;
    let mut y = vec![0.0; x.len()];
    let mv = View::row_major(m, d.n, d.n);
    par::for_each_chunk(&mut y, d.t * block, |i, yi| {
        let xi = &x[i * d.t * block..(i + 1) * d.t * block];
        for (yb, xb) in yi.chunks_mut(block).zip(xi.chunks(block)) {
            gemm(1.0, mv, View::row_major(xb, d.n, d.c), 0.0, yb, d.c, 1);
        }
    });
    y
}

pub(crate) fn node_mix_backward(
    x: &[f64],
    m: &[f64],
    gy: &[f64],
    d: MixDims,
    need_dx: bool,
    need_dm: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let block = d.n * d.c;
    let item = d.t * block;
    let dx = need_dx.then(|| {
        let mt = View::row_major(m, d.n, d.n).t();
        let mut dx = vec![0.0; x.len()];
        par::for_each_chunk(&mut dx, item, |i, dxi| {
            let gi = &gy[i * item..(i + 1) * item];
            for (db, gb) in dxi.chunks_mut(block).zip(gi.chunks(block)) {
                gemm(1.0, mt, View::row_major(gb, d.n, d.c), 0.0, db, d.c, 1);
            }
        });
        dx
    });
    let dm = need_dm.then(|| {
        let partials = par::map(d.items, |i| {
            let mut acc = vec![0.0; d.n * d.n];
            let gi = &gy[i * item..(i + 1) * item];
            let xi = &x[i * item..(i + 1) * item];
            for (gb, xb) in gi.chunks(block).zip(xi.chunks(block)) {
                let xt = View::row_major(xb, d.n, d.c).t();
                gemm(1.0, View::row_major(gb, d.n, d.c), xt, 1.0, &mut acc, d.n, 1);
            }
            acc
        });
        ordered_sum(partials, d.n * d.n)
    });
    (dx, dm)
}

const ELEMENTWISE_CHUNK: usize = 1 << 14;

/// `out[i] = f(a[i])`, chunked for the parallel path.
pub(crate) fn map_unary(a: &[f64], f: impl Fn(f64) -> f64 + Sync + Send) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    par::for_each_chunk(&mut out, ELEMENTWISE_CHUNK, |i, o| {
        let src = &a[i * ELEMENTWISE_CHUNK..i * ELEMENTWISE_CHUNK + o.len()];
        o.iter_mut().zip(src).for_each(|(o, &v)| *o = f(v));
    });
    out
}

/// `out[i] = f(a[i], b[i])`.
pub(crate) fn map_binary(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64 + Sync + Send) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    let mut out = vec![0.0; a.len()];
    par::for_each_chunk(&mut out, ELEMENTWISE_CHUNK, |i, o| {
        let off = i * ELEMENTWISE_CHUNK;
        let (sa, sb) = (&a[off..off + o.len()], &b[off..off + o.len()]);
        for ((o, &x), &y) in o.iter_mut().zip(sa).zip(sb) {
            *o = f(x, y);
        }
    });
    out
}
