//! Forward and backward passes of single convolution layers on one graph.

use ndarray::{Array1, Array2, Axis, Zip};

use super::params::ConvParams;

/// Keeps cosine similarity differentiable at the zero vector.
const NORM_EPS: f64 = 1e-12;

fn relu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v.max(0.0))
}

/// `grad * 1[z > 0]`; the derivative at 0 is taken as 0.
fn relu_grad(grad: &Array2<f64>, z: &Array2<f64>) -> Array2<f64> {
    let mut out = grad.clone();
    Zip::from(&mut out).and(z).for_each(|g, &z| {
        if z <= 0.0 {
            *g = 0.0;
        }
    });
    out
}

fn add_bias(mut z: Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    z += b;
    z
}

pub(super) enum ConvCache {
    Gcn { ah: Array2<f64>, z: Array2<f64> },
    Sage { h: Array2<f64>, mh: Array2<f64>, z: Array2<f64> },
    Gin { s: Array2<f64>, z1: Array2<f64>, u: Array2<f64>, z2: Array2<f64> },
    Agnn {
        h: Array2<f64>,
        x: Array2<f64>,
        norms: Array1<f64>,
        xhat: Array2<f64>,
        cos: Array2<f64>,
        p: Array2<f64>,
        y: Array2<f64>,
    },
    General { h: Array2<f64>, zm: Array2<f64>, z: Array2<f64> },
}

pub(super) fn forward(params: &ConvParams, op: &Array2<f64>, h: &Array2<f64>) -> (Array2<f64>, ConvCache) {
    match params {
        ConvParams::Gcn { w, b } => {
            let ah = op.dot(h);
            let z = add_bias(ah.dot(w), b);
            (relu(&z), ConvCache::Gcn { ah, z })
        }
        ConvParams::Sage { w_self, w_neigh, b } => {
            let mh = op.dot(h);
            let z = add_bias(h.dot(w_self) + mh.dot(w_neigh), b);
            (relu(&z), ConvCache::Sage { h: h.clone(), mh, z })
        }
        ConvParams::Gin { w1, b1, w2, b2 } => {
            let s = op.dot(h);
            let z1 = add_bias(s.dot(w1), b1);
            let u = relu(&z1);
            let z2 = add_bias(u.dot(w2), b2);
            (relu(&z2), ConvCache::Gin { s, z1, u, z2 })
        }
        ConvParams::Agnn { w, b, beta } => {
            let x = add_bias(h.dot(w), b);
            let norms: Array1<f64> =
                x.rows().into_iter().map(|r| (r.dot(&r) + NORM_EPS).sqrt()).collect();
            let xhat = &x / &norms.view().insert_axis(Axis(1));
            let cos = xhat.dot(&xhat.t());
            let p = masked_softmax(&(&cos * beta[0]), op);
            let y = p.dot(&x);
            (relu(&y), ConvCache::Agnn { h: h.clone(), x, norms, xhat, cos, p, y })
        }
        ConvParams::General { w_self, w_msg, b_msg } => {
            let zm = add_bias(h.dot(w_msg), b_msg);
            let z = h.dot(w_self) + op.dot(&relu(&zm));
            (relu(&z), ConvCache::General { h: h.clone(), zm, z })
        }
    }
}

/// Row-wise softmax restricted to entries where `mask` is non-zero.
fn masked_softmax(logits: &Array2<f64>, mask: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(logits.raw_dim());
    for ((logit_row, mask_row), mut out_row) in
        logits.rows().into_iter().zip(mask.rows()).zip(out.rows_mut())
    {
        let max = logit_row
            .iter()
            .zip(mask_row)
            .filter(|(_, m)| **m != 0.0)
            .map(|(l, _)| *l)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for ((o, l), m) in out_row.iter_mut().zip(logit_row).zip(mask_row) {
            if *m != 0.0 {
                *o = (l - max).exp();
                total += *o;
            }
        }
        out_row /= total;
    }
    out
}

/// Accumulates parameter gradients into `grads` and returns the gradient
/// with respect to the layer input.
pub(super) fn backward(
    params: &ConvParams,
    grads: &mut ConvParams,
    op: &Array2<f64>,
    cache: &ConvCache,
    d_out: &Array2<f64>,
) -> Array2<f64> {
    match (params, grads, cache) {
        (ConvParams::Gcn { w, .. }, ConvParams::Gcn { w: gw, b: gb }, ConvCache::Gcn { ah, z }) => {
            let dz = relu_grad(d_out, z);
            *gw += &ah.t().dot(&dz);
            *gb += &dz.sum_axis(Axis(0));
            // The normalized operator is symmetric.
            op.t().dot(&dz.dot(&w.t()))
        }
        (
            ConvParams::Sage { w_self, w_neigh, .. },
            ConvParams::Sage { w_self: gs, w_neigh: gn, b: gb },
            ConvCache::Sage { h, mh, z },
        ) => {
            let dz = relu_grad(d_out, z);
            *gs += &h.t().dot(&dz);
            *gn += &mh.t().dot(&dz);
            *gb += &dz.sum_axis(Axis(0));
            dz.dot(&w_self.t()) + op.t().dot(&dz.dot(&w_neigh.t()))
        }
        (
            ConvParams::Gin { w1, w2, .. },
            ConvParams::Gin { w1: g1, b1: gb1, w2: g2, b2: gb2 },
            ConvCache::Gin { s, z1, u, z2 },
        ) => {
            let dz2 = relu_grad(d_out, z2);
            *g2 += &u.t().dot(&dz2);
            *gb2 += &dz2.sum_axis(Axis(0));
            let dz1 = relu_grad(&dz2.dot(&w2.t()), z1);
            *g1 += &s.t().dot(&dz1);
            *gb1 += &dz1.sum_axis(Axis(0));
            op.t().dot(&dz1.dot(&w1.t()))
        }
        (
            ConvParams::Agnn { w, beta, .. },
            ConvParams::Agnn { w: gw, b: gb, beta: gbeta },
            ConvCache::Agnn { h, x, norms, xhat, cos, p, y },
        ) => {
            let dy = relu_grad(d_out, y);
            let mut dx = p.t().dot(&dy);
            let dp = dy.dot(&x.t());
            // Softmax backward over each row's neighbourhood.
            let mut de = Array2::<f64>::zeros(dp.raw_dim());
            for v in 0..dp.nrows() {
                let s: f64 = (0..dp.ncols()).map(|u| p[[v, u]] * dp[[v, u]]).sum();
                for u in 0..dp.ncols() {
                    if op[[v, u]] != 0.0 {
                        de[[v, u]] = p[[v, u]] * (dp[[v, u]] - s);
                    }
                }
            }
            gbeta[0] += (&de * cos).sum();
            let dc = &de * beta[0];
            let dxhat = (&dc + &dc.t()).dot(xhat);
            for v in 0..x.nrows() {
                let r = norms[v];
                let proj = x.row(v).dot(&dxhat.row(v)) / (r * r * r);
                for k in 0..x.ncols() {
                    dx[[v, k]] += dxhat[[v, k]] / r - x[[v, k]] * proj;
                }
            }
            *gw += &h.t().dot(&dx);
            *gb += &dx.sum_axis(Axis(0));
            dx.dot(&w.t())
        }
        (
            ConvParams::General { w_self, w_msg, .. },
            ConvParams::General { w_self: gs, w_msg: gm, b_msg: gbm },
            ConvCache::General { h, zm, z },
        ) => {
            let dz = relu_grad(d_out, z);
            *gs += &h.t().dot(&dz);
            let dzm = relu_grad(&op.t().dot(&dz), zm);
            *gm += &h.t().dot(&dzm);
            *gbm += &dzm.sum_axis(Axis(0));
            dz.dot(&w_self.t()) + dzm.dot(&w_msg.t())
        }
        _ => unreachable!("parameter, gradient and cache kinds always agree"),
    }
}
