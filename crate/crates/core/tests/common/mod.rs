//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use mishape::tensor::DenseNet;
use ndarray::{Array2, ArrayView2};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Triple-loop `a · bᵀ`, written without any BLAS-style helper.
pub fn naive_matmul_t(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (n, k) = a.dim();
    let m = b.nrows();
    assert_eq!(b.ncols(), k);
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[[i, t]] * b[[j, t]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Forward pass rebuilt from the layer parameters with [`naive_matmul_t`].
pub fn naive_forward(net: &DenseNet, x: ArrayView2<f64>) -> Array2<f64> {
    use mishape::tensor::Activation;
    let mut h = x.to_owned();
    for layer in net.layers() {
        let mut z = naive_matmul_t(h.view(), layer.weight.view());
        for mut row in z.rows_mut() {
            for (v, b) in row.iter_mut().zip(layer.bias.iter()) {
                *v += b;
                *v = match layer.activation {
                    Activation::Identity => *v,
                    Activation::Relu => v.max(0.0),
                    Activation::Tanh => v.tanh(),
                };
            }
        }
        h = z;
    }
    h
}

/// Symmetric relative error with a floor so that entries which are both
/// essentially zero do not dominate.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central differences of `f` at `params`, one coordinate at a time.
pub fn central_differences(params: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + FD_STEP;
            let up = f(&p);
            p[i] = orig - FD_STEP;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest [`rel_err`] between two gradient vectors.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Smallest `|pre-activation|` over the relu layers of `net` on `x`. Central
/// differences are only meaningful when this exceeds the step size.
pub fn relu_margin(net: &DenseNet, x: ArrayView2<f64>) -> f64 {
    use mishape::tensor::Activation;
    let mut h = x.to_owned();
    let mut margin = f64::INFINITY;
    for layer in net.layers() {
        let z = naive_matmul_t(h.view(), layer.weight.view()) + &layer.bias;
        if layer.activation == Activation::Relu {
            margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
        }
        h = z;
        layer_activation(layer.activation, &mut h);
    }
    margin
}

fn layer_activation(act: mishape::tensor::Activation, h: &mut Array2<f64>) {
    use mishape::tensor::Activation;
    match act {
        Activation::Identity => {}
        Activation::Relu => h.mapv_inplace(|v| v.max(0.0)),
        Activation::Tanh => h.mapv_inplace(f64::tanh),
    }
}
