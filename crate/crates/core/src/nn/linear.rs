//! Fully connected layer on `[N, C, 1, 1]` vectors. Weight layout is
//! `[C_out, C_in, 1, 1]`, bias `[1, C_out, 1, 1]`.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn check<T: Real>(x: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize)> {
    if x.h() != 1 || x.w() != 1 {
        return Err(Error::invalid(format!(
            "linear expects [N, C, 1, 1] input, got {:?}",
            x.shape()
        )));
    }
    let [cout, cin, kh, kw] = weight.shape();
    if cin != x.c() || kh != 1 || kw != 1 {
        return Err(Error::ShapeMismatch {
            op: "linear",
            lhs: x.shape(),
            rhs: weight.shape(),
        });
    }
    Ok((cin, cout))
}

/// `y = x W^T + b` per sample.
pub fn linear_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (cin, cout) = check(x, weight)?;
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(Error::ShapeMismatch {
                op: "linear bias",
                lhs: [1, cout, 1, 1],
                rhs: b.shape(),
            });
        }
    }
    let w = weight.data();
    let mut out = Vec::with_capacity(x.n() * cout);
    for n in 0..x.n() {
        let xv = &x.data()[n * cin..(n + 1) * cin];
        for o in 0..cout {
            let mut acc = super::dot(&w[o * cin..(o + 1) * cin], xv);
            if let Some(b) = bias {
                acc = acc + b.data()[o];
            }
            out.push(acc);
        }
    }
    Tensor::new([x.n(), cout, 1, 1], out)
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (cin, cout) = check(x, weight)?;
    if grad_out.shape() != [x.n(), cout, 1, 1] {
        return Err(Error::ShapeMismatch {
            op: "linear_backward",
            lhs: [x.n(), cout, 1, 1],
            rhs: grad_out.shape(),
        });
    }
    let w = weight.data();
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros([1, cout, 1, 1]);
    for n in 0..x.n() {
        for o in 0..cout {
            let g = grad_out.data()[n * cout + o];
            gb.data_mut()[o] = gb.data()[o] + g;
            for i in 0..cin {
                let k = o * cin + i;
                gw.data_mut()[k] = gw.data()[k] + g * x.data()[n * cin + i];
                let xi = n * cin + i;
                gx.data_mut()[xi] = gx.data()[xi] + g * w[k];
            }
        }
    }
    Ok((gx, gw, gb))
}
