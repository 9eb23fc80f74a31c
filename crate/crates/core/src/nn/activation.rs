use serde::{Deserialize, Serialize};

use crate::tensor::{Real, Tensor};

/// `sqrt(2 / pi)` in the tanh form of GELU.
const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
/// Cubic coefficient of the tanh GELU approximation.
pub const GELU_CUBIC: f64 = 0.044715;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// Tanh approximation: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    Gelu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Sigmoid => sigmoid(x),
            Activation::Gelu => {
                let c = T::from_f64(GELU_SQRT_2_OVER_PI);
                let k = T::from_f64(GELU_CUBIC);
                let half = T::from_f64(0.5);
                half * x * (T::one() + tanh(c * (x + k * x * x * x)))
            }
        }
    }

    /// `d activation / dx` at `x` (given the forward output `y`).
    #[inline]
    pub fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            // Subgradient 0 at the kink.
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Gelu => {
                let c = T::from_f64(GELU_SQRT_2_OVER_PI);
                let k = T::from_f64(GELU_CUBIC);
                let half = T::from_f64(0.5);
                let three = T::from_f64(3.0);
                let th = tanh(c * (x + k * x * x * x));
                half * (T::one() + th)
                    + half * x * (T::one() - th * th) * c * (T::one() + three * k * x * x)
            }
        }
    }

    pub fn forward<T: Real>(self, x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| self.apply(v))
    }

    pub fn backward<T: Real>(self, x: &Tensor<T>, y: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .zip(grad.data())
            .map(|((&xv, &yv), &g)| g * self.derivative(xv, yv))
            .collect();
        Tensor::new(x.shape(), data).expect("same shape")
    }
}

/// `tanh` through one `exp` of a non-positive argument; several times faster
/// than the libm routine and accurate to a few ulps in absolute terms.
#[inline]
fn tanh<T: Real>(u: T) -> T {
    let e = (T::from_f64(-2.0) * u.abs()).exp();
    let t = (T::one() - e) / (T::one() + e);
    if u < T::zero() {
        -t
    } else {
        t
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    // Split on sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
