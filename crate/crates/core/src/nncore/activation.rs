use ndarray::{Array2, ArrayView2, Zip};

/// Logistic function, evaluated without overflow for large |x|. The result
/// always lies strictly inside (0, 1).
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let p = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    // Past |x| of about 37 (positive side) or 708 (negative side) the result
    // rounds to 1.0 or 0.0; keep it on the open interval.
    p.clamp(f64::MIN_POSITIVE, SIGMOID_MAX)
}

/// Largest `f64` below 1.
const SIGMOID_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Self-gated activation `x * sigmoid(x)`.
#[inline]
pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    /// `x * sigmoid(x)`, used for all hidden layers.
    Swish,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Sigmoid => sigmoid(x),
            Self::Swish => swish(x),
        }
    }

    /// Derivative evaluated at the pre-activation value.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        let s = sigmoid(x);
        match self {
            Self::Sigmoid => s * (1.0 - s),
            Self::Swish => s + x * s * (1.0 - s),
        }
    }

    pub fn forward(self, pre: ArrayView2<f64>) -> Array2<f64> {
        pre.mapv(|v| self.apply(v))
    }

    /// Upstream gradient times the derivative at `pre`.
    pub fn backward(self, pre: ArrayView2<f64>, upstream: ArrayView2<f64>) -> Array2<f64> {
        Zip::from(&pre).and(&upstream).map_collect(|&p, &g| g * self.derivative(p))
    }
}
