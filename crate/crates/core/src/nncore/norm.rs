use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, Zip};

use super::params::{join_name, Parameterized};

const NORM_EPS: f64 = 1e-5;

/// Per-example normalization over features with learned scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct NormCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        Self { scale: Array1::ones(width), shift: Array1::zeros(width) }
    }

    pub fn width(&self) -> usize {
        self.scale.len()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, NormCache) {
        let n = x.ncols() as f64;
        let mut normalized = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, s) in normalized.outer_iter_mut().zip(inv_std.iter_mut()) {
            let mean = row.sum() / n;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            *s = 1.0 / (var + NORM_EPS).sqrt();
            row *= *s;
        }
        let out = &normalized * &self.scale + &self.shift;
        (out, NormCache { normalized, inv_std })
    }

    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, cache: &NormCache, upstream: ArrayView2<f64>) -> (LayerNorm, Array2<f64>) {
        let scale = (&upstream * &cache.normalized).sum_axis(Axis(0));
        let shift = upstream.sum_axis(Axis(0));
        let n = upstream.ncols() as f64;
        let mut grad_input = &upstream * &self.scale;
        Zip::from(grad_input.outer_iter_mut()).and(cache.normalized.outer_iter()).and(&cache.inv_std).for_each(
            |mut g, xhat, &s| {
                let mean_g = g.sum() / n;
                let mean_gx = g.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                Zip::from(&mut g).and(&xhat).for_each(|gi, &xi| *gi = s * (*gi - mean_g - xi * mean_gx));
            },
        );
        (LayerNorm { scale, shift }, grad_input)
    }
}

impl Parameterized for LayerNorm {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        out.push((join_name(prefix, "scale"), self.scale.view().into_dyn()));
        out.push((join_name(prefix, "shift"), self.shift.view().into_dyn()));
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        out.push((join_name(prefix, "scale"), self.scale.view_mut().into_dyn()));
        out.push((join_name(prefix, "shift"), self.shift.view_mut().into_dyn()));
    }
}
