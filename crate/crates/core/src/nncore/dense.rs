use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use super::params::{join_name, Parameterized};
use crate::error::{dim_err, Error, Result};

/// Fully connected layer `y = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Gradients of one dense layer for a single example.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub input: Array1<f64>,
}

/// A batch of layer inputs, one example per row.
#[derive(Debug, Clone, Copy)]
pub enum LayerInput<'a> {
    Dense(ArrayView2<'a, f64>),
    /// Binary rows given by their active column indices.
    Sparse {
        rows: &'a [&'a [u32]],
        width: usize,
    },
}

impl LayerInput<'_> {
    pub fn batch_len(&self) -> usize {
        match self {
            Self::Dense(x) => x.nrows(),
            Self::Sparse { rows, .. } => rows.len(),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Self::Dense(x) => x.ncols(),
            Self::Sparse { width, .. } => *width,
        }
    }
}

impl Dense {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(dim_err("dense bias length", weight.nrows(), bias.len()));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { weight: Array2::zeros((out_dim, in_dim)), bias: Array1::zeros(out_dim) }
    }

    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self { weight: super::glorot_uniform(out_dim, in_dim, rng), bias: Array1::zeros(out_dim) }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Single-example forward pass.
    pub fn apply(&self, x: &[f64]) -> Result<Array1<f64>> {
        if x.len() != self.in_dim() {
            return Err(dim_err("dense input", self.in_dim(), x.len()));
        }
        Ok(self.weight.dot(&ndarray::aview1(x)) + &self.bias)
    }

    /// Single-example gradients given the upstream gradient `dL/dy`.
    pub fn grads(&self, x: &[f64], upstream: &[f64]) -> Result<DenseGrads> {
        if x.len() != self.in_dim() {
            return Err(dim_err("dense input", self.in_dim(), x.len()));
        }
        if upstream.len() != self.out_dim() {
            return Err(dim_err("dense upstream", self.out_dim(), upstream.len()));
        }
        let x = ndarray::aview1(x);
        let g = ndarray::aview1(upstream);
        let weight = g.insert_axis(Axis(1)).dot(&x.insert_axis(Axis(0)));
        Ok(DenseGrads { weight, bias: g.to_owned(), input: self.weight.t().dot(&g) })
    }

    pub fn forward(&self, input: LayerInput<'_>) -> Array2<f64> {
        debug_assert_eq!(input.width(), self.in_dim());
        match input {
            LayerInput::Dense(x) => x.dot(&self.weight.t()) + &self.bias,
            LayerInput::Sparse { rows, .. } => {
                let wt = self.weight.t().as_standard_layout().into_owned();
                let mut out = Array2::zeros((rows.len(), self.out_dim()));
                for (mut y, row) in out.outer_iter_mut().zip(rows.iter()) {
                    y.assign(&self.bias);
                    for &i in row.iter() {
                        y += &wt.row(i as usize);
                    }
                }
                out
            }
        }
    }

    /// Batched backward pass. Weight and bias gradients are summed over the
    /// batch; the input gradient is only produced for dense inputs.
    pub fn backward(&self, input: LayerInput<'_>, upstream: ArrayView2<f64>) -> (Dense, Option<Array2<f64>>) {
        let bias = upstream.sum_axis(Axis(0));
        match input {
            LayerInput::Dense(x) => {
                let weight = upstream.t().dot(&x);
                let grad_input = upstream.dot(&self.weight);
                (Dense { weight, bias }, Some(grad_input))
            }
            LayerInput::Sparse { rows, width } => {
                let mut wt = Array2::<f64>::zeros((width, self.out_dim()));
                for (g, row) in upstream.outer_iter().zip(rows.iter()) {
                    for &i in row.iter() {
                        let mut dst = wt.row_mut(i as usize);
                        dst += &g;
                    }
                }
                let weight = wt.t().as_standard_layout().into_owned();
                (Dense { weight, bias }, None)
            }
        }
    }

    pub(crate) fn check_shape(&self, name: &str, in_dim: usize, out_dim: usize) -> Result<()> {
        if self.in_dim() != in_dim || self.out_dim() != out_dim || self.bias.len() != out_dim {
            return Err(Error::Dimension(format!(
                "{name}: expected {out_dim}x{in_dim}, got {}x{} (bias {})",
                self.out_dim(),
                self.in_dim(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

impl Parameterized for Dense {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        out.push((join_name(prefix, "weight"), self.weight.view().into_dyn()));
        out.push((join_name(prefix, "bias"), self.bias.view().into_dyn()));
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        out.push((join_name(prefix, "weight"), self.weight.view_mut().into_dyn()));
        out.push((join_name(prefix, "bias"), self.bias.view_mut().into_dyn()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::grad_check;
    use crate::rng::rng_from_seed;
    use ndarray::{array, Array1};
    use rand::Rng;

    #[test]
    fn identity_layer() {
        let d = Dense::new(Array2::eye(2), Array1::zeros(2)).unwrap();
        assert_eq!(d.apply(&[3.0, -1.0]).unwrap(), array![3.0, -1.0]);
    }

    #[test]
    fn hand_multiply_matches_loop_oracle() {
        let d = Dense::new(array![[1.0, 2.0], [0.0, 1.0]], array![1.0, 0.0]).unwrap();
        let x = [1.0, 1.0];
        let y = d.apply(&x).unwrap();
        let mut oracle = [0.0; 2];
        for (r, o) in oracle.iter_mut().enumerate() {
            *o = d.bias[r];
            for (c, xc) in x.iter().enumerate() {
                *o += d.weight[[r, c]] * xc;
            }
        }
        assert_eq!(y.to_vec(), oracle.to_vec());
        assert_eq!(y, array![4.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let d = Dense::zeros(3, 2);
        assert!(matches!(d.apply(&[1.0]), Err(Error::Dimension(_))));
        assert!(d.grads(&[1.0, 2.0, 3.0], &[1.0]).is_err());
        assert!(Dense::new(Array2::zeros((2, 2)), Array1::zeros(3)).is_err());
    }

    #[test]
    fn gradients_pass_finite_differences() {
        let mut rng = rng_from_seed(5);
        let layer = Dense::glorot(3, 4, &mut rng);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        // L = <c, y> + 0.5 |y|^2
        let f = |l: &Dense| {
            let y = l.apply(&x).unwrap();
            let loss = y.iter().zip(&c).map(|(a, b)| a * b + 0.5 * a * a).sum::<f64>();
            let up: Vec<f64> = y.iter().zip(&c).map(|(a, b)| a + b).collect();
            let g = l.grads(&x, &up).unwrap();
            (loss, Dense { weight: g.weight, bias: g.bias })
        };
        assert!(grad_check(&layer, 1e-5, f).max_rel_error < 1e-4);

        let xs = Array1::from(x.clone());
        let fx = |v: &Array1<f64>| {
            let y = layer.apply(v.as_slice().unwrap()).unwrap();
            let loss = y.iter().zip(&c).map(|(a, b)| a * b + 0.5 * a * a).sum::<f64>();
            let up: Vec<f64> = y.iter().zip(&c).map(|(a, b)| a + b).collect();
            (loss, layer.grads(v.as_slice().unwrap(), &up).unwrap().input)
        };
        assert!(grad_check(&xs, 1e-5, fx).max_rel_error < 1e-4);
    }

    #[test]
    fn sparse_and_dense_paths_agree() {
        let mut rng = rng_from_seed(9);
        let layer = Dense::glorot(6, 3, &mut rng);
        let rows: Vec<&[u32]> = vec![&[0, 4], &[], &[1, 2, 5]];
        let mut dense = Array2::zeros((3, 6));
        for (r, row) in rows.iter().enumerate() {
            for &i in row.iter() {
                dense[[r, i as usize]] = 1.0;
            }
        }
        let sparse_in = LayerInput::Sparse { rows: &rows, width: 6 };
        let a = layer.forward(sparse_in);
        let b = layer.forward(LayerInput::Dense(dense.view()));
        assert!((&a - &b).iter().all(|d| d.abs() < 1e-12));
        let up = Array2::from_shape_fn((3, 3), |(r, c)| (r as f64) - 0.5 * c as f64);
        let (ga, _) = layer.backward(sparse_in, up.view());
        let (gb, gi) = layer.backward(LayerInput::Dense(dense.view()), up.view());
        assert!((&ga.weight - &gb.weight).iter().all(|d| d.abs() < 1e-12));
        assert_eq!(ga.bias, gb.bias);
        assert_eq!(gi.unwrap().dim(), (3, 6));
    }
}
