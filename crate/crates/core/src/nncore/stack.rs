//! Residual stack with dense connectivity by summation:
//!
//! ```text
//! h_0 = act(norm_0(P x))
//! h_l = act(norm_l(D_l h_{l-1} + h_0 + ... + h_{l-1}))   for l >= 1
//! ```
//!
//! All hidden widths are equal, which is what makes the summation well
//! defined. Normalization is optional and applied to every pre-activation.

use ndarray::{Array2, ArrayView2, ArrayViewD, ArrayViewMutD};
use rand::Rng;

use super::activation::Activation;
use super::dense::{Dense, LayerInput};
use super::norm::{LayerNorm, NormCache};
use super::params::{join_name, Parameterized};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStack {
    pub projection: Dense,
    pub layers: Vec<Dense>,
    /// One per hidden output (`layers.len() + 1`), or none.
    pub norms: Option<Vec<LayerNorm>>,
    pub activation: Activation,
}

/// Intermediate values kept from the forward pass.
#[derive(Debug, Clone)]
pub struct StackCache {
    pre: Vec<Array2<f64>>,
    norms: Vec<NormCache>,
    hidden: Vec<Array2<f64>>,
}

impl StackCache {
    pub fn output(&self) -> &Array2<f64> {
        self.hidden.last().expect("stack has at least the projection output")
    }
}

impl ResidualStack {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, hidden: usize, depth: usize, normalize: bool, rng: &mut R) -> Self {
        let projection = Dense::glorot(in_dim, hidden, rng);
        let layers = (0..depth).map(|_| Dense::glorot(hidden, hidden, rng)).collect();
        let norms = normalize.then(|| (0..=depth).map(|_| LayerNorm::new(hidden)).collect());
        Self { projection, layers, norms, activation: Activation::Swish }
    }

    pub fn in_dim(&self) -> usize {
        self.projection.in_dim()
    }

    pub fn width(&self) -> usize {
        self.projection.out_dim()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.width();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.check_shape(&format!("residual layer {l}"), w, w)?;
        }
        if let Some(norms) = &self.norms {
            if norms.len() != self.layers.len() + 1 || norms.iter().any(|n| n.width() != w) {
                return Err(Error::Dimension(format!("normalization layers do not match width {w}")));
            }
        }
        Ok(())
    }

    fn activate(&self, idx: usize, pre: Array2<f64>) -> (Array2<f64>, Option<NormCache>, Array2<f64>) {
        match &self.norms {
            Some(norms) => {
                let (normed, cache) = norms[idx].forward(pre.view());
                let h = self.activation.forward(normed.view());
                (normed, Some(cache), h)
            }
            None => {
                let h = self.activation.forward(pre.view());
                (pre, None, h)
            }
        }
    }

    pub fn forward(&self, input: LayerInput<'_>) -> StackCache {
        let depth = self.layers.len();
        let mut pre = Vec::with_capacity(depth + 1);
        let mut norms = Vec::new();
        let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(depth + 1);

        let (a, c, h) = self.activate(0, self.projection.forward(input));
        pre.push(a);
        norms.extend(c);
        let mut running = h.clone();
        hidden.push(h);

        for (l, layer) in self.layers.iter().enumerate() {
            let s = layer.forward(LayerInput::Dense(hidden[l].view())) + &running;
            let (a, c, h) = self.activate(l + 1, s);
            pre.push(a);
            norms.extend(c);
            running += &h;
            hidden.push(h);
        }
        StackCache { pre, norms, hidden }
    }

    pub fn apply(&self, input: LayerInput<'_>) -> Array2<f64> {
        let mut cache = self.forward(input);
        cache.hidden.pop().expect("non-empty")
    }

    fn pre_grad(
        &self,
        idx: usize,
        cache: &StackCache,
        grad_h: ArrayView2<f64>,
        grads: &mut ResidualStack,
    ) -> Array2<f64> {
        let ga = self.activation.backward(cache.pre[idx].view(), grad_h);
        match (&self.norms, &mut grads.norms) {
            (Some(norms), Some(gnorms)) => {
                let (gn, gs) = norms[idx].backward(&cache.norms[idx], ga.view());
                gnorms[idx] = gn;
                gs
            }
            _ => ga,
        }
    }

    /// Backward pass from `dL/d(output)`. Returns parameter gradients and,
    /// for dense inputs, the gradient with respect to the input.
    pub fn backward(
        &self,
        input: LayerInput<'_>,
        cache: &StackCache,
        upstream: ArrayView2<f64>,
    ) -> (ResidualStack, Option<Array2<f64>>) {
        let depth = self.layers.len();
        let mut grads = self.zeros_like();
        // direct[l]: gradient reaching h_l through the next dense layer (or
        // the output); skip: gradient reaching every h_j with j < l through
        // the summed connections of all later layers.
        let mut direct: Vec<Option<Array2<f64>>> = vec![None; depth + 1];
        direct[depth] = Some(upstream.to_owned());
        let mut skip: Option<Array2<f64>> = None;

        for l in (1..=depth).rev() {
            let mut gh = direct[l].take().expect("set by later layer");
            if let Some(s) = &skip {
                gh += s;
            }
            let gs = self.pre_grad(l, cache, gh.view(), &mut grads);
            let (gl, gin) = self.layers[l - 1].backward(LayerInput::Dense(cache.hidden[l - 1].view()), gs.view());
            grads.layers[l - 1] = gl;
            direct[l - 1] = gin;
            skip = Some(match skip {
                Some(s) => s + &gs,
                None => gs,
            });
        }

        let mut gh0 = direct[0].take().expect("set above");
        if let Some(s) = &skip {
            gh0 += s;
        }
        let gp = self.pre_grad(0, cache, gh0.view(), &mut grads);
        let (gproj, gin) = self.projection.backward(input, gp.view());
        grads.projection = gproj;
        (grads, gin)
    }
}

impl Parameterized for ResidualStack {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        self.projection.collect_params(&join_name(prefix, "proj"), out);
        for (l, layer) in self.layers.iter().enumerate() {
            layer.collect_params(&join_name(prefix, &format!("layer{}", l + 1)), out);
        }
        if let Some(norms) = &self.norms {
            for (l, n) in norms.iter().enumerate() {
                n.collect_params(&join_name(prefix, &format!("norm{l}")), out);
            }
        }
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        self.projection.collect_params_mut(&join_name(prefix, "proj"), out);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.collect_params_mut(&join_name(prefix, &format!("layer{}", l + 1)), out);
        }
        if let Some(norms) = &mut self.norms {
            for (l, n) in norms.iter_mut().enumerate() {
                n.collect_params_mut(&join_name(prefix, &format!("norm{l}")), out);
            }
        }
    }
}
