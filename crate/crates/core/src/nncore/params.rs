use ndarray::{Array1, ArrayViewD, ArrayViewMutD, Zip};

/// `prefix/name`, or just `name` at the root.
pub fn join_name(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}/{name}")
    }
}

/// A model whose trainable tensors can be enumerated by stable, unique names.
///
/// Gradients are represented by a value of the same type, so an optimizer
/// can pair parameters and gradients by position.
pub trait Parameterized {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>);

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>);

    fn params(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        self.collect_params_mut("", &mut out);
        out
    }

    fn n_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        for (_, mut p) in z.params_mut() {
            p.fill(0.0);
        }
        z
    }

    /// `self += scale * other`, tensor by tensor.
    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        let theirs = other.params();
        for ((_, mut mine), (_, t)) in self.params_mut().into_iter().zip(theirs) {
            Zip::from(&mut mine).and(&t).for_each(|a, &b| *a += scale * b);
        }
    }

    fn all_finite(&self) -> bool {
        self.params().iter().all(|(_, p)| p.iter().all(|v| v.is_finite()))
    }
}

/// A bare vector, exposed as the single tensor `x`; lets the gradient
/// checker differentiate with respect to inputs such as logits.
impl Parameterized for Array1<f64> {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        out.push((join_name(prefix, "x"), self.view().into_dyn()));
    }

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        out.push((join_name(prefix, "x"), self.view_mut().into_dyn()));
    }
}
