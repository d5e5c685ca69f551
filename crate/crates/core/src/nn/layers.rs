use ndarray::{Array1, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::ops::{affine_backward, affine_forward};
use super::params::{Gradients, ParamId, ParamSet};
use crate::error::Result;

/// Uniform on ±√(6 / (fan_in + fan_out)).
pub fn glorot_uniform<R: Rng>(rng: &mut R, fan_out: usize, fan_in: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot limit");
    (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect()
}

/// Fully connected layer `W·x + b` with `W: out × in`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Affine {
    pub fn register<R: Rng>(
        params: &mut ParamSet,
        rng: &mut R,
        name: &str,
        input: usize,
        output: usize,
    ) -> Self {
        let weight = params.register(
            format!("{name}.weight"),
            &[output, input],
            glorot_uniform(rng, output, input),
        );
        let bias = params.register(format!("{name}.bias"), &[output], vec![0.0; output]);
        Affine {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn num_params(input: usize, output: usize) -> usize {
        input * output + output
    }

    pub fn forward(&self, params: &ParamSet, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        affine_forward(params.matrix(self.weight), params.vector(self.bias), x)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(
        &self,
        params: &ParamSet,
        x: ArrayView1<'_, f64>,
        grad_out: ArrayView1<'_, f64>,
        grads: &mut Gradients,
    ) -> Array1<f64> {
        let g = affine_backward(params.matrix(self.weight), x, grad_out);
        grads.add_matrix(self.weight, &g.weight);
        grads.add_vector(self.bias, &g.bias);
        g.x
    }
}
