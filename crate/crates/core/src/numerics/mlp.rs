use crate::error::{Error, Result};

use super::params::{MlpSpec, ParamVector};

/// Row-major activations of every layer for a batch, kept for the backward pass.
/// `layers[0]` is the input, the last entry is the (linear) output.
#[derive(Clone, Debug)]
pub struct Activations {
    rows: usize,
    layers: Vec<Vec<f64>>,
}

impl Activations {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn output(&self) -> &[f64] {
        self.layers
            .last()
            .expect("activations always hold the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.layers[0]
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.layers
            .pop()
            .expect("activations always hold the input")
    }
}

/// c = a·b + beta·c for strided row/column layouts.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, cs: usize, rows: usize, cols: usize| (rows - 1) * r + (cols - 1) * cs;
    if k > 0 {
        assert!(last(rsa, csa, m, k) < a.len(), "gemm: lhs out of bounds");
        assert!(last(rsb, csb, k, n) < b.len(), "gemm: rhs out of bounds");
    }
    assert!(last(rsc, csc, m, n) < c.len(), "gemm: output out of bounds");
    // SAFETY: every index touched by dgemm is within the slices per the asserts above,
    // and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

pub fn forward_batch(
    spec: &MlpSpec,
    params: &ParamVector,
    inputs: &[f64],
    rows: usize,
) -> Result<Activations> {
    params.check_spec(spec)?;
    if inputs.len() != rows * spec.input_dim {
        return Err(Error::contract(format!(
            "expected {rows}x{} inputs, got {} values",
            spec.input_dim,
            inputs.len()
        )));
    }
    let p = params.as_slice();
    let n_layers = params.layers().len();
    let mut layers = Vec::with_capacity(n_layers + 1);
    layers.push(inputs.to_vec());
    for (l, shape) in params.layers().iter().enumerate() {
        let prev = &layers[l];
        let (fan_in, fan_out) = (shape.fan_in, shape.fan_out);
        let bias = &p[shape.bias_range()];
        let mut z = Vec::with_capacity(rows * fan_out);
        for _ in 0..rows {
            z.extend_from_slice(bias);
        }
        // z (rows x out) += prev (rows x in) · Wᵀ, W stored out x in
        gemm(
            rows,
            fan_in,
            fan_out,
            prev,
            (fan_in, 1),
            &p[shape.weight_range()],
            (1, fan_in),
            1.0,
            &mut z,
            (fan_out, 1),
        );
        if l + 1 < n_layers {
            for v in &mut z {
                *v = spec.activation.apply(*v);
            }
        }
        layers.push(z);
    }
    Ok(Activations { rows, layers })
}

pub fn forward(spec: &MlpSpec, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    Ok(forward_batch(spec, params, input, 1)?.into_output())
}

/// Gradient of Σ_rows ⟨output_row, output_grad_row⟩ with respect to the parameters
/// and to each input row.
pub fn backward_batch(
    spec: &MlpSpec,
    params: &ParamVector,
    acts: &Activations,
    output_grad: &[f64],
) -> Result<(ParamVector, Vec<f64>)> {
    params.check_spec(spec)?;
    let rows = acts.rows;
    if output_grad.len() != rows * spec.output_dim {
        return Err(Error::contract(format!(
            "expected {rows}x{} output cotangents, got {}",
            spec.output_dim,
            output_grad.len()
        )));
    }
    let p = params.as_slice();
    let mut grad = params.zeros_like();
    let mut delta = output_grad.to_vec();
    for (l, shape) in params.layers().iter().enumerate().rev() {
        let (fan_in, fan_out) = (shape.fan_in, shape.fan_out);
        let prev = &acts.layers[l];
        let g = grad.as_mut_slice();
        // dW (out x in) = deltaᵀ (out x rows) · prev (rows x in)
        gemm(
            fan_out,
            rows,
            fan_in,
            &delta,
            (1, fan_out),
            prev,
            (fan_in, 1),
            0.0,
            &mut g[shape.weight_range()],
            (fan_in, 1),
        );
        let db = &mut g[shape.bias_range()];
        for row in delta.chunks_exact(fan_out) {
            for (b, d) in db.iter_mut().zip(row) {
                *b += d;
            }
        }
        // d prev (rows x in) = delta (rows x out) · W (out x in)
        let mut d_prev = vec![0.0; rows * fan_in];
        gemm(
            rows,
            fan_out,
            fan_in,
            &delta,
            (fan_out, 1),
            &p[shape.weight_range()],
            (fan_in, 1),
            0.0,
            &mut d_prev,
            (fan_in, 1),
        );
        if l > 0 {
            for (d, a) in d_prev.iter_mut().zip(prev) {
                *d *= spec.activation.derivative_from_output(*a);
            }
        }
        delta = d_prev;
    }
    Ok((grad, delta))
}

pub fn backward(
    spec: &MlpSpec,
    params: &ParamVector,
    input: &[f64],
    output_grad: &[f64],
) -> Result<(ParamVector, Vec<f64>)> {
    let acts = forward_batch(spec, params, input, 1)?;
    backward_batch(spec, params, &acts, output_grad)
}
