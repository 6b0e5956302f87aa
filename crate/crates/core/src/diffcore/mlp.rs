use serde::{Deserialize, Serialize};

use super::{Layer, ParameterSet, TensorBuffer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, values: &mut [f64]) {
        match self {
            Activation::Tanh => values.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Relu => values.iter_mut().for_each(|v| *v = v.max(0.0)),
        }
    }

    /// Multiplies `grad` by the derivative, expressed through the activated
    /// `output`.
    pub fn backprop(self, output: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Tanh => {
                for (g, y) in grad.iter_mut().zip(output) {
                    *g *= 1.0 - y * y;
                }
            }
            Activation::Relu => {
                for (g, y) in grad.iter_mut().zip(output) {
                    if *y <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
        }
    }
}

/// `rows` independent affine maps through one layer. Zero inputs are skipped.
pub fn dense(layer: &Layer, input: &[f64], rows: usize) -> Vec<f64> {
    let (n_in, n_out) = (layer.input_dim(), layer.output_dim());
    debug_assert_eq!(input.len(), rows * n_in);
    let w = layer.weight.data();
    let b = layer.bias.data();
    let mut out = Vec::with_capacity(rows * n_out);
    for r in 0..rows {
        out.extend_from_slice(b);
        let y = &mut out[r * n_out..(r + 1) * n_out];
        for (i, &x) in input[r * n_in..(r + 1) * n_in].iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let wi = &w[i * n_out..(i + 1) * n_out];
            for (yj, wj) in y.iter_mut().zip(wi) {
                *yj += x * wj;
            }
        }
    }
    out
}

/// Accumulates the gradient of `<grad_out, dense(layer, input)>` into `grad`,
/// and writes the input gradient when requested.
pub fn dense_backward(
    layer: &Layer,
    input: &[f64],
    rows: usize,
    grad_out: &[f64],
    grad: &mut Layer,
    grad_input: Option<&mut [f64]>,
) {
    let (n_in, n_out) = (layer.input_dim(), layer.output_dim());
    debug_assert_eq!(grad_out.len(), rows * n_out);
    {
        let gw = grad.weight.data_mut();
        for r in 0..rows {
            let go = &grad_out[r * n_out..(r + 1) * n_out];
            for (i, &x) in input[r * n_in..(r + 1) * n_in].iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                for (g, d) in gw[i * n_out..(i + 1) * n_out].iter_mut().zip(go) {
                    *g += x * d;
                }
            }
        }
    }
    let gb = grad.bias.data_mut();
    for go in grad_out.chunks_exact(n_out) {
        for (g, d) in gb.iter_mut().zip(go) {
            *g += d;
        }
    }
    if let Some(gx) = grad_input {
        let w = layer.weight.data();
        for r in 0..rows {
            let go = &grad_out[r * n_out..(r + 1) * n_out];
            for i in 0..n_in {
                let wi = &w[i * n_out..(i + 1) * n_out];
                gx[r * n_in + i] = wi.iter().zip(go).map(|(a, b)| a * b).sum();
            }
        }
    }
}

fn check_input(params: &ParameterSet, input: &TensorBuffer) -> Result<()> {
    let mut width = input.cols();
    for (name, layer) in params.iter() {
        if layer.input_dim() != width {
            return Err(Error::Dimension {
                layer: name.to_string(),
                expected: layer.input_dim(),
                got: width,
            });
        }
        width = layer.output_dim();
    }
    if params.is_empty() {
        return Err(Error::contract("network has no layers"));
    }
    Ok(())
}

fn output_shape(input: &TensorBuffer, width: usize) -> Vec<usize> {
    let mut shape = input.shape().to_vec();
    *shape.last_mut().expect("non-empty shape") = width;
    shape
}

/// Every layer of `params` in order, activation applied after each one.
pub fn forward_mlp(
    params: &ParameterSet,
    input: &TensorBuffer,
    activation: Activation,
) -> Result<TensorBuffer> {
    check_input(params, input)?;
    let rows = input.rows();
    let mut x = input.data().to_vec();
    let mut width = input.cols();
    for (_, layer) in params.iter() {
        x = dense(layer, &x, rows);
        activation.apply(&mut x);
        width = layer.output_dim();
    }
    TensorBuffer::new(output_shape(input, width), x)
}

#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub params: ParameterSet,
    pub input: TensorBuffer,
}

/// Reverse pass of [`forward_mlp`] for the scalar `<upstream, output>`.
pub fn backward_mlp(
    params: &ParameterSet,
    input: &TensorBuffer,
    upstream: &TensorBuffer,
    activation: Activation,
) -> Result<MlpGradients> {
    check_input(params, input)?;
    let rows = input.rows();
    let last = params.iter().last().map(|(n, l)| (n, l.output_dim()));
    let (last_name, out_width) = last.expect("checked non-empty");
    if upstream.len() != rows * out_width {
        return Err(Error::Dimension {
            layer: last_name.to_string(),
            expected: rows * out_width,
            got: upstream.len(),
        });
    }

    // activations[k] is the input of layer k; the final entry is the output
    let mut activations = vec![input.data().to_vec()];
    for (_, layer) in params.iter() {
        let mut y = dense(layer, activations.last().unwrap(), rows);
        activation.apply(&mut y);
        activations.push(y);
    }

    let mut grads = params.zeros_like();
    let mut delta = upstream.data().to_vec();
    let layers: Vec<&Layer> = params.iter().map(|(_, l)| l).collect();
    let mut grad_layers: Vec<&mut Layer> = grads.iter_mut().map(|(_, l)| l).collect();
    for k in (0..layers.len()).rev() {
        activation.backprop(&activations[k + 1], &mut delta);
        let mut dx = vec![0.0; rows * layers[k].input_dim()];
        dense_backward(
            layers[k],
            &activations[k],
            rows,
            &delta,
            grad_layers[k],
            Some(&mut dx),
        );
        delta = dx;
    }
    Ok(MlpGradients {
        params: grads,
        input: TensorBuffer::new(input.shape().to_vec(), delta)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(w: Vec<f64>, n_in: usize, n_out: usize, b: Vec<f64>) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.push(
            "l0",
            Layer::new(
                TensorBuffer::matrix(n_in, n_out, w).unwrap(),
                TensorBuffer::vector(b),
            )
            .unwrap(),
        )
        .unwrap();
        p
    }

    fn random_net(seed: u64, dims: &[usize]) -> ParameterSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParameterSet::new();
        for (k, w) in dims.windows(2).enumerate() {
            let mut l = Layer::init(w[0], w[1], 1.0, &mut rng);
            for b in l.bias.data_mut() {
                *b = rand::Rng::random_range(&mut rng, -0.5..0.5);
            }
            p.push(format!("l{k}"), l).unwrap();
        }
        p
    }

    /// Straight-line scalar interpreter over the same weights.
    fn reference_forward(p: &ParameterSet, x: &[f64], act: Activation) -> Vec<f64> {
        let mut h = x.to_vec();
        for (_, l) in p.iter() {
            let (ni, no) = (l.input_dim(), l.output_dim());
            let mut y = Vec::new();
            for j in 0..no {
                let mut s = l.bias.data()[j];
                for i in 0..ni {
                    s += h[i] * l.weight.data()[i * no + j];
                }
                y.push(match act {
                    Activation::Tanh => s.tanh(),
                    Activation::Relu => s.max(0.0),
                });
            }
            h = y;
        }
        h
    }

    #[test]
    fn identity_layer_tanh_at_zero() {
        let p = single(vec![1.0, 0.0, 0.0, 1.0], 2, 2, vec![0.0, 0.0]);
        let y = forward_mlp(&p, &TensorBuffer::vector(vec![0.0, 0.0]), Activation::Tanh).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
    }

    #[test]
    fn scalar_relu_layer() {
        let p = single(vec![2.0], 1, 1, vec![1.0]);
        let y = forward_mlp(&p, &TensorBuffer::vector(vec![3.0]), Activation::Relu).unwrap();
        assert_eq!(y.data(), &[7.0]);
    }

    #[test]
    fn matches_reference_interpreter() {
        let p = random_net(7, &[5, 8, 3]);
        let x = vec![1.0; 5];
        let y = forward_mlp(&p, &TensorBuffer::vector(x.clone()), Activation::Tanh).unwrap();
        let r = reference_forward(&p, &x, Activation::Tanh);
        for (a, b) in y.data().iter().zip(&r) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn shape_error_names_layer() {
        let p = random_net(1, &[3, 4, 2]);
        let err = forward_mlp(&p, &TensorBuffer::vector(vec![0.0; 4]), Activation::Tanh).unwrap_err();
        assert!(err.to_string().contains("l0"), "{err}");
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = random_net(3, &[4, 6, 2]);
        let x = TensorBuffer::vector(vec![0.3, -0.1, 0.7, 1.0]);
        let g = backward_mlp(&p, &x, &TensorBuffer::zeros(vec![2]), Activation::Tanh).unwrap();
        assert!(g.params.values().all(|v| v == 0.0));
    }

    #[test]
    fn scalar_derivative() {
        // relu(w x) with w = 1, x = 3: d/dw = x
        let p = single(vec![1.0], 1, 1, vec![0.0]);
        let g = backward_mlp(
            &p,
            &TensorBuffer::vector(vec![3.0]),
            &TensorBuffer::vector(vec![1.0]),
            Activation::Relu,
        )
        .unwrap();
        assert_eq!(g.params.layer("l0").unwrap().weight.data(), &[3.0]);
        assert_eq!(g.input.data(), &[1.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-5;
        for seed in 0..20 {
            let p = random_net(seed, &[3, 5, 4, 2]);
            let x = TensorBuffer::matrix(2, 3, vec![0.5, -0.2, 0.9, 0.0, 1.2, -0.7]).unwrap();
            let up = TensorBuffer::matrix(2, 2, vec![0.3, -1.1, 0.8, 0.4]).unwrap();
            let loss = |q: &ParameterSet, x: &TensorBuffer| -> f64 {
                let y = forward_mlp(q, x, Activation::Tanh).unwrap();
                y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
            };
            let g = backward_mlp(&p, &x, &up, Activation::Tanh).unwrap();
            let analytic: Vec<f64> = g.params.values().collect();
            let n = analytic.len();
            for k in 0..n {
                let mut plus = p.clone();
                *plus.values_mut().nth(k).unwrap() += h;
                let mut minus = p.clone();
                *minus.values_mut().nth(k).unwrap() -= h;
                let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
                let rel = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-6);
                assert!(rel < 1e-4, "seed {seed} param {k}: {fd} vs {}", analytic[k]);
            }
            for k in 0..x.len() {
                let mut xp = x.clone();
                xp.data_mut()[k] += h;
                let mut xm = x.clone();
                xm.data_mut()[k] -= h;
                let fd = (loss(&p, &xp) - loss(&p, &xm)) / (2.0 * h);
                let a = g.input.data()[k];
                assert!((fd - a).abs() / fd.abs().max(a.abs()).max(1e-6) < 1e-4);
            }
        }
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let p = random_net(11, &[6, 16, 3]);
        let x = TensorBuffer::vector(vec![0.1, 0.0, -2.0, 0.5, 0.0, 1.0]);
        let a = forward_mlp(&p, &x, Activation::Relu).unwrap();
        let b = forward_mlp(&p, &x, Activation::Relu).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
