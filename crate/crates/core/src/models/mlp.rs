use rand::Rng;

use super::params::LayoutBuilder;
use crate::rng::Stream;

#[derive(Debug, Clone)]
pub(crate) struct Dense {
    pub weight: usize,
    pub bias: usize,
    pub inputs: usize,
    pub outputs: usize,
}

/// Fully connected stack with tanh on every hidden layer and, optionally, on
/// the output layer.
#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    pub layers: Vec<Dense>,
    pub final_tanh: bool,
}

/// Activations of each layer; `acts[0]` is the input.
pub(crate) struct Trace {
    pub acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has input")
    }
}

impl Mlp {
    /// Registers `{prefix}layer{i}.weight/bias` for hidden layers and
    /// `{prefix}out.weight/bias` for the last one.
    pub fn register(layout: &mut LayoutBuilder, prefix: &str, sizes: &[usize], final_tanh: bool) -> Self {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let name = if l + 1 == n { format!("{prefix}out") } else { format!("{prefix}layer{l}") };
                let (inputs, outputs) = (sizes[l], sizes[l + 1]);
                let weight = layout.add(format!("{name}.weight"), &[outputs, inputs]);
                let bias = layout.add(format!("{name}.bias"), &[outputs]);
                Dense { weight, bias, inputs, outputs }
            })
            .collect();
        Self { layers, final_tanh }
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    fn activated(&self, l: usize) -> bool {
        l + 1 < self.layers.len() || self.final_tanh
    }

    pub fn init(&self, theta: &mut [f64], rng: &mut Stream) {
        for layer in &self.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for v in &mut theta[layer.weight..layer.weight + layer.inputs * layer.outputs] {
                *v = rng.random_range(-bound..bound);
            }
            for v in &mut theta[layer.bias..layer.bias + layer.outputs] {
                *v = rng.random_range(-bound..bound);
            }
        }
    }

    pub fn forward(&self, theta: &[f64], x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = acts.last().expect("non-empty");
            let w = &theta[layer.weight..layer.weight + layer.inputs * layer.outputs];
            let b = &theta[layer.bias..layer.bias + layer.outputs];
            let mut out: Vec<f64> = w
                .chunks_exact(layer.inputs)
                .zip(b)
                .map(|(row, bias)| bias + row.iter().zip(input).map(|(a, c)| a * c).sum::<f64>())
                .collect();
            if self.activated(l) {
                for v in &mut out {
                    *v = v.tanh();
                }
            }
            acts.push(out);
        }
        Trace { acts }
    }

    /// Accumulates ∂/∂θ of `⟨upstream, output⟩` into `grad` and returns the
    /// gradient with respect to the input.
    pub fn backward(&self, theta: &[f64], trace: &Trace, upstream: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let mut delta = upstream.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if self.activated(l) {
                for (d, a) in delta.iter_mut().zip(&trace.acts[l + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let input = &trace.acts[l];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut grad[layer.weight + o * layer.inputs..layer.weight + (o + 1) * layer.inputs];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
                grad[layer.bias + o] += d;
            }
            let w = &theta[layer.weight..layer.weight + layer.inputs * layer.outputs];
            let mut prev = vec![0.0; layer.inputs];
            for (row, d) in w.chunks_exact(layer.inputs).zip(&delta) {
                for (p, wv) in prev.iter_mut().zip(row) {
                    *p += d * wv;
                }
            }
            delta = prev;
        }
        delta
    }
}
