use rand::Rng;
use rand_distr::StandardNormal;

use super::param::LayoutBuilder;

/// Offsets of one dense layer inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Dense {
    fan_in: usize,
    fan_out: usize,
    weight: usize,
    bias: usize,
}

/// Multilayer perceptron with tanh hidden units and a linear output.
///
/// Owns no parameters: it is a view onto a range of a larger [`super::ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<Dense>,
}

/// Activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// `acts[0]` is the input, `acts[k]` the output of layer `k`.
    acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds at least the input")
    }
}

impl Mlp {
    /// Appends the layers to `builder` under `prefix` and returns the view.
    pub fn register(mut builder: LayoutBuilder, prefix: &str, sizes: &[usize], base: usize) -> (LayoutBuilder, Self) {
        assert!(sizes.len() >= 2, "an mlp needs input and output sizes");
        let mut layers = Vec::new();
        let mut next = base;
        for (k, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            builder = builder
                .block(format!("{prefix}l{k}.weight"), &[fan_out, fan_in])
                .block(format!("{prefix}l{k}.bias"), &[fan_out]);
            layers.push(Dense {
                fan_in,
                fan_out,
                weight: next,
                bias: next + fan_in * fan_out,
            });
            next += fan_in * fan_out + fan_out;
        }
        (
            builder,
            Self {
                sizes: sizes.to_vec(),
                layers,
            },
        )
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.fan_in * l.fan_out + l.fan_out).sum()
    }

    /// Orthogonal initialization with entries of standard deviation `1/sqrt(fan_in)`;
    /// the output layer is further scaled by `output_gain`. Biases start at zero.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R, output_gain: f64) {
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let w = orthogonal(layer.fan_out, layer.fan_in, rng);
            let gain = if k == last { output_gain } else { 1.0 };
            // orthonormal rows/columns have entry variance 1/max(out, in)
            let scale = gain * ((layer.fan_out.max(layer.fan_in)) as f64 / layer.fan_in as f64).sqrt();
            for (dst, src) in params[layer.weight..layer.weight + w.len()].iter_mut().zip(&w) {
                *dst = src * scale;
            }
            params[layer.bias..layer.bias + layer.fan_out]
                .iter_mut()
                .for_each(|b| *b = 0.0);
        }
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> MlpCache {
        debug_assert_eq!(input.len(), self.input_size());
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let x = &acts[k];
            let w = &params[layer.weight..layer.weight + layer.fan_in * layer.fan_out];
            let b = &params[layer.bias..layer.bias + layer.fan_out];
            let mut out = Vec::with_capacity(layer.fan_out);
            for (row, bias) in w.chunks_exact(layer.fan_in).zip(b) {
                let z = bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                out.push(if k == last { z } else { z.tanh() });
            }
            acts.push(out);
        }
        MlpCache { acts }
    }

    /// Accumulates `d(output · d_out)/dθ` into `grad` (same flat indexing as `params`).
    pub fn backward(&self, params: &[f64], cache: &MlpCache, d_out: &[f64], grad: &mut [f64]) {
        let last = self.layers.len() - 1;
        let mut delta = d_out.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            if k != last {
                // through tanh: d/dz = 1 - tanh(z)^2
                for (d, a) in delta.iter_mut().zip(&cache.acts[k + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let x = &cache.acts[k];
            for (j, d) in delta.iter().enumerate() {
                grad[layer.bias + j] += d;
                let row = layer.weight + j * layer.fan_in;
                for (g, xi) in grad[row..row + layer.fan_in].iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            if k > 0 {
                let w = &params[layer.weight..layer.weight + layer.fan_in * layer.fan_out];
                let mut prev = vec![0.0; layer.fan_in];
                for (row, d) in w.chunks_exact(layer.fan_in).zip(&delta) {
                    for (p, wij) in prev.iter_mut().zip(row) {
                        *p += d * wij;
                    }
                }
                delta = prev;
            }
        }
    }
}

/// Random `rows x cols` matrix with orthonormal rows (or columns, whichever is
/// the shorter dimension), by Gram-Schmidt on a Gaussian draw.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    let (n, m) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(n);
    while vecs.len() < n {
        let mut v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        for u in &vecs {
            let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= proj * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            vecs.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[i * cols + j] = if rows <= cols { vecs[i][j] } else { vecs[j][i] };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::Layout;
    use crate::seed::rng_from_seed;

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = rng_from_seed(1);
        let w = orthogonal(3, 5, &mut rng);
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..5).map(|k| w[i * 5 + k] * w[j * 5 + k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let (b, mlp) = Mlp::register(Layout::builder(), "", &[3, 4, 2], 0);
        let layout = b.build();
        let params = vec![0.0; layout.len()];
        let cache = mlp.forward(&params, &[1.0, -2.0, 0.5]);
        assert_eq!(cache.output(), &[0.0, 0.0]);
        assert_eq!(mlp.param_count(), layout.len());
    }
}
