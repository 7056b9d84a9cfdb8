//! Dense building blocks. Activations are `(tokens, features)` matrices.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::weights::WeightStore;
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

fn fetch(w: &WeightStore, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
    let t = w
        .get(name)
        .ok_or_else(|| Error::Weights(format!("missing tensor {name}")))?;
    if t.shape != shape {
        return Err(Error::Weights(format!(
            "tensor {name} has shape {:?}, expected {shape:?}",
            t.shape
        )));
    }
    Ok(t.data.iter().map(|&v| v as f64).collect())
}

#[derive(Clone, Debug)]
pub struct Linear {
    /// `(out, in)`
    weight: Array2<f64>,
    bias: Option<Array1<f64>>,
}

impl Linear {
    pub fn load(w: &WeightStore, name: &str, out: usize, inp: usize, bias: bool) -> Result<Self> {
        let weight = Array2::from_shape_vec((out, inp), fetch(w, &format!("{name}.weight"), &[out, inp])?)
            .expect("shape checked");
        let bias = if bias {
            Some(Array1::from(fetch(w, &format!("{name}.bias"), &[out])?))
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        if let Some(b) = &self.bias {
            y += b;
        }
        y
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gamma: Array1<f64>,
    beta: Array1<f64>,
}

impl LayerNorm {
    pub fn load(w: &WeightStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: Array1::from(fetch(w, &format!("{name}.gamma"), &[dim])?),
            beta: Array1::from(fetch(w, &format!("{name}.beta"), &[dim])?),
        })
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.to_owned();
        for mut row in y.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for ((v, g), b) in row.iter_mut().zip(&self.gamma).zip(&self.beta) {
                *v = (*v - mean) * inv * g + b;
            }
        }
        y
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn swish_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v * sigmoid(v));
}

pub fn relu_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Row-wise softmax.
pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Multi-head scaled dot-product self-attention without positional terms.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    pub(super) v: Linear,
    pub(super) o: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn load(w: &WeightStore, name: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::load(w, &format!("{name}.q"), dim, dim, true)?,
            k: Linear::load(w, &format!("{name}.k"), dim, dim, true)?,
            v: Linear::load(w, &format!("{name}.v"), dim, dim, true)?,
            o: Linear::load(w, &format!("{name}.o"), dim, dim, true)?,
            heads,
        })
    }

    /// Attention weights per head, each `(tokens, tokens)` with rows
    /// summing to one.
    pub fn attention_weights(&self, x: &ArrayView2<f64>) -> Vec<Array2<f64>> {
        let q = self.q.forward(x);
        let k = self.k.forward(x);
        self.head_weights(&q, &k)
    }

    fn head_weights(&self, q: &Array2<f64>, k: &Array2<f64>) -> Vec<Array2<f64>> {
        let dh = q.ncols() / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        (0..self.heads)
            .map(|h| {
                let cols = s![.., h * dh..(h + 1) * dh];
                let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                softmax_rows(&mut a);
                a
            })
            .collect()
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let q = self.q.forward(x);
        let k = self.k.forward(x);
        let v = self.v.forward(x);
        let dh = q.ncols() / self.heads;
        let mut ctx = Array2::zeros(v.raw_dim());
        for (h, a) in self.head_weights(&q, &k).iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            ctx.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
        }
        self.o.forward(&ctx.view())
    }
}

#[derive(Clone, Debug)]
struct FeedForward {
    norm: LayerNorm,
    w1: Linear,
    w2: Linear,
}

impl FeedForward {
    fn load(w: &WeightStore, name: &str, dim: usize, inner: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::load(w, &format!("{name}.norm"), dim)?,
            w1: Linear::load(w, &format!("{name}.w1"), inner, dim, true)?,
            w2: Linear::load(w, &format!("{name}.w2"), dim, inner, true)?,
        })
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut h = self.w1.forward(&self.norm.forward(x).view());
        swish_inplace(&mut h);
        self.w2.forward(&h.view())
    }
}

/// Depthwise 1-D convolution over tokens with zero "same" padding.
#[derive(Clone, Debug)]
struct DepthwiseConv {
    /// `(channels, kernel)`
    weight: Array2<f64>,
    bias: Array1<f64>,
}

impl DepthwiseConv {
    fn load(w: &WeightStore, name: &str, dim: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            weight: Array2::from_shape_vec((dim, kernel), fetch(w, &format!("{name}.weight"), &[dim, kernel])?)
                .expect("shape checked"),
            bias: Array1::from(fetch(w, &format!("{name}.bias"), &[dim])?),
        })
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let (t_len, dim) = x.dim();
        let kernel = self.weight.ncols();
        let half = kernel / 2;
        let mut y = Array2::zeros((t_len, dim));
        for t in 0..t_len {
            let mut row = y.row_mut(t);
            row.assign(&self.bias);
            for j in 0..kernel {
                let src = t + j;
                if src < half || src - half >= t_len {
                    continue;
                }
                let xr = x.row(src - half);
                for c in 0..dim {
                    row[c] += self.weight[(c, j)] * xr[c];
                }
            }
        }
        y
    }
}

#[derive(Clone, Debug)]
struct ConvModule {
    norm: LayerNorm,
    pw1: Linear,
    dw: DepthwiseConv,
    dw_norm: LayerNorm,
    pw2: Linear,
}

impl ConvModule {
    fn load(w: &WeightStore, name: &str, dim: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::load(w, &format!("{name}.norm"), dim)?,
            pw1: Linear::load(w, &format!("{name}.pw1"), 2 * dim, dim, true)?,
            dw: DepthwiseConv::load(w, &format!("{name}.dw"), dim, kernel)?,
            dw_norm: LayerNorm::load(w, &format!("{name}.dw_norm"), dim)?,
            pw2: Linear::load(w, &format!("{name}.pw2"), dim, dim, true)?,
        })
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let h = self.pw1.forward(&self.norm.forward(x).view());
        let dim = h.ncols() / 2;
        // gated linear unit
        let mut g = h.slice(s![.., ..dim]).to_owned();
        g.zip_mut_with(&h.slice(s![.., dim..]), |a, b| *a *= sigmoid(*b));
        let mut c = self.dw_norm.forward(&self.dw.forward(&g.view()).view());
        swish_inplace(&mut c);
        self.pw2.forward(&c.view())
    }
}

/// One Conformer layer: half-step feed-forward, self-attention, convolution,
/// half-step feed-forward, final layer norm.
#[derive(Clone, Debug)]
pub struct ConformerLayer {
    ff1: FeedForward,
    mhsa_norm: LayerNorm,
    mhsa: MultiHeadAttention,
    conv: ConvModule,
    ff2: FeedForward,
    final_norm: LayerNorm,
}

impl ConformerLayer {
    pub fn load(w: &WeightStore, name: &str, dim: usize, heads: usize, ff_inner: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            ff1: FeedForward::load(w, &format!("{name}.ff1"), dim, ff_inner)?,
            mhsa_norm: LayerNorm::load(w, &format!("{name}.mhsa.norm"), dim)?,
            mhsa: MultiHeadAttention::load(w, &format!("{name}.mhsa"), dim, heads)?,
            conv: ConvModule::load(w, &format!("{name}.conv"), dim, kernel)?,
            ff2: FeedForward::load(w, &format!("{name}.ff2"), dim, ff_inner)?,
            final_norm: LayerNorm::load(w, &format!("{name}.final_norm"), dim)?,
        })
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut x = x.to_owned();
        let ff = self.ff1.forward(&x.view());
        x.scaled_add(0.5, &ff);
        let att = self.mhsa.forward(&self.mhsa_norm.forward(&x.view()).view());
        x += &att;
        let conv = self.conv.forward(&x.view());
        x += &conv;
        let ff = self.ff2.forward(&x.view());
        x.scaled_add(0.5, &ff);
        self.final_norm.forward(&x.view())
    }
}

/// Mean over tokens (rows).
pub fn mean_rows(x: &ArrayView2<f64>) -> Array1<f64> {
    x.mean_axis(Axis(0)).expect("at least one row")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::weights::Tensor;
    use ndarray::array;

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut a = array![[1.0, 2.0, 3.0], [1000.0, 0.0, -1000.0]];
        softmax_rows(&mut a);
        for row in a.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn depthwise_conv_by_hand() {
        let mut w = WeightStore::new();
        w.insert("c.weight", Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        w.insert("c.bias", Tensor::new(vec![1], vec![0.5]).unwrap());
        let conv = DepthwiseConv::load(&w, "c", 1, 3).unwrap();
        let x = array![[1.0], [10.0], [100.0]];
        let y = conv.forward(&x.view());
        // y[t] = w0 x[t-1] + w1 x[t] + w2 x[t+1] + b
        assert_eq!(
            y,
            array![[2.0 + 30.0 + 0.5], [1.0 + 20.0 + 300.0 + 0.5], [10.0 + 200.0 + 0.5]]
        );
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let mut w = WeightStore::new();
        w.insert("n.gamma", Tensor::new(vec![4], vec![1.0; 4]).unwrap());
        w.insert("n.beta", Tensor::zeros(vec![4]));
        let ln = LayerNorm::load(&w, "n", 4).unwrap();
        let y = ln.forward(&array![[1.0, 2.0, 3.0, 4.0]].view());
        assert!(y.sum().abs() < 1e-12);
        let var = y.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!((var - 1.25 / (1.25 + LN_EPS)).abs() < 1e-12);
    }
}
