//! Channel-count-agnostic mask estimator.
//!
//! Each channel is a stream of `(frames, hidden)` activations. Temporal
//! blocks run on every stream independently; channel blocks mix streams
//! frame by frame; a reduction collapses the streams into one.

mod config;
mod layers;
mod weights;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};

pub use config::{ChannelBlockKind, NetConfig, ReductionKind};
pub use layers::{ConformerLayer, LayerNorm, Linear, MultiHeadAttention};
pub use weights::{Tensor, WeightStore, MAGIC};

use crate::beamform::TFMask;
use crate::error::{Error, Result};
use crate::features::FeatureTensor;
use layers::{relu_inplace, sigmoid, softmax_rows};

/// Per-channel transform concatenated with a cross-channel pathway.
#[derive(Clone, Debug)]
pub struct ChannelBlock {
    wc: Linear,
    wa: Linear,
    /// `None` selects channel averaging.
    mhsa: Option<MultiHeadAttention>,
}

impl ChannelBlock {
    pub fn load(cfg: &NetConfig, w: &WeightStore, index: usize) -> Result<Self> {
        let h = cfg.hidden;
        let p = format!("channel.{index}");
        let mhsa = match cfg.channel_block_kind {
            ChannelBlockKind::Tac => None,
            ChannelBlockKind::Attend => Some(MultiHeadAttention::load(
                w,
                &format!("{p}.mhsa"),
                h / 2,
                cfg.channel_heads,
            )?),
        };
        Ok(Self {
            wc: Linear::load(w, &format!("{p}.wc"), h / 2, h, true)?,
            wa: Linear::load(w, &format!("{p}.wa"), h / 2, h, true)?,
            mhsa,
        })
    }

    /// One frame: rows are channels, `(M, hidden)` in and out.
    pub fn forward_frame(&self, z: &ArrayView2<f64>) -> Array2<f64> {
        let mut c = self.wc.forward(z);
        relu_inplace(&mut c);
        let mut a = self.wa.forward(z);
        relu_inplace(&mut a);
        let shared = match &self.mhsa {
            Some(mhsa) => mhsa.forward(&a.view()),
            None => {
                let mean = layers::mean_rows(&a.view());
                a.rows_mut().into_iter().for_each(|mut r| r.assign(&mean));
                a
            }
        };
        concatenate![Axis(1), c, shared]
    }

    /// Channel attention weights for one frame, one matrix per head.
    pub fn attention_weights(&self, z: &ArrayView2<f64>) -> Option<Vec<Array2<f64>>> {
        let mhsa = self.mhsa.as_ref()?;
        let mut a = self.wa.forward(z);
        relu_inplace(&mut a);
        Some(mhsa.attention_weights(&a.view()))
    }

    /// Applies the block to every frame of a set of equally long streams.
    pub fn forward(&self, streams: &[Array2<f64>]) -> Vec<Array2<f64>> {
        let (frames, hidden) = streams[0].dim();
        let mut out = vec![Array2::zeros((frames, hidden)); streams.len()];
        for n in 0..frames {
            let y = self.forward_frame(&frame_tokens(streams, n).view());
            for (m, o) in out.iter_mut().enumerate() {
                o.row_mut(n).assign(&y.row(m));
            }
        }
        out
    }
}

/// Channel reduction by attention over time-averaged channel activations.
#[derive(Clone, Debug)]
pub struct AttentionReduction {
    wq: Linear,
    wv: Linear,
}

impl AttentionReduction {
    pub fn load(cfg: &NetConfig, w: &WeightStore) -> Result<Self> {
        let h = cfg.hidden;
        Ok(Self {
            wq: Linear::load(w, "reduction.wq", h, h, false)?,
            wv: Linear::load(w, "reduction.wv", h, h, false)?,
        })
    }

    /// Softmax weights over channels, shared by all frames.
    pub fn weights(&self, streams: &[Array2<f64>]) -> Array1<f64> {
        let hidden = streams[0].ncols();
        let mut zbar = Array2::zeros((streams.len(), hidden));
        for (m, s) in streams.iter().enumerate() {
            zbar.row_mut(m).assign(&layers::mean_rows(&s.view()));
        }
        let q = self.wq.forward(&zbar.view());
        let v = self.wv.forward(&zbar.view());
        let qbar = layers::mean_rows(&q.view());
        let mut scores = v.dot(&qbar).insert_axis(Axis(0));
        softmax_rows(&mut scores);
        scores.row(0).to_owned()
    }

    pub fn forward(&self, streams: &[Array2<f64>]) -> Array2<f64> {
        weighted_sum(streams, &self.weights(streams))
    }
}

fn weighted_sum(streams: &[Array2<f64>], weights: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(streams[0].raw_dim());
    for (s, &a) in streams.iter().zip(weights) {
        out.scaled_add(a, s);
    }
    out
}

/// Arithmetic mean over channel streams.
pub fn channel_reduce_mean(streams: &[Array2<f64>]) -> Array2<f64> {
    let m = streams.len();
    weighted_sum(streams, &Array1::from_elem(m, 1.0 / m as f64))
}

#[derive(Clone, Debug)]
enum Reduction {
    Mean,
    Attend(Box<AttentionReduction>),
}

#[derive(Clone, Debug)]
pub struct MaskNet {
    cfg: NetConfig,
    input: Linear,
    channel_blocks: Vec<ChannelBlock>,
    temporal: Vec<Vec<ConformerLayer>>,
    reduction: Reduction,
    output: Linear,
}

impl MaskNet {
    pub fn new(cfg: &NetConfig, w: &WeightStore) -> Result<Self> {
        cfg.validate()?;
        w.validate(cfg)?;
        let h = cfg.hidden;
        let channel_blocks = (0..cfg.reduction_after_block)
            .map(|b| ChannelBlock::load(cfg, w, b))
            .collect::<Result<_>>()?;
        let temporal = cfg
            .layers_per_block
            .iter()
            .enumerate()
            .map(|(t, &layers)| {
                (0..layers)
                    .map(|l| {
                        ConformerLayer::load(
                            w,
                            &format!("temporal.{t}.{l}"),
                            h,
                            cfg.heads,
                            cfg.ff_expansion * h,
                            cfg.conv_kernel,
                        )
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let reduction = match cfg.reduction_kind {
            ReductionKind::Mean => Reduction::Mean,
            ReductionKind::Attend => Reduction::Attend(Box::new(AttentionReduction::load(cfg, w)?)),
        };
        Ok(Self {
            cfg: cfg.clone(),
            input: Linear::load(w, "input", h, cfg.input_dim(), true)?,
            channel_blocks,
            temporal,
            reduction,
            output: Linear::load(w, "output", cfg.output_dim(), h, true)?,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn channel_block(&self, index: usize) -> &ChannelBlock {
        &self.channel_blocks[index]
    }

    pub fn attention_reduction(&self) -> Option<&AttentionReduction> {
        match &self.reduction {
            Reduction::Attend(r) => Some(r.as_ref()),
            Reduction::Mean => None,
        }
    }

    /// Runs temporal block `index` on one `(frames, hidden)` stream.
    pub fn temporal_block(&self, index: usize, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.nrows() == 0 {
            return Err(Error::TooFewFrames { needed: 1, got: 0 });
        }
        let mut x = x.to_owned();
        for layer in &self.temporal[index] {
            x = layer.forward(&x.view());
        }
        Ok(x)
    }

    pub fn reduce(&self, streams: &[Array2<f64>]) -> Array2<f64> {
        match &self.reduction {
            Reduction::Mean => channel_reduce_mean(streams),
            Reduction::Attend(r) => r.forward(streams),
        }
    }

    /// Mask logits before the sigmoid, `(frames, bins)`.
    pub fn logits(&self, z: &FeatureTensor) -> Result<Array2<f64>> {
        let m = z.num_channels();
        if m == 0 {
            return Err(Error::NoChannels);
        }
        if z.num_bins() != self.cfg.num_bins {
            return Err(Error::ShapeMismatch(format!(
                "features have {} bins, network expects {}",
                z.num_bins(),
                self.cfg.num_bins
            )));
        }
        let n = z.num_frames();
        if n == 0 {
            return Err(Error::TooFewFrames { needed: 1, got: 0 });
        }
        let k = z.feature_dim();
        let mut streams: Vec<Array2<f64>> = (0..m)
            .map(|c| {
                let x = ArrayView2::from_shape((n, k), z.channel(c)).expect("feature layout");
                self.input.forward(&x)
            })
            .collect();

        let r = self.cfg.reduction_after_block;
        for b in 0..r {
            streams = self.channel_blocks[b].forward(&streams);
            streams = streams
                .iter()
                .map(|s| self.temporal_block(b, &s.view()))
                .collect::<Result<_>>()?;
        }
        let mut x = self.reduce(&streams);
        for t in r..self.cfg.num_temporal_blocks {
            x = self.temporal_block(t, &x.view())?;
        }
        Ok(self.output.forward(&x.view()))
    }

    pub fn forward(&self, z: &FeatureTensor) -> Result<TFMask> {
        let logits = self.logits(z)?;
        let (n, f) = logits.dim();
        let mut g = vec![0.0; f * n];
        for ((frame, bin), &v) in logits.indexed_iter() {
            g[bin * n + frame] = sigmoid(v);
        }
        TFMask::new(g, f, n)
    }
}

/// One-shot convenience wrapper around [`MaskNet`].
pub fn mask_forward(z: &FeatureTensor, cfg: &NetConfig, w: &WeightStore) -> Result<TFMask> {
    MaskNet::new(cfg, w)?.forward(z)
}

/// Gathers frame `frame` of every stream into a `(M, hidden)` matrix.
pub fn frame_tokens(streams: &[Array2<f64>], frame: usize) -> Array2<f64> {
    let hidden = streams[0].ncols();
    let mut z = Array2::zeros((streams.len(), hidden));
    for (m, s) in streams.iter().enumerate() {
        z.slice_mut(s![m, ..]).assign(&s.row(frame));
    }
    z
}
