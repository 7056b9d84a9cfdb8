use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelBlockKind {
    /// Transform-average-concatenate.
    Tac,
    /// Transform-attend-concatenate.
    Attend,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReductionKind {
    Mean,
    Attend,
}

/// Mask estimator topology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Frequency bins `F`; the input is `2F` wide, the output `F`.
    pub num_bins: usize,
    pub num_temporal_blocks: usize,
    pub layers_per_block: Vec<usize>,
    pub hidden: usize,
    /// Attention heads in the temporal Conformer layers.
    pub heads: usize,
    /// Attention heads in the channel block, over width `hidden / 2`.
    pub channel_heads: usize,
    pub ff_expansion: usize,
    pub conv_kernel: usize,
    /// Number of multichannel temporal blocks before channel reduction.
    pub reduction_after_block: usize,
    pub channel_block_kind: ChannelBlockKind,
    pub reduction_kind: ReductionKind,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            num_bins: 257,
            num_temporal_blocks: 6,
            layers_per_block: vec![5, 5, 5, 5, 5, 1],
            hidden: 128,
            heads: 4,
            channel_heads: 4,
            ff_expansion: 4,
            conv_kernel: 31,
            reduction_after_block: 3,
            channel_block_kind: ChannelBlockKind::Attend,
            reduction_kind: ReductionKind::Attend,
        }
    }
}

impl NetConfig {
    /// Same topology with channel averaging and mean pooling.
    pub fn baseline() -> Self {
        Self {
            channel_block_kind: ChannelBlockKind::Tac,
            reduction_kind: ReductionKind::Mean,
            ..Self::default()
        }
    }

    /// A scaled-down network for fast tests: same block structure, narrow
    /// layers.
    pub fn tiny(num_bins: usize) -> Self {
        Self {
            num_bins,
            num_temporal_blocks: 4,
            layers_per_block: vec![1, 1, 1, 1],
            hidden: 16,
            heads: 4,
            channel_heads: 2,
            ff_expansion: 2,
            conv_kernel: 5,
            reduction_after_block: 2,
            ..Self::default()
        }
    }

    pub fn output_dim(&self) -> usize {
        self.num_bins
    }

    pub fn input_dim(&self) -> usize {
        2 * self.num_bins
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_bins == 0 {
            return fail("num_bins must be positive".into());
        }
        if self.hidden == 0 || !self.hidden.is_multiple_of(2) {
            return fail(format!("hidden {} must be even and positive", self.hidden));
        }
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return fail(format!("heads {} must divide hidden {}", self.heads, self.hidden));
        }
        if self.channel_heads == 0 || !(self.hidden / 2).is_multiple_of(self.channel_heads) {
            return fail(format!(
                "channel heads {} must divide hidden/2 = {}",
                self.channel_heads,
                self.hidden / 2
            ));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return fail(format!("conv kernel {} must be odd", self.conv_kernel));
        }
        if self.ff_expansion == 0 {
            return fail("ff_expansion must be positive".into());
        }
        if self.layers_per_block.len() != self.num_temporal_blocks {
            return fail(format!(
                "{} layer counts for {} temporal blocks",
                self.layers_per_block.len(),
                self.num_temporal_blocks
            ));
        }
        if self.layers_per_block.contains(&0) {
            return fail("every temporal block needs at least one layer".into());
        }
        if self.reduction_after_block == 0 || self.reduction_after_block >= self.num_temporal_blocks {
            return fail(format!(
                "reduction after block {} must be in [1, {})",
                self.reduction_after_block, self.num_temporal_blocks
            ));
        }
        Ok(())
    }

    /// Every tensor the network reads, with its shape, in forward order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.hidden;
        let half = h / 2;
        let mut out = Vec::new();
        let mut linear = |name: String, out_dim: usize, in_dim: usize, bias: bool| {
            out.push((format!("{name}.weight"), vec![out_dim, in_dim]));
            if bias {
                out.push((format!("{name}.bias"), vec![out_dim]));
            }
        };
        linear("input".into(), h, self.input_dim(), true);
        for b in 0..self.reduction_after_block {
            let p = format!("channel.{b}");
            linear(format!("{p}.wc"), half, h, true);
            linear(format!("{p}.wa"), half, h, true);
            if self.channel_block_kind == ChannelBlockKind::Attend {
                for proj in ["q", "k", "v", "o"] {
                    linear(format!("{p}.mhsa.{proj}"), half, half, true);
                }
            }
        }
        if self.reduction_kind == ReductionKind::Attend {
            linear("reduction.wq".into(), h, h, false);
            linear("reduction.wv".into(), h, h, false);
        }
        linear("output".into(), self.output_dim(), h, true);

        for (t, &layers) in self.layers_per_block.iter().enumerate() {
            for l in 0..layers {
                out.extend(self.conformer_shapes(&format!("temporal.{t}.{l}")));
            }
        }
        out
    }

    fn conformer_shapes(&self, p: &str) -> Vec<(String, Vec<usize>)> {
        let h = self.hidden;
        let ff = self.ff_expansion * h;
        let mut v = Vec::new();
        let norm = |v: &mut Vec<(String, Vec<usize>)>, name: String| {
            v.push((format!("{name}.gamma"), vec![h]));
            v.push((format!("{name}.beta"), vec![h]));
        };
        for m in ["ff1", "ff2"] {
            norm(&mut v, format!("{p}.{m}.norm"));
            v.push((format!("{p}.{m}.w1.weight"), vec![ff, h]));
            v.push((format!("{p}.{m}.w1.bias"), vec![ff]));
            v.push((format!("{p}.{m}.w2.weight"), vec![h, ff]));
            v.push((format!("{p}.{m}.w2.bias"), vec![h]));
        }
        norm(&mut v, format!("{p}.mhsa.norm"));
        for proj in ["q", "k", "v", "o"] {
            v.push((format!("{p}.mhsa.{proj}.weight"), vec![h, h]));
            v.push((format!("{p}.mhsa.{proj}.bias"), vec![h]));
        }
        norm(&mut v, format!("{p}.conv.norm"));
        v.push((format!("{p}.conv.pw1.weight"), vec![2 * h, h]));
        v.push((format!("{p}.conv.pw1.bias"), vec![2 * h]));
        v.push((format!("{p}.conv.dw.weight"), vec![h, self.conv_kernel]));
        v.push((format!("{p}.conv.dw.bias"), vec![h]));
        norm(&mut v, format!("{p}.conv.dw_norm"));
        v.push((format!("{p}.conv.pw2.weight"), vec![h, h]));
        v.push((format!("{p}.conv.pw2.bias"), vec![h]));
        norm(&mut v, format!("{p}.final_norm"));
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matches_reported_topology() {
        let c = NetConfig::default();
        c.validate().unwrap();
        assert_eq!(c.layers_per_block, vec![5, 5, 5, 5, 5, 1]);
        assert_eq!((c.hidden, c.heads, c.conv_kernel), (128, 4, 31));
        assert_eq!(c.reduction_after_block, 3);
        // no per-channel parameters, so the count is independent of M
        let n = c.parameter_count();
        assert!(n > 9_000_000 && n < 12_000_000, "{n}");
        NetConfig::baseline().validate().unwrap();
        NetConfig::tiny(9).validate().unwrap();
    }

    #[test]
    fn rejects_invalid() {
        let bad = [
            NetConfig {
                heads: 3,
                ..NetConfig::default()
            },
            NetConfig {
                conv_kernel: 30,
                ..NetConfig::default()
            },
            NetConfig {
                reduction_after_block: 6,
                ..NetConfig::default()
            },
            NetConfig {
                reduction_after_block: 0,
                ..NetConfig::default()
            },
            NetConfig {
                layers_per_block: vec![5; 5],
                ..NetConfig::default()
            },
            NetConfig {
                channel_heads: 5,
                ..NetConfig::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn names_are_unique() {
        let shapes = NetConfig::default().parameter_shapes();
        let mut names: Vec<_> = shapes.iter().map(|(n, _)| n.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), shapes.len());
    }
}
