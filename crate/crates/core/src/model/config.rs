use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seq_transform::OrderingKind;
use crate::ssd::SsdBlockConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Branch outputs side by side along the feature axis.
    Concatenate,
    /// Element-wise sum of branch outputs.
    Add,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// One score per position, softmax over positions, weighted row sum.
    PerPosition,
    /// One score per position and channel, softmax over positions for each
    /// channel independently.
    PerChannel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub reduced_dim: usize,
    pub num_classes: usize,
    pub branches: Vec<OrderingKind>,
    pub aggregation: Aggregation,
    pub selection: SelectionMode,
    /// Undo each branch's ordering before fusing, so rows align by position.
    pub realign: bool,
    /// One SSD stack used by every branch.
    pub share_branch_params: bool,
    pub ssd: SsdBlockConfig,
    pub selection_hidden: usize,
    pub mlp_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::with_dims(1024, 512, 2)
    }
}

impl ModelConfig {
    /// Defaults scaled to the given widths: four heads, selection bottleneck
    /// of a quarter of `reduced_dim`, head hidden width `reduced_dim`.
    pub fn with_dims(input_dim: usize, reduced_dim: usize, num_classes: usize) -> Self {
        let heads = if reduced_dim.is_multiple_of(4) { 4 } else { 1 };
        ModelConfig {
            input_dim,
            reduced_dim,
            num_classes,
            branches: vec![
                OrderingKind::Original,
                OrderingKind::Flipped,
                OrderingKind::Transposed,
            ],
            aggregation: Aggregation::Concatenate,
            selection: SelectionMode::PerPosition,
            realign: true,
            share_branch_params: false,
            ssd: SsdBlockConfig {
                heads,
                head_dim: reduced_dim / heads,
                ..SsdBlockConfig::default()
            },
            selection_hidden: (reduced_dim / 4).max(1),
            mlp_hidden: reduced_dim,
        }
    }

    /// Smallest configuration exercised by gradient checks.
    pub fn tiny() -> Self {
        let mut cfg = ModelConfig::with_dims(4, 4, 2);
        cfg.ssd = SsdBlockConfig {
            depth: 1,
            heads: 2,
            head_dim: 2,
            state_dim: 2,
            conv_kernel: 2,
            scan_chunk: 2,
            ..SsdBlockConfig::default()
        };
        cfg.selection_hidden = 3;
        cfg.mlp_hidden = 4;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches.is_empty() {
            return Err(Error::Config("at least one branch is required".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if self.input_dim == 0
            || self.reduced_dim == 0
            || self.selection_hidden == 0
            || self.mlp_hidden == 0
        {
            return Err(Error::Config("all widths must be >= 1".into()));
        }
        self.ssd.validate()?;
        if self.ssd.model_dim() != self.reduced_dim {
            return Err(Error::Config(format!(
                "ssd heads x head_dim = {} must equal reduced_dim {}",
                self.ssd.model_dim(),
                self.reduced_dim
            )));
        }
        Ok(())
    }

    pub fn stack_count(&self) -> usize {
        if self.share_branch_params {
            1
        } else {
            self.branches.len()
        }
    }

    /// Width of the fused per-position features.
    pub fn fused_dim(&self) -> usize {
        match self.aggregation {
            Aggregation::Concatenate => self.branches.len() * self.reduced_dim,
            Aggregation::Add => self.reduced_dim,
        }
    }

    pub fn score_dim(&self) -> usize {
        match self.selection {
            SelectionMode::PerPosition => 1,
            SelectionMode::PerChannel => self.fused_dim(),
        }
    }

    /// Learnable scalar count, derived from widths alone.
    pub fn param_count(&self) -> usize {
        let linear = |i: usize, o: usize| (i + 1) * o;
        let fused = self.fused_dim();
        linear(self.input_dim, self.reduced_dim)
            + self.stack_count() * self.ssd.stack_param_count()
            + linear(fused, self.selection_hidden)
            + self.selection_hidden * self.score_dim()
            + linear(fused, self.mlp_hidden)
            + linear(self.mlp_hidden, self.num_classes)
    }
}
