use rand::Rng;

use super::config::{Aggregation, ModelConfig, SelectionMode};
use crate::data::FeatureBag;
use crate::error::{Error, Result};
use crate::numerics::{
    accumulate, join, softmax_backward, softmax_forward, tanh_backward, tanh_forward, Axis, Init,
    Linear, LinearTape, Matrix, Parameters,
};
use crate::seq_transform::{inverse_reorder, reorder_rows, square, square_backward};
use crate::ssd::{SsdStack, SsdStackTape};

/// Every learnable tensor of the classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// `D → D'` input projection.
    pub reduce: Linear,
    /// One stack per branch, or a single shared stack.
    pub stacks: Vec<SsdStack>,
    pub select_hidden: Linear,
    /// Bias-free score map: a shared offset cancels in the softmax over
    /// positions, so a bias here would never receive gradient.
    pub select_score: Matrix,
    pub head_hidden: Linear,
    pub head_out: Linear,
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let x = Init::XavierUniform;
        let fused = cfg.fused_dim();
        Ok(ModelParams {
            reduce: Linear::init(cfg.input_dim, cfg.reduced_dim, x, rng),
            stacks: (0..cfg.stack_count())
                .map(|_| SsdStack::init(&cfg.ssd, rng))
                .collect(),
            select_hidden: Linear::init(fused, cfg.selection_hidden, x, rng),
            select_score: Linear::init(cfg.selection_hidden, cfg.score_dim(), x, rng).weight,
            head_hidden: Linear::init(fused, cfg.mlp_hidden, x, rng),
            head_out: Linear::init(cfg.mlp_hidden, cfg.num_classes, x, rng),
        })
    }

    /// All tensors zero (layer-norm gains included).
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let fused = cfg.fused_dim();
        Ok(ModelParams {
            reduce: Linear::zeros(cfg.input_dim, cfg.reduced_dim),
            stacks: (0..cfg.stack_count())
                .map(|_| SsdStack::zeros(&cfg.ssd))
                .collect(),
            select_hidden: Linear::zeros(fused, cfg.selection_hidden),
            select_score: Matrix::zeros(cfg.selection_hidden, cfg.score_dim()),
            head_hidden: Linear::zeros(fused, cfg.mlp_hidden),
            head_out: Linear::zeros(cfg.mlp_hidden, cfg.num_classes),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, m) in z.tensors_mut() {
            m.fill(0.0);
        }
        z
    }

    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let fused = cfg.fused_dim();
        let shapes_ok = self.reduce.weight.shape() == (cfg.input_dim, cfg.reduced_dim)
            && self.stacks.len() == cfg.stack_count()
            && self.select_hidden.weight.shape() == (fused, cfg.selection_hidden)
            && self.select_score.shape() == (cfg.selection_hidden, cfg.score_dim())
            && self.head_hidden.weight.shape() == (fused, cfg.mlp_hidden)
            && self.head_out.weight.shape() == (cfg.mlp_hidden, cfg.num_classes)
            && self.stacks.iter().all(|s| s.layers.len() == cfg.ssd.depth);
        if shapes_ok {
            Ok(())
        } else {
            Err(Error::dim(
                "ModelParams",
                format!("{} parameters", self.param_count()),
                format!("config expecting {}", cfg.param_count()),
            ))
        }
    }

    fn stack_for(&self, branch: usize) -> usize {
        if self.stacks.len() == 1 {
            0
        } else {
            branch
        }
    }
}

impl Parameters for ModelParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        self.reduce.collect(&join(prefix, "reduce"), out);
        for (i, s) in self.stacks.iter().enumerate() {
            s.collect(&join(prefix, &format!("ssd{i}")), out);
        }
        self.select_hidden
            .collect(&join(prefix, "select_hidden"), out);
        out.push((join(prefix, "select_score"), &self.select_score));
        self.head_hidden.collect(&join(prefix, "head_hidden"), out);
        self.head_out.collect(&join(prefix, "head_out"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Matrix)>) {
        self.reduce.collect_mut(&join(prefix, "reduce"), out);
        for (i, s) in self.stacks.iter_mut().enumerate() {
            s.collect_mut(&join(prefix, &format!("ssd{i}")), out);
        }
        self.select_hidden
            .collect_mut(&join(prefix, "select_hidden"), out);
        out.push((join(prefix, "select_score"), &mut self.select_score));
        self.head_hidden
            .collect_mut(&join(prefix, "head_hidden"), out);
        self.head_out.collect_mut(&join(prefix, "head_out"), out);
    }
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug)]
pub struct ModelTape {
    config: ModelConfig,
    original_len: usize,
    reduce: LinearTape,
    branches: Vec<SsdStackTape>,
    fused: Matrix,
    select_hidden: LinearTape,
    select_act: Matrix,
    alpha: Matrix,
    head_hidden: LinearTape,
    head_act: Matrix,
    head_out: LinearTape,
}

#[derive(Debug)]
pub struct ForwardArtifacts {
    pub logits: Vec<f64>,
    /// Softmax weights over the `L` squared positions (channel-averaged in
    /// per-channel mode).
    pub attention_weights: Vec<f64>,
    pub tape: ModelTape,
}

impl ForwardArtifacts {
    pub fn fused_features(&self) -> &Matrix {
        &self.tape.fused
    }
}

#[derive(Clone, Debug)]
pub struct GradientNorms {
    pub global: f64,
    pub per_tensor: Vec<(String, f64)>,
}

pub fn forward(
    bag: &FeatureBag,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<ForwardArtifacts> {
    cfg.validate()?;
    params.check(cfg)?;
    let x = &bag.features;
    if x.rows() == 0 {
        return Err(Error::EmptyBag);
    }
    if x.cols() != cfg.input_dim {
        return Err(Error::dim(
            "forward",
            x.shape_str(),
            format!("input_dim {}", cfg.input_dim),
        ));
    }

    let (reduced, reduce_tape) = params.reduce.forward(x)?;
    let sq = square(&reduced)?;
    let len = sq.len();

    let mut outputs = Vec::with_capacity(cfg.branches.len());
    let mut branch_tapes = Vec::with_capacity(cfg.branches.len());
    for (b, &kind) in cfg.branches.iter().enumerate() {
        let input = reorder_rows(&sq.data, kind)?;
        let (out, tape) = params.stacks[params.stack_for(b)].forward(&input)?;
        outputs.push(if cfg.realign {
            inverse_reorder(&out, kind)?
        } else {
            out
        });
        branch_tapes.push(tape);
    }
    let fused = match cfg.aggregation {
        Aggregation::Concatenate => Matrix::hconcat(&outputs)?,
        Aggregation::Add => {
            let mut acc = Matrix::zeros(len, cfg.reduced_dim);
            for o in &outputs {
                acc.add_assign(o)?;
            }
            acc
        }
    };

    let (pre, select_hidden) = params.select_hidden.forward(&fused)?;
    let select_act = tanh_forward(&pre);
    let scores = select_act.matmul(&params.select_score)?;
    let alpha = softmax_forward(&scores, Axis::Col)?;

    let dim = fused.cols();
    let mut pooled = Matrix::zeros(1, dim);
    for t in 0..len {
        let (f, a) = (fused.row(t), alpha.row(t));
        let p = pooled.row_mut(0);
        match cfg.selection {
            SelectionMode::PerPosition => {
                for c in 0..dim {
                    p[c] += a[0] * f[c];
                }
            }
            SelectionMode::PerChannel => {
                for c in 0..dim {
                    p[c] += a[c] * f[c];
                }
            }
        }
    }
    let attention_weights = alpha
        .iter_rows()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64)
        .collect();

    let (pre, head_hidden) = params.head_hidden.forward(&pooled)?;
    let head_act = tanh_forward(&pre);
    let (logits, head_out) = params.head_out.forward(&head_act)?;
    logits.ensure_finite("logits")?;

    Ok(ForwardArtifacts {
        logits: logits.into_vec(),
        attention_weights,
        tape: ModelTape {
            config: cfg.clone(),
            original_len: x.rows(),
            reduce: reduce_tape,
            branches: branch_tapes,
            fused,
            select_hidden,
            select_act,
            alpha,
            head_hidden,
            head_act,
            head_out,
        },
    })
}

/// Consumes the artifacts of the matching [`forward`] call.
pub fn backward(
    artifacts: ForwardArtifacts,
    params: &ModelParams,
    d_logits: &[f64],
) -> Result<(ModelParams, GradientNorms)> {
    let tape = artifacts.tape;
    let cfg = &tape.config;
    params
        .check(cfg)
        .map_err(|_| Error::Contract("forward artifacts belong to a different model".into()))?;
    if d_logits.len() != cfg.num_classes {
        return Err(Error::dim(
            "backward",
            format!("{} logits", cfg.num_classes),
            d_logits.len(),
        ));
    }
    let mut grads = params.zeros_like();

    let g = params
        .head_out
        .backward(tape.head_out, &Matrix::row_vector(d_logits))?;
    grads.head_out.weight = g.dw;
    grads.head_out.bias = g.db;
    let d_pre = tanh_backward(&tape.head_act, &g.dx)?;
    let g = params.head_hidden.backward(tape.head_hidden, &d_pre)?;
    grads.head_hidden.weight = g.dw;
    grads.head_hidden.bias = g.db;
    let d_pooled = g.dx;

    let fused = &tape.fused;
    let (len, dim) = fused.shape();
    let mut d_fused = Matrix::zeros(len, dim);
    let mut d_alpha = Matrix::zeros(len, tape.alpha.cols());
    let dp = d_pooled.row(0);
    for t in 0..len {
        let f = fused.row(t);
        match cfg.selection {
            SelectionMode::PerPosition => {
                let a = tape.alpha[(t, 0)];
                d_alpha[(t, 0)] = f.iter().zip(dp).map(|(x, y)| x * y).sum();
                for (o, &g) in d_fused.row_mut(t).iter_mut().zip(dp) {
                    *o = a * g;
                }
            }
            SelectionMode::PerChannel => {
                let a = tape.alpha.row(t).to_vec();
                for c in 0..dim {
                    d_alpha[(t, c)] = dp[c] * f[c];
                    d_fused[(t, c)] = a[c] * dp[c];
                }
            }
        }
    }

    let d_scores = softmax_backward(&tape.alpha, &d_alpha, Axis::Col)?;
    grads.select_score = tape.select_act.matmul_tn(&d_scores)?;
    let d_act = d_scores.matmul_nt(&params.select_score)?;
    let d_pre = tanh_backward(&tape.select_act, &d_act)?;
    let g = params.select_hidden.backward(tape.select_hidden, &d_pre)?;
    grads.select_hidden.weight = g.dw;
    grads.select_hidden.bias = g.db;
    d_fused.add_assign(&g.dx)?;

    let d = cfg.reduced_dim;
    let mut d_squared = Matrix::zeros(len, d);
    let mut fresh_stacks = vec![true; grads.stacks.len()];
    for (b, (stack_tape, &kind)) in tape
        .branches
        .into_iter()
        .zip(&cfg.branches)
        .enumerate()
        .rev()
    {
        let d_out = match cfg.aggregation {
            Aggregation::Concatenate => d_fused.columns(b * d, d),
            Aggregation::Add => d_fused.clone(),
        };
        // adjoint of inverse_reorder is reorder, and vice versa
        let d_out = if cfg.realign {
            reorder_rows(&d_out, kind)?
        } else {
            d_out
        };
        let si = params.stack_for(b);
        let (d_in, g) = params.stacks[si].backward(stack_tape, &d_out)?;
        if std::mem::take(&mut fresh_stacks[si]) {
            grads.stacks[si] = g;
        } else {
            accumulate(&mut grads.stacks[si], &g);
        }
        d_squared.add_assign(&inverse_reorder(&d_in, kind)?)?;
    }

    let d_reduced = square_backward(&d_squared, tape.original_len);
    let g = params.reduce.backward(tape.reduce, &d_reduced)?;
    grads.reduce.weight = g.dw;
    grads.reduce.bias = g.db;

    let per_tensor: Vec<(String, f64)> = grads
        .tensors()
        .into_iter()
        .map(|(n, m)| (n, m.frobenius_norm()))
        .collect();
    let norms = GradientNorms {
        global: grads.global_norm(),
        per_tensor,
    };
    Ok((grads, norms))
}

/// Class probabilities: softmax of the forward logits.
pub fn predict_proba(
    bag: &FeatureBag,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<Vec<f64>> {
    let art = forward(bag, params, cfg)?;
    Ok(softmax_forward(&Matrix::row_vector(&art.logits), Axis::Row)?.into_vec())
}
