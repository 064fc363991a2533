//! Small pre-norm decoder-only transformer standing in for the 7B LLM.

use aulm_tensor::{Graph, Mat, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::params::Bindings;
use crate::Float;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    #[serde(default = "default_ff_mult")]
    pub ff_mult: usize,
    pub context: usize,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_ff_mult() -> usize {
    4
}

fn default_init_std() -> f64 {
    0.02
}

impl LmConfig {
    /// 2 layers, 4 heads, width 128, context 512.
    pub fn toy(vocab_size: usize) -> Self {
        LmConfig {
            vocab_size,
            dim: 128,
            layers: 2,
            heads: 4,
            ff_mult: 4,
            context: 512,
            init_std: default_init_std(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size == 0 || self.dim == 0 || self.layers == 0 || self.context == 0 {
            return Err(ModelError::Config("LLM sizes must be positive".into()));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

struct Block<F> {
    ln1: (Mat<F>, Mat<F>),
    wq: Mat<F>,
    wk: Mat<F>,
    wv: Mat<F>,
    wo: Mat<F>,
    ln2: (Mat<F>, Mat<F>),
    w_in: Mat<F>,
    b_in: Mat<F>,
    w_out: Mat<F>,
    b_out: Mat<F>,
}

pub struct ToyCausalLm<F> {
    config: LmConfig,
    pub(crate) tok_emb: Mat<F>,
    pos_emb: Mat<F>,
    blocks: Vec<Block<F>>,
    ln_f: (Mat<F>, Mat<F>),
    head: Mat<F>,
}

pub const TOKEN_EMBEDDING: &str = "llm.tok_emb";

impl<F: Float> ToyCausalLm<F> {
    pub fn new<R: Rng>(config: LmConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.dim;
        let ff = d * config.ff_mult;
        let std = config.init_std;
        let resid_std = std / ((2 * config.layers) as f64).sqrt();
        let mut init = |rows: usize, cols: usize, std: f64| {
            let normal = Normal::new(0.0, std).expect("valid std");
            Mat::from_shape_fn((rows, cols), |_| F::lit(normal.sample(rng)))
        };
        let norm = || (Mat::ones((1, d)), Mat::zeros((1, d)));
        let tok_emb = init(config.vocab_size, d, std);
        let pos_emb = init(config.context, d, std);
        let blocks = (0..config.layers)
            .map(|_| Block {
                ln1: norm(),
                wq: init(d, d, std),
                wk: init(d, d, std),
                wv: init(d, d, std),
                wo: init(d, d, resid_std),
                ln2: norm(),
                w_in: init(d, ff, std),
                b_in: Mat::zeros((1, ff)),
                w_out: init(ff, d, resid_std),
                b_out: Mat::zeros((1, d)),
            })
            .collect();
        let head = init(d, config.vocab_size, std);
        Ok(ToyCausalLm { config, tok_emb, pos_emb, blocks, ln_f: norm(), head })
    }

    pub fn config(&self) -> &LmConfig {
        &self.config
    }

    pub fn embedding_table(&self) -> &Mat<F> {
        &self.tok_emb
    }

    pub fn params(&self) -> Vec<(String, &Mat<F>)> {
        let mut out: Vec<(String, &Mat<F>)> =
            vec![(TOKEN_EMBEDDING.into(), &self.tok_emb), ("llm.pos_emb".into(), &self.pos_emb)];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = |n: &str| format!("llm.blocks.{i}.{n}");
            out.extend([
                (p("ln1.gamma"), &b.ln1.0),
                (p("ln1.beta"), &b.ln1.1),
                (p("attn.wq"), &b.wq),
                (p("attn.wk"), &b.wk),
                (p("attn.wv"), &b.wv),
                (p("attn.wo"), &b.wo),
                (p("ln2.gamma"), &b.ln2.0),
                (p("ln2.beta"), &b.ln2.1),
                (p("mlp.w_in"), &b.w_in),
                (p("mlp.b_in"), &b.b_in),
                (p("mlp.w_out"), &b.w_out),
                (p("mlp.b_out"), &b.b_out),
            ]);
        }
        out.extend([
            ("llm.ln_f.gamma".into(), &self.ln_f.0),
            ("llm.ln_f.beta".into(), &self.ln_f.1),
            ("llm.head".into(), &self.head),
        ]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Mat<F>)> {
        let mut out: Vec<(String, &mut Mat<F>)> =
            vec![(TOKEN_EMBEDDING.into(), &mut self.tok_emb), ("llm.pos_emb".into(), &mut self.pos_emb)];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = |n: &str| format!("llm.blocks.{i}.{n}");
            out.extend([
                (p("ln1.gamma"), &mut b.ln1.0),
                (p("ln1.beta"), &mut b.ln1.1),
                (p("attn.wq"), &mut b.wq),
                (p("attn.wk"), &mut b.wk),
                (p("attn.wv"), &mut b.wv),
                (p("attn.wo"), &mut b.wo),
                (p("ln2.gamma"), &mut b.ln2.0),
                (p("ln2.beta"), &mut b.ln2.1),
                (p("mlp.w_in"), &mut b.w_in),
                (p("mlp.b_in"), &mut b.b_in),
                (p("mlp.w_out"), &mut b.w_out),
                (p("mlp.b_out"), &mut b.b_out),
            ]);
        }
        out.extend([
            ("llm.ln_f.gamma".into(), &mut self.ln_f.0),
            ("llm.ln_f.beta".into(), &mut self.ln_f.1),
            ("llm.head".into(), &mut self.head),
        ]);
        out
    }

    /// Logits (`T × vocab`) for an embedded input sequence (`T × dim`).
    pub fn forward(&self, g: &mut Graph<F>, bind: &Bindings, x: Var) -> Result<Var, ModelError> {
        let t = g.value(x).nrows();
        if t > self.config.context {
            return Err(ModelError::Context { len: t, max: self.config.context });
        }
        let positions: Vec<usize> = (0..t).collect();
        let pos = g.gather(bind.get("llm.pos_emb"), &positions);
        let mut h = g.add(x, pos);
        for i in 0..self.blocks.len() {
            let p = |n: &str| bind.get(&format!("llm.blocks.{i}.{n}"));
            let a = g.layer_norm(h, p("ln1.gamma"), p("ln1.beta"));
            let q = g.matmul(a, p("attn.wq"));
            let k = g.matmul(a, p("attn.wk"));
            let v = g.matmul(a, p("attn.wv"));
            let att = g.causal_attention(q, k, v, self.config.heads);
            let att = g.matmul(att, p("attn.wo"));
            h = g.add(h, att);
            let m = g.layer_norm(h, p("ln2.gamma"), p("ln2.beta"));
            let m = g.matmul(m, p("mlp.w_in"));
            let m = g.add_row(m, p("mlp.b_in"));
            let m = g.gelu(m);
            let m = g.matmul(m, p("mlp.w_out"));
            let m = g.add_row(m, p("mlp.b_out"));
            h = g.add(h, m);
        }
        let out = g.layer_norm(h, bind.get("llm.ln_f.gamma"), bind.get("llm.ln_f.beta"));
        Ok(g.matmul(out, bind.get("llm.head")))
    }
}
