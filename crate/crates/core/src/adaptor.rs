//! Modal adaptor: variable-length encoder frames to a fixed block of
//! LLM-space embeddings.

use aulm_tensor::{Graph, Mat, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::FrameEmbeddingMatrix;
use crate::error::ModelError;
use crate::params::Bindings;
use crate::Float;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptorConfig {
    pub audio_token_len: usize,
    pub encoder_dim: usize,
    pub llm_dim: usize,
    /// Optional GELU hidden layer between pooling and the output projection.
    #[serde(default)]
    pub hidden_dim: Option<usize>,
}

/// `audio_token_len × llm_dim` embeddings for one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedAudioBlock<F> {
    values: Mat<F>,
}

impl<F: Float> AdaptedAudioBlock<F> {
    pub fn new(values: Mat<F>) -> Self {
        AdaptedAudioBlock { values }
    }

    pub fn values(&self) -> &Mat<F> {
        &self.values
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }
}

/// Bin assignment for length normalisation: with `n ≥ len` frame `f` falls in
/// bin `⌊f·len/n⌋` and bins average their frames; with `n < len` bin `b`
/// copies frame `⌊b·n/len⌋`.
pub fn pooling_matrix<F: Float>(num_frames: usize, len: usize) -> Mat<F> {
    let mut p = Mat::zeros((len, num_frames));
    if num_frames >= len {
        let mut counts = vec![0usize; len];
        for f in 0..num_frames {
            counts[f * len / num_frames] += 1;
        }
        for f in 0..num_frames {
            let b = f * len / num_frames;
            p[[b, f]] = F::one() / F::lit(counts[b] as f64);
        }
    } else {
        for b in 0..len {
            p[[b, b * num_frames / len]] = F::one();
        }
    }
    p
}

pub struct ModalAdaptor<F> {
    config: AdaptorConfig,
    pub(crate) hidden: Option<(Mat<F>, Mat<F>)>,
    pub(crate) weight: Mat<F>,
    pub(crate) bias: Mat<F>,
}

const HIDDEN_W: &str = "adaptor.hidden.weight";
const HIDDEN_B: &str = "adaptor.hidden.bias";
const PROJ_W: &str = "adaptor.proj.weight";
const PROJ_B: &str = "adaptor.proj.bias";

impl<F: Float> ModalAdaptor<F> {
    pub fn new<R: Rng>(config: AdaptorConfig, rng: &mut R) -> Self {
        let mut init = |rows: usize, cols: usize| {
            let normal = Normal::new(0.0, (1.0 / rows as f64).sqrt()).expect("valid std");
            Mat::from_shape_fn((rows, cols), |_| F::lit(normal.sample(rng)))
        };
        let (hidden, proj_in) = match config.hidden_dim {
            Some(h) => (Some((init(config.encoder_dim, h), Mat::zeros((1, h)))), h),
            None => (None, config.encoder_dim),
        };
        let weight = init(proj_in, config.llm_dim);
        ModalAdaptor { bias: Mat::zeros((1, config.llm_dim)), weight, hidden, config }
    }

    pub fn config(&self) -> &AdaptorConfig {
        &self.config
    }

    pub fn params(&self) -> Vec<(String, &Mat<F>)> {
        let mut out = Vec::new();
        if let Some((w, b)) = &self.hidden {
            out.push((HIDDEN_W.to_string(), w));
            out.push((HIDDEN_B.to_string(), b));
        }
        out.push((PROJ_W.to_string(), &self.weight));
        out.push((PROJ_B.to_string(), &self.bias));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Mat<F>)> {
        let mut out = Vec::new();
        if let Some((w, b)) = &mut self.hidden {
            out.push((HIDDEN_W.to_string(), w));
            out.push((HIDDEN_B.to_string(), b));
        }
        out.push((PROJ_W.to_string(), &mut self.weight));
        out.push((PROJ_B.to_string(), &mut self.bias));
        out
    }

    fn check_frames(&self, frames: &FrameEmbeddingMatrix<F>) -> Result<(), ModelError> {
        if frames.encoder_dim() != self.config.encoder_dim {
            return Err(ModelError::Config(format!(
                "adaptor expects encoder_dim {}, frames have {}",
                self.config.encoder_dim,
                frames.encoder_dim()
            )));
        }
        Ok(())
    }

    /// Adds the adaptor computation for one clip to `g`.
    pub fn forward(
        &self,
        g: &mut Graph<F>,
        bind: &Bindings,
        frames: &FrameEmbeddingMatrix<F>,
    ) -> Result<Var, ModelError> {
        self.check_frames(frames)?;
        let x = g.constant(frames.values().clone());
        self.forward_var(g, bind, x)
    }

    /// Same as [`forward`](Self::forward) for frames already in the graph,
    /// which lets gradients reach the input frames.
    pub fn forward_var(&self, g: &mut Graph<F>, bind: &Bindings, x: Var) -> Result<Var, ModelError> {
        let n = g.value(x).nrows();
        if n == 0 {
            return Err(ModelError::Config("no frames to adapt".into()));
        }
        let pool = g.constant(pooling_matrix(n, self.config.audio_token_len));
        let mut h = g.matmul(pool, x);
        if self.hidden.is_some() {
            let w = g.matmul(h, bind.get(HIDDEN_W));
            let w = g.add_row(w, bind.get(HIDDEN_B));
            h = g.gelu(w);
        }
        let out = g.matmul(h, bind.get(PROJ_W));
        Ok(g.add_row(out, bind.get(PROJ_B)))
    }

    /// Inference path with every parameter frozen.
    pub fn adapt(&self, frames: &FrameEmbeddingMatrix<F>) -> Result<AdaptedAudioBlock<F>, ModelError> {
        let mut g = Graph::new();
        let bind = Bindings::new(&mut g, &self.params(), &Default::default());
        let out = self.forward(&mut g, &bind, frames)?;
        Ok(AdaptedAudioBlock::new(g.value(out).clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn adaptor(hidden: Option<usize>) -> ModalAdaptor<f64> {
        let cfg = AdaptorConfig { audio_token_len: 64, encoder_dim: 6, llm_dim: 5, hidden_dim: hidden };
        ModalAdaptor::new(cfg, &mut ChaCha8Rng::seed_from_u64(1))
    }

    fn frames(n: usize) -> FrameEmbeddingMatrix<f64> {
        FrameEmbeddingMatrix::new(Mat::from_shape_fn((n, 6), |(i, j)| {
            ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5
        }))
        .unwrap()
    }

    #[test]
    fn fixed_length_for_varied_inputs() {
        let a = adaptor(None);
        for n in [100, 37, 64, 1, 65, 128, 500] {
            let out = a.adapt(&frames(n)).unwrap();
            assert_eq!(out.values().dim(), (64, 5), "num_frames {n}");
        }
        let h = adaptor(Some(9));
        assert_eq!(h.adapt(&frames(37)).unwrap().values().dim(), (64, 5));
    }

    #[test]
    fn zero_input_yields_replicated_bias() {
        let mut a = adaptor(None);
        a.bias = Mat::from_shape_vec((1, 5), vec![0.1, -0.2, 0.3, 0.0, 5.0]).unwrap();
        let zeros = FrameEmbeddingMatrix::new(Mat::zeros((40, 6))).unwrap();
        let out = a.adapt(&zeros).unwrap();
        for row in out.values().rows() {
            assert_eq!(row, a.bias.row(0));
        }
    }

    #[test]
    fn single_frame_replicates() {
        // Hand pooling of a 1-frame matrix: every bin copies frame 0, so the
        // output is 64 copies of frame0 · W + b.
        let a = adaptor(None);
        let f = frames(1);
        let expected = &f.values().dot(&a.weight) + &a.bias;
        let out = a.adapt(&f).unwrap();
        for row in out.values().rows() {
            assert_eq!(row, expected.row(0));
        }
    }

    #[test]
    fn pooling_covers_every_frame_and_bin() {
        for n in 1..200 {
            let p = pooling_matrix::<f64>(n, 64);
            for row in p.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12, "bin weights must sum to 1");
            }
            if n >= 64 {
                for col in p.columns() {
                    assert_eq!(col.iter().filter(|&&v| v > 0.0).count(), 1);
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_a_config_error() {
        let a = adaptor(None);
        let bad = FrameEmbeddingMatrix::new(Mat::zeros((10, 7))).unwrap();
        assert!(matches!(a.adapt(&bad), Err(ModelError::Config(_))));
    }
}
