//! Model configuration and flat parameter storage.
//!
//! All learnable weights live in one contiguous `Vec<f64>` addressed through a
//! precomputed [`Layout`]. Flat storage keeps the optimizer, checkpointing and
//! coordinate-wise finite-difference checks trivial; shaped views are created
//! on demand.

use std::ops::Range;

use ndarray::{ArrayView2, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of the causal next-token model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Maximum input length including the internal begin marker.
    pub context: usize,
    /// Share the output projection with the token embedding.
    pub tied_output: bool,
}

impl ModelConfig {
    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 4 {
            return Err(Error::invalid("vocabulary must have at least 4 tokens"));
        }
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.context < 2 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 512,
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            context: 64,
            tied_output: false,
        }
    }
}

/// Flat offsets of one transformer block.
#[derive(Debug, Clone)]
pub struct BlockLayout {
    pub ln1_gamma: Range<usize>,
    pub ln1_beta: Range<usize>,
    pub wq: Range<usize>,
    pub bq: Range<usize>,
    pub wk: Range<usize>,
    pub bk: Range<usize>,
    pub wv: Range<usize>,
    pub bv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub ln2_gamma: Range<usize>,
    pub ln2_beta: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

/// Flat offsets of every parameter group.
#[derive(Debug, Clone)]
pub struct Layout {
    pub wte: Range<usize>,
    pub wpe: Range<usize>,
    pub blocks: Vec<BlockLayout>,
    pub lnf_gamma: Range<usize>,
    pub lnf_beta: Range<usize>,
    /// Absent when the output projection is tied to the embedding.
    pub wout: Option<Range<usize>>,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (k, d, dff) = (cfg.vocab_size, cfg.d_model, cfg.d_ff());
        let mut at = 0usize;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let wte = take(k * d);
        let wpe = take(cfg.context * d);
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for _ in 0..cfg.n_layers {
            blocks.push(BlockLayout {
                ln1_gamma: take(d),
                ln1_beta: take(d),
                wq: take(d * d),
                bq: take(d),
                wk: take(d * d),
                bk: take(d),
                wv: take(d * d),
                bv: take(d),
                wo: take(d * d),
                bo: take(d),
                ln2_gamma: take(d),
                ln2_beta: take(d),
                w1: take(d * dff),
                b1: take(dff),
                w2: take(dff * d),
                b2: take(d),
            });
        }
        let lnf_gamma = take(d);
        let lnf_beta = take(d);
        let wout = if cfg.tied_output { None } else { Some(take(d * k)) };
        Layout { wte, wpe, blocks, lnf_gamma, lnf_beta, wout, total: at }
    }
}

/// All learnable weights of the causal LM, stored flat.
#[derive(Debug, Clone)]
pub struct ModelParams {
    cfg: ModelConfig,
    layout: Layout,
    data: Vec<f64>,
}

impl ModelParams {
    /// Deterministic initialization: weight matrices and embeddings are
    /// N(0, 0.02²), layer-norm gains are 1, biases and layer-norm shifts 0.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let mut data = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid stddev");
        let mut fill_normal = |r: &Range<usize>, data: &mut [f64]| {
            for x in &mut data[r.clone()] {
                *x = normal.sample(&mut rng);
            }
        };
        fill_normal(&layout.wte, &mut data);
        fill_normal(&layout.wpe, &mut data);
        for b in &layout.blocks {
            fill_normal(&b.wq, &mut data);
            fill_normal(&b.wk, &mut data);
            fill_normal(&b.wv, &mut data);
            fill_normal(&b.wo, &mut data);
            fill_normal(&b.w1, &mut data);
            fill_normal(&b.w2, &mut data);
        }
        if let Some(wout) = &layout.wout {
            fill_normal(wout, &mut data);
        }
        for b in &layout.blocks {
            data[b.ln1_gamma.clone()].fill(1.0);
            data[b.ln2_gamma.clone()].fill(1.0);
        }
        data[layout.lnf_gamma.clone()].fill(1.0);
        Ok(Self { cfg, layout, data })
    }

    /// Wraps an existing flat weight vector (checkpoint loading).
    pub fn from_flat(cfg: ModelConfig, data: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        if data.len() != layout.total {
            return Err(Error::Checkpoint(format!(
                "weight count {} does not match layout size {}",
                data.len(),
                layout.total
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::Checkpoint("non-finite weight".into()));
        }
        Ok(Self { cfg, layout, data })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Range of the output projection: the dedicated matrix, or the embedding
    /// table when tied.
    pub fn wout_range(&self) -> Range<usize> {
        self.layout.wout.clone().unwrap_or_else(|| self.layout.wte.clone())
    }

    pub fn view(&self, r: &Range<usize>, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.data[r.clone()]).expect("layout shape")
    }

    pub fn vec1(&self, r: &Range<usize>) -> &[f64] {
        &self.data[r.clone()]
    }
}

/// Gradient buffer with the same flat shape as [`ModelParams`].
#[derive(Debug, Clone)]
pub struct Grads(pub Vec<f64>);

impl Grads {
    pub fn zeros(n: usize) -> Self {
        Grads(vec![0.0; n])
    }

    pub fn view_mut(&mut self, r: &Range<usize>, rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
        ArrayViewMut2::from_shape((rows, cols), &mut self.0[r.clone()]).expect("layout shape")
    }

    pub fn vec1_mut(&mut self, r: &Range<usize>) -> &mut [f64] {
        &mut self.0[r.clone()]
    }

    pub fn add_scaled(&mut self, other: &Grads, scale: f64) {
        debug_assert_eq!(self.0.len(), other.0.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }
}
