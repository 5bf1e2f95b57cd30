//! Differentiable objectives over sequence log-probabilities.
//!
//! Every loss in this crate is a scalar function of per-position log-prob
//! rows of one or more token sequences. An [`Objective`] reports the loss
//! value together with `d(loss)/d(rows)` for each sequence it touched; a
//! [`DiffModel`] maps those row gradients back onto its parameters. Keeping
//! the two sides separate lets the same loss definitions drive both the
//! transformer and the tabular bigram model, and lets finite differences
//! check the whole chain end to end.

use std::cell::RefCell;
use std::collections::HashMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::vocab::{Region, TokenSeq};

use super::forward::Cache;
use super::params::{Grads, ModelParams};

/// Read-only access to a model's per-position log-distributions.
pub trait SequenceScorer {
    /// Vocabulary size `K`.
    fn vocab_size(&self) -> usize;

    /// `ids.len() + 1` rows of log-probabilities: row `t < T` is the
    /// distribution for `ids[t]` given the tokens before it, row `T` the
    /// distribution of the continuation.
    fn score_rows(&self, ids: &[u32]) -> Result<Array2<f64>>;
}

/// Gradient of a scalar loss with respect to one sequence's log-prob rows.
pub struct SeqRowGrad {
    pub ids: Vec<u32>,
    /// Shape `(ids.len() + 1, K)`; rows the loss does not touch stay zero.
    pub d_rows: Array2<f64>,
}

impl SeqRowGrad {
    pub fn zeros(ids: &[u32], vocab_size: usize) -> Self {
        Self { ids: ids.to_vec(), d_rows: Array2::zeros((ids.len() + 1, vocab_size)) }
    }
}

/// A scalar loss that is differentiable with respect to model parameters
/// through the log-prob rows of the sequences it scores.
pub trait Objective {
    /// Loss value and row gradients. Implementations must obtain rows only
    /// through `scorer` so that models can cache forward passes.
    fn eval(&self, scorer: &dyn SequenceScorer) -> Result<(f64, Vec<SeqRowGrad>)>;
}

/// A scorer whose parameters the crate can differentiate and optimize.
pub trait DiffModel: SequenceScorer {
    fn num_params(&self) -> usize;
    fn flat(&self) -> &[f64];
    fn flat_mut(&mut self) -> &mut [f64];

    /// Loss value and flat parameter gradient for `obj`.
    fn value_and_grad(&self, obj: &dyn Objective) -> Result<(f64, Vec<f64>)>;
}

/// Gradient of `obj` with the same shape as the model's flat parameters.
pub fn grad(model: &impl DiffModel, obj: &dyn Objective) -> Result<Vec<f64>> {
    Ok(model.value_and_grad(obj)?.1)
}

/// Chain rule through a row of log-softmax: converts `d(loss)/d(rows)` into
/// `d(loss)/d(logits)` given the row probabilities.
pub(crate) fn d_logits_from_d_rows(probs: &Array2<f64>, d_rows: &Array2<f64>) -> Array2<f64> {
    debug_assert_eq!(probs.dim(), d_rows.dim());
    let (n, k) = probs.dim();
    let mut out = Array2::zeros((n, k));
    for i in 0..n {
        let s: f64 = d_rows.row(i).sum();
        if s == 0.0 && d_rows.row(i).iter().all(|&x| x == 0.0) {
            continue;
        }
        for j in 0..k {
            out[[i, j]] = d_rows[[i, j]] - probs[[i, j]] * s;
        }
    }
    out
}

/// Memoizes forward passes so an objective evaluation and the following
/// backward pass share one forward per distinct sequence.
struct CachingScorer<'a> {
    model: &'a ModelParams,
    caches: RefCell<HashMap<Vec<u32>, std::rc::Rc<Cache>>>,
}

impl<'a> CachingScorer<'a> {
    fn cache_for(&self, ids: &[u32]) -> Result<std::rc::Rc<Cache>> {
        if let Some(c) = self.caches.borrow().get(ids) {
            return Ok(c.clone());
        }
        let c = std::rc::Rc::new(self.model.forward_cached(ids)?);
        self.caches.borrow_mut().insert(ids.to_vec(), c.clone());
        Ok(c)
    }
}

impl SequenceScorer for CachingScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config().vocab_size
    }

    fn score_rows(&self, ids: &[u32]) -> Result<Array2<f64>> {
        Ok(self.cache_for(ids)?.rows.clone())
    }
}

impl SequenceScorer for ModelParams {
    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }

    fn score_rows(&self, ids: &[u32]) -> Result<Array2<f64>> {
        Ok(self.forward_cached(ids)?.rows)
    }
}

impl DiffModel for ModelParams {
    fn num_params(&self) -> usize {
        self.flat().len()
    }

    fn flat(&self) -> &[f64] {
        ModelParams::flat(self)
    }

    fn flat_mut(&mut self) -> &mut [f64] {
        ModelParams::flat_mut(self)
    }

    fn value_and_grad(&self, obj: &dyn Objective) -> Result<(f64, Vec<f64>)> {
        let scorer = CachingScorer { model: self, caches: RefCell::new(HashMap::new()) };
        let (value, row_grads) = obj.eval(&scorer)?;
        if !value.is_finite() {
            return Err(Error::numeric(format!("loss value {value}"), None));
        }
        let mut grads = Grads::zeros(self.num_params());
        for rg in row_grads {
            let cache = scorer.cache_for(&rg.ids)?;
            let d_logits = d_logits_from_d_rows(&cache.probs, &rg.d_rows);
            self.backward(&cache, &d_logits, &mut grads);
        }
        Ok((value, grads.0))
    }
}

/// Mean over sequences of the negative log-likelihood of the selected
/// region (per-sequence NLL is the sum over the region's tokens).
pub struct NllObjective {
    pub seqs: Vec<TokenSeq>,
    pub region: Region,
}

impl Objective for NllObjective {
    fn eval(&self, scorer: &dyn SequenceScorer) -> Result<(f64, Vec<SeqRowGrad>)> {
        if self.seqs.is_empty() {
            return Err(Error::invalid("NLL objective needs a non-empty batch"));
        }
        let k = scorer.vocab_size();
        let w = 1.0 / self.seqs.len() as f64;
        let mut total = 0.0;
        let mut grads = Vec::with_capacity(self.seqs.len());
        for seq in &self.seqs {
            let range = seq.region_range(self.region);
            if range.is_empty() {
                return Err(Error::invalid("region selects no positions"));
            }
            let rows = scorer.score_rows(seq.ids())?;
            let mut rg = SeqRowGrad::zeros(seq.ids(), k);
            for t in range {
                let tok = seq.ids()[t] as usize;
                total -= w * rows[[t, tok]];
                rg.d_rows[[t, tok]] -= w;
            }
            grads.push(rg);
        }
        Ok((total, grads))
    }
}

/// Scaled sum of sub-objectives; used to combine forget and regularization
/// terms into one method loss.
pub struct WeightedObjective<'a> {
    pub terms: Vec<(f64, Box<dyn Objective + 'a>)>,
}

impl Objective for WeightedObjective<'_> {
    fn eval(&self, scorer: &dyn SequenceScorer) -> Result<(f64, Vec<SeqRowGrad>)> {
        let mut total = 0.0;
        let mut grads: Vec<SeqRowGrad> = Vec::new();
        for (weight, term) in &self.terms {
            let (v, gs) = term.eval(scorer)?;
            total += weight * v;
            for mut g in gs {
                g.d_rows.mapv_inplace(|x| x * weight);
                grads.push(g);
            }
        }
        Ok((total, grads))
    }
}
