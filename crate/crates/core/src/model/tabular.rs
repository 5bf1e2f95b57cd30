//! Tabular bigram language model.
//!
//! A per-context conditional probability table for contexts of length at most
//! one, parameterized by logits so that it stays differentiable. It serves as
//! an analytic oracle: its gradients have a short closed form against which
//! the loss machinery is verified independently of the transformer.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::objective::{d_logits_from_d_rows, DiffModel, Objective, SequenceScorer};

/// Bigram model over a vocabulary of size `k`: one logit row per previous
/// token plus one row for the empty (start) context.
#[derive(Debug, Clone)]
pub struct TabularLm {
    k: usize,
    /// `(k + 1) * k` logits, row-major; row `k` is the start context.
    logits: Vec<f64>,
}

impl TabularLm {
    pub fn new_uniform(k: usize) -> Self {
        Self { k, logits: vec![0.0; (k + 1) * k] }
    }

    pub fn from_logits(k: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != (k + 1) * k {
            return Err(Error::invalid(format!(
                "expected {} logits for k = {k}, got {}",
                (k + 1) * k,
                logits.len()
            )));
        }
        Ok(Self { k, logits })
    }

    /// Near-deterministic chain: context `a` puts almost all mass on `b` for
    /// every listed pair (and the start row on `start`).
    pub fn chain(k: usize, start: u32, pairs: &[(u32, u32)], strength: f64) -> Self {
        let mut lm = Self::new_uniform(k);
        lm.set_peak(None, start, strength);
        for &(a, b) in pairs {
            lm.set_peak(Some(a), b, strength);
        }
        lm
    }

    fn set_peak(&mut self, ctx: Option<u32>, tok: u32, strength: f64) {
        let row = ctx.map(|c| c as usize).unwrap_or(self.k);
        self.logits[row * self.k + tok as usize] = strength;
    }

    fn row_index(&self, prev: Option<u32>) -> usize {
        prev.map(|p| p as usize).unwrap_or(self.k)
    }

    fn log_row(&self, prev: Option<u32>) -> (Vec<f64>, Vec<f64>) {
        let r = self.row_index(prev);
        let row = &self.logits[r * self.k..(r + 1) * self.k];
        let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = maxv + row.iter().map(|z| (z - maxv).exp()).sum::<f64>().ln();
        let logs: Vec<f64> = row.iter().map(|z| z - lse).collect();
        let probs: Vec<f64> = logs.iter().map(|l| l.exp()).collect();
        (logs, probs)
    }

    /// Conditional probability table; every row is a valid distribution.
    pub fn prob_table(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.k + 1, self.k));
        for r in 0..=self.k {
            let prev = if r == self.k { None } else { Some(r as u32) };
            let (_, probs) = self.log_row(prev);
            for j in 0..self.k {
                out[[r, j]] = probs[j];
            }
        }
        out
    }
}

impl SequenceScorer for TabularLm {
    fn vocab_size(&self) -> usize {
        self.k
    }

    fn score_rows(&self, ids: &[u32]) -> Result<Array2<f64>> {
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= self.k) {
            return Err(Error::invalid(format!("token id {bad} out of vocabulary range")));
        }
        let n = ids.len() + 1;
        let mut rows = Array2::zeros((n, self.k));
        for t in 0..n {
            let prev = if t == 0 { None } else { Some(ids[t - 1]) };
            let (logs, _) = self.log_row(prev);
            for j in 0..self.k {
                rows[[t, j]] = logs[j];
            }
        }
        Ok(rows)
    }
}

impl DiffModel for TabularLm {
    fn num_params(&self) -> usize {
        self.logits.len()
    }

    fn flat(&self) -> &[f64] {
        &self.logits
    }

    fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn value_and_grad(&self, obj: &dyn Objective) -> Result<(f64, Vec<f64>)> {
        let (value, row_grads) = obj.eval(self)?;
        if !value.is_finite() {
            return Err(Error::numeric(format!("loss value {value}"), None));
        }
        let mut grads = vec![0.0; self.logits.len()];
        for rg in row_grads {
            let n = rg.ids.len() + 1;
            let mut probs = Array2::zeros((n, self.k));
            for t in 0..n {
                let prev = if t == 0 { None } else { Some(rg.ids[t - 1]) };
                let (_, p) = self.log_row(prev);
                for j in 0..self.k {
                    probs[[t, j]] = p[j];
                }
            }
            let d_logits = d_logits_from_d_rows(&probs, &rg.d_rows);
            for t in 0..n {
                let prev = if t == 0 { None } else { Some(rg.ids[t - 1]) };
                let r = self.row_index(prev);
                for j in 0..self.k {
                    grads[r * self.k + j] += d_logits[[t, j]];
                }
            }
        }
        Ok((value, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prob_rows_are_distributions() {
        let lm = TabularLm::chain(5, 2, &[(2, 3), (3, 1)], 7.5);
        let table = lm.prob_table();
        for row in table.rows() {
            let s: f64 = row.sum();
            assert!((s - 1.0).abs() < 1e-12, "row sum {s}");
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn score_rows_follow_contexts() {
        let lm = TabularLm::chain(4, 2, &[(2, 3)], 40.0);
        let rows = lm.score_rows(&[2, 3]).unwrap();
        assert_eq!(rows.dim(), (3, 4));
        // Start row concentrates on token 2, context-2 row on token 3.
        assert!(rows[[0, 2]].exp() > 0.99);
        assert!(rows[[1, 3]].exp() > 0.99);
    }
}
