//! Forward pass of the causal transformer.
//!
//! The model prepends an internal begin marker, so an input of `T` tokens
//! yields `T + 1` log-distribution rows: row `t < T` is the predicted
//! distribution for token `t` given the tokens before it, and row `T` is the
//! distribution of the continuation after the whole input. Every intermediate
//! needed by the backward pass is kept in a [`Cache`].

use ndarray::{s, Array1, Array2};

use crate::error::{Error, Result};
use crate::vocab::{Region, TokenSeq, BOS};

use super::params::ModelParams;

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_deriv(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Layer-norm statistics and output for one activation matrix.
pub(crate) struct LnCache {
    pub rstd: Array1<f64>,
    /// Normalized activations before gain/shift.
    pub xhat: Array2<f64>,
    pub out: Array2<f64>,
}

pub(crate) fn layer_norm(x: &Array2<f64>, gamma: &[f64], beta: &[f64]) -> LnCache {
    let (n, d) = x.dim();
    let mut rstd = Array1::zeros(n);
    let mut xhat = Array2::zeros((n, d));
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        let row = x.row(i);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (x[[i, j]] - mean) * r;
            xhat[[i, j]] = h;
            out[[i, j]] = gamma[j] * h + beta[j];
        }
    }
    LnCache { rstd, xhat, out }
}

pub(crate) struct BlockCache {
    pub ln1: LnCache,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Per-head causal attention weights, each (N, N) lower-triangular rows.
    pub att: Vec<Array2<f64>>,
    /// Concatenated head outputs before the output projection.
    pub att_concat: Array2<f64>,
    pub ln2: LnCache,
    /// Pre-GELU MLP activations.
    pub mlp_pre: Array2<f64>,
    /// Post-GELU MLP activations.
    pub mlp_act: Array2<f64>,
}

pub(crate) struct Cache {
    /// Model input including the begin marker.
    pub input_ids: Vec<u32>,
    pub blocks: Vec<BlockCache>,
    pub lnf: LnCache,
    /// Per-row softmax probabilities of the logits.
    pub probs: Array2<f64>,
    /// Per-row log-softmax of the logits.
    pub rows: Array2<f64>,
}

fn add_bias(x: &mut Array2<f64>, b: &[f64]) {
    for mut row in x.rows_mut() {
        for (v, bi) in row.iter_mut().zip(b) {
            *v += bi;
        }
    }
}

impl ModelParams {
    /// Runs the transformer on `ids` and returns `ids.len() + 1` rows of
    /// log-probabilities together with the cache for the backward pass.
    pub(crate) fn forward_cached(&self, ids: &[u32]) -> Result<Cache> {
        let cfg = self.config();
        let (k_total, d, h) = (cfg.vocab_size, cfg.d_model, cfg.n_heads);
        let dh = d / h;
        let n = ids.len() + 1;
        if ids.is_empty() {
            return Err(Error::invalid("forward pass needs a non-empty sequence"));
        }
        if n > cfg.context {
            return Err(Error::invalid(format!(
                "sequence length {} exceeds context {}",
                ids.len(),
                cfg.context - 1
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= k_total) {
            return Err(Error::invalid(format!("token id {bad} out of vocabulary range")));
        }

        let mut input_ids = Vec::with_capacity(n);
        input_ids.push(BOS);
        input_ids.extend_from_slice(ids);

        let l = self.layout().clone();
        let wte = self.view(&l.wte, k_total, d);
        let wpe = self.view(&l.wpe, cfg.context, d);
        let mut x = Array2::zeros((n, d));
        for (i, &tok) in input_ids.iter().enumerate() {
            for j in 0..d {
                x[[i, j]] = wte[[tok as usize, j]] + wpe[[i, j]];
            }
        }

        let scale = 1.0 / (dh as f64).sqrt();
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for bl in &l.blocks {
            let x_in = x.clone();
            let ln1 = layer_norm(&x_in, self.vec1(&bl.ln1_gamma), self.vec1(&bl.ln1_beta));

            let mut q = ln1.out.dot(&self.view(&bl.wq, d, d));
            add_bias(&mut q, self.vec1(&bl.bq));
            let mut k = ln1.out.dot(&self.view(&bl.wk, d, d));
            add_bias(&mut k, self.vec1(&bl.bk));
            let mut v = ln1.out.dot(&self.view(&bl.wv, d, d));
            add_bias(&mut v, self.vec1(&bl.bv));

            let mut att = Vec::with_capacity(h);
            let mut att_concat = Array2::zeros((n, d));
            for head in 0..h {
                let cols = head * dh..(head + 1) * dh;
                let qh = q.slice(s![.., cols.clone()]);
                let kh = k.slice(s![.., cols.clone()]);
                let vh = v.slice(s![.., cols.clone()]);
                let mut p = Array2::zeros((n, n));
                for i in 0..n {
                    // Causal: position i attends to positions 0..=i.
                    let mut maxs = f64::NEG_INFINITY;
                    for t in 0..=i {
                        let sc = scale * qh.row(i).dot(&kh.row(t));
                        p[[i, t]] = sc;
                        maxs = maxs.max(sc);
                    }
                    let mut denom = 0.0;
                    for t in 0..=i {
                        let e = (p[[i, t]] - maxs).exp();
                        p[[i, t]] = e;
                        denom += e;
                    }
                    for t in 0..=i {
                        p[[i, t]] /= denom;
                    }
                }
                for i in 0..n {
                    for (jj, c) in cols.clone().enumerate() {
                        let mut acc = 0.0;
                        for t in 0..=i {
                            acc += p[[i, t]] * vh[[t, jj]];
                        }
                        att_concat[[i, c]] = acc;
                    }
                }
                att.push(p);
            }

            let mut att_proj = att_concat.dot(&self.view(&bl.wo, d, d));
            add_bias(&mut att_proj, self.vec1(&bl.bo));
            let x_mid = &x_in + &att_proj;

            let ln2 = layer_norm(&x_mid, self.vec1(&bl.ln2_gamma), self.vec1(&bl.ln2_beta));
            let dff = cfg.d_ff();
            let mut mlp_pre = ln2.out.dot(&self.view(&bl.w1, d, dff));
            add_bias(&mut mlp_pre, self.vec1(&bl.b1));
            let mlp_act = mlp_pre.mapv(gelu);
            let mut mlp_out = mlp_act.dot(&self.view(&bl.w2, dff, d));
            add_bias(&mut mlp_out, self.vec1(&bl.b2));
            x = &x_mid + &mlp_out;

            blocks.push(BlockCache { ln1, q, k, v, att, att_concat, ln2, mlp_pre, mlp_act });
        }

        let lnf = layer_norm(&x, self.vec1(&l.lnf_gamma), self.vec1(&l.lnf_beta));
        let wout_range = self.wout_range();
        let logits = if cfg.tied_output {
            lnf.out.dot(&self.view(&wout_range, k_total, d).t())
        } else {
            lnf.out.dot(&self.view(&wout_range, d, k_total))
        };

        let mut rows = Array2::zeros((n, k_total));
        let mut probs = Array2::zeros((n, k_total));
        for i in 0..n {
            let row = logits.row(i);
            let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = maxv + row.iter().map(|z| (z - maxv).exp()).sum::<f64>().ln();
            for j in 0..k_total {
                let r = logits[[i, j]] - lse;
                rows[[i, j]] = r;
                probs[[i, j]] = r.exp();
            }
        }

        Ok(Cache { input_ids, blocks, lnf, probs, rows })
    }

    /// Per-position log-distributions `P_t` over the vocabulary: row `t` is
    /// the model's distribution for `seq[t]` given the preceding tokens.
    pub fn forward_logprobs(&self, seq: &TokenSeq) -> Result<Array2<f64>> {
        let cache = self.forward_cached(seq.ids())?;
        Ok(cache.rows.slice(s![..seq.len(), ..]).to_owned())
    }

    /// Log-probability of the tokens in `region`, i.e. the sum of the
    /// selected per-token log-probabilities.
    pub fn sequence_logprob(&self, seq: &TokenSeq, region: Region) -> Result<f64> {
        let range = seq.region_range(region);
        if range.is_empty() {
            return Err(Error::invalid("region selects no positions"));
        }
        let rows = self.forward_logprobs(seq)?;
        Ok(range.map(|t| rows[[t, seq.ids()[t] as usize]]).sum())
    }
}
