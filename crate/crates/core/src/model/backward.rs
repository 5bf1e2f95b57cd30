//! Reverse pass of the causal transformer.
//!
//! Given the gradient of a scalar loss with respect to the logits, walks the
//! forward cache backwards and accumulates gradients for every parameter.
//! Correctness is pinned by central finite differences in the test suites.

use ndarray::{s, Array2};

use super::forward::{gelu_deriv, BlockCache, Cache, LnCache};
use super::params::{Grads, ModelParams};

fn layer_norm_backward(
    dout: &Array2<f64>,
    gamma: &[f64],
    cache: &LnCache,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Array2<f64> {
    let (n, d) = dout.dim();
    let mut dx = Array2::zeros((n, d));
    for i in 0..n {
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for j in 0..d {
            let dh = dout[[i, j]] * gamma[j];
            m1 += dh;
            m2 += dh * cache.xhat[[i, j]];
            dgamma[j] += dout[[i, j]] * cache.xhat[[i, j]];
            dbeta[j] += dout[[i, j]];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        for j in 0..d {
            let dh = dout[[i, j]] * gamma[j];
            dx[[i, j]] = cache.rstd[i] * (dh - m1 - cache.xhat[[i, j]] * m2);
        }
    }
    dx
}

fn add_colsum(dst: &mut [f64], m: &Array2<f64>) {
    for row in m.rows() {
        for (d, v) in dst.iter_mut().zip(row) {
            *d += v;
        }
    }
}

impl ModelParams {
    /// Accumulates `d(loss)/d(params)` into `grads` from `d(loss)/d(logits)`.
    pub(crate) fn backward(&self, cache: &Cache, d_logits: &Array2<f64>, grads: &mut Grads) {
        let cfg = self.config();
        let (k_total, d, h) = (cfg.vocab_size, cfg.d_model, cfg.n_heads);
        let (dh, dff) = (d / h, cfg.d_ff());
        let n = cache.input_ids.len();
        let l = self.layout().clone();
        let wout_range = self.wout_range();

        // Output head.
        let dhf = if cfg.tied_output {
            let wte = self.view(&wout_range, k_total, d);
            let dhf = d_logits.dot(&wte);
            let dwte_head = d_logits.t().dot(&cache.lnf.out);
            let mut g = grads.view_mut(&wout_range, k_total, d);
            g += &dwte_head;
            dhf
        } else {
            let wout = self.view(&wout_range, d, k_total);
            let dhf = d_logits.dot(&wout.t());
            let dwout = cache.lnf.out.t().dot(d_logits);
            let mut g = grads.view_mut(&wout_range, d, k_total);
            g += &dwout;
            dhf
        };

        // Final layer norm.
        let mut dgamma_f = vec![0.0; d];
        let mut dbeta_f = vec![0.0; d];
        let mut dx = layer_norm_backward(&dhf, self.vec1(&l.lnf_gamma), &cache.lnf, &mut dgamma_f, &mut dbeta_f);
        for (g, v) in grads.vec1_mut(&l.lnf_gamma).iter_mut().zip(&dgamma_f) {
            *g += v;
        }
        for (g, v) in grads.vec1_mut(&l.lnf_beta).iter_mut().zip(&dbeta_f) {
            *g += v;
        }

        let scale = 1.0 / (dh as f64).sqrt();
        for (bl, bc) in l.blocks.iter().zip(&cache.blocks).rev() {
            dx = self.block_backward(bl, bc, &dx, n, d, h, dh, dff, scale, grads);
        }

        // Embeddings.
        let mut dwte = grads.view_mut(&l.wte, k_total, d);
        for (i, &tok) in cache.input_ids.iter().enumerate() {
            for j in 0..d {
                dwte[[tok as usize, j]] += dx[[i, j]];
            }
        }
        let mut dwpe = grads.view_mut(&l.wpe, cfg.context, d);
        for i in 0..n {
            for j in 0..d {
                dwpe[[i, j]] += dx[[i, j]];
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn block_backward(
        &self,
        bl: &super::params::BlockLayout,
        bc: &BlockCache,
        dx_out: &Array2<f64>,
        n: usize,
        d: usize,
        h: usize,
        dh: usize,
        dff: usize,
        scale: f64,
        grads: &mut Grads,
    ) -> Array2<f64> {
        // MLP sub-layer: x_out = x_mid + W2·gelu(W1·ln2(x_mid) + b1) + b2.
        let dmlp_out = dx_out;
        let mut dx_mid = dx_out.clone();

        let dmlp_act = dmlp_out.dot(&self.view(&bl.w2, dff, d).t());
        {
            let dw2 = bc.mlp_act.t().dot(dmlp_out);
            let mut g = grads.view_mut(&bl.w2, dff, d);
            g += &dw2;
        }
        add_colsum(grads.vec1_mut(&bl.b2), dmlp_out);

        let mut dmlp_pre = dmlp_act;
        for i in 0..n {
            for j in 0..dff {
                dmlp_pre[[i, j]] *= gelu_deriv(bc.mlp_pre[[i, j]]);
            }
        }
        {
            let dw1 = bc.ln2.out.t().dot(&dmlp_pre);
            let mut g = grads.view_mut(&bl.w1, d, dff);
            g += &dw1;
        }
        add_colsum(grads.vec1_mut(&bl.b1), &dmlp_pre);
        let dln2_out = dmlp_pre.dot(&self.view(&bl.w1, d, dff).t());

        let mut dgamma2 = vec![0.0; d];
        let mut dbeta2 = vec![0.0; d];
        let dx_mid_ln =
            layer_norm_backward(&dln2_out, self.vec1(&bl.ln2_gamma), &bc.ln2, &mut dgamma2, &mut dbeta2);
        dx_mid += &dx_mid_ln;
        for (g, v) in grads.vec1_mut(&bl.ln2_gamma).iter_mut().zip(&dgamma2) {
            *g += v;
        }
        for (g, v) in grads.vec1_mut(&bl.ln2_beta).iter_mut().zip(&dbeta2) {
            *g += v;
        }

        // Attention sub-layer: x_mid = x_in + Wo·attn(ln1(x_in)) + bo.
        let datt_proj = &dx_mid;
        let mut dx_in = dx_mid.clone();

        let datt_concat = datt_proj.dot(&self.view(&bl.wo, d, d).t());
        {
            let dwo = bc.att_concat.t().dot(datt_proj);
            let mut g = grads.view_mut(&bl.wo, d, d);
            g += &dwo;
        }
        add_colsum(grads.vec1_mut(&bl.bo), datt_proj);

        let mut dq = Array2::zeros((n, d));
        let mut dk = Array2::zeros((n, d));
        let mut dv = Array2::zeros((n, d));
        for head in 0..h {
            let cols = head * dh..(head + 1) * dh;
            let p = &bc.att[head];
            let do_h = datt_concat.slice(s![.., cols.clone()]);
            let qh = bc.q.slice(s![.., cols.clone()]);
            let kh = bc.k.slice(s![.., cols.clone()]);
            let vh = bc.v.slice(s![.., cols.clone()]);

            // dv_h = P^T · do_h (P is zero above the causal diagonal).
            let dvh = p.t().dot(&do_h);
            // dP = do_h · v_h^T, then softmax-row backward.
            let dp = do_h.dot(&vh.t());
            let mut ds = Array2::zeros((n, n));
            for i in 0..n {
                let mut dot = 0.0;
                for t in 0..=i {
                    dot += dp[[i, t]] * p[[i, t]];
                }
                for t in 0..=i {
                    ds[[i, t]] = p[[i, t]] * (dp[[i, t]] - dot);
                }
            }
            let dqh = ds.dot(&kh).mapv(|x| x * scale);
            let dkh = ds.t().dot(&qh).mapv(|x| x * scale);
            for i in 0..n {
                for (jj, c) in cols.clone().enumerate() {
                    dq[[i, c]] = dqh[[i, jj]];
                    dk[[i, c]] = dkh[[i, jj]];
                    dv[[i, c]] = dvh[[i, jj]];
                }
            }
        }

        let mut dln1_out = dq.dot(&self.view(&bl.wq, d, d).t());
        dln1_out += &dk.dot(&self.view(&bl.wk, d, d).t());
        dln1_out += &dv.dot(&self.view(&bl.wv, d, d).t());
        for (w, b, dm) in [(&bl.wq, &bl.bq, &dq), (&bl.wk, &bl.bk, &dk), (&bl.wv, &bl.bv, &dv)] {
            let dw = bc.ln1.out.t().dot(dm);
            let mut g = grads.view_mut(w, d, d);
            g += &dw;
            add_colsum(grads.vec1_mut(b), dm);
        }

        let mut dgamma1 = vec![0.0; d];
        let mut dbeta1 = vec![0.0; d];
        let dx_in_ln =
            layer_norm_backward(&dln1_out, self.vec1(&bl.ln1_gamma), &bc.ln1, &mut dgamma1, &mut dbeta1);
        dx_in += &dx_in_ln;
        for (g, v) in grads.vec1_mut(&bl.ln1_gamma).iter_mut().zip(&dgamma1) {
            *g += v;
        }
        for (g, v) in grads.vec1_mut(&bl.ln1_beta).iter_mut().zip(&dbeta1) {
            *g += v;
        }

        dx_in
    }
}
