//! Order-invariant encoding of the observed `(index, value)` pairs.
//!
//! Each pair is embedded by a read network, then a recurrent write network
//! attends over the embeddings for a fixed number of processing steps. The
//! output `[q ‖ r]` depends on the set only, not on acquisition order.

use nnkit::{loss::softmax_row, ForwardCache, Matrix, Mlp, MlpConfig, MlpGrads};
use serde::{Deserialize, Serialize};

use crate::env::AcquisitionState;
use crate::error::Result;
use crate::rng::SeededRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetEncoderConfig {
    pub hidden: Vec<usize>,
    pub embedding: usize,
    pub steps: usize,
}

impl Default for SetEncoderConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            embedding: 32,
            steps: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetEncoder {
    pub read: Mlp,
    pub write: Mlp,
    pub num_features: usize,
    pub steps: usize,
}

/// Forward intermediates for [`SetEncoder::backward`].
pub struct SetCache {
    offsets: Vec<usize>,
    embeddings: Matrix,
    read: ForwardCache,
    /// Per step: the query entering the step, attention weights per state,
    /// and the write-network cache.
    queries: Vec<Matrix>,
    attention: Vec<Vec<Vec<f64>>>,
    writes: Vec<ForwardCache>,
}

#[derive(Clone, Debug)]
pub struct SetGrads {
    pub read: MlpGrads,
    pub write: MlpGrads,
}

impl SetGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut s = self.read.slices();
        s.extend(self.write.slices());
        s
    }

    pub fn scale(&mut self, factor: f64) {
        self.read.scale(factor);
        self.write.scale(factor);
    }
}

impl SetEncoder {
    pub fn new(num_features: usize, cfg: &SetEncoderConfig, rng: &mut SeededRng) -> Result<Self> {
        let h = cfg.embedding;
        Ok(Self {
            read: Mlp::new(MlpConfig::new(num_features + 1, &cfg.hidden, h), rng)?,
            write: Mlp::new(MlpConfig::new(2 * h, &cfg.hidden, h), rng)?,
            num_features,
            steps: cfg.steps.max(1),
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.read.output_dim()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.embedding_dim()
    }

    /// One row per observed pair: one-hot index followed by the value.
    fn elements(&self, states: &[AcquisitionState]) -> (Matrix, Vec<usize>) {
        let total: usize = states.iter().map(|s| s.observed.len()).sum();
        let d = self.num_features;
        let mut x = Matrix::zeros(total, d + 1);
        let mut offsets = Vec::with_capacity(states.len() + 1);
        let mut r = 0;
        offsets.push(0);
        for s in states {
            for &i in &s.observed {
                x[(r, i)] = 1.0;
                x[(r, d)] = s.values[i];
                r += 1;
            }
            offsets.push(r);
        }
        (x, offsets)
    }

    pub fn encode(&self, states: &[AcquisitionState]) -> Result<Matrix> {
        Ok(self.forward_cached(states)?.0)
    }

    pub fn forward_cached(&self, states: &[AcquisitionState]) -> Result<(Matrix, SetCache)> {
        let h = self.embedding_dim();
        let n = states.len();
        let (x, offsets) = self.elements(states);
        let (embeddings, read) = self.read.forward_cached::<SeededRng>(&x, None)?;
        let mut q = Matrix::zeros(n, h);
        let mut r = Matrix::zeros(n, h);
        let mut queries = Vec::with_capacity(self.steps);
        let mut attention = Vec::with_capacity(self.steps);
        let mut writes = Vec::with_capacity(self.steps);
        for _ in 0..self.steps {
            let mut att = Vec::with_capacity(n);
            r = Matrix::zeros(n, h);
            for b in 0..n {
                let (lo, hi) = (offsets[b], offsets[b + 1]);
                if lo == hi {
                    att.push(Vec::new());
                    continue;
                }
                let scores: Vec<f64> = (lo..hi).map(|j| dot(embeddings.row(j), q.row(b))).collect();
                let a = softmax_row(&scores);
                let rb = r.row_mut(b);
                for (k, j) in (lo..hi).enumerate() {
                    for (acc, e) in rb.iter_mut().zip(embeddings.row(j)) {
                        *acc += a[k] * e;
                    }
                }
                att.push(a);
            }
            let (next, cache) = self.write.forward_cached::<SeededRng>(&q.hcat(&r)?, None)?;
            queries.push(q);
            attention.push(att);
            writes.push(cache);
            q = next;
        }
        let out = q.hcat(&r)?;
        Ok((
            out,
            SetCache {
                offsets,
                embeddings,
                read,
                queries,
                attention,
                writes,
            },
        ))
    }

    /// Parameter gradients given `d loss / d [q ‖ r]`.
    pub fn backward(&self, cache: &SetCache, grad_out: &Matrix) -> Result<SetGrads> {
        let h = self.embedding_dim();
        let n = grad_out.rows();
        let (mut gq, gr_out) = grad_out.split_cols(h);
        let e = &cache.embeddings;
        let mut de = Matrix::zeros(e.rows(), h);
        let mut write_grads = MlpGrads::zeros_like(&self.write);
        for t in (0..self.steps).rev() {
            let (gw, ginp) = self.write.backward(&cache.writes[t], &gq)?;
            write_grads.add_assign(&gw);
            let (mut gq_prev, mut gr) = ginp.split_cols(h);
            if t + 1 == self.steps {
                gr.add_assign(&gr_out)?;
            }
            let q_prev = &cache.queries[t];
            for b in 0..n {
                let (lo, hi) = (cache.offsets[b], cache.offsets[b + 1]);
                if lo == hi {
                    continue;
                }
                let a = &cache.attention[t][b];
                let grb = gr.row(b);
                let ga: Vec<f64> = (lo..hi).map(|j| dot(e.row(j), grb)).collect();
                let mean: f64 = a.iter().zip(&ga).map(|(x, y)| x * y).sum();
                for (k, j) in (lo..hi).enumerate() {
                    let gs = a[k] * (ga[k] - mean);
                    let row = de.row_mut(j);
                    for c in 0..h {
                        row[c] += a[k] * grb[c] + gs * q_prev[(b, c)];
                    }
                    let gqb = gq_prev.row_mut(b);
                    for (g, ev) in gqb.iter_mut().zip(e.row(j)) {
                        *g += gs * ev;
                    }
                }
            }
            gq = gq_prev;
        }
        let (read_grads, _) = self.read.backward(&cache.read, &de)?;
        Ok(SetGrads {
            read: read_grads,
            write: write_grads,
        })
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut p = self.read.params();
        p.extend(self.write.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.read.params_mut();
        p.extend(self.write.params_mut());
        p
    }

    pub fn soft_update_from(&mut self, source: &SetEncoder, tau: f64) -> Result<()> {
        self.read.soft_update_from(&source.read, tau)?;
        self.write.soft_update_from(&source.write, tau)?;
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
