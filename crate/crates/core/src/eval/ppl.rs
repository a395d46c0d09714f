use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::gaussian::{log_mean_exp, standard_normal};
use crate::model::Model;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplBound {
    pub k: usize,
    /// Per-sentence NLL upper bounds, in nats.
    pub nll: Vec<f64>,
    /// Predicted tokens, EOS included.
    pub tokens: usize,
    pub ppl: f64,
}

impl PplBound {
    pub fn mean_nll(&self) -> f64 {
        self.nll.iter().sum::<f64>() / self.nll.len() as f64
    }
}

/// Importance-sampled bound
/// `-ln (1/K) sum_k p(s|z_k) p(z_k) / q(z_k|s)` with `z_k ~ q(z|s)`.
pub fn ppl_upper_bound(model: &Model, rows: &[&[usize]], k: usize, seed: u64) -> Result<PplBound> {
    if k == 0 {
        return Err(Error::Config("need at least one importance sample".into()));
    }
    if rows.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let posts = model.posterior(rows)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = vec![Vec::with_capacity(k); rows.len()];
    for _ in 0..k {
        let mut decoder_z: Vec<Matrix> = Vec::with_capacity(rows.len());
        let mut log_w = Vec::with_capacity(rows.len());
        for p in &posts {
            let mut levels = Vec::with_capacity(p.levels.len());
            let mut log_q = 0.0;
            for s in &p.levels {
                let eps = standard_normal(&mut rng, s.mu.nrows(), s.mu.ncols());
                let z = s.sample_latent(&eps);
                log_q += s.log_density(&z);
                levels.push(z);
            }
            log_w.push(model.prior_log_density(&levels) - log_q);
            decoder_z.push(levels.pop().unwrap());
        }
        let refs: Vec<&Matrix> = decoder_z.iter().collect();
        let log_px = model.sentence_log_probs(rows, &refs);
        for (b, lp) in log_px.into_iter().enumerate() {
            weights[b].push(lp + log_w[b]);
        }
    }
    let nll: Vec<f64> = weights.iter().map(|w| -log_mean_exp(w)).collect();
    let tokens: usize = rows.iter().map(|r| r.len() + 1).sum();
    let ppl = (nll.iter().sum::<f64>() / tokens as f64).exp();
    Ok(PplBound { k, nll, tokens, ppl })
}
