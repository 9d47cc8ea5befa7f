//! NT-Xent contrastive loss over a batch of `2N` embeddings.
//!
//! For each sample `i` with positive partner `p(i)`:
//!
//! ```text
//! l_i = -log( exp(s(i, p(i)) / t) / sum_{k != i} exp(s(i, k) / t) )
//! ```
//!
//! with `s` the cosine similarity and `t` the temperature. The loss is the
//! mean of `l_i` over all `2N` samples; every non-partner in the batch acts
//! as a negative.

use crate::error::{Error, Result};

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![u.len()],
            got: vec![v.len()],
        });
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Positive-pair partner of every batch index: an involution without fixed
/// points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pairing(Vec<usize>);

impl Pairing {
    /// Pairs `(0,1), (2,3), ...` for `n_pairs` pairs.
    pub fn adjacent(n_pairs: usize) -> Self {
        Self((0..2 * n_pairs).map(|i| i ^ 1).collect())
    }

    pub fn from_pairs(pairs: &[(usize, usize)]) -> Result<Self> {
        let len = pairs.len() * 2;
        let mut partner = vec![usize::MAX; len];
        for &(a, b) in pairs {
            if a >= len || b >= len || a == b || partner[a] != usize::MAX || partner[b] != usize::MAX {
                return Err(Error::config(format!("invalid pairing {pairs:?}")));
            }
            partner[a] = b;
            partner[b] = a;
        }
        Ok(Self(partner))
    }

    pub fn partner(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn n_pairs(&self) -> usize {
        self.0.len() / 2
    }

    /// Each pair once, as `(smaller, larger)` index.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.len())
            .filter(|&i| i < self.0[i])
            .map(|i| (i, self.0[i]))
            .collect()
    }
}

fn unit_rows<V: AsRef<[f64]>>(embeddings: &[V]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut units = Vec::with_capacity(embeddings.len());
    let mut norms = Vec::with_capacity(embeddings.len());
    for e in embeddings {
        let e = e.as_ref();
        let n = dot(e, e).sqrt();
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        if !n.is_finite() {
            return Err(Error::NonFinite {
                tensor: "embedding".into(),
            });
        }
        units.push(e.iter().map(|v| v / n).collect());
        norms.push(n);
    }
    Ok((units, norms))
}

fn validate(n_embeddings: usize, pairing: &Pairing, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::config(format!("temperature must be positive, got {tau}")));
    }
    if pairing.len() != n_embeddings {
        return Err(Error::config(format!(
            "pairing covers {} samples, batch has {n_embeddings}",
            pairing.len()
        )));
    }
    if pairing.n_pairs() < 2 {
        return Err(Error::config(
            "NT-Xent needs at least 2 pairs so every sample has a negative",
        ));
    }
    Ok(())
}

/// Row-wise softmax over `k != i` of `s(i, k) / tau`, plus the loss.
fn softmax_and_loss(units: &[Vec<f64>], pairing: &Pairing, tau: f64) -> (f64, Vec<Vec<f64>>) {
    let m = units.len();
    let mut probs = vec![vec![0.0; m]; m];
    let mut total = 0.0;
    for i in 0..m {
        let logits: Vec<f64> = (0..m)
            .map(|k| if k == i { f64::NEG_INFINITY } else { dot(&units[i], &units[k]) / tau })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - logits[pairing.partner(i)];
        for k in 0..m {
            probs[i][k] = (logits[k] - lse).exp();
        }
    }
    (total / m as f64, probs)
}

/// The formula without the `N >= 2` precondition.
fn nt_xent_unchecked<V: AsRef<[f64]>>(embeddings: &[V], pairing: &Pairing, tau: f64) -> Result<f64> {
    let (units, _) = unit_rows(embeddings)?;
    Ok(softmax_and_loss(&units, pairing, tau).0)
}

pub fn nt_xent_loss<V: AsRef<[f64]>>(embeddings: &[V], pairing: &Pairing, tau: f64) -> Result<f64> {
    validate(embeddings.len(), pairing, tau)?;
    nt_xent_unchecked(embeddings, pairing, tau)
}

/// Loss and its gradient with respect to each (not necessarily unit) input
/// vector.
pub fn nt_xent_loss_and_grad<V: AsRef<[f64]>>(
    embeddings: &[V],
    pairing: &Pairing,
    tau: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    validate(embeddings.len(), pairing, tau)?;
    let (units, norms) = unit_rows(embeddings)?;
    let (loss, probs) = softmax_and_loss(&units, pairing, tau);
    let m = units.len();
    let dim = units[0].len();
    let scale = 1.0 / (m as f64 * tau);
    let grads = (0..m)
        .map(|i| {
            // d loss / d u_i = scale * sum_k (P_ik + P_ki - 2 [k = p(i)]) u_k
            let mut g = vec![0.0; dim];
            for k in 0..m {
                if k == i {
                    continue;
                }
                let mut coef = probs[i][k] + probs[k][i];
                if k == pairing.partner(i) {
                    coef -= 2.0;
                }
                for (gd, uk) in g.iter_mut().zip(&units[k]) {
                    *gd += scale * coef * uk;
                }
            }
            // through u = x / |x|
            let radial = dot(&g, &units[i]);
            g.iter()
                .zip(&units[i])
                .map(|(gd, ui)| (gd - radial * ui) / norms[i])
                .collect()
        })
        .collect();
    Ok((loss, grads))
}
