//! Scaled dot-product attention with a re-scalable temperature.
//!
//! Scores are `Q Kᵀ / (k·√d)` where `d` is the head dimension and `k ≥ 1`
//! flattens the softmax. `k = 1` is ordinary attention.

use ndarray::{s, Array2, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::AttentionWeights;
use super::Real;
use crate::error::{Error, Result};

/// Attention temperature multiplier, always `≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AttentionScale(f64);

impl AttentionScale {
    pub const UNIT: AttentionScale = AttentionScale(1.0);

    pub fn new(k: f64) -> Result<Self> {
        if !k.is_finite() || k < 1.0 {
            return Err(Error::config("attention scale", format!("{k} must be a finite value >= 1")));
        }
        Ok(Self(k))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for AttentionScale {
    fn default() -> Self {
        Self::UNIT
    }
}

impl TryFrom<f64> for AttentionScale {
    type Error = Error;
    fn try_from(k: f64) -> Result<Self> {
        Self::new(k)
    }
}

impl From<AttentionScale> for f64 {
    fn from(s: AttentionScale) -> f64 {
        s.0
    }
}

/// Draw `k ~ U(1, gamma)`. `gamma = 1` always yields 1.
pub fn sample_attention_scale<R: Rng>(gamma: f64, rng: &mut R) -> Result<AttentionScale> {
    if !gamma.is_finite() || gamma < 1.0 {
        return Err(Error::config("gamma", format!("{gamma} must be >= 1")));
    }
    let u: f64 = rng.random();
    Ok(AttentionScale(1.0 + u * (gamma - 1.0)))
}

/// Row-wise softmax of `scores * factor` in place; `masked[i][j]` entries
/// get zero weight.
fn softmax_rows<T: Real>(scores: &mut Array2<T>, factor: T, masked: impl Fn(usize, usize) -> bool) {
    for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
        let mut max = T::neg_infinity();
        for (j, v) in row.iter_mut().enumerate() {
            if masked(i, j) {
                *v = T::neg_infinity();
            } else {
                *v = *v * factor;
                if *v > max {
                    max = *v;
                }
            }
        }
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = if *v == T::neg_infinity() { T::zero() } else { (*v - max).exp() };
            sum += *v;
        }
        row.mapv_inplace(|v| v / sum);
    }
}

/// Attention weights `softmax(Q Kᵀ / (k·√d))` for one head.
pub fn attention_weights<T: Real>(
    queries: &ArrayView2<T>,
    keys: &ArrayView2<T>,
    scale: AttentionScale,
    masked: impl Fn(usize, usize) -> bool,
) -> Array2<T> {
    let d = queries.ncols() as f64;
    let factor = T::lit(1.0 / (scale.value() * d.sqrt()));
    let mut scores = queries.dot(&keys.t());
    softmax_rows(&mut scores, factor, masked);
    scores
}

/// Single-head attention with an explicit mask (`true` = blocked).
pub fn scaled_attention<T: Real>(
    queries: &Array2<T>,
    keys: &Array2<T>,
    values: &Array2<T>,
    scale: AttentionScale,
    mask: &Array2<bool>,
) -> Result<Array2<T>> {
    if queries.ncols() != keys.ncols() {
        return Err(Error::Shape(format!(
            "query width {} != key width {}",
            queries.ncols(),
            keys.ncols()
        )));
    }
    if keys.nrows() != values.nrows() {
        return Err(Error::Shape(format!(
            "{} keys but {} values",
            keys.nrows(),
            values.nrows()
        )));
    }
    if mask.dim() != (queries.nrows(), keys.nrows()) {
        return Err(Error::Shape(format!(
            "mask {:?} does not match scores ({}, {})",
            mask.dim(),
            queries.nrows(),
            keys.nrows()
        )));
    }
    for (name, m) in [("queries", queries), ("keys", keys), ("values", values)] {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name.into()));
        }
    }
    if mask.rows().into_iter().any(|r| r.iter().all(|&b| b)) {
        return Err(Error::Shape("a mask row blocks every key".into()));
    }
    let weights = attention_weights(&queries.view(), &keys.view(), scale, |i, j| mask[[i, j]]);
    Ok(weights.dot(values))
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionCache<T> {
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    context: Array2<T>,
}

impl<T: Real> AttentionWeights<T> {
    /// Multi-head attention of `xq` over `xkv`.
    pub(crate) fn forward(
        &self,
        xq: &Array2<T>,
        xkv: &Array2<T>,
        heads: usize,
        causal: bool,
        scale: AttentionScale,
    ) -> (Array2<T>, AttentionCache<T>) {
        let q = self.q.forward(xq);
        let k = self.k.forward(xkv);
        let v = self.v.forward(xkv);
        let d = q.ncols();
        let dh = d / heads;
        let mut context = Array2::zeros((q.nrows(), d));
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let p = attention_weights(&q.slice(cols), &k.slice(cols), scale, |i, j| causal && j > i);
            context.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
            probs.push(p);
        }
        let out = self.o.forward(&context);
        (out, AttentionCache { q, k, v, probs, context })
    }

    /// Returns `(dL/dxq, dL/dxkv)`.
    pub(crate) fn backward(
        &self,
        xq: &Array2<T>,
        xkv: &Array2<T>,
        cache: &AttentionCache<T>,
        dout: &Array2<T>,
        scale: AttentionScale,
        grad: &mut AttentionWeights<T>,
    ) -> (Array2<T>, Array2<T>) {
        let dcontext = self.o.backward(&cache.context, dout, &mut grad.o);
        let d = cache.q.ncols();
        let heads = cache.probs.len();
        let dh = d / heads;
        let factor = T::lit(1.0 / (scale.value() * (dh as f64).sqrt()));
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dctx = dcontext.slice(cols);
            let dp = dctx.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&dctx));
            // softmax backward: dS = P ⊙ (dP − rowsum(dP ⊙ P))
            let mut ds = dp;
            Zip::from(ds.rows_mut()).and(p.rows()).for_each(|mut dr, pr| {
                let dot = dr.iter().zip(pr.iter()).map(|(&a, &b)| a * b).sum::<T>();
                Zip::from(&mut dr).and(&pr).for_each(|x, &pv| *x = pv * (*x - dot) * factor);
            });
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let dxq = self.q.backward(xq, &dq, &mut grad.q);
        let mut dxkv = self.k.backward(xkv, &dk, &mut grad.k);
        dxkv += &self.v.backward(xkv, &dv, &mut grad.v);
        (dxq, dxkv)
    }
}
