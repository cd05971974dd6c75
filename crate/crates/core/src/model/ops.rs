//! Forward and backward kernels over packed sequences.
//!
//! Activations are row-major `[tokens x width]` buffers holding every
//! sequence of a batch back to back; no padding is ever materialized.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::float::{matmul, Scalar};
use super::params::{AttnP, FfnP, LinearP, NormP};

const NORM_EPS: f64 = 1e-5;

/// `(start, len)` of a query sequence and of the key/value sequence it
/// attends over. Several queries may share one key/value range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqPair {
    pub q: (usize, usize),
    pub kv: (usize, usize),
}

pub fn self_pairs(ranges: &[(usize, usize)]) -> Vec<SeqPair> {
    ranges.iter().map(|&r| SeqPair { q: r, kv: r }).collect()
}

pub fn linear_forward<T: Scalar>(x: &[T], n: usize, p: &LinearP, params: &[T]) -> Vec<T> {
    let (din, dout) = (p.w.rows, p.w.cols);
    let mut y = vec![T::zero(); n * dout];
    let b = p.b.of(params);
    for row in y.chunks_exact_mut(dout) {
        row.copy_from_slice(b);
    }
    matmul(&mut y, x, p.w.of(params), n, din, dout, false, false, true);
    y
}

/// Accumulates weight gradients and returns `dx`.
pub fn linear_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    n: usize,
    p: &LinearP,
    params: &[T],
    grads: &mut [T],
) -> Vec<T> {
    let (din, dout) = (p.w.rows, p.w.cols);
    matmul(p.w.of_mut(grads), x, dy, din, n, dout, true, false, true);
    let gb = p.b.of_mut(grads);
    for row in dy.chunks_exact(dout) {
        for (g, v) in gb.iter_mut().zip(row) {
            *g += *v;
        }
    }
    let mut dx = vec![T::zero(); n * din];
    matmul(&mut dx, dy, p.w.of(params), n, dout, din, false, true, false);
    dx
}

#[derive(Debug, Clone)]
pub struct NormCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

pub fn norm_forward<T: Scalar>(x: &[T], d: usize, p: &NormP, params: &[T]) -> (Vec<T>, NormCache<T>) {
    let n = x.len() / d;
    let g = p.gain.of(params);
    let b = p.bias.of(params);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); n];
    let dd = T::of(d as f64);
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() / dd;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dd;
        let rs = T::one() / (var + T::of(NORM_EPS)).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            let h = (row[c] - mean) * rs;
            xhat[r * d + c] = h;
            y[r * d + c] = h * g[c] + b[c];
        }
    }
    (y, NormCache { xhat, rstd })
}

pub fn norm_backward<T: Scalar>(
    dy: &[T],
    cache: &NormCache<T>,
    d: usize,
    p: &NormP,
    params: &[T],
    grads: &mut [T],
) -> Vec<T> {
    let n = dy.len() / d;
    let g = p.gain.of(params);
    let mut dx = vec![T::zero(); dy.len()];
    let dd = T::of(d as f64);
    {
        let gg = p.gain.of_mut(grads);
        for r in 0..n {
            for c in 0..d {
                gg[c] += dy[r * d + c] * cache.xhat[r * d + c];
            }
        }
    }
    {
        let gb = p.bias.of_mut(grads);
        for r in 0..n {
            for c in 0..d {
                gb[c] += dy[r * d + c];
            }
        }
    }
    for r in 0..n {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mut sum_dxh = T::zero();
        let mut sum_dxh_xh = T::zero();
        for c in 0..d {
            let dxh = dyr[c] * g[c];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[c];
        }
        let m1 = sum_dxh / dd;
        let m2 = sum_dxh_xh / dd;
        for c in 0..d {
            let dxh = dyr[c] * g[c];
            dx[r * d + c] = cache.rstd[r] * (dxh - m1 - xh[c] * m2);
        }
    }
    dx
}

#[derive(Debug, Clone)]
pub struct AttnCache<T> {
    q_in: Vec<T>,
    kv_in: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    ctx: Vec<T>,
    pairs: Vec<SeqPair>,
    causal: bool,
}

/// Multi-head scaled dot-product attention. `causal` hides key positions
/// after the query position (requires equal query/key ranges).
#[allow(clippy::too_many_arguments)]
pub fn attention_forward<T: Scalar>(
    q_in: &[T],
    kv_in: &[T],
    pairs: &[SeqPair],
    causal: bool,
    heads: usize,
    p: &AttnP,
    params: &[T],
) -> (Vec<T>, AttnCache<T>) {
    let d = p.q.w.rows;
    let nq = q_in.len() / d;
    let nk = kv_in.len() / d;
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let q = linear_forward(q_in, nq, &p.q, params);
    let k = linear_forward(kv_in, nk, &p.k, params);
    let v = linear_forward(kv_in, nk, &p.v, params);
    let mut ctx = vec![T::zero(); nq * d];
    let total: usize = pairs.iter().map(|s| s.q.1 * s.kv.1).sum::<usize>() * heads;
    let mut probs = vec![T::zero(); total];
    let mut off = 0;
    for s in pairs {
        let (qs, ql) = s.q;
        let (ks, kl) = s.kv;
        for h in 0..heads {
            let hc = h * dh;
            for i in 0..ql {
                let qi = &q[(qs + i) * d + hc..(qs + i) * d + hc + dh];
                let row = &mut probs[off + i * kl..off + (i + 1) * kl];
                let visible = if causal { (i + 1).min(kl) } else { kl };
                let mut max = T::neg_infinity();
                for j in 0..visible {
                    let kj = &k[(ks + j) * d + hc..(ks + j) * d + hc + dh];
                    let sc = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
                    row[j] = sc;
                    if sc > max {
                        max = sc;
                    }
                }
                let mut z = T::zero();
                for r in row.iter_mut().take(visible) {
                    *r = (*r - max).exp();
                    z += *r;
                }
                for r in row.iter_mut().take(visible) {
                    *r /= z;
                }
                for r in row.iter_mut().skip(visible) {
                    *r = T::zero();
                }
                let out = &mut ctx[(qs + i) * d + hc..(qs + i) * d + hc + dh];
                for j in 0..visible {
                    let pj = row[j];
                    let vj = &v[(ks + j) * d + hc..(ks + j) * d + hc + dh];
                    for (o, &vv) in out.iter_mut().zip(vj) {
                        *o += pj * vv;
                    }
                }
            }
            off += ql * kl;
        }
    }
    let out = linear_forward(&ctx, nq, &p.o, params);
    let cache = AttnCache {
        q_in: q_in.to_vec(),
        kv_in: kv_in.to_vec(),
        q,
        k,
        v,
        probs,
        ctx,
        pairs: pairs.to_vec(),
        causal,
    };
    (out, cache)
}

/// Returns `(dq_in, dkv_in)`.
pub fn attention_backward<T: Scalar>(
    dout: &[T],
    cache: &AttnCache<T>,
    heads: usize,
    p: &AttnP,
    params: &[T],
    grads: &mut [T],
) -> (Vec<T>, Vec<T>) {
    let d = p.q.w.rows;
    let nq = cache.q_in.len() / d;
    let nk = cache.kv_in.len() / d;
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let dctx = linear_backward(&cache.ctx, dout, nq, &p.o, params, grads);
    let mut dq = vec![T::zero(); nq * d];
    let mut dk = vec![T::zero(); nk * d];
    let mut dv = vec![T::zero(); nk * d];
    let (q, k, v) = (&cache.q, &cache.k, &cache.v);
    let mut off = 0;
    let mut dp = Vec::new();
    for s in &cache.pairs {
        let (qs, ql) = s.q;
        let (ks, kl) = s.kv;
        dp.resize(kl, T::zero());
        for h in 0..heads {
            let hc = h * dh;
            for i in 0..ql {
                let row = &cache.probs[off + i * kl..off + (i + 1) * kl];
                let visible = if cache.causal { (i + 1).min(kl) } else { kl };
                let dci = &dctx[(qs + i) * d + hc..(qs + i) * d + hc + dh];
                let mut rowdot = T::zero();
                for j in 0..visible {
                    let vj = &v[(ks + j) * d + hc..(ks + j) * d + hc + dh];
                    let g = dci.iter().zip(vj).map(|(&a, &b)| a * b).sum::<T>();
                    dp[j] = g;
                    rowdot += g * row[j];
                    let dvj = &mut dv[(ks + j) * d + hc..(ks + j) * d + hc + dh];
                    for (o, &c) in dvj.iter_mut().zip(dci) {
                        *o += row[j] * c;
                    }
                }
                for j in 0..visible {
                    let ds = row[j] * (dp[j] - rowdot) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    for c in 0..dh {
                        dq[(qs + i) * d + hc + c] += ds * k[(ks + j) * d + hc + c];
                        dk[(ks + j) * d + hc + c] += ds * q[(qs + i) * d + hc + c];
                    }
                }
            }
            off += ql * kl;
        }
    }
    let dq_in = linear_backward(&cache.q_in, &dq, nq, &p.q, params, grads);
    let mut dkv_in = linear_backward(&cache.kv_in, &dk, nk, &p.k, params, grads);
    let dkv_v = linear_backward(&cache.kv_in, &dv, nk, &p.v, params, grads);
    for (a, b) in dkv_in.iter_mut().zip(dkv_v) {
        *a += b;
    }
    (dq_in, dkv_in)
}

#[derive(Debug, Clone)]
pub struct FfnCache<T> {
    x: Vec<T>,
    h: Vec<T>,
}

pub fn ffn_forward<T: Scalar>(x: &[T], p: &FfnP, params: &[T]) -> (Vec<T>, FfnCache<T>) {
    let d = p.up.w.rows;
    let n = x.len() / d;
    let mut h = linear_forward(x, n, &p.up, params);
    h.iter_mut().for_each(|v| *v = v.max(T::zero()));
    let y = linear_forward(&h, n, &p.down, params);
    (y, FfnCache { x: x.to_vec(), h })
}

pub fn ffn_backward<T: Scalar>(dy: &[T], cache: &FfnCache<T>, p: &FfnP, params: &[T], grads: &mut [T]) -> Vec<T> {
    let d = p.up.w.rows;
    let n = cache.x.len() / d;
    let mut dh = linear_backward(&cache.h, dy, n, &p.down, params, grads);
    for (g, &h) in dh.iter_mut().zip(&cache.h) {
        if h <= T::zero() {
            *g = T::zero();
        }
    }
    linear_backward(&cache.x, &dh, n, &p.up, params, grads)
}

/// Inverted dropout in place. Returns the scaled keep-mask, or `None` when
/// nothing was dropped.
pub fn dropout_forward<T: Scalar>(x: &mut [T], rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<T>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    for (v, m) in x.iter_mut().zip(&mask) {
        *v *= *m;
    }
    Some(mask)
}

pub fn dropout_backward<T: Scalar>(dy: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (g, &k) in dy.iter_mut().zip(m) {
            *g *= k;
        }
    }
}

pub fn positional_encoding(pos: usize, c: usize, d: usize) -> f64 {
    let i = (c / 2) as f64;
    let angle = pos as f64 / 10000f64.powf(2.0 * i / d as f64);
    if c % 2 == 0 {
        angle.sin()
    } else {
        angle.cos()
    }
}

/// `x[t] = sqrt(d) * E[id_t] + PE(position of t within its sequence)`.
pub fn embed_forward<T: Scalar>(ids: &[u32], ranges: &[(usize, usize)], d: usize, embed: &[T]) -> Vec<T> {
    let mut x = vec![T::zero(); ids.len() * d];
    let scale = T::of((d as f64).sqrt());
    for &(s, l) in ranges {
        for pos in 0..l {
            let t = s + pos;
            let e = &embed[ids[t] as usize * d..(ids[t] as usize + 1) * d];
            for c in 0..d {
                x[t * d + c] = e[c] * scale + T::of(positional_encoding(pos, c, d));
            }
        }
    }
    x
}

pub fn embed_backward<T: Scalar>(dx: &[T], ids: &[u32], d: usize, gembed: &mut [T]) {
    let scale = T::of((d as f64).sqrt());
    for (t, &id) in ids.iter().enumerate() {
        let g = &mut gembed[id as usize * d..(id as usize + 1) * d];
        for c in 0..d {
            g[c] += dx[t * d + c] * scale;
        }
    }
}

/// Label-smoothed cross-entropy over rows of `logits` (`[n x vocab]`).
/// The smoothed target is `(1-eps) * onehot + eps / vocab`. Returns the
/// summed loss; when `dlogits` is given, writes `scale * d(sum)/d(logits)`.
pub fn smoothed_xent<T: Scalar>(
    logits: &[T],
    targets: &[u32],
    vocab: usize,
    eps: f64,
    scale: f64,
    mut dlogits: Option<&mut [T]>,
) -> f64 {
    let mut total = 0.0;
    let uniform = eps / vocab as f64;
    for (r, &t) in targets.iter().enumerate() {
        let row = &logits[r * vocab..(r + 1) * vocab];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
        let z: f64 = row.iter().map(|v| (v.f64() - max).exp()).sum();
        let lse = max + z.ln();
        let mean_logp = row.iter().map(|v| v.f64() - lse).sum::<f64>() / vocab as f64;
        let logp_t = row[t as usize].f64() - lse;
        total += -((1.0 - eps) * logp_t + eps * mean_logp);
        if let Some(d) = dlogits.as_deref_mut() {
            let drow = &mut d[r * vocab..(r + 1) * vocab];
            for (j, g) in drow.iter_mut().enumerate() {
                let p = (row[j].f64() - lse).exp();
                let q = uniform + if j == t as usize { 1.0 - eps } else { 0.0 };
                *g = T::of(scale * (p - q));
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_vocab_for_any_smoothing() {
        let v = 11;
        let logits = vec![0.3f64; v * 2];
        for eps in [0.0, 0.1, 0.5] {
            let l = smoothed_xent(&logits, &[3, 7], v, eps, 1.0, None);
            assert!((l / 2.0 - (v as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn peaked_correct_logits_approach_zero_without_smoothing() {
        let mut logits = vec![0.0f64; 5];
        logits[2] = 60.0;
        assert!(smoothed_xent(&logits, &[2], 5, 0.0, 1.0, None) < 1e-20);
    }

    #[test]
    fn xent_gradient_matches_finite_differences() {
        let v = 6;
        let logits: Vec<f64> = (0..v * 2).map(|i| (i as f64 * 0.7).sin()).collect();
        let targets = [1, 4];
        let mut d = vec![0.0; logits.len()];
        smoothed_xent(&logits, &targets, v, 0.1, 1.0, Some(&mut d));
        for i in 0..logits.len() {
            let mut p = logits.clone();
            p[i] += 1e-6;
            let mut m = logits.clone();
            m[i] -= 1e-6;
            let fd = (smoothed_xent(&p, &targets, v, 0.1, 1.0, None) - smoothed_xent(&m, &targets, v, 0.1, 1.0, None)) / 2e-6;
            assert!((fd - d[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn positional_encoding_values() {
        assert_eq!(positional_encoding(0, 0, 8), 0.0);
        assert_eq!(positional_encoding(0, 1, 8), 1.0);
        assert!((positional_encoding(1, 0, 8) - 1f64.sin()).abs() < 1e-15);
        assert!((positional_encoding(3, 2, 8) - (3.0 / 10000f64.powf(0.25)).sin()).abs() < 1e-15);
    }
}
