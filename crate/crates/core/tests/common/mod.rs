#![allow(dead_code)]

use std::collections::HashMap;

use mnmt::model::{Model, ModelConfig, Tensor};
use mnmt::noising::{NoisedExample, Task};
use mnmt::scheduling::TaskBatch;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const V: usize = 11;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        layers_enc: 1,
        layers_dec: 1,
        d_model: 8,
        d_ff: 16,
        heads: 2,
        vocab_size: V,
        dropout: 0.0,
        label_smoothing: 0.1,
    }
}

fn words(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> Vec<u32> {
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| rng.gen_range(8..V as u32)).collect()
}

/// Random translation examples: words, then a LID (6 or 7).
pub fn mt_batch(seed: u64, n: usize) -> Vec<NoisedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut src = words(&mut rng, 1, 5);
            src.push(rng.gen_range(6..8));
            let tgt = words(&mut rng, 1, 5);
            NoisedExample {
                loss_mask: vec![true; tgt.len()],
                input_ids: src,
                target_ids: tgt,
                task: Task::Mt,
                tgt_lid: None,
            }
        })
        .collect()
}

pub fn dae_batch(seed: u64, n: usize) -> Vec<NoisedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let tgt = words(&mut rng, 2, 6);
            let mut src: Vec<u32> = tgt.iter().map(|&w| if rng.gen_bool(0.3) { 4 } else { w }).collect();
            src.push(6);
            NoisedExample {
                loss_mask: vec![true; tgt.len()],
                input_ids: src,
                target_ids: tgt,
                task: Task::Dae,
                tgt_lid: None,
            }
        })
        .collect()
}

pub fn mlm_batch(seed: u64, n: usize) -> Vec<NoisedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let tgt = words(&mut rng, 2, 6);
            let mut mask: Vec<bool> = tgt.iter().map(|_| rng.gen_bool(0.4)).collect();
            mask[0] = true;
            let src = tgt.iter().zip(&mask).map(|(&w, &m)| if m { 3 } else { w }).collect();
            NoisedExample { input_ids: src, target_ids: tgt, loss_mask: mask, task: Task::Mlm, tgt_lid: None }
        })
        .collect()
}

pub fn all_batches(seed: u64) -> Vec<TaskBatch> {
    vec![
        TaskBatch { task: Task::Mt, examples: mt_batch(seed, 3) },
        TaskBatch { task: Task::Mlm, examples: mlm_batch(seed + 1, 3) },
        TaskBatch { task: Task::Dae, examples: dae_batch(seed + 2, 3) },
    ]
}

/// Straightforward per-example transformer written with plain loops and
/// weights looked up by name.
pub struct Naive<'a> {
    cfg: ModelConfig,
    data: &'a [f64],
    tensors: HashMap<String, Tensor>,
}

type Rows = Vec<Vec<f64>>;

impl<'a> Naive<'a> {
    pub fn new(model: &'a Model<f64>) -> Self {
        Naive {
            cfg: model.cfg.clone(),
            data: &model.params.data,
            tensors: model.params.layout.named().iter().cloned().collect(),
        }
    }

    fn w(&self, name: &str) -> (&[f64], usize, usize) {
        let t = self.tensors[name];
        (&self.data[t.offset..t.offset + t.rows * t.cols], t.rows, t.cols)
    }

    fn linear(&self, name: &str, x: &Rows) -> Rows {
        let (w, rows, cols) = self.w(&format!("{name}.w"));
        let (b, _, _) = self.w(&format!("{name}.b"));
        x.iter()
            .map(|xr| {
                (0..cols)
                    .map(|o| b[o] + (0..rows).map(|i| xr[i] * w[i * cols + o]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    fn norm(&self, name: &str, x: &Rows) -> Rows {
        let (g, _, _) = self.w(&format!("{name}.gain"));
        let (b, _, _) = self.w(&format!("{name}.bias"));
        x.iter()
            .map(|r| {
                let n = r.len() as f64;
                let mean = r.iter().sum::<f64>() / n;
                let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                r.iter()
                    .enumerate()
                    .map(|(c, v)| (v - mean) / (var + 1e-5).sqrt() * g[c] + b[c])
                    .collect()
            })
            .collect()
    }

    fn attention(&self, name: &str, xq: &Rows, xkv: &Rows, causal: bool) -> Rows {
        let q = self.linear(&format!("{name}.q"), xq);
        let k = self.linear(&format!("{name}.k"), xkv);
        let v = self.linear(&format!("{name}.v"), xkv);
        let d = self.cfg.d_model;
        let dh = d / self.cfg.heads;
        let mut ctx = vec![vec![0.0; d]; xq.len()];
        for h in 0..self.cfg.heads {
            for i in 0..xq.len() {
                let n = if causal { i + 1 } else { xkv.len() };
                let scores: Vec<f64> = (0..n)
                    .map(|j| (0..dh).map(|c| q[i][h * dh + c] * k[j][h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for j in 0..n {
                    for c in 0..dh {
                        ctx[i][h * dh + c] += e[j] / z * v[j][h * dh + c];
                    }
                }
            }
        }
        self.linear(&format!("{name}.o"), &ctx)
    }

    fn ffn(&self, name: &str, x: &Rows) -> Rows {
        let h: Rows = self
            .linear(&format!("{name}.up"), x)
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
            .collect();
        self.linear(&format!("{name}.down"), &h)
    }

    fn embed(&self, ids: &[u32]) -> Rows {
        let d = self.cfg.d_model;
        let (e, _, _) = self.w("embed");
        ids.iter()
            .enumerate()
            .map(|(pos, &id)| {
                (0..d)
                    .map(|c| {
                        let angle = pos as f64 / 10000f64.powf((c - c % 2) as f64 / d as f64);
                        let pe = if c % 2 == 0 { angle.sin() } else { angle.cos() };
                        e[id as usize * d + c] * (d as f64).sqrt() + pe
                    })
                    .collect()
            })
            .collect()
    }

    fn add(a: &mut Rows, b: Rows) {
        for (x, y) in a.iter_mut().zip(b) {
            for (u, v) in x.iter_mut().zip(y) {
                *u += v;
            }
        }
    }

    pub fn encode(&self, src: &[u32]) -> Rows {
        let mut x = self.embed(src);
        for l in 0..self.cfg.layers_enc {
            let a = self.norm(&format!("enc{l}.norm_attn"), &x);
            Self::add(&mut x, self.attention(&format!("enc{l}.attn"), &a, &a, false));
            let b = self.norm(&format!("enc{l}.norm_ffn"), &x);
            Self::add(&mut x, self.ffn(&format!("enc{l}.ffn"), &b));
        }
        self.norm("enc.norm", &x)
    }

    /// Decoder logits for every position of `tgt_in`.
    pub fn decode_logits(&self, src: &[u32], tgt_in: &[u32]) -> Rows {
        let enc = self.encode(src);
        let mut x = self.embed(tgt_in);
        for l in 0..self.cfg.layers_dec {
            let a = self.norm(&format!("dec{l}.norm_self"), &x);
            Self::add(&mut x, self.attention(&format!("dec{l}.self_attn"), &a, &a, true));
            let b = self.norm(&format!("dec{l}.norm_cross"), &x);
            Self::add(&mut x, self.attention(&format!("dec{l}.cross_attn"), &b, &enc, false));
            let c = self.norm(&format!("dec{l}.norm_ffn"), &x);
            Self::add(&mut x, self.ffn(&format!("dec{l}.ffn"), &c));
        }
        let h = self.norm("dec.norm", &x);
        let d = self.cfg.d_model;
        let (e, vocab, _) = self.w("embed");
        h.iter()
            .map(|r| (0..vocab).map(|v| (0..d).map(|c| r[c] * e[v * d + c]).sum()).collect())
            .collect()
    }

    fn smoothed_loss(&self, logits: &[f64], target: u32) -> f64 {
        let eps = self.cfg.label_smoothing;
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        let vocab = logits.len() as f64;
        logits
            .iter()
            .enumerate()
            .map(|(j, l)| {
                let q = eps / vocab + if j == target as usize { 1.0 - eps } else { 0.0 };
                -q * (l - lse)
            })
            .sum()
    }

    /// Mean smoothed loss over target tokens plus EOS (MT and DAE).
    pub fn seq2seq_loss(&self, examples: &[NoisedExample]) -> f64 {
        let (mut sum, mut n) = (0.0, 0);
        for e in examples {
            let mut tgt_in = vec![1u32];
            tgt_in.extend(&e.target_ids);
            let mut labels = e.target_ids.clone();
            labels.push(2);
            for (row, &t) in self.decode_logits(&e.input_ids, &tgt_in).iter().zip(&labels) {
                sum += self.smoothed_loss(row, t);
                n += 1;
            }
        }
        sum / n as f64
    }

    pub fn mlm_loss(&self, examples: &[NoisedExample]) -> f64 {
        let (mut sum, mut n) = (0.0, 0);
        for e in examples {
            let enc = self.encode(&e.input_ids);
            let logits = self.linear("mlm_head", &enc);
            for (i, &m) in e.loss_mask.iter().enumerate() {
                if m {
                    sum += self.smoothed_loss(&logits[i], e.target_ids[i]);
                    n += 1;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Central finite differences of `loss` over every parameter against the
/// analytic gradient. Returns the maximum relative error
/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn max_relative_error(model: &Model<f64>, analytic: &[f64], loss: impl Fn(&Model<f64>) -> f64) -> (f64, usize) {
    let h = 1e-5;
    let mut m = model.clone();
    let mut worst = (0.0, 0);
    for i in 0..analytic.len() {
        let orig = m.params.data[i];
        m.params.data[i] = orig + h;
        let up = loss(&m);
        m.params.data[i] = orig - h;
        let down = loss(&m);
        m.params.data[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    worst
}

/// Analytic gradient of one task's mean loss.
pub fn task_gradient(model: &Model<f64>, task: Task, examples: &[NoisedExample]) -> Vec<f64> {
    let batch = [TaskBatch { task, examples: examples.to_vec() }];
    model.loss_and_grad(&batch, |_| 1.0).unwrap().1
}
