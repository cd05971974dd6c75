use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::float::Scalar;
use crate::seeding::component_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers_enc: usize,
    pub layers_dec: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
}

impl ModelConfig {
    /// Desk-scale default: 2+2 layers, d_model 64, d_ff 256, 4 heads.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            layers_enc: 2,
            layers_dec: 2,
            d_model: 64,
            d_ff: 256,
            heads: 4,
            vocab_size,
            dropout: 0.1,
            label_smoothing: 0.1,
        }
    }

    /// transformer_big dimensions with 6+6 layers.
    pub fn big(vocab_size: usize) -> Self {
        ModelConfig {
            layers_enc: 6,
            layers_dec: 6,
            d_model: 1024,
            d_ff: 4096,
            heads: 16,
            vocab_size,
            dropout: 0.1,
            label_smoothing: 0.1,
        }
    }

    /// 3+3 layers with 256-dim hidden states, used for small bilingual models.
    pub fn small_bilingual(vocab_size: usize) -> Self {
        ModelConfig {
            layers_enc: 3,
            layers_dec: 3,
            d_model: 256,
            d_ff: 1024,
            heads: 4,
            vocab_size,
            dropout: 0.1,
            label_smoothing: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.d_model == 0 || self.d_ff == 0 || self.vocab_size == 0 {
            return Err("dimensions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(format!("label_smoothing must be in [0, 1), got {}", self.label_smoothing));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

/// A named region of the flat parameter vector, `rows x cols` row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn of<'a, T>(&self, flat: &'a [T]) -> &'a [T] {
        &flat[self.range()]
    }

    pub fn of_mut<'a, T>(&self, flat: &'a mut [T]) -> &'a mut [T] {
        &mut flat[self.range()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearP {
    /// `in x out`.
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormP {
    pub gain: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnP {
    pub q: LinearP,
    pub k: LinearP,
    pub v: LinearP,
    pub o: LinearP,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FfnP {
    pub up: LinearP,
    pub down: LinearP,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncLayerP {
    pub norm_attn: NormP,
    pub attn: AttnP,
    pub norm_ffn: NormP,
    pub ffn: FfnP,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecLayerP {
    pub norm_self: NormP,
    pub self_attn: AttnP,
    pub norm_cross: NormP,
    pub cross_attn: AttnP,
    pub norm_ffn: NormP,
    pub ffn: FfnP,
}

/// Where every weight lives in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    /// `vocab x d_model`; shared by encoder input, decoder input and the
    /// decoder output projection.
    pub embed: Tensor,
    pub enc: Vec<EncLayerP>,
    pub enc_norm: NormP,
    pub dec: Vec<DecLayerP>,
    pub dec_norm: NormP,
    /// Encoder-side masked-LM output layer, `d_model x vocab`.
    pub mlm_head: LinearP,
    pub total: usize,
    names: Vec<(String, Tensor)>,
}

struct Builder {
    next: usize,
    names: Vec<(String, Tensor)>,
}

impl Builder {
    fn tensor(&mut self, name: String, rows: usize, cols: usize) -> Tensor {
        let t = Tensor { offset: self.next, rows, cols };
        self.next += t.len();
        self.names.push((name, t));
        t
    }

    fn linear(&mut self, name: &str, din: usize, dout: usize) -> LinearP {
        LinearP {
            w: self.tensor(format!("{name}.w"), din, dout),
            b: self.tensor(format!("{name}.b"), 1, dout),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> NormP {
        NormP {
            gain: self.tensor(format!("{name}.gain"), 1, d),
            bias: self.tensor(format!("{name}.bias"), 1, d),
        }
    }

    fn attn(&mut self, name: &str, d: usize) -> AttnP {
        AttnP {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn ffn(&mut self, name: &str, d: usize, ff: usize) -> FfnP {
        FfnP {
            up: self.linear(&format!("{name}.up"), d, ff),
            down: self.linear(&format!("{name}.down"), ff, d),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let mut b = Builder { next: 0, names: Vec::new() };
        let embed = b.tensor("embed".into(), cfg.vocab_size, d);
        let enc = (0..cfg.layers_enc)
            .map(|i| EncLayerP {
                norm_attn: b.norm(&format!("enc{i}.norm_attn"), d),
                attn: b.attn(&format!("enc{i}.attn"), d),
                norm_ffn: b.norm(&format!("enc{i}.norm_ffn"), d),
                ffn: b.ffn(&format!("enc{i}.ffn"), d, cfg.d_ff),
            })
            .collect();
        let enc_norm = b.norm("enc.norm", d);
        let dec = (0..cfg.layers_dec)
            .map(|i| DecLayerP {
                norm_self: b.norm(&format!("dec{i}.norm_self"), d),
                self_attn: b.attn(&format!("dec{i}.self_attn"), d),
                norm_cross: b.norm(&format!("dec{i}.norm_cross"), d),
                cross_attn: b.attn(&format!("dec{i}.cross_attn"), d),
                norm_ffn: b.norm(&format!("dec{i}.norm_ffn"), d),
                ffn: b.ffn(&format!("dec{i}.ffn"), d, cfg.d_ff),
            })
            .collect();
        let dec_norm = b.norm("dec.norm", d);
        let mlm_head = b.linear("mlm_head", d, cfg.vocab_size);
        Layout {
            embed,
            enc,
            enc_norm,
            dec,
            dec_norm,
            mlm_head,
            total: b.next,
            names: b.names,
        }
    }

    /// Every tensor with its name, in storage order.
    pub fn named(&self) -> &[(String, Tensor)] {
        &self.names
    }

    /// Name of the tensor holding flat index `i`.
    pub fn name_of(&self, i: usize) -> Option<&str> {
        self.names
            .iter()
            .find(|(_, t)| t.range().contains(&i))
            .map(|(n, _)| n.as_str())
    }

    /// Flat index range of the masked-LM head.
    pub fn mlm_head_range(&self) -> std::ops::Range<usize> {
        self.mlm_head.w.offset..self.mlm_head.b.offset + self.mlm_head.b.len()
    }
}

/// All transformer weights in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub layout: Layout,
    pub data: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let layout = Layout::new(cfg);
        let data = vec![T::zero(); layout.total];
        ModelParams { layout, data }
    }

    /// Xavier-uniform projections, `N(0, d^-1/2)` embeddings, unit norm gains,
    /// zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut p = Self::zeros(cfg);
        let mut rng = component_rng(seed, "init", 0);
        let emb = Normal::new(0.0, (cfg.d_model as f64).powf(-0.5)).unwrap();
        for x in p.layout.embed.of_mut(&mut p.data) {
            *x = T::of(emb.sample(&mut rng));
        }
        let names = p.layout.named().to_vec();
        for (name, t) in names {
            let region = t.of_mut(&mut p.data);
            if name.ends_with(".gain") {
                region.iter_mut().for_each(|x| *x = T::one());
            } else if name.ends_with(".w") {
                let bound = (6.0 / (t.rows + t.cols) as f64).sqrt();
                region
                    .iter_mut()
                    .for_each(|x| *x = T::of(rng.gen_range(-bound..bound)));
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Same values in another precision.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            layout: self.layout.clone(),
            data: self.data.iter().map(|x| U::of(x.f64())).collect(),
        }
    }
}
