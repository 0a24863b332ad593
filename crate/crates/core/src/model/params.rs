use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelError};
use crate::autodiff::Tensor;

const INIT_STD: f64 = 0.02;

macro_rules! param_struct {
    ($(#[$meta:meta])* $name:ident { $($field:ident),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<T> {
            $(pub $field: T,)*
        }

        impl<T> $name<T> {
            pub fn entries(&self) -> Vec<(&'static str, &T)> {
                vec![$((stringify!($field), &self.$field),)*]
            }

            pub fn entries_mut(&mut self) -> Vec<(&'static str, &mut T)> {
                vec![$((stringify!($field), &mut self.$field),)*]
            }

            pub fn map<U>(&self, f: &mut impl FnMut(&'static str, &T) -> U) -> $name<U> {
                $name { $($field: f(stringify!($field), &self.$field),)* }
            }
        }
    };
}

param_struct!(
    /// Weights of one pre-norm transformer block.
    LayerSet {
        ln1_gain, ln1_bias,
        attn_q, attn_q_bias,
        attn_k, attn_k_bias,
        attn_v, attn_v_bias,
        attn_out, attn_out_bias,
        ln2_gain, ln2_bias,
        ff_in, ff_in_bias,
        ff_out, ff_out_bias,
    }
);

/// Every learnable tensor of the model, generic over what is stored per
/// parameter (values, tape handles, optimizer moments).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    pub tok_emb: T,
    pub pos_emb: T,
    pub layers: Vec<LayerSet<T>>,
    pub lnf_gain: T,
    pub lnf_bias: T,
    pub cls_weight: T,
    pub cls_bias: T,
}

impl<T> ParamSet<T> {
    /// Fully qualified names (`layers.1.attn_q`) in a fixed order.
    pub fn entries(&self) -> Vec<(String, &T)> {
        let mut out = vec![
            ("tok_emb".to_string(), &self.tok_emb),
            ("pos_emb".to_string(), &self.pos_emb),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            out.extend(layer.entries().into_iter().map(|(n, t)| (format!("layers.{i}.{n}"), t)));
        }
        out.extend([
            ("lnf_gain".to_string(), &self.lnf_gain),
            ("lnf_bias".to_string(), &self.lnf_bias),
            ("cls_weight".to_string(), &self.cls_weight),
            ("cls_bias".to_string(), &self.cls_bias),
        ]);
        out
    }

    /// Same order as [`ParamSet::entries`].
    pub fn values_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for layer in &mut self.layers {
            out.extend(layer.entries_mut().into_iter().map(|(_, t)| t));
        }
        out.extend([
            &mut self.lnf_gain,
            &mut self.lnf_bias,
            &mut self.cls_weight,
            &mut self.cls_bias,
        ]);
        out
    }

    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> ParamSet<U> {
        ParamSet {
            tok_emb: f("tok_emb", &self.tok_emb),
            pos_emb: f("pos_emb", &self.pos_emb),
            layers: self.layers.iter().map(|l| l.map(&mut |n, t| f(n, t))).collect(),
            lnf_gain: f("lnf_gain", &self.lnf_gain),
            lnf_bias: f("lnf_bias", &self.lnf_bias),
            cls_weight: f("cls_weight", &self.cls_weight),
            cls_bias: f("cls_bias", &self.cls_bias),
        }
    }
}

/// Expected shape of every parameter for a config, in entry order.
pub fn param_shapes(cfg: &ModelConfig) -> ParamSet<Vec<usize>> {
    let d = cfg.d_model;
    let f = cfg.ff_dim();
    let layer = LayerSet {
        ln1_gain: vec![d],
        ln1_bias: vec![d],
        attn_q: vec![d, d],
        attn_q_bias: vec![d],
        attn_k: vec![d, d],
        attn_k_bias: vec![d],
        attn_v: vec![d, d],
        attn_v_bias: vec![d],
        attn_out: vec![d, d],
        attn_out_bias: vec![d],
        ln2_gain: vec![d],
        ln2_bias: vec![d],
        ff_in: vec![d, f],
        ff_in_bias: vec![f],
        ff_out: vec![f, d],
        ff_out_bias: vec![d],
    };
    ParamSet {
        tok_emb: vec![cfg.vocab_size, d],
        pos_emb: vec![cfg.max_len, d],
        layers: vec![layer; cfg.n_layers],
        lnf_gain: vec![d],
        lnf_bias: vec![d],
        cls_weight: vec![1, d],
        cls_bias: vec![1],
    }
}

/// Trainable weights plus the configuration they were built for. The output
/// projection is tied to `tok_emb`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: ParamSet<Tensor>,
}

impl ModelParams {
    /// Matrices ~ N(0, 0.02²) from a seeded ChaCha stream, layer-norm gains 1,
    /// every bias (including `cls_bias`) 0.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("positive std");
        let weights = param_shapes(&config).map(|name, shape| {
            let n: usize = shape.iter().product();
            let data = if name.ends_with("_gain") {
                vec![1.0; n]
            } else if name.ends_with("_bias") {
                vec![0.0; n]
            } else {
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            };
            Tensor::new(shape.clone(), data).expect("shape from config")
        });
        Ok(ModelParams { config, weights })
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.entries().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.weights.entries().iter().all(|(_, t)| t.all_finite())
    }

    /// Hex SHA-256 over parameter names, shapes and little-endian values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.weights.entries() {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn zero_grad(&mut self) {
        for t in self.weights.values_mut() {
            t.clear_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            vocab_size: 20,
            max_len: 16,
            threshold: 0.5,
        }
    }

    #[test]
    fn cls_bias_starts_at_zero_and_gains_at_one() {
        let p = ModelParams::init(cfg(), 3).unwrap();
        assert_eq!(p.weights.cls_bias.data(), &[0.0]);
        assert!(p.weights.lnf_gain.data().iter().all(|&g| g == 1.0));
        assert!(p.weights.layers[1].ff_in_bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn same_seed_same_checksum() {
        let a = ModelParams::init(cfg(), 7).unwrap();
        let b = ModelParams::init(cfg(), 7).unwrap();
        let c = ModelParams::init(cfg(), 8).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn embedding_mean_is_near_zero() {
        let config = ModelConfig::desk(200);
        let p = ModelParams::init(config, 11).unwrap();
        let e = p.weights.tok_emb.data();
        assert!(e.len() >= 10_000);
        let mean = e.iter().sum::<f64>() / e.len() as f64;
        // standard error of the mean is 0.02 / sqrt(n)
        let se = INIT_STD / (e.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} vs 3se {}", 3.0 * se);
    }

    #[test]
    fn entries_and_values_mut_agree_on_order() {
        let mut p = ModelParams::init(cfg(), 1).unwrap();
        let names: Vec<String> = p.weights.entries().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "tok_emb");
        assert_eq!(names[2], "layers.0.ln1_gain");
        assert_eq!(names.last().unwrap(), "cls_bias");
        let sizes: Vec<usize> = p.weights.entries().iter().map(|(_, t)| t.numel()).collect();
        let sizes_mut: Vec<usize> = p.weights.values_mut().iter().map(|t| t.numel()).collect();
        assert_eq!(sizes, sizes_mut);
        assert_eq!(names.len(), 2 + 2 * 16 + 4);
    }
}
