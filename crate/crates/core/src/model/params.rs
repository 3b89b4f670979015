use rand::Rng;

use super::config::ModelConfig;
use crate::linalg::{Mat, Real};
use crate::seed::{self, tag};

/// Affine map `y = x · weight + bias`, weight stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Mat<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Mat::zeros(fan_in, fan_out),
            bias: vec![T::zero(); fan_out],
        }
    }

    /// Weights uniform in ±1/√fan_in, zero bias.
    fn uniform<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::of(rng.random_range(-bound..=bound)))
            .collect();
        Linear {
            weight: Mat::from_vec(fan_in, fan_out, data),
            bias: vec![T::zero(); fan_out],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> LayerNorm<T> {
    fn identity(d: usize) -> Self {
        LayerNorm {
            gain: vec![T::one(); d],
            bias: vec![T::zero(); d],
        }
    }

    fn zeros(d: usize) -> Self {
        LayerNorm {
            gain: vec![T::zero(); d],
            bias: vec![T::zero(); d],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<T> {
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
    pub norm_attn: LayerNorm<T>,
    pub ff_in: Linear<T>,
    pub ff_out: Linear<T>,
    pub norm_ff: LayerNorm<T>,
}

/// All learnable weights of the encoder and both heads.
///
/// The same structure doubles as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub embed: Linear<T>,
    pub layers: Vec<EncoderLayer<T>>,
    pub final_norm: LayerNorm<T>,
    pub position_head: Linear<T>,
    pub stage_head: Linear<T>,
}

/// Name and shape of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        ModelParams {
            embed: Linear::zeros(cfg.patch_len, d),
            layers: (0..cfg.depth)
                .map(|_| EncoderLayer {
                    query: Linear::zeros(d, d),
                    key: Linear::zeros(d, d),
                    value: Linear::zeros(d, d),
                    output: Linear::zeros(d, d),
                    norm_attn: LayerNorm::zeros(d),
                    ff_in: Linear::zeros(d, cfg.d_ff),
                    ff_out: Linear::zeros(cfg.d_ff, d),
                    norm_ff: LayerNorm::zeros(d),
                })
                .collect(),
            final_norm: LayerNorm::zeros(d),
            position_head: Linear::zeros(d, cfg.n_positions),
            stage_head: Linear::zeros(d, cfg.n_classes),
        }
    }

    /// Tensors in canonical order with names and shapes.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out: Vec<(String, Vec<usize>, &[T])> = Vec::new();
        push_linear(&mut out, "embed".into(), &self.embed);
        for (i, l) in self.layers.iter().enumerate() {
            push_linear(&mut out, format!("layers.{i}.query"), &l.query);
            push_linear(&mut out, format!("layers.{i}.key"), &l.key);
            push_linear(&mut out, format!("layers.{i}.value"), &l.value);
            push_linear(&mut out, format!("layers.{i}.output"), &l.output);
            push_norm(&mut out, format!("layers.{i}.norm_attn"), &l.norm_attn);
            push_linear(&mut out, format!("layers.{i}.ff_in"), &l.ff_in);
            push_linear(&mut out, format!("layers.{i}.ff_out"), &l.ff_out);
            push_norm(&mut out, format!("layers.{i}.norm_ff"), &l.norm_ff);
        }
        push_norm(&mut out, "final_norm".into(), &self.final_norm);
        push_linear(&mut out, "position_head".into(), &self.position_head);
        push_linear(&mut out, "stage_head".into(), &self.stage_head);
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        fn lin<'a, T: Real>(out: &mut Vec<&'a mut [T]>, l: &'a mut Linear<T>) {
            out.push(l.weight.as_mut_slice());
            out.push(&mut l.bias);
        }
        fn norm<'a, T: Real>(out: &mut Vec<&'a mut [T]>, n: &'a mut LayerNorm<T>) {
            out.push(&mut n.gain);
            out.push(&mut n.bias);
        }
        lin(&mut out, &mut self.embed);
        for l in &mut self.layers {
            lin(&mut out, &mut l.query);
            lin(&mut out, &mut l.key);
            lin(&mut out, &mut l.value);
            lin(&mut out, &mut l.output);
            norm(&mut out, &mut l.norm_attn);
            lin(&mut out, &mut l.ff_in);
            lin(&mut out, &mut l.ff_out);
            norm(&mut out, &mut l.norm_ff);
        }
        norm(&mut out, &mut self.final_norm);
        lin(&mut out, &mut self.position_head);
        lin(&mut out, &mut self.stage_head);
        out
    }

    pub fn tensor_infos(&self) -> Vec<TensorInfo> {
        self.tensors()
            .into_iter()
            .map(|(name, shape, _)| TensorInfo { name, shape })
            .collect()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    /// `self += scale · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams<T>, scale: T) {
        let src = other.tensors();
        for (dst, (_, _, s)) in self.tensors_mut().into_iter().zip(src) {
            for (d, &x) in dst.iter_mut().zip(s) {
                *d += scale * x;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let cfg_like = ModelConfig {
            patch_len: self.embed.weight.rows(),
            d_model: self.embed.weight.cols(),
            depth: self.layers.len(),
            d_ff: self.layers.first().map_or(1, |l| l.ff_in.weight.cols()),
            n_positions: self.position_head.bias.len(),
            n_classes: self.stage_head.bias.len(),
            ..ModelConfig::default()
        };
        let mut out = ModelParams::<U>::zeros(&cfg_like);
        for (dst, (_, _, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = U::of(s.as_f64());
            }
        }
        out
    }

    /// First tensor holding a NaN or infinity, by name.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, _, t)| t.iter().any(|x| !x.is_finite()))
            .map(|(name, _, _)| name)
    }
}

fn push_linear<'a, T: Real>(
    out: &mut Vec<(String, Vec<usize>, &'a [T])>,
    p: String,
    l: &'a Linear<T>,
) {
    out.push((
        format!("{p}.weight"),
        vec![l.weight.rows(), l.weight.cols()],
        l.weight.as_slice(),
    ));
    out.push((format!("{p}.bias"), vec![l.bias.len()], &l.bias));
}

fn push_norm<'a, T: Real>(
    out: &mut Vec<(String, Vec<usize>, &'a [T])>,
    p: String,
    n: &'a LayerNorm<T>,
) {
    out.push((format!("{p}.gain"), vec![n.gain.len()], &n.gain));
    out.push((format!("{p}.bias"), vec![n.bias.len()], &n.bias));
}

/// Fresh parameters: weights uniform in ±1/√fan_in, biases zero, norm gains one.
pub fn init_params<T: Real>(cfg: &ModelConfig, seed: u64) -> ModelParams<T> {
    let d = cfg.d_model;
    let mut rng = seed::rng(seed, &[tag::INIT]);
    let embed = Linear::uniform(cfg.patch_len, d, &mut rng);
    let layers = (0..cfg.depth)
        .map(|_| EncoderLayer {
            query: Linear::uniform(d, d, &mut rng),
            key: Linear::uniform(d, d, &mut rng),
            value: Linear::uniform(d, d, &mut rng),
            output: Linear::uniform(d, d, &mut rng),
            norm_attn: LayerNorm::identity(d),
            ff_in: Linear::uniform(d, cfg.d_ff, &mut rng),
            ff_out: Linear::uniform(cfg.d_ff, d, &mut rng),
            norm_ff: LayerNorm::identity(d),
        })
        .collect();
    let final_norm = LayerNorm::identity(d);
    let position_head = Linear::uniform(d, cfg.n_positions, &mut rng);
    let stage_head = Linear::uniform(d, cfg.n_classes, &mut rng);
    ModelParams {
        embed,
        layers,
        final_norm,
        position_head,
        stage_head,
    }
}

/// Replaces both heads with freshly initialized ones, leaving every encoder
/// tensor untouched.
pub fn reset_heads<T: Real>(params: &mut ModelParams<T>, seed: u64) {
    let d = params.embed.weight.cols();
    let mut rng = seed::rng(seed, &[tag::HEAD_INIT]);
    params.position_head = Linear::uniform(d, params.position_head.bias.len(), &mut rng);
    params.stage_head = Linear::uniform(d, params.stage_head.bias.len(), &mut rng);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::count_parameters;

    fn tiny() -> ModelConfig {
        ModelConfig {
            patch_len: 5,
            n_tokens: 9,
            d_model: 16,
            depth: 2,
            n_heads: 2,
            d_ff: 32,
            dropout: 0.0,
            n_positions: 9,
            n_classes: 5,
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_params::<f32>(&tiny(), 3);
        let b = init_params::<f32>(&tiny(), 3);
        assert_eq!(a, b);
        assert_ne!(a, init_params::<f32>(&tiny(), 4));
        for (name, _, t) in a.tensors() {
            if name.ends_with(".bias") {
                assert!(t.iter().all(|&x| x == 0.0), "{name}");
            }
            if name.ends_with(".gain") {
                assert!(t.iter().all(|&x| x == 1.0), "{name}");
            }
        }
        assert_eq!(a.n_scalars(), count_parameters(&tiny()));
    }

    #[test]
    fn init_weight_statistics() {
        let cfg = ModelConfig {
            depth: 1,
            ..ModelConfig::default()
        };
        let p = init_params::<f64>(&cfg, 0);
        let w = p.layers[0].query.weight.as_slice();
        let n = w.len() as f64;
        let bound = 1.0 / 512f64.sqrt();
        let sd = bound / 3f64.sqrt();
        let mean = w.iter().sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * sd / n.sqrt());
        assert!(w.iter().all(|x| x.abs() <= bound));
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!((var.sqrt() / sd - 1.0).abs() < 0.01);
    }

    #[test]
    fn reset_heads_keeps_encoder() {
        let mut p = init_params::<f32>(&tiny(), 1);
        let before = p.clone();
        reset_heads(&mut p, 99);
        assert_eq!(p.embed, before.embed);
        assert_eq!(p.layers, before.layers);
        assert_eq!(p.final_norm, before.final_norm);
        assert_ne!(p.stage_head, before.stage_head);
        assert_ne!(p.position_head, before.position_head);
    }

    #[test]
    fn cast_roundtrip_and_names() {
        let p = init_params::<f32>(&tiny(), 1);
        let back: ModelParams<f32> = p.cast::<f64>().cast();
        assert_eq!(p, back);
        let names: Vec<String> = p.tensor_infos().into_iter().map(|i| i.name).collect();
        assert_eq!(names[0], "embed.weight");
        assert_eq!(names.last().unwrap(), "stage_head.bias");
        assert_eq!(p.tensors().len(), p.clone().tensors_mut().len());
    }
}
