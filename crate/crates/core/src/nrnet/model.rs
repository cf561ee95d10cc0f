use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{BlockConfig, DSResBlockConfig, NRNetConfig, NResBlockConfig};
use crate::domain::{SliceImage, SlicePrediction, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::tensor::{Parameter, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batchnorm; running statistics are reported back.
    Train,
    /// Running statistics in batchnorm.
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Normal(f64),
    Zero,
    One,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn he(fan_in: usize) -> Init {
    Init::Normal((2.0 / fan_in as f64).sqrt())
}

fn param_specs(cfg: &NRNetConfig) -> (Vec<Spec>, Vec<usize>) {
    let mut specs = Vec::new();
    let mut bn = Vec::new();
    let push = |specs: &mut Vec<Spec>, name: String, shape: Vec<usize>, init| {
        specs.push(Spec { name, shape, init })
    };
    let mut add_bn = |specs: &mut Vec<Spec>, prefix: &str, c: usize| {
        push(specs, format!("{prefix}.gamma"), vec![c], Init::One);
        push(specs, format!("{prefix}.beta"), vec![c], Init::Zero);
        bn.push(c);
    };
    let mut channels = cfg.input_channels;
    if let Some(stem) = cfg.stem {
        let d = stem.kernel;
        specs.push(Spec {
            name: "stem.conv.weight".into(),
            shape: vec![stem.out_channels, channels, d, d],
            init: he(channels * d * d),
        });
        add_bn(&mut specs, "stem.bn", stem.out_channels);
        channels = stem.out_channels;
    }
    for (i, block) in cfg.blocks.iter().enumerate() {
        let p = format!("blocks.{i}");
        match block {
            BlockConfig::DSRes(r) => {
                let (ci, co, d) = (r.in_channels, r.out_channels, r.kernel);
                let spec = |name: &str, shape: Vec<usize>, init| Spec {
                    name: format!("{p}.{name}"),
                    shape,
                    init,
                };
                specs.push(spec("dw1.weight", vec![ci, d, d], he(d * d)));
                specs.push(spec("pw1.weight", vec![co, ci], he(ci)));
                add_bn(&mut specs, &format!("{p}.bn1"), co);
                specs.push(spec("dw2.weight", vec![co, d, d], he(d * d)));
                specs.push(spec("pw2.weight", vec![co, co], he(co)));
                add_bn(&mut specs, &format!("{p}.bn2"), co);
                if r.projects() {
                    specs.push(spec("skip.weight", vec![co, ci, 1, 1], he(ci)));
                }
            }
            BlockConfig::CRes(r) => {
                let (ci, co, d) = (r.in_channels, r.out_channels, r.kernel);
                let spec = |name: &str, shape: Vec<usize>, init| Spec {
                    name: format!("{p}.{name}"),
                    shape,
                    init,
                };
                specs.push(spec("conv1.weight", vec![co, ci, d, d], he(ci * d * d)));
                add_bn(&mut specs, &format!("{p}.bn1"), co);
                specs.push(spec("conv2.weight", vec![co, co, d, d], he(co * d * d)));
                add_bn(&mut specs, &format!("{p}.bn2"), co);
                if r.projects() {
                    specs.push(spec("skip.weight", vec![co, ci, 1, 1], he(ci)));
                }
            }
            BlockConfig::NRes(n) => {
                let (c, ce) = (n.channels, n.embed_channels);
                let std = Init::Normal(1.0 / (c as f64).sqrt());
                for name in ["phi", "psi", "g"] {
                    specs.push(Spec {
                        name: format!("{p}.{name}.weight"),
                        shape: vec![ce, c],
                        init: std,
                    });
                }
                specs.push(Spec {
                    name: format!("{p}.out.weight"),
                    shape: vec![c, ce],
                    init: Init::Zero,
                });
            }
        }
        channels = block.out_channels();
    }
    specs.push(Spec {
        name: "classifier.weight".into(),
        shape: vec![cfg.num_classes, channels],
        init: Init::Normal(1.0 / (channels as f64).sqrt()),
    });
    specs.push(Spec {
        name: "classifier.bias".into(),
        shape: vec![cfg.num_classes],
        init: Init::Zero,
    });
    (specs, bn)
}

/// Parameters of one nonlocal block, as tape variables.
#[derive(Debug, Clone, Copy)]
pub struct NResVars {
    pub phi: Var,
    pub psi: Var,
    pub g: Var,
    pub out: Var,
}

/// Intermediate results of a nonlocal block.
#[derive(Debug, Clone, Copy)]
pub struct NResTrace {
    pub output: Var,
    /// `[n, hw, hw]`; row `i` holds the weights location `i` gives every `j`.
    pub attention: Var,
    /// `[n, ce, h, w]`, the attention-weighted sum of `g` before the output
    /// projection.
    pub aggregation: Var,
}

/// Nonlocal residual block on an `[n, c, h, w]` map:
/// `x + W_out(sum_j softmax_j(phi(x_i) . psi(x_j)) g(x_j))`.
pub fn nres_block<T: Real>(tape: &mut Tape<T>, x: Var, p: NResVars) -> Result<NResTrace> {
    let (n, h, w) = match *tape.shape(x) {
        [n, _, h, w] => (n, h, w),
        ref s => {
            return Err(Error::shape(format!(
                "nonlocal block expects [n,c,h,w], got {s:?}"
            )))
        }
    };
    let ce = tape.shape(p.phi)[0];
    let hw = h * w;
    let phi = tape.pointwise_conv2d(x, p.phi)?;
    let psi = tape.pointwise_conv2d(x, p.psi)?;
    let g = tape.pointwise_conv2d(x, p.g)?;
    let phi = tape.reshape(phi, &[n, ce, hw])?;
    let psi = tape.reshape(psi, &[n, ce, hw])?;
    let g = tape.reshape(g, &[n, ce, hw])?;
    let phi_t = tape.transpose(phi)?;
    let logits = tape.matmul(phi_t, psi)?;
    let attention = tape.softmax(logits)?;
    let g_t = tape.transpose(g)?;
    let agg = tape.matmul(attention, g_t)?;
    let agg = tape.transpose(agg)?;
    let aggregation = tape.reshape(agg, &[n, ce, h, w])?;
    let projected = tape.pointwise_conv2d(aggregation, p.out)?;
    let output = tape.add(x, projected)?;
    Ok(NResTrace {
        output,
        attention,
        aggregation,
    })
}

/// Separable residual block: `relu(BN(pw(dw(relu(BN(pw(dw(x))))))) + skip(x))`.
/// `bn` applies one batchnorm layer, consuming its own parameters.
fn res_block<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    r: &DSResBlockConfig,
    separable: bool,
    next: &mut impl FnMut() -> Var,
    bn: &mut impl FnMut(&mut Tape<T>, Var, Var, Var) -> Result<Var>,
) -> Result<Var> {
    let pad = r.kernel / 2;
    let conv =
        |tape: &mut Tape<T>, x: Var, stride: usize, next: &mut dyn FnMut() -> Var| -> Result<Var> {
            if separable {
                let dw = next();
                let pw = next();
                let y = tape.depthwise_conv2d(x, dw, stride, pad)?;
                tape.pointwise_conv2d(y, pw)
            } else {
                let k = next();
                tape.conv2d(x, k, stride, pad)
            }
        };
    let y = conv(tape, x, r.stride, next)?;
    let (g1, b1) = (next(), next());
    let y = bn(tape, y, g1, b1)?;
    let y = tape.relu(y);
    let y = conv(tape, y, 1, next)?;
    let (g2, b2) = (next(), next());
    let y = bn(tape, y, g2, b2)?;
    let skip = if r.projects() {
        let k = next();
        tape.conv2d(x, k, r.stride, 0)?
    } else {
        x
    };
    let sum = tape.add(y, skip)?;
    Ok(tape.relu(sum))
}

/// Result of a forward pass recorded on a tape.
pub struct Forward<T> {
    /// `[n, classes]` class probabilities.
    pub probs: Var,
    /// Batch `(mean, var)` of every batchnorm layer in train mode.
    pub batch_stats: Vec<BnStats<T>>,
    /// Attention maps of the nonlocal blocks.
    pub attention: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NRNet<T> {
    config: NRNetConfig,
    params: Vec<Parameter<T>>,
    running: Vec<BnStats<T>>,
}

impl<T: Real> NRNet<T> {
    /// Freshly initialized network; He-normal convolutions, identity batchnorm,
    /// zero nonlocal output projection.
    pub fn new(config: NRNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (specs, bn) = param_specs(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = specs
            .into_iter()
            .map(|s| {
                let len = s.shape.iter().product();
                let data: Vec<T> = match s.init {
                    Init::Zero => vec![T::zero(); len],
                    Init::One => vec![T::one(); len],
                    Init::Normal(std) => {
                        let dist = Normal::new(0.0, std).expect("positive std");
                        (0..len).map(|_| T::lit(dist.sample(&mut rng))).collect()
                    }
                };
                Parameter::new(s.name, Tensor::new(s.shape, data).expect("spec shape"))
            })
            .collect();
        let running = bn
            .into_iter()
            .map(|c| BnStats {
                mean: vec![T::zero(); c],
                var: vec![T::one(); c],
            })
            .collect();
        Ok(NRNet {
            config,
            params,
            running,
        })
    }

    /// Reassembles a network from stored tensors, checking them against the
    /// configuration.
    pub fn from_parts(
        config: NRNetConfig,
        params: Vec<Parameter<T>>,
        running: Vec<BnStats<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let (specs, bn) = param_specs(&config);
        if specs.len() != params.len() || bn.len() != running.len() {
            return Err(Error::shape(format!(
                "configuration needs {} parameters and {} batchnorm layers, got {} and {}",
                specs.len(),
                bn.len(),
                params.len(),
                running.len()
            )));
        }
        for (s, p) in specs.iter().zip(&params) {
            if s.name != p.name || s.shape != p.tensor.shape() {
                return Err(Error::shape(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    p.name,
                    p.tensor.shape(),
                    s.name,
                    s.shape
                )));
            }
        }
        for (&c, r) in bn.iter().zip(&running) {
            if r.mean.len() != c || r.var.len() != c {
                return Err(Error::shape(
                    "batchnorm statistics do not match channel count",
                ));
            }
        }
        Ok(NRNet {
            config,
            params,
            running,
        })
    }

    pub fn config(&self) -> &NRNetConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[BnStats<T>] {
        &self.running
    }

    /// Number of learnable scalars (NoP); running statistics excluded.
    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Indices of the convolution and projection kernels, the weights covered
    /// by the L2 penalty.
    pub fn weight_ids(&self) -> Vec<usize> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.name.ends_with(".weight"))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn cast<U: Real>(&self) -> NRNet<U> {
        let cast_vec = |v: &[T]| v.iter().map(|&x| U::lit(x.as_f64())).collect();
        NRNet {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Parameter::new(p.name.clone(), p.tensor.cast()))
                .collect(),
            running: self
                .running
                .iter()
                .map(|r| BnStats {
                    mean: cast_vec(&r.mean),
                    var: cast_vec(&r.var),
                })
                .collect(),
        }
    }

    /// Records every parameter on the tape; parameter `i` reports its
    /// gradient under id `i`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(i, p.tensor.clone()))
            .collect()
    }

    /// Forward pass of an `[n, c, s, s]` batch using the bound `vars`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        vars: &[Var],
        mode: Mode,
    ) -> Result<Forward<T>> {
        let cfg = &self.config;
        let s = cfg.input_size;
        match *tape.shape(input) {
            [_, c, h, w] if c == cfg.input_channels && h == s && w == s => {}
            ref other => {
                return Err(Error::shape(format!(
                    "network expects [n,{},{s},{s}] input, got {other:?}",
                    cfg.input_channels
                )))
            }
        }
        if vars.len() != self.params.len() {
            return Err(Error::shape(format!(
                "{} parameter variables bound, network has {}",
                vars.len(),
                self.params.len()
            )));
        }
        let mut cursor = vars.iter().copied();
        let mut next = || {
            cursor
                .next()
                .expect("parameter order follows the configuration")
        };
        let mut batch_stats = Vec::new();
        let mut bn_index = 0;
        let eps = cfg.bn_eps;
        let running = &self.running;
        let mut bn = |tape: &mut Tape<T>, x: Var, gamma: Var, beta: Var| -> Result<Var> {
            let out = match mode {
                Mode::Train => {
                    let (y, mean, var) = tape.batchnorm_train(x, gamma, beta, eps)?;
                    batch_stats.push(BnStats { mean, var });
                    y
                }
                Mode::Infer => {
                    let r = &running[bn_index];
                    tape.batchnorm_infer(x, gamma, beta, &r.mean, &r.var, eps)?
                }
            };
            bn_index += 1;
            Ok(out)
        };

        let mut x = input;
        if let Some(stem) = cfg.stem {
            let k = next();
            x = tape.conv2d(x, k, stem.stride, stem.kernel / 2)?;
            let (g, b) = (next(), next());
            x = bn(tape, x, g, b)?;
            x = tape.relu(x);
        }
        let mut attention = Vec::new();
        for block in &cfg.blocks {
            x = match block {
                BlockConfig::DSRes(r) => res_block(tape, x, r, true, &mut next, &mut bn)?,
                BlockConfig::CRes(r) => res_block(tape, x, r, false, &mut next, &mut bn)?,
                BlockConfig::NRes(_) => {
                    let p = NResVars {
                        phi: next(),
                        psi: next(),
                        g: next(),
                        out: next(),
                    };
                    let t = nres_block(tape, x, p)?;
                    attention.push(t.attention);
                    t.output
                }
            };
        }
        let (k, b) = (next(), next());
        let logits = tape.pointwise_conv2d(x, k)?;
        let logits = tape.channel_bias(logits, b)?;
        let pooled = tape.global_avg_pool(logits)?;
        let probs = tape.softmax(pooled)?;
        Ok(Forward {
            probs,
            batch_stats,
            attention,
        })
    }

    /// Folds train-mode batch statistics into the running statistics:
    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn update_running_stats(&mut self, batch: &[BnStats<T>]) -> Result<()> {
        if batch.len() != self.running.len() {
            return Err(Error::shape(
                "batch statistics do not match batchnorm layers",
            ));
        }
        let m = T::lit(self.config.bn_momentum);
        let one_m = T::one() - m;
        for (r, b) in self.running.iter_mut().zip(batch) {
            for (rv, &bv) in r.mean.iter_mut().zip(&b.mean) {
                *rv = m * *rv + one_m * bv;
            }
            for (rv, &bv) in r.var.iter_mut().zip(&b.var) {
                *rv = m * *rv + one_m * bv;
            }
        }
        Ok(())
    }

    /// Stacks slices into an `[n, 1, s, s]` tensor.
    pub fn batch_tensor(&self, slices: &[&SliceImage]) -> Result<Tensor<T>> {
        let s = self.config.input_size;
        let mut data = Vec::with_capacity(slices.len() * s * s);
        for img in slices {
            if img.height() != s || img.width() != s {
                return Err(Error::shape(format!(
                    "slice is {}x{}, network expects {s}x{s}",
                    img.height(),
                    img.width()
                )));
            }
            data.extend(img.data().iter().map(|&v| T::lit(v as f64)));
        }
        Tensor::new(vec![slices.len(), 1, s, s], data)
    }

    /// Inference-mode class probabilities for a batch of slices.
    pub fn predict_batch(&self, slices: &[&SliceImage]) -> Result<Vec<SlicePrediction>> {
        if slices.is_empty() {
            return Ok(Vec::new());
        }
        if self.config.input_channels != 1 {
            return Err(Error::shape(
                "slice prediction needs a single-channel network",
            ));
        }
        let batch = self.batch_tensor(slices)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let x = tape.leaf(batch);
        let out = self.forward(&mut tape, x, &vars, Mode::Infer)?;
        tape.value(out.probs)
            .data()
            .chunks_exact(NUM_CLASSES)
            .map(probs_to_prediction)
            .collect()
    }

    pub fn predict(&self, slice: &SliceImage) -> Result<SlicePrediction> {
        Ok(self.predict_batch(&[slice])?.remove(0))
    }
}

/// Converts a softmax row into a prediction, renormalizing in `f64`.
pub(crate) fn probs_to_prediction<T: Real>(row: &[T]) -> Result<SlicePrediction> {
    let p: Vec<f64> = row.iter().map(|v| v.as_f64().max(0.0)).collect();
    let total: f64 = p.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::invalid(
            "network produced a degenerate probability vector",
        ));
    }
    SlicePrediction::new([p[0] / total, p[1] / total, p[2] / total])
}

/// Nonlocal block parameters in plain tensors, for direct evaluation.
#[derive(Debug, Clone)]
pub struct NResParams<T> {
    pub phi: Tensor<T>,
    pub psi: Tensor<T>,
    pub g: Tensor<T>,
    pub out: Tensor<T>,
}

impl<T: Real> NResParams<T> {
    pub fn random(cfg: NResBlockConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, 1.0 / (cfg.channels as f64).sqrt()).expect("positive std");
        let mut draw = |shape: &[usize]| {
            let len = shape.iter().product();
            Tensor::new(
                shape.to_vec(),
                (0..len).map(|_| T::lit(dist.sample(&mut rng))).collect(),
            )
            .expect("shape")
        };
        let (c, ce) = (cfg.channels, cfg.embed_channels);
        NResParams {
            phi: draw(&[ce, c]),
            psi: draw(&[ce, c]),
            g: draw(&[ce, c]),
            out: draw(&[c, ce]),
        }
    }
}

/// Output of [`nres_forward`] on a single `[c, h, w]` map.
#[derive(Debug, Clone)]
pub struct NResOutput<T> {
    pub output: Tensor<T>,
    /// `[hw, hw]`.
    pub attention: Tensor<T>,
    /// `[ce, h, w]`.
    pub aggregation: Tensor<T>,
}

pub fn nres_forward<T: Real>(x: &Tensor<T>, params: &NResParams<T>) -> Result<NResOutput<T>> {
    let (c, h, w) = match *x.shape() {
        [c, h, w] => (c, h, w),
        ref s => {
            return Err(Error::shape(format!(
                "nres_forward expects [c,h,w], got {s:?}"
            )))
        }
    };
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone().reshaped(&[1, c, h, w])?);
    let vars = NResVars {
        phi: tape.leaf(params.phi.clone()),
        psi: tape.leaf(params.psi.clone()),
        g: tape.leaf(params.g.clone()),
        out: tape.leaf(params.out.clone()),
    };
    let t = nres_block(&mut tape, xv, vars)?;
    let ce = params.phi.shape()[0];
    Ok(NResOutput {
        output: tape.value(t.output).clone().reshaped(&[c, h, w])?,
        attention: tape.value(t.attention).clone().reshaped(&[h * w, h * w])?,
        aggregation: tape.value(t.aggregation).clone().reshaped(&[ce, h, w])?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_net_predicts_on_the_simplex() {
        let net = NRNet::<f64>::new(NRNetConfig::tiny(32), 3).unwrap();
        let img =
            SliceImage::new(32, 32, (0..1024).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
        let p = net.predict(&img).unwrap();
        let s: f64 = p.probabilities().iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zeroed_classifier_gives_uniform_probabilities() {
        let mut net = NRNet::<f64>::new(NRNetConfig::tiny(32), 3).unwrap();
        let n = net.params().len();
        net.params_mut()[n - 2].tensor.data_mut().fill(0.0);
        let img = SliceImage::new(32, 32, vec![0.3; 1024]).unwrap();
        let p = net.predict(&img).unwrap();
        for v in p.probabilities() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_slice_size_is_a_shape_error() {
        let net = NRNet::<f32>::new(NRNetConfig::tiny(32), 3).unwrap();
        let img = SliceImage::zeros(16, 16);
        assert!(matches!(net.predict(&img), Err(Error::Shape(_))));
    }

    #[test]
    fn from_parts_rejects_mismatch() {
        let net = NRNet::<f32>::new(NRNetConfig::tiny(32), 3).unwrap();
        let mut params = net.params().to_vec();
        params.pop();
        assert!(
            NRNet::from_parts(net.config().clone(), params, net.running_stats().to_vec()).is_err()
        );
    }
}
