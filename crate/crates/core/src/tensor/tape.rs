use super::kernels::{self, ConvGeom};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        k: Var,
        geom: ConvGeom,
        co: usize,
    },
    Depthwise {
        x: Var,
        k: Var,
        geom: ConvGeom,
    },
    Pointwise {
        x: Var,
        k: Var,
        n: usize,
        c: usize,
        hw: usize,
        co: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        dims: (usize, usize, usize),
        batch_stats: bool,
    },
    ChannelBias {
        x: Var,
        b: Var,
        c: usize,
        hw: usize,
    },
    Relu(Var),
    Add(Var, Var),
    GlobalAvgPool {
        x: Var,
        hw: usize,
    },
    Softmax {
        x: Var,
        k: usize,
    },
    Matmul {
        a: Var,
        b: Var,
        dims: (usize, usize, usize, usize),
    },
    Transpose {
        x: Var,
        bt: usize,
        m: usize,
        q: usize,
    },
    Reshape(Var),
    Sum(Var),
    SumSquares(Var),
    Scale(Var, T),
    FocalLoss {
        probs: Var,
        targets: Vec<usize>,
        alpha: Vec<T>,
        kappa: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    param: Option<usize>,
}

/// Records operations in execution order; [`Tape::backward`] replays them in
/// reverse.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits a `[c,h,w]` or `[n,c,h,w]` shape.
fn nchw(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w)),
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::shape(format!(
            "{what} expects [c,h,w] or [n,c,h,w], got {shape:?}"
        ))),
    }
}

fn with_spatial(input: &[usize], c: usize, h: usize, w: usize) -> Vec<usize> {
    if input.len() == 3 {
        vec![c, h, w]
    } else {
        vec![input[0], c, h, w]
    }
}

/// Clamp applied to the true-class probability before taking its log.
pub const FOCAL_PROB_FLOOR: f64 = 1e-12;

/// Per-sample focal term `-alpha (1-p)^kappa log p` and its derivative in `p`.
pub(crate) fn focal_term<T: Real>(p: T, alpha: T, kappa: T) -> (T, T) {
    let floor = T::lit(FOCAL_PROB_FLOOR);
    let clamped = p < floor;
    let p = if clamped { floor } else { p.min(T::one()) };
    let q = T::one() - p;
    let weight = q.powf(kappa);
    let logp = p.ln();
    let value = -alpha * weight * logp;
    if clamped {
        return (value, T::zero());
    }
    // d/dp of (1-p)^kappa log p; the first part vanishes at p = 1 for every kappa
    let dweight = if kappa == T::zero() || q == T::zero() {
        T::zero()
    } else {
        -kappa * q.powf(kappa - T::one())
    };
    let grad = -alpha * (dweight * logp + weight / p);
    (value, grad)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        value.debug_check_finite();
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A leaf whose gradient is reported back under parameter id `id`.
    pub fn param(&mut self, id: usize, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, w) = nchw(self.shape(x), "conv2d")?;
        let (co, d) = match *self.shape(k) {
            [co, ci, d, d2] if ci == c && d == d2 => (co, d),
            ref s => {
                return Err(Error::shape(format!(
                    "conv2d kernel {s:?} incompatible with {c}-channel input"
                )))
            }
        };
        let geom = ConvGeom {
            n,
            c,
            h,
            w,
            d,
            stride,
            pad,
        };
        let (oh, ow) = geom
            .output()
            .ok_or_else(|| Error::shape(format!("conv2d geometry {geom:?} yields no output")))?;
        let out = kernels::conv2d_forward(self.value(x).data(), &geom, self.value(k).data(), co);
        let shape = with_spatial(self.shape(x), co, oh, ow);
        Ok(self.push(Tensor { shape, data: out }, Op::Conv2d { x, k, geom, co }))
    }

    pub fn depthwise_conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, w) = nchw(self.shape(x), "depthwise_conv2d")?;
        let d = match *self.shape(k) {
            [kc, d, d2] if kc == c && d == d2 => d,
            ref s => {
                return Err(Error::shape(format!(
                    "depthwise kernel {s:?} incompatible with {c}-channel input"
                )))
            }
        };
        let geom = ConvGeom {
            n,
            c,
            h,
            w,
            d,
            stride,
            pad,
        };
        let (oh, ow) = geom
            .output()
            .ok_or_else(|| Error::shape(format!("depthwise geometry {geom:?} yields no output")))?;
        let out = kernels::depthwise_forward(self.value(x).data(), &geom, self.value(k).data());
        let shape = with_spatial(self.shape(x), c, oh, ow);
        Ok(self.push(Tensor { shape, data: out }, Op::Depthwise { x, k, geom }))
    }

    pub fn pointwise_conv2d(&mut self, x: Var, k: Var) -> Result<Var> {
        let (n, c, h, w) = nchw(self.shape(x), "pointwise_conv2d")?;
        let co = match *self.shape(k) {
            [co, ci] if ci == c => co,
            ref s => {
                return Err(Error::shape(format!(
                    "pointwise kernel {s:?} incompatible with {c}-channel input"
                )))
            }
        };
        let hw = h * w;
        let out =
            kernels::pointwise_forward(self.value(x).data(), n, c, hw, self.value(k).data(), co);
        let shape = with_spatial(self.shape(x), co, h, w);
        Ok(self.push(
            Tensor { shape, data: out },
            Op::Pointwise { x, k, n, c, hw, co },
        ))
    }

    fn check_channel_vec(&self, v: Var, c: usize, what: &str) -> Result<()> {
        if self.shape(v) != [c] {
            return Err(Error::shape(format!(
                "{what} must have shape [{c}], got {:?}",
                self.shape(v)
            )));
        }
        Ok(())
    }

    /// Training-mode batch normalization. Returns the output and the batch
    /// `(mean, biased variance)` for the caller's running statistics.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let (n, c, h, w) = nchw(self.shape(x), "batchnorm")?;
        if n * h * w == 0 {
            return Err(Error::invalid("batchnorm over an empty batch"));
        }
        self.check_channel_vec(gamma, c, "batchnorm gamma")?;
        self.check_channel_vec(beta, c, "batchnorm beta")?;
        let hw = h * w;
        let (mean, var) = kernels::channel_moments(self.value(x).data(), n, c, hw);
        let inv_std: Vec<T> = var
            .iter()
            .map(|&v| T::one() / (v + T::lit(eps)).sqrt())
            .collect();
        let (y, xhat) = kernels::batchnorm_apply(
            self.value(x).data(),
            n,
            c,
            hw,
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let shape = self.shape(x).to_vec();
        let out = self.push(
            Tensor { shape, data: y },
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                dims: (n, c, hw),
                batch_stats: true,
            },
        );
        Ok((out, mean, var))
    }

    /// Inference-mode batch normalization with fixed statistics.
    pub fn batchnorm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let (n, c, h, w) = nchw(self.shape(x), "batchnorm")?;
        if n * h * w == 0 {
            return Err(Error::invalid("batchnorm over an empty batch"));
        }
        self.check_channel_vec(gamma, c, "batchnorm gamma")?;
        self.check_channel_vec(beta, c, "batchnorm beta")?;
        if mean.len() != c || var.len() != c {
            return Err(Error::shape(
                "running statistics do not match channel count",
            ));
        }
        let hw = h * w;
        let inv_std: Vec<T> = var
            .iter()
            .map(|&v| T::one() / (v + T::lit(eps)).sqrt())
            .collect();
        let (y, xhat) = kernels::batchnorm_apply(
            self.value(x).data(),
            n,
            c,
            hw,
            mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            Tensor { shape, data: y },
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                dims: (n, c, hw),
                batch_stats: false,
            },
        ))
    }

    /// Adds a per-channel bias to a `[c,h,w]` or `[n,c,h,w]` map.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, c, h, w) = nchw(self.shape(x), "channel_bias")?;
        self.check_channel_vec(b, c, "bias")?;
        let hw = h * w;
        let mut out = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for (plane, chunk) in out.data_mut().chunks_exact_mut(hw).enumerate() {
            let bv = bias[plane % c];
            chunk.iter_mut().for_each(|v| *v = *v + bv);
        }
        Ok(self.push(out, Op::ChannelBias { x, b, c, hw }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "add of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// `[c,h,w] -> [c]`, `[n,c,h,w] -> [n,c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = nchw(self.shape(x), "global_avg_pool")?;
        let hw = h * w;
        if hw == 0 {
            return Err(Error::invalid("global average pool over empty map"));
        }
        let inv = T::one() / T::lit(hw as f64);
        let data: Vec<T> = self
            .value(x)
            .data()
            .chunks_exact(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let shape = if self.shape(x).len() == 3 {
            vec![c]
        } else {
            vec![n, c]
        };
        Ok(self.push(Tensor { shape, data }, Op::GlobalAvgPool { x, hw }))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let k = *self
            .shape(x)
            .last()
            .ok_or_else(|| Error::shape("softmax of a scalar"))?;
        if k == 0 {
            return Err(Error::shape("softmax over an empty axis"));
        }
        let data = kernels::softmax_rows(self.value(x).data(), k);
        let shape = self.shape(x).to_vec();
        Ok(self.push(Tensor { shape, data }, Op::Softmax { x, k }))
    }

    /// `[m,p] x [p,q]` or batched `[b,m,p] x [b,p,q]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (bt, m, p, q, shape) = match (self.shape(a), self.shape(b)) {
            (&[m, p], &[p2, q]) if p == p2 => (1, m, p, q, vec![m, q]),
            (&[ba, m, p], &[bb, p2, q]) if ba == bb && p == p2 => (ba, m, p, q, vec![ba, m, q]),
            (sa, sb) => return Err(Error::shape(format!("matmul of {sa:?} and {sb:?}"))),
        };
        let data = kernels::matmul_forward(self.value(a).data(), self.value(b).data(), bt, m, p, q);
        Ok(self.push(
            Tensor { shape, data },
            Op::Matmul {
                a,
                b,
                dims: (bt, m, p, q),
            },
        ))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (bt, m, q, shape) = match *self.shape(x) {
            [m, q] => (1, m, q, vec![q, m]),
            [b, m, q] => (b, m, q, vec![b, q, m]),
            ref s => return Err(Error::shape(format!("transpose of {s:?}"))),
        };
        let data = kernels::transpose_last(self.value(x).data(), bt, m, q);
        Ok(self.push(Tensor { shape, data }, Op::Transpose { x, bt, m, q }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).sum_squares();
        self.push(Tensor::scalar(s), Op::SumSquares(x))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor))
    }

    /// Mean over the batch of the class-weighted focal term on `[n,k]`
    /// probabilities (or a single `[k]` row).
    pub fn focal_loss(
        &mut self,
        probs: Var,
        targets: &[usize],
        alpha: &[T],
        kappa: T,
    ) -> Result<Var> {
        let (n, k) = match *self.shape(probs) {
            [k] => (1, k),
            [n, k] => (n, k),
            ref s => return Err(Error::shape(format!("focal loss expects [n,k], got {s:?}"))),
        };
        if targets.len() != n || alpha.len() != k {
            return Err(Error::shape(format!(
                "focal loss: {n} rows need {n} targets and {k} class weights"
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::invalid(format!(
                "target class {t} out of range for {k} classes"
            )));
        }
        let p = self.value(probs).data();
        let total: T = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| focal_term(p[i * k + t], alpha[t], kappa).0)
            .sum();
        let value = total / T::lit(n as f64);
        Ok(self.push(
            Tensor::scalar(value),
            Op::FocalLoss {
                probs,
                targets: targets.to_vec(),
                alpha: alpha.to_vec(),
                kappa,
            },
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor {
            shape: self.shape(loss).to_vec(),
            data: vec![T::one()],
        });

        fn accumulate<T: Real>(
            grads: &mut [Option<Tensor<T>>],
            v: Var,
            shape: &[usize],
            data: Vec<T>,
        ) {
            match &mut grads[v.0] {
                Some(g) => {
                    for (a, b) in g.data.iter_mut().zip(data) {
                        *a = *a + b;
                    }
                }
                slot @ None => {
                    *slot = Some(Tensor {
                        shape: shape.to_vec(),
                        data,
                    })
                }
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let gd = g.data();
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d { x, k, geom, co } => {
                    let (gx, gk) = kernels::conv2d_backward(
                        self.value(*x).data(),
                        geom,
                        self.value(*k).data(),
                        *co,
                        gd,
                    );
                    accumulate(&mut grads, *x, self.shape(*x), gx);
                    accumulate(&mut grads, *k, self.shape(*k), gk);
                }
                Op::Depthwise { x, k, geom } => {
                    let (gx, gk) = kernels::depthwise_backward(
                        self.value(*x).data(),
                        geom,
                        self.value(*k).data(),
                        gd,
                    );
                    accumulate(&mut grads, *x, self.shape(*x), gx);
                    accumulate(&mut grads, *k, self.shape(*k), gk);
                }
                Op::Pointwise { x, k, n, c, hw, co } => {
                    let (gx, gk) = kernels::pointwise_backward(
                        self.value(*x).data(),
                        *n,
                        *c,
                        *hw,
                        self.value(*k).data(),
                        *co,
                        gd,
                    );
                    accumulate(&mut grads, *x, self.shape(*x), gx);
                    accumulate(&mut grads, *k, self.shape(*k), gk);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    dims: (n, c, hw),
                    batch_stats,
                } => {
                    let gamma_v = self.value(*gamma).data();
                    let (gx, ggamma, gbeta) = if *batch_stats {
                        kernels::batchnorm_train_backward(xhat, *n, *c, *hw, inv_std, gamma_v, gd)
                    } else {
                        let mut gx = vec![T::zero(); gd.len()];
                        let mut ggamma = vec![T::zero(); *c];
                        let mut gbeta = vec![T::zero(); *c];
                        for (plane, ((dst, go), xh)) in gx
                            .chunks_exact_mut(*hw)
                            .zip(gd.chunks_exact(*hw))
                            .zip(xhat.chunks_exact(*hw))
                            .enumerate()
                        {
                            let ch = plane % c;
                            let s = gamma_v[ch] * inv_std[ch];
                            for ((d, &gv), &xv) in dst.iter_mut().zip(go).zip(xh) {
                                *d = gv * s;
                                ggamma[ch] = ggamma[ch] + gv * xv;
                                gbeta[ch] = gbeta[ch] + gv;
                            }
                        }
                        (gx, ggamma, gbeta)
                    };
                    accumulate(&mut grads, *x, self.shape(*x), gx);
                    accumulate(&mut grads, *gamma, self.shape(*gamma), ggamma);
                    accumulate(&mut grads, *beta, self.shape(*beta), gbeta);
                }
                Op::ChannelBias { x, b, c, hw } => {
                    let mut gb = vec![T::zero(); *c];
                    for (plane, chunk) in gd.chunks_exact(*hw).enumerate() {
                        gb[plane % c] = gb[plane % c] + chunk.iter().copied().sum();
                    }
                    accumulate(&mut grads, *x, self.shape(*x), gd.to_vec());
                    accumulate(&mut grads, *b, self.shape(*b), gb);
                }
                Op::Relu(x) => {
                    let gx = self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(gd)
                        .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, *x, self.shape(*x), gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, self.shape(*a), gd.to_vec());
                    accumulate(&mut grads, *b, self.shape(*b), gd.to_vec());
                }
                Op::GlobalAvgPool { x, hw } => {
                    let inv = T::one() / T::lit(*hw as f64);
                    let gx = gd
                        .iter()
                        .flat_map(|&gv| std::iter::repeat_n(gv * inv, *hw))
                        .collect();
                    accumulate(&mut grads, *x, self.shape(*x), gx);
                }
                Op::Softmax { x, k } => {
                    let gx = kernels::softmax_rows_backward(node.value.data(), gd, *k);
                    accumulate(&mut grads, *x, self.shape(*x), gx);
                }
                Op::Matmul {
                    a,
                    b,
                    dims: (bt, m, p, q),
                } => {
                    let (ga, gb) = kernels::matmul_backward(
                        self.value(*a).data(),
                        self.value(*b).data(),
                        *bt,
                        *m,
                        *p,
                        *q,
                        gd,
                    );
                    accumulate(&mut grads, *a, self.shape(*a), ga);
                    accumulate(&mut grads, *b, self.shape(*b), gb);
                }
                Op::Transpose { x, bt, m, q } => {
                    let gx = kernels::transpose_last(gd, *bt, *q, *m);
                    accumulate(&mut grads, *x, self.shape(*x), gx);
                }
                Op::Reshape(x) => accumulate(&mut grads, *x, self.shape(*x), gd.to_vec()),
                Op::Sum(x) => {
                    let gx = vec![gd[0]; self.value(*x).len()];
                    accumulate(&mut grads, *x, self.shape(*x), gx);
                }
                Op::SumSquares(x) => {
                    let two = T::lit(2.0) * gd[0];
                    let gx = self.value(*x).data().iter().map(|&v| two * v).collect();
                    accumulate(&mut grads, *x, self.shape(*x), gx);
                }
                Op::Scale(x, f) => {
                    let gx = gd.iter().map(|&gv| gv * *f).collect();
                    accumulate(&mut grads, *x, self.shape(*x), gx);
                }
                Op::FocalLoss {
                    probs,
                    targets,
                    alpha,
                    kappa,
                } => {
                    let p = self.value(*probs).data();
                    let k = alpha.len();
                    let scale = gd[0] / T::lit(targets.len() as f64);
                    let mut gp = vec![T::zero(); p.len()];
                    for (i, &t) in targets.iter().enumerate() {
                        let (_, dp) = focal_term(p[i * k + t], alpha[t], *kappa);
                        gp[i * k + t] = dp * scale;
                    }
                    accumulate(&mut grads, *probs, self.shape(*probs), gp);
                }
            }
            grads[idx] = Some(g);
        }

        let params = self.nodes.iter().map(|n| n.param).collect();
        Ok(Gradients { grads, params })
    }
}

/// Result of one backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<Option<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`, if `v` influenced it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// `(parameter id, gradient)` for every parameter leaf the loss touched.
    pub fn params(&self) -> impl Iterator<Item = (usize, &Tensor<T>)> {
        self.params
            .iter()
            .zip(&self.grads)
            .filter_map(|(p, g)| Some(((*p)?, g.as_ref()?)))
    }
}
