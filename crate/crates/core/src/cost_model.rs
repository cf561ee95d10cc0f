//! Multiply-accumulate accounting for standard and depthwise-separable
//! convolutions, residual blocks and whole networks, plus a timing harness.

use std::fmt::Write as _;
use std::time::Instant;

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::nrnet::{
    build_variant, BlockConfig, DSResBlockConfig, Mode, NRNet, NRNetConfig, Variant,
};
use crate::tensor::{macs, Tape, Tensor};

/// Geometry of one convolution layer: `c` input channels, `c_out` output
/// channels, `h_out x w_out` output extent, `d x d` kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub c: u64,
    pub c_out: u64,
    pub h_out: u64,
    pub w_out: u64,
    pub d: u64,
}

impl ConvShape {
    pub fn new(c: u64, c_out: u64, h_out: u64, w_out: u64, d: u64) -> Result<Self> {
        if [c, c_out, h_out, w_out, d].contains(&0) {
            return Err(Error::invalid("convolution extents must be positive"));
        }
        Ok(ConvShape {
            c,
            c_out,
            h_out,
            w_out,
            d,
        })
    }
}

/// `c * c' * d^2 * h' * w'`.
pub fn cc_std_conv(s: ConvShape) -> u64 {
    s.c * s.c_out * s.d * s.d * s.h_out * s.w_out
}

/// Depthwise `c * d^2 * h' * w'` plus pointwise `c * c' * h' * w'`.
pub fn cc_dsconv(s: ConvShape) -> u64 {
    s.c * s.d * s.d * s.h_out * s.w_out + s.c * s.c_out * s.h_out * s.w_out
}

/// `1/c' + 1/d^2`.
pub fn crf_conv(s: ConvShape) -> f64 {
    1.0 / s.c_out as f64 + 1.0 / (s.d * s.d) as f64
}

/// `1/c' + 3/(2d^2 + 1)`, the approximate separable-to-standard residual
/// block cost ratio for `c' = 2c`.
pub fn crf_dsres(s: ConvShape) -> f64 {
    1.0 / s.c_out as f64 + 3.0 / (2 * s.d * s.d + 1) as f64
}

/// `cc_dsconv / cc_std_conv` as an exact fraction.
pub fn conv_ratio_exact(s: ConvShape) -> Ratio<u128> {
    Ratio::new(cc_dsconv(s) as u128, cc_std_conv(s) as u128)
}

/// `1/c' + 1/d^2` as an exact fraction.
pub fn crf_conv_exact(s: ConvShape) -> Ratio<u128> {
    Ratio::new(1, s.c_out as u128) + Ratio::new(1, (s.d * s.d) as u128)
}

/// MACs of the residual block used to validate [`crf_dsres`]: two
/// convolution layers each costed on `(c, c')` at the output extent, plus a
/// 1x1 projection skip. Separable when `separable` is set.
pub fn residual_block_cost(s: ConvShape, separable: bool) -> u64 {
    let layer = if separable {
        cc_dsconv(s)
    } else {
        cc_std_conv(s)
    };
    let skip = s.c * s.c_out * s.h_out * s.w_out;
    2 * layer + skip
}

/// MACs of the residual block as the network builds it: the second layer maps
/// `c'` to `c'`.
pub fn network_block_cost(s: ConvShape, separable: bool) -> u64 {
    let second = ConvShape { c: s.c_out, ..s };
    let cost = |x| {
        if separable {
            cc_dsconv(x)
        } else {
            cc_std_conv(x)
        }
    };
    let skip = s.c * s.c_out * s.h_out * s.w_out;
    cost(s) + cost(second) + skip
}

/// Analytic cost of one network layer group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    /// Standard, depthwise and pointwise convolution MACs.
    pub conv_macs: u64,
    /// Attention products of the nonlocal block.
    pub matmul_macs: u64,
    /// Elementwise additions from residual sums and biases, excluded from
    /// the reduction factors.
    pub additions: u64,
    pub params: u64,
    pub out_shape: [usize; 3],
}

impl LayerCost {
    pub fn macs(&self) -> u64 {
        self.conv_macs + self.matmul_macs
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostTable {
    pub layers: Vec<LayerCost>,
}

impl CostTable {
    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(LayerCost::macs).sum()
    }

    pub fn total_conv_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.conv_macs).sum()
    }

    pub fn total_params(&self) -> u64 {
        self.layers.iter().map(|l| l.params).sum()
    }
}

fn out_extent(size: usize, d: usize, stride: usize) -> usize {
    (size + 2 * (d / 2) - d) / stride + 1
}

/// Per-layer MACs and parameter counts of `config` on a `c x h x w` input.
pub fn count_macs(config: &NRNetConfig, input: [usize; 3]) -> Result<CostTable> {
    config.validate()?;
    let [mut c, mut h, mut w] = input;
    if c != config.input_channels {
        return Err(Error::shape(format!(
            "network takes {} input channels, got {c}",
            config.input_channels
        )));
    }
    let u = |v: usize| v as u64;
    let mut layers = Vec::new();
    if let Some(stem) = config.stem {
        let (oh, ow) = (
            out_extent(h, stem.kernel, stem.stride),
            out_extent(w, stem.kernel, stem.stride),
        );
        let co = stem.out_channels;
        let d = u(stem.kernel);
        layers.push(LayerCost {
            name: "stem".into(),
            conv_macs: u(c * co * oh * ow) * d * d,
            matmul_macs: 0,
            additions: 0,
            params: u(c * co) * d * d + 2 * u(co),
            out_shape: [co, oh, ow],
        });
        (c, h, w) = (co, oh, ow);
    }
    for (i, block) in config.blocks.iter().enumerate() {
        let layer = match block {
            BlockConfig::CRes(r) | BlockConfig::DSRes(r) => {
                let separable = matches!(block, BlockConfig::DSRes(_));
                let DSResBlockConfig {
                    in_channels: ci,
                    out_channels: co,
                    kernel,
                    stride,
                } = *r;
                let (oh, ow) = (out_extent(h, kernel, stride), out_extent(w, kernel, stride));
                let shape = ConvShape {
                    c: u(ci),
                    c_out: u(co),
                    h_out: u(oh),
                    w_out: u(ow),
                    d: u(kernel),
                };
                let d2 = u(kernel * kernel);
                let conv_params = if separable {
                    u(ci) * d2 + u(ci * co) + u(co) * d2 + u(co * co)
                } else {
                    u(ci * co) * d2 + u(co * co) * d2
                };
                let skip = r.projects();
                let macs = if separable {
                    cc_dsconv(shape) + cc_dsconv(ConvShape { c: u(co), ..shape })
                } else {
                    cc_std_conv(shape) + cc_std_conv(ConvShape { c: u(co), ..shape })
                } + if skip { u(ci * co * oh * ow) } else { 0 };
                let out = [co, oh, ow];
                (c, h, w) = (co, oh, ow);
                LayerCost {
                    name: format!("{}{i}", if separable { "dsres" } else { "cres" }),
                    conv_macs: macs,
                    matmul_macs: 0,
                    additions: u(co * oh * ow),
                    params: conv_params + 4 * u(co) + if skip { u(ci * co) } else { 0 },
                    out_shape: out,
                }
            }
            BlockConfig::NRes(n) => {
                let (ce, hw) = (u(n.embed_channels), u(h * w));
                LayerCost {
                    name: format!("nres{i}"),
                    conv_macs: 4 * u(c) * ce * hw,
                    matmul_macs: 2 * hw * hw * ce,
                    additions: u(c) * hw,
                    params: 4 * u(c) * ce,
                    out_shape: [c, h, w],
                }
            }
        };
        layers.push(layer);
    }
    let k = config.num_classes;
    layers.push(LayerCost {
        name: "classifier".into(),
        conv_macs: u(c * k * h * w),
        matmul_macs: 0,
        additions: u(k * h * w),
        params: u(c * k + k),
        out_shape: [k, 1, 1],
    });
    Ok(CostTable { layers })
}

/// Timing result of one network variant.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub name: String,
    pub params: u64,
    pub macs: u64,
    pub median_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub input_size: usize,
    pub repetitions: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    fn median(&self, name: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.name == name)
            .map(|r| r.median_seconds)
    }

    /// Whether the expected ordering `DSRes+NRes <= DSRes <= CRes` and
    /// `DSRes+NRes <= CRes+NRes <= CRes` holds among the timed variants.
    pub fn ordering_holds(&self) -> bool {
        let chains = [
            [Variant::DSResNRes, Variant::DSRes, Variant::CRes],
            [Variant::DSResNRes, Variant::CResNRes, Variant::CRes],
        ];
        chains.iter().all(|chain| {
            let times: Vec<f64> = chain
                .iter()
                .filter_map(|v| self.median(v.as_str()))
                .collect();
            times.windows(2).all(|p| p[0] <= p[1])
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "input {0}x{0}, {1} repetitions\n{2:<12} {3:>12} {4:>14} {5:>12}\n",
            self.input_size, self.repetitions, "variant", "NoP", "MACs", "median ms"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<12} {:>12} {:>14} {:>12.3}",
                r.name,
                r.params,
                r.macs,
                r.median_seconds * 1e3
            );
        }
        let _ = writeln!(
            out,
            "ordering {}",
            if self.ordering_holds() {
                "holds"
            } else {
                "violated"
            }
        );
        out
    }

    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "variant={} input_size={} reps={} nop={} macs={} median_ms={:.6}",
                r.name,
                self.input_size,
                self.repetitions,
                r.params,
                r.macs,
                r.median_seconds * 1e3
            );
        }
        let _ = writeln!(out, "ordering_holds={}", self.ordering_holds());
        out
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Median single-slice inference time of each network on this thread.
pub fn bench_configs(
    configs: &[(String, NRNetConfig)],
    repetitions: usize,
    seed: u64,
) -> Result<BenchReport> {
    if repetitions < 3 {
        return Err(Error::invalid("benchmark needs at least 3 repetitions"));
    }
    let input_size = configs.first().map(|(_, c)| c.input_size).unwrap_or(0);
    let mut rows = Vec::new();
    for (name, cfg) in configs {
        let net = NRNet::<f32>::new(cfg.clone(), seed)?;
        let s = cfg.input_size;
        let input = Tensor::<f32>::full(&[1, cfg.input_channels, s, s], 0.5);
        let table = count_macs(cfg, [cfg.input_channels, s, s])?;
        let run = || -> Result<()> {
            let mut tape = Tape::new();
            let vars = net.bind(&mut tape);
            let x = tape.leaf(input.clone());
            net.forward(&mut tape, x, &vars, Mode::Infer)?;
            Ok(())
        };
        run()?;
        let mut times = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let start = Instant::now();
            run()?;
            times.push(start.elapsed().as_secs_f64());
        }
        rows.push(BenchRow {
            name: name.clone(),
            params: net.num_parameters() as u64,
            macs: table.total_macs(),
            median_seconds: median(times),
        });
    }
    Ok(BenchReport {
        input_size,
        repetitions,
        rows,
    })
}

/// Benchmarks the ablation variants at `input_size`.
pub fn bench(
    variants: &[Variant],
    input_size: usize,
    repetitions: usize,
    seed: u64,
) -> Result<BenchReport> {
    let configs: Vec<_> = variants
        .iter()
        .map(|&v| (v.as_str().to_string(), build_variant(v, input_size)))
        .collect();
    bench_configs(&configs, repetitions, seed)
}

/// Runs `f` and returns the MACs the tensor kernels executed.
pub fn instrumented<R>(f: impl FnOnce() -> R) -> (R, macs::MacCounts) {
    macs::measure(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_costs() {
        let s = ConvShape::new(2, 4, 5, 5, 3).unwrap();
        assert_eq!(cc_std_conv(s), 1800);
        assert_eq!(cc_dsconv(s), 650);
        assert_eq!(conv_ratio_exact(s), Ratio::new(13, 36));
        assert_eq!(conv_ratio_exact(s), crf_conv_exact(s));
        assert!((crf_conv(s) - 650.0 / 1800.0).abs() < 1e-15);
        assert_eq!(cc_std_conv(ConvShape::new(1, 1, 1, 1, 1).unwrap()), 1);
        assert!(ConvShape::new(0, 1, 1, 1, 1).is_err());
    }

    #[test]
    fn pointwise_has_no_spatial_saving() {
        for c_out in [1, 7, 512, 1 << 20] {
            let s = ConvShape::new(3, c_out, 4, 4, 1).unwrap();
            assert!(crf_conv(s) >= 1.0);
            assert_eq!(cc_dsconv(s), s.c * c_out * 16 + s.c * 16);
        }
    }

    #[test]
    fn crf_dsres_band() {
        let s = ConvShape::new(256, 512, 8, 8, 3).unwrap();
        let factor = 1.0 / crf_dsres(s);
        assert!((6.0..=7.0).contains(&factor), "{factor}");
        assert!((crf_dsres(s) - 0.1598).abs() < 1e-4);
    }

    #[test]
    fn bench_rejects_few_repetitions() {
        assert!(matches!(
            bench(&[Variant::DSRes], 16, 2, 0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
