use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UnetError};
use crate::ops::{self, ConvShape};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How the decoder doubles resolution before halving channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpMode {
    /// Nearest-neighbour 2x followed by a same-padded convolution.
    #[default]
    Nearest,
    /// 2x2 stride-2 transposed convolution.
    Transposed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    pub input_side: usize,
    pub in_channels: usize,
    pub base_channels: usize,
    pub levels: usize,
    pub kernel: usize,
    pub out_channels: usize,
    /// Channels of the last 3x3 stage before the 1x1 output convolution.
    pub head_channels: usize,
    pub upsample: UpMode,
    /// Multiplier on the He-normal standard deviation.
    pub init_gain: f64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            input_side: 512,
            in_channels: 1,
            base_channels: 64,
            levels: 4,
            kernel: 3,
            out_channels: 1,
            head_channels: 2,
            upsample: UpMode::Nearest,
            init_gain: 1.0,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(UnetError::Config(m));
        if self.levels == 0 || self.levels > 8 {
            return bad(format!("levels must be in 1..=8, got {}", self.levels));
        }
        if self.input_side == 0 || self.input_side % (1 << self.levels) != 0 {
            return bad(format!(
                "input side {} is not divisible by 2^{}",
                self.input_side, self.levels
            ));
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        if self.in_channels == 0 || self.base_channels == 0 || self.head_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.out_channels != 1 {
            return bad(format!("only one output channel is supported, got {}", self.out_channels));
        }
        if !(self.init_gain > 0.0 && self.init_gain.is_finite()) {
            return bad(format!("init gain must be positive, got {}", self.init_gain));
        }
        Ok(())
    }

    /// Channels of each encoder level, the bottleneck, then each decoder
    /// level: `64, 128, 256, 512, 1024, 512, 256, 128, 64` by default.
    pub fn channel_ladder(&self) -> Vec<usize> {
        let down: Vec<usize> = (0..=self.levels).map(|i| self.base_channels << i).collect();
        down.iter().copied().chain(down.iter().rev().skip(1).copied()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Conv(ConvShape),
    /// 2x2 stride-2 transposed convolution.
    Up { cin: usize, cout: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    kind: Kind,
    w_off: usize,
    b_off: usize,
}

impl Layer {
    fn cout(&self) -> usize {
        match self.kind {
            Kind::Conv(s) => s.cout,
            Kind::Up { cout, .. } => cout,
        }
    }

    fn fan_in(&self) -> usize {
        match self.kind {
            Kind::Conv(s) => s.cin * s.k * s.k,
            Kind::Up { cin, .. } => cin,
        }
    }

    fn weight_len(&self) -> usize {
        match self.kind {
            Kind::Conv(s) => s.weight_len(),
            Kind::Up { cin, cout } => 4 * cin * cout,
        }
    }
}

/// Output side and channels of one stage, recorded by [`UNet::forward_traced`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageShape {
    pub name: String,
    pub channels: usize,
    pub side: usize,
}

/// Activations kept for the backward pass.
pub struct Cache<T> {
    input: Tensor<T>,
    enc: Vec<(Tensor<T>, Tensor<T>, Vec<u8>, Tensor<T>)>,
    bottleneck: (Tensor<T>, Tensor<T>),
    dec: Vec<DecCache<T>>,
    head: Tensor<T>,
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
}

struct DecCache<T> {
    upsampled: Option<Tensor<T>>,
    up: Tensor<T>,
    cat: Tensor<T>,
    a: Tensor<T>,
    b: Tensor<T>,
}

/// U-Net with all parameters in one flat vector.
#[derive(Debug, Clone)]
pub struct UNet<T> {
    config: UNetConfig,
    layers: Vec<Layer>,
    pub params: Vec<T>,
}

struct Plan {
    enc: Vec<[usize; 2]>,
    bottleneck: [usize; 2],
    dec: Vec<[usize; 3]>,
    head: usize,
    out: usize,
}

impl<T: Scalar> UNet<T> {
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layers = Self::layout(&config);
        let len = layers.last().map(|l| l.b_off + l.cout()).unwrap_or(0);
        let mut params = vec![T::zero(); len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &layers {
            let std = config.init_gain * (2.0 / l.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite deviation");
            for p in &mut params[l.w_off..l.w_off + l.weight_len()] {
                *p = T::of(normal.sample(&mut rng));
            }
        }
        Ok(Self { config, layers, params })
    }

    /// Rebuilds a network around existing weights.
    pub fn from_params(config: UNetConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layers = Self::layout(&config);
        let want = layers.last().map(|l| l.b_off + l.cout()).unwrap_or(0);
        if params.len() != want {
            return Err(UnetError::Checkpoint(format!(
                "expected {want} parameters, found {}",
                params.len()
            )));
        }
        Ok(Self { config, layers, params })
    }

    fn layout(config: &UNetConfig) -> Vec<Layer> {
        let k = config.kernel;
        let ch = |i: usize| config.base_channels << i;
        let mut kinds = Vec::new();
        let conv = |cin, cout, k| Kind::Conv(ConvShape { cin, cout, k });
        for i in 0..config.levels {
            let cin = if i == 0 { config.in_channels } else { ch(i - 1) };
            kinds.push(conv(cin, ch(i), k));
            kinds.push(conv(ch(i), ch(i), k));
        }
        let l = config.levels;
        kinds.push(conv(ch(l - 1), ch(l), k));
        kinds.push(conv(ch(l), ch(l), k));
        for j in (0..l).rev() {
            kinds.push(match config.upsample {
                UpMode::Nearest => conv(ch(j + 1), ch(j), k),
                UpMode::Transposed => Kind::Up {
                    cin: ch(j + 1),
                    cout: ch(j),
                },
            });
            kinds.push(conv(2 * ch(j), ch(j), k));
            kinds.push(conv(ch(j), ch(j), k));
        }
        kinds.push(conv(ch(0), config.head_channels, k));
        kinds.push(conv(config.head_channels, config.out_channels, 1));

        let mut off = 0;
        kinds
            .into_iter()
            .map(|kind| {
                let mut l = Layer {
                    kind,
                    w_off: off,
                    b_off: 0,
                };
                l.b_off = off + l.weight_len();
                off = l.b_off + l.cout();
                l
            })
            .collect()
    }

    fn plan(&self) -> Plan {
        let l = self.config.levels;
        let enc = (0..l).map(|i| [2 * i, 2 * i + 1]).collect();
        let bottleneck = [2 * l, 2 * l + 1];
        let dec = (0..l).map(|j| {
            let o = 2 * l + 2 + 3 * j;
            [o, o + 1, o + 2]
        });
        let head = 2 * l + 2 + 3 * l;
        Plan {
            enc,
            bottleneck,
            dec: dec.collect(),
            head,
            out: head + 1,
        }
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = self.config.input_side;
        if x.c != self.config.in_channels || x.h != s || x.w != s {
            return Err(UnetError::Shape(format!(
                "expected N x {} x {s} x {s}, got {:?}",
                self.config.in_channels,
                x.shape()
            )));
        }
        Ok(())
    }

    fn conv(&self, idx: usize, x: &Tensor<T>, relu: bool) -> Tensor<T> {
        let l = self.layers[idx];
        let Kind::Conv(s) = l.kind else {
            unreachable!("layer {idx} is not a convolution")
        };
        let mut out = Tensor::zeros(x.n, s.cout, x.h, x.w);
        let (wt, b) = (&self.params[l.w_off..l.b_off], &self.params[l.b_off..l.b_off + s.cout]);
        let len = out.sample_len();
        out.data.par_chunks_mut(len).enumerate().for_each(|(i, o)| {
            ops::conv_forward(s, wt, b, x.sample(i), x.h, x.w, relu, o);
        });
        out
    }

    fn conv_back(
        &self,
        idx: usize,
        x: &Tensor<T>,
        dout: &Tensor<T>,
        grads: &mut [T],
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let l = self.layers[idx];
        let Kind::Conv(s) = l.kind else {
            unreachable!("layer {idx} is not a convolution")
        };
        let wt = &self.params[l.w_off..l.b_off];
        let (gw, gb) = grads[l.w_off..l.b_off + s.cout].split_at_mut(l.b_off - l.w_off);
        let mut dx = need_dx.then(|| Tensor::zeros(x.n, x.c, x.h, x.w));
        for i in 0..x.n {
            let d = dx.as_mut().map(|t| t.sample_mut(i));
            ops::conv_backward(s, wt, x.sample(i), dout.sample(i), x.h, x.w, gw, gb, d);
        }
        dx
    }

    fn pool(x: &Tensor<T>) -> (Tensor<T>, Vec<u8>) {
        let mut out = Tensor::zeros(x.n, x.c, x.h / 2, x.w / 2);
        let mut arg = vec![0u8; out.data.len()];
        let len = out.sample_len();
        out.data
            .par_chunks_mut(len)
            .zip(arg.par_chunks_mut(len))
            .enumerate()
            .for_each(|(i, (o, a))| ops::maxpool_forward(x.sample(i), x.c, x.h, x.w, o, a));
        (out, arg)
    }

    /// Returns the upsampled input (nearest mode only) and the stage output.
    fn up(&self, idx: usize, x: &Tensor<T>) -> (Option<Tensor<T>>, Tensor<T>) {
        let l = self.layers[idx];
        match l.kind {
            Kind::Conv(_) => {
                let mut u = Tensor::zeros(x.n, x.c, 2 * x.h, 2 * x.w);
                let len = u.sample_len();
                u.data
                    .par_chunks_mut(len)
                    .enumerate()
                    .for_each(|(i, o)| ops::upsample_forward(x.sample(i), x.c, x.h, x.w, o));
                let out = self.conv(idx, &u, true);
                (Some(u), out)
            }
            Kind::Up { cin, cout } => {
                let mut out = Tensor::zeros(x.n, cout, 2 * x.h, 2 * x.w);
                let (wt, b) = (&self.params[l.w_off..l.b_off], &self.params[l.b_off..l.b_off + cout]);
                let len = out.sample_len();
                out.data.par_chunks_mut(len).enumerate().for_each(|(i, o)| {
                    ops::tconv_forward(cin, cout, wt, b, x.sample(i), x.h, x.w, o);
                });
                (None, out)
            }
        }
    }

    fn concat(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
        let mut out = Tensor::zeros(a.n, a.c + b.c, a.h, a.w);
        for i in 0..a.n {
            let o = out.sample_mut(i);
            let (l, r) = o.split_at_mut(a.sample_len());
            l.copy_from_slice(a.sample(i));
            r.copy_from_slice(b.sample(i));
        }
        out
    }

    /// Forward pass keeping every activation for [`UNet::backward`].
    pub fn forward(&self, x: &Tensor<T>) -> Result<Cache<T>> {
        self.check_input(x)?;
        let p = self.plan();
        let mut enc = Vec::with_capacity(p.enc.len());
        let mut cur = x.clone();
        for [c1, c2] in &p.enc {
            let a = self.conv(*c1, &cur, true);
            let b = self.conv(*c2, &a, true);
            let (pooled, arg) = Self::pool(&b);
            cur = pooled.clone();
            enc.push((a, b, arg, pooled));
        }
        let ba = self.conv(p.bottleneck[0], &cur, true);
        let bb = self.conv(p.bottleneck[1], &ba, true);
        let mut cur = bb.clone();
        let mut dec = Vec::with_capacity(p.dec.len());
        for (j, [u, c1, c2]) in p.dec.iter().enumerate() {
            let skip = &enc[enc.len() - 1 - j].1;
            let (upsampled, up) = self.up(*u, &cur);
            let cat = Self::concat(skip, &up);
            let a = self.conv(*c1, &cat, true);
            let b = self.conv(*c2, &a, true);
            cur = b.clone();
            dec.push(DecCache {
                upsampled,
                up,
                cat,
                a,
                b,
            });
        }
        let head = self.conv(p.head, &cur, true);
        let logits = self.conv(p.out, &head, false);
        let mut probs = logits.clone();
        probs.data.iter_mut().for_each(|v| *v = sigmoid(*v));
        Ok(Cache {
            input: x.clone(),
            enc,
            bottleneck: (ba, bb),
            dec,
            head,
            logits,
            probs,
        })
    }

    /// Inference pass that frees activations as soon as they are used.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_traced(x).map(|(p, _)| p)
    }

    /// As [`UNet::predict`], also reporting the shape after every stage.
    pub fn forward_traced(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<StageShape>)> {
        self.check_input(x)?;
        let p = self.plan();
        let mut trace = Vec::new();
        let mut record = |name: String, t: &Tensor<T>| {
            trace.push(StageShape {
                name,
                channels: t.c,
                side: t.h,
            })
        };
        let mut skips = Vec::new();
        let mut cur = x.clone();
        for (i, [c1, c2]) in p.enc.iter().enumerate() {
            let a = self.conv(*c1, &cur, true);
            let b = self.conv(*c2, &a, true);
            drop(a);
            record(format!("encoder{i}"), &b);
            cur = Self::pool(&b).0;
            record(format!("pool{i}"), &cur);
            skips.push(b);
        }
        let a = self.conv(p.bottleneck[0], &cur, true);
        cur = self.conv(p.bottleneck[1], &a, true);
        drop(a);
        record("bottleneck".into(), &cur);
        for (j, [u, c1, c2]) in p.dec.iter().enumerate() {
            let skip = skips.pop().expect("one skip per level");
            let up = self.up(*u, &cur).1;
            record(format!("up{j}"), &up);
            let cat = Self::concat(&skip, &up);
            drop((skip, up));
            let a = self.conv(*c1, &cat, true);
            drop(cat);
            cur = self.conv(*c2, &a, true);
            record(format!("decoder{j}"), &cur);
        }
        let head = self.conv(p.head, &cur, true);
        record("head".into(), &head);
        let mut probs = self.conv(p.out, &head, false);
        probs.data.iter_mut().for_each(|v| *v = sigmoid(*v));
        record("output".into(), &probs);
        Ok((probs, trace))
    }

    /// Gradient of the loss with respect to every parameter, given the loss
    /// gradient with respect to the output logits.
    pub fn backward(&self, cache: &Cache<T>, dlogits: &Tensor<T>) -> Vec<T> {
        let p = self.plan();
        let mut grads = vec![T::zero(); self.params.len()];
        let masked = |mut d: Tensor<T>, out: &Tensor<T>| {
            ops::relu_backward(&out.data, &mut d.data);
            d
        };

        let dhead = self.conv_back(p.out, &cache.head, dlogits, &mut grads, true).expect("dx");
        let dhead = masked(dhead, &cache.head);
        let top = cache.dec.last().map(|d| &d.b).unwrap_or(&cache.bottleneck.1);
        let mut dcur = self.conv_back(p.head, top, &dhead, &mut grads, true).expect("dx");

        let l = self.config.levels;
        let mut dskips: Vec<Option<Tensor<T>>> = (0..l).map(|_| None).collect();
        for (j, [u, c1, c2]) in p.dec.iter().enumerate().rev() {
            let dc = &cache.dec[j];
            let d = masked(dcur, &dc.b);
            let da = masked(self.conv_back(*c2, &dc.a, &d, &mut grads, true).expect("dx"), &dc.a);
            let dcat = self.conv_back(*c1, &dc.cat, &da, &mut grads, true).expect("dx");
            let skip_c = dcat.c / 2;
            let mut dskip = Tensor::zeros(dcat.n, skip_c, dcat.h, dcat.w);
            let mut dup = Tensor::zeros(dcat.n, dcat.c - skip_c, dcat.h, dcat.w);
            for i in 0..dcat.n {
                let (a, b) = dcat.sample(i).split_at(dskip.sample_len());
                dskip.sample_mut(i).copy_from_slice(a);
                dup.sample_mut(i).copy_from_slice(b);
            }
            dskips[l - 1 - j] = Some(dskip);
            let dup = masked(dup, &dc.up);
            let prev = if j == 0 { &cache.bottleneck.1 } else { &cache.dec[j - 1].b };
            dcur = self.up_back(*u, prev, dc.upsampled.as_ref(), &dup, &mut grads);
        }

        let (ba, bb) = &cache.bottleneck;
        let d = masked(dcur, bb);
        let d = masked(self.conv_back(p.bottleneck[1], ba, &d, &mut grads, true).expect("dx"), ba);
        let pooled_top = cache.enc.last().map(|e| &e.3).unwrap_or(&cache.input);
        let mut dcur = self.conv_back(p.bottleneck[0], pooled_top, &d, &mut grads, true).expect("dx");

        for (i, [c1, c2]) in p.enc.iter().enumerate().rev() {
            let (a, b, arg, _) = &cache.enc[i];
            let mut db = dskips[i].take().expect("skip gradient");
            let mut tmp = vec![T::zero(); b.sample_len()];
            for s in 0..b.n {
                let len = dcur.sample_len();
                ops::maxpool_backward(dcur.sample(s), &arg[s * len..(s + 1) * len], b.c, b.h, b.w, &mut tmp);
                for (g, t) in db.sample_mut(s).iter_mut().zip(&tmp) {
                    *g = *g + *t;
                }
            }
            let db = masked(db, b);
            let da = masked(self.conv_back(*c2, a, &db, &mut grads, true).expect("dx"), a);
            let input = if i == 0 { &cache.input } else { &cache.enc[i - 1].3 };
            match self.conv_back(*c1, input, &da, &mut grads, i > 0) {
                Some(dx) => dcur = dx,
                None => break,
            }
        }
        grads
    }

    fn up_back(
        &self,
        idx: usize,
        x: &Tensor<T>,
        upsampled: Option<&Tensor<T>>,
        dout: &Tensor<T>,
        grads: &mut [T],
    ) -> Tensor<T> {
        let l = self.layers[idx];
        match l.kind {
            Kind::Conv(_) => {
                let u = upsampled.expect("nearest mode keeps the upsampled input");
                let du = self.conv_back(idx, u, dout, grads, true).expect("dx");
                let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
                for i in 0..x.n {
                    ops::upsample_backward(du.sample(i), x.c, x.h, x.w, dx.sample_mut(i));
                }
                dx
            }
            Kind::Up { cin, cout } => {
                let wt = &self.params[l.w_off..l.b_off];
                let (gw, gb) = grads[l.w_off..l.b_off + cout].split_at_mut(l.b_off - l.w_off);
                let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
                for i in 0..x.n {
                    ops::tconv_backward(cin, cout, wt, x.sample(i), dout.sample(i), x.h, x.w, gw, gb, dx.sample_mut(i));
                }
                dx
            }
        }
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
