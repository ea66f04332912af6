//! U-Net noise predictor `ε_θ(x, y_t, γ)`.
//!
//! The condition `x` and the noisy target `y_t` are stacked on the channel
//! axis. The encoder runs `blocks_per_level` residual blocks per level and
//! halves the resolution by average pooling after each level; a single
//! residual block forms the bottleneck; the decoder upsamples (nearest
//! neighbour, then a 3×3 convolution), concatenates the matching encoder map
//! scaled by `skip_scale` and runs its own residual blocks. `γ` enters every
//! block through a shared sinusoidal embedding and a per-block projection.
//!
//! Forward and backward passes are written out by hand and are generic over
//! [`Real`], so gradients can be checked in double precision while training
//! runs in single precision.

mod checkpoint;
pub mod ops;

use ndarray::{Array3, ArrayView3};
use rand::Rng as _;

use crate::diffusion::NoisePredictor;
use crate::error::{ensure, Result};
use crate::rng::rng_from_seed;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use ops::Real;
use ops::{Conv, Linear, Norm, NormCache, Tensor, GROUPS};

/// Network shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub n_bins: usize,
    pub height: usize,
    pub width: usize,
    pub base_width: usize,
    pub depth: usize,
    pub blocks_per_level: usize,
    pub embed_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self { n_bins: 8, height: 64, width: 64, base_width: 32, depth: 3, blocks_per_level: 2, embed_dim: 128 }
    }
}

impl DenoiserConfig {
    pub fn in_channels(&self) -> usize {
        2 * self.n_bins
    }

    pub fn out_channels(&self) -> usize {
        self.n_bins
    }

    /// Feature count at encoder level `l`.
    pub fn level_width(&self, l: usize) -> usize {
        self.base_width << l
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_bins >= 1, InvalidArgument, "n_bins must be at least 1");
        ensure!(self.depth >= 1, InvalidArgument, "depth must be at least 1");
        ensure!(self.blocks_per_level >= 1, InvalidArgument, "blocks_per_level must be at least 1");
        ensure!(
            self.base_width >= GROUPS && self.base_width % GROUPS == 0,
            InvalidArgument,
            "base_width must be a positive multiple of {GROUPS}, got {}",
            self.base_width
        );
        ensure!(
            self.embed_dim >= 2 && self.embed_dim % 2 == 0,
            InvalidArgument,
            "embed_dim must be even, got {}",
            self.embed_dim
        );
        let f = 1usize << self.depth;
        ensure!(
            self.height >= f && self.width >= f && self.height % f == 0 && self.width % f == 0,
            InvalidArgument,
            "{}x{} frames are not divisible by 2^{}",
            self.height,
            self.width,
            self.depth
        );
        Ok(())
    }
}

/// Role of a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Conv3Weight,
    Conv3Bias,
    Conv1Weight,
    Conv1Bias,
    NormScale,
    NormShift,
    LinearWeight,
    LinearBias,
}

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub offset: usize,
    pub len: usize,
    pub fan_in: usize,
}

#[derive(Default)]
struct Layout {
    specs: Vec<ParamSpec>,
    len: usize,
}

impl Layout {
    fn push(&mut self, name: String, kind: ParamKind, len: usize, fan_in: usize) -> usize {
        let offset = self.len;
        self.specs.push(ParamSpec { name, kind, offset, len, fan_in });
        self.len += len;
        offset
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Conv {
        let fan_in = cin * k * k;
        let (wk, bk) = if k == 1 {
            (ParamKind::Conv1Weight, ParamKind::Conv1Bias)
        } else {
            (ParamKind::Conv3Weight, ParamKind::Conv3Bias)
        };
        let w = self.push(format!("{name}.weight"), wk, cout * fan_in, fan_in);
        let b = self.push(format!("{name}.bias"), bk, cout, fan_in);
        Conv { cin, cout, k, w, b }
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        let g = self.push(format!("{name}.scale"), ParamKind::NormScale, c, 0);
        let b = self.push(format!("{name}.shift"), ParamKind::NormShift, c, 0);
        Norm { c, g, b }
    }

    fn linear(&mut self, name: &str, din: usize, dout: usize) -> Linear {
        let w = self.push(format!("{name}.weight"), ParamKind::LinearWeight, din * dout, din);
        let b = self.push(format!("{name}.bias"), ParamKind::LinearBias, dout, din);
        Linear { din, dout, w, b }
    }

    fn block(&mut self, name: &str, cin: usize, cout: usize, embed: usize) -> Block {
        Block {
            norm1: self.norm(&format!("{name}.norm1"), cin),
            conv1: self.conv(&format!("{name}.conv1"), cin, cout, 3),
            proj: self.linear(&format!("{name}.embed"), embed, cout),
            norm2: self.norm(&format!("{name}.norm2"), cout),
            conv2: self.conv(&format!("{name}.conv2"), cout, cout, 3),
            skip: (cin != cout).then(|| self.conv(&format!("{name}.skip"), cin, cout, 1)),
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    norm1: Norm,
    conv1: Conv,
    proj: Linear,
    norm2: Norm,
    conv2: Conv,
    skip: Option<Conv>,
}

#[derive(Debug, Clone)]
struct UpLevel {
    up: Conv,
    blocks: Vec<Block>,
}

#[derive(Debug, Clone)]
struct Arch {
    embed1: Linear,
    embed2: Linear,
    input: Conv,
    down: Vec<Vec<Block>>,
    mid: Block,
    /// Decoder levels, deepest first.
    up: Vec<UpLevel>,
    out_norm: Norm,
    out_conv: Conv,
}

fn build(cfg: &DenoiserConfig) -> (Arch, Layout) {
    let mut l = Layout::default();
    let e = cfg.embed_dim;
    let embed1 = l.linear("embed.0", e, e);
    let embed2 = l.linear("embed.1", e, e);
    let input = l.conv("input", cfg.in_channels(), cfg.base_width, 3);
    let mut down = Vec::new();
    let mut ch = cfg.base_width;
    for lvl in 0..cfg.depth {
        let width = cfg.level_width(lvl);
        let blocks = (0..cfg.blocks_per_level)
            .map(|i| {
                let b = l.block(&format!("down.{lvl}.{i}"), ch, width, e);
                ch = width;
                b
            })
            .collect();
        down.push(blocks);
    }
    let mid = l.block("mid", ch, ch, e);
    let mut up = Vec::new();
    for lvl in (0..cfg.depth).rev() {
        let width = cfg.level_width(lvl);
        let upconv = l.conv(&format!("up.{lvl}.upsample"), ch, ch, 3);
        let mut cin = ch + width;
        let blocks = (0..cfg.blocks_per_level)
            .map(|i| {
                let b = l.block(&format!("up.{lvl}.{i}"), cin, width, e);
                cin = width;
                b
            })
            .collect();
        ch = width;
        up.push(UpLevel { up: upconv, blocks });
    }
    let out_norm = l.norm("out.norm", ch);
    let out_conv = l.conv("out.conv", ch, cfg.out_channels(), 3);
    (Arch { embed1, embed2, input, down, mid, up, out_norm, out_conv }, l)
}

/// The denoiser: architecture plus a flat parameter vector.
#[derive(Debug, Clone)]
pub struct UNet<T = f32> {
    cfg: DenoiserConfig,
    arch: Arch,
    specs: Vec<ParamSpec>,
    params: Vec<T>,
    /// Factor applied to encoder maps entering the decoder.
    pub skip_scale: f64,
}

/// Initialize a network deterministically from `seed`.
pub fn init_denoiser(cfg: &DenoiserConfig, seed: u64) -> Result<UNet<f32>> {
    UNet::new(cfg, seed)
}

/// Predict the noise in `y_noisy` given the condition `x_cond`.
pub fn denoise(net: &UNet<f32>, x_cond: ArrayView3<'_, f32>, y_noisy: ArrayView3<'_, f32>, gamma: f64) -> Result<Array3<f32>> {
    net.predict_noise(x_cond, y_noisy, gamma)
}

struct BlockCache<T> {
    x: Tensor<T>,
    n1: NormCache<T>,
    a1: Tensor<T>,
    col1: Vec<T>,
    n2: NormCache<T>,
    a2: Tensor<T>,
    col2: Vec<T>,
}

struct Tape<T> {
    feat: Vec<T>,
    e1: Vec<T>,
    e2: Vec<T>,
    emb_act: Vec<T>,
    input_col: Vec<T>,
    down: Vec<Vec<BlockCache<T>>>,
    mid: BlockCache<T>,
    /// Per decoder level: upsample conv columns, then block caches.
    up: Vec<(Vec<T>, Vec<BlockCache<T>>)>,
    out_n: NormCache<T>,
    out_a: Tensor<T>,
    out_col: Vec<T>,
}

impl<T: Real> UNet<T> {
    pub fn new(cfg: &DenoiserConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (arch, layout) = build(cfg);
        let mut rng = rng_from_seed(seed);
        let mut params = Vec::with_capacity(layout.len);
        for spec in &layout.specs {
            match spec.kind {
                ParamKind::NormScale => params.extend(std::iter::repeat_n(T::one(), spec.len)),
                ParamKind::NormShift => params.extend(std::iter::repeat_n(T::zero(), spec.len)),
                _ => {
                    let bound = 1.0 / (spec.fan_in as f64).sqrt();
                    params.extend((0..spec.len).map(|_| T::of(rng.random_range(-bound..bound))));
                }
            }
        }
        Ok(Self { cfg: *cfg, arch, specs: layout.specs, params, skip_scale: std::f64::consts::FRAC_1_SQRT_2 })
    }

    /// Rebuild a network from a config and a parameter vector.
    pub fn from_params(cfg: &DenoiserConfig, params: Vec<T>) -> Result<Self> {
        cfg.validate()?;
        let (arch, layout) = build(cfg);
        ensure!(
            params.len() == layout.len,
            ShapeMismatch,
            "{} parameters for a network of {}",
            params.len(),
            layout.len
        );
        ensure!(params.iter().all(|v| v.is_finite()), NonFinite, "parameters");
        Ok(Self { cfg: *cfg, arch, specs: layout.specs, params, skip_scale: std::f64::consts::FRAC_1_SQRT_2 })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Same network in another precision.
    pub fn cast<U: Real>(&self) -> UNet<U> {
        UNet {
            cfg: self.cfg,
            arch: self.arch.clone(),
            specs: self.specs.clone(),
            params: self.params.iter().map(|v| U::of(v.f64())).collect(),
            skip_scale: self.skip_scale,
        }
    }

    fn check_inputs(&self, x: ArrayView3<'_, f32>, y: ArrayView3<'_, f32>, gamma: f64) -> Result<()> {
        let want = (self.cfg.n_bins, self.cfg.height, self.cfg.width);
        ensure!(x.dim() == want, ShapeMismatch, "condition {:?}, network expects {:?}", x.dim(), want);
        ensure!(y.dim() == want, ShapeMismatch, "noisy target {:?}, network expects {:?}", y.dim(), want);
        ensure!(gamma > 0.0 && gamma <= 1.0, InvalidArgument, "gamma {gamma} outside (0, 1]");
        ensure!(
            x.iter().chain(y.iter()).all(|v| v.is_finite()),
            NonFinite,
            "network input contains non-finite values"
        );
        Ok(())
    }

    fn embedding(&self, gamma: f64) -> Vec<T> {
        let half = self.cfg.embed_dim / 2;
        let mut feat = vec![T::zero(); 2 * half];
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            let arg = 1000.0 * gamma * freq;
            feat[i] = T::of(arg.sin());
            feat[half + i] = T::of(arg.cos());
        }
        feat
    }

    fn block_forward(&self, blk: &Block, x: Tensor<T>, emb_act: &[T]) -> (Tensor<T>, BlockCache<T>) {
        let p = &self.params;
        let (a1, n1) = ops::norm_forward(p, &blk.norm1, &x);
        let s1 = Tensor { data: ops::silu(&a1.data), ..a1.clone() };
        let (mut h, col1) = ops::conv_forward(p, &blk.conv1, &s1);
        let shift = ops::linear_forward(p, &blk.proj, emb_act);
        let hw = h.hw();
        for (chunk, &s) in h.data.chunks_mut(hw).zip(&shift) {
            chunk.iter_mut().for_each(|v| *v += s);
        }
        let (a2, n2) = ops::norm_forward(p, &blk.norm2, &h);
        let s2 = Tensor { data: ops::silu(&a2.data), ..a2.clone() };
        let (mut out, col2) = ops::conv_forward(p, &blk.conv2, &s2);
        match &blk.skip {
            Some(conv) => out.add_assign(&ops::conv_forward(p, conv, &x).0),
            None => out.add_assign(&x),
        }
        (out, BlockCache { x, n1, a1, col1, n2, a2, col2 })
    }

    fn block_backward(&self, g: &mut [T], blk: &Block, c: BlockCache<T>, dout: Tensor<T>, emb_act: &[T], d_emb: &mut [T]) -> Tensor<T> {
        let p = &self.params;
        let mut dx = match &blk.skip {
            Some(conv) => ops::conv_backward(p, g, conv, &c.x.data, &dout, true).expect("input gradient"),
            None => dout.clone(),
        };
        let ds2 = ops::conv_backward(p, g, &blk.conv2, &c.col2, &dout, true).expect("input gradient");
        let da2 = Tensor { data: ops::silu_backward(&c.a2.data, &ds2.data), ..ds2 };
        let dh = ops::norm_backward(p, g, &blk.norm2, &c.n2, &da2);
        let hw = dh.hw();
        let dshift: Vec<T> = dh.data.chunks(hw).map(|ch| T::of(ch.iter().fold(0.0, |a, &v| a + v.f64()))).collect();
        let de = ops::linear_backward(p, g, &blk.proj, emb_act, &dshift);
        d_emb.iter_mut().zip(&de).for_each(|(a, &b)| *a += b);
        let ds1 = ops::conv_backward(p, g, &blk.conv1, &c.col1, &dh, true).expect("input gradient");
        let da1 = Tensor { data: ops::silu_backward(&c.a1.data, &ds1.data), ..ds1 };
        dx.add_assign(&ops::norm_backward(p, g, &blk.norm1, &c.n1, &da1));
        dx
    }

    fn forward(&self, x: ArrayView3<'_, f32>, y: ArrayView3<'_, f32>, gamma: f64) -> (Tensor<T>, Tape<T>) {
        let p = &self.params;
        let a = &self.arch;
        let feat = self.embedding(gamma);
        let e1 = ops::linear_forward(p, &a.embed1, &feat);
        let e2 = ops::linear_forward(p, &a.embed2, &ops::silu(&e1));
        let emb_act = ops::silu(&e2);

        let (h, w) = (self.cfg.height, self.cfg.width);
        let data = x.iter().chain(y.iter()).map(|&v| T::of(f64::from(v))).collect();
        let inp = Tensor { c: self.cfg.in_channels(), h, w, data };
        let (mut cur, input_col) = ops::conv_forward(p, &a.input, &inp);

        let mut skips = Vec::with_capacity(a.down.len());
        let mut down = Vec::with_capacity(a.down.len());
        for level in &a.down {
            let mut caches = Vec::with_capacity(level.len());
            for blk in level {
                let (o, c) = self.block_forward(blk, cur, &emb_act);
                caches.push(c);
                cur = o;
            }
            let pooled = ops::avg_pool2(&cur);
            skips.push(cur);
            cur = pooled;
            down.push(caches);
        }
        let (o, mid) = self.block_forward(&a.mid, cur, &emb_act);
        cur = o;

        let scale = T::of(self.skip_scale);
        let mut up = Vec::with_capacity(a.up.len());
        for level in &a.up {
            let (u, col) = ops::conv_forward(p, &level.up, &ops::upsample2(&cur));
            let skip = skips.pop().expect("one skip per level");
            cur = ops::concat(&u, &skip, scale);
            let mut caches = Vec::with_capacity(level.blocks.len());
            for blk in &level.blocks {
                let (o, c) = self.block_forward(blk, cur, &emb_act);
                caches.push(c);
                cur = o;
            }
            up.push((col, caches));
        }
        let (out_a, out_n) = ops::norm_forward(p, &a.out_norm, &cur);
        let s = Tensor { data: ops::silu(&out_a.data), ..out_a.clone() };
        let (out, out_col) = ops::conv_forward(p, &a.out_conv, &s);
        (out, Tape { feat, e1, e2, emb_act, input_col, down, mid, up, out_n, out_a, out_col })
    }

    /// Accumulate `∂L/∂θ` into `g` given `dout = ∂L/∂output`; returns the
    /// gradient with respect to the stacked `(x, y_t)` input.
    fn backward(&self, g: &mut [T], tape: Tape<T>, dout: Tensor<T>) -> Tensor<T> {
        let p = &self.params;
        let a = &self.arch;
        let mut d_emb = vec![T::zero(); self.cfg.embed_dim];
        let emb_act = &tape.emb_act;

        let ds = ops::conv_backward(p, g, &a.out_conv, &tape.out_col, &dout, true).expect("input gradient");
        let da = Tensor { data: ops::silu_backward(&tape.out_a.data, &ds.data), ..ds };
        let mut dcur = ops::norm_backward(p, g, &a.out_norm, &tape.out_n, &da);

        let scale = T::of(self.skip_scale);
        let mut dskips = Vec::with_capacity(a.up.len());
        for (level, (col, caches)) in a.up.iter().zip(tape.up).rev() {
            for (blk, c) in level.blocks.iter().zip(caches).rev() {
                dcur = self.block_backward(g, blk, c, dcur, emb_act, &mut d_emb);
            }
            let (du, dskip) = ops::concat_backward(&dcur, level.up.cout, scale);
            dskips.push(dskip);
            let dup = ops::conv_backward(p, g, &level.up, &col, &du, true).expect("input gradient");
            dcur = ops::upsample2_backward(&dup);
        }
        dcur = self.block_backward(g, &a.mid, tape.mid, dcur, emb_act, &mut d_emb);
        for (level, caches) in a.down.iter().zip(tape.down).rev() {
            let mut d = ops::avg_pool2_backward(&dcur);
            d.add_assign(&dskips.pop().expect("one skip gradient per level"));
            dcur = d;
            for (blk, c) in level.iter().zip(caches).rev() {
                dcur = self.block_backward(g, blk, c, dcur, emb_act, &mut d_emb);
            }
        }
        let dinp = ops::conv_backward(p, g, &a.input, &tape.input_col, &dcur, true).expect("input gradient");

        let de2 = ops::silu_backward(&tape.e2, &d_emb);
        let ds1 = ops::linear_backward(p, g, &a.embed2, &ops::silu(&tape.e1), &de2);
        let de1 = ops::silu_backward(&tape.e1, &ds1);
        ops::linear_backward(p, g, &a.embed1, &tape.feat, &de1);
        dinp
    }

    /// Network output in the working precision.
    pub fn predict(&self, x: ArrayView3<'_, f32>, y: ArrayView3<'_, f32>, gamma: f64) -> Result<Vec<T>> {
        self.check_inputs(x, y, gamma)?;
        let (out, _) = self.forward(x, y, gamma);
        ensure!(out.data.iter().all(|v| v.is_finite()), NonFinite, "network output");
        Ok(out.data)
    }

    /// Mean squared error between the prediction and `eps`.
    pub fn loss(&self, x: ArrayView3<'_, f32>, y: ArrayView3<'_, f32>, gamma: f64, eps: ArrayView3<'_, f32>) -> Result<f64> {
        let out = self.predict(x, y, gamma)?;
        ensure!(eps.dim() == y.dim(), ShapeMismatch, "target noise {:?}", eps.dim());
        let sse: f64 = out.iter().zip(eps.iter()).map(|(&o, &e)| (o.f64() - f64::from(e)).powi(2)).sum();
        Ok(sse / out.len() as f64)
    }

    /// Loss as in [`Self::loss`]; adds `weight·∂loss/∂θ` into `grad` and
    /// returns the loss together with `∂loss/∂y_t`.
    pub fn accumulate_gradient(
        &self,
        x: ArrayView3<'_, f32>,
        y: ArrayView3<'_, f32>,
        gamma: f64,
        eps: ArrayView3<'_, f32>,
        weight: f64,
        grad: &mut [T],
    ) -> Result<(f64, Array3<T>)> {
        self.check_inputs(x, y, gamma)?;
        ensure!(eps.dim() == y.dim(), ShapeMismatch, "target noise {:?}", eps.dim());
        ensure!(grad.len() == self.params.len(), ShapeMismatch, "gradient buffer of {}", grad.len());
        let (out, tape) = self.forward(x, y, gamma);
        let n = out.data.len() as f64;
        let mut sse = 0.0;
        let dout_data = out
            .data
            .iter()
            .zip(eps.iter())
            .map(|(&o, &e)| {
                let r = o.f64() - f64::from(e);
                sse += r * r;
                T::of(2.0 * weight * r / n)
            })
            .collect();
        let loss = sse / n;
        ensure!(loss.is_finite(), NonFinite, "loss");
        let dout = Tensor { c: out.c, h: out.h, w: out.w, data: dout_data };
        let dinp = self.backward(grad, tape, dout);
        let half = self.cfg.n_bins * self.cfg.height * self.cfg.width;
        let dy = Array3::from_shape_vec(y.dim(), dinp.data[half..].to_vec()).expect("input gradient shape");
        Ok((loss, dy))
    }

    /// Loss and its full parameter gradient.
    pub fn loss_and_grad(&self, x: ArrayView3<'_, f32>, y: ArrayView3<'_, f32>, gamma: f64, eps: ArrayView3<'_, f32>) -> Result<(f64, Vec<T>)> {
        let mut g = vec![T::zero(); self.params.len()];
        let (loss, _) = self.accumulate_gradient(x, y, gamma, eps, 1.0, &mut g)?;
        Ok((loss, g))
    }
}

impl<T: Real> NoisePredictor for UNet<T> {
    fn predict_noise(&self, x: ArrayView3<'_, f32>, y_t: ArrayView3<'_, f32>, gamma: f64) -> Result<Array3<f32>> {
        let out = self.predict(x, y_t, gamma)?;
        Ok(Array3::from_shape_vec(y_t.dim(), out.into_iter().map(|v| v.f64() as f32).collect()).expect("output shape"))
    }
}
