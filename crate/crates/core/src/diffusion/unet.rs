//! Conditional encoder–decoder velocity network.
//!
//! Layout: a stem convolution over (latent, x-coord, y-coord), one residual
//! block per resolution level on the way down, a bottleneck block, and one
//! block per level on the way up fed by nearest-neighbour upsampling
//! concatenated with the matching skip. Every block receives a per-channel
//! scale and shift projected from the mixed (problem embedding ⊕ time
//! embedding) vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{
    avg_pool2, avg_pool2_backward, silu, silu_backward, upsample2, upsample2_backward, Conv2d, Dense,
    ParamLayout, Tensor,
};

/// Raw per-point and scalar conditioning features, already normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionInput {
    /// (x, y, fix_x, fix_y) per support.
    pub supports: Vec<[f32; 4]>,
    /// (x, y, fx, fy) per load, forces scaled by the largest magnitude.
    pub loads: Vec<[f32; 4]>,
    pub volume_fraction: f32,
    pub cell_size: f32,
    pub aspect: [f32; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Channel width per resolution level; the last entry is the bottleneck.
    pub widths: Vec<usize>,
    pub point_hidden: usize,
    pub point_out: usize,
    pub vf_dim: usize,
    pub cell_dim: usize,
    pub aspect_dim: usize,
    pub time_dim: usize,
    pub mix_dim: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 64, 64],
            point_hidden: 64,
            point_out: 48,
            vf_dim: 16,
            cell_dim: 8,
            aspect_dim: 8,
            time_dim: 32,
            mix_dim: 128,
        }
    }
}

impl UNetConfig {
    /// A few-hundred-parameter network for gradient checks on tiny grids.
    pub fn tiny() -> Self {
        Self {
            widths: vec![4, 4, 6, 6],
            point_hidden: 8,
            point_out: 4,
            vf_dim: 4,
            cell_dim: 2,
            aspect_dim: 2,
            time_dim: 8,
            mix_dim: 8,
        }
    }

    pub fn cond_dim(&self) -> usize {
        2 * self.point_out + self.vf_dim + self.cell_dim + self.aspect_dim
    }

    /// Spatial sizes must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << (self.widths.len() - 1)
    }
}

/// Shared two-layer point map followed by mean pooling.
#[derive(Debug, Clone)]
struct PointSetEncoder {
    l1: Dense,
    l2: Dense,
}

struct PointSetCache {
    inputs: Vec<[f32; 4]>,
    pre: Vec<Vec<f32>>,
    hidden: Vec<Vec<f32>>,
}

/// Sorts points into a canonical order so that pooling is bit-exact under
/// permutation of the input set.
fn canonical(points: &[[f32; 4]]) -> Vec<[f32; 4]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    pts
}

impl PointSetEncoder {
    fn forward(&self, p: &[f32], points: &[[f32; 4]]) -> (Vec<f32>, PointSetCache) {
        let inputs = canonical(points);
        let mut pooled = vec![0.0f32; self.l2.nout];
        let mut pre = Vec::with_capacity(inputs.len());
        let mut hidden = Vec::with_capacity(inputs.len());
        for pt in &inputs {
            let a = self.l1.forward(p, pt);
            let h = silu(&a);
            let o = self.l2.forward(p, &h);
            for (acc, v) in pooled.iter_mut().zip(&o) {
                *acc += v;
            }
            pre.push(a);
            hidden.push(h);
        }
        let n = inputs.len().max(1) as f32;
        for v in &mut pooled {
            *v /= n;
        }
        (pooled, PointSetCache { inputs, pre, hidden })
    }

    fn backward(&self, p: &[f32], g: &mut [f32], cache: &PointSetCache, dpooled: &[f32]) {
        let n = cache.inputs.len().max(1) as f32;
        let d: Vec<f32> = dpooled.iter().map(|v| v / n).collect();
        for ((pt, a), h) in cache.inputs.iter().zip(&cache.pre).zip(&cache.hidden) {
            let mut dh = self.l2.backward(p, Some(&mut *g), h, &d);
            silu_backward(a, &mut dh);
            self.l1.backward(p, Some(&mut *g), pt, &dh);
        }
    }
}

/// Scalar feature map: one dense layer and SiLU.
#[derive(Debug, Clone)]
struct ScalarEncoder {
    l: Dense,
}

impl ScalarEncoder {
    fn forward(&self, p: &[f32], x: &[f32]) -> (Vec<f32>, Vec<f32>) {
        let a = self.l.forward(p, x);
        (silu(&a), a)
    }

    fn backward(&self, p: &[f32], g: &mut [f32], x: &[f32], pre: &[f32], dy: &[f32]) {
        let mut d = dy.to_vec();
        silu_backward(pre, &mut d);
        self.l.backward(p, Some(g), x, &d);
    }
}

/// Order-invariant problem encoder producing the conditioning vector.
#[derive(Debug, Clone)]
pub struct ProblemEncoder {
    supports: PointSetEncoder,
    loads: PointSetEncoder,
    vf: ScalarEncoder,
    cell: ScalarEncoder,
    aspect: ScalarEncoder,
}

pub struct EmbedCache {
    supports: PointSetCache,
    loads: PointSetCache,
    scalar_inputs: [Vec<f32>; 3],
    scalar_pre: [Vec<f32>; 3],
}

impl ProblemEncoder {
    fn new(layout: &mut ParamLayout, cfg: &UNetConfig) -> Self {
        let ps = |layout: &mut ParamLayout, name: &str| PointSetEncoder {
            l1: Dense::new(layout, &format!("{name}.l1"), 4, cfg.point_hidden),
            l2: Dense::new(layout, &format!("{name}.l2"), cfg.point_hidden, cfg.point_out),
        };
        Self {
            supports: ps(layout, "embed.supports"),
            loads: ps(layout, "embed.loads"),
            vf: ScalarEncoder { l: Dense::new(layout, "embed.vf", 1, cfg.vf_dim) },
            cell: ScalarEncoder { l: Dense::new(layout, "embed.cell", 1, cfg.cell_dim) },
            aspect: ScalarEncoder { l: Dense::new(layout, "embed.aspect", 2, cfg.aspect_dim) },
        }
    }

    fn init<R: Rng>(&self, p: &mut [f32], rng: &mut R) {
        for d in [
            &self.supports.l1,
            &self.supports.l2,
            &self.loads.l1,
            &self.loads.l2,
            &self.vf.l,
            &self.cell.l,
            &self.aspect.l,
        ] {
            d.init(p, rng, 1.0);
        }
    }

    /// Concatenation of the (supports, loads, vf, cell, aspect) blocks.
    pub fn forward(&self, p: &[f32], cond: &ConditionInput) -> (Vec<f32>, EmbedCache) {
        let (s, sc) = self.supports.forward(p, &cond.supports);
        let (l, lc) = self.loads.forward(p, &cond.loads);
        let xs = [vec![cond.volume_fraction], vec![cond.cell_size], cond.aspect.to_vec()];
        let (v, va) = self.vf.forward(p, &xs[0]);
        let (c, ca) = self.cell.forward(p, &xs[1]);
        let (a, aa) = self.aspect.forward(p, &xs[2]);
        let out = [s, l, v, c, a].concat();
        (
            out,
            EmbedCache { supports: sc, loads: lc, scalar_inputs: xs, scalar_pre: [va, ca, aa] },
        )
    }

    fn backward(&self, p: &[f32], g: &mut [f32], cache: &EmbedCache, d: &[f32]) {
        let mut off = 0;
        let mut take = |n: usize| {
            let s = &d[off..off + n];
            off += n;
            s
        };
        let ds = take(self.supports.l2.nout);
        let dl = take(self.loads.l2.nout);
        let dv = take(self.vf.l.nout);
        let dc = take(self.cell.l.nout);
        let da = take(self.aspect.l.nout);
        self.supports.backward(p, g, &cache.supports, ds);
        self.loads.backward(p, g, &cache.loads, dl);
        self.vf.backward(p, g, &cache.scalar_inputs[0], &cache.scalar_pre[0], dv);
        self.cell.backward(p, g, &cache.scalar_inputs[1], &cache.scalar_pre[1], dc);
        self.aspect.backward(p, g, &cache.scalar_inputs[2], &cache.scalar_pre[2], da);
    }
}

/// `out = shortcut(x) + conv2(silu(conv1(x) ⊙ (1 + γ) + β))` with
/// `(γ, β) = proj(e)` per channel.
#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    proj: Dense,
    shortcut: Option<Conv2d>,
}

struct BlockCache {
    x: Tensor,
    cols1: Vec<f32>,
    h1: Tensor,
    film: Vec<f32>,
    pre: Tensor,
    act: Tensor,
    cols2: Vec<f32>,
}

impl ResBlock {
    fn new(layout: &mut ParamLayout, name: &str, cin: usize, cout: usize, mix: usize) -> Self {
        Self {
            conv1: Conv2d::new(layout, &format!("{name}.conv1"), cin, cout, 3),
            conv2: Conv2d::new(layout, &format!("{name}.conv2"), cout, cout, 3),
            proj: Dense::new(layout, &format!("{name}.proj"), mix, 2 * cout),
            shortcut: (cin != cout).then(|| Conv2d::new(layout, &format!("{name}.shortcut"), cin, cout, 1)),
        }
    }

    fn init<R: Rng>(&self, p: &mut [f32], rng: &mut R) {
        self.conv1.init(p, rng, 1.0);
        self.conv2.init(p, rng, 0.5);
        self.proj.init(p, rng, 0.5);
        if let Some(s) = &self.shortcut {
            s.init(p, rng, 0.5);
        }
    }

    fn forward(&self, p: &[f32], x: Tensor, e: &[f32]) -> (Tensor, BlockCache) {
        let (h1, cols1) = self.conv1.forward(p, &x);
        let film = self.proj.forward(p, e);
        let plane = h1.plane();
        let mut pre = h1.clone();
        for (ch, v) in pre.data.chunks_exact_mut(plane).enumerate() {
            let (g, b) = (1.0 + film[ch], film[h1.c + ch]);
            for x in v {
                *x = *x * g + b;
            }
        }
        let act = Tensor::from_vec(pre.c, pre.h, pre.w, silu(&pre.data));
        let (mut out, cols2) = self.conv2.forward(p, &act);
        match &self.shortcut {
            Some(s) => out.add_assign(&s.forward(p, &x).0),
            None => out.add_assign(&x),
        }
        (out, BlockCache { x, cols1, h1, film, pre, act, cols2 })
    }

    /// Returns (d input, d e).
    fn backward(&self, p: &[f32], mut g: Option<&mut [f32]>, c: &BlockCache, e: &[f32], dout: &Tensor) -> (Tensor, Vec<f32>) {
        let mut dact = self.conv2.backward(p, g.as_deref_mut(), &c.act, &c.cols2, dout);
        silu_backward(&c.pre.data, &mut dact.data);
        let (nc, plane) = (c.h1.c, c.h1.plane());
        let mut dfilm = vec![0.0f32; 2 * nc];
        let mut dh1 = dact;
        for ch in 0..nc {
            let gain = 1.0 + c.film[ch];
            let h1 = &c.h1.data[ch * plane..(ch + 1) * plane];
            let d = &mut dh1.data[ch * plane..(ch + 1) * plane];
            let (mut dg, mut db) = (0.0f32, 0.0f32);
            for (dv, hv) in d.iter_mut().zip(h1) {
                dg += *dv * *hv;
                db += *dv;
                *dv *= gain;
            }
            dfilm[ch] = dg;
            dfilm[nc + ch] = db;
        }
        let de = self.proj.backward(p, g.as_deref_mut(), e, &dfilm);
        let mut dx = self.conv1.backward(p, g.as_deref_mut(), &c.x, &c.cols1, &dh1);
        match &self.shortcut {
            Some(s) => dx.add_assign(&s.backward(p, g, &c.x, &[], dout)),
            None => dx.add_assign(dout),
        }
        (dx, de)
    }
}

/// Sinusoidal embedding of the noise-level fraction t/T ∈ [0,1].
pub fn time_embedding(t_frac: f32, dim: usize) -> Vec<f32> {
    let half = dim / 2;
    let pos = t_frac * 1000.0;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = (-(1000.0f32).ln() * k as f32 / half as f32).exp();
        out.push((pos * freq).sin());
    }
    for k in 0..half {
        let freq = (-(1000.0f32).ln() * k as f32 / half as f32).exp();
        out.push((pos * freq).cos());
    }
    out
}

#[derive(Debug, Clone)]
pub struct UNet {
    pub config: UNetConfig,
    pub layout: ParamLayout,
    encoder: ProblemEncoder,
    mixer: Dense,
    stem: Conv2d,
    down: Vec<ResBlock>,
    mid: ResBlock,
    up: Vec<ResBlock>,
    head: Conv2d,
}

pub struct ForwardCache {
    embed: EmbedCache,
    mix_in: Vec<f32>,
    mix_pre: Vec<f32>,
    e: Vec<f32>,
    stem_in: Tensor,
    stem_cols: Vec<f32>,
    down: Vec<BlockCache>,
    skip_shapes: Vec<(usize, usize, usize)>,
    mid: BlockCache,
    up: Vec<BlockCache>,
    head_in: Tensor,
    head_cols: Vec<f32>,
}

impl UNet {
    pub fn new(config: UNetConfig) -> Self {
        assert!(config.widths.len() >= 2, "need at least one resolution level and a bottleneck");
        let mut layout = ParamLayout::default();
        let encoder = ProblemEncoder::new(&mut layout, &config);
        let mixer = Dense::new(&mut layout, "mixer", config.cond_dim() + config.time_dim, config.mix_dim);
        let w = &config.widths;
        let levels = w.len() - 1;
        let stem = Conv2d::new(&mut layout, "stem", 3, w[0], 3);
        let mut down = Vec::with_capacity(levels);
        let mut cin = w[0];
        for (i, &c) in w[..levels].iter().enumerate() {
            down.push(ResBlock::new(&mut layout, &format!("down{i}"), cin, c, config.mix_dim));
            cin = c;
        }
        let mid = ResBlock::new(&mut layout, "mid", cin, w[levels], config.mix_dim);
        let mut up = Vec::with_capacity(levels);
        let mut cin = w[levels];
        for i in (0..levels).rev() {
            up.push(ResBlock::new(&mut layout, &format!("up{i}"), cin + w[i], w[i], config.mix_dim));
            cin = w[i];
        }
        let head = Conv2d::new(&mut layout, "head", w[0], 1, 3);
        Self { config, layout, encoder, mixer, stem, down, mid, up, head }
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f32> {
        let mut p = vec![0.0f32; self.layout.total];
        self.encoder.init(&mut p, rng);
        self.mixer.init(&mut p, rng, 1.0);
        self.stem.init(&mut p, rng, 1.0);
        for b in self.down.iter().chain(std::iter::once(&self.mid)).chain(&self.up) {
            b.init(&mut p, rng);
        }
        // Zero head: an untrained model predicts v = 0.
        self.head.weight.of_mut(&mut p).fill(0.0);
        self.head.bias.of_mut(&mut p).fill(0.0);
        p
    }

    pub fn embed(&self, p: &[f32], cond: &ConditionInput) -> Vec<f32> {
        self.encoder.forward(p, cond).0
    }

    fn input_tensor(z: &[f32], h: usize, w: usize) -> Tensor {
        let mut data = Vec::with_capacity(3 * h * w);
        data.extend_from_slice(z);
        for _y in 0..h {
            for x in 0..w {
                data.push(2.0 * (x as f32 + 0.5) / w as f32 - 1.0);
            }
        }
        for y in 0..h {
            let v = 2.0 * (y as f32 + 0.5) / h as f32 - 1.0;
            data.extend(std::iter::repeat(v).take(w));
        }
        Tensor::from_vec(3, h, w, data)
    }

    /// Predicts the velocity for a single-channel latent `z` (`h × w`).
    pub fn forward(&self, p: &[f32], z: &[f32], h: usize, w: usize, t_frac: f32, cond: &ConditionInput) -> (Vec<f32>, ForwardCache) {
        let div = self.config.divisor();
        assert!(h % div == 0 && w % div == 0, "latent size {h}x{w} not divisible by {div}");
        let (emb, embed) = self.encoder.forward(p, cond);
        let mut mix_in = emb;
        mix_in.extend(time_embedding(t_frac, self.config.time_dim));
        let mix_pre = self.mixer.forward(p, &mix_in);
        let e = silu(&mix_pre);

        let stem_in = Self::input_tensor(z, h, w);
        let (mut x, stem_cols) = self.stem.forward(p, &stem_in);
        let mut down = Vec::with_capacity(self.down.len());
        let mut skips = Vec::with_capacity(self.down.len());
        let mut skip_shapes = Vec::with_capacity(self.down.len());
        for b in &self.down {
            let (y, c) = b.forward(p, x, &e);
            skip_shapes.push((y.c, y.h, y.w));
            x = avg_pool2(&y);
            skips.push(y);
            down.push(c);
        }
        let (mut x, mid) = self.mid.forward(p, x, &e);
        let mut up = Vec::with_capacity(self.up.len());
        for b in &self.up {
            let skip = skips.pop().expect("skip per level");
            let cat = Tensor::concat(&upsample2(&x), &skip);
            let (y, c) = b.forward(p, cat, &e);
            x = y;
            up.push(c);
        }
        let (out, head_cols) = self.head.forward(p, &x);
        let cache = ForwardCache {
            embed,
            mix_in,
            mix_pre,
            e,
            stem_in,
            stem_cols,
            down,
            skip_shapes,
            mid,
            up,
            head_in: x,
            head_cols,
        };
        (out.data, cache)
    }

    /// Backpropagates `dv` (gradient w.r.t. the predicted velocity). Parameter
    /// gradients are accumulated into `grads` when given; the return value is
    /// the gradient with respect to the input latent.
    pub fn backward(&self, p: &[f32], mut grads: Option<&mut [f32]>, cache: &ForwardCache, dv: &[f32]) -> Vec<f32> {
        let (h, w) = (cache.stem_in.h, cache.stem_in.w);
        let dout = Tensor::from_vec(1, h, w, dv.to_vec());
        let mut dx = self.head.backward(p, grads.as_deref_mut(), &cache.head_in, &cache.head_cols, &dout);
        let mut de = vec![0.0f32; self.config.mix_dim];
        let add = |de: &mut Vec<f32>, d: Vec<f32>| {
            for (a, b) in de.iter_mut().zip(d) {
                *a += b;
            }
        };
        let mut dskips: Vec<Tensor> = Vec::with_capacity(self.up.len());
        for (b, c) in self.up.iter().zip(&cache.up).rev() {
            let (dcat, d) = b.backward(p, grads.as_deref_mut(), c, &cache.e, &dx);
            add(&mut de, d);
            let up_c = c.x.c - b.conv1.cout;
            let (dup, dskip) = dcat.split(up_c);
            dskips.push(dskip);
            dx = upsample2_backward(&dup);
        }
        let (mut dx, d) = self.mid.backward(p, grads.as_deref_mut(), &cache.mid, &cache.e, &dx);
        add(&mut de, d);
        // dskips is ordered shallow-to-deep after the reversed walk above.
        for ((b, c), (dskip, shape)) in self.down.iter().zip(&cache.down).rev().zip(dskips.iter().rev().zip(cache.skip_shapes.iter().rev())) {
            let mut dy = avg_pool2_backward(&dx, shape.1, shape.2);
            dy.add_assign(dskip);
            let (d_in, d) = b.backward(p, grads.as_deref_mut(), c, &cache.e, &dy);
            add(&mut de, d);
            dx = d_in;
        }
        let dstem = self.stem.backward(p, grads.as_deref_mut(), &cache.stem_in, &cache.stem_cols, &dx);
        if let Some(g) = grads {
            let mut dpre = de;
            silu_backward(&cache.mix_pre, &mut dpre);
            let dmix_in = self.mixer.backward(p, Some(&mut *g), &cache.mix_in, &dpre);
            let cond_dim = self.config.cond_dim();
            self.encoder.backward(p, g, &cache.embed, &dmix_in[..cond_dim]);
        }
        dstem.data[..h * w].to_vec()
    }
}
