//! Dense layers on token matrices (one token per row), in f64.

use nalgebra::DMatrix;
use rand::Rng;

pub type Mat = DMatrix<f64>;

/// Visits every learnable tensor under a dotted name.
pub trait Params {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_owned()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Params for Mat {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        f(prefix, self)
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        f(prefix, self)
    }
}

impl<T: Params> Params for Vec<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        for (i, t) in self.iter().enumerate() {
            t.visit(&join(prefix, &i.to_string()), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        for (i, t) in self.iter_mut().enumerate() {
            t.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

impl<T: Params> Params for Option<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        if let Some(t) = self {
            t.visit(prefix, f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        if let Some(t) = self {
            t.visit_mut(prefix, f);
        }
    }
}

/// Implements [`Params`] by visiting the listed fields under their names.
macro_rules! impl_params {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::reconstructor::nn::Params for $ty {
            fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &$crate::reconstructor::nn::Mat)) {
                $( self.$field.visit(&$crate::reconstructor::nn::join(prefix, stringify!($field)), f); )*
            }
            fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut $crate::reconstructor::nn::Mat)) {
                $( self.$field.visit_mut(&$crate::reconstructor::nn::join(prefix, stringify!($field)), f); )*
            }
        }
    };
}
pub(crate) use impl_params;

/// `y = x W + b` with `W` stored `[in][out]` and `b` as a `1 × out` row.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Mat,
    pub b: Mat,
}
impl_params!(Linear { w, b });

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { w: Mat::zeros(input, output), b: Mat::zeros(1, output) }
    }

    /// Uniform Glorot weights, zero bias.
    pub fn random(input: usize, output: usize, r: &mut impl Rng) -> Self {
        let a = (6.0 / (input + output) as f64).sqrt();
        Self { w: Mat::from_fn(input, output, |_, _| r.gen_range(-a..a)), b: Mat::zeros(1, output) }
    }

    pub fn input(&self) -> usize {
        self.w.nrows()
    }

    pub fn output(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut y = x * &self.w;
        for (j, mut col) in y.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.b[j]);
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub g: Mat,
    pub b: Mat,
}
impl_params!(LayerNorm { g, b });

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        Self { g: Mat::from_element(1, width, 1.0), b: Mat::zeros(1, width) }
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let d = x.ncols() as f64;
        let mut y = x.clone();
        for mut row in y.row_iter_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * self.g[j] + self.b[j];
            }
        }
        y
    }
}

/// GELU, tanh approximation.
#[inline]
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Running record of how far softmax rows stray from summing to one.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AttentionStats {
    pub rows: usize,
    pub max_row_sum_error: f64,
}

impl AttentionStats {
    pub fn merge(&mut self, other: AttentionStats) {
        self.rows += other.rows;
        self.max_row_sum_error = self.max_row_sum_error.max(other.max_row_sum_error);
    }
}

/// In-place numerically stable softmax of each row.
pub fn softmax_rows(s: &mut Mat, stats: &mut AttentionStats) {
    for mut row in s.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        let mut check = 0.0;
        for v in row.iter_mut() {
            *v *= inv;
            check += *v;
        }
        stats.rows += 1;
        stats.max_row_sum_error = stats.max_row_sum_error.max((check - 1.0).abs());
    }
}

/// Multi-head scaled dot-product attention on already projected `q`, `k`, `v`.
pub fn scaled_dot_attention(q: &Mat, k: &Mat, v: &Mat, heads: usize, stats: &mut AttentionStats) -> Mat {
    let d = q.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Mat::zeros(q.nrows(), v.ncols());
    let dv = v.ncols() / heads;
    for h in 0..heads {
        let qh = q.columns(h * dh, dh);
        let kh = k.columns(h * dh, dh);
        let mut s = qh * kh.transpose() * scale;
        softmax_rows(&mut s, stats);
        let o = s * v.columns(h * dv, dv);
        out.columns_mut(h * dv, dv).copy_from(&o);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}
impl_params!(Attention { q, k, v, o });

impl Attention {
    pub fn zeros(width: usize, heads: usize) -> Self {
        let l = || Linear::zeros(width, width);
        Self { heads, q: l(), k: l(), v: l(), o: l() }
    }

    pub fn random(width: usize, heads: usize, r: &mut impl Rng) -> Self {
        Self {
            heads,
            q: Linear::random(width, width, r),
            k: Linear::random(width, width, r),
            v: Linear::random(width, width, r),
            o: Linear::random(width, width, r),
        }
    }

    pub fn forward(&self, queries: &Mat, keys: &Mat, stats: &mut AttentionStats) -> Mat {
        let a = scaled_dot_attention(
            &self.q.forward(queries),
            &self.k.forward(keys),
            &self.v.forward(keys),
            self.heads,
            stats,
        );
        self.o.forward(&a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}
impl_params!(FeedForward { up, down });

impl FeedForward {
    pub fn forward(&self, x: &Mat) -> Mat {
        self.down.forward(&self.up.forward(x).map(gelu))
    }
}

/// Pre-norm transformer block: self-attention, optional cross-attention to a
/// context, feed-forward, each with a residual connection.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: Option<LayerNorm>,
    pub norm_ctx: Option<LayerNorm>,
    pub cross: Option<Attention>,
    pub norm3: LayerNorm,
    pub ffn: FeedForward,
}
impl_params!(Block { norm1, attn, norm2, norm_ctx, cross, norm3, ffn });

impl Block {
    pub fn zeros(width: usize, heads: usize, ffn: usize, cross: bool) -> Self {
        Self {
            norm1: LayerNorm::new(width),
            attn: Attention::zeros(width, heads),
            norm2: cross.then(|| LayerNorm::new(width)),
            norm_ctx: cross.then(|| LayerNorm::new(width)),
            cross: cross.then(|| Attention::zeros(width, heads)),
            norm3: LayerNorm::new(width),
            ffn: FeedForward { up: Linear::zeros(width, ffn), down: Linear::zeros(ffn, width) },
        }
    }

    pub fn random(width: usize, heads: usize, ffn: usize, cross: bool, r: &mut impl Rng) -> Self {
        let mut b = Self::zeros(width, heads, ffn, cross);
        b.attn = Attention::random(width, heads, r);
        if cross {
            b.cross = Some(Attention::random(width, heads, r));
        }
        b.ffn = FeedForward { up: Linear::random(width, ffn, r), down: Linear::random(ffn, width, r) };
        b
    }

    pub fn forward(&self, x: &Mat, context: Option<&Mat>, stats: &mut AttentionStats) -> Mat {
        let h = self.norm1.forward(x);
        let mut x = x + self.attn.forward(&h, &h, stats);
        if let (Some(cross), Some(n2), Some(nc), Some(ctx)) = (&self.cross, &self.norm2, &self.norm_ctx, context) {
            let kv = nc.forward(ctx);
            x += cross.forward(&n2.forward(&x), &kv, stats);
        }
        let ff = self.ffn.forward(&self.norm3.forward(&x));
        x + ff
    }
}
