//! Layers built from graph primitives.

use super::graph::{Graph, Var};
use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// 2-D convolution with `[Cout, Cin, k, k]` weights and a bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// He-style normal init scaled by fan-in, zero bias.
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, rng: &mut Rng) -> Self {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        Self {
            weight: store.add_normal(format!("{name}.weight"), &[cout, cin, k, k], std, rng),
            bias: store.add_zeros(format!("{name}.bias"), &[cout]),
            stride: 1,
            pad: k / 2,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

/// Affine map `x [N, Din] -> [N, Dout]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, din: usize, dout: usize, bias: bool, rng: &mut Rng) -> Self {
        let std = (1.0 / din as f64).sqrt();
        Self {
            weight: store.add_normal(format!("{name}.weight"), &[din, dout], std, rng),
            bias: bias.then(|| store.add_zeros(format!("{name}.bias"), &[dout])),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.linear(x, w, b)
    }
}

/// `[C, H, W]` feature map as `[H*W, C]` tokens.
pub fn to_tokens(g: &mut Graph, x: Var) -> Result<Var> {
    let &[c, h, w] = g.dims(x) else {
        return Err(Error::shape(format!("expected [C,H,W], got {:?}", g.dims(x))));
    };
    let flat = g.reshape(x, [c, h * w])?;
    g.transpose(flat)
}

/// `[H*W, C]` tokens back to a `[C, H, W]` map.
pub fn from_tokens(g: &mut Graph, tokens: Var, h: usize, w: usize) -> Result<Var> {
    let c = g.dims(tokens)[1];
    let t = g.transpose(tokens)?;
    g.reshape(t, [c, h, w])
}

/// Scaled dot-product cross-attention with queries from `x_q` and keys and
/// values from `x_kv`. Both maps must share spatial extents. With `heads > 1`
/// the projection widths are split evenly and each head is scaled by the
/// square root of its own width.
pub fn cross_attention(g: &mut Graph, x_q: Var, x_kv: Var, w_q: Var, w_k: Var, w_v: Var, heads: usize) -> Result<Var> {
    let (qd, kd) = (g.dims(x_q).to_vec(), g.dims(x_kv).to_vec());
    if qd.len() != 3 || kd.len() != 3 || qd[1..] != kd[1..] {
        return Err(Error::shape(format!(
            "cross-attention needs equal spatial extents, got {qd:?} and {kd:?}"
        )));
    }
    let (h, w) = (qd[1], qd[2]);
    let tq = to_tokens(g, x_q)?;
    let tkv = to_tokens(g, x_kv)?;
    let q = g.matmul(tq, w_q)?;
    let k = g.matmul(tkv, w_k)?;
    let v = g.matmul(tkv, w_v)?;
    let (d, dv) = (g.dims(q)[1], g.dims(v)[1]);
    if g.dims(k)[1] != d {
        return Err(Error::shape(format!("query width {d} vs key width {}", g.dims(k)[1])));
    }
    if heads == 0 || d % heads != 0 || dv % heads != 0 {
        return Err(Error::shape(format!("{heads} heads do not divide widths {d}/{dv}")));
    }
    let (dh, dvh) = (d / heads, dv / heads);
    let mut outs = Vec::with_capacity(heads);
    for head in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, head * dh, dh)?,
                g.slice_cols(k, head * dh, dh)?,
                g.slice_cols(v, head * dvh, dvh)?,
            )
        };
        let logits = g.matmul_t(qh, kh)?;
        let logits = g.scale(logits, 1.0 / (dh as f64).sqrt());
        let attn = g.softmax(logits)?;
        outs.push(g.matmul(attn, vh)?);
    }
    let o = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    from_tokens(g, o, h, w)
}

/// Projections of one cross-attention block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossAttention {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub heads: usize,
}

impl CrossAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_query: usize,
        c_kv: usize,
        d: usize,
        d_v: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Self {
        Self {
            w_q: store.add_normal(format!("{name}.w_q"), &[c_query, d], (1.0 / c_query as f64).sqrt(), rng),
            w_k: store.add_normal(format!("{name}.w_k"), &[c_kv, d], (1.0 / c_kv as f64).sqrt(), rng),
            w_v: store.add_normal(format!("{name}.w_v"), &[c_kv, d_v], (1.0 / c_kv as f64).sqrt(), rng),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x_q: Var, x_kv: Var) -> Result<Var> {
        let (q, k, v) = (
            g.param(store, self.w_q),
            g.param(store, self.w_k),
            g.param(store, self.w_v),
        );
        cross_attention(g, x_q, x_kv, q, k, v, self.heads)
    }
}
