//! Tape of recorded operations and its reverse sweep.
//!
//! Node values are held in `f64`; parameters enter from `f32` storage and
//! gradients leave as `f64` buffers. Nodes are appended in execution order,
//! so the backward pass is a single reverse scan over the tape.

use std::collections::HashMap;

use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node of one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    /// `x [N, Din] * w [Din, Dout] + b [Dout]`
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    /// `a [N, K] * b [K, M]`, or `a * b^T` with `b [M, K]` when `trans_b`.
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    /// Row softmax over the last axis of a 2-D input; the output is saved.
    Softmax {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        s: f64,
    },
    /// `x [C, H, W] + v [C]`, broadcast over space.
    AddChannel {
        x: Var,
        v: Var,
    },
    Relu {
        x: Var,
    },
    Silu {
        x: Var,
    },
    AvgPool2 {
        x: Var,
    },
    Upsample2 {
        x: Var,
    },
    UpsampleBilinear2 {
        x: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Transpose {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols {
        parts: Vec<Var>,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    MeanSquare {
        x: Var,
    },
    MeanAbs {
        x: Var,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub dims: Vec<usize>,
    pub value: Vec<f64>,
    pub op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn numel(dims: &[usize]) -> usize {
    dims.iter().product()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].dims
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, dims: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(numel(&dims), value.len());
        self.nodes.push(Node { dims, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, dims: impl Into<Vec<usize>>, value: Vec<f64>) -> Result<Var> {
        let dims = dims.into();
        if dims.is_empty() || dims.contains(&0) || numel(&dims) != value.len() {
            return Err(Error::shape(format!("leaf dims {dims:?} with {} values", value.len())));
        }
        Ok(self.push(dims, value, Op::Leaf))
    }

    pub fn leaf_f32(&mut self, dims: &[usize], value: &[f32]) -> Result<Var> {
        self.leaf(dims.to_vec(), value.iter().map(|&v| v as f64).collect())
    }

    /// The node holding parameter `id`, created from `store` on first use.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self
            .leaf_f32(p.value.dims(), p.value.data())
            .expect("parameter tensors have valid dims");
        self.params.insert(id, v);
        v
    }

    /// Use `var` wherever parameter `id` is requested. Lets gradient checks
    /// substitute perturbable leaves for stored parameters.
    pub fn bind_param(&mut self, id: ParamId, var: Var) {
        self.params.insert(id, var);
    }

    pub fn param_vars(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&k, &v)| (k, v))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xd, wd) = (self.dims(x).to_vec(), self.dims(w).to_vec());
        let (&[cin, h, wi], &[cout, wcin, kh, kw]) = (xd.as_slice(), wd.as_slice()) else {
            return Err(Error::shape(format!("conv2d input {xd:?} / weight {wd:?}")));
        };
        if cin != wcin {
            return Err(Error::shape(format!(
                "conv2d: {cin} input channels, weight expects {wcin}"
            )));
        }
        if stride == 0 || h + 2 * pad < kh || wi + 2 * pad < kw {
            return Err(Error::shape(format!(
                "conv2d: {kh}x{kw} kernel does not fit {h}x{wi} + pad {pad}"
            )));
        }
        if let Some(b) = b {
            if self.dims(b) != [cout] {
                return Err(Error::shape(format!(
                    "conv2d bias {:?}, expected [{cout}]",
                    self.dims(b)
                )));
            }
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wi + 2 * pad - kw) / stride + 1;
        let geo = ConvGeom {
            cin,
            h,
            wi,
            kh,
            kw,
            ho,
            wo,
            stride,
            pad,
        };
        let xv = self.value(x);
        let wv = self.value(w);
        let mut out = vec![0.0; cout * ho * wo];
        for co in 0..cout {
            let bias = b.map_or(0.0, |b| self.nodes[b.0].value[co]);
            let plane = &mut out[co * ho * wo..(co + 1) * ho * wo];
            plane.fill(bias);
            geo.for_each_tap(|ci, ky, kx, oy, iy, ox, ix, n| {
                let wk = wv[((co * cin + ci) * kh + ky) * kw + kx];
                let orow = &mut plane[oy * wo + ox..];
                let xrow = &xv[(ci * h + iy) * wi + ix..];
                for j in 0..n {
                    orow[j] += wk * xrow[j * stride];
                }
            });
        }
        Ok(self.push(vec![cout, ho, wo], out, Op::Conv2d { x, w, b, stride, pad }))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xd, wd) = (self.dims(x).to_vec(), self.dims(w).to_vec());
        let (&[n, din], &[wdin, dout]) = (xd.as_slice(), wd.as_slice()) else {
            return Err(Error::shape(format!("linear input {xd:?} / weight {wd:?}")));
        };
        if din != wdin {
            return Err(Error::shape(format!(
                "linear: input width {din}, weight expects {wdin}"
            )));
        }
        if let Some(b) = b {
            if self.dims(b) != [dout] {
                return Err(Error::shape(format!(
                    "linear bias {:?}, expected [{dout}]",
                    self.dims(b)
                )));
            }
        }
        let mut out = vec![0.0; n * dout];
        let (xv, wv) = (self.value(x), self.value(w));
        for r in 0..n {
            let row = &mut out[r * dout..(r + 1) * dout];
            if let Some(b) = b {
                row.copy_from_slice(&self.nodes[b.0].value);
            }
            for k in 0..din {
                let a = xv[r * din + k];
                if a == 0.0 {
                    continue;
                }
                for (o, &wk) in row.iter_mut().zip(&wv[k * dout..(k + 1) * dout]) {
                    *o += a * wk;
                }
            }
        }
        Ok(self.push(vec![n, dout], out, Op::Linear { x, w, b }))
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ad, bd) = (self.dims(a).to_vec(), self.dims(b).to_vec());
        let (&[n, k], &[b0, b1]) = (ad.as_slice(), bd.as_slice()) else {
            return Err(Error::shape(format!("matmul {ad:?} x {bd:?}")));
        };
        let (bk, m) = if trans_b { (b1, b0) } else { (b0, b1) };
        if k != bk {
            return Err(Error::shape(format!("matmul inner extents {k} vs {bk}")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                let mut acc = 0.0;
                for t in 0..k {
                    let bval = if trans_b { bv[j * k + t] } else { bv[t * m + j] };
                    acc += av[i * k + t] * bval;
                }
                out[i * m + j] = acc;
            }
        }
        Ok(self.push(vec![n, m], out, Op::MatMul { a, b, trans_b }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a * b^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let &[n, d] = self.dims(x) else {
            return Err(Error::shape(format!("softmax expects [N, D], got {:?}", self.dims(x))));
        };
        let xv = self.value(x);
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let row = &xv[r * d..(r + 1) * d];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, &v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - m).exp();
                z += *o;
            }
            for o in &mut out[r * d..(r + 1) * d] {
                *o /= z;
            }
        }
        Ok(self.push(vec![n, d], out, Op::Softmax { x }))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(Error::shape(format!("{:?} vs {:?}", self.dims(a), self.dims(b))));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(self.dims(a).to_vec(), out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul { a, b })
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        self.push(self.dims(x).to_vec(), out, op)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v * s, Op::Scale { x, s })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu { x })
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v / (1.0 + (-v).exp()), Op::Silu { x })
    }

    pub fn add_channel(&mut self, x: Var, v: Var) -> Result<Var> {
        let &[c, h, w] = self.dims(x) else {
            return Err(Error::shape(format!(
                "add_channel expects [C,H,W], got {:?}",
                self.dims(x)
            )));
        };
        if numel(self.dims(v)) != c {
            return Err(Error::shape(format!(
                "add_channel: {c} channels, vector {:?}",
                self.dims(v)
            )));
        }
        let hw = h * w;
        let vv = self.value(v);
        let out = self.value(x).iter().enumerate().map(|(i, &a)| a + vv[i / hw]).collect();
        Ok(self.push(vec![c, h, w], out, Op::AddChannel { x, v }))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let &[c, h, w] = self.dims(x) else {
            return Err(Error::shape(format!(
                "avg_pool2 expects [C,H,W], got {:?}",
                self.dims(x)
            )));
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!("avg_pool2 needs even extents, got {h}x{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let xv = self.value(x);
        let mut out = vec![0.0; c * ho * wo];
        for ch in 0..c {
            for y in 0..ho {
                for xx in 0..wo {
                    let at = |dy: usize, dx: usize| xv[(ch * h + 2 * y + dy) * w + 2 * xx + dx];
                    out[(ch * ho + y) * wo + xx] = 0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1));
                }
            }
        }
        Ok(self.push(vec![c, ho, wo], out, Op::AvgPool2 { x }))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let &[c, h, w] = self.dims(x) else {
            return Err(Error::shape(format!(
                "upsample2 expects [C,H,W], got {:?}",
                self.dims(x)
            )));
        };
        let xv = self.value(x);
        let mut out = vec![0.0; c * 4 * h * w];
        for ch in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(ch * 2 * h + y) * 2 * w + xx] = xv[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        Ok(self.push(vec![c, 2 * h, 2 * w], out, Op::Upsample2 { x }))
    }

    /// Bilinear 2x upsampling with half-pixel centers and edge clamping.
    pub fn upsample_bilinear2(&mut self, x: Var) -> Result<Var> {
        let &[c, h, w] = self.dims(x) else {
            return Err(Error::shape(format!(
                "upsample_bilinear2 expects [C,H,W], got {:?}",
                self.dims(x)
            )));
        };
        let (ty, tx) = (up2_taps(h), up2_taps(w));
        let xv = self.value(x);
        let mut out = vec![0.0; c * 4 * h * w];
        for ch in 0..c {
            let plane = &xv[ch * h * w..(ch + 1) * h * w];
            for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (xx, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                    out[(ch * 2 * h + y) * 2 * w + xx] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        Ok(self.push(vec![c, 2 * h, 2 * w], out, Op::UpsampleBilinear2 { x }))
    }

    /// Concatenate along the leading axis; trailing axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let tail = self.dims(*first)[1..].to_vec();
        let mut lead = 0;
        let mut out = Vec::new();
        for &p in parts {
            if self.dims(p)[1..] != tail[..] {
                return Err(Error::shape(format!(
                    "concat {:?} with trailing {tail:?}",
                    self.dims(p)
                )));
            }
            lead += self.dims(p)[0];
            out.extend_from_slice(self.value(p));
        }
        let mut dims = vec![lead];
        dims.extend(tail);
        Ok(self.push(dims, out, Op::Concat { parts: parts.to_vec() }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let &[r, c] = self.dims(x) else {
            return Err(Error::shape(format!("transpose expects 2-D, got {:?}", self.dims(x))));
        };
        let xv = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv[i * c + j];
            }
        }
        Ok(self.push(vec![c, r], out, Op::Transpose { x }))
    }

    pub fn reshape(&mut self, x: Var, dims: impl Into<Vec<usize>>) -> Result<Var> {
        let dims = dims.into();
        if numel(&dims) != numel(self.dims(x)) || dims.contains(&0) {
            return Err(Error::shape(format!("reshape {:?} to {dims:?}", self.dims(x))));
        }
        let out = self.value(x).to_vec();
        Ok(self.push(dims, out, Op::Reshape { x }))
    }

    /// Columns `start..start + len` of a 2-D node.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let &[r, c] = self.dims(x) else {
            return Err(Error::shape(format!("slice_cols expects 2-D, got {:?}", self.dims(x))));
        };
        if len == 0 || start + len > c {
            return Err(Error::shape(format!("columns {start}..{} of {c}", start + len)));
        }
        let xv = self.value(x);
        let out = (0..r)
            .flat_map(|i| xv[i * c + start..i * c + start + len].iter().copied())
            .collect();
        Ok(self.push(vec![r, len], out, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat_cols of nothing"))?;
        let rows = self.dims(*first)[0];
        let mut total = 0;
        for &p in parts {
            let d = self.dims(p);
            if d.len() != 2 || d[0] != rows {
                return Err(Error::shape(format!("concat_cols part {d:?}, expected {rows} rows")));
            }
            total += d[1];
        }
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for &p in parts {
            let c = self.dims(p)[1];
            let pv = self.value(p);
            for i in 0..rows {
                out[i * total + off..i * total + off + c].copy_from_slice(&pv[i * c..(i + 1) * c]);
            }
            off += c;
        }
        Ok(self.push(vec![rows, total], out, Op::ConcatCols { parts: parts.to_vec() }))
    }

    fn reduce(&mut self, x: Var, f: impl Fn(&[f64]) -> f64, op: Op) -> Var {
        let v = f(self.value(x));
        self.push(vec![1], vec![v], op)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.reduce(x, |v| v.iter().sum(), Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        self.reduce(x, |v| v.iter().sum::<f64>() / v.len() as f64, Op::Mean { x })
    }

    pub fn mean_square(&mut self, x: Var) -> Var {
        self.reduce(
            x,
            |v| v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64,
            Op::MeanSquare { x },
        )
    }

    pub fn mean_abs(&mut self, x: Var) -> Var {
        self.reduce(
            x,
            |v| v.iter().map(|a| a.abs()).sum::<f64>() / v.len() as f64,
            Op::MeanAbs { x },
        )
    }

    /// Mean squared difference of two equally shaped nodes.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        Ok(self.mean_square(d))
    }

    /// Gradients of the single-element node `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.nodes[output.0].value.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar output, got {:?}",
                self.dims(output)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);
        for id in (0..=output.0).rev() {
            let Some(gy) = grads[id].take() else { continue };
            self.backprop_node(id, &gy, &mut grads);
            grads[id] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, id: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let size = |v: Var| self.nodes[v.0].value.len();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let (xd, wd) = (&self.nodes[x.0].dims, &self.nodes[w.0].dims);
                let (cin, h, wi) = (xd[0], xd[1], xd[2]);
                let (cout, kh, kw) = (wd[0], wd[2], wd[3]);
                let (ho, wo) = (node.dims[1], node.dims[2]);
                let xv = &self.nodes[x.0].value;
                let wv = &self.nodes[w.0].value;
                let mut gx = vec![0.0; xv.len()];
                let mut gw = vec![0.0; wv.len()];
                let geo = ConvGeom {
                    cin,
                    h,
                    wi,
                    kh,
                    kw,
                    ho,
                    wo,
                    stride: *stride,
                    pad: *pad,
                };
                let s = *stride;
                for co in 0..cout {
                    let gplane = &gy[co * ho * wo..(co + 1) * ho * wo];
                    geo.for_each_tap(|ci, ky, kx, oy, iy, ox, ix, n| {
                        let wk = ((co * cin + ci) * kh + ky) * kw + kx;
                        let grow = &gplane[oy * wo + ox..oy * wo + ox + n];
                        let xo = (ci * h + iy) * wi + ix;
                        let wval = wv[wk];
                        let mut acc = 0.0;
                        for (j, &g) in grow.iter().enumerate() {
                            gx[xo + j * s] += g * wval;
                            acc += g * xv[xo + j * s];
                        }
                        gw[wk] += acc;
                    });
                }
                add_into(slot(grads, *x, gx.len()), &gx);
                add_into(slot(grads, *w, gw.len()), &gw);
                if let Some(b) = b {
                    let plane = ho * wo;
                    let gb: Vec<f64> = (0..cout).map(|c| gy[c * plane..(c + 1) * plane].iter().sum()).collect();
                    add_into(slot(grads, *b, cout), &gb);
                }
            }
            Op::Linear { x, w, b } => {
                let (n, din) = (self.nodes[x.0].dims[0], self.nodes[x.0].dims[1]);
                let dout = node.dims[1];
                let xv = &self.nodes[x.0].value;
                let wv = &self.nodes[w.0].value;
                let mut gx = vec![0.0; n * din];
                let mut gw = vec![0.0; din * dout];
                for r in 0..n {
                    let g = &gy[r * dout..(r + 1) * dout];
                    for k in 0..din {
                        let wrow = &wv[k * dout..(k + 1) * dout];
                        gx[r * din + k] = g.iter().zip(wrow).map(|(a, b)| a * b).sum();
                        let xk = xv[r * din + k];
                        for (gwj, gj) in gw[k * dout..(k + 1) * dout].iter_mut().zip(g) {
                            *gwj += xk * gj;
                        }
                    }
                }
                add_into(slot(grads, *x, gx.len()), &gx);
                add_into(slot(grads, *w, gw.len()), &gw);
                if let Some(b) = b {
                    let mut gb = vec![0.0; dout];
                    for r in 0..n {
                        add_into(&mut gb, &gy[r * dout..(r + 1) * dout]);
                    }
                    add_into(slot(grads, *b, dout), &gb);
                }
            }
            Op::MatMul { a, b, trans_b } => {
                let (n, k) = (self.nodes[a.0].dims[0], self.nodes[a.0].dims[1]);
                let m = node.dims[1];
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let bidx = |t: usize, j: usize| if *trans_b { j * k + t } else { t * m + j };
                let mut ga = vec![0.0; n * k];
                let mut gb = vec![0.0; k * m];
                for i in 0..n {
                    for j in 0..m {
                        let g = gy[i * m + j];
                        if g == 0.0 {
                            continue;
                        }
                        for t in 0..k {
                            ga[i * k + t] += g * bv[bidx(t, j)];
                            gb[bidx(t, j)] += g * av[i * k + t];
                        }
                    }
                }
                add_into(slot(grads, *a, ga.len()), &ga);
                add_into(slot(grads, *b, gb.len()), &gb);
            }
            Op::Softmax { x } => {
                let d = node.dims[1];
                let y = &node.value;
                let mut gx = vec![0.0; y.len()];
                for r in 0..node.dims[0] {
                    let ys = &y[r * d..(r + 1) * d];
                    let gs = &gy[r * d..(r + 1) * d];
                    let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        gx[r * d + j] = ys[j] * (gs[j] - dot);
                    }
                }
                add_into(slot(grads, *x, gx.len()), &gx);
            }
            Op::Add { a, b } => {
                add_into(slot(grads, *a, gy.len()), gy);
                add_into(slot(grads, *b, gy.len()), gy);
            }
            Op::Sub { a, b } => {
                add_into(slot(grads, *a, gy.len()), gy);
                let gb = slot(grads, *b, gy.len());
                for (o, g) in gb.iter_mut().zip(gy) {
                    *o -= g;
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let ga: Vec<f64> = gy.iter().zip(bv).map(|(g, v)| g * v).collect();
                let gb: Vec<f64> = gy.iter().zip(av).map(|(g, v)| g * v).collect();
                add_into(slot(grads, *a, ga.len()), &ga);
                add_into(slot(grads, *b, gb.len()), &gb);
            }
            Op::Scale { x, s } => {
                let gx: Vec<f64> = gy.iter().map(|g| g * s).collect();
                add_into(slot(grads, *x, gx.len()), &gx);
            }
            Op::AddChannel { x, v } => {
                add_into(slot(grads, *x, gy.len()), gy);
                let c = size(*v);
                let hw = gy.len() / c;
                let gv: Vec<f64> = (0..c).map(|ch| gy[ch * hw..(ch + 1) * hw].iter().sum()).collect();
                add_into(slot(grads, *v, c), &gv);
            }
            Op::Relu { x } => {
                let xv = &self.nodes[x.0].value;
                let gx: Vec<f64> = gy
                    .iter()
                    .zip(xv)
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                add_into(slot(grads, *x, gx.len()), &gx);
            }
            Op::Silu { x } => {
                let xv = &self.nodes[x.0].value;
                let gx: Vec<f64> = gy
                    .iter()
                    .zip(xv)
                    .map(|(g, &v)| {
                        let s = 1.0 / (1.0 + (-v).exp());
                        g * s * (1.0 + v * (1.0 - s))
                    })
                    .collect();
                add_into(slot(grads, *x, gx.len()), &gx);
            }
            Op::AvgPool2 { x } => {
                let (c, h, w) = (
                    self.nodes[x.0].dims[0],
                    self.nodes[x.0].dims[1],
                    self.nodes[x.0].dims[2],
                );
                let (ho, wo) = (h / 2, w / 2);
                let gx = slot(grads, *x, c * h * w);
                for ch in 0..c {
                    for y in 0..h {
                        for xx in 0..w {
                            gx[(ch * h + y) * w + xx] += 0.25 * gy[(ch * ho + y / 2) * wo + xx / 2];
                        }
                    }
                }
            }
            Op::Upsample2 { x } => {
                let (c, h, w) = (
                    self.nodes[x.0].dims[0],
                    self.nodes[x.0].dims[1],
                    self.nodes[x.0].dims[2],
                );
                let gx = slot(grads, *x, c * h * w);
                for ch in 0..c {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            gx[(ch * h + y / 2) * w + xx / 2] += gy[(ch * 2 * h + y) * 2 * w + xx];
                        }
                    }
                }
            }
            Op::UpsampleBilinear2 { x } => {
                let (c, h, w) = (
                    self.nodes[x.0].dims[0],
                    self.nodes[x.0].dims[1],
                    self.nodes[x.0].dims[2],
                );
                let (ty, tx) = (up2_taps(h), up2_taps(w));
                let gx = slot(grads, *x, c * h * w);
                for ch in 0..c {
                    let base = ch * h * w;
                    for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
                        for (xx, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let g = gy[(ch * 2 * h + y) * 2 * w + xx];
                            gx[base + y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                            gx[base + y0 * w + x1] += g * (1.0 - fy) * fx;
                            gx[base + y1 * w + x0] += g * fy * (1.0 - fx);
                            gx[base + y1 * w + x1] += g * fy * fx;
                        }
                    }
                }
            }
            Op::Concat { parts } => {
                let mut off = 0;
                for &p in parts {
                    let n = size(p);
                    add_into(slot(grads, p, n), &gy[off..off + n]);
                    off += n;
                }
            }
            Op::Transpose { x } => {
                let (r, c) = (self.nodes[x.0].dims[0], self.nodes[x.0].dims[1]);
                let gx = slot(grads, *x, r * c);
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] += gy[j * r + i];
                    }
                }
            }
            Op::Reshape { x } => add_into(slot(grads, *x, gy.len()), gy),
            Op::SliceCols { x, start } => {
                let (r, c) = (self.nodes[x.0].dims[0], self.nodes[x.0].dims[1]);
                let len = node.dims[1];
                let gx = slot(grads, *x, r * c);
                for i in 0..r {
                    add_into(&mut gx[i * c + start..i * c + start + len], &gy[i * len..(i + 1) * len]);
                }
            }
            Op::ConcatCols { parts } => {
                let (rows, total) = (node.dims[0], node.dims[1]);
                let mut off = 0;
                for &p in parts {
                    let c = self.nodes[p.0].dims[1];
                    let gp = slot(grads, p, rows * c);
                    for i in 0..rows {
                        add_into(&mut gp[i * c..(i + 1) * c], &gy[i * total + off..i * total + off + c]);
                    }
                    off += c;
                }
            }
            Op::Sum { x } => {
                let g = gy[0];
                slot(grads, *x, size(*x)).iter_mut().for_each(|o| *o += g);
            }
            Op::Mean { x } => {
                let g = gy[0] / size(*x) as f64;
                slot(grads, *x, size(*x)).iter_mut().for_each(|o| *o += g);
            }
            Op::MeanSquare { x } => {
                let xv = &self.nodes[x.0].value;
                let g = 2.0 * gy[0] / xv.len() as f64;
                let gx: Vec<f64> = xv.iter().map(|v| g * v).collect();
                add_into(slot(grads, *x, gx.len()), &gx);
            }
            Op::MeanAbs { x } => {
                let xv = &self.nodes[x.0].value;
                let g = gy[0] / xv.len() as f64;
                let gx: Vec<f64> = xv.iter().map(|v| g * sign(*v)).collect();
                add_into(slot(grads, *x, gx.len()), &gx);
            }
        }
    }
}

/// Index bookkeeping for direct convolution: visits every (input channel,
/// kernel tap, output row) with the run of output columns whose input
/// column is in bounds.
struct ConvGeom {
    cin: usize,
    h: usize,
    wi: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    /// `f(ci, ky, kx, oy, iy, ox0, ix0, n)`: outputs `ox0..ox0+n` of row `oy`
    /// read inputs `ix0, ix0+stride, ..` of row `iy`.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize, usize)) {
        let (s, p) = (self.stride, self.pad);
        for ci in 0..self.cin {
            for ky in 0..self.kh {
                for oy in 0..self.ho {
                    let iy = oy * s + ky;
                    if iy < p || iy - p >= self.h {
                        continue;
                    }
                    let iy = iy - p;
                    for kx in 0..self.kw {
                        // first ox with ox*s + kx >= p, and count with ox*s + kx - p < wi
                        let ox0 = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
                        if ox0 >= self.wo {
                            continue;
                        }
                        let ix0 = ox0 * s + kx - p;
                        if ix0 >= self.wi {
                            continue;
                        }
                        let n = ((self.wi - 1 - ix0) / s + 1).min(self.wo - ox0);
                        f(ci, ky, kx, oy, iy, ox0, ix0, n);
                    }
                }
            }
        }
    }
}

/// Source taps `(i0, i1, frac)` along one axis of length `n` for each of the
/// `2n` outputs of a bilinear 2x upsample.
pub(crate) fn up2_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = src.floor() as usize;
            (i0, (i0 + 1).min(n - 1), src - i0 as f64)
        })
        .collect()
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Result of a backward pass: one gradient buffer per reachable node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of `v`; `None` when the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0)?.as_deref()
    }

    /// Gradient of `v`, zeros when unreachable.
    pub fn get_or_zeros(&self, graph: &Graph, v: Var) -> Vec<f64> {
        self.get(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; graph.value(v).len()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(g: &mut Graph, dims: &[usize], v: &[f64]) -> Var {
        g.leaf(dims.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn one_by_one_kernel_scales() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[1, 2, 2], &[1.0, -2.0, 3.0, 0.5]);
        let w = leaf(&mut g, &[1, 1, 1, 1], &[2.0]);
        let b = leaf(&mut g, &[1], &[0.0]);
        let y = g.conv2d(x, w, Some(b), 1, 0).unwrap();
        assert_eq!(g.value(y), &[2.0, -4.0, 6.0, 1.0]);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut g = Graph::new();
        let xs: Vec<f64> = (0..12).map(|i| i as f64 * 0.3 - 1.0).collect();
        let x = leaf(&mut g, &[1, 3, 4], &xs);
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = leaf(&mut g, &[1, 1, 3, 3], &k);
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        assert_eq!(g.dims(y), &[1, 3, 4]);
        assert_eq!(g.value(y), &xs[..]);
    }

    #[test]
    fn conv_output_extent_with_stride() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[1, 5, 5], &[1.0; 25]);
        let w = leaf(&mut g, &[2, 1, 3, 3], &[1.0; 18]);
        let y = g.conv2d(x, w, None, 2, 1).unwrap();
        assert_eq!(g.dims(y), &[2, 3, 3]);
        // Corner output sees a 2x2 patch of ones.
        assert_eq!(g.value(y)[0], 4.0);
        let bad = leaf(&mut g, &[2, 3, 3, 3], &[0.0; 54]);
        assert!(g.conv2d(x, bad, None, 1, 1).is_err());
    }

    #[test]
    fn linear_identity_and_bias() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let eye = leaf(&mut g, &[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let y = g.linear(x, eye, None).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let zero = leaf(&mut g, &[2, 3], &[0.0; 6]);
        let b = leaf(&mut g, &[3], &[0.5, -1.0, 2.0]);
        let y = g.linear(x, zero, Some(b)).unwrap();
        assert_eq!(g.value(y), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    }

    #[test]
    fn softmax_closed_forms() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[2, 2], &[0.0, 3f64.ln(), 7.0, 7.0]);
        let y = g.softmax(x).unwrap();
        let v = g.value(y);
        assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] - 0.75).abs() < 1e-15);
        assert_eq!(&v[2..], &[0.5, 0.5]);
        let shifted = leaf(&mut g, &[1, 3], &[1000.0, 1001.0, 1002.0]);
        let base = leaf(&mut g, &[1, 3], &[0.0, 1.0, 2.0]);
        let (a, b) = (g.softmax(shifted).unwrap(), g.softmax(base).unwrap());
        for (p, q) in g.value(a).iter().zip(g.value(b)) {
            assert!((p - q).abs() < 1e-7);
        }
    }

    #[test]
    fn backward_needs_scalar() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[2], &[1.0, 2.0]);
        assert!(g.backward(x).is_err());
        let s = g.sum(x);
        let gr = g.backward(s).unwrap();
        assert_eq!(gr.get(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn shared_node_gradients_accumulate() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[1], &[3.0]);
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        let gr = g.backward(z).unwrap();
        assert_eq!(gr.get(x).unwrap(), &[7.0]);
    }

    #[test]
    fn unreachable_nodes_have_no_gradient() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[1], &[3.0]);
        let unused = leaf(&mut g, &[1], &[1.0]);
        let s = g.sum(x);
        let gr = g.backward(s).unwrap();
        assert!(gr.get(unused).is_none());
        assert_eq!(gr.get_or_zeros(&g, unused), vec![0.0]);
    }

    #[test]
    fn bilinear_upsample_ramp() {
        let mut g = Graph::new();
        let x = leaf(&mut g, &[1, 2, 2], &[0.0, 1.0, 0.0, 1.0]);
        let y = g.upsample_bilinear2(x).unwrap();
        assert_eq!(g.dims(y), &[1, 4, 4]);
        assert_eq!(&g.value(y)[..4], &[0.0, 0.25, 0.75, 1.0]);
        let s = g.sum(y);
        let gr = g.backward(s).unwrap();
        // Every input pixel spreads total weight 4 over the output.
        assert!(gr.get(x).unwrap().iter().all(|&v| (v - 4.0).abs() < 1e-12));
    }
}
