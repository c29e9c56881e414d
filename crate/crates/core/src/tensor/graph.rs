//! Reverse-mode differentiation over an op tape.
//!
//! A [`Graph`] records every executed op together with the node values it
//! needs for the backward sweep. Backward visits ops in exact reverse
//! execution order and accumulates gradients additively. All reductions run
//! in fixed sequential order so forward values and gradients are bitwise
//! reproducible for identical inputs.

use super::gemm::{dot, mm_nn, mm_nt, mm_tn};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddScalar(NodeId, T),
    MulScalar(NodeId, T),
    Sigmoid(NodeId),
    Silu(NodeId),
    Relu(NodeId),
    RsqrtEps(NodeId, T),
    SoftmaxLast(NodeId),
    Matmul(NodeId, NodeId),
    MatmulNT(NodeId, NodeId),
    AddBiasRow(NodeId, NodeId),
    Conv2d {
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    },
    Upsample2(NodeId),
    GlobalAvgPool(NodeId),
    MeanGroups(NodeId, usize),
    BroadcastGroups(NodeId, Vec<usize>),
    MulNc(NodeId, NodeId),
    AddNc(NodeId, NodeId),
    ScaleC(NodeId, NodeId),
    BiasC(NodeId, NodeId),
    ConcatChannels(NodeId, NodeId),
    ConcatRows(NodeId, NodeId),
    Reshape(NodeId),
    NchwToRows(NodeId),
    RowsToNchw(NodeId),
    MeanAll(NodeId),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Op tape with stored forward values; see module docs.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads[id.0].take()
    }

    /// Gradient for an id, zero-filled when the node never influenced the
    /// loss (unused parameters get zero gradient).
    pub fn get_or_zero(&self, id: NodeId, shape: &[usize]) -> Tensor<T> {
        match self.grads[id.0] {
            Some(ref g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Insert an input node. `requires_grad` marks it as a differentiation
    /// target (a parameter); plain data should pass `false`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<NodeId> {
        self.push("leaf", value, Op::Leaf, requires_grad)
    }

    fn push(
        &mut self,
        opname: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        requires_grad: bool,
    ) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: opname,
                context: format!("node {} shape {:?}", self.nodes.len(), value.shape()),
            });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn req(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?}", self.shape(a)),
                format!("{:?}", self.shape(b)),
            ));
        }
        Ok(())
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let v = zip(self.value(a), self.value(b), |x, y| x + y);
        self.push("add", v, Op::Add(a, b), self.req(a) || self.req(b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let v = zip(self.value(a), self.value(b), |x, y| x - y);
        self.push("sub", v, Op::Sub(a, b), self.req(a) || self.req(b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let v = zip(self.value(a), self.value(b), |x, y| x * y);
        self.push("mul", v, Op::Mul(a, b), self.req(a) || self.req(b))
    }

    pub fn add_scalar(&mut self, a: NodeId, s: T) -> Result<NodeId> {
        let v = self.value(a).map(|x| x + s);
        self.push("add_scalar", v, Op::AddScalar(a, s), self.req(a))
    }

    pub fn mul_scalar(&mut self, a: NodeId, s: T) -> Result<NodeId> {
        let v = self.value(a).map(|x| x * s);
        self.push("mul_scalar", v, Op::MulScalar(a, s), self.req(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(sigmoid_val);
        self.push("sigmoid", v, Op::Sigmoid(a), self.req(a))
    }

    pub fn silu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| x * sigmoid_val(x));
        self.push("silu", v, Op::Silu(a), self.req(a))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push("relu", v, Op::Relu(a), self.req(a))
    }

    /// y = (x + eps)^{-1/2}
    pub fn rsqrt_eps(&mut self, a: NodeId, eps: T) -> Result<NodeId> {
        let v = self.value(a).map(|x| (x + eps).sqrt().recip());
        self.push("rsqrt_eps", v, Op::RsqrtEps(a, eps), self.req(a))
    }

    /// Numerically stable softmax over the last extent.
    pub fn softmax_last(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        let &l = t.shape().last().ok_or_else(|| {
            Error::invalid("softmax_last", "zero-rank input")
        })?;
        let rows = t.numel() / l;
        let mut out = vec![T::zero(); t.numel()];
        for r in 0..rows {
            let xs = &t.data()[r * l..(r + 1) * l];
            let m = xs.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for (o, &x) in out[r * l..(r + 1) * l].iter_mut().zip(xs) {
                let e = (x - m).exp();
                *o = e;
                sum += e;
            }
            let inv = sum.recip();
            for o in &mut out[r * l..(r + 1) * l] {
                *o = *o * inv;
            }
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        self.push("softmax_last", v, Op::SoftmaxLast(a), self.req(a))
    }

    // ---- matrix ops ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(
                "matmul",
                format!("[M,K]x[K,N], got {:?}", sa),
                format!("{:?}", sb),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut c = vec![T::zero(); m * n];
        mm_nn(m, k, n, self.value(a).data(), self.value(b).data(), &mut c);
        let v = Tensor::new(vec![m, n], c)?;
        self.push("matmul", v, Op::Matmul(a, b), self.req(a) || self.req(b))
    }

    /// a[M,K] · b[N,K]ᵀ → [M,N]
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::shape(
                "matmul_nt",
                format!("[M,K]x[N,K], got {:?}", sa),
                format!("{:?}", sb),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut c = vec![T::zero(); m * n];
        mm_nt(m, k, n, self.value(a).data(), self.value(b).data(), &mut c);
        let v = Tensor::new(vec![m, n], c)?;
        self.push("matmul_nt", v, Op::MatmulNT(a, b), self.req(a) || self.req(b))
    }

    /// x[R,F] + b[F] broadcast over rows.
    pub fn add_bias_row(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb.len() != 1 || sx.last() != sb.first() {
            return Err(Error::shape(
                "add_bias_row",
                format!("bias [{}]", sx.last().copied().unwrap_or(0)),
                format!("{:?}", sb),
            ));
        }
        let f = sb[0];
        let xs = self.value(x);
        let bs = self.value(b).data().to_vec();
        let mut out = xs.data().to_vec();
        for (i, o) in out.iter_mut().enumerate() {
            *o += bs[i % f];
        }
        let v = Tensor::new(sx.to_vec(), out)?;
        self.push("add_bias_row", v, Op::AddBiasRow(x, b), self.req(x) || self.req(b))
    }

    // ---- convolution ----

    /// 2-D convolution, NCHW input, OIHW kernel, optional per-output bias.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                "4-D input and kernel".to_string(),
                format!("{:?} / {:?}", sx, sw),
            ));
        }
        if sx[1] != sw[1] {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {} (input {:?})", sx[1], sx),
                format!("kernel channels {} (kernel {:?})", sw[1], sw),
            ));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be >= 1"));
        }
        let (n, c, h, wdt) = (sx[0], sx[1], sx[2], sx[3]);
        let (o, _, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
        if h + 2 * pad < kh || wdt + 2 * pad < kw {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel {}x{} larger than padded input {}x{}", kh, kw, h + 2 * pad, wdt + 2 * pad),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [o] {
                return Err(Error::shape("conv2d", format!("bias [{}]", o), format!("{:?}", self.shape(b))));
            }
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wdt + 2 * pad - kw) / stride + 1;
        let m = oh * ow;
        let kdim = c * kh * kw;
        let mut out = vec![T::zero(); n * o * m];
        let mut col = vec![T::zero(); kdim * m];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        for ni in 0..n {
            let xs = &xv[ni * c * h * wdt..(ni + 1) * c * h * wdt];
            im2col(xs, c, h, wdt, kh, kw, stride, pad, oh, ow, &mut col);
            mm_nn(o, kdim, m, wv, &col, &mut out[ni * o * m..(ni + 1) * o * m]);
        }
        if let Some(b) = bias {
            let bv = self.value(b).data().to_vec();
            for ni in 0..n {
                for oi in 0..o {
                    let base = (ni * o + oi) * m;
                    let bb = bv[oi];
                    for v in &mut out[base..base + m] {
                        *v += bb;
                    }
                }
            }
        }
        let req = self.req(x) || self.req(w) || bias.map(|b| self.req(b)).unwrap_or(false);
        let v = Tensor::new(vec![n, o, oh, ow], out)?;
        self.push("conv2d", v, Op::Conv2d { x, w, bias, stride, pad }, req)
    }

    // ---- spatial ops ----

    /// Nearest-neighbor 2x upsampling of NCHW.
    pub fn upsample2(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("upsample2", "4-D input", format!("{:?}", s)));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let mut out = vec![T::zero(); n * c * 4 * h * w];
        let src = self.value(a).data();
        for nc in 0..n * c {
            for y in 0..h {
                for x in 0..w {
                    let v = src[(nc * h + y) * w + x];
                    let base = (nc * 2 * h + 2 * y) * 2 * w + 2 * x;
                    out[base] = v;
                    out[base + 1] = v;
                    out[base + 2 * w] = v;
                    out[base + 2 * w + 1] = v;
                }
            }
        }
        let v = Tensor::new(vec![n, c, 2 * h, 2 * w], out)?;
        self.push("upsample2", v, Op::Upsample2(a), self.req(a))
    }

    /// Global average pool NCHW → [N,C].
    pub fn global_avg_pool(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("global_avg_pool", "4-D input", format!("{:?}", s)));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let inv = T::from_f64_c(1.0 / hw as f64);
        let src = self.value(a).data();
        let mut out = vec![T::zero(); n * c];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for &v in &src[i * hw..(i + 1) * hw] {
                acc += v;
            }
            *o = acc * inv;
        }
        let v = Tensor::new(vec![n, c], out)?;
        self.push("global_avg_pool", v, Op::GlobalAvgPool(a), self.req(a))
    }

    /// Per-(sample, group) mean of NCHW → [N,G].
    pub fn mean_groups(&mut self, a: NodeId, groups: usize) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 || groups == 0 || s[1] % groups != 0 {
            return Err(Error::invalid(
                "mean_groups",
                format!("groups {} must divide channels of {:?}", groups, s),
            ));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let per = (c / groups) * hw;
        let inv = T::from_f64_c(1.0 / per as f64);
        let src = self.value(a).data();
        let mut out = vec![T::zero(); n * groups];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for &v in &src[i * per..(i + 1) * per] {
                acc += v;
            }
            *o = acc * inv;
        }
        let v = Tensor::new(vec![n, groups], out)?;
        self.push("mean_groups", v, Op::MeanGroups(a, groups), self.req(a))
    }

    /// Broadcast [N,G] back over an NCHW shape whose channels divide into G groups.
    pub fn broadcast_groups(&mut self, m: NodeId, target: &[usize]) -> Result<NodeId> {
        let s = self.shape(m).to_vec();
        if s.len() != 2 || target.len() != 4 || target[0] != s[0] || target[1] % s[1] != 0 {
            return Err(Error::shape(
                "broadcast_groups",
                format!("[N,G] compatible with {:?}", target),
                format!("{:?}", s),
            ));
        }
        let (n, g) = (s[0], s[1]);
        let per = (target[1] / g) * target[2] * target[3];
        let src = self.value(m).data().to_vec();
        let mut out = vec![T::zero(); target.iter().product()];
        for i in 0..n * g {
            for v in &mut out[i * per..(i + 1) * per] {
                *v = src[i];
            }
        }
        let v = Tensor::new(target.to_vec(), out)?;
        self.push("broadcast_groups", v, Op::BroadcastGroups(m, target.to_vec()), self.req(m))
    }

    /// x[N,C,H,W] ⊙ s[N,C] broadcast over spatial extents.
    pub fn mul_nc(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        self.check_nc("mul_nc", x, s)?;
        let sh = self.shape(x).to_vec();
        let hw = sh[2] * sh[3];
        let xs = self.value(x).data();
        let ss = self.value(s).data().to_vec();
        let mut out = xs.to_vec();
        for (i, chunk) in out.chunks_mut(hw).enumerate() {
            let f = ss[i];
            for v in chunk {
                *v *= f;
            }
        }
        let v = Tensor::new(sh, out)?;
        self.push("mul_nc", v, Op::MulNc(x, s), self.req(x) || self.req(s))
    }

    /// x[N,C,H,W] + s[N,C] broadcast over spatial extents.
    pub fn add_nc(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        self.check_nc("add_nc", x, s)?;
        let sh = self.shape(x).to_vec();
        let hw = sh[2] * sh[3];
        let xs = self.value(x).data();
        let ss = self.value(s).data().to_vec();
        let mut out = xs.to_vec();
        for (i, chunk) in out.chunks_mut(hw).enumerate() {
            let f = ss[i];
            for v in chunk {
                *v += f;
            }
        }
        let v = Tensor::new(sh, out)?;
        self.push("add_nc", v, Op::AddNc(x, s), self.req(x) || self.req(s))
    }

    fn check_nc(&self, op: &'static str, x: NodeId, s: NodeId) -> Result<()> {
        let (sx, ss) = (self.shape(x), self.shape(s));
        if sx.len() != 4 || ss.len() != 2 || ss[0] != sx[0] || ss[1] != sx[1] {
            return Err(Error::shape(
                op,
                format!("[N,C] matching {:?}", sx),
                format!("{:?}", ss),
            ));
        }
        Ok(())
    }

    /// x[N,C,H,W] ⊙ g[C] broadcast per channel.
    pub fn scale_c(&mut self, x: NodeId, g: NodeId) -> Result<NodeId> {
        self.check_c("scale_c", x, g)?;
        let sh = self.shape(x).to_vec();
        let (c, hw) = (sh[1], sh[2] * sh[3]);
        let gs = self.value(g).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for (i, chunk) in out.chunks_mut(hw).enumerate() {
            let f = gs[i % c];
            for v in chunk {
                *v *= f;
            }
        }
        let v = Tensor::new(sh, out)?;
        self.push("scale_c", v, Op::ScaleC(x, g), self.req(x) || self.req(g))
    }

    /// x[N,C,H,W] + b[C] broadcast per channel.
    pub fn bias_c(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_c("bias_c", x, b)?;
        let sh = self.shape(x).to_vec();
        let (c, hw) = (sh[1], sh[2] * sh[3]);
        let bs = self.value(b).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for (i, chunk) in out.chunks_mut(hw).enumerate() {
            let f = bs[i % c];
            for v in chunk {
                *v += f;
            }
        }
        let v = Tensor::new(sh, out)?;
        self.push("bias_c", v, Op::BiasC(x, b), self.req(x) || self.req(b))
    }

    fn check_c(&self, op: &'static str, x: NodeId, g: NodeId) -> Result<()> {
        let (sx, sg) = (self.shape(x), self.shape(g));
        if sx.len() != 4 || sg.len() != 1 || sg[0] != sx[1] {
            return Err(Error::shape(
                op,
                format!("[C={}] matching {:?}", sx.get(1).copied().unwrap_or(0), sx),
                format!("{:?}", sg),
            ));
        }
        Ok(())
    }

    // ---- structure ops ----

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?}", sa),
                format!("{:?}", sb),
            ));
        }
        let (n, hw) = (sa[0], sa[2] * sa[3]);
        let (ca, cb) = (sa[1], sb[1]);
        let mut out = Vec::with_capacity((ca + cb) * n * hw);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for ni in 0..n {
            out.extend_from_slice(&av[ni * ca * hw..(ni + 1) * ca * hw]);
            out.extend_from_slice(&bv[ni * cb * hw..(ni + 1) * cb * hw]);
        }
        let v = Tensor::new(vec![n, ca + cb, sa[2], sa[3]], out)?;
        self.push("concat_channels", v, Op::ConcatChannels(a, b), self.req(a) || self.req(b))
    }

    /// Stack two 2-D tensors along rows: [La,D] ++ [Lb,D] → [La+Lb, D].
    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::shape(
                "concat_rows",
                format!("{:?}", sa),
                format!("{:?}", sb),
            ));
        }
        let mut out = self.value(a).data().to_vec();
        out.extend_from_slice(self.value(b).data());
        let v = Tensor::new(vec![sa[0] + sb[0], sa[1]], out)?;
        self.push("concat_rows", v, Op::ConcatRows(a, b), self.req(a) || self.req(b))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(a).clone().reshaped(shape.to_vec())?;
        self.push("reshape", v, Op::Reshape(a), self.req(a))
    }

    /// [1,C,H,W] → [H·W, C] token layout.
    pub fn nchw_to_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 || s[0] != 1 {
            return Err(Error::shape("nchw_to_rows", "[1,C,H,W]", format!("{:?}", s)));
        }
        let (c, hw) = (s[1], s[2] * s[3]);
        let src = self.value(a).data();
        let mut out = vec![T::zero(); c * hw];
        for ci in 0..c {
            for p in 0..hw {
                out[p * c + ci] = src[ci * hw + p];
            }
        }
        let v = Tensor::new(vec![hw, c], out)?;
        self.push("nchw_to_rows", v, Op::NchwToRows(a), self.req(a))
    }

    /// [H·W, C] → [1,C,H,W].
    pub fn rows_to_nchw(&mut self, a: NodeId, h: usize, w: usize) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || s[0] != h * w {
            return Err(Error::shape(
                "rows_to_nchw",
                format!("[{}, C]", h * w),
                format!("{:?}", s),
            ));
        }
        let (hw, c) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = vec![T::zero(); c * hw];
        for p in 0..hw {
            for ci in 0..c {
                out[ci * hw + p] = src[p * c + ci];
            }
        }
        let v = Tensor::new(vec![1, c, h, w], out)?;
        self.push("rows_to_nchw", v, Op::RowsToNchw(a), self.req(a))
    }

    /// Mean over all elements → scalar [1].
    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.value(a).mean());
        self.push("mean_all", v, Op::MeanAll(a), self.req(a))
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss. Gradients accumulate additively in
    /// exact reverse execution order.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(Error::invalid("backward", "empty tape"));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));

        for i in (0..=loss.0).rev() {
            if grads[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let g = grads[i].take().unwrap();
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    op: "backward",
                    context: format!("gradient at node {}", i),
                });
            }
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor<T>>], id: NodeId, delta: Tensor<T>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match grads[id.0] {
            Some(ref mut g) => {
                for (gv, dv) in g.data_mut().iter_mut().zip(delta.data()) {
                    *gv += *dv;
                }
            }
            None => grads[id.0] = Some(delta),
        }
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(grads, a, g.clone());
                self.accum(grads, b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, a, g.clone());
                self.accum(grads, b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                self.accum(grads, a, zip(g, self.value(b), |x, y| x * y));
                self.accum(grads, b, zip(g, self.value(a), |x, y| x * y));
            }
            Op::AddScalar(a, _) => self.accum(grads, a, g.clone()),
            Op::MulScalar(a, s) => self.accum(grads, a, g.map(|v| v * s)),
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                self.accum(grads, a, zip(g, y, |gv, yv| gv * yv * (T::one() - yv)));
            }
            Op::Silu(a) => {
                let x = self.value(a);
                let d = zip(g, x, |gv, xv| {
                    let s = sigmoid_val(xv);
                    gv * s * (T::one() + xv * (T::one() - s))
                });
                self.accum(grads, a, d);
            }
            Op::Relu(a) => {
                let x = self.value(a);
                self.accum(grads, a, zip(g, x, |gv, xv| if xv > T::zero() { gv } else { T::zero() }));
            }
            Op::RsqrtEps(a, _) => {
                let y = &self.nodes[i].value;
                let half = T::from_f64_c(0.5);
                self.accum(grads, a, zip(g, y, |gv, yv| -half * gv * yv * yv * yv));
            }
            Op::SoftmaxLast(a) => {
                let y = &self.nodes[i].value;
                let l = *y.shape().last().unwrap();
                let rows = y.numel() / l;
                let mut d = vec![T::zero(); y.numel()];
                for r in 0..rows {
                    let ys = &y.data()[r * l..(r + 1) * l];
                    let gs = &g.data()[r * l..(r + 1) * l];
                    let s = dot(ys, gs);
                    for ((dv, &yv), &gv) in d[r * l..(r + 1) * l].iter_mut().zip(ys).zip(gs) {
                        *dv = yv * (gv - s);
                    }
                }
                self.accum(grads, a, Tensor::new(y.shape().to_vec(), d)?);
            }
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![T::zero(); m * k];
                    mm_nt(m, n, k, g.data(), self.value(b).data(), &mut da);
                    self.accum(grads, a, Tensor::new(vec![m, k], da)?);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![T::zero(); k * n];
                    mm_tn(m, k, n, self.value(a).data(), g.data(), &mut db);
                    self.accum(grads, b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::MatmulNT(a, b) => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (m, k, n) = (sa[0], sa[1], sb[0]);
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![T::zero(); m * k];
                    mm_nn(m, n, k, g.data(), self.value(b).data(), &mut da);
                    self.accum(grads, a, Tensor::new(vec![m, k], da)?);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![T::zero(); n * k];
                    mm_tn(m, n, k, g.data(), self.value(a).data(), &mut db);
                    self.accum(grads, b, Tensor::new(vec![n, k], db)?);
                }
            }
            Op::AddBiasRow(x, b) => {
                self.accum(grads, x, g.clone());
                if self.nodes[b.0].requires_grad {
                    let f = self.shape(b)[0];
                    let mut db = vec![T::zero(); f];
                    for (idx, &gv) in g.data().iter().enumerate() {
                        db[idx % f] += gv;
                    }
                    self.accum(grads, b, Tensor::new(vec![f], db)?);
                }
            }
            Op::Conv2d { x, w, bias, stride, pad } => {
                self.backprop_conv2d(i, g, grads, x, w, bias, stride, pad)?;
            }
            Op::Upsample2(a) => {
                let s = self.shape(a);
                let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
                let mut d = vec![T::zero(); n * c * h * w];
                for nc in 0..n * c {
                    for y in 0..h {
                        for xw in 0..w {
                            let base = (nc * 2 * h + 2 * y) * 2 * w + 2 * xw;
                            d[(nc * h + y) * w + xw] = g.data()[base]
                                + g.data()[base + 1]
                                + g.data()[base + 2 * w]
                                + g.data()[base + 2 * w + 1];
                        }
                    }
                }
                self.accum(grads, a, Tensor::new(s.to_vec(), d)?);
            }
            Op::GlobalAvgPool(a) => {
                let s = self.shape(a);
                let hw = s[2] * s[3];
                let inv = T::from_f64_c(1.0 / hw as f64);
                let mut d = vec![T::zero(); self.value(a).numel()];
                for (i2, chunk) in d.chunks_mut(hw).enumerate() {
                    let gv = g.data()[i2] * inv;
                    for v in chunk {
                        *v = gv;
                    }
                }
                self.accum(grads, a, Tensor::new(s.to_vec(), d)?);
            }
            Op::MeanGroups(a, groups) => {
                let s = self.shape(a);
                let per = (s[1] / groups) * s[2] * s[3];
                let inv = T::from_f64_c(1.0 / per as f64);
                let mut d = vec![T::zero(); self.value(a).numel()];
                for (i2, chunk) in d.chunks_mut(per).enumerate() {
                    let gv = g.data()[i2] * inv;
                    for v in chunk {
                        *v = gv;
                    }
                }
                self.accum(grads, a, Tensor::new(s.to_vec(), d)?);
            }
            Op::BroadcastGroups(mnode, ref target) => {
                let s = self.shape(mnode);
                let per = (target[1] / s[1]) * target[2] * target[3];
                let mut d = vec![T::zero(); s[0] * s[1]];
                for (i2, dv) in d.iter_mut().enumerate() {
                    let mut acc = T::zero();
                    for &gv in &g.data()[i2 * per..(i2 + 1) * per] {
                        acc += gv;
                    }
                    *dv = acc;
                }
                self.accum(grads, mnode, Tensor::new(s.to_vec(), d)?);
            }
            Op::MulNc(x, sc) => {
                let sh = self.shape(x);
                let hw = sh[2] * sh[3];
                if self.nodes[x.0].requires_grad {
                    let ss = self.value(sc).data();
                    let mut d = g.data().to_vec();
                    for (i2, chunk) in d.chunks_mut(hw).enumerate() {
                        let f = ss[i2];
                        for v in chunk {
                            *v *= f;
                        }
                    }
                    self.accum(grads, x, Tensor::new(sh.to_vec(), d)?);
                }
                if self.nodes[sc.0].requires_grad {
                    let xs = self.value(x).data();
                    let mut d = vec![T::zero(); sh[0] * sh[1]];
                    for (i2, dv) in d.iter_mut().enumerate() {
                        let mut acc = T::zero();
                        for p in 0..hw {
                            acc += g.data()[i2 * hw + p] * xs[i2 * hw + p];
                        }
                        *dv = acc;
                    }
                    self.accum(grads, sc, Tensor::new(vec![sh[0], sh[1]], d)?);
                }
            }
            Op::AddNc(x, sc) => {
                let sh = self.shape(x);
                let hw = sh[2] * sh[3];
                self.accum(grads, x, g.clone());
                if self.nodes[sc.0].requires_grad {
                    let mut d = vec![T::zero(); sh[0] * sh[1]];
                    for (i2, dv) in d.iter_mut().enumerate() {
                        let mut acc = T::zero();
                        for &gv in &g.data()[i2 * hw..(i2 + 1) * hw] {
                            acc += gv;
                        }
                        *dv = acc;
                    }
                    self.accum(grads, sc, Tensor::new(vec![sh[0], sh[1]], d)?);
                }
            }
            Op::ScaleC(x, gc) => {
                let sh = self.shape(x);
                let (c, hw) = (sh[1], sh[2] * sh[3]);
                if self.nodes[x.0].requires_grad {
                    let gs = self.value(gc).data();
                    let mut d = g.data().to_vec();
                    for (i2, chunk) in d.chunks_mut(hw).enumerate() {
                        let f = gs[i2 % c];
                        for v in chunk {
                            *v *= f;
                        }
                    }
                    self.accum(grads, x, Tensor::new(sh.to_vec(), d)?);
                }
                if self.nodes[gc.0].requires_grad {
                    let xs = self.value(x).data();
                    let mut d = vec![T::zero(); c];
                    for i2 in 0..g.numel() / hw {
                        let mut acc = T::zero();
                        for p in 0..hw {
                            acc += g.data()[i2 * hw + p] * xs[i2 * hw + p];
                        }
                        d[i2 % c] += acc;
                    }
                    self.accum(grads, gc, Tensor::new(vec![c], d)?);
                }
            }
            Op::BiasC(x, bc) => {
                let sh = self.shape(x);
                let (c, hw) = (sh[1], sh[2] * sh[3]);
                self.accum(grads, x, g.clone());
                if self.nodes[bc.0].requires_grad {
                    let mut d = vec![T::zero(); c];
                    for (i2, chunk) in g.data().chunks(hw).enumerate() {
                        let mut acc = T::zero();
                        for &gv in chunk {
                            acc += gv;
                        }
                        d[i2 % c] += acc;
                    }
                    self.accum(grads, bc, Tensor::new(vec![c], d)?);
                }
            }
            Op::ConcatChannels(a, b) => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (n, hw) = (sa[0], sa[2] * sa[3]);
                let (ca, cb) = (sa[1], sb[1]);
                let mut da = vec![T::zero(); n * ca * hw];
                let mut db = vec![T::zero(); n * cb * hw];
                for ni in 0..n {
                    let base = ni * (ca + cb) * hw;
                    da[ni * ca * hw..(ni + 1) * ca * hw]
                        .copy_from_slice(&g.data()[base..base + ca * hw]);
                    db[ni * cb * hw..(ni + 1) * cb * hw]
                        .copy_from_slice(&g.data()[base + ca * hw..base + (ca + cb) * hw]);
                }
                self.accum(grads, a, Tensor::new(sa.to_vec(), da)?);
                self.accum(grads, b, Tensor::new(sb.to_vec(), db)?);
            }
            Op::ConcatRows(a, b) => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let na = sa[0] * sa[1];
                self.accum(grads, a, Tensor::new(sa.to_vec(), g.data()[..na].to_vec())?);
                self.accum(grads, b, Tensor::new(sb.to_vec(), g.data()[na..].to_vec())?);
            }
            Op::Reshape(a) => {
                let d = g.clone().reshaped(self.shape(a).to_vec())?;
                self.accum(grads, a, d);
            }
            Op::NchwToRows(a) => {
                let s = self.shape(a);
                let (c, hw) = (s[1], s[2] * s[3]);
                let mut d = vec![T::zero(); c * hw];
                for p in 0..hw {
                    for ci in 0..c {
                        d[ci * hw + p] = g.data()[p * c + ci];
                    }
                }
                self.accum(grads, a, Tensor::new(s.to_vec(), d)?);
            }
            Op::RowsToNchw(a) => {
                let s = self.shape(a);
                let (hw, c) = (s[0], s[1]);
                let mut d = vec![T::zero(); hw * c];
                for ci in 0..c {
                    for p in 0..hw {
                        d[p * c + ci] = g.data()[ci * hw + p];
                    }
                }
                self.accum(grads, a, Tensor::new(s.to_vec(), d)?);
            }
            Op::MeanAll(a) => {
                let n = self.value(a).numel();
                let gv = g.item() * T::from_f64_c(1.0 / n as f64);
                self.accum(grads, a, Tensor::full(self.shape(a), gv));
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_conv2d(
        &self,
        node: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<()> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let so = self.nodes[node].value.shape().to_vec();
        let (n, c, h, wdt) = (sx[0], sx[1], sx[2], sx[3]);
        let (o, kh, kw) = (sw[0], sw[2], sw[3]);
        let (oh, ow) = (so[2], so[3]);
        let m = oh * ow;
        let kdim = c * kh * kw;
        let need_dx = self.nodes[x.0].requires_grad;
        let need_dw = self.nodes[w.0].requires_grad;

        let mut dx = if need_dx { vec![T::zero(); n * c * h * wdt] } else { Vec::new() };
        let mut dw = if need_dw { vec![T::zero(); o * kdim] } else { Vec::new() };
        let mut col = vec![T::zero(); kdim * m];
        let mut dcol = vec![T::zero(); kdim * m];
        let xv = self.value(x).data();
        let wv = self.value(w).data();

        for ni in 0..n {
            let gout = &g.data()[ni * o * m..(ni + 1) * o * m];
            if need_dw {
                let xs = &xv[ni * c * h * wdt..(ni + 1) * c * h * wdt];
                im2col(xs, c, h, wdt, kh, kw, stride, pad, oh, ow, &mut col);
                // dW[o,k] += Σ_m g[o,m]·col[k,m]
                mm_nt(o, m, kdim, gout, &col, &mut dw);
            }
            if need_dx {
                for v in dcol.iter_mut() {
                    *v = T::zero();
                }
                // dcol[k,m] = Σ_o w[o,k]·g[o,m]
                mm_tn(o, kdim, m, wv, gout, &mut dcol);
                col2im_add(
                    &dcol,
                    c,
                    h,
                    wdt,
                    kh,
                    kw,
                    stride,
                    pad,
                    oh,
                    ow,
                    &mut dx[ni * c * h * wdt..(ni + 1) * c * h * wdt],
                );
            }
        }
        if need_dx {
            self.accum(grads, x, Tensor::new(sx, dx)?);
        }
        if need_dw {
            self.accum(grads, w, Tensor::new(sw, dw)?);
        }
        if let Some(b) = bias {
            if self.nodes[b.0].requires_grad {
                let mut db = vec![T::zero(); o];
                for ni in 0..n {
                    for oi in 0..o {
                        let mut acc = T::zero();
                        for &gv in &g.data()[(ni * o + oi) * m..(ni * o + oi + 1) * m] {
                            acc += gv;
                        }
                        db[oi] += acc;
                    }
                }
                self.accum(grads, b, Tensor::new(vec![o], db)?);
            }
        }
        Ok(())
    }
}

fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor {
        shape: a.shape().to_vec(),
        data,
    }
}

fn sigmoid_val<T: Scalar>(x: T) -> T {
    // Split on sign for numerical stability.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Expand one NCHW sample into a [C·KH·KW, OH·OW] patch matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    col: &mut [T],
) {
    debug_assert_eq!(col.len(), c * kh * kw * oh * ow);
    for v in col.iter_mut() {
        *v = T::zero();
    }
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_base = (ci * h + iy as usize) * w;
                    let dst_base = row + oy * ow;
                    if stride == 1 {
                        // contiguous span with clipped ends
                        let x0 = kx as isize - pad as isize;
                        let lo = (-x0).max(0) as usize;
                        let hi = ow.min((w as isize - x0).max(0) as usize);
                        if lo < hi {
                            let src = &x[(src_base as isize + x0 + lo as isize) as usize
                                ..(src_base as isize + x0 + hi as isize) as usize];
                            col[dst_base + lo..dst_base + hi].copy_from_slice(src);
                        }
                    } else {
                        for ox in 0..ow {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                col[dst_base + ox] = x[src_base + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add the inverse of [`im2col`].
#[allow(clippy::too_many_arguments)]
fn col2im_add<T: Scalar>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    dx: &mut [T],
) {
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_base = (ci * h + iy as usize) * w;
                    let src_base = row + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dx[dst_base + ix as usize] += col[src_base + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g
            .leaf(Tensor::from_f64_slice(&[2, 3], &[1., -2., 3., 0.5, 4., -1.]).unwrap(), true)
            .unwrap();
        let m = g.mean_all(x).unwrap();
        let loss = g.mul_scalar(m, 6.0).unwrap(); // sum = mean * numel
        let grads = g.backward(loss).unwrap();
        let gx = grads.get(x).unwrap();
        for &v in gx.data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn squared_norm_gradient_is_2x() {
        let mut g = Graph::<f64>::new();
        let vals = [1.0, -2.0, 3.0, 0.25];
        let x = g
            .leaf(Tensor::from_f64_slice(&[4], &vals).unwrap(), true)
            .unwrap();
        let sq = g.mul(x, x).unwrap();
        let m = g.mean_all(sq).unwrap();
        let loss = g.mul_scalar(m, 4.0).unwrap();
        let grads = g.backward(loss).unwrap();
        let gx = grads.get(x).unwrap();
        for (gv, v) in gx.data().iter().zip(&vals) {
            assert!((gv - 2.0 * v).abs() < 1e-12);
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros(&[3]), true).unwrap();
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn conv2d_ones_sums_to_nine() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::full(&[1, 1, 3, 3], 1.0), false).unwrap();
        let w = g.leaf(Tensor::full(&[1, 1, 3, 3], 1.0), false).unwrap();
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).item(), 9.0);
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut rng = Rng::new(2);
        let mut g = Graph::<f32>::new();
        let xt = Tensor::randn(&[1, 1, 5, 5], &mut rng);
        let x = g.leaf(xt.clone(), false).unwrap();
        let w = g.leaf(Tensor::full(&[1, 1, 1, 1], 1.0), false).unwrap();
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), xt.data());
    }

    #[test]
    fn conv2d_matches_naive_loops() {
        let mut rng = Rng::new(7);
        let x = Tensor::<f32>::randn(&[2, 3, 8, 8], &mut rng);
        let w = Tensor::<f32>::randn(&[4, 3, 3, 3], &mut rng);
        let b = Tensor::<f32>::randn(&[4], &mut rng);
        for &(stride, pad) in &[(1usize, 0usize), (1, 1), (2, 1)] {
            let mut g = Graph::<f32>::new();
            let xn = g.leaf(x.clone(), false).unwrap();
            let wn = g.leaf(w.clone(), false).unwrap();
            let bn = g.leaf(b.clone(), false).unwrap();
            let y = g.conv2d(xn, wn, Some(bn), stride, pad).unwrap();

            // direct six-loop convolution oracle
            let oh = (8 + 2 * pad - 3) / stride + 1;
            let ow = oh;
            for ni in 0..2 {
                for oi in 0..4 {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = b.data()[oi];
                            for ci in 0..3 {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if iy >= 0 && iy < 8 && ix >= 0 && ix < 8 {
                                            let xi = ((ni * 3 + ci) * 8 + iy as usize) * 8
                                                + ix as usize;
                                            let wi = ((oi * 3 + ci) * 3 + ky) * 3 + kx;
                                            acc += x.data()[xi] * w.data()[wi];
                                        }
                                    }
                                }
                            }
                            let got =
                                g.value(y).data()[((ni * 4 + oi) * oh + oy) * ow + ox];
                            assert!(
                                (got - acc).abs() < 1e-5,
                                "stride {stride} pad {pad}: {got} vs {acc}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn conv2d_shape_mismatch_names_both_shapes() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros(&[1, 3, 4, 4]), false).unwrap();
        let w = g.leaf(Tensor::zeros(&[2, 4, 3, 3]), false).unwrap();
        let err = g.conv2d(x, w, None, 1, 1).unwrap_err().to_string();
        assert!(err.contains("[1, 3, 4, 4]") && err.contains("[2, 4, 3, 3]"), "{err}");
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = Rng::new(3);
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::randn(&[5, 7], &mut rng), false).unwrap();
        let y = g.softmax_last(x).unwrap();
        for row in g.value(y).data().chunks(7) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn nan_input_is_hard_error() {
        let mut g = Graph::<f32>::new();
        let r = g.leaf(Tensor::new(vec![2], vec![1.0, f32::NAN]).unwrap(), false);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn forward_and_backward_are_bitwise_reproducible() {
        let run = || {
            let mut rng = Rng::new(123);
            let mut g = Graph::<f32>::new();
            let x = g.leaf(Tensor::randn(&[1, 4, 6, 6], &mut rng), true).unwrap();
            let w = g.leaf(Tensor::randn(&[4, 4, 3, 3], &mut rng), true).unwrap();
            let h = g.conv2d(x, w, None, 1, 1).unwrap();
            let h = g.silu(h).unwrap();
            let loss = g.mean_all(h).unwrap();
            let grads = g.backward(loss).unwrap();
            (
                g.value(loss).item().to_bits(),
                grads.get(w).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            )
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }
}
