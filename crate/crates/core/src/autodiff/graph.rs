use super::kernels::{self, pad4, strides4, AxisSample, ConvGeom};
use super::scalar::Scalar;
use super::tensor::Tensor;
use super::EngineError;

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Camera parameters baked into a projection node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionParams {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub z_min: f64,
}

/// Statistics of a batch-normalization node evaluated in training mode.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, the quantity folded into running statistics.
    pub var: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with batch statistics; gradients flow through them.
    Train,
    /// Normalize with stored running statistics (an affine map).
    Eval,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Abs(Var),
    Relu(Var),
    Elu(Var),
    Sigmoid(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        mode: NormMode,
        stats: Option<BatchStats<T>>,
    },
    AvgPool3(Var),
    ReflectPad(Var, usize),
    Upsample2(Var),
    GridSample {
        image: Var,
        grid: Var,
    },
    Sum(Var),
    Mean(Var),
    MeanAxes(Var),
    MinAxis {
        input: Var,
        argmin: Vec<u32>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    PoseMatrix(Var),
    ProjectDepth {
        depth: Var,
        pose: Var,
        params: ProjectionParams,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => vec![*a, *b],
            Scale(a, _) | AddScalar(a) | Abs(a) | Relu(a) | Elu(a) | Sigmoid(a) | AvgPool3(a)
            | ReflectPad(a, _) | Upsample2(a) | Sum(a) | Mean(a) | MeanAxes(a) | Reshape(a)
            | PoseMatrix(a) => vec![*a],
            Conv2d {
                input,
                weight,
                bias,
                ..
            } => {
                let mut v = vec![*input, *weight];
                v.extend(bias.iter().copied());
                v
            }
            BatchNorm {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
            GridSample { image, grid } => vec![*image, *grid],
            MinAxis { input, .. } | Narrow { input, .. } => vec![*input],
            Concat { inputs, .. } => inputs.clone(),
            ProjectDepth { depth, pose, .. } => vec![*depth, *pose],
        }
    }

    fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Div(..) => "div",
            Scale(..) => "scale",
            AddScalar(..) => "add_scalar",
            Abs(..) => "abs",
            Relu(..) => "relu",
            Elu(..) => "elu",
            Sigmoid(..) => "sigmoid",
            Conv2d { .. } => "conv2d",
            BatchNorm { .. } => "batch_norm",
            AvgPool3(..) => "avg_pool3",
            ReflectPad(..) => "reflect_pad",
            Upsample2(..) => "upsample2",
            GridSample { .. } => "grid_sample",
            Sum(..) => "sum",
            Mean(..) => "mean",
            MeanAxes(..) => "mean_axes",
            MinAxis { .. } => "min_axis",
            Concat { .. } => "concat",
            Narrow { .. } => "narrow",
            Reshape(..) => "reshape",
            PoseMatrix(..) => "pose_matrix",
            ProjectDepth { .. } => "project_depth",
        }
    }
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Hash of every discrete branch taken during a forward pass (ReLU signs,
/// argmins, sampler cells, clamps). Two evaluations with equal signatures
/// lie on the same smooth piece of the function.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct KinkSignature(u64);

impl KinkSignature {
    #[inline]
    fn mix(&mut self, v: u64) {
        self.0 = (self.0 ^ v).wrapping_mul(0x100_0000_01b3).rotate_left(7);
    }
}

/// Define-by-run reverse-mode tape. Every op evaluates eagerly; `backward`
/// walks the tape once in reverse.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    consumed: bool,
    kinks: Option<KinkSignature>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
            kinks: None,
        }
    }

    /// A graph that records a [`KinkSignature`] of its forward pass.
    pub fn with_kink_tracking() -> Self {
        Self {
            kinks: Some(KinkSignature::default()),
            ..Self::new()
        }
    }

    pub fn kink_signature(&self) -> Option<KinkSignature> {
        self.kinks
    }

    /// Folds caller-side discrete decisions (e.g. a loss mask) into the signature.
    pub fn record_decisions(&mut self, bits: impl IntoIterator<Item = bool>) {
        if let Some(k) = self.kinks.as_mut() {
            for b in bits {
                k.mix(b as u64);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Batch statistics of a training-mode normalization node.
    pub fn batch_stats(&self, v: Var) -> Option<&BatchStats<T>> {
        match &self.nodes[v.0].op {
            Op::BatchNorm { stats, .. } => stats.as_ref(),
            _ => None,
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var, EngineError> {
        if !value.is_finite() {
            return Err(EngineError::NonFinite("leaf"));
        }
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var, EngineError> {
        self.leaf(value, false)
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Result<Var, EngineError> {
        if !value.is_finite() {
            return Err(EngineError::NonFinite(op.name()));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    // -- elementwise -------------------------------------------------------

    fn broadcast_binary(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>, EngineError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return self.value(a).zip_map(self.value(b), f);
        }
        if sa.len() > 4 || sb.len() > 4 {
            return Err(EngineError::Shape("broadcast supports rank <= 4".into()));
        }
        let rank = sa.len().max(sb.len());
        let (pa, pb) = (pad4(sa), pad4(sb));
        let mut out = [1usize; 4];
        for i in 0..4 {
            out[i] = match (pa[i], pb[i]) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => {
                    return Err(EngineError::Shape(format!(
                        "cannot broadcast {sa:?} with {sb:?}"
                    )))
                }
            };
        }
        let stride_a = kernels::broadcast_strides(&pa, &out);
        let stride_b = kernels::broadcast_strides(&pb, &out);
        let da = self.value(a).data();
        let db = self.value(b).data();
        let mut data = vec![T::zero(); out.iter().product()];
        kernels::for_each_broadcast(&out, &stride_a, &stride_b, |o, ia, ib| {
            data[o] = f(da[ia], db[ib]);
        });
        Tensor::from_vec(&out[4 - rank..], data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        let v = self.broadcast_binary(a, b, |x, y| x + y)?;
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        let v = self.broadcast_binary(a, b, |x, y| x - y)?;
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        let v = self.broadcast_binary(a, b, |x, y| x * y)?;
        self.push(Op::Mul(a, b), v)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        let v = self.broadcast_binary(a, b, |x, y| x / y)?;
        self.push(Op::Div(a, b), v)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, EngineError> {
        let s = T::c(s);
        let v = self.value(a).map(|x| x * s);
        self.push(Op::Scale(a, s), v)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var, EngineError> {
        let s = T::c(s);
        let v = self.value(a).map(|x| x + s);
        self.push(Op::AddScalar(a), v)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var, EngineError> {
        let v = self.value(a).map(|x| x.abs());
        if let Some(k) = self.kinks.as_mut() {
            for &x in self.nodes[a.0].value.data() {
                k.mix((x >= T::zero()) as u64);
            }
        }
        self.push(Op::Abs(a), v)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, EngineError> {
        let v = self
            .value(a)
            .map(|x| if x > T::zero() { x } else { T::zero() });
        if let Some(k) = self.kinks.as_mut() {
            for &x in self.nodes[a.0].value.data() {
                k.mix((x > T::zero()) as u64);
            }
        }
        self.push(Op::Relu(a), v)
    }

    pub fn elu(&mut self, a: Var) -> Result<Var, EngineError> {
        let v = self
            .value(a)
            .map(|x| if x > T::zero() { x } else { x.exp() - T::one() });
        self.push(Op::Elu(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, EngineError> {
        let v = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        self.push(Op::Sigmoid(a), v)
    }

    // -- convolution and normalization -------------------------------------

    /// 2-D convolution with zero padding. `weight` is (Co, C, kh, kw).
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, EngineError> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let (co, ci, kh, kw) = self.value(weight).dims4()?;
        if ci != c {
            return Err(EngineError::Shape(format!(
                "conv2d input has {c} channels, weight expects {ci}"
            )));
        }
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(EngineError::Shape(format!(
                "conv2d kernel {kh}x{kw} does not fit {h}x{w} with pad {pad}"
            )));
        }
        if let Some(b) = bias {
            if self.value(b).len() != co {
                return Err(EngineError::Shape("conv2d bias length".into()));
            }
        }
        let geom = ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        };
        let rows = geom.col_rows();
        let cols = geom.col_cols();
        let mut out = vec![T::zero(); n * co * cols];
        let mut col = if geom.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); rows * cols]
        };
        let x = self.value(input).data();
        let wd = self.value(weight).data();
        for s in 0..n {
            let xs = &x[s * c * h * w..(s + 1) * c * h * w];
            let ys = &mut out[s * co * cols..(s + 1) * co * cols];
            if geom.is_pointwise() {
                kernels::matmul(co, rows, cols, wd, false, xs, false, ys, false);
            } else {
                kernels::im2col(xs, &geom, &mut col);
                kernels::matmul(co, rows, cols, wd, false, &col, false, ys, false);
            }
            if let Some(b) = bias {
                let bd = self.nodes[b.0].value.data();
                for (o, &bv) in ys.chunks_mut(cols).zip(bd) {
                    o.iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        let value = Tensor::from_vec(&[n, co, geom.ho, geom.wo], out)?;
        self.push(
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            value,
        )
    }

    /// Per-channel batch normalization of an (N, C, H, W) input.
    ///
    /// In [`NormMode::Eval`] the supplied running statistics are used; in
    /// [`NormMode::Train`] batch statistics are computed and can be read
    /// back with [`Graph::batch_stats`].
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        mode: NormMode,
        eps: f64,
    ) -> Result<Var, EngineError> {
        let (n, c, h, w) = self.value(input).dims4()?;
        if self.value(gamma).len() != c
            || self.value(beta).len() != c
            || running_mean.len() != c
            || running_var.len() != c
        {
            return Err(EngineError::Shape("batch_norm channel count".into()));
        }
        let hw = h * w;
        let m = n * hw;
        let x = self.value(input).data();
        let (mean, var_b) = match mode {
            NormMode::Eval => (running_mean.to_vec(), running_var.to_vec()),
            NormMode::Train => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for s_ in 0..n {
                        s += x[(s_ * c + ch) * hw..(s_ * c + ch + 1) * hw].iter().copied().sum();
                    }
                    let mu = s / T::c(m as f64);
                    let mut v = T::zero();
                    for s_ in 0..n {
                        for &xv in &x[(s_ * c + ch) * hw..(s_ * c + ch + 1) * hw] {
                            v += (xv - mu) * (xv - mu);
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = v / T::c(m as f64);
                }
                (mean, var)
            }
        };
        let inv_std: Vec<T> = var_b
            .iter()
            .map(|&v| T::one() / (v + T::c(eps)).sqrt())
            .collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for s_ in 0..n {
            for ch in 0..c {
                let off = (s_ * c + ch) * hw;
                for i in off..off + hw {
                    let xh = (x[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + b[ch];
                }
            }
        }
        let stats = (mode == NormMode::Train).then(|| {
            let unbias = if m > 1 {
                T::c(m as f64 / (m - 1) as f64)
            } else {
                T::one()
            };
            BatchStats {
                mean: mean.clone(),
                var: var_b.iter().map(|&v| v * unbias).collect(),
            }
        });
        let value = Tensor::from_vec(&[n, c, h, w], out)?;
        self.push(
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
                stats,
            },
            value,
        )
    }

    // -- spatial -------------------------------------------------------------

    /// 3×3 average pool, stride 1, no padding.
    pub fn avg_pool3(&mut self, a: Var) -> Result<Var, EngineError> {
        let (n, c, h, w) = self.value(a).dims4()?;
        if h < 3 || w < 3 {
            return Err(EngineError::Shape("avg_pool3 needs H, W >= 3".into()));
        }
        let (ho, wo) = (h - 2, w - 2);
        let x = self.value(a).data();
        let ninth = T::c(1.0 / 9.0);
        let mut out = vec![T::zero(); n * c * ho * wo];
        for p in 0..n * c {
            let src = &x[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for y in 0..ho {
                for xx in 0..wo {
                    let mut s = T::zero();
                    for dy in 0..3 {
                        let r = &src[(y + dy) * w + xx..(y + dy) * w + xx + 3];
                        s += r[0] + r[1] + r[2];
                    }
                    dst[y * wo + xx] = s * ninth;
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, ho, wo], out)?;
        self.push(Op::AvgPool3(a), value)
    }

    pub fn reflect_pad(&mut self, a: Var, p: usize) -> Result<Var, EngineError> {
        let (n, c, h, w) = self.value(a).dims4()?;
        // A single row or column has nothing to mirror and is repeated.
        if (p >= h && h > 1) || (p >= w && w > 1) {
            return Err(EngineError::Shape(format!(
                "reflection pad {p} too large for {h}x{w}"
            )));
        }
        let (ho, wo) = (h + 2 * p, w + 2 * p);
        let x = self.value(a).data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        for pl in 0..n * c {
            let src = &x[pl * h * w..(pl + 1) * h * w];
            let dst = &mut out[pl * ho * wo..(pl + 1) * ho * wo];
            for y in 0..ho {
                let sy = reflect_index(y as isize - p as isize, h);
                for xx in 0..wo {
                    let sx = reflect_index(xx as isize - p as isize, w);
                    dst[y * wo + xx] = src[sy * w + sx];
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, ho, wo], out)?;
        self.push(Op::ReflectPad(a, p), value)
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2(&mut self, a: Var) -> Result<Var, EngineError> {
        let (n, c, h, w) = self.value(a).dims4()?;
        let (ho, wo) = (2 * h, 2 * w);
        let x = self.value(a).data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        for pl in 0..n * c {
            let src = &x[pl * h * w..(pl + 1) * h * w];
            let dst = &mut out[pl * ho * wo..(pl + 1) * ho * wo];
            for y in 0..ho {
                for xx in 0..wo {
                    dst[y * wo + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, ho, wo], out)?;
        self.push(Op::Upsample2(a), value)
    }

    /// Bilinear sampling of `image` (N, C, H, W) at `grid` (N, 2, Ho, Wo),
    /// normalized coordinates with −1 ↦ 0 and +1 ↦ extent − 1. Positions
    /// outside the image are clamped to the border.
    pub fn grid_sample(&mut self, image: Var, grid: Var) -> Result<Var, EngineError> {
        let (n, c, h, w) = self.value(image).dims4()?;
        let (gn, two, ho, wo) = self.value(grid).dims4()?;
        if gn != n || two != 2 || h < 2 || w < 2 {
            return Err(EngineError::Shape(format!(
                "grid_sample image {:?} grid {:?}",
                self.shape(image),
                self.shape(grid)
            )));
        }
        let img = self.value(image).data();
        let gd = self.value(grid).data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        let mut kink = self.kinks;
        for s in 0..n {
            let gx = &gd[(s * 2) * ho * wo..(s * 2 + 1) * ho * wo];
            let gy = &gd[(s * 2 + 1) * ho * wo..(s * 2 + 2) * ho * wo];
            for p in 0..ho * wo {
                let ax = kernels::axis_sample(kernels::unnormalize(gx[p], w), w);
                let ay = kernels::axis_sample(kernels::unnormalize(gy[p], h), h);
                if let Some(k) = kink.as_mut() {
                    k.mix(((ax.i0 as u64) << 34) | ((ay.i0 as u64) << 4) | ((ax.state as u64) << 2) | ay.state as u64);
                }
                let wts = bilinear_weights(&ax, &ay);
                for ch in 0..c {
                    let plane = &img[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
                    let i00 = ay.i0 * w + ax.i0;
                    out[(s * c + ch) * ho * wo + p] = wts[0] * plane[i00]
                        + wts[1] * plane[i00 + 1]
                        + wts[2] * plane[i00 + w]
                        + wts[3] * plane[i00 + w + 1];
                }
            }
        }
        self.kinks = kink;
        let value = Tensor::from_vec(&[n, c, ho, wo], out)?;
        self.push(Op::GridSample { image, grid }, value)
    }

    // -- reductions and shape ----------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var, EngineError> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, EngineError> {
        let v = Tensor::scalar(self.value(a).mean());
        self.push(Op::Mean(a), v)
    }

    /// Mean over the flagged axes of a rank-≤4 tensor, keeping them as size 1.
    pub fn mean_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var, EngineError> {
        let shape = self.shape(a).to_vec();
        let rank = shape.len();
        if axes.iter().any(|&ax| ax >= rank) || rank > 4 {
            return Err(EngineError::Shape(format!(
                "mean_axes {axes:?} on shape {shape:?}"
            )));
        }
        let mut out_shape = shape.clone();
        for &ax in axes {
            out_shape[ax] = 1;
        }
        let (pin, pout) = (pad4(&shape), pad4(&out_shape));
        let so = kernels::broadcast_strides(&pout, &pin);
        let count = (self.value(a).len() / out_shape.iter().product::<usize>()) as f64;
        let x = self.value(a).data();
        let mut out = vec![T::zero(); out_shape.iter().product()];
        let si = strides4(&pin);
        kernels::for_each_broadcast(&pin, &si, &so, |_, ii, io| out[io] += x[ii]);
        let inv = T::c(1.0 / count);
        out.iter_mut().for_each(|v| *v *= inv);
        let value = Tensor::from_vec(&out_shape, out)?;
        self.push(Op::MeanAxes(a), value)
    }

    /// Minimum over the channel axis of (N, S, H, W), giving (N, 1, H, W).
    /// Ties go to the lowest channel index.
    pub fn min_channels(&mut self, a: Var) -> Result<Var, EngineError> {
        let (n, s, h, w) = self.value(a).dims4()?;
        let hw = h * w;
        let x = self.value(a).data();
        let mut out = vec![T::zero(); n * hw];
        let mut argmin = vec![0u32; n * hw];
        for b in 0..n {
            for p in 0..hw {
                let mut best = x[(b * s) * hw + p];
                let mut idx = 0u32;
                for ch in 1..s {
                    let v = x[(b * s + ch) * hw + p];
                    if v < best {
                        best = v;
                        idx = ch as u32;
                    }
                }
                out[b * hw + p] = best;
                argmin[b * hw + p] = idx;
            }
        }
        if let Some(k) = self.kinks.as_mut() {
            for &i in &argmin {
                k.mix(i as u64);
            }
        }
        let value = Tensor::from_vec(&[n, 1, h, w], out)?;
        self.push(Op::MinAxis { input: a, argmin }, value)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, EngineError> {
        let first = inputs
            .first()
            .ok_or_else(|| EngineError::Shape("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        let rank = base.len();
        if axis >= rank || rank > 4 {
            return Err(EngineError::Shape(format!("concat axis {axis} rank {rank}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            if s.len() != rank || (0..rank).any(|i| i != axis && s[i] != base[i]) {
                return Err(EngineError::Shape(format!(
                    "concat mismatch {base:?} vs {s:?}"
                )));
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for v in inputs {
                let len = self.shape(*v)[axis] * inner;
                out.extend_from_slice(&self.value(*v).data()[o * len..(o + 1) * len]);
            }
        }
        let value = Tensor::from_vec(&out_shape, out)?;
        self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            value,
        )
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, EngineError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(EngineError::Shape(format!(
                "narrow axis {axis} [{start}, {}) of {shape:?}",
                start + len
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::from_vec(&out_shape, out)?;
        self.push(Op::Narrow { input: a, axis, start }, value)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, EngineError> {
        let value = self.value(a).clone().reshape(shape)?;
        self.push(Op::Reshape(a), value)
    }

    // -- geometry ------------------------------------------------------------

    /// (N, 6) axis-angle + translation vectors to (N, 3, 4) `[R | t]`.
    pub fn pose_matrix(&mut self, v: Var) -> Result<Var, EngineError> {
        let shape = self.shape(v).to_vec();
        if shape.len() != 2 || shape[1] != 6 {
            return Err(EngineError::Shape(format!(
                "pose_matrix expects (N, 6), got {shape:?}"
            )));
        }
        let n = shape[0];
        let x = self.value(v).data();
        let mut out = Vec::with_capacity(n * 12);
        for s in 0..n {
            let p = &x[s * 6..s * 6 + 6];
            let r = kernels::rodrigues([p[0].f64(), p[1].f64(), p[2].f64()]);
            for i in 0..3 {
                for j in 0..3 {
                    out.push(T::c(r[i][j]));
                }
                out.push(p[3 + i]);
            }
        }
        let value = Tensor::from_vec(&[n, 3, 4], out)?;
        self.push(Op::PoseMatrix(v), value)
    }

    /// Back-projects `depth` (N, 1, H, W) through the pinhole model, applies
    /// `[R | t]` (N, 3, 4) and re-projects, returning normalized sampling
    /// coordinates (N, 2, H, W). Depth along the new optical axis is clamped
    /// below at `z_min`.
    pub fn project_depth(
        &mut self,
        depth: Var,
        pose: Var,
        params: ProjectionParams,
    ) -> Result<Var, EngineError> {
        let (n, one, h, w) = self.value(depth).dims4()?;
        if one != 1 || h != params.height || w != params.width {
            return Err(EngineError::Shape(format!(
                "project_depth depth {:?} vs camera {}x{}",
                self.shape(depth),
                params.width,
                params.height
            )));
        }
        if self.shape(pose) != [n, 3, 4] {
            return Err(EngineError::Shape(format!(
                "project_depth pose {:?}",
                self.shape(pose)
            )));
        }
        let d = self.value(depth).data();
        let pm = self.value(pose).data();
        let hw = h * w;
        let mut out = vec![T::zero(); n * 2 * hw];
        let mut kink = self.kinks;
        for s in 0..n {
            let m: Vec<f64> = pm[s * 12..s * 12 + 12].iter().map(|v| v.f64()).collect();
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    let (ray, q) = project_point(&m, &params, x, y, d[s * hw + p].f64());
                    let _ = ray;
                    let clamped = q[2] < params.z_min;
                    if let Some(k) = kink.as_mut() {
                        k.mix(clamped as u64);
                    }
                    let z = q[2].max(params.z_min);
                    let px = params.fx * q[0] / z + params.cx;
                    let py = params.fy * q[1] / z + params.cy;
                    out[(s * 2) * hw + p] = T::c(2.0 * px / (w - 1) as f64 - 1.0);
                    out[(s * 2 + 1) * hw + p] = T::c(2.0 * py / (h - 1) as f64 - 1.0);
                }
            }
        }
        self.kinks = kink;
        let value = Tensor::from_vec(&[n, 2, h, w], out)?;
        self.push(
            Op::ProjectDepth {
                depth,
                pose,
                params,
            },
            value,
        )
    }

    // -- reverse pass --------------------------------------------------------

    /// Reverse pass from a scalar `loss`. Only nodes that transitively depend
    /// on a leaf created with `requires_grad` receive gradients. A graph can
    /// be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, EngineError> {
        if self.consumed {
            return Err(EngineError::Consumed);
        }
        if self.value(loss).len() != 1 {
            return Err(EngineError::NotScalar(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match &self.nodes[i].op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            if !g.is_finite() {
                return Err(EngineError::NonFinite("gradient"));
            }
            self.backward_node(i, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reduces a broadcast gradient back to the shape of `target`.
    fn unbroadcast(&self, g: &Tensor<T>, target: Var, f: impl Fn(usize, usize) -> T) -> Tensor<T> {
        let ts = self.shape(target);
        let out = pad4(g.shape());
        let pt = pad4(ts);
        let st = kernels::broadcast_strides(&pt, &out);
        let so = strides4(&out);
        let mut acc = vec![T::zero(); self.value(target).len()];
        kernels::for_each_broadcast(&out, &so, &st, |o, _, it| acc[it] += f(o, it));
        Tensor::from_vec(ts, acc).expect("unbroadcast shape")
    }

    fn binary_offsets(&self, a: Var, b: Var, out: &[usize]) -> ([usize; 4], [usize; 4], [usize; 4]) {
        let po = pad4(out);
        (
            po,
            kernels::broadcast_strides(&pad4(self.shape(a)), &po),
            kernels::broadcast_strides(&pad4(self.shape(b)), &po),
        )
    }

    fn backward_node(
        &self,
        i: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<(), EngineError> {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                for (v, s) in [(*a, T::one()), (*b, sign)] {
                    if !self.requires_grad(v) {
                        continue;
                    }
                    let t = if self.shape(v) == g.shape() {
                        if s == T::one() {
                            g.clone()
                        } else {
                            g.map(|x| -x)
                        }
                    } else {
                        self.unbroadcast(g, v, |o, _| s * gd[o])
                    };
                    self.accumulate(grads, v, t);
                }
            }
            Op::Mul(a, b) | Op::Div(a, b) => {
                let is_div = matches!(node.op, Op::Div(..));
                let (po, sa, sb) = self.binary_offsets(*a, *b, g.shape());
                let da = self.value(*a).data();
                let db = self.value(*b).data();
                if self.requires_grad(*a) {
                    let mut acc = vec![T::zero(); da.len()];
                    kernels::for_each_broadcast(&po, &sa, &sb, |o, ia, ib| {
                        acc[ia] += if is_div { gd[o] / db[ib] } else { gd[o] * db[ib] };
                    });
                    self.accumulate(grads, *a, Tensor::from_vec(self.shape(*a), acc)?);
                }
                if self.requires_grad(*b) {
                    let mut acc = vec![T::zero(); db.len()];
                    kernels::for_each_broadcast(&po, &sa, &sb, |o, ia, ib| {
                        acc[ib] += if is_div {
                            -gd[o] * da[ia] / (db[ib] * db[ib])
                        } else {
                            gd[o] * da[ia]
                        };
                    });
                    self.accumulate(grads, *b, Tensor::from_vec(self.shape(*b), acc)?);
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(grads, *a, g.map(|x| x * s));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Abs(a) => {
                let t = self.value(*a).zip_map(g, |x, gv| if x >= T::zero() { gv } else { -gv })?;
                self.accumulate(grads, *a, t);
            }
            Op::Relu(a) => {
                let t = self.value(*a).zip_map(g, |x, gv| if x > T::zero() { gv } else { T::zero() })?;
                self.accumulate(grads, *a, t);
            }
            Op::Elu(a) => {
                let t = node.value.zip_map(g, |y, gv| if y > T::zero() { gv } else { gv * (y + T::one()) })?;
                self.accumulate(grads, *a, t);
            }
            Op::Sigmoid(a) => {
                let t = node.value.zip_map(g, |y, gv| gv * y * (T::one() - y))?;
                self.accumulate(grads, *a, t);
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => self.conv_backward(*input, *weight, *bias, geom, g, grads)?,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
                ..
            } => {
                let (n, c, h, w) = self.value(*input).dims4()?;
                let hw = h * w;
                let m = T::c((n * hw) as f64);
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        let off = (s * c + ch) * hw;
                        for k in off..off + hw {
                            sum_g[ch] += gd[k];
                            sum_gx[ch] += gd[k] * xhat[k];
                        }
                    }
                }
                if self.requires_grad(*input) {
                    let mut dx = vec![T::zero(); gd.len()];
                    for s in 0..n {
                        for ch in 0..c {
                            let off = (s * c + ch) * hw;
                            let k_ = gam[ch] * inv_std[ch];
                            for k in off..off + hw {
                                dx[k] = match mode {
                                    NormMode::Eval => k_ * gd[k],
                                    NormMode::Train => {
                                        k_ * (gd[k] - sum_g[ch] / m - xhat[k] * sum_gx[ch] / m)
                                    }
                                };
                            }
                        }
                    }
                    self.accumulate(grads, *input, Tensor::from_vec(&[n, c, h, w], dx)?);
                }
                let gs = self.shape(*gamma).to_vec();
                self.accumulate(grads, *gamma, Tensor::from_vec(&gs, sum_gx)?);
                let bs = self.shape(*beta).to_vec();
                self.accumulate(grads, *beta, Tensor::from_vec(&bs, sum_g)?);
            }
            Op::AvgPool3(a) => {
                let (n, c, h, w) = self.value(*a).dims4()?;
                let (ho, wo) = (h - 2, w - 2);
                let ninth = T::c(1.0 / 9.0);
                let mut dx = vec![T::zero(); n * c * h * w];
                for p in 0..n * c {
                    let src = &gd[p * ho * wo..(p + 1) * ho * wo];
                    let dst = &mut dx[p * h * w..(p + 1) * h * w];
                    for y in 0..ho {
                        for x in 0..wo {
                            let v = src[y * wo + x] * ninth;
                            for dy in 0..3 {
                                let r = &mut dst[(y + dy) * w + x..(y + dy) * w + x + 3];
                                r[0] += v;
                                r[1] += v;
                                r[2] += v;
                            }
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::from_vec(&[n, c, h, w], dx)?);
            }
            Op::ReflectPad(a, p) => {
                let (n, c, h, w) = self.value(*a).dims4()?;
                let p = *p;
                let (ho, wo) = (h + 2 * p, w + 2 * p);
                let mut dx = vec![T::zero(); n * c * h * w];
                for pl in 0..n * c {
                    let src = &gd[pl * ho * wo..(pl + 1) * ho * wo];
                    let dst = &mut dx[pl * h * w..(pl + 1) * h * w];
                    for y in 0..ho {
                        let sy = reflect_index(y as isize - p as isize, h);
                        for x in 0..wo {
                            let sx = reflect_index(x as isize - p as isize, w);
                            dst[sy * w + sx] += src[y * wo + x];
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::from_vec(&[n, c, h, w], dx)?);
            }
            Op::Upsample2(a) => {
                let (n, c, h, w) = self.value(*a).dims4()?;
                let wo = 2 * w;
                let mut dx = vec![T::zero(); n * c * h * w];
                for pl in 0..n * c {
                    let src = &gd[pl * 4 * h * w..(pl + 1) * 4 * h * w];
                    let dst = &mut dx[pl * h * w..(pl + 1) * h * w];
                    for y in 0..2 * h {
                        for x in 0..wo {
                            dst[(y / 2) * w + x / 2] += src[y * wo + x];
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::from_vec(&[n, c, h, w], dx)?);
            }
            Op::GridSample { image, grid } => self.grid_sample_backward(*image, *grid, g, grads)?,
            Op::Sum(a) => {
                let s = gd[0];
                let t = Tensor::full(self.shape(*a), s);
                self.accumulate(grads, *a, t);
            }
            Op::Mean(a) => {
                let s = gd[0] / T::c(self.value(*a).len() as f64);
                let t = Tensor::full(self.shape(*a), s);
                self.accumulate(grads, *a, t);
            }
            Op::MeanAxes(a) => {
                let count = T::c((self.value(*a).len() / g.len()) as f64);
                let (pin, pout) = (pad4(self.shape(*a)), pad4(g.shape()));
                let si = strides4(&pin);
                let so = kernels::broadcast_strides(&pout, &pin);
                let mut dx = vec![T::zero(); self.value(*a).len()];
                kernels::for_each_broadcast(&pin, &si, &so, |_, ii, io| dx[ii] = gd[io] / count);
                self.accumulate(grads, *a, Tensor::from_vec(self.shape(*a), dx)?);
            }
            Op::MinAxis { input, argmin } => {
                let (n, s, h, w) = self.value(*input).dims4()?;
                let hw = h * w;
                let mut dx = vec![T::zero(); n * s * hw];
                for b in 0..n {
                    for p in 0..hw {
                        let ch = argmin[b * hw + p] as usize;
                        dx[(b * s + ch) * hw + p] = gd[b * hw + p];
                    }
                }
                self.accumulate(grads, *input, Tensor::from_vec(&[n, s, h, w], dx)?);
            }
            Op::Concat { inputs, axis } => {
                let shape = g.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for v in inputs {
                    let len = self.shape(*v)[*axis] * inner;
                    if self.requires_grad(*v) {
                        let mut part = Vec::with_capacity(outer * len);
                        for o in 0..outer {
                            part.extend_from_slice(&gd[o * total + offset..o * total + offset + len]);
                        }
                        let vs = self.shape(*v).to_vec();
                        self.accumulate(grads, *v, Tensor::from_vec(&vs, part)?);
                    }
                    offset += len;
                }
            }
            Op::Narrow { input, axis, start } => {
                let shape = self.shape(*input).to_vec();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let len = g.shape()[*axis];
                let mut dx = vec![T::zero(); self.value(*input).len()];
                for o in 0..outer {
                    let base = (o * shape[*axis] + start) * inner;
                    dx[base..base + len * inner]
                        .copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, *input, Tensor::from_vec(&shape, dx)?);
            }
            Op::Reshape(a) => {
                let t = g.clone().reshape(self.shape(*a))?;
                self.accumulate(grads, *a, t);
            }
            Op::PoseMatrix(v) => {
                let n = self.shape(*v)[0];
                let x = self.value(*v).data();
                let mut dv = vec![T::zero(); n * 6];
                for s in 0..n {
                    let p = &x[s * 6..s * 6 + 6];
                    let jac = kernels::rodrigues_jacobian([p[0].f64(), p[1].f64(), p[2].f64()]);
                    let gs = &gd[s * 12..s * 12 + 12];
                    for (m, jm) in jac.iter().enumerate() {
                        let mut acc = 0.0;
                        for r in 0..3 {
                            for c in 0..3 {
                                acc += gs[r * 4 + c].f64() * jm[r][c];
                            }
                        }
                        dv[s * 6 + m] = T::c(acc);
                    }
                    for r in 0..3 {
                        dv[s * 6 + 3 + r] = gs[r * 4 + 3];
                    }
                }
                self.accumulate(grads, *v, Tensor::from_vec(&[n, 6], dv)?);
            }
            Op::ProjectDepth {
                depth,
                pose,
                params,
            } => self.project_backward(*depth, *pose, params, g, grads)?,
        }
        Ok(())
    }

    fn conv_backward(
        &self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: &ConvGeom,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<(), EngineError> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let co = self.shape(weight)[0];
        let rows = geom.col_rows();
        let cols = geom.col_cols();
        let gd = g.data();
        let x = self.value(input).data();
        let wd = self.value(weight).data();
        let need_dx = self.requires_grad(input);
        let need_dw = self.requires_grad(weight);
        let mut dw = if need_dw { vec![T::zero(); co * rows] } else { Vec::new() };
        let mut dx = if need_dx { vec![T::zero(); n * c * h * w] } else { Vec::new() };
        let pointwise = geom.is_pointwise();
        let mut col = if pointwise { Vec::new() } else { vec![T::zero(); rows * cols] };
        for s in 0..n {
            let gs = &gd[s * co * cols..(s + 1) * co * cols];
            if need_dw {
                let xs = &x[s * c * h * w..(s + 1) * c * h * w];
                if pointwise {
                    kernels::matmul(co, cols, rows, gs, false, xs, true, &mut dw, true);
                } else {
                    kernels::im2col(xs, geom, &mut col);
                    kernels::matmul(co, cols, rows, gs, false, &col, true, &mut dw, true);
                }
            }
            if need_dx {
                let dxs = &mut dx[s * c * h * w..(s + 1) * c * h * w];
                if pointwise {
                    kernels::matmul(rows, co, cols, wd, true, gs, false, dxs, true);
                } else {
                    kernels::matmul(rows, co, cols, wd, true, gs, false, &mut col, false);
                    kernels::col2im(&col, geom, dxs);
                }
            }
        }
        if need_dw {
            let ws = self.shape(weight).to_vec();
            self.accumulate(grads, weight, Tensor::from_vec(&ws, dw)?);
        }
        if need_dx {
            self.accumulate(grads, input, Tensor::from_vec(&[n, c, h, w], dx)?);
        }
        if let Some(b) = bias {
            if self.requires_grad(b) {
                let mut db = vec![T::zero(); co];
                for s in 0..n {
                    for (o, acc) in db.iter_mut().enumerate() {
                        *acc += gd[(s * co + o) * cols..(s * co + o + 1) * cols].iter().copied().sum();
                    }
                }
                self.accumulate(grads, b, Tensor::from_vec(&[co], db)?);
            }
        }
        Ok(())
    }

    fn grid_sample_backward(
        &self,
        image: Var,
        grid: Var,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<(), EngineError> {
        let (n, c, h, w) = self.value(image).dims4()?;
        let (_, _, ho, wo) = self.value(grid).dims4()?;
        let img = self.value(image).data();
        let gridd = self.value(grid).data();
        let gd = g.data();
        let need_img = self.requires_grad(image);
        let need_grid = self.requires_grad(grid);
        let mut dimg = if need_img { vec![T::zero(); img.len()] } else { Vec::new() };
        let mut dgrid = if need_grid { vec![T::zero(); gridd.len()] } else { Vec::new() };
        let sx = T::c((w - 1) as f64 * 0.5);
        let sy = T::c((h - 1) as f64 * 0.5);
        for s in 0..n {
            let base_g = s * 2 * ho * wo;
            for p in 0..ho * wo {
                let ax = kernels::axis_sample(kernels::unnormalize(gridd[base_g + p], w), w);
                let ay = kernels::axis_sample(kernels::unnormalize(gridd[base_g + ho * wo + p], h), h);
                let wts = bilinear_weights(&ax, &ay);
                let i00 = ay.i0 * w + ax.i0;
                let mut gx = T::zero();
                let mut gy = T::zero();
                for ch in 0..c {
                    let go = gd[(s * c + ch) * ho * wo + p];
                    let off = (s * c + ch) * h * w;
                    if need_img {
                        dimg[off + i00] += wts[0] * go;
                        dimg[off + i00 + 1] += wts[1] * go;
                        dimg[off + i00 + w] += wts[2] * go;
                        dimg[off + i00 + w + 1] += wts[3] * go;
                    }
                    if need_grid {
                        let plane = &img[off..off + h * w];
                        let (v00, v01, v10, v11) =
                            (plane[i00], plane[i00 + 1], plane[i00 + w], plane[i00 + w + 1]);
                        gx += go
                            * ((T::one() - ay.frac) * (v01 - v00) + ay.frac * (v11 - v10));
                        gy += go
                            * ((T::one() - ax.frac) * (v10 - v00) + ax.frac * (v11 - v01));
                    }
                }
                if need_grid {
                    dgrid[base_g + p] = gx * ax.gate * sx;
                    dgrid[base_g + ho * wo + p] = gy * ay.gate * sy;
                }
            }
        }
        if need_img {
            let sh = self.shape(image).to_vec();
            self.accumulate(grads, image, Tensor::from_vec(&sh, dimg)?);
        }
        if need_grid {
            let sh = self.shape(grid).to_vec();
            self.accumulate(grads, grid, Tensor::from_vec(&sh, dgrid)?);
        }
        Ok(())
    }

    fn project_backward(
        &self,
        depth: Var,
        pose: Var,
        params: &ProjectionParams,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<(), EngineError> {
        let (n, _, h, w) = self.value(depth).dims4()?;
        let hw = h * w;
        let d = self.value(depth).data();
        let pm = self.value(pose).data();
        let gd = g.data();
        let need_d = self.requires_grad(depth);
        let need_p = self.requires_grad(pose);
        let mut dd = if need_d { vec![T::zero(); d.len()] } else { Vec::new() };
        let mut dp = vec![0.0f64; if need_p { n * 12 } else { 0 }];
        let su = 2.0 / (w - 1) as f64;
        let sv = 2.0 / (h - 1) as f64;
        for s in 0..n {
            let m: Vec<f64> = pm[s * 12..s * 12 + 12].iter().map(|v| v.f64()).collect();
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    let depth_v = d[s * hw + p].f64();
                    let (ray, q) = project_point(&m, params, x, y, depth_v);
                    let clamped = q[2] < params.z_min;
                    let z = q[2].max(params.z_min);
                    let gpx = gd[(s * 2) * hw + p].f64() * su;
                    let gpy = gd[(s * 2 + 1) * hw + p].f64() * sv;
                    let dq = [
                        gpx * params.fx / z,
                        gpy * params.fy / z,
                        if clamped {
                            0.0
                        } else {
                            -(gpx * params.fx * q[0] + gpy * params.fy * q[1]) / (z * z)
                        },
                    ];
                    if need_d {
                        let mut acc = 0.0;
                        for i in 0..3 {
                            let rr = m[i * 4] * ray[0] + m[i * 4 + 1] * ray[1] + m[i * 4 + 2] * ray[2];
                            acc += dq[i] * rr;
                        }
                        dd[s * hw + p] = T::c(acc);
                    }
                    if need_p {
                        let pt = [ray[0] * depth_v, ray[1] * depth_v, depth_v];
                        let o = &mut dp[s * 12..s * 12 + 12];
                        for i in 0..3 {
                            for j in 0..3 {
                                o[i * 4 + j] += dq[i] * pt[j];
                            }
                            o[i * 4 + 3] += dq[i];
                        }
                    }
                }
            }
        }
        if need_d {
            let sh = self.shape(depth).to_vec();
            self.accumulate(grads, depth, Tensor::from_vec(&sh, dd)?);
        }
        if need_p {
            let t = Tensor::from_vec(&[n, 3, 4], dp.into_iter().map(T::c).collect())?;
            self.accumulate(grads, pose, t);
        }
        Ok(())
    }
}

/// Camera ray through pixel (x, y) and the transformed point `R·(d·ray) + t`.
#[inline]
fn project_point(m: &[f64], params: &ProjectionParams, x: usize, y: usize, d: f64) -> ([f64; 3], [f64; 3]) {
    let ray = [
        (x as f64 - params.cx) / params.fx,
        (y as f64 - params.cy) / params.fy,
        1.0,
    ];
    let pt = [ray[0] * d, ray[1] * d, d];
    let mut q = [0.0; 3];
    for i in 0..3 {
        q[i] = m[i * 4] * pt[0] + m[i * 4 + 1] * pt[1] + m[i * 4 + 2] * pt[2] + m[i * 4 + 3];
    }
    (ray, q)
}

#[inline]
fn bilinear_weights<T: Scalar>(ax: &AxisSample<T>, ay: &AxisSample<T>) -> [T; 4] {
    let one = T::one();
    [
        (one - ax.frac) * (one - ay.frac),
        ax.frac * (one - ay.frac),
        (one - ax.frac) * ay.frac,
        ax.frac * ay.frac,
    ]
}

#[inline]
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}
