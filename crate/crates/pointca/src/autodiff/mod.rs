//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records a forward computation as an append-only list of
//! nodes; parents always precede children, so one reverse sweep propagates
//! exact analytic gradients. The op set is deliberately small: just what a
//! shared-MLP encoder/decoder, a chamfer loss, and a feature-space KL loss
//! need. One tape serves one forward+backward pass; build a fresh tape per
//! optimization step.

mod losses;

pub use losses::differentiable_kl;

use crate::error::{Error, Result};
use crate::geometry::{Neighbor, Point3};
use crate::metrics::nearest_correspondence;
use ndarray::ArrayView2;
use std::sync::Arc;

/// Dense tensor: a shape and a flat row-major value buffer. The buffer is
/// shared on clone, so registering large weight tensors on a tape costs a
/// reference bump, not a copy.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} implies {numel} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor {
            shape,
            values: Arc::new(values),
        })
    }

    fn from_parts(shape: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Tensor {
            shape,
            values: Arc::new(values),
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            values: Arc::new(vec![0.0; numel]),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: Arc::new(vec![value]),
        }
    }

    /// `[m, 3]` tensor from a point list.
    pub fn from_points(points: &[Point3]) -> Self {
        let mut values = Vec::with_capacity(points.len() * 3);
        for p in points {
            values.extend_from_slice(p);
        }
        Tensor {
            shape: vec![points.len(), 3],
            values: Arc::new(values),
        }
    }

    /// Interprets an `[m, 3]` tensor as a point list.
    pub fn to_points(&self) -> Result<Vec<Point3>> {
        let (rows, cols) = self.rank2()?;
        if cols != 3 {
            return Err(Error::ShapeMismatch(format!(
                "expected 3 columns, got {cols}"
            )));
        }
        Ok((0..rows)
            .map(|r| [self.values[r * 3], self.values[r * 3 + 1], self.values[r * 3 + 2]])
            .collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access; unshares the buffer if other clones exist.
    pub fn values_mut(&mut self) -> &mut Vec<f64> {
        Arc::make_mut(&mut self.values)
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    fn rank2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::ShapeMismatch(format!(
                "expected rank-2 tensor, got shape {other:?}"
            ))),
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorId(usize);

enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, f64),
    MatMul(TensorId, TensorId),
    AddBias(TensorId, TensorId),
    Relu(TensorId),
    MaxOverPoints { input: TensorId, argmax: Vec<usize> },
    MeanAll(TensorId),
    SumAll(TensorId),
    Softmax(TensorId),
    Log(TensorId),
    Square(TensorId),
    Sqrt(TensorId),
    L2NormRows(TensorId),
    ConcatRows(TensorId, TensorId),
    Reshape(TensorId),
    ChamferCdP {
        a: TensorId,
        b: TensorId,
        a_to_b: Vec<Neighbor>,
        b_to_a: Vec<Neighbor>,
    },
}

struct Node {
    tensor: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Recorded forward computation. `backward` may run once per tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> TensorId {
        self.push(tensor, false, Op::Leaf)
    }

    /// Leaf that accumulates a gradient during backward.
    pub fn variable(&mut self, tensor: Tensor) -> TensorId {
        self.push(tensor, true, Op::Leaf)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    /// Gradient of the last backward pass w.r.t. node `id`, if one was
    /// accumulated.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, tensor: Tensor, requires_grad: bool, op: Op) -> TensorId {
        self.nodes.push(Node {
            tensor,
            requires_grad,
            grad: None,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn needs_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn same_shape(&self, a: TensorId, b: TensorId) -> Result<()> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa != sb {
            return Err(Error::ShapeMismatch(format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b)?;
        let values = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x + y)
            .collect();
        let tensor = Tensor::from_parts(self.value(a).shape().to_vec(), values);
        Ok(self.push(tensor, self.needs_grad(&[a, b]), Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b)?;
        let values = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x - y)
            .collect();
        let tensor = Tensor::from_parts(self.value(a).shape().to_vec(), values);
        Ok(self.push(tensor, self.needs_grad(&[a, b]), Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b)?;
        let values = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x * y)
            .collect();
        let tensor = Tensor::from_parts(self.value(a).shape().to_vec(), values);
        Ok(self.push(tensor, self.needs_grad(&[a, b]), Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: TensorId, factor: f64) -> Result<TensorId> {
        let values = self.value(a).values().iter().map(|x| x * factor).collect();
        let tensor = Tensor::from_parts(self.value(a).shape().to_vec(), values);
        Ok(self.push(tensor, self.needs_grad(&[a]), Op::Scale(a, factor)))
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.value(a).rank2()?;
        let (k2, n) = self.value(b).rank2()?;
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul inner dims {k} vs {k2}"
            )));
        }
        let va = ArrayView2::from_shape((m, k), self.value(a).values()).expect("checked shape");
        let vb = ArrayView2::from_shape((k, n), self.value(b).values()).expect("checked shape");
        let values = va.dot(&vb).into_raw_vec_and_offset().0;
        let tensor = Tensor::from_parts(vec![m, n], values);
        Ok(self.push(tensor, self.needs_grad(&[a, b]), Op::MatMul(a, b)))
    }

    /// Adds a length-`n` bias row to every row of an `[m,n]` matrix.
    pub fn add_bias(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let (m, n) = self.value(a).rank2()?;
        let bias_shape = self.value(bias).shape();
        if bias_shape != [n] {
            return Err(Error::ShapeMismatch(format!(
                "bias shape {bias_shape:?} does not match {n} columns"
            )));
        }
        let mut values = self.value(a).values().to_vec();
        let bvals = self.value(bias).values();
        for r in 0..m {
            for c in 0..n {
                values[r * n + c] += bvals[c];
            }
        }
        let tensor = Tensor::from_parts(vec![m, n], values);
        Ok(self.push(tensor, self.needs_grad(&[a, bias]), Op::AddBias(a, bias)))
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let values = self.value(a).values().iter().map(|x| x.max(0.0)).collect();
        let tensor = Tensor::from_parts(self.value(a).shape().to_vec(), values);
        Ok(self.push(tensor, self.needs_grad(&[a]), Op::Relu(a)))
    }

    /// Column-wise max over the rows of an `[m,f]` matrix, yielding `[1,f]`.
    /// The gradient routes to the argmax row per feature; ties resolve to
    /// the lowest row index.
    pub fn max_over_points(&mut self, a: TensorId) -> Result<TensorId> {
        let (m, f) = self.value(a).rank2()?;
        if m == 0 {
            return Err(Error::EmptyCloud);
        }
        let vals = self.value(a).values();
        let mut out = vec![f64::NEG_INFINITY; f];
        let mut argmax = vec![0usize; f];
        for r in 0..m {
            for c in 0..f {
                let v = vals[r * f + c];
                if v > out[c] {
                    out[c] = v;
                    argmax[c] = r;
                }
            }
        }
        let tensor = Tensor::from_parts(vec![1, f], out);
        let rg = self.needs_grad(&[a]);
        Ok(self.push(tensor, rg, Op::MaxOverPoints { input: a, argmax }))
    }

    pub fn mean_all(&mut self, a: TensorId) -> Result<TensorId> {
        let numel = self.value(a).numel();
        if numel == 0 {
            return Err(Error::EmptyInput);
        }
        let mean = self.value(a).values().iter().sum::<f64>() / numel as f64;
        Ok(self.push(Tensor::scalar(mean), self.needs_grad(&[a]), Op::MeanAll(a)))
    }

    pub fn sum_all(&mut self, a: TensorId) -> Result<TensorId> {
        let sum = self.value(a).values().iter().sum::<f64>();
        Ok(self.push(Tensor::scalar(sum), self.needs_grad(&[a]), Op::SumAll(a)))
    }

    /// Softmax over a flat vector (`[n]` or `[1,n]`), max-shifted for
    /// stability.
    pub fn softmax(&mut self, a: TensorId) -> Result<TensorId> {
        let shape = self.value(a).shape().to_vec();
        let flat_ok = matches!(shape.as_slice(), [_] | [1, _]);
        if !flat_ok {
            return Err(Error::ShapeMismatch(format!(
                "softmax expects a flat vector, got {shape:?}"
            )));
        }
        let vals = self.value(a).values();
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = vals.iter().map(|x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let values = exps.into_iter().map(|e| e / total).collect();
        let tensor = Tensor::from_parts(shape, values);
        Ok(self.push(tensor, self.needs_grad(&[a]), Op::Softmax(a)))
    }

    pub fn log(&mut self, a: TensorId) -> Result<TensorId> {
        let values = self.value(a).values().iter().map(|x| x.ln()).collect();
        let tensor = Tensor::from_parts(self.value(a).shape().to_vec(), values);
        Ok(self.push(tensor, self.needs_grad(&[a]), Op::Log(a)))
    }

    pub fn square(&mut self, a: TensorId) -> Result<TensorId> {
        let values = self.value(a).values().iter().map(|x| x * x).collect();
        let tensor = Tensor::from_parts(self.value(a).shape().to_vec(), values);
        Ok(self.push(tensor, self.needs_grad(&[a]), Op::Square(a)))
    }

    pub fn sqrt(&mut self, a: TensorId) -> Result<TensorId> {
        let values = self.value(a).values().iter().map(|x| x.sqrt()).collect();
        let tensor = Tensor::from_parts(self.value(a).shape().to_vec(), values);
        Ok(self.push(tensor, self.needs_grad(&[a]), Op::Sqrt(a)))
    }

    /// Euclidean norm of each row of an `[m,c]` matrix, yielding `[m]`.
    pub fn l2_norm_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let (m, c) = self.value(a).rank2()?;
        let vals = self.value(a).values();
        let values = (0..m)
            .map(|r| vals[r * c..(r + 1) * c].iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let tensor = Tensor::from_parts(vec![m], values);
        Ok(self.push(tensor, self.needs_grad(&[a]), Op::L2NormRows(a)))
    }

    /// Stacks two matrices with equal column counts.
    pub fn concat_rows(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ma, ca) = self.value(a).rank2()?;
        let (mb, cb) = self.value(b).rank2()?;
        if ca != cb {
            return Err(Error::ShapeMismatch(format!(
                "concat columns {ca} vs {cb}"
            )));
        }
        let mut values = self.value(a).values().to_vec();
        values.extend_from_slice(self.value(b).values());
        let tensor = Tensor::from_parts(vec![ma + mb, ca], values);
        Ok(self.push(tensor, self.needs_grad(&[a, b]), Op::ConcatRows(a, b)))
    }

    /// Reinterprets the value buffer under a new shape with equal element
    /// count.
    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {} elements to {shape:?}",
                self.value(a).numel()
            )));
        }
        let values = self.value(a).values().to_vec();
        let tensor = Tensor::from_parts(shape, values);
        Ok(self.push(tensor, self.needs_grad(&[a]), Op::Reshape(a)))
    }

    /// Differentiable CD-P chamfer distance between `[m,3]` and `[n,3]`
    /// point tensors. The nearest-neighbor correspondence is recomputed on
    /// every forward pass and held constant during backward.
    pub fn chamfer_cd_p(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let pa = self.value(a).to_points()?;
        let pb = self.value(b).to_points()?;
        if pa.is_empty() || pb.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let a_to_b = nearest_correspondence(&pa, &pb);
        let b_to_a = nearest_correspondence(&pb, &pa);
        let fwd: f64 = a_to_b.iter().map(|n| n.dist_sq.sqrt()).sum::<f64>() / pa.len() as f64;
        let bwd: f64 = b_to_a.iter().map(|n| n.dist_sq.sqrt()).sum::<f64>() / pb.len() as f64;
        let value = 0.5 * (fwd + bwd);
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(
            Tensor::scalar(value),
            rg,
            Op::ChamferCdP {
                a,
                b,
                a_to_b,
                b_to_a,
            },
        ))
    }

    /// Runs the reverse sweep from a scalar `loss`, accumulating gradients
    /// on every reachable node that requires them. A tape can back-propagate
    /// once; further calls fail with `StaleTape` until a fresh forward tape
    /// is built.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.consumed {
            return Err(Error::StaleTape);
        }
        if self.nodes[loss.0].tensor.numel() != 1 {
            return Err(Error::NotScalar);
        }
        self.consumed = true;
        if !self.nodes[loss.0].requires_grad {
            // Loss depends on no variable; nothing to accumulate.
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let (head, tail) = self.nodes.split_at_mut(idx);
            let node = &tail[0];
            let Some(grad) = node.grad.as_ref() else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            backprop_node(node, grad, head);
        }
        Ok(())
    }
}

/// Accumulates `grad` into the parents of `node`. `head` holds every node
/// with a smaller index, which includes all parents.
fn backprop_node(node: &Node, grad: &[f64], head: &mut [Node]) {
    let accum = |head: &mut [Node], id: TensorId, f: &mut dyn FnMut(&mut [f64], &Tensor)| {
        let parent = &mut head[id.0];
        if !parent.requires_grad {
            return;
        }
        let numel = parent.tensor.numel();
        let buf = parent.grad.get_or_insert_with(|| vec![0.0; numel]);
        // Split borrow: grad buffer and tensor are distinct fields.
        let tensor = &parent.tensor;
        f(buf, tensor);
    };

    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accum(head, *a, &mut |buf, _| {
                for (g, d) in buf.iter_mut().zip(grad) {
                    *g += d;
                }
            });
            accum(head, *b, &mut |buf, _| {
                for (g, d) in buf.iter_mut().zip(grad) {
                    *g += d;
                }
            });
        }
        Op::Sub(a, b) => {
            accum(head, *a, &mut |buf, _| {
                for (g, d) in buf.iter_mut().zip(grad) {
                    *g += d;
                }
            });
            accum(head, *b, &mut |buf, _| {
                for (g, d) in buf.iter_mut().zip(grad) {
                    *g -= d;
                }
            });
        }
        Op::Mul(a, b) => {
            let b_vals = head[b.0].tensor.values.clone();
            accum(head, *a, &mut |buf, _| {
                for ((g, d), bv) in buf.iter_mut().zip(grad).zip(b_vals.iter()) {
                    *g += d * bv;
                }
            });
            let a_vals = head[a.0].tensor.values.clone();
            accum(head, *b, &mut |buf, _| {
                for ((g, d), av) in buf.iter_mut().zip(grad).zip(a_vals.iter()) {
                    *g += d * av;
                }
            });
        }
        Op::Scale(a, factor) => {
            let factor = *factor;
            accum(head, *a, &mut |buf, _| {
                for (g, d) in buf.iter_mut().zip(grad) {
                    *g += d * factor;
                }
            });
        }
        Op::MatMul(a, b) => {
            let (m, k) = (head[a.0].tensor.shape[0], head[a.0].tensor.shape[1]);
            let n = head[b.0].tensor.shape[1];
            let g = ArrayView2::from_shape((m, n), grad).expect("grad shape");
            let b_vals = head[b.0].tensor.values.clone();
            accum(head, *a, &mut |buf, _| {
                let vb = ArrayView2::from_shape((k, n), &b_vals).expect("shape");
                let da = g.dot(&vb.t());
                for (g_out, d) in buf.iter_mut().zip(da.iter()) {
                    *g_out += d;
                }
            });
            let a_vals = head[a.0].tensor.values.clone();
            accum(head, *b, &mut |buf, _| {
                let va = ArrayView2::from_shape((m, k), &a_vals).expect("shape");
                let db = va.t().dot(&g);
                for (g_out, d) in buf.iter_mut().zip(db.iter()) {
                    *g_out += d;
                }
            });
        }
        Op::AddBias(a, bias) => {
            accum(head, *a, &mut |buf, _| {
                for (g, d) in buf.iter_mut().zip(grad) {
                    *g += d;
                }
            });
            let n = head[bias.0].tensor.numel();
            accum(head, *bias, &mut |buf, _| {
                for (i, d) in grad.iter().enumerate() {
                    buf[i % n] += d;
                }
            });
        }
        Op::Relu(a) => {
            accum(head, *a, &mut |buf, tensor| {
                for ((g, d), x) in buf.iter_mut().zip(grad).zip(tensor.values.iter()) {
                    if *x > 0.0 {
                        *g += d;
                    }
                }
            });
        }
        Op::MaxOverPoints { input, argmax } => {
            let f = node.tensor.numel();
            accum(head, *input, &mut |buf, _| {
                for c in 0..f {
                    buf[argmax[c] * f + c] += grad[c];
                }
            });
        }
        Op::MeanAll(a) => {
            let numel = head[a.0].tensor.numel() as f64;
            accum(head, *a, &mut |buf, _| {
                let d = grad[0] / numel;
                for g in buf.iter_mut() {
                    *g += d;
                }
            });
        }
        Op::SumAll(a) => {
            accum(head, *a, &mut |buf, _| {
                for g in buf.iter_mut() {
                    *g += grad[0];
                }
            });
        }
        Op::Softmax(a) => {
            let y = node.tensor.values.clone();
            let dot: f64 = y.iter().zip(grad).map(|(yi, gi)| yi * gi).sum();
            accum(head, *a, &mut |buf, _| {
                for ((g, yi), gi) in buf.iter_mut().zip(y.iter()).zip(grad) {
                    *g += yi * (gi - dot);
                }
            });
        }
        Op::Log(a) => {
            accum(head, *a, &mut |buf, tensor| {
                for ((g, d), x) in buf.iter_mut().zip(grad).zip(tensor.values.iter()) {
                    *g += d / x;
                }
            });
        }
        Op::Square(a) => {
            accum(head, *a, &mut |buf, tensor| {
                for ((g, d), x) in buf.iter_mut().zip(grad).zip(tensor.values.iter()) {
                    *g += d * 2.0 * x;
                }
            });
        }
        Op::Sqrt(a) => {
            let y = node.tensor.values.clone();
            accum(head, *a, &mut |buf, _| {
                for ((g, d), yi) in buf.iter_mut().zip(grad).zip(y.iter()) {
                    // Subgradient 0 at the origin.
                    if *yi > 0.0 {
                        *g += d / (2.0 * yi);
                    }
                }
            });
        }
        Op::L2NormRows(a) => {
            let norms = node.tensor.values.clone();
            let c = head[a.0].tensor.shape[1];
            accum(head, *a, &mut |buf, tensor| {
                for (r, norm) in norms.iter().enumerate() {
                    if *norm > 0.0 {
                        for j in 0..c {
                            buf[r * c + j] += grad[r] * tensor.values[r * c + j] / norm;
                        }
                    }
                }
            });
        }
        Op::ConcatRows(a, b) => {
            let na = head[a.0].tensor.numel();
            accum(head, *a, &mut |buf, _| {
                for (g, d) in buf.iter_mut().zip(&grad[..na]) {
                    *g += d;
                }
            });
            accum(head, *b, &mut |buf, _| {
                for (g, d) in buf.iter_mut().zip(&grad[na..]) {
                    *g += d;
                }
            });
        }
        Op::Reshape(a) => {
            accum(head, *a, &mut |buf, _| {
                for (g, d) in buf.iter_mut().zip(grad) {
                    *g += d;
                }
            });
        }
        Op::ChamferCdP {
            a,
            b,
            a_to_b,
            b_to_a,
        } => {
            let g = grad[0];
            let pa = head[a.0].tensor.values.clone();
            let pb = head[b.0].tensor.values.clone();
            let m = a_to_b.len() as f64;
            let n = b_to_a.len() as f64;
            accum(head, *a, &mut |buf, _| {
                for (i, nb) in a_to_b.iter().enumerate() {
                    let d = nb.dist_sq.sqrt();
                    if d > 0.0 {
                        let w = g * 0.5 / (m * d);
                        for c in 0..3 {
                            buf[i * 3 + c] += w * (pa[i * 3 + c] - pb[nb.index * 3 + c]);
                        }
                    }
                }
                for (j, nb) in b_to_a.iter().enumerate() {
                    let d = nb.dist_sq.sqrt();
                    if d > 0.0 {
                        let i = nb.index;
                        let w = g * 0.5 / (n * d);
                        for c in 0..3 {
                            buf[i * 3 + c] += w * (pa[i * 3 + c] - pb[j * 3 + c]);
                        }
                    }
                }
            });
            accum(head, *b, &mut |buf, _| {
                for (i, nb) in a_to_b.iter().enumerate() {
                    let d = nb.dist_sq.sqrt();
                    if d > 0.0 {
                        let j = nb.index;
                        let w = g * 0.5 / (m * d);
                        for c in 0..3 {
                            buf[j * 3 + c] += w * (pb[j * 3 + c] - pa[i * 3 + c]);
                        }
                    }
                }
                for (j, nb) in b_to_a.iter().enumerate() {
                    let d = nb.dist_sq.sqrt();
                    if d > 0.0 {
                        let w = g * 0.5 / (n * d);
                        for c in 0..3 {
                            buf[j * 3 + c] += w * (pb[j * 3 + c] - pa[nb.index * 3 + c]);
                        }
                    }
                }
            });
        }
    }
}
