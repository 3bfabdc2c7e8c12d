//! Reverse-mode gradient tape over whole tensors.
//!
//! Operations record their inputs while computing forward values; a
//! single [`GradientTape::backward`] pass then replays the records in
//! reverse, accumulating gradients for every registered parameter. The
//! op set is exactly what the model needs — dense products, bias adds,
//! sigmoid, Hadamard products, concatenation, gathers, graph
//! propagation, cosine blocks, simplex normalization, temperature
//! softmax, and reductions.

use std::collections::HashMap;
use std::rc::Rc;

use super::{column_sums, dot, matmul, matmul_nt, matmul_tn, norm, sigmoid, softmax_into, Tensor2};
use crate::error::{Error, Result};
use crate::graph::InteractionGraph;
use crate::intent::{cosine_unchecked, COSINE_NORM_FLOOR};

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

/// Stable identifier of a model parameter, assigned by the caller in
/// its canonical parameter order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

enum Op {
    Leaf,
    Matmul(TensorId, TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Hadamard(TensorId, TensorId),
    AddRowBroadcast(TensorId, TensorId),
    Sigmoid(TensorId),
    Scale(TensorId, f64),
    AddConst(TensorId),
    ConcatCols(Vec<TensorId>),
    SliceCols(TensorId, usize),
    Reshape(TensorId),
    SumAll(TensorId),
    GatherRows(TensorId, Rc<[u32]>),
    PropagateUser(TensorId, Rc<InteractionGraph>),
    PropagateItem(TensorId, Rc<InteractionGraph>),
    CosineVsRows(TensorId, TensorId),
    RowCosine(TensorId, TensorId),
    RowDot(TensorId, TensorId),
    L1NormalizeRows(TensorId),
    SoftmaxRows(TensorId, f64),
    ScaleRows(TensorId, TensorId),
}

struct Node {
    value: Tensor2,
    op: Op,
}

/// Gradients produced by one backward pass, keyed by parameter.
#[derive(Debug)]
pub struct GradientSet {
    by_param: HashMap<ParamId, Tensor2>,
}

impl GradientSet {
    pub fn get(&self, id: ParamId) -> Option<&Tensor2> {
        self.by_param.get(&id)
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }
}

/// Define-by-run recording of a forward computation.
#[derive(Default)]
pub struct GradientTape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, TensorId)>,
    backward_done: bool,
}

impl GradientTape {
    pub fn new() -> Self {
        GradientTape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clears all recorded state so the tape can run a fresh forward.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.backward_done = false;
    }

    pub fn value(&self, id: TensorId) -> &Tensor2 {
        &self.nodes[id.0].value
    }

    /// Parameters registered so far, in registration order.
    pub fn registered_params(&self) -> &[(ParamId, TensorId)] {
        &self.params
    }

    fn push(&mut self, value: Tensor2, op: Op) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { value, op });
        id
    }

    /// Records a tensor that needs no gradient.
    pub fn constant(&mut self, value: Tensor2) -> TensorId {
        self.push(value, Op::Leaf)
    }

    /// Records a learnable tensor; its gradient is retrievable from the
    /// [`GradientSet`] after `backward`.
    pub fn parameter(&mut self, id: ParamId, value: Tensor2) -> TensorId {
        let tid = self.push(value, Op::Leaf);
        self.params.push((id, tid));
        tid
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let value = matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::Matmul(a, b)))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let value = super::add(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let value = super::sub(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn hadamard(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let value = super::hadamard(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::Hadamard(a, b)))
    }

    pub fn add_row_broadcast(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let value = super::add_row_broadcast(self.value(a), self.value(bias))?;
        Ok(self.push(value, Op::AddRowBroadcast(a, bias)))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn scale(&mut self, a: TensorId, factor: f64) -> TensorId {
        let value = self.value(a).map(|v| v * factor);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn add_const(&mut self, a: TensorId, constant: f64) -> TensorId {
        let value = self.value(a).map(|v| v + constant);
        self.push(value, Op::AddConst(a))
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        let tensors: Vec<&Tensor2> = parts.iter().map(|&p| self.value(p)).collect();
        let value = super::concat_cols(&tensors)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let src = self.value(a);
        if start + len > src.cols() {
            return Err(Error::dimension(
                "slice_cols",
                format!(
                    "columns {start}..{} out of range for width {}",
                    start + len,
                    src.cols()
                ),
            ));
        }
        let mut value = Tensor2::zeros(src.rows(), len);
        for r in 0..src.rows() {
            value
                .row_mut(r)
                .copy_from_slice(&src.row(r)[start..start + len]);
        }
        Ok(self.push(value, Op::SliceCols(a, start)))
    }

    pub fn reshape(&mut self, a: TensorId, rows: usize, cols: usize) -> Result<TensorId> {
        let value = self.value(a).reshaped(rows, cols)?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let total: f64 = self.value(a).data().iter().sum();
        let value = Tensor2::filled(1, 1, total);
        self.push(value, Op::SumAll(a))
    }

    pub fn gather_rows(&mut self, a: TensorId, indices: Rc<[u32]>) -> Result<TensorId> {
        let src = self.value(a);
        let mut value = Tensor2::zeros(indices.len(), src.cols());
        for (r, &idx) in indices.iter().enumerate() {
            let idx = idx as usize;
            if idx >= src.rows() {
                return Err(Error::dimension(
                    "gather_rows",
                    format!("row index {idx} out of range for {} rows", src.rows()),
                ));
            }
            value.row_mut(r).copy_from_slice(src.row(idx));
        }
        Ok(self.push(value, Op::GatherRows(a, indices)))
    }

    /// One-hop structure-aware propagation onto the user side:
    /// `z_user = normalized_adjacency · item_features`.
    pub fn propagate_user(
        &mut self,
        graph: Rc<InteractionGraph>,
        item_features: TensorId,
    ) -> Result<TensorId> {
        let value = graph.propagate_to_users(self.value(item_features))?;
        Ok(self.push(value, Op::PropagateUser(item_features, graph)))
    }

    /// Symmetric propagation onto the item side:
    /// `z_item = normalized_adjacencyᵀ · user_features`.
    pub fn propagate_item(
        &mut self,
        graph: Rc<InteractionGraph>,
        user_features: TensorId,
    ) -> Result<TensorId> {
        let value = graph.propagate_to_items(self.value(user_features))?;
        Ok(self.push(value, Op::PropagateItem(user_features, graph)))
    }

    /// Cosine of every row of `x` against every row of `prototypes`:
    /// `(B x d, K x d) -> B x K`, with the zero-norm convention.
    pub fn cosine_vs_rows(&mut self, x: TensorId, prototypes: TensorId) -> Result<TensorId> {
        let xs = self.value(x);
        let ps = self.value(prototypes);
        if xs.cols() != ps.cols() {
            return Err(Error::dimension(
                "cosine_vs_rows",
                format!("vector width {} vs prototype width {}", xs.cols(), ps.cols()),
            ));
        }
        let mut value = Tensor2::zeros(xs.rows(), ps.rows());
        for r in 0..xs.rows() {
            let xrow = xs.row(r);
            let vrow = value.row_mut(r);
            for (k, v) in vrow.iter_mut().enumerate() {
                *v = cosine_unchecked(xrow, ps.row(k));
            }
        }
        Ok(self.push(value, Op::CosineVsRows(x, prototypes)))
    }

    /// Row-paired cosine: `(B x d, B x d) -> B x 1`.
    pub fn row_cosine(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dimension(
                "row_cosine",
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut value = Tensor2::zeros(av.rows(), 1);
        for r in 0..av.rows() {
            value.set(r, 0, cosine_unchecked(av.row(r), bv.row(r)));
        }
        Ok(self.push(value, Op::RowCosine(a, b)))
    }

    /// Row-paired dot product: `(B x d, B x d) -> B x 1`.
    pub fn row_dot(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dimension(
                "row_dot",
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut value = Tensor2::zeros(av.rows(), 1);
        for r in 0..av.rows() {
            value.set(r, 0, dot(av.row(r), bv.row(r)));
        }
        Ok(self.push(value, Op::RowDot(a, b)))
    }

    /// Divides every row by its sum, projecting rows of positive
    /// entries onto the probability simplex. Row sums must be positive.
    pub fn l1_normalize_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let src = self.value(a);
        let mut value = src.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 {
                return Err(Error::Numeric(format!(
                    "l1_normalize_rows: row {r} sums to {sum}, expected > 0"
                )));
            }
            for v in row {
                *v /= sum;
            }
        }
        Ok(self.push(value, Op::L1NormalizeRows(a)))
    }

    /// Temperature softmax across each row, computed with
    /// max-subtraction for overflow safety.
    pub fn softmax_rows(&mut self, a: TensorId, temperature: f64) -> Result<TensorId> {
        if temperature <= 0.0 {
            return Err(Error::Numeric(format!(
                "softmax temperature must be positive, got {temperature}"
            )));
        }
        let src = self.value(a);
        let mut value = Tensor2::zeros(src.rows(), src.cols());
        for r in 0..src.rows() {
            softmax_into(value.row_mut(r), src.row(r), temperature);
        }
        Ok(self.push(value, Op::SoftmaxRows(a, temperature)))
    }

    /// Multiplies every row of `a` by the matching scalar in the
    /// one-column tensor `s`.
    pub fn scale_rows(&mut self, a: TensorId, s: TensorId) -> Result<TensorId> {
        let (av, sv) = (self.value(a), self.value(s));
        if sv.cols() != 1 || sv.rows() != av.rows() {
            return Err(Error::dimension(
                "scale_rows",
                format!("{:?} vs scales {:?}", av.shape(), sv.shape()),
            ));
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            let f = sv.get(r, 0);
            for v in value.row_mut(r) {
                *v *= f;
            }
        }
        Ok(self.push(value, Op::ScaleRows(a, s)))
    }

    /// Propagates gradients from the scalar `loss` back to every
    /// parameter registered on this tape. Errors when nothing was
    /// recorded, when `loss` is not 1x1, or when called twice without
    /// [`reset`](GradientTape::reset).
    pub fn backward(&mut self, loss: TensorId) -> Result<GradientSet> {
        if self.nodes.is_empty() {
            return Err(Error::Usage(
                "backward called without a recorded forward pass".into(),
            ));
        }
        if self.backward_done {
            return Err(Error::Usage(
                "backward called twice without reset".into(),
            ));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage(format!(
                "loss id {} is not on this tape",
                loss.0
            )));
        }
        if self.nodes[loss.0].value.shape() != (1, 1) {
            return Err(Error::Usage(format!(
                "backward requires a 1x1 scalar loss, got {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Tensor2>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor2::filled(1, 1, 1.0));

        for i in (0..self.nodes.len()).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &gout, &mut grads);
        }

        let mut by_param = HashMap::new();
        for &(pid, tid) in &self.params {
            let shape = self.nodes[tid.0].value.shape();
            let grad = grads[tid.0]
                .take()
                .unwrap_or_else(|| Tensor2::zeros(shape.0, shape.1));
            debug_assert_eq!(grad.shape(), shape);
            by_param.insert(pid, grad);
        }
        Ok(GradientSet { by_param })
    }

    fn backprop_node(&self, i: usize, gout: &Tensor2, grads: &mut [Option<Tensor2>]) {
        let value = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let ga = matmul_nt(gout, bv).expect("shapes fixed in forward");
                let gb = matmul_tn(av, gout).expect("shapes fixed in forward");
                accumulate(grads, a.0, ga);
                accumulate(grads, b.0, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, a.0, gout.clone());
                accumulate(grads, b.0, gout.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, a.0, gout.clone());
                accumulate(grads, b.0, gout.map(|v| -v));
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                accumulate(grads, a.0, super::hadamard(gout, bv).unwrap());
                accumulate(grads, b.0, super::hadamard(gout, av).unwrap());
            }
            Op::AddRowBroadcast(a, bias) => {
                accumulate(grads, a.0, gout.clone());
                accumulate(grads, bias.0, column_sums(gout));
            }
            Op::Sigmoid(a) => {
                // dy/dx = y (1 - y), reading y from the stored output.
                let mut ga = gout.clone();
                for (g, &y) in ga.data_mut().iter_mut().zip(value.data()) {
                    *g *= y * (1.0 - y);
                }
                accumulate(grads, a.0, ga);
            }
            Op::Scale(a, factor) => {
                accumulate(grads, a.0, gout.map(|v| v * factor));
            }
            Op::AddConst(a) => {
                accumulate(grads, a.0, gout.clone());
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for &p in parts {
                    let pv = &self.nodes[p.0].value;
                    let mut gp = Tensor2::zeros(pv.rows(), pv.cols());
                    for r in 0..pv.rows() {
                        gp.row_mut(r)
                            .copy_from_slice(&gout.row(r)[at..at + pv.cols()]);
                    }
                    at += pv.cols();
                    accumulate(grads, p.0, gp);
                }
            }
            Op::SliceCols(a, start) => {
                let av = &self.nodes[a.0].value;
                let mut ga = Tensor2::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    ga.row_mut(r)[*start..start + gout.cols()].copy_from_slice(gout.row(r));
                }
                accumulate(grads, a.0, ga);
            }
            Op::Reshape(a) => {
                let (rows, cols) = self.nodes[a.0].value.shape();
                accumulate(grads, a.0, gout.reshaped(rows, cols).unwrap());
            }
            Op::SumAll(a) => {
                let av = &self.nodes[a.0].value;
                let g = gout.get(0, 0);
                accumulate(grads, a.0, Tensor2::filled(av.rows(), av.cols(), g));
            }
            Op::GatherRows(a, indices) => {
                let av = &self.nodes[a.0].value;
                let mut ga = Tensor2::zeros(av.rows(), av.cols());
                for (r, &idx) in indices.iter().enumerate() {
                    let dst = ga.row_mut(idx as usize);
                    for (d, &g) in dst.iter_mut().zip(gout.row(r)) {
                        *d += g;
                    }
                }
                accumulate(grads, a.0, ga);
            }
            // The adjoint of propagating one way is propagating the
            // gradient the other way: the normalized adjacency is the
            // transpose of its reverse map.
            Op::PropagateUser(items, graph) => {
                let g = graph.propagate_to_items(gout).expect("shape fixed");
                accumulate(grads, items.0, g);
            }
            Op::PropagateItem(users, graph) => {
                let g = graph.propagate_to_users(gout).expect("shape fixed");
                accumulate(grads, users.0, g);
            }
            Op::CosineVsRows(x, protos) => {
                let (xv, pv) = (&self.nodes[x.0].value, &self.nodes[protos.0].value);
                let mut gx = Tensor2::zeros(xv.rows(), xv.cols());
                let mut gp = Tensor2::zeros(pv.rows(), pv.cols());
                let pnorms: Vec<f64> = (0..pv.rows()).map(|k| norm(pv.row(k))).collect();
                for b in 0..xv.rows() {
                    let xrow = xv.row(b);
                    let nx = norm(xrow);
                    if nx < COSINE_NORM_FLOOR {
                        continue;
                    }
                    for k in 0..pv.rows() {
                        let g = gout.get(b, k);
                        if g == 0.0 || pnorms[k] < COSINE_NORM_FLOOR {
                            continue;
                        }
                        let crow = pv.row(k);
                        let y = value.get(b, k);
                        let inv = 1.0 / (nx * pnorms[k]);
                        let gxrow = gx.row_mut(b);
                        for ((gxi, &ci), &xi) in gxrow.iter_mut().zip(crow).zip(xrow) {
                            *gxi += g * (ci * inv - y * xi / (nx * nx));
                        }
                        let gprow = gp.row_mut(k);
                        for ((gpi, &xi), &ci) in gprow.iter_mut().zip(xrow).zip(crow) {
                            *gpi += g * (xi * inv - y * ci / (pnorms[k] * pnorms[k]));
                        }
                    }
                }
                accumulate(grads, x.0, gx);
                accumulate(grads, protos.0, gp);
            }
            Op::RowCosine(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let mut ga = Tensor2::zeros(av.rows(), av.cols());
                let mut gb = Tensor2::zeros(bv.rows(), bv.cols());
                for r in 0..av.rows() {
                    let g = gout.get(r, 0);
                    if g == 0.0 {
                        continue;
                    }
                    let (arow, brow) = (av.row(r), bv.row(r));
                    let (na, nb) = (norm(arow), norm(brow));
                    if na < COSINE_NORM_FLOOR || nb < COSINE_NORM_FLOOR {
                        continue;
                    }
                    let y = value.get(r, 0);
                    let inv = 1.0 / (na * nb);
                    for ((gai, &bi), &ai) in ga.row_mut(r).iter_mut().zip(brow).zip(arow) {
                        *gai += g * (bi * inv - y * ai / (na * na));
                    }
                    for ((gbi, &ai), &bi) in gb.row_mut(r).iter_mut().zip(arow).zip(brow) {
                        *gbi += g * (ai * inv - y * bi / (nb * nb));
                    }
                }
                accumulate(grads, a.0, ga);
                accumulate(grads, b.0, gb);
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let mut ga = Tensor2::zeros(av.rows(), av.cols());
                let mut gb = Tensor2::zeros(bv.rows(), bv.cols());
                for r in 0..av.rows() {
                    let g = gout.get(r, 0);
                    for (gai, &bi) in ga.row_mut(r).iter_mut().zip(bv.row(r)) {
                        *gai += g * bi;
                    }
                    for (gbi, &ai) in gb.row_mut(r).iter_mut().zip(av.row(r)) {
                        *gbi += g * ai;
                    }
                }
                accumulate(grads, a.0, ga);
                accumulate(grads, b.0, gb);
            }
            Op::L1NormalizeRows(a) => {
                let av = &self.nodes[a.0].value;
                let mut ga = Tensor2::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let s: f64 = av.row(r).iter().sum();
                    let weighted: f64 = dot(gout.row(r), value.row(r));
                    for (gai, &gi) in ga.row_mut(r).iter_mut().zip(gout.row(r)) {
                        *gai = (gi - weighted) / s;
                    }
                }
                accumulate(grads, a.0, ga);
            }
            Op::SoftmaxRows(a, temperature) => {
                let av = &self.nodes[a.0].value;
                let mut ga = Tensor2::zeros(av.rows(), av.cols());
                let inv_t = 1.0 / temperature;
                for r in 0..av.rows() {
                    let weighted: f64 = dot(gout.row(r), value.row(r));
                    let yrow = value.row(r);
                    for ((gai, &gi), &yi) in ga.row_mut(r).iter_mut().zip(gout.row(r)).zip(yrow) {
                        *gai = inv_t * yi * (gi - weighted);
                    }
                }
                accumulate(grads, a.0, ga);
            }
            Op::ScaleRows(a, s) => {
                let (av, sv) = (&self.nodes[a.0].value, &self.nodes[s.0].value);
                let mut ga = Tensor2::zeros(av.rows(), av.cols());
                let mut gs = Tensor2::zeros(sv.rows(), 1);
                for r in 0..av.rows() {
                    let f = sv.get(r, 0);
                    for (gai, &gi) in ga.row_mut(r).iter_mut().zip(gout.row(r)) {
                        *gai = gi * f;
                    }
                    gs.set(r, 0, dot(gout.row(r), av.row(r)));
                }
                accumulate(grads, a.0, ga);
                accumulate(grads, s.0, gs);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], idx: usize, add: Tensor2) {
    match &mut grads[idx] {
        Some(existing) => {
            debug_assert_eq!(existing.shape(), add.shape());
            for (e, a) in existing.data_mut().iter_mut().zip(add.data()) {
                *e += a;
            }
        }
        slot @ None => *slot = Some(add),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{xavier_init, Tensor2};

    #[test]
    fn sum_of_parameter_gives_all_ones_gradient() {
        let mut tape = GradientTape::new();
        let w = tape.parameter(ParamId(0), xavier_init(3, 4, 1));
        let loss = tape.sum_all(w);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(ParamId(0)).unwrap();
        assert_eq!(g.shape(), (3, 4));
        assert!(g.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_scaled_loss_gives_zero_gradient() {
        let mut tape = GradientTape::new();
        let w = tape.parameter(ParamId(0), xavier_init(2, 2, 5));
        let y = tape.sigmoid(w);
        let s = tape.sum_all(y);
        let loss = tape.scale(s, 0.0);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(ParamId(0)).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_twice_without_reset_errors() {
        let mut tape = GradientTape::new();
        let w = tape.parameter(ParamId(0), Tensor2::filled(1, 1, 2.0));
        let loss = tape.sum_all(w);
        tape.backward(loss).unwrap();
        let err = tape.backward(loss).unwrap_err();
        assert!(err.to_string().contains("twice"), "{err}");
        tape.reset();
        assert!(tape.is_empty());
    }

    #[test]
    fn backward_on_empty_tape_is_usage_error() {
        let mut tape = GradientTape::new();
        let err = tape.backward(TensorId(0)).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = GradientTape::new();
        let w = tape.parameter(ParamId(0), Tensor2::zeros(2, 2));
        let err = tape.backward(w).unwrap_err();
        assert!(err.to_string().contains("scalar"), "{err}");
    }

    #[test]
    fn untouched_parameter_gets_zero_gradient_of_its_shape() {
        let mut tape = GradientTape::new();
        let used = tape.parameter(ParamId(0), Tensor2::filled(1, 2, 3.0));
        let _unused = tape.parameter(ParamId(1), Tensor2::zeros(4, 5));
        let loss = tape.sum_all(used);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(ParamId(1)).unwrap();
        assert_eq!(g.shape(), (4, 5));
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    /// Central finite differences over every op in one composed graph.
    #[test]
    fn composed_graph_matches_finite_differences() {
        let build = |vals: &[Tensor2]| -> (GradientTape, TensorId) {
            let mut tape = GradientTape::new();
            let a = tape.parameter(ParamId(0), vals[0].clone());
            let b = tape.parameter(ParamId(1), vals[1].clone());
            let c = tape.parameter(ParamId(2), vals[2].clone());
            let bias = tape.parameter(ParamId(3), vals[3].clone());

            let prod = tape.matmul(a, b).unwrap();
            let shifted = tape.add_row_broadcast(prod, bias).unwrap();
            let act = tape.sigmoid(shifted);
            let cosines = tape.cosine_vs_rows(act, c).unwrap();
            let cp = tape.add_const(cosines, 1.2);
            let simplex = tape.l1_normalize_rows(cp).unwrap();
            let sm = tape.softmax_rows(simplex, 0.4).unwrap();
            let pair = tape.row_cosine(act, act).unwrap(); // constant 1, zero grad path
            let scaled = tape.scale_rows(sm, pair).unwrap();
            let left = tape.slice_cols(scaled, 0, 2).unwrap();
            let right = tape.slice_cols(scaled, 2, 1).unwrap();
            let dots = tape.row_dot(left, left).unwrap();
            let cat = tape.concat_cols(&[dots, right]).unwrap();
            let had = tape.hadamard(cat, cat).unwrap();
            let loss = tape.sum_all(had);
            (tape, loss)
        };

        let mut vals = vec![
            xavier_init(3, 2, 10),
            xavier_init(2, 4, 11),
            xavier_init(3, 4, 12),
            xavier_init(1, 4, 13),
        ];
        let (mut tape, loss) = build(&vals);
        let grads = tape.backward(loss).unwrap();

        let step = 1e-5;
        for (pi, val) in vals.clone().iter().enumerate() {
            let g = grads.get(ParamId(pi)).unwrap().clone();
            for idx in 0..val.len() {
                let orig = vals[pi].data()[idx];
                vals[pi].data_mut()[idx] = orig + step;
                let (t1, l1) = build(&vals);
                let up = t1.value(l1).get(0, 0);
                vals[pi].data_mut()[idx] = orig - step;
                let (t2, l2) = build(&vals);
                let down = t2.value(l2).get(0, 0);
                vals[pi].data_mut()[idx] = orig;
                let fd = (up - down) / (2.0 * step);
                let an = g.data()[idx];
                let denom = fd.abs().max(an.abs());
                if denom < 1e-8 {
                    assert!((fd - an).abs() < 1e-8, "param {pi} idx {idx}: {fd} vs {an}");
                } else {
                    assert!(
                        ((fd - an) / denom).abs() < 1e-5,
                        "param {pi} idx {idx}: {fd} vs {an}"
                    );
                }
            }
        }
    }
}
