//! Reverse-mode differentiation over row-batched matrices.
//!
//! Every recorded value is a matrix whose rows are independent samples (nodes
//! or edges of a graph). The tape supports exactly the primitives the message
//! passing model needs: affine layers, ReLU, sigmoid, elementwise addition,
//! column concatenation, row gathering and grouped row summation.

use std::sync::Arc;

use super::matrix::Matrix;
use super::mlp::{sigmoid, Activation, ModelParams, NetId};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// For each output row, the input rows summed into it (in summation order).
pub type Groups = Vec<Vec<usize>>;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Affine { input: NodeId, net: NetId, layer: usize },
    Relu(NodeId),
    Sigmoid(NodeId),
    Add(NodeId, NodeId),
    ConcatCols(Vec<NodeId>),
    Gather { input: NodeId, rows: Arc<[usize]> },
    ScatterSum { input: NodeId, groups: Arc<Groups> },
}

#[derive(Default)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Matrix>,
    needs_grad: Vec<bool>,
    grads: Vec<Option<Matrix>>,
    macs: u64,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Multiply-accumulate operations spent in affine layers so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.values[id.0]
    }

    /// Gradient of the seeded objective with respect to a recorded value, if
    /// the value participates in it. Available after [`Tape::backward`].
    pub fn grad(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    fn push(&mut self, op: Op, value: Matrix, needs_grad: bool) -> NodeId {
        self.ops.push(op);
        self.values.push(value);
        self.needs_grad.push(needs_grad);
        NodeId(self.ops.len() - 1)
    }

    /// A constant input.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// An input whose gradient is wanted.
    pub fn variable(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    pub fn affine(&mut self, params: &ModelParams, net: NetId, layer: usize, input: NodeId) -> Result<NodeId> {
        let dense = params
            .net(net)
            .layers
            .get(layer)
            .ok_or_else(|| Error::Tape(format!("layer {layer} out of range")))?;
        let x = &self.values[input.0];
        if x.cols() != dense.in_dim {
            return Err(Error::DimensionMismatch {
                expected: dense.in_dim,
                got: x.cols(),
            });
        }
        let rows = x.rows();
        let mut y = Matrix::zeros(rows, dense.out_dim);
        for r in 0..rows {
            y.row_mut(r).copy_from_slice(&dense.bias.value);
        }
        if rows > 0 {
            // Y (rows × out) += X (rows × in) · Wᵀ
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    dense.in_dim,
                    dense.out_dim,
                    1.0,
                    x.data().as_ptr(),
                    dense.in_dim as isize,
                    1,
                    dense.weight.value.as_ptr(),
                    1,
                    dense.in_dim as isize,
                    1.0,
                    y.data_mut().as_mut_ptr(),
                    dense.out_dim as isize,
                    1,
                );
            }
        }
        self.macs += (rows * dense.in_dim * dense.out_dim) as u64;
        Ok(self.push(Op::Affine { input, net, layer }, y, true))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let mut y = self.values[input.0].clone();
        y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let ng = self.needs_grad[input.0];
        self.push(Op::Relu(input), y, ng)
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let mut y = self.values[input.0].clone();
        y.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        let ng = self.needs_grad[input.0];
        self.push(Op::Sigmoid(input), y, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        if (va.rows(), va.cols()) != (vb.rows(), vb.cols()) {
            return Err(Error::Tape("add: shape mismatch".into()));
        }
        let mut y = va.clone();
        y.add_assign(vb);
        let ng = self.needs_grad[a.0] || self.needs_grad[b.0];
        Ok(self.push(Op::Add(a, b), y, ng))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts.first().ok_or_else(|| Error::Tape("concat of nothing".into()))?;
        let rows = self.values[first.0].rows();
        if parts.iter().any(|p| self.values[p.0].rows() != rows) {
            return Err(Error::Tape("concat: row count mismatch".into()));
        }
        let cols: usize = parts.iter().map(|p| self.values[p.0].cols()).sum();
        let mut y = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let out = y.row_mut(r);
            let mut offset = 0;
            for p in parts {
                let src = self.values[p.0].row(r);
                out[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let ng = parts.iter().any(|p| self.needs_grad[p.0]);
        Ok(self.push(Op::ConcatCols(parts.to_vec()), y, ng))
    }

    /// Output row `r` is input row `rows[r]`.
    pub fn gather_rows(&mut self, input: NodeId, rows: Arc<[usize]>) -> Result<NodeId> {
        let x = &self.values[input.0];
        if let Some(&bad) = rows.iter().find(|&&r| r >= x.rows()) {
            return Err(Error::Tape(format!("gather: row {bad} out of range")));
        }
        let mut y = Matrix::zeros(rows.len(), x.cols());
        for (r, &src) in rows.iter().enumerate() {
            y.row_mut(r).copy_from_slice(x.row(src));
        }
        let ng = self.needs_grad[input.0];
        Ok(self.push(Op::Gather { input, rows }, y, ng))
    }

    /// Output row `t` is the sum of input rows `groups[t]`, added in the listed
    /// order. An empty group yields a zero row.
    pub fn scatter_sum(&mut self, input: NodeId, groups: Arc<Groups>) -> Result<NodeId> {
        let x = &self.values[input.0];
        let mut y = Matrix::zeros(groups.len(), x.cols());
        for (t, group) in groups.iter().enumerate() {
            let out = y.row_mut(t);
            for &src in group {
                if src >= x.rows() {
                    return Err(Error::Tape(format!("scatter: row {src} out of range")));
                }
                for (o, v) in out.iter_mut().zip(x.row(src)) {
                    *o += v;
                }
            }
        }
        let ng = self.needs_grad[input.0];
        Ok(self.push(Op::ScatterSum { input, groups }, y, ng))
    }

    /// Records a full MLP forward pass.
    pub fn mlp(&mut self, params: &ModelParams, net: NetId, input: NodeId) -> Result<NodeId> {
        let spec = params.net(net).spec.clone();
        let mut x = input;
        for layer in 0..spec.num_layers() {
            x = self.affine(params, net, layer, x)?;
            x = match spec.activation(layer) {
                Activation::Relu => self.relu(x),
                Activation::Sigmoid => self.sigmoid(x),
                Activation::None => x,
            };
        }
        Ok(x)
    }

    /// Reverse sweep. `seeds` holds ∂objective/∂value for output nodes;
    /// parameter gradients are accumulated into `params`.
    pub fn backward(&mut self, params: &mut ModelParams, seeds: &[(NodeId, Matrix)]) -> Result<()> {
        if self.ops.is_empty() {
            return Err(Error::Tape("backward without a recorded forward pass".into()));
        }
        self.grads = vec![None; self.ops.len()];
        for (id, seed) in seeds {
            let v = self
                .values
                .get(id.0)
                .ok_or_else(|| Error::Tape(format!("seed for unknown node {}", id.0)))?;
            if (v.rows(), v.cols()) != (seed.rows(), seed.cols()) {
                return Err(Error::Tape("seed shape does not match node value".into()));
            }
            accumulate(&mut self.grads[id.0], seed);
        }

        for idx in (0..self.ops.len()).rev() {
            let Some(dy) = self.grads[idx].take() else {
                continue;
            };
            match self.ops[idx].clone() {
                Op::Leaf => {}
                Op::Affine { input, net, layer } => {
                    self.backward_affine(params, net, layer, input, &dy);
                }
                Op::Relu(input) => {
                    if self.needs_grad[input.0] {
                        let y = &self.values[idx];
                        let mut dx = dy.clone();
                        for (g, &v) in dx.data_mut().iter_mut().zip(y.data()) {
                            if v <= 0.0 {
                                *g = 0.0;
                            }
                        }
                        accumulate(&mut self.grads[input.0], &dx);
                    }
                }
                Op::Sigmoid(input) => {
                    if self.needs_grad[input.0] {
                        let y = &self.values[idx];
                        let mut dx = dy.clone();
                        for (g, &s) in dx.data_mut().iter_mut().zip(y.data()) {
                            *g *= s * (1.0 - s);
                        }
                        accumulate(&mut self.grads[input.0], &dx);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs_grad[a.0] {
                        accumulate(&mut self.grads[a.0], &dy);
                    }
                    if self.needs_grad[b.0] {
                        accumulate(&mut self.grads[b.0], &dy);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let cols = self.values[p.0].cols();
                        if self.needs_grad[p.0] {
                            let mut dx = Matrix::zeros(dy.rows(), cols);
                            for r in 0..dy.rows() {
                                dx.row_mut(r).copy_from_slice(&dy.row(r)[offset..offset + cols]);
                            }
                            accumulate(&mut self.grads[p.0], &dx);
                        }
                        offset += cols;
                    }
                }
                Op::Gather { input, rows } => {
                    if self.needs_grad[input.0] {
                        let x = &self.values[input.0];
                        let mut dx = Matrix::zeros(x.rows(), x.cols());
                        for (r, &src) in rows.iter().enumerate() {
                            for (d, g) in dx.row_mut(src).iter_mut().zip(dy.row(r)) {
                                *d += g;
                            }
                        }
                        accumulate(&mut self.grads[input.0], &dx);
                    }
                }
                Op::ScatterSum { input, groups } => {
                    if self.needs_grad[input.0] {
                        let x = &self.values[input.0];
                        let mut dx = Matrix::zeros(x.rows(), x.cols());
                        for (t, group) in groups.iter().enumerate() {
                            for &src in group {
                                for (d, g) in dx.row_mut(src).iter_mut().zip(dy.row(t)) {
                                    *d += g;
                                }
                            }
                        }
                        accumulate(&mut self.grads[input.0], &dx);
                    }
                }
            }
            self.grads[idx] = Some(dy);
        }
        Ok(())
    }

    fn backward_affine(&mut self, params: &mut ModelParams, net: NetId, layer: usize, input: NodeId, dy: &Matrix) {
        let rows = dy.rows();
        let dense = &mut params.net_mut(net).layers[layer];
        let (in_dim, out_dim) = (dense.in_dim, dense.out_dim);
        if rows == 0 {
            return;
        }
        let x = &self.values[input.0];
        // dW (out × in) += dYᵀ · X
        unsafe {
            matrixmultiply::dgemm(
                out_dim,
                rows,
                in_dim,
                1.0,
                dy.data().as_ptr(),
                1,
                out_dim as isize,
                x.data().as_ptr(),
                in_dim as isize,
                1,
                1.0,
                dense.weight.grad.as_mut_ptr(),
                in_dim as isize,
                1,
            );
        }
        for r in 0..rows {
            for (b, g) in dense.bias.grad.iter_mut().zip(dy.row(r)) {
                *b += g;
            }
        }
        self.macs += (rows * in_dim * out_dim) as u64;

        if self.needs_grad[input.0] {
            // dX (rows × in) = dY · W
            let mut dx = Matrix::zeros(rows, in_dim);
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    out_dim,
                    in_dim,
                    1.0,
                    dy.data().as_ptr(),
                    out_dim as isize,
                    1,
                    dense.weight.value.as_ptr(),
                    in_dim as isize,
                    1,
                    0.0,
                    dx.data_mut().as_mut_ptr(),
                    in_dim as isize,
                    1,
                );
            }
            self.macs += (rows * in_dim * out_dim) as u64;
            accumulate(&mut self.grads[input.0], &dx);
        }
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: &Matrix) {
    match slot {
        Some(existing) => existing.add_assign(g),
        None => *slot = Some(g.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::{Mlp, MlpSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params_with(spec: &[usize], act: Activation, seed: u64) -> (ModelParams, NetId) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::new();
        let id = p.insert("net", Mlp::init(MlpSpec::new(spec, act).unwrap(), &mut rng));
        // non-zero biases exercise the bias path
        for t in p.net_mut(id).layers.iter_mut() {
            for b in t.bias.value.iter_mut() {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        (p, id)
    }

    #[test]
    fn batched_forward_matches_hand_composed_two_layer_chain() {
        let (p, id) = params_with(&[3, 5, 2], Activation::None, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();

        // Straight-line oracle: y = W2 · relu(W1 · x + b1) + b2
        let l1 = &p.net(id).layers[0];
        let l2 = &p.net(id).layers[1];
        let mut hidden = [0.0; 5];
        for o in 0..5 {
            let mut s = l1.bias.value[o];
            for i in 0..3 {
                s += l1.weight.value[o * 3 + i] * x[i];
            }
            hidden[o] = if s > 0.0 { s } else { 0.0 };
        }
        let mut expected = [0.0; 2];
        for o in 0..2 {
            let mut s = l2.bias.value[o];
            for i in 0..5 {
                s += l2.weight.value[o * 5 + i] * hidden[i];
            }
            expected[o] = s;
        }

        let mut tape = Tape::new();
        let input = tape.constant(Matrix::row_vector(&x));
        let out = tape.mlp(&p, id, input).unwrap();
        for o in 0..2 {
            assert!((tape.value(out).get(0, o) - expected[o]).abs() < 1e-12);
        }
        let plain = p.net(id).forward(&x).unwrap();
        for o in 0..2 {
            assert!((plain[o] - expected[o]).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_layer_weight_gradient_is_outer_product() {
        let (mut p, id) = params_with(&[3, 2], Activation::None, 1);
        let x = [0.5, -1.0, 2.0];
        let mut tape = Tape::new();
        let input = tape.constant(Matrix::row_vector(&x));
        let out = tape.mlp(&p, id, input).unwrap();
        // loss = sum of outputs
        tape.backward(&mut p, &[(out, Matrix::from_vec(1, 2, vec![1.0, 1.0]))])
            .unwrap();
        let layer = &p.net(id).layers[0];
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(layer.weight.grad[o * 3 + i], x[i]);
            }
            assert_eq!(layer.bias.grad[o], 1.0);
        }
    }

    #[test]
    fn relu_blocks_gradient_at_negative_preactivation() {
        let mut tape = Tape::new();
        let x = tape.variable(Matrix::from_vec(1, 2, vec![-0.7, 0.4]));
        let y = tape.relu(x);
        let mut p = ModelParams::new();
        tape.backward(&mut p, &[(y, Matrix::from_vec(1, 2, vec![1.0, 1.0]))])
            .unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn backward_requires_a_forward_pass() {
        let mut tape = Tape::new();
        let mut p = ModelParams::new();
        assert!(matches!(tape.backward(&mut p, &[]), Err(Error::Tape(_))));
    }

    #[test]
    fn empty_group_sums_to_zero_and_passes_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.variable(Matrix::from_vec(2, 1, vec![3.0, 4.0]));
        let s = tape
            .scatter_sum(x, Arc::new(vec![vec![0, 1], vec![], vec![1]]))
            .unwrap();
        assert_eq!(tape.value(s).data(), &[7.0, 0.0, 4.0]);
        let mut p = ModelParams::new();
        tape.backward(&mut p, &[(s, Matrix::from_vec(3, 1, vec![1.0, 100.0, 10.0]))])
            .unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 11.0]);
    }

    #[test]
    fn two_backward_passes_accumulate_like_the_summed_loss() {
        let (mut p1, id) = params_with(&[4, 6, 3], Activation::Sigmoid, 5);
        let mut p2 = p1.clone();
        let xa = Matrix::from_vec(2, 4, (0..8).map(|i| (i as f64 * 0.37).sin()).collect());
        let xb = Matrix::from_vec(2, 4, (0..8).map(|i| (i as f64 * 0.91).cos()).collect());
        let seed = Matrix::from_vec(2, 3, vec![1.0, -0.5, 0.25, 2.0, 0.0, -1.0]);

        for x in [&xa, &xb] {
            let mut tape = Tape::new();
            let i = tape.constant(x.clone());
            let o = tape.mlp(&p1, id, i).unwrap();
            tape.backward(&mut p1, &[(o, seed.clone())]).unwrap();
        }

        let mut tape = Tape::new();
        let ia = tape.constant(xa);
        let oa = tape.mlp(&p2, id, ia).unwrap();
        let ib = tape.constant(xb);
        let ob = tape.mlp(&p2, id, ib).unwrap();
        tape.backward(&mut p2, &[(oa, seed.clone()), (ob, seed)]).unwrap();

        for c in p1.coordinates() {
            assert!((p1.grad(c) - p2.grad(c)).abs() < 1e-12);
        }
    }

    #[test]
    fn primitive_jacobians_match_finite_differences() {
        // f(x) = sum(w ⊙ sigmoid(gather(concat(x, relu(x))) + scatter(...)))
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x0: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weights: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rows: Arc<[usize]> = Arc::from(vec![2, 0, 1, 2]);
        let groups = Arc::new(vec![vec![0, 3], vec![1], vec![2, 3, 0]]);

        let eval = |x: &[f64], record: bool| -> (f64, Option<Vec<f64>>) {
            let mut tape = Tape::new();
            let xv = tape.variable(Matrix::from_vec(3, 2, x.to_vec()));
            let r = tape.relu(xv);
            let c = tape.concat_cols(&[xv, r]).unwrap();
            let g = tape.gather_rows(c, rows.clone()).unwrap();
            let s = tape.scatter_sum(g, groups.clone()).unwrap();
            let a = tape.add(s, c).unwrap();
            let y = tape.sigmoid(a);
            let f: f64 = tape.value(y).data().iter().zip(&weights).map(|(v, w)| v * w).sum();
            if !record {
                return (f, None);
            }
            let mut p = ModelParams::new();
            tape.backward(&mut p, &[(y, Matrix::from_vec(3, 4, weights.clone()))])
                .unwrap();
            (f, Some(tape.grad(xv).unwrap().data().to_vec()))
        };

        let (_, analytic) = eval(&x0, true);
        let analytic = analytic.unwrap();
        let h = 1e-6;
        for i in 0..x0.len() {
            let mut xp = x0.clone();
            xp[i] += h;
            let mut xm = x0.clone();
            xm[i] -= h;
            let fd = (eval(&xp, false).0 - eval(&xm, false).0) / (2.0 * h);
            let rel = (analytic[i] - fd).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-4, "coordinate {i}: analytic {} vs fd {fd}", analytic[i]);
        }
    }

    #[test]
    fn mac_counter_tracks_affine_work() {
        let (p, id) = params_with(&[4, 3], Activation::None, 2);
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::zeros(5, 4));
        tape.mlp(&p, id, x).unwrap();
        assert_eq!(tape.macs(), 5 * 4 * 3);
    }
}
