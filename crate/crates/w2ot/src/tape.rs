//! Tape-based reverse-mode differentiation over batch-level tensor
//! primitives.
//!
//! The primitive set is deliberately small: exactly what an ICNN forward
//! pass and its analytic input-gradient graph need. The activation
//! derivative `sigma'` is a first-class primitive whose backward rule uses
//! `sigma''`, so a single reverse pass differentiates expressions that
//! already contain gradients (no nested tapes).

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gemm_into, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op<S: Scalar> {
    Leaf,
    /// op(a) * op(b); `ta`/`tb` transpose the operand logically.
    Matmul {
        a: NodeId,
        b: NodeId,
        ta: bool,
        tb: bool,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, S),
    /// mat[i,j] + row[j]
    AddRowBroadcast {
        mat: NodeId,
        row: NodeId,
    },
    Activation {
        x: NodeId,
        act: Activation,
    },
    /// sigma'(x) as a value; its backward rule uses sigma''.
    ActivationPrime {
        x: NodeId,
        act: Activation,
    },
    /// out[i] = <a[i,:], b[i,:]>, shape [m, 1]
    RowDot(NodeId, NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    /// min(x, 0)^2 entry-wise (negative-part square, for the regularizer)
    SqNegPart(NodeId),
}

struct Node<S: Scalar> {
    op: Op<S>,
    value: Tensor<S>,
    needs_grad: bool,
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    /// Verification hook: multiplies sigma'' inside the ActivationPrime
    /// backward rule. 1.0 in normal operation; the self-check uses it as a
    /// negative control for the finite-difference harness.
    pub second_deriv_scale: S,
}

/// Per-node gradients produced by one reverse pass.
pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the backward output with respect to the node, if any
    /// gradient reached it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.grads[id.0].as_ref()
    }

    /// Gradient with the leaf's shape, zero if no gradient flowed.
    pub fn get_or_zero(&self, id: NodeId, shape: &[usize]) -> Tensor<S> {
        match self.grads[id.0] {
            Some(ref g) => g.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            second_deriv_scale: S::one(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn param(&mut self, value: Tensor<S>) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Non-trainable leaf (inputs, constants).
    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    fn check_2d(&self, id: NodeId, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(id);
        if t.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op,
                details: format!("expected a matrix, got shape {:?}", t.shape()),
            });
        }
        Ok((t.rows(), t.cols()))
    }

    /// op(a) * op(b) with optional logical transposes.
    pub fn matmul_opt(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> Result<NodeId> {
        let (ar, ac) = self.check_2d(a, "matmul")?;
        let (br, bc) = self.check_2d(b, "matmul")?;
        let (m, k1) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k1 != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                details: format!(
                    "inner dims disagree: a {:?} (ta={}), b {:?} (tb={})",
                    self.value(a).shape(),
                    ta,
                    self.value(b).shape(),
                    tb
                ),
            });
        }
        let mut out = vec![S::zero(); m * n];
        gemm_into(
            S::one(),
            self.value(a).data(),
            ar,
            ac,
            ta,
            self.value(b).data(),
            br,
            bc,
            tb,
            S::zero(),
            &mut out,
        );
        let value = Tensor::from_parts_unchecked(vec![m, n], out);
        value.check_finite("matmul")?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Matmul { a, b, ta, tb }, value, needs))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_opt(a, b, false, false)
    }

    fn zip_same_shape(
        &mut self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(S, S) -> S,
    ) -> Result<Tensor<S>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op,
                details: format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            });
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::from_parts_unchecked(ta.shape().to_vec(), data);
        out.check_finite(op)?;
        Ok(out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.zip_same_shape("add", a, b, |x, y| x + y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), value, needs))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.zip_same_shape("sub", a, b, |x, y| x - y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub(a, b), value, needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.zip_same_shape("mul", a, b, |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), value, needs))
    }

    pub fn scale(&mut self, a: NodeId, c: S) -> Result<NodeId> {
        let value = self.value(a).map(|v| v * c);
        value.check_finite("scale")?;
        let needs = self.needs(a);
        Ok(self.push(Op::Scale(a, c), value, needs))
    }

    pub fn add_row_broadcast(&mut self, mat: NodeId, row: NodeId) -> Result<NodeId> {
        let (m, n) = self.check_2d(mat, "add_row_broadcast")?;
        let rt = self.value(row);
        if rt.len() != n {
            return Err(Error::ShapeMismatch {
                op: "add_row_broadcast",
                details: format!("matrix has {} cols, row has {} entries", n, rt.len()),
            });
        }
        let mv = self.value(mat).data();
        let rv = self.value(row).data();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(mv[i * n + j] + rv[j]);
            }
        }
        let value = Tensor::from_parts_unchecked(vec![m, n], out);
        value.check_finite("add_row_broadcast")?;
        let needs = self.needs(mat) || self.needs(row);
        Ok(self.push(Op::AddRowBroadcast { mat, row }, value, needs))
    }

    pub fn activation(&mut self, x: NodeId, act: Activation) -> Result<NodeId> {
        let value = self.value(x).map(|v| act.value(v));
        value.check_finite("activation")?;
        let needs = self.needs(x);
        Ok(self.push(Op::Activation { x, act }, value, needs))
    }

    pub fn activation_prime(&mut self, x: NodeId, act: Activation) -> Result<NodeId> {
        let value = self.value(x).map(|v| act.prime(v));
        value.check_finite("activation_prime")?;
        let needs = self.needs(x);
        Ok(self.push(Op::ActivationPrime { x, act }, value, needs))
    }

    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n) = self.check_2d(a, "row_dot")?;
        let (mb, nb) = self.check_2d(b, "row_dot")?;
        if (m, n) != (mb, nb) {
            return Err(Error::ShapeMismatch {
                op: "row_dot",
                details: format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            });
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let mut acc = S::zero();
            for j in 0..n {
                acc = acc + av[i * n + j] * bv[i * n + j];
            }
            out.push(acc);
        }
        let value = Tensor::from_parts_unchecked(vec![m, 1], out);
        value.check_finite("row_dot")?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::RowDot(a, b), value, needs))
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let s: S = self.value(a).data().iter().copied().sum();
        let value = Tensor::from_parts_unchecked(vec![1], vec![s]);
        value.check_finite("sum_all")?;
        let needs = self.needs(a);
        Ok(self.push(Op::SumAll(a), value, needs))
    }

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::InvalidArgument("mean of an empty tensor".into()));
        }
        let s: S = self.value(a).data().iter().copied().sum();
        let value = Tensor::from_parts_unchecked(vec![1], vec![s / S::from_f64(n as f64)]);
        value.check_finite("mean_all")?;
        let needs = self.needs(a);
        Ok(self.push(Op::MeanAll(a), value, needs))
    }

    pub fn sq_neg_part(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|v| {
            let neg = v.min(S::zero());
            neg * neg
        });
        value.check_finite("sq_neg_part")?;
        let needs = self.needs(a);
        Ok(self.push(Op::SqNegPart(a), value, needs))
    }

    /// Reverse pass from a scalar output node. Returns gradients for every
    /// node that one reached (leaves included).
    pub fn backward(&self, output: NodeId) -> Result<Gradients<S>> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidArgument("backward on an empty tape".into()));
        }
        let out = self.value(output);
        if !out.is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "backward",
                details: format!("output must be scalar, got shape {:?}", out.shape()),
            });
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![S::one()]);

        for i in (0..=output.0).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let dc = grads[i].take().unwrap();
            self.backprop_node(i, &dc, &mut grads);
            grads[i] = Some(dc);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| {
                    Tensor::from_parts_unchecked(self.nodes[i].value.shape().to_vec(), data)
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Vec<S>>], id: NodeId, f: impl Fn(&mut [S])) {
        if !self.needs(id) {
            return;
        }
        let buf = grads[id.0].get_or_insert_with(|| vec![S::zero(); self.value(id).len()]);
        f(buf);
    }

    fn backprop_node(&self, i: usize, dc: &[S], grads: &mut [Option<Vec<S>>]) {
        match self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul { a, b, ta, tb } => {
                let at = self.value(a);
                let bt = self.value(b);
                let (ar, ac) = (at.rows(), at.cols());
                let (br, bc) = (bt.rows(), bt.cols());
                let (m, n) = (self.nodes[i].value.rows(), self.nodes[i].value.cols());
                // dA
                self.accum(grads, a, |buf| {
                    if !ta {
                        // dA += dC * op(b)^T
                        gemm_into(
                            S::one(),
                            dc,
                            m,
                            n,
                            false,
                            bt.data(),
                            br,
                            bc,
                            !tb,
                            S::one(),
                            buf,
                        );
                    } else {
                        // a stored transposed: dA += op(b) * dC^T
                        gemm_into(
                            S::one(),
                            bt.data(),
                            br,
                            bc,
                            tb,
                            dc,
                            m,
                            n,
                            true,
                            S::one(),
                            buf,
                        );
                    }
                });
                // dB
                self.accum(grads, b, |buf| {
                    if !tb {
                        // dB += op(a)^T * dC
                        gemm_into(
                            S::one(),
                            at.data(),
                            ar,
                            ac,
                            !ta,
                            dc,
                            m,
                            n,
                            false,
                            S::one(),
                            buf,
                        );
                    } else {
                        // b stored transposed: dB += dC^T * op(a)
                        gemm_into(
                            S::one(),
                            dc,
                            m,
                            n,
                            true,
                            at.data(),
                            ar,
                            ac,
                            ta,
                            S::one(),
                            buf,
                        );
                    }
                });
            }
            Op::Add(a, b) => {
                self.accum(grads, a, |buf| {
                    for (g, &d) in buf.iter_mut().zip(dc) {
                        *g = *g + d;
                    }
                });
                self.accum(grads, b, |buf| {
                    for (g, &d) in buf.iter_mut().zip(dc) {
                        *g = *g + d;
                    }
                });
            }
            Op::Sub(a, b) => {
                self.accum(grads, a, |buf| {
                    for (g, &d) in buf.iter_mut().zip(dc) {
                        *g = *g + d;
                    }
                });
                self.accum(grads, b, |buf| {
                    for (g, &d) in buf.iter_mut().zip(dc) {
                        *g = *g - d;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                self.accum(grads, a, |buf| {
                    for ((g, &d), &y) in buf.iter_mut().zip(dc).zip(bv) {
                        *g = *g + d * y;
                    }
                });
                self.accum(grads, b, |buf| {
                    for ((g, &d), &x) in buf.iter_mut().zip(dc).zip(av) {
                        *g = *g + d * x;
                    }
                });
            }
            Op::Scale(a, c) => {
                self.accum(grads, a, |buf| {
                    for (g, &d) in buf.iter_mut().zip(dc) {
                        *g = *g + d * c;
                    }
                });
            }
            Op::AddRowBroadcast { mat, row } => {
                let n = self.value(row).len();
                self.accum(grads, mat, |buf| {
                    for (g, &d) in buf.iter_mut().zip(dc) {
                        *g = *g + d;
                    }
                });
                self.accum(grads, row, |buf| {
                    for (idx, &d) in dc.iter().enumerate() {
                        buf[idx % n] = buf[idx % n] + d;
                    }
                });
            }
            Op::Activation { x, act } => {
                let xv = self.value(x).data();
                self.accum(grads, x, |buf| {
                    for ((g, &d), &t) in buf.iter_mut().zip(dc).zip(xv) {
                        *g = *g + d * act.prime(t);
                    }
                });
            }
            Op::ActivationPrime { x, act } => {
                let xv = self.value(x).data();
                let hook = self.second_deriv_scale;
                self.accum(grads, x, |buf| {
                    for ((g, &d), &t) in buf.iter_mut().zip(dc).zip(xv) {
                        *g = *g + d * act.second(t) * hook;
                    }
                });
            }
            Op::RowDot(a, b) => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                let n = self.value(a).cols();
                self.accum(grads, a, |buf| {
                    for (idx, g) in buf.iter_mut().enumerate() {
                        *g = *g + dc[idx / n] * bv[idx];
                    }
                });
                self.accum(grads, b, |buf| {
                    for (idx, g) in buf.iter_mut().enumerate() {
                        *g = *g + dc[idx / n] * av[idx];
                    }
                });
            }
            Op::SumAll(a) => {
                let d = dc[0];
                self.accum(grads, a, |buf| {
                    for g in buf.iter_mut() {
                        *g = *g + d;
                    }
                });
            }
            Op::MeanAll(a) => {
                let d = dc[0] / S::from_f64(self.value(a).len() as f64);
                self.accum(grads, a, |buf| {
                    for g in buf.iter_mut() {
                        *g = *g + d;
                    }
                });
            }
            Op::SqNegPart(a) => {
                let av = self.value(a).data();
                let two = S::from_f64(2.0);
                self.accum(grads, a, |buf| {
                    for ((g, &d), &x) in buf.iter_mut().zip(dc).zip(av) {
                        *g = *g + d * two * x.min(S::zero());
                    }
                });
            }
        }
    }
}

/// Central finite differences of a scalar-valued function, coordinate by
/// coordinate. Test oracle, independent of the tape.
pub fn finite_diff_grad<S: Scalar>(
    mut f: impl FnMut(&Tensor<S>) -> Result<S>,
    x: &Tensor<S>,
    h: S,
) -> Result<Tensor<S>> {
    if h <= S::zero() {
        return Err(Error::InvalidArgument(
            "finite_diff_grad: h must be > 0".into(),
        ));
    }
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.data().to_vec();
        plus[i] = plus[i] + h;
        let mut minus = x.data().to_vec();
        minus[i] = minus[i] - h;
        let fp = f(&Tensor::from_parts_unchecked(x.shape().to_vec(), plus))?;
        let fm = f(&Tensor::from_parts_unchecked(x.shape().to_vec(), minus))?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite {
                op: "finite_diff_grad",
                context: Some(format!("coordinate {i}")),
            });
        }
        grad.push((fp - fm) / (S::from_f64(2.0) * h));
    }
    Ok(Tensor::from_parts_unchecked(x.shape().to_vec(), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
    }

    #[test]
    fn linear_function_gradient() {
        // f(x) = <c, x>, c = [2, -1]
        let mut tape = Tape::new();
        let x = tape.param(Tensor::matrix(1, 2, vec![0.7f64, -1.3]).unwrap());
        let c = tape.constant(Tensor::matrix(1, 2, vec![2.0, -1.0]).unwrap());
        let d = tape.row_dot(x, c).unwrap();
        let out = tape.sum_all(d).unwrap();
        let grads = tape.backward(out).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, -1.0]);
    }

    #[test]
    fn quadratic_gradient() {
        // f(x) = 0.5 ||x||^2 at x = [3, 4]
        let mut tape = Tape::new();
        let x = tape.param(Tensor::matrix(1, 2, vec![3.0f64, 4.0]).unwrap());
        let d = tape.row_dot(x, x).unwrap();
        let s = tape.sum_all(d).unwrap();
        let out = tape.scale(s, 0.5).unwrap();
        let grads = tape.backward(out).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn activation_composite_gradient() {
        // f(x) = sigma0(x) with squared-leaky-relu beta=0.2 at x = 3 -> grad 6
        let mut tape = Tape::new();
        let act = Activation::squared_leaky_relu(0.2);
        let x = tape.param(Tensor::matrix(1, 1, vec![3.0f64]).unwrap());
        let y = tape.activation(x, act).unwrap();
        let out = tape.sum_all(y).unwrap();
        let grads = tape.backward(out).unwrap();
        assert!((grads.get(x).unwrap().data()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn backward_rejects_non_scalar_output() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::matrix(1, 2, vec![1.0f64, 2.0]).unwrap());
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn finite_diff_quadratic() {
        let x = Tensor::vector(vec![1.0f64, 2.0]).unwrap();
        let g = finite_diff_grad(
            |t| Ok(0.5 * t.data().iter().map(|v| v * v).sum::<f64>()),
            &x,
            1e-5,
        )
        .unwrap();
        assert!((g.data()[0] - 1.0).abs() < 1e-8);
        assert!((g.data()[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_linear_exact() {
        let c = [2.0f64, -1.0, 0.5];
        let x = Tensor::vector(vec![0.3f64, 0.8, -0.2]).unwrap();
        let g = finite_diff_grad(
            |t| Ok(t.data().iter().zip(&c).map(|(a, b)| a * b).sum()),
            &x,
            1e-5,
        )
        .unwrap();
        for (gi, ci) in g.data().iter().zip(&c) {
            assert!((gi - ci).abs() < 1e-9);
        }
    }

    /// Every primitive vs central differences at kink-avoiding points.
    #[test]
    fn primitives_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let act0 = Activation::squared_leaky_relu(0.2);
        let act1 = Activation::leaky_relu(0.2);

        for trial in 0..20 {
            let m = 2 + trial % 3;
            let n = 2 + (trial / 3) % 3;
            let mut draw = |len: usize| -> Vec<f64> {
                (0..len)
                    .map(|_| {
                        // keep |t| > 1e-3 away from activation kinks
                        let v: f64 = rng.gen_range(0.05f64..1.0);
                        if rng.gen_bool(0.5) {
                            v
                        } else {
                            -v
                        }
                    })
                    .collect()
            };
            let xv = Tensor::matrix(m, n, draw(m * n)).unwrap();
            let wv = Tensor::matrix(n, n, draw(n * n)).unwrap();
            let bv = Tensor::vector(draw(n)).unwrap();

            // scalar functional exercising every primitive
            let eval = |x: &Tensor<f64>| -> Result<(f64, Tensor<f64>)> {
                let mut tape = Tape::new();
                let xn = tape.param(x.clone());
                let w = tape.constant(wv.clone());
                let b = tape.constant(bv.clone());
                let u = tape.matmul_opt(xn, w, false, true)?;
                let u = tape.add_row_broadcast(u, b)?;
                let z = tape.activation(u, act0)?;
                let p = tape.activation_prime(u, act1)?;
                let q = tape.mul(z, p)?;
                let r = tape.row_dot(q, xn)?;
                let s = tape.sub(q, z)?;
                let s2 = tape.add(s, q)?;
                let t = tape.sq_neg_part(s2)?;
                let t = tape.sum_all(t)?;
                let r = tape.mean_all(r)?;
                let t2 = tape.scale(t, 0.25)?;
                let out = tape.add(r, t2)?;
                let grads = tape.backward(out)?;
                Ok((
                    tape.value(out).scalar_value()?,
                    grads.get_or_zero(xn, x.shape()),
                ))
            };

            let (_, analytic) = eval(&xv).unwrap();
            let numeric = finite_diff_grad(|t| eval(t).map(|p| p.0), &xv, 1e-6).unwrap();
            for (a, nmr) in analytic.data().iter().zip(numeric.data()) {
                assert!(
                    rel_err(*a, *nmr) < 1e-6 || (a - nmr).abs() < 1e-9,
                    "trial {trial}: analytic {a} vs numeric {nmr}"
                );
            }
        }
    }

    /// Replaying the same graph from the same inputs is bit-identical.
    #[test]
    fn tape_replay_determinism() {
        let build = || {
            let mut tape = Tape::new();
            let x =
                tape.param(Tensor::matrix(3, 2, vec![0.3f64, -0.7, 1.1, 0.2, -0.4, 0.9]).unwrap());
            let w = tape.constant(Tensor::matrix(2, 2, vec![0.5, -0.25, 0.75, 1.5]).unwrap());
            let u = tape.matmul(x, w).unwrap();
            let z = tape
                .activation(u, Activation::squared_leaky_relu(0.2))
                .unwrap();
            let s = tape.mean_all(z).unwrap();
            let grads = tape.backward(s).unwrap();
            (
                tape.value(s).data().to_vec(),
                grads.get(x).unwrap().data().to_vec(),
            )
        };
        let (v1, g1) = build();
        let (v2, g2) = build();
        assert_eq!(v1, v2);
        assert_eq!(g1, g2);
    }

    /// Gradients of expressions containing sigma' match finite differences:
    /// the property that makes the ICNN input-gradient graph trainable.
    #[test]
    fn activation_prime_is_differentiable() {
        let act = Activation::squared_leaky_relu(0.2);
        let eval = |x: &Tensor<f64>| -> Result<(f64, Tensor<f64>)> {
            let mut tape = Tape::new();
            let xn = tape.param(x.clone());
            let p = tape.activation_prime(xn, act)?;
            let q = tape.mul(p, p)?;
            let out = tape.sum_all(q)?;
            let grads = tape.backward(out)?;
            Ok((
                tape.value(out).scalar_value()?,
                grads.get_or_zero(xn, x.shape()),
            ))
        };
        for &x0 in &[1.3f64, -0.8, 2.4, -0.1] {
            let x = Tensor::matrix(1, 1, vec![x0]).unwrap();
            let (_, analytic) = eval(&x).unwrap();
            let numeric = finite_diff_grad(|t| eval(t).map(|p| p.0), &x, 1e-6).unwrap();
            assert!(
                rel_err(analytic.data()[0], numeric.data()[0]) < 1e-6,
                "at {x0}: {} vs {}",
                analytic.data()[0],
                numeric.data()[0]
            );
        }
    }

    #[test]
    fn second_deriv_hook_corrupts_gradients() {
        let act = Activation::squared_leaky_relu(0.2);
        let x = Tensor::matrix(1, 1, vec![1.5f64]).unwrap();
        let run = |hook: f64| {
            let mut tape = Tape::new();
            tape.second_deriv_scale = hook;
            let xn = tape.param(x.clone());
            let p = tape.activation_prime(xn, act).unwrap();
            let out = tape.sum_all(p).unwrap();
            let grads = tape.backward(out).unwrap();
            grads.get(xn).unwrap().data()[0]
        };
        assert!((run(1.0) - 2.0).abs() < 1e-12); // sigma'' = 2 on t > 0
        assert!((run(1.5) - 3.0).abs() < 1e-12);
    }
}
