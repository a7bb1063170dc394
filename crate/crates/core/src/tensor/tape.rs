use super::ops::{self, GroupStats};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Backward rule for an op defined outside this module.
pub trait CustomOp<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input (`None` where the input is constant).
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &Tensor<T>,
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

enum Op<T: Scalar> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    TransposeConv2d {
        input: Var,
        weight: Var,
        bias: Var,
    },
    GroupNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        stats: GroupStats<T>,
    },
    Relu(Var),
    Concat(Var, Var),
    Add(Var, Var),
    Sum(Var),
    Cosine(Var, Var),
    Lp(Var, Var, u32),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<T>>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records executed ops in order; [`Tape::backward`] replays them in reverse.
///
/// A tape belongs to exactly one forward/backward pass.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A constant input (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Value of a scalar node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0].as_f64()
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = ops::conv2d(self.value(input), self.value(weight), self.value(bias), stride, pad)?;
        let needs = self.needs(&[input, weight, bias]);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            needs,
        ))
    }

    pub fn transpose_conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
        let out = ops::transpose_conv2d(self.value(input), self.value(weight), self.value(bias), stride)?;
        let needs = self.needs(&[input, weight, bias]);
        Ok(self.push(out, Op::TransposeConv2d { input, weight, bias }, needs))
    }

    pub fn group_norm(&mut self, input: Var, groups: usize, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (out, stats) =
            ops::group_norm_with_stats(self.value(input), groups, self.value(gamma), self.value(beta), eps)?;
        let needs = self.needs(&[input, gamma, beta]);
        Ok(self.push(
            out,
            Op::GroupNorm {
                input,
                gamma,
                beta,
                groups,
                stats,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = ops::relu(self.value(input));
        let needs = self.needs(&[input]);
        self.push(out, Op::Relu(input), needs)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::concat_channels(self.value(a), self.value(b))?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Concat(a, b), needs))
    }

    /// Elementwise sum of two equally shaped values.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).sum();
        let needs = self.needs(&[input]);
        self.push(Tensor::scalar(T::of(s)), Op::Sum(input), needs)
    }

    pub fn cosine_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = ops::cosine_distance(self.value(a), self.value(b))?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor::scalar(T::of(d)), Op::Cosine(a, b), needs))
    }

    pub fn lp_distance(&mut self, a: Var, b: Var, p: u32) -> Result<Var> {
        let d = ops::lp_distance(self.value(a), self.value(b), p)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor::scalar(T::of(d)), Op::Lp(a, b, p), needs))
    }

    /// Records an externally computed `output` together with its backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        let needs = self.needs(inputs);
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            needs,
        )
    }

    /// Reverse-mode pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.value(loss).numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {}",
                self.value(loss).shape()
            )));
        }
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let want = |v: Var| self.nodes[v.0].needs_grad;
            let acc = |v: Var, t: Tensor<T>, grads: &mut Vec<Option<Tensor<T>>>| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                &Op::Conv2d {
                    input,
                    weight,
                    bias,
                    stride,
                    pad,
                } => {
                    let (dx, dw, db) =
                        ops::conv2d_backward(self.value(input), self.value(weight), &g, stride, pad, want(input));
                    if let Some(dx) = dx {
                        acc(input, dx, &mut grads);
                    }
                    if want(weight) {
                        acc(weight, dw, &mut grads);
                    }
                    if want(bias) {
                        acc(bias, db.reshape(self.value(bias).shape())?, &mut grads);
                    }
                }
                &Op::TransposeConv2d { input, weight, bias } => {
                    let (dx, dw, db) =
                        ops::transpose_conv2d_backward(self.value(input), self.value(weight), &g, want(input));
                    if let Some(dx) = dx {
                        acc(input, dx, &mut grads);
                    }
                    if want(weight) {
                        acc(weight, dw, &mut grads);
                    }
                    if want(bias) {
                        acc(bias, db.reshape(self.value(bias).shape())?, &mut grads);
                    }
                }
                Op::GroupNorm {
                    input,
                    gamma,
                    beta,
                    groups,
                    stats,
                } => {
                    let (dx, dg, db) = ops::group_norm_backward(
                        self.value(*input),
                        *groups,
                        self.value(*gamma),
                        stats,
                        &g,
                        want(*input),
                    );
                    if let Some(dx) = dx {
                        acc(*input, dx, &mut grads);
                    }
                    if want(*gamma) {
                        acc(*gamma, dg.reshape(self.value(*gamma).shape())?, &mut grads);
                    }
                    if want(*beta) {
                        acc(*beta, db.reshape(self.value(*beta).shape())?, &mut grads);
                    }
                }
                &Op::Relu(input) => {
                    acc(input, ops::relu_backward(self.value(input), &g), &mut grads);
                }
                &Op::Concat(a, b) => {
                    let (ga, gb) = ops::split_channels(&g, self.value(a).dims()[1]);
                    if want(a) {
                        acc(a, ga, &mut grads);
                    }
                    if want(b) {
                        acc(b, gb, &mut grads);
                    }
                }
                &Op::Add(a, b) => {
                    if want(a) {
                        acc(a, g.clone(), &mut grads);
                    }
                    if want(b) {
                        acc(b, g, &mut grads);
                    }
                }
                &Op::Sum(input) => {
                    let up = g.data()[0];
                    acc(input, Tensor::full(self.value(input).shape(), up), &mut grads);
                }
                &Op::Cosine(a, b) => {
                    let (ga, gb) = ops::cosine_distance_backward(self.value(a), self.value(b), g.data()[0].as_f64());
                    if want(a) {
                        acc(a, ga, &mut grads);
                    }
                    if want(b) {
                        acc(b, gb, &mut grads);
                    }
                }
                &Op::Lp(a, b, p) => {
                    let ga = ops::lp_distance_backward(self.value(a), self.value(b), p, g.data()[0].as_f64());
                    if want(b) {
                        acc(b, ga.scale(-T::one()), &mut grads);
                    }
                    if want(a) {
                        acc(a, ga, &mut grads);
                    }
                }
                Op::Custom { inputs, op } => {
                    let ins: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
                    let outs = op.backward(&ins, &node.value, &g)?;
                    if outs.len() != inputs.len() {
                        return Err(Error::InvalidArgument(format!(
                            "custom op `{}` returned {} gradients for {} inputs",
                            op.name(),
                            outs.len(),
                            inputs.len()
                        )));
                    }
                    for (v, d) in inputs.iter().zip(outs) {
                        if let (true, Some(d)) = (want(*v), d) {
                            acc(*v, d, &mut grads);
                        }
                    }
                }
            }
        }
        // Only leaves keep their gradients.
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.needs_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of the trainable leaves of a tape.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` if `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or exact zeros shaped like `like` if `v` did not participate.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
