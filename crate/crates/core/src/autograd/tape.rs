use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::eval::{add_bias, check_coeffs};
use super::Graph;
use crate::layers::{Param, ParamId};
use crate::tensor::{self, ConvSpec, Real, Shape, Tensor};
use crate::{Error, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    id: usize,
    shape: Shape,
}

impl Var {
    pub fn shape(&self) -> Shape {
        self.shape
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Constant,
    Conv {
        x: usize,
        w: usize,
        b: Option<usize>,
        spec: ConvSpec,
    },
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    BatchNorm {
        x: usize,
        scale: usize,
        shift: usize,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Relu {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        s: T,
    },
    Sum {
        x: usize,
    },
    AvgPool {
        x: usize,
    },
    Upsample {
        x: usize,
    },
    ContextPool {
        x: usize,
        logits: usize,
    },
    Slice {
        x: usize,
        start: usize,
    },
    Concat {
        xs: Vec<usize>,
    },
    Shuffle {
        x: usize,
        groups: usize,
    },
    BatchItem {
        x: usize,
        n: usize,
    },
    BatchStack {
        xs: Vec<usize>,
    },
    Aggregate {
        bank: usize,
        coeffs: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Reverse-mode recording. Nodes are appended in execution order, so every
/// node's inputs precede it.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<ParamId, usize>,
}

/// Gradients of a scalar with respect to every leaf of a tape.
#[derive(Debug)]
pub struct Gradients<T> {
    by_node: Vec<Option<Tensor<T>>>,
    params: BTreeMap<ParamId, usize>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for a parameter recorded on the tape; zeros if the
    /// parameter does not influence the output.
    pub fn param(&self, p: &Param<T>) -> Option<&Tensor<T>> {
        self.params
            .get(&p.id())
            .and_then(|&i| self.by_node[i].as_ref())
    }

    pub fn var(&self, v: &Var) -> Option<&Tensor<T>> {
        self.by_node.get(v.id).and_then(|g| g.as_ref())
    }

    /// Recorded parameters, in id order.
    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        let shape = value.shape();
        self.nodes.push(Node { op, value });
        Var {
            id: self.nodes.len() - 1,
            shape,
        }
    }

    /// A differentiable input that is not a layer parameter.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t)
    }

    pub fn value(&self, v: &Var) -> &Tensor<T> {
        &self.nodes[v.id].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn val(&self, id: usize) -> &Tensor<T> {
        &self.nodes[id].value
    }

    /// Back-propagates from a single-element output.
    pub fn backward(&self, out: &Var) -> Result<Gradients<T>> {
        let len = self.nodes[out.id].value.numel();
        if len != 1 {
            return Err(Error::NotScalar { len });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.id] = Some(Tensor::ones(out.shape));
        for id in (0..=out.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        // every leaf gets a gradient, zero when unreachable
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients {
            by_node: grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut acc = |i: usize, d: Tensor<T>| -> Result<()> {
            grads[i] = Some(match grads[i].take() {
                Some(prev) => tensor::add(&prev, &d)?,
                None => d,
            });
            Ok(())
        };
        match &self.nodes[id].op {
            Op::Leaf | Op::Constant => {}
            Op::Conv { x, w, b, spec } => {
                let xv = self.val(*x);
                acc(
                    *x,
                    tensor::conv2d_backward_input(g, self.val(*w), spec, xv.shape())?,
                )?;
                acc(*w, tensor::conv2d_backward_weight(g, xv, spec)?)?;
                if let Some(b) = b {
                    acc(*b, reduce_to(g, self.val(*b).shape()))?;
                }
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.val(*x), self.val(*w));
                let (fin, fout) = (wv.shape().channels, wv.shape().batch);
                let batch = xv.shape().batch;
                let mut dx = vec![T::zero(); batch * fin];
                let mut dw = vec![T::zero(); fout * fin];
                for n in 0..batch {
                    for o in 0..fout {
                        let go = g.data()[n * fout + o];
                        for i in 0..fin {
                            dx[n * fin + i] = dx[n * fin + i] + wv.data()[o * fin + i] * go;
                            dw[o * fin + i] = dw[o * fin + i] + xv.data()[n * fin + i] * go;
                        }
                    }
                }
                acc(*x, Tensor::from_vec(xv.shape(), dx)?)?;
                acc(*w, Tensor::from_vec(wv.shape(), dw)?)?;
                if let Some(b) = b {
                    acc(*b, reduce_to(g, self.val(*b).shape()))?;
                }
            }
            Op::BatchNorm {
                x,
                scale,
                shift,
                mean,
                inv_std,
            } => {
                let xv = self.val(*x);
                let sv = self.val(*scale);
                let s = xv.shape();
                let plane = s.plane();
                let mut dx = g.clone();
                let mut dscale = vec![T::zero(); s.channels];
                let mut dshift = vec![T::zero(); s.channels];
                for n in 0..s.batch {
                    for c in 0..s.channels {
                        let base = (n * s.channels + c) * plane;
                        let k = sv.data()[c] * inv_std[c];
                        for p in base..base + plane {
                            let gp = g.data()[p];
                            dx.data_mut()[p] = gp * k;
                            dscale[c] = dscale[c] + gp * (xv.data()[p] - mean[c]) * inv_std[c];
                            dshift[c] = dshift[c] + gp;
                        }
                    }
                }
                acc(*x, dx)?;
                acc(*scale, Tensor::from_vec(sv.shape(), dscale)?)?;
                acc(*shift, Tensor::from_vec(self.val(*shift).shape(), dshift)?)?;
            }
            Op::Relu { x } => {
                let d = g.zip_map(
                    self.val(*x),
                    |gi, xi| if xi > T::zero() { gi } else { T::zero() },
                )?;
                acc(*x, d)?;
            }
            Op::Sigmoid { x } => {
                let y = &self.nodes[id].value;
                acc(*x, g.zip_map(y, |gi, yi| gi * yi * (T::one() - yi))?)?;
            }
            Op::Add { a, b } => {
                acc(*a, g.clone())?;
                acc(*b, reduce_to(g, self.val(*b).shape()))?;
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.val(*a), self.val(*b));
                acc(*a, tensor::mul(g, bv)?)?;
                let gb = g.zip_map(av, |gi, ai| gi * ai)?;
                acc(*b, reduce_to(&gb, bv.shape()))?;
            }
            Op::Scale { x, s } => acc(*x, tensor::scale(g, *s))?,
            Op::Sum { x } => {
                acc(*x, Tensor::full(self.val(*x).shape(), g.data()[0]))?;
            }
            Op::AvgPool { x } => {
                acc(*x, tensor::adaptive_pool_backward(g, self.val(*x).shape())?)?;
            }
            Op::Upsample { x } => {
                acc(*x, tensor::bilinear_backward(g, self.val(*x).shape())?)?;
            }
            Op::ContextPool { x, logits } => {
                let (dx, dl) = tensor::context_pool_backward(g, self.val(*x), self.val(*logits))?;
                acc(*x, dx)?;
                acc(*logits, dl)?;
            }
            Op::Slice { x, start } => {
                let xs = self.val(*x).shape();
                let gs = g.shape();
                let mut d = Tensor::zeros(xs);
                let plane = xs.plane();
                for n in 0..xs.batch {
                    let dst = (n * xs.channels + start) * plane;
                    let src = n * gs.channels * plane;
                    let len = gs.channels * plane;
                    d.data_mut()[dst..dst + len].copy_from_slice(&g.data()[src..src + len]);
                }
                acc(*x, d)?;
            }
            Op::Concat { xs } => {
                let sizes: Vec<usize> = xs.iter().map(|&i| self.val(i).shape().channels).collect();
                for (&i, part) in xs.iter().zip(tensor::channel_split_sizes(g, &sizes)?) {
                    acc(i, part)?;
                }
            }
            Op::Shuffle { x, groups } => {
                let c = g.shape().channels;
                acc(*x, tensor::channel_shuffle(g, c / groups)?)?;
            }
            Op::BatchItem { x, n } => {
                let xs = self.val(*x).shape();
                let mut d = Tensor::zeros(xs);
                let per = xs.numel() / xs.batch;
                d.data_mut()[n * per..(n + 1) * per].copy_from_slice(g.data());
                acc(*x, d)?;
            }
            Op::BatchStack { xs } => {
                let mut offset = 0;
                for &i in xs {
                    let s = self.val(i).shape();
                    let part = g.data()[offset..offset + s.numel()].to_vec();
                    offset += s.numel();
                    acc(i, Tensor::from_vec(s, part)?)?;
                }
            }
            Op::Aggregate { bank, coeffs } => {
                let bv = self.val(*bank);
                let cv = self.val(*coeffs);
                let len = g.numel();
                let mut dbank = vec![T::zero(); bv.numel()];
                let mut dc = vec![T::zero(); cv.numel()];
                for (i, &a) in cv.data().iter().enumerate() {
                    let entry = &bv.data()[i * len..(i + 1) * len];
                    let mut dot = T::zero();
                    for k in 0..len {
                        dbank[i * len + k] = a * g.data()[k];
                        dot = dot + entry[k] * g.data()[k];
                    }
                    dc[i] = dot;
                }
                acc(*bank, Tensor::from_vec(bv.shape(), dbank)?)?;
                acc(*coeffs, Tensor::from_vec(cv.shape(), dc)?)?;
            }
        }
        Ok(())
    }
}

/// Sums a full-shape gradient down to a broadcast operand's shape.
fn reduce_to<T: Real>(g: &Tensor<T>, target: Shape) -> Tensor<T> {
    let s = g.shape();
    if s == target {
        return g.clone();
    }
    let mut out = Tensor::zeros(target);
    let plane = s.plane();
    for n in 0..s.batch {
        let tn = if target.batch == 1 { 0 } else { n };
        for c in 0..s.channels {
            let base = (n * s.channels + c) * plane;
            let part: T = g.data()[base..base + plane].iter().copied().sum();
            let k = tn * s.channels + c;
            out.data_mut()[k] = out.data()[k] + part;
        }
    }
    out
}

impl<T: Real> Graph<T> for Tape<T> {
    type Value = Var;

    fn shape(&self, v: &Var) -> Shape {
        v.shape
    }

    fn param(&mut self, p: &Param<T>) -> Result<Var> {
        if let Some(&id) = self.params.get(&p.id()) {
            return Ok(Var {
                id,
                shape: self.nodes[id].value.shape(),
            });
        }
        let v = self.push(Op::Leaf, p.value.clone());
        self.params.insert(p.id(), v.id);
        Ok(v)
    }

    fn constant(&mut self, t: &Tensor<T>) -> Result<Var> {
        Ok(self.push(Op::Constant, t.clone()))
    }

    fn conv2d(&mut self, x: &Var, w: &Var, bias: Option<&Var>, spec: &ConvSpec) -> Result<Var> {
        let y = tensor::conv2d(self.val(x.id), self.val(w.id), spec)?;
        let y = add_bias(y, bias.map(|b| self.val(b.id)))?;
        Ok(self.push(
            Op::Conv {
                x: x.id,
                w: w.id,
                b: bias.map(|b| b.id),
                spec: *spec,
            },
            y,
        ))
    }

    fn fully_connected(&mut self, x: &Var, w: &Var, bias: Option<&Var>) -> Result<Var> {
        let y =
            tensor::fully_connected(self.val(x.id), self.val(w.id), bias.map(|b| self.val(b.id)))?;
        Ok(self.push(
            Op::Linear {
                x: x.id,
                w: w.id,
                b: bias.map(|b| b.id),
            },
            y,
        ))
    }

    fn batchnorm(
        &mut self,
        x: &Var,
        scale: &Var,
        shift: &Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        let y = tensor::batchnorm_inference(
            self.val(x.id),
            self.val(scale.id).data(),
            self.val(shift.id).data(),
            mean,
            var,
            eps,
        )?;
        let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        Ok(self.push(
            Op::BatchNorm {
                x: x.id,
                scale: scale.id,
                shift: shift.id,
                mean: mean.to_vec(),
                inv_std,
            },
            y,
        ))
    }

    fn relu(&mut self, x: &Var) -> Result<Var> {
        let y = tensor::relu(self.val(x.id));
        Ok(self.push(Op::Relu { x: x.id }, y))
    }

    fn sigmoid(&mut self, x: &Var) -> Result<Var> {
        let y = tensor::sigmoid(self.val(x.id));
        Ok(self.push(Op::Sigmoid { x: x.id }, y))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = tensor::add(self.val(a.id), self.val(b.id))?;
        Ok(self.push(Op::Add { a: a.id, b: b.id }, y))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = tensor::mul(self.val(a.id), self.val(b.id))?;
        Ok(self.push(Op::Mul { a: a.id, b: b.id }, y))
    }

    fn scale(&mut self, x: &Var, s: T) -> Result<Var> {
        let y = tensor::scale(self.val(x.id), s);
        Ok(self.push(Op::Scale { x: x.id, s }, y))
    }

    fn sum(&mut self, x: &Var) -> Result<Var> {
        let y = Tensor::scalar(tensor::sum(self.val(x.id)));
        Ok(self.push(Op::Sum { x: x.id }, y))
    }

    fn global_avg_pool(&mut self, x: &Var) -> Result<Var> {
        self.adaptive_avg_pool(x, (1, 1))
    }

    fn adaptive_avg_pool(&mut self, x: &Var, out: (usize, usize)) -> Result<Var> {
        let y = tensor::adaptive_avg_pool(self.val(x.id), out)?;
        Ok(self.push(Op::AvgPool { x: x.id }, y))
    }

    fn upsample(&mut self, x: &Var, out: (usize, usize)) -> Result<Var> {
        let y = tensor::bilinear_upsample(self.val(x.id), out)?;
        Ok(self.push(Op::Upsample { x: x.id }, y))
    }

    fn context_pool(&mut self, x: &Var, logits: &Var, out: (usize, usize)) -> Result<Var> {
        let y = tensor::context_pool(self.val(x.id), self.val(logits.id), out)?;
        Ok(self.push(
            Op::ContextPool {
                x: x.id,
                logits: logits.id,
            },
            y,
        ))
    }

    fn split(&mut self, x: &Var, sizes: &[usize]) -> Result<Vec<Var>> {
        let parts = tensor::channel_split_sizes(self.val(x.id), sizes)?;
        let mut start = 0;
        let mut out = Vec::with_capacity(parts.len());
        for (part, &k) in parts.into_iter().zip(sizes) {
            out.push(self.push(Op::Slice { x: x.id, start }, part));
            start += k;
        }
        Ok(out)
    }

    fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let vals: Vec<Tensor<T>> = xs.iter().map(|v| self.val(v.id).clone()).collect();
        let y = tensor::channel_concat(&vals)?;
        Ok(self.push(
            Op::Concat {
                xs: xs.iter().map(|v| v.id).collect(),
            },
            y,
        ))
    }

    fn shuffle(&mut self, x: &Var, groups: usize) -> Result<Var> {
        let y = tensor::channel_shuffle(self.val(x.id), groups)?;
        Ok(self.push(Op::Shuffle { x: x.id, groups }, y))
    }

    fn batch_item(&mut self, x: &Var, n: usize) -> Result<Var> {
        let y = self.val(x.id).batch_item(n)?;
        Ok(self.push(Op::BatchItem { x: x.id, n }, y))
    }

    fn batch_stack(&mut self, xs: &[Var]) -> Result<Var> {
        let vals: Vec<Tensor<T>> = xs.iter().map(|v| self.val(v.id).clone()).collect();
        let y = Tensor::stack_batch(&vals)?;
        Ok(self.push(
            Op::BatchStack {
                xs: xs.iter().map(|v| v.id).collect(),
            },
            y,
        ))
    }

    fn aggregate(&mut self, bank: &Var, coeffs: &Var) -> Result<Var> {
        check_coeffs(coeffs.shape)?;
        let y = tensor::bank_combine(self.val(bank.id), self.val(coeffs.id).data())?;
        Ok(self.push(
            Op::Aggregate {
                bank: bank.id,
                coeffs: coeffs.id,
            },
            y,
        ))
    }
}
