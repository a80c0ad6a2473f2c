//! Reverse-mode differentiation over a linear tape of tensor operations.
//!
//! Every op appends a node holding its forward value; `backward` walks the tape
//! in reverse and accumulates gradients into nodes that require them. Shape
//! errors inside the tape are programmer errors and panic; the public wrappers
//! in `attention` validate user-provided shapes first.

use rand::Rng;

use super::real::Real;
use super::tensor::{axis_extents, gemm_nn, gemm_nt, gemm_tn, softmax_rows_inplace, strides, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<R> {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddBias { a: usize, bias: usize },
    AddBroadcast { a: usize, b: usize },
    AddConst { a: usize },
    Scale { a: usize, factor: R },
    Gelu { a: usize },
    Relu { a: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, mean: Vec<R>, rstd: Vec<R> },
    Permute { a: usize, axes: Vec<usize> },
    Reshape { a: usize },
    Bmm { a: usize, b: usize, batch: usize, m: usize, k: usize, n: usize, trans_b: bool },
    Softmax { a: usize },
    MeanAxis { a: usize, axis: usize },
    Concat { parts: Vec<usize>, widths: Vec<usize> },
    ConcatRows { parts: Vec<usize> },
    Gather { a: usize, rows: Vec<usize> },
    FillLast { a: usize, slots: Vec<usize> },
    Dropout { a: usize, mask: Vec<R> },
    CrossEntropy { logits: usize, targets: Vec<usize>, probs: Vec<R> },
    SumAll { a: usize },
}

#[derive(Debug)]
struct Node<R> {
    value: Tensor<R>,
    op: Op<R>,
    needs_grad: bool,
}

/// Records a forward computation and replays it backwards.
#[derive(Debug, Default)]
pub struct Tape<R> {
    nodes: Vec<Node<R>>,
    grads: Vec<Option<Vec<R>>>,
}

const LN_EPS: f64 = 1e-5;

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>, inputs: &[usize]) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable input; its gradient is available after `backward`.
    pub fn param(&mut self, value: Tensor<R>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[R]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Product of `a [.., k]` (leading axes flattened) with `b [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let ash = self.shape(a).to_vec();
        let bsh = self.shape(b);
        assert_eq!(bsh.len(), 2, "matmul rhs must be 2-d");
        let k = *ash.last().expect("matmul lhs rank >= 1");
        assert_eq!(bsh[0], k, "matmul inner dims {:?} x {:?}", ash, bsh);
        let n = bsh[1];
        let m = self.value(a).len() / k.max(1);
        let mut out = vec![R::zero(); m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n, false);
        let mut shape = ash;
        *shape.last_mut().unwrap() = n;
        let value = Tensor::new(shape, out).unwrap();
        self.push(value, Op::MatMul { a: a.0, b: b.0, m, k, n }, &[a.0, b.0])
    }

    /// `x W + b` for `x [.., k]`, `W [k, n]`, `b [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data).unwrap();
        self.push(value, Op::Add { a: a.0, b: b.0 }, &[a.0, b.0])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes");
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data).unwrap();
        self.push(value, Op::Mul { a: a.0, b: b.0 }, &[a.0, b.0])
    }

    /// Adds a `[n]` vector to every row of `a [.., n]`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let n = *self.shape(a).last().unwrap();
        assert_eq!(self.shape(bias), &[n], "bias shape");
        let b = self.value(bias).data().to_vec();
        let mut value = self.value(a).clone();
        for row in value.data_mut().chunks_exact_mut(n) {
            for (v, &bb) in row.iter_mut().zip(&b) {
                *v = *v + bb;
            }
        }
        self.push(value, Op::AddBias { a: a.0, bias: bias.0 }, &[a.0, bias.0])
    }

    /// Adds `b` broadcast against `a`; `b` has the same rank with each extent equal
    /// to `a`'s or 1.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Var {
        let ash = self.shape(a).to_vec();
        let bsh = self.shape(b).to_vec();
        assert_eq!(ash.len(), bsh.len(), "broadcast rank");
        for (x, y) in ash.iter().zip(&bsh) {
            assert!(*y == *x || *y == 1, "broadcast {:?} onto {:?}", bsh, ash);
        }
        let map = broadcast_map(&ash, &bsh);
        let bd = self.value(b).data();
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(&map)
            .map(|(&x, &j)| x + bd[j])
            .collect();
        let value = Tensor::new(ash, data).unwrap();
        self.push(value, Op::AddBroadcast { a: a.0, b: b.0 }, &[a.0, b.0])
    }

    /// Adds a constant tensor of the same shape (e.g. an additive attention mask).
    pub fn add_const(&mut self, a: Var, c: &Tensor<R>) -> Var {
        assert_eq!(self.shape(a), c.shape(), "add_const shapes");
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(c.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(c.shape().to_vec(), data).unwrap();
        self.push(value, Op::AddConst { a: a.0 }, &[a.0])
    }

    pub fn scale(&mut self, a: Var, factor: R) -> Var {
        let mut value = self.value(a).clone();
        for v in value.data_mut() {
            *v = *v * factor;
        }
        self.push(value, Op::Scale { a: a.0, factor }, &[a.0])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for v in value.data_mut() {
            *v = gelu(*v);
        }
        self.push(value, Op::Gelu { a: a.0 }, &[a.0])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for v in value.data_mut() {
            *v = v.max(R::zero());
        }
        self.push(value, Op::Relu { a: a.0 }, &[a.0])
    }

    /// Layer normalization over the trailing axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let d = *self.shape(x).last().unwrap();
        assert_eq!(self.shape(gamma), &[d]);
        assert_eq!(self.shape(beta), &[d]);
        let eps = R::from_f64_lossy(LN_EPS);
        let inv_d = R::one() / R::from_usize(d).unwrap();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let xv = self.value(x);
        let rows = xv.len() / d;
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        let mut out = vec![R::zero(); xv.len()];
        for (row, o) in xv.data().chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            let mu = row.iter().copied().sum::<R>() * inv_d;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<R>() * inv_d;
            let rs = R::one() / (var + eps).sqrt();
            for i in 0..d {
                o[i] = (row[i] - mu) * rs * g[i] + bt[i];
            }
            mean.push(mu);
            rstd.push(rs);
        }
        let value = Tensor::new(xv.shape().to_vec(), out).unwrap();
        self.push(
            value,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                mean,
                rstd,
            },
            &[x.0, gamma.0, beta.0],
        )
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Var {
        let value = permute_tensor(self.value(a), axes);
        self.push(
            value,
            Op::Permute {
                a: a.0,
                axes: axes.to_vec(),
            },
            &[a.0],
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let value = self.value(a).clone().reshape(shape).expect("reshape");
        self.push(value, Op::Reshape { a: a.0 }, &[a.0])
    }

    /// Batched product: `a [B, m, k]` with `b [B, k, n]`, or with `b [B, n, k]`
    /// transposed when `trans_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let ash = self.shape(a).to_vec();
        let bsh = self.shape(b).to_vec();
        assert_eq!(ash.len(), 3, "bmm lhs rank");
        assert_eq!(bsh.len(), 3, "bmm rhs rank");
        assert_eq!(ash[0], bsh[0], "bmm batch");
        let (batch, m, k) = (ash[0], ash[1], ash[2]);
        let n = if trans_b {
            assert_eq!(bsh[2], k, "bmm inner");
            bsh[1]
        } else {
            assert_eq!(bsh[1], k, "bmm inner");
            bsh[2]
        };
        let mut out = vec![R::zero(); batch * m * n];
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        for i in 0..batch {
            let aa = &ad[i * m * k..(i + 1) * m * k];
            let bb = &bd[i * k * n..(i + 1) * k * n];
            let oo = &mut out[i * m * n..(i + 1) * m * n];
            if trans_b {
                gemm_nt(aa, bb, oo, m, k, n, false);
            } else {
                gemm_nn(aa, bb, oo, m, k, n, false);
            }
        }
        let value = Tensor::new(vec![batch, m, n], out).unwrap();
        self.push(
            value,
            Op::Bmm {
                a: a.0,
                b: b.0,
                batch,
                m,
                k,
                n,
                trans_b,
            },
            &[a.0, b.0],
        )
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let n = *self.shape(a).last().unwrap();
        let mut value = self.value(a).clone();
        softmax_rows_inplace(value.data_mut(), n);
        self.push(value, Op::Softmax { a: a.0 }, &[a.0])
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Var {
        let shape = self.shape(a).to_vec();
        let (outer, n, inner) = axis_extents(&shape, axis);
        let inv = R::one() / R::from_usize(n).unwrap();
        let src = self.value(a).data();
        let mut out = vec![R::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let row = &src[(o * n + j) * inner..(o * n + j + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(row) {
                    *d = *d + s;
                }
            }
        }
        for v in out.iter_mut() {
            *v = *v * inv;
        }
        let mut oshape = shape;
        oshape.remove(axis);
        let value = Tensor::new(oshape, out).unwrap();
        self.push(value, Op::MeanAxis { a: a.0, axis }, &[a.0])
    }

    /// Concatenation along the trailing axis.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let lead: Vec<usize> = {
            let s = self.shape(parts[0]);
            s[..s.len() - 1].to_vec()
        };
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let s = self.shape(p);
                assert_eq!(&s[..s.len() - 1], lead.as_slice(), "concat leading dims");
                *s.last().unwrap()
            })
            .collect();
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, out).unwrap();
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(
            value,
            Op::Concat {
                parts: ids.clone(),
                widths,
            },
            &ids,
        )
    }

    /// Concatenation along the leading axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let tail = self.shape(parts[0])[1..].to_vec();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            assert_eq!(&s[1..], tail.as_slice(), "concat_rows trailing dims");
            rows += s[0];
            out.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        let value = Tensor::new(shape, out).unwrap();
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(value, Op::ConcatRows { parts: ids.clone() }, &ids)
    }

    /// Selects (possibly repeated) slices along the leading axis.
    pub fn gather(&mut self, a: Var, rows: &[usize]) -> Var {
        let shape = self.shape(a).to_vec();
        let w: usize = shape[1..].iter().product();
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            assert!(r < shape[0], "gather row {r} out of {}", shape[0]);
            out.extend_from_slice(&src[r * w..(r + 1) * w]);
        }
        let mut oshape = shape;
        oshape[0] = rows.len();
        let value = Tensor::new(oshape, out).unwrap();
        self.push(
            value,
            Op::Gather {
                a: a.0,
                rows: rows.to_vec(),
            },
            &[a.0],
        )
    }

    /// Overwrites the given trailing-axis slots of every row with `fill`; those
    /// slots receive no gradient.
    pub fn fill_last(&mut self, a: Var, slots: &[usize], fill: R) -> Var {
        let n = *self.shape(a).last().unwrap();
        let mut value = self.value(a).clone();
        for row in value.data_mut().chunks_exact_mut(n) {
            for &s in slots {
                row[s] = fill;
            }
        }
        self.push(
            value,
            Op::FillLast {
                a: a.0,
                slots: slots.to_vec(),
            },
            &[a.0],
        )
    }

    /// Inverted dropout; identity when `p == 0`.
    pub fn dropout<G: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut G) -> Var {
        if p <= 0.0 {
            return a;
        }
        let keep = R::from_f64_lossy(1.0 / (1.0 - p));
        let mask: Vec<R> = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < p { R::zero() } else { keep })
            .collect();
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data).unwrap();
        self.push(value, Op::Dropout { a: a.0, mask }, &[a.0])
    }

    /// Mean over rows of `-log softmax(logits)[target]` for `logits [N, C]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let shape = self.shape(logits).to_vec();
        assert_eq!(shape.len(), 2, "cross_entropy expects [N, C]");
        let (rows, c) = (shape[0], shape[1]);
        assert_eq!(rows, targets.len(), "one target per row");
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = R::zero();
        for (r, &t) in targets.iter().enumerate() {
            assert!(t < c, "target {t} out of {c} classes");
            let row = &mut probs[r * c..(r + 1) * c];
            let max = row.iter().fold(R::neg_infinity(), |m, &v| m.max(v));
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<R>().ln() + max;
            loss = loss + (lse - row[t]);
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let loss = loss / R::from_usize(rows.max(1)).unwrap();
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                probs,
            },
            &[logits.0],
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<R>();
        self.push(Tensor::scalar(s), Op::SumAll { a: a.0 }, &[a.0])
    }

    /// Back-propagates from a scalar output.
    pub fn backward(&mut self, out: Var) {
        assert_eq!(self.value(out).len(), 1, "backward needs a scalar output");
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[out.0] = Some(vec![R::one()]);
        let Tape { nodes, grads } = self;
        for i in (0..=out.0).rev() {
            if matches!(nodes[i].op, Op::Leaf) || !nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop(nodes, grads, i, &g);
        }
    }
}

fn gelu<R: Real>(x: R) -> R {
    let c = R::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let k = R::from_f64_lossy(0.044715);
    let half = R::from_f64_lossy(0.5);
    half * x * (R::one() + fast_tanh(c * (x + k * x * x * x)))
}

/// `tanh` through a single `exp`; saturates cleanly at both ends.
fn fast_tanh<R: Real>(u: R) -> R {
    let two = R::from_f64_lossy(2.0);
    R::one() - two / ((two * u).exp() + R::one())
}

fn gelu_grad<R: Real>(x: R) -> R {
    let c = R::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let k = R::from_f64_lossy(0.044715);
    let half = R::from_f64_lossy(0.5);
    let three = R::from_f64_lossy(3.0);
    let t = fast_tanh(c * (x + k * x * x * x));
    half * (R::one() + t) + half * x * (R::one() - t * t) * c * (R::one() + three * k * x * x)
}

/// For every element of a tensor of `shape`, the flat index of the broadcast
/// source element in `bshape`.
fn broadcast_map(shape: &[usize], bshape: &[usize]) -> Vec<usize> {
    let bstr = strides(bshape);
    let eff: Vec<usize> = bshape
        .iter()
        .zip(&bstr)
        .map(|(&n, &s)| if n == 1 { 0 } else { s })
        .collect();
    let total: usize = shape.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; shape.len()];
    let mut off = 0usize;
    for _ in 0..total {
        out.push(off);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            off += eff[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            off -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    out
}

pub(crate) fn permute_tensor<R: Real>(t: &Tensor<R>, axes: &[usize]) -> Tensor<R> {
    let shape = t.shape();
    assert_eq!(axes.len(), shape.len(), "permute rank");
    let in_str = strides(shape);
    let oshape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let ostr_in: Vec<usize> = axes.iter().map(|&a| in_str[a]).collect();
    let total = t.len();
    let src = t.data();
    let mut out = Vec::with_capacity(total);
    if total > 0 {
        let rank = oshape.len();
        let last = rank - 1;
        let (inner_n, inner_s) = (oshape[last], ostr_in[last]);
        let mut idx = vec![0usize; rank];
        let mut off = 0usize;
        let outer = total / inner_n;
        for _ in 0..outer {
            if inner_s == 1 {
                out.extend_from_slice(&src[off..off + inner_n]);
            } else {
                for j in 0..inner_n {
                    out.push(src[off + j * inner_s]);
                }
            }
            for ax in (0..last).rev() {
                idx[ax] += 1;
                off += ostr_in[ax];
                if idx[ax] < oshape[ax] {
                    break;
                }
                off -= ostr_in[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
    }
    Tensor::new(oshape, out).unwrap()
}

fn accum<'a, R: Real>(
    grads: &'a mut [Option<Vec<R>>],
    nodes: &[Node<R>],
    id: usize,
) -> Option<&'a mut Vec<R>> {
    if !nodes[id].needs_grad {
        return None;
    }
    let n = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![R::zero(); n]))
}

fn add_into<R: Real>(dst: &mut [R], src: &[R]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn backprop<R: Real>(nodes: &[Node<R>], grads: &mut [Option<Vec<R>>], i: usize, g: &[R]) {
    match &nodes[i].op {
        Op::Leaf => {}
        &Op::MatMul { a, b, m, k, n } => {
            if let Some(ga) = accum(grads, nodes, a) {
                gemm_nt(g, nodes[b].value.data(), ga, m, n, k, true);
            }
            if let Some(gb) = accum(grads, nodes, b) {
                gemm_tn(nodes[a].value.data(), g, gb, k, m, n, true);
            }
        }
        &Op::Add { a, b } => {
            if let Some(ga) = accum(grads, nodes, a) {
                add_into(ga, g);
            }
            if let Some(gb) = accum(grads, nodes, b) {
                add_into(gb, g);
            }
        }
        &Op::Mul { a, b } => {
            if let Some(ga) = accum(grads, nodes, a) {
                for ((d, &gg), &y) in ga.iter_mut().zip(g).zip(nodes[b].value.data()) {
                    *d = *d + gg * y;
                }
            }
            if let Some(gb) = accum(grads, nodes, b) {
                for ((d, &gg), &x) in gb.iter_mut().zip(g).zip(nodes[a].value.data()) {
                    *d = *d + gg * x;
                }
            }
        }
        &Op::AddBias { a, bias } => {
            if let Some(ga) = accum(grads, nodes, a) {
                add_into(ga, g);
            }
            let n = nodes[bias].value.len();
            if let Some(gb) = accum(grads, nodes, bias) {
                for row in g.chunks_exact(n) {
                    add_into(gb, row);
                }
            }
        }
        &Op::AddBroadcast { a, b } => {
            if let Some(ga) = accum(grads, nodes, a) {
                add_into(ga, g);
            }
            if nodes[b].needs_grad {
                let map = broadcast_map(nodes[a].value.shape(), nodes[b].value.shape());
                let gb = accum(grads, nodes, b).unwrap();
                for (&gg, &j) in g.iter().zip(&map) {
                    gb[j] = gb[j] + gg;
                }
            }
        }
        &Op::AddConst { a } => {
            if let Some(ga) = accum(grads, nodes, a) {
                add_into(ga, g);
            }
        }
        &Op::Scale { a, factor } => {
            if let Some(ga) = accum(grads, nodes, a) {
                for (d, &gg) in ga.iter_mut().zip(g) {
                    *d = *d + gg * factor;
                }
            }
        }
        &Op::Gelu { a } => {
            if let Some(ga) = accum(grads, nodes, a) {
                for ((d, &gg), &x) in ga.iter_mut().zip(g).zip(nodes[a].value.data()) {
                    *d = *d + gg * gelu_grad(x);
                }
            }
        }
        &Op::Relu { a } => {
            if let Some(ga) = accum(grads, nodes, a) {
                for ((d, &gg), &x) in ga.iter_mut().zip(g).zip(nodes[a].value.data()) {
                    if x > R::zero() {
                        *d = *d + gg;
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            mean,
            rstd,
        } => {
            let (x, gamma, beta) = (*x, *gamma, *beta);
            let d = nodes[gamma].value.len();
            let gm = nodes[gamma].value.data();
            let xv = nodes[x].value.data();
            let inv_d = R::one() / R::from_usize(d).unwrap();
            if nodes[gamma].needs_grad || nodes[beta].needs_grad {
                let mut dg = vec![R::zero(); d];
                let mut db = vec![R::zero(); d];
                for (r, (row, gr)) in xv.chunks_exact(d).zip(g.chunks_exact(d)).enumerate() {
                    for j in 0..d {
                        let xh = (row[j] - mean[r]) * rstd[r];
                        dg[j] = dg[j] + gr[j] * xh;
                        db[j] = db[j] + gr[j];
                    }
                }
                if let Some(gg) = accum(grads, nodes, gamma) {
                    add_into(gg, &dg);
                }
                if let Some(gb) = accum(grads, nodes, beta) {
                    add_into(gb, &db);
                }
            }
            if let Some(gx) = accum(grads, nodes, x) {
                let mut dxh = vec![R::zero(); d];
                for (r, ((row, gr), out)) in xv
                    .chunks_exact(d)
                    .zip(g.chunks_exact(d))
                    .zip(gx.chunks_exact_mut(d))
                    .enumerate()
                {
                    let mut m1 = R::zero();
                    let mut m2 = R::zero();
                    for j in 0..d {
                        dxh[j] = gr[j] * gm[j];
                        let xh = (row[j] - mean[r]) * rstd[r];
                        m1 = m1 + dxh[j];
                        m2 = m2 + dxh[j] * xh;
                    }
                    m1 = m1 * inv_d;
                    m2 = m2 * inv_d;
                    for j in 0..d {
                        let xh = (row[j] - mean[r]) * rstd[r];
                        out[j] = out[j] + rstd[r] * (dxh[j] - m1 - xh * m2);
                    }
                }
            }
        }
        Op::Permute { a, axes } => {
            let a = *a;
            if nodes[a].needs_grad {
                let mut inverse = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inverse[ax] = i;
                }
                let gt = Tensor::new(nodes[i].value.shape().to_vec(), g.to_vec()).unwrap();
                let back = permute_tensor(&gt, &inverse);
                add_into(accum(grads, nodes, a).unwrap(), back.data());
            }
        }
        &Op::Reshape { a } => {
            if let Some(ga) = accum(grads, nodes, a) {
                add_into(ga, g);
            }
        }
        &Op::Bmm {
            a,
            b,
            batch,
            m,
            k,
            n,
            trans_b,
        } => {
            if let Some(ga) = accum(grads, nodes, a) {
                let bd = nodes[b].value.data();
                for t in 0..batch {
                    let gg = &g[t * m * n..(t + 1) * m * n];
                    let bb = &bd[t * k * n..(t + 1) * k * n];
                    let out = &mut ga[t * m * k..(t + 1) * m * k];
                    if trans_b {
                        gemm_nn(gg, bb, out, m, n, k, true);
                    } else {
                        gemm_nt(gg, bb, out, m, n, k, true);
                    }
                }
            }
            if let Some(gb) = accum(grads, nodes, b) {
                let ad = nodes[a].value.data();
                for t in 0..batch {
                    let gg = &g[t * m * n..(t + 1) * m * n];
                    let aa = &ad[t * m * k..(t + 1) * m * k];
                    let out = &mut gb[t * k * n..(t + 1) * k * n];
                    if trans_b {
                        gemm_tn(gg, aa, out, n, m, k, true);
                    } else {
                        gemm_tn(aa, gg, out, k, m, n, true);
                    }
                }
            }
        }
        &Op::Softmax { a } => {
            if let Some(ga) = accum(grads, nodes, a) {
                let y = nodes[i].value.data();
                let n = *nodes[i].value.shape().last().unwrap();
                for ((yr, gr), out) in y
                    .chunks_exact(n)
                    .zip(g.chunks_exact(n))
                    .zip(ga.chunks_exact_mut(n))
                {
                    let dot = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum::<R>();
                    for j in 0..n {
                        out[j] = out[j] + yr[j] * (gr[j] - dot);
                    }
                }
            }
        }
        &Op::MeanAxis { a, axis } => {
            if let Some(ga) = accum(grads, nodes, a) {
                let (outer, n, inner) = axis_extents(nodes[a].value.shape(), axis);
                let inv = R::one() / R::from_usize(n).unwrap();
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for j in 0..n {
                        let dst = &mut ga[(o * n + j) * inner..(o * n + j + 1) * inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = *d + s * inv;
                        }
                    }
                }
            }
        }
        Op::Concat { parts, widths } => {
            let total: usize = widths.iter().sum();
            let rows = g.len() / total.max(1);
            let mut off = 0;
            for (&p, &w) in parts.iter().zip(widths) {
                if let Some(gp) = accum(grads, nodes, p) {
                    for r in 0..rows {
                        add_into(
                            &mut gp[r * w..(r + 1) * w],
                            &g[r * total + off..r * total + off + w],
                        );
                    }
                }
                off += w;
            }
        }
        Op::ConcatRows { parts } => {
            let mut off = 0;
            for &p in parts {
                let len = nodes[p].value.len();
                if let Some(gp) = accum(grads, nodes, p) {
                    add_into(gp, &g[off..off + len]);
                }
                off += len;
            }
        }
        Op::Gather { a, rows } => {
            let a = *a;
            if let Some(ga) = accum(grads, nodes, a) {
                let w: usize = nodes[a].value.shape()[1..].iter().product();
                for (k, &r) in rows.iter().enumerate() {
                    add_into(&mut ga[r * w..(r + 1) * w], &g[k * w..(k + 1) * w]);
                }
            }
        }
        Op::FillLast { a, slots } => {
            let a = *a;
            if let Some(ga) = accum(grads, nodes, a) {
                let n = *nodes[a].value.shape().last().unwrap();
                for (out, gr) in ga.chunks_exact_mut(n).zip(g.chunks_exact(n)) {
                    for j in 0..n {
                        if !slots.contains(&j) {
                            out[j] = out[j] + gr[j];
                        }
                    }
                }
            }
        }
        Op::Dropout { a, mask } => {
            if let Some(ga) = accum(grads, nodes, *a) {
                for ((d, &gg), &m) in ga.iter_mut().zip(g).zip(mask) {
                    *d = *d + gg * m;
                }
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            if let Some(gl) = accum(grads, nodes, *logits) {
                let c = nodes[*logits].value.shape()[1];
                let scale = g[0] / R::from_usize(targets.len().max(1)).unwrap();
                for (r, &t) in targets.iter().enumerate() {
                    for j in 0..c {
                        let mut d = probs[r * c + j];
                        if j == t {
                            d = d - R::one();
                        }
                        gl[r * c + j] = gl[r * c + j] + d * scale;
                    }
                }
            }
        }
        &Op::SumAll { a } => {
            if let Some(ga) = accum(grads, nodes, a) {
                for d in ga.iter_mut() {
                    *d = *d + g[0];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn permute_roundtrip_and_values() {
        let x = t(&[2, 3, 4], &(0..24).map(|v| v as f64).collect::<Vec<_>>());
        let p = permute_tensor(&x, &[2, 0, 1]);
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.at(&[3, 1, 2]), x.at(&[1, 2, 3]));
        let back = permute_tensor(&p, &[1, 2, 0]);
        assert_eq!(back, x);
    }

    #[test]
    fn broadcast_map_middle_axis() {
        let m = broadcast_map(&[2, 3, 2], &[2, 1, 2]);
        assert_eq!(m, vec![0, 1, 0, 1, 0, 1, 2, 3, 2, 3, 2, 3]);
        let m = broadcast_map(&[2, 3], &[1, 3]);
        assert_eq!(m, vec![0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1], &[3.0]));
        let y = tape.mul(x, x);
        let s = tape.sum_all(y);
        tape.backward(s);
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let c = tape.constant(t(&[2], &[5.0, 7.0]));
        let y = tape.mul(x, c);
        let s = tape.sum_all(y);
        tape.backward(s);
        assert_eq!(tape.grad(x).unwrap(), &[5.0, 7.0]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn cross_entropy_uniform_is_log_classes() {
        let mut tape = Tape::new();
        let z = tape.param(Tensor::<f64>::zeros(&[3, 20]));
        let l = tape.cross_entropy(z, &[0, 5, 19]);
        assert!((tape.value(l).data()[0] - 20f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fill_last_blocks_gradient() {
        let mut tape = Tape::new();
        let z = tape.param(t(&[1, 3], &[0.1, 0.2, 0.3]));
        let f = tape.fill_last(z, &[2], -1e9);
        let l = tape.cross_entropy(f, &[0]);
        tape.backward(l);
        assert_eq!(tape.grad(z).unwrap()[2], 0.0);
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        let mut tape = Tape::new();
        let mut rng = rand::thread_rng();
        let z = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
        let d = tape.dropout(z, 0.0, &mut rng);
        assert_eq!(d, z);
    }

    #[test]
    fn dropout_preserves_expectation() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::<f64>::full(&[100_000], 1.0));
        let d = tape.dropout(z, 0.2, &mut rng);
        let mean = tape.value(d).data().iter().sum::<f64>() / 100_000.0;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }
}
