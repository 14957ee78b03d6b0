use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{Float, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Matmul {
        a: Var,
        b: Var,
    },
    /// `b` broadcasts over the leading dims of `a`.
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        s: T,
    },
    Relu {
        a: Var,
    },
    Softmax {
        a: Var,
        axis: usize,
    },
    LayerNorm {
        a: Var,
        rstd: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    MaxOverAxis {
        a: Var,
        argmax: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Narrow {
        a: Var,
        axis: usize,
        start: usize,
    },
    Transpose {
        a: Var,
    },
    Reshape {
        a: Var,
    },
    MaskFill {
        a: Var,
        keep: Vec<bool>,
    },
    Sum {
        a: Var,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
    grad: Option<Vec<T>>,
}

/// Linear record of a forward computation, replayed in reverse by
/// [`Tape::backward`].
///
/// Nodes are appended as operations execute, so every node's inputs precede
/// it and reverse index order is a valid topological order.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    param_leaves: HashMap<ParamId, Var>,
}

/// `(outer, axis_len, inner)` strides for iterating along `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// out[m,n] += a[m,k] · b[k,n]
fn gemm_nn<T: Float>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[m,k] += g[m,n] · b[k,n]ᵀ
fn gemm_nt<T: Float>(g: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&gv, &bv) in grow.iter().zip(brow) {
                acc += gv * bv;
            }
            out[i * k + p] += acc;
        }
    }
}

/// out[k,n] += a[m,k]ᵀ · g[m,n]
fn gemm_tn<T: Float>(a: &[T], g: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

struct MatmulDims {
    batch: usize,
    a_batched: bool,
    b_batched: bool,
    m: usize,
    k: usize,
    n: usize,
    out_shape: Vec<usize>,
}

fn matmul_dims(sa: &[usize], sb: &[usize]) -> Result<MatmulDims> {
    let err = || Error::Dimension {
        op: "matmul",
        lhs: sa.to_vec(),
        rhs: sb.to_vec(),
    };
    if sa.len() < 2 || sb.len() < 2 || sa.len() > 3 || sb.len() > 3 {
        return Err(err());
    }
    let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
    let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
    if k != k2 {
        return Err(err());
    }
    let ba = &sa[..sa.len() - 2];
    let bb = &sb[..sb.len() - 2];
    let lead = match (ba.is_empty(), bb.is_empty()) {
        (true, true) => vec![],
        (false, true) => ba.to_vec(),
        (true, false) => bb.to_vec(),
        (false, false) if ba == bb => ba.to_vec(),
        _ => return Err(err()),
    };
    let batch = lead.iter().product();
    let mut out_shape = lead;
    out_shape.extend([m, n]);
    Ok(MatmulDims {
        batch,
        a_batched: !ba.is_empty(),
        b_batched: !bb.is_empty(),
        m,
        k,
        n,
        out_shape,
    })
}

/// Shape check for suffix broadcasting of `b` over `a`.
fn broadcasts(sa: &[usize], sb: &[usize]) -> bool {
    let nb: usize = sb.iter().product();
    nb == 1 || (sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb)
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_leaves: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            op,
            requires_grad,
            param: None,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Record an input; gradients are tracked if the tensor requires them.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let rg = t.requires_grad();
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, rg)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    /// Bind a stored parameter. Repeated calls with the same id return the
    /// same node, so a parameter used in several places accumulates once per
    /// use inside a single leaf gradient.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let t = store.get(id);
        let v = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad());
        self.nodes[v.0].param = Some(id);
        self.param_leaves.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.data.clone()).expect("tape node shape")
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.node(v).grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    // ---- primitives -------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = matmul_dims(&self.node(a).shape, &self.node(b).shape)?;
        let mut out = vec![T::zero(); d.batch.max(1) * d.m * d.n];
        {
            let (av, bv) = (&self.node(a).data, &self.node(b).data);
            for bi in 0..d.batch.max(1) {
                let ao = if d.a_batched { bi * d.m * d.k } else { 0 };
                let bo = if d.b_batched { bi * d.k * d.n } else { 0 };
                gemm_nn(
                    &av[ao..ao + d.m * d.k],
                    &bv[bo..bo + d.k * d.n],
                    d.m,
                    d.k,
                    d.n,
                    &mut out[bi * d.m * d.n..(bi + 1) * d.m * d.n],
                );
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(d.out_shape, out, Op::Matmul { a, b }, rg))
    }

    fn binary_broadcast(&mut self, a: Var, b: Var, op: &'static str) -> Result<(Var, Var)> {
        let (sa, sb) = (&self.node(a).shape, &self.node(b).shape);
        if broadcasts(sa, sb) {
            Ok((a, b))
        } else if broadcasts(sb, sa) {
            Ok((b, a))
        } else {
            Err(Error::Dimension {
                op,
                lhs: sa.clone(),
                rhs: sb.clone(),
            })
        }
    }

    /// Element-wise sum; the smaller operand broadcasts over leading dims.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.binary_broadcast(a, b, "add")?;
        let (av, bv) = (&self.node(a).data, &self.node(b).data);
        let nb = bv.len();
        let out = av.iter().enumerate().map(|(i, &x)| x + bv[i % nb]).collect();
        let shape = self.node(a).shape.clone();
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, Op::Add { a, b }, rg))
    }

    /// Element-wise product; the smaller operand broadcasts over leading dims.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.binary_broadcast(a, b, "mul")?;
        let (av, bv) = (&self.node(a).data, &self.node(b).data);
        let nb = bv.len();
        let out = av.iter().enumerate().map(|(i, &x)| x * bv[i % nb]).collect();
        let shape = self.node(a).shape.clone();
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.node(a).data.iter().map(|&x| x * s).collect();
        let shape = self.node(a).shape.clone();
        let rg = self.rg(&[a]);
        self.push(shape, out, Op::Scale { a, s }, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self
            .node(a)
            .data
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let shape = self.node(a).shape.clone();
        let rg = self.rg(&[a]);
        self.push(shape, out, Op::Relu { a }, rg)
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.node(a).shape.clone();
        if axis >= shape.len() {
            return Err(Error::Input(format!("softmax axis {axis} out of range for {shape:?}")));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let x = &self.node(a).data;
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| o * n * inner + j * inner + i;
                let max = (0..n).map(|j| x[idx(j)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..n {
                    let e = (x[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    out[idx(j)] = out[idx(j)] / total;
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(shape, out, Op::Softmax { a, axis }, rg))
    }

    /// Normalize over the last axis without affine terms. A constant row maps
    /// to zeros because of the epsilon in the denominator.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        const EPS: f64 = 1e-5;
        let shape = self.node(a).shape.clone();
        let d = *shape.last().expect("rank >= 1");
        let x = &self.node(a).data;
        let rows = x.len() / d;
        let inv_d = T::of(1.0 / d as f64);
        let mut out = vec![T::zero(); x.len()];
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let s = T::one() / (var + T::of(EPS)).sqrt();
            for (o, &v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
            rstd.push(s);
        }
        let rg = self.rg(&[a]);
        self.push(shape, out, Op::LayerNorm { a, rstd }, rg)
    }

    /// Summed cross-entropy `−Σ_rows Σ_c q_c log softmax(logits)_c` against a
    /// one-hot target with the same shape as `logits`.
    pub fn cross_entropy(&mut self, logits: Var, one_hot: &Tensor<T>) -> Result<Var> {
        let shape = &self.node(logits).shape;
        if one_hot.shape() != shape.as_slice() {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: shape.clone(),
                rhs: one_hot.shape().to_vec(),
            });
        }
        let c = *shape.last().expect("rank >= 1");
        let mut targets = Vec::with_capacity(one_hot.numel() / c);
        for (r, row) in one_hot.data().chunks(c).enumerate() {
            let ones: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == T::one())
                .map(|(i, _)| i)
                .collect();
            let zeros = row.iter().filter(|&&v| v == T::zero()).count();
            if ones.len() != 1 || zeros != c - 1 {
                return Err(Error::Validation(format!("target row {r} is not one-hot")));
            }
            targets.push(ones[0]);
        }
        self.cross_entropy_ids(logits, &targets)
    }

    /// Cross-entropy with class indices, one per row of `logits`.
    pub fn cross_entropy_ids(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.node(logits).shape.clone();
        let c = *shape.last().expect("rank >= 1");
        let x = &self.node(logits).data;
        let rows = x.len() / c;
        if targets.len() != rows {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: shape,
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Input(format!("target class {bad} outside [0, {c})")));
        }
        let mut probs = vec![T::zero(); x.len()];
        let mut loss = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            let row = &x[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let total: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + total.ln();
            loss += lse - row[t];
            for (p, &v) in probs[r * c..(r + 1) * c].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Gather rows of a `[V, d]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = &self.node(table).shape;
        if shape.len() != 2 {
            return Err(Error::Dimension {
                op: "embedding",
                lhs: shape.clone(),
                rhs: vec![ids.len()],
            });
        }
        if ids.is_empty() {
            return Err(Error::Input("embedding lookup of empty id sequence".into()));
        }
        let (v, d) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Input(format!("token id {bad} outside vocabulary of size {v}")));
        }
        let t = &self.node(table).data;
        let out = ids
            .iter()
            .flat_map(|&i| t[i * d..(i + 1) * d].iter().copied())
            .collect();
        let rg = self.rg(&[table]);
        Ok(self.push(
            vec![ids.len(), d],
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Maximum along `axis` (axis removed). Ties route the gradient to the
    /// lowest index.
    pub fn max_over_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.node(a).shape.clone();
        if axis >= shape.len() {
            return Err(Error::Input(format!("max axis {axis} out of range for {shape:?}")));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let x = &self.node(a).data;
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * n * inner + i;
                for j in 1..n {
                    let idx = o * n * inner + j * inner + i;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
        let mut out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|&(d, _)| d != axis)
            .map(|(_, &s)| s)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out_shape, out, Op::MaxOverAxis { a, argmax }, rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Input("concat of zero tensors".into()))?;
        let base = self.node(*first).shape.clone();
        if axis >= base.len() {
            return Err(Error::Input(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = &self.node(*p).shape;
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: base,
                    rhs: s.clone(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let node = self.node(*p);
                let chunk = node.shape[axis] * inner;
                out.extend_from_slice(&node.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.node(a).shape.clone();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::Dimension {
                op: "narrow",
                lhs: shape,
                rhs: vec![axis, start, len],
            });
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let x = &self.node(a).data;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(&[a]);
        Ok(self.push(out_shape, out, Op::Narrow { a, axis, start }, rg))
    }

    /// Swap the last two dimensions.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let shape = self.node(a).shape.clone();
        let r = shape.len();
        if r < 2 {
            return Err(Error::Dimension {
                op: "transpose",
                lhs: shape,
                rhs: vec![],
            });
        }
        let (m, n) = (shape[r - 2], shape[r - 1]);
        let batch = shape[..r - 2].iter().product::<usize>();
        let x = &self.node(a).data;
        let mut out = vec![T::zero(); x.len()];
        for b in 0..batch {
            let off = b * m * n;
            for i in 0..m {
                for j in 0..n {
                    out[off + j * m + i] = x[off + i * n + j];
                }
            }
        }
        let mut out_shape = shape;
        out_shape.swap(r - 2, r - 1);
        let rg = self.rg(&[a]);
        Ok(self.push(out_shape, out, Op::Transpose { a }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.node(a).data.len() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.node(a).shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let out = self.node(a).data.clone();
        let rg = self.rg(&[a]);
        Ok(self.push(shape.to_vec(), out, Op::Reshape { a }, rg))
    }

    /// Replace entries where `keep` is false by `fill`; those entries pass
    /// no gradient.
    pub fn mask_fill(&mut self, a: Var, keep: &[bool], fill: T) -> Result<Var> {
        let x = &self.node(a).data;
        if keep.len() != x.len() {
            return Err(Error::Dimension {
                op: "mask_fill",
                lhs: self.node(a).shape.clone(),
                rhs: vec![keep.len()],
            });
        }
        let out = x.iter().zip(keep).map(|(&v, &k)| if k { v } else { fill }).collect();
        let shape = self.node(a).shape.clone();
        let rg = self.rg(&[a]);
        Ok(self.push(shape, out, Op::MaskFill { a, keep: keep.to_vec() }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.node(a).data.iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![total], Op::Sum { a }, rg)
    }

    // ---- reverse pass -----------------------------------------------------

    /// Back-propagate from a scalar `loss`. Gradients of parameter leaves are
    /// added into `params` (which must be explicitly zeroed between steps);
    /// gradients of every other tracked node are readable via [`Tape::grad`].
    pub fn backward(&mut self, loss: Var, params: &mut ParamStore<T>) -> Result<()> {
        if self.node(loss).data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).shape
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.node(loss).requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            self.nodes[i].grad = Some(g);
        }
        for n in &self.nodes {
            if let (Some(pid), Some(g)) = (n.param, n.grad.as_ref()) {
                params.get_mut(pid).accumulate_grad(g);
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].data.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let d = matmul_dims(&nodes[a.0].shape, &nodes[b.0].shape).expect("checked in forward");
                let (av, bv) = (&nodes[a.0].data, &nodes[b.0].data);
                let batch = d.batch.max(1);
                acc(*a, &mut |ga| {
                    for bi in 0..batch {
                        let ao = if d.a_batched { bi * d.m * d.k } else { 0 };
                        let bo = if d.b_batched { bi * d.k * d.n } else { 0 };
                        gemm_nt(
                            &g[bi * d.m * d.n..(bi + 1) * d.m * d.n],
                            &bv[bo..bo + d.k * d.n],
                            d.m,
                            d.k,
                            d.n,
                            &mut ga[ao..ao + d.m * d.k],
                        );
                    }
                });
                acc(*b, &mut |gb| {
                    for bi in 0..batch {
                        let ao = if d.a_batched { bi * d.m * d.k } else { 0 };
                        let bo = if d.b_batched { bi * d.k * d.n } else { 0 };
                        gemm_tn(
                            &av[ao..ao + d.m * d.k],
                            &g[bi * d.m * d.n..(bi + 1) * d.m * d.n],
                            d.m,
                            d.k,
                            d.n,
                            &mut gb[bo..bo + d.k * d.n],
                        );
                    }
                });
            }
            Op::Add { a, b } => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
                let nb = nodes[b.0].data.len();
                acc(*b, &mut |gb| {
                    for (idx, &y) in g.iter().enumerate() {
                        gb[idx % nb] += y;
                    }
                });
            }
            Op::Mul { a, b } => {
                let (av, bv) = (&nodes[a.0].data, &nodes[b.0].data);
                let nb = bv.len();
                acc(*a, &mut |ga| {
                    for (idx, &y) in g.iter().enumerate() {
                        ga[idx] += y * bv[idx % nb];
                    }
                });
                acc(*b, &mut |gb| {
                    for (idx, &y) in g.iter().enumerate() {
                        gb[idx % nb] += y * av[idx];
                    }
                });
            }
            Op::Scale { a, s } => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *s)),
            Op::Relu { a } => {
                let av = &nodes[a.0].data;
                acc(*a, &mut |ga| {
                    for ((x, &y), &v) in ga.iter_mut().zip(g).zip(av) {
                        if v > T::zero() {
                            *x += y;
                        }
                    }
                });
            }
            Op::Softmax { a, axis } => {
                let y = &node.data;
                let (outer, n, inner) = axis_split(&node.shape, *axis);
                acc(*a, &mut |ga| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| o * n * inner + j * inner + i;
                            let dot: T = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                            for j in 0..n {
                                ga[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { a, rstd } => {
                let y = &node.data;
                let d = *node.shape.last().expect("rank >= 1");
                let inv_d = T::of(1.0 / d as f64);
                acc(*a, &mut |ga| {
                    for (r, &s) in rstd.iter().enumerate() {
                        let (gr, yr) = (&g[r * d..(r + 1) * d], &y[r * d..(r + 1) * d]);
                        let mean_g = gr.iter().copied().sum::<T>() * inv_d;
                        let mean_gy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
                        for j in 0..d {
                            ga[r * d + j] += s * (gr[j] - mean_g - yr[j] * mean_gy);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let c = probs.len() / targets.len();
                let scale = g[0];
                acc(*logits, &mut |gl| {
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            gl[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = nodes[table.0].shape[1];
                acc(*table, &mut |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[id * d + j] += g[r * d + j];
                        }
                    }
                });
            }
            Op::MaxOverAxis { a, argmax } => acc(*a, &mut |ga| {
                for (&src, &y) in argmax.iter().zip(g) {
                    ga[src] += y;
                }
            }),
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = axis_split(&node.shape, *axis);
                let total = node.shape[*axis] * inner;
                let mut offset = 0;
                for p in parts {
                    let chunk = nodes[p.0].shape[*axis] * inner;
                    acc(*p, &mut |gp| {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + chunk];
                            for (x, &y) in gp[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *x += y;
                            }
                        }
                    });
                    offset += chunk;
                }
            }
            Op::Narrow { a, axis, start } => {
                let (outer, n, inner) = axis_split(&nodes[a.0].shape, *axis);
                let len = node.shape[*axis];
                acc(*a, &mut |ga| {
                    for o in 0..outer {
                        let base = o * n * inner + start * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        for (x, &y) in ga[base..base + len * inner].iter_mut().zip(src) {
                            *x += y;
                        }
                    }
                });
            }
            Op::Transpose { a } => {
                let s = &nodes[a.0].shape;
                let r = s.len();
                let (m, n) = (s[r - 2], s[r - 1]);
                let batch = s[..r - 2].iter().product::<usize>();
                acc(*a, &mut |ga| {
                    for b in 0..batch {
                        let off = b * m * n;
                        for i in 0..m {
                            for j in 0..n {
                                ga[off + i * n + j] += g[off + j * m + i];
                            }
                        }
                    }
                });
            }
            Op::Reshape { a } => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y)),
            Op::MaskFill { a, keep } => acc(*a, &mut |ga| {
                for ((x, &y), &k) in ga.iter_mut().zip(g).zip(keep) {
                    if k {
                        *x += y;
                    }
                }
            }),
            Op::Sum { a } => acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0])),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_basis() {
        let mut tape = Tape::<f64>::new();
        let i2 = tape.constant(t(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let m = tape.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let out = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(out), &[1.0, 2.0, 3.0, 4.0]);

        let a = tape.constant(t(&[&[1.0, 0.0]]));
        let b = tape.constant(t(&[&[0.0], &[5.0]]));
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.shape(out), &[1, 1]);
        assert_eq!(tape.value(out), &[0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn batched_matmul_broadcasts_rank2_rhs() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.constant(t(&[&[1.0], &[1.0]]));
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.shape(out), &[2, 1, 1]);
        assert_eq!(tape.value(out), &[3.0, 7.0]);
    }

    #[test]
    fn softmax_symmetric_and_stable() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[&[0.0, 0.0]]));
        let y = tape.softmax(x, 1).unwrap();
        assert_eq!(tape.value(y), &[0.5, 0.5]);
        let x = tape.constant(t(&[&[1.0, 1.0, 1.0, 1.0]]));
        let y = tape.softmax(x, 1).unwrap();
        assert_eq!(tape.value(y), &[0.25; 4]);
        let x = tape.constant(t(&[&[1000.0, 0.0]]));
        let y = tape.softmax(x, 1).unwrap();
        let oracle = [
            1.0 / (1.0 + (-1000.0f64).exp()),
            (-1000.0f64).exp() / (1.0 + (-1000.0f64).exp()),
        ];
        assert!(tape.value(y).iter().all(|v| v.is_finite()));
        assert!((tape.value(y)[0] - oracle[0]).abs() < 1e-15);
        assert!((tape.value(y)[1] - oracle[1]).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_bad_axis() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(tape.softmax(x, 2).is_err());
    }

    #[test]
    fn cross_entropy_uniform_and_perfect() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(Tensor::zeros(&[1, 31]));
        let mut q = Tensor::zeros(&[1, 31]);
        q.data_mut()[4] = 1.0;
        let l = tape.cross_entropy(logits, &q).unwrap();
        assert!((tape.value(l)[0] - 31f64.ln()).abs() < 1e-12);
        assert!((tape.value(l)[0] - 3.4340).abs() < 1e-4);

        let mut big = Tensor::zeros(&[1, 31]);
        big.data_mut()[4] = 50.0;
        let logits = tape.constant(big);
        let l = tape.cross_entropy(logits, &q).unwrap();
        assert!(tape.value(l)[0] < 1e-8);
    }

    #[test]
    fn cross_entropy_rejects_non_one_hot() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(Tensor::zeros(&[1, 3]));
        let q = Tensor::new(vec![1, 3], vec![0.5, 0.5, 0.0]).unwrap();
        assert!(matches!(tape.cross_entropy(logits, &q), Err(Error::Validation(_))));
        let q = Tensor::new(vec![1, 3], vec![1.0, 1.0, 0.0]).unwrap();
        assert!(tape.cross_entropy(logits, &q).is_err());
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_target() {
        let mut tape = Tape::<f64>::new();
        let mut store = ParamStore::new();
        let x = Tensor::new(vec![1, 3], vec![0.3, -1.2, 2.0])
            .unwrap()
            .with_requires_grad(true);
        let lx = tape.leaf(x);
        let l = tape.cross_entropy_ids(lx, &[1]).unwrap();
        tape.backward(l, &mut store).unwrap();
        let z: f64 = [0.3f64, -1.2, 2.0].iter().map(|v| v.exp()).sum();
        let expected = [0.3f64.exp() / z, (-1.2f64).exp() / z - 1.0, 2.0f64.exp() / z];
        for (g, e) in tape.grad(lx).unwrap().iter().zip(expected) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn max_over_time_and_tie_routing() {
        let mut tape = Tape::<f64>::new();
        let mut store = ParamStore::new();
        let x = tape.leaf(t(&[&[1.0, 3.0], &[2.0, 0.0]]).with_requires_grad(true));
        let m = tape.max_over_axis(x, 0).unwrap();
        assert_eq!(tape.value(m), &[2.0, 3.0]);

        let y = tape.leaf(t(&[&[5.0, 1.0], &[5.0, 1.0]]).with_requires_grad(true));
        let m = tape.max_over_axis(y, 0).unwrap();
        let s = tape.sum(m);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(tape.grad(y).unwrap(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[&[3.0, 3.0, 3.0, 3.0]]));
        let y = tape.layer_norm(x);
        assert!(tape.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_values_and_gradients() {
        let mut tape = Tape::<f64>::new();
        let mut store = ParamStore::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap().with_requires_grad(true));
        let y = tape.relu(x);
        assert_eq!(tape.value(y), &[0.0, 2.0]);
        let s = tape.sum(y);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::<f64>::new();
        let mut store = ParamStore::new();
        let x = tape.leaf(Tensor::zeros(&[2]).with_requires_grad(true));
        assert!(matches!(tape.backward(x, &mut store), Err(Error::Contract(_))));
    }

    #[test]
    fn lone_parameter_sum_gives_ones_and_reuse_doubles() {
        let mut store = ParamStore::<f64>::new();
        let p = store.insert("p", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        store.zero_grad();
        let mut tape = Tape::new();
        let v = tape.param(&store, p);
        let s = tape.sum(v);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.get(p).grad().unwrap(), &[1.0, 1.0, 1.0]);

        store.zero_grad();
        let mut tape = Tape::new();
        let v = tape.param(&store, p);
        let w = tape.param(&store, p);
        let both = tape.add(v, w).unwrap();
        let s = tape.sum(both);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.get(p).grad().unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn diamond_graph_sums_path_gradients() {
        // x feeds three consumers: 2x, x*x and relu(x).
        let mut store = ParamStore::<f64>::new();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.5, -0.5]).unwrap().with_requires_grad(true));
        let a = tape.scale(x, 2.0);
        let b = tape.mul(x, x).unwrap();
        let c = tape.relu(x);
        let ab = tape.add(a, b).unwrap();
        let abc = tape.add(ab, c).unwrap();
        let s = tape.sum(abc);
        tape.backward(s, &mut store).unwrap();
        // d/dx = 2 + 2x + 1[x>0]
        assert_eq!(tape.grad(x).unwrap(), &[2.0 + 3.0 + 1.0, 2.0 - 1.0]);
    }

    #[test]
    fn frozen_leaf_gets_no_gradient() {
        let mut store = ParamStore::<f64>::new();
        let p = store.insert("p", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        store.get_mut(p).set_requires_grad(false);
        let mut tape = Tape::new();
        let v = tape.param(&store, p);
        let s = tape.sum(v);
        tape.backward(s, &mut store).unwrap();
        assert!(store.get(p).grad().is_none());
    }

    #[test]
    fn concat_and_narrow_are_inverse() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = tape.constant(t(&[&[5.0], &[6.0]]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let back = tape.narrow(c, 1, 0, 2).unwrap();
        assert_eq!(tape.value(back), tape.value(a));
        let rows = tape.concat(&[a, a], 0).unwrap();
        assert_eq!(tape.shape(rows), &[4, 2]);
    }
}
