//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in evaluation order. Values are
//! computed eagerly on insertion; [`Graph::backward`] walks the tape in reverse
//! and accumulates vector-Jacobian products into a [`Gradients`] table.

use std::rc::Rc;

use rand::Rng;

use crate::softmax::{cross_entropy_parts, masked_softmax_row};
use crate::{gemm, Scalar, Tensor};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Dropout(Var, Vec<T>),
    Embedding {
        weight: Var,
        ids: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    SplitHeads {
        x: Var,
        batch: usize,
        len: usize,
        heads: usize,
    },
    MergeHeads {
        x: Var,
        batch: usize,
        len: usize,
        heads: usize,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    MaskedSoftmax(Var),
    MaskedMean {
        x: Var,
        len: usize,
        lengths: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
        sample_w: Vec<T>,
        denom: T,
    },
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(
            sa.len() == 2 && sb.len() == 2,
            "matmul expects 2-d operands"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        assert_eq!(k, sb[0], "matmul inner dimensions differ");
        let mut out = vec![T::zero(); m * n];
        gemm(
            false,
            false,
            m,
            n,
            k,
            T::one(),
            self.value(a).data(),
            self.value(b).data(),
            T::zero(),
            &mut out,
        );
        let value = Tensor::new([m, n], out).expect("matmul shape");
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    /// `x W + b` for `x: [n, in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_bias(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add expects equal shapes");
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data).expect("add shape");
        self.push(value, Op::Add(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul expects equal shapes");
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data).expect("mul shape");
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    /// Adds `bias: [n]` to every row of `x: [.., n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (_, cols) = self.value(x).rows_cols();
        assert_eq!(
            self.shape(bias),
            [cols],
            "bias length must match the last axis"
        );
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &w)| v + w))
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("bias shape");
        self.push(value, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let data = self.value(x).data().iter().map(|&v| v * s).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("scale shape");
        self.push(value, Op::Scale(x, s), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| v.max(T::zero()))
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("relu shape");
        self.push(value, Op::Relu(x), &[x])
    }

    /// Inverted dropout: kept entries are scaled by `1/(1-rate)`.
    /// A zero rate returns `x` itself.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        assert!(
            (0.0..1.0).contains(&rate),
            "dropout rate must lie in [0, 1)"
        );
        if rate == 0.0 {
            return x;
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("dropout shape");
        self.push(value, Op::Dropout(x, mask), &[x])
    }

    /// Row lookup: `weight: [vocab, d]` gathered at `ids` -> `[ids.len(), d]`.
    pub fn embedding(&mut self, weight: Var, ids: &[usize]) -> Var {
        let shape = self.shape(weight);
        assert_eq!(shape.len(), 2, "embedding table must be 2-d");
        let (vocab, d) = (shape[0], shape[1]);
        let table = self.value(weight).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < vocab, "token id {id} outside vocabulary of {vocab}");
            data.extend_from_slice(&table[id * d..(id + 1) * d]);
        }
        let value = Tensor::new([ids.len(), d], data).expect("embedding shape");
        self.push(
            value,
            Op::Embedding {
                weight,
                ids: ids.to_vec(),
            },
            &[weight],
        )
    }

    /// Layer normalization over the last axis with learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (rows, d) = self.value(x).rows_cols();
        assert_eq!(
            self.shape(gamma),
            [d],
            "gamma length must match the last axis"
        );
        assert_eq!(
            self.shape(beta),
            [d],
            "beta length must match the last axis"
        );
        let eps = T::of(eps);
        let dn = T::of(d as f64);
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = Vec::with_capacity(rows * d);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * d);
        for row in self.value(x).data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * g[j] + bt[j]);
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out).expect("layer norm shape");
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// `[batch*len, heads*dh] -> [batch*heads, len, dh]`.
    pub fn split_heads(&mut self, x: Var, batch: usize, heads: usize) -> Var {
        let (rows, d) = self.value(x).rows_cols();
        assert_eq!(rows % batch.max(1), 0, "rows must divide into the batch");
        assert_eq!(d % heads, 0, "feature dimension must divide into heads");
        let len = rows / batch.max(1);
        let dh = d / heads;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for b in 0..batch {
            for t in 0..len {
                let row = &src[(b * len + t) * d..(b * len + t + 1) * d];
                for h in 0..heads {
                    let dst = ((b * heads + h) * len + t) * dh;
                    out[dst..dst + dh].copy_from_slice(&row[h * dh..(h + 1) * dh]);
                }
            }
        }
        let value = Tensor::new([batch * heads, len, dh], out).expect("split shape");
        self.push(
            value,
            Op::SplitHeads {
                x,
                batch,
                len,
                heads,
            },
            &[x],
        )
    }

    /// `[batch*heads, len, dh] -> [batch*len, heads*dh]`.
    pub fn merge_heads(&mut self, x: Var, batch: usize, heads: usize) -> Var {
        let shape = self.shape(x);
        assert_eq!(shape.len(), 3, "merge_heads expects a 3-d tensor");
        assert_eq!(shape[0], batch * heads, "leading axis must be batch*heads");
        let (len, dh) = (shape[1], shape[2]);
        let out = merge(self.value(x).data(), batch, len, heads, dh);
        let value = Tensor::new([batch * len, heads * dh], out).expect("merge shape");
        self.push(
            value,
            Op::MergeHeads {
                x,
                batch,
                len,
                heads,
            },
            &[x],
        )
    }

    /// Grouped matmul: `[g,m,k] x [g,k,n] -> [g,m,n]`, or with `trans_b`
    /// `[g,m,k] x [g,n,k]^T -> [g,m,n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(
            sa.len() == 3 && sb.len() == 3,
            "batch_matmul expects 3-d operands"
        );
        assert_eq!(sa[0], sb[0], "batch_matmul group counts differ");
        let (g, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b { sb[1] } else { sb[2] };
        let kb = if trans_b { sb[2] } else { sb[1] };
        assert_eq!(k, kb, "batch_matmul inner dimensions differ");
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); g * m * n];
        for i in 0..g {
            gemm(
                false,
                trans_b,
                m,
                n,
                k,
                T::one(),
                &ad[i * m * k..(i + 1) * m * k],
                &bd[i * k * n..(i + 1) * k * n],
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let value = Tensor::new([g, m, n], out).expect("batch matmul shape");
        self.push(value, Op::BatchMatMul { a, b, trans_b }, &[a, b])
    }

    /// Softmax over the last axis of `x: [groups, rows, cols]`, where
    /// `disallow` has shape `[mask_groups, rows, cols]` and is shared by
    /// `groups / mask_groups` consecutive groups. Disallowed entries are exact
    /// zeros; a fully disallowed row becomes all zeros.
    pub fn masked_softmax(&mut self, x: Var, disallow: Rc<[bool]>) -> Var {
        let shape = self.shape(x).to_vec();
        assert_eq!(
            shape.len(),
            3,
            "masked_softmax expects [groups, rows, cols]"
        );
        let (groups, rows, cols) = (shape[0], shape[1], shape[2]);
        let per_group = rows * cols;
        assert!(
            per_group > 0 && disallow.len().is_multiple_of(per_group),
            "mask shape"
        );
        let mask_groups = disallow.len() / per_group;
        assert!(
            mask_groups > 0 && groups % mask_groups == 0,
            "mask groups must divide groups"
        );
        let share = groups / mask_groups;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for g in 0..groups {
            let mg = g / share;
            for r in 0..rows {
                let o = (g * rows + r) * cols;
                let mo = (mg * rows + r) * cols;
                masked_softmax_row(
                    &src[o..o + cols],
                    &disallow[mo..mo + cols],
                    &mut out[o..o + cols],
                );
            }
        }
        let value = Tensor::new(shape, out).expect("softmax shape");
        self.push(value, Op::MaskedSoftmax(x), &[x])
    }

    /// Mean over the first `lengths[b]` rows of each sample in
    /// `x: [batch*len, d]` -> `[batch, d]`.
    pub fn masked_mean(&mut self, x: Var, lengths: &[usize]) -> Var {
        let batch = lengths.len();
        let (rows, d) = self.value(x).rows_cols();
        assert!(
            batch > 0 && rows % batch == 0,
            "rows must divide into the batch"
        );
        let len = rows / batch;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); batch * d];
        for (b, &n) in lengths.iter().enumerate() {
            assert!(n >= 1 && n <= len, "sample length {n} outside 1..={len}");
            let acc = &mut out[b * d..(b + 1) * d];
            for t in 0..n {
                let row = &src[(b * len + t) * d..(b * len + t + 1) * d];
                acc.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
            }
            let inv = T::one() / T::of(n as f64);
            acc.iter_mut().for_each(|a| *a *= inv);
        }
        let value = Tensor::new([batch, d], out).expect("pool shape");
        self.push(
            value,
            Op::MaskedMean {
                x,
                len,
                lengths: lengths.to_vec(),
            },
            &[x],
        )
    }

    /// Class-weighted mean cross-entropy of `logits: [batch, classes]`.
    pub fn weighted_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        class_weights: &[T],
    ) -> Var {
        let (probs, sample_w, numer, denom) =
            cross_entropy_parts(self.value(logits), labels, class_weights);
        let loss = if denom > T::zero() {
            numer / denom
        } else {
            T::zero()
        };
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                sample_w,
                denom,
            },
            &[logits],
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Vec<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc
                .data_mut()
                .iter_mut()
                .zip(delta)
                .for_each(|(a, d)| *a += d),
            slot @ None => {
                *slot = Some(Tensor::new(self.shape(v).to_vec(), delta).expect("gradient shape"));
            }
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.needs(*a) {
                    let mut ga = vec![T::zero(); m * k];
                    gemm(
                        false,
                        true,
                        m,
                        k,
                        n,
                        T::one(),
                        gd,
                        self.value(*b).data(),
                        T::zero(),
                        &mut ga,
                    );
                    self.accumulate(grads, *a, ga);
                }
                if self.needs(*b) {
                    let mut gb = vec![T::zero(); k * n];
                    gemm(
                        true,
                        false,
                        k,
                        n,
                        m,
                        T::one(),
                        self.value(*a).data(),
                        gd,
                        T::zero(),
                        &mut gb,
                    );
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.to_vec());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    self.accumulate(grads, *a, gd.iter().zip(bv).map(|(&g, &y)| g * y).collect());
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, gd.iter().zip(av).map(|(&g, &x)| g * x).collect());
                }
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, gd.to_vec());
                if self.needs(*bias) {
                    let cols = self.shape(*bias)[0];
                    let mut gb = vec![T::zero(); cols];
                    for row in gd.chunks(cols) {
                        gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                    }
                    self.accumulate(grads, *bias, gb);
                }
            }
            Op::Scale(x, s) => {
                self.accumulate(grads, *x, gd.iter().map(|&v| v * *s).collect());
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let gx = gd
                    .iter()
                    .zip(xv)
                    .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Dropout(x, mask) => {
                self.accumulate(
                    grads,
                    *x,
                    gd.iter().zip(mask).map(|(&g, &m)| g * m).collect(),
                );
            }
            Op::Embedding { weight, ids } => {
                if self.needs(*weight) {
                    let d = self.shape(*weight)[1];
                    let mut gw = vec![T::zero(); self.value(*weight).numel()];
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut gw[id * d..(id + 1) * d];
                        dst.iter_mut()
                            .zip(&gd[r * d..(r + 1) * d])
                            .for_each(|(a, &v)| *a += v);
                    }
                    self.accumulate(grads, *weight, gw);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = self.shape(*gamma)[0];
                let gm = self.value(*gamma).data();
                if self.needs(*gamma) || self.needs(*beta) {
                    let mut gg = vec![T::zero(); d];
                    let mut gbt = vec![T::zero(); d];
                    for (grow, hrow) in gd.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += grow[j] * hrow[j];
                            gbt[j] += grow[j];
                        }
                    }
                    self.accumulate(grads, *gamma, gg);
                    self.accumulate(grads, *beta, gbt);
                }
                if self.needs(*x) {
                    let dn = T::of(d as f64);
                    let mut gx = Vec::with_capacity(gd.len());
                    for ((grow, hrow), &is) in gd.chunks(d).zip(xhat.chunks(d)).zip(inv_std) {
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..d {
                            let dh = grow[j] * gm[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hrow[j];
                        }
                        for j in 0..d {
                            let dh = grow[j] * gm[j];
                            gx.push(is / dn * (dn * dh - sum_dh - hrow[j] * sum_dh_h));
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::SplitHeads {
                x,
                batch,
                len,
                heads,
            } => {
                let dh = self.shape(*x)[1] / heads;
                self.accumulate(grads, *x, merge(gd, *batch, *len, *heads, dh));
            }
            Op::MergeHeads {
                x,
                batch,
                len,
                heads,
            } => {
                let dh = self.shape(*x)[2];
                self.accumulate(grads, *x, split(gd, *batch, *len, *heads, dh));
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (groups, m, k) = (sa[0], sa[1], sa[2]);
                let n = if *trans_b { sb[1] } else { sb[2] };
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    let mut ga = vec![T::zero(); groups * m * k];
                    for i in 0..groups {
                        // dA = dC op(B)^T
                        gemm(
                            false,
                            !*trans_b,
                            m,
                            k,
                            n,
                            T::one(),
                            &gd[i * m * n..(i + 1) * m * n],
                            &bd[i * k * n..(i + 1) * k * n],
                            T::zero(),
                            &mut ga[i * m * k..(i + 1) * m * k],
                        );
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.needs(*b) {
                    let mut gb = vec![T::zero(); groups * k * n];
                    for i in 0..groups {
                        let (ai, gi) = (
                            &ad[i * m * k..(i + 1) * m * k],
                            &gd[i * m * n..(i + 1) * m * n],
                        );
                        let dst = &mut gb[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            // B stored [n,k]: dB = dC^T A
                            gemm(true, false, n, k, m, T::one(), gi, ai, T::zero(), dst);
                        } else {
                            gemm(true, false, k, n, m, T::one(), ai, gi, T::zero(), dst);
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MaskedSoftmax(x) => {
                let p = self.nodes[i].value.data();
                let cols = *self.shape(*x).last().expect("3-d");
                let mut gx = Vec::with_capacity(p.len());
                for (prow, grow) in p.chunks(cols).zip(gd.chunks(cols)) {
                    let dot: T = prow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                    gx.extend(prow.iter().zip(grow).map(|(&a, &b)| a * (b - dot)));
                }
                self.accumulate(grads, *x, gx);
            }
            Op::MaskedMean { x, len, lengths } => {
                let d = self.shape(*x)[1];
                let mut gx = vec![T::zero(); self.value(*x).numel()];
                for (b, &n) in lengths.iter().enumerate() {
                    let inv = T::one() / T::of(n as f64);
                    let src = &gd[b * d..(b + 1) * d];
                    for t in 0..n {
                        let dst = &mut gx[(b * len + t) * d..(b * len + t + 1) * d];
                        dst.iter_mut().zip(src).for_each(|(a, &v)| *a = v * inv);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
                sample_w,
                denom,
            } => {
                let classes = self.shape(*logits)[1];
                let mut gl = vec![T::zero(); probs.len()];
                if *denom > T::zero() {
                    let up = gd[0] / *denom;
                    for (b, &y) in labels.iter().enumerate() {
                        let w = sample_w[b] * up;
                        let row = &mut gl[b * classes..(b + 1) * classes];
                        for (c, dst) in row.iter_mut().enumerate() {
                            let onehot = if c == y { T::one() } else { T::zero() };
                            *dst = w * (probs[b * classes + c] - onehot);
                        }
                    }
                }
                self.accumulate(grads, *logits, gl);
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, vec![gd[0]; self.value(*x).numel()]);
            }
        }
    }
}

fn merge<T: Scalar>(src: &[T], batch: usize, len: usize, heads: usize, dh: usize) -> Vec<T> {
    let d = heads * dh;
    let mut out = vec![T::zero(); src.len()];
    for b in 0..batch {
        for h in 0..heads {
            for t in 0..len {
                let s = ((b * heads + h) * len + t) * dh;
                let o = (b * len + t) * d + h * dh;
                out[o..o + dh].copy_from_slice(&src[s..s + dh]);
            }
        }
    }
    out
}

fn split<T: Scalar>(src: &[T], batch: usize, len: usize, heads: usize, dh: usize) -> Vec<T> {
    let d = heads * dh;
    let mut out = vec![T::zero(); src.len()];
    for b in 0..batch {
        for t in 0..len {
            for h in 0..heads {
                let s = (b * len + t) * d + h * dh;
                let o = ((b * heads + h) * len + t) * dh;
                out[o..o + dh].copy_from_slice(&src[s..s + dh]);
            }
        }
    }
    out
}
