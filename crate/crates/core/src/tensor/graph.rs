//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every operation appends a node to the [`Graph`], so node ids are already a
//! topological order. [`Graph::backward`] walks the tape once from the loss
//! towards the leaves and accumulates gradients for every node that depends on
//! a parameter.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::scalar::{gemm, Layout};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Act(Var, Activation),
    LayerNorm {
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        xhat: Vec<F>,
        inv_std: Vec<F>,
    },
    Upsample {
        x: Var,
        taps: Vec<(usize, usize, F)>,
    },
    Haar(Var),
    TransposeLast2(Var),
    Reshape(Var),
    SelectLast {
        x: Var,
        idx: Vec<usize>,
    },
    ReplaceLast {
        x: Var,
        y: Var,
        idx: Vec<usize>,
    },
    ConcatLast(Vec<Var>),
    PadTime {
        x: Var,
        len: usize,
    },
    CropTime {
        x: Var,
        padded: usize,
    },
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    Embedding {
        table: Var,
        rows: Vec<usize>,
    },
    Transient {
        h: Var,
        lambda_log: Var,
        weights: Vec<F>,
    },
    Dropout {
        x: Var,
        mask: Vec<F>,
    },
    Sum(Var),
    BceMean {
        p: Var,
        labels: Vec<F>,
        eps: F,
    },
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Evaluation mode of a graph; training enables dropout.
#[derive(Debug)]
pub enum Mode {
    Eval,
    Train(ChaCha8Rng),
}

/// Computation tape.
#[derive(Debug)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    mode: Mode,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    /// Graph in evaluation mode.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            mode: Mode::Eval,
        }
    }

    /// Graph in training mode with dropout masks drawn from `rng`.
    pub fn training(rng: ChaCha8Rng) -> Self {
        Self {
            nodes: Vec::new(),
            mode: Mode::Train(rng),
        }
    }

    pub fn is_training(&self) -> bool {
        matches!(self.mode, Mode::Train(_))
    }

    /// Returns the dropout generator, if any, so a caller can continue the stream.
    pub fn into_rng(self) -> Option<ChaCha8Rng> {
        match self.mode {
            Mode::Train(rng) => Some(rng),
            Mode::Eval => None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// `x·Wᵀ + b` over the last axis of `x`; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs[xs.len() - 1] != ws[1] {
            return Err(Error::Dimension {
                op: "linear",
                lhs: xs,
                rhs: ws,
            });
        }
        let (out, inp) = (ws[0], ws[1]);
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs != [out] {
                return Err(Error::Dimension {
                    op: "linear bias",
                    lhs: ws,
                    rhs: bs.to_vec(),
                });
            }
        }
        let rows = self.value(x).numel() / inp;
        let mut y = vec![F::zero(); rows * out];
        gemm(
            rows,
            inp,
            out,
            self.value(x).data(),
            Layout::Normal,
            self.value(w).data(),
            Layout::Transposed,
            &mut y,
            false,
        );
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in y.chunks_exact_mut(out) {
                for (v, &bv) in row.iter_mut().zip(bias) {
                    *v += bv;
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = out;
        let rg = self.grad_of(&[x, w]) || b.is_some_and(|b| self.grad_of(&[b]));
        Ok(self.push(Tensor::new(shape, y)?, Op::Linear { x, w, b }, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        let rg = self.grad_of(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        let rg = self.grad_of(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        let rg = self.grad_of(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let src = self.value(a);
        let v = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&x| x * c).collect())
            .expect("same shape");
        let rg = self.grad_of(&[a]);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let src = self.value(a);
        let data = src
            .data()
            .iter()
            .map(|&x| match kind {
                Activation::Relu => x.max(F::zero()),
                Activation::Sigmoid => sigmoid(x),
            })
            .collect();
        let v = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let rg = self.grad_of(&[a]);
        self.push(v, Op::Act(a, kind), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    /// Normalizes each last-axis slice to zero mean and unit (biased) variance,
    /// then applies the optional per-feature `gamma`/`beta`.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        eps: F,
    ) -> Result<Var> {
        let n = self.value(x).last_dim();
        for p in [gamma, beta].into_iter().flatten() {
            if self.shape(p) != [n] {
                return Err(Error::Dimension {
                    op: "layer_norm affine",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let src = self.value(x);
        let nf = F::from_usize_lossy(n);
        let mut xhat = Vec::with_capacity(src.numel());
        let mut inv_std = Vec::with_capacity(src.rows());
        for row in src.data().chunks_exact(n) {
            let mean = row.iter().copied().sum::<F>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
            let inv = F::one() / (var + eps).sqrt();
            inv_std.push(inv);
            xhat.extend(row.iter().map(|&v| (v - mean) * inv));
        }
        let mut y = xhat.clone();
        if let Some(g) = gamma {
            let gv = self.value(g).data();
            for row in y.chunks_exact_mut(n) {
                row.iter_mut().zip(gv).for_each(|(v, &g)| *v *= g);
            }
        }
        if let Some(b) = beta {
            let bv = self.value(b).data();
            for row in y.chunks_exact_mut(n) {
                row.iter_mut().zip(bv).for_each(|(v, &b)| *v += b);
            }
        }
        let shape = src.shape().to_vec();
        let rg = self.grad_of(&[x])
            || gamma.is_some_and(|g| self.grad_of(&[g]))
            || beta.is_some_and(|b| self.grad_of(&[b]));
        Ok(self.push(
            Tensor::new(shape, y)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Endpoint-aligned linear interpolation of the last axis to `target` steps.
    pub fn upsample(&mut self, x: Var, target: usize) -> Result<Var> {
        if target == 0 {
            return Err(Error::EmptyTarget);
        }
        let src = self.value(x);
        let len = src.last_dim();
        if target < len {
            return Err(Error::Dimension {
                op: "upsample",
                lhs: src.shape().to_vec(),
                rhs: vec![target],
            });
        }
        let taps = interpolation_taps::<F>(len, target);
        let mut out = Vec::with_capacity(src.rows() * target);
        for row in src.data().chunks_exact(len) {
            out.extend(
                taps.iter()
                    .map(|&(i0, i1, frac)| row[i0] + (row[i1] - row[i0]) * frac),
            );
        }
        let mut shape = src.shape().to_vec();
        *shape.last_mut().unwrap() = target;
        let rg = self.grad_of(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Upsample { x, taps }, rg))
    }

    /// Pairwise Haar low-pass along the last axis; a trailing odd step is dropped.
    pub fn haar_lowpass(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let len = src.last_dim();
        if len < 2 {
            return Err(Error::TooShort(len));
        }
        let half = len / 2;
        let two = F::from_f64_lossy(2.0);
        let mut out = Vec::with_capacity(src.rows() * half);
        for row in src.data().chunks_exact(len) {
            out.extend((0..half).map(|t| (row[2 * t] + row[2 * t + 1]) / two));
        }
        let mut shape = src.shape().to_vec();
        *shape.last_mut().unwrap() = half;
        let rg = self.grad_of(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Haar(x), rg))
    }

    /// Swaps the two innermost axes.
    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        if src.rank() < 2 {
            return Err(Error::Dimension {
                op: "transpose",
                lhs: src.shape().to_vec(),
                rhs: vec![],
            });
        }
        let r = src.rank();
        let (a, b) = (src.shape()[r - 2], src.shape()[r - 1]);
        let out = transpose_blocks(src.data(), a, b);
        let mut shape = src.shape().to_vec();
        shape.swap(r - 2, r - 1);
        let rg = self.grad_of(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::TransposeLast2(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(x).clone().reshaped(shape)?;
        let rg = self.grad_of(&[x]);
        Ok(self.push(v, Op::Reshape(x), rg))
    }

    /// Picks the listed last-axis channels, in the listed order.
    pub fn select_last(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let src = self.value(x);
        let c = src.last_dim();
        if idx.is_empty() || idx.iter().any(|&i| i >= c) {
            return Err(Error::Dimension {
                op: "select_last",
                lhs: src.shape().to_vec(),
                rhs: idx.to_vec(),
            });
        }
        let mut out = Vec::with_capacity(src.rows() * idx.len());
        for row in src.data().chunks_exact(c) {
            out.extend(idx.iter().map(|&i| row[i]));
        }
        let mut shape = src.shape().to_vec();
        *shape.last_mut().unwrap() = idx.len();
        let rg = self.grad_of(&[x]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::SelectLast {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Copy of `x` whose channels `idx` are overwritten by the channels of `y`.
    pub fn replace_last(&mut self, x: Var, idx: &[usize], y: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ys = self.shape(y).to_vec();
        let c = xs[xs.len() - 1];
        let ok = xs.len() == ys.len()
            && xs[..xs.len() - 1] == ys[..ys.len() - 1]
            && ys[ys.len() - 1] == idx.len()
            && idx.iter().all(|&i| i < c);
        if !ok {
            return Err(Error::Dimension {
                op: "replace_last",
                lhs: xs,
                rhs: ys,
            });
        }
        let mut out = self.value(x).data().to_vec();
        let k = idx.len();
        for (row, yrow) in out.chunks_exact_mut(c).zip(self.value(y).data().chunks_exact(k)) {
            for (&i, &v) in idx.iter().zip(yrow) {
                row[i] = v;
            }
        }
        let rg = self.grad_of(&[x, y]);
        Ok(self.push(
            Tensor::new(xs, out)?,
            Op::ReplaceLast {
                x,
                y,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(Error::Dimension {
                    op: "concat_last",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = first;
        *shape.last_mut().unwrap() = total;
        let rg = self.grad_of(parts);
        Ok(self.push(Tensor::new(shape, out)?, Op::ConcatLast(parts.to_vec()), rg))
    }

    /// Pads axis 1 of a `[B, T, C]` tensor to `len` by repeating step `T-1`.
    pub fn pad_time(&mut self, x: Var, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || len < s[1] {
            return Err(Error::Dimension {
                op: "pad_time",
                lhs: s,
                rhs: vec![len],
            });
        }
        let (b, t, c) = (s[0], s[1], s[2]);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(b * len * c);
        for bi in 0..b {
            let block = &src[bi * t * c..(bi + 1) * t * c];
            out.extend_from_slice(block);
            let last = &block[(t - 1) * c..];
            for _ in t..len {
                out.extend_from_slice(last);
            }
        }
        let rg = self.grad_of(&[x]);
        Ok(self.push(Tensor::new(vec![b, len, c], out)?, Op::PadTime { x, len }, rg))
    }

    /// Keeps the first `len` steps along axis 1 of a `[B, T, C]` tensor.
    pub fn crop_time(&mut self, x: Var, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || len > s[1] || len == 0 {
            return Err(Error::Dimension {
                op: "crop_time",
                lhs: s,
                rhs: vec![len],
            });
        }
        let (b, t, c) = (s[0], s[1], s[2]);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(b * len * c);
        for bi in 0..b {
            out.extend_from_slice(&src[bi * t * c..bi * t * c + len * c]);
        }
        let rg = self.grad_of(&[x]);
        Ok(self.push(
            Tensor::new(vec![b, len, c], out)?,
            Op::CropTime { x, padded: t },
            rg,
        ))
    }

    /// Flat gather: output `i` is element `idx[i]` of `x`'s row-major data.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let src = self.value(x);
        if idx.is_empty() || idx.iter().any(|&i| i >= src.numel()) {
            return Err(Error::Dimension {
                op: "gather",
                lhs: src.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let out = idx.iter().map(|&i| src.data()[i]).collect();
        let rg = self.grad_of(&[x]);
        Ok(self.push(
            Tensor::new(vec![idx.len()], out)?,
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Row lookup into a `[K, D]` table, producing `[rows.len(), D]`.
    pub fn embedding(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 || rows.is_empty() || rows.iter().any(|&r| r >= ts[0]) {
            return Err(Error::Dimension {
                op: "embedding",
                lhs: ts,
                rhs: vec![rows.len()],
            });
        }
        let d = ts[1];
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            out.extend_from_slice(&src[r * d..(r + 1) * d]);
        }
        let rg = self.grad_of(&[table]);
        Ok(self.push(
            Tensor::new(vec![rows.len(), d], out)?,
            Op::Embedding {
                table,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    /// `h·(1 + w_t)` with `w_t = exp(-exp(lambda_log)·(T-1-t))` over axis 1 of `[B, T, C]`.
    pub fn transient(&mut self, h: Var, lambda_log: Var) -> Result<Var> {
        let s = self.shape(h).to_vec();
        if s.len() != 3 || self.value(lambda_log).numel() != 1 {
            return Err(Error::Dimension {
                op: "transient",
                lhs: s,
                rhs: self.shape(lambda_log).to_vec(),
            });
        }
        let (b, t, c) = (s[0], s[1], s[2]);
        let weights = transient_weights(self.value(lambda_log).item(), t);
        let src = self.value(h).data();
        let mut out = Vec::with_capacity(src.len());
        for bi in 0..b {
            for (ti, &w) in weights.iter().enumerate() {
                let base = (bi * t + ti) * c;
                out.extend(src[base..base + c].iter().map(|&v| v * (F::one() + w)));
            }
        }
        let rg = self.grad_of(&[h, lambda_log]);
        Ok(self.push(
            Tensor::new(s, out)?,
            Op::Transient {
                h,
                lambda_log,
                weights,
            },
            rg,
        ))
    }

    /// Inverted dropout; the identity outside training mode or when `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let Mode::Train(rng) = &mut self.mode else {
            return x;
        };
        let n = self.nodes[x.0].value.numel();
        let keep = F::from_f64_lossy(1.0 / (1.0 - rate));
        // drop when a uniform u32 falls below rate * 2^32
        let cut = (rate * 4294967296.0).min(u32::MAX as f64) as u32;
        let mask: Vec<F> = (0..n)
            .map(|_| {
                if rng.random::<u32>() < cut {
                    F::zero()
                } else {
                    keep
                }
            })
            .collect();
        let src = self.value(x);
        let data = src.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let v = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let rg = self.grad_of(&[x]);
        self.push(v, Op::Dropout { x, mask }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum::<F>();
        let rg = self.grad_of(&[x]);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    /// Mean binary cross-entropy of probabilities `p` (clamped to `[eps, 1-eps]`).
    pub fn bce_mean(&mut self, p: Var, labels: &[F], eps: F) -> Result<Var> {
        let src = self.value(p);
        if src.numel() != labels.len() {
            return Err(Error::LengthMismatch(src.numel(), labels.len()));
        }
        let n = F::from_usize_lossy(labels.len());
        let total = src
            .data()
            .iter()
            .zip(labels)
            .map(|(&p, &y)| {
                let pc = p.max(eps).min(F::one() - eps);
                -(y * pc.ln() + (F::one() - y) * (F::one() - pc).ln())
            })
            .sum::<F>();
        let rg = self.grad_of(&[p]);
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::BceMean {
                p,
                labels: labels.to_vec(),
                eps,
            },
            rg,
        ))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Rank(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let ws = self.shape(*w);
                let (out, inp) = (ws[0], ws[1]);
                let rows = g.len() / out;
                if self.needs(*x) {
                    let gx = slot(grads, *x, rows * inp);
                    gemm(
                        rows,
                        out,
                        inp,
                        g,
                        Layout::Normal,
                        self.value(*w).data(),
                        Layout::Normal,
                        gx,
                        true,
                    );
                }
                if self.needs(*w) {
                    let gw = slot(grads, *w, out * inp);
                    gemm(
                        out,
                        rows,
                        inp,
                        g,
                        Layout::Transposed,
                        self.value(*x).data(),
                        Layout::Normal,
                        gw,
                        true,
                    );
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let gb = slot(grads, *b, out);
                        for row in g.chunks_exact(out) {
                            gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        add_into(slot(grads, v, g.len()), g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    add_into(slot(grads, *a, g.len()), g);
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, g.len());
                    gb.iter_mut().zip(g).for_each(|(s, &v)| *s -= v);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    let ga = slot(grads, *a, g.len());
                    for ((s, &gv), &o) in ga.iter_mut().zip(g).zip(bv) {
                        *s += gv * o;
                    }
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, g.len());
                    for ((s, &gv), &o) in gb.iter_mut().zip(g).zip(av) {
                        *s += gv * o;
                    }
                }
            }
            Op::Scale(a, c) => {
                let ga = slot(grads, *a, g.len());
                ga.iter_mut().zip(g).for_each(|(s, &v)| *s += v * *c);
            }
            Op::Act(a, kind) => {
                let ga = slot(grads, *a, g.len());
                let y = node.value.data();
                match kind {
                    Activation::Relu => {
                        for ((s, &gv), &yv) in ga.iter_mut().zip(g).zip(y) {
                            if yv > F::zero() {
                                *s += gv;
                            }
                        }
                    }
                    Activation::Sigmoid => {
                        for ((s, &gv), &yv) in ga.iter_mut().zip(g).zip(y) {
                            *s += gv * yv * (F::one() - yv);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = node.value.last_dim();
                if let Some(gm) = gamma {
                    if self.needs(*gm) {
                        let gg = slot(grads, *gm, n);
                        for (grow, xrow) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                            for ((s, &gv), &xv) in gg.iter_mut().zip(grow).zip(xrow) {
                                *s += gv * xv;
                            }
                        }
                    }
                }
                if let Some(bt) = beta {
                    if self.needs(*bt) {
                        let gb = slot(grads, *bt, n);
                        for grow in g.chunks_exact(n) {
                            add_into(gb, grow);
                        }
                    }
                }
                if self.needs(*x) {
                    let gamma_v = gamma.map(|gm| self.value(gm).data());
                    let nf = F::from_usize_lossy(n);
                    let gx = slot(grads, *x, g.len());
                    let mut ghat = vec![F::zero(); n];
                    for (r, (grow, xrow)) in
                        g.chunks_exact(n).zip(xhat.chunks_exact(n)).enumerate()
                    {
                        for (j, gh) in ghat.iter_mut().enumerate() {
                            *gh = match gamma_v {
                                Some(gv) => grow[j] * gv[j],
                                None => grow[j],
                            };
                        }
                        let sum_g = ghat.iter().copied().sum::<F>();
                        let sum_gx = ghat.iter().zip(xrow).map(|(&a, &b)| a * b).sum::<F>();
                        let scale = inv_std[r] / nf;
                        let dst = &mut gx[r * n..(r + 1) * n];
                        for j in 0..n {
                            dst[j] += scale * (nf * ghat[j] - sum_g - xrow[j] * sum_gx);
                        }
                    }
                }
            }
            Op::Upsample { x, taps } => {
                let len = self.value(*x).last_dim();
                let target = taps.len();
                let gx = slot(grads, *x, g.len() / target * len);
                for (grow, xrow) in g.chunks_exact(target).zip(gx.chunks_exact_mut(len)) {
                    for (&gv, &(i0, i1, frac)) in grow.iter().zip(taps) {
                        xrow[i0] += gv * (F::one() - frac);
                        xrow[i1] += gv * frac;
                    }
                }
            }
            Op::Haar(x) => {
                let len = self.value(*x).last_dim();
                let half = len / 2;
                let two = F::from_f64_lossy(2.0);
                let gx = slot(grads, *x, g.len() / half * len);
                for (grow, xrow) in g.chunks_exact(half).zip(gx.chunks_exact_mut(len)) {
                    for (t, &gv) in grow.iter().enumerate() {
                        xrow[2 * t] += gv / two;
                        xrow[2 * t + 1] += gv / two;
                    }
                }
            }
            Op::TransposeLast2(x) => {
                let s = node.value.shape();
                let r = s.len();
                let back = transpose_blocks(g, s[r - 2], s[r - 1]);
                add_into(slot(grads, *x, g.len()), &back);
            }
            Op::Reshape(x) => add_into(slot(grads, *x, g.len()), g),
            Op::SelectLast { x, idx } => {
                let c = self.value(*x).last_dim();
                let k = idx.len();
                let gx = slot(grads, *x, g.len() / k * c);
                for (grow, xrow) in g.chunks_exact(k).zip(gx.chunks_exact_mut(c)) {
                    for (&i, &gv) in idx.iter().zip(grow) {
                        xrow[i] += gv;
                    }
                }
            }
            Op::ReplaceLast { x, y, idx } => {
                let c = node.value.last_dim();
                let k = idx.len();
                if self.needs(*x) {
                    let mut masked = g.to_vec();
                    for row in masked.chunks_exact_mut(c) {
                        for &i in idx {
                            row[i] = F::zero();
                        }
                    }
                    add_into(slot(grads, *x, g.len()), &masked);
                }
                if self.needs(*y) {
                    let gy = slot(grads, *y, g.len() / c * k);
                    for (grow, yrow) in g.chunks_exact(c).zip(gy.chunks_exact_mut(k)) {
                        for (&i, s) in idx.iter().zip(yrow.iter_mut()) {
                            *s += grow[i];
                        }
                    }
                }
            }
            Op::ConcatLast(parts) => {
                let total = node.value.last_dim();
                let rows = g.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    if self.needs(p) {
                        let gp = slot(grads, p, rows * w);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            add_into(&mut gp[r * w..(r + 1) * w], src);
                        }
                    }
                    offset += w;
                }
            }
            Op::PadTime { x, len } => {
                let s = self.shape(*x).to_vec();
                let (b, t, c) = (s[0], s[1], s[2]);
                let gx = slot(grads, *x, b * t * c);
                for bi in 0..b {
                    for ti in 0..*len {
                        let dst_t = ti.min(t - 1);
                        let src = &g[(bi * len + ti) * c..(bi * len + ti + 1) * c];
                        add_into(&mut gx[(bi * t + dst_t) * c..(bi * t + dst_t + 1) * c], src);
                    }
                }
            }
            Op::CropTime { x, padded } => {
                let s = node.value.shape();
                let (b, t, c) = (s[0], s[1], s[2]);
                let gx = slot(grads, *x, b * padded * c);
                for bi in 0..b {
                    add_into(
                        &mut gx[bi * padded * c..bi * padded * c + t * c],
                        &g[bi * t * c..(bi + 1) * t * c],
                    );
                }
            }
            Op::Gather { x, idx } => {
                let gx = slot(grads, *x, self.value(*x).numel());
                for (&i, &gv) in idx.iter().zip(g) {
                    gx[i] += gv;
                }
            }
            Op::Embedding { table, rows } => {
                let ts = self.shape(*table);
                let d = ts[1];
                let gt = slot(grads, *table, ts[0] * d);
                for (&r, grow) in rows.iter().zip(g.chunks_exact(d)) {
                    add_into(&mut gt[r * d..(r + 1) * d], grow);
                }
            }
            Op::Transient {
                h,
                lambda_log,
                weights,
            } => {
                let s = node.value.shape();
                let (b, t, c) = (s[0], s[1], s[2]);
                if self.needs(*h) {
                    let gh = slot(grads, *h, g.len());
                    for bi in 0..b {
                        for (ti, &w) in weights.iter().enumerate() {
                            let base = (bi * t + ti) * c;
                            for j in base..base + c {
                                gh[j] += g[j] * (F::one() + w);
                            }
                        }
                    }
                }
                if self.needs(*lambda_log) {
                    let lambda = self.value(*lambda_log).item().exp();
                    let hv = self.value(*h).data();
                    let mut acc = F::zero();
                    for bi in 0..b {
                        for (ti, &w) in weights.iter().enumerate() {
                            let dist = F::from_usize_lossy(t - 1 - ti);
                            let dw = -dist * w * lambda;
                            let base = (bi * t + ti) * c;
                            let inner = (base..base + c).map(|j| g[j] * hv[j]).sum::<F>();
                            acc += inner * dw;
                        }
                    }
                    slot(grads, *lambda_log, 1)[0] += acc;
                }
            }
            Op::Dropout { x, mask } => {
                let gx = slot(grads, *x, g.len());
                for ((s, &gv), &m) in gx.iter_mut().zip(g).zip(mask) {
                    *s += gv * m;
                }
            }
            Op::Sum(x) => {
                let gx = slot(grads, *x, self.value(*x).numel());
                gx.iter_mut().for_each(|s| *s += g[0]);
            }
            Op::BceMean { p, labels, eps } => {
                let pv = self.value(*p).data();
                let n = F::from_usize_lossy(labels.len());
                let gp = slot(grads, *p, labels.len());
                for ((s, &pi), &y) in gp.iter_mut().zip(pv).zip(labels) {
                    if pi > *eps && pi < F::one() - *eps {
                        *s += g[0] * (-y / pi + (F::one() - y) / (F::one() - pi)) / n;
                    }
                }
            }
        }
    }
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient with respect to `v`; zero when `v` did not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor<F> {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn take(&mut self, v: Var) -> Vec<F> {
        let n = self.shapes[v.0].iter().product();
        self.grads[v.0].take().unwrap_or_else(|| vec![F::zero(); n])
    }
}

fn slot<F: Scalar>(grads: &mut [Option<Vec<F>>], v: Var, len: usize) -> &mut [F] {
    grads[v.0].get_or_insert_with(|| vec![F::zero(); len])
}

fn add_into<F: Scalar>(dst: &mut [F], src: &[F]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

fn transpose_blocks<F: Scalar>(data: &[F], a: usize, b: usize) -> Vec<F> {
    let mut out = vec![F::zero(); data.len()];
    for (src, dst) in data.chunks_exact(a * b).zip(out.chunks_exact_mut(a * b)) {
        for i in 0..a {
            for j in 0..b {
                dst[j * a + i] = src[i * b + j];
            }
        }
    }
    out
}

pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `(left, right, fraction)` source taps for each target position.
fn interpolation_taps<F: Scalar>(len: usize, target: usize) -> Vec<(usize, usize, F)> {
    if len == 1 || target == 1 {
        return vec![(0, 0, F::zero()); target];
    }
    let num = F::from_usize_lossy(len - 1);
    let den = F::from_usize_lossy(target - 1);
    (0..target)
        .map(|p| {
            let pos = F::from_usize_lossy(p) * num / den;
            let i0 = pos.floor().to_usize().unwrap_or(0).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, pos - F::from_usize_lossy(i0))
        })
        .collect()
}

/// Transient weights `exp(-exp(lambda_log)·(T-1-t))` for `t = 0..T`.
pub fn transient_weights<F: Scalar>(lambda_log: F, len: usize) -> Vec<F> {
    let lambda = lambda_log.exp();
    (0..len)
        .map(|t| (-lambda * F::from_usize_lossy(len - 1 - t)).exp())
        .collect()
}
