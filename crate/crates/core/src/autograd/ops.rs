//! Forward definitions of the primitives.

use std::sync::Arc;

use super::{Op, Var};
use crate::error::Error;
use crate::tensor::{self, assert_same_shape, Tensor};

fn shape_panic(op: &'static str, lhs: &[usize], rhs: &[usize]) -> ! {
    panic!(
        "{}",
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec()
        }
    )
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let cols = *x.shape().last().unwrap_or(&1);
    let mut out = x.data().to_vec();
    if cols > 0 {
        for row in out.chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

impl<'t> Var<'t> {
    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
    }

    fn binary(self, other: Var<'t>, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Var<'t> {
        self.same_tape(&other);
        let a = self.value();
        let b = other.value();
        assert_same_shape(name, &a, &b);
        self.tape.push(a.zip_map(&b, name, f), op)
    }

    fn unary(self, f: impl Fn(f64) -> f64, op: Op) -> Var<'t> {
        let a = self.value();
        self.tape.push(a.map(f), op)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, "subtract", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    /// Element-wise product.
    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, "multiply", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn div(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, "divide", |a, b| a / b, Op::Div(self.id, other.id))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(self) -> Var<'t> {
        self.unary(|a| -a, Op::Neg(self.id))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(|a| a * c, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(|a| a + c, Op::AddScalar(self.id))
    }

    /// `1 - self`, element-wise.
    pub fn one_minus(self) -> Var<'t> {
        self.neg().add_scalar(1.0)
    }

    pub fn square(self) -> Var<'t> {
        self.mul(self)
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) · op(other)`, each operand optionally transposed.
    pub fn matmul_t(self, other: Var<'t>, ta: bool, tb: bool) -> Var<'t> {
        self.same_tape(&other);
        let out = tensor::matmul(&self.value(), &other.value(), ta, tb);
        self.tape.push(
            out,
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
            },
        )
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(sigmoid, Op::Sigmoid(self.id))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(f64::tanh, Op::Tanh(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(f64::exp, Op::Exp(self.id))
    }

    /// Natural log. Panics on non-positive entries.
    pub fn log(self) -> Var<'t> {
        let a = self.value();
        if let Some(bad) = a.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            panic!(
                "{}",
                Error::Domain {
                    op: "log",
                    detail: format!("non-positive input {bad}")
                }
            );
        }
        self.tape.push(a.map(f64::ln), Op::Log(self.id))
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(f64::sqrt, Op::Sqrt(self.id))
    }

    /// `log(1 + e^x)`, computed stably.
    pub fn softplus(self) -> Var<'t> {
        self.unary(softplus, Op::Softplus(self.id))
    }

    /// Softmax over the last axis, with per-row max subtraction.
    pub fn softmax(self) -> Var<'t> {
        let out = softmax_rows(&self.value());
        self.tape.push(out, Op::Softmax(self.id))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(self) -> Var<'t> {
        let v = self.value().sum();
        self.tape.push(Tensor::scalar(v), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len();
        self.sum().scale(1.0 / n as f64)
    }

    /// Euclidean norm of all entries.
    pub fn l2_norm(self) -> Var<'t> {
        self.square().sum().sqrt()
    }

    /// Broadcasts a one-element tensor to `shape`.
    pub fn expand(self, shape: &[usize]) -> Var<'t> {
        let v = self.value();
        if v.len() != 1 {
            shape_panic("expand", v.shape(), shape);
        }
        self.tape.push(Tensor::full(shape, v.item()), Op::Expand(self.id))
    }

    /// Column sums of a matrix: `[r, c] -> [c]`.
    pub fn sum_rows(self) -> Var<'t> {
        let v = self.value();
        let (r, c) = v.dims2();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, x) in out.iter_mut().zip(v.row(i)) {
                *o += x;
            }
        }
        self.tape.push(Tensor::vector(out), Op::SumRows(self.id))
    }

    /// Repeats a vector `[c]` as every row of an `[rows, c]` matrix.
    pub fn broadcast_rows(self, rows: usize) -> Var<'t> {
        let v = self.value();
        if v.ndim() != 1 {
            shape_panic("broadcast_rows", v.shape(), &[rows]);
        }
        let c = v.len();
        let mut out = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            out.extend_from_slice(v.data());
        }
        self.tape
            .push(Tensor::matrix(rows, c, out), Op::BroadcastRows(self.id))
    }

    /// Row sums of a matrix: `[r, c] -> [r]`.
    pub fn sum_cols(self) -> Var<'t> {
        let v = self.value();
        let (r, _) = v.dims2();
        let out = (0..r).map(|i| v.row(i).iter().sum()).collect();
        self.tape.push(Tensor::vector(out), Op::SumCols(self.id))
    }

    /// Repeats a vector `[r]` as every column of an `[r, cols]` matrix.
    pub fn broadcast_cols(self, cols: usize) -> Var<'t> {
        let v = self.value();
        if v.ndim() != 1 {
            shape_panic("broadcast_cols", v.shape(), &[cols]);
        }
        let r = v.len();
        let mut out = Vec::with_capacity(r * cols);
        for &x in v.data() {
            out.extend(std::iter::repeat_n(x, cols));
        }
        self.tape
            .push(Tensor::matrix(r, cols, out), Op::BroadcastCols(self.id))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let v = self.value();
        let n: usize = shape.iter().product();
        if n != v.len() {
            shape_panic("reshape", v.shape(), shape);
        }
        self.tape.push(v.reshaped(shape), Op::Reshape(self.id))
    }

    /// Concatenation along the last axis of matrices sharing a row count.
    pub fn concat(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let values: Vec<Tensor> = parts.iter().map(|p| p.value()).collect();
        let rows = values[0].rows();
        for v in &values[1..] {
            if v.rows() != rows {
                shape_panic("concat", values[0].shape(), v.shape());
            }
        }
        let total: usize = values.iter().map(|v| v.cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for v in &values {
                out.extend_from_slice(v.row(i));
            }
        }
        let ids = parts.iter().map(|p| p.id).collect();
        parts[0]
            .tape
            .push(Tensor::matrix(rows, total, out), Op::ConcatCols(ids))
    }

    /// Stacks matrices sharing a column count on top of each other.
    pub fn concat_rows(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat_rows of zero tensors");
        let values: Vec<Tensor> = parts.iter().map(|p| p.value()).collect();
        let cols = values[0].cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for v in &values {
            if v.cols() != cols {
                shape_panic("concat_rows", values[0].shape(), v.shape());
            }
            rows += v.rows();
            out.extend_from_slice(v.data());
        }
        let ids = parts.iter().map(|p| p.id).collect();
        parts[0]
            .tape
            .push(Tensor::matrix(rows, cols, out), Op::ConcatRows(ids))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t> {
        let v = self.value();
        let (r, c) = v.dims2();
        if start > end || end > c {
            shape_panic("slice_cols", v.shape(), &[start, end]);
        }
        let mut out = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            out.extend_from_slice(&v.row(i)[start..end]);
        }
        self.tape.push(
            Tensor::matrix(r, end - start, out),
            Op::SliceCols { src: self.id, start },
        )
    }

    /// Embeds a matrix at column offset `start` of a zero matrix `total` columns wide.
    pub fn pad_cols(self, start: usize, total: usize) -> Var<'t> {
        let v = self.value();
        let (r, c) = v.dims2();
        if start + c > total {
            shape_panic("pad_cols", v.shape(), &[start, total]);
        }
        let mut out = vec![0.0; r * total];
        for i in 0..r {
            out[i * total + start..i * total + start + c].copy_from_slice(v.row(i));
        }
        self.tape.push(
            Tensor::matrix(r, total, out),
            Op::PadCols { src: self.id, start },
        )
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(self, start: usize, end: usize) -> Var<'t> {
        let v = self.value();
        let (r, c) = v.dims2();
        if start > end || end > r {
            shape_panic("slice_rows", v.shape(), &[start, end]);
        }
        let out = v.data()[start * c..end * c].to_vec();
        self.tape.push(
            Tensor::matrix(end - start, c, out),
            Op::SliceRows { src: self.id, start },
        )
    }

    /// Embeds a matrix at row offset `start` of a zero matrix `total` rows tall.
    pub fn pad_rows(self, start: usize, total: usize) -> Var<'t> {
        let v = self.value();
        let (r, c) = v.dims2();
        if start + r > total {
            shape_panic("pad_rows", v.shape(), &[start, total]);
        }
        let mut out = vec![0.0; total * c];
        out[start * c..(start + r) * c].copy_from_slice(v.data());
        self.tape.push(
            Tensor::matrix(total, c, out),
            Op::PadRows { src: self.id, start },
        )
    }

    /// Selects rows by index (embedding lookup).
    pub fn gather_rows(self, ids: &[usize]) -> Var<'t> {
        let v = self.value();
        let (r, c) = v.dims2();
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                shape_panic("gather_rows", v.shape(), &[id]);
            }
            out.extend_from_slice(v.row(id));
        }
        self.tape.push(
            Tensor::matrix(ids.len(), c, out),
            Op::GatherRows {
                src: self.id,
                ids: Arc::from(ids),
            },
        )
    }

    /// Adds row `k` of `self` into row `ids[k]` of a zero `[rows, c]` matrix.
    pub fn scatter_rows(self, ids: &[usize], rows: usize) -> Var<'t> {
        let v = self.value();
        let (r, c) = v.dims2();
        if r != ids.len() {
            shape_panic("scatter_rows", v.shape(), &[ids.len()]);
        }
        let mut out = vec![0.0; rows * c];
        for (k, &id) in ids.iter().enumerate() {
            if id >= rows {
                shape_panic("scatter_rows", &[rows, c], &[id]);
            }
            for (o, x) in out[id * c..(id + 1) * c].iter_mut().zip(v.row(k)) {
                *o += x;
            }
        }
        self.tape.push(
            Tensor::matrix(rows, c, out),
            Op::ScatterRows {
                src: self.id,
                ids: Arc::from(ids),
            },
        )
    }
}
