//! Backward rules. Each rule maps the upstream gradient `g` of node `id` to
//! contributions for the node's inputs, using only recorded primitives.

use super::{Op, Tape, Var};

pub(super) fn rule<'t>(tape: &'t Tape, id: usize, op: &Op, g: Var<'t>) -> Vec<(usize, Var<'t>)> {
    let var = |i: usize| Var { tape, id: i };
    let out = var(id);
    match *op {
        Op::Leaf | Op::Const => vec![],
        Op::Add(a, b) => vec![(a, g), (b, g)],
        Op::Sub(a, b) => vec![(a, g), (b, g.neg())],
        Op::Mul(a, b) => vec![(a, g.mul(var(b))), (b, g.mul(var(a)))],
        Op::Div(a, b) => {
            let gb = g.mul(out).div(var(b)).neg();
            vec![(a, g.div(var(b))), (b, gb)]
        }
        Op::Neg(a) => vec![(a, g.neg())],
        Op::Scale(a, c) => vec![(a, g.scale(c))],
        Op::AddScalar(a) => vec![(a, g)],
        Op::MatMul { a, b, ta, tb } => {
            let (va, vb) = (var(a), var(b));
            let (ga, gb) = match (ta, tb) {
                (false, false) => (g.matmul_t(vb, false, true), va.matmul_t(g, true, false)),
                (true, false) => (vb.matmul_t(g, false, true), va.matmul_t(g, false, false)),
                (false, true) => (g.matmul_t(vb, false, false), g.matmul_t(va, true, false)),
                (true, true) => (vb.matmul_t(g, true, true), g.matmul_t(va, true, true)),
            };
            vec![(a, ga), (b, gb)]
        }
        Op::Sigmoid(a) => vec![(a, g.mul(out).mul(out.one_minus()))],
        Op::Tanh(a) => vec![(a, g.mul(out.square().one_minus()))],
        Op::Exp(a) => vec![(a, g.mul(out))],
        Op::Log(a) => vec![(a, g.div(var(a)))],
        Op::Sqrt(a) => vec![(a, g.div(out).scale(0.5))],
        Op::Softplus(a) => vec![(a, g.mul(var(a).sigmoid()))],
        Op::Softmax(a) => {
            let shape = out.shape();
            let (y, g) = if shape.len() == 1 {
                (out.reshape(&[1, shape[0]]), g.reshape(&[1, shape[0]]))
            } else {
                (out, g)
            };
            let cols = y.shape()[1];
            let gy = g.mul(y);
            let dot = gy.sum_cols().broadcast_cols(cols);
            let gin = gy.sub(dot.mul(y));
            let gin = if shape.len() == 1 { gin.reshape(&shape) } else { gin };
            vec![(a, gin)]
        }
        Op::Sum(a) => vec![(a, g.expand(&var(a).shape()))],
        Op::Expand(a) => vec![(a, g.sum().reshape(&var(a).shape()))],
        Op::SumRows(a) => {
            let rows = var(a).shape()[0];
            vec![(a, g.broadcast_rows(rows))]
        }
        Op::BroadcastRows(a) => vec![(a, g.sum_rows())],
        Op::SumCols(a) => {
            let cols = var(a).shape()[1];
            vec![(a, g.broadcast_cols(cols))]
        }
        Op::BroadcastCols(a) => vec![(a, g.sum_cols())],
        Op::Reshape(a) => vec![(a, g.reshape(&var(a).shape()))],
        Op::ConcatCols(ref parts) => {
            let mut offset = 0;
            parts
                .iter()
                .map(|&p| {
                    let w = var(p).shape()[1];
                    let piece = g.slice_cols(offset, offset + w);
                    offset += w;
                    (p, piece)
                })
                .collect()
        }
        Op::ConcatRows(ref parts) => {
            let mut offset = 0;
            parts
                .iter()
                .map(|&p| {
                    let h = var(p).shape()[0];
                    let piece = g.slice_rows(offset, offset + h);
                    offset += h;
                    (p, piece)
                })
                .collect()
        }
        Op::SliceCols { src, start } => {
            let total = var(src).shape()[1];
            vec![(src, g.pad_cols(start, total))]
        }
        Op::PadCols { src, start } => {
            let w = var(src).shape()[1];
            vec![(src, g.slice_cols(start, start + w))]
        }
        Op::SliceRows { src, start } => {
            let total = var(src).shape()[0];
            vec![(src, g.pad_rows(start, total))]
        }
        Op::PadRows { src, start } => {
            let h = var(src).shape()[0];
            vec![(src, g.slice_rows(start, start + h))]
        }
        Op::GatherRows { src, ref ids } => {
            let rows = var(src).shape()[0];
            vec![(src, g.scatter_rows(ids, rows))]
        }
        Op::ScatterRows { src, ref ids } => vec![(src, g.gather_rows(ids))],
    }
}
