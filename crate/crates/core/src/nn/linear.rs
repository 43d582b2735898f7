use crate::autograd::Var;
use crate::error::{Error, Result};

/// `x · W (+ bias broadcast over rows)`.
pub fn linear<'t>(w: Var<'t>, x: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
        return Err(Error::Shape {
            op: "linear",
            lhs: xs,
            rhs: ws,
        });
    }
    let out = x.matmul(w);
    match bias {
        None => Ok(out),
        Some(b) => {
            if b.shape() != [ws[1]] {
                return Err(Error::Shape {
                    op: "linear bias",
                    lhs: b.shape(),
                    rhs: vec![ws[1]],
                });
            }
            Ok(out.add(b.broadcast_rows(xs[0])))
        }
    }
}
