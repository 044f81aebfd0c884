use super::ast::{BinaryOp, CostExpr, UnaryOp};
use super::{DslError, FeatureSource};

/// Smallest magnitude a divisor, `log` or `sqrt` argument is allowed to take.
pub const GUARD_EPS: f64 = 1e-8;

/// Every intermediate result is saturated to this magnitude, which keeps
/// evaluation finite for any finite inputs (no operation on two values of
/// this size can produce NaN).
pub const SATURATION: f64 = 1e300;

#[inline]
fn saturate(x: f64) -> f64 {
    x.clamp(-SATURATION, SATURATION)
}

/// Evaluates `expr` against `features`.
///
/// Division is computed as `x / (sign(y) * max(|y|, 1e-8))` with
/// `sign(0) = +1`; `log` and `sqrt` clamp their argument from below at 1e-8.
pub fn evaluate<S: FeatureSource + ?Sized>(expr: &CostExpr, features: &S) -> Result<f64, DslError> {
    let v = eval_node(expr, features)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DslError::Internal(format!("non-finite result {v}")))
    }
}

fn eval_node<S: FeatureSource + ?Sized>(expr: &CostExpr, f: &S) -> Result<f64, DslError> {
    Ok(match expr {
        CostExpr::Constant(c) => saturate(*c),
        CostExpr::Feature(name) => match f.feature(name) {
            Some(v) => saturate(v),
            None => return Err(DslError::UnboundFeature(name.clone())),
        },
        CostExpr::Unary(op, a) => {
            let x = eval_node(a, f)?;
            saturate(match op {
                UnaryOp::Neg => -x,
                UnaryOp::Abs => x.abs(),
                UnaryOp::Exp => x.exp(),
                UnaryOp::Log => x.max(GUARD_EPS).ln(),
                UnaryOp::Sqrt => x.max(GUARD_EPS).sqrt(),
                UnaryOp::Tanh => x.tanh(),
                UnaryOp::Step => {
                    if x > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
            })
        }
        CostExpr::Binary(op, a, b) => {
            let x = eval_node(a, f)?;
            let y = eval_node(b, f)?;
            saturate(match op {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
                BinaryOp::Div => {
                    let sign = if y < 0.0 { -1.0 } else { 1.0 };
                    x / (sign * y.abs().max(GUARD_EPS))
                }
                BinaryOp::Min => x.min(y),
                BinaryOp::Max => x.max(y),
            })
        }
        CostExpr::Clip { value, lo, hi } => {
            let v = eval_node(value, f)?;
            let lo = eval_node(lo, f)?;
            let hi = eval_node(hi, f)?;
            // An inverted range collapses to `lo` instead of panicking like f64::clamp.
            v.min(hi).max(lo)
        }
        CostExpr::If {
            cond,
            then,
            otherwise,
        } => {
            let l = eval_node(&cond.lhs, f)?;
            let r = eval_node(&cond.rhs, f)?;
            if cond.op.holds(l, r) {
                eval_node(then, f)?
            } else {
                eval_node(otherwise, f)?
            }
        }
    })
}
