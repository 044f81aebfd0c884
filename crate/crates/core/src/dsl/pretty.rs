//! Canonical single-line rendering with minimal parentheses.
//!
//! `parse(&expr.to_string())` reproduces `expr` structurally for every tree
//! within limits whose feature names are plain identifiers.

use std::fmt::{self, Display, Formatter, Write};

use super::ast::{CostExpr, UnaryOp};

impl Display for CostExpr {
    fn fmt(&self, f: &mut Formatter<'_>) -> fmt::Result {
        write_expr(self, f)
    }
}

fn infix_precedence(e: &CostExpr) -> u8 {
    match e {
        CostExpr::Binary(op, _, _) => op.precedence().unwrap_or(3),
        _ => 3,
    }
}

fn write_expr<W: Write>(e: &CostExpr, out: &mut W) -> fmt::Result {
    match e {
        CostExpr::Constant(c) => write!(out, "{c}"),
        CostExpr::Feature(name) => out.write_str(name),
        CostExpr::Unary(UnaryOp::Neg, a) => {
            // A bare positive literal would fold back into a negative constant.
            let wrap = matches!(**a, CostExpr::Constant(_) | CostExpr::Unary(UnaryOp::Neg, _))
                || matches!(**a, CostExpr::Binary(op, _, _) if op.precedence().is_some());
            out.write_char('-')?;
            write_maybe_paren(a, wrap, out)
        }
        CostExpr::Unary(op, a) => {
            write!(out, "{}(", op.name())?;
            write_expr(a, out)?;
            out.write_char(')')
        }
        CostExpr::Binary(op, a, b) => match op.precedence() {
            Some(p) => {
                write_maybe_paren(a, infix_precedence(a) < p, out)?;
                write!(out, " {} ", op.symbol())?;
                write_maybe_paren(b, infix_precedence(b) <= p, out)
            }
            None => {
                write!(out, "{}(", op.symbol())?;
                write_expr(a, out)?;
                out.write_str(", ")?;
                write_expr(b, out)?;
                out.write_char(')')
            }
        },
        CostExpr::Clip { value, lo, hi } => {
            out.write_str("clip(")?;
            write_expr(value, out)?;
            out.write_str(", ")?;
            write_expr(lo, out)?;
            out.write_str(", ")?;
            write_expr(hi, out)?;
            out.write_char(')')
        }
        CostExpr::If {
            cond,
            then,
            otherwise,
        } => {
            out.write_str("if(")?;
            write_expr(&cond.lhs, out)?;
            write!(out, " {} ", cond.op.symbol())?;
            write_expr(&cond.rhs, out)?;
            out.write_str(", ")?;
            write_expr(then, out)?;
            out.write_str(", ")?;
            write_expr(otherwise, out)?;
            out.write_char(')')
        }
    }
}

fn write_maybe_paren<W: Write>(e: &CostExpr, paren: bool, out: &mut W) -> fmt::Result {
    if paren {
        out.write_char('(')?;
        write_expr(e, out)?;
        out.write_char(')')
    } else {
        write_expr(e, out)
    }
}
