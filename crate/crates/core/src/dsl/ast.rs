use std::collections::BTreeSet;

/// One-argument operators. `Neg` is the only one with its own surface syntax
/// (prefix `-`); the rest are written as calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Abs,
    Exp,
    Log,
    Sqrt,
    Tanh,
    /// Heaviside step: 1 for strictly positive input, else 0.
    Step,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Abs => "abs",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Tanh => "tanh",
            UnaryOp::Step => "step",
        }
    }

    pub(crate) fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "neg" => UnaryOp::Neg,
            "abs" => UnaryOp::Abs,
            "exp" => UnaryOp::Exp,
            "log" => UnaryOp::Log,
            "sqrt" => UnaryOp::Sqrt,
            "tanh" => UnaryOp::Tanh,
            "step" => UnaryOp::Step,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Min => "min",
            BinaryOp::Max => "max",
        }
    }

    /// Infix binding strength; `None` for the call-style operators.
    pub(crate) fn precedence(self) -> Option<u8> {
        match self {
            BinaryOp::Add | BinaryOp::Sub => Some(1),
            BinaryOp::Mul | BinaryOp::Div => Some(2),
            BinaryOp::Min | BinaryOp::Max => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
        }
    }

    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Eq => lhs == rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub op: CmpOp,
    pub lhs: Box<CostExpr>,
    pub rhs: Box<CostExpr>,
}

/// A cost (or score) function over named scalar features.
///
/// Trees are immutable values; building one never validates it. Use
/// [`CostExpr::validate`] to check feature names and size limits.
#[derive(Debug, Clone, PartialEq)]
pub enum CostExpr {
    Constant(f64),
    Feature(String),
    Unary(UnaryOp, Box<CostExpr>),
    Binary(BinaryOp, Box<CostExpr>, Box<CostExpr>),
    Clip {
        value: Box<CostExpr>,
        lo: Box<CostExpr>,
        hi: Box<CostExpr>,
    },
    If {
        cond: Condition,
        then: Box<CostExpr>,
        otherwise: Box<CostExpr>,
    },
}

/// Size bounds for a tree. Generated candidates use [`Limits::default`];
/// weighted composites are larger by construction and use [`Limits::composite`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_depth: usize,
    pub max_nodes: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_depth: 32,
            max_nodes: 512,
        }
    }
}

impl Limits {
    /// Bounds large enough for a weighted sum of `k` default-sized terms.
    pub fn composite(k: usize) -> Self {
        let base = Limits::default();
        let k = k.max(1);
        Limits {
            max_depth: base.max_depth + k + 2,
            max_nodes: k * (base.max_nodes + 2) + k,
        }
    }

    /// Bounds used when loading `.cost` files whose origin is unknown.
    pub fn relaxed() -> Self {
        Limits::composite(16)
    }
}

impl CostExpr {
    pub fn constant(value: f64) -> Self {
        CostExpr::Constant(value)
    }

    pub fn feature(name: impl Into<String>) -> Self {
        CostExpr::Feature(name.into())
    }

    pub fn unary(op: UnaryOp, arg: CostExpr) -> Self {
        CostExpr::Unary(op, Box::new(arg))
    }

    pub fn binary(op: BinaryOp, lhs: CostExpr, rhs: CostExpr) -> Self {
        CostExpr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn clip(value: CostExpr, lo: CostExpr, hi: CostExpr) -> Self {
        CostExpr::Clip {
            value: Box::new(value),
            lo: Box::new(lo),
            hi: Box::new(hi),
        }
    }

    pub fn if_then_else(
        op: CmpOp,
        lhs: CostExpr,
        rhs: CostExpr,
        then: CostExpr,
        otherwise: CostExpr,
    ) -> Self {
        CostExpr::If {
            cond: Condition {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            },
            then: Box::new(then),
            otherwise: Box::new(otherwise),
        }
    }

    /// Direct children, in source order.
    pub fn children(&self) -> Vec<&CostExpr> {
        match self {
            CostExpr::Constant(_) | CostExpr::Feature(_) => Vec::new(),
            CostExpr::Unary(_, a) => vec![a],
            CostExpr::Binary(_, a, b) => vec![a, b],
            CostExpr::Clip { value, lo, hi } => vec![value, lo, hi],
            CostExpr::If {
                cond,
                then,
                otherwise,
            } => vec![&cond.lhs, &cond.rhs, then, otherwise],
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().iter().map(|c| c.node_count()).sum::<usize>()
    }

    /// Leaves have depth 1.
    pub fn depth(&self) -> usize {
        1 + self
            .children()
            .iter()
            .map(|c| c.depth())
            .max()
            .unwrap_or(0)
    }

    /// Names of every feature referenced anywhere in the tree.
    pub fn free_features(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_features(&mut out);
        out
    }

    fn collect_features(&self, out: &mut BTreeSet<String>) {
        if let CostExpr::Feature(name) = self {
            out.insert(name.clone());
        }
        for child in self.children() {
            child.collect_features(out);
        }
    }

    /// Checks size limits, constant finiteness, and that every feature is
    /// declared in `registry`.
    pub fn validate<S: AsRef<str>>(
        &self,
        registry: &[S],
        limits: Limits,
    ) -> Result<(), super::DslError> {
        self.check_limits(limits)?;
        if let Some(bad) = self.first_non_finite_constant() {
            return Err(super::DslError::NonFiniteConstant(bad));
        }
        for name in self.free_features() {
            if !registry.iter().any(|r| r.as_ref() == name) {
                return Err(super::DslError::UnknownFeature(name));
            }
        }
        Ok(())
    }

    pub fn check_limits(&self, limits: Limits) -> Result<(), super::DslError> {
        let nodes = self.node_count();
        if nodes > limits.max_nodes {
            return Err(super::DslError::LimitExceeded {
                what: "node count",
                limit: limits.max_nodes,
                actual: nodes,
            });
        }
        let depth = self.depth();
        if depth > limits.max_depth {
            return Err(super::DslError::LimitExceeded {
                what: "depth",
                limit: limits.max_depth,
                actual: depth,
            });
        }
        Ok(())
    }

    fn first_non_finite_constant(&self) -> Option<f64> {
        if let CostExpr::Constant(c) = self {
            if !c.is_finite() {
                return Some(*c);
            }
        }
        self.children()
            .into_iter()
            .find_map(|c| c.first_non_finite_constant())
    }
}

/// Builds `w[0]*e[0] + w[1]*e[1] + ...`, folded left so that evaluating the
/// composite performs the same additions in the same order as a direct sum.
pub fn weighted_sum(exprs: &[CostExpr], weights: &[f64]) -> Result<CostExpr, super::DslError> {
    if exprs.len() != weights.len() {
        return Err(super::DslError::InvalidArgument(format!(
            "weighted_sum: {} expressions but {} weights",
            exprs.len(),
            weights.len()
        )));
    }
    if exprs.is_empty() {
        return Err(super::DslError::InvalidArgument(
            "weighted_sum: needs at least one term".into(),
        ));
    }
    let mut terms = exprs
        .iter()
        .zip(weights)
        .map(|(e, &w)| CostExpr::binary(BinaryOp::Mul, CostExpr::Constant(w), e.clone()));
    let first = terms.next().expect("nonempty");
    Ok(terms.fold(first, |acc, t| CostExpr::binary(BinaryOp::Add, acc, t)))
}
