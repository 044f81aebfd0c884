//! The arithmetic language in which cost and score functions are written.
//!
//! Candidates travel through the pipeline as source text: they are parsed
//! into a [`CostExpr`], validated against a feature registry, evaluated once
//! per environment step during shaped training, and finally recombined with
//! [`weighted_sum`]. The canonical serialized form of a tree is its
//! [`Display`](std::fmt::Display) output.

mod ast;
mod eval;
mod parser;
mod pretty;

use std::collections::BTreeMap;

use thiserror::Error;

pub use ast::{weighted_sum, BinaryOp, CmpOp, Condition, CostExpr, Limits, UnaryOp};
pub use eval::{evaluate, GUARD_EPS, SATURATION};
pub use parser::{parse, parse_with_limits};

/// Trees serialize as their canonical text and load with relaxed limits.
impl serde::Serialize for CostExpr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for CostExpr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = <String as serde::Deserialize>::deserialize(d)?;
        parse_with_limits(&text, Limits::relaxed()).map_err(serde::de::Error::custom)
    }
}

/// Source of named scalar bindings for evaluation.
pub trait FeatureSource {
    fn feature(&self, name: &str) -> Option<f64>;
}

/// A name to value map. Only finite values are accepted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureMap {
    values: BTreeMap<String, f64>,
}

impl FeatureMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: f64) -> Result<(), DslError> {
        let name = name.into();
        if !value.is_finite() {
            return Err(DslError::NonFiniteInput(name));
        }
        self.values.insert(name, value);
        Ok(())
    }

    /// Builder-style insert; panics on a non-finite value.
    pub fn with(mut self, name: impl Into<String>, value: f64) -> Self {
        self.insert(name, value).expect("finite feature value");
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.values.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl FeatureSource for FeatureMap {
    fn feature(&self, name: &str) -> Option<f64> {
        self.get(name)
    }
}

impl<S: FeatureSource + ?Sized> FeatureSource for &S {
    fn feature(&self, name: &str) -> Option<f64> {
        (**self).feature(name)
    }
}

/// Syntax error with the byte offset at which parsing stopped.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at offset {offset}: expected {expected} (near `{excerpt}`)")]
pub struct ParseError {
    pub offset: usize,
    pub expected: String,
    pub excerpt: String,
}

impl ParseError {
    pub(crate) fn new(src: &str, offset: usize, expected: &str) -> Self {
        let offset = offset.min(src.len());
        let mut from = offset.saturating_sub(12);
        while !src.is_char_boundary(from) {
            from -= 1;
        }
        let mut to = (offset + 12).min(src.len());
        while !src.is_char_boundary(to) {
            to += 1;
        }
        ParseError {
            offset,
            expected: expected.to_string(),
            excerpt: src[from..to].to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DslError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{what} limit exceeded: {actual} > {limit}")]
    LimitExceeded {
        what: &'static str,
        limit: usize,
        actual: usize,
    },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("feature `{0}` is not bound")]
    UnboundFeature(String),
    #[error("feature `{0}` has a non-finite value")]
    NonFiniteInput(String),
    #[error("non-finite constant {0}")]
    NonFiniteConstant(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("internal evaluation error: {0}")]
    Internal(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(pairs: &[(&str, f64)]) -> FeatureMap {
        pairs.iter().fold(FeatureMap::new(), |m, (k, v)| m.with(*k, *v))
    }

    #[test]
    fn parses_min_minus_constant() {
        let e = parse("min(1.0, dist_hazard_min) - 1.0").unwrap();
        let want = CostExpr::binary(
            BinaryOp::Sub,
            CostExpr::binary(
                BinaryOp::Min,
                CostExpr::constant(1.0),
                CostExpr::feature("dist_hazard_min"),
            ),
            CostExpr::constant(1.0),
        );
        assert_eq!(e, want);
    }

    #[test]
    fn truncated_input_reports_end_offset() {
        match parse("1 + ") {
            Err(DslError::Parse(p)) => assert_eq!(p.offset, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse("1 - 2 - 3 * 4 / 2").unwrap();
        assert_eq!(evaluate(&e, &FeatureMap::new()).unwrap(), 1.0 - 2.0 - 3.0 * 4.0 / 2.0);
        assert_eq!(e.to_string(), "1 - 2 - 3 * 4 / 2");
        let e = parse("2 * (3 + 4)").unwrap();
        assert_eq!(evaluate(&e, &FeatureMap::new()).unwrap(), 14.0);
    }

    #[test]
    fn negative_literal_folds_but_parenthesized_does_not() {
        assert_eq!(parse("-0.5").unwrap(), CostExpr::constant(-0.5));
        assert_eq!(
            parse("-(0.5)").unwrap(),
            CostExpr::unary(UnaryOp::Neg, CostExpr::constant(0.5))
        );
    }

    #[test]
    fn evaluation_examples() {
        let e = parse("-(1.0 - min(dist_hazard_min, 1.0))").unwrap();
        assert_eq!(evaluate(&e, &fm(&[("dist_hazard_min", 0.5)])).unwrap(), -0.5);

        let e = parse("1.0/0.0").unwrap();
        assert_eq!(evaluate(&e, &FeatureMap::new()).unwrap(), 1e8);

        let e = parse("if(in_hazard > 0.5, -10.0, 0.0)").unwrap();
        assert_eq!(evaluate(&e, &fm(&[("in_hazard", 1.0)])).unwrap(), -10.0);
    }

    #[test]
    fn guards_keep_results_finite() {
        let empty = FeatureMap::new();
        for src in ["log(0)", "sqrt(-4)", "exp(1000) * exp(1000)", "-1 / 0", "exp(exp(10))"] {
            let v = evaluate(&parse(src).unwrap(), &empty).unwrap();
            assert!(v.is_finite(), "{src} -> {v}");
        }
        assert_eq!(evaluate(&parse("-1 / 0").unwrap(), &empty).unwrap(), -1e8);
        assert_eq!(evaluate(&parse("log(0)").unwrap(), &empty).unwrap(), (1e-8f64).ln());
    }

    #[test]
    fn unbound_feature_is_an_error() {
        let e = parse("speed + 1").unwrap();
        assert_eq!(
            evaluate(&e, &FeatureMap::new()),
            Err(DslError::UnboundFeature("speed".into()))
        );
    }

    #[test]
    fn free_features_examples() {
        assert!(parse("3 * 4").unwrap().free_features().is_empty());
        let x: Vec<_> = parse("x + x").unwrap().free_features().into_iter().collect();
        assert_eq!(x, vec!["x".to_string()]);
        let e = parse("if(a > b, if(c < 1, d, e), f)").unwrap();
        let names: Vec<_> = e.free_features().into_iter().collect();
        assert_eq!(names, ["a", "b", "c", "d", "e", "f"]);
    }

    #[test]
    fn weighted_sum_examples() {
        let x = parse("x").unwrap();
        let one = weighted_sum(std::slice::from_ref(&x), &[1.0]).unwrap();
        let m = fm(&[("x", -3.25)]);
        assert_eq!(evaluate(&one, &m).unwrap(), evaluate(&x, &m).unwrap());

        let w = weighted_sum(&[parse("x").unwrap(), parse("y").unwrap()], &[0.25, 0.75]).unwrap();
        assert_eq!(evaluate(&w, &fm(&[("x", 4.0), ("y", 0.0)])).unwrap(), 1.0);

        assert!(matches!(
            weighted_sum(&[x.clone()], &[0.5, 0.5]),
            Err(DslError::InvalidArgument(_))
        ));
        assert!(weighted_sum(&[], &[]).is_err());
    }

    #[test]
    fn limits_are_enforced() {
        let deep = format!("{}x{}", "abs(".repeat(40), ")".repeat(40));
        assert!(matches!(
            parse(&deep),
            Err(DslError::LimitExceeded { what: "depth", .. })
        ));
        let wide = vec!["x"; 300].join(" + ");
        assert!(matches!(
            parse(&wide),
            Err(DslError::LimitExceeded { what: "node count", .. })
        ));
        let nested = format!("{}1{}", "(".repeat(5000), ")".repeat(5000));
        assert!(matches!(
            parse(&nested),
            Err(DslError::LimitExceeded { what: "nesting", .. })
        ));
    }

    #[test]
    fn validate_rejects_unknown_features() {
        let e = parse("dist_to_moon * 2").unwrap();
        assert_eq!(
            e.validate(&["x", "y"], Limits::default()),
            Err(DslError::UnknownFeature("dist_to_moon".into()))
        );
    }

    #[test]
    fn rejects_garbage() {
        for src in ["", "1 +", "min(1.0,", "foo(1)", "if x", "1 = 2", "1e", "3 4", "if(1, 2, 3)", "1e999"] {
            assert!(matches!(parse(src), Err(DslError::Parse(_))), "{src}");
        }
    }

    #[test]
    fn non_finite_feature_values_are_refused() {
        assert!(FeatureMap::new().insert("x", f64::NAN).is_err());
    }
}
