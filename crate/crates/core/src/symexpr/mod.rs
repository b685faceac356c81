//! Scalar symbolic expressions over chart coordinates.
//!
//! [`ScalarExpr`] is the coefficient field for every differential form and
//! vector field in the engine. Trees are built from exact rational constants,
//! coordinate symbols, sums, products, integer powers, quotients, and the
//! function vocabulary `{sin, cos, exp, sqrt}`. Values are immutable after
//! construction; all operations are pure functions.
//!
//! There is no canonical normal form: structural equality after
//! [`ScalarExpr::simplified`] catches most identities, and the probabilistic
//! [`zero::is_zero`] test decides the rest.

mod parse;
mod zero;

pub use parse::parse_expr;
pub use zero::{is_zero, is_zero_default, is_zero_seeded, ZeroTest};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use thiserror::Error;

/// Errors from parsing, differentiation and evaluation of scalar expressions.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("no value supplied for coordinate `{0}`")]
    MissingCoordinate(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("expression evaluated to a non-finite value")]
    NonFinite,
    #[error("zero-test resample budget exhausted after {0} evaluation failures")]
    SampleBudget(usize),
}

/// Unary functions in the frozen vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UnaryFn {
    Sin,
    Cos,
    Exp,
    Sqrt,
}

impl UnaryFn {
    pub fn name(self) -> &'static str {
        match self {
            UnaryFn::Sin => "sin",
            UnaryFn::Cos => "cos",
            UnaryFn::Exp => "exp",
            UnaryFn::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "sin" => Some(UnaryFn::Sin),
            "cos" => Some(UnaryFn::Cos),
            "exp" => Some(UnaryFn::Exp),
            "sqrt" => Some(UnaryFn::Sqrt),
            _ => None,
        }
    }
}

/// A scalar symbolic expression tree.
///
/// The variant order defines the canonical term ordering used by
/// [`ScalarExpr::simplified`] when sorting factors and collecting like terms.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum ScalarExpr {
    /// Exact rational constant.
    Const(BigRational),
    /// Coordinate symbol; must be declared in the governing chart.
    Coord(String),
    /// Unary function application.
    Func(UnaryFn, Box<ScalarExpr>),
    /// Integer power of a base expression.
    Pow(Box<ScalarExpr>, i32),
    /// Quotient; kept symbolic unless the denominator folds to a constant.
    Quot(Box<ScalarExpr>, Box<ScalarExpr>),
    /// n-ary product.
    Prod(Vec<ScalarExpr>),
    /// n-ary sum.
    Sum(Vec<ScalarExpr>),
}

impl ScalarExpr {
    pub fn int(v: i64) -> Self {
        ScalarExpr::Const(BigRational::from_integer(BigInt::from(v)))
    }

    pub fn rational(num: i64, den: i64) -> Self {
        ScalarExpr::Const(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn coord(name: impl Into<String>) -> Self {
        ScalarExpr::Coord(name.into())
    }

    pub fn zero() -> Self {
        Self::int(0)
    }

    pub fn one() -> Self {
        Self::int(1)
    }

    pub fn func(f: UnaryFn, arg: ScalarExpr) -> Self {
        ScalarExpr::Func(f, Box::new(arg))
    }

    pub fn pow(base: ScalarExpr, exp: i32) -> Self {
        ScalarExpr::Pow(Box::new(base), exp)
    }

    pub fn quot(num: ScalarExpr, den: ScalarExpr) -> Self {
        ScalarExpr::Quot(Box::new(num), Box::new(den))
    }

    pub fn is_const_zero(&self) -> bool {
        matches!(self, ScalarExpr::Const(c) if c.is_zero())
    }

    pub fn is_const_one(&self) -> bool {
        matches!(self, ScalarExpr::Const(c) if c.is_one())
    }

    pub fn as_const(&self) -> Option<&BigRational> {
        match self {
            ScalarExpr::Const(c) => Some(c),
            _ => None,
        }
    }

    /// Coordinate names appearing in the tree, sorted.
    pub fn free_coords(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_coords(&mut out);
        out
    }

    fn collect_coords(&self, out: &mut BTreeSet<String>) {
        match self {
            ScalarExpr::Const(_) => {}
            ScalarExpr::Coord(name) => {
                out.insert(name.clone());
            }
            ScalarExpr::Func(_, a) => a.collect_coords(out),
            ScalarExpr::Pow(b, _) => b.collect_coords(out),
            ScalarExpr::Quot(a, b) => {
                a.collect_coords(out);
                b.collect_coords(out);
            }
            ScalarExpr::Prod(xs) | ScalarExpr::Sum(xs) => {
                for x in xs {
                    x.collect_coords(out);
                }
            }
        }
    }

    /// Number of non-leaf (operator) nodes in the tree.
    pub fn op_node_count(&self) -> usize {
        match self {
            ScalarExpr::Const(_) | ScalarExpr::Coord(_) => 0,
            ScalarExpr::Func(_, a) => 1 + a.op_node_count(),
            ScalarExpr::Pow(b, _) => 1 + b.op_node_count(),
            ScalarExpr::Quot(a, b) => 1 + a.op_node_count() + b.op_node_count(),
            ScalarExpr::Prod(xs) | ScalarExpr::Sum(xs) => {
                1 + xs.iter().map(|x| x.op_node_count()).sum::<usize>()
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Operator sugar. These build raw trees; call `simplified` to canonicalize.
// ---------------------------------------------------------------------------

impl std::ops::Add for ScalarExpr {
    type Output = ScalarExpr;
    fn add(self, rhs: ScalarExpr) -> ScalarExpr {
        ScalarExpr::Sum(vec![self, rhs])
    }
}

impl std::ops::Sub for ScalarExpr {
    type Output = ScalarExpr;
    fn sub(self, rhs: ScalarExpr) -> ScalarExpr {
        ScalarExpr::Sum(vec![self, -rhs])
    }
}

impl std::ops::Mul for ScalarExpr {
    type Output = ScalarExpr;
    fn mul(self, rhs: ScalarExpr) -> ScalarExpr {
        ScalarExpr::Prod(vec![self, rhs])
    }
}

impl std::ops::Neg for ScalarExpr {
    type Output = ScalarExpr;
    fn neg(self) -> ScalarExpr {
        ScalarExpr::Prod(vec![ScalarExpr::int(-1), self])
    }
}

// ---------------------------------------------------------------------------
// Simplification
// ---------------------------------------------------------------------------

impl ScalarExpr {
    /// Canonicalize: constant folding, identity elimination, like-term
    /// collection over the derived term ordering. Idempotent.
    pub fn simplified(&self) -> ScalarExpr {
        match self {
            ScalarExpr::Const(_) | ScalarExpr::Coord(_) => self.clone(),
            ScalarExpr::Func(f, a) => simplify_func(*f, a.simplified()),
            ScalarExpr::Pow(b, k) => simplify_pow(b.simplified(), *k),
            ScalarExpr::Quot(a, b) => simplify_quot(a.simplified(), b.simplified()),
            ScalarExpr::Prod(xs) => {
                simplify_prod(xs.iter().map(|x| x.simplified()).collect())
            }
            ScalarExpr::Sum(xs) => simplify_sum(xs.iter().map(|x| x.simplified()).collect()),
        }
    }
}

fn simplify_func(f: UnaryFn, arg: ScalarExpr) -> ScalarExpr {
    if let ScalarExpr::Const(c) = &arg {
        match f {
            UnaryFn::Sin if c.is_zero() => return ScalarExpr::zero(),
            UnaryFn::Cos if c.is_zero() => return ScalarExpr::one(),
            UnaryFn::Exp if c.is_zero() => return ScalarExpr::one(),
            UnaryFn::Sqrt => {
                if !c.is_negative() {
                    if let Some(root) = rational_sqrt(c) {
                        return ScalarExpr::Const(root);
                    }
                }
            }
            _ => {}
        }
    }
    ScalarExpr::Func(f, Box::new(arg))
}

/// Exact square root of a non-negative rational, when one exists.
fn rational_sqrt(c: &BigRational) -> Option<BigRational> {
    let num = c.numer().sqrt();
    let den = c.denom().sqrt();
    if &(&num * &num) == c.numer() && &(&den * &den) == c.denom() {
        Some(BigRational::new(num, den))
    } else {
        None
    }
}

fn rational_pow(c: &BigRational, k: i32) -> Option<BigRational> {
    if c.is_zero() && k < 0 {
        return None;
    }
    Some(c.pow(k))
}

fn simplify_pow(base: ScalarExpr, k: i32) -> ScalarExpr {
    if k == 0 {
        // 0^0 folds to 1 by convention.
        return ScalarExpr::one();
    }
    if k == 1 {
        return base;
    }
    match base {
        ScalarExpr::Const(c) => match rational_pow(&c, k) {
            Some(v) => ScalarExpr::Const(v),
            None => ScalarExpr::Pow(Box::new(ScalarExpr::Const(c)), k),
        },
        ScalarExpr::Pow(b, k2) => match k.checked_mul(k2) {
            Some(kk) => simplify_pow(*b, kk),
            None => ScalarExpr::Pow(Box::new(ScalarExpr::Pow(b, k2)), k),
        },
        ScalarExpr::Prod(xs) => {
            simplify_prod(xs.into_iter().map(|x| simplify_pow(x, k)).collect())
        }
        ScalarExpr::Quot(a, b) => simplify_quot(simplify_pow(*a, k), simplify_pow(*b, k)),
        other => ScalarExpr::Pow(Box::new(other), k),
    }
}

fn simplify_quot(num: ScalarExpr, den: ScalarExpr) -> ScalarExpr {
    if num.is_const_zero() && !den.is_const_zero() {
        return ScalarExpr::zero();
    }
    if den.is_const_one() {
        return num;
    }
    if let ScalarExpr::Const(c) = &den {
        if !c.is_zero() {
            return simplify_prod(vec![ScalarExpr::Const(c.recip()), num]);
        }
    }
    if num == den && !num.is_const_zero() {
        return ScalarExpr::one();
    }
    // Flatten nested quotients: (a/b)/c = a/(b*c), a/(b/c) = (a*c)/b.
    match (num, den) {
        (ScalarExpr::Quot(a, b), c) => simplify_quot(*a, simplify_prod(vec![*b, c])),
        (a, ScalarExpr::Quot(b, c)) => simplify_quot(simplify_prod(vec![a, *c]), *b),
        (a, b) => ScalarExpr::Quot(Box::new(a), Box::new(b)),
    }
}

fn simplify_prod(factors: Vec<ScalarExpr>) -> ScalarExpr {
    let mut coef = BigRational::one();
    let mut powers: BTreeMap<ScalarExpr, i64> = BTreeMap::new();
    let mut stack: Vec<ScalarExpr> = factors;
    stack.reverse();
    while let Some(f) = stack.pop() {
        match f {
            ScalarExpr::Prod(inner) => {
                for x in inner.into_iter().rev() {
                    stack.push(x);
                }
            }
            ScalarExpr::Const(c) => {
                if c.is_zero() {
                    return ScalarExpr::zero();
                }
                coef *= c;
            }
            ScalarExpr::Pow(b, k) => {
                *powers.entry(*b).or_insert(0) += i64::from(k);
            }
            other => {
                *powers.entry(other).or_insert(0) += 1;
            }
        }
    }
    let mut out: Vec<ScalarExpr> = Vec::new();
    for (base, exp) in powers {
        if exp == 0 {
            continue;
        }
        if exp == 1 {
            out.push(base);
        } else {
            let exp32 = i32::try_from(exp).expect("exponent overflow in product collection");
            out.push(simplify_pow(base, exp32));
        }
    }
    // Re-collected powers may have folded to constants (e.g. 2^2).
    let mut folded: Vec<ScalarExpr> = Vec::new();
    for f in out {
        match f {
            ScalarExpr::Const(c) => {
                if c.is_zero() {
                    return ScalarExpr::zero();
                }
                coef *= c;
            }
            other => folded.push(other),
        }
    }
    if folded.is_empty() {
        return ScalarExpr::Const(coef);
    }
    if coef.is_zero() {
        return ScalarExpr::zero();
    }
    // Distribute a constant over a lone sum factor so that negated sums
    // cancel term by term in like-term collection.
    if folded.len() == 1 && !coef.is_one() {
        if let ScalarExpr::Sum(terms) = &folded[0] {
            let distributed: Vec<ScalarExpr> = terms
                .iter()
                .map(|t| simplify_prod(vec![ScalarExpr::Const(coef.clone()), t.clone()]))
                .collect();
            return simplify_sum(distributed);
        }
    }
    if !coef.is_one() {
        let mut v = Vec::with_capacity(folded.len() + 1);
        v.push(ScalarExpr::Const(coef));
        v.extend(folded);
        return ScalarExpr::Prod(v);
    }
    if folded.len() == 1 {
        folded.pop().unwrap()
    } else {
        ScalarExpr::Prod(folded)
    }
}

/// Split a simplified term into (rational coefficient, monomial key).
/// The key is `None` for pure constants.
fn split_term(term: ScalarExpr) -> (BigRational, Option<ScalarExpr>) {
    match term {
        ScalarExpr::Const(c) => (c, None),
        ScalarExpr::Prod(mut xs) => {
            if let Some(ScalarExpr::Const(_)) = xs.first() {
                let c = match xs.remove(0) {
                    ScalarExpr::Const(c) => c,
                    _ => unreachable!(),
                };
                let key = if xs.len() == 1 {
                    xs.pop().unwrap()
                } else {
                    ScalarExpr::Prod(xs)
                };
                (c, Some(key))
            } else {
                (BigRational::one(), Some(ScalarExpr::Prod(xs)))
            }
        }
        other => (BigRational::one(), Some(other)),
    }
}

fn rebuild_term(coef: BigRational, key: ScalarExpr) -> ScalarExpr {
    if coef.is_one() {
        return key;
    }
    match key {
        ScalarExpr::Prod(xs) => {
            let mut v = Vec::with_capacity(xs.len() + 1);
            v.push(ScalarExpr::Const(coef));
            v.extend(xs);
            ScalarExpr::Prod(v)
        }
        other => ScalarExpr::Prod(vec![ScalarExpr::Const(coef), other]),
    }
}

fn simplify_sum(terms: Vec<ScalarExpr>) -> ScalarExpr {
    let mut constant = BigRational::zero();
    let mut collected: BTreeMap<ScalarExpr, BigRational> = BTreeMap::new();
    let mut stack: Vec<ScalarExpr> = terms;
    stack.reverse();
    while let Some(t) = stack.pop() {
        match t {
            ScalarExpr::Sum(inner) => {
                for x in inner.into_iter().rev() {
                    stack.push(x);
                }
            }
            other => {
                let (c, key) = split_term(other);
                match key {
                    None => constant += c,
                    Some(k) => {
                        *collected.entry(k).or_insert_with(BigRational::zero) += c;
                    }
                }
            }
        }
    }
    let mut out: Vec<ScalarExpr> = Vec::new();
    if !constant.is_zero() {
        out.push(ScalarExpr::Const(constant));
    }
    for (key, coef) in collected {
        if coef.is_zero() {
            continue;
        }
        out.push(rebuild_term(coef, key));
    }
    match out.len() {
        0 => ScalarExpr::zero(),
        1 => out.pop().unwrap(),
        _ => ScalarExpr::Sum(out),
    }
}

// ---------------------------------------------------------------------------
// Differentiation
// ---------------------------------------------------------------------------

impl ScalarExpr {
    /// Exact partial derivative with respect to `coord`, simplified.
    /// A coordinate absent from the tree differentiates to zero.
    pub fn diff(&self, coord: &str) -> ScalarExpr {
        self.diff_raw(coord).simplified()
    }

    fn diff_raw(&self, coord: &str) -> ScalarExpr {
        match self {
            ScalarExpr::Const(_) => ScalarExpr::zero(),
            ScalarExpr::Coord(name) => {
                if name == coord {
                    ScalarExpr::one()
                } else {
                    ScalarExpr::zero()
                }
            }
            ScalarExpr::Func(f, a) => {
                let da = a.diff_raw(coord);
                let outer = match f {
                    UnaryFn::Sin => ScalarExpr::func(UnaryFn::Cos, (**a).clone()),
                    UnaryFn::Cos => -ScalarExpr::func(UnaryFn::Sin, (**a).clone()),
                    UnaryFn::Exp => ScalarExpr::func(UnaryFn::Exp, (**a).clone()),
                    UnaryFn::Sqrt => ScalarExpr::quot(
                        ScalarExpr::one(),
                        ScalarExpr::int(2) * ScalarExpr::func(UnaryFn::Sqrt, (**a).clone()),
                    ),
                };
                outer * da
            }
            ScalarExpr::Pow(b, k) => {
                let db = b.diff_raw(coord);
                ScalarExpr::int(i64::from(*k))
                    * ScalarExpr::pow((**b).clone(), k - 1)
                    * db
            }
            ScalarExpr::Quot(a, b) => {
                let da = a.diff_raw(coord);
                let db = b.diff_raw(coord);
                let num = da * (**b).clone() - (**a).clone() * db;
                ScalarExpr::quot(num, ScalarExpr::pow((**b).clone(), 2))
            }
            ScalarExpr::Prod(xs) => {
                let mut terms = Vec::with_capacity(xs.len());
                for (i, xi) in xs.iter().enumerate() {
                    let mut fs = Vec::with_capacity(xs.len());
                    for (j, xj) in xs.iter().enumerate() {
                        if i == j {
                            fs.push(xi.diff_raw(coord));
                        } else {
                            fs.push(xj.clone());
                        }
                    }
                    terms.push(ScalarExpr::Prod(fs));
                }
                ScalarExpr::Sum(terms)
            }
            ScalarExpr::Sum(xs) => {
                ScalarExpr::Sum(xs.iter().map(|x| x.diff_raw(coord)).collect())
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

impl ScalarExpr {
    /// IEEE double evaluation at a coordinate-value mapping.
    pub fn eval_at(&self, point: &HashMap<String, f64>) -> Result<f64, ExprError> {
        self.eval_with(&|name| point.get(name).copied())
    }

    /// Evaluation through an arbitrary coordinate lookup.
    pub fn eval_with(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, ExprError> {
        Ok(self.eval_scaled(lookup)?.0)
    }

    /// Evaluate returning `(value, scale)` where `scale` is the magnitude of
    /// the largest subterm encountered. The scale feeds the relative
    /// tolerance of the probabilistic zero test. Errors on non-finite
    /// intermediates so that samplers can retry elsewhere.
    pub fn eval_scaled(
        &self,
        lookup: &dyn Fn(&str) -> Option<f64>,
    ) -> Result<(f64, f64), ExprError> {
        let (v, scale) = match self {
            ScalarExpr::Const(c) => {
                let v = c.to_f64().ok_or(ExprError::NonFinite)?;
                (v, v.abs())
            }
            ScalarExpr::Coord(name) => {
                let v = lookup(name).ok_or_else(|| ExprError::MissingCoordinate(name.clone()))?;
                (v, v.abs())
            }
            ScalarExpr::Func(f, a) => {
                let (av, ascale) = a.eval_scaled(lookup)?;
                let v = match f {
                    UnaryFn::Sin => av.sin(),
                    UnaryFn::Cos => av.cos(),
                    UnaryFn::Exp => av.exp(),
                    UnaryFn::Sqrt => {
                        if av < 0.0 {
                            return Err(ExprError::Domain(format!("sqrt of negative {av}")));
                        }
                        av.sqrt()
                    }
                };
                (v, ascale.max(v.abs()))
            }
            ScalarExpr::Pow(b, k) => {
                let (bv, bscale) = b.eval_scaled(lookup)?;
                if bv == 0.0 && *k < 0 {
                    return Err(ExprError::DivisionByZero);
                }
                let v = bv.powi(*k);
                (v, bscale.max(v.abs()))
            }
            ScalarExpr::Quot(a, b) => {
                let (av, ascale) = a.eval_scaled(lookup)?;
                let (bv, bscale) = b.eval_scaled(lookup)?;
                if bv == 0.0 {
                    return Err(ExprError::DivisionByZero);
                }
                let v = av / bv;
                (v, ascale.max(bscale).max(v.abs()))
            }
            ScalarExpr::Prod(xs) => {
                let mut v = 1.0;
                let mut scale: f64 = 0.0;
                for x in xs {
                    let (xv, xscale) = x.eval_scaled(lookup)?;
                    v *= xv;
                    scale = scale.max(xscale).max(v.abs());
                }
                (v, scale)
            }
            ScalarExpr::Sum(xs) => {
                let mut v = 0.0;
                let mut scale: f64 = 0.0;
                for x in xs {
                    let (xv, xscale) = x.eval_scaled(lookup)?;
                    v += xv;
                    scale = scale.max(xscale).max(v.abs());
                }
                (v, scale)
            }
        };
        if !v.is_finite() {
            return Err(ExprError::NonFinite);
        }
        Ok((v, scale))
    }
}

// ---------------------------------------------------------------------------
// Pretty printing. `parse_expr` of the output recovers the expression up to
// simplification; for simplified trees the round trip is exact.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, PartialOrd)]
enum Prec {
    Sum,
    Prod,
    Pow,
    Atom,
}

impl ScalarExpr {
    fn prec(&self) -> Prec {
        match self {
            ScalarExpr::Sum(_) => Prec::Sum,
            ScalarExpr::Prod(_) | ScalarExpr::Quot(_, _) => Prec::Prod,
            ScalarExpr::Pow(_, _) => Prec::Pow,
            ScalarExpr::Const(c) => {
                if c.is_negative() {
                    Prec::Sum
                } else if !c.is_integer() {
                    Prec::Prod
                } else {
                    Prec::Atom
                }
            }
            _ => Prec::Atom,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: Prec) -> fmt::Result {
        let needs_parens = self.prec() < min;
        if needs_parens {
            write!(f, "(")?;
        }
        match self {
            ScalarExpr::Const(c) => {
                if c.is_integer() {
                    write!(f, "{}", c.numer())?;
                } else {
                    write!(f, "{}/{}", c.numer(), c.denom())?;
                }
            }
            ScalarExpr::Coord(name) => write!(f, "{name}")?,
            ScalarExpr::Func(func, a) => {
                write!(f, "{}(", func.name())?;
                a.fmt_prec(f, Prec::Sum)?;
                write!(f, ")")?;
            }
            ScalarExpr::Pow(b, k) => {
                b.fmt_prec(f, Prec::Atom)?;
                write!(f, "^{k}")?;
            }
            ScalarExpr::Quot(a, b) => {
                a.fmt_prec(f, Prec::Prod)?;
                write!(f, "/")?;
                b.fmt_prec(f, Prec::Pow)?;
            }
            ScalarExpr::Prod(xs) => {
                let (neg, shown) = ScalarExpr::Prod(xs.clone()).split_sign();
                if neg {
                    write!(f, "-")?;
                }
                match shown {
                    ScalarExpr::Prod(ys) => {
                        for (i, x) in ys.iter().enumerate() {
                            if i > 0 {
                                write!(f, "*")?;
                            }
                            // A leading rational is safe without parens:
                            // `*` and `/` associate left at one precedence.
                            if i == 0 && matches!(x, ScalarExpr::Const(_)) {
                                x.fmt_prec(f, Prec::Prod)?;
                            } else {
                                x.fmt_prec(f, Prec::Pow)?;
                            }
                        }
                    }
                    single => single.fmt_prec(f, Prec::Pow)?,
                }
            }
            ScalarExpr::Sum(xs) => {
                for (i, x) in xs.iter().enumerate() {
                    if i == 0 {
                        x.fmt_prec(f, Prec::Sum)?;
                        continue;
                    }
                    let (neg, shown) = x.clone().split_sign();
                    if neg {
                        write!(f, " - ")?;
                    } else {
                        write!(f, " + ")?;
                    }
                    shown.fmt_prec(f, Prec::Prod)?;
                }
            }
        }
        if needs_parens {
            write!(f, ")")?;
        }
        Ok(())
    }

    /// Separate a leading minus sign for display.
    fn split_sign(self) -> (bool, ScalarExpr) {
        match self {
            ScalarExpr::Const(c) if c.is_negative() => (true, ScalarExpr::Const(-c)),
            ScalarExpr::Prod(mut xs) => {
                if let Some(ScalarExpr::Const(c)) = xs.first() {
                    if c.is_negative() {
                        let c = match xs.remove(0) {
                            ScalarExpr::Const(c) => c,
                            _ => unreachable!(),
                        };
                        let neg = -c;
                        let shown = if neg.is_one() && xs.len() == 1 {
                            xs.pop().unwrap()
                        } else if neg.is_one() {
                            ScalarExpr::Prod(xs)
                        } else {
                            let mut v = vec![ScalarExpr::Const(neg)];
                            v.extend(xs);
                            ScalarExpr::Prod(v)
                        };
                        return (true, shown);
                    }
                }
                (false, ScalarExpr::Prod(xs))
            }
            other => (false, other),
        }
    }
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, Prec::Sum)
    }
}
