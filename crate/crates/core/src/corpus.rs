//! Seeded random generators for expressions, forms and sample points.
//!
//! Everything here is deterministic given the caller's RNG, which keeps
//! property tests and verification corpora reproducible. Generated
//! expressions are well behaved on `[-1, 1]^n`: square roots only see
//! arguments bounded below by 1 and quotient denominators are bounded away
//! from zero, so samplers rarely burn resample budget.

use crate::extcalc::{Chart, DiffForm};
use crate::symexpr::{ScalarExpr, UnaryFn};
use rand::Rng;
use std::collections::HashMap;

/// Small rational constant with numerator in `[-4, 4]` and denominator in
/// `[1, 3]`, never zero.
pub fn random_rational<R: Rng + ?Sized>(rng: &mut R) -> ScalarExpr {
    let mut num = 0i64;
    while num == 0 {
        num = rng.gen_range(-4..=4);
    }
    let den = rng.gen_range(1..=3);
    ScalarExpr::rational(num, den)
}

/// Random monomial of total degree up to `max_deg` over `coords`.
fn random_monomial<R: Rng + ?Sized>(rng: &mut R, coords: &[String], max_deg: u32) -> ScalarExpr {
    let deg = rng.gen_range(0..=max_deg);
    let mut factors = vec![random_rational(rng)];
    for _ in 0..deg {
        let c = &coords[rng.gen_range(0..coords.len())];
        factors.push(ScalarExpr::coord(c.clone()));
    }
    ScalarExpr::Prod(factors)
}

/// Random polynomial with up to `max_terms` monomials, simplified.
pub fn random_poly<R: Rng + ?Sized>(
    rng: &mut R,
    coords: &[String],
    max_terms: u32,
    max_deg: u32,
) -> ScalarExpr {
    let n = rng.gen_range(1..=max_terms);
    let terms = (0..n)
        .map(|_| random_monomial(rng, coords, max_deg))
        .collect();
    ScalarExpr::Sum(terms).simplified()
}

/// Random expression drawing on the full vocabulary (polynomials, sin, cos,
/// exp, guarded sqrt and quotients), simplified.
pub fn random_expr<R: Rng + ?Sized>(rng: &mut R, coords: &[String], depth: u32) -> ScalarExpr {
    gen_expr(rng, coords, depth).simplified()
}

fn gen_expr<R: Rng + ?Sized>(rng: &mut R, coords: &[String], depth: u32) -> ScalarExpr {
    if depth == 0 {
        return if rng.gen_bool(0.4) {
            random_rational(rng)
        } else {
            ScalarExpr::coord(coords[rng.gen_range(0..coords.len())].clone())
        };
    }
    match rng.gen_range(0..10) {
        0 | 1 | 2 => ScalarExpr::Sum(
            (0..rng.gen_range(2..=3))
                .map(|_| gen_expr(rng, coords, depth - 1))
                .collect(),
        ),
        3 | 4 | 5 => ScalarExpr::Prod(
            (0..rng.gen_range(2..=3))
                .map(|_| gen_expr(rng, coords, depth - 1))
                .collect(),
        ),
        6 => ScalarExpr::pow(gen_expr(rng, coords, depth - 1), rng.gen_range(2..=3)),
        7 => {
            let f = match rng.gen_range(0..3) {
                0 => UnaryFn::Sin,
                1 => UnaryFn::Cos,
                _ => UnaryFn::Exp,
            };
            ScalarExpr::func(f, gen_expr(rng, coords, depth - 1))
        }
        8 => {
            // sqrt(1 + u^2): argument bounded below by 1 on any real point.
            let u = gen_expr(rng, coords, depth - 1);
            ScalarExpr::func(UnaryFn::Sqrt, ScalarExpr::one() + ScalarExpr::pow(u, 2))
        }
        _ => {
            // u / (2 + v^2): denominator bounded away from zero.
            let u = gen_expr(rng, coords, depth - 1);
            let v = gen_expr(rng, coords, depth - 1);
            ScalarExpr::quot(u, ScalarExpr::int(2) + ScalarExpr::pow(v, 2))
        }
    }
}

/// Random `degree`-form on `chart` with up to `max_terms` nonzero
/// coefficients. `poly_only` restricts coefficients to polynomials.
pub fn random_form<R: Rng + ?Sized>(
    rng: &mut R,
    chart: &Chart,
    degree: usize,
    max_terms: u32,
    poly_only: bool,
) -> DiffForm {
    let n = chart.dim();
    let coords: Vec<String> = chart.coord_names().to_vec();
    let mut form = DiffForm::zero(chart.clone(), degree);
    let terms = rng.gen_range(1..=max_terms);
    for _ in 0..terms {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..degree {
            let j = rng.gen_range(i..n);
            idx.swap(i, j);
        }
        let mut tuple: Vec<usize> = idx[..degree].to_vec();
        tuple.sort_unstable();
        let coeff = if poly_only {
            random_poly(rng, &coords, 3, 2)
        } else {
            random_expr(rng, &coords, 2)
        };
        form = form.with_term_added(&tuple, coeff);
    }
    form
}

/// Random point in `[-1, 1]^n` keyed by chart coordinate names.
pub fn random_point<R: Rng + ?Sized>(rng: &mut R, chart: &Chart) -> HashMap<String, f64> {
    chart
        .coord_names()
        .iter()
        .map(|c| (c.clone(), rng.gen_range(-1.0..=1.0)))
        .collect()
}

/// Random point as a coordinate-ordered vector in `[-1, 1]^n`.
pub fn random_state<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}
