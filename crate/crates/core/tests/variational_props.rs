//! Properties of the variational engine on randomized maximal-degree
//! problems: basis independence of the variational module, the equivalence
//! between annihilating the module and annihilating dθ for transversal
//! fields, component-ratio uniqueness of the annihilator, one-dimensional
//! characteristic spaces, and the vertical split of normalized fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varmax::corpus::{random_form, random_rational, random_state};
use varmax::extcalc::{Chart, DiffForm, VecField};
use varmax::liouville::solve_contraction;
use varmax::symexpr::{is_zero, ScalarExpr, ZeroTest};
use varmax::varprin::{
    characteristic_space_at, extract_annihilator, module_rank_at, normalize_time,
    variational_module, AnnihilatorField, SampleConfig, VariationalProblem, RANK_REL_TOL,
};

fn chart_n(n: usize) -> Chart {
    let names: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Chart::new(&refs, &[refs[0], refs[1]], None).unwrap()
}

/// Draw random proper maximal-degree problems whose dθ passes the
/// nowhere-zero sampling, rejecting degenerate draws.
fn random_problems(seed: u64, count: usize, dims: &[usize]) -> Vec<VariationalProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SampleConfig::default();
    let mut out = Vec::new();
    let mut attempts = 0;
    while out.len() < count && attempts < count * 60 {
        attempts += 1;
        let n = dims[out.len() % dims.len()];
        let chart = chart_n(n);
        // A constant term keeps dθ generically nowhere zero.
        let mut theta = random_form(&mut rng, &chart, n - 2, 3, true);
        let ballast: Vec<usize> = (1..n - 1).collect();
        theta = theta.with_term_added(
            &ballast,
            ScalarExpr::coord("x0") * ScalarExpr::int(rng.gen_range(1..4)),
        );
        let Ok(vp) = VariationalProblem::new(theta) else {
            continue;
        };
        if varmax::varprin::check_form_nowhere_zero(vp.eta(), &cfg, &mut rng).is_err() {
            continue;
        }
        out.push(vp);
    }
    assert_eq!(out.len(), count, "corpus generation starved");
    out
}

#[test]
fn basis_change_preserves_pointwise_span() {
    // Replacing the vertical coordinate basis V by G·V (G invertible over
    // the expression ring) leaves the pointwise span of the generators
    // unchanged: ranks of old, new, and concatenated lists agree.
    let mut rng = ChaCha8Rng::seed_from_u64(211);
    let zt = ZeroTest::default();
    for vp in random_problems(212, 6, &[4, 5]) {
        let psis = vp.variational_module();
        let coords: Vec<String> = vp.chart().coord_names().to_vec();
        // Random invertible 2x2 matrix of expressions: add a generic
        // diagonal so the determinant is not identically zero.
        let (g11, g12, g21, g22) = loop {
            let e11 = random_rational(&mut rng);
            let e12 = varmax::corpus::random_poly(&mut rng, &coords, 2, 1);
            let e21 = random_rational(&mut rng);
            let e22 = (varmax::corpus::random_poly(&mut rng, &coords, 2, 1)
                + ScalarExpr::int(3))
            .simplified();
            let det = (e11.clone() * e22.clone() - e12.clone() * e21.clone()).simplified();
            if !is_zero(&det, &zt).unwrap_or(true) {
                break (e11, e12, e21, e22);
            }
        };
        let new1 = psis[0]
            .scaled(&g11)
            .add_scaled(&ScalarExpr::one(), &psis[1].scaled(&g12))
            .unwrap();
        let new2 = psis[0]
            .scaled(&g21)
            .add_scaled(&ScalarExpr::one(), &psis[1].scaled(&g22))
            .unwrap();
        let mut both = psis.clone();
        both.push(new1.clone());
        both.push(new2.clone());
        for _ in 0..20 {
            let p = random_state(&mut rng, vp.chart().dim());
            let r_old = module_rank_at(&psis, &p, RANK_REL_TOL).unwrap();
            let r_new = module_rank_at(&[new1.clone(), new2.clone()], &p, RANK_REL_TOL).unwrap();
            let r_both = module_rank_at(&both, &p, RANK_REL_TOL).unwrap();
            assert_eq!(r_old, r_new, "rank changed under basis change");
            assert_eq!(r_old, r_both, "span changed under basis change");
        }
    }
}

#[test]
fn annihilating_the_module_equals_annihilating_eta() {
    // For proper problems the transversal annihilator of dθ kills every
    // generator of the variational module, and conversely the extracted
    // solution annihilates dθ.
    let mut rng = ChaCha8Rng::seed_from_u64(223);
    let cfg = SampleConfig::default();
    for vp in random_problems(227, 8, &[4, 5]) {
        let x = match extract_annihilator(&vp, &cfg, &mut rng) {
            Ok(x) => x,
            Err(_) => continue,
        };
        assert!(x.field.contract(vp.eta()).unwrap().is_empty());
        for psi in vp.variational_module() {
            assert!(
                x.field.contract(&psi).unwrap().is_empty(),
                "annihilator fails on a module generator"
            );
        }
    }
}

#[test]
fn component_ratios_are_extraction_invariant() {
    // Two extraction routes differ by a scalar factor only:
    // f^α A^β − f^β A^α vanishes for all α, β.
    let mut rng = ChaCha8Rng::seed_from_u64(229);
    let cfg = SampleConfig::default();
    let zt = ZeroTest::default();
    for vp in random_problems(233, 6, &[4]) {
        let n = vp.chart().dim();
        let a = extract_annihilator(&vp, &cfg, &mut rng).unwrap();
        // Independent route: solve X ⨼ (w Ω) = dθ with a nowhere-zero w.
        let w = (ScalarExpr::int(2)
            + ScalarExpr::func(varmax::symexpr::UnaryFn::Sin, ScalarExpr::coord("x0")))
        .simplified();
        let scaled_volume = DiffForm::volume(vp.chart().clone()).scaled(&w);
        let f = solve_contraction(&scaled_volume, vp.eta(), &cfg, &mut rng).unwrap();
        for alpha in 0..n {
            for beta in (alpha + 1)..n {
                let cross = (f.comp(alpha).clone() * a.field.comp(beta).clone()
                    - f.comp(beta).clone() * a.field.comp(alpha).clone())
                .simplified();
                assert!(
                    is_zero(&cross, &zt).unwrap(),
                    "component ratio mismatch at ({alpha}, {beta})"
                );
            }
        }
    }
}

#[test]
fn characteristic_spaces_are_lines_for_proper_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(239);
    let cfg = SampleConfig::default();
    for vp in random_problems(241, 5, &[4, 5]) {
        let x = match extract_annihilator(&vp, &cfg, &mut rng) {
            Ok(x) => x,
            Err(_) => continue,
        };
        let psis = vp.variational_module();
        let mut checked = 0;
        let mut tries = 0;
        while checked < 20 && tries < 200 {
            tries += 1;
            let p = random_state(&mut rng, vp.chart().dim());
            let Ok(xv) = x.field.eval(&p) else { continue };
            let nx: f64 = xv.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nx < 1e-6 {
                continue;
            }
            let basis = characteristic_space_at(&psis, &p, RANK_REL_TOL).unwrap();
            assert_eq!(basis.len(), 1, "characteristic space is not a line");
            let dot: f64 = basis[0].iter().zip(&xv).map(|(a, b)| a * b).sum();
            assert!(
                (dot.abs() / nx - 1.0).abs() < 1e-6,
                "characteristic direction disagrees with the annihilator"
            );
            checked += 1;
        }
        assert!(checked >= 10, "not enough usable sample points");
    }
}

#[test]
fn normalized_fields_split_off_the_time_direction() {
    // Y = X₀ − ∂_t satisfies Y ⨼ dt = 0 symbolically.
    let mut rng = ChaCha8Rng::seed_from_u64(251);
    let cfg = SampleConfig::default();
    let chart = Chart::new(&["a", "b", "c", "t"], &["a", "b"], Some("t")).unwrap();
    for _ in 0..5 {
        let comps = vec![
            varmax::corpus::random_poly(&mut rng, &chart.coord_names().to_vec(), 2, 1),
            varmax::corpus::random_poly(&mut rng, &chart.coord_names().to_vec(), 2, 1),
            varmax::corpus::random_poly(&mut rng, &chart.coord_names().to_vec(), 2, 1),
            (varmax::corpus::random_poly(&mut rng, &chart.coord_names().to_vec(), 2, 2)
                + ScalarExpr::int(4))
            .simplified(),
        ];
        let raw = AnnihilatorField {
            field: VecField::new(chart.clone(), comps).unwrap(),
            time_normalized: false,
        };
        let x0 = match normalize_time(&raw, &cfg, &mut rng) {
            Ok(x0) => x0,
            Err(_) => continue,
        };
        assert!(x0.field.comp(3).is_const_one());
        let dt = DiffForm::coord_differential(chart.clone(), 3).unwrap();
        let y = x0
            .field
            .add_scaled(
                &ScalarExpr::int(-1),
                &VecField::coord_basis(chart.clone(), 3).unwrap(),
            )
            .unwrap();
        assert!(y.contract(&dt).unwrap().is_empty());
    }
}

#[test]
fn theta_shifts_by_exact_forms_do_not_change_the_module() {
    let mut rng = ChaCha8Rng::seed_from_u64(257);
    for vp in random_problems(263, 4, &[4, 5]) {
        let n = vp.chart().dim();
        let beta = random_form(&mut rng, vp.chart(), n - 3, 2, true);
        let shifted = vp
            .theta()
            .add_scaled(&ScalarExpr::one(), &beta.ext_deriv())
            .unwrap();
        assert_eq!(
            variational_module(vp.theta()),
            variational_module(&shifted),
            "closed shift changed the variational module"
        );
    }
}
