//! The maximal-degree variational engine.
//!
//! A variational principle of degree n−2 on an n-dimensional chart is given
//! by a form θ with dθ = η nowhere zero. Its variational module is generated
//! by the contractions Ψ_j = V_j ⨼ η along the vertical coordinate fields;
//! the annihilator of η is a one-dimensional module whose generator is read
//! off componentwise from η, and after time normalization it is the
//! dynamical field of the problem.
//!
//! "Nowhere zero" is certified only by sampling: a default batch of points
//! in `[-1, 1]^n` plus any caller-declared witness points. For scalar
//! divisors a sign change across samples also counts as a vanishing witness
//! (a continuous function attaining both signs has a zero). Global
//! nonvanishing is undecidable in this expression class, so sampling is
//! the certificate and reports say so.

use crate::extcalc::{increasing_tuples, Chart, DiffForm, FormError, VecField};
use crate::symexpr::{is_zero, ExprError, ScalarExpr, ZeroTest};
use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

/// Relative singular-value threshold for numeric rank and nullspace
/// decisions.
pub const RANK_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum VarError {
    #[error("form has degree {found}, expected {expected} for this chart")]
    WrongDegree { expected: usize, found: usize },
    #[error("maximal-degree problems need a designated vertical pair, chart has r = {0}")]
    VerticalPairRequired(usize),
    #[error("dθ is identically zero; the variational principle is degenerate")]
    EtaIdenticallyZero,
    #[error("form vanishes near sample point {0:?}; singular ideal")]
    SingularAt(Vec<f64>),
    #[error("divergence of extracted components fails the zero test; input form is not closed")]
    DivergenceNotZero,
    #[error("chart has no time coordinate")]
    NoTimeCoordinate,
    #[error("time component is identically zero; field is not transversal")]
    TimeComponentIdenticallyZero,
    #[error("scalar vanishes near sample point {0:?}; nowhere-zero certificate failed")]
    ScalarVanishesAt(Vec<f64>),
    #[error("scalar changes sign between {positive_at:?} and {negative_at:?}; it must vanish in between")]
    ScalarSignChange {
        positive_at: Vec<f64>,
        negative_at: Vec<f64>,
    },
    #[error("generators must share one chart")]
    MixedCharts,
    #[error("generators must all have the same degree >= 1")]
    MixedDegrees,
    #[error(transparent)]
    Form(#[from] FormError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Sampling policy for the probabilistic nowhere-zero certificates.
#[derive(Debug, Clone)]
pub struct SampleConfig {
    /// Parameters of the symbolic zero test.
    pub zero: ZeroTest,
    /// Number of random points drawn from `[-1, 1]^n`.
    pub nowhere_points: u32,
    /// Points used by numeric annihilation residuals.
    pub verify_points: u32,
    /// Caller-declared points (coordinate-ordered) always checked first.
    pub witness_points: Vec<Vec<f64>>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            zero: ZeroTest::default(),
            nowhere_points: 200,
            verify_points: 100,
            witness_points: Vec::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// Variational problems
// ---------------------------------------------------------------------------

/// A maximal-degree variational problem: θ of degree n−2 on a chart with a
/// designated vertical pair, together with the cached η = dθ.
#[derive(Debug, Clone)]
pub struct VariationalProblem {
    chart: Chart,
    theta: DiffForm,
    eta: DiffForm,
}

impl VariationalProblem {
    /// Validates the degree, the vertical pair (r = 2), and that dθ is not
    /// identically zero.
    pub fn new(theta: DiffForm) -> Result<VariationalProblem, VarError> {
        let chart = theta.chart().clone();
        let n = chart.dim();
        if chart.vertical_count() != 2 {
            return Err(VarError::VerticalPairRequired(chart.vertical_count()));
        }
        if theta.degree() + 2 != n {
            return Err(VarError::WrongDegree {
                expected: n - 2,
                found: theta.degree(),
            });
        }
        let eta = theta.ext_deriv();
        if eta.is_empty() {
            return Err(VarError::EtaIdenticallyZero);
        }
        Ok(VariationalProblem { chart, theta, eta })
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn theta(&self) -> &DiffForm {
        &self.theta
    }

    pub fn eta(&self) -> &DiffForm {
        &self.eta
    }

    /// Generators Ψ_j of the variational module, one per vertical
    /// coordinate in ascending order.
    pub fn variational_module(&self) -> Vec<DiffForm> {
        variational_module(&self.theta)
    }
}

/// Ψ_j = ∂_j ⨼ dθ for each vertical coordinate of θ's chart, ascending.
/// Exposed on raw forms as well: for basic θ the generators all prune to
/// nothing, a case [`VariationalProblem::new`] rejects.
pub fn variational_module(theta: &DiffForm) -> Vec<DiffForm> {
    let chart = theta.chart().clone();
    let eta = theta.ext_deriv();
    chart
        .vertical_indices()
        .map(|j| {
            VecField::coord_basis(chart.clone(), j)
                .expect("vertical index in range")
                .contract(&eta)
                .expect("degree >= 1 by construction")
        })
        .collect()
}

/// A form is basic for the fibration when every vertical coordinate field
/// contracts it to nothing. Degree-0 forms are vacuously basic. A proper
/// variational principle is one whose θ is *not* basic.
pub fn is_basic(a: &DiffForm) -> bool {
    if a.degree() == 0 {
        return true;
    }
    let chart = a.chart().clone();
    let verticals: Vec<usize> = chart.vertical_indices().collect();
    verticals.into_iter().all(|j| {
        VecField::coord_basis(chart.clone(), j)
            .expect("vertical index in range")
            .contract(a)
            .expect("degree checked above")
            .is_empty()
    })
}

// ---------------------------------------------------------------------------
// Nowhere-zero sampling certificates
// ---------------------------------------------------------------------------

fn sample_points<R: Rng + ?Sized>(cfg: &SampleConfig, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = cfg.witness_points.clone();
    pts.reserve(cfg.nowhere_points as usize);
    for _ in 0..cfg.nowhere_points {
        pts.push((0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect());
    }
    pts
}

/// Certify (by sampling) that a form has no common zero of all its
/// coefficients. Points where evaluation fails are skipped unless they are
/// caller-declared witnesses.
pub fn check_form_nowhere_zero<R: Rng + ?Sized>(
    form: &DiffForm,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<(), VarError> {
    if form.is_empty() {
        return Err(VarError::EtaIdenticallyZero);
    }
    let chart = form.chart();
    let witnesses = cfg.witness_points.len();
    for (i, p) in sample_points(cfg, chart.dim(), rng).iter().enumerate() {
        let lookup = chart.lookup(p);
        let mut max_v = 0.0f64;
        let mut max_scale = 0.0f64;
        let mut failed = false;
        for (_, coeff) in form.terms() {
            match coeff.eval_scaled(&lookup) {
                Ok((v, s)) => {
                    max_v = max_v.max(v.abs());
                    max_scale = max_scale.max(s);
                }
                Err(e) => {
                    if i < witnesses {
                        return Err(VarError::Expr(e));
                    }
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            continue;
        }
        if max_v <= cfg.zero.tol * (1.0 + max_scale) {
            return Err(VarError::SingularAt(p.clone()));
        }
    }
    Ok(())
}

/// Certify (by sampling) that a scalar never vanishes: no near-zero value at
/// any sample or witness point, and no sign change across samples.
pub fn check_scalar_nowhere_zero<R: Rng + ?Sized>(
    e: &ScalarExpr,
    chart: &Chart,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<(), VarError> {
    let witnesses = cfg.witness_points.len();
    let mut positive_at: Option<Vec<f64>> = None;
    let mut negative_at: Option<Vec<f64>> = None;
    for (i, p) in sample_points(cfg, chart.dim(), rng).iter().enumerate() {
        let lookup = chart.lookup(p);
        let (v, s) = match e.eval_scaled(&lookup) {
            Ok(vs) => vs,
            Err(err) => {
                if i < witnesses {
                    return Err(VarError::Expr(err));
                }
                continue;
            }
        };
        if v.abs() <= cfg.zero.tol * (1.0 + s) {
            return Err(VarError::ScalarVanishesAt(p.clone()));
        }
        if v > 0.0 {
            positive_at.get_or_insert_with(|| p.clone());
        } else {
            negative_at.get_or_insert_with(|| p.clone());
        }
        if let (Some(pp), Some(np)) = (&positive_at, &negative_at) {
            return Err(VarError::ScalarSignChange {
                positive_at: pp.clone(),
                negative_at: np.clone(),
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Annihilator extraction
// ---------------------------------------------------------------------------

/// The generator of the annihilator of a closed nowhere-zero (n−1)-form,
/// with a flag recording whether it has been time-normalized.
#[derive(Debug, Clone)]
pub struct AnnihilatorField {
    pub field: VecField,
    pub time_normalized: bool,
}

/// Componentwise reading of η = Σ_μ A^μ (∂_μ ⨼ Ω):
/// `A^μ = (-1)^(μ-1) c_(1..n∖μ)` (1-based μ; even 0-based indices get +1).
fn components_from_eta(eta: &DiffForm) -> Vec<ScalarExpr> {
    let chart = eta.chart();
    let n = chart.dim();
    (0..n)
        .map(|i| {
            let tuple: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let coeff = eta.coeff(&tuple).cloned().unwrap_or_else(ScalarExpr::zero);
            if i % 2 == 0 {
                coeff
            } else {
                (-coeff).simplified()
            }
        })
        .collect()
}

/// Extract the annihilator generator of a closed nowhere-zero (n−1)-form.
///
/// Checks, in order: the degree, that the form is not identically zero,
/// the nowhere-zero sampling certificate, and that the divergence of the
/// extracted components passes the zero test (the closedness witness).
pub fn extract_annihilator_from_eta<R: Rng + ?Sized>(
    eta: &DiffForm,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<AnnihilatorField, VarError> {
    let chart = eta.chart().clone();
    let n = chart.dim();
    if eta.degree() + 1 != n {
        return Err(VarError::WrongDegree {
            expected: n - 1,
            found: eta.degree(),
        });
    }
    check_form_nowhere_zero(eta, cfg, rng)?;
    let comps = components_from_eta(eta);
    let field = VecField::new(chart, comps)?;
    if !is_zero(&field.divergence(), &cfg.zero)? {
        return Err(VarError::DivergenceNotZero);
    }
    Ok(AnnihilatorField {
        field,
        time_normalized: false,
    })
}

/// Extract the annihilator of dθ for a variational problem.
pub fn extract_annihilator<R: Rng + ?Sized>(
    vp: &VariationalProblem,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<AnnihilatorField, VarError> {
    extract_annihilator_from_eta(vp.eta(), cfg, rng)
}

/// Normalize so the component along the time coordinate is the constant 1.
///
/// Requires the chart to designate a time coordinate and the time component
/// to be (a) not identically zero and (b) nowhere zero under sampling
/// (transversality). Idempotent on already-normalized fields.
pub fn normalize_time<R: Rng + ?Sized>(
    x: &AnnihilatorField,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<AnnihilatorField, VarError> {
    let chart = x.field.chart().clone();
    let t = chart.time_index().ok_or(VarError::NoTimeCoordinate)?;
    let at = x.field.comp(t).clone();
    if is_zero(&at, &cfg.zero)? {
        return Err(VarError::TimeComponentIdenticallyZero);
    }
    check_scalar_nowhere_zero(&at, &chart, cfg, rng)?;
    let comps: Vec<ScalarExpr> = x
        .field
        .comps()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i == t {
                ScalarExpr::one()
            } else {
                ScalarExpr::quot(c.clone(), at.clone()).simplified()
            }
        })
        .collect();
    Ok(AnnihilatorField {
        field: VecField::new(chart, comps)?,
        time_normalized: true,
    })
}

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

/// Outcome of an annihilation check: the symbolic verdict (contraction
/// prunes to nothing) plus the worst numeric residual over random points
/// and random tangent frames.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub symbolic_pass: bool,
    pub max_residual: f64,
    pub samples_used: u32,
    /// Point achieving the maximal residual, when any sample evaluated.
    pub witness_point: Option<Vec<f64>>,
}

impl VerifyReport {
    pub fn passed(&self, residual_tol: f64) -> bool {
        self.symbolic_pass && self.max_residual <= residual_tol
    }
}

/// Check that `x ⨼ a` vanishes: symbolically by pruning, numerically by
/// evaluating `a` on frames `[x(p), r_2, …, r_k]` at random points. The
/// numeric route goes through frame evaluation, not through the symbolic
/// contraction, so the two verdicts are independent.
pub fn verify_annihilation<R: Rng + ?Sized>(
    x: &VecField,
    a: &DiffForm,
    points: u32,
    rng: &mut R,
) -> Result<VerifyReport, VarError> {
    let symbolic_pass = x.contract(a)?.is_empty();
    let chart = a.chart();
    let n = chart.dim();
    let k = a.degree();
    let mut max_residual = 0.0f64;
    let mut witness: Option<Vec<f64>> = None;
    let mut used = 0u32;
    let mut attempts = 0u32;
    let budget = points.saturating_mul(10).max(1);
    while used < points && attempts < budget {
        attempts += 1;
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let xv = match x.eval(&p) {
            Ok(v) => v,
            Err(_) => continue,
        };
        let mut frame = vec![xv];
        for _ in 1..k {
            frame.push((0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect());
        }
        let value = match a.eval_at_frame(&p, &frame) {
            Ok(v) => v,
            Err(FormError::Expr(_)) => continue,
            Err(e) => return Err(e.into()),
        };
        if value.abs() >= max_residual {
            max_residual = value.abs();
            witness = Some(p);
        }
        used += 1;
    }
    Ok(VerifyReport {
        symbolic_pass,
        max_residual,
        samples_used: used,
        witness_point: witness,
    })
}

// ---------------------------------------------------------------------------
// Pointwise linear algebra: module rank and characteristic spaces
// ---------------------------------------------------------------------------

fn check_generators(generators: &[DiffForm]) -> Result<(), VarError> {
    let Some(first) = generators.first() else {
        return Ok(());
    };
    if !generators.iter().all(|g| g.chart() == first.chart()) {
        return Err(VarError::MixedCharts);
    }
    if !generators.iter().all(|g| g.degree() == first.degree()) {
        return Err(VarError::MixedDegrees);
    }
    Ok(())
}

/// Rank of the generators' coefficient vectors evaluated at a point. The
/// pointwise rank is the computable surrogate for module rank: degeneracy
/// is reported when it stays below r at every sampled point.
pub fn module_rank_at(
    generators: &[DiffForm],
    point: &[f64],
    rel_tol: f64,
) -> Result<usize, VarError> {
    check_generators(generators)?;
    let Some(first) = generators.first() else {
        return Ok(0);
    };
    let chart = first.chart();
    let tuples = increasing_tuples(chart.dim(), first.degree());
    let mut rows: Vec<f64> = Vec::with_capacity(generators.len() * tuples.len());
    for g in generators {
        let lookup = chart.lookup(point);
        for t in &tuples {
            let v = match g.coeff(t) {
                Some(c) => c.eval_with(&lookup)?,
                None => 0.0,
            };
            rows.push(v);
        }
    }
    let m = DMatrix::from_row_slice(generators.len(), tuples.len(), &rows);
    Ok(numeric_rank(&m, rel_tol))
}

fn numeric_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > rel_tol * smax)
        .count()
}

/// Orthonormal basis of the pointwise characteristic space of the ideal
/// generated by equal-degree forms: the joint numeric nullspace of the maps
/// ξ ↦ ξ ⨼ η at the point. Singular values below `rel_tol` times the
/// largest count as zero.
pub fn characteristic_space_at(
    generators: &[DiffForm],
    point: &[f64],
    rel_tol: f64,
) -> Result<Vec<Vec<f64>>, VarError> {
    check_generators(generators)?;
    let Some(first) = generators.first() else {
        return Err(VarError::MixedDegrees);
    };
    if first.degree() == 0 {
        return Err(VarError::MixedDegrees);
    }
    let chart = first.chart();
    let n = chart.dim();
    let k = first.degree();
    let sub_tuples = increasing_tuples(n, k - 1);
    let mut rows: Vec<f64> = Vec::new();
    let mut n_rows = 0usize;
    for g in generators {
        let lookup = chart.lookup(point);
        // Numeric coefficients of this generator at the point.
        let mut coeff_at: std::collections::BTreeMap<&Vec<usize>, f64> =
            std::collections::BTreeMap::new();
        for (tuple, coeff) in g.terms() {
            coeff_at.insert(tuple, coeff.eval_with(&lookup)?);
        }
        for j_tuple in &sub_tuples {
            let mut row = vec![0.0f64; n];
            for (mu, slot) in row.iter_mut().enumerate() {
                // Coefficient of dx_J in ∂_mu ⨼ g.
                if let Some((full, sign)) = insert_sorted(j_tuple, mu) {
                    if let Some(&c) = coeff_at.get(&full) {
                        *slot = sign as f64 * c;
                    }
                }
            }
            rows.extend_from_slice(&row);
            n_rows += 1;
        }
    }
    // Pad with zero rows so the SVD carries a full set of right vectors.
    while n_rows < n {
        rows.extend(std::iter::repeat(0.0).take(n));
        n_rows += 1;
    }
    let m = DMatrix::from_row_slice(n_rows, n, &rows);
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let mut basis = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if smax == 0.0 || s <= rel_tol * smax {
            basis.push(v_t.row(i).iter().cloned().collect::<Vec<f64>>());
        }
    }
    Ok(basis)
}

/// Insert `mu` into an increasing tuple returning (tuple, sign), matching
/// the interior-product slot convention.
fn insert_sorted(tuple: &[usize], mu: usize) -> Option<(Vec<usize>, i64)> {
    if tuple.contains(&mu) {
        return None;
    }
    let below = tuple.iter().filter(|&&i| i < mu).count();
    let mut out = Vec::with_capacity(tuple.len() + 1);
    out.extend_from_slice(&tuple[..below]);
    out.push(mu);
    out.extend_from_slice(&tuple[below..]);
    let sign = if below % 2 == 0 { 1 } else { -1 };
    Some((out, sign))
}
