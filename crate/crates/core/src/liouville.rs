//! Inverse-problem builders: from volume-preserving dynamics on a phase
//! space P to the maximal-degree variational form θ on M = P × T that
//! identifies it.
//!
//! The general construction takes a volume form Ω and a (p−2)-form γ and
//! produces θ = σ + (−1)^p γ ∧ dt with dσ = Ω; the field X solving
//! X ⨼ Ω = dγ then annihilates dθ after extension by ∂_t. Hamiltonian,
//! Nambu and hyperhamiltonian data are reduced to this shape. Every
//! builder verifies its own output: Z = ∂_t + X must annihilate dθ both
//! symbolically and numerically, which catches sign-convention faults
//! immediately.

use crate::extcalc::{Chart, DiffForm, FormError, VecField};
use crate::symexpr::{is_zero, is_zero_default, ExprError, ScalarExpr, ZeroTest};
use crate::varprin::{
    check_scalar_nowhere_zero, verify_annihilation, SampleConfig, VarError, VariationalProblem,
    VerifyReport,
};
use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

/// Points used for the pointwise nondegeneracy test of symplectic forms.
const NONDEGENERACY_POINTS: u32 = 20;

#[derive(Debug, Clone, Error)]
pub enum BuildError {
    #[error("volume form must have degree {expected}, found {found}")]
    VolumeDegree { expected: usize, found: usize },
    #[error("volume form is identically zero")]
    VolumeIdenticallyZero,
    #[error("form has degree {found}, expected {expected}")]
    WrongDegree { expected: usize, found: usize },
    #[error("dσ does not equal the volume form")]
    SigmaDerivativeMismatch,
    #[error("m·dβ does not equal the symplectic form")]
    BetaDerivativeMismatch,
    #[error("dγ does not equal χ; internal consistency failure")]
    GammaDerivativeMismatch,
    #[error("symplectic form is not closed")]
    OmegaNotClosed,
    #[error("symplectic form is degenerate at sample point {0:?}")]
    OmegaDegenerateAt(Vec<f64>),
    #[error("phase dimension {found} is not {required}")]
    DimensionParity { found: usize, required: String },
    #[error("expected {expected} Hamiltonian functions, found {found}")]
    HamiltonianCount { expected: usize, found: usize },
    #[error("no pivot available in symbolic linear solve (column {0})")]
    PivotFailure(usize),
    #[error(
        "no primitive supplied and the symplectic form has non-constant \
         coefficients; a linear primitive cannot be built"
    )]
    MissingPrimitive,
    #[error("built form fails its annihilation check (symbolic pass: {symbolic}, max residual {max_residual:.3e}); per-block residuals {block_residuals:?}")]
    VerificationFailed {
        symbolic: bool,
        max_residual: f64,
        block_residuals: Vec<f64>,
    },
    #[error(transparent)]
    Var(#[from] VarError),
    #[error(transparent)]
    Form(#[from] FormError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// How to extend the phase chart to M = P × T.
#[derive(Debug, Clone, Copy)]
pub struct ExtendOptions<'a> {
    /// Name of the appended time coordinate.
    pub time_name: &'a str,
    /// Vertical pair designated on M; defaults to the first two phase
    /// coordinates.
    pub vertical_pair: Option<(&'a str, &'a str)>,
}

impl Default for ExtendOptions<'_> {
    fn default() -> Self {
        ExtendOptions {
            time_name: "t",
            vertical_pair: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Liouville problems
// ---------------------------------------------------------------------------

/// Liouville data on a phase space: a nowhere-vanishing volume form Ω, the
/// potential γ with χ = dγ, and the extended chart M = P × T.
#[derive(Debug, Clone)]
pub struct LiouvilleProblem {
    phase: Chart,
    volume: DiffForm,
    gamma: DiffForm,
    chi: DiffForm,
    extended: Chart,
}

impl LiouvilleProblem {
    pub fn new<R: Rng + ?Sized>(
        phase: Chart,
        volume: DiffForm,
        gamma: DiffForm,
        ext: &ExtendOptions,
        cfg: &SampleConfig,
        rng: &mut R,
    ) -> Result<LiouvilleProblem, BuildError> {
        let p = phase.dim();
        if volume.degree() != p {
            return Err(BuildError::VolumeDegree {
                expected: p,
                found: volume.degree(),
            });
        }
        check_volume_coefficient(&volume, cfg, rng)?;
        if gamma.degree() + 2 != p {
            return Err(BuildError::WrongDegree {
                expected: p - 2,
                found: gamma.degree(),
            });
        }
        let chi = gamma.ext_deriv();
        let extended = phase.extended_with_time(ext.time_name, ext.vertical_pair)?;
        Ok(LiouvilleProblem {
            phase,
            volume,
            gamma,
            chi,
            extended,
        })
    }

    pub fn phase(&self) -> &Chart {
        &self.phase
    }

    pub fn volume(&self) -> &DiffForm {
        &self.volume
    }

    pub fn gamma(&self) -> &DiffForm {
        &self.gamma
    }

    pub fn chi(&self) -> &DiffForm {
        &self.chi
    }

    pub fn extended(&self) -> &Chart {
        &self.extended
    }
}

/// The volume coefficient (top forms have a single one) must be nowhere
/// zero; certified by sampling plus sign-change detection.
fn check_volume_coefficient<R: Rng + ?Sized>(
    volume: &DiffForm,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<(), BuildError> {
    let Some((_, coeff)) = volume.terms().next() else {
        return Err(BuildError::VolumeIdenticallyZero);
    };
    check_scalar_nowhere_zero(coeff, volume.chart(), cfg, rng)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Core solves
// ---------------------------------------------------------------------------

/// The unique X with `X ⨼ Ω = rhs` for a nowhere-zero volume form Ω:
/// componentwise `X^μ = (-1)^(μ-1) rhs_(∖μ) / Ω-coefficient`.
pub fn solve_contraction<R: Rng + ?Sized>(
    volume: &DiffForm,
    rhs: &DiffForm,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<VecField, BuildError> {
    let chart = volume.chart().clone();
    let p = chart.dim();
    if volume.degree() != p {
        return Err(BuildError::VolumeDegree {
            expected: p,
            found: volume.degree(),
        });
    }
    if rhs.degree() + 1 != p {
        return Err(BuildError::WrongDegree {
            expected: p - 1,
            found: rhs.degree(),
        });
    }
    check_volume_coefficient(volume, cfg, rng)?;
    let full: Vec<usize> = (0..p).collect();
    let w = volume.coeff(&full).cloned().expect("checked non-empty");
    let comps: Vec<ScalarExpr> = (0..p)
        .map(|i| {
            let tuple: Vec<usize> = (0..p).filter(|&j| j != i).collect();
            let c = rhs.coeff(&tuple).cloned().unwrap_or_else(ScalarExpr::zero);
            let signed = if i % 2 == 0 { c } else { -c };
            ScalarExpr::quot(signed, w.clone()).simplified()
        })
        .collect();
    Ok(VecField::new(chart, comps)?)
}

/// The standard primitive σ = x¹ dx²∧…∧dxᵖ of the standard volume form.
pub fn default_sigma(chart: &Chart) -> DiffForm {
    let p = chart.dim();
    let tuple: Vec<usize> = (1..p).collect();
    DiffForm::zero(chart.clone(), p - 1)
        .with_term_added(&tuple, ScalarExpr::coord(chart.coord_name(0).to_string()))
}

/// Gradient differential dH as a 1-form.
fn differential(chart: &Chart, h: &ScalarExpr) -> DiffForm {
    DiffForm::scalar(chart.clone(), h.clone()).ext_deriv()
}

/// Matrix W of a 2-form: `W[μ][ν]` is the dx_ν coefficient of `∂_μ ⨼ ω`.
fn two_form_matrix(omega: &DiffForm) -> Result<Vec<Vec<ScalarExpr>>, BuildError> {
    if omega.degree() != 2 {
        return Err(BuildError::WrongDegree {
            expected: 2,
            found: omega.degree(),
        });
    }
    let n = omega.chart().dim();
    let mut w = vec![vec![ScalarExpr::zero(); n]; n];
    for (tuple, coeff) in omega.terms() {
        let (i, j) = (tuple[0], tuple[1]);
        w[i][j] = coeff.clone();
        w[j][i] = (-coeff.clone()).simplified();
    }
    Ok(w)
}

/// Solve `A f = b` over the expression field by Gauss-Jordan elimination.
/// Pivots are accepted only when they fail the zero test; constant nonzero
/// pivots are preferred.
fn solve_linear(
    mut a: Vec<Vec<ScalarExpr>>,
    mut b: Vec<ScalarExpr>,
    zt: &ZeroTest,
) -> Result<Vec<ScalarExpr>, BuildError> {
    let n = b.len();
    for col in 0..n {
        let pivot_row = find_pivot(&a, col, zt).ok_or(BuildError::PivotFailure(col))?;
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        let pivot = a[col][col].clone();
        for r in 0..n {
            if r == col {
                continue;
            }
            let entry = a[r][col].clone();
            if entry.is_const_zero() || is_zero_default(&entry) {
                continue;
            }
            let factor = ScalarExpr::quot(entry, pivot.clone()).simplified();
            for c in col..n {
                a[r][c] = (a[r][c].clone() - factor.clone() * a[col][c].clone()).simplified();
            }
            b[r] = (b[r].clone() - factor.clone() * b[col].clone()).simplified();
        }
    }
    Ok((0..n)
        .map(|i| ScalarExpr::quot(b[i].clone(), a[i][i].clone()).simplified())
        .collect())
}

fn find_pivot(a: &[Vec<ScalarExpr>], col: usize, zt: &ZeroTest) -> Option<usize> {
    let n = a.len();
    // Constant nonzero pivots keep the elimination exact.
    for (r, row) in a.iter().enumerate().take(n).skip(col) {
        if let Some(c) = row[col].as_const() {
            if !c.eq(&num_rational::BigRational::from_integer(0.into())) {
                return Some(r);
            }
        }
    }
    (col..n).find(|&r| !matches!(is_zero(&a[r][col], zt), Ok(true)))
}

/// Hamiltonian field: the unique X with `X ⨼ ω = dH`.
pub fn hamiltonian_field(
    omega: &DiffForm,
    h: &ScalarExpr,
    zt: &ZeroTest,
) -> Result<VecField, BuildError> {
    let chart = omega.chart().clone();
    let n = chart.dim();
    let w = two_form_matrix(omega)?;
    // (X ⨼ ω)_ν = Σ_μ f^μ W[μ][ν]; solve Wᵀ f = dH.
    let mut a = vec![vec![ScalarExpr::zero(); n]; n];
    for (mu, row) in w.iter().enumerate() {
        for (nu, entry) in row.iter().enumerate() {
            a[nu][mu] = entry.clone();
        }
    }
    let b: Vec<ScalarExpr> = (0..n).map(|i| h.diff(chart.coord_name(i))).collect();
    let comps = solve_linear(a, b, zt)?;
    Ok(VecField::new(chart, comps)?)
}

/// Pointwise nondegeneracy of a 2-form: numeric rank of W equals the chart
/// dimension at sampled points.
fn check_nondegenerate<R: Rng + ?Sized>(
    omega: &DiffForm,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<(), BuildError> {
    let chart = omega.chart();
    let n = chart.dim();
    let w = two_form_matrix(omega)?;
    let mut points = cfg.witness_points.clone();
    for _ in 0..NONDEGENERACY_POINTS {
        points.push((0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect());
    }
    for p in points {
        let mut entries = Vec::with_capacity(n * n);
        let mut ok = true;
        {
            let lookup = chart.lookup(&p);
            'rows: for row in &w {
                for e in row {
                    match e.eval_with(&lookup) {
                        Ok(v) => entries.push(v),
                        Err(_) => {
                            ok = false;
                            break 'rows;
                        }
                    }
                }
            }
        }
        if !ok {
            continue;
        }
        let m = DMatrix::from_row_slice(n, n, &entries);
        let svd = m.svd(false, false);
        let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| smax > 0.0 && s > crate::varprin::RANK_REL_TOL * smax)
            .count();
        if rank < n {
            return Err(BuildError::OmegaDegenerateAt(p));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

/// A built variational principle together with the independently computed
/// dynamics it encodes and the verification of the defining identity.
#[derive(Debug, Clone)]
pub struct BuiltVariational {
    /// θ (with cached dθ) on the extended chart.
    pub problem: VariationalProblem,
    /// The dynamical field X on the phase chart.
    pub dynamics: VecField,
    /// Z = ∂_t + X on the extended chart.
    pub extended_field: VecField,
    /// Outcome of the `Z ⨼ dθ = 0` check.
    pub verification: VerifyReport,
    /// Per-structure fields where applicable (one per symplectic structure
    /// for hyperhamiltonian data, the Hamiltonian field for Hamilton data).
    pub component_fields: Vec<VecField>,
}

fn verified_build<R: Rng + ?Sized>(
    theta: DiffForm,
    dynamics: VecField,
    component_fields: Vec<VecField>,
    block_forms: &[DiffForm],
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<BuiltVariational, BuildError> {
    let m_chart = theta.chart().clone();
    let t = m_chart.time_index().expect("extended chart has time");
    let problem = VariationalProblem::new(theta)?;
    crate::varprin::check_form_nowhere_zero(problem.eta(), cfg, rng)?;
    let dt_dir = VecField::coord_basis(m_chart.clone(), t)?;
    let z = dt_dir.add_scaled(&ScalarExpr::one(), &dynamics.lifted_to(&m_chart)?)?;
    let verification = verify_annihilation(&z, problem.eta(), cfg.verify_points, rng)?;
    if !verification.symbolic_pass {
        let mut block_residuals = Vec::with_capacity(block_forms.len());
        for bf in block_forms {
            let r = verify_annihilation(&z, &bf.ext_deriv(), cfg.verify_points, rng)?;
            block_residuals.push(r.max_residual);
        }
        return Err(BuildError::VerificationFailed {
            symbolic: verification.symbolic_pass,
            max_residual: verification.max_residual,
            block_residuals,
        });
    }
    Ok(BuiltVariational {
        problem,
        dynamics,
        extended_field: z,
        verification,
        component_fields,
    })
}

/// θ = σ + (−1)^p γ ∧ dt for general Liouville data. `sigma` defaults to
/// the standard primitive and must satisfy dσ = Ω.
pub fn build_theta_general<R: Rng + ?Sized>(
    lp: &LiouvilleProblem,
    sigma: Option<&DiffForm>,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<BuiltVariational, BuildError> {
    let p = lp.phase.dim();
    let sigma = match sigma {
        Some(s) => s.clone(),
        None => default_sigma(&lp.phase),
    };
    let d_sigma = sigma.ext_deriv();
    if !d_sigma
        .add_scaled(&ScalarExpr::int(-1), &lp.volume)?
        .is_empty()
    {
        return Err(BuildError::SigmaDerivativeMismatch);
    }
    let x = solve_contraction(&lp.volume, &lp.chi, cfg, rng)?;
    let m_chart = lp.extended.clone();
    let dt = DiffForm::coord_differential(m_chart.clone(), p)?;
    let sign = if p % 2 == 0 { 1 } else { -1 };
    let gamma_dt = lp.gamma.lifted_to(&m_chart)?.wedge(&dt)?;
    let theta = sigma
        .lifted_to(&m_chart)?
        .add_scaled(&ScalarExpr::int(sign), &gamma_dt)?;
    verified_build(theta, x, Vec::new(), &[], cfg, rng)
}

/// θ = (β + H dt) ∧ ζ with ζ = ω^(m−1)/(m−1)! for a symplectic form on a
/// 2m-dimensional phase space with local primitive ω = m dβ. When no β is
/// supplied and ω has constant coefficients, the linear primitive scaled
/// by 1/m is used.
pub fn build_hamiltonian<R: Rng + ?Sized>(
    phase: &Chart,
    omega: &DiffForm,
    beta: Option<&DiffForm>,
    h: &ScalarExpr,
    ext: &ExtendOptions,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<BuiltVariational, BuildError> {
    let p = phase.dim();
    if p % 2 != 0 {
        return Err(BuildError::DimensionParity {
            found: p,
            required: "even (2m)".into(),
        });
    }
    let m = p / 2;
    if !omega.ext_deriv().is_empty() {
        return Err(BuildError::OmegaNotClosed);
    }
    check_nondegenerate(omega, cfg, rng)?;
    let beta = match beta {
        Some(b) => b.clone(),
        None => constant_primitive(omega)?.scaled(&ScalarExpr::rational(1, m as i64)),
    };
    let m_beta = beta.ext_deriv().scaled(&ScalarExpr::int(m as i64));
    if !m_beta.add_scaled(&ScalarExpr::int(-1), omega)?.is_empty() {
        return Err(BuildError::BetaDerivativeMismatch);
    }
    let zeta = if m == 1 {
        DiffForm::scalar(phase.clone(), ScalarExpr::one())
    } else {
        let fact: i64 = (1..=(m - 1) as i64).product();
        omega
            .wedge_power(m - 1)?
            .scaled(&ScalarExpr::rational(1, fact))
    };
    let x_h = hamiltonian_field(omega, h, &cfg.zero)?;
    let m_chart = phase.extended_with_time(ext.time_name, ext.vertical_pair)?;
    let dt = DiffForm::coord_differential(m_chart.clone(), p)?;
    let one_form = beta
        .lifted_to(&m_chart)?
        .add_scaled(h, &dt)?;
    let theta = one_form.wedge(&zeta.lifted_to(&m_chart)?)?;
    verified_build(theta, x_h.clone(), vec![x_h], &[], cfg, rng)
}

/// Nambu data: χ = dH₂∧…∧dH_p, γ = H₂ dH₃∧…∧dH_p, then the general
/// construction. Each H_i is a first integral of the resulting field.
pub fn build_nambu<R: Rng + ?Sized>(
    phase: &Chart,
    volume: &DiffForm,
    hamiltonians: &[ScalarExpr],
    ext: &ExtendOptions,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<BuiltVariational, BuildError> {
    let p = phase.dim();
    if hamiltonians.len() != p - 1 {
        return Err(BuildError::HamiltonianCount {
            expected: p - 1,
            found: hamiltonians.len(),
        });
    }
    let mut chi = differential(phase, &hamiltonians[0]);
    for h in &hamiltonians[1..] {
        chi = chi.wedge(&differential(phase, h))?;
    }
    let mut gamma = DiffForm::scalar(phase.clone(), hamiltonians[0].clone());
    for h in &hamiltonians[1..] {
        gamma = gamma.wedge(&differential(phase, h))?;
    }
    if !gamma
        .ext_deriv()
        .add_scaled(&ScalarExpr::int(-1), &chi)?
        .is_empty()
    {
        return Err(BuildError::GammaDerivativeMismatch);
    }
    let lp = LiouvilleProblem::new(phase.clone(), volume.clone(), gamma, ext, cfg, rng)?;
    build_theta_general(&lp, None, cfg, rng)
}

// ---------------------------------------------------------------------------
// Hyperhamiltonian builder
// ---------------------------------------------------------------------------

/// Three symplectic structures with their Hamiltonians on a 4N-dimensional
/// phase space, plus the orientation sign.
#[derive(Debug, Clone)]
pub struct HyperHamData {
    pub phase: Chart,
    pub omegas: [DiffForm; 3],
    pub hamiltonians: [ScalarExpr; 3],
    /// Orientation sign s = ±1.
    pub sign: i8,
    /// Optional primitives with dσ_α = ω_α; required when the ω_α do not
    /// have constant coefficients.
    pub sigmas: Option<[DiffForm; 3]>,
}

/// Linear primitive σ = Σ_(i<j) c_ij x_i dx_j of a constant-coefficient
/// 2-form.
fn constant_primitive(omega: &DiffForm) -> Result<DiffForm, BuildError> {
    let chart = omega.chart().clone();
    let mut sigma = DiffForm::zero(chart.clone(), 1);
    for (tuple, coeff) in omega.terms() {
        if coeff.as_const().is_none() {
            return Err(BuildError::MissingPrimitive);
        }
        let xi = ScalarExpr::coord(chart.coord_name(tuple[0]).to_string());
        sigma = sigma.with_term_added(&[tuple[1]], coeff.clone() * xi);
    }
    Ok(sigma)
}

/// θ = Σ_α σ_α ∧ ζ_α + (6Ns) Σ_α 𝓗^α ζ_α ∧ dt with ζ_α the (2N−1)-th
/// exterior power of ω_α. The 6Ns coefficient is verified, not trusted:
/// the Z ⨼ dθ = 0 check fails loudly on any convention drift and the
/// error then carries per-block residuals.
pub fn build_hyperhamiltonian<R: Rng + ?Sized>(
    data: &HyperHamData,
    ext: &ExtendOptions,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<BuiltVariational, BuildError> {
    let phase = &data.phase;
    let p = phase.dim();
    if p % 4 != 0 {
        return Err(BuildError::DimensionParity {
            found: p,
            required: "a multiple of four (4N)".into(),
        });
    }
    let big_n = p / 4;
    let mut sigmas = Vec::with_capacity(3);
    for (alpha, omega) in data.omegas.iter().enumerate() {
        if !omega.ext_deriv().is_empty() {
            return Err(BuildError::OmegaNotClosed);
        }
        check_nondegenerate(omega, cfg, rng)?;
        let sigma = match &data.sigmas {
            Some(s) => {
                let candidate = &s[alpha];
                if !candidate
                    .ext_deriv()
                    .add_scaled(&ScalarExpr::int(-1), omega)?
                    .is_empty()
                {
                    return Err(BuildError::SigmaDerivativeMismatch);
                }
                candidate.clone()
            }
            None => constant_primitive(omega)?,
        };
        sigmas.push(sigma);
    }
    let zetas: Vec<DiffForm> = data
        .omegas
        .iter()
        .map(|w| w.wedge_power(2 * big_n - 1))
        .collect::<Result<_, _>>()?;

    let m_chart = phase.extended_with_time(ext.time_name, ext.vertical_pair)?;
    let dt = DiffForm::coord_differential(m_chart.clone(), p)?;
    let scale = ScalarExpr::int(6 * big_n as i64 * data.sign as i64);

    let mut theta = DiffForm::zero(m_chart.clone(), p - 1);
    let mut block_forms = Vec::with_capacity(3);
    for alpha in 0..3 {
        let zeta_m = zetas[alpha].lifted_to(&m_chart)?;
        let spatial = sigmas[alpha].lifted_to(&m_chart)?.wedge(&zeta_m)?;
        let temporal = zeta_m
            .wedge(&dt)?
            .scaled(&(scale.clone() * data.hamiltonians[alpha].clone()).simplified());
        let block = spatial.add_scaled(&ScalarExpr::one(), &temporal)?;
        theta = theta.add_scaled(&ScalarExpr::one(), &block)?;
        block_forms.push(block);
    }

    let mut component_fields = Vec::with_capacity(3);
    let mut total = VecField::zero(phase.clone());
    for alpha in 0..3 {
        let x_a = hamiltonian_field(&data.omegas[alpha], &data.hamiltonians[alpha], &cfg.zero)?;
        total = total.add_scaled(&ScalarExpr::one(), &x_a)?;
        component_fields.push(x_a);
    }
    verified_build(theta, total, component_fields, &block_forms, cfg, rng)
}
