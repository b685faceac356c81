//! Task execution: converts the scenario payload into engine calls and
//! assembles the output document. Engine failures surface as
//! module-qualified error codes; input problems exit with 2, mathematical
//! failures with 1.

use crate::report::{CheckEcho, ChartEcho, FormTermEcho, MonitorEcho, ReportDoc};
use crate::scenario::{
    build_chart, parse_field, parse_form, parse_scalar, payload_as, vertical_pair, CliError,
    ExtractPayload, FlowPayload, FlowSpec, HamiltonianPayload, HyperHamPayload, LiouvillePayload,
    NambuPayload, Phi0Spec, ScenarioFile, SectionPayload, VerifyPayload,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use varmax::extcalc::{Chart, DiffForm, FormError, VecField};
use varmax::flow::{
    build_section, integrate, monitor_divergence, section_residual,
    FlowError, FlowOptions, SectionGrid, TANGENCY_THRESHOLD,
};
use varmax::liouville::{
    build_hamiltonian, build_nambu, build_theta_general, build_hyperhamiltonian, BuildError,
    BuiltVariational, ExtendOptions, HyperHamData, LiouvilleProblem,
};
use varmax::symexpr::{is_zero, ScalarExpr};
use varmax::varprin::{
    characteristic_space_at, extract_annihilator_from_eta, is_basic, normalize_time,
    verify_annihilation, SampleConfig, VarError, VariationalProblem,
    RANK_REL_TOL,
};

/// Default residual tolerance for pass/fail verdicts on annihilation
/// checks.
const RESIDUAL_TOL: f64 = 1e-8;
/// Default pass tolerance for pullback residuals of built sections.
const SECTION_RESIDUAL_TOL: f64 = 1e-5;
/// Default pass tolerance for monitor drift along flows.
const DRIFT_TOL: f64 = 1e-8;

pub struct TaskCtx {
    pub seed: u64,
    pub cfg: SampleConfig,
    pub out: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Error code mapping
// ---------------------------------------------------------------------------

fn var_err(e: VarError) -> CliError {
    let code = match &e {
        VarError::WrongDegree { .. } => "varprin.wrong-degree",
        VarError::VerticalPairRequired(_) => "varprin.vertical-pair",
        VarError::EtaIdenticallyZero => "varprin.eta-zero",
        VarError::SingularAt(_) => "varprin.singular",
        VarError::DivergenceNotZero => "varprin.divergence",
        VarError::NoTimeCoordinate => "varprin.no-time",
        VarError::TimeComponentIdenticallyZero => "varprin.time-zero",
        VarError::ScalarVanishesAt(_) => "varprin.vanishes",
        VarError::ScalarSignChange { .. } => "varprin.sign-change",
        VarError::MixedCharts => "varprin.mixed-charts",
        VarError::MixedDegrees => "varprin.mixed-degrees",
        VarError::Form(_) => "extcalc.form",
        VarError::Expr(_) => "symexpr.eval",
    };
    CliError::engine(code, e)
}

fn build_err(e: BuildError) -> CliError {
    let code = match &e {
        BuildError::VolumeDegree { .. } => "liouville.volume-degree",
        BuildError::VolumeIdenticallyZero => "liouville.volume-zero",
        BuildError::WrongDegree { .. } => "liouville.wrong-degree",
        BuildError::SigmaDerivativeMismatch => "liouville.sigma-mismatch",
        BuildError::BetaDerivativeMismatch => "liouville.beta-mismatch",
        BuildError::GammaDerivativeMismatch => "liouville.gamma-mismatch",
        BuildError::OmegaNotClosed => "liouville.omega-not-closed",
        BuildError::OmegaDegenerateAt(_) => "liouville.omega-degenerate",
        BuildError::DimensionParity { .. } => "liouville.dimension",
        BuildError::HamiltonianCount { .. } => "liouville.hamiltonian-count",
        BuildError::PivotFailure(_) => "liouville.pivot",
        BuildError::MissingPrimitive => "liouville.missing-primitive",
        BuildError::VerificationFailed { .. } => "liouville.verification",
        BuildError::Var(_) => "varprin.check",
        BuildError::Form(_) => "extcalc.form",
        BuildError::Expr(_) => "symexpr.eval",
    };
    CliError::engine(code, e)
}

fn flow_err(e: FlowError) -> CliError {
    let code = match &e {
        FlowError::InvalidStep { .. } => "flow.invalid-step",
        FlowError::BlowUp { .. } => "flow.blow-up",
        FlowError::StateDim { .. } => "flow.state-dim",
        FlowError::GridTooCoarse { .. } => "flow.grid-too-coarse",
        FlowError::TangentToGrid { .. } => "flow.tangency",
        FlowError::NotTimeNormalized => "flow.not-normalized",
        FlowError::TimeDependent(_) => "flow.time-dependent",
        FlowError::BadGrid(_) => "flow.bad-grid",
        FlowError::Form(_) => "extcalc.form",
        FlowError::Expr(_) => "symexpr.eval",
    };
    CliError::engine(code, e)
}

fn form_err(e: FormError) -> CliError {
    CliError::engine("extcalc.form", e)
}

// ---------------------------------------------------------------------------
// Echo helpers
// ---------------------------------------------------------------------------

fn chart_echo(chart: &Chart) -> ChartEcho {
    ChartEcho {
        coords: chart.coord_names().to_vec(),
        vertical: chart
            .vertical_indices()
            .map(|i| chart.coord_name(i).to_string())
            .collect(),
        time: chart.time_index().map(|i| chart.coord_name(i).to_string()),
    }
}

fn field_echo(field: &VecField) -> Vec<String> {
    field.comps().iter().map(|c| c.to_string()).collect()
}

fn form_echo(form: &DiffForm) -> Vec<FormTermEcho> {
    form.terms()
        .map(|(tuple, coeff)| FormTermEcho {
            indices: tuple
                .iter()
                .map(|&i| form.chart().coord_name(i).to_string())
                .collect(),
            coeff: coeff.to_string(),
        })
        .collect()
}

fn artifact_path(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.with_extension("");
    PathBuf::from(format!("{}.{suffix}", stem.display()))
}

fn write_artifact(
    doc: &mut ReportDoc,
    out: &Option<PathBuf>,
    suffix: &str,
    content: &str,
) -> Result<(), CliError> {
    if let Some(out) = out {
        let path = artifact_path(out, suffix);
        std::fs::write(&path, content)
            .map_err(|e| CliError::engine("cli.io", format!("{}: {e}", path.display())))?;
        doc.artifacts.push(path.display().to_string());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

/// Characteristic-space sanity note: for a proper pair of generators the
/// pointwise space should be a line. Extra dimensions mean vertical
/// annihilators of the module outside the annihilator of dθ; they are
/// reported, not classified.
fn characteristic_note(
    eta: &DiffForm,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<CheckEcho>, Vec<String>), CliError> {
    let chart = eta.chart().clone();
    if chart.vertical_count() != 2 {
        return Ok((Vec::new(), Vec::new()));
    }
    let psis: Vec<DiffForm> = chart
        .vertical_indices()
        .map(|j| {
            VecField::coord_basis(chart.clone(), j)
                .and_then(|v| v.contract(eta))
                .map_err(form_err)
        })
        .collect::<Result<_, _>>()?;
    let mut dims = Vec::new();
    for _ in 0..5 {
        let p: Vec<f64> = (0..chart.dim())
            .map(|_| rand::Rng::gen_range(rng, -1.0..=1.0))
            .collect();
        let basis = characteristic_space_at(&psis, &p, RANK_REL_TOL).map_err(var_err)?;
        dims.push(basis.len());
    }
    let all_lines = dims.iter().all(|&d| d == 1);
    let note = if all_lines {
        "characteristic space has dimension 1 at all 5 sampled points".to_string()
    } else {
        format!(
            "characteristic space dimensions {dims:?} at sampled points; \
             dimensions above 1 indicate vertical fields annihilating the \
             variational module outside the annihilator of dθ"
        )
    };
    let check = CheckEcho::boolean("characteristic-dimension", all_lines);
    Ok((vec![check], vec![note]))
}

/// Run the optional embedded flow of a builder task and record monitors.
fn run_builder_flow(
    doc: &mut ReportDoc,
    dynamics: &VecField,
    flow: &FlowSpec,
    default_monitors: &[(String, ScalarExpr)],
    out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let chart = dynamics.chart();
    let mut monitors: Vec<(String, ScalarExpr)> = default_monitors.to_vec();
    for (name, src) in &flow.monitors {
        monitors.push((name.clone(), parse_scalar(src, chart)?));
    }
    let opts = FlowOptions {
        monitors,
        ..Default::default()
    };
    let traj = integrate(dynamics, &flow.start, flow.t_end, flow.h, &opts).map_err(flow_err)?;
    let drift_tol = flow.drift_tol.unwrap_or(DRIFT_TOL);
    for (name, _) in &opts.monitors {
        let drift = traj.monitor_drift(name).unwrap_or(f64::NAN);
        let initial = traj.monitor_values[0][opts
            .monitors
            .iter()
            .position(|(n, _)| n == name)
            .expect("monitor present")];
        doc.monitors.push(MonitorEcho {
            name: name.clone(),
            initial: crate::report::fmt_float(initial),
            drift: crate::report::fmt_float(drift),
            passed: drift <= drift_tol,
        });
    }
    let div_max = traj
        .monitor_values
        .iter()
        .map(|row| row.last().copied().unwrap_or(0.0).abs())
        .fold(0.0f64, f64::max);
    doc.notes.push(format!(
        "max |divergence| along trajectory: {}",
        crate::report::fmt_float(div_max)
    ));
    write_artifact(doc, out, "trajectory.tsv", &traj.to_lines(chart))?;
    Ok(())
}

/// Common document assembly for builder outputs.
fn builder_doc(
    task: &str,
    ctx: &TaskCtx,
    built: &BuiltVariational,
    volume: &DiffForm,
    residual_tol: f64,
) -> Result<ReportDoc, CliError> {
    let mut doc = ReportDoc::new(task, ctx.seed, chart_echo(built.problem.chart()));
    doc.field = field_echo(&built.dynamics);
    doc.normalized_field = field_echo(&built.extended_field);
    doc.theta = form_echo(built.problem.theta());
    doc.checks.push(CheckEcho::from_verify(
        "annihilation",
        &built.verification,
        residual_tol,
    ));
    let lie = built
        .dynamics
        .lie_derivative(volume)
        .map_err(form_err)?;
    doc.checks
        .push(CheckEcho::boolean("liouville-certificate", lie.is_empty()));
    doc.checks.push(CheckEcho::boolean(
        "divergence-zero",
        built.dynamics.divergence().is_const_zero()
            || is_zero(&built.dynamics.divergence(), &ctx.cfg.zero)
                .map_err(|e| CliError::engine("symexpr.eval", e))?,
    ));
    Ok(doc)
}

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

pub fn run_task(name: &str, scenario: &ScenarioFile, ctx: &TaskCtx) -> Result<ReportDoc, CliError> {
    if let Some(tag) = &scenario.task {
        if tag != name {
            return Err(CliError::input(
                "scenario.task-mismatch",
                format!("scenario declares task `{tag}`, subcommand is `{name}`"),
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    match name {
        "extract" => extract_task(scenario, ctx, &mut rng),
        "build-liouville" => liouville_task(scenario, ctx, &mut rng),
        "build-hamiltonian" => hamiltonian_task(scenario, ctx, &mut rng),
        "build-nambu" => nambu_task(scenario, ctx, &mut rng),
        "build-hyperham" => hyperham_task(scenario, ctx, &mut rng),
        "verify" => verify_task(scenario, ctx, &mut rng),
        "flow" => flow_task(scenario, ctx),
        "section" => section_task(scenario, ctx, &mut rng),
        other => Err(CliError::input(
            "scenario.task",
            format!("unknown task `{other}`"),
        )),
    }
}

fn extract_task(
    scenario: &ScenarioFile,
    ctx: &TaskCtx,
    rng: &mut ChaCha8Rng,
) -> Result<ReportDoc, CliError> {
    let payload: ExtractPayload = payload_as(&scenario.payload)?;
    let chart = build_chart(&scenario.chart)?;
    let mut doc = ReportDoc::new("extract", ctx.seed, chart_echo(&chart));
    let residual_tol = payload.residual_tol.unwrap_or(RESIDUAL_TOL);

    let eta = match (&payload.theta, &payload.eta) {
        (Some(theta_recs), None) => {
            let theta = parse_form(&chart, theta_recs, None)?;
            doc.theta = form_echo(&theta);
            let vp = VariationalProblem::new(theta).map_err(var_err)?;
            doc.checks
                .push(CheckEcho::boolean("proper", !is_basic(vp.theta())));
            vp.eta().clone()
        }
        (None, Some(eta_recs)) => parse_form(&chart, eta_recs, None)?,
        _ => {
            return Err(CliError::input(
                "scenario.payload",
                "extract needs exactly one of `theta` or `eta`",
            ))
        }
    };

    let x = extract_annihilator_from_eta(&eta, &ctx.cfg, rng).map_err(var_err)?;
    doc.field = field_echo(&x.field);
    let verify = verify_annihilation(&x.field, &eta, ctx.cfg.verify_points, rng).map_err(var_err)?;
    doc.checks
        .push(CheckEcho::from_verify("annihilation", &verify, residual_tol));
    let sample_pts: Vec<Vec<f64>> = (0..ctx.cfg.verify_points)
        .map(|_| {
            (0..chart.dim())
                .map(|_| rand::Rng::gen_range(rng, -1.0..=1.0))
                .collect()
        })
        .collect();
    let div_max = monitor_divergence(&x.field, &sample_pts).map_err(flow_err)?;
    doc.checks.push(CheckEcho::numeric(
        "divergence-residual",
        div_max,
        ctx.cfg.verify_points,
        1e-9,
    ));
    let (checks, notes) = characteristic_note(&eta, rng)?;
    doc.checks.extend(checks);
    doc.notes.extend(notes);

    if chart.time_index().is_some() {
        match normalize_time(&x, &ctx.cfg, rng) {
            Ok(x0) => doc.normalized_field = field_echo(&x0.field),
            Err(e) => doc
                .notes
                .push(format!("time normalization unavailable: {e}")),
        }
    }
    doc.settle_status();
    Ok(doc)
}

/// Phase chart for builder tasks: the declared coordinates with a
/// placeholder vertical marker (the meaningful vertical pair lives on the
/// extended chart).
fn phase_chart(scenario: &ScenarioFile) -> Result<Chart, CliError> {
    let coords: Vec<&str> = scenario.chart.coords.iter().map(String::as_str).collect();
    if scenario.chart.time.is_some() {
        return Err(CliError::input(
            "scenario.validate",
            "builder charts describe the phase space only; the time coordinate is appended automatically",
        ));
    }
    let vertical = vec![*coords.first().ok_or_else(|| {
        CliError::input("scenario.validate", "chart has no coordinates")
    })?];
    Chart::new(&coords, &vertical, None).map_err(|e| CliError::input("extcalc.chart", e))
}

fn extend_options<'a>(
    pair: &'a Option<(String, String)>,
    time_name: &'a Option<String>,
) -> ExtendOptions<'a> {
    ExtendOptions {
        time_name: time_name.as_deref().unwrap_or("t"),
        vertical_pair: pair.as_ref().map(|(a, b)| (a.as_str(), b.as_str())),
    }
}

fn liouville_task(
    scenario: &ScenarioFile,
    ctx: &TaskCtx,
    rng: &mut ChaCha8Rng,
) -> Result<ReportDoc, CliError> {
    let payload: LiouvillePayload = payload_as(&scenario.payload)?;
    let phase = phase_chart(scenario)?;
    let p = phase.dim();
    let pair = vertical_pair(&scenario.chart)?;
    let volume = match &payload.volume {
        Some(recs) => parse_form(&phase, recs, Some(p))?,
        None => DiffForm::volume(phase.clone()),
    };
    let gamma = parse_form(&phase, &payload.gamma, payload.gamma_degree.or(Some(p - 2)))?;
    let sigma = payload
        .sigma
        .as_ref()
        .map(|recs| parse_form(&phase, recs, Some(p - 1)))
        .transpose()?;
    let ext = extend_options(&pair, &payload.time_name);
    let lp = LiouvilleProblem::new(phase.clone(), volume.clone(), gamma, &ext, &ctx.cfg, rng)
        .map_err(build_err)?;
    let built = build_theta_general(&lp, sigma.as_ref(), &ctx.cfg, rng).map_err(build_err)?;
    let mut doc = builder_doc(
        "build-liouville",
        ctx,
        &built,
        &volume,
        payload.residual_tol.unwrap_or(RESIDUAL_TOL),
    )?;
    if let Some(flow) = &payload.flow {
        run_builder_flow(&mut doc, &built.dynamics, flow, &[], &ctx.out)?;
    }
    doc.settle_status();
    Ok(doc)
}

fn hamiltonian_task(
    scenario: &ScenarioFile,
    ctx: &TaskCtx,
    rng: &mut ChaCha8Rng,
) -> Result<ReportDoc, CliError> {
    let payload: HamiltonianPayload = payload_as(&scenario.payload)?;
    let phase = phase_chart(scenario)?;
    let pair = vertical_pair(&scenario.chart)?;
    let omega = parse_form(&phase, &payload.omega, Some(2))?;
    let beta = payload
        .beta
        .as_ref()
        .map(|recs| parse_form(&phase, recs, Some(1)))
        .transpose()?;
    let h = parse_scalar(&payload.hamiltonian, &phase)?;
    let ext = extend_options(&pair, &payload.time_name);
    let built = build_hamiltonian(&phase, &omega, beta.as_ref(), &h, &ext, &ctx.cfg, rng)
        .map_err(build_err)?;
    let mut doc = builder_doc(
        "build-hamiltonian",
        ctx,
        &built,
        &DiffForm::volume(phase.clone()),
        payload.residual_tol.unwrap_or(RESIDUAL_TOL),
    )?;
    if let Some(flow) = &payload.flow {
        let defaults = vec![("H".to_string(), h)];
        run_builder_flow(&mut doc, &built.dynamics, flow, &defaults, &ctx.out)?;
    }
    doc.settle_status();
    Ok(doc)
}

fn nambu_task(
    scenario: &ScenarioFile,
    ctx: &TaskCtx,
    rng: &mut ChaCha8Rng,
) -> Result<ReportDoc, CliError> {
    let payload: NambuPayload = payload_as(&scenario.payload)?;
    let phase = phase_chart(scenario)?;
    let p = phase.dim();
    let pair = vertical_pair(&scenario.chart)?;
    let volume = match &payload.volume {
        Some(recs) => parse_form(&phase, recs, Some(p))?,
        None => DiffForm::volume(phase.clone()),
    };
    let hs: Vec<ScalarExpr> = payload
        .hamiltonians
        .iter()
        .map(|src| parse_scalar(src, &phase))
        .collect::<Result<_, _>>()?;
    let ext = extend_options(&pair, &payload.time_name);
    let built = build_nambu(&phase, &volume, &hs, &ext, &ctx.cfg, rng).map_err(build_err)?;
    let mut doc = builder_doc(
        "build-nambu",
        ctx,
        &built,
        &volume,
        payload.residual_tol.unwrap_or(RESIDUAL_TOL),
    )?;
    // Each Hamiltonian is a first integral of the field.
    let mut all_conserved = true;
    for h in &hs {
        let dh = DiffForm::scalar(phase.clone(), h.clone()).ext_deriv();
        all_conserved &= built.dynamics.contract(&dh).map_err(form_err)?.is_empty();
    }
    doc.checks
        .push(CheckEcho::boolean("first-integrals", all_conserved));
    if let Some(flow) = &payload.flow {
        let defaults: Vec<(String, ScalarExpr)> = hs
            .iter()
            .enumerate()
            .map(|(i, h)| (format!("H{}", i + 2), h.clone()))
            .collect();
        run_builder_flow(&mut doc, &built.dynamics, flow, &defaults, &ctx.out)?;
    }
    doc.settle_status();
    Ok(doc)
}

fn hyperham_task(
    scenario: &ScenarioFile,
    ctx: &TaskCtx,
    rng: &mut ChaCha8Rng,
) -> Result<ReportDoc, CliError> {
    let payload: HyperHamPayload = payload_as(&scenario.payload)?;
    let phase = phase_chart(scenario)?;
    let pair = vertical_pair(&scenario.chart)?;
    let omegas: Vec<DiffForm> = payload
        .omegas
        .iter()
        .map(|recs| parse_form(&phase, recs, Some(2)))
        .collect::<Result<_, _>>()?;
    let hams: Vec<ScalarExpr> = payload
        .hamiltonians
        .iter()
        .map(|src| parse_scalar(src, &phase))
        .collect::<Result<_, _>>()?;
    let sigmas = payload
        .sigmas
        .as_ref()
        .map(|s| -> Result<[DiffForm; 3], CliError> {
            let v: Vec<DiffForm> = s
                .iter()
                .map(|recs| parse_form(&phase, recs, Some(1)))
                .collect::<Result<_, _>>()?;
            Ok(v.try_into().expect("three primitives"))
        })
        .transpose()?;
    let data = HyperHamData {
        phase: phase.clone(),
        omegas: omegas.clone().try_into().expect("three structures"),
        hamiltonians: hams.clone().try_into().expect("three Hamiltonians"),
        sign: payload.sign,
        sigmas,
    };
    let ext = extend_options(&pair, &payload.time_name);
    let built = build_hyperhamiltonian(&data, &ext, &ctx.cfg, rng).map_err(build_err)?;
    let mut doc = builder_doc(
        "build-hyperham",
        ctx,
        &built,
        &DiffForm::volume(phase.clone()),
        payload.residual_tol.unwrap_or(RESIDUAL_TOL),
    )?;
    let t = built
        .problem
        .chart()
        .time_index()
        .expect("extended chart has time");
    doc.checks.push(CheckEcho::boolean(
        "time-component-one",
        built.extended_field.comp(t).is_const_one(),
    ));
    if let Some(flow) = &payload.flow {
        let defaults: Vec<(String, ScalarExpr)> = hams
            .iter()
            .enumerate()
            .map(|(i, h)| (format!("H{}", i + 1), h.clone()))
            .collect();
        run_builder_flow(&mut doc, &built.dynamics, flow, &defaults, &ctx.out)?;
    }
    doc.settle_status();
    Ok(doc)
}

fn verify_task(
    scenario: &ScenarioFile,
    ctx: &TaskCtx,
    rng: &mut ChaCha8Rng,
) -> Result<ReportDoc, CliError> {
    let payload: VerifyPayload = payload_as(&scenario.payload)?;
    let chart = build_chart(&scenario.chart)?;
    let field = parse_field(&chart, &payload.field)?;
    let form = parse_form(&chart, &payload.form, None)?;
    let mut doc = ReportDoc::new("verify", ctx.seed, chart_echo(&chart));
    doc.field = field_echo(&field);
    let report =
        verify_annihilation(&field, &form, ctx.cfg.verify_points, rng).map_err(var_err)?;
    doc.checks.push(CheckEcho::from_verify(
        "annihilation",
        &report,
        payload.residual_tol.unwrap_or(RESIDUAL_TOL),
    ));
    doc.settle_status();
    Ok(doc)
}

fn flow_task(scenario: &ScenarioFile, ctx: &TaskCtx) -> Result<ReportDoc, CliError> {
    let payload: FlowPayload = payload_as(&scenario.payload)?;
    let chart = build_chart(&scenario.chart)?;
    let field = parse_field(&chart, &payload.field)?;
    let mut doc = ReportDoc::new("flow", ctx.seed, chart_echo(&chart));
    doc.field = field_echo(&field);
    let mut monitors = Vec::new();
    for (name, src) in &payload.monitors {
        monitors.push((name.clone(), parse_scalar(src, &chart)?));
    }
    let opts = FlowOptions {
        monitors,
        ..Default::default()
    };
    let traj =
        integrate(&field, &payload.start, payload.t_end, payload.h, &opts).map_err(flow_err)?;
    let drift_tol = payload.drift_tol.unwrap_or(DRIFT_TOL);
    for (i, (name, _)) in opts.monitors.iter().enumerate() {
        let drift = traj.monitor_drift(name).unwrap_or(f64::NAN);
        doc.monitors.push(MonitorEcho {
            name: name.clone(),
            initial: crate::report::fmt_float(traj.monitor_values[0][i]),
            drift: crate::report::fmt_float(drift),
            passed: drift <= drift_tol,
        });
    }
    let div_max = traj
        .monitor_values
        .iter()
        .map(|row| row.last().copied().unwrap_or(0.0).abs())
        .fold(0.0f64, f64::max);
    doc.notes.push(format!(
        "max |divergence| along trajectory: {}",
        crate::report::fmt_float(div_max)
    ));
    write_artifact(&mut doc, &ctx.out, "trajectory.tsv", &traj.to_lines(&chart))?;
    doc.settle_status();
    Ok(doc)
}

fn section_task(
    scenario: &ScenarioFile,
    ctx: &TaskCtx,
    rng: &mut ChaCha8Rng,
) -> Result<ReportDoc, CliError> {
    let payload: SectionPayload = payload_as(&scenario.payload)?;
    let chart = build_chart(&scenario.chart)?;
    if chart.time_index().is_none() {
        return Err(CliError::input(
            "scenario.validate",
            "section tasks need a time coordinate on the chart",
        ));
    }
    let theta = parse_form(&chart, &payload.theta, None)?;
    let mut doc = ReportDoc::new("section", ctx.seed, chart_echo(&chart));
    doc.theta = form_echo(&theta);
    let vp = VariationalProblem::new(theta).map_err(var_err)?;
    let x = varmax::varprin::extract_annihilator(&vp, &ctx.cfg, rng).map_err(var_err)?;
    let x0 = normalize_time(&x, &ctx.cfg, rng).map_err(var_err)?;
    doc.field = field_echo(&x.field);
    doc.normalized_field = field_echo(&x0.field);

    let phi0 = build_phi0(&chart, &payload.phi0)?;
    write_artifact(&mut doc, &ctx.out, "phi0.tsv", &phi0.to_lines())?;
    let threshold = payload.tangency_threshold.unwrap_or(TANGENCY_THRESHOLD);
    let built = build_section(&phi0, &x0, payload.steps, payload.h, threshold).map_err(flow_err)?;
    doc.checks.push(CheckEcho {
        name: "tangency-margin".to_string(),
        symbolic: None,
        max_residual: Some(crate::report::fmt_float(built.tangency_margin)),
        samples_used: 0,
        witness_point: None,
        passed: built.tangency_margin >= threshold,
    });
    let psis = vp.variational_module();
    let residual = section_residual(&built.grid, &psis).map_err(flow_err)?;
    doc.checks.push(CheckEcho::numeric(
        "pullback-residual",
        residual,
        0,
        payload.residual_tol.unwrap_or(SECTION_RESIDUAL_TOL),
    ));
    write_artifact(&mut doc, &ctx.out, "section.tsv", &built.grid.to_lines())?;
    doc.settle_status();
    Ok(doc)
}

fn build_phi0(chart: &Chart, spec: &Phi0Spec) -> Result<SectionGrid, CliError> {
    let resolve = |name: &str| {
        chart.coord_index(name).ok_or_else(|| {
            CliError::input(
                "symexpr.unknown-identifier",
                format!("unknown coordinate `{name}` in phi0"),
            )
        })
    };
    let mut axes = Vec::with_capacity(spec.axes.len());
    for a in &spec.axes {
        axes.push((resolve(&a.coord)?, a.origin, a.spacing, a.count));
    }
    let mut fixed = Vec::with_capacity(spec.fixed.len());
    for (name, v) in &spec.fixed {
        fixed.push((resolve(name)?, *v));
    }
    let mut fiber = Vec::with_capacity(spec.fiber.len());
    for (name, src) in &spec.fiber {
        fiber.push((resolve(name)?, parse_scalar(src, chart)?));
    }
    SectionGrid::from_graph(chart.clone(), &axes, &fixed, &fiber)
        .map_err(|e| CliError::input("flow.bad-grid", e))
}
