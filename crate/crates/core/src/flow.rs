//! Numerical layer: trajectory integration with invariant monitors,
//! section construction along characteristic curves, and pullback residual
//! measurement on structured grids.
//!
//! Integration is classical fixed-step RK4; the last step is shortened to
//! land exactly on `t_end`. Section grids store full chart coordinates per
//! node over a structured parameter lattice, so tangent frames come from
//! central differences in parameter space; for graph-type grids (base
//! coordinates on the lattice) this reduces to differencing the fiber
//! values.

use crate::extcalc::{increasing_tuples, Chart, DiffForm, FormError, VecField};
use crate::symexpr::{ExprError, ScalarExpr};
use crate::varprin::AnnihilatorField;
use nalgebra::DMatrix;
use std::fmt::Write as _;
use thiserror::Error;

/// Default bound on the state norm; beyond it integration reports blow-up
/// instead of propagating overflow.
pub const BLOWUP_NORM: f64 = 1e6;

/// Default tangency margin (sine of the smallest principal angle between
/// the field direction and the initial grid's tangent space).
pub const TANGENCY_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FlowError {
    #[error("step size and duration must be positive (h = {h}, t_end = {t_end})")]
    InvalidStep { h: f64, t_end: f64 },
    #[error("state norm {norm:.3e} exceeded the blow-up bound at t = {t}")]
    BlowUp { t: f64, norm: f64 },
    #[error("state dimension {found} does not match chart dimension {expected}")]
    StateDim { expected: usize, found: usize },
    #[error("grid axis {axis} has {nodes} nodes; residual measurement needs at least 3")]
    GridTooCoarse { axis: usize, nodes: usize },
    #[error("field direction is tangent to the initial grid (margin {margin:.3e} < {threshold:.3e})")]
    TangentToGrid { margin: f64, threshold: f64 },
    #[error("section construction requires a time-normalized field")]
    NotTimeNormalized,
    #[error("field components depend on `{0}`; restrict to the phase chart first")]
    TimeDependent(String),
    #[error("grid data is inconsistent: {0}")]
    BadGrid(String),
    #[error(transparent)]
    Form(#[from] FormError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

// ---------------------------------------------------------------------------
// RK4 integration
// ---------------------------------------------------------------------------

/// Integration options: monitored first integrals and the blow-up bound.
/// The divergence of the field is always monitored as well.
#[derive(Debug, Clone)]
pub struct FlowOptions {
    pub monitors: Vec<(String, ScalarExpr)>,
    pub blowup_norm: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            monitors: Vec::new(),
            blowup_norm: BLOWUP_NORM,
        }
    }
}

/// A fixed-step trajectory with monitor values recorded at every step.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub monitor_names: Vec<String>,
    /// One row per time, aligned with `monitor_names`.
    pub monitor_values: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states
            .last()
            .expect("trajectory has at least one state")
    }

    /// Largest |value − initial value| of a monitor along the trajectory.
    pub fn monitor_drift(&self, name: &str) -> Option<f64> {
        let idx = self.monitor_names.iter().position(|n| n == name)?;
        let first = self.monitor_values.first()?[idx];
        Some(
            self.monitor_values
                .iter()
                .map(|row| (row[idx] - first).abs())
                .fold(0.0, f64::max),
        )
    }

    /// Line-oriented dump: one step per line with the step index, the time,
    /// the state coordinates and the monitor values.
    pub fn to_lines(&self, chart: &Chart) -> String {
        let mut out = String::new();
        let coords: Vec<&str> = chart.coord_names().iter().map(String::as_str).collect();
        let monitors: Vec<&str> = self.monitor_names.iter().map(String::as_str).collect();
        let _ = writeln!(
            out,
            "# step\tt\t{}\t{}",
            coords.join("\t"),
            monitors.join("\t")
        );
        for (i, t) in self.times.iter().enumerate() {
            let _ = write!(out, "{i}\t{t:.12e}");
            for v in &self.states[i] {
                let _ = write!(out, "\t{v:.12e}");
            }
            for v in &self.monitor_values[i] {
                let _ = write!(out, "\t{v:.12e}");
            }
            out.push('\n');
        }
        out
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rk4_step<F>(f: &F, y: &[f64], h: f64) -> Result<Vec<f64>, FlowError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, ExprError>,
{
    let n = y.len();
    let k1 = f(y)?;
    let mut tmp: Vec<f64> = (0..n).map(|i| y[i] + 0.5 * h * k1[i]).collect();
    let k2 = f(&tmp)?;
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    let k3 = f(&tmp)?;
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    let k4 = f(&tmp)?;
    Ok((0..n)
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Integrate an autonomous field on its chart with classical RK4 at fixed
/// step `h`, recording every step. The final step is shortened to land on
/// `t_end` exactly.
pub fn integrate(
    field: &VecField,
    start: &[f64],
    t_end: f64,
    h: f64,
    opts: &FlowOptions,
) -> Result<Trajectory, FlowError> {
    if h <= 0.0 || t_end <= 0.0 {
        return Err(FlowError::InvalidStep { h, t_end });
    }
    let chart = field.chart();
    if start.len() != chart.dim() {
        return Err(FlowError::StateDim {
            expected: chart.dim(),
            found: start.len(),
        });
    }
    let divergence = field.divergence();
    let mut monitor_names: Vec<String> = opts.monitors.iter().map(|(n, _)| n.clone()).collect();
    monitor_names.push("divergence".to_string());
    let monitor_exprs: Vec<&ScalarExpr> = opts
        .monitors
        .iter()
        .map(|(_, e)| e)
        .chain(std::iter::once(&divergence))
        .collect();

    let eval_field = |y: &[f64]| field.eval(y);
    let record = |y: &[f64]| -> Result<Vec<f64>, FlowError> {
        let lookup = chart.lookup(y);
        monitor_exprs
            .iter()
            .map(|e| e.eval_with(&lookup).map_err(FlowError::from))
            .collect()
    };

    let mut times = vec![0.0];
    let mut states = vec![start.to_vec()];
    let mut monitor_values = vec![record(start)?];
    let mut t = 0.0;
    let mut y = start.to_vec();
    while t < t_end - 1e-12 * t_end.max(1.0) {
        let step = h.min(t_end - t);
        y = rk4_step(&eval_field, &y, step)?;
        t += step;
        let nrm = norm(&y);
        if !nrm.is_finite() || nrm > opts.blowup_norm {
            return Err(FlowError::BlowUp { t, norm: nrm });
        }
        times.push(t);
        states.push(y.clone());
        monitor_values.push(record(&y)?);
    }
    Ok(Trajectory {
        times,
        states,
        monitor_names,
        monitor_values,
    })
}

/// Max |Σ_μ ∂_μ f^μ| over the given points.
pub fn monitor_divergence(field: &VecField, points: &[Vec<f64>]) -> Result<f64, FlowError> {
    let div = field.divergence();
    let chart = field.chart();
    let mut max = 0.0f64;
    for p in points {
        let v = div.eval_with(&chart.lookup(p))?;
        max = max.max(v.abs());
    }
    Ok(max)
}

/// Drop the trailing time coordinate of a time-normalized field, yielding
/// the dynamical field on the phase chart. Errors when any phase component
/// still references the time coordinate.
pub fn restrict_to_phase(field: &VecField, phase: &Chart) -> Result<VecField, FlowError> {
    let m_chart = field.chart();
    let p = phase.dim();
    if m_chart.dim() != p + 1 || m_chart.coord_names()[..p] != *phase.coord_names() {
        return Err(FlowError::BadGrid(
            "phase chart is not a prefix of the field's chart".into(),
        ));
    }
    let time_name = m_chart.coord_name(p).to_string();
    let comps: Vec<ScalarExpr> = field.comps()[..p].to_vec();
    for c in &comps {
        if c.free_coords().contains(&time_name) {
            return Err(FlowError::TimeDependent(time_name));
        }
    }
    Ok(VecField::new(phase.clone(), comps)?)
}

// ---------------------------------------------------------------------------
// Section grids
// ---------------------------------------------------------------------------

/// A structured lattice of points in the chart. The lattice lives in
/// parameter space: `shape[i]` nodes at spacing `spacing[i]` along axis i,
/// row-major storage with the last axis contiguous. Each node stores the
/// full chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionGrid {
    chart: Chart,
    shape: Vec<usize>,
    spacing: Vec<f64>,
    points: Vec<Vec<f64>>,
}

impl SectionGrid {
    pub fn new(
        chart: Chart,
        shape: Vec<usize>,
        spacing: Vec<f64>,
        points: Vec<Vec<f64>>,
    ) -> Result<SectionGrid, FlowError> {
        if shape.len() != spacing.len() {
            return Err(FlowError::BadGrid("shape and spacing rank mismatch".into()));
        }
        if spacing.iter().any(|s| !(*s > 0.0)) {
            return Err(FlowError::BadGrid(
                "lattice spacing must be positive".into(),
            ));
        }
        let expected: usize = shape.iter().product::<usize>().max(1);
        if points.len() != expected {
            return Err(FlowError::BadGrid(format!(
                "expected {expected} nodes, got {}",
                points.len()
            )));
        }
        for p in &points {
            if p.len() != chart.dim() {
                return Err(FlowError::BadGrid("node dimension mismatch".into()));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(FlowError::BadGrid("node values must be finite".into()));
            }
        }
        Ok(SectionGrid {
            chart,
            shape,
            spacing,
            points,
        })
    }

    /// Build a graph-type grid: `axes` coordinates run over the lattice,
    /// `fixed` coordinates are pinned, and the remaining (fiber)
    /// coordinates are expressions in the base coordinates.
    ///
    /// Each axis entry is `(coordinate index, origin, spacing, count)`.
    pub fn from_graph(
        chart: Chart,
        axes: &[(usize, f64, f64, usize)],
        fixed: &[(usize, f64)],
        fiber: &[(usize, ScalarExpr)],
    ) -> Result<SectionGrid, FlowError> {
        let n = chart.dim();
        let mut covered = vec![false; n];
        for (i, _, _, _) in axes {
            covered[*i] = true;
        }
        for (i, _) in fixed {
            if covered[*i] {
                return Err(FlowError::BadGrid(format!(
                    "coordinate {} assigned twice",
                    chart.coord_name(*i)
                )));
            }
            covered[*i] = true;
        }
        for (i, _) in fiber {
            if covered[*i] {
                return Err(FlowError::BadGrid(format!(
                    "coordinate {} assigned twice",
                    chart.coord_name(*i)
                )));
            }
            covered[*i] = true;
        }
        if covered.iter().any(|c| !c) {
            return Err(FlowError::BadGrid(
                "every chart coordinate needs an axis, a fixed value or a fiber expression".into(),
            ));
        }
        let shape: Vec<usize> = axes.iter().map(|(_, _, _, c)| *c).collect();
        let spacing: Vec<f64> = axes.iter().map(|(_, _, s, _)| *s).collect();
        if spacing.iter().any(|s| !(*s > 0.0)) {
            return Err(FlowError::BadGrid(
                "lattice spacing must be positive".into(),
            ));
        }
        let total: usize = shape.iter().product::<usize>().max(1);
        let mut points = Vec::with_capacity(total);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..total {
            let mut node = vec![f64::NAN; n];
            for (a, (ci, origin, step, _)) in axes.iter().enumerate() {
                node[*ci] = origin + step * idx[a] as f64;
            }
            for (ci, v) in fixed {
                node[*ci] = *v;
            }
            {
                let base = node.clone();
                let lookup = |name: &str| {
                    chart
                        .coord_index(name)
                        .and_then(|i| base.get(i).copied())
                        .filter(|v| v.is_finite())
                };
                for (ci, expr) in fiber {
                    node[*ci] = expr.eval_with(&lookup)?;
                }
            }
            points.push(node);
            // Row-major increment, last axis fastest.
            for a in (0..shape.len()).rev() {
                idx[a] += 1;
                if idx[a] < shape[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        SectionGrid::new(chart, shape, spacing, points)
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Row-major offset of a lattice index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        let mut off = 0usize;
        for (a, i) in idx.iter().enumerate() {
            off = off * self.shape[a] + i;
        }
        off
    }

    /// Line-oriented dump: lattice indices then chart coordinates.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        let coords: Vec<&str> = self
            .chart
            .coord_names()
            .iter()
            .map(String::as_str)
            .collect();
        let axes: Vec<String> = (0..self.rank()).map(|a| format!("i{a}")).collect();
        let _ = writeln!(out, "# {}\t{}", axes.join("\t"), coords.join("\t"));
        let total: usize = self.shape.iter().product::<usize>().max(1);
        let mut idx = vec![0usize; self.rank()];
        for _ in 0..total {
            for i in &idx {
                let _ = write!(out, "{i}\t");
            }
            let node = &self.points[self.offset(&idx)];
            for (i, v) in node.iter().enumerate() {
                if i > 0 {
                    out.push('\t');
                }
                let _ = write!(out, "{v:.12e}");
            }
            out.push('\n');
            for a in (0..self.rank()).rev() {
                idx[a] += 1;
                if idx[a] < self.shape[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        out
    }

    /// Tangent vectors per unit parameter at an interior node, by central
    /// differences along each lattice axis.
    fn tangents_at(&self, idx: &[usize]) -> Vec<Vec<f64>> {
        let n = self.chart.dim();
        let mut out = Vec::with_capacity(self.rank());
        for a in 0..self.rank() {
            let mut plus = idx.to_vec();
            plus[a] += 1;
            let mut minus = idx.to_vec();
            minus[a] -= 1;
            let pp = &self.points[self.offset(&plus)];
            let pm = &self.points[self.offset(&minus)];
            let h2 = 2.0 * self.spacing[a];
            out.push((0..n).map(|i| (pp[i] - pm[i]) / h2).collect());
        }
        out
    }

    fn interior_indices(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let rank = self.rank();
        if rank == 0 {
            return out;
        }
        if self.shape.iter().any(|&s| s < 3) {
            return out;
        }
        let mut idx: Vec<usize> = vec![1; rank];
        loop {
            out.push(idx.clone());
            let mut a = rank;
            loop {
                if a == 0 {
                    return out;
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < self.shape[a] - 1 {
                    break;
                }
                idx[a] = 1;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Section construction (flowing initial data)
// ---------------------------------------------------------------------------

/// Flow every node of a grid by `steps` RK4 steps of size `h` along a field
/// on the same chart; shape is preserved.
pub fn flow_grid(
    grid: &SectionGrid,
    field: &VecField,
    steps: usize,
    h: f64,
    blowup_norm: f64,
) -> Result<SectionGrid, FlowError> {
    let eval_field = |y: &[f64]| field.eval(y);
    let mut points = Vec::with_capacity(grid.points.len());
    for node in &grid.points {
        let mut y = node.clone();
        for k in 0..steps {
            y = rk4_step(&eval_field, &y, h)?;
            let nrm = norm(&y);
            if !nrm.is_finite() || nrm > blowup_norm {
                return Err(FlowError::BlowUp {
                    t: (k + 1) as f64 * h,
                    norm: nrm,
                });
            }
        }
        points.push(y);
    }
    SectionGrid::new(
        grid.chart.clone(),
        grid.shape.clone(),
        grid.spacing.clone(),
        points,
    )
}

/// Outcome of section construction: the flowed grid (one extra lattice
/// axis of length `steps + 1` and spacing `h`) plus the recorded tangency
/// margin of the initial data against the field direction.
#[derive(Debug, Clone)]
pub struct BuiltSection {
    pub grid: SectionGrid,
    pub tangency_margin: f64,
}

/// Pull initial data along integral curves of a time-normalized field:
/// every node of `phi0` is flowed for `steps` steps of size `h`, the flow
/// parameter becoming a new trailing lattice axis.
///
/// The initial grid must be nowhere tangent to the field: the sine of the
/// smallest principal angle between the field direction and the grid's
/// tangent space is checked at every interior node against `threshold`.
pub fn build_section(
    phi0: &SectionGrid,
    field: &AnnihilatorField,
    steps: usize,
    h: f64,
    threshold: f64,
) -> Result<BuiltSection, FlowError> {
    if !field.time_normalized {
        return Err(FlowError::NotTimeNormalized);
    }
    if h <= 0.0 || steps == 0 {
        return Err(FlowError::InvalidStep {
            h,
            t_end: steps as f64 * h,
        });
    }
    let chart = phi0.chart.clone();
    let n = chart.dim();
    let eval_field = |y: &[f64]| field.field.eval(y);

    // Tangency margin over interior nodes (a rank-0 grid is trivially
    // transversal to a nonvanishing field).
    let mut margin = f64::INFINITY;
    for idx in phi0.interior_indices() {
        let node = &phi0.points[phi0.offset(&idx)];
        let dir = eval_field(node)?;
        let dn = norm(&dir);
        if dn == 0.0 {
            return Err(FlowError::TangentToGrid {
                margin: 0.0,
                threshold,
            });
        }
        let tangents = phi0.tangents_at(&idx);
        let sine = orthogonal_fraction(&dir, &tangents, n);
        margin = margin.min(sine);
    }
    if margin < threshold {
        return Err(FlowError::TangentToGrid { margin, threshold });
    }
    if margin.is_infinite() {
        margin = 1.0;
    }

    let mut shape = phi0.shape.clone();
    shape.push(steps + 1);
    let mut spacing = phi0.spacing.clone();
    spacing.push(h);
    let mut points = Vec::with_capacity(phi0.points.len() * (steps + 1));
    for node in &phi0.points {
        let mut y = node.clone();
        points.push(y.clone());
        for k in 0..steps {
            y = rk4_step(&eval_field, &y, h)?;
            let nrm = norm(&y);
            if !nrm.is_finite() || nrm > BLOWUP_NORM {
                return Err(FlowError::BlowUp {
                    t: (k + 1) as f64 * h,
                    norm: nrm,
                });
            }
            points.push(y.clone());
        }
    }
    let grid = SectionGrid::new(chart, shape, spacing, points)?;
    Ok(BuiltSection {
        grid,
        tangency_margin: margin,
    })
}

/// Fraction of `dir` orthogonal to the span of `tangents`: |dir − proj| / |dir|.
fn orthogonal_fraction(dir: &[f64], tangents: &[Vec<f64>], n: usize) -> f64 {
    if tangents.is_empty() {
        return 1.0;
    }
    let t = DMatrix::from_fn(n, tangents.len(), |r, c| tangents[c][r]);
    let qr = t.qr();
    let q = qr.q();
    let d = nalgebra::DVector::from_column_slice(dir);
    let mut residual = d.clone();
    for c in 0..q.ncols() {
        let col = q.column(c);
        let coef = col.dot(&d);
        residual -= col * coef;
    }
    residual.norm() / d.norm()
}

/// Worst pullback residual of the generators over a grid: at each interior
/// node the lattice tangent frame is built by central differences and each
/// generator of degree d is evaluated on every d-subset of the frame.
/// Every axis needs at least 3 nodes.
pub fn section_residual(phi: &SectionGrid, psis: &[DiffForm]) -> Result<f64, FlowError> {
    for (axis, &nodes) in phi.shape.iter().enumerate() {
        if nodes < 3 {
            return Err(FlowError::GridTooCoarse { axis, nodes });
        }
    }
    let k = phi.rank();
    let mut max = 0.0f64;
    for idx in phi.interior_indices() {
        let node = &phi.points[phi.offset(&idx)];
        let tangents = phi.tangents_at(&idx);
        for psi in psis {
            if psi.chart() != &phi.chart {
                return Err(FlowError::Form(FormError::ChartMismatch));
            }
            let d = psi.degree();
            if d > k {
                // A form of degree above the grid rank pulls back to zero.
                continue;
            }
            for subset in increasing_tuples(k, d) {
                let frame: Vec<Vec<f64>> = subset.iter().map(|&a| tangents[a].clone()).collect();
                let v = psi.eval_at_frame(node, &frame)?;
                max = max.max(v.abs());
            }
        }
    }
    Ok(max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::varprin::variational_module;

    fn c(name: &str) -> ScalarExpr {
        ScalarExpr::coord(name)
    }

    fn oscillator_chart() -> Chart {
        Chart::new(&["q", "p"], &["q"], None).unwrap()
    }

    fn oscillator_field() -> VecField {
        VecField::new(oscillator_chart(), vec![c("p"), (-c("q")).simplified()]).unwrap()
    }

    #[test]
    fn harmonic_oscillator_returns_to_start() {
        let field = oscillator_field();
        let h_monitor =
            ((c("q") * c("q") + c("p") * c("p")) * ScalarExpr::rational(1, 2)).simplified();
        let opts = FlowOptions {
            monitors: vec![("H".to_string(), h_monitor)],
            ..Default::default()
        };
        let t_end = 2.0 * std::f64::consts::PI;
        let traj = integrate(&field, &[1.0, 0.0], t_end, 1e-3, &opts).unwrap();
        let end = traj.final_state();
        let err = ((end[0] - 1.0).powi(2) + end[1].powi(2)).sqrt();
        assert!(err < 1e-9, "final state error {err:.3e}");
        assert!(traj.monitor_drift("H").unwrap() < 1e-9);
        assert!(traj.monitor_drift("divergence").unwrap() < 1e-15);
        assert_eq!(traj.times.len(), traj.states.len());
    }

    #[test]
    fn zero_field_is_constant() {
        let field = VecField::zero(oscillator_chart());
        let traj = integrate(&field, &[0.4, -0.7], 1.0, 0.1, &FlowOptions::default()).unwrap();
        for s in &traj.states {
            assert_eq!(s, &vec![0.4, -0.7]);
        }
        // 1.0 / 0.1 = 10 steps plus the initial state.
        assert_eq!(traj.states.len(), 11);
        assert!((traj.times.last().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blow_up_is_reported() {
        let chart = Chart::new(&["x", "y"], &["x"], None).unwrap();
        // x' = x^2 from x = 3 blows up before t = 1.
        let field =
            VecField::new(chart, vec![ScalarExpr::pow(c("x"), 2), ScalarExpr::zero()]).unwrap();
        let opts = FlowOptions {
            blowup_norm: 1e3,
            ..Default::default()
        };
        assert!(matches!(
            integrate(&field, &[3.0, 0.0], 1.0, 1e-3, &opts),
            Err(FlowError::BlowUp { .. })
        ));
    }

    #[test]
    fn invalid_steps_are_rejected() {
        let field = oscillator_field();
        assert!(matches!(
            integrate(&field, &[1.0, 0.0], 1.0, 0.0, &FlowOptions::default()),
            Err(FlowError::InvalidStep { .. })
        ));
        assert!(matches!(
            integrate(&field, &[1.0, 0.0], -1.0, 0.1, &FlowOptions::default()),
            Err(FlowError::InvalidStep { .. })
        ));
        assert!(matches!(
            integrate(&field, &[1.0], 1.0, 0.1, &FlowOptions::default()),
            Err(FlowError::StateDim { .. })
        ));
    }

    #[test]
    fn divergence_monitor_examples() {
        let chart = Chart::new(&["x", "y", "z"], &["x"], None).unwrap();
        let pts: Vec<Vec<f64>> = vec![vec![0.3, 0.4, 0.5], vec![-0.9, 0.1, 0.2]];
        let grow = VecField::new(
            chart.clone(),
            vec![c("x"), ScalarExpr::zero(), ScalarExpr::zero()],
        )
        .unwrap();
        assert_eq!(monitor_divergence(&grow, &pts).unwrap(), 1.0);
        // Euler-top style gradient cross product is divergence free.
        let euler = VecField::new(
            chart,
            vec![
                (c("y") * c("z") * ScalarExpr::rational(-1, 6)).simplified(),
                (c("x") * c("z") * ScalarExpr::rational(2, 3)).simplified(),
                (c("x") * c("y") * ScalarExpr::rational(-1, 2)).simplified(),
            ],
        )
        .unwrap();
        assert!(monitor_divergence(&euler, &pts).unwrap() < 1e-12);
    }

    fn m_chart() -> Chart {
        // n = 4: vertical (x, y), horizontal (z, t).
        Chart::new(&["x", "y", "z", "t"], &["x", "y"], Some("t")).unwrap()
    }

    #[test]
    fn build_section_product_grid_for_time_translation() {
        let chart = m_chart();
        let field = AnnihilatorField {
            field: VecField::new(
                chart.clone(),
                vec![
                    ScalarExpr::zero(),
                    ScalarExpr::zero(),
                    ScalarExpr::zero(),
                    ScalarExpr::one(),
                ],
            )
            .unwrap(),
            time_normalized: true,
        };
        // phi0: lattice along z at t = 0, constant fiber (x, y) = (0.5, -0.25).
        let phi0 = SectionGrid::from_graph(
            chart.clone(),
            &[(2, -0.2, 0.1, 5)],
            &[(3, 0.0)],
            &[
                (0, ScalarExpr::rational(1, 2)),
                (1, ScalarExpr::rational(-1, 4)),
            ],
        )
        .unwrap();
        let built = build_section(&phi0, &field, 4, 0.25, TANGENCY_THRESHOLD).unwrap();
        assert_eq!(built.grid.shape(), &[5, 5]);
        // Fiber values constant along the new axis; t advances by h.
        for i in 0..5 {
            for s in 0..5 {
                let node = &built.grid.points()[built.grid.offset(&[i, s])];
                assert!((node[0] - 0.5).abs() < 1e-14);
                assert!((node[1] + 0.25).abs() < 1e-14);
                assert!((node[3] - 0.25 * s as f64).abs() < 1e-14);
            }
        }
        assert!(built.tangency_margin > 0.99);
    }

    #[test]
    fn build_section_rejects_tangent_initial_data() {
        let chart = m_chart();
        let field = AnnihilatorField {
            field: VecField::new(
                chart.clone(),
                vec![
                    ScalarExpr::zero(),
                    ScalarExpr::zero(),
                    ScalarExpr::zero(),
                    ScalarExpr::one(),
                ],
            )
            .unwrap(),
            time_normalized: true,
        };
        // phi0 runs along the t axis itself: everywhere tangent to ∂_t.
        let phi0 = SectionGrid::from_graph(
            chart.clone(),
            &[(3, 0.0, 0.1, 5)],
            &[(2, 0.0)],
            &[(0, ScalarExpr::zero()), (1, ScalarExpr::zero())],
        )
        .unwrap();
        assert!(matches!(
            build_section(&phi0, &field, 3, 0.1, TANGENCY_THRESHOLD),
            Err(FlowError::TangentToGrid { .. })
        ));
        // A non-normalized field is rejected outright.
        let raw = AnnihilatorField {
            field: field.field.clone(),
            time_normalized: false,
        };
        assert!(matches!(
            build_section(&phi0, &raw, 3, 0.1, TANGENCY_THRESHOLD),
            Err(FlowError::NotTimeNormalized)
        ));
    }

    #[test]
    fn section_residual_zero_for_basic_theta() {
        let chart = m_chart();
        // Basic θ: its variational module prunes to nothing, so any grid has
        // residual 0.
        let theta = DiffForm::from_terms(
            chart.clone(),
            2,
            [(vec![2, 3], (c("z") * c("z")).simplified())],
        )
        .unwrap();
        let psis = variational_module(&theta);
        assert!(psis.iter().all(|p| p.is_empty()));
        let phi0 = SectionGrid::from_graph(
            chart.clone(),
            &[(2, -0.2, 0.1, 5), (3, 0.0, 0.1, 5)],
            &[],
            &[(0, c("z")), (1, (c("z") * c("t")).simplified())],
        )
        .unwrap();
        assert_eq!(section_residual(&phi0, &psis).unwrap(), 0.0);
    }

    #[test]
    fn section_residual_rejects_coarse_grids() {
        let chart = m_chart();
        let phi0 = SectionGrid::from_graph(
            chart.clone(),
            &[(2, 0.0, 0.1, 2)],
            &[(3, 0.0)],
            &[(0, ScalarExpr::zero()), (1, ScalarExpr::zero())],
        )
        .unwrap();
        let psi = DiffForm::from_terms(chart, 2, [(vec![0, 1], ScalarExpr::one())]).unwrap();
        assert!(matches!(
            section_residual(&phi0, &[psi]),
            Err(FlowError::GridTooCoarse { axis: 0, nodes: 2 })
        ));
    }

    #[test]
    fn graph_grid_validation() {
        let chart = m_chart();
        // Missing coordinate assignment.
        assert!(SectionGrid::from_graph(
            chart.clone(),
            &[(2, 0.0, 0.1, 3)],
            &[],
            &[(0, ScalarExpr::zero()), (1, ScalarExpr::zero())],
        )
        .is_err());
        // Duplicate assignment.
        assert!(SectionGrid::from_graph(
            chart.clone(),
            &[(2, 0.0, 0.1, 3)],
            &[(2, 0.0), (3, 0.0)],
            &[(0, ScalarExpr::zero()), (1, ScalarExpr::zero())],
        )
        .is_err());
        // Non-positive spacing.
        assert!(SectionGrid::from_graph(
            chart,
            &[(2, 0.0, 0.0, 3), (3, 0.0, 0.1, 3)],
            &[],
            &[(0, ScalarExpr::zero()), (1, ScalarExpr::zero())],
        )
        .is_err());
    }

    #[test]
    fn trajectory_lines_are_deterministic() {
        let field = oscillator_field();
        let traj = integrate(&field, &[1.0, 0.0], 0.01, 1e-3, &FlowOptions::default()).unwrap();
        let a = traj.to_lines(field.chart());
        let b = traj.to_lines(field.chart());
        assert_eq!(a, b);
        assert!(a.starts_with("# step\tt\tq\tp\tdivergence\n"));
        assert_eq!(a.lines().count(), 12);
    }
}
