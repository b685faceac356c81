//! Differential forms and vector fields on a single coordinate chart.
//!
//! Forms are stored sparsely: a degree-k form maps strictly increasing
//! k-tuples of coordinate indices to [`ScalarExpr`] coefficients.
//! Coefficients that simplify to zero, or that pass the default
//! probabilistic zero test, are pruned on every construction path.
//!
//! Sign conventions, fixed once here and relied on everywhere else:
//! - wedge merges index tuples with the parity of the interleaving
//!   permutation;
//! - the interior product contracts slot `j` (1-based) of an increasing
//!   tuple with sign `(-1)^(j-1)` (left contraction), so the volume form
//!   satisfies `∂_μ ⨼ Ω = (-1)^(μ-1) dx^(1..n∖μ)`.

use crate::symexpr::{is_zero_default, ExprError, ScalarExpr};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

/// Errors from chart construction and form/field algebra.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum FormError {
    #[error("invalid chart: {0}")]
    InvalidChart(String),
    #[error("operands live on different charts")]
    ChartMismatch,
    #[error("degree mismatch: expected {expected}, found {found}")]
    DegreeMismatch { expected: usize, found: usize },
    #[error("interior product requires degree >= 1")]
    ZeroDegreeContraction,
    #[error("coordinate index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("component count {found} does not match chart dimension {expected}")]
    ComponentCount { expected: usize, found: usize },
    #[error("tangent frame has {found} vectors, form degree is {expected}")]
    FrameSize { expected: usize, found: usize },
    #[error("unknown coordinate `{0}`")]
    UnknownCoordinate(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

// ---------------------------------------------------------------------------
// Chart
// ---------------------------------------------------------------------------

/// An ordered coordinate chart with fibration roles.
///
/// The vertical set marks fiber coordinates of the bundle projection onto
/// the horizontal coordinates; the optional time coordinate (never vertical)
/// marks the factor used for time normalization of extracted fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chart {
    names: Vec<String>,
    vertical: BTreeSet<usize>,
    time: Option<usize>,
}

impl Chart {
    pub fn new(
        names: &[&str],
        vertical: &[&str],
        time: Option<&str>,
    ) -> Result<Chart, FormError> {
        let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        let n = names.len();
        if n == 0 {
            return Err(FormError::InvalidChart("chart has no coordinates".into()));
        }
        let distinct: BTreeSet<&String> = names.iter().collect();
        if distinct.len() != n {
            return Err(FormError::InvalidChart(
                "coordinate names are not pairwise distinct".into(),
            ));
        }
        let index_of = |name: &str| -> Result<usize, FormError> {
            names
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| FormError::UnknownCoordinate(name.to_string()))
        };
        let mut vert = BTreeSet::new();
        for v in vertical {
            vert.insert(index_of(v)?);
        }
        if vert.is_empty() || vert.len() >= n {
            return Err(FormError::InvalidChart(format!(
                "vertical set size must satisfy 1 <= r < n, got r = {} with n = {}",
                vert.len(),
                n
            )));
        }
        let time = match time {
            Some(t) => {
                let i = index_of(t)?;
                if vert.contains(&i) {
                    return Err(FormError::InvalidChart(format!(
                        "time coordinate `{t}` cannot be vertical"
                    )));
                }
                Some(i)
            }
            None => None,
        };
        Ok(Chart {
            names,
            vertical: vert,
            time,
        })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn coord_names(&self) -> &[String] {
        &self.names
    }

    pub fn coord_name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn coord_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|c| c == name)
    }

    pub fn vertical_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.vertical.iter().copied()
    }

    pub fn vertical_count(&self) -> usize {
        self.vertical.len()
    }

    pub fn is_vertical(&self, i: usize) -> bool {
        self.vertical.contains(&i)
    }

    pub fn horizontal_indices(&self) -> Vec<usize> {
        (0..self.dim()).filter(|i| !self.is_vertical(*i)).collect()
    }

    pub fn time_index(&self) -> Option<usize> {
        self.time
    }

    /// Lookup closure over a coordinate-ordered state vector.
    pub fn lookup<'a>(&'a self, state: &'a [f64]) -> impl Fn(&str) -> Option<f64> + 'a {
        move |name: &str| self.coord_index(name).and_then(|i| state.get(i).copied())
    }

    /// The extended chart P × T: this chart's coordinates plus a trailing
    /// time coordinate, with the given pair (default: the first two
    /// coordinates) designated vertical.
    pub fn extended_with_time(
        &self,
        time_name: &str,
        vertical_pair: Option<(&str, &str)>,
    ) -> Result<Chart, FormError> {
        if self.coord_index(time_name).is_some() {
            return Err(FormError::InvalidChart(format!(
                "time coordinate `{time_name}` collides with a phase coordinate"
            )));
        }
        if self.dim() < 2 {
            return Err(FormError::InvalidChart(
                "phase space needs at least two coordinates".into(),
            ));
        }
        let names: Vec<&str> = self
            .names
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(time_name))
            .collect();
        let (v1, v2) = vertical_pair.unwrap_or((&self.names[0], &self.names[1]));
        Chart::new(&names, &[v1, v2], Some(time_name))
    }
}

// ---------------------------------------------------------------------------
// Index tuple helpers
// ---------------------------------------------------------------------------

/// Merge two disjoint increasing tuples, returning the merged tuple and the
/// sign of the interleaving permutation. `None` when the tuples intersect.
fn merge_tuples(a: &[usize], b: &[usize]) -> Option<(Vec<usize>, i64)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let mut inversions = 0usize;
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.len() && j < b.len() {
        if a[i] == b[j] {
            return None;
        }
        if a[i] < b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            // b[j] jumps over the remaining entries of a.
            inversions += a.len() - i;
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    let sign = if inversions % 2 == 0 { 1 } else { -1 };
    Some((out, sign))
}

/// Insert `mu` into an increasing tuple; sign is `(-1)^p` with `p` the
/// number of entries below `mu`. `None` when `mu` is already present.
fn insert_index(tuple: &[usize], mu: usize) -> Option<(Vec<usize>, i64)> {
    merge_tuples(&[mu], tuple).map(|(t, _)| {
        let below = tuple.iter().filter(|&&i| i < mu).count();
        let sign = if below % 2 == 0 { 1 } else { -1 };
        (t, sign)
    })
}

/// Remove the entry at position `j` (0-based); sign is `(-1)^j`.
fn remove_position(tuple: &[usize], j: usize) -> (Vec<usize>, i64) {
    let mut out = tuple.to_vec();
    out.remove(j);
    let sign = if j % 2 == 0 { 1 } else { -1 };
    (out, sign)
}

/// All strictly increasing k-tuples over `0..n` in lexicographic order.
pub fn increasing_tuples(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        // Advance to the next combination.
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Sort an arbitrary index tuple into increasing order, returning the
/// permutation sign; `None` when an index repeats.
pub fn sort_tuple(indices: &[usize]) -> Option<(Vec<usize>, i64)> {
    let mut v = indices.to_vec();
    let mut sign = 1i64;
    // Insertion sort, counting swaps.
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && v[j - 1] > v[j] {
            v.swap(j - 1, j);
            sign = -sign;
            j -= 1;
        }
    }
    for w in v.windows(2) {
        if w[0] == w[1] {
            return None;
        }
    }
    Some((v, sign))
}

// ---------------------------------------------------------------------------
// DiffForm
// ---------------------------------------------------------------------------

/// A degree-k differential form stored as sparse coefficients over strictly
/// increasing index tuples. Degree 0 uses the empty tuple.
///
/// Coefficients are pruned with the default probabilistic zero test on
/// every construction path; a form switched to strict mode (and anything
/// computed from it) only drops structural zeros, so no term can be lost
/// to tolerance. Strictness does not take part in equality.
#[derive(Debug, Clone)]
pub struct DiffForm {
    chart: Chart,
    degree: usize,
    terms: BTreeMap<Vec<usize>, ScalarExpr>,
    strict: bool,
}

impl PartialEq for DiffForm {
    fn eq(&self, other: &Self) -> bool {
        self.chart == other.chart && self.degree == other.degree && self.terms == other.terms
    }
}

impl DiffForm {
    pub fn zero(chart: Chart, degree: usize) -> DiffForm {
        DiffForm {
            chart,
            degree,
            terms: BTreeMap::new(),
            strict: false,
        }
    }

    /// Disable probabilistic pruning on this form; operations involving a
    /// strict operand produce strict results.
    pub fn into_strict(mut self) -> DiffForm {
        self.strict = true;
        self
    }

    pub fn is_strict(&self) -> bool {
        self.strict
    }

    fn keep_coeff(strict: bool, coeff: &ScalarExpr) -> bool {
        if coeff.is_const_zero() {
            return false;
        }
        strict || !is_zero_default(coeff)
    }

    /// Degree-0 form from a scalar.
    pub fn scalar(chart: Chart, value: ScalarExpr) -> DiffForm {
        DiffForm::zero(chart, 0).with_term_added(&[], value)
    }

    /// The coordinate differential `dx_i`.
    pub fn coord_differential(chart: Chart, i: usize) -> Result<DiffForm, FormError> {
        if i >= chart.dim() {
            return Err(FormError::IndexOutOfRange {
                index: i,
                dim: chart.dim(),
            });
        }
        Ok(DiffForm::zero(chart, 1).with_term_added(&[i], ScalarExpr::one()))
    }

    /// The standard volume form `dx_1 ∧ … ∧ dx_n`.
    pub fn volume(chart: Chart) -> DiffForm {
        let n = chart.dim();
        let tuple: Vec<usize> = (0..n).collect();
        DiffForm::zero(chart, n).with_term_added(&tuple, ScalarExpr::one())
    }

    /// Build from (tuple, coefficient) pairs with already increasing tuples.
    pub fn from_terms(
        chart: Chart,
        degree: usize,
        terms: impl IntoIterator<Item = (Vec<usize>, ScalarExpr)>,
    ) -> Result<DiffForm, FormError> {
        let mut form = DiffForm::zero(chart, degree);
        for (tuple, coeff) in terms {
            form.validate_tuple(&tuple)?;
            form = form.with_term_added(&tuple, coeff);
        }
        Ok(form)
    }

    /// Build from records with arbitrary index order; tuples are sorted and
    /// the permutation sign folded into the coefficient. Records with a
    /// repeated index contribute nothing.
    pub fn from_unsorted_terms(
        chart: Chart,
        degree: usize,
        terms: impl IntoIterator<Item = (Vec<usize>, ScalarExpr)>,
    ) -> Result<DiffForm, FormError> {
        let mut form = DiffForm::zero(chart, degree);
        for (indices, coeff) in terms {
            if indices.len() != degree {
                return Err(FormError::DegreeMismatch {
                    expected: degree,
                    found: indices.len(),
                });
            }
            for &i in &indices {
                if i >= form.chart.dim() {
                    return Err(FormError::IndexOutOfRange {
                        index: i,
                        dim: form.chart.dim(),
                    });
                }
            }
            if let Some((tuple, sign)) = sort_tuple(&indices) {
                form = form.with_term_added(&tuple, ScalarExpr::int(sign) * coeff);
            }
        }
        Ok(form)
    }

    fn validate_tuple(&self, tuple: &[usize]) -> Result<(), FormError> {
        if tuple.len() != self.degree {
            return Err(FormError::DegreeMismatch {
                expected: self.degree,
                found: tuple.len(),
            });
        }
        for w in tuple.windows(2) {
            if w[0] >= w[1] {
                return Err(FormError::InvalidChart(
                    "index tuple is not strictly increasing".into(),
                ));
            }
        }
        if let Some(&last) = tuple.last() {
            if last >= self.chart.dim() {
                return Err(FormError::IndexOutOfRange {
                    index: last,
                    dim: self.chart.dim(),
                });
            }
        }
        Ok(())
    }

    /// Add `coeff` to the tuple's coefficient, simplifying and pruning.
    pub fn with_term_added(&self, tuple: &[usize], coeff: ScalarExpr) -> DiffForm {
        let mut out = self.clone();
        let entry = match out.terms.remove(tuple) {
            Some(existing) => existing + coeff,
            None => coeff,
        };
        let simplified = entry.simplified();
        if Self::keep_coeff(out.strict, &simplified) {
            out.terms.insert(tuple.to_vec(), simplified);
        }
        out
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// True when every coefficient has been pruned.
    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<usize>, &ScalarExpr)> {
        self.terms.iter()
    }

    pub fn coeff(&self, tuple: &[usize]) -> Option<&ScalarExpr> {
        self.terms.get(tuple)
    }

    /// Coefficient vector over all increasing tuples in lexicographic order.
    pub fn coeff_vector(&self) -> Vec<ScalarExpr> {
        increasing_tuples(self.chart.dim(), self.degree)
            .into_iter()
            .map(|t| self.terms.get(&t).cloned().unwrap_or_else(ScalarExpr::zero))
            .collect()
    }

    fn check_same_chart(&self, other: &DiffForm) -> Result<(), FormError> {
        if self.chart != other.chart {
            return Err(FormError::ChartMismatch);
        }
        Ok(())
    }

    /// Wedge product. Bilinear, associative, graded-commutative; degrees
    /// exceeding the chart dimension come back as the empty form.
    pub fn wedge(&self, other: &DiffForm) -> Result<DiffForm, FormError> {
        self.check_same_chart(other)?;
        let degree = self.degree + other.degree;
        let mut acc: BTreeMap<Vec<usize>, Vec<ScalarExpr>> = BTreeMap::new();
        for (ta, ca) in &self.terms {
            for (tb, cb) in &other.terms {
                if let Some((merged, sign)) = merge_tuples(ta, tb) {
                    acc.entry(merged)
                        .or_default()
                        .push(ScalarExpr::int(sign) * ca.clone() * cb.clone());
                }
            }
        }
        Ok(Self::collect(
            self.chart.clone(),
            degree,
            self.strict || other.strict,
            acc,
        ))
    }

    /// Exterior derivative; an antiderivation with d² = 0 (coefficients of
    /// d(d·) prune to nothing). Input of top degree yields the empty
    /// (n+1)-degree marker.
    pub fn ext_deriv(&self) -> DiffForm {
        let degree = self.degree + 1;
        let mut acc: BTreeMap<Vec<usize>, Vec<ScalarExpr>> = BTreeMap::new();
        for (tuple, coeff) in &self.terms {
            for mu in 0..self.chart.dim() {
                let d = coeff.diff(self.chart.coord_name(mu));
                if d.is_const_zero() {
                    continue;
                }
                if let Some((t, sign)) = insert_index(tuple, mu) {
                    acc.entry(t).or_default().push(ScalarExpr::int(sign) * d);
                }
            }
        }
        Self::collect(self.chart.clone(), degree, self.strict, acc)
    }

    /// `self + c * other`, coefficientwise.
    pub fn add_scaled(&self, c: &ScalarExpr, other: &DiffForm) -> Result<DiffForm, FormError> {
        self.check_same_chart(other)?;
        if self.degree != other.degree {
            return Err(FormError::DegreeMismatch {
                expected: self.degree,
                found: other.degree,
            });
        }
        let mut acc: BTreeMap<Vec<usize>, Vec<ScalarExpr>> = BTreeMap::new();
        for (t, coeff) in &self.terms {
            acc.entry(t.clone()).or_default().push(coeff.clone());
        }
        for (t, coeff) in &other.terms {
            acc.entry(t.clone())
                .or_default()
                .push(c.clone() * coeff.clone());
        }
        Ok(Self::collect(
            self.chart.clone(),
            self.degree,
            self.strict || other.strict,
            acc,
        ))
    }

    /// `c * self`.
    pub fn scaled(&self, c: &ScalarExpr) -> DiffForm {
        DiffForm::zero(self.chart.clone(), self.degree)
            .add_scaled(c, self)
            .expect("same chart and degree")
    }

    /// Repeated wedge `self^k` (k >= 1). Factorial scaling is the caller's
    /// business.
    pub fn wedge_power(&self, k: usize) -> Result<DiffForm, FormError> {
        assert!(k >= 1, "wedge_power requires k >= 1");
        let mut acc = self.clone();
        for _ in 1..k {
            acc = acc.wedge(self)?;
        }
        Ok(acc)
    }

    /// Value of the fully antisymmetrized multilinear form on `vectors` at a
    /// coordinate-ordered point. The frame must have exactly `degree`
    /// vectors, each of chart dimension.
    pub fn eval_at_frame(&self, point: &[f64], vectors: &[Vec<f64>]) -> Result<f64, FormError> {
        if vectors.len() != self.degree {
            return Err(FormError::FrameSize {
                expected: self.degree,
                found: vectors.len(),
            });
        }
        for v in vectors {
            if v.len() != self.chart.dim() {
                return Err(FormError::ComponentCount {
                    expected: self.chart.dim(),
                    found: v.len(),
                });
            }
        }
        let lookup = self.chart.lookup(point);
        let mut total = 0.0;
        let k = self.degree;
        for (tuple, coeff) in &self.terms {
            let c = coeff.eval_with(&lookup)?;
            let det = if k == 0 {
                1.0
            } else {
                let m = nalgebra::DMatrix::from_fn(k, k, |s, t| vectors[s][tuple[t]]);
                m.determinant()
            };
            total += c * det;
        }
        Ok(total)
    }

    /// Largest absolute coefficient value at a point; the pointwise "size"
    /// of the form used by nowhere-zero sampling.
    pub fn max_abs_coeff_at(&self, point: &[f64]) -> Result<f64, FormError> {
        let lookup = self.chart.lookup(point);
        let mut m = 0.0f64;
        for coeff in self.terms.values() {
            let v = coeff.eval_with(&lookup)?;
            m = m.max(v.abs());
        }
        Ok(m)
    }

    fn collect(
        chart: Chart,
        degree: usize,
        strict: bool,
        acc: BTreeMap<Vec<usize>, Vec<ScalarExpr>>,
    ) -> DiffForm {
        let mut form = DiffForm::zero(chart, degree);
        form.strict = strict;
        for (tuple, parts) in acc {
            let coeff = ScalarExpr::Sum(parts).simplified();
            if !Self::keep_coeff(strict, &coeff) {
                continue;
            }
            form.terms.insert(tuple, coeff);
        }
        form
    }

    /// Reinterpret on a larger chart whose leading coordinates match this
    /// form's chart (used to move phase-space forms onto the extended
    /// time chart).
    pub fn lifted_to(&self, chart: &Chart) -> Result<DiffForm, FormError> {
        let p = self.chart.dim();
        if chart.dim() < p || chart.coord_names()[..p] != *self.chart.coord_names() {
            return Err(FormError::ChartMismatch);
        }
        Ok(DiffForm {
            chart: chart.clone(),
            degree: self.degree,
            terms: self.terms.clone(),
            strict: self.strict,
        })
    }
}

impl fmt::Display for DiffForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (tuple, coeff)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "({coeff})")?;
            for &idx in tuple {
                write!(f, " dx[{}]", self.chart.coord_name(idx))?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// VecField
// ---------------------------------------------------------------------------

/// A vector field: one scalar component per chart coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct VecField {
    chart: Chart,
    comps: Vec<ScalarExpr>,
}

impl VecField {
    pub fn new(chart: Chart, comps: Vec<ScalarExpr>) -> Result<VecField, FormError> {
        if comps.len() != chart.dim() {
            return Err(FormError::ComponentCount {
                expected: chart.dim(),
                found: comps.len(),
            });
        }
        let comps = comps.iter().map(|c| c.simplified()).collect();
        Ok(VecField { chart, comps })
    }

    pub fn zero(chart: Chart) -> VecField {
        let n = chart.dim();
        VecField {
            chart,
            comps: vec![ScalarExpr::zero(); n],
        }
    }

    /// The coordinate field `∂_i`.
    pub fn coord_basis(chart: Chart, i: usize) -> Result<VecField, FormError> {
        if i >= chart.dim() {
            return Err(FormError::IndexOutOfRange {
                index: i,
                dim: chart.dim(),
            });
        }
        let mut v = VecField::zero(chart);
        v.comps[i] = ScalarExpr::one();
        Ok(v)
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn comps(&self) -> &[ScalarExpr] {
        &self.comps
    }

    pub fn comp(&self, i: usize) -> &ScalarExpr {
        &self.comps[i]
    }

    /// Interior product `self ⨼ a`, lowering the degree by one.
    pub fn contract(&self, a: &DiffForm) -> Result<DiffForm, FormError> {
        if self.chart != *a.chart() {
            return Err(FormError::ChartMismatch);
        }
        if a.degree() == 0 {
            return Err(FormError::ZeroDegreeContraction);
        }
        let mut acc: BTreeMap<Vec<usize>, Vec<ScalarExpr>> = BTreeMap::new();
        for (tuple, coeff) in a.terms() {
            for (j, &idx) in tuple.iter().enumerate() {
                let comp = &self.comps[idx];
                if comp.is_const_zero() {
                    continue;
                }
                let (rest, sign) = remove_position(tuple, j);
                acc.entry(rest)
                    .or_default()
                    .push(ScalarExpr::int(sign) * comp.clone() * coeff.clone());
            }
        }
        Ok(DiffForm::collect(
            self.chart.clone(),
            a.degree() - 1,
            a.is_strict(),
            acc,
        ))
    }

    /// Lie derivative via the Cartan homotopy formula
    /// `L_v a = v ⨼ da + d(v ⨼ a)`.
    pub fn lie_derivative(&self, a: &DiffForm) -> Result<DiffForm, FormError> {
        if self.chart != *a.chart() {
            return Err(FormError::ChartMismatch);
        }
        let first = self.contract(&a.ext_deriv())?;
        if a.degree() == 0 {
            return Ok(first);
        }
        let second = self.contract(a)?.ext_deriv();
        first.add_scaled(&ScalarExpr::one(), &second)
    }

    /// Divergence `Σ_μ ∂_μ f^μ`, simplified.
    pub fn divergence(&self) -> ScalarExpr {
        let terms: Vec<ScalarExpr> = self
            .comps
            .iter()
            .enumerate()
            .map(|(i, c)| c.diff(self.chart.coord_name(i)))
            .collect();
        ScalarExpr::Sum(terms).simplified()
    }

    /// Evaluate all components at a coordinate-ordered point.
    pub fn eval(&self, state: &[f64]) -> Result<Vec<f64>, ExprError> {
        let lookup = self.chart.lookup(state);
        self.comps.iter().map(|c| c.eval_with(&lookup)).collect()
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, c: &ScalarExpr, other: &VecField) -> Result<VecField, FormError> {
        if self.chart != other.chart {
            return Err(FormError::ChartMismatch);
        }
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| (a.clone() + c.clone() * b.clone()).simplified())
            .collect();
        Ok(VecField {
            chart: self.chart.clone(),
            comps,
        })
    }

    /// Reinterpret on a larger chart whose leading coordinates match;
    /// missing components are zero.
    pub fn lifted_to(&self, chart: &Chart) -> Result<VecField, FormError> {
        let p = self.chart.dim();
        if chart.dim() < p || chart.coord_names()[..p] != *self.chart.coord_names() {
            return Err(FormError::ChartMismatch);
        }
        let mut comps = self.comps.clone();
        comps.resize(chart.dim(), ScalarExpr::zero());
        Ok(VecField {
            chart: chart.clone(),
            comps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::{is_zero, ZeroTest};

    fn chart_xyz() -> Chart {
        Chart::new(&["x", "y", "z"], &["x", "y"], None).unwrap()
    }

    fn dx(chart: &Chart, i: usize) -> DiffForm {
        DiffForm::coord_differential(chart.clone(), i).unwrap()
    }

    #[test]
    fn chart_validation() {
        assert!(Chart::new(&["x", "x"], &["x"], None).is_err());
        assert!(Chart::new(&["x", "y"], &["x", "y"], None).is_err());
        assert!(Chart::new(&["x", "y", "t"], &["x"], Some("t")).is_ok());
        let err = Chart::new(&["x", "y", "t"], &["x", "t"], Some("t"));
        assert!(err.is_err());
    }

    #[test]
    fn wedge_repeated_index_vanishes() {
        let c = chart_xyz();
        let a = dx(&c, 0);
        assert!(a.wedge(&a).unwrap().is_empty());
    }

    #[test]
    fn wedge_antisymmetry() {
        let c = chart_xyz();
        let ab = dx(&c, 0).wedge(&dx(&c, 1)).unwrap();
        let ba = dx(&c, 1).wedge(&dx(&c, 0)).unwrap();
        let sum = ab.add_scaled(&ScalarExpr::one(), &ba).unwrap();
        assert!(sum.is_empty());
    }

    #[test]
    fn wedge_merges_with_sign() {
        // (x dy) ∧ (dz ∧ dw) = x dy∧dz∧dw on a 4-coordinate chart.
        let c = Chart::new(&["x", "y", "z", "w"], &["x", "y"], None).unwrap();
        let xdy = DiffForm::zero(c.clone(), 1).with_term_added(&[1], ScalarExpr::coord("x"));
        let dzdw = DiffForm::from_terms(c.clone(), 2, [(vec![2, 3], ScalarExpr::one())]).unwrap();
        let w = xdy.wedge(&dzdw).unwrap();
        assert_eq!(w.degree(), 3);
        assert_eq!(w.coeff(&[1, 2, 3]), Some(&ScalarExpr::coord("x")));
        assert_eq!(w.terms().count(), 1);
    }

    #[test]
    fn ext_deriv_single_monomial() {
        // d(x dy) = dx ∧ dy.
        let c = chart_xyz();
        let xdy = DiffForm::zero(c.clone(), 1).with_term_added(&[1], ScalarExpr::coord("x"));
        let d = xdy.ext_deriv();
        assert_eq!(d.coeff(&[0, 1]), Some(&ScalarExpr::one()));
        assert_eq!(d.terms().count(), 1);
    }

    #[test]
    fn ext_deriv_squares_to_zero() {
        let c = chart_xyz();
        let f = DiffForm::zero(c.clone(), 1).with_term_added(
            &[0],
            ScalarExpr::coord("y") * ScalarExpr::coord("z") * ScalarExpr::coord("z"),
        );
        assert!(f.ext_deriv().ext_deriv().is_empty());
        assert!(dx(&c, 0).ext_deriv().is_empty());
    }

    #[test]
    fn ext_deriv_of_top_sigma_is_volume() {
        // d(x dy ∧ dz) = dx∧dy∧dz = Ω on the 3-chart.
        let c = chart_xyz();
        let sigma =
            DiffForm::from_terms(c.clone(), 2, [(vec![1, 2], ScalarExpr::coord("x"))]).unwrap();
        let d = sigma.ext_deriv();
        assert_eq!(d, DiffForm::volume(c));
    }

    #[test]
    fn contract_slot_signs() {
        let c = chart_xyz();
        let vol = DiffForm::volume(c.clone());
        // ∂_z ⨼ (dx∧dy∧dz) = dx∧dy (last slot, +1).
        let dz = VecField::coord_basis(c.clone(), 2).unwrap();
        let r = dz.contract(&vol).unwrap();
        assert_eq!(r.coeff(&[0, 1]), Some(&ScalarExpr::one()));
        assert_eq!(r.terms().count(), 1);
        // ∂_y ⨼ (dx∧dy∧dz) = -dx∧dz (middle slot).
        let dy = VecField::coord_basis(c.clone(), 1).unwrap();
        let r = dy.contract(&vol).unwrap();
        assert_eq!(r.coeff(&[0, 2]), Some(&ScalarExpr::int(-1)));
        assert_eq!(r.terms().count(), 1);
    }

    #[test]
    fn contract_hamiltonian_identity() {
        // X = p∂_q - q∂_p against ω = dq∧dp gives d((q²+p²)/2).
        let c = Chart::new(&["q", "p"], &["q"], None).unwrap();
        let omega = DiffForm::from_terms(c.clone(), 2, [(vec![0, 1], ScalarExpr::one())]).unwrap();
        let x = VecField::new(
            c.clone(),
            vec![ScalarExpr::coord("p"), -ScalarExpr::coord("q")],
        )
        .unwrap();
        let contracted = x.contract(&omega).unwrap();
        let h = ScalarExpr::rational(1, 2)
            * (ScalarExpr::pow(ScalarExpr::coord("q"), 2) + ScalarExpr::pow(ScalarExpr::coord("p"), 2));
        let dh = DiffForm::scalar(c.clone(), h.simplified()).ext_deriv();
        let diff = contracted.add_scaled(&ScalarExpr::int(-1), &dh).unwrap();
        assert!(diff.is_empty());
    }

    #[test]
    fn contract_degree_zero_errors() {
        let c = chart_xyz();
        let f = DiffForm::scalar(c.clone(), ScalarExpr::coord("x"));
        let v = VecField::coord_basis(c, 0).unwrap();
        assert!(matches!(
            v.contract(&f),
            Err(FormError::ZeroDegreeContraction)
        ));
    }

    #[test]
    fn lie_derivative_translation() {
        // L_{∂_x}(x dx) = dx.
        let c = chart_xyz();
        let xdx = DiffForm::zero(c.clone(), 1).with_term_added(&[0], ScalarExpr::coord("x"));
        let v = VecField::coord_basis(c.clone(), 0).unwrap();
        let l = v.lie_derivative(&xdx).unwrap();
        assert_eq!(l, dx(&c, 0));
    }

    #[test]
    fn lie_derivative_of_volume_is_divergence() {
        let c = chart_xyz();
        let vol = DiffForm::volume(c.clone());
        // Divergence-free: X = -x∂_x + z∂_z.
        let x1 = VecField::new(
            c.clone(),
            vec![
                -ScalarExpr::coord("x"),
                ScalarExpr::zero(),
                ScalarExpr::coord("z"),
            ],
        )
        .unwrap();
        assert!(x1.lie_derivative(&vol).unwrap().is_empty());
        assert!(x1.divergence().is_const_zero());
        // Divergence one: X = x∂_x.
        let x2 = VecField::new(
            c.clone(),
            vec![ScalarExpr::coord("x"), ScalarExpr::zero(), ScalarExpr::zero()],
        )
        .unwrap();
        assert_eq!(x2.lie_derivative(&vol).unwrap(), vol);
        assert!(x2.divergence().is_const_one());
    }

    #[test]
    fn add_scaled_cases() {
        let c = chart_xyz();
        let a = dx(&c, 0);
        let cancel = a.add_scaled(&ScalarExpr::one(), &a.scaled(&ScalarExpr::int(-1))).unwrap();
        assert!(cancel.is_empty());
        let z = DiffForm::zero(c.clone(), 1);
        let scaled = z.add_scaled(&ScalarExpr::coord("z"), &a).unwrap();
        assert_eq!(scaled.coeff(&[0]), Some(&ScalarExpr::coord("z")));
        let mixed = a
            .add_scaled(&ScalarExpr::coord("x"), &dx(&c, 1))
            .unwrap();
        assert_eq!(mixed.terms().count(), 2);
    }

    #[test]
    fn eval_form_frames() {
        let c = chart_xyz();
        let dxdy = DiffForm::from_terms(c.clone(), 2, [(vec![0, 1], ScalarExpr::one())]).unwrap();
        let p = [0.3, -0.7, 2.0];
        let e1 = vec![1.0, 0.0, 0.0];
        let e2 = vec![0.0, 1.0, 0.0];
        assert_eq!(dxdy.eval_at_frame(&p, &[e1.clone(), e2.clone()]).unwrap(), 1.0);
        assert_eq!(dxdy.eval_at_frame(&p, &[e1.clone(), e1.clone()]).unwrap(), 0.0);
        // (z dx∧dy) at z=2 on ((1,0,0),(0,3,0)) → 6.
        let zdxdy =
            DiffForm::from_terms(c.clone(), 2, [(vec![0, 1], ScalarExpr::coord("z"))]).unwrap();
        let e2x3 = vec![0.0, 3.0, 0.0];
        assert_eq!(zdxdy.eval_at_frame(&p, &[e1, e2x3]).unwrap(), 6.0);
        // Frame size mismatch errors.
        assert!(dxdy.eval_at_frame(&p, &[e2]).is_err());
    }

    #[test]
    fn eval_form_agrees_with_symbolic_contraction() {
        let c = chart_xyz();
        let form = DiffForm::from_terms(
            c.clone(),
            2,
            [
                (vec![0, 1], ScalarExpr::coord("z")),
                (vec![1, 2], ScalarExpr::coord("x") * ScalarExpr::coord("y")),
            ],
        )
        .unwrap();
        let v = VecField::new(
            c.clone(),
            vec![ScalarExpr::rational(1, 2), ScalarExpr::int(2), ScalarExpr::int(-1)],
        )
        .unwrap();
        let contracted = v.contract(&form).unwrap();
        let p = [0.4, -0.2, 0.9];
        let vnum = vec![0.5, 2.0, -1.0];
        for w in [vec![1.0, 0.0, 0.0], vec![0.3, -1.2, 0.8]] {
            let lhs = form.eval_at_frame(&p, &[vnum.clone(), w.clone()]).unwrap();
            let rhs = contracted.eval_at_frame(&p, &[w]).unwrap();
            assert!((lhs - rhs).abs() < 1e-12, "lhs {lhs} rhs {rhs}");
        }
    }

    #[test]
    fn unsorted_terms_apply_signs() {
        let c = chart_xyz();
        // dy∧dx loaded as indices [y, x] equals -(dx∧dy).
        let f = DiffForm::from_unsorted_terms(
            c.clone(),
            2,
            [(vec![1, 0], ScalarExpr::one())],
        )
        .unwrap();
        assert_eq!(f.coeff(&[0, 1]), Some(&ScalarExpr::int(-1)));
        // Repeated index contributes nothing.
        let g = DiffForm::from_unsorted_terms(c, 2, [(vec![1, 1], ScalarExpr::one())]).unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn contract_twice_vanishes() {
        let c = Chart::new(&["x", "y", "z", "w"], &["x", "y"], None).unwrap();
        let form = DiffForm::from_terms(
            c.clone(),
            3,
            [
                (vec![0, 1, 2], ScalarExpr::coord("w")),
                (vec![1, 2, 3], ScalarExpr::coord("x")),
            ],
        )
        .unwrap();
        let v = VecField::new(
            c,
            vec![
                ScalarExpr::coord("y"),
                ScalarExpr::one(),
                ScalarExpr::coord("w"),
                ScalarExpr::int(2),
            ],
        )
        .unwrap();
        let once = v.contract(&form).unwrap();
        let twice = v.contract(&once).unwrap();
        for (_, coeff) in twice.terms() {
            assert!(is_zero(coeff, &ZeroTest::default()).unwrap());
        }
        assert!(twice.is_empty());
    }

    #[test]
    fn strict_mode_keeps_tolerance_zeros() {
        // A nonzero coefficient below the zero-test tolerance survives only
        // in strict mode.
        let c = chart_xyz();
        let tiny = ScalarExpr::rational(1, 1_000_000_000_000);
        let pruned = DiffForm::zero(c.clone(), 1).with_term_added(&[0], tiny.clone());
        assert!(pruned.is_empty());
        let strict = DiffForm::zero(c.clone(), 1)
            .into_strict()
            .with_term_added(&[0], tiny);
        assert!(!strict.is_empty());
        // Strictness propagates through operations but not into equality.
        let w = strict.wedge(&dx(&c, 1)).unwrap();
        assert!(w.is_strict());
        assert_eq!(
            DiffForm::zero(c.clone(), 1),
            DiffForm::zero(c, 1).into_strict()
        );
    }

    #[test]
    fn increasing_tuples_enumeration() {
        assert_eq!(increasing_tuples(4, 2).len(), 6);
        assert_eq!(increasing_tuples(3, 0), vec![Vec::<usize>::new()]);
        assert_eq!(increasing_tuples(3, 3), vec![vec![0, 1, 2]]);
        assert!(increasing_tuples(2, 3).is_empty());
        let t = increasing_tuples(5, 3);
        assert_eq!(t.first().unwrap(), &vec![0, 1, 2]);
        assert_eq!(t.last().unwrap(), &vec![2, 3, 4]);
        assert_eq!(t.len(), 10);
    }

    #[test]
    fn sort_tuple_signs() {
        assert_eq!(sort_tuple(&[1, 0]), Some((vec![0, 1], -1)));
        assert_eq!(sort_tuple(&[2, 0, 1]), Some((vec![0, 1, 2], 1)));
        assert_eq!(sort_tuple(&[1, 1]), None);
    }
}
