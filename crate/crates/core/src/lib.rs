//! Symbolic exterior calculus with a variational layer for volume-preserving
//! dynamics.
//!
//! The crate is organized bottom-up:
//!
//! - [`symexpr`]: scalar expressions over chart coordinates: parsing, exact
//!   differentiation, evaluation, simplification, and a probabilistic zero
//!   test that backs every "is this identically zero" decision.
//! - [`extcalc`]: charts, differential forms and vector fields on a single
//!   chart: wedge, exterior derivative, interior product, Lie derivative.
//! - [`varprin`]: the variational engine for (n−2)-form principles:
//!   variational modules, annihilator extraction, time normalization,
//!   annihilation verification, pointwise characteristic spaces.
//! - [`liouville`]: inverse-problem builders: from a volume-preserving
//!   vector field (general, Hamiltonian, Nambu, hyperhamiltonian data) to
//!   the variational form that identifies it.
//! - [`flow`]: numerics: fixed-step RK4 integration with invariant
//!   monitors, section construction along characteristic curves, and
//!   pullback residual measurement on grids.
//! - [`corpus`]: seeded random generators for expressions and forms, used
//!   by property tests and verification corpora.

pub mod corpus;
pub mod extcalc;
pub mod flow;
pub mod liouville;
pub mod symexpr;
pub mod varprin;
