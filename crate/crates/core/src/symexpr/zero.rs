//! Probabilistic zero testing by sampling on `[-1, 1]^n`.
//!
//! A "false" answer (some sample is clearly nonzero) is sound. A "true"
//! answer is heuristic: a nonzero expression vanishing on all samples has
//! measure zero in the coefficient classes handled here, but the result is
//! not a proof.

use super::{ExprError, ScalarExpr};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

/// Parameters for the probabilistic zero test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroTest {
    /// Number of sample points that must all evaluate to ~0.
    pub trials: u32,
    /// Relative tolerance: a value `v` counts as zero when
    /// `|v| <= tol * (1 + s)` with `s` the largest subterm magnitude.
    pub tol: f64,
}

impl Default for ZeroTest {
    fn default() -> Self {
        ZeroTest {
            trials: 25,
            tol: 1e-9,
        }
    }
}

/// Fixed seed for contexts that have no caller-provided randomness
/// (coefficient pruning inside form operations). Keeps runs reproducible.
const INTERNAL_SEED: u64 = 101;

/// Evaluation failures tolerated per test, as a multiple of `trials`.
const RESAMPLE_FACTOR: u32 = 10;

/// Zero test with caller-supplied randomness.
pub fn is_zero_seeded<R: Rng + ?Sized>(
    e: &ScalarExpr,
    zt: &ZeroTest,
    rng: &mut R,
) -> Result<bool, ExprError> {
    let coords: Vec<String> = e.free_coords().into_iter().collect();
    if coords.is_empty() {
        // Constant expression: a single evaluation decides.
        let (v, scale) = e.eval_scaled(&|_| None)?;
        return Ok(v.abs() <= zt.tol * (1.0 + scale));
    }
    let budget = zt.trials.saturating_mul(RESAMPLE_FACTOR).max(1);
    let mut failures = 0u32;
    let mut successes = 0u32;
    let mut point: HashMap<String, f64> = HashMap::new();
    while successes < zt.trials {
        point.clear();
        for c in &coords {
            point.insert(c.clone(), rng.gen_range(-1.0..=1.0));
        }
        match e.eval_scaled(&|n| point.get(n).copied()) {
            Ok((v, scale)) => {
                if v.abs() > zt.tol * (1.0 + scale) {
                    return Ok(false);
                }
                successes += 1;
            }
            Err(_) => {
                failures += 1;
                if failures >= budget {
                    return Err(ExprError::SampleBudget(failures as usize));
                }
            }
        }
    }
    Ok(true)
}

/// Zero test with a fixed internal seed; deterministic across calls.
pub fn is_zero(e: &ScalarExpr, zt: &ZeroTest) -> Result<bool, ExprError> {
    let mut rng = ChaCha8Rng::seed_from_u64(INTERNAL_SEED);
    is_zero_seeded(e, zt, &mut rng)
}

/// Default-parameter zero test used by coefficient pruning. Evaluation
/// trouble (sample budget exhausted, constant that cannot be evaluated)
/// answers "not zero", so terms are kept rather than silently dropped.
pub fn is_zero_default(e: &ScalarExpr) -> bool {
    if e.is_const_zero() {
        return true;
    }
    is_zero(e, &ZeroTest::default()).unwrap_or(false)
}
