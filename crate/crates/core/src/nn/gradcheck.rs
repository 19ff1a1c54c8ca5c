//! Central-difference gradient verification.
//!
//! The numeric side only ever calls the forward pass, so it stays independent
//! of every backward implementation it is checking.

use super::params::{ParamId, ParamStore};
use super::tape::{NodeId, Tape};
use super::tensor::relative_error;
use crate::error::Result;

pub const GRAD_CHECK_H: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    /// Worst relative error across the parameter's elements.
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tol: f64,
    pub checks: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }
}

/// Compares the tape's gradients for a scalar loss against central finite
/// differences, element by element, for every parameter in the store.
///
/// `forward` must be a pure function of the store (it is re-invoked many
/// times with perturbed values).
pub fn grad_check<F>(store: &mut ParamStore, forward: F, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<NodeId>,
{
    let ids: Vec<ParamId> = store.ids().collect();

    store.zero_grads();
    let mut tape = Tape::new();
    let loss = forward(store, &mut tape)?;
    tape.backward(loss, store);
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| store.get(id).grad.data.clone()).collect();

    let mut checks = Vec::with_capacity(ids.len());
    for (k, &id) in ids.iter().enumerate() {
        let n = store.get(id).value.len();
        let mut max_rel = 0.0;
        let mut worst = 0;
        #[allow(clippy::needless_range_loop)]
        for i in 0..n {
            let orig = store.get(id).value.data[i];

            store.get_mut(id).value.data[i] = orig + GRAD_CHECK_H;
            let mut tp = Tape::new();
            let lp = forward(store, &mut tp)?;
            let f_plus = tp.scalar_value(lp);

            store.get_mut(id).value.data[i] = orig - GRAD_CHECK_H;
            let mut tm = Tape::new();
            let lm = forward(store, &mut tm)?;
            let f_minus = tm.scalar_value(lm);

            store.get_mut(id).value.data[i] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * GRAD_CHECK_H);
            let rel = relative_error(numeric, analytic[k][i]);
            if rel > max_rel {
                max_rel = rel;
                worst = i;
            }
        }
        checks.push(ParamCheck {
            name: store.get(id).name.clone(),
            max_rel_err: max_rel,
            worst_index: worst,
            passed: max_rel < tol,
        });
    }
    Ok(GradCheckReport { tol, checks })
}
