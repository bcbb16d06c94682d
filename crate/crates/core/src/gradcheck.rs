//! Finite-difference verification of tape gradients.
//!
//! The checker runs the supplied forward builder against the current
//! parameter values, takes analytic gradients from the tape, then probes
//! every parameter element with a central difference. The forward pass must
//! be deterministic; two baseline evaluations are compared bitwise and a
//! mismatch aborts the check, since finite differences against a noisy
//! function are meaningless.

use std::fmt;

use thiserror::Error;

use crate::params::ParamSet;
use crate::tape::{Tape, Var};

#[derive(Debug, Error)]
pub enum GradCheckError<E: fmt::Debug + fmt::Display> {
    #[error("forward pass is nondeterministic: {0} vs {1} on identical inputs")]
    Nondeterministic(f64, f64),
    #[error("forward pass failed: {0}")]
    Forward(E),
}

/// Result for one parameter tensor.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub elements: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Analytic / numeric pair at the element with the largest error.
    pub worst_pair: (f64, f64),
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| !e.pass)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gradient check: step {:.1e}, rel tol {:.1e}, abs tol {:.1e}",
            self.step, self.rel_tol, self.abs_tol
        )?;
        for e in &self.entries {
            writeln!(
                f,
                "  {:<28} {:>6} elems  max_rel {:.3e}  max_abs {:.3e}  {}",
                e.name,
                e.elements,
                e.max_rel_err,
                e.max_abs_err,
                if e.pass { "pass" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "overall: {}",
            if self.passed() { "pass" } else { "FAIL" }
        )
    }
}

/// Check every parameter gradient of a scalar loss against central finite
/// differences with the given `step`. An element passes when its relative
/// error is within `rel_tol` or its absolute error within `abs_tol`; a
/// tensor passes when all its elements do.
///
/// `build` receives a fresh tape and one bound leaf per parameter (in slot
/// order) and must return the scalar loss node. Parameter values are
/// restored after probing.
pub fn grad_check<E, F>(
    build: F,
    params: &mut ParamSet,
    step: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<GradCheckReport, GradCheckError<E>>
where
    E: fmt::Debug + fmt::Display,
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
{
    let eval = |params: &ParamSet| -> Result<f64, GradCheckError<E>> {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let loss = build(&mut tape, &vars).map_err(GradCheckError::Forward)?;
        Ok(tape.value(loss).item())
    };

    let base_a = eval(params)?;
    let base_b = eval(params)?;
    if base_a.to_bits() != base_b.to_bits() {
        return Err(GradCheckError::Nondeterministic(base_a, base_b));
    }

    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let loss = build(&mut tape, &vars).map_err(GradCheckError::Forward)?;
        let grads = tape.backward(loss).expect("loss node is scalar");
        params
            .iter()
            .zip(&vars)
            .map(|(p, &v)| {
                grads
                    .get(v)
                    .map(|g| g.data().to_vec())
                    .unwrap_or_else(|| vec![0.0; p.value.len()])
            })
            .collect()
    };

    let mut entries = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let name = params.get(i).name.clone();
        let elements = params.get(i).value.len();
        let mut max_abs = 0.0f64;
        let mut max_rel = 0.0f64;
        let mut worst = (0.0, 0.0);
        let mut pass = true;
        for e in 0..elements {
            let orig = params.get(i).value.data()[e];
            params.get_mut(i).value.data_mut()[e] = orig + step;
            let hi = eval(params)?;
            params.get_mut(i).value.data_mut()[e] = orig - step;
            let lo = eval(params)?;
            params.get_mut(i).value.data_mut()[e] = orig;

            let numeric = (hi - lo) / (2.0 * step);
            let ana = analytic[i][e];
            let abs_err = (numeric - ana).abs();
            let rel_err = abs_err / numeric.abs().max(ana.abs()).max(f64::MIN_POSITIVE);
            let elem_pass = abs_err <= abs_tol || rel_err <= rel_tol;
            if !elem_pass {
                pass = false;
            }
            if abs_err > max_abs {
                max_abs = abs_err;
                worst = (ana, numeric);
            }
            if rel_err > max_rel && abs_err > abs_tol {
                max_rel = rel_err;
            }
        }
        entries.push(GradCheckEntry {
            name,
            elements,
            max_abs_err: max_abs,
            max_rel_err: max_rel,
            worst_pair: worst,
            pass,
        });
    }

    Ok(GradCheckReport {
        step,
        rel_tol,
        abs_tol,
        entries,
    })
}
