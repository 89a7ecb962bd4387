//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor for the per-coordinate relative error.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// (input, flat coordinate) with the largest relative error.
    pub worst: (usize, usize),
    pub checked: usize,
    pub pass: bool,
}

/// Relative error `|a - b| / max(|a|, |b|, ABS_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.len() != 1 {
        return Err(Error::contract("grad_check needs a scalar-valued function"));
    }
    let v = value.item();
    if !v.is_finite() {
        return Err(Error::Evaluation(format!("function value {v} is not finite")));
    }
    Ok(v)
}

/// Analytic gradients of a scalar function with respect to every input.
pub fn analytic_gradients<F>(f: &F, inputs: &[Tensor]) -> Result<(f64, Vec<Vec<f64>>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out).item();
    if !v.is_finite() {
        return Err(Error::Evaluation(format!("function value {v} is not finite")));
    }
    tape.backward(out)?;
    let grads = vars
        .iter()
        .zip(inputs)
        .map(|(&var, t)| tape.grad(var).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();
    Ok((v, grads))
}

/// Checks the listed `(input, coordinate)` pairs, or all of them when
/// `coords` is `None`.
pub fn grad_check_many<F>(
    f: F,
    inputs: &[Tensor],
    step: f64,
    tol: f64,
    coords: Option<&[(usize, usize)]>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (_, grads) = analytic_gradients(&f, inputs)?;
    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
                .collect();
            &all
        }
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: (0, 0),
        checked: 0,
        pass: true,
    };
    for &(i, j) in coords {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + step;
        let plus = evaluate(&f, &work)?;
        work[i].data_mut()[j] = orig - step;
        let minus = evaluate(&f, &work)?;
        work[i].data_mut()[j] = orig;

        let numeric = (plus - minus) / (2.0 * step);
        let analytic = grads[i][j];
        let rel = relative_error(analytic, numeric);
        report.max_abs_err = report.max_abs_err.max((analytic - numeric).abs());
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = (i, j);
        }
        report.checked += 1;
    }
    report.pass = report.max_rel_err <= tol;
    Ok(report)
}

/// Single-input form: compares `backward()` against central differences
/// on every coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), step, tol, None)
}
