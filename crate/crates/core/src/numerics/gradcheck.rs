//! Central-difference gradient oracle.

use rayon::prelude::*;

use crate::error::Result;
use crate::numerics::{ModelParams, Session, Var};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor in [`relative_error`]. Below it the comparison is
/// effectively absolute, since central differences carry roughly 1e-11 of
/// round-off for O(1) losses.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub path: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn failures(&self, tol: f64) -> impl Iterator<Item = &ParamCheck> {
        self.params
            .iter()
            .filter(move |p| p.max_rel_error.is_nan() || p.max_rel_error >= tol)
    }
}

/// Compares the tape's gradient of `f` against
/// `(f(θ + h·eᵢ) − f(θ − h·eᵢ)) / 2h` for every entry of every parameter.
///
/// `f` must build a scalar on the session it is handed and must depend on
/// the parameters only through [`Session::param`].
pub fn grad_check<F>(params: &ModelParams, h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Session) -> Result<Var> + Sync,
{
    let mut session = Session::new(params);
    let loss = f(&mut session)?;
    session.tape.backward(loss)?;
    let analytic = session.gradients();

    let eval = |p: &ModelParams| -> Result<f64> {
        let mut s = Session::forward_only(p);
        let v = f(&mut s)?;
        Ok(s.tape.value(v).data()[0])
    };

    let paths: Vec<&str> = params.paths().collect();
    let checks: Result<Vec<ParamCheck>> = paths
        .par_iter()
        .map(|&path| {
            let mut work = params.clone();
            let grad = analytic.get(path).expect("same paths");
            let mut check = ParamCheck {
                path: path.to_string(),
                entries: grad.len(),
                max_rel_error: 0.0,
                max_abs_error: 0.0,
                worst_index: 0,
            };
            for (i, &a) in grad.iter().enumerate() {
                let orig = work.get(path)?.data()[i];
                work.get_mut(path)?.data_mut()[i] = orig + h;
                let plus = eval(&work)?;
                work.get_mut(path)?.data_mut()[i] = orig - h;
                let minus = eval(&work)?;
                work.get_mut(path)?.data_mut()[i] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let rel = relative_error(a, numeric);
                if rel > check.max_rel_error {
                    check.max_rel_error = rel;
                    check.worst_index = i;
                }
                check.max_abs_error = check.max_abs_error.max((a - numeric).abs());
            }
            Ok(check)
        })
        .collect();
    Ok(GradCheckReport { params: checks? })
}
