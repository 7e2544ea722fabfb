use super::params::{set_coordinate, ParamSet};
use super::{KernelError, Tape, Var};

/// Worst coordinate found by [`gradient_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// Compares reverse-mode gradients with central differences
/// `(f(p+eps) - f(p-eps)) / (2 eps)` over every coordinate of `params`.
///
/// `loss` must register the arrays of `params` on the tape under `prefix`
/// (their `bind(.., prefix, true)` methods do this) and return a scalar.
/// Relative error is `|a - n| / max(1e-8, |a| + |n|)`.
pub fn gradient_check<P, F>(
    params: &P,
    prefix: &str,
    eps: f64,
    loss: F,
) -> Result<GradCheckReport, KernelError>
where
    P: ParamSet + Clone,
    F: Fn(&Tape, &P) -> Result<Var, KernelError>,
{
    let tape = Tape::new();
    let l = loss(&tape, params)?;
    if !tape.item(l).is_finite() {
        return Err(KernelError::NonFiniteLoss);
    }
    let analytic = tape.backward(l)?;

    let eval = |p: &P| -> Result<f64, KernelError> {
        let t = Tape::new();
        let v = loss(&t, p)?;
        let value = t.item(v);
        if value.is_finite() {
            Ok(value)
        } else {
            Err(KernelError::NonFiniteLoss)
        }
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let originals = params.named_arrays(prefix);
    let mut work = params.clone();
    for (name, array) in &originals {
        let Some(grad) = analytic.get(name) else {
            return Err(KernelError::MissingParameter(name.clone()));
        };
        for (k, &orig) in array.data().iter().enumerate() {
            set_coordinate(&mut work, prefix, name, k, orig + eps);
            let up = eval(&work)?;
            set_coordinate(&mut work, prefix, name, k, orig - eps);
            let down = eval(&work)?;
            set_coordinate(&mut work, prefix, name, k, orig);

            let n = (up - down) / (2.0 * eps);
            let a = grad.data()[k];
            let rel = (a - n).abs() / (a.abs() + n.abs()).max(1e-8);
            report.coordinates += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst_parameter = name.clone();
                report.worst_index = k;
                report.analytic = a;
                report.numeric = n;
            }
        }
    }
    Ok(report)
}
