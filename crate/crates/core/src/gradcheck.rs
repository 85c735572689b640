//! Central finite-difference check of the analytic gradients.

use ndarray::Array2;
use serde::Serialize;

use crate::error::Result;
use crate::model::DualLaat;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    /// Per parameter tensor: `‖a - n‖ / max(‖a‖, ‖n‖, floor)` over its checked entries.
    pub tensor_errors: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_tensor_error(&self) -> (f64, &str) {
        self.tensor_errors
            .iter()
            .fold((0.0, ""), |acc, (n, e)| if *e > acc.0 { (*e, n.as_str()) } else { acc })
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares every entry of every parameter (the padding row excepted) against
/// `(L(θ+ε) − L(θ−ε)) / 2ε`, evaluating the loss in eval mode.
pub fn check_gradients(
    model: &DualLaat,
    notes: &[&[u32]],
    descriptions: &[&[u32]],
    targets: &Array2<bool>,
    epsilon: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = model.loss_and_grad(notes, descriptions, targets, None)?;
    let names: Vec<String> = analytic.named_params().into_iter().map(|(n, _)| n).collect();
    let grads: Vec<Vec<f64>> = analytic
        .named_params()
        .into_iter()
        .map(|(_, a)| a.iter().copied().collect())
        .collect();
    let dims: Vec<usize> = model.params.named_params().iter().map(|(_, a)| a.ncols_or_one()).collect();

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        tensor_errors: Vec::new(),
    };
    for (p, name) in names.iter().enumerate() {
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for k in 0..grads[p].len() {
            if p == 0 && k < dims[0] {
                continue;
            }
            let original = nth_mut(&mut probe, p, k, |x| *x);
            nth_mut(&mut probe, p, k, |x| *x = original + epsilon);
            let plus = probe.loss_and_grad(notes, descriptions, targets, None)?.0;
            nth_mut(&mut probe, p, k, |x| *x = original - epsilon);
            let minus = probe.loss_and_grad(notes, descriptions, targets, None)?.0;
            nth_mut(&mut probe, p, k, |x| *x = original);
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(grads[p][k], numeric, floor);
            diff2 += (grads[p][k] - numeric).powi(2);
            a2 += grads[p][k].powi(2);
            n2 += numeric.powi(2);
            report.checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_parameter = format!("{name}[{k}]");
                report.worst_analytic = grads[p][k];
                report.worst_numeric = numeric;
            }
        }
        let norm = a2.sqrt().max(n2.sqrt()).max(floor);
        report.tensor_errors.push((name.clone(), diff2.sqrt() / norm));
    }
    Ok(report)
}

fn nth_mut<T>(model: &mut DualLaat, param: usize, index: usize, f: impl FnOnce(&mut f64) -> T) -> T {
    let mut views = model.params.params_mut();
    let view = &mut views[param];
    let x = view.iter_mut().nth(index).expect("index within parameter");
    f(x)
}

trait NcolsOrOne {
    fn ncols_or_one(&self) -> usize;
}

impl NcolsOrOne for ndarray::ArrayViewD<'_, f64> {
    fn ncols_or_one(&self) -> usize {
        self.shape().get(1).copied().unwrap_or(1)
    }
}
