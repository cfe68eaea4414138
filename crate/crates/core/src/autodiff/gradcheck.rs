//! Central finite-difference gradient checking.
//!
//! The checker only ever calls the forward path of the function under test,
//! so it stays independent of the backward implementation it validates.

use super::tensor::Tensor;

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / denom
}

/// Checks every coordinate of every input against central differences.
///
/// `f` must be a pure function producing a scalar tensor; `inputs` are the
/// leaves to differentiate with respect to (they must have been created with
/// `Tensor::param`).
pub fn check_gradients(
    f: &dyn Fn(&[Tensor]) -> Tensor,
    inputs: &[Tensor],
    step: f64,
) -> GradCheckReport {
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    check_coords(f, inputs, step, &coords)
}

/// Checks a chosen subset of coordinates; used for composed networks where
/// the full parameter count makes an exhaustive sweep needlessly slow.
pub fn check_gradients_subset(
    f: &dyn Fn(&[Tensor]) -> Tensor,
    inputs: &[Tensor],
    step: f64,
    coords: &[(usize, usize)],
) -> GradCheckReport {
    check_coords(f, inputs, step, coords)
}

fn check_coords(
    f: &dyn Fn(&[Tensor]) -> Tensor,
    inputs: &[Tensor],
    step: f64,
    coords: &[(usize, usize)],
) -> GradCheckReport {
    for t in inputs {
        t.zero_grad();
    }
    let out = f(inputs);
    out.backward().expect("gradcheck output must be scalar");
    let analytic: Vec<Vec<f64>> =
        inputs.iter().map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()])).collect();

    let mut max_rel = 0.0f64;
    for &(i, j) in coords {
        let base = inputs[i].to_vec();

        let mut plus = base.clone();
        plus[j] += step;
        inputs[i].set_data(&plus);
        let f_plus = f(inputs).item();

        let mut minus = base.clone();
        minus[j] -= step;
        inputs[i].set_data(&minus);
        let f_minus = f(inputs).item();

        inputs[i].set_data(&base);
        let numeric = (f_plus - f_minus) / (2.0 * step);
        max_rel = max_rel.max(rel_err(analytic[i][j], numeric));
    }
    GradCheckReport { max_rel_err: max_rel, checked: coords.len() }
}
