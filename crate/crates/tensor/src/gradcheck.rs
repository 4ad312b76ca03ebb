//! Central finite differences for verifying reverse-mode gradients.

use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Entries whose analytic and numeric gradients are both below this
/// magnitude are compared absolutely rather than relatively.
pub const GRAD_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, GRAD_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for one entry of a tensor.
pub fn central_difference(
    x: &mut Tensor<f64>,
    index: usize,
    step: f64,
    mut f: impl FnMut(&Tensor<f64>) -> f64,
) -> f64 {
    let orig = x.data()[index];
    x.data_mut()[index] = orig + step;
    let plus = f(x);
    x.data_mut()[index] = orig - step;
    let minus = f(x);
    x.data_mut()[index] = orig;
    (plus - minus) / (2.0 * step)
}

/// Same as [`central_difference`] for one entry of a named parameter.
pub fn central_difference_param(
    store: &mut ParamStore<f64>,
    name: &str,
    index: usize,
    step: f64,
    mut f: impl FnMut(&ParamStore<f64>) -> f64,
) -> f64 {
    let orig = store[name].data()[index];
    store.get_mut(name).unwrap().data_mut()[index] = orig + step;
    let plus = f(store);
    store.get_mut(name).unwrap().data_mut()[index] = orig - step;
    let minus = f(store);
    store.get_mut(name).unwrap().data_mut()[index] = orig;
    (plus - minus) / (2.0 * step)
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

impl GradCheckReport {
    pub fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        self.checked += 1;
        let e = relative_error(analytic, numeric);
        if e > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = self.max_rel_error.max(e);
            self.worst = format!("{} (analytic {analytic:.6e}, numeric {numeric:.6e})", label());
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        if other.max_rel_error > self.max_rel_error || self.worst.is_empty() {
            self.worst = other.worst;
        }
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.checked += other.checked;
    }
}
