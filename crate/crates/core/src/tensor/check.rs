//! Central finite-difference gradient checking.
//!
//! The loss closure must be deterministic: dropout disabled, any RNG
//! reseeded per call. The check perturbs one parameter element at a time,
//! so cost is `2 * #elements` loss evaluations; intended for tiny models.

use super::array::Array;

/// Relative error with a floor so that near-zero pairs compare cleanly.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst element, with its analytic/numeric values.
    pub worst: (usize, f64, f64),
}

#[derive(Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries
            .iter()
            .fold(0.0, |m, e| m.max(e.max_rel_err))
    }
}

/// Compares analytic gradients against central differences
/// `(f(x+h) - f(x-h)) / 2h` for every element of every named parameter.
///
/// `params_of` hands out mutable views of the parameter tensors by name;
/// `analytic` carries the already-computed gradients in matching shapes;
/// `loss` re-evaluates the scalar loss from the current parameter values.
pub fn finite_diff_check<P>(
    target: &mut P,
    params_of: impl for<'a> Fn(&'a mut P) -> Vec<(String, &'a mut Array)>,
    analytic: &[(String, Array)],
    mut loss: impl FnMut(&mut P) -> f64,
    h: f64,
) -> GradCheckReport {
    let names: Vec<(String, usize)> = params_of(target)
        .iter()
        .map(|(n, a)| (n.clone(), a.len()))
        .collect();

    let mut entries = Vec::new();
    for (name, len) in names {
        let grad = &analytic
            .iter()
            .find(|(n, _)| *n == name)
            .unwrap_or_else(|| panic!("no analytic gradient supplied for `{name}`"))
            .1;
        assert_eq!(grad.len(), len, "analytic gradient length mismatch for `{name}`");

        let mut entry = GradCheckEntry {
            name: name.clone(),
            max_rel_err: 0.0,
            worst: (0, 0.0, 0.0),
        };
        for idx in 0..len {
            nudge(target, &params_of, &name, idx, h);
            let f_plus = loss(target);
            nudge(target, &params_of, &name, idx, -2.0 * h);
            let f_minus = loss(target);
            nudge(target, &params_of, &name, idx, h);

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = grad.data()[idx];
            let e = rel_err(a, numeric);
            if e > entry.max_rel_err {
                entry.max_rel_err = e;
                entry.worst = (idx, a, numeric);
            }
        }
        entries.push(entry);
    }
    GradCheckReport { entries }
}

fn nudge<P>(
    target: &mut P,
    params_of: &impl for<'a> Fn(&'a mut P) -> Vec<(String, &'a mut Array)>,
    name: &str,
    idx: usize,
    delta: f64,
) {
    for (n, arr) in params_of(target) {
        if n == name {
            arr.data_mut()[idx] += delta;
            return;
        }
    }
    panic!("parameter `{name}` disappeared during gradient check");
}
