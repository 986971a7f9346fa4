use super::{Param, Parameterized};

/// Denominator floor for relative errors, per unit of objective magnitude.
/// Coordinates whose true gradient is zero would otherwise report pure
/// rounding noise, which grows with `|f|`.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter name, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    fn empty() -> Self {
        Self {
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
        }
    }

    fn record(&mut self, name: &str, idx: usize, err: f64) {
        self.checked += 1;
        if err > self.max_rel_error || err.is_nan() {
            self.max_rel_error = err;
            self.worst = Some((name.to_string(), idx));
        }
    }

    pub fn merge(mut self, other: GradCheckReport) -> Self {
        self.checked += other.checked;
        if other.max_rel_error > self.max_rel_error || other.max_rel_error.is_nan() {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self
    }
}

/// `|a − n| / max(|a|, |n|, REL_ERROR_FLOOR · max(1, |f|))` where `f` is the
/// objective value at the unperturbed point.
pub fn relative_error(analytic: f64, numeric: f64, objective: f64) -> f64 {
    let floor = REL_ERROR_FLOOR * objective.abs().max(1.0);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `f` at `x`.
pub fn grad_check<F>(x: &[f64], analytic: &[f64], h: f64, mut f: F) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len(), "gradient length");
    let f0 = f(x);
    let mut probe = x.to_vec();
    let mut report = GradCheckReport::empty();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        let numeric = (fp - fm) / (2.0 * h);
        report.record("x", i, relative_error(analytic[i], numeric, f0));
    }
    report
}

/// Gradient check over every coordinate of every parameter of `model`.
///
/// `objective(model, backprop)` must return the same scalar for the same
/// parameter values (freeze stochastic masks by replaying the RNG). When
/// `backprop` is set it must also accumulate gradients into the params.
pub fn grad_check_params<M, F>(model: &mut M, h: f64, mut objective: F) -> GradCheckReport
where
    M: Parameterized,
    F: FnMut(&mut M, bool) -> f64,
{
    model.zero_grad();
    let f0 = objective(model, true);
    let analytic: Vec<(String, Vec<f64>)> = model
        .params()
        .iter()
        .map(|p: &&Param| (p.name.clone(), p.grad.data().to_vec()))
        .collect();

    let mut report = GradCheckReport::empty();
    for (pi, (name, grads)) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = model.params()[pi].value.data()[i];
            set_coord(model, pi, i, orig + h);
            let fp = objective(model, false);
            set_coord(model, pi, i, orig - h);
            let fm = objective(model, false);
            set_coord(model, pi, i, orig);
            let numeric = (fp - fm) / (2.0 * h);
            report.record(name, i, relative_error(a, numeric, f0));
        }
    }
    report
}

fn set_coord<M: Parameterized>(model: &mut M, param: usize, idx: usize, v: f64) {
    model.params_mut()[param].value.data_mut()[idx] = v;
}
