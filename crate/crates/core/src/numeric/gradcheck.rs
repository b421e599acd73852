//! Central finite differences for checking analytic gradients.
//!
//! This only ever evaluates forward functions, so it stays independent of the
//! backward passes it is used to check.

use super::Params;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor for the relative error. Gradients that are exactly zero
/// (a key bias under softmax, for instance) come back from central differences
/// as roundoff of order 1e-11, so tiny entries are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-4;

/// Central-difference gradient of `f` at `x`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(path, index)` of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    fn record(&mut self, path: &str, index: usize, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.checked += 1;
        if e > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(e);
            self.worst = Some((path.to_string(), index));
        }
    }
}

/// Compares `analytic(path)` with central differences of `loss` for every
/// scalar of every parameter.
pub fn check_params(
    params: &Params,
    analytic: impl Fn(&str) -> Vec<f64>,
    mut loss: impl FnMut(&Params) -> f64,
    step: f64,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = params.clone();
    let paths: Vec<String> = params.iter().map(|(k, _)| k.clone()).collect();
    for path in paths {
        let grad = analytic(&path);
        let n = probe.get(&path).expect("path from params").len();
        assert_eq!(grad.len(), n, "analytic gradient length for {path}");
        for (i, &g) in grad.iter().enumerate() {
            let orig = probe.get(&path).unwrap().data()[i];
            probe.get_mut(&path).unwrap().data_mut()[i] = orig + step;
            let up = loss(&probe);
            probe.get_mut(&path).unwrap().data_mut()[i] = orig - step;
            let down = loss(&probe);
            probe.get_mut(&path).unwrap().data_mut()[i] = orig;
            report.record(&path, i, g, (up - down) / (2.0 * step));
        }
    }
    report
}

/// Largest [`relative_error`] between two gradient vectors.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}
