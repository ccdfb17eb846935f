//! Central finite-difference checks of analytic gradients.

use std::fmt;

use crate::model::ModelState;

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Central-difference step.
    pub step: f64,
    /// Maximum relative error `|a - n| / max(|a|, |n|)`.
    pub rel_tolerance: f64,
    /// Components whose analytic and numeric values differ by less than this
    /// are accepted regardless of relative error (both sides are at the
    /// floating-point noise floor of the difference quotient).
    pub abs_floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-3,
            rel_tolerance: 1e-4,
            abs_floor: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mismatch {
    pub path: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub failures: Vec<Mismatch>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} components checked, max relative error {:.3e}, {} failures",
            self.checked,
            self.max_rel_error,
            self.failures.len()
        )?;
        for m in self.failures.iter().take(10) {
            write!(
                f,
                "\n  {}[{}]: analytic {:.9e} numeric {:.9e} (rel {:.3e})",
                m.path, m.index, m.analytic, m.numeric, m.rel_error
            )?;
        }
        Ok(())
    }
}

/// Compares `grads` against central differences of `objective` for every
/// parameter whose path satisfies `select`.
pub fn check_params<F, S>(
    model: &ModelState,
    grads: &crate::model::ModelParams,
    objective: F,
    config: &GradCheck,
    select: S,
) -> GradReport
where
    F: Fn(&ModelState) -> f64,
    S: Fn(&str) -> bool,
{
    let mut report = GradReport::default();
    let analytic = grads.named();
    let mut probe = model.clone();
    let n_tensors = analytic.len();
    for t_idx in 0..n_tensors {
        let (path, g) = &analytic[t_idx];
        if !select(path) {
            continue;
        }
        for i in 0..g.len() {
            let original = {
                let mut named = probe.params.named_mut();
                let t = &mut named[t_idx].1;
                let v = t.data[i];
                t.data[i] = v + config.step;
                v
            };
            let plus = objective(&probe);
            probe.params.named_mut()[t_idx].1.data[i] = original - config.step;
            let minus = objective(&probe);
            probe.params.named_mut()[t_idx].1.data[i] = original;

            let numeric = (plus - minus) / (2.0 * config.step);
            let a = g.data[i];
            let diff = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            let rel = if scale > 0.0 { diff / scale } else { 0.0 };
            report.checked += 1;
            if diff < config.abs_floor {
                continue;
            }
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel >= config.rel_tolerance {
                report.failures.push(Mismatch {
                    path: path.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    report
}
