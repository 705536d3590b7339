use super::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Worst entry found by [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub param: Option<String>,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares reverse-mode gradients of a scalar function of the trainable
/// parameters against central differences.
///
/// The relative error of each entry uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    check_finite(tape.value(out).item())?;
    let grads = tape.backward(out)?;

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        let v = tape.value(out).item();
        check_finite(v)?;
        Ok(v)
    };

    let ids: Vec<ParamId> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, _)| id)
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        param: None,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for id in ids {
        let var = tape.param_var(id);
        let len = store.get(id).value.len();
        for k in 0..len {
            let analytic = var
                .and_then(|v| grads.get(v))
                .map_or(0.0, |g| g.data()[k]);
            let orig = store.get(id).value.data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + eps;
            let plus = eval(store);
            store.get_mut(id).value.data_mut()[k] = orig - eps;
            let minus = eval(store);
            store.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic - numeric).abs() / denom;
            report.checked += 1;
            if report.param.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.param = Some(store.get(id).name.clone());
                report.index = k;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

fn check_finite(v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("objective evaluated to {v}")))
    }
}
