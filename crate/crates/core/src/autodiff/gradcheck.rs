//! Central finite-difference gradient checking in f64.

use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    /// Largest `|g − ĝ| / max(1, |g|, |ĝ|)` over all checked elements.
    pub max_rel_error: f64,
    /// `name[index]` of the worst element.
    pub worst: String,
    pub checked: usize,
}

/// Compare back-propagated gradients of every trainable parameter with
/// central differences of step `h`. `stride` > 1 checks every stride-th
/// element of each tensor.
pub fn check<F>(store: &mut ParamStore<f64>, h: f64, stride: usize, mut loss: F) -> Result<GradReport>
where
    F: FnMut(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let l = loss(store, &mut tape)?;
    tape.backward(l, store)?;

    let mut eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let l = loss(s, &mut tape)?;
        Ok(tape.value(l)[0])
    };

    let names: Vec<String> = store
        .iter()
        .filter(|(_, t)| t.requires_grad())
        .map(|(n, _)| n.to_string())
        .collect();
    let mut report = GradReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for name in names {
        let analytic = store
            .by_name(&name)
            .and_then(|t| t.grad())
            .ok_or_else(|| Error::Contract(format!("no gradient for `{name}`")))?
            .to_vec();
        for (i, &g) in analytic.iter().enumerate().step_by(stride.max(1)) {
            let orig = store.by_name(&name).expect("present").data()[i];
            store.by_name_mut(&name).expect("present").data_mut()[i] = orig + h;
            let up = eval(store)?;
            store.by_name_mut(&name).expect("present").data_mut()[i] = orig - h;
            let down = eval(store)?;
            store.by_name_mut(&name).expect("present").data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (g - numeric).abs() / 1f64.max(g.abs()).max(numeric.abs());
            report.checked += 1;
            if report.worst.is_empty() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = format!("{name}[{i}]");
            }
        }
    }
    Ok(report)
}
