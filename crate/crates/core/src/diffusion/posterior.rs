use super::{Element, NoiseModel};
use crate::error::{Error, Result};

/// Reverse step for one element: the distribution of `x^{tau_prev}` given the
/// current state `x^{tau_cur} = current`, averaged over the predicted clean
/// distribution `pred`.
pub fn posterior_step(
    pred: &[f64],
    current: usize,
    tau_prev: usize,
    tau_cur: usize,
    model: &NoiseModel,
    which: Element,
) -> Result<Vec<f64>> {
    if tau_prev > tau_cur {
        return Err(Error::NonMonotoneTimesteps {
            prev: tau_prev,
            cur: tau_cur,
        });
    }
    let k = model.marginal(which).len();
    if pred.len() != k {
        return Err(Error::SizeMismatch {
            what: "predicted distribution",
            expected: k,
            got: pred.len(),
        });
    }
    if current >= k {
        return Err(Error::SizeMismatch {
            what: "current state",
            expected: k,
            got: current,
        });
    }
    let mut out = vec![0.0; k];
    if tau_prev == tau_cur {
        out[current] = 1.0;
        return Ok(out);
    }
    let step = model.multi_step_transition(tau_prev, tau_cur, which)?;
    let q_prev = model.cumulative_transition(tau_prev, which)?;
    let q_cur = model.cumulative_transition(tau_cur, which)?;
    for (x0, &p) in pred.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let denom = q_cur[x0 * k + current];
        if denom <= 0.0 {
            return Err(Error::ZeroDenominator {
                element: format!("{which:?}").to_lowercase(),
                state: current,
                class: x0,
            });
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o += p * step[j * k + current] * q_prev[x0 * k + j] / denom;
        }
    }
    let sum: f64 = out.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Unnormalized { sum });
    }
    for o in &mut out {
        *o /= sum;
    }
    Ok(out)
}
