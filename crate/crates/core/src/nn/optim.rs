use super::{GradSet, NnError, ParamSet};

/// Plain SGD, `p ← p − lr·g`, returning the updated set.
pub fn sgd_step(params: &ParamSet, grads: &GradSet, lr: f64) -> Result<ParamSet, NnError> {
    let mut out = params.clone();
    sgd_step_in_place(&mut out, grads, lr)?;
    Ok(out)
}

pub fn sgd_step_in_place(params: &mut ParamSet, grads: &GradSet, lr: f64) -> Result<(), NnError> {
    grads.ensure_congruent(params)?;
    for (name, t) in params.iter_mut() {
        t.axpy(-lr, grads.get(name)?)?;
    }
    Ok(())
}
