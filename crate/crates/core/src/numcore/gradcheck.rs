use super::tape::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Agreement for one parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub rel_error: f64,
    /// Euclidean norm of the backpropagated gradient.
    pub analytic_norm: f64,
    /// Euclidean norm of the central-difference gradient.
    pub numeric_norm: f64,
}

impl ParamCheck {
    /// Passes when the relative error is below `rel_tol`, or when both
    /// gradients are below `zero_tol` (a parameter the output does not
    /// depend on, where the relative error only measures round-off).
    pub fn passes(&self, rel_tol: f64, zero_tol: f64) -> bool {
        self.rel_error < rel_tol || (self.analytic_norm < zero_tol && self.numeric_norm < zero_tol)
    }
}

/// Per-parameter agreement between analytic and central-difference gradients.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// One entry per checked parameter, in store order.
    pub per_param: Vec<ParamCheck>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn error_for(&self, name: &str) -> Option<f64> {
        self.per_param.iter().find(|c| c.name == name).map(|c| c.rel_error)
    }
}

/// Compares backpropagated gradients of the scalar built by `f` against
/// central differences with step `eps`.
///
/// The relative error of one parameter array is
/// `‖a − n‖ / (‖a‖ + ‖n‖ + 1e-12)` with Euclidean norms over its entries;
/// the report's maximum is taken over parameter arrays. When `only` is
/// given, the remaining parameters are held fixed and not reported.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    eps: f64,
    only: Option<&[ParamId]>,
    f: F,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::Contract(format!("finite-difference step {eps}")));
    }
    let numeric_err = |e: Error| match e {
        Error::NonFinite(m) => Error::Numeric(format!("non-finite intermediate: {m}")),
        other => other,
    };
    let tape = Tape::new();
    let loss = f(&tape, store).map_err(numeric_err)?;
    let analytic = tape.gradients(loss)?;

    let eval = |store: &ParamStore| -> Result<f64> {
        let tape = Tape::no_grad();
        let v = f(&tape, store).map_err(numeric_err)?;
        let out = v.value().item()?;
        Ok(out)
    };

    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => store.ids().collect(),
    };
    let mut per_param = Vec::with_capacity(ids.len());
    let mut max_rel_error: f64 = 0.0;
    for id in ids {
        let n = store.get(id).numel();
        let zeros = vec![0.0; n];
        let a = analytic.get(id).unwrap_or(&zeros).to_vec();
        let mut num = vec![0.0; n];
        for (i, slot) in num.iter_mut().enumerate() {
            let orig = store.get(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(store);
            store.value_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(store);
            store.value_mut(id).data_mut()[i] = orig;
            *slot = (plus? - minus?) / (2.0 * eps);
        }
        let diff = norm(a.iter().zip(&num).map(|(x, y)| x - y));
        let (an, nn) = (norm(a.iter().copied()), norm(num.iter().copied()));
        let rel = diff / (an + nn + 1e-12);
        max_rel_error = max_rel_error.max(rel);
        per_param.push(ParamCheck {
            name: store.name(id).to_string(),
            rel_error: rel,
            analytic_norm: an,
            numeric_norm: nn,
        });
    }
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
    })
}

fn norm(it: impl Iterator<Item = f64>) -> f64 {
    it.map(|v| v * v).sum::<f64>().sqrt()
}
