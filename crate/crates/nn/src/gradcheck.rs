//! Central finite-difference oracle for parameter gradients.

use rand::seq::index::sample;
use rand::Rng;

use crate::{Gradients, ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `grads` against central differences of `loss` on up to
/// `per_param` randomly chosen entries of every parameter in `ids`.
///
/// `loss` must be a deterministic function of the store (any randomness it
/// uses has to be fixed outside).
pub fn check_gradients<R, F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    grads: &Gradients,
    per_param: usize,
    step: f64,
    rng: &mut R,
    mut loss: F,
) -> Vec<GradCheckEntry>
where
    R: Rng + ?Sized,
    F: FnMut(&ParamStore) -> f64,
{
    let mut out = Vec::new();
    for &id in ids {
        let n = store.get(id).len();
        let picks = sample(rng, n, per_param.min(n));
        for index in picks.iter() {
            let orig = store.get(id).data()[index];
            store.get_mut(id).data_mut()[index] = orig + step;
            let plus = loss(store);
            store.get_mut(id).data_mut()[index] = orig - step;
            let minus = loss(store);
            store.get_mut(id).data_mut()[index] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[index]);
            out.push(GradCheckEntry {
                param: store.name(id).to_string(),
                index,
                analytic,
                numeric,
                rel_error: relative_error(analytic, numeric, 1e-6),
            });
        }
    }
    out
}
