//! Central finite-difference verification of analytic gradients.

use super::params::{Grads, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct FdConfig {
    /// Central-difference step.
    pub step: f64,
    /// Denominator floor of the relative error, so near-zero gradients are
    /// compared in absolute terms.
    pub floor: f64,
    /// Upper bound on checked entries per parameter (evenly strided); `None` checks all.
    pub max_entries_per_param: Option<usize>,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            floor: 1e-4,
            max_entries_per_param: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// `(parameter name, max relative error)` per checked parameter.
    pub per_param: Vec<(String, f64)>,
    pub checked_entries: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` gradients against central differences of `loss` for
/// every entry of every parameter in `store`. Inputs are checked by
/// registering them as parameters.
///
/// `loss` must be deterministic; it is evaluated twice up front and a
/// mismatch is reported as [`Error::Numeric`].
pub fn finite_difference_check<L, A>(store: &mut ParamStore, loss: L, analytic: A, cfg: &FdConfig) -> Result<FdReport>
where
    L: Fn(&ParamStore) -> f64,
    A: Fn(&ParamStore, &mut Grads),
{
    let base = loss(store);
    if base.to_bits() != loss(store).to_bits() {
        return Err(Error::Numeric("loss is not deterministic".into()));
    }
    if !base.is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    let mut grads = store.zero_grads();
    analytic(store, &mut grads);

    let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone(), p.value.len())).collect();
    let mut per_param = Vec::with_capacity(ids.len());
    let mut max_rel = 0.0f64;
    let mut checked = 0;
    for (id, name, len) in ids {
        let stride = match cfg.max_entries_per_param {
            Some(m) if m > 0 && len > m => len.div_ceil(m),
            _ => 1,
        };
        let mut worst = 0.0f64;
        for idx in (0..len).step_by(stride) {
            let orig = store.value(id).data()[idx];
            store.value_mut(id).data_mut()[idx] = orig + cfg.step;
            let plus = loss(store);
            store.value_mut(id).data_mut()[idx] = orig - cfg.step;
            let minus = loss(store);
            store.value_mut(id).data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = grads.get(id).data()[idx];
            let rel = relative_error(a, numeric, cfg.floor);
            if !rel.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for {name}[{idx}]")));
            }
            worst = worst.max(rel);
            checked += 1;
        }
        max_rel = max_rel.max(worst);
        per_param.push((name, worst));
    }
    Ok(FdReport {
        max_rel_error: max_rel,
        per_param,
        checked_entries: checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;
    use std::cell::Cell;

    #[test]
    fn detects_wrong_gradient() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::new(vec![2], vec![1.5, -0.5]).unwrap(), false).unwrap();
        let report = finite_difference_check(
            &mut store,
            |s| s.value(x).data().iter().map(|v| v * v).sum(),
            |s, g| {
                for (gi, v) in g.get_mut(x).data_mut().iter_mut().zip(s.value(x).data()) {
                    *gi = 3.0 * v;
                }
            },
            &FdConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error > 0.3);
    }

    #[test]
    fn rejects_nondeterministic_loss() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::zeros(&[1]), false).unwrap();
        let counter = Cell::new(0.0);
        let result = finite_difference_check(
            &mut store,
            |_| {
                counter.set(counter.get() + 1.0);
                counter.get()
            },
            |_, _| {},
            &FdConfig::default(),
        );
        assert!(matches!(result, Err(Error::Numeric(_))));
    }
}
