use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::{Graph, ParamStore, Var};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Check at most this many randomly chosen entries per tensor; `None` checks all.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
    /// Denominator floor so entries with near-zero gradients are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_per_tensor: None,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compare analytic parameter gradients of the scalar built by `f` against
/// central differences `(f(θ+ε) − f(θ−ε)) / 2ε`, entry by entry.
///
/// Relative error is `|a − n| / max(|a|, |n|, floor)`. Gradients already in
/// `store` are cleared before and after.
pub fn grad_check<F>(store: &mut ParamStore<f64>, cfg: &GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    store.zero_grads();
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let grads = g.backward(out)?;
    g.accumulate_param_grads(&grads, store);
    let analytic: Vec<Vec<f64>> = store.ids().map(|id| store.grad(id).data().to_vec()).collect();
    store.zero_grads();

    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, store)?;
        Ok(g.value(out).data()[0])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport::default();
    for (t, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let n = store.value(id).len();
        let entries: Vec<usize> = match cfg.max_per_tensor {
            Some(k) if k < n => {
                let mut v = sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for i in entries {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + cfg.eps;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - cfg.eps;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = analytic[t][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store.name(id).to_string(), i));
            }
        }
    }
    Ok(report)
}
