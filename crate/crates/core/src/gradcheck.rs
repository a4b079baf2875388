//! Central finite-difference gradient checking against the autodiff tape.

use crate::graph::{Graph, NodeId};
use crate::nn::ParamStore;

pub struct GradCheckReport {
    /// (param index, flat coordinate, analytic, numeric, relative error)
    pub rows: Vec<(usize, usize, f64, f64, f64)>,
}

impl GradCheckReport {
    pub fn fraction_within(&self, tol: f64) -> f64 {
        if self.rows.is_empty() {
            return 1.0;
        }
        let ok = self.rows.iter().filter(|r| r.4 <= tol).count();
        ok as f64 / self.rows.len() as f64
    }

    pub fn max_rel_error(&self) -> f64 {
        self.rows.iter().map(|r| r.4).fold(0.0, f64::max)
    }
}

/// Compare the tape gradient of `f` with central finite differences on the
/// given (param, coordinate) pairs. `f` must rebuild the same scalar loss
/// from the current store values on every call.
pub fn check<F>(
    f: &mut F,
    store: &mut ParamStore,
    coords: &[(usize, usize)],
    h: f64,
) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> (Graph, NodeId),
{
    let (mut g, loss) = f(store);
    store.zero_grads();
    g.backward(loss, store);
    let analytic: Vec<_> = store.all_grads();

    let mut rows = Vec::with_capacity(coords.len());
    for &(pi, k) in coords {
        let id = store.ids()[pi];
        let orig = store.value(id).as_slice().unwrap()[k];
        store.set_coord(id, k, orig + h);
        let (gp, lp) = f(store);
        let fp = gp.scalar(lp);
        store.set_coord(id, k, orig - h);
        let (gm, lm) = f(store);
        let fm = gm.scalar(lm);
        store.set_coord(id, k, orig);
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[pi].as_slice().unwrap()[k];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let rel = (a - numeric).abs() / denom;
        rows.push((pi, k, a, numeric, rel));
    }
    GradCheckReport { rows }
}

/// Deterministically sample `n` (param, coordinate) pairs across the store.
pub fn sample_coords(store: &ParamStore, n: usize, seed: u64) -> Vec<(usize, usize)> {
    use rand::Rng;
    let mut rng = crate::rng::stream(seed, "gradcheck-coords", &[]);
    let sizes: Vec<usize> = store.ids().iter().map(|&id| store.value(id).len()).collect();
    let total: usize = sizes.iter().sum();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut flat = rng.gen_range(0..total);
        for (pi, &sz) in sizes.iter().enumerate() {
            if flat < sz {
                out.push((pi, flat));
                break;
            }
            flat -= sz;
        }
    }
    out
}
