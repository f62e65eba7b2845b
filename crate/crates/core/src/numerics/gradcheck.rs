//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Denominator floor for relative errors; keeps `0 vs 1e-14` from reading as 100%.
pub const REL_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel: f64,
    pub mean_rel: f64,
    pub worst_coord: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel: f64,
    pub mean_rel: f64,
    pub worst: String,
    pub errors: Vec<f64>,
}

impl GradCheckReport {
    /// Share of checked coordinates whose relative error is below `tol`.
    pub fn fraction_below(&self, tol: f64) -> f64 {
        if self.errors.is_empty() {
            return 1.0;
        }
        self.errors.iter().filter(|&&e| e < tol).count() as f64 / self.errors.len() as f64
    }
}

fn eval<F>(store: &ParamStore<f64>, f: &F) -> Result<f64>
where
    F: Fn(&Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let g = Graph::new();
    let v = f(&g, store)?;
    Ok(g.scalar(v))
}

/// Compares analytic parameter gradients of `f` with central differences.
///
/// At most `samples` coordinates per parameter are probed (all of them when
/// the parameter is smaller), chosen with a seeded RNG.
pub fn grad_check<F>(store: &ParamStore<f64>, f: F, samples: usize, step: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::config("step", "must be positive"));
    }
    let g = Graph::new();
    let loss = f(&g, store)?;
    if !g.scalar(loss).is_finite() {
        return Err(Error::NonFinite {
            context: "grad-check loss".into(),
        });
    }
    g.backward(loss)?;
    let analytic = g.param_grads(store);
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = store.clone();
    let mut params = Vec::new();
    let mut all = Vec::new();
    for idx in 0..store.len() {
        let name = store.name_at(idx).to_string();
        let n = store.tensor_at(idx).len();
        let coords: Vec<usize> = if samples >= n {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, samples).into_vec();
            c.sort_unstable();
            c
        };
        let mut errs = Vec::with_capacity(coords.len());
        for &c in &coords {
            let orig = work.tensor_at(idx).data()[c];
            work.tensor_at_mut(idx).data_mut()[c] = orig + step;
            let plus = eval(&work, &f)?;
            work.tensor_at_mut(idx).data_mut()[c] = orig - step;
            let minus = eval(&work, &f)?;
            work.tensor_at_mut(idx).data_mut()[c] = orig;
            let a = analytic.get(idx).data()[c];
            if !plus.is_finite() || !minus.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("{name}[{c}]"),
                });
            }
            errs.push(relative_error(a, (plus - minus) / (2.0 * step)));
        }
        let (worst_pos, max_rel) =
            errs.iter()
                .copied()
                .enumerate()
                .fold((0, 0.0f64), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
        let mean_rel = if errs.is_empty() {
            0.0
        } else {
            errs.iter().sum::<f64>() / errs.len() as f64
        };
        params.push(ParamCheck {
            name,
            coords_checked: coords.len(),
            max_rel,
            mean_rel,
            worst_coord: coords.get(worst_pos).copied().unwrap_or(0),
        });
        all.extend(errs);
    }
    let worst = params
        .iter()
        .max_by(|a, b| a.max_rel.total_cmp(&b.max_rel))
        .map(|p| p.name.clone())
        .unwrap_or_default();
    let max_rel = all.iter().copied().fold(0.0, f64::max);
    let mean_rel = if all.is_empty() {
        0.0
    } else {
        all.iter().sum::<f64>() / all.len() as f64
    };
    Ok(GradCheckReport {
        params,
        max_rel,
        mean_rel,
        worst,
        errors: all,
    })
}

/// Finite-difference check of a function of plain input tensors; every
/// coordinate of every input is probed. Returns the worst relative error.
pub fn grad_check_inputs<F>(inputs: &[Tensor<f64>], f: F, step: f64) -> Result<f64>
where
    F: Fn(&Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new(0);
    for (i, t) in inputs.iter().enumerate() {
        store.insert(format!("in{i}"), t.clone())?;
    }
    let n = inputs.len();
    let report = grad_check(
        &store,
        |g, s| {
            let vars = (0..n)
                .map(|i| g.param(s, &format!("in{i}")))
                .collect::<Result<Vec<_>>>()?;
            f(g, &vars)
        },
        usize::MAX,
        step,
        0,
    )?;
    Ok(report.max_rel)
}
