use super::{Graph, Var};
use crate::error::Result;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(param index, element index)` of the worst entry.
    pub worst: (usize, usize),
}

/// Compare reverse-mode gradients against fourth-order central differences.
///
/// `build` receives a fresh graph plus one parameter leaf per entry of
/// `params` and returns the scalar loss. At most `max_samples` parameter
/// entries are probed (all of them if there are fewer), chosen with `seed`.
/// The error per entry is `|analytic - numeric| / max(|analytic|, |numeric|, floor)`
/// with `floor = 1e-6 · max(1, max |analytic|)`, so entries whose true value
/// is at the finite-difference noise level do not dominate.
pub fn grad_check<'a, S, F>(params: &[Tensor<S>], build: F, step: f64, max_samples: usize, seed: u64) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Graph<'a, S>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor<S>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = ps.iter().map(|p| g.param(p.clone())).collect::<Result<Vec<_>>>()?;
        let loss = build(&mut g, &vars)?;
        Ok(g.value(loss).item().f64())
    };

    let mut g = Graph::new();
    let vars = params.iter().map(|p| g.param(p.clone())).collect::<Result<Vec<_>>>()?;
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor<S>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();

    let mut entries: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(i, p)| (0..p.len()).map(move |j| (i, j)))
        .collect();
    if entries.len() > max_samples {
        let mut rng = Rng::new(seed);
        entries = rng
            .choose_indices(entries.len(), max_samples)
            .into_iter()
            .map(|k| entries[k])
            .collect();
    }

    let scale = analytic
        .iter()
        .flat_map(|t| t.data().iter().map(|v| v.f64().abs()))
        .fold(1.0f64, f64::max);
    let floor = 1e-6 * scale;
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: (0, 0),
    };
    for (i, j) in entries {
        let orig = work[i].data()[j];
        let mut at = |k: f64| -> Result<f64> {
            work[i].data_mut()[j] = S::lit(orig.f64() + k * step);
            eval(&work)
        };
        let (p1, m1, p2, m2) = (at(1.0)?, at(-1.0)?, at(2.0)?, at(-2.0)?);
        work[i].data_mut()[j] = orig;
        let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
        let a = analytic[i].data()[j].f64();
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        report.checked += 1;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = (i, j);
        }
    }
    Ok(report)
}
