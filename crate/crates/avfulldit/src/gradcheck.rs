//! Finite-difference oracle for reverse-mode gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Relative-error floor: coordinates where both gradients are tiny compare
/// against this scale instead of each other.
const DENOM_FLOOR: f64 = 1e-2;

/// Compare analytic gradients against central finite differences.
///
/// `build_loss` must construct a scalar loss from the parameter leaves it is
/// handed, deterministically (any other inputs must be captured by value).
/// The check perturbs one coordinate at a time by `step`, re-evaluates the
/// loss, and reports the worst relative error over a seeded subsample of
/// `max_coords` coordinates (all of them if there are fewer).
pub fn finite_difference_check<F>(
    build_loss: F,
    params: &[Tensor],
    step: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t, false)).collect();
        let loss = build_loss(&mut g, &vars)?;
        if g.data(loss).len() != 1 {
            return Err(Error::Contract("gradient check requires a scalar loss".into()));
        }
        Ok(g.data(loss)[0])
    };

    // Analytic pass.
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.leaf(t, true)).collect();
    let loss = build_loss(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            g.grad(v)
                .unwrap_or_else(|| Tensor::zeros(params[i].shape()))
        })
        .collect();

    // Coordinate subsample.
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (pi, p) in params.iter().enumerate() {
        for ci in 0..p.numel() {
            coords.push((pi, ci));
        }
    }
    if coords.len() > max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        coords.shuffle(&mut rng);
        coords.truncate(max_coords);
    }

    let mut worst = 0.0f64;
    for (pi, ci) in coords {
        let orig = params[pi].data()[ci];
        let mut plus: Vec<Tensor> = params.to_vec();
        plus[pi].data_mut()[ci] = orig + step;
        let mut minus: Vec<Tensor> = params.to_vec();
        minus[pi].data_mut()[ci] = orig - step;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * step);
        let a = analytic[pi].data()[ci];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOM_FLOOR);
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}
