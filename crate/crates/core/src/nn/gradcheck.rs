//! Backprop against central finite differences of the MSE loss.

use super::{mse_loss_batch, Matrix, Mlp, NnError};

/// Differences below this are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Parameters plus input elements compared.
    pub checked: usize,
    pub max_rel_error: f64,
}

fn loss(mlp: &Mlp, input: &Matrix, target: &Matrix) -> Result<f64, NnError> {
    Ok(mse_loss_batch(&mlp.predict_batch(input)?, target)?.0)
}

/// Parameter `p` of layer `k`: weights row-major, then bias.
fn param_mut(net: &mut Mlp, k: usize, p: usize) -> &mut f64 {
    let layer = &mut net.layers_mut()[k];
    let nw = layer.weights.as_slice().len();
    if p < nw {
        &mut layer.weights.as_mut_slice()[p]
    } else {
        &mut layer.bias[p - nw]
    }
}

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(ABS_FLOOR)
}

/// Compares every parameter gradient of every unfrozen layer, and the
/// input gradient, with `(L(θ+ε) − L(θ−ε)) / 2ε`.
pub fn gradient_check(mlp: &Mlp, input: &Matrix, target: &Matrix, eps: f64) -> Result<GradCheck, NnError> {
    let trace = mlp.forward_batch(input)?;
    let (_, g) = mse_loss_batch(&trace.output, target)?;
    let (grads, input_grad) = mlp.backward_batch(&trace, &g)?;
    let mut net = mlp.clone();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (k, lg) in grads.layers.iter().enumerate() {
        let Some(lg) = lg else { continue };
        let nw = lg.weights.as_slice().len();
        for p in 0..nw + lg.bias.len() {
            let orig = *param_mut(&mut net, k, p);
            *param_mut(&mut net, k, p) = orig + eps;
            let up = loss(&net, input, target)?;
            *param_mut(&mut net, k, p) = orig - eps;
            let down = loss(&net, input, target)?;
            *param_mut(&mut net, k, p) = orig;
            let analytic = if p < nw { lg.weights.as_slice()[p] } else { lg.bias[p - nw] };
            worst = worst.max(rel(analytic, (up - down) / (2.0 * eps)));
            checked += 1;
        }
    }
    let mut x = input.clone();
    for i in 0..x.as_slice().len() {
        let orig = x.as_slice()[i];
        x.as_mut_slice()[i] = orig + eps;
        let up = loss(mlp, &x, target)?;
        x.as_mut_slice()[i] = orig - eps;
        let down = loss(mlp, &x, target)?;
        x.as_mut_slice()[i] = orig;
        worst = worst.max(rel(input_grad.as_slice()[i], (up - down) / (2.0 * eps)));
        checked += 1;
    }
    Ok(GradCheck {
        checked,
        max_rel_error: worst,
    })
}
