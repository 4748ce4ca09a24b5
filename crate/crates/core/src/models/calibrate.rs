//! Choice of the latent-consistency bound δ from a perturbation sweep.

use super::{binarize, LatentChallenge, ModelError, NodeModelSet, LATENT_DIM};
use crate::nn::Matrix;
use crate::par;
use crate::puf::Challenge;

/// Outcome of [`calibrate_delta`]. Distances are in normalized latent
/// units (raw units divided by `latent_scale`).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Calibration {
    pub latent_scale: f64,
    /// Smallest single-coordinate offset from a genuine latent that changes
    /// its reconstructed challenge.
    pub nearest_forgery: f64,
    /// Largest change a genuine latent suffers from wire quantization.
    pub quantization_noise: f64,
    pub delta: f64,
}

pub const MAX_DELTA: f64 = 0.05;
/// δ must exceed the quantization noise by at least this factor.
pub const NOISE_MARGIN: f64 = 5.0;

const SCAN_START: f64 = 1e-6;
const SCAN_FACTOR: f64 = 4.0;
const BISECT_STEPS: usize = 10;

#[derive(Debug, Clone, Copy)]
struct Ray {
    origin: usize,
    dim: usize,
    sign: f64,
    lo: f64,
    hi: f64,
}

/// Reconstructed challenge of every row, `None` where the output is not finite.
pub fn reconstruct_words(node: &NodeModelSet, lcs: &Matrix) -> Vec<Option<u32>> {
    let rows: Vec<&[f64]> = lcs.iter_rows().collect();
    par::map_chunks(&rows, 256, |chunk| {
        let m = Matrix::from_rows(chunk).expect("equal rows");
        let h = node.basic_encoder2().net().predict_batch(&m).expect("4 wide");
        let out = node.decoder2.net().predict_batch(&h).expect("256 wide");
        out.iter_rows()
            .map(|r| binarize(r, node.params.tau).ok().map(|b| Challenge::from_bits(&b).expect("32 bits").0))
            .collect()
    })
}

fn ray_points(rays: &[Ray], genuine: &[LatentChallenge], scale: f64, at: impl Fn(&Ray) -> f64) -> Matrix {
    let mut m = Matrix::zeros(rays.len(), LATENT_DIM);
    for (i, r) in rays.iter().enumerate() {
        let row = m.row_mut(i);
        row.copy_from_slice(genuine[r.origin].as_slice());
        row[r.dim] += r.sign * at(r) * scale;
    }
    m
}

/// Sweeps ±single-coordinate perturbations of every genuine latent on a
/// geometric grid, refines the first flip by bisection and sets
/// δ = min([`MAX_DELTA`], D/10) for the nearest flip distance D.
pub fn calibrate_delta(node: &NodeModelSet, genuine: &[LatentChallenge]) -> Result<Calibration, ModelError> {
    if genuine.is_empty() {
        return Err(ModelError::Calibration("no genuine latents".into()));
    }
    let bbox = super::LatentBox::enclosing(genuine.iter().map(|l| &l.0));
    let scale = bbox.extent();
    if !(scale.is_finite() && scale > 0.0) {
        return Err(ModelError::Calibration(format!("degenerate latent box (extent {scale})")));
    }
    let base = reconstruct_words(node, &LatentChallenge::to_matrix(genuine));
    let quantization_noise = genuine.iter().map(|l| l.max_abs_diff(&l.quantized())).fold(0.0, f64::max) / scale;

    let mut open: Vec<Ray> = (0..genuine.len())
        .flat_map(|origin| {
            (0..LATENT_DIM).flat_map(move |dim| {
                [1.0, -1.0].map(|sign| Ray {
                    origin,
                    dim,
                    sign,
                    lo: 0.0,
                    hi: SCAN_START,
                })
            })
        })
        .collect();
    let mut bracketed = Vec::new();
    while !open.is_empty() && open[0].hi <= 1.0 {
        let words = reconstruct_words(node, &ray_points(&open, genuine, scale, |r| r.hi));
        let mut still = Vec::with_capacity(open.len());
        for (mut r, w) in open.into_iter().zip(words) {
            if w != base[r.origin] {
                bracketed.push(r);
            } else {
                r.lo = r.hi;
                r.hi *= SCAN_FACTOR;
                still.push(r);
            }
        }
        open = still;
    }
    // Only rays that could still beat the best bracket need refining.
    let best_hi = bracketed.iter().map(|r| r.hi).fold(1.0, f64::min);
    bracketed.retain(|r| r.lo < best_hi);
    for _ in 0..BISECT_STEPS {
        if bracketed.is_empty() {
            break;
        }
        let words = reconstruct_words(node, &ray_points(&bracketed, genuine, scale, |r| 0.5 * (r.lo + r.hi)));
        for (r, w) in bracketed.iter_mut().zip(words) {
            let mid = 0.5 * (r.lo + r.hi);
            if w != base[r.origin] {
                r.hi = mid;
            } else {
                r.lo = mid;
            }
        }
    }
    let nearest_forgery = bracketed.iter().map(|r| r.hi).fold(1.0, f64::min);
    let delta = MAX_DELTA.min(nearest_forgery / 10.0);
    if delta < NOISE_MARGIN * quantization_noise {
        return Err(ModelError::Calibration(format!(
            "delta {delta:.3e} is within {NOISE_MARGIN}x of the wire quantization noise {quantization_noise:.3e}"
        )));
    }
    Ok(Calibration {
        latent_scale: scale,
        nearest_forgery,
        quantization_noise,
        delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BasicEncoder2, Decoder2, Encoder1, ExtendedEncoder2, VerifyParams};

    fn node() -> NodeModelSet {
        NodeModelSet {
            extended_encoder2: ExtendedEncoder2::new(BasicEncoder2::new(1).unwrap(), 2).unwrap(),
            decoder2: Decoder2::new(3).unwrap(),
            verifier_encoder_copy: Encoder1::new(4).unwrap(),
            params: VerifyParams::default(),
        }
    }

    #[test]
    fn nearest_flip_is_a_real_flip() {
        let node = node();
        let genuine: Vec<LatentChallenge> = (0..12)
            .map(|i| LatentChallenge([i as f64 * 0.1, 1.0 - i as f64 * 0.05, 0.3, -0.2 * i as f64]))
            .collect();
        let cal = calibrate_delta(&node, &genuine).unwrap();
        assert!(cal.delta <= MAX_DELTA && cal.delta > 0.0);
        assert!(cal.delta <= cal.nearest_forgery / 10.0 + 1e-15);
        let base = reconstruct_words(&node, &LatentChallenge::to_matrix(&genuine));
        let flips_at = |dist: f64| {
            genuine.iter().enumerate().any(|(i, g)| {
                (0..LATENT_DIM).any(|d| {
                    [1.0, -1.0].iter().any(|s| {
                        let mut p = *g;
                        p.0[d] += s * dist * cal.latent_scale;
                        reconstruct_words(&node, &LatentChallenge::to_matrix(&[p]))[0] != base[i]
                    })
                })
            })
        };
        assert!(flips_at(cal.nearest_forgery));
        assert!(!flips_at(cal.delta));
    }

    #[test]
    fn empty_input_rejected() {
        assert!(calibrate_delta(&node(), &[]).is_err());
    }
}
