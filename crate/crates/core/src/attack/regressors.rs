//! LC → LR regressors an eavesdropper can fit.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::models::{LatentChallenge, LatentResponse, LATENT_DIM};
use crate::nn::{mse_loss_batch, AdamConfig, AdamState, Matrix, Mlp, NnError};

pub const ATTACKER_HIDDEN: [usize; 4] = [64, 32, 16, 8];
pub const ATTACKER_EPOCHS: usize = 500;

/// Anything that maps a latent challenge to a guessed latent response.
pub trait Regressor {
    fn name(&self) -> &'static str;
    fn predict(&self, lc: &LatentChallenge) -> LatentResponse;
}

/// Per-column affine standardization.
#[derive(Debug, Clone)]
struct Scaler {
    mean: [f64; LATENT_DIM],
    std: [f64; LATENT_DIM],
}

impl Scaler {
    fn fit(rows: &[[f64; LATENT_DIM]]) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = [0.0; LATENT_DIM];
        let mut std = [0.0; LATENT_DIM];
        for d in 0..LATENT_DIM {
            mean[d] = rows.iter().map(|r| r[d]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[d] - mean[d]).powi(2)).sum::<f64>() / n;
            std[d] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    fn apply(&self, r: &[f64; LATENT_DIM]) -> [f64; LATENT_DIM] {
        std::array::from_fn(|d| (r[d] - self.mean[d]) / self.std[d])
    }

    fn invert(&self, r: &[f64]) -> [f64; LATENT_DIM] {
        std::array::from_fn(|d| r[d] * self.std[d] + self.mean[d])
    }
}

/// The 4 → 64 → 32 → 16 → 8 → 4 network, trained with ADAM on MSE over
/// standardized inputs and targets.
#[derive(Debug, Clone)]
pub struct MlpAttacker {
    net: Mlp,
    x: Scaler,
    y: Scaler,
}

impl MlpAttacker {
    pub fn sizes() -> Vec<usize> {
        let mut s = vec![LATENT_DIM];
        s.extend(ATTACKER_HIDDEN);
        s.push(LATENT_DIM);
        s
    }

    pub fn train(pairs: &[(LatentChallenge, LatentResponse)], epochs: usize, seed: u64) -> Result<Self, NnError> {
        let xs: Vec<[f64; LATENT_DIM]> = pairs.iter().map(|p| p.0 .0).collect();
        let ys: Vec<[f64; LATENT_DIM]> = pairs.iter().map(|p| p.1 .0).collect();
        let (sx, sy) = (Scaler::fit(&xs), Scaler::fit(&ys));
        let x = Matrix::from_rows(&xs.iter().map(|r| sx.apply(r)).collect::<Vec<_>>())?;
        let y = Matrix::from_rows(&ys.iter().map(|r| sy.apply(r)).collect::<Vec<_>>())?;
        let mut net = Mlp::init_relu_linear(&Self::sizes(), seed)?;
        let mut adam = AdamState::new(&net, AdamConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..pairs.len()).collect();
        for _ in 0..epochs {
            idx.shuffle(&mut rng);
            for b in idx.chunks(32) {
                let trace = net.forward_batch(&x.select_rows(b))?;
                let (_, g) = mse_loss_batch(&trace.output, &y.select_rows(b))?;
                let (grads, _) = net.backward_batch(&trace, &g)?;
                adam.step(&mut net, &grads)?;
            }
        }
        Ok(Self { net, x: sx, y: sy })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }
}

impl Regressor for MlpAttacker {
    fn name(&self) -> &'static str {
        "mlp"
    }

    fn predict(&self, lc: &LatentChallenge) -> LatentResponse {
        let out = self.net.predict(&self.x.apply(&lc.0)).expect("4 wide");
        LatentResponse(self.y.invert(&out))
    }
}

pub const RBF_LAMBDA: f64 = 1e-3;

/// Kernel ridge regression with a Gaussian kernel, one dual weight vector
/// per output dimension. γ = 1 / median pairwise squared distance.
#[derive(Debug, Clone)]
pub struct RbfAttacker {
    pub gamma: f64,
    pub lambda: f64,
    support: Vec<[f64; LATENT_DIM]>,
    /// `support.len() × LATENT_DIM`
    dual: Matrix,
}

fn sq_dist(a: &[f64; LATENT_DIM], b: &[f64; LATENT_DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

#[derive(Debug, thiserror::Error)]
pub enum RbfError {
    #[error("need at least two training pairs")]
    TooFew,
    #[error("kernel matrix is not positive definite")]
    NotPositiveDefinite,
}

/// In-place lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &mut Matrix) -> Result<(), RbfError> {
    let n = a.rows();
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= a.get(j, k).powi(2);
        }
        if !(d > 0.0) {
            return Err(RbfError::NotPositiveDefinite);
        }
        let d = d.sqrt();
        a.set(j, j, d);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= a.get(i, k) * a.get(j, k);
            }
            a.set(i, j, s / d);
        }
        for i in 0..j {
            a.set(i, j, 0.0);
        }
    }
    Ok(())
}

/// Solves `L Lᵀ x = b` for every column of `b`.
pub fn cholesky_solve(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in 0..n {
            let mut s = x.get(i, c);
            for k in 0..i {
                s -= l.get(i, k) * x.get(k, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
        for i in (0..n).rev() {
            let mut s = x.get(i, c);
            for k in i + 1..n {
                s -= l.get(k, i) * x.get(k, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
    }
    x
}

impl RbfAttacker {
    pub fn train(pairs: &[(LatentChallenge, LatentResponse)], lambda: f64) -> Result<Self, RbfError> {
        if pairs.len() < 2 {
            return Err(RbfError::TooFew);
        }
        let support: Vec<[f64; LATENT_DIM]> = pairs.iter().map(|p| p.0 .0).collect();
        let n = support.len();
        let mut d2 = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in 0..i {
                d2.push(sq_dist(&support[i], &support[j]));
            }
        }
        d2.sort_by(f64::total_cmp);
        let median = d2[d2.len() / 2];
        let gamma = if median > 0.0 { 1.0 / median } else { 1.0 };
        let mut k = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let v = (-gamma * sq_dist(&support[i], &support[j])).exp();
                k.set(i, j, v + if i == j { lambda } else { 0.0 });
            }
        }
        cholesky(&mut k)?;
        let y = Matrix::from_rows(&pairs.iter().map(|p| p.1 .0).collect::<Vec<_>>()).expect("4 wide");
        let dual = cholesky_solve(&k, &y);
        Ok(Self {
            gamma,
            lambda,
            support,
            dual,
        })
    }
}

impl Regressor for RbfAttacker {
    fn name(&self) -> &'static str {
        "rbf"
    }

    fn predict(&self, lc: &LatentChallenge) -> LatentResponse {
        let mut out = [0.0; LATENT_DIM];
        for (i, s) in self.support.iter().enumerate() {
            let k = (-self.gamma * sq_dist(&lc.0, s)).exp();
            for (d, o) in out.iter_mut().enumerate() {
                *o += k * self.dual.get(i, d);
            }
        }
        LatentResponse(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = Matrix::from_rows(&[[4.0, 2.0, 0.4], [2.0, 5.0, 1.0], [0.4, 1.0, 3.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        let mut l = a.clone();
        cholesky(&mut l).unwrap();
        let llt = l.matmul_t(&l).unwrap();
        for (x, y) in llt.as_slice().iter().zip(a.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
        let x = cholesky_solve(&l, &b);
        let back = a.matmul(&x).unwrap();
        for (x, y) in back.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
        let mut bad = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(cholesky(&mut bad).is_err());
    }

    fn toy_pairs(n: usize) -> Vec<(LatentChallenge, LatentResponse)> {
        (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                let lc = LatentChallenge([t, 1.0 - t, (3.0 * t).sin(), t * t]);
                let lr = LatentResponse([2.0 * t, -t, (3.0 * t).cos(), 0.5]);
                (lc, lr)
            })
            .collect()
    }

    #[test]
    fn rbf_interpolates_training_points() {
        let pairs = toy_pairs(40);
        let m = RbfAttacker::train(&pairs, RBF_LAMBDA).unwrap();
        for (lc, lr) in &pairs {
            assert!(m.predict(lc).max_abs_diff(lr) < 0.05);
        }
        assert!(RbfAttacker::train(&pairs[..1], RBF_LAMBDA).is_err());
    }

    #[test]
    fn mlp_attacker_fits_a_smooth_map() {
        assert_eq!(MlpAttacker::sizes(), vec![4, 64, 32, 16, 8, 4]);
        let pairs = toy_pairs(64);
        let m = MlpAttacker::train(&pairs, 300, 1).unwrap();
        let err: f64 = pairs.iter().map(|(lc, lr)| m.predict(lc).max_abs_diff(lr)).sum::<f64>() / 64.0;
        assert!(err < 0.2, "mean max error {err}");
    }
}
