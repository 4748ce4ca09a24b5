use crate::nn::Matrix;

use super::LATENT_DIM;

macro_rules! latent {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, Copy, PartialEq, Default)]
        pub struct $name(pub [f64; LATENT_DIM]);

        impl $name {
            pub fn from_slice(v: &[f64]) -> Self {
                let mut a = [0.0; LATENT_DIM];
                a.copy_from_slice(&v[..LATENT_DIM]);
                Self(a)
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            /// The four 32-bit wire scalars.
            pub fn to_wire(&self) -> [f32; LATENT_DIM] {
                self.0.map(|v| v as f32)
            }

            pub fn from_wire(w: [f32; LATENT_DIM]) -> Self {
                Self(w.map(f64::from))
            }

            /// Round trip through the 32-bit wire representation.
            pub fn quantized(&self) -> Self {
                Self::from_wire(self.to_wire())
            }

            pub fn max_abs_diff(&self, other: &Self) -> f64 {
                self.0
                    .iter()
                    .zip(&other.0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            }

            pub fn to_matrix(items: &[Self]) -> Matrix {
                let data = items.iter().flat_map(|l| l.0).collect();
                Matrix::from_vec(items.len(), LATENT_DIM, data).expect("4 values per latent")
            }
        }
    };
}

latent!(
    /// Compressed challenge sent verifier → node.
    LatentChallenge
);
latent!(
    /// Compressed response sent node → verifier.
    LatentResponse
);

/// Axis-aligned bounding box of a set of latents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentBox {
    pub min: [f64; LATENT_DIM],
    pub max: [f64; LATENT_DIM],
}

impl LatentBox {
    pub fn enclosing<'a>(points: impl IntoIterator<Item = &'a [f64; LATENT_DIM]>) -> Self {
        let mut b = Self {
            min: [f64::INFINITY; LATENT_DIM],
            max: [f64::NEG_INFINITY; LATENT_DIM],
        };
        for p in points {
            for d in 0..LATENT_DIM {
                b.min[d] = b.min[d].min(p[d]);
                b.max[d] = b.max[d].max(p[d]);
            }
        }
        b
    }

    /// Largest side length.
    pub fn extent(&self) -> f64 {
        (0..LATENT_DIM).map(|d| self.max[d] - self.min[d]).fold(0.0, f64::max)
    }
}
