use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Challenge, DatasetError, Response, RESPONSE_BITS};

pub const BANKS: usize = RESPONSE_BITS;

const MEAN_FREQUENCY: f64 = 100.0;
const FREQUENCY_SIGMA: f64 = 1.0;

/// Simulated ring-oscillator PUF: 16 banks of `K` oscillators.
///
/// Each 2-bit field of the challenge selects one oscillator pair in its bank
/// and the response bit records which of the two runs faster. Evaluation is
/// noise-free.
#[derive(Debug, Clone, PartialEq)]
pub struct RoPufModel {
    frequencies: Vec<Vec<f64>>,
    seed: u64,
}

impl RoPufModel {
    pub fn simulate(seed: u64, oscillators_per_bank: usize) -> Result<Self, DatasetError> {
        if oscillators_per_bank < 4 {
            return Err(DatasetError::Config(format!(
                "need at least 4 oscillators per bank, got {oscillators_per_bank}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(MEAN_FREQUENCY, FREQUENCY_SIGMA).expect("valid normal");
        let frequencies = (0..BANKS)
            .map(|_| {
                (0..oscillators_per_bank)
                    .map(|_| normal.sample(&mut rng).max(f64::MIN_POSITIVE))
                    .collect()
            })
            .collect();
        Ok(Self { frequencies, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn oscillators_per_bank(&self) -> usize {
        self.frequencies[0].len()
    }

    pub fn frequencies(&self) -> &[Vec<f64>] {
        &self.frequencies
    }

    /// Oscillator pair compared in `bank` for a 2-bit field value.
    pub fn pair(&self, field: u8) -> (usize, usize) {
        let k = self.oscillators_per_bank();
        let v = field as usize;
        (v, (v + 1 + (v % 2)) % k)
    }

    pub fn evaluate(&self, c: Challenge) -> Response {
        let mut r = 0u16;
        for (bank, freqs) in self.frequencies.iter().enumerate() {
            let field = ((c.0 >> (30 - 2 * bank)) & 0b11) as u8;
            let (a, b) = self.pair(field);
            r = (r << 1) | (freqs[a] > freqs[b]) as u16;
        }
        Response(r)
    }
}
