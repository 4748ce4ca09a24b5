//! CRP sources: a simulated ring-oscillator PUF and CSV / binary dataset files.

mod dataset;
mod ro;

pub use dataset::{Crp, CrpDataset, DatasetError};
pub use ro::{RoPufModel, BANKS};

use std::fmt;

pub const CHALLENGE_BITS: usize = 32;
pub const RESPONSE_BITS: usize = 16;

/// 32-bit challenge. Bit 0 is the most significant bit of the word and the
/// first character of its textual form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Challenge(pub u32);

/// 16-bit response, same bit ordering as [`Challenge`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Response(pub u16);

macro_rules! bit_word {
    ($ty:ident, $int:ty, $bits:expr) => {
        impl $ty {
            pub const BITS: usize = $bits;

            #[inline]
            pub fn bit(self, i: usize) -> bool {
                assert!(i < $bits);
                (self.0 >> ($bits - 1 - i)) & 1 == 1
            }

            pub fn to_bits(self) -> Vec<bool> {
                (0..$bits).map(|i| self.bit(i)).collect()
            }

            /// Network encoding: one `0.0`/`1.0` input per bit.
            pub fn to_f64s(self) -> Vec<f64> {
                (0..$bits).map(|i| if self.bit(i) { 1.0 } else { 0.0 }).collect()
            }

            pub fn from_bits(bits: &[bool]) -> Option<Self> {
                if bits.len() != $bits {
                    return None;
                }
                Some(Self(bits.iter().fold(0, |acc: $int, &b| (acc << 1) | b as $int)))
            }

            /// Parses a string of exactly `BITS` `'0'`/`'1'` characters.
            pub fn parse_bits(s: &str) -> Result<Self, String> {
                if s.len() != $bits {
                    return Err(format!("expected {} bits, found {}", $bits, s.len()));
                }
                let mut v: $int = 0;
                for ch in s.chars() {
                    v = (v << 1)
                        | match ch {
                            '0' => 0,
                            '1' => 1,
                            other => return Err(format!("non-binary character {other:?}")),
                        };
                }
                Ok(Self(v))
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{:0width$b}", self.0, width = $bits)
            }
        }
    };
}

bit_word!(Challenge, u32, 32);
bit_word!(Response, u16, 16);
