use crate::nn::{Activation, Mlp, NnError};

/// Width profile of one network: ReLU hidden layers, linear output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub name: &'static str,
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

pub const LATENT_DIM: usize = 4;
pub const BASE_FEATURES: usize = 256;

impl Architecture {
    pub fn dnn(n: usize) -> Self {
        Self {
            name: "dnn",
            input: super::index_width(n),
            hidden: vec![64, 128, 256, 512, 1024],
            output: crate::puf::CHALLENGE_BITS + crate::puf::RESPONSE_BITS,
        }
    }

    pub fn encoder1() -> Self {
        Self {
            name: "enc1",
            input: crate::puf::CHALLENGE_BITS,
            hidden: vec![1024, 512, 256, 128, 64, 32, 16, 8],
            output: LATENT_DIM,
        }
    }

    pub fn decoder1() -> Self {
        Self {
            name: "dec1",
            input: LATENT_DIM,
            hidden: vec![8, 16, 32, 64, 128, 256, 512, 1024],
            output: crate::puf::RESPONSE_BITS,
        }
    }

    pub fn basic_encoder2() -> Self {
        Self {
            name: "benc2",
            input: LATENT_DIM,
            hidden: vec![1024, 512],
            output: BASE_FEATURES,
        }
    }

    pub fn extension() -> Self {
        Self {
            name: "xenc2",
            input: BASE_FEATURES,
            hidden: vec![64, 32, 16, 8],
            output: LATENT_DIM,
        }
    }

    pub fn decoder2() -> Self {
        Self {
            name: "dec2",
            input: BASE_FEATURES,
            hidden: vec![512, 256],
            output: crate::puf::CHALLENGE_BITS,
        }
    }

    /// Every network of the scheme, for an enrolled set of size `n`.
    pub fn all(n: usize) -> Vec<Self> {
        vec![
            Self::dnn(n),
            Self::encoder1(),
            Self::decoder1(),
            Self::basic_encoder2(),
            Self::extension(),
            Self::decoder2(),
        ]
    }

    /// Divides every width except the input and output by `factor`
    /// (at least 1 unit each). The interface widths stay intact.
    pub fn reduced(&self, factor: usize) -> Self {
        let scale = |w: usize| (w / factor).max(1);
        let shrink_base = |w: usize| if w == BASE_FEATURES { scale(w) } else { w };
        Self {
            name: self.name,
            input: shrink_base(self.input),
            hidden: self.hidden.iter().map(|&w| scale(w)).collect(),
            output: shrink_base(self.output),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(self.output))
            .collect()
    }

    pub fn activations(&self) -> Vec<Activation> {
        let mut acts = vec![Activation::Relu; self.hidden.len()];
        acts.push(Activation::Linear);
        acts
    }

    pub fn build(&self, seed: u64) -> Result<Mlp, NnError> {
        Mlp::init(&self.sizes(), &self.activations(), seed)
    }

    /// Checks that `mlp` has exactly this width profile and activation pattern.
    pub fn check(&self, mlp: &Mlp) -> Result<(), NnError> {
        if mlp.widths() != self.sizes() || mlp.activations() != self.activations() {
            return Err(NnError::Shape(format!(
                "{} must have widths {:?}, found {:?}",
                self.name,
                self.sizes(),
                mlp.widths()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_widths() {
        assert_eq!(Architecture::dnn(1000).sizes(), vec![10, 64, 128, 256, 512, 1024, 48]);
        assert_eq!(
            Architecture::encoder1().sizes(),
            vec![32, 1024, 512, 256, 128, 64, 32, 16, 8, 4]
        );
        assert_eq!(
            Architecture::decoder1().sizes(),
            vec![4, 8, 16, 32, 64, 128, 256, 512, 1024, 16]
        );
        assert_eq!(Architecture::basic_encoder2().sizes(), vec![4, 1024, 512, 256]);
        assert_eq!(Architecture::extension().sizes(), vec![256, 64, 32, 16, 8, 4]);
        assert_eq!(Architecture::decoder2().sizes(), vec![256, 512, 256, 32]);
    }

    #[test]
    fn reduced_keeps_interfaces() {
        let r = Architecture::encoder1().reduced(16);
        assert_eq!(r.sizes(), vec![32, 64, 32, 16, 8, 4, 2, 1, 1, 4]);
        let r = Architecture::decoder2().reduced(16);
        assert_eq!(r.sizes(), vec![16, 32, 16, 32]);
        let r = Architecture::basic_encoder2().reduced(16);
        assert_eq!(r.sizes(), vec![4, 64, 32, 16]);
    }

    #[test]
    fn check_rejects_other_widths() {
        let m = Architecture::decoder2().reduced(16).build(0).unwrap();
        assert!(Architecture::decoder2().check(&m).is_err());
        let m = Architecture::decoder2().build(0).unwrap();
        assert!(Architecture::decoder2().check(&m).is_ok());
    }
}
