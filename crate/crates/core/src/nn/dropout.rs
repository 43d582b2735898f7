use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Where dropout is applied in the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Site {
    /// The embedded input token of each step.
    Embedding,
    /// The output of the first recurrent cell.
    Hidden,
}

/// Dropout rates for the generator's two sites. Dropout is the generator's
/// only source of noise; it is switched off for evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub p_embedding: f64,
    pub p_hidden: f64,
    pub active: bool,
}

impl Default for DropoutSpec {
    fn default() -> Self {
        DropoutSpec {
            p_embedding: 0.0,
            p_hidden: 0.5,
            active: true,
        }
    }
}

impl DropoutSpec {
    pub fn new(p_embedding: f64, p_hidden: f64) -> Result<Self> {
        let spec = DropoutSpec {
            p_embedding,
            p_hidden,
            active: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn off() -> Self {
        DropoutSpec {
            p_embedding: 0.0,
            p_hidden: 0.0,
            active: false,
        }
    }

    pub fn inactive(self) -> Self {
        DropoutSpec {
            active: false,
            ..self
        }
    }

    pub fn rate(&self, site: Site) -> f64 {
        match site {
            Site::Embedding => self.p_embedding,
            Site::Hidden => self.p_hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_embedding", self.p_embedding), ("p_hidden", self.p_hidden)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::contract(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        Ok(())
    }
}

/// Inverted dropout: zeroes each entry with the site's rate and scales the
/// survivors by `1 / (1 − p)`. Identity when inactive or at rate 0.
pub fn dropout_apply<'t>(spec: &DropoutSpec, site: Site, x: Var<'t>, rng: &mut impl Rng) -> Var<'t> {
    let p = spec.rate(site);
    if !spec.active || p == 0.0 {
        return x;
    }
    let keep = 1.0 / (1.0 - p);
    let shape = x.shape();
    let n = shape.iter().product();
    let mask = (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    x.mul(x.tape().constant(Tensor::from_vec(&shape, mask)))
}
