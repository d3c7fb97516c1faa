use rand::Rng;

use crate::error::{Error, Result};

/// Per-unit inverted-dropout multipliers: each entry is `0` or `1 / (1 - p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    p: f64,
    values: Vec<f64>,
}

impl DropoutMask {
    pub fn ones(units: usize) -> Self {
        Self { p: 0.0, values: vec![1.0; units] }
    }

    pub fn sample<R: Rng + ?Sized>(units: usize, p: f64, rng: &mut R) -> Result<Self> {
        check_probability(p)?;
        let scale = 1.0 / (1.0 - p);
        let values = (0..units).map(|_| if rng.random::<f64>() < p { 0.0 } else { scale }).collect();
        Ok(Self { p, values })
    }

    pub fn probability(&self) -> f64 {
        self.p
    }

    pub fn keep_probability(&self) -> f64 {
        1.0 - self.p
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn apply(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.values.len() {
            return Err(Error::Structural(format!(
                "dropout mask of {} units applied to {} values",
                self.values.len(),
                input.len()
            )));
        }
        Ok(input.iter().zip(&self.values).map(|(x, m)| x * m).collect())
    }
}

pub(crate) fn check_probability(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Domain(format!("dropout probability must lie in [0, 1), got {p}")));
    }
    Ok(())
}

/// Inverted dropout: zeroes each unit with probability `p` and scales the
/// survivors by `1 / (1 - p)`, so the expected output equals the input.
pub fn dropout_apply<R: Rng + ?Sized>(input: &[f64], p: f64, rng: &mut R) -> Result<(Vec<f64>, DropoutMask)> {
    let mask = DropoutMask::sample(input.len(), p, rng)?;
    let out = mask.apply(input)?;
    Ok((out, mask))
}
