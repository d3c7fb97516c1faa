//! Central finite-difference check of the network's analytic gradients.

use super::loss::{mse, mse_grad};
use super::network::{BatchMasks, Network};
use super::Matrix;
use crate::error::Result;

/// Gradients smaller than this are compared on an absolute scale.
pub const GRADIENT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "tensor,index,analytic,numeric,rel_error")?;
        for e in &self.entries {
            writeln!(out, "{},{},{},{},{}", e.tensor, e.index, e.analytic, e.numeric, e.rel_error)?;
        }
        Ok(())
    }
}

/// `|a - n| / max(|a|, |n|, GRADIENT_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR)
}

/// Compares the MSE-loss gradient of every parameter against a central
/// difference with the given step. Masks (if any) are held fixed so the loss
/// is a deterministic function of the parameters.
pub fn check_gradients(net: &mut Network, input: &[Matrix], target: &Matrix, masks: Option<&BatchMasks>, step: f64) -> Result<GradCheckReport> {
    let pred = net.forward_train(input, masks)?;
    let analytic = net.backward(&mse_grad(&pred, target))?;
    let names = net.parameter_names();
    let mut entries = Vec::new();
    for (p, name) in names.iter().enumerate() {
        for i in 0..analytic.0[p].len() {
            let original = net.parameters()[p].as_slice()[i];
            net.parameters_mut()[p].as_mut_slice()[i] = original + step;
            let plus = mse(&net.forward(input, masks)?, target);
            net.parameters_mut()[p].as_mut_slice()[i] = original - step;
            let minus = mse(&net.forward(input, masks)?, target);
            net.parameters_mut()[p].as_mut_slice()[i] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.0[p].as_slice()[i];
            entries.push(GradCheckEntry {
                tensor: name.clone(),
                index: i,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric),
            });
        }
    }
    Ok(GradCheckReport { entries })
}
