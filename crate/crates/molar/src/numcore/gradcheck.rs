//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::numcore::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradcheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_err < self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn summary(&self) -> String {
        let mut lines = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let status = if e.max_rel_err < self.tolerance {
                "ok"
            } else {
                "FAIL"
            };
            lines.push(format!(
                "{status:8} {:<40} max_rel_err={:.3e}",
                e.name, e.max_rel_err
            ));
        }
        lines.join("\n")
    }
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compare analytic gradients against central finite differences.
///
/// `forward` must be a deterministic scalar function of the parameter
/// values, given in the same order as `params`/`analytic`. The report holds
/// the max relative error per parameter; the forward is re-evaluated twice
/// per scalar entry at `h = 1e-5`.
pub fn finite_diff_gradcheck<F>(
    forward: F,
    params: &[(&str, &Tensor)],
    analytic: &[&Tensor],
    tolerance: f64,
) -> Result<GradcheckReport>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    assert_eq!(params.len(), analytic.len(), "params/analytic mismatch");
    let mut values: Vec<Tensor> = params.iter().map(|(_, t)| (*t).clone()).collect();
    let mut entries = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for j in 0..values[i].numel() {
            let orig = values[i].data()[j];
            values[i].data_mut()[j] = orig + FD_STEP;
            let fp = forward(&values)?;
            values[i].data_mut()[j] = orig - FD_STEP;
            let fm = forward(&values)?;
            values[i].data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            let a = analytic[i].data()[j];
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
        entries.push(GradcheckEntry {
            name: params[i].0.to_string(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
        });
    }
    Ok(GradcheckReport { entries, tolerance })
}
