//! Central finite-difference checking of reverse-mode gradients.
//!
//! The numeric side only ever evaluates forward values, so it is independent
//! of every backward rule it checks.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so exact zeros compare by absolute error.
pub const REL_FLOOR: f64 = 1e-6;

/// Largest relative disagreement between the estimates at `h` and `h/2`
/// before a coordinate is treated as non-smooth.
pub const SMOOTHNESS_TOL: f64 = 1e-3;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// (input index, flat element index) of the worst relative error.
    pub worst: (usize, usize),
    pub coordinates: usize,
    /// Coordinates skipped because the difference quotient changed with the
    /// step, i.e. the probe straddled a kink such as a ReLU hinge.
    pub nonsmooth: usize,
}

impl GradCheck {
    pub fn merge(&mut self, other: &GradCheck) {
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.coordinates += other.coordinates;
        self.nonsmooth += other.nonsmooth;
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `∂f/∂inputs` from [`Graph::backward`] against central differences.
///
/// The numeric derivative is the five-point stencil at `h/2` (truncation
/// error `O(h⁴)`). Where it disagrees with the same stencil at `h` the probe
/// is repeated at `h/16` and `h/32`, which clears kinks lying between the two
/// probe widths; coordinates that still disagree are counted in `nonsmooth`
/// and not compared.
///
/// `f` builds a scalar from the given input leaves. When `max_coords` is set,
/// at most that many evenly spaced coordinates of each input are probed.
pub fn check_gradients<F>(
    inputs: &[Tensor],
    h: f64,
    max_coords: Option<usize>,
    f: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.param(x.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut report = GradCheck::default();
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let zero = Tensor::zeros(input.rows(), input.cols());
        let analytic = grads.get(vars[k]).unwrap_or(&zero);
        let n = input.len();
        let stride = match max_coords {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for idx in (0..n).step_by(stride) {
            let x0 = input.data()[idx];
            let mut quotient = |step: f64| -> Result<f64> {
                let mut at = |offset: f64| -> Result<f64> {
                    probe[k].data_mut()[idx] = x0 + offset;
                    eval(&probe)
                };
                let (f1p, f1m, f2p, f2m) =
                    (at(step)?, at(-step)?, at(2.0 * step)?, at(-2.0 * step)?);
                // Fourth-order central stencil.
                Ok((8.0 * (f1p - f1m) - (f2p - f2m)) / (12.0 * step))
            };
            let mut smooth = None;
            for step in [h, h / 16.0] {
                let coarse = quotient(step)?;
                let fine = quotient(0.5 * step)?;
                if !fine.is_finite() || !coarse.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "finite difference at input {k}[{idx}]"
                    )));
                }
                if relative_error(coarse, fine) <= SMOOTHNESS_TOL {
                    smooth = Some(fine);
                    break;
                }
            }
            probe[k].data_mut()[idx] = x0;
            let Some(numeric) = smooth else {
                report.nonsmooth += 1;
                continue;
            };
            let a = analytic.data()[idx];
            let rel = relative_error(a, numeric);
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (k, idx);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}
