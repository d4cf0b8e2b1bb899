//! Finite-difference gradient oracle and reporting.
//!
//! Every analytic gradient in this crate is validated against central
//! differences: grad_j ≈ (f(θ + h_j e_j) − f(θ − h_j e_j)) / (2 h_j)
//! with h_j = h · max(1, |θ_j|). Comparisons use a relative error with an
//! absolute floor so that near-zero gradients do not divide by zero.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grelu::{grelu_backward_input, grelu_forward, grelu_grads, GReluParams};
use crate::kernels::{softmax_xent, Mode};
use crate::net::{BackwardOptions, GcNet};
use crate::tensor::Tensor;

/// Relative error with a 1e-8 floor on the denominator.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    rel_error_floored(analytic, numeric, 1e-8)
}

/// Relative error with an explicit denominator floor. The floor sets
/// the magnitude below which coordinates are compared absolutely
/// (against the floor) instead of relatively: with floor `s` and
/// tolerance `t`, a discrepancy is flagged once it exceeds `t * s`
/// absolutely or `t` relatively, whichever binds.
pub fn rel_error_floored(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central-difference gradient of `f` at `theta`, one coordinate at a
/// time, with per-coordinate step `h * max(1, |theta_j|)`. A non-finite
/// probe value aborts with an oracle error naming the coordinate.
pub fn fd_gradient<F>(mut f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Oracle(format!("step size {h} is not usable")));
    }
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        let hj = h * theta[j].abs().max(1.0);
        probe[j] = theta[j] + hj;
        let up = f(&probe)?;
        probe[j] = theta[j] - hj;
        let down = f(&probe)?;
        probe[j] = theta[j];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Oracle(format!(
                "probe at coordinate {j} produced a non-finite value ({up} / {down})"
            )));
        }
        grad.push((up - down) / (2.0 * hj));
    }
    Ok(grad)
}

/// One named analytic/numeric gradient pair to compare.
pub struct GradProbe {
    pub name: String,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradProbe {
    pub fn new(name: impl Into<String>, analytic: Vec<f64>, numeric: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            analytic,
            numeric,
        }
    }
}

/// A single coordinate whose analytic and numeric gradients disagree
/// beyond tolerance.
#[derive(Clone, Debug)]
pub struct GradFailure {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Per-parameter summary of one gradient comparison.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub len: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
}

/// Outcome of comparing a set of gradient probes.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
    pub failures: Vec<GradFailure>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn coordinates_checked(&self) -> usize {
        self.params.iter().map(|p| p.len).sum()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    /// Human-readable table, one row per parameter.
    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<28} {:>8} {:>14} {:>8}\n",
            "parameter", "coords", "max rel err", "status"
        );
        for p in &self.params {
            let ok = p.max_rel_err <= self.tolerance;
            s.push_str(&format!(
                "{:<28} {:>8} {:>14.3e} {:>8}\n",
                p.name,
                p.len,
                p.max_rel_err,
                if ok { "ok" } else { "FAIL" }
            ));
        }
        s.push_str(&format!(
            "checked {} coordinates, tolerance {:.1e}: {}\n",
            self.coordinates_checked(),
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        for f in self.failures.iter().take(10) {
            s.push_str(&format!(
                "  {}[{}]: analytic {:.9e} vs numeric {:.9e} (rel {:.3e})\n",
                f.name, f.index, f.analytic, f.numeric, f.rel_err
            ));
        }
        s
    }

    /// Machine-readable rows: parameter,coords,max_rel_err,status.
    pub fn to_csv(&self) -> String {
        let mut s = "parameter,coords,max_rel_err,status\n".to_string();
        for p in &self.params {
            let ok = p.max_rel_err <= self.tolerance;
            s.push_str(&format!(
                "{},{},{:e},{}\n",
                p.name,
                p.len,
                p.max_rel_err,
                if ok { "ok" } else { "fail" }
            ));
        }
        s
    }
}

/// Compares analytic and numeric gradients probe by probe, with the
/// default 1e-8 denominator floor.
pub fn check_probes(probes: &[GradProbe], tolerance: f64) -> Result<GradReport> {
    check_probes_floored(probes, tolerance, 1e-8)
}

/// Compares analytic and numeric gradients probe by probe, flooring
/// the relative-error denominator at `floor` (see [`rel_error_floored`]).
pub fn check_probes_floored(
    probes: &[GradProbe],
    tolerance: f64,
    floor: f64,
) -> Result<GradReport> {
    let mut params = Vec::with_capacity(probes.len());
    let mut failures = Vec::new();
    for p in probes {
        if p.analytic.len() != p.numeric.len() {
            return Err(Error::Oracle(format!(
                "probe {} has {} analytic but {} numeric values",
                p.name,
                p.analytic.len(),
                p.numeric.len()
            )));
        }
        let mut max_rel = 0.0;
        let mut worst = 0;
        for (j, (&a, &n)) in p.analytic.iter().zip(&p.numeric).enumerate() {
            let r = rel_error_floored(a, n, floor);
            if r > max_rel {
                max_rel = r;
                worst = j;
            }
            if r > tolerance {
                failures.push(GradFailure {
                    name: p.name.clone(),
                    index: j,
                    analytic: a,
                    numeric: n,
                    rel_err: r,
                });
            }
        }
        params.push(ParamCheck {
            name: p.name.clone(),
            len: p.analytic.len(),
            max_rel_err: max_rel,
            worst_index: worst,
        });
    }
    Ok(GradReport {
        tolerance,
        params,
        failures,
    })
}

/// Draws `count` values uniformly from [lo, hi], rejecting any draw
/// within `margin` of a breakpoint (finite differences straddle kinks
/// there). Gives up after 100 attempts per value.
pub fn sample_inputs_off_breakpoints<R: Rng>(
    params: &GReluParams,
    lo: f64,
    hi: f64,
    margin: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let breakpoints = params.ascending_endpoints();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut accepted = None;
        for _ in 0..100 {
            let x = rng.gen_range(lo..hi);
            if breakpoints.iter().all(|&b| (x - b).abs() >= margin) {
                accepted = Some(x);
                break;
            }
        }
        match accepted {
            Some(x) => out.push(x),
            None => {
                return Err(Error::Oracle(format!(
                    "could not sample value {i} at least {margin} away from every breakpoint \
                     within [{lo}, {hi}] after 100 attempts"
                )))
            }
        }
    }
    Ok(out)
}

/// Checks every gradient of one piecewise activation parameter set —
/// input, breakpoints, slopes — through the scalar loss
/// `sum(weights * activation(inputs))`, against central differences.
pub fn check_grelu_unit(
    params: &GReluParams,
    inputs: &[f64],
    weights: &[f64],
    tolerance: f64,
    h: f64,
) -> Result<GradReport> {
    if inputs.len() != weights.len() {
        return Err(Error::Oracle(format!(
            "{} inputs but {} loss weights",
            inputs.len(),
            weights.len()
        )));
    }
    let xt = Tensor::new(vec![inputs.len()], inputs.to_vec())?;
    let wt = Tensor::new(vec![weights.len()], weights.to_vec())?;

    let analytic_input = grelu_backward_input(&xt, params, &wt)?;
    let grads = grelu_grads(&xt, params, &wt)?;
    let mut analytic_l: Vec<f64> = grads.d_endpoints_neg.iter().rev().cloned().collect();
    analytic_l.extend_from_slice(&grads.d_endpoints_pos);
    let mut analytic_k: Vec<f64> = grads.d_slopes_neg.iter().rev().cloned().collect();
    analytic_k.extend_from_slice(&grads.d_slopes_pos);

    let asc_l = params.ascending_endpoints();
    let asc_k = params.ascending_slopes();
    let loss_of = |l: &[f64], k: &[f64]| -> Result<f64> {
        let mut q = params.clone();
        q.set_from_ascending(l, k)?;
        let y = grelu_forward(&xt, &q);
        Ok(y.data().iter().zip(weights).map(|(v, g)| v * g).sum())
    };

    let numeric_input = fd_gradient(
        |theta| {
            let t = Tensor::new(vec![theta.len()], theta.to_vec())?;
            let y = grelu_forward(&t, params);
            Ok(y.data().iter().zip(weights).map(|(v, g)| v * g).sum())
        },
        inputs,
        h,
    )?;
    let numeric_l = fd_gradient(|l| loss_of(l, &asc_k), &asc_l, h)?;
    let numeric_k = fd_gradient(|k| loss_of(&asc_l, k), &asc_k, h)?;

    check_probes(
        &[
            GradProbe::new("input", analytic_input.into_data(), numeric_input),
            GradProbe::new("endpoints", analytic_l, numeric_l),
            GradProbe::new("slopes", analytic_k, numeric_k),
        ],
        tolerance,
    )
}

/// Denominator floor for whole-network checks. Some parameters have a
/// gradient that is structurally zero — a convolution bias feeding
/// straight into batch normalization is recentred away exactly — so
/// analytic (~1e-16) and central-difference (~1e-11, pure rounding
/// noise at h = 1e-5 on a loss of scale 1) values are both numerical
/// zeros. Comparing them to each other would manufacture failures out
/// of noise; comparing them against this gradient-scale floor still
/// flags any genuine defect of absolute size above `tolerance * floor`
/// (1e-8 at the default 1e-5 tolerance, two orders above the noise).
pub const NET_CHECK_FLOOR: f64 = 1e-3;

/// Whole-network gradient check: analytic gradients from one backward
/// pass versus central differences on every parameter, through the
/// cross-entropy loss on a fixed batch. Works on a clone; the given
/// network is untouched. Relative errors use [`NET_CHECK_FLOOR`].
pub fn check_network(
    net: &GcNet,
    input: &Tensor,
    labels: &[usize],
    tolerance: f64,
    h: f64,
) -> Result<GradReport> {
    let base = net.clone();
    let theta = base.flatten_params();
    let layout = base.param_layout();

    let mut work = base.clone();
    let (logits, cache) = work.forward(input, Mode::Train)?;
    let loss = softmax_xent(&logits, labels)?;
    let grads = work.backward(&cache, &loss.logit_grad, &BackwardOptions::default())?;
    let analytic = work.flatten_grads(&grads)?;

    let numeric = fd_gradient(
        |flat| {
            let mut probe = base.clone();
            probe.load_flat_params(flat)?;
            let (lg, _) = probe.forward(input, Mode::Train)?;
            Ok(softmax_xent(&lg, labels)?.loss)
        },
        &theta,
        h,
    )?;

    let mut probes = Vec::with_capacity(layout.len());
    let mut pos = 0;
    for spec in &layout {
        probes.push(GradProbe::new(
            spec.name.clone(),
            analytic[pos..pos + spec.len].to_vec(),
            numeric[pos..pos + spec.len].to_vec(),
        ));
        pos += spec.len;
    }
    check_probes_floored(&probes, tolerance, NET_CHECK_FLOOR)
}
