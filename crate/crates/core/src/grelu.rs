//! Generalized multi-piecewise ReLU: identity on a central interval,
//! with n learnable linear segments on each side of it. A parameter set
//! is 4n scalars (2n breakpoints, 2n slopes) and is normally shared by
//! every channel and position of a layer.
//!
//! Segment ids run from -n to n. Segment 0 is the identity interval
//! [l_-1, l_1). Positive segment i covers [l_i, l_i+1) and negative
//! segment -i covers [l_-(i+1), l_-i), so every breakpoint belongs to the
//! segment on its right. Derivative indicator functions reuse the same
//! segment assignment, which keeps forward and backward consistent at the
//! breakpoints themselves.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Minimum breakpoint separation restored by projection after updates.
pub const EPS_GAP: f64 = 1e-6;

/// Which of the 4n scalars are trainable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LearnMode {
    /// All endpoints and slopes learn.
    All,
    /// Nothing learns; the activation is a fixed function.
    Frozen,
    /// Only the negative-side slopes learn (the PReLU regime).
    NegSlopesOnly,
}

/// One channel-shared parameter set.
///
/// Positive-side vectors are stored inner to outer: `endpoints_pos[0]`
/// is l_1 and `endpoints_pos[n-1]` is l_n. Negative-side vectors mirror
/// that: `endpoints_neg[0]` is l_-1 (the largest negative breakpoint)
/// and `endpoints_neg[n-1]` is l_-n.
#[derive(Clone, Debug, PartialEq)]
pub struct GReluParams {
    n: usize,
    endpoints_pos: Vec<f64>,
    endpoints_neg: Vec<f64>,
    slopes_pos: Vec<f64>,
    slopes_neg: Vec<f64>,
    pub learn_mode: LearnMode,
}

/// Accumulated parameter gradients, in the same layout as the parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GReluGrads {
    pub d_endpoints_pos: Vec<f64>,
    pub d_endpoints_neg: Vec<f64>,
    pub d_slopes_pos: Vec<f64>,
    pub d_slopes_neg: Vec<f64>,
}

impl GReluGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_endpoints_pos: vec![0.0; n],
            d_endpoints_neg: vec![0.0; n],
            d_slopes_pos: vec![0.0; n],
            d_slopes_neg: vec![0.0; n],
        }
    }

    pub fn all_finite(&self) -> bool {
        self.d_endpoints_pos
            .iter()
            .chain(&self.d_endpoints_neg)
            .chain(&self.d_slopes_pos)
            .chain(&self.d_slopes_neg)
            .all(|v| v.is_finite())
    }
}

impl GReluParams {
    /// Builds a parameter set from inner-to-outer vectors, validating the
    /// breakpoint ordering l_-n < ... < l_-1 < l_1 < ... < l_n.
    pub fn new(
        endpoints_neg: Vec<f64>,
        endpoints_pos: Vec<f64>,
        slopes_neg: Vec<f64>,
        slopes_pos: Vec<f64>,
        learn_mode: LearnMode,
    ) -> Result<Self> {
        let n = endpoints_pos.len();
        if n == 0 {
            return Err(Error::Config(
                "activation needs at least one segment per side".to_string(),
            ));
        }
        if endpoints_neg.len() != n || slopes_pos.len() != n || slopes_neg.len() != n {
            return Err(Error::Config(format!(
                "endpoint/slope vectors must all have length {n}"
            )));
        }
        let params = Self {
            n,
            endpoints_pos,
            endpoints_neg,
            slopes_pos,
            slopes_neg,
            learn_mode,
        };
        params.validate()?;
        Ok(params)
    }

    /// The default initialization: n = 2 with breakpoints at
    /// (-0.6, -0.2, 0.2, 0.6) and outward slopes (0.01, 0.2, 1.5, 3).
    pub fn default_init() -> Self {
        Self::new(
            vec![-0.2, -0.6],
            vec![0.2, 0.6],
            vec![0.2, 0.01],
            vec![1.5, 3.0],
            LearnMode::All,
        )
        .expect("default parameters are valid")
    }

    fn validate(&self) -> Result<()> {
        let all = self
            .endpoints_pos
            .iter()
            .chain(&self.endpoints_neg)
            .chain(&self.slopes_pos)
            .chain(&self.slopes_neg);
        for v in all {
            if !v.is_finite() {
                return Err(Error::Config("activation parameter is not finite".to_string()));
            }
        }
        let asc = self.ascending_endpoints();
        for pair in asc.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::Config(format!(
                    "breakpoints must be strictly increasing, got {:?}",
                    asc
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of learnable scalars: 4n.
    pub fn param_count(&self) -> usize {
        4 * self.n
    }

    pub fn endpoints_pos(&self) -> &[f64] {
        &self.endpoints_pos
    }

    pub fn endpoints_neg(&self) -> &[f64] {
        &self.endpoints_neg
    }

    pub fn slopes_pos(&self) -> &[f64] {
        &self.slopes_pos
    }

    pub fn slopes_neg(&self) -> &[f64] {
        &self.slopes_neg
    }

    /// Breakpoints in ascending order: l_-n, ..., l_-1, l_1, ..., l_n.
    pub fn ascending_endpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.endpoints_neg.iter().rev().cloned().collect();
        v.extend_from_slice(&self.endpoints_pos);
        v
    }

    /// Slopes matching `ascending_endpoints` order: k_-n, ..., k_-1, k_1, ..., k_n.
    pub fn ascending_slopes(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.slopes_neg.iter().rev().cloned().collect();
        v.extend_from_slice(&self.slopes_pos);
        v
    }

    /// Rebuilds the inner-to-outer vectors from ascending-order slices.
    pub fn set_from_ascending(&mut self, endpoints: &[f64], slopes: &[f64]) -> Result<()> {
        if endpoints.len() != 2 * self.n || slopes.len() != 2 * self.n {
            return Err(Error::Config(format!(
                "expected {} endpoint and slope values, got {} and {}",
                2 * self.n,
                endpoints.len(),
                slopes.len()
            )));
        }
        self.endpoints_neg = endpoints[..self.n].iter().rev().cloned().collect();
        self.endpoints_pos = endpoints[self.n..].to_vec();
        self.slopes_neg = slopes[..self.n].iter().rev().cloned().collect();
        self.slopes_pos = slopes[self.n..].to_vec();
        self.validate()
    }

    /// Anchor value and slope tables for fast forward evaluation. Entry j
    /// of the positive table is y(l_j+1); negative entries mirror that.
    fn bases(&self) -> (Vec<f64>, Vec<f64>) {
        let mut pos = vec![0.0; self.n];
        pos[0] = self.endpoints_pos[0];
        for j in 1..self.n {
            pos[j] = pos[j - 1]
                + self.slopes_pos[j - 1] * (self.endpoints_pos[j] - self.endpoints_pos[j - 1]);
        }
        let mut neg = vec![0.0; self.n];
        neg[0] = self.endpoints_neg[0];
        for j in 1..self.n {
            neg[j] = neg[j - 1]
                + self.slopes_neg[j - 1] * (self.endpoints_neg[j] - self.endpoints_neg[j - 1]);
        }
        (neg, pos)
    }

    fn forward_scalar(&self, x: f64, neg_base: &[f64], pos_base: &[f64]) -> f64 {
        match segment_of(x, self) {
            0 => x,
            s if s > 0 => {
                let j = s as usize - 1;
                pos_base[j] + self.slopes_pos[j] * (x - self.endpoints_pos[j])
            }
            s => {
                let j = (-s) as usize - 1;
                neg_base[j] + self.slopes_neg[j] * (x - self.endpoints_neg[j])
            }
        }
    }

    fn slope_at(&self, x: f64) -> f64 {
        match segment_of(x, self) {
            0 => 1.0,
            s if s > 0 => self.slopes_pos[s as usize - 1],
            s => self.slopes_neg[(-s) as usize - 1],
        }
    }
}

/// Maps a scalar to its segment id in {-n, ..., 0, ..., n}.
pub fn segment_of(x: f64, params: &GReluParams) -> isize {
    let n = params.n;
    if x >= params.endpoints_pos[0] {
        for j in (0..n).rev() {
            if x >= params.endpoints_pos[j] {
                return (j + 1) as isize;
            }
        }
        unreachable!("x >= l_1 guarantees a positive segment");
    }
    if x < params.endpoints_neg[0] {
        for j in (0..n).rev() {
            if x < params.endpoints_neg[j] {
                return -((j + 1) as isize);
            }
        }
        unreachable!("x < l_-1 guarantees a negative segment");
    }
    0
}

/// Elementwise activation. Continuous in x, identity on segment 0.
pub fn grelu_forward(x: &Tensor, params: &GReluParams) -> Tensor {
    let (neg_base, pos_base) = params.bases();
    x.map(|v| params.forward_scalar(v, &neg_base, &pos_base))
}

/// Input gradient: out_grad times the slope of each element's segment.
pub fn grelu_backward_input(x: &Tensor, params: &GReluParams, out_grad: &Tensor) -> Result<Tensor> {
    if x.shape() != out_grad.shape() {
        return Err(Error::Dimension(format!(
            "out_grad shape {:?} does not match input shape {:?}",
            out_grad.shape(),
            x.shape()
        )));
    }
    let mut out = Tensor::zeros(x.shape().to_vec());
    for ((o, &v), &g) in out.data_mut().iter_mut().zip(x.data()).zip(out_grad.data()) {
        *o = g * params.slope_at(v);
    }
    Ok(out)
}

fn accumulate_into(
    x: &[f64],
    out_grad: &[f64],
    params: &GReluParams,
    grads: &mut GReluGrads,
) {
    let lp = &params.endpoints_pos;
    let ln = &params.endpoints_neg;
    let kp = &params.slopes_pos;
    let kn = &params.slopes_neg;
    for (&v, &g) in x.iter().zip(out_grad) {
        let s = segment_of(v, params);
        if s > 0 {
            let s = s as usize;
            for i in 1..=s {
                let dk = if i == s { v - lp[i - 1] } else { lp[i] - lp[i - 1] };
                grads.d_slopes_pos[i - 1] += g * dk;
                let dl = if i == 1 { 1.0 - kp[0] } else { kp[i - 2] - kp[i - 1] };
                grads.d_endpoints_pos[i - 1] += g * dl;
            }
        } else if s < 0 {
            let s = (-s) as usize;
            for i in 1..=s {
                let dk = if i == s { v - ln[i - 1] } else { ln[i] - ln[i - 1] };
                grads.d_slopes_neg[i - 1] += g * dk;
                let dl = if i == 1 { 1.0 - kn[0] } else { kn[i - 2] - kn[i - 1] };
                grads.d_endpoints_neg[i - 1] += g * dl;
            }
        }
    }
}

/// Accumulated slope gradients: sum over every tensor position of
/// out_grad times the slope sensitivity of that position's segment.
/// Positions in the identity segment contribute nothing.
pub fn grelu_grad_slopes(x: &Tensor, params: &GReluParams, out_grad: &Tensor) -> Result<GReluGrads> {
    grelu_grads(x, params, out_grad)
}

/// Accumulated endpoint gradients; see `grelu_grad_slopes`. Both slope and
/// endpoint sums come from one pass, so the two entry points return the
/// same complete structure.
pub fn grelu_grad_endpoints(
    x: &Tensor,
    params: &GReluParams,
    out_grad: &Tensor,
) -> Result<GReluGrads> {
    grelu_grads(x, params, out_grad)
}

/// One sequential pass accumulating all 4n parameter gradients.
pub fn grelu_grads(x: &Tensor, params: &GReluParams, out_grad: &Tensor) -> Result<GReluGrads> {
    if x.shape() != out_grad.shape() {
        return Err(Error::Dimension(format!(
            "out_grad shape {:?} does not match input shape {:?}",
            out_grad.shape(),
            x.shape()
        )));
    }
    let mut grads = GReluGrads::zeros(params.n);
    accumulate_into(x.data(), out_grad.data(), params, &mut grads);
    Ok(grads)
}

/// Plain gradient step on every learnable scalar (no weight decay, ever),
/// followed by an ordering projection that restores strictly increasing
/// breakpoints with a minimum gap. Returns how many breakpoints the
/// projection had to move; every such event is also logged.
pub fn grelu_apply_update(params: &mut GReluParams, grads: &GReluGrads, lr: f64) -> usize {
    match params.learn_mode {
        LearnMode::Frozen => return 0,
        LearnMode::NegSlopesOnly => {
            for (k, d) in params.slopes_neg.iter_mut().zip(&grads.d_slopes_neg) {
                *k -= lr * d;
            }
            return 0;
        }
        LearnMode::All => {}
    }
    for (k, d) in params.slopes_pos.iter_mut().zip(&grads.d_slopes_pos) {
        *k -= lr * d;
    }
    for (k, d) in params.slopes_neg.iter_mut().zip(&grads.d_slopes_neg) {
        *k -= lr * d;
    }
    for (l, d) in params.endpoints_pos.iter_mut().zip(&grads.d_endpoints_pos) {
        *l -= lr * d;
    }
    for (l, d) in params.endpoints_neg.iter_mut().zip(&grads.d_endpoints_neg) {
        *l -= lr * d;
    }
    project_ordering(params)
}

/// Restores l_-n < ... < l_-1 < l_1 < ... < l_n with gap at least
/// `EPS_GAP`, working outward from the (fixed) innermost negative
/// breakpoint so the adjustment is minimal.
fn project_ordering(params: &mut GReluParams) -> usize {
    let mut moved = 0;
    let floor = params.endpoints_neg[0] + EPS_GAP;
    if params.endpoints_pos[0] < floor {
        params.endpoints_pos[0] = floor;
        moved += 1;
    }
    for j in 1..params.n {
        let floor = params.endpoints_pos[j - 1] + EPS_GAP;
        if params.endpoints_pos[j] < floor {
            params.endpoints_pos[j] = floor;
            moved += 1;
        }
    }
    for j in 1..params.n {
        let ceil = params.endpoints_neg[j - 1] - EPS_GAP;
        if params.endpoints_neg[j] > ceil {
            params.endpoints_neg[j] = ceil;
            moved += 1;
        }
    }
    if moved > 0 {
        log::info!("activation update violated breakpoint ordering; projected {moved} breakpoint(s)");
    }
    moved
}

/// Fixed activations the family degenerates to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DegenerateKind {
    Relu,
    LeakyRelu(f64),
    PRelu(f64),
}

/// Builds the n = 1 parameter set for a classic activation: breakpoints
/// straddle zero at half the minimum gap, the positive slope is 1, and
/// the negative slope is 0 (ReLU) or the given value.
pub fn make_degenerate(kind: DegenerateKind) -> GReluParams {
    let (neg_slope, learn_mode) = match kind {
        DegenerateKind::Relu => (0.0, LearnMode::Frozen),
        DegenerateKind::LeakyRelu(s) => (s, LearnMode::Frozen),
        DegenerateKind::PRelu(s) => (s, LearnMode::NegSlopesOnly),
    };
    GReluParams::new(
        vec![-EPS_GAP / 2.0],
        vec![EPS_GAP / 2.0],
        vec![neg_slope],
        vec![1.0],
        learn_mode,
    )
    .expect("degenerate parameters are valid")
}

/// Whether one parameter set serves every channel, or each channel owns
/// its own.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SharingMode {
    Shared,
    PerChannel,
}

/// An activation layer: one parameter set (shared mode, the default) or
/// one per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct GReluLayer {
    units: Vec<GReluParams>,
    sharing: SharingMode,
}

impl GReluLayer {
    pub fn shared(params: GReluParams) -> Self {
        Self {
            units: vec![params],
            sharing: SharingMode::Shared,
        }
    }

    pub fn per_channel(params: GReluParams, channels: usize) -> Self {
        Self {
            units: vec![params; channels.max(1)],
            sharing: SharingMode::PerChannel,
        }
    }

    /// Rebuilds a layer from explicit units (deserialization path).
    pub fn from_units(units: Vec<GReluParams>, sharing: SharingMode) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::Config(
                "an activation layer needs at least one parameter set".to_string(),
            ));
        }
        if sharing == SharingMode::Shared && units.len() != 1 {
            return Err(Error::Config(format!(
                "a shared activation layer holds exactly one parameter set, got {}",
                units.len()
            )));
        }
        Ok(Self { units, sharing })
    }

    pub fn sharing(&self) -> SharingMode {
        self.sharing
    }

    pub fn units(&self) -> &[GReluParams] {
        &self.units
    }

    pub fn units_mut(&mut self) -> &mut [GReluParams] {
        &mut self.units
    }

    pub fn param_count(&self) -> usize {
        self.units.iter().map(|u| u.param_count()).sum()
    }

    fn unit_for_channel(&self, c: usize) -> &GReluParams {
        match self.sharing {
            SharingMode::Shared => &self.units[0],
            SharingMode::PerChannel => &self.units[c],
        }
    }

    fn check_channels(&self, x: &Tensor) -> Result<usize> {
        let (_, c, _, _) = x.dims4()?;
        if self.sharing == SharingMode::PerChannel && self.units.len() != c {
            return Err(Error::Dimension(format!(
                "per-channel activation has {} parameter sets but input has {c} channels",
                self.units.len()
            )));
        }
        Ok(c)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if self.sharing == SharingMode::Shared {
            return Ok(grelu_forward(x, &self.units[0]));
        }
        let c = self.check_channels(x)?;
        let (n, _, h, w) = x.dims4()?;
        let plane = h * w;
        let mut out = Tensor::zeros(x.shape().to_vec());
        let bases: Vec<(Vec<f64>, Vec<f64>)> = self.units.iter().map(|u| u.bases()).collect();
        let data = x.data();
        let o = out.data_mut();
        for s in 0..n {
            #[allow(clippy::needless_range_loop)] // ch addresses several parallel tables
            for ch in 0..c {
                let base = (s * c + ch) * plane;
                let u = &self.units[ch];
                let (nb, pb) = &bases[ch];
                for i in base..base + plane {
                    o[i] = u.forward_scalar(data[i], nb, pb);
                }
            }
        }
        Ok(out)
    }

    pub fn backward_input(&self, x: &Tensor, out_grad: &Tensor) -> Result<Tensor> {
        if self.sharing == SharingMode::Shared {
            return grelu_backward_input(x, &self.units[0], out_grad);
        }
        if x.shape() != out_grad.shape() {
            return Err(Error::Dimension(format!(
                "out_grad shape {:?} does not match input shape {:?}",
                out_grad.shape(),
                x.shape()
            )));
        }
        let c = self.check_channels(x)?;
        let (n, _, h, w) = x.dims4()?;
        let plane = h * w;
        let mut out = Tensor::zeros(x.shape().to_vec());
        let data = x.data();
        let og = out_grad.data();
        let o = out.data_mut();
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * plane;
                let u = self.unit_for_channel(ch);
                for i in base..base + plane {
                    o[i] = og[i] * u.slope_at(data[i]);
                }
            }
        }
        Ok(out)
    }

    /// Parameter gradients, one `GReluGrads` per unit.
    pub fn grads(&self, x: &Tensor, out_grad: &Tensor) -> Result<Vec<GReluGrads>> {
        if self.sharing == SharingMode::Shared {
            return Ok(vec![grelu_grads(x, &self.units[0], out_grad)?]);
        }
        if x.shape() != out_grad.shape() {
            return Err(Error::Dimension(format!(
                "out_grad shape {:?} does not match input shape {:?}",
                out_grad.shape(),
                x.shape()
            )));
        }
        let c = self.check_channels(x)?;
        let (n, _, h, w) = x.dims4()?;
        let plane = h * w;
        let mut grads: Vec<GReluGrads> =
            self.units.iter().map(|u| GReluGrads::zeros(u.n())).collect();
        let data = x.data();
        let og = out_grad.data();
        for s in 0..n {
            #[allow(clippy::needless_range_loop)] // ch addresses several parallel tables
            for ch in 0..c {
                let base = (s * c + ch) * plane;
                accumulate_into(
                    &data[base..base + plane],
                    &og[base..base + plane],
                    &self.units[ch],
                    &mut grads[ch],
                );
            }
        }
        Ok(grads)
    }

    /// Applies one update per unit; returns the total projection count.
    pub fn apply_update(&mut self, grads: &[GReluGrads], lr: f64) -> Result<usize> {
        if grads.len() != self.units.len() {
            return Err(Error::Dimension(format!(
                "{} gradient sets for {} parameter sets",
                grads.len(),
                self.units.len()
            )));
        }
        let mut moved = 0;
        for (u, g) in self.units.iter_mut().zip(grads) {
            moved += grelu_apply_update(u, g, lr);
        }
        Ok(moved)
    }
}
