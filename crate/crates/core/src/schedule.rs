//! Masking schedules for labels and noise schedules for images.
//!
//! The label side is an absorbing process: at step `t` a still-visible cell
//! of class `c` survives with probability `1 - beta_{t,c}`, and the
//! cumulative masking probability after `t` steps is `gamma_{t,c}`. The
//! class-wise schedule shapes `gamma` from a per-class difficulty product
//! `psi*phi` (see [`crate::labelmap::ClassStats`]):
//!
//! ```text
//! gamma(t) = ((psi*phi)^(eta*r) - 1) / ((psi*phi)^eta - 1),   r = (t-1)/T
//! ```
//!
//! so frequent classes (small product) mask early and rare classes late. The
//! `r = (t-1)/T` convention pins `gamma_1 = 0`: the first step never masks,
//! and the map is fully masked only in the `t -> T, eta -> 0` corner.
//!
//! The image side is a plain variance-preserving Gaussian schedule described
//! by the cumulative retention `alpha_bar_t`.

use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fsx::atomic_write;

/// Treat a scaled product within this distance of 1 as *at* 1 (use the
/// uniform limit rather than the 0/0 closed form).
const PRODUCT_UNIT_EPS: f64 = 1e-9;

/// Above this value of `eta * ln(product)` the closed form is evaluated in
/// the log domain (`expm1` overflows near 709).
const LOG_DOMAIN_CUTOFF: f64 = 700.0;

// ---------------------------------------------------------------------------
// Sharpness parameter
// ---------------------------------------------------------------------------

/// Schedule sharpness. `Infinite` is the degenerate "never mask" end of the
/// family (`gamma == 0` everywhere), used as the no-label-diffusion baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Eta {
    Finite(f64),
    Infinite,
}

impl Eta {
    pub fn finite(value: f64) -> Result<Self> {
        if !value.is_finite() || value <= 0.0 {
            return Err(Error::argument("eta must be positive and finite"));
        }
        Ok(Eta::Finite(value))
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Eta::Infinite)
    }
}

impl std::fmt::Display for Eta {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Eta::Finite(v) => write!(f, "{v}"),
            Eta::Infinite => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for Eta {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inf" | "infinity" | "+inf" => Ok(Eta::Infinite),
            other => {
                let v: f64 = other
                    .parse()
                    .map_err(|_| Error::argument(format!("unparseable eta {other:?}")))?;
                if v.is_infinite() && v > 0.0 {
                    Ok(Eta::Infinite)
                } else {
                    Eta::finite(v)
                }
            }
        }
    }
}

impl Serialize for Eta {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Eta::Finite(v) => ser.serialize_f64(*v),
            Eta::Infinite => ser.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Eta {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Wire {
            Num(f64),
            Text(String),
        }
        match Wire::deserialize(de)? {
            Wire::Num(v) => Eta::finite(v).map_err(D::Error::custom),
            Wire::Text(s) => s.parse().map_err(D::Error::custom),
        }
    }
}

// ---------------------------------------------------------------------------
// gamma evaluation
// ---------------------------------------------------------------------------

/// Cumulative masking probability for one class at step `t` of `T`.
///
/// Requires `product > 1` (the class-wise form is undefined at 1 and
/// ill-posed below); `Eta::Infinite` returns 0 for every step. Always lies in
/// `[0, 1)` and is nondecreasing in `t`; `t = 1` gives exactly 0.
pub fn gamma_eval(product: f64, eta: Eta, t: usize, num_steps: usize) -> Result<f64> {
    if num_steps == 0 {
        return Err(Error::argument("num_steps must be at least 1"));
    }
    if t == 0 || t > num_steps {
        return Err(Error::argument(format!(
            "t = {t} outside 1..={num_steps}"
        )));
    }
    let eta = match eta {
        Eta::Infinite => return Ok(0.0),
        Eta::Finite(v) => v,
    };
    if eta.is_nan() || eta <= 0.0 {
        return Err(Error::argument("eta must be positive"));
    }
    if !product.is_finite() || product <= 1.0 {
        return Err(Error::argument(format!(
            "class-wise schedule requires product > 1, got {product}"
        )));
    }
    let r = (t - 1) as f64 / num_steps as f64;
    if r == 0.0 {
        return Ok(0.0);
    }
    let a = eta * product.ln();
    if a <= LOG_DOMAIN_CUTOFF {
        // expm1 keeps the ratio accurate for tiny a (-> r) and moderate a.
        Ok(f64::exp_m1(a * r) / f64::exp_m1(a))
    } else {
        // ln gamma = a(r-1) + ln(1 - e^{-ar}) - ln(1 - e^{-a}); the correction
        // terms are ~0 here, the leading term can underflow to -inf (gamma 0).
        let ln_gamma = a * (r - 1.0) + f64::ln_1p(-f64::exp(-a * r)) - f64::ln_1p(-f64::exp(-a));
        Ok(ln_gamma.exp())
    }
}

// ---------------------------------------------------------------------------
// Label schedule
// ---------------------------------------------------------------------------

/// How one class's masking column is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMode {
    /// Shaped by the class's ψ·φ product.
    ClassWise,
    /// `gamma = r` (the eta-independent straight line).
    Uniform,
    /// Never masked (`gamma == 0`); the no-label-diffusion baseline.
    None,
}

/// Precomputed masking table: `gamma[t-1][c]` for `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSchedule {
    num_steps: usize,
    num_classes: u16,
    eta: Eta,
    modes: Vec<ClassMode>,
    products: Vec<f64>,
    gamma: Vec<f64>,
}

impl LabelSchedule {
    pub fn num_steps(&self) -> usize {
        self.num_steps
    }
    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }
    pub fn eta(&self) -> Eta {
        self.eta
    }
    pub fn modes(&self) -> &[ClassMode] {
        &self.modes
    }
    /// ψ·φ products the table was built from (NaN for non-class-wise modes
    /// when reconstructed from a bare dump).
    pub fn products(&self) -> &[f64] {
        &self.products
    }

    /// `gamma_{t,c}`, `t` 1-based.
    #[inline]
    pub fn gamma(&self, t: usize, class: u16) -> f64 {
        debug_assert!(t >= 1 && t <= self.num_steps);
        self.gamma[(t - 1) * self.num_classes as usize + class as usize]
    }

    /// True when no class ever masks (every mode is `None`).
    pub fn is_identity(&self) -> bool {
        self.modes.iter().all(|m| *m == ClassMode::None)
    }

    /// Per-step masking probability `beta_{t,c}` recovered from the gamma
    /// table: `beta_t = 1 - (1 - gamma_t)/(1 - gamma_{t-1})`, `beta_1 = gamma_1`.
    pub fn step_beta(&self, t: usize, class: u16) -> Result<f64> {
        if t == 0 || t > self.num_steps {
            return Err(Error::argument(format!(
                "t = {t} outside 1..={}",
                self.num_steps
            )));
        }
        if class >= self.num_classes {
            return Err(Error::argument("class out of range"));
        }
        if t == 1 {
            return Ok(self.gamma(1, class));
        }
        let prev = self.gamma(t - 1, class);
        let cur = self.gamma(t, class);
        if prev >= 1.0 {
            return Err(Error::invariant(format!(
                "gamma reached 1 before the final step (t = {})",
                t - 1
            )));
        }
        Ok(1.0 - (1.0 - cur) / (1.0 - prev))
    }

    /// One-step transition matrix `Q_t` over `C+1` states (MASK last).
    pub fn transition_matrix(&self, t: usize) -> Result<TransitionMatrix> {
        let c = self.num_classes as usize;
        let mut m = TransitionMatrix::zero(c + 1);
        for class in 0..c {
            let beta = self.step_beta(t, class as u16)?;
            m.set(class, class, 1.0 - beta);
            m.set(c, class, beta);
        }
        m.set(c, c, 1.0);
        Ok(m)
    }

    /// Cumulative marginal `Q̄_t` in closed form: survive with
    /// `1 - gamma_{t,c}`, otherwise absorb into MASK.
    pub fn cumulative_marginal(&self, t: usize) -> Result<TransitionMatrix> {
        if t == 0 || t > self.num_steps {
            return Err(Error::argument(format!(
                "t = {t} outside 1..={}",
                self.num_steps
            )));
        }
        let c = self.num_classes as usize;
        let mut m = TransitionMatrix::zero(c + 1);
        for class in 0..c {
            let g = self.gamma(t, class as u16);
            m.set(class, class, 1.0 - g);
            m.set(c, class, g);
        }
        m.set(c, c, 1.0);
        Ok(m)
    }

    /// Cumulative marginal computed the slow way, as the explicit product
    /// `Q_t · Q_{t-1} ··· Q_1`. Exists to cross-check [`cumulative_marginal`]
    /// (`Self::cumulative_marginal`); the two must agree to ~1e-12.
    pub fn marginal_by_product(&self, t: usize) -> Result<TransitionMatrix> {
        if t == 0 || t > self.num_steps {
            return Err(Error::argument(format!(
                "t = {t} outside 1..={}",
                self.num_steps
            )));
        }
        let mut acc = TransitionMatrix::identity(self.num_classes as usize + 1);
        for step in 1..=t {
            acc = self.transition_matrix(step)?.matmul(&acc);
        }
        Ok(acc)
    }
}

/// Build the per-class gamma table.
///
/// Mode resolution per class: `None` when `eta` is infinite; `Uniform` when
/// the class is listed in `uniform_classes` or its scaled product sits at 1
/// (the closed form's uniform limit); otherwise `ClassWise`, which requires
/// the product to exceed 1.
pub fn build_label_schedule(
    stats: &crate::labelmap::ClassStats,
    num_steps: usize,
    eta: Eta,
    uniform_classes: &[u16],
) -> Result<LabelSchedule> {
    stats.validate()?;
    if num_steps == 0 {
        return Err(Error::argument("num_steps must be at least 1"));
    }
    if num_steps > usize::from(u16::MAX) - 1 {
        return Err(Error::argument("num_steps exceeds the u16 mask-time budget"));
    }
    if let Some(&bad) = uniform_classes.iter().find(|&&u| u >= stats.num_classes) {
        return Err(Error::argument(format!("uniform class {bad} out of range")));
    }

    let c = stats.num_classes as usize;
    let products = stats.products();
    let mut modes = Vec::with_capacity(c);
    for class in 0..c {
        let mode = if eta.is_infinite() {
            ClassMode::None
        } else if uniform_classes.contains(&(class as u16))
            || (products[class] - 1.0).abs() <= PRODUCT_UNIT_EPS
        {
            ClassMode::Uniform
        } else if products[class] > 1.0 {
            ClassMode::ClassWise
        } else {
            return Err(Error::argument(format!(
                "class {class} has product {} <= 1; class-wise schedule undefined \
                 (scale the stats or mark the class uniform)",
                products[class]
            )));
        };
        modes.push(mode);
    }

    let mut gamma = Vec::with_capacity(num_steps * c);
    for t in 1..=num_steps {
        let r = (t - 1) as f64 / num_steps as f64;
        for class in 0..c {
            let g = match modes[class] {
                ClassMode::None => 0.0,
                ClassMode::Uniform => r,
                ClassMode::ClassWise => gamma_eval(products[class], eta, t, num_steps)?,
            };
            gamma.push(g);
        }
    }

    Ok(LabelSchedule {
        num_steps,
        num_classes: stats.num_classes,
        eta,
        modes,
        products,
        gamma,
    })
}

// ---------------------------------------------------------------------------
// Transition matrices
// ---------------------------------------------------------------------------

/// A dense column-stochastic matrix over the `C+1` label states. Column `j`
/// is the distribution of the next state given current state `j`; MASK is the
/// last index and is absorbing.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn zero(dim: usize) -> Self {
        TransitionMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zero(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.dim + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.dim + col] = value;
    }

    /// `self * other` (matrix product).
    pub fn matmul(&self, other: &TransitionMatrix) -> TransitionMatrix {
        assert_eq!(self.dim, other.dim);
        let d = self.dim;
        let mut out = TransitionMatrix::zero(d);
        for i in 0..d {
            for k in 0..d {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out.data[i * d + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    /// Apply to a distribution (column vector).
    pub fn apply(&self, dist: &[f64]) -> Vec<f64> {
        assert_eq!(dist.len(), self.dim);
        let d = self.dim;
        let mut out = vec![0.0; d];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = (0..d).map(|j| self.get(i, j) * dist[j]).sum();
        }
        out
    }

    /// Largest deviation of any column sum from 1.
    pub fn max_column_defect(&self) -> f64 {
        (0..self.dim)
            .map(|j| {
                let s: f64 = (0..self.dim).map(|i| self.get(i, j)).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Largest absolute entry difference.
    pub fn max_abs_diff(&self, other: &TransitionMatrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Limit verification
// ---------------------------------------------------------------------------

/// Measured agreement with the schedule's two sharpness limits: as
/// `eta -> 0` gamma approaches the uniform line `r`, and as `eta -> inf`
/// gamma vanishes for every `t <= T`.
#[derive(Debug, Clone, Serialize)]
pub struct Prop1Report {
    pub product: f64,
    pub num_steps: usize,
    pub eta_small: f64,
    pub eta_large: f64,
    pub max_small_eta_err: f64,
    pub max_large_eta_gamma: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Probe both limits at `eta = 1e-8` and `eta = 1e4` across all steps.
pub fn verify_prop1(product: f64, num_steps: usize, tolerance: f64) -> Result<Prop1Report> {
    let eta_small = 1e-8;
    let eta_large = 1e4;
    let mut max_small = 0.0f64;
    let mut max_large = 0.0f64;
    for t in 1..=num_steps {
        let r = (t - 1) as f64 / num_steps as f64;
        let g_small = gamma_eval(product, Eta::Finite(eta_small), t, num_steps)?;
        let g_large = gamma_eval(product, Eta::Finite(eta_large), t, num_steps)?;
        max_small = max_small.max((g_small - r).abs());
        max_large = max_large.max(g_large);
    }
    Ok(Prop1Report {
        product,
        num_steps,
        eta_small,
        eta_large,
        max_small_eta_err: max_small,
        max_large_eta_gamma: max_large,
        tolerance,
        pass: max_small < tolerance && max_large < tolerance,
    })
}

// ---------------------------------------------------------------------------
// Image schedule
// ---------------------------------------------------------------------------

/// Image noise schedule family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImageScheduleKind {
    /// Per-step beta interpolated linearly from `beta_start` to `beta_end`.
    LinearBeta { beta_start: f64, beta_end: f64 },
    /// Squared-cosine cumulative retention with the usual small offset.
    Cosine { offset: f64 },
}

impl ImageScheduleKind {
    /// The linear schedule at `num_steps` equivalent to the conventional
    /// 1e-4 -> 0.02 ramp at 1000 steps (endpoints scaled by `1000/T` so the
    /// total injected noise is preserved).
    pub fn linear_analog(num_steps: usize) -> Self {
        let scale = 1000.0 / num_steps as f64;
        ImageScheduleKind::LinearBeta {
            beta_start: 1e-4 * scale,
            beta_end: 0.02 * scale,
        }
    }

    pub fn cosine_default() -> Self {
        ImageScheduleKind::Cosine { offset: 0.008 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ImageScheduleKind::LinearBeta { .. } => "linear_beta",
            ImageScheduleKind::Cosine { .. } => "cosine",
        }
    }
}

/// Gaussian forward-noise schedule: `x_t = sqrt(alpha_bar_t) x_0 +
/// sqrt(1 - alpha_bar_t) eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSchedule {
    num_steps: usize,
    kind: ImageScheduleKind,
    alpha_bar: Vec<f64>,
    betas: Vec<f64>,
    posterior_var: Vec<f64>,
}

impl ImageSchedule {
    pub fn num_steps(&self) -> usize {
        self.num_steps
    }
    pub fn kind(&self) -> ImageScheduleKind {
        self.kind
    }
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `alpha_bar_t` with the `alpha_bar_0 = 1` convention (`t` in `0..=T`).
    #[inline]
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Per-step `beta_t = 1 - alpha_bar_t / alpha_bar_{t-1}`.
    #[inline]
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// True posterior variance `beta~_t`; zero at `t = 1`.
    #[inline]
    pub fn posterior_var(&self, t: usize) -> f64 {
        self.posterior_var[t - 1]
    }

    /// Posterior variance with the `t = 1` slot replaced by the first
    /// positive value, so log-variance interpolation and KL terms stay
    /// finite at the last denoising step.
    pub fn posterior_var_clipped(&self, t: usize) -> f64 {
        if t == 1 {
            if self.num_steps >= 2 {
                self.posterior_var[1]
            } else {
                self.betas[0]
            }
        } else {
            self.posterior_var[t - 1]
        }
    }
}

/// Build an image schedule; betas must land in (0, 1) and the cumulative
/// retention must stay positive and strictly decreasing.
pub fn build_image_schedule(num_steps: usize, kind: ImageScheduleKind) -> Result<ImageSchedule> {
    if num_steps == 0 {
        return Err(Error::argument("num_steps must be at least 1"));
    }
    let betas: Vec<f64> = match kind {
        ImageScheduleKind::LinearBeta {
            beta_start,
            beta_end,
        } => {
            if !(0.0 < beta_start && beta_start < 1.0 && 0.0 < beta_end && beta_end < 1.0) {
                return Err(Error::argument(format!(
                    "beta endpoints ({beta_start}, {beta_end}) must lie in (0, 1)"
                )));
            }
            (0..num_steps)
                .map(|i| {
                    if num_steps == 1 {
                        beta_start
                    } else {
                        beta_start + (beta_end - beta_start) * i as f64 / (num_steps - 1) as f64
                    }
                })
                .collect()
        }
        ImageScheduleKind::Cosine { offset } => {
            if !offset.is_finite() || offset < 0.0 {
                return Err(Error::argument("cosine offset must be non-negative"));
            }
            let f = |u: f64| -> f64 {
                let x = (u / num_steps as f64 + offset) / (1.0 + offset)
                    * std::f64::consts::FRAC_PI_2;
                x.cos().powi(2)
            };
            let f0 = f(0.0);
            let mut prev = 1.0f64;
            (1..=num_steps)
                .map(|t| {
                    let cur = f(t as f64) / f0;
                    // Conventional cap keeps the final steps sane.
                    let beta = (1.0 - cur / prev).min(0.999);
                    prev *= 1.0 - beta;
                    beta
                })
                .collect()
        }
    };

    let mut alpha_bar = Vec::with_capacity(num_steps);
    let mut posterior_var = Vec::with_capacity(num_steps);
    let mut acc = 1.0f64;
    let mut prev_acc = 1.0f64;
    for (i, &beta) in betas.iter().enumerate() {
        if !(0.0 < beta && beta < 1.0) {
            return Err(Error::argument(format!(
                "beta_{} = {beta} outside (0, 1)",
                i + 1
            )));
        }
        acc *= 1.0 - beta;
        if acc <= 0.0 {
            return Err(Error::argument("alpha_bar underflowed to zero"));
        }
        alpha_bar.push(acc);
        posterior_var.push(beta * (1.0 - prev_acc) / (1.0 - acc));
        prev_acc = acc;
    }

    Ok(ImageSchedule {
        num_steps,
        kind,
        alpha_bar,
        betas,
        posterior_var,
    })
}

// ---------------------------------------------------------------------------
// Combined schedule artifact
// ---------------------------------------------------------------------------

/// The label table and image schedule that travel together in a `--sched`
/// artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSet {
    pub label: LabelSchedule,
    pub image: ImageSchedule,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScheduleFile {
    version: u32,
    #[serde(rename = "T")]
    num_steps: usize,
    eta: Eta,
    gamma: Vec<Vec<f64>>,
    alpha_bar: Vec<f64>,
    kind: String,
    params: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    modes: Option<Vec<ClassMode>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    products: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    code_version: Option<String>,
}

impl ScheduleSet {
    pub fn to_json_with_config(&self, config: Option<serde_json::Value>) -> Result<String> {
        let label = &self.label;
        let c = label.num_classes as usize;
        let gamma: Vec<Vec<f64>> = (1..=label.num_steps)
            .map(|t| (0..c).map(|cl| label.gamma(t, cl as u16)).collect())
            .collect();
        let params = match self.image.kind {
            ImageScheduleKind::LinearBeta {
                beta_start,
                beta_end,
            } => serde_json::json!({ "beta_start": beta_start, "beta_end": beta_end }),
            ImageScheduleKind::Cosine { offset } => serde_json::json!({ "offset": offset }),
        };
        let file = ScheduleFile {
            version: 1,
            num_steps: label.num_steps,
            eta: label.eta,
            gamma,
            alpha_bar: self.image.alpha_bar.clone(),
            kind: self.image.kind.name().to_string(),
            params,
            modes: Some(label.modes.clone()),
            products: Some(label.products.clone()),
            config,
            code_version: Some(env!("CARGO_PKG_VERSION").to_string()),
        };
        serde_json::to_string_pretty(&file)
            .map_err(|e| Error::format(format!("schedule serialization failed: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        self.to_json_with_config(None)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScheduleFile = serde_json::from_str(text)
            .map_err(|e| Error::format(format!("schedule parse failed: {e}")))?;
        if file.version != 1 {
            return Err(Error::format(format!(
                "unsupported schedule version {}",
                file.version
            )));
        }
        let t_count = file.num_steps;
        if file.gamma.len() != t_count || t_count == 0 {
            return Err(Error::format("gamma row count does not match T"));
        }
        let c = file.gamma[0].len();
        if c == 0 || c > usize::from(u16::MAX) {
            return Err(Error::format("gamma column count out of range"));
        }
        let mut flat = Vec::with_capacity(t_count * c);
        for (idx, row) in file.gamma.iter().enumerate() {
            if row.len() != c {
                return Err(Error::format(format!("ragged gamma row {idx}")));
            }
            for &g in row {
                if !(0.0..=1.0).contains(&g) {
                    return Err(Error::corruption(format!("gamma value {g} outside [0,1]")));
                }
                flat.push(g);
            }
        }
        // Monotonicity per class.
        for class in 0..c {
            for t in 1..t_count {
                if flat[t * c + class] + 1e-12 < flat[(t - 1) * c + class] {
                    return Err(Error::corruption(format!(
                        "gamma decreases for class {class} at t = {}",
                        t + 1
                    )));
                }
            }
        }

        let modes = match file.modes {
            Some(m) => {
                if m.len() != c {
                    return Err(Error::format("modes length does not match classes"));
                }
                m
            }
            None => infer_modes(&flat, t_count, c, file.eta),
        };
        let products = file.products.unwrap_or_else(|| vec![f64::NAN; c]);
        if products.len() != c {
            return Err(Error::format("products length does not match classes"));
        }

        let kind = match file.kind.as_str() {
            "linear_beta" => {
                let beta_start = read_param(&file.params, "beta_start")?;
                let beta_end = read_param(&file.params, "beta_end")?;
                ImageScheduleKind::LinearBeta {
                    beta_start,
                    beta_end,
                }
            }
            "cosine" => ImageScheduleKind::Cosine {
                offset: read_param(&file.params, "offset")?,
            },
            other => return Err(Error::format(format!("unknown schedule kind {other:?}"))),
        };
        let image = build_image_schedule(t_count, kind)?;
        if image.alpha_bar.len() != file.alpha_bar.len()
            || image
                .alpha_bar
                .iter()
                .zip(&file.alpha_bar)
                .any(|(a, b)| (a - b).abs() > 1e-9)
        {
            return Err(Error::corruption(
                "alpha_bar does not match the declared kind/params",
            ));
        }

        Ok(ScheduleSet {
            label: LabelSchedule {
                num_steps: t_count,
                num_classes: c as u16,
                eta: file.eta,
                modes,
                products,
                gamma: flat,
            },
            image,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_json()?.as_bytes())
    }
}

fn infer_modes(gamma: &[f64], t_count: usize, c: usize, eta: Eta) -> Vec<ClassMode> {
    (0..c)
        .map(|class| {
            if eta.is_infinite() {
                return ClassMode::None;
            }
            let col: Vec<f64> = (0..t_count).map(|t| gamma[t * c + class]).collect();
            if col.iter().all(|&g| g == 0.0) && t_count > 1 {
                ClassMode::None
            } else if col
                .iter()
                .enumerate()
                .all(|(i, &g)| (g - i as f64 / t_count as f64).abs() <= 1e-12)
            {
                ClassMode::Uniform
            } else {
                ClassMode::ClassWise
            }
        })
        .collect()
}

fn read_param(params: &serde_json::Value, key: &str) -> Result<f64> {
    params
        .get(key)
        .and_then(|v| v.as_f64())
        .ok_or_else(|| Error::format(format!("missing schedule param {key:?}")))
}
