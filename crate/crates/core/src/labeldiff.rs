//! Forward diffusion of label maps: absorbing-state masking, coupled
//! trajectories via first-masking times, and the score identity that lets a
//! diffused map stand in for a clean one as conditioning.
//!
//! Two equivalent ways to realize the forward process:
//!
//! * **Sequential chain** — apply the per-step transition to `y_{t-1}`
//!   ([`diffuse_step`]) or jump straight to the marginal at `t`
//!   ([`diffuse_to`]).
//! * **Coupled trajectory** — draw one uniform per cell and invert the
//!   cumulative schedule ([`sample_mask_times`]); reconstructing the map at
//!   any `t` ([`MaskTimeMatrix::reconstruct`]) then yields a *monotone*
//!   trajectory whose single-time marginals match the chain exactly.
//!
//! The coupled form is what the sampler uses by default: it never un-masks a
//! cell between adjacent steps, so conditioning changes smoothly.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::labelmap::SemanticMap;
use crate::rng::Stream;
use crate::schedule::LabelSchedule;

// ---------------------------------------------------------------------------
// Forward masking
// ---------------------------------------------------------------------------

fn check_compatible(map: &SemanticMap, sched: &LabelSchedule, t: usize) -> Result<()> {
    if map.num_classes() != sched.num_classes() {
        return Err(Error::argument(format!(
            "map has {} classes, schedule has {}",
            map.num_classes(),
            sched.num_classes()
        )));
    }
    if t == 0 || t > sched.num_steps() {
        return Err(Error::argument(format!(
            "t = {t} outside 1..={}",
            sched.num_steps()
        )));
    }
    Ok(())
}

/// One step of the absorbing chain: each visible cell of class `c` masks
/// with probability `beta_{t,c}`; MASK cells stay MASK.
///
/// Cell randomness comes from `stream.fork(&[i, j])`, so the result is
/// independent of traversal order. Distinct steps need distinct streams
/// (fork the caller's stream by `t`).
pub fn diffuse_step(
    y_prev: &SemanticMap,
    sched: &LabelSchedule,
    t: usize,
    stream: &Stream,
) -> Result<SemanticMap> {
    check_compatible(y_prev, sched, t)?;
    let mask = y_prev.mask_value();
    let mut out = y_prev.clone();
    for i in 0..y_prev.height() {
        for j in 0..y_prev.width() {
            let v = y_prev.get(i, j);
            if v == mask {
                continue;
            }
            let beta = sched.step_beta(t, v)?;
            if stream.fork(&[i as u64, j as u64]).uniform() < beta {
                out.set(i, j, mask);
            }
        }
    }
    Ok(out)
}

/// Jump to the marginal at step `t`: each clean cell of class `c` masks with
/// probability `gamma_{t,c}`.
pub fn diffuse_to(
    y0: &SemanticMap,
    sched: &LabelSchedule,
    t: usize,
    stream: &Stream,
) -> Result<SemanticMap> {
    check_compatible(y0, sched, t)?;
    let mask = y0.mask_value();
    let mut out = y0.clone();
    for i in 0..y0.height() {
        for j in 0..y0.width() {
            let v = y0.get(i, j);
            if v == mask {
                continue;
            }
            let gamma = sched.gamma(t, v);
            if stream.fork(&[i as u64, j as u64]).uniform() < gamma {
                out.set(i, j, mask);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Mask-time matrix
// ---------------------------------------------------------------------------

/// Per-cell first-masking timesteps. `NEVER` (encoded as `T + 1`) marks cells
/// that stay visible through the whole forward process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskTimeMatrix {
    height: usize,
    width: usize,
    num_steps: usize,
    times: Vec<u16>,
}

impl MaskTimeMatrix {
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    /// Sentinel for "never masked" = `T + 1`.
    pub fn never(&self) -> u16 {
        (self.num_steps + 1) as u16
    }

    #[inline]
    pub fn time(&self, i: usize, j: usize) -> u16 {
        self.times[i * self.width + j]
    }

    pub fn times(&self) -> &[u16] {
        &self.times
    }

    /// The map as it looks at step `t`: a cell is MASK iff its first-masking
    /// time is `<= t`. `t = 0` returns `y0` unchanged.
    pub fn reconstruct(&self, y0: &SemanticMap, t: usize) -> Result<SemanticMap> {
        if y0.height() != self.height || y0.width() != self.width {
            return Err(Error::argument("mask-time matrix shape mismatch"));
        }
        if t > self.num_steps {
            return Err(Error::argument(format!(
                "t = {t} outside 0..={}",
                self.num_steps
            )));
        }
        let mask = y0.mask_value();
        let mut out = y0.clone();
        for i in 0..self.height {
            for j in 0..self.width {
                if usize::from(self.time(i, j)) <= t {
                    out.set(i, j, mask);
                }
            }
        }
        Ok(out)
    }

    /// Dump as a label map with `num_classes = T + 1`, so `NEVER` lands on
    /// that map's MASK sentinel and the result serializes as ordinary `SLM1`.
    pub fn to_map(&self) -> Result<SemanticMap> {
        SemanticMap::from_cells(
            self.height,
            self.width,
            (self.num_steps + 1) as u16,
            self.times.clone(),
        )
    }

    /// Inverse of [`to_map`](Self::to_map): reads a `T+1`-class map whose
    /// cells are mask times in `1..=T+1`.
    pub fn from_map(map: &SemanticMap) -> Result<Self> {
        let num_classes = map.num_classes();
        if num_classes < 2 {
            return Err(Error::argument(
                "mask-time map needs num_classes = T + 1 >= 2",
            ));
        }
        let num_steps = usize::from(num_classes) - 1;
        if map.cells().contains(&0) {
            return Err(Error::corruption("mask time 0 is not a valid timestep"));
        }
        Ok(MaskTimeMatrix {
            height: map.height(),
            width: map.width(),
            num_steps,
            times: map.cells().to_vec(),
        })
    }
}

/// Draw the coupled trajectory: one uniform `u` per cell, first-masking time
/// `min{ t : gamma_{t,c} > u }`, `NEVER` if the schedule never climbs past
/// `u`. Cells already masked in `y0` get time 1.
pub fn sample_mask_times(
    y0: &SemanticMap,
    sched: &LabelSchedule,
    stream: &Stream,
) -> Result<MaskTimeMatrix> {
    check_compatible(y0, sched, 1)?;
    let t_count = sched.num_steps();
    let mask = y0.mask_value();
    let mut times = Vec::with_capacity(y0.cells().len());
    for i in 0..y0.height() {
        for j in 0..y0.width() {
            let v = y0.get(i, j);
            if v == mask {
                times.push(1);
                continue;
            }
            let u = stream.fork(&[i as u64, j as u64]).uniform();
            // gamma is nondecreasing in t: binary search for the first
            // step that exceeds u.
            let mut lo = 1usize;
            let mut hi = t_count + 1; // T+1 == NEVER
            if sched.gamma(t_count, v) <= u {
                lo = t_count + 1;
            } else {
                while lo < hi {
                    let mid = lo + (hi - lo) / 2;
                    if sched.gamma(mid.min(t_count), v) > u {
                        hi = mid;
                    } else {
                        lo = mid + 1;
                    }
                }
            }
            times.push(lo as u16);
        }
    }
    Ok(MaskTimeMatrix {
        height: y0.height(),
        width: y0.width(),
        num_steps: t_count,
        times,
    })
}

// ---------------------------------------------------------------------------
// Implicit classifier and the score identity
// ---------------------------------------------------------------------------

/// A linear-softmax classifier `f(x) = softmax(W x)` standing in for the
/// per-pixel label likelihood `q(y0 | x)`.
#[derive(Debug, Clone)]
pub struct ImplicitClassifier {
    num_classes: u16,
    dim: usize,
    /// Row-major `C x dim`.
    weights: Vec<f64>,
}

impl ImplicitClassifier {
    pub fn new(num_classes: u16, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if num_classes == 0 || dim == 0 {
            return Err(Error::argument("classifier needs classes and features"));
        }
        if weights.len() != num_classes as usize * dim {
            return Err(Error::argument("weight buffer has the wrong size"));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::argument("weights must be finite"));
        }
        Ok(ImplicitClassifier {
            num_classes,
            dim,
            weights,
        })
    }

    pub fn random(num_classes: u16, dim: usize, stream: &mut Stream) -> Self {
        let weights = (0..num_classes as usize * dim)
            .map(|_| stream.normal())
            .collect();
        ImplicitClassifier {
            num_classes,
            dim,
            weights,
        }
    }

    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }
    pub fn dim(&self) -> usize {
        self.dim
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let c = self.num_classes as usize;
        (0..c)
            .map(|k| {
                (0..self.dim)
                    .map(|d| self.weights[k * self.dim + d] * x[d])
                    .sum()
            })
            .collect()
    }

    /// Class probabilities `softmax(W x)`.
    pub fn probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::argument("feature vector has the wrong length"));
        }
        let logits = self.logits(x);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::numeric("softmax normalizer is not positive"));
        }
        Ok(exps.into_iter().map(|e| e / z).collect())
    }

    /// Analytic `d/dx log f_c(x) = W^T (e_c - f(x))`.
    pub fn log_prob_grad(&self, class: u16, x: &[f64]) -> Result<Vec<f64>> {
        if class >= self.num_classes {
            return Err(Error::argument("class out of range"));
        }
        let f = self.probs(x)?;
        if f[class as usize] == 0.0 {
            return Err(Error::degenerate(
                "class probability underflowed to zero; gradient of log undefined",
            ));
        }
        let c = self.num_classes as usize;
        let mut grad = vec![0.0; self.dim];
        for k in 0..c {
            let coeff = if k == class as usize { 1.0 - f[k] } else { -f[k] };
            for d in 0..self.dim {
                grad[d] += self.weights[k * self.dim + d] * coeff;
            }
        }
        Ok(grad)
    }
}

/// Measured agreement of the conditioning identity
/// `E_{y_t ~ q(.|y0)}[ d/dx log q(y_t|x) ] = (1 - gamma_t) d/dx log q(y0|x)`
/// for one classifier/point/gamma triple.
#[derive(Debug, Clone, Serialize)]
pub struct Prop2Report {
    pub gamma: f64,
    pub max_analytic_err: f64,
    pub max_fd_err: f64,
    pub tol_analytic: f64,
    pub tol_fd: f64,
    pub pass: bool,
}

/// Verify the identity for a single pixel of class `y0` at point `x`.
///
/// The left side enumerates `y_t` over every class and MASK, weighting
/// analytic gradients of `log q(y_t|x)` by the forward kernel
/// `q(y_t|y0) = {1-gamma : y0, gamma : MASK}`; the right side scales the
/// clean-label gradient. `max_fd_err` additionally compares each gradient in
/// the enumeration against central finite differences (h = 1e-5).
pub fn verify_prop2(
    classifier: &ImplicitClassifier,
    x: &[f64],
    y0: u16,
    gamma: f64,
    tol_analytic: f64,
    tol_fd: f64,
) -> Result<Prop2Report> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::argument("gamma outside [0, 1]"));
    }
    if y0 >= classifier.num_classes() {
        return Err(Error::argument("y0 out of range"));
    }
    let dim = classifier.dim();

    // q(y_t = c | x) = (1 - gamma) f_c(x) for visible classes; gamma for MASK.
    // d/dx log q(c|x) = d/dx log f_c(x); the MASK term is x-independent.
    let probs = classifier.probs(x)?;
    if probs[y0 as usize] == 0.0 {
        return Err(Error::degenerate("q(y0|x) underflowed to zero"));
    }

    let mut lhs = vec![0.0; dim];
    let mut max_fd_err = 0.0f64;
    let h = 1e-5;
    for class in 0..classifier.num_classes() {
        let weight = if class == y0 { 1.0 - gamma } else { 0.0 };
        let analytic = classifier.log_prob_grad(class, x)?;
        // Finite-difference check of d/dx log((1-gamma) f_c(x)); the constant
        // factor drops out of the difference.
        for d in 0..dim {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[d] += h;
            xm[d] -= h;
            let fp = classifier.probs(&xp)?[class as usize];
            let fm = classifier.probs(&xm)?[class as usize];
            if fp == 0.0 || fm == 0.0 {
                return Err(Error::degenerate("probability underflow in FD probe"));
            }
            let fd = (fp.ln() - fm.ln()) / (2.0 * h);
            max_fd_err = max_fd_err.max((fd - analytic[d]).abs());
        }
        if weight != 0.0 {
            for d in 0..dim {
                lhs[d] += weight * analytic[d];
            }
        }
        // Classes other than y0 have q(y_t = c | y0) = 0: no contribution.
    }
    // MASK branch: q(MASK|x) = gamma, constant in x; gradient is exactly zero,
    // contributing nothing to either side.

    let clean_grad = classifier.log_prob_grad(y0, x)?;
    let max_analytic_err = (0..dim)
        .map(|d| (lhs[d] - (1.0 - gamma) * clean_grad[d]).abs())
        .fold(0.0, f64::max);

    Ok(Prop2Report {
        gamma,
        max_analytic_err,
        max_fd_err,
        tol_analytic,
        tol_fd,
        pass: max_analytic_err < tol_analytic && max_fd_err < tol_fd,
    })
}
