//! Continuous image diffusion over small dense grids, conditioned on
//! (possibly partially masked) label maps.
//!
//! The forward process is the standard variance-preserving corruption
//! `x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps`. Denoisers
//! predict `eps` (and optionally a variance logit) from `(x_t, y, t)`; the
//! reverse sampler combines classifier-free guidance over the label
//! condition with dynamic thresholding and cross-step extrapolation of the
//! `x_0` estimate.

mod image;
mod loss;
mod mlp;
mod oracle;
mod sampler;
pub mod toy;

pub use image::ToyImage;
pub use loss::{
    hybrid_loss, hybrid_loss_grads, hybrid_loss_with_mean_from, make_train_example, train_step,
    LossReport, TrainExample, TrainOptions,
};
pub use mlp::{MlpDenoiser, MlpGrads};
pub use oracle::OracleDenoiser;
pub use sampler::{
    dynamic_threshold, respace_steps, reverse_step, sample, sample_fixed_label, Coupling,
    SamplerConfig, SamplerState, VarianceMode,
};

use std::path::Path;

use crate::error::{Error, Result};
use crate::labelmap::SemanticMap;
use crate::rng::Stream;
use crate::schedule::ImageSchedule;

/// One denoiser evaluation: the noise estimate and, for learned-variance
/// models, a per-component variance logit in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct DenoiserOutput {
    pub eps: ToyImage,
    pub var_logit: Option<ToyImage>,
}

/// A conditional noise predictor.
///
/// `y` may contain MASK cells (that is the point: conditioning on a
/// partially diffused map); an all-MASK map is the null condition for
/// classifier-free guidance.
pub trait Denoiser {
    fn predict(
        &self,
        x_t: &ToyImage,
        y: &SemanticMap,
        t: usize,
        sched: &ImageSchedule,
    ) -> Result<DenoiserOutput>;

    fn channels(&self) -> usize;
    fn num_classes(&self) -> u16;
}

/// Apply the forward corruption at step `t`; returns `(x_t, eps)` with the
/// noise drawn sequentially from `stream`.
pub fn forward_noise(
    x0: &ToyImage,
    sched: &ImageSchedule,
    t: usize,
    stream: &mut Stream,
) -> Result<(ToyImage, ToyImage)> {
    if t == 0 || t > sched.num_steps() {
        return Err(Error::argument(format!(
            "t = {t} outside 1..={}",
            sched.num_steps()
        )));
    }
    let ab = sched.alpha_bar(t);
    let (sa, sv) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut eps = ToyImage::zeros(x0.height(), x0.width(), x0.channels())?;
    let mut x_t = x0.clone();
    for k in 0..x0.values().len() {
        let e = stream.normal();
        eps.values_mut()[k] = e;
        x_t.values_mut()[k] = sa * x0.values()[k] + sv * e;
    }
    Ok((x_t, eps))
}

/// Load a denoiser artifact, dispatching on the `flavor` declared in its
/// JSON header: an oracle spec file or an MLP checkpoint.
pub fn load_denoiser(path: &Path) -> Result<Box<dyn Denoiser>> {
    let bytes = std::fs::read(path)?;
    let header_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .unwrap_or(bytes.len());
    let header: serde_json::Value = serde_json::from_slice(&bytes[..header_end])
        .or_else(|_| serde_json::from_slice(&bytes))
        .map_err(|e| Error::format(format!("denoiser header is not JSON: {e}")))?;
    match header.get("flavor").and_then(|f| f.as_str()) {
        Some("oracle") => Ok(Box::new(OracleDenoiser::from_json(
            std::str::from_utf8(&bytes)
                .map_err(|_| Error::format("oracle spec is not UTF-8"))?,
        )?)),
        Some("mlp") => Ok(Box::new(MlpDenoiser::from_bytes(&bytes)?)),
        other => Err(Error::format(format!(
            "unknown denoiser flavor {other:?}"
        ))),
    }
}
