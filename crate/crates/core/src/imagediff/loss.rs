use crate::error::{Error, Result};
use crate::imagediff::toy::ToyDataSpec;
use crate::imagediff::{forward_noise, Denoiser, MlpDenoiser, MlpGrads, ToyImage};
use crate::labeldiff::diffuse_to;
use crate::labelmap::SemanticMap;
use crate::rng::Stream;
use crate::schedule::{ImageSchedule, LabelSchedule};

/// One supervised draw from the joint forward process.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub x0: ToyImage,
    pub x_t: ToyImage,
    pub eps: ToyImage,
    /// Conditioning map: the forward-diffused `y_t`, or all-MASK when the
    /// condition was dropped for classifier-free guidance training.
    pub y: SemanticMap,
    pub t: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub lr: f64,
    /// Weight on the variational term.
    pub lambda: f64,
    /// Probability of replacing the condition with all-MASK.
    pub drop_rate: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr: 0.05,
            lambda: 1e-3,
            drop_rate: 0.2,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::argument("batch_size must be positive"));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::argument(format!("bad learning rate {}", self.lr)));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::argument(format!("bad lambda {}", self.lambda)));
        }
        if !self.drop_rate.is_finite() || !(0.0..=1.0).contains(&self.drop_rate) {
            return Err(Error::argument(format!("bad drop_rate {}", self.drop_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l_simple: f64,
    pub l_vlb: f64,
    pub total: f64,
}

/// Draw one training example: sample a scene, pick `t` uniformly, diffuse
/// the labels to `y_t` (or drop them entirely), and noise the image.
pub fn make_train_example(
    spec: &ToyDataSpec,
    label_sched: &LabelSchedule,
    image_sched: &ImageSchedule,
    drop_rate: f64,
    stream: &Stream,
) -> Result<TrainExample> {
    if label_sched.num_classes() != spec.num_classes {
        return Err(Error::argument(
            "label schedule and data spec disagree on the class count",
        ));
    }
    if label_sched.num_steps() != image_sched.num_steps() {
        return Err(Error::argument(
            "label and image schedules disagree on the step count",
        ));
    }
    if !drop_rate.is_finite() || !(0.0..=1.0).contains(&drop_rate) {
        return Err(Error::argument(format!("bad drop_rate {drop_rate}")));
    }
    let y0 = spec.sample_map(&stream.fork_named("map"))?;
    let mut image_stream = stream.fork_named("image");
    let x0 = spec.sample_image(&y0, &mut image_stream)?;
    let t = 1 + stream.fork_named("t").below(label_sched.num_steps() as u64) as usize;
    let dropped = stream.fork_named("drop").uniform() < drop_rate;
    let y = if dropped {
        SemanticMap::filled(y0.height(), y0.width(), y0.num_classes(), y0.mask_value())?
    } else {
        diffuse_to(&y0, label_sched, t, &stream.fork_named("labels"))?
    };
    let mut noise_stream = stream.fork_named("noise");
    let (x_t, eps) = forward_noise(&x0, image_sched, t, &mut noise_stream)?;
    Ok(TrainExample { x0, x_t, eps, y, t })
}

struct VlbContext {
    coef_x0: f64,
    inv_sqrt_ab: f64,
    sqrt_one_minus_ab: f64,
    log_beta: f64,
    log_beta_tilde: f64,
    sigma_q_sq: f64,
}

impl VlbContext {
    fn at(sched: &ImageSchedule, t: usize) -> Self {
        let ab = sched.alpha_bar(t);
        let ab_prev = sched.alpha_bar(t - 1);
        let beta = sched.beta(t);
        let beta_tilde = sched.posterior_var_clipped(t);
        Self {
            coef_x0: ab_prev.sqrt() * beta / (1.0 - ab),
            inv_sqrt_ab: 1.0 / ab.sqrt(),
            sqrt_one_minus_ab: (1.0 - ab).sqrt(),
            log_beta: beta.ln(),
            log_beta_tilde: beta_tilde.ln(),
            sigma_q_sq: beta_tilde,
        }
    }

    /// Model variance from a logit in [-1, 1]: log-space interpolation
    /// between the clipped posterior variance and beta_t.
    fn sigma_p_sq(&self, var_logit: f64) -> f64 {
        let frac = ((var_logit + 1.0) / 2.0).clamp(0.0, 1.0);
        (frac * self.log_beta + (1.0 - frac) * self.log_beta_tilde).exp()
    }

    /// Per-component KL from the model reverse kernel to the true posterior,
    /// both taken at the same `(x_t, t)`. The means enter only through their
    /// gap, which is proportional to the x0-estimate error.
    fn kl(&self, x0_true: f64, x0_pred: f64, var_logit: Option<f64>) -> f64 {
        let dmu = self.coef_x0 * (x0_pred - x0_true);
        match var_logit {
            None => dmu * dmu / (2.0 * self.sigma_q_sq),
            Some(v) => {
                let sp = self.sigma_p_sq(v);
                0.5 * (self.sigma_q_sq / sp).ln() + (sp + dmu * dmu) / (2.0 * self.sigma_q_sq)
                    - 0.5
            }
        }
    }

    /// d KL / d var_logit (the mean path carries no gradient by design).
    fn kl_grad_var(&self, var_logit: f64) -> f64 {
        let frac = (var_logit + 1.0) / 2.0;
        if !(0.0..=1.0).contains(&frac) {
            return 0.0; // clamped flat
        }
        let sp = self.sigma_p_sq(var_logit);
        let d_kl_d_log_sp = -0.5 + sp / (2.0 * self.sigma_q_sq);
        d_kl_d_log_sp * (self.log_beta - self.log_beta_tilde) * 0.5
    }
}

fn check_example(ex: &TrainExample, sched: &ImageSchedule) -> Result<()> {
    if !ex.x0.same_shape(&ex.x_t) || !ex.x0.same_shape(&ex.eps) {
        return Err(Error::argument("example image shapes disagree"));
    }
    if ex.y.height() != ex.x0.height() || ex.y.width() != ex.x0.width() {
        return Err(Error::argument("example map and image shapes disagree"));
    }
    if ex.t == 0 || ex.t > sched.num_steps() {
        return Err(Error::argument(format!(
            "example t = {} outside 1..={}",
            ex.t,
            sched.num_steps()
        )));
    }
    Ok(())
}

/// Evaluate `L_simple + lambda * L_vlb` on a batch. Works for any denoiser;
/// model variance enters L_vlb only when the denoiser emits a logit.
pub fn hybrid_loss(
    den: &dyn Denoiser,
    examples: &[TrainExample],
    sched: &ImageSchedule,
    lambda: f64,
) -> Result<LossReport> {
    hybrid_loss_with_mean_from(den, den, examples, sched, lambda)
}

/// `hybrid_loss`, except the KL's posterior mean comes from `mean_den` while
/// `den` supplies the eps target error and the variance logit.
///
/// The backward pass stop-gradients the mean inside L_vlb, so its analytic
/// gradient is the derivative of THIS function with `mean_den` pinned at the
/// base parameters — any finite-difference check has to difference this
/// form, not `hybrid_loss`, or the frozen path shows up as a λ-sized bias.
pub fn hybrid_loss_with_mean_from(
    den: &dyn Denoiser,
    mean_den: &dyn Denoiser,
    examples: &[TrainExample],
    sched: &ImageSchedule,
    lambda: f64,
) -> Result<LossReport> {
    if examples.is_empty() {
        return Err(Error::argument("empty batch"));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::argument(format!("bad lambda {lambda}")));
    }
    let same_model = std::ptr::eq(
        den as *const dyn Denoiser as *const (),
        mean_den as *const dyn Denoiser as *const (),
    );
    let (mut simple, mut vlb) = (0.0, 0.0);
    for ex in examples {
        check_example(ex, sched)?;
        let out = den.predict(&ex.x_t, &ex.y, ex.t, sched)?;
        let mean_out = if same_model {
            None
        } else {
            Some(mean_den.predict(&ex.x_t, &ex.y, ex.t, sched)?)
        };
        let mean_eps = mean_out.as_ref().map_or(&out.eps, |o| &o.eps);
        let ctx = VlbContext::at(sched, ex.t);
        let n = ex.x_t.values().len() as f64;
        let (mut s, mut v) = (0.0, 0.0);
        for k in 0..ex.x_t.values().len() {
            let e_pred = out.eps.values()[k];
            let d = e_pred - ex.eps.values()[k];
            s += d * d;
            let x0_pred =
                (ex.x_t.values()[k] - ctx.sqrt_one_minus_ab * mean_eps.values()[k])
                    * ctx.inv_sqrt_ab;
            v += ctx.kl(
                ex.x0.values()[k],
                x0_pred,
                out.var_logit.as_ref().map(|vl| vl.values()[k]),
            );
        }
        simple += s / n;
        vlb += v / n;
    }
    let b = examples.len() as f64;
    let report = LossReport {
        l_simple: simple / b,
        l_vlb: vlb / b,
        total: simple / b + lambda * vlb / b,
    };
    if !report.total.is_finite() {
        return Err(Error::training(format!(
            "loss diverged: simple {} vlb {}",
            report.l_simple, report.l_vlb
        )));
    }
    Ok(report)
}

/// Same objective, plus parameter gradients for the MLP. The variational
/// term trains only the variance head: the mean path is stop-gradient, so
/// `eps` gradients come from `L_simple` alone.
pub fn hybrid_loss_grads(
    model: &MlpDenoiser,
    examples: &[TrainExample],
    sched: &ImageSchedule,
    lambda: f64,
) -> Result<(LossReport, MlpGrads)> {
    if examples.is_empty() {
        return Err(Error::argument("empty batch"));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::argument(format!("bad lambda {lambda}")));
    }
    let mut grads = MlpGrads::zeros_like(model);
    let b = examples.len() as f64;
    let (mut simple, mut vlb) = (0.0, 0.0);
    let chs = model.channels();
    let mut d_eps = vec![0.0; chs];
    let mut d_var = vec![0.0; chs];
    for ex in examples {
        check_example(ex, sched)?;
        if ex.x_t.channels() != chs {
            return Err(Error::argument("example channels do not match the model"));
        }
        if ex.y.num_classes() != model.num_classes() {
            return Err(Error::argument("example classes do not match the model"));
        }
        let ctx = VlbContext::at(sched, ex.t);
        let n = ex.x_t.values().len() as f64;
        let per_comp = 1.0 / (b * n);
        for i in 0..ex.x_t.height() {
            for j in 0..ex.x_t.width() {
                let base = ex.x_t.index(i, j, 0);
                let cache = model.pixel_forward(
                    &ex.x_t.values()[base..base + chs],
                    ex.y.get(i, j),
                    ex.t,
                    sched,
                );
                for ch in 0..chs {
                    let k = base + ch;
                    let e_pred = cache.eps[ch];
                    let d = e_pred - ex.eps.values()[k];
                    simple += d * d * per_comp;
                    d_eps[ch] = 2.0 * d * per_comp;
                    let x0_pred =
                        (ex.x_t.values()[k] - ctx.sqrt_one_minus_ab * e_pred) * ctx.inv_sqrt_ab;
                    let vl = cache.var_logit.as_ref().map(|v| v[ch]);
                    vlb += ctx.kl(ex.x0.values()[k], x0_pred, vl) * per_comp;
                    if let Some(v) = vl {
                        d_var[ch] = lambda * ctx.kl_grad_var(v) * per_comp;
                    }
                }
                model.pixel_backward(
                    &cache,
                    &d_eps,
                    cache.var_logit.as_ref().map(|_| d_var.as_slice()),
                    &mut grads,
                );
            }
        }
    }
    let report = LossReport {
        l_simple: simple,
        l_vlb: vlb,
        total: simple + lambda * vlb,
    };
    if !report.total.is_finite() {
        return Err(Error::training(format!(
            "loss diverged: simple {} vlb {}",
            report.l_simple, report.l_vlb
        )));
    }
    Ok((report, grads))
}

/// One plain-SGD step on a freshly drawn batch; returns the pre-update loss.
pub fn train_step(
    model: &mut MlpDenoiser,
    spec: &ToyDataSpec,
    label_sched: &LabelSchedule,
    image_sched: &ImageSchedule,
    opts: &TrainOptions,
    stream: &Stream,
) -> Result<LossReport> {
    opts.validate()?;
    let mut examples = Vec::with_capacity(opts.batch_size);
    for b in 0..opts.batch_size {
        examples.push(make_train_example(
            spec,
            label_sched,
            image_sched,
            opts.drop_rate,
            &stream.fork(&[b as u64]),
        )?);
    }
    let (report, grads) = hybrid_loss_grads(model, &examples, image_sched, opts.lambda)?;
    model.sgd_step(&grads, opts.lr)?;
    Ok(report)
}
