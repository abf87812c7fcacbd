use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagediff::{Denoiser, ToyImage};
use crate::labeldiff::{diffuse_to, sample_mask_times};
use crate::labelmap::SemanticMap;
use crate::rng::Stream;
use crate::schedule::{ImageSchedule, LabelSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// Posterior variance (the tighter choice).
    #[default]
    FixedSmall,
    /// Per-step beta.
    FixedLarge,
    /// Log-space interpolation from the denoiser's variance logit.
    Learned,
}

/// How the conditioning trajectory is drawn during sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// One mask-time draw per pixel; reconstructions across steps are
    /// consistent (a pixel, once revealed going backward, stays revealed).
    #[default]
    Coupled,
    /// Independent draw of y_t at every visited step.
    Fresh,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Number of respaced reverse steps; `None` visits every step.
    #[serde(default)]
    pub num_steps: Option<usize>,
    /// Classifier-free guidance scale `s`.
    #[serde(default)]
    pub guidance_scale: f64,
    /// Extrapolation weight `w` on the x0 estimate.
    #[serde(default)]
    pub extrapolation: f64,
    /// Dynamic-thresholding percentile in (0, 1].
    #[serde(default = "default_percentile")]
    pub percentile: f64,
    #[serde(default)]
    pub variance_mode: VarianceMode,
    #[serde(default)]
    pub coupling: Coupling,
    /// Condition the first (largest-t) visited step on the all-MASK map.
    /// Ignored for identity label schedules, where labels never diffuse.
    #[serde(default = "default_force")]
    pub force_full_mask_at_t_max: bool,
}

fn default_percentile() -> f64 {
    0.95
}

fn default_force() -> bool {
    true
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            num_steps: None,
            guidance_scale: 0.0,
            extrapolation: 0.0,
            percentile: default_percentile(),
            variance_mode: VarianceMode::default(),
            coupling: Coupling::default(),
            force_full_mask_at_t_max: default_force(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.guidance_scale.is_finite() || self.guidance_scale < 0.0 {
            return Err(Error::argument(format!(
                "bad guidance scale {}",
                self.guidance_scale
            )));
        }
        if !self.extrapolation.is_finite() || self.extrapolation < 0.0 {
            return Err(Error::argument(format!(
                "bad extrapolation weight {}",
                self.extrapolation
            )));
        }
        if !self.percentile.is_finite() || self.percentile <= 0.0 || self.percentile > 1.0 {
            return Err(Error::argument(format!(
                "percentile {} outside (0, 1]",
                self.percentile
            )));
        }
        Ok(())
    }
}

/// Evenly spaced visited steps, ascending, always ending at `t_max` and —
/// for `count >= 2` — starting at 1.
pub fn respace_steps(t_max: usize, count: usize) -> Result<Vec<usize>> {
    if t_max == 0 {
        return Err(Error::argument("schedule has no steps"));
    }
    if count == 0 || count > t_max {
        return Err(Error::argument(format!(
            "cannot visit {count} of {t_max} steps"
        )));
    }
    if count == 1 {
        return Ok(vec![t_max]);
    }
    let mut steps = Vec::with_capacity(count);
    for i in 0..count {
        let f = 1.0 + (t_max - 1) as f64 * i as f64 / (count - 1) as f64;
        steps.push(f.round() as usize);
    }
    debug_assert!(steps.windows(2).all(|w| w[0] < w[1]));
    Ok(steps)
}

/// Percentile-based clipping of the x0 estimate, in place; returns the
/// quantile. Quantile `q` of |x0| over every component of the sample; when
/// q > 1 values are clipped to [-q, q] and divided by q.
pub fn dynamic_threshold(x0: &mut ToyImage, percentile: f64) -> Result<f64> {
    if !percentile.is_finite() || percentile <= 0.0 || percentile > 1.0 {
        return Err(Error::argument(format!(
            "percentile {percentile} outside (0, 1]"
        )));
    }
    let mut mags: Vec<f64> = x0.values().iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| a.partial_cmp(b).expect("magnitudes are comparable"));
    let h = percentile * (mags.len() - 1) as f64;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let q = if lo + 1 < mags.len() {
        mags[lo] + frac * (mags[lo + 1] - mags[lo])
    } else {
        mags[lo]
    };
    if q > 1.0 {
        for v in x0.values_mut() {
            *v = v.clamp(-q, q) / q;
        }
    }
    Ok(q)
}

/// Carries the previous step's (post-threshold, post-extrapolation) x0
/// estimate between reverse steps.
#[derive(Debug, Clone, Default)]
pub struct SamplerState {
    first: bool,
    x0_prev: Option<ToyImage>,
}

impl SamplerState {
    pub fn new() -> Self {
        Self {
            first: true,
            x0_prev: None,
        }
    }
}

/// One reverse transition from `t` to `t_prev` (`t_prev = 0 finishes the
/// chain): guidance, x0 estimation, thresholding, extrapolation, then a
/// posterior draw. Returns `(x_{t_prev}, x0_tilde)`.
#[allow(clippy::too_many_arguments)]
pub fn reverse_step(
    den: &dyn Denoiser,
    x_t: &ToyImage,
    y_t: &SemanticMap,
    t: usize,
    t_prev: usize,
    sched: &ImageSchedule,
    cfg: &SamplerConfig,
    state: &mut SamplerState,
    noise: &mut Stream,
) -> Result<(ToyImage, ToyImage)> {
    cfg.validate()?;
    if t == 0 || t > sched.num_steps() || t_prev >= t {
        return Err(Error::argument(format!(
            "bad step pair t = {t}, t_prev = {t_prev}"
        )));
    }

    let cond = den.predict(x_t, y_t, t, sched)?;
    let s = cfg.guidance_scale;
    let eps_tilde = if s == 0.0 {
        cond.eps.clone()
    } else {
        let null = SemanticMap::filled(
            y_t.height(),
            y_t.width(),
            y_t.num_classes(),
            y_t.mask_value(),
        )?;
        let uncond = den.predict(x_t, &null, t, sched)?;
        let mut e = cond.eps.clone();
        for (k, v) in e.values_mut().iter_mut().enumerate() {
            let (ec, eu) = (cond.eps.values()[k], uncond.eps.values()[k]);
            *v = ec + s * (ec - eu);
        }
        e
    };

    let ab = sched.alpha_bar(t);
    let (sa, sv) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut x0 = x_t.clone();
    for (k, v) in x0.values_mut().iter_mut().enumerate() {
        *v = (x_t.values()[k] - sv * eps_tilde.values()[k]) / sa;
    }
    dynamic_threshold(&mut x0, cfg.percentile)?;

    let w = cfg.extrapolation;
    let x0_tilde = if state.first || w == 0.0 {
        x0
    } else {
        let prev = state.x0_prev.as_ref().ok_or_else(|| {
            Error::contract("extrapolation needs the previous x0 estimate after the first step")
        })?;
        if !prev.same_shape(&x0) {
            return Err(Error::contract("previous x0 estimate has the wrong shape"));
        }
        let mut e = x0.clone();
        for (k, v) in e.values_mut().iter_mut().enumerate() {
            *v = x0.values()[k] + w * (x0.values()[k] - prev.values()[k]);
        }
        e
    };

    let x_prev = if t_prev == 0 {
        x0_tilde.clone()
    } else {
        let ab_prev = sched.alpha_bar(t_prev);
        let beta_hat = 1.0 - ab / ab_prev;
        let coef_x0 = ab_prev.sqrt() * beta_hat / (1.0 - ab);
        let coef_xt = (1.0 - beta_hat).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let beta_tilde_hat = beta_hat * (1.0 - ab_prev) / (1.0 - ab);
        let fixed_sigma = match cfg.variance_mode {
            VarianceMode::FixedSmall => Some(beta_tilde_hat.sqrt()),
            VarianceMode::FixedLarge => Some(beta_hat.sqrt()),
            VarianceMode::Learned => None,
        };
        if fixed_sigma.is_none() && cond.var_logit.is_none() {
            return Err(Error::contract(
                "learned variance requested but the denoiser emits no variance logit",
            ));
        }
        let mut out = x0_tilde.clone();
        for (k, v) in out.values_mut().iter_mut().enumerate() {
            let mu = coef_x0 * x0_tilde.values()[k] + coef_xt * x_t.values()[k];
            let sigma = fixed_sigma.unwrap_or_else(|| {
                let logit = cond.var_logit.as_ref().expect("checked above").values()[k];
                let frac = ((logit + 1.0) / 2.0).clamp(0.0, 1.0);
                (frac * beta_hat.ln() + (1.0 - frac) * beta_tilde_hat.ln()).exp().sqrt()
            });
            *v = mu + sigma * noise.normal();
        }
        out
    };

    if !x_prev.is_finite() {
        return Err(Error::numeric(format!(
            "reverse step {t} -> {t_prev} produced non-finite values"
        )));
    }
    state.first = false;
    state.x0_prev = Some(x0_tilde.clone());
    Ok((x_prev, x0_tilde))
}

/// Full reverse chain conditioned on `y0` through its label-diffusion
/// trajectory. RNG layout: `"image-init"` for x_T, `"image-noise"` forked
/// by step for posterior noise, `"label-u"` for the trajectory — so the
/// image path is bit-identical across label-handling modes given one stream.
pub fn sample(
    den: &dyn Denoiser,
    y0: &SemanticMap,
    label_sched: &LabelSchedule,
    image_sched: &ImageSchedule,
    cfg: &SamplerConfig,
    stream: &Stream,
) -> Result<ToyImage> {
    if label_sched.num_steps() != image_sched.num_steps() {
        return Err(Error::argument(
            "label and image schedules disagree on the step count",
        ));
    }
    sample_impl(den, y0, Some(label_sched), image_sched, cfg, stream)
}

/// The fixed-label baseline: every step conditions on `y0` itself. This is
/// the reference the identity-schedule path must match bit for bit.
pub fn sample_fixed_label(
    den: &dyn Denoiser,
    y0: &SemanticMap,
    image_sched: &ImageSchedule,
    cfg: &SamplerConfig,
    stream: &Stream,
) -> Result<ToyImage> {
    sample_impl(den, y0, None, image_sched, cfg, stream)
}

enum LabelPlan {
    Fixed,
    Coupled(crate::labeldiff::MaskTimeMatrix),
    Fresh(Stream),
}

fn sample_impl(
    den: &dyn Denoiser,
    y0: &SemanticMap,
    label_sched: Option<&LabelSchedule>,
    image_sched: &ImageSchedule,
    cfg: &SamplerConfig,
    stream: &Stream,
) -> Result<ToyImage> {
    cfg.validate()?;
    if y0.contains_mask() {
        return Err(Error::argument("conditioning map must be MASK-free"));
    }
    let t_max = image_sched.num_steps();
    let steps = respace_steps(t_max, cfg.num_steps.unwrap_or(t_max))?;

    let diffusing = label_sched.map(|ls| !ls.is_identity()).unwrap_or(false);
    let plan = match label_sched {
        Some(ls) if diffusing => match cfg.coupling {
            Coupling::Coupled => {
                LabelPlan::Coupled(sample_mask_times(y0, ls, &stream.fork_named("label-u"))?)
            }
            Coupling::Fresh => LabelPlan::Fresh(stream.fork_named("label-u")),
        },
        _ => LabelPlan::Fixed,
    };

    let mut init = stream.fork_named("image-init");
    let mut x = ToyImage::zeros(y0.height(), y0.width(), den.channels())?;
    for v in x.values_mut() {
        *v = init.normal();
    }

    let noise_root = stream.fork_named("image-noise");
    let mut state = SamplerState::new();
    for idx in (0..steps.len()).rev() {
        let t = steps[idx];
        let t_prev = if idx > 0 { steps[idx - 1] } else { 0 };
        let forced = cfg.force_full_mask_at_t_max && diffusing && idx == steps.len() - 1;
        let y_t = if forced {
            SemanticMap::filled(y0.height(), y0.width(), y0.num_classes(), y0.mask_value())?
        } else {
            match &plan {
                LabelPlan::Fixed => y0.clone(),
                LabelPlan::Coupled(times) => times.reconstruct(y0, t)?,
                LabelPlan::Fresh(root) => diffuse_to(
                    y0,
                    label_sched.expect("fresh plan implies a schedule"),
                    t,
                    &root.fork(&[t as u64]),
                )?,
            }
        };
        let mut noise = noise_root.fork(&[t as u64]);
        let (next, _) = reverse_step(
            den,
            &x,
            &y_t,
            t,
            t_prev,
            image_sched,
            cfg,
            &mut state,
            &mut noise,
        )?;
        x = next;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagediff::toy::{two_class_demo_spec, ToyDataSpec};
    use crate::imagediff::{MlpDenoiser, OracleDenoiser};
    use crate::labelmap::ClassStats;
    use crate::schedule::{
        build_image_schedule, build_label_schedule, Eta, ImageScheduleKind,
    };

    fn stats2() -> ClassStats {
        ClassStats {
            num_classes: 2,
            psi: vec![2.0, 2.5],
            phi: vec![1.5, 1.2],
            phi_clamped: true,
            scale_factor: None,
            unlabeled_class: None,
        }
    }

    fn scheds(t_max: usize, eta: Eta) -> (LabelSchedule, ImageSchedule) {
        (
            build_label_schedule(&stats2(), t_max, eta, &[]).unwrap(),
            build_image_schedule(
                t_max,
                ImageScheduleKind::LinearBeta {
                    beta_start: 0.02,
                    beta_end: 0.35,
                },
            )
            .unwrap(),
        )
    }

    fn checker_map(spec: &ToyDataSpec) -> SemanticMap {
        let mut m = SemanticMap::filled(spec.height, spec.width, spec.num_classes, 0).unwrap();
        for i in 0..spec.height {
            for j in 0..spec.width {
                m.set(i, j, ((i + j) % 2) as u16);
            }
        }
        m
    }

    #[test]
    fn respacing_shapes() {
        assert_eq!(respace_steps(50, 1).unwrap(), vec![50]);
        let s = respace_steps(50, 25).unwrap();
        assert_eq!(s.len(), 25);
        assert_eq!(s[0], 1);
        assert_eq!(*s.last().unwrap(), 50);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(respace_steps(4, 4).unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(respace_steps(4, 3).unwrap(), vec![1, 3, 4]);
        assert!(respace_steps(4, 0).is_err());
        assert!(respace_steps(4, 5).is_err());
    }

    #[test]
    fn thresholding_branches() {
        let mut img = ToyImage::from_values(1, 4, 1, vec![0.2, -0.5, 0.9, -0.1]).unwrap();
        let before = img.values().to_vec();
        let q = dynamic_threshold(&mut img, 0.95).unwrap();
        assert!(q <= 1.0);
        assert_eq!(img.values(), &before[..], "q <= 1 must be identity");

        let mut img = ToyImage::from_values(1, 3, 1, vec![0.5, -2.0, 4.0]).unwrap();
        let q = dynamic_threshold(&mut img, 1.0).unwrap();
        assert_eq!(q, 4.0);
        assert_eq!(img.values(), &[0.125, -0.5, 1.0]);

        // interpolated quantile: |values| = [0,1,2,3], p=0.5 -> 1.5
        let mut img = ToyImage::from_values(1, 4, 1, vec![0.0, -1.0, 2.0, -3.0]).unwrap();
        let q = dynamic_threshold(&mut img, 0.5).unwrap();
        assert!((q - 1.5).abs() < 1e-12);
        assert_eq!(img.values(), &[0.0, -1.0 / 1.5, 1.0, -1.0]);

        assert!(dynamic_threshold(&mut img, 0.0).is_err());
        assert!(dynamic_threshold(&mut img, 1.1).is_err());
    }

    #[test]
    fn one_step_with_exact_oracle_returns_class_means() {
        let spec = two_class_demo_spec(3, 3, 0.0);
        let den = OracleDenoiser::new(spec.clone()).unwrap();
        let (label, image) = scheds(1, Eta::Finite(1.0));
        let y0 = checker_map(&spec);
        let cfg = SamplerConfig {
            force_full_mask_at_t_max: false,
            ..SamplerConfig::default()
        };
        let out = sample(&den, &y0, &label, &image, &cfg, &Stream::named(3, "one")).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = spec.class_means[y0.get(i, j) as usize][0];
                assert!(
                    (out.get(i, j, 0) - want).abs() < 1e-12,
                    "pixel ({i},{j}): {} vs {want}",
                    out.get(i, j, 0)
                );
            }
        }
    }

    #[test]
    fn guidance_is_affine_in_s() {
        // Scaled down far enough that the dynamic threshold never clips
        // (it is the one nonlinearity between eps and the returned x0).
        let mut spec = two_class_demo_spec(2, 2, 0.02);
        spec.class_means = vec![vec![-0.06], vec![0.06]];
        let den = OracleDenoiser::new(spec.clone()).unwrap();
        let (_, image) = scheds(10, Eta::Finite(1.0));
        let y = checker_map(&spec);
        let x_t = ToyImage::from_values(2, 2, 1, vec![0.03, -0.02, 0.01, 0.005]).unwrap();
        let run = |s: f64| {
            let cfg = SamplerConfig {
                guidance_scale: s,
                ..SamplerConfig::default()
            };
            let mut state = SamplerState::new();
            let mut noise = Stream::named(0, "unused");
            // t_prev = 0 keeps the step noise-free and returns x0 directly
            reverse_step(&den, &x_t, &y, 4, 0, &image, &cfg, &mut state, &mut noise)
                .unwrap()
                .0
        };
        let (a, b, c) = (run(0.0), run(1.0), run(2.0));
        for img in [&a, &b, &c] {
            assert!(img.values().iter().all(|v| v.abs() < 1.0), "clip engaged");
        }
        for k in 0..4 {
            let d1 = b.values()[k] - a.values()[k];
            let d2 = c.values()[k] - b.values()[k];
            assert!((d1 - d2).abs() < 1e-12, "component {k} not affine");
        }
    }

    #[test]
    fn extrapolation_state_contract() {
        let spec = two_class_demo_spec(2, 2, 0.2);
        let den = OracleDenoiser::new(spec.clone()).unwrap();
        let (_, image) = scheds(10, Eta::Finite(1.0));
        let y = checker_map(&spec);
        let x_t = ToyImage::zeros(2, 2, 1).unwrap();
        let cfg = SamplerConfig {
            extrapolation: 0.8,
            ..SamplerConfig::default()
        };
        let mut noise = Stream::named(1, "noise");

        // first step: extrapolation silently skipped
        let mut state = SamplerState::new();
        assert!(
            reverse_step(&den, &x_t, &y, 9, 5, &image, &cfg, &mut state, &mut noise).is_ok()
        );

        // non-first step with missing history: contract error
        let mut broken = SamplerState::new();
        broken.first = false;
        let err =
            reverse_step(&den, &x_t, &y, 9, 5, &image, &cfg, &mut broken, &mut noise).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn sampling_is_deterministic_and_seed_sensitive() {
        let spec = two_class_demo_spec(4, 4, 0.1);
        let den = OracleDenoiser::new(spec.clone()).unwrap();
        let (label, image) = scheds(12, Eta::Finite(1.0));
        let y0 = checker_map(&spec);
        let cfg = SamplerConfig {
            num_steps: Some(6),
            guidance_scale: 0.5,
            extrapolation: 0.8,
            ..SamplerConfig::default()
        };
        let a = sample(&den, &y0, &label, &image, &cfg, &Stream::named(7, "s")).unwrap();
        let b = sample(&den, &y0, &label, &image, &cfg, &Stream::named(7, "s")).unwrap();
        assert_eq!(a.to_sim1().unwrap(), b.to_sim1().unwrap());
        let c = sample(&den, &y0, &label, &image, &cfg, &Stream::named(8, "s")).unwrap();
        assert_ne!(a.to_sim1().unwrap(), c.to_sim1().unwrap());
    }

    #[test]
    fn identity_schedule_matches_fixed_label_sampler_bitwise() {
        let spec = two_class_demo_spec(4, 4, 0.1);
        let den = OracleDenoiser::new(spec.clone()).unwrap();
        let (label, image) = scheds(10, Eta::Infinite);
        assert!(label.is_identity());
        let y0 = checker_map(&spec);
        let cfg = SamplerConfig {
            num_steps: Some(5),
            guidance_scale: 0.5,
            ..SamplerConfig::default()
        };
        let via_schedule =
            sample(&den, &y0, &label, &image, &cfg, &Stream::named(2, "base")).unwrap();
        let direct =
            sample_fixed_label(&den, &y0, &image, &cfg, &Stream::named(2, "base")).unwrap();
        assert_eq!(
            via_schedule.to_sim1().unwrap(),
            direct.to_sim1().unwrap()
        );
    }

    #[test]
    fn force_full_mask_changes_diffusing_runs_only() {
        let spec = two_class_demo_spec(4, 4, 0.1);
        let den = OracleDenoiser::new(spec.clone()).unwrap();
        let y0 = checker_map(&spec);
        let run = |eta: Eta, force: bool| {
            let (label, image) = scheds(10, eta);
            let cfg = SamplerConfig {
                num_steps: Some(5),
                force_full_mask_at_t_max: force,
                ..SamplerConfig::default()
            };
            sample(&den, &y0, &label, &image, &cfg, &Stream::named(4, "f"))
                .unwrap()
                .to_sim1()
                .unwrap()
        };
        assert_ne!(run(Eta::Finite(1.0), true), run(Eta::Finite(1.0), false));
        assert_eq!(run(Eta::Infinite, true), run(Eta::Infinite, false));
    }

    #[test]
    fn extrapolation_weight_zero_is_a_no_op() {
        let spec = two_class_demo_spec(4, 4, 0.1);
        let den = OracleDenoiser::new(spec.clone()).unwrap();
        let (label, image) = scheds(10, Eta::Finite(1.0));
        let y0 = checker_map(&spec);
        let base = SamplerConfig {
            num_steps: Some(5),
            ..SamplerConfig::default()
        };
        let with_zero = SamplerConfig {
            extrapolation: 0.0,
            ..base.clone()
        };
        let with_weight = SamplerConfig {
            extrapolation: 0.8,
            ..base.clone()
        };
        let s = Stream::named(6, "w");
        let a = sample(&den, &y0, &label, &image, &base, &s).unwrap();
        let b = sample(&den, &y0, &label, &image, &with_zero, &s).unwrap();
        let c = sample(&den, &y0, &label, &image, &with_weight, &s).unwrap();
        assert_eq!(a.to_sim1().unwrap(), b.to_sim1().unwrap());
        assert_ne!(a.to_sim1().unwrap(), c.to_sim1().unwrap());
    }

    #[test]
    fn final_step_draws_no_noise() {
        let spec = two_class_demo_spec(2, 2, 0.2);
        let den = OracleDenoiser::new(spec.clone()).unwrap();
        let (_, image) = scheds(8, Eta::Finite(1.0));
        let y = checker_map(&spec);
        let x_t = ToyImage::from_values(2, 2, 1, vec![0.2, -0.4, 0.6, 0.0]).unwrap();
        let cfg = SamplerConfig::default();
        let go = |seed: u64| {
            let mut state = SamplerState::new();
            let mut noise = Stream::named(seed, "n");
            reverse_step(&den, &x_t, &y, 3, 0, &image, &cfg, &mut state, &mut noise)
                .unwrap()
                .0
        };
        assert_eq!(go(1).values(), go(2).values());
    }

    #[test]
    fn variance_modes_differ_and_learned_needs_logits() {
        let spec = two_class_demo_spec(4, 4, 0.1);
        let oracle = OracleDenoiser::new(spec.clone()).unwrap();
        let (label, image) = scheds(10, Eta::Finite(1.0));
        let y0 = checker_map(&spec);
        let cfg = |mode: VarianceMode| SamplerConfig {
            num_steps: Some(5),
            variance_mode: mode,
            ..SamplerConfig::default()
        };
        let s = Stream::named(9, "v");
        let small = sample(&oracle, &y0, &label, &image, &cfg(VarianceMode::FixedSmall), &s)
            .unwrap();
        let large = sample(&oracle, &y0, &label, &image, &cfg(VarianceMode::FixedLarge), &s)
            .unwrap();
        assert_ne!(small.to_sim1().unwrap(), large.to_sim1().unwrap());

        let err = sample(&oracle, &y0, &label, &image, &cfg(VarianceMode::Learned), &s)
            .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));

        let mlp = MlpDenoiser::new(1, 2, 3, 4, true, &Stream::named(0, "m")).unwrap();
        assert!(sample(&mlp, &y0, &label, &image, &cfg(VarianceMode::Learned), &s).is_ok());
    }

    #[test]
    fn coupled_and_fresh_modes_both_run_but_differ() {
        let spec = two_class_demo_spec(4, 4, 0.1);
        let den = OracleDenoiser::new(spec.clone()).unwrap();
        let (label, image) = scheds(10, Eta::Finite(1.0));
        let y0 = checker_map(&spec);
        let cfg = |c: Coupling| SamplerConfig {
            num_steps: Some(5),
            coupling: c,
            force_full_mask_at_t_max: false,
            ..SamplerConfig::default()
        };
        let s = Stream::named(11, "c");
        let a = sample(&den, &y0, &label, &image, &cfg(Coupling::Coupled), &s).unwrap();
        let b = sample(&den, &y0, &label, &image, &cfg(Coupling::Fresh), &s).unwrap();
        assert_ne!(a.to_sim1().unwrap(), b.to_sim1().unwrap());
    }

    #[test]
    fn masked_conditioning_map_is_rejected() {
        let spec = two_class_demo_spec(2, 2, 0.1);
        let den = OracleDenoiser::new(spec.clone()).unwrap();
        let (label, image) = scheds(4, Eta::Finite(1.0));
        let y = SemanticMap::from_cells(2, 2, 2, vec![0, 1, 2, 0]).unwrap();
        let err = sample(&den, &y, &label, &image, &SamplerConfig::default(), &Stream::named(0, "r"))
            .unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }
}
