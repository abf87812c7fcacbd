//! Machine-checkable verification targets behind `scdm verify` and the
//! acceptance suite. Every runner pins its tolerances, measures what it
//! saw, and reports pass/fail — callers decide what to do with a failure.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::imagediff::toy::ToyDataSpec;
use crate::imagediff::{
    hybrid_loss_grads, hybrid_loss_with_mean_from, make_train_example, Denoiser, MlpDenoiser,
    OracleDenoiser,
    ToyImage,
};
use crate::labeldiff::{sample_mask_times, verify_prop2, ImplicitClassifier};
use crate::labelmap::{ClassStats, SemanticMap};
use crate::rng::Stream;
use crate::schedule::{
    build_image_schedule, build_label_schedule, verify_prop1, Eta, ImageScheduleKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyTarget {
    Prop1,
    Prop2,
    Marginal,
    Trajectory,
    Oracle,
    Gradcheck,
}

impl VerifyTarget {
    pub const ALL: [VerifyTarget; 6] = [
        VerifyTarget::Prop1,
        VerifyTarget::Prop2,
        VerifyTarget::Marginal,
        VerifyTarget::Trajectory,
        VerifyTarget::Oracle,
        VerifyTarget::Gradcheck,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            VerifyTarget::Prop1 => "prop1",
            VerifyTarget::Prop2 => "prop2",
            VerifyTarget::Marginal => "marginal",
            VerifyTarget::Trajectory => "trajectory",
            VerifyTarget::Oracle => "oracle",
            VerifyTarget::Gradcheck => "gradcheck",
        }
    }
}

impl std::str::FromStr for VerifyTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VerifyTarget::ALL
            .iter()
            .find(|t| t.name() == s)
            .copied()
            .ok_or_else(|| Error::argument(format!("unknown verify target {s:?}")))
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum TargetOutcome {
    Prop1 {
        products: Vec<f64>,
        t_max: usize,
        tolerance: f64,
        max_err_eta_zero: f64,
        max_gamma_eta_inf: f64,
        elapsed_ms: u64,
        pass: bool,
    },
    Prop2 {
        classifiers: usize,
        gammas: Vec<f64>,
        tol_analytic: f64,
        tol_fd: f64,
        max_analytic_err: f64,
        max_fd_err: f64,
        elapsed_ms: u64,
        pass: bool,
    },
    Marginal {
        schedules: usize,
        max_t: usize,
        tolerance: f64,
        max_err: f64,
        elapsed_ms: u64,
        pass: bool,
    },
    Trajectory {
        tv_trials: usize,
        marginal_trials: usize,
        tv_bound: f64,
        tv: f64,
        max_marginal_sigma: f64,
        elapsed_ms: u64,
        pass: bool,
    },
    Oracle {
        probes: usize,
        tolerance: f64,
        max_err: f64,
        elapsed_ms: u64,
        pass: bool,
    },
    Gradcheck {
        params: usize,
        tolerance: f64,
        max_rel_err: f64,
        elapsed_ms: u64,
        pass: bool,
    },
}

impl TargetOutcome {
    pub fn pass(&self) -> bool {
        match self {
            TargetOutcome::Prop1 { pass, .. }
            | TargetOutcome::Prop2 { pass, .. }
            | TargetOutcome::Marginal { pass, .. }
            | TargetOutcome::Trajectory { pass, .. }
            | TargetOutcome::Oracle { pass, .. }
            | TargetOutcome::Gradcheck { pass, .. } => *pass,
        }
    }

    pub fn target_name(&self) -> &'static str {
        match self {
            TargetOutcome::Prop1 { .. } => "prop1",
            TargetOutcome::Prop2 { .. } => "prop2",
            TargetOutcome::Marginal { .. } => "marginal",
            TargetOutcome::Trajectory { .. } => "trajectory",
            TargetOutcome::Oracle { .. } => "oracle",
            TargetOutcome::Gradcheck { .. } => "gradcheck",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub outcomes: Vec<TargetOutcome>,
    pub pass: bool,
}

/// Limit behavior of the class-wise schedule: eta near zero recovers the
/// uniform ramp, large eta suppresses masking entirely.
pub fn run_prop1(products: &[f64], t_max: usize, tolerance: f64) -> Result<TargetOutcome> {
    let start = Instant::now();
    let mut max_zero = 0.0f64;
    let mut max_inf = 0.0f64;
    let mut pass = true;
    for &p in products {
        let r = verify_prop1(p, t_max, tolerance)?;
        max_zero = max_zero.max(r.max_small_eta_err);
        max_inf = max_inf.max(r.max_large_eta_gamma);
        pass &= r.pass;
    }
    Ok(TargetOutcome::Prop1 {
        products: products.to_vec(),
        t_max,
        tolerance,
        max_err_eta_zero: max_zero,
        max_gamma_eta_inf: max_inf,
        elapsed_ms: start.elapsed().as_millis() as u64,
        pass,
    })
}

/// The implicit-classifier gradient identity, checked analytically and by
/// finite differences over random softmax classifiers (C=3, x in R^2).
pub fn run_prop2(
    classifiers: usize,
    gammas: &[f64],
    tol_analytic: f64,
    tol_fd: f64,
    seed: u64,
) -> Result<TargetOutcome> {
    let start = Instant::now();
    if classifiers == 0 || gammas.is_empty() {
        return Err(Error::argument("nothing to check"));
    }
    let root = Stream::named(seed, "verify-prop2");
    let (mut max_analytic, mut max_fd) = (0.0f64, 0.0f64);
    let mut pass = true;
    for k in 0..classifiers {
        let case = root.fork(&[k as u64]);
        let mut weights = case.fork_named("weights");
        let clf = ImplicitClassifier::random(3, 2, &mut weights);
        let mut xs = case.fork_named("x");
        let x = [xs.normal(), xs.normal()];
        let y0 = case.fork_named("class").below(3) as u16;
        for &gamma in gammas {
            let r = verify_prop2(&clf, &x, y0, gamma, tol_analytic, tol_fd)?;
            max_analytic = max_analytic.max(r.max_analytic_err);
            max_fd = max_fd.max(r.max_fd_err);
            pass &= r.pass;
        }
    }
    Ok(TargetOutcome::Prop2 {
        classifiers,
        gammas: gammas.to_vec(),
        tol_analytic,
        tol_fd,
        max_analytic_err: max_analytic,
        max_fd_err: max_fd,
        elapsed_ms: start.elapsed().as_millis() as u64,
        pass,
    })
}

/// Closed-form cumulative marginal versus the explicit product of per-step
/// transition matrices, over randomized schedules.
pub fn run_marginal(
    schedules: usize,
    max_t: usize,
    tolerance: f64,
    seed: u64,
) -> Result<TargetOutcome> {
    let start = Instant::now();
    if schedules == 0 || max_t < 2 {
        return Err(Error::argument("need schedules and at least two steps"));
    }
    let root = Stream::named(seed, "verify-marginal");
    let mut max_err = 0.0f64;
    for k in 0..schedules {
        let mut s = root.fork(&[k as u64]);
        let c = 1 + s.below(4) as u16;
        let t_max = 2 + s.below(max_t as u64 - 1) as usize;
        let mut psi = Vec::new();
        let mut uniform = Vec::new();
        for class in 0..c {
            if s.uniform() < 0.25 {
                psi.push(1.0);
                uniform.push(class);
            } else {
                psi.push(1.1 + 200.0 * s.uniform());
            }
        }
        let stats = ClassStats {
            num_classes: c,
            psi,
            phi: vec![1.0 + 2.0 * s.uniform(); c as usize],
            phi_clamped: true,
            scale_factor: None,
            unlabeled_class: None,
        };
        let eta = if s.uniform() < 0.15 {
            Eta::Infinite
        } else {
            Eta::Finite(0.25 + 3.0 * s.uniform())
        };
        let sched = build_label_schedule(&stats, t_max, eta, &uniform)?;
        for t in 1..=t_max {
            let closed = sched.cumulative_marginal(t)?;
            let product = sched.marginal_by_product(t)?;
            max_err = max_err.max(closed.max_abs_diff(&product));
        }
    }
    let pass = max_err < tolerance;
    Ok(TargetOutcome::Marginal {
        schedules,
        max_t,
        tolerance,
        max_err,
        elapsed_ms: start.elapsed().as_millis() as u64,
        pass,
    })
}

/// Mask-time sampling versus the sequential absorbing chain on a 2x2 map:
/// joint trajectory law by total variation, per-step marginals by binomial
/// bounds.
pub fn run_trajectory(
    tv_trials: usize,
    marginal_trials: usize,
    tv_bound: f64,
    seed: u64,
) -> Result<TargetOutcome> {
    let start = Instant::now();
    let t_max = 4usize;
    let stats = ClassStats {
        num_classes: 2,
        psi: vec![2.0, 3.0],
        phi: vec![1.3, 1.1],
        phi_clamped: true,
        scale_factor: None,
        unlabeled_class: None,
    };
    let sched = build_label_schedule(&stats, t_max, Eta::Finite(1.0), &[])?;
    let y0 = SemanticMap::from_cells(2, 2, 2, vec![0, 1, 1, 0])?;

    // exact per-class mask-time law from the *step* probabilities: the
    // sequential chain masks at t with probability beta_t * prod(1 - beta_s)
    let support = t_max + 1; // mask at t in 1..=T, or never
    let mut cell_law = vec![vec![0.0; support]; 2];
    for class in 0..2u16 {
        let mut alive = 1.0;
        for t in 1..=t_max {
            let beta = sched.step_beta(t, class)?;
            cell_law[class as usize][t - 1] = alive * beta;
            alive *= 1.0 - beta;
        }
        cell_law[class as usize][t_max] = alive;
    }

    // exact joint law over the four independent cells
    let classes = [0usize, 1, 1, 0];
    let atoms = support.pow(4);
    let mut exact = vec![0.0; atoms];
    for atom in 0..atoms {
        let mut p = 1.0;
        let mut rest = atom;
        for &cls in &classes {
            p *= cell_law[cls][rest % support];
            rest /= support;
        }
        exact[atom] = p;
    }

    // empirical joint over tv_trials draws
    let root = Stream::named(seed, "verify-trajectory");
    let mut counts = vec![0u64; atoms];
    for trial in 0..tv_trials {
        let u = sample_mask_times(&y0, &sched, &root.fork(&[trial as u64]))?;
        let mut atom = 0usize;
        for cell in (0..4).rev() {
            let digit = u.times()[cell] as usize - 1; // 1..=T -> 0.., never -> T
            atom = atom * support + digit;
        }
        counts[atom] += 1;
    }
    let tv = 0.5
        * exact
            .iter()
            .zip(&counts)
            .map(|(p, &c)| (p - c as f64 / tv_trials as f64).abs())
            .sum::<f64>();

    // per-step mask marginals against gamma within 4-sigma binomial bounds
    let marg_root = Stream::named(seed, "verify-trajectory-marginal");
    let mut masked = vec![vec![0u64; 2]; t_max + 1];
    for trial in 0..marginal_trials {
        let u = sample_mask_times(&y0, &sched, &marg_root.fork(&[trial as u64]))?;
        for (cell, &cls) in classes.iter().enumerate() {
            let time = u.times()[cell] as usize;
            for t in time..=t_max {
                masked[t][cls] += 1;
            }
        }
    }
    let mut max_sigma = 0.0f64;
    let mut marginals_ok = true;
    for t in 1..=t_max {
        for class in 0..2u16 {
            let gamma = sched.gamma(t, class);
            let n = (marginal_trials * 2) as f64; // two cells per class
            let got = masked[t][class as usize] as f64 / n;
            let sd = (gamma * (1.0 - gamma) / n).sqrt();
            if sd == 0.0 {
                marginals_ok &= got == gamma;
            } else {
                let sigmas = (got - gamma).abs() / sd;
                max_sigma = max_sigma.max(sigmas);
                marginals_ok &= sigmas < 4.0;
            }
        }
    }

    let pass = tv < tv_bound && marginals_ok;
    Ok(TargetOutcome::Trajectory {
        tv_trials,
        marginal_trials,
        tv_bound,
        tv,
        max_marginal_sigma: max_sigma,
        elapsed_ms: start.elapsed().as_millis() as u64,
        pass,
    })
}

/// Simpson-rule posterior mean on one pixel, mixture prior over classes.
fn quadrature_eps(
    means: &[f64],
    prior: &[f64],
    sigma0: f64,
    x_t: f64,
    alpha_bar: f64,
    masked: bool,
    label: usize,
) -> f64 {
    let sa = alpha_bar.sqrt();
    let var_t = 1.0 - alpha_bar;
    let lo = means.iter().cloned().fold(f64::INFINITY, f64::min) - 12.0 * sigma0;
    let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 12.0 * sigma0;
    let n = 8000;
    let h = (hi - lo) / n as f64;
    let density = |x0: f64| {
        let like = (-(x_t - sa * x0) * (x_t - sa * x0) / (2.0 * var_t)).exp();
        let prior_density: f64 = if masked {
            means
                .iter()
                .zip(prior)
                .map(|(m, p)| {
                    let z = (x0 - m) / sigma0;
                    p * (-0.5 * z * z).exp()
                })
                .sum()
        } else {
            let z = (x0 - means[label]) / sigma0;
            (-0.5 * z * z).exp()
        };
        like * prior_density
    };
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..=n {
        let x0 = lo + k as f64 * h;
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let d = density(x0);
        num += w * x0 * d;
        den += w * d;
    }
    (x_t - sa * (num / den)) / var_t.sqrt()
}

/// Oracle eps prediction against numerical integration of the posterior,
/// masked and unmasked pixels alike.
pub fn run_oracle(probes: usize, tolerance: f64, seed: u64) -> Result<TargetOutcome> {
    let start = Instant::now();
    if probes == 0 {
        return Err(Error::argument("nothing to probe"));
    }
    let t_max = 50;
    let sched = build_image_schedule(t_max, ImageScheduleKind::linear_analog(t_max))?;
    let root = Stream::named(seed, "verify-oracle");
    let mut max_err = 0.0f64;
    for k in 0..probes {
        let mut s = root.fork(&[k as u64]);
        let m0 = -1.0 + 0.6 * s.uniform();
        let m1 = 0.4 + 0.6 * s.uniform();
        let sigma0 = 0.05 + 0.45 * s.uniform();
        let p0 = 0.2 + 0.6 * s.uniform();
        let spec = ToyDataSpec {
            height: 1,
            width: 1,
            channels: 1,
            num_classes: 2,
            class_means: vec![vec![m0], vec![m1]],
            sigma0,
            class_prior: vec![p0, 1.0 - p0],
            layout: Default::default(),
        };
        let den = OracleDenoiser::new(spec.clone())?;
        let t = 1 + s.below(t_max as u64) as usize;
        let x = 1.5 * s.normal();
        let x_t = ToyImage::from_values(1, 1, 1, vec![x])?;
        let masked = s.uniform() < 0.5;
        let label = s.below(2) as u16;
        let y = SemanticMap::from_cells(1, 1, 2, vec![if masked { 2 } else { label }])?;
        let got = den.predict(&x_t, &y, t, &sched)?.eps.values()[0];
        let want = quadrature_eps(
            &[m0, m1],
            den.prior(),
            sigma0,
            x,
            sched.alpha_bar(t),
            masked,
            label as usize,
        );
        max_err = max_err.max((got - want).abs());
    }
    let pass = max_err < tolerance;
    Ok(TargetOutcome::Oracle {
        probes,
        tolerance,
        max_err,
        elapsed_ms: start.elapsed().as_millis() as u64,
        pass,
    })
}

/// Analytic hybrid-loss gradients against central finite differences over
/// every parameter of a small learned-variance model.
pub fn run_gradcheck(tolerance: f64, seed: u64) -> Result<TargetOutcome> {
    let start = Instant::now();
    let spec = ToyDataSpec {
        height: 2,
        width: 2,
        channels: 1,
        num_classes: 2,
        class_means: vec![vec![-0.6], vec![0.6]],
        sigma0: 0.2,
        class_prior: Vec::new(),
        layout: Default::default(),
    };
    let t_max = 8;
    let stats = ClassStats {
        num_classes: 2,
        psi: vec![2.0, 2.0],
        phi: vec![1.5, 1.5],
        phi_clamped: true,
        scale_factor: None,
        unlabeled_class: None,
    };
    let label = build_label_schedule(&stats, t_max, Eta::Finite(1.0), &[])?;
    // the short T here needs its own ramp: the 1000-step analog scaling
    // only yields valid betas for T >= 21
    let image = build_image_schedule(
        t_max,
        ImageScheduleKind::LinearBeta {
            beta_start: 0.02,
            beta_end: 0.35,
        },
    )?;
    let mut model = MlpDenoiser::new(1, 2, 2, 3, true, &Stream::named(seed, "gc-model"))?;
    let examples: Vec<_> = (0..2)
        .map(|k| {
            make_train_example(&spec, &label, &image, 0.5, &Stream::named(seed + k, "gc-ex"))
        })
        .collect::<Result<_>>()?;
    let lambda = 1e-3;
    let (_, grads) = hybrid_loss_grads(&model, &examples, &image, lambda)?;
    // the KL mean is stop-gradient, so difference the frozen-mean form
    let base = model.clone();
    let h = 1e-4;
    let mut max_rel = 0.0f64;
    for idx in 0..model.param_count() {
        let orig = model.param(idx);
        model.set_param(idx, orig + h);
        let up = hybrid_loss_with_mean_from(&model, &base, &examples, &image, lambda)?.total;
        model.set_param(idx, orig - h);
        let down = hybrid_loss_with_mean_from(&model, &base, &examples, &image, lambda)?.total;
        model.set_param(idx, orig);
        let fd = (up - down) / (2.0 * h);
        let got = grads.get(idx);
        let rel = (fd - got).abs() / fd.abs().max(got.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
    }
    let pass = max_rel < tolerance;
    Ok(TargetOutcome::Gradcheck {
        params: model.param_count(),
        tolerance,
        max_rel_err: max_rel,
        elapsed_ms: start.elapsed().as_millis() as u64,
        pass,
    })
}

/// Run `target` with its standard configuration and tolerances.
pub fn run_target(target: VerifyTarget, seed: u64) -> Result<TargetOutcome> {
    match target {
        VerifyTarget::Prop1 => run_prop1(&[17.3, 651.3], 50, 1e-5),
        VerifyTarget::Prop2 => run_prop2(100, &[0.1, 0.5, 0.9], 1e-10, 1e-6, seed),
        VerifyTarget::Marginal => run_marginal(20, 16, 1e-12, seed),
        VerifyTarget::Trajectory => run_trajectory(1_000_000, 100_000, 0.01, seed),
        VerifyTarget::Oracle => run_oracle(50, 1e-6, seed),
        VerifyTarget::Gradcheck => run_gradcheck(1e-3, seed),
    }
}

pub fn run_all(targets: &[VerifyTarget], seed: u64) -> Result<VerifyReport> {
    if targets.is_empty() {
        return Err(Error::argument("empty verify target set"));
    }
    let mut outcomes = Vec::with_capacity(targets.len());
    for &t in targets {
        outcomes.push(run_target(t, seed)?);
    }
    let pass = outcomes.iter().all(|o| o.pass());
    Ok(VerifyReport {
        seed,
        outcomes,
        pass,
    })
}
