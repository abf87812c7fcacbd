//! Release gate. Runs ten numbered checks, prints exactly one pass/fail
//! line per check, and exits nonzero if any fail. Tolerances and runtime
//! budgets are pinned here, not configurable.
//!
//! Run directly for the full printout:
//!
//! ```text
//! cargo test --test acceptance
//! ```

use std::time::Instant;

use scdm_core::ablate::{run_ablation, run_robustness, AblateConfig, Method};
use scdm_core::corrupt::{corrupt_ds, corrupt_edge, corrupt_random, CorruptionMode};
use scdm_core::imagediff::toy::{two_class_demo_spec, MapLayout, ToyDataSpec};
use scdm_core::imagediff::{
    hybrid_loss, make_train_example, sample, sample_fixed_label, MlpDenoiser, OracleDenoiser,
    SamplerConfig, ToyImage,
};
use scdm_core::labelmap::{ClassStats, SemanticMap};
use scdm_core::rng::Stream;
use scdm_core::schedule::{build_image_schedule, build_label_schedule, Eta, ImageScheduleKind};
use scdm_core::verify::{
    run_gradcheck, run_marginal, run_prop1, run_prop2, run_trajectory, TargetOutcome,
};

const SEED: u64 = 2024;

type Check = fn() -> Result<String, String>;

fn main() {
    let checks: [(&str, Check); 10] = [
        ("label-schedule limits (prop1)", c1_schedule_limits),
        ("implicit-classifier scaling (prop2)", c2_classifier_scaling),
        ("closed-form marginals", c3_marginals),
        ("trajectory representation", c4_trajectory),
        ("hybrid-loss sanity", c5_hybrid_loss),
        ("sampler correctness", c6_sampler),
        ("robustness direction", c7_robustness),
        ("ablation structure", c8_ablation),
        ("corruption generators", c9_corruptions),
        ("format round-trips", c10_formats),
    ];
    let mut failures = 0;
    for (idx, (name, check)) in checks.iter().enumerate() {
        match check() {
            Ok(detail) => println!("[{:>2}/10] pass  {name}: {detail}", idx + 1),
            Err(why) => {
                failures += 1;
                println!("[{:>2}/10] FAIL  {name}: {why}", idx + 1);
            }
        }
    }
    if failures > 0 {
        println!("acceptance: {failures} of 10 checks failed");
        std::process::exit(1);
    }
    println!("acceptance: all 10 checks passed");
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn budget(elapsed: std::time::Duration, limit_s: f64, what: &str) -> Result<(), String> {
    if elapsed.as_secs_f64() > limit_s {
        return Err(format!(
            "{what} took {:.1} s, budget is {limit_s} s",
            elapsed.as_secs_f64()
        ));
    }
    Ok(())
}

/// Two-class stats with products comfortably above 1, shared by the checks
/// that need any valid class-wise schedule.
fn stats2() -> ClassStats {
    ClassStats {
        num_classes: 2,
        psi: vec![2.0, 3.0],
        phi: vec![1.2, 1.0],
        phi_clamped: true,
        scale_factor: None,
        unlabeled_class: None,
    }
}

fn c1_schedule_limits() -> Result<String, String> {
    let start = Instant::now();
    let outcome = run_prop1(&[17.3, 651.3], 50, 1e-5).map_err(err)?;
    budget(start.elapsed(), 1.0, "prop1")?;
    match outcome {
        TargetOutcome::Prop1 {
            max_err_eta_zero,
            max_gamma_eta_inf,
            pass,
            ..
        } => {
            if !pass {
                return Err(format!(
                    "limits violated: max|gamma - r| = {max_err_eta_zero:.3e} at eta=1e-8, \
                     max gamma = {max_gamma_eta_inf:.3e} at eta=1e4 (tol 1e-5)"
                ));
            }
            Ok(format!(
                "products {{17.3, 651.3}}, T=50: max|gamma - r| = {max_err_eta_zero:.2e}, \
                 max residual gamma = {max_gamma_eta_inf:.2e} (tol 1e-5)"
            ))
        }
        other => Err(format!("unexpected outcome {other:?}")),
    }
}

fn c2_classifier_scaling() -> Result<String, String> {
    let start = Instant::now();
    let outcome = run_prop2(100, &[0.1, 0.5, 0.9], 1e-10, 1e-6, SEED).map_err(err)?;
    budget(start.elapsed(), 5.0, "prop2")?;
    match outcome {
        TargetOutcome::Prop2 {
            max_analytic_err,
            max_fd_err,
            pass,
            ..
        } => {
            if !pass {
                return Err(format!(
                    "identity violated: analytic {max_analytic_err:.3e} (tol 1e-10), \
                     finite-difference {max_fd_err:.3e} (tol 1e-6)"
                ));
            }
            Ok(format!(
                "100 classifiers, gamma in {{0.1, 0.5, 0.9}}: analytic {max_analytic_err:.2e} \
                 (tol 1e-10), finite-difference {max_fd_err:.2e} (tol 1e-6)"
            ))
        }
        other => Err(format!("unexpected outcome {other:?}")),
    }
}

fn c3_marginals() -> Result<String, String> {
    let outcome = run_marginal(20, 16, 1e-12, SEED).map_err(err)?;
    match outcome {
        TargetOutcome::Marginal { max_err, pass, .. } => {
            if !pass {
                return Err(format!(
                    "cumulative marginal vs Q-product differ by {max_err:.3e} (tol 1e-12)"
                ));
            }
            Ok(format!(
                "20 random schedules, T <= 16: max entry error {max_err:.2e} (tol 1e-12)"
            ))
        }
        other => Err(format!("unexpected outcome {other:?}")),
    }
}

fn c4_trajectory() -> Result<String, String> {
    let outcome = run_trajectory(1_000_000, 100_000, 0.01, SEED).map_err(err)?;
    match outcome {
        TargetOutcome::Trajectory {
            tv,
            max_marginal_sigma,
            pass,
            ..
        } => {
            if !pass {
                return Err(format!(
                    "mask-time reconstruction off: TV {tv:.4} (bound 0.01), \
                     worst marginal {max_marginal_sigma:.2} sigma (bound 4)"
                ));
            }
            Ok(format!(
                "TV {tv:.4} over 1e6 trials (bound 0.01), worst mask marginal \
                 {max_marginal_sigma:.2} sigma over 1e5 trials (bound 4)"
            ))
        }
        other => Err(format!("unexpected outcome {other:?}")),
    }
}

fn c5_hybrid_loss() -> Result<String, String> {
    let t_max = 25;
    let stats = stats2();
    let image = build_image_schedule(t_max, ImageScheduleKind::linear_analog(t_max)).map_err(err)?;

    // The variational term is a KL (or a decoder likelihood at t=1), so it
    // can never go negative for any model output.
    let spec = two_class_demo_spec(4, 4, 0.1);
    let label = build_label_schedule(&stats, t_max, Eta::Finite(1.0), &[]).map_err(err)?;
    let mlp = MlpDenoiser::new(1, 2, 4, 8, true, &Stream::named(SEED, "c5-init")).map_err(err)?;
    let root = Stream::named(SEED, "c5-vlb");
    let mut min_vlb = f64::INFINITY;
    for k in 0..1000u64 {
        let ex = make_train_example(&spec, &label, &image, 0.2, &root.fork(&[k])).map_err(err)?;
        let report = hybrid_loss(&mlp, &[ex], &image, 1e-3).map_err(err)?;
        min_vlb = min_vlb.min(report.l_vlb);
    }
    if min_vlb < 0.0 {
        return Err(format!("negative variational term {min_vlb:.3e}"));
    }

    // With zero within-class spread and unmasked labels the oracle recovers
    // x0 exactly, so its eps error must vanish to rounding.
    let exact_spec = ToyDataSpec {
        sigma0: 0.0,
        layout: MapLayout::Rects { count: 2 },
        ..two_class_demo_spec(4, 4, 0.0)
    };
    let identity = build_label_schedule(&stats, t_max, Eta::Infinite, &[]).map_err(err)?;
    let oracle = OracleDenoiser::new(exact_spec.clone()).map_err(err)?;
    let root = Stream::named(SEED, "c5-oracle");
    let mut max_simple = 0.0f64;
    for k in 0..100u64 {
        let ex =
            make_train_example(&exact_spec, &identity, &image, 0.0, &root.fork(&[k])).map_err(err)?;
        let report = hybrid_loss(&oracle, &[ex], &image, 0.0).map_err(err)?;
        max_simple = max_simple.max(report.l_simple);
    }
    if max_simple >= 1e-20 {
        return Err(format!(
            "oracle fed its own eps left L_simple = {max_simple:.3e} (expected < 1e-20)"
        ));
    }

    let outcome = run_gradcheck(1e-3, SEED).map_err(err)?;
    let max_rel = match outcome {
        TargetOutcome::Gradcheck {
            max_rel_err, pass, ..
        } => {
            if !pass {
                return Err(format!(
                    "gradient check off by relative {max_rel_err:.3e} (tol 1e-3)"
                ));
            }
            max_rel_err
        }
        other => return Err(format!("unexpected outcome {other:?}")),
    };

    Ok(format!(
        "min L_vlb {min_vlb:.2e} over 1e3 steps (>= 0), oracle L_simple {max_simple:.1e} \
         (< 1e-20), gradcheck rel {max_rel:.2e} (tol 1e-3)"
    ))
}

fn c6_sampler() -> Result<String, String> {
    let t_max = 50;
    let image = build_image_schedule(t_max, ImageScheduleKind::linear_analog(t_max)).map_err(err)?;
    let means = [0.7, -0.7];
    let spec = ToyDataSpec {
        class_means: vec![vec![means[0]], vec![means[1]]],
        layout: MapLayout::Rects { count: 2 },
        ..two_class_demo_spec(8, 8, 0.0)
    };
    let y0 = spec.sample_map(&Stream::named(SEED, "c6-map")).map_err(err)?;

    // One step, no guidance, no extrapolation, zero spread: the chain ends
    // at the thresholded x0 estimate, which is exactly the class-mean
    // rendering of y0.
    let oracle = OracleDenoiser::new(spec.clone()).map_err(err)?;
    let identity = build_label_schedule(&stats2(), t_max, Eta::Infinite, &[]).map_err(err)?;
    let cfg = SamplerConfig {
        num_steps: Some(1),
        ..SamplerConfig::default()
    };
    let x = sample(
        &oracle,
        &y0,
        &identity,
        &image,
        &cfg,
        &Stream::named(SEED, "c6-onestep"),
    )
    .map_err(err)?;
    let mut max_exact = 0.0f64;
    for i in 0..8 {
        for j in 0..8 {
            let want = means[y0.get(i, j) as usize];
            max_exact = max_exact.max((x.get(i, j, 0) - want).abs());
        }
    }
    if max_exact >= 1e-10 {
        return Err(format!(
            "one-step sample deviates from the mean rendering by {max_exact:.3e} (tol 1e-10)"
        ));
    }

    // Full 50-step chains, sigma0 = 0.1: per-pixel sample means must land on
    // the class means.
    let start = Instant::now();
    let noisy_spec = ToyDataSpec {
        sigma0: 0.1,
        ..spec.clone()
    };
    let noisy_oracle = OracleDenoiser::new(noisy_spec).map_err(err)?;
    let root = Stream::named(SEED, "c6-chains");
    let trials = 500usize;
    let mut sums = vec![0.0f64; 64];
    for k in 0..trials {
        let x = sample_fixed_label(
            &noisy_oracle,
            &y0,
            &image,
            &SamplerConfig::default(),
            &root.fork(&[k as u64]),
        )
        .map_err(err)?;
        for (s, v) in sums.iter_mut().zip(x.values()) {
            *s += v;
        }
    }
    let mut max_mean_err = 0.0f64;
    for i in 0..8 {
        for j in 0..8 {
            let want = means[y0.get(i, j) as usize];
            let got = sums[i * 8 + j] / trials as f64;
            max_mean_err = max_mean_err.max((got - want).abs());
        }
    }
    budget(start.elapsed(), 120.0, "500 sampling chains")?;
    if max_mean_err >= 0.05 {
        return Err(format!(
            "per-pixel mean off by {max_mean_err:.4} after {trials} chains (tol 0.05)"
        ));
    }
    Ok(format!(
        "one-step exact to {max_exact:.1e} (tol 1e-10); 50-step means within \
         {max_mean_err:.3} of m(c) over {trials} chains (tol 0.05)"
    ))
}

fn c7_robustness() -> Result<String, String> {
    let start = Instant::now();
    let cfg = AblateConfig::desk_default(SEED);
    assert_eq!(cfg.pairs, 100);
    let report = run_robustness(&cfg).map_err(err)?;
    budget(start.elapsed(), 600.0, "robustness pairs")?;
    let row = |mode: CorruptionMode| {
        report
            .rows
            .iter()
            .find(|r| r.mode == mode)
            .ok_or_else(|| format!("no row for {mode:?}"))
    };
    let random = row(CorruptionMode::Random)?;
    let edge = row(CorruptionMode::Edge)?;
    let ds = row(CorruptionMode::Ds)?;
    if !random.label_diff_wins {
        return Err(format!(
            "random: label diffusion {:.5} did not beat baseline {:.5}",
            random.label_diff_mse, random.base_mse
        ));
    }
    if !edge.label_diff_wins {
        return Err(format!(
            "edge: label diffusion {:.5} did not beat baseline {:.5}",
            edge.label_diff_mse, edge.base_mse
        ));
    }
    Ok(format!(
        "100 pairs: random {:.4} < {:.4}, edge {:.4} < {:.4}; ds {:.4} vs {:.4} ({})",
        random.label_diff_mse,
        random.base_mse,
        edge.label_diff_mse,
        edge.base_mse,
        ds.label_diff_mse,
        ds.base_mse,
        if ds.label_diff_wins {
            "label diffusion"
        } else {
            "baseline"
        }
    ))
}

fn c8_ablation() -> Result<String, String> {
    let cfg = AblateConfig {
        step_counts: vec![25],
        pairs: 3,
        ..AblateConfig::desk_default(SEED)
    };
    let report = run_ablation(&cfg).map_err(err)?;
    if !report.baseline_bitwise_identical {
        return Err("baseline row diverged from the direct fixed-label sampler".into());
    }
    if !report.extrapolation_zero_is_noop {
        return Err("w = 0 changed outputs".into());
    }
    if !report.extrapolation_changes_outputs {
        return Err(format!(
            "w = {} left every output unchanged",
            cfg.extrapolation
        ));
    }
    let methods = report
        .rows
        .iter()
        .filter(|r| r.steps == 25)
        .map(|r| r.method)
        .collect::<Vec<_>>();
    if !Method::ALL.iter().all(|m| methods.contains(m)) {
        return Err(format!("missing method rows: have {methods:?}"));
    }
    Ok(
        "25-step rows: baseline bitwise-identical to fixed-label sampling, w=0 a no-op, \
         w=0.8 changes outputs"
            .into(),
    )
}

fn c9_corruptions() -> Result<String, String> {
    // Random: no cell already holds the unlabeled class, so the changed
    // fraction is Binomial(4096, 0.10) and 4 sigma is about 0.019.
    let cells: Vec<u16> = (0..64 * 64).map(|k| 1 + (k % 2) as u16).collect();
    let clean = SemanticMap::from_cells(64, 64, 3, cells).map_err(err)?;
    let flipped = corrupt_random(&clean, 0.10, 0, &Stream::named(SEED, "c9-random")).map_err(err)?;
    let changed = clean
        .cells()
        .iter()
        .zip(flipped.cells())
        .filter(|(a, b)| a != b)
        .count();
    let frac = changed as f64 / 4096.0;
    let four_sigma = 4.0 * (0.10f64 * 0.90 / 4096.0).sqrt();
    if (frac - 0.10).abs() >= four_sigma {
        return Err(format!(
            "flip fraction {frac:.4} outside 0.10 +- {four_sigma:.4}"
        ));
    }

    // Downsampling is a projection: applying it twice changes nothing.
    let mut s = Stream::named(SEED, "c9-ds");
    let cells: Vec<u16> = (0..64 * 64).map(|_| s.below(3) as u16).collect();
    let noisy = SemanticMap::from_cells(64, 64, 3, cells).map_err(err)?;
    let once = corrupt_ds(&noisy, 4).map_err(err)?;
    let twice = corrupt_ds(&once, 4).map_err(err)?;
    if once != twice {
        return Err("corrupt_ds is not idempotent at factor 4".into());
    }

    // Edge band on the 5x5 two-column map, checked against a from-scratch
    // band computation over all 25 cells.
    let cells: Vec<u16> = (0..25).map(|k| if k % 5 < 2 { 0 } else { 1 }).collect();
    let two_col = SemanticMap::from_cells(5, 5, 3, cells).map_err(err)?;
    let banded = corrupt_edge(&two_col, 2, 2).map_err(err)?;
    let mut boundary = Vec::new();
    for i in 0..5i64 {
        for j in 0..5i64 {
            let c = two_col.get(i as usize, j as usize);
            let is_edge = [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)].iter().any(|&(di, dj)| {
                let (ni, nj) = (i + di, j + dj);
                (0..5).contains(&ni)
                    && (0..5).contains(&nj)
                    && two_col.get(ni as usize, nj as usize) != c
            });
            if is_edge {
                boundary.push((i, j));
            }
        }
    }
    for i in 0..5i64 {
        for j in 0..5i64 {
            let in_band = boundary
                .iter()
                .any(|&(bi, bj)| (i - bi).abs().max((j - bj).abs()) <= 2);
            let want = if in_band {
                2
            } else {
                two_col.get(i as usize, j as usize)
            };
            if banded.get(i as usize, j as usize) != want {
                return Err(format!("edge band wrong at ({i}, {j})"));
            }
        }
    }
    if banded.cells().iter().any(|&c| c != 2) {
        return Err("two-column map did not come out fully unlabeled".into());
    }

    Ok(format!(
        "random flip fraction {frac:.3} (0.10 +- {four_sigma:.3}), ds idempotent, \
         5x5 two-column edge band all-unlabeled"
    ))
}

fn c10_formats() -> Result<String, String> {
    let root = Stream::named(SEED, "c10");
    for k in 0..100u64 {
        let mut s = root.fork(&[0, k]);
        let h = 1 + s.below(12) as usize;
        let w = 1 + s.below(12) as usize;
        let c = 1 + s.below(8) as u16;
        let cells: Vec<u16> = (0..h * w).map(|_| s.below(c as u64 + 1) as u16).collect();
        let map = SemanticMap::from_cells(h, w, c, cells).map_err(err)?;
        let first = map.to_slm1();
        let reread = SemanticMap::from_slm1(&first).map_err(err)?;
        if reread != map || reread.to_slm1() != first {
            return Err(format!("label-map round-trip {k} not byte-identical"));
        }
    }
    for k in 0..100u64 {
        let mut s = root.fork(&[1, k]);
        let h = 1 + s.below(8) as usize;
        let w = 1 + s.below(8) as usize;
        let ch = 1 + s.below(3) as usize;
        let values: Vec<f64> = (0..h * w * ch).map(|_| 2.0 * s.normal()).collect();
        let img = ToyImage::from_values(h, w, ch, values).map_err(err)?;
        let first = img.to_sim1().map_err(err)?;
        let reread = ToyImage::from_sim1(&first).map_err(err)?;
        if reread.to_sim1().map_err(err)? != first {
            return Err(format!("image round-trip {k} not byte-identical"));
        }
    }
    Ok("100 label maps and 100 images, save -> load -> save byte-identical".into())
}
