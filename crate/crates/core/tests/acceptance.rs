//! End-to-end acceptance checks. Runs without the libtest harness so each
//! check prints exactly one PASS/FAIL line; the process fails if any does.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use otgan::checkpoint::Checkpoint;
use otgan::data::{one_hot, sample_mixture, RingMixture};
use otgan::distance::{four_term_loss, med_loss, BatchQuad};
use otgan::gradcheck::{run_gradcheck, GradCheckConfig};
use otgan::neural::{init_mlp, InitScheme, Mlp, OutputHead};
use otgan::numerics::{Matrix, Rng};
use otgan::training::{conditional_loss, run_consistency_experiment, Mode, TrainConfig, TrainState, Trainer};
use otgan::transport::{
    exact_assignment, for_each_permutation, pairwise_cost, permutation_cost, random_match_distance, sinkhorn,
    CostSpec, SinkhornConfig,
};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn unit_rows(rng: &mut Rng, k: usize, d: usize) -> Matrix {
    let mut m = rng.standard_normal(k, d).unwrap();
    for r in 0..k {
        let row = m.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= n);
    }
    m
}

fn sinkhorn_matches_exact() -> Check {
    let started = Instant::now();
    let cfg = SinkhornConfig { epsilon: 1e-3, max_iters: 5000, ..SinkhornConfig::default() };
    let mut rng = Rng::new(11);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let k = 2 + i % 5;
        let c = pairwise_cost(&unit_rows(&mut rng, k, 3), &unit_rows(&mut rng, k, 3), CostSpec::RawCosine).unwrap();
        let exact = exact_assignment(&c).unwrap().distance;
        let soft = sinkhorn(&c, &cfg).unwrap().distance;
        worst = worst.max((soft - exact).abs() / exact.abs().max(1e-12));
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(
        worst <= 0.01 && secs < 30.0,
        format!("worst relative gap {worst:.2e} over 200 instances in {secs:.1}s"),
    )
}

fn marginals_feasible() -> Check {
    let cfg = SinkhornConfig::default();
    let mut rng = Rng::new(12);
    let (mut converged, mut worst) = (0, 0.0_f64);
    for i in 0..1000 {
        let k = 2 + i % 19;
        let c = pairwise_cost(&unit_rows(&mut rng, k, 4), &unit_rows(&mut rng, k, 4), CostSpec::RawCosine).unwrap();
        let r = sinkhorn(&c, &cfg).unwrap();
        if r.converged {
            converged += 1;
            let (row, col) = r.plan.marginal_residuals();
            worst = worst.max(row).max(col);
        }
    }
    ensure(
        converged > 0 && worst <= 1e-6,
        format!("{converged}/1000 converged, worst residual {worst:.2e}"),
    )
}

fn random_critic(seed: u64) -> Mlp {
    let cfg = TrainConfig { seed, ..TrainConfig::default() };
    TrainState::new(&cfg).unwrap().critic
}

fn quad_losses(n: usize, k: usize, seed: u64, collapsed: bool, critic: &Mlp) -> Vec<f64> {
    let mix = RingMixture::default();
    let mut rng = Rng::new(seed);
    let one_mode = RingMixture { n_modes: 1, ..mix };
    let cfg = SinkhornConfig::default();
    (0..n)
        .map(|_| {
            let gen_mix = if collapsed { &one_mode } else { &mix };
            let (x, _) = sample_mixture(&mix, &mut rng, k).unwrap();
            let (x2, _) = sample_mixture(&mix, &mut rng, k).unwrap();
            let (y, _) = sample_mixture(gen_mix, &mut rng, k).unwrap();
            let (y2, _) = sample_mixture(gen_mix, &mut rng, k).unwrap();
            let quad = BatchQuad::new(x, x2, y, y2).unwrap();
            med_loss(&quad, CostSpec::LearnedCosine, &cfg, Some(critic)).unwrap().total
        })
        .collect()
}

fn unbiased_at_equality() -> Check {
    let started = Instant::now();
    let critic = random_critic(3);
    let (mean, se) = mean_se(&quad_losses(2000, 20, 31, false, &critic));
    let secs = started.elapsed().as_secs_f64();
    ensure(
        mean.abs() <= 3.0 * se && secs < 300.0,
        format!("mean {mean:.3e}, standard error {se:.3e} ({:.2} SE) in {secs:.1}s", mean.abs() / se),
    )
}

fn discriminates_collapse() -> Check {
    let critic = random_critic(4);
    let (same, same_se) = mean_se(&quad_losses(200, 50, 41, false, &critic));
    let (collapsed, collapsed_se) = mean_se(&quad_losses(200, 50, 42, true, &critic));
    let se = (same_se.powi(2) + collapsed_se.powi(2)).sqrt();
    let z = (collapsed - same) / se;
    ensure(
        z >= 10.0,
        format!("collapsed mean {collapsed:.4} vs equal {same:.4}: {z:.1} standard errors"),
    )
}

fn gradients_match_finite_differences() -> Check {
    let cfg = GradCheckConfig::default();
    let mut worst: f64 = 0.0;
    let mut failing = Vec::new();
    for seed in 0..5 {
        let r = run_gradcheck(seed, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        worst = worst.max(r.worst_error());
        if !r.passed() {
            failing.push(seed);
        }
    }
    ensure(
        failing.is_empty() && worst <= 1e-3,
        format!("worst relative error {worst:.2e} over 5 seeds, failing seeds {failing:?}"),
    )
}

fn consistency_config() -> TrainConfig {
    TrainConfig::default()
}

fn consistency_experiment(dir: &std::path::Path) -> Check {
    let started = Instant::now();
    let cfg = consistency_config();
    let report = run_consistency_experiment(&cfg, Some(dir)).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    let ot = report.arm(Mode::Otgan).ok_or("missing OT-GAN arm")?;
    let gan = report.arm(Mode::BaselineGan).ok_or("missing baseline arm")?;
    let ot_ok = ot.covered_at_freeze == Some(8) && ot.min_covered_after_freeze == Some(8);
    let gan_ok = gan.covered_at_freeze.is_some_and(|f| gan.covered_at_end < f);
    ensure(
        ot_ok && gan_ok && secs < 3600.0,
        format!(
            "OT-GAN covered {:?} at freeze, min {:?} after; baseline {:?} at freeze, {} at end; {secs:.0}s",
            ot.covered_at_freeze, ot.min_covered_after_freeze, gan.covered_at_freeze, gan.covered_at_end
        ),
    )
}

fn random_matching_identity() -> Check {
    // Dyadic entries keep every sum exact. Averaging over the 3! permutations
    // equals Tr[U Cᵀ] = ΣC / 3 iff the permutation total equals 2·ΣC.
    let mut rng = Rng::new(7);
    let c = Matrix::from_fn(3, 3, |_, _| rng.below(64) as f64 / 16.0);
    let mut total = 0.0;
    let mut count = 0;
    for_each_permutation(3, |p| {
        total += permutation_cost(&c, p);
        count += 1;
    });
    if count != 6 || total != 2.0 * c.sum() {
        return Err(format!("K=3: {count} permutations totalling {total}, expected 6 and {}", 2.0 * c.sum()));
    }

    let c = pairwise_cost(&unit_rows(&mut rng, 10, 3), &unit_rows(&mut rng, 10, 3), CostSpec::RawCosine).unwrap();
    let draws: Vec<f64> = (0..20_000).map(|_| random_match_distance(&c, &mut rng).unwrap()).collect();
    let (mean, se) = mean_se(&draws);
    let target = c.sum() / 10.0;
    let z = (mean - target).abs() / se;
    ensure(z <= 3.0, format!("K=3 exact; K=10 Monte Carlo {mean:.5} vs {target:.5} ({z:.2} SE)"))
}

fn conditional_parity() -> Check {
    let mix = RingMixture::default();
    let mut rng = Rng::new(8);
    let k = 16;
    let critic = init_mlp(&mut rng, &[2 + mix.n_modes, 32, 16], InitScheme::HeNormal, OutputHead::L2Normalize).unwrap();
    let cfg = SinkhornConfig::default();
    let mut checked = 0;
    for label in 0..mix.n_modes {
        let b: Vec<Matrix> = (0..4).map(|_| sample_mixture(&mix, &mut rng, k).unwrap().0).collect();
        let quad = BatchQuad::new(b[0].clone(), b[1].clone(), b[2].clone(), b[3].clone()).unwrap();
        let s = vec![label; k];
        let cond = conditional_loss(&quad, &s, &s, mix.n_modes, CostSpec::LearnedCosine, &cfg, Some(&critic))
            .map_err(|e| e.to_string())?;
        let side = one_hot(&s, mix.n_modes).unwrap();
        let aug = BatchQuad::new(
            b[0].hconcat(&side).unwrap(),
            b[1].hconcat(&side).unwrap(),
            b[2].hconcat(&side).unwrap(),
            b[3].hconcat(&side).unwrap(),
        )
        .unwrap();
        let plain = four_term_loss(&aug, CostSpec::LearnedCosine, &cfg, Some(&critic)).unwrap();
        if cond.total.to_bits() != plain.total.to_bits() {
            return Err(format!("label {label}: {} vs {}", cond.total, plain.total));
        }
        checked += 1;
    }
    Ok(format!("bit-identical totals for {checked} constant labels"))
}

fn deterministic_rerun(first: &std::path::Path, second: &std::path::Path) -> Check {
    let cfg = consistency_config();
    run_consistency_experiment(&cfg, Some(second)).map_err(|e| e.to_string())?;
    for arm in ["otgan", "baseline-gan"] {
        let a = std::fs::read(first.join(arm).join("metrics.csv")).map_err(|e| e.to_string())?;
        let b = std::fs::read(second.join(arm).join("metrics.csv")).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{arm}/metrics.csv differs between runs"));
        }
    }
    Ok("metrics.csv byte-identical for both arms".into())
}

fn checkpoint_resume() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut checked = 0;
    for mode in [Mode::Otgan, Mode::BaselineGan, Mode::OtganConditional] {
        let cfg = TrainConfig {
            mode,
            iterations: 300,
            critic_freeze_iteration: Some(250),
            eval_every: 10,
            eval_samples: 500,
            ..TrainConfig::default()
        };
        let mut straight = Trainer::new(cfg.clone()).map_err(|e| e.to_string())?;
        straight.run().map_err(|e| e.to_string())?;

        let mut first = Trainer::new(cfg.clone()).map_err(|e| e.to_string())?;
        first.run_until(200, |_, _| Ok(())).map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("{}.json", mode.name()));
        Checkpoint::capture(&first.state).save(&path).map_err(|e| e.to_string())?;
        drop(first);
        let state = Checkpoint::load(&path).and_then(|c| c.restore()).map_err(|e| e.to_string())?;
        let mut resumed = Trainer::resume(cfg, state);
        resumed.run().map_err(|e| e.to_string())?;

        let tail = |t: &Trainer| -> Vec<String> {
            t.state.history.iter().filter(|r| r.iteration > 200).map(|r| r.csv_row()).collect()
        };
        if tail(&straight) != tail(&resumed) || straight.state.history != resumed.state.history {
            return Err(format!("{} diverged after resuming", mode.name()));
        }
        checked += tail(&resumed).len();
    }
    ensure(checked == 30, format!("{checked} post-resume records identical across 3 modes"))
}

fn main() {
    let started = Instant::now();
    let runs = tempfile::tempdir().expect("temp dir");
    let (first, second) = (runs.path().join("first"), runs.path().join("second"));

    let checks: Vec<(&str, Box<dyn FnOnce() -> Check>)> = vec![
        ("sinkhorn agrees with exact assignment", Box::new(sinkhorn_matches_exact)),
        ("converged plans satisfy the marginals", Box::new(marginals_feasible)),
        ("loss is unbiased when generator equals data", Box::new(unbiased_at_equality)),
        ("loss separates a collapsed generator", Box::new(discriminates_collapse)),
        ("gradients match finite differences", Box::new(gradients_match_finite_differences)),
        ("OT-GAN stays consistent under a frozen critic", Box::new(|| consistency_experiment(&first))),
        ("random matching averages to the uniform plan", Box::new(random_matching_identity)),
        ("conditional loss with constant labels", Box::new(conditional_parity)),
        ("seeded reruns are byte-identical", Box::new(|| deterministic_rerun(&first, &second))),
        ("checkpoint resume matches uninterrupted run", Box::new(checkpoint_resume)),
    ];

    let mut failed = 0;
    for (i, (name, check)) in checks.into_iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[{:>2}] PASS {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[{:>2}] FAIL {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!("{} of 10 passed in {:.0}s", 10 - failed, started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
