// Scratch harness for timing and learning-curve checks.

use sirsa::agents::{Algorithm, PolicyRuntime, PolicySpec, Trainer, TrainingConfig};
use sirsa::env::{EnvVariant, HORIZON};
use sirsa::eval::evaluate_test_suite;
use sirsa::rcmdp::{make_task_suite, SetDistribution};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let algo = args.get(1).map(|s| s.as_str()).unwrap_or("oracle");
    let budget: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);
    let variant = match args.get(4).map(|s| s.as_str()).unwrap_or("combined") {
        "obstacle" => EnvVariant::ObstacleOnly,
        "velocity" => EnvVariant::VelocityOnly,
        _ => EnvVariant::Combined,
    };
    let algorithm = match algo {
        "sirsa" => Algorithm::Sirsa,
        "system_id" => Algorithm::SystemId,
        "epopt" => Algorithm::Epopt,
        "set_epopt" => Algorithm::SetEpopt,
        "wcpg" => Algorithm::Wcpg,
        "set_wcpg" => Algorithm::SetWcpg,
        "ensemble" => Algorithm::PolicyEnsemble,
        _ => Algorithm::Oracle,
    };

    let dist = SetDistribution::new(variant.context_space(), 0.25).unwrap();
    let suite = make_task_suite(&dist, 20, 3, 20, 1).unwrap();

    let mut spec = PolicySpec::defaults_for(algorithm);
    spec.t_threshold = budget / 2;
    if algorithm == Algorithm::Sirsa {
        spec.alpha = 0.25;
    }
    let lr: f64 = std::env::var("PROBE_LR")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(3e-4);
    let gpe: usize = std::env::var("PROBE_GPE")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(50);
    let cvb: usize = std::env::var("PROBE_CVB")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(64);
    let temp0: f64 = std::env::var("PROBE_TEMP")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.2);
    let temp_lr: f64 = std::env::var("PROBE_TEMP_LR")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(3e-4);
    let cfg = TrainingConfig {
        budget,
        learning_rate: lr,
        grad_steps_per_episode: gpe,
        cvar_batch_size: cvb,
        temperature_initial: temp0,
        temperature_lr: temp_lr,
        log_every: 500,
        ..Default::default()
    };

    let t0 = std::time::Instant::now();
    let mut trainer = Trainer::new(spec, cfg, variant, suite.clone(), seed).unwrap();
    trainer.train().unwrap();
    let train_secs = t0.elapsed().as_secs_f64();

    for row in &trainer.log {
        println!(
            "iter {:>6} phase {} critic {:>8.4} actor {:>8.3} ens {:>8.5} var {:>9.4} ret {:>7.2} temp {:.4}",
            row.iteration,
            row.phase,
            row.critic_loss,
            row.actor_loss,
            row.ensemble_loss,
            row.variance_loss,
            row.mean_episode_return,
            row.temperature
        );
    }

    let t1 = std::time::Instant::now();
    let mut runtime = PolicyRuntime::from_artifacts(&trainer.artifacts());
    let report = evaluate_test_suite(&mut runtime, &suite, 50, HORIZON, 1234, "probe").unwrap();
    let eval_secs = t1.elapsed().as_secs_f64();

    println!(
        "\n{algo} budget {budget} seed {seed} variant {variant:?}: train {train_secs:.1}s eval {eval_secs:.1}s"
    );
    println!(
        "mean_of_mins {:.2} ± {:.2}   mean_of_means {:.2} ± {:.2}",
        report.mean_of_mins, report.stderr_of_mins, report.mean_of_means, report.stderr_of_means
    );

    // Filter diagnostics: normalized ID error and set width along eval rollouts.
    if trainer.artifacts().ensemble.is_some() {
        use sirsa::env::rollout_fixed;
        use sirsa::rcmdp::{child_rng, sample_context_uniform};
        let space = variant.context_space();
        let mut err_t5 = 0.0;
        let mut sig_t5 = 0.0;
        let mut err_t50 = 0.0;
        let mut sig_t50 = 0.0;
        let mut n = 0.0;
        for (si, set) in suite.test_sets.iter().enumerate() {
            let mut rng = child_rng(99, si as u64);
            for _ in 0..3 {
                let c = sample_context_uniform(set, &mut rng);
                let mut rt = PolicyRuntime::from_artifacts(&trainer.artifacts());
                rollout_fixed(&mut rt, variant, &c, set, HORIZON, &mut rng).unwrap();
                let cn = space.normalize(c.as_slice());
                for (t, e, s) in [(5usize, &mut err_t5, &mut sig_t5), (50, &mut err_t50, &mut sig_t50)] {
                    let xi = &rt.xi_trace[t];
                    let mu = space.normalize(&xi.center);
                    let w = space.normalize_width(&xi.width);
                    *e += mu.iter().zip(&cn).map(|(a, b)| (a - b).abs()).sum::<f64>()
                        / mu.len() as f64;
                    *s += w.iter().sum::<f64>() / w.len() as f64;
                }
                n += 1.0;
            }
        }
        println!(
            "sysid: t=5 err {:.4} sigma {:.4} | t=50 err {:.4} sigma {:.4} (normalized units)",
            err_t5 / n,
            sig_t5 / n,
            err_t50 / n,
            sig_t50 / n
        );
    }
}
