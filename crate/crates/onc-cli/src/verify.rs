//! Fast property self-checks behind the `verify` verb.
//!
//! Each check prints one `ok`/`FAIL` line; any failure exits with code 3.
//! These are smoke-level versions of the library's test suite, sized to run
//! in seconds so a fresh build or install can be sanity-checked in place.

use std::process::ExitCode;

use clap::Args;
use nalgebra::{DMatrix, DVector};

use onc_core::costs::{CostFn, QuadraticCost, StageCost};
use onc_core::harness::{self, BankSpec, ExperimentConfig};
use onc_core::numerics::fd_gradient;
use onc_core::oracle::{approx_min, OracleConfig};
use onc_core::steady_state::ball_parametrization;
use onc_core::{
    derive_batch_size, generate_bank, rng, CostAccumulator, InputBall, LtiSystem, Stream,
};
use rand::Rng;

#[derive(Args)]
pub struct VerifyArgs {
    /// Seed for the randomized checks.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

pub fn cmd_verify(args: VerifyArgs) -> ExitCode {
    let checks: &[(&str, fn(u64) -> Result<(), String>)] = &[
        ("certificate envelope (t <= 50)", check_envelope),
        ("batch size halves the envelope", check_batch_size),
        ("oracle matches scalar grid search", check_oracle_grid),
        ("analytic gradients match finite differences", check_gradients),
        ("comparison reruns byte-identically", check_determinism),
    ];
    let mut failed = false;
    for (name, check) in checks {
        match check(args.seed) {
            Ok(()) => println!("ok   {name}"),
            Err(message) => {
                failed = true;
                println!("FAIL {name}: {message}");
            }
        }
    }
    if failed {
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    }
}

fn check_envelope(seed: u64) -> Result<(), String> {
    let system = LtiSystem::benchmark_three_state();
    let bank = generate_bank(&system, 10, 0.1, 50.0, seed).map_err(|e| e.to_string())?;
    for cert in bank.certificates() {
        let closed = system.a() - system.b() * cert.gain();
        let mut power = DMatrix::identity(3, 3);
        for t in 0..=50 {
            let bound = cert.kappa() * (1.0 - cert.gamma()).powi(t);
            let norm = onc_core::numerics::spectral_norm(&power);
            if norm > bound * (1.0 + 1e-8) {
                return Err(format!("||(A-BK)^{t}|| = {norm} exceeds {bound}"));
            }
            power = &closed * &power;
        }
    }
    Ok(())
}

fn check_batch_size(seed: u64) -> Result<(), String> {
    let system = LtiSystem::benchmark_three_state();
    let bank = generate_bank(&system, 10, 0.1, 50.0, seed).map_err(|e| e.to_string())?;
    for cert in bank.certificates() {
        let h = derive_batch_size(cert.gamma(), cert.kappa()).map_err(|e| e.to_string())?;
        let decay = cert.kappa() * (1.0 - cert.gamma()).powf(h as f64);
        if decay > 0.5 + 1e-12 {
            return Err(format!(
                "kappa (1-gamma)^H = {decay} for gamma {} kappa {}",
                cert.gamma(),
                cert.kappa()
            ));
        }
    }
    Ok(())
}

fn check_oracle_grid(seed: u64) -> Result<(), String> {
    // Scalar plant, one slice: minimize a quadratic plus linear term over the
    // reachable interval and compare with a dense grid.
    let system = LtiSystem::new(
        DMatrix::from_element(1, 1, 0.5),
        DMatrix::from_element(1, 1, 1.0),
    )
    .map_err(|e| e.to_string())?;
    let cert = onc_core::certify(&system, &DMatrix::zeros(1, 1), 0.4).map_err(|e| e.to_string())?;
    let bank = onc_core::ControllerBank::from_certificates(vec![cert.clone()], seed)
        .map_err(|e| e.to_string())?;
    let ball = InputBall::new(2.0).unwrap();
    let epsilon = 1e-6;
    let config = OracleConfig::for_epsilon(epsilon, &ball).map_err(|e| e.to_string())?;
    let slice = ball_parametrization(&system, &cert).map_err(|e| e.to_string())?;
    let mut generator = rng(seed, Stream::Probe);
    for _ in 0..5 {
        let center = generator.gen_range(-6.0..=6.0);
        let sigma = generator.gen_range(0.0..=2.0);
        let mut objective = CostAccumulator::new(1);
        objective.set_linear(DVector::from_element(1, sigma));
        objective.push(&StageCost::Quadratic(
            QuadraticCost::new(
                DMatrix::from_element(1, 1, 1.0),
                DVector::from_element(1, center),
            )
            .unwrap(),
        ));
        let result = approx_min(&objective, &system, &bank, &ball, &config, None)
            .map_err(|e| e.to_string())?;
        let mut best = f64::MAX;
        let steps = 40_000;
        for i in 0..=steps {
            let v = -2.0 + 4.0 * i as f64 / steps as f64;
            let z = slice.apply(&DVector::from_element(1, v));
            best = best.min(objective.eval(&z));
        }
        if result.value > best + epsilon {
            return Err(format!("oracle {} vs grid {best}", result.value));
        }
    }
    Ok(())
}

fn check_gradients(seed: u64) -> Result<(), String> {
    let mut generator = rng(seed, Stream::Probe);
    for _ in 0..5 {
        let d = DMatrix::from_fn(3, 3, |_, _| generator.gen_range(-1.0..=1.0));
        let weight = d.transpose() * &d + DMatrix::identity(3, 3) * 0.1;
        let center = DVector::from_fn(3, |_, _| generator.gen_range(-5.0..=5.0));
        let cost = QuadraticCost::new(weight, center).unwrap();
        let x = DVector::from_fn(3, |_, _| generator.gen_range(-4.0..=4.0));
        let analytic = cost.gradient(&x);
        let numeric = fd_gradient(|p| cost.eval(p), &x);
        let scale = numeric.amax().max(1.0);
        if (&analytic - &numeric).amax() > 1e-6 * scale {
            return Err(format!(
                "stage gradient off by {:.3e}",
                (&analytic - &numeric).amax()
            ));
        }
    }
    Ok(())
}

fn check_determinism(seed: u64) -> Result<(), String> {
    let config = ExperimentConfig {
        horizon: 12,
        seed,
        repetitions: 1,
        bank: BankSpec { count: 3, target_gamma: 0.2, kappa_cap: 50.0 },
        batch_ftpl: onc_core::harness::BatchFtplOverrides {
            batch_size: Some(3),
            eta: Some(0.1),
            epsilon: Some(1e-4),
            gradient_bound: None,
        },
        ..ExperimentConfig::default()
    };
    let first = harness::run_comparison(&config).map_err(|e| e.to_string())?;
    let second = harness::run_comparison(&config).map_err(|e| e.to_string())?;
    for (a, b) in first.repetitions.iter().zip(&second.repetitions) {
        if harness::trace_csv(&a.batch_ftpl.trace) != harness::trace_csv(&b.batch_ftpl.trace)
            || harness::trace_csv(&a.dac.trace) != harness::trace_csv(&b.dac.trace)
        {
            return Err("trace CSVs differ between identical runs".to_string());
        }
    }
    Ok(())
}
