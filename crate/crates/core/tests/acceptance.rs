//! Acceptance criteria. Each criterion prints one PASS/FAIL line with its
//! pinned tolerance; the process exits non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use fieldvb::checks::{conjugacy_errors, gradient_errors, intrinsic_dim_case, moment_errors};
use fieldvb::config::{preset, ExperimentConfig, Model, WavenumberSpec};
use fieldvb::experiment::{execute, run_experiment, RunReport};
use fieldvb::nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn report_line(o: &Outcome) {
    println!(
        "{} [{}] {}: {}",
        if o.passed { "PASS" } else { "FAIL" },
        o.id,
        o.name,
        o.detail
    );
}

fn elbo_drop(trace: &[f64]) -> f64 {
    trace
        .windows(2)
        .map(|w| (w[0] - w[1]) / w[0].abs().max(1.0))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn run_preset(name: &str, seed: u64) -> RunReport {
    let mut c = preset(name).unwrap();
    c.output.seed = seed;
    execute(&c, None).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let e = conjugacy_errors(20, 2024).unwrap();
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        id: 1,
        name: "conjugacy oracle equivalence",
        passed: e.mean <= 1e-8 && e.covariance <= 1e-6 && secs < 10.0,
        detail: format!(
            "20 configs, max mean rel {:.2e} (tol 1e-8), max cov rel Frobenius {:.2e} (tol 1e-6), {secs:.2} s (limit 10 s)",
            e.mean, e.covariance
        ),
    }
}

fn small_random_config(rng: &mut ChaCha8Rng) -> ExperimentConfig {
    let mut c = preset("isp-small").unwrap();
    c.problem.gen_nodes = rng.random_range(80..200);
    c.problem.inv_nodes = rng.random_range(30..c.problem.gen_nodes - 20);
    c.problem.wavenumbers = WavenumberSpec::Range {
        start: 0.5,
        step: 0.5,
        count: rng.random_range(4..30),
    };
    c.prior.order = rng.random_range(1..=2);
    c.noise = fieldvb::config::NoiseConfig::Gaussian {
        sigma: 10f64.powf(rng.random_range(-4.0..-2.0)),
    };
    c.output.seed = rng.random();
    c
}

fn criterion_2(gaussian_run: &RunReport) -> Outcome {
    let start = Instant::now();
    let mut worst = elbo_drop(&gaussian_run.traces.elbo);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10 {
        let r = execute(&small_random_config(&mut rng), None).unwrap();
        worst = worst.max(elbo_drop(&r.traces.elbo));
    }
    let secs = start.elapsed().as_secs_f64() + gaussian_run.elapsed_secs;
    Outcome {
        id: 2,
        name: "ELBO monotonicity",
        passed: worst <= 1e-8 && secs < 60.0,
        detail: format!(
            "preset run + 10 random runs, largest relative decrease {worst:.2e} (tol 1e-8), {secs:.1} s (limit 60 s)"
        ),
    }
}

fn criterion_3(runs: &[RunReport]) -> Outcome {
    let sigmas: Vec<f64> = runs.iter().map(|r| r.sigma_hat.unwrap()).collect();
    let slowest = runs.iter().map(|r| r.elapsed_secs).fold(0.0, f64::max);
    Outcome {
        id: 3,
        name: "noise-level recovery",
        passed: sigmas.iter().all(|s| (0.0008..=0.0013).contains(s)) && slowest < 300.0,
        detail: format!(
            "sigma_hat over seeds 1-5 = [{}] (range [0.0008, 0.0013]), slowest run {slowest:.1} s (limit 300 s)",
            sigmas.iter().map(|s| format!("{s:.6}")).collect::<Vec<_>>().join(", ")
        ),
    }
}

fn criterion_4(gaussian_run: &RunReport) -> Outcome {
    Outcome {
        id: 4,
        name: "credible-band coverage",
        passed: gaussian_run.coverage >= 0.9,
        detail: format!(
            "isp-gaussian seed {}: {:.4} of inversion nodes inside mean +/- 2 std (min 0.90)",
            gaussian_run.seed, gaussian_run.coverage
        ),
    }
}

fn criterion_5() -> Outcome {
    let laplace = run_preset("isp-laplace", 1);
    let mut gaussian_cfg = preset("isp-laplace").unwrap();
    gaussian_cfg.solver.model = Model::Gaussian;
    let gaussian = execute(&gaussian_cfg, None).unwrap();
    assert_eq!(laplace.data.synthetic.noisy, gaussian.data.synthetic.noisy);

    let weights: &DVector<f64> = laplace.weight_trace.last().unwrap();
    let mask = &laplace.data.synthetic.corrupted;
    let pick = |want: bool| -> Vec<f64> {
        (0..mask.len())
            .filter(|&i| mask[i] == want)
            .map(|i| weights[i])
            .collect()
    };
    let (med_bad, med_good) = (median(pick(true)), median(pick(false)));
    let e_l = laplace.final_rel_error;
    let e_g = gaussian.final_rel_error;
    Outcome {
        id: 5,
        name: "robustness contrast",
        passed: e_l < 0.2 && e_l < 0.5 * e_g && med_bad < med_good,
        detail: format!(
            "laplace error {e_l:.4} (need < 0.2 and < {:.4} = half gaussian error {e_g:.4}); median weight corrupted {med_bad:.3e} vs clean {med_good:.3e} (need corrupted < clean)",
            0.5 * e_g
        ),
    }
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let worst = moment_errors().unwrap();
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        id: 6,
        name: "closed-form moment validation",
        passed: worst <= 1e-8 && secs < 5.0,
        detail: format!("Gamma and inverse-Gaussian E[x], E[1/x] on 5x5 grids, max rel {worst:.2e} (tol 1e-8), {secs:.2} s (limit 5 s)"),
    }
}

fn criterion_7() -> Outcome {
    let worst = gradient_errors(10, 7).unwrap();
    Outcome {
        id: 7,
        name: "MAP gradient check",
        passed: worst <= 1e-6,
        detail: format!("10 random 10-node instances, max rel {worst:.2e} vs central differences (tol 1e-6)"),
    }
}

fn criterion_8() -> Outcome {
    let r = run_preset("isp-sequential", 1);
    let errors: Vec<f64> = r.frequencies.iter().map(|f| f.rel_error.unwrap()).collect();
    let (first, last) = (errors[0], errors[errors.len() - 1]);
    Outcome {
        id: 8,
        name: "sequential trend",
        passed: last < first && last < 0.15,
        detail: format!("kappa = 1..20, 5% noise: initial error {first:.4}, final error {last:.4} (need final < initial and < 0.15)"),
    }
}

fn criterion_9() -> Outcome {
    let (k, scan) = intrinsic_dim_case().unwrap();
    Outcome {
        id: 9,
        name: "intrinsic dimension",
        passed: k == 34 && scan == 34,
        detail: format!("spectrum (1 + j^2 pi^2)^-1, eps = 1e-3: K = {k}, linear scan {scan} (expected 34)"),
    }
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("checkpoints")] {
        let Ok(entries) = fs::read_dir(&sub) else { continue };
        for entry in entries {
            let path = entry.unwrap().path();
            let ext = path.extension().and_then(|e| e.to_str());
            if matches!(ext, Some("csv") | Some("json")) {
                out.push((
                    path.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&path).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut compared = 0;
    let mut identical = true;
    for name in ["isp-gaussian", "isp-small-laplace", "isp-sequential"] {
        let mut files = Vec::new();
        for run in ["a", "b"] {
            let mut c = preset(name).unwrap();
            c.output.dir = tmp.path().join(name).join(run);
            run_experiment(&c).unwrap();
            files.push(csv_files(&c.output.dir));
        }
        compared += files[0].len();
        identical &= !files[0].is_empty() && files[0] == files[1];
    }
    Outcome {
        id: 10,
        name: "determinism",
        passed: identical,
        detail: format!("3 presets run twice, {compared} output files byte-identical: {identical}"),
    }
}

fn main() -> ExitCode {
    let gaussian_runs: Vec<RunReport> = (1..=5).map(|seed| run_preset("isp-gaussian", seed)).collect();
    let outcomes = [
        criterion_1(),
        criterion_2(&gaussian_runs[0]),
        criterion_3(&gaussian_runs),
        criterion_4(&gaussian_runs[0]),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
        criterion_9(),
        criterion_10(),
    ];
    for o in &outcomes {
        report_line(o);
    }
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        outcomes.len() - failed.len(),
        outcomes.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
