//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

mod common;

use std::fs;
use std::process::{Command, ExitCode};
use std::time::Instant;

use common::*;
use jointsr::confidence::{observation_weights, prior_weights_fn, weighted_mad, weighted_median};
use jointsr::imaging::{
    build_blur_operator, build_decimation_operator, build_warp_operator, make_gaussian_psf, Geometry, SystemOperators,
};
use jointsr::motion::{motion_jacobian, JacobianSteps, MotionSet, RigidMotion};
use jointsr::prior::{apply_regularizer_rows, apply_regularizer_rows_adjoint, BtvConfig, PriorWeights, ShiftTransform};
use jointsr::simulate::{simulate_dataset, synthetic_scene, Dataset, SimulationSpec};
use jointsr::solver::{
    apply_update, cg_solve, initialize, lm_update, run, weighted_data_residual, IterationWeights, MuCandidate, Problem,
    Reconstruction, Solver, SolverConfig, SolverMode,
};
use rand::Rng;

const FACTOR: usize = 2;
const SEEDS: u64 = 5;
const MOTION_RUNS: u64 = 20;

struct Verdict {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: &'static str, pass: bool, detail: String) -> Verdict {
    Verdict { id, pass, detail }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------- criterion 1

fn adjoint_error(apply: impl Fn(&[f64]) -> Vec<f64>, adjoint: impl Fn(&[f64]) -> Vec<f64>, n: usize, m: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let v = random_vec(&mut r, n);
        let u = random_vec(&mut r, m);
        let av = apply(&v);
        let lhs = dot(&av, &u);
        let rhs = dot(&v, &adjoint(&u));
        worst = worst.max((lhs - rhs).abs() / (norm(&av) * norm(&u)).max(f64::MIN_POSITIVE));
    }
    worst
}

fn criterion_operators() -> Verdict {
    let t0 = Instant::now();
    let (w, h, k) = (32, 32, 4);
    let n = w * h;
    let psf = make_gaussian_psf(SimulationSpec::default().sigma_psf).unwrap();
    let theta = motions(&[(0.0, 0.0, 0.0), (0.012, 0.7, -1.3), (-0.017, -1.6, 0.4), (0.004, 1.25, 1.85)]);

    let mut errors = Vec::new();
    let d = build_decimation_operator(w, h, FACTOR).unwrap();
    errors.push(("D", adjoint_error(|v| d.apply(v), |u| d.apply_adjoint(u), n, d.rows(), 1)));
    let b = build_blur_operator(&psf, w, h).unwrap();
    errors.push(("H", adjoint_error(|v| b.apply(v), |u| b.apply_adjoint(u), n, n, 2)));
    let mut m_err = 0.0f64;
    for (i, m) in theta.frames().iter().enumerate() {
        let op = build_warp_operator(m, w, h).unwrap();
        m_err = m_err.max(adjoint_error(|v| op.apply(v), |u| op.apply_adjoint(u), n, n, 10 + i as u64));
    }
    errors.push(("M", m_err));
    let ops = SystemOperators::new(Geometry::new(w, h, FACTOR).unwrap(), &psf, &theta).unwrap();
    errors.push(("W", adjoint_error(|v| ops.forward(v), |u| ops.adjoint(u), n, k * n / 4, 3)));

    let t = ShiftTransform::new(BtvConfig::default(), w, h).unwrap();
    let mut r = rng(4);
    let weights = PriorWeights {
        alpha: (0..t.stacked_len()).map(|_| r.random_range(0.01..1.0)).collect(),
        irls: (0..t.stacked_len()).map(|_| r.random_range(1.0..100.0)).collect(),
    };
    errors.push((
        "R",
        adjoint_error(
            |v| apply_regularizer_rows(&t, v, &weights).unwrap(),
            |u| apply_regularizer_rows_adjoint(&t, u, &weights).unwrap(),
            n,
            t.stacked_len(),
            5,
        ),
    ));

    let secs = t0.elapsed().as_secs_f64();
    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let detail = errors.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    verdict("1 operator adjoints", worst < 1e-10 && secs < 10.0, format!("{detail}; {secs:.2}s (need < 1e-10, < 10s)"))
}

// ---------------------------------------------------------------- criterion 2

fn jacobian_gap(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn frobenius(a: &[[f64; 3]]) -> f64 {
    a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

fn criterion_jacobian() -> Verdict {
    let psf = make_gaussian_psf(SimulationSpec::default().sigma_psf).unwrap();
    let steps = JacobianSteps::default();
    let mut worst_rel = 0.0f64;
    let mut ratios = Vec::new();
    for seed in 0..3 {
        let x = smooth_image(32, 32, 40 + seed);
        // Fractional translations keep every bilinear stencil inside one cell
        // over the difference interval.
        for (phi, tu, tv) in [(0.0, 0.37, -0.41), (0.0, -1.28, 0.63), (0.0, 0.15, 1.33)] {
            let m = RigidMotion::new(phi, tu, tv);
            let jac = |s: JacobianSteps| motion_jacobian(&x, &m, &psf, FACTOR, s).unwrap();
            let reference = jac(steps.scaled(0.1));
            let coarse = jac(steps);
            let half = jac(steps.scaled(0.5));
            let e = jacobian_gap(coarse.rows(), reference.rows());
            worst_rel = worst_rel.max(e / frobenius(reference.rows()));
            ratios.push(e / jacobian_gap(half.rows(), reference.rows()));
        }
    }
    let ratio_ok = ratios.iter().all(|r| (3.0..=5.0).contains(r));
    verdict(
        "2 motion Jacobian",
        worst_rel < 1e-3 && ratio_ok,
        format!(
            "max relative error {worst_rel:.2e} (need < 1e-3); halving ratios {:.2}..{:.2} (need [3, 5])",
            ratios.iter().copied().fold(f64::INFINITY, f64::min),
            ratios.iter().copied().fold(0.0, f64::max)
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

const VALUE_GRID: [f64; 5] = [-1.0, -0.25, 0.0, 0.5, 2.0];
const WEIGHT_GRID: [f64; 5] = [0.5, 1.0, 1.5, 2.0, 3.0];

fn median_oracle(values: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    let mut best = f64::INFINITY;
    for &v in values {
        let mass: f64 = values.iter().zip(weights).filter(|(x, _)| **x <= v).map(|(_, w)| w).sum();
        if 2.0 * mass >= total && v < best {
            best = v;
        }
    }
    best
}

fn mad_oracle(values: &[f64], weights: &[f64]) -> f64 {
    let m = median_oracle(values, weights);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median_oracle(&dev, weights)
}

fn tuples(len: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..5usize.pow(len as u32)).map(move |mut code| {
        (0..len)
            .map(|_| {
                let d = code % 5;
                code /= 5;
                d
            })
            .collect()
    })
}

fn criterion_oracles() -> Verdict {
    let mut cases = 0usize;
    let mut mismatches = 0usize;
    let mut check = |values: &[f64], weights: &[f64]| {
        cases += 1;
        if weighted_median(values, weights).unwrap() != median_oracle(values, weights)
            || weighted_mad(values, weights).unwrap() != mad_oracle(values, weights)
        {
            mismatches += 1;
        }
    };
    for len in 1..=8 {
        for vi in tuples(len) {
            let values: Vec<f64> = vi.iter().map(|&i| VALUE_GRID[i]).collect();
            check(&values, &vec![1.0; len]);
            if len <= 4 {
                for wi in tuples(len) {
                    let weights: Vec<f64> = wi.iter().map(|&i| WEIGHT_GRID[i]).collect();
                    check(&values, &weights);
                }
            } else {
                let weights: Vec<f64> = vi.iter().enumerate().map(|(j, &i)| WEIGHT_GRID[(i + 2 * j) % 5]).collect();
                check(&values, &weights);
            }
        }
    }

    let mut r = rng(30);
    let mut cg_err = 0.0f64;
    for _ in 0..10 {
        let n = 50;
        let b: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, n)).collect();
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| (0..n).map(|k| b[k][i] * b[k][j]).sum::<f64>() + if i == j { 0.5 } else { 0.0 }).collect())
            .collect();
        let rhs = random_vec(&mut r, n);
        let expected = dense_solve(a.clone(), rhs.clone());
        let got = cg_solve(|v| a.iter().map(|row| dot(row, v)).collect(), &rhs, None, 1000, 1e-15).unwrap();
        let e = got.solution.iter().zip(&expected).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        cg_err = cg_err.max(e);
    }

    let mut weight_err = 0.0f64;
    let sigma = 0.05;
    let p = BtvConfig::default().sparsity;
    let pts: Vec<f64> = (0..1000).map(|_| r.random_range(-0.5..0.5)).collect();
    let beta = observation_weights(&pts, sigma);
    let alpha = prior_weights_fn(&pts, sigma, p);
    for ((&x, b), a) in pts.iter().zip(&beta).zip(&alpha) {
        let b_ref = if x.abs() <= sigma { 1.0 } else { sigma / x.abs() };
        let a_ref = if x.abs() <= sigma { 1.0 } else { p * (sigma / x.abs()).powf(1.0 - p) };
        weight_err = weight_err.max((b - b_ref).abs()).max((a - a_ref).abs());
    }

    verdict(
        "3 oracle equivalence",
        mismatches == 0 && cg_err <= 1e-8 && weight_err <= 1e-12,
        format!(
            "median/MAD {mismatches} mismatches in {cases} cases; CG max error {cg_err:.1e} (need <= 1e-8); weights max error {weight_err:.1e} (need <= 1e-12)"
        ),
    )
}

// ------------------------------------------------------------ criteria 4 to 8

struct Case {
    dataset: Dataset,
    problem: Problem,
}

fn case(seed: u64, outlier_frames: usize) -> Case {
    let spec = SimulationSpec { frames: 8, factor: FACTOR, outlier_frames, seed, ..SimulationSpec::default() };
    let dataset = simulate_dataset(&synthetic_scene(64, 64, 1000 + seed), &spec).unwrap();
    let problem = Problem::new(dataset.stack.clone(), FACTOR, make_gaussian_psf(spec.sigma_psf).unwrap()).unwrap();
    Case { dataset, problem }
}

fn config(mode: SolverMode) -> SolverConfig {
    SolverConfig { mode, ..SolverConfig::default() }
}

fn final_psnr(r: &Reconstruction) -> f64 {
    r.trace.records.last().and_then(|x| x.psnr).expect("ground truth supplied")
}

fn median_translation_error(estimate: &MotionSet, truth: &MotionSet) -> f64 {
    median(&estimate.translation_errors(truth)[1..])
}

/// Independent replay of the damping search for one outer iteration.
fn replay_damping(solver: &Solver, weights: &IterationWeights) -> Vec<MuCandidate> {
    let cfg = solver.config();
    let system = solver.assemble(weights).unwrap();
    let beta = &weights.confidence.beta;
    let mut warm: Option<Vec<f64>> = None;
    (0..cfg.mu_candidates)
        .map(|i| {
            let mu = 10f64.powf(-4.0 + 8.0 * i as f64 / (cfg.mu_candidates - 1) as f64);
            let up = lm_update(&system, solver.motion().len(), mu, cfg.cg_iterations, cfg.cg_tol, warm.as_deref()).unwrap();
            let (x, theta) = apply_update(solver.image(), solver.motion(), &up);
            warm = Some(up.packed);
            MuCandidate {
                mu,
                objective: weighted_data_residual(
                    solver.operators().blur_decimate(),
                    solver.observations(),
                    beta,
                    &x,
                    &theta,
                ),
            }
        })
        .collect()
}

struct LmRun {
    psnr: Vec<f64>,
    motion: MotionSet,
    beta: Vec<f64>,
    mu_checks: usize,
    mu_failures: Vec<String>,
}

/// LM run stepped by hand so every damping search can be re-evaluated.
fn run_lm_checked(c: &Case) -> LmRun {
    let ds = &c.dataset;
    let x0 = initialize(&c.problem.stack, &ds.theta_init, FACTOR).unwrap();
    let mut solver =
        Solver::new(&c.problem, &ds.theta_init, x0, config(SolverMode::LevenbergMarquardt), Some(&ds.ground_truth)).unwrap();
    let mut beta = Vec::new();
    let mut mu_checks = 0;
    let mut mu_failures = Vec::new();
    while !solver.is_done() {
        let weights = solver.compute_weights().unwrap();
        let replay = replay_damping(&solver, &weights);
        let rec = solver.step().unwrap().clone();
        let best = replay.iter().map(|c| c.objective).fold(f64::INFINITY, f64::min);
        let argmin = replay.iter().rev().find(|c| c.objective == best).unwrap().mu;
        mu_checks += 1;
        if rec.mu_candidates != replay || rec.mu != argmin {
            mu_failures.push(format!("seed {} iteration {}", ds.spec.seed, rec.iteration));
        }
        beta = weights.confidence.beta;
    }
    LmRun {
        psnr: solver.records().iter().map(|r| r.psnr.unwrap()).collect(),
        motion: solver.motion().clone(),
        beta,
        mu_checks,
        mu_failures,
    }
}

struct CaseResult {
    lm: LmRun,
    gn: f64,
    fixed: f64,
    init_error: f64,
    secs: f64,
}

fn run_case(c: &Case) -> CaseResult {
    let t0 = Instant::now();
    let ds = &c.dataset;
    let lm = run_lm_checked(c);
    let other = |mode| {
        let r = run(&c.problem, &ds.theta_init, &config(mode), Some(&ds.ground_truth)).unwrap();
        final_psnr(&r)
    };
    let gn = other(SolverMode::GaussNewton);
    let fixed = other(SolverMode::ReconstructionOnly);
    CaseResult { lm, gn, fixed, init_error: median_translation_error(&ds.theta_init, &ds.theta_true), secs: t0.elapsed().as_secs_f64() }
}

/// Mean β over corrupted pixels, over every pixel of corrupted frames, and
/// over clean frames.
fn beta_means(c: &Case, beta: &[f64]) -> (f64, f64, f64) {
    let m = c.problem.geometry.lr_len();
    let ds = &c.dataset;
    let mut pixels = Vec::new();
    let mut corrupt_frames = Vec::new();
    let mut clean = Vec::new();
    for (k, b) in beta.chunks(m).enumerate() {
        if ds.outlier_frames.contains(&k) {
            corrupt_frames.extend_from_slice(b);
            pixels.extend(ds.outlier_pixels[k].iter().map(|&i| b[i]));
        } else {
            clean.extend_from_slice(b);
        }
    }
    (mean(&pixels), mean(&corrupt_frames), mean(&clean))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut verdicts = vec![criterion_operators(), criterion_jacobian(), criterion_oracles()];
    for v in &verdicts {
        report(v);
    }

    let mut clean_results = Vec::new();
    let mut outlier_results = Vec::new();
    let mut outlier_cases = Vec::new();
    for seed in 0..SEEDS {
        let c = case(seed, 0);
        clean_results.push(run_case(&c));
        let c = case(seed, 2);
        outlier_results.push(run_case(&c));
        outlier_cases.push(c);
    }
    let slowest = clean_results.iter().chain(&outlier_results).map(|r| r.secs).fold(0.0, f64::max);
    let fast_enough = slowest < 300.0;

    // 4a
    let gaps: Vec<f64> = clean_results
        .iter()
        .map(|r| {
            let p = &r.lm.psnr;
            (p[9.min(p.len() - 1)] - p[p.len() - 1]).abs()
        })
        .collect();
    let v = verdict(
        "4a LM settles by iteration 10",
        gaps.iter().all(|g| *g <= 0.2) && fast_enough,
        format!(
            "|PSNR@10 - PSNR@25| per seed: {} dB (need <= 0.2); LM iterations {}; slowest case {slowest:.1}s (need < 300s)",
            fmt_list(&gaps),
            clean_results.iter().map(|r| r.lm.psnr.len().to_string()).collect::<Vec<_>>().join(" ")
        ),
    );
    report(&v);
    verdicts.push(v);

    // 4b
    let margins: Vec<f64> = outlier_results.iter().map(|r| r.lm.psnr.last().unwrap() - r.gn).collect();
    let v = verdict(
        "4b LM beats GN with outliers",
        margins.iter().all(|m| *m >= 0.0) && mean(&margins) >= 0.5 && fast_enough,
        format!(
            "LM - GN per seed: {} dB, mean {:.2} dB (need each >= 0, mean >= 0.5); LM {} / GN {} dB",
            fmt_list(&margins),
            mean(&margins),
            fmt_list(&outlier_results.iter().map(|r| *r.lm.psnr.last().unwrap()).collect::<Vec<_>>()),
            fmt_list(&outlier_results.iter().map(|r| r.gn).collect::<Vec<_>>())
        ),
    );
    report(&v);
    verdicts.push(v);

    // 5
    let joint = |rs: &[CaseResult]| rs.iter().map(|r| r.lm.psnr.last().unwrap() - r.fixed).collect::<Vec<f64>>();
    let (clean_margin, outlier_margin) = (joint(&clean_results), joint(&outlier_results));
    let v = verdict(
        "5 LM beats fixed motion",
        mean(&clean_margin) >= 1.0 && mean(&outlier_margin) >= 1.0,
        format!(
            "LM - fixed mean {:.2} dB without outliers ({}), {:.2} dB with outliers ({}) (need >= 1.0)",
            mean(&clean_margin),
            fmt_list(&clean_margin),
            mean(&outlier_margin),
            fmt_list(&outlier_margin)
        ),
    );
    report(&v);
    verdicts.push(v);

    // 6
    let mut motion_pairs: Vec<(f64, f64)> = clean_results
        .iter()
        .zip(0..)
        .map(|(r, seed)| (r.init_error, median_translation_error(&r.lm.motion, &case(seed, 0).dataset.theta_true)))
        .collect();
    for seed in SEEDS..MOTION_RUNS {
        let c = case(seed, 0);
        let r = run(&c.problem, &c.dataset.theta_init, &config(SolverMode::LevenbergMarquardt), None).unwrap();
        motion_pairs.push((
            median_translation_error(&c.dataset.theta_init, &c.dataset.theta_true),
            median_translation_error(&r.motion, &c.dataset.theta_true),
        ));
    }
    let improved = motion_pairs.iter().filter(|(a, b)| b < a).count();
    let v = verdict(
        "6 motion refinement",
        improved * 10 >= 9 * motion_pairs.len(),
        format!(
            "{improved}/{} runs improved; median translation error {:.3} -> {:.3} px (need >= 90%)",
            motion_pairs.len(),
            median(&motion_pairs.iter().map(|p| p.0).collect::<Vec<_>>()),
            median(&motion_pairs.iter().map(|p| p.1).collect::<Vec<_>>())
        ),
    );
    report(&v);
    verdicts.push(v);

    // 7
    let (mut pixel_ratio, mut frame_ratio) = (Vec::new(), Vec::new());
    for (c, r) in outlier_cases.iter().zip(&outlier_results) {
        let (pixels, frames, clean) = beta_means(c, &r.lm.beta);
        pixel_ratio.push(pixels / clean);
        frame_ratio.push(frames / clean);
    }
    let v = verdict(
        "7 outlier down-weighting",
        pixel_ratio.iter().all(|x| *x < 0.6),
        format!(
            "mean beta on corrupted pixels / clean frames per seed: {} (need < 0.6); whole corrupted frames / clean frames: {}",
            fmt_list(&pixel_ratio),
            fmt_list(&frame_ratio)
        ),
    );
    report(&v);
    verdicts.push(v);

    // 8
    let all_lm = clean_results.iter().chain(&outlier_results).map(|r| &r.lm);
    let checks: usize = all_lm.clone().map(|r| r.mu_checks).sum();
    let failures: Vec<&String> = all_lm.flat_map(|r| &r.mu_failures).collect();
    let v = verdict(
        "8 damping grid optimality",
        failures.is_empty(),
        format!("{} of {checks} outer iterations re-evaluated with a different outcome {:?}", failures.len(), failures),
    );
    report(&v);
    verdicts.push(v);

    let v = criterion_determinism();
    report(&v);
    verdicts.push(v);

    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!(
        "acceptance: {} passed, {failed} failed ({:.0}s)",
        verdicts.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn report(v: &Verdict) {
    println!("{} criterion {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.id, v.detail);
}

// ---------------------------------------------------------------- criterion 9

fn criterion_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    fs::write(&cfg, r#"{"scene_size": 64, "frames": 8}"#).unwrap();
    let outputs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let run = Command::new(env!("CARGO_BIN_EXE_jointsr"))
                .args(["compare", "--config", cfg.to_str().unwrap(), "--seed", "4", "--out", out.to_str().unwrap()])
                .output()
                .unwrap();
            assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
            ["convergence.csv", "summary.csv"].map(|f| fs::read(out.join(f)).unwrap())
        })
        .collect();
    let same = outputs[0] == outputs[1];
    let rows = String::from_utf8_lossy(&outputs[0][0]).lines().count() - 1;
    verdict(
        "9 determinism",
        same,
        format!("two compare runs with seed 4: CSVs {} ({rows} convergence rows)", if same { "byte-identical" } else { "differ" }),
    )
}
