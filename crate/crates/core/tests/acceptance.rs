//! Acceptance checks. Prints one PASS/FAIL line per criterion and a summary.
//! Exits nonzero on a failure only when ACCEPTANCE_STRICT=1, so the remaining
//! test binaries still run under `cargo test`.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_4;
use std::time::Instant;

use mlsc::driver::{
    build_schedule, calibrate_rates, fit_loglog_slope, ml_run, sl_run, CalibrationConfig, CollocationOptions,
    MLResult, MlConfig, RateEstimates, StochasticSampler,
};
use mlsc::goal_estimator::dorfler_mark;
use mlsc::mesh::{initial_mesh, SquareDomain};
use mlsc::pathwise::{adaptive_solve, AdaptiveOptions};
use mlsc::problems::{OnePeakProblem, PathwiseProblem, TensorGaussian};
use mlsc::smolyak::{cc_rule, delta_expectation, AdaptiveGridOptions, MultiIndex, SparseGridState, StepOutcome};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const REFERENCE: f64 = 0.015095545;
const PATHWISE_REFERENCE: f64 = 0.025315675;
const Y_REF: [f64; 2] = [-0.22, -0.22];
const SWEEP: [f64; 4] = [1e-5, 5e-6, 2.5e-6, 1e-6];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rates() -> RateEstimates {
    RateEstimates::new(1.0, 9.75).unwrap()
}

fn criterion1(p: &OnePeakProblem) -> Outcome {
    let start = Instant::now();
    let r = adaptive_solve(p, &Y_REF, 5e-6, &AdaptiveOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let s = &r.levels[0];
    let oracle = p.oracle(&Y_REF).unwrap();
    let err = (s.psi - PATHWISE_REFERENCE).abs();
    let pass = err <= 5e-6 && (oracle - PATHWISE_REFERENCE).abs() <= 1e-9 && !s.flagged && secs < 120.0;
    outcome(
        pass,
        format!(
            "psi={:.9} |psi-ref|={err:.3e} (tol 5e-6) oracle={oracle:.9} steps={} vertices={} time={secs:.1}s",
            s.psi, s.iters, s.vertices
        ),
    )
}

fn criterion2(sweep: &[MLResult]) -> Outcome {
    let r = &sweep[0];
    let err = (r.total - REFERENCE).abs();
    outcome(
        err <= 1e-5,
        format!("total={:.10} |total-ref|={err:.3e} (tol 1e-5) points={:?}", r.total, points(r)),
    )
}

fn points(r: &MLResult) -> Vec<usize> {
    r.levels.iter().map(|l| l.m_k).collect()
}

fn criterion3(sweep: &[MLResult]) -> Outcome {
    let mut all_within = true;
    let mut one_close = false;
    let mut parts = Vec::new();
    for r in &sweep[..3] {
        let err = r.error.unwrap();
        all_within &= err <= r.epsilon;
        one_close |= err >= r.epsilon / 10.0;
        parts.push(format!("eps={:.1e} err={err:.3e}", r.epsilon));
    }
    outcome(
        all_within && one_close,
        format!("{} (need err<=eps for all, err>=eps/10 for one)", parts.join(", ")),
    )
}

fn calibration(p: &OnePeakProblem) -> mlsc::Result<mlsc::driver::Calibration> {
    calibrate_rates(
        p,
        &CalibrationConfig {
            y: Y_REF.to_vec(),
            spatial_tols: vec![1e-3, 5e-4, 2e-4, 1e-4, 5e-5, 2e-5, 1e-5, 5e-6],
            eta_x: 1e-7,
            stochastic_tols: vec![1e-3, 1e-4, 1e-5, 1e-6],
            sampler: StochasticSampler::FiniteElement,
            collocation: CollocationOptions::default(),
        },
    )
}

fn criterion4(cal: &mlsc::driver::Calibration) -> Outcome {
    let (s, mu) = (cal.rates.s_star, cal.rates.mu_star);
    outcome(
        (0.8..=1.2).contains(&s) && (7.0..=13.0).contains(&mu),
        format!("s*={s:.3} (in [0.8,1.2]) mu*={mu:.3} (in [7,13])"),
    )
}

fn criterion5(cal: &mlsc::driver::Calibration) -> Outcome {
    let expected = [5usize, 7, 11, 11];
    let mut pass = cal.stochastic.len() == expected.len();
    let mut parts = Vec::new();
    for (s, &want) in cal.stochastic.iter().zip(&expected) {
        let one_d = s.indices.iter().all(|i| i.0[1..].iter().all(|&l| l == 1));
        let ratio = s.points as f64 / want as f64;
        pass &= one_d && (0.5..=2.0).contains(&ratio) && !s.flagged;
        let max_level = s.indices.iter().map(|i| i.0[0]).max().unwrap_or(1);
        parts.push(format!(
            "tol={:.0e} points={} (expect {want}) y1-only={one_d} max level={max_level}",
            s.tol, s.points
        ));
    }
    outcome(pass, parts.join(", "))
}

fn criterion6(p: &OnePeakProblem, sweep: &[MLResult]) -> Outcome {
    let fine = &sweep[3];
    let sl = sl_run(p, fine.epsilon, 0.1, &CollocationOptions::default()).unwrap();
    let cheaper = fine.cost < sl.cost;
    let costs: Vec<f64> = sweep.iter().map(|r| r.cost as f64).collect();
    let errors: Vec<f64> = sweep.iter().map(|r| r.error.unwrap()).collect();
    let slope = fit_loglog_slope(&costs, &errors).map(|f| f.slope).unwrap_or(f64::NAN);
    outcome(
        cheaper && (-1.3..=-0.7).contains(&slope),
        format!(
            "eps=1e-6 cost ML={} SL={} (SL err {:.3e}); error-vs-cost slope={slope:.3} (in [-1.3,-0.7]); costs={costs:?} errors={:?}",
            fine.cost,
            sl.cost,
            sl.error.unwrap(),
            errors.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>()
        ),
    )
}

/// Two significant digits, halves rounded up.
fn round2(v: f64) -> f64 {
    let e = v.abs().log10().floor() as i32;
    let scale = 10f64.powi(1 - e);
    (v * scale * (1.0 + 1e-12)).round() / scale
}

fn criterion7() -> Outcome {
    let table_rates = RateEstimates::new(1.0, 3.4).unwrap();
    let s = build_schedule(1e-2, 0.2, 2, 1.0, 0.1, &table_rates, 4.7125).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (j, (&got, want)) in s.eta_x.iter().zip([1.25e-1, 2.5e-2, 5.0e-3]).enumerate() {
        let ok = (got - want).abs() <= 1e-15 * want;
        pass &= ok;
        if !ok {
            parts.push(format!("eta_X{j}={got:e} expected {want:e}"));
        }
    }
    for (j, (&got, want)) in s.eta_y.iter().zip([3.0e-2, 1.3e-2, 7.2e-3]).enumerate() {
        let ok = (round2(got) - want).abs() <= 1e-12 * want;
        pass &= ok;
        parts.push(format!("eta_Y{j}={got:.4e}->{:.1e} (table {want:.1e}){}", round2(got), if ok { "" } else { " MISMATCH" }));
    }

    let mut rng = StdRng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let eps = 10f64.powf(rng.gen_range(-8.0..-1.0));
        let q = rng.gen_range(0.05..0.95);
        let k = rng.gen_range(0..6);
        let c_x = rng.gen_range(0.1..10.0);
        let c_y = rng.gen_range(0.01..10.0);
        let r = RateEstimates::new(rng.gen_range(0.2..3.0), rng.gen_range(0.5..15.0)).unwrap();
        let em1 = rng.gen_range(0.01..10.0);
        let s = build_schedule(eps, q, k, c_x, c_y, &r, em1).unwrap();
        let sum: f64 = s.eta_y.iter().map(|e| c_y * e).sum();
        worst = worst.max((sum - eps / 2.0).abs() / (eps / 2.0));
    }
    pass &= worst <= 1e-12;
    parts.push(format!("1000 random schedules: max rel |sum C_Y eta_Y - eps/2| = {worst:.1e}"));
    outcome(pass, parts.join(", "))
}

fn mesh_suite(rng: &mut StdRng) -> Result<(), String> {
    let mut mesh = initial_mesh(&SquareDomain::default(), 3);
    for step in 0..10 {
        let n = mesh.n_triangles();
        let marks: Vec<usize> = (0..rng.gen_range(1..=n / 10)).map(|_| rng.gen_range(0..n)).collect();
        let (child, record) = mesh.refine_nvb(&marks).map_err(|e| e.to_string())?;
        child.check_invariants().map_err(|e| format!("step {step}: {e}"))?;
        if child.min_angle() < FRAC_PI_4 - 1e-12 {
            return Err(format!("step {step}: min angle {}", child.min_angle()));
        }
        let mut area = vec![0.0; n];
        for (c, &p) in record.parent_of.iter().enumerate() {
            area[p as usize] += child.area(c);
        }
        if (0..n).any(|t| (area[t] - mesh.area(t)).abs() > 1e-12 * mesh.area(t)) {
            return Err(format!("step {step}: children do not tile their parents"));
        }
        mesh = child;
    }
    Ok(())
}

fn cc_suite() -> Result<(), String> {
    for level in 1..=10 {
        let (nodes, w) = cc_rule(level).map_err(|e| e.to_string())?;
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-14 || w.iter().zip(w.iter().rev()).any(|(a, b)| (a - b).abs() > 1e-15) {
            return Err(format!("level {level}: weights sum to {sum}"));
        }
        if nodes.windows(2).any(|p| p[0] >= p[1]) {
            return Err(format!("level {level}: nodes not ascending"));
        }
    }
    let (_, w) = cc_rule(2).map_err(|e| e.to_string())?;
    let want = [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0];
    if w.iter().zip(want).any(|(a, b)| (a - b).abs() > 1e-15) {
        return Err(format!("level-2 weights {w:?}"));
    }
    Ok(())
}

fn telescoping_suite(rng: &mut StdRng) -> Result<(), String> {
    for _ in 0..200 {
        let (a, b, c) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.1..3.0));
        let g = move |y: &[f64]| Ok((a * y[0]).sin() + b * (c * y[0]).cos() + (0.5 * a * y[0]).exp());
        let mut cache = HashMap::new();
        let mut sum = 0.0;
        for level in 1..=6u32 {
            sum += delta_expectation(&g, &MultiIndex(vec![level]), &[[-1.0, 1.0]], &mut cache)
                .map_err(|e| e.to_string())?
                .delta_value;
            let (nodes, w) = cc_rule(level).map_err(|e| e.to_string())?;
            let direct: f64 = nodes.iter().zip(&w).map(|(x, wi)| wi * g(&[*x]).unwrap()).sum();
            if (sum - direct).abs() > 1e-13 * direct.abs().max(1.0) {
                return Err(format!("level {level}: {sum} vs {direct}"));
            }
        }
    }
    Ok(())
}

fn closure_suite() -> Result<(), String> {
    let f = TensorGaussian::anisotropic(16, 0.8, 1.4);
    let g = |y: &[f64]| Ok(f.value(y));
    let bounds = vec![[-1.0, 1.0]; 16];
    let mut state = SparseGridState::new(&g, &bounds).map_err(|e| e.to_string())?;
    let opts = AdaptiveGridOptions::new(0.0);
    for step in 0..500 {
        match state.step(&g, &opts).map_err(|e| e.to_string())? {
            StepOutcome::Refined => {}
            other => return Err(format!("step {step}: stopped with {other:?}")),
        }
        if !state.index_set().is_downward_closed() {
            return Err(format!("step {step}: index set not downward closed"));
        }
    }
    Ok(())
}

fn brute_force_min(values: &[f64], theta: f64) -> usize {
    let total: f64 = values.iter().map(|v| v.abs()).sum();
    let n = values.len();
    (0u32..1 << n)
        .filter(|mask| {
            let s: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| values[i].abs()).sum();
            s >= theta * total
        })
        .map(|mask| mask.count_ones() as usize)
        .min()
        .unwrap_or(0)
}

fn dorfler_suite(rng: &mut StdRng) -> Result<(), String> {
    for _ in 0..500 {
        let n = rng.gen_range(1..=12);
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let theta = rng.gen_range(0.05..0.95);
        let marked = dorfler_mark(&values, theta).map_err(|e| e.to_string())?;
        let want = brute_force_min(&values, theta);
        if marked.len() != want {
            return Err(format!("{values:?} theta {theta}: {} marked, minimum {want}", marked.len()));
        }
    }
    Ok(())
}

fn source_suite(p: &OnePeakProblem, rng: &mut StdRng) -> Result<(), String> {
    for _ in 0..100 {
        let y = [rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25)];
        let x = [y[0] + rng.gen_range(-0.1..0.1), y[1] + rng.gen_range(-0.1..0.1)];
        let residual = |h: f64| {
            let u = |a: f64, b: f64| p.exact_solution([x[0] + a, x[1] + b], &y);
            let lap = (u(h, 0.0) + u(-h, 0.0) + u(0.0, h) + u(0.0, -h) - 4.0 * u(0.0, 0.0)) / (h * h);
            (-lap - p.source(x, &y)).abs()
        };
        let (r1, r2) = (residual(1e-3), residual(5e-4));
        let scale = 100.0 * (p.alpha(y[0]) + 1.0);
        if r1 > 1e-2 * scale {
            return Err(format!("x={x:?} y={y:?}: residual {r1}"));
        }
        if r1 > 1e-6 * scale && !(3.5..4.5).contains(&(r1 / r2)) {
            return Err(format!("x={x:?} y={y:?}: ratio {}", r1 / r2));
        }
    }
    Ok(())
}

fn determinism_suite(p: &OnePeakProblem) -> Result<(), String> {
    let run = |threads: usize| -> Result<String, String> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| e.to_string())?;
        pool.install(|| {
            let ml = ml_run(p, &MlConfig::new(5e-5, rates())).map_err(|e| e.to_string())?;
            let sl = sl_run(p, 1e-4, 0.1, &CollocationOptions::default()).map_err(|e| e.to_string())?;
            Ok(serde_json::to_string(&(ml, sl)).unwrap())
        })
    };
    let one = run(1)?;
    for threads in [2, 3] {
        if run(threads)? != one {
            return Err(format!("{threads} threads differ from 1"));
        }
    }
    Ok(())
}

fn criterion8(p: &OnePeakProblem) -> Outcome {
    let mut rng = StdRng::seed_from_u64(99);
    let suites: Vec<(&str, Result<(), String>)> = vec![
        ("mesh", mesh_suite(&mut rng)),
        ("cc weights", cc_suite()),
        ("telescoping", telescoping_suite(&mut rng)),
        ("closure N=16", closure_suite()),
        ("dorfler", dorfler_suite(&mut rng)),
        ("source", source_suite(p, &mut rng)),
        ("determinism", determinism_suite(p)),
    ];
    let pass = suites.iter().all(|(_, r)| r.is_ok());
    let detail = suites
        .iter()
        .map(|(name, r)| match r {
            Ok(()) => format!("{name} ok"),
            Err(e) => format!("{name} FAILED: {e}"),
        })
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, detail)
}

fn main() {
    let p = OnePeakProblem::anisotropic();
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut emit = |n: usize, o: Outcome, secs: f64| {
        println!(
            "criterion {n}: {} {} [{secs:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, o));
    };

    let t = Instant::now();
    emit(1, criterion1(&p), t.elapsed().as_secs_f64());

    let t = Instant::now();
    let sweep: Vec<MLResult> = SWEEP
        .iter()
        .map(|&eps| ml_run(&p, &MlConfig::new(eps, rates())).unwrap())
        .collect();
    emit(2, criterion2(&sweep), t.elapsed().as_secs_f64());
    emit(3, criterion3(&sweep), 0.0);

    let t = Instant::now();
    match calibration(&p) {
        Ok(cal) => {
            let secs = t.elapsed().as_secs_f64();
            emit(4, criterion4(&cal), secs);
            emit(5, criterion5(&cal), 0.0);
        }
        Err(e) => {
            emit(4, outcome(false, format!("calibration failed: {e}")), 0.0);
            emit(5, outcome(false, format!("calibration failed: {e}")), 0.0);
        }
    }

    let t = Instant::now();
    emit(6, criterion6(&p, &sweep), t.elapsed().as_secs_f64());
    let t = Instant::now();
    emit(7, criterion7(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    emit(8, criterion8(&p), t.elapsed().as_secs_f64());

    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("acceptance: failing criteria {failed:?}");
        if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
