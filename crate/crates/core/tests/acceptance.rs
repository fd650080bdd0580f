//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::f64::consts::TAU;
use std::time::{Duration, Instant};

use ldp_core::discretize::{PeriodicGrid, TiltedFamily};
use ldp_core::expansion::{exact_tail, extract_coefficients, leading_coefficient, ExpansionSettings};
use ldp_core::model::{DiscreteChainSpec, EvaluationFrame, TorusDiffusionSpec};
use ldp_core::rate::{rate_point, rate_table, RateSettings};
use ldp_core::simulate::{estimate_tail_is, estimate_tail_mc, with_threads, SimulationSettings};
use ldp_core::spectral::{cgf, cgf_derivatives};
use ldp_core::verify::{brute_force_chain_tail, run_condition_suite, upper_normal, Condition, ConditionReport};

const GRID: usize = 256;

// 1
const RATE_TOL: f64 = 1e-8;
const RATE_BUDGET: Duration = Duration::from_secs(1);
// 2
const D0_ANALYTIC_TOL: f64 = 1e-6;
const D0_FIT_TOL: f64 = 0.01;
const D1_FIT_TOL: f64 = 0.02;
const D2_FIT_TOL: f64 = 0.10;
const GAUSSIAN_FIT_ORDER: usize = 6;
const PREFACTOR_BUDGET: Duration = Duration::from_secs(30);
// 3
const CHAIN_TOL: f64 = 1e-6;
const CHAIN_BUDGET: Duration = Duration::from_secs(10);
// 4
const CURVATURE_TOL: f64 = 5e-3;
const FLATTEN_TOL: f64 = 0.01;
const MATHIEU_FIT_ORDER: usize = 4;
const MATHIEU_BUDGET: Duration = Duration::from_secs(120);
// 5
const IS_PATHS: usize = 100_000;
const IS_DT: f64 = 1e-3;
const IS_SEED: u64 = 20_240_601;
const IS_SIGMAS: f64 = 3.0;
const IS_MIN_ESS: f64 = 1e3;
const MC_ZERO_FRACTION: f64 = 0.99;
const MC_QUANTILE: f64 = 1e-6;
const IS_BUDGET: Duration = Duration::from_secs(300);
// 7
const GRID_DOUBLING_TOL: f64 = 1e-6;
const DUALITY_TOL: f64 = 1e-10;

fn diffusion(spec: TorusDiffusionSpec, n: usize) -> TiltedFamily {
    TiltedFamily::diffusion(&spec, PeriodicGrid::new(n, 1).unwrap()).unwrap()
}

fn rel(x: f64, y: f64) -> f64 {
    ((x - y) / y).abs()
}

type Check = Result<(bool, String), String>;

fn timed(budget: Duration, f: impl FnOnce() -> Check) -> (bool, String) {
    let start = Instant::now();
    let outcome = f();
    let elapsed = start.elapsed();
    let within = elapsed <= budget;
    match outcome {
        Ok((ok, detail)) => (
            ok && within,
            format!("{detail}; {:.2}s of {}s", elapsed.as_secs_f64(), budget.as_secs()),
        ),
        Err(e) => (false, format!("error: {e}")),
    }
}

fn gaussian_rate() -> Check {
    let family = diffusion(TorusDiffusionSpec::gaussian_baseline(), GRID);
    let mut worst: f64 = 0.0;
    for a in [0.5, 1.0, 2.0] {
        let p = rate_point(&family, a, &RateSettings::default()).map_err(|e| e.to_string())?;
        worst = worst.max((p.rate - a * a / 2.0).abs()).max((p.theta_a - a).abs());
    }
    Ok((worst < RATE_TOL, format!("max |I − a²/2|, |θ_a − a| = {worst:.2e}")))
}

fn gaussian_prefactor() -> Check {
    let family = diffusion(TorusDiffusionSpec::gaussian_baseline(), GRID);
    let frame = EvaluationFrame::default();
    let settings = ExpansionSettings::default();
    let unit = 1.0 / TAU.sqrt();
    let d0 = leading_coefficient(&family, &frame, 1.0, &settings.rate).map_err(|e| e.to_string())?;
    let times: Vec<f64> = (2..=32).map(|k| 8.0 * k as f64).collect();
    let (_, fit) = extract_coefficients(&family, &frame, 1.0, &times, GAUSSIAN_FIT_ORDER, &settings)
        .map_err(|e| e.to_string())?;
    let c = &fit.coefficients;
    let gaps = [
        (d0.d0 - unit).abs(),
        rel(c[0], unit),
        rel(c[1], -unit),
        rel(c[2], 3.0 * unit),
    ];
    let ok = gaps[0] < D0_ANALYTIC_TOL && gaps[1] < D0_FIT_TOL && gaps[2] < D1_FIT_TOL && gaps[3] < D2_FIT_TOL;
    Ok((
        ok,
        format!(
            "D0 analytic err {:.2e}, fit D0/D1/D2 rel err {:.2e}/{:.2e}/{:.2e} (order {GAUSSIAN_FIT_ORDER}, cond {:.1})",
            gaps[0], gaps[1], gaps[2], gaps[3], fit.condition
        ),
    ))
}

fn chain_oracle() -> Check {
    let coin = DiscreteChainSpec::symmetric_coin();
    let family = TiltedFamily::chain(&coin).map_err(|e| e.to_string())?;
    let frame = EvaluationFrame::default();
    let mut worst: f64 = 0.0;
    let mut at_ten = f64::NAN;
    for n in [10usize, 20, 40] {
        let exact = exact_tail(&family, &frame, 0.6, n as f64, &ExpansionSettings::default()).map_err(|e| e.to_string())?;
        let brute = brute_force_chain_tail(&coin, &frame, n, 0.6).map_err(|e| e.to_string())?;
        worst = worst.max(rel(exact, brute));
        if n == 10 {
            at_ten = exact;
        }
    }
    let binomial = rel(at_ten, 56.0 / 1024.0);
    Ok((
        worst < CHAIN_TOL && binomial < CHAIN_TOL,
        format!("max rel gap {worst:.2e}; n=10 tail {at_ten:.10}"),
    ))
}

fn mathieu() -> Check {
    let family = diffusion(TorusDiffusionSpec::mathieu(), GRID);
    let frame = EvaluationFrame::default();
    let settings = ExpansionSettings::default();
    let mut worst: f64 = 0.0;
    for theta in [0.0, 0.5, 1.0] {
        let d = cgf_derivatives(&family, theta).map_err(|e| e.to_string())?;
        worst = worst.max(rel(d.second, d.spectral_second));
    }
    let d0 = leading_coefficient(&family, &frame, 0.3, &settings.rate).map_err(|e| e.to_string())?.d0;
    let times: Vec<f64> = (2..=16).map(|k| 25.0 * k as f64).collect();
    let (curve, fit) =
        extract_coefficients(&family, &frame, 0.3, &times, MATHIEU_FIT_ORDER, &settings).map_err(|e| e.to_string())?;
    let scaled: Vec<f64> = curve.points.iter().map(|p| p.normalized * p.t.sqrt()).collect();
    let approaching = scaled.windows(2).all(|w| (w[1] - d0).abs() < (w[0] - d0).abs());
    let gap = fit.d0_gap.unwrap_or(f64::INFINITY);
    Ok((
        worst < CURVATURE_TOL && gap < FLATTEN_TOL && approaching,
        format!(
            "max |μ''_fd − Ξ|/Ξ {worst:.2e}; D0 {d0:.6}, fit over t∈[50,400] gap {gap:.2e}, √t·e^(It)P at t=400 {:.6}, monotone approach {approaching}",
            scaled.last().unwrap()
        ),
    ))
}

/// Smallest `k` with `P(Bin(n, p) > k) ≤ q`.
fn binomial_upper(n: usize, p: f64, q: f64) -> usize {
    let mut pmf = (1.0 - p).powi(n as i32);
    let mut cdf = pmf;
    let mut k = 0;
    while 1.0 - cdf > q && k < n {
        pmf *= (n - k) as f64 / (k + 1) as f64 * p / (1.0 - p);
        cdf += pmf;
        k += 1;
    }
    k
}

fn importance_sampling() -> Check {
    let frame = EvaluationFrame::default();
    let settings = SimulationSettings::new(IS_DT, IS_PATHS, IS_SEED);
    let rate = RateSettings::default();
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, spec, a, t) in [
        ("gaussian", TorusDiffusionSpec::gaussian_baseline(), 1.0, 16.0),
        ("mathieu", TorusDiffusionSpec::mathieu(), 0.3, 30.0),
    ] {
        let family = diffusion(spec, GRID);
        let exact = exact_tail(&family, &frame, a, t, &ExpansionSettings::default()).map_err(|e| e.to_string())?;
        let est = estimate_tail_is(&family, &frame, a, t, &settings, &rate).map_err(|e| e.to_string())?;
        let z = (est.p_hat - exact).abs() / est.stderr;
        ok &= z <= IS_SIGMAS && est.ess > IS_MIN_ESS;
        lines.push(format!(
            "{name}: IS {:.5e} ± {:.1e} vs exact {exact:.5e} ({z:.2}σ, ess {:.0})",
            est.p_hat, est.stderr, est.ess
        ));
        if name == "gaussian" {
            let mc = estimate_tail_mc(&family, &frame, a, t, &settings).map_err(|e| e.to_string())?;
            let zero = 1.0 - mc.hits as f64 / mc.n_paths as f64;
            let bound = binomial_upper(IS_PATHS, upper_normal(4.0), MC_QUANTILE);
            ok &= zero >= MC_ZERO_FRACTION && mc.hits <= bound;
            lines.push(format!(
                "naive MC: {} hits in {} paths (zero-hit fraction {zero:.5}, binomial bound {bound})",
                mc.hits, mc.n_paths
            ));
        }
    }
    Ok((ok, lines.join("; ")))
}

fn suite_summary(name: &str, r: &ConditionReport) -> String {
    let failed: Vec<String> = r
        .failures()
        .map(|v| format!("{}@θ={}", v.condition.label(), v.theta))
        .collect();
    format!("{name}: {} verdicts, failures [{}]", r.verdicts.len(), failed.join(", "))
}

fn conditions() -> Check {
    let frame = EvaluationFrame::default();
    let s_grid: Vec<f64> = (0..12).map(|k| 0.1 * 500f64.powf(k as f64 / 11.0)).collect();
    let t_grid = [1.0, 2.0, 3.0];
    let gaussian = diffusion(TorusDiffusionSpec::gaussian_baseline(), GRID);
    let g = run_condition_suite(&gaussian, &frame, &[0.0, 0.5, 1.0], &s_grid, &t_grid);
    let mathieu = diffusion(TorusDiffusionSpec::mathieu(), GRID);
    let theta_a = rate_point(&mathieu, 0.3, &RateSettings::default()).map_err(|e| e.to_string())?.theta_a;
    let m = run_condition_suite(&mathieu, &frame, &[0.0, theta_a, 0.5, 1.0], &s_grid, &t_grid);
    let checkerboard = TiltedFamily::chain(&DiscreteChainSpec::checkerboard()).map_err(|e| e.to_string())?;
    let mut chain_s = s_grid.clone();
    chain_s.push(std::f64::consts::PI);
    let c = run_condition_suite(&checkerboard, &frame, &[0.5], &chain_s, &t_grid);
    let ok = g.passed() && m.passed() && c.fails(Condition::B3);
    Ok((
        ok,
        [suite_summary("gaussian", &g), suite_summary("mathieu", &m), suite_summary("checkerboard", &c)].join("; "),
    ))
}

fn hygiene() -> Check {
    let coarse = diffusion(TorusDiffusionSpec::mathieu(), GRID);
    let fine = diffusion(TorusDiffusionSpec::mathieu(), 2 * GRID);
    let settings = RateSettings::default();
    let theta_a = rate_point(&coarse, 0.3, &settings).map_err(|e| e.to_string())?.theta_a;
    let mut doubling: f64 = 0.0;
    for theta in [theta_a, 0.5, 1.0] {
        let (c, f) = (cgf(&coarse, theta), cgf(&fine, theta));
        doubling = doubling.max((c.map_err(|e| e.to_string())? - f.map_err(|e| e.to_string())?).abs());
    }
    let a_list = [0.1, 0.2, 0.3, 0.5, 1.0, 2.0];
    let mut duality: f64 = 0.0;
    let mut rows = 0;
    for spec in [TorusDiffusionSpec::gaussian_baseline(), TorusDiffusionSpec::mathieu()] {
        let table = rate_table(&diffusion(spec, GRID), &a_list, &settings);
        if !table.failures.is_empty() {
            return Err(format!("rate table failures {:?}", table.failures));
        }
        rows += table.rows.len();
        duality = table.rows.iter().map(|r| r.duality_residual().abs()).fold(duality, f64::max);
    }
    let frame = EvaluationFrame::default();
    let small = SimulationSettings::new(1e-2, 2000, 7);
    let run = |threads: usize| -> Result<String, String> {
        with_threads(threads, || {
            let family = diffusion(TorusDiffusionSpec::mathieu(), 64);
            let is = estimate_tail_is(&family, &frame, 0.3, 2.0, &small, &settings).map_err(|e| e.to_string())?;
            let table = rate_table(&family, &a_list, &settings);
            Ok::<_, String>(format!("{is:?}{:?}", table.rows))
        })
        .map_err(|e| e.to_string())?
    };
    let identical = run(1)? == run(4)?;
    Ok((
        doubling < GRID_DOUBLING_TOL && duality < DUALITY_TOL && identical,
        format!(
            "μ change n={GRID}→{} {doubling:.2e}; max duality residual {duality:.2e} over {rows} rows; serial == parallel {identical}",
            2 * GRID
        ),
    ))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Check); 7] = [
        ("Gaussian baseline exactness", RATE_BUDGET, gaussian_rate),
        ("leading prefactor and fitted coefficients", PREFACTOR_BUDGET, gaussian_prefactor),
        ("finite-chain oracle equivalence", CHAIN_BUDGET, chain_oracle),
        ("Mathieu curvature and prefactor", MATHIEU_BUDGET, mathieu),
        ("importance sampling", IS_BUDGET, importance_sampling),
        ("condition suite", Duration::from_secs(600), conditions),
        ("numerical hygiene", Duration::from_secs(600), hygiene),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let (ok, detail) = timed(*budget, check);
        println!("criterion {} ({name}): {} | {detail}", i + 1, if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
