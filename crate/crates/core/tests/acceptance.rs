//! Acceptance checks, one line per criterion.
//!
//! `cargo test -p catimpute --test acceptance` runs all of them; pass
//! criterion numbers after `--` to run a subset. With `--strict` (or
//! `ACCEPTANCE_STRICT=1`) a failing criterion makes the process exit
//! non-zero; otherwise failures are printed and summarised.

mod common;

use std::time::Instant;

use catimpute::cube::{balanced_select, flight_phase, landing_phase, BalancingProblem, Constraint, Priority};
use catimpute::design::{generate_response, srswor, RngStream};
use catimpute::estimators::{
    bias_ac, bias_cc, bias_rhdi, imputed_proportions, population_parameters, tilde_estimators, Parameter,
    ProportionTable,
};
use catimpute::harness::{run_point_study, run_variance_study, StudyConfig, StudyReport, VarianceSettings};
use catimpute::imputation::{bhdi, build_cell_populations, jhdi};
use catimpute::popgen::{cell_probabilities, generate_population, odds_ratio, PopulationSpec};
use catimpute::survey::{Categories, SurveyDataset, Unit};
use catimpute::Method;

struct Outcome {
    ok: bool,
    lines: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            ok: true,
            lines: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: String) {
        self.ok &= ok;
        self.lines.push(format!("{} {what}", if ok { "ok  " } else { "FAIL" }));
    }

    fn info(&mut self, what: String) {
        self.lines.push(format!("     {what}"));
    }
}

fn masked_sample(n: usize, seed: u64) -> SurveyDataset {
    let spec = PopulationSpec::reference();
    let pop = generate_population(&spec).unwrap();
    let sample = srswor(&pop, n, &mut RngStream::new(seed, 0).rng()).unwrap();
    generate_response(&sample, &spec, &mut RngStream::new(seed, 1).rng())
        .unwrap()
        .data
}

fn criterion_1() -> Outcome {
    let mut out = Outcome::new();
    let spec = PopulationSpec::reference();
    let pop = generate_population(&spec).unwrap();
    out.check(pop.len() == 20_000, format!("population size {}", pop.len()));
    let expect_or = [0.44, 0.96, 2.00, 4.44, 12.00];
    for (g, c) in spec.classes.iter().enumerate() {
        let units: Vec<&Unit> = pop.units().iter().filter(|u| u.class == g as u32 + 1).collect();
        let size = units.len() as f64;
        let share = |f: &dyn Fn(&Unit) -> bool| units.iter().filter(|u| f(u)).count() as f64 / size;
        let p1 = share(&|u| u.x == Some(1));
        let q1 = share(&|u| u.y == Some(1));
        let p11 = share(&|u| u.x == Some(1) && u.y == Some(1));
        let cells = cell_probabilities(p1, q1, p11).unwrap();
        let or = odds_ratio(&cells).unwrap();
        let exact = p1 == c.p1dot && q1 == c.pdot1 && (p11 - c.p11).abs() < 1e-15;
        out.check(
            exact && format!("{or:.2}") == format!("{:.2}", expect_or[g]),
            format!("class {}: p1.={p1} p.1={q1} p11={p11} OR={or:.2}", g + 1),
        );
    }
    out
}

fn criterion_2() -> Outcome {
    let mut out = Outcome::new();
    let spec = PopulationSpec::reference();
    let truth = population_parameters(&spec).unwrap();
    let rb = |b: f64, t: f64| 100.0 * b / t;
    let rhdi = bias_rhdi(&spec).unwrap();
    let cc = bias_cc(&spec).unwrap();
    let ac = bias_ac(&spec).unwrap();
    out.check(
        (rhdi.p11() + 0.0148).abs() < 1e-12,
        format!("RHDI bias(p11) = {:.6}", rhdi.p11()),
    );
    let cases = [
        ("RHDI RB(p11)", rb(rhdi.p11(), truth.p11()), -3.70, -3.7),
        ("CC RB(p1.)", rb(cc.p1dot(), truth.p1dot()), 5.56, 5.6),
        ("CC RB(p11)", rb(cc.p11(), truth.p11()), 16.67, 16.7),
        ("AC RB(p1.)", rb(ac.p1dot(), truth.p1dot()), 3.27, 3.3),
    ];
    for (name, value, two_dp, table) in cases {
        let ok = format!("{value:.2}") == format!("{two_dp:.2}") && format!("{value:.1}") == format!("{table:.1}");
        out.check(ok, format!("{name} = {value:.4} (target {table})"));
    }
    out
}

fn point_config() -> StudyConfig {
    StudyConfig::from_toml("seed = 20240601\nsample_size = 2000\nreplicates = 2000\n").unwrap()
}

fn criterion_3() -> Outcome {
    let mut out = Outcome::new();
    let report = run_point_study(&point_config()).unwrap();
    let rb = |e: &str, p: Parameter| report.point(e, p).and_then(|r| r.rb).unwrap_or(f64::NAN);
    let re = |e: &str, p: Parameter| report.point(e, p).and_then(|r| r.re).unwrap_or(f64::NAN);
    use Parameter::*;
    let proportions: [(&str, [f64; 3]); 7] = [
        ("CC", [5.6, 5.5, 16.7]),
        ("AC", [3.3, 3.3, 16.7]),
        ("ACC", [0.0, 0.0, 0.0]),
        ("AAC", [0.0, 0.0, 0.0]),
        ("RHDI", [0.0, 0.0, -3.7]),
        ("JHDI", [0.0, 0.0, 0.0]),
        ("BHDI", [0.0, 0.0, 0.0]),
    ];
    for (e, targets) in proportions {
        for (p, t) in [P1Dot, PDot1, P11].into_iter().zip(targets) {
            let v = rb(e, p);
            out.check(
                (v - t).abs() <= 1.5,
                format!("RB {e} {} = {v:.2} (target {t}, tol 1.5)", p.name()),
            );
        }
    }
    for (e, t) in [
        ("CC", 71.2),
        ("AC", 71.2),
        ("ACC", 35.6),
        ("AAC", 35.6),
        ("RHDI", -21.8),
        ("JHDI", 2.5),
        ("BHDI", 2.3),
    ] {
        let v = rb(e, OddsRatio);
        out.check((v - t).abs() <= 6.0, format!("RB {e} OR = {v:.2} (target {t}, tol 6)"));
    }
    let (b, j, r) = (re("BHDI", P11), re("JHDI", P11), re("RHDI", P11));
    out.check(
        b > j && j > 100.0 && 100.0 > r,
        format!("RE p11 ordering BHDI {b:.1} > JHDI {j:.1} > 100 > RHDI {r:.1}"),
    );
    let c = re("CC", P11);
    out.check(
        (c - 10.0).abs() <= 5.0,
        format!("RE CC p11 = {c:.1} (target 10, tol 5)"),
    );
    for e in ["CC", "ACC", "AC", "AAC", "RHDI", "JHDI", "BHDI"] {
        let row: Vec<String> = Parameter::ALL
            .iter()
            .map(|&p| format!("{:.1} ({:.0})", rb(e, p), re(e, p)))
            .collect();
        let excluded = report.point(e, OddsRatio).map_or(0, |r| r.excluded);
        out.info(format!("{e:5} {}  OR excluded {excluded}", row.join("  ")));
    }
    out
}

fn cell_stats(values: &[[f64; 4]]) -> ([f64; 4], [f64; 4]) {
    let r = values.len() as f64;
    let mut mean = [0.0; 4];
    let mut var = [0.0; 4];
    for v in values {
        for j in 0..4 {
            mean[j] += v[j] / r;
        }
    }
    for v in values {
        for j in 0..4 {
            var[j] += (v[j] - mean[j]).powi(2) / (r - 1.0);
        }
    }
    (mean, var)
}

fn criterion_4() -> Outcome {
    let mut out = Outcome::new();
    let data = masked_sample(2000, 4);
    let tilde = tilde_estimators(&data).unwrap();
    let reps = 20_000u64;
    let values: Vec<[f64; 4]> = (0..reps)
        .map(|r| {
            let t = imputed_proportions(&jhdi(&data, RngStream::new(44, r)).unwrap().data).unwrap();
            [t.joint(0, 0), t.joint(0, 1), t.joint(1, 0), t.joint(1, 1)]
        })
        .collect();
    let (mean, var) = cell_stats(&values);
    for (j, (a, b)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
        let se = (var[j] / reps as f64).sqrt();
        let diff = mean[j] - tilde.joint(a, b);
        out.check(
            diff.abs() <= 3.0 * se,
            format!(
                "p{a}{b}: MC mean {:.6} vs tilde {:.6}, |diff| = {:.2} SE",
                mean[j],
                tilde.joint(a, b),
                diff.abs() / se
            ),
        );
    }
    out
}

fn diamond(t: &ProportionTable) -> [f64; 3] {
    [t.marginal_x(1), t.marginal_y(1), t.joint(1, 1)]
}

/// Each class: one complete case per cell and nonrespondent groups sized so
/// every balancing target is a whole number of unit weights.
fn exact_balance_fixture() -> SurveyDataset {
    let mut units = Vec::new();
    let mut id = 0;
    let mut push = |class, x, y| {
        id += 1;
        units.push(Unit::new(id, 1.0, class, x, y));
    };
    for g in 1..=2 {
        for (x, y) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            push(g, Some(x), Some(y));
        }
        for v in [0, 0, 1, 1] {
            push(g, None, Some(v));
            push(g, Some(v), None);
        }
        for _ in 0..4 {
            push(g, None, None);
        }
    }
    let n = units.len() as u64;
    SurveyDataset::new(units, n, Categories { k: 2, l: 2, q: None }).unwrap()
}

fn criterion_5() -> Outcome {
    let mut out = Outcome::new();
    let samples = 200u64;
    let reps = 200u64;
    let mut sum_b = [0.0; 3];
    let mut sum_j = [0.0; 3];
    let mut worst_ratio = [0.0f64; 3];
    let mut zero_checked = 0usize;
    let mut zero_worst: f64 = 0.0;
    for s in 0..samples {
        let data = masked_sample(2000, 1000 + s);
        let tilde = diamond(&tilde_estimators(&data).unwrap());
        let mut vb = Vec::with_capacity(reps as usize);
        let mut vj = Vec::with_capacity(reps as usize);
        for r in 0..reps {
            let o = bhdi(&data, RngStream::new(5, s * reps + r)).unwrap();
            let d = diamond(&imputed_proportions(&o.data).unwrap());
            if o.residuals.iter().all(|p| p.max_residual <= 1e-9) {
                zero_checked += 1;
                for j in 0..3 {
                    zero_worst = zero_worst.max((d[j] - tilde[j]).abs());
                }
            }
            vb.push([d[0], d[1], d[2], 0.0]);
            let o = jhdi(&data, RngStream::new(6, s * reps + r)).unwrap();
            let d = diamond(&imputed_proportions(&o.data).unwrap());
            vj.push([d[0], d[1], d[2], 0.0]);
        }
        let (_, var_b) = cell_stats(&vb);
        let (_, var_j) = cell_stats(&vj);
        for j in 0..3 {
            sum_b[j] += var_b[j];
            sum_j[j] += var_j[j];
            worst_ratio[j] = worst_ratio[j].max(var_b[j] / var_j[j]);
        }
    }
    for (j, name) in ["p1.", "p.1", "p11"].into_iter().enumerate() {
        out.check(
            worst_ratio[j] <= 0.05,
            format!(
                "{name}: BHDI / JHDI imputation variance at most {:.4} over {samples} samples (pooled {:.4})",
                worst_ratio[j],
                sum_b[j] / sum_j[j]
            ),
        );
    }
    if zero_checked > 0 {
        out.check(
            zero_worst <= 1e-10,
            format!("{zero_checked} zero-residual reference-population imputations, max |p_I - p~| = {zero_worst:.2e}"),
        );
    } else {
        out.info(
            "no reference-population imputation balanced exactly; zero-residual identity checked on the fixture below"
                .into(),
        );
    }

    let fixture = exact_balance_fixture();
    let tilde = tilde_estimators(&fixture).unwrap();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for r in 0..500 {
        let o = bhdi(&fixture, RngStream::new(55, r)).unwrap();
        if o.residuals.iter().all(|p| p.max_residual <= 1e-9) {
            checked += 1;
            let t = imputed_proportions(&o.data).unwrap();
            for (a, b) in t.joint_cells().iter().zip(tilde.joint_cells()) {
                worst = worst.max((a - b).abs());
            }
            for k in 0..2 {
                worst = worst.max((t.marginal_x(k) - tilde.marginal_x(k)).abs());
                worst = worst.max((t.marginal_y(k) - tilde.marginal_y(k)).abs());
            }
        }
    }
    out.check(
        checked > 0 && worst <= 1e-10,
        format!("exact-balance fixture: {checked}/500 zero-residual imputations, max |p_I - p~| = {worst:.2e}"),
    );
    out
}

fn row(cells: &[usize]) -> Constraint {
    Constraint {
        coefficients: cells.iter().map(|&m| (m, 1.0)).collect(),
        priority: Priority::Required,
    }
}

fn inclusion_check(out: &mut Outcome, name: &str, problem: &BalancingProblem, rows: &[Vec<usize>], seed: u64) {
    let runs = 100_000;
    let mut rng = RngStream::new(seed, 0).rng();
    let mut freq = vec![0usize; problem.len()];
    let mut rows_ok = true;
    for _ in 0..runs {
        let s = balanced_select(problem, &mut rng).unwrap();
        rows_ok &= rows.iter().all(|r| r.iter().filter(|&&m| s.selected[m]).count() == 1);
        for (f, &sel) in freq.iter_mut().zip(&s.selected) {
            *f += sel as usize;
        }
    }
    let mut worst: f64 = 0.0;
    for (f, &p) in freq.iter().zip(problem.pi()) {
        let se = (p * (1.0 - p) / runs as f64).sqrt();
        worst = worst.max((*f as f64 / runs as f64 - p).abs() / se);
    }
    out.check(
        worst <= 4.0,
        format!("{name}: worst inclusion deviation {worst:.2} binomial SE over {runs} runs"),
    );
    out.check(
        rows_ok,
        format!("{name}: exactly one cell per row in every realization"),
    );
}

fn criterion_6() -> Outcome {
    let mut out = Outcome::new();
    let two = BalancingProblem::new(vec![0.5, 0.5], vec![row(&[0, 1])]).unwrap();
    inclusion_check(&mut out, "2-cell", &two, &[vec![0, 1]], 61);
    let four = BalancingProblem::new(vec![0.3, 0.7, 0.6, 0.4], vec![row(&[0, 1]), row(&[2, 3])]).unwrap();
    inclusion_check(&mut out, "4-cell", &four, &[vec![0, 1], vec![2, 3]], 62);

    let data = masked_sample(2000, 6);
    let mut drift: f64 = 0.0;
    let mut problems = vec![two, four];
    for pop in build_cell_populations(&data).unwrap() {
        let w: Vec<f64> = pop.rows.iter().map(|&i| data.units()[i].weight).collect();
        problems.push(pop.balancing_problem(&w).unwrap());
    }
    let mut rng = RngStream::new(63, 0).rng();
    let mut bound_ok = true;
    for p in &problems {
        for _ in 0..20 {
            let state = flight_phase(p, &mut rng);
            bound_ok &= state.non_integral() <= p.constraints().len();
            for c in 0..p.constraints().len() {
                drift = drift.max((p.balance(c, &state.v) - p.balance(c, p.pi())).abs());
            }
            let s = landing_phase(p, state, &mut rng).unwrap();
            bound_ok &= s.selected.len() == p.len();
        }
    }
    out.check(
        drift <= 1e-9,
        format!("flight balance drift {drift:.2e} over {} problems", problems.len()),
    );
    out.check(
        bound_ok,
        "non-integral coordinates after flight never exceed the constraint count".into(),
    );
    out
}

fn criterion_7() -> Outcome {
    let mut out = Outcome::new();
    let mut cfg = StudyConfig::from_toml("seed = 20240602\nsample_size = 1000\nreplicates = 1000\n").unwrap();
    cfg.bootstrap = Some(VarianceSettings {
        replicates: 1000,
        n_prime: None,
        alphas: vec![0.025, 0.05],
        truth_replicates: 20_000,
        method: Method::Bhdi,
    });
    let report = run_variance_study(&cfg).unwrap();
    for p in Parameter::ALL {
        let r = report.variance_row(p).unwrap();
        let rb = r.rb.unwrap_or(f64::NAN);
        if p == Parameter::OddsRatio {
            out.check(rb > 0.0, format!("RB(V) OR = {rb:.1} (target 16.2, must be > 0)"));
        } else {
            out.check(
                (-14.0..=5.0).contains(&rb),
                format!("RB(V) {} = {rb:.1} (range [-14, 5])", p.name()),
            );
        }
        let five = r.rates.iter().find(|e| e.alpha == 0.05).unwrap();
        out.check(
            (8.0..=16.0).contains(&five.two_sided),
            format!(
                "{} two-sided error at 5% per tail = {:.1} (range [8, 16])",
                p.name(),
                five.two_sided
            ),
        );
        let rates: Vec<String> = r
            .rates
            .iter()
            .map(|e| {
                format!(
                    "a={}: L {:.1} U {:.1} L+U {:.1}",
                    e.alpha, e.lower, e.upper, e.two_sided
                )
            })
            .collect();
        out.info(format!(
            "{}: V true {:.3e}, mean V {:.3e}; {}",
            p.name(),
            r.true_variance,
            r.mean_variance,
            rates.join("; ")
        ));
    }
    out.info(format!(
        "bootstrap replicates dropped {} over all samples, unreliable samples {}",
        report.bootstrap_dropped, report.unreliable_samples
    ));
    out
}

fn criterion_8() -> Outcome {
    let mut out = Outcome::new();
    let mut rng = RngStream::new(88, 0).rng();
    let mut worst: f64 = 0.0;
    let mut worst_ht: f64 = 0.0;
    for _ in 0..1000 {
        let masked = common::random_fixture(&mut rng, false);
        worst = worst.max(common::worst_gap(&masked));
        let complete = common::random_fixture(&mut rng, true);
        worst_ht = worst_ht.max(common::ht_gap(&complete));
        worst_ht = worst_ht.max(common::gap(
            &imputed_proportions(&complete).unwrap(),
            &common::ht(&complete),
        ));
    }
    out.check(
        worst <= 1e-12,
        format!("CC/ACC/AC/AAC/tilde vs direct summation: max gap {worst:.2e} on 1000 fixtures"),
    );
    out.check(
        worst_ht <= 1e-12,
        format!("full-data and imputed-data estimators: max gap {worst_ht:.2e} on 1000 fixtures"),
    );
    out
}

fn criterion_9() -> Outcome {
    let mut out = Outcome::new();
    let base = "seed = 99\nsample_size = 500\nreplicates = 40\n";
    let run = |threads: usize| -> StudyReport {
        let mut cfg = StudyConfig::from_toml(base).unwrap();
        cfg.threads = Some(threads);
        run_point_study(&cfg).unwrap()
    };
    let reference = run(1).to_json();
    for t in [1, 2, 4] {
        out.check(
            run(t).to_json() == reference,
            format!("point study, {t} thread(s): identical to single-thread run"),
        );
    }
    let run_var = |threads: usize| -> StudyReport {
        let mut cfg = StudyConfig::from_toml(base).unwrap();
        cfg.replicates = 6;
        cfg.threads = Some(threads);
        cfg.bootstrap = Some(VarianceSettings {
            replicates: 80,
            n_prime: None,
            alphas: vec![0.025, 0.05],
            truth_replicates: 20,
            method: Method::Bhdi,
        });
        run_variance_study(&cfg).unwrap()
    };
    let reference = run_var(1).to_json();
    for t in [1, 3] {
        out.check(
            run_var(t).to_json() == reference,
            format!("variance study, {t} thread(s): identical to single-thread run"),
        );
    }
    out
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let strict = args.iter().any(|a| a == "--strict") || std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let selected: Vec<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "population reproduces the reference class table", criterion_1),
        (2, "closed-form bias oracles", criterion_2),
        (3, "point-estimator study (B = 2000, n = 2000)", criterion_3),
        (
            4,
            "joint imputation is unbiased for its conditional expectation",
            criterion_4,
        ),
        (5, "balanced imputation removes imputation variance", criterion_5),
        (6, "cube kernel properties", criterion_6),
        (
            7,
            "bootstrap variance study (n = 1000, 1000 x 1000, truth 20000)",
            criterion_7,
        ),
        (8, "estimators match direct summation", criterion_8),
        (9, "studies are deterministic across thread counts", criterion_9),
    ];
    let mut failed = Vec::new();
    for (n, title, f) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "[{}] criterion {n}: {title} ({secs:.1} s)",
            if outcome.ok { "PASS" } else { "FAIL" }
        );
        for line in &outcome.lines {
            println!("       {line}");
        }
        if !outcome.ok {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        if strict {
            std::process::exit(1);
        }
    }
}
