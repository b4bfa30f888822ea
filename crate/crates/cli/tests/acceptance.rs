//! Acceptance suite. Prints one line per criterion with the measured values
//! and the pinned tolerance, then fails if any criterion failed.
//!
//! Every Monte Carlo criterion uses the single master seed `SEED`.

use std::fs;
use std::process::Command;

use dta_bias::asymmetry::{
    run_length_upper_tail, signed_rank_upper_tail, AsymmetryTest, BeggDispersion, BeggStandardization, EggerAxis,
    EggerWeighting, MacaskillPredictor, MacaskillWeighting, TrimFillAxis, TrimFillEstimator,
};
use dta_bias::harness::{run_condition, run_condition_with, SimResult, TestVariantId, DEFAULT_ALPHA};
use dta_bias::measures::{kappa, ln_dor, youden};
use dta_bias::sampler::{default_grid, BiasSpec, BivariateParams, SimCondition};
use dta_bias::{continuity_correct, CorrectionPolicy, MeasureId, Sidedness, StudyTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 2024;
const REPS: u64 = 2000;

struct Line {
    id: u32,
    pass: bool,
    detail: String,
}

fn line(id: u32, pass: bool, detail: String) -> Line {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{tag}] {id:>2} {detail}");
    Line { id, pass, detail }
}

fn v(measure: MeasureId, test: AsymmetryTest) -> TestVariantId {
    TestVariantId::new(measure, test, Sidedness::OneSided).unwrap()
}

fn egger_se(measure: MeasureId) -> TestVariantId {
    v(
        measure,
        AsymmetryTest::Egger {
            axis: EggerAxis::Se,
            weighting: EggerWeighting::Unweighted,
        },
    )
}

fn begg(dispersion: BeggDispersion) -> TestVariantId {
    v(
        MeasureId::LnDor,
        AsymmetryTest::Begg {
            dispersion,
            standardization: BeggStandardization::CenteredVariance,
        },
    )
}

fn macaskill(predictor: MacaskillPredictor, weighting: MacaskillWeighting) -> TestVariantId {
    v(MeasureId::LnDor, AsymmetryTest::Macaskill { predictor, weighting })
}

fn tf(axis: TrimFillAxis, estimator: TrimFillEstimator) -> TestVariantId {
    v(MeasureId::LnDor, AsymmetryTest::TrimFill { axis, estimator })
}

fn cond(mu: [f64; 2], sigma: [f64; 3], k: usize, bias: BiasSpec) -> SimCondition {
    // A shared id keys the replicate streams, so conditions that differ only
    // in k or bias are compared on paired seeds.
    let params = BivariateParams::new(mu, sigma[0], sigma[1], sigma[2]).unwrap();
    SimCondition::new(0, params, k, 0.5, (50, 1000), bias).unwrap()
}

const SMALL_RE: [f64; 3] = [0.5, 0.3, 0.5];
const LARGE_RE: [f64; 3] = [1.0, 0.5, 1.0];
const FIXED: [f64; 3] = [0.0, 0.0, 0.0];

fn rates(results: &[SimResult]) -> Vec<f64> {
    results.iter().map(SimResult::rate).collect()
}

fn criterion_1() -> Line {
    let t = |x, w, y, z| continuity_correct(&StudyTable::new(x, w, y, z).unwrap(), CorrectionPolicy::HalfIfAnyZero);
    let dor = ln_dor(&t(40, 10, 10, 40)).unwrap();
    let y = youden(&t(80, 20, 40, 60)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=300u64);
        let x = rng.gen_range(0..=n);
        let y = rng.gen_range(0..=n);
        let c = t(x, n - x, y, n - y);
        if let (Ok(a), Ok(b)) = (kappa(&c), youden(&c)) {
            worst = worst.max((a.value - b.value).abs());
        }
    }
    let pass = (dor.value - 16f64.ln()).abs() <= 1e-12
        && (dor.se - 0.5).abs() <= 1e-12
        && (y.value - 0.4).abs() <= 1e-12
        && (y.se - 0.004f64.sqrt()).abs() <= 1e-12
        && worst <= 1e-12;
    line(
        1,
        pass,
        format!(
            "golden values: lnDOR {:.15} se {:.15}; Y {:.15} se {:.15}; max |K-Y| over 10000 balanced tables {worst:.1e} (tol 1e-12)",
            dor.value, dor.se, y.value, y.se
        ),
    )
}

fn criterion_2() -> Line {
    let c = cond([0.0, 0.0], FIXED, 30, BiasSpec::None);
    let variants = [
        egger_se(MeasureId::LnDor),
        begg(BeggDispersion::Variance),
        macaskill(MacaskillPredictor::N, MacaskillWeighting::InvVarianceFixed),
        tf(TrimFillAxis::Se, TrimFillEstimator::R),
        tf(TrimFillAxis::N, TrimFillEstimator::R),
    ];
    let r = run_condition(&c, &variants, 10_000, DEFAULT_ALPHA, SEED).unwrap();
    let pass = r.iter().all(|x| (0.07..=0.13).contains(&x.rate()));
    let parts: Vec<String> = r.iter().map(|x| format!("{} {:.4}", x.variant.short_form(), x.rate())).collect();
    line(2, pass, format!("null calibration, 10000 reps, in [0.07, 0.13]: {}", parts.join(", ")))
}

fn criterion_3() -> Line {
    let c = cond([2.0, -2.0], LARGE_RE, 30, BiasSpec::None);
    let variants = [
        egger_se(MeasureId::LnDor),
        begg(BeggDispersion::Variance),
        tf(TrimFillAxis::N, TrimFillEstimator::R),
    ];
    let r = rates(&run_condition(&c, &variants, REPS, DEFAULT_ALPHA, SEED).unwrap());
    let (e, b, t) = (r[0], r[1], r[2]);
    let pass = e > 0.20 && b > 0.20 && e - t >= 0.10 && b - t >= 0.10;
    line(
        3,
        pass,
        format!("heterogeneity inflates E/B: E {e:.4}, B {b:.4} > 0.20 and >= T(N,R) {t:.4} + 0.10"),
    )
}

fn no_bias_conditions() -> Vec<SimCondition> {
    default_grid().into_iter().filter(|c| c.bias == BiasSpec::None).collect()
}

/// Rate of `variant` in each condition, with the condition id.
fn condition_rates(grid: &[SimCondition], variant: TestVariantId, correction: CorrectionPolicy) -> Vec<(f64, usize)> {
    grid.iter()
        .map(|c| {
            let r = run_condition_with(c, &[variant], REPS, DEFAULT_ALPHA, SEED, correction).unwrap();
            (r[0].rate(), c.id)
        })
        .collect()
}

fn worst(rates: &[(f64, usize)]) -> (f64, usize) {
    rates.iter().copied().fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a })
}

fn criterion_4() -> Line {
    let grid = no_bias_conditions();
    let variant = tf(TrimFillAxis::N, TrimFillEstimator::R);
    let half = condition_rates(&grid, variant, CorrectionPolicy::HalfIfAnyZero);
    let (max, id) = worst(&half);
    let exceeding = half.iter().filter(|(r, _)| *r > 0.13).count();
    // Reported for comparison only; the criterion uses the default policy.
    let (always, _) = worst(&condition_rates(&grid, variant, CorrectionPolicy::Always));
    line(
        4,
        max <= 0.13,
        format!(
            "T(N,R) over {} no-bias conditions <= 0.13: max {max:.4} (condition {id}), {exceeding} above; \
             with +0.5 on every table the max is {always:.4}",
            grid.len()
        ),
    )
}

/// Rates of T(SE,R), T(N,R), T(SE,L) under selection-large with small
/// random effects.
fn trim_fill_power(k: usize, bias: BiasSpec) -> Vec<SimResult> {
    let c = cond([2.0, -2.0], SMALL_RE, k, bias);
    let variants = [
        tf(TrimFillAxis::Se, TrimFillEstimator::R),
        tf(TrimFillAxis::N, TrimFillEstimator::R),
        tf(TrimFillAxis::Se, TrimFillEstimator::L),
    ];
    run_condition(&c, &variants, REPS, DEFAULT_ALPHA, SEED).unwrap()
}

fn criterion_5(k30: &[f64]) -> Line {
    let (se, n) = (k30[0], k30[1]);
    line(
        5,
        se >= n && n > 0.30,
        format!("selection-large power: T(SE,R) {se:.4} >= T(N,R) {n:.4}, both > 0.30"),
    )
}

fn criterion_6() -> Line {
    let c = cond([1.0, -1.0], FIXED, 30, BiasSpec::mixture([1.25, -1.25]));
    let variants = [
        begg(BeggDispersion::InvEss),
        macaskill(MacaskillPredictor::InvSqrtEss, MacaskillWeighting::Ess),
    ];
    let r = rates(&run_condition(&c, &variants, REPS, DEFAULT_ALPHA, SEED).unwrap());
    line(
        6,
        r[0] - r[1] >= 0.05,
        format!("mixture-large, fixed effects: B(1/ESS) {:.4} >= M(1/sqrt(ESS)) {:.4} + 0.05", r[0], r[1]),
    )
}

fn criterion_7() -> Line {
    let variant = egger_se(MeasureId::Youden);
    let none = run_condition(&cond([2.0, -2.0], LARGE_RE, 30, BiasSpec::None), &[variant], REPS, DEFAULT_ALPHA, SEED)
        .unwrap()[0]
        .rate();
    let sel = run_condition(
        &cond([2.0, -2.0], LARGE_RE, 30, BiasSpec::selection(0.4)),
        &[variant],
        REPS,
        DEFAULT_ALPHA,
        SEED,
    )
    .unwrap()[0]
        .rate();
    line(
        7,
        none < 0.02 && sel < 0.02,
        format!("one-sided E(Y,SE) degenerate: no bias {none:.4}, selection-large {sel:.4}, both < 0.02"),
    )
}

fn criterion_8(k30: &[f64]) -> Line {
    let (r, l) = (k30[0], k30[2]);
    line(8, l < r, format!("L below R under selection-large: T(SE,L) {l:.4} < T(SE,R) {r:.4}"))
}

fn criterion_9(k30: &[SimResult]) -> Line {
    let null = trim_fill_power(10, BiasSpec::None);
    let power = rates(&trim_fill_power(10, BiasSpec::selection(0.4)));
    let mut pass = true;
    let mut parts = Vec::new();
    for i in 0..2 {
        let bound = 0.10 + 2.0 * null[i].mcse();
        pass &= null[i].rate() <= bound && power[i] < k30[i].rate();
        parts.push(format!(
            "{}: null {:.4} <= {bound:.4}, power {:.4} < k=30 {:.4}",
            null[i].variant.short_form(),
            null[i].rate(),
            power[i],
            k30[i].rate()
        ));
    }
    line(9, pass, format!("k=10 conservatism: {}", parts.join("; ")))
}

/// Independent Monte Carlo of the two trim-and-fill null distributions:
/// ranks 1..k (or a tied layout) each carry an independent fair sign.
fn criterion_10() -> Line {
    const DRAWS: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    let mut layouts: Vec<Vec<f64>> = [5usize, 10, 30].iter().map(|&k| (1..=k).map(|r| r as f64).collect()).collect();
    // Ten studies in tied pairs.
    layouts.push((0..10).map(|i| (2 * (i / 2) + 1) as f64 + 0.5).collect());
    for (li, ranks) in layouts.iter().enumerate() {
        let k = ranks.len();
        let tied = li == 3;
        let mut runs = vec![0usize; DRAWS];
        let mut sums = vec![0.0f64; DRAWS];
        for d in 0..DRAWS {
            let signs: Vec<bool> = (0..k).map(|_| rng.gen_bool(0.5)).collect();
            sums[d] = ranks.iter().zip(&signs).filter(|(_, &s)| s).map(|(r, _)| r).sum();
            // Ranks are ascending, so the run starts at the top.
            runs[d] = signs.iter().rev().take_while(|&&s| s).count();
        }
        if !tied {
            for g in 1..=6.min(k) {
                let mc = runs.iter().filter(|&&r| r >= g).count() as f64 / DRAWS as f64;
                worst = worst.max((mc - run_length_upper_tail(g)).abs());
            }
        }
        let mean = ranks.iter().sum::<f64>() / 2.0;
        let sd = (ranks.iter().map(|r| r * r).sum::<f64>() / 4.0).sqrt();
        for z in [-1.0, 0.0, 1.0, 1.28, 1.64, 2.33] {
            let s = (mean + z * sd).round();
            let mc = sums.iter().filter(|&&x| x >= s - 1e-9).count() as f64 / DRAWS as f64;
            worst = worst.max((mc - signed_rank_upper_tail(ranks, s)).abs());
        }
    }
    line(
        10,
        worst <= 0.01,
        format!("R and L p-values vs 100000-draw sign randomization, k in {{5, 10, 30}} and a tied layout: max gap {worst:.4} (tol 0.01)"),
    )
}

fn criterion_11() -> Line {
    let dir = tempfile::tempdir().unwrap();
    let simulate = |name: &str, extra: &[&str]| -> Vec<u8> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_dta-bias"))
            .args(["simulate", "--grid", "default", "--reps", "100", "--seed", "42", "--out"])
            .arg(&out)
            .args(extra)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        fs::read(out).unwrap()
    };
    let a = simulate("a.csv", &[]);
    let b = simulate("b.csv", &[]);
    let p1 = simulate("p1.csv", &["--measure", "lndor", "--parallelism", "1"]);
    let p8 = simulate("p8.csv", &["--measure", "lndor", "--parallelism", "8"]);
    let rows = |bytes: &[u8]| String::from_utf8_lossy(bytes).lines().count() - 1;
    line(
        11,
        a == b && p1 == p8,
        format!(
            "determinism: repeated run byte-identical {} ({} rows); parallelism 1 vs 8 identical {} ({} rows)",
            a == b,
            rows(&a),
            p1 == p8,
            rows(&p1)
        ),
    )
}

fn criterion_12() -> Line {
    let grid = default_grid();
    let mut seen = std::collections::HashSet::new();
    let mut in_sets = true;
    for c in &grid {
        let p = c.params;
        in_sets &= [[0.0, 0.0], [1.0, -1.0], [2.0, -2.0], [2.0, -1.0]].contains(&p.mu);
        in_sets &= [FIXED, SMALL_RE, LARGE_RE].contains(&[p.sigma_a2, p.sigma_ab, p.sigma_b2]);
        in_sets &= [10, 30].contains(&c.k) && [0.5, 0.2].contains(&c.pi);
        in_sets &= [
            BiasSpec::None,
            BiasSpec::selection(0.2),
            BiasSpec::selection(0.4),
            BiasSpec::mixture([0.75, -0.75]),
            BiasSpec::mixture([1.25, -1.25]),
        ]
        .contains(&c.bias);
        in_sets &= (c.n_min, c.n_max) == (50, 1000);
        seen.insert(format!("{:?}{:?}{}{}{:?}", p.mu, [p.sigma_a2, p.sigma_ab, p.sigma_b2], c.k, c.pi, c.bias));
    }
    let ids_ok = grid.iter().enumerate().all(|(i, c)| c.id == i);
    line(
        12,
        grid.len() == 240 && seen.len() == 240 && in_sets && ids_ok,
        format!("grid: {} conditions, {} distinct, value sets match {in_sets}, ids sequential {ids_ok}", grid.len(), seen.len()),
    )
}

#[test]
fn acceptance_criteria() {
    println!();
    let k30 = trim_fill_power(30, BiasSpec::selection(0.4));
    let k30_rates = rates(&k30);
    let lines = vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(&k30_rates),
        criterion_6(),
        criterion_7(),
        criterion_8(&k30_rates),
        criterion_9(&k30),
        criterion_10(),
        criterion_11(),
        criterion_12(),
    ];
    let failed: Vec<String> = lines.iter().filter(|l| !l.pass).map(|l| format!("{}: {}", l.id, l.detail)).collect();
    println!("{} of {} criteria pass", lines.len() - failed.len(), lines.len());
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
