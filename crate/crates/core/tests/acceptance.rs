//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any criterion fails.

mod common;

use std::time::Instant;

use fallingsun::classify::{ClassifyOptions, Region};
use fallingsun::minnorm::{minimal_norm, truncation_check, SolverOptions};
use fallingsun::mintime::{blowup_check, lipschitz_quotient, minimal_time, sample_profile, TimeOptions};
use fallingsun::scenario::{
    ball_scenario, build_counterexample, default_shrink_candidates, default_window, tune_shrink,
    verify_counterexample, CounterexampleSpec, Scenario, SystemConfig,
};
use fallingsun::spectral::{SpectralSystem, State, Window};
use fallingsun::targets::{hull_curve_check, tangent_disk, DiskHull, HullCheckParams, TargetSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn counterexample() -> (Scenario, fallingsun::scenario::Landmarks) {
    let system = SystemConfig {
        n_modes: 8,
        omega: default_window(),
    };
    let spec = CounterexampleSpec::default();
    let solver = SolverOptions::default();
    let time = TimeOptions::default();
    let tuned = tune_shrink(&spec, system, &default_shrink_candidates(), 0.05, &solver, &time)
        .expect("shrink tuning");
    build_counterexample(
        &CounterexampleSpec {
            shrink: tuned.shrink,
            ..spec
        },
        system,
    )
    .expect("counterexample")
}

/// Criterion 1: minimal norms against independent oracles.
fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut worst_ball: f64 = 0.0;
    let mut count = 0;
    while count < 50 {
        let l = rng.gen_range(0.0..2.4);
        let r = rng.gen_range(l + 0.6..std::f64::consts::PI);
        let horizon: f64 = rng.gen_range(0.2..1.5);
        let n_slices = 1 + count % 3;
        let y0: [f64; 2] = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let center: [f64; 2] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let radius = rng.gen_range(0.05..0.5);
        if (y0[0] - center[0]).hypot(y0[1] - center[1]) <= radius {
            continue;
        }
        let free = [y0[0] * (-horizon).exp(), y0[1] * (-4.0 * horizon).exp()];
        let d = [center[0] - free[0], center[1] - free[1]];
        let maps = common::slice_maps_2(l, r, horizon, n_slices);
        let oracle = common::ball_oracle(&maps, d, radius);

        let sys = SpectralSystem::new(2, Window::new(l, r).unwrap()).unwrap();
        let q = TargetSet::ball(State::from_vec(center.to_vec()), radius);
        let opts = SolverOptions {
            n_slices,
            ..Default::default()
        };
        let n = minimal_norm(&sys, &State::from_vec(y0.to_vec()), &q, horizon, &opts)
            .unwrap()
            .value;
        let rel = if oracle == 0.0 {
            n
        } else {
            (n - oracle).abs() / oracle
        };
        worst_ball = worst_ball.max(rel);
        count += 1;
    }

    let mut worst_point: f64 = 0.0;
    for _ in 0..20 {
        let l = rng.gen_range(0.0..2.4);
        let r = rng.gen_range(l + 0.6..std::f64::consts::PI);
        let horizon: f64 = rng.gen_range(0.2..1.5);
        let y0: [f64; 2] = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let point = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let free = [y0[0] * (-horizon).exp(), y0[1] * (-4.0 * horizon).exp()];
        let d = [point[0] - free[0], point[1] - free[1]];
        let oracle = common::point_oracle(&common::slice_maps_2(l, r, horizon, 1)[0], d);
        let sys = SpectralSystem::new(2, Window::new(l, r).unwrap()).unwrap();
        let q = TargetSet::Point {
            center: State::from_vec(point.to_vec()),
        };
        let opts = SolverOptions {
            n_slices: 1,
            max_iters: 200_000,
            ..Default::default()
        };
        let n = minimal_norm(&sys, &State::from_vec(y0.to_vec()), &q, horizon, &opts)
            .unwrap()
            .value;
        worst_point = worst_point.max((n - oracle).abs() / oracle);
    }
    outcome(
        worst_ball <= 0.02 && worst_point <= 0.005,
        format!(
            "50 ball instances worst rel err {worst_ball:.2e} (tol 2e-2); \
             20 point instances worst rel err {worst_point:.2e} (tol 5e-3)"
        ),
    )
}

/// Criterion 2: falling-sun identity on the ball scenario.
fn falling_sun() -> Outcome {
    let sc = ball_scenario();
    let sys = sc.sys().unwrap();
    let profile = sc.profile().unwrap();
    let positive: Vec<f64> = profile.samples().map(|s| s.1).filter(|n| *n > 0.0).collect();
    let lo = positive.iter().copied().fold(f64::INFINITY, f64::min) * 1.5;
    let hi = positive.iter().copied().fold(0.0, f64::max) / 1.5;
    let levels: Vec<f64> = (0..10).map(|i| lo * (hi / lo).powf(i as f64 / 9.0)).collect();

    let mut worst_resid: f64 = 0.0;
    let mut early_hits = 0;
    let mut monotone = true;
    let mut positive_times = true;
    let mut prev_time = f64::INFINITY;
    for &m in &levels {
        let res = minimal_time(&sys, &sc.y0, &sc.target, m, &profile, &sc.solver, &sc.time).unwrap();
        let Some(t) = res.time else {
            return outcome(false, format!("level {m} found no crossing"));
        };
        let n_fresh = minimal_norm(&sys, &sc.y0, &sc.target, t, &sc.solver).unwrap().value;
        worst_resid = worst_resid.max((n_fresh - m).abs() / m.max(1.0));
        early_hits += profile
            .samples()
            .filter(|s| s.0 < t - sc.time.time_tol && s.1 <= m)
            .count();
        monotone &= t <= prev_time;
        positive_times &= t > sc.time.time_tol;
        prev_time = t;
    }
    outcome(
        worst_resid <= 0.02 && early_hits == 0 && monotone && positive_times,
        format!(
            "10 levels in [{lo:.3}, {hi:.3}]: worst |N(T(M)) - M|/max(1,M) = {worst_resid:.2e} (tol 2e-2), \
             earlier samples at or below M: {early_hits}, T(M) nonincreasing: {monotone}"
        ),
    )
}

/// Criterion 3: maximum-principle controls.
fn bang_bang() -> Outcome {
    let ball = ball_scenario();
    let (cx, lm) = counterexample();
    let mut cases: Vec<(SpectralSystem, State, TargetSet, f64)> = vec![];
    for t in [0.3, 0.6, 0.9, 1.2] {
        cases.push((ball.sys().unwrap(), ball.y0.clone(), ball.target.clone(), t));
    }
    for t in [0.3, lm.t1, lm.tau2, 1.0] {
        cases.push((cx.sys().unwrap(), cx.y0.clone(), cx.target.clone(), t));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    while cases.len() < 10 {
        let sys = SpectralSystem::new(4, Window::new(0.2, 2.0).unwrap()).unwrap();
        let y0 = State::from_vec((0..4).map(|_| rng.gen_range(-2.0..2.0)).collect());
        let q = TargetSet::ball(State::from_vec((0..4).map(|_| rng.gen_range(-0.5..0.5)).collect()), 0.3);
        if q.contains(&y0, 1e-8) {
            continue;
        }
        cases.push((sys, y0, q, rng.gen_range(0.2..0.8)));
    }

    let tol_terminal = SolverOptions::default().bb_terminal_tol;
    let mut worst_norm_dev: f64 = 0.0;
    let mut worst_dist: f64 = 0.0;
    let mut worst_frac: f64 = 1.0;
    for (sys, y0, q, t) in &cases {
        let opts = SolverOptions {
            with_bangbang: true,
            ..Default::default()
        };
        let sol = minimal_norm(sys, y0, q, *t, &opts).unwrap();
        if !(sol.value > 0.0) {
            return outcome(false, format!("instance at T = {t} has N = 0"));
        }
        let bb = sol.bangbang.as_ref().unwrap();
        for s in bb.control.slice_norms() {
            worst_norm_dev = worst_norm_dev.max((s - sol.value).abs() / sol.value);
        }
        let z = sys.terminal_map(y0, &bb.control).unwrap();
        worst_dist = worst_dist.max(q.distance(&z));
        let norms = sol.control.slice_norms();
        let frac = norms.iter().filter(|s| **s >= 0.95 * sol.value).count() as f64 / norms.len() as f64;
        worst_frac = worst_frac.min(frac);
    }
    outcome(
        worst_norm_dev <= 1e-12 && worst_dist <= tol_terminal && worst_frac >= 0.9,
        format!(
            "{} instances: slice-norm deviation {worst_norm_dev:.1e}, terminal distance {worst_dist:.2e} \
             (tol {:.0e}), witness slices >= 0.95 N: min fraction {worst_frac:.3}",
            cases.len(),
            tol_terminal
        ),
    )
}

/// Criterion 4: Lipschitz stability under grid halving and blow-up at zero.
fn continuity_blowup() -> Outcome {
    let ball = ball_scenario();
    let (cx, _) = counterexample();
    let time = TimeOptions {
        refine_jump: Some(f64::INFINITY),
        ..Default::default()
    };
    let mut details = vec![];
    let mut ok = true;
    for (sc, a, b) in [(&ball, 0.3, 1.2), (&cx, 0.55, 1.1)] {
        let sys = sc.sys().unwrap();
        let q: Vec<f64> = [20, 40]
            .iter()
            .map(|&m| {
                let p = sample_profile(&sys, &sc.y0, &sc.target, a, b, m, &sc.solver, &time).unwrap();
                lipschitz_quotient(&p, a, b)
            })
            .collect();
        let ratio = q[0].max(q[1]) / q[0].min(q[1]);
        ok &= ratio < 2.0;
        details.push(format!("{} L-quotient {:.3} -> {:.3} (ratio {ratio:.3})", sc.name, q[0], q[1]));

        let blow = blowup_check(&sys, &sc.y0, &sc.target, &sc.solver, &sc.time).unwrap();
        let last = blow.values.last().copied().flatten();
        let big = last.map_or(blow.unreachable_flagged, |v| v >= 100.0 * blow.values[0].unwrap());
        ok &= blow.passed && big;
        details.push(format!(
            "{} blowup N({:.4}) = {:.4} -> N({:.5}) = {:?}",
            sc.name,
            blow.times[0],
            blow.values[0].unwrap(),
            blow.times.last().unwrap(),
            last
        ));
    }
    outcome(ok, details.join("; "))
}

/// Criterion 5: the counterexample certificates.
fn counterexample_checks() -> Outcome {
    let (sc, lm) = counterexample();
    let profile = sc.profile().unwrap();
    let rep = verify_counterexample(&sc, &lm, &profile, 0.05, &ClassifyOptions::default()).unwrap();
    let w = &rep.wave;
    let gap = rep.gap.as_ref();
    let detail = format!(
        "shrink {}: (a) N(T2) = {:.1e} <= N(T1) = {:.5} < N(tau2) = {:.5} < min(0,tau1] = {:.5}, \
         margin {:.2e}: {}; (b) (0, T2) -> {}; (c) M0 = {:.5}, T_hat = {:.4}, T(1.05 M0) = {:?}, \
         T(0.95 M0) = {:?}, tau2 = {:.4}, gap {:.4} >= {:.4}: {}",
        rep.shrink,
        w.n_t2,
        w.n_t1,
        w.n_tau2,
        w.min_before_tau1.unwrap_or(f64::NAN),
        w.margin,
        w.passed,
        rep.null_pair.region.as_str(),
        gap.map_or(f64::NAN, |g| g.m0),
        gap.map_or(f64::NAN, |g| g.t_hat),
        gap.and_then(|g| g.t_above),
        gap.and_then(|g| g.t_below),
        lm.tau2,
        gap.map_or(f64::NAN, |g| g.gap_length),
        gap.map_or(f64::NAN, |g| g.required_length),
        gap.is_some_and(|g| g.passed),
    );
    outcome(
        rep.passed && rep.null_pair.region == Region::EquivalentNull,
        detail,
    )
}

/// Criterion 6: doubling the truncation order.
fn truncation() -> Outcome {
    let ball = ball_scenario();
    let (cx, _) = counterexample();
    let mut worst: f64 = 0.0;
    let mut details = vec![];
    for sc in [&ball, &cx] {
        let sys = sc.sys().unwrap();
        for &t in &sc.check_times {
            let audit = truncation_check(&sys, &sc.y0, &sc.target, t, &sc.solver).unwrap();
            worst = worst.max(audit.relative_change);
            details.push(format!("{}@{t:.3}: {:.2e}", sc.name, audit.relative_change));
        }
    }
    outcome(worst <= 0.01, format!("relative change J -> 2J: {} (tol 1e-2)", details.join(", ")))
}

/// Criterion 7: hull projection and tangent disk residuals.
fn geometry() -> Outcome {
    let alpha = 4.0;
    let d1 = tangent_disk(alpha, 1.2, 0.4).unwrap();
    let d2 = tangent_disk(alpha, 0.6, 0.4).unwrap();
    let mut details = vec![];

    let mut worst_tangency: f64 = 0.0;
    let mut worst_containment: f64 = f64::INFINITY;
    for td in [&d1, &d2] {
        let (p, c, r) = (td.tangent_point, td.disk.center, td.disk.radius);
        let slope = alpha * p[0].powf(alpha - 1.0);
        let tangent = [1.0 / slope.hypot(1.0), slope / slope.hypot(1.0)];
        let radial = ((c[0] - p[0]).hypot(c[1] - p[1]) - r).abs();
        let normal = ((c[0] - p[0]) * tangent[0] + (c[1] - p[1]) * tangent[1]).abs();
        worst_tangency = worst_tangency.max(radial).max(normal);
        let x_hi = 10.0f64.max(2.0 * (c[0] + r));
        for i in 1..=100_000 {
            let x = x_hi * i as f64 / 100_000.0;
            let gap = (x - c[0]).hypot(x.powf(alpha) - c[1]) - r;
            worst_containment = worst_containment.min(gap);
        }
        worst_containment = worst_containment.min(c[0] - r);
    }
    let hull_check = hull_curve_check(
        &d1.disk,
        &d2.disk,
        alpha,
        &[d1.tangent_point, d2.tangent_point],
        &HullCheckParams::default(),
    );
    details.push(format!(
        "tangency residual {worst_tangency:.1e} (tol 1e-8), containment slack {worst_containment:.2e} \
         (tol -1e-6), hull-curve gap {:.2e}",
        hull_check.min_gap
    ));

    let pitch = 1e-3;
    let mut worst_proj: f64 = 0.0;
    for (name, hull) in [
        ("tangent disks", DiskHull::new(d1.disk, d2.disk)),
        ("shrunk disk 1", DiskHull::new(d1.disk.scaled(0.5), d2.disk)),
    ] {
        let [a, b] = hull.disks();
        let lo = [
            (a.center[0] - a.radius).min(b.center[0] - b.radius) - 0.01,
            (a.center[1] - a.radius).min(b.center[1] - b.radius) - 0.01,
        ];
        let hi = [
            (a.center[0] + a.radius).max(b.center[0] + b.radius) + 0.01,
            (a.center[1] + a.radius).max(b.center[1] + b.radius) + 0.01,
        ];
        let brute = common::SliceProjector::new(lo, hi, pitch, |p| hull.contains_exact(p));
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0007);
        for _ in 0..100 {
            let p = [rng.gen_range(lo[0] - 1.0..hi[0] + 1.0), rng.gen_range(lo[1] - 1.0..hi[1] + 1.0)];
            let exact = hull.project(p);
            let grid = brute.project(p);
            worst_proj = worst_proj.max((exact[0] - grid[0]).hypot(exact[1] - grid[1]));
        }
        details.push(format!("{name}: 100 projections"));
    }
    details.push(format!("worst projection gap {worst_proj:.2e} (tol {:.0e})", 2.0 * pitch));
    outcome(
        worst_tangency <= 1e-8 && worst_containment >= -1e-6 && hull_check.passed && worst_proj <= 2.0 * pitch,
        details.join("; "),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("1 oracle equivalence", oracle_equivalence),
        ("2 falling-sun identity", falling_sun),
        ("3 bang-bang reconstruction", bang_bang),
        ("4 continuity and blow-up", continuity_blowup),
        ("5 counterexample", counterexample_checks),
        ("6 truncation self-audit", truncation),
        ("7 geometry", geometry),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let out = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if out.passed { "PASS" } else { "FAIL" };
        println!(
            "acceptance criterion {name}: {tag} [{:.1}s] {}",
            start.elapsed().as_secs_f64(),
            out.detail
        );
        failed += usize::from(!out.passed);
    }
    println!("acceptance: {} of 7 criteria passed", 7 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
