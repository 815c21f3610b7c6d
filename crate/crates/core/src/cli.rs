//! Command-line front end. Every command prints a JSON `RunReport`; the process
//! exits with status 0 iff all of its checks pass.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::classify::{region_map, ClassifyOptions, Region};
use crate::error::{Error, Result};
use crate::minnorm::{minimal_norm, truncation_check, SolverOptions};
use crate::mintime::{blowup_check, minimal_time, TimeOptions};
use crate::scenario::{
    build_counterexample, default_shrink_candidates, default_window, load_scenario, tune_shrink,
    verify_counterexample, CounterexampleSpec, Scenario, SystemConfig,
};
use crate::spectral::{SpectralSystem, State, Window};
use crate::targets::TargetSet;

#[derive(Debug, Parser)]
#[command(name = "fallingsun", version, about = "Minimal norm and minimal time controls for the 1-D heat equation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Write the run report to this file as well as stdout.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample N(t) over the scenario window and write it as CSV.
    NormProfile {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Base grid size (defaults to the scenario's profile_points).
        #[arg(long)]
        points: Option<usize>,
        #[command(flatten)]
        tol: TolFlags,
    },
    /// Minimal time T(M) by the falling-sun identity.
    MinTime {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        level: f64,
        #[command(flatten)]
        tol: TolFlags,
    },
    /// Classify a grid of (M, T) pairs.
    Classify {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Level grid `start:stop:count`.
        #[arg(long, default_value = "0:4:9")]
        levels: String,
        /// Horizon grid `start:stop:count`; defaults to the scenario window.
        #[arg(long)]
        horizons: Option<String>,
        /// Write the JSON summary here.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[command(flatten)]
        tol: TolFlags,
    },
    /// Build, tune and verify the non-monotone counterexample.
    Counterexample {
        /// Counterexample parameters as JSON; defaults are used when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value = "counterexample-out")]
        out_dir: PathBuf,
        /// Use the given shrink factor as is.
        #[arg(long)]
        no_tune: bool,
        #[arg(long, default_value_t = 8)]
        n_modes: usize,
        /// Relative wave margin as a fraction of N(tau2).
        #[arg(long, default_value_t = 0.05)]
        wave_margin: f64,
        #[command(flatten)]
        tol: TolFlags,
    },
    /// Quick internal consistency checks.
    Selftest,
}

#[derive(Debug, Clone, Args)]
pub struct TolFlags {
    #[arg(long)]
    pub n_slices: Option<usize>,
    #[arg(long)]
    pub tol_terminal: Option<f64>,
    #[arg(long)]
    pub tol_bisect: Option<f64>,
    #[arg(long)]
    pub time_tol: Option<f64>,
    #[arg(long)]
    pub delta_eta: Option<f64>,
    /// Halve every tolerance.
    #[arg(long)]
    pub strict: bool,
}

impl TolFlags {
    fn apply(&self, solver: &mut SolverOptions, time: &mut TimeOptions) {
        if let Some(v) = self.n_slices {
            solver.n_slices = v;
        }
        if let Some(v) = self.tol_terminal {
            solver.tol_terminal = v;
        }
        if let Some(v) = self.tol_bisect {
            solver.tol_bisect = v;
        }
        if let Some(v) = self.delta_eta {
            solver.delta_eta = v;
        }
        if let Some(v) = self.time_tol {
            time.time_tol = v;
        }
        if self.strict {
            *solver = solver.clone().strict();
            *time = time.clone().strict();
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub scenario_digest: Option<String>,
    pub outputs: Vec<String>,
    pub checks: Vec<Check>,
    pub summary: serde_json::Value,
    pub wall_time_s: f64,
}

impl RunReport {
    fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            scenario_digest: None,
            outputs: vec![],
            checks: vec![],
            summary: serde_json::Value::Null,
            wall_time_s: 0.0,
        }
    }

    fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn read_scenario(path: &Path, tol: &TolFlags) -> Result<Scenario> {
    let mut sc = load_scenario(&fs::read_to_string(path)?)?;
    tol.apply(&mut sc.solver, &mut sc.time);
    Ok(sc)
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Error::Config(format!("grid `{text}` is not start:stop:count"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].parse().map_err(|_| bad())?;
    let b: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    match n {
        0 => Err(bad()),
        1 => Ok(vec![a]),
        _ => Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn cmd_norm_profile(scenario: &Path, out: &Path, points: Option<usize>, tol: &TolFlags) -> Result<RunReport> {
    let mut report = RunReport::new("norm-profile");
    let mut sc = read_scenario(scenario, tol)?;
    if let Some(p) = points {
        sc.profile_points = p;
    }
    report.scenario_digest = Some(sc.digest()?);
    let profile = sc.profile()?;
    profile.write_csv(fs::File::create(out)?)?;
    report.outputs.push(out.display().to_string());

    let n_invalid = profile.valid.iter().filter(|v| !**v).count();
    report.check(
        "valid_nodes",
        n_invalid == 0,
        format!("{n_invalid} of {} nodes invalid", profile.len()),
    );
    let finite = profile.samples().all(|(_, n)| n.is_finite() && n >= 0.0);
    report.check("values_finite_nonnegative", finite, "");
    let (t_arg, n_min) = profile.argmin().unwrap_or((f64::NAN, f64::NAN));
    report.summary = serde_json::json!({
        "nodes": profile.len(),
        "refined_intervals": profile.refined_intervals.len(),
        "min": n_min,
        "argmin": t_arg,
        "max": profile.max_value(),
        "zeros": profile.zeros(sc.time.tol_n),
    });
    Ok(report)
}

pub fn cmd_min_time(scenario: &Path, level: f64, tol: &TolFlags) -> Result<RunReport> {
    let mut report = RunReport::new("min-time");
    let sc = read_scenario(scenario, tol)?;
    report.scenario_digest = Some(sc.digest()?);
    let sys = sc.sys()?;
    let profile = sc.profile()?;
    let res = minimal_time(&sys, &sc.y0, &sc.target, level, &profile, &sc.solver, &sc.time)?;
    match res.time {
        Some(t) => {
            report.check("positive_time", t > sc.time.time_tol || res.at_window_start, format!("T(M) = {t}"));
            if !res.at_window_start {
                let resid = res.residual.unwrap_or(f64::INFINITY);
                report.check(
                    "certificate",
                    resid <= 0.02 * level.max(1.0),
                    format!("|N(T(M)) - M| = {resid:.3e}"),
                );
                report.check("earlier_exceeds", res.before_exceeds, "");
            }
        }
        None => report.check("unbounded_over_window", true, "N > M on the whole window"),
    }
    report.summary = serde_json::to_value(&res)?;
    Ok(report)
}

pub fn cmd_classify(
    scenario: &Path,
    out: &Path,
    levels: &str,
    horizons: Option<&str>,
    summary: Option<&Path>,
    tol: &TolFlags,
) -> Result<RunReport> {
    let mut report = RunReport::new("classify");
    let sc = read_scenario(scenario, tol)?;
    report.scenario_digest = Some(sc.digest()?);
    let levels = parse_grid(levels)?;
    let horizons = match horizons {
        Some(h) => parse_grid(h)?,
        None => parse_grid(&format!("{}:{}:{}", sc.window.0, sc.window.1, sc.profile_points))?,
    };
    let map = region_map(
        &sc.sys()?,
        &sc.y0,
        &sc.target,
        &levels,
        &horizons,
        (sc.window.0, sc.window.1, sc.profile_points),
        &sc.solver,
        &sc.time,
        &ClassifyOptions::default(),
    )?;
    map.write_csv(fs::File::create(out)?)?;
    report.outputs.push(out.display().to_string());
    if let Some(p) = summary {
        write_json(p, &map.summary)?;
        report.outputs.push(p.display().to_string());
    }
    report.check(
        "partition",
        map.summary.nontrivial + map.summary.null + map.summary.not_equivalent + map.summary.failed
            == levels.len() * horizons.len(),
        "",
    );
    let off_row = map
        .cells_in(Region::EquivalentNull)
        .iter()
        .all(|&(i, _)| map.levels[i] <= ClassifyOptions::default().tol_m);
    report.check("null_region_on_zero_level", off_row, "");
    report.check("no_failed_cells", map.summary.failed == 0, format!("{} failed", map.summary.failed));
    report.summary = serde_json::to_value(&map.summary)?;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_counterexample(
    spec: Option<&Path>,
    out_dir: &Path,
    no_tune: bool,
    n_modes: usize,
    wave_margin: f64,
    tol: &TolFlags,
) -> Result<RunReport> {
    let mut report = RunReport::new("counterexample");
    let spec: CounterexampleSpec = match spec {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .map_err(|e| Error::Config(format!("counterexample parameters: {e}")))?,
        None => CounterexampleSpec::default(),
    };
    let system = SystemConfig {
        n_modes,
        omega: default_window(),
    };
    let (mut solver, mut time) = {
        let (sc, _) = build_counterexample(&spec, system)?;
        (sc.solver, sc.time)
    };
    tol.apply(&mut solver, &mut time);

    let mut shrink = spec.shrink;
    let mut tuning = None;
    if !no_tune {
        let mut cands = vec![spec.shrink];
        cands.extend(default_shrink_candidates().into_iter().filter(|c| *c < spec.shrink));
        let t = tune_shrink(&spec, system, &cands, wave_margin, &solver, &time)?;
        shrink = t.shrink;
        tuning = Some(t);
    }
    let spec = CounterexampleSpec { shrink, ..spec };
    let (mut sc, lm) = build_counterexample(&spec, system)?;
    sc.solver = solver;
    sc.time = time;
    report.scenario_digest = Some(sc.digest()?);

    fs::create_dir_all(out_dir)?;
    let scenario_path = out_dir.join("scenario.json");
    fs::write(&scenario_path, sc.to_json()?)?;
    report.outputs.push(scenario_path.display().to_string());

    let profile = sc.profile()?;
    let profile_path = out_dir.join("profile.csv");
    profile.write_csv(fs::File::create(&profile_path)?)?;
    report.outputs.push(profile_path.display().to_string());

    let verdict = verify_counterexample(&sc, &lm, &profile, wave_margin, &ClassifyOptions::default())?;
    report.check(
        "geometry",
        lm.hull_check.passed && lm.p0_gap > 0.0 && lm.curve_deviation <= 1e-10,
        format!(
            "hull gap {:.3e}, p0 gap {:.3e}, curve deviation {:.1e}",
            lm.hull_check.min_gap, lm.p0_gap, lm.curve_deviation
        ),
    );
    report.check(
        "free_trajectory_meets_target_only_at_t2",
        lm.enters_at_t2 && lm.outside_at_t1 && lm.outside_before_t2,
        "",
    );
    let w = &verdict.wave;
    report.check(
        "wave_ordering",
        w.passed,
        format!(
            "N(T2) = {:.2e}, N(T1) = {:.5}, N(tau2) = {:.5}, min on (0, tau1] = {:?}, margin {:.2e}",
            w.n_t2, w.n_t1, w.n_tau2, w.min_before_tau1, w.margin
        ),
    );
    report.check(
        "null_pair_equivalent",
        verdict.null_pair.region == Region::EquivalentNull,
        format!("(0, T2) -> {}", verdict.null_pair.region.as_str()),
    );
    report.check(
        "minimal_time_gap",
        verdict.gap.as_ref().is_some_and(|g| g.passed),
        verdict.gap.as_ref().map_or("tau1 not found".into(), |g| {
            format!(
                "M0 = {:.5}, T_hat = {:.4}, T(1.05 M0) = {:?}, T(0.95 M0) = {:?}",
                g.m0, g.t_hat, g.t_above, g.t_below
            )
        }),
    );
    let report_path = out_dir.join("verification.json");
    write_json(&report_path, &serde_json::json!({"tuning": tuning, "verification": verdict}))?;
    report.outputs.push(report_path.display().to_string());
    report.summary = serde_json::json!({
        "shrink": shrink,
        "t1": lm.t1,
        "t2": lm.t2,
        "tau2": lm.tau2,
        "tau1": w.tau1,
        "provenance": sc.provenance,
    });
    Ok(report)
}

pub fn cmd_selftest() -> Result<RunReport> {
    let mut report = RunReport::new("selftest");
    let full = SpectralSystem::new(4, Window::full())?;
    let id_err = (full.gram() - nalgebra::DMatrix::<f64>::identity(4, 4)).amax();
    report.check("full_window_gram_identity", id_err < 1e-12, format!("{id_err:.1e}"));

    let q = TargetSet::ball(State::from_vec(vec![1.0, 0.0]), 1.0);
    let p = q.project(&State::from_vec(vec![3.0, 0.0]));
    report.check("ball_projection", (p.0[0] - 2.0).abs() < 1e-15 && p.0[1] == 0.0, "");

    // one mode, one slice: N = |q - e^{-T} y0| / (w B)
    let sys = SpectralSystem::new(1, Window::new(0.0, std::f64::consts::FRAC_PI_2)?)?;
    let t = 0.5f64;
    let y0 = State::from_vec(vec![1.0]);
    let qp = TargetSet::Point {
        center: State::from_vec(vec![2.0]),
    };
    let opts = SolverOptions {
        n_slices: 1,
        ..Default::default()
    };
    let n = minimal_norm(&sys, &y0, &qp, t, &opts)?.value;
    let exact = (2.0 - (-t).exp()) / (0.5 * (1.0 - (-t).exp()));
    report.check("scalar_closed_form", (n - exact).abs() <= 1e-3 * exact, format!("{n} vs {exact}"));

    let sc = crate::scenario::ball_scenario();
    let audit = truncation_check(&sc.sys()?, &sc.y0, &sc.target, 0.7, &sc.solver)?;
    report.check(
        "truncation_audit",
        audit.passed,
        format!("relative change {:.2e}", audit.relative_change),
    );
    let blow = blowup_check(&sc.sys()?, &sc.y0, &sc.target, &sc.solver, &sc.time)?;
    report.check("blowup", blow.passed, format!("{:?}", blow.values));
    Ok(report)
}

/// Configures the global thread pool from `FS_THREADS`.
pub fn init_threads() {
    if let Some(n) = std::env::var("FS_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Runs the parsed command and returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let start = Instant::now();
    let result = match &cli.command {
        Command::NormProfile {
            scenario,
            out,
            points,
            tol,
        } => cmd_norm_profile(scenario, out, *points, tol),
        Command::MinTime { scenario, level, tol } => cmd_min_time(scenario, *level, tol),
        Command::Classify {
            scenario,
            out,
            levels,
            horizons,
            summary,
            tol,
        } => cmd_classify(scenario, out, levels, horizons.as_deref(), summary.as_deref(), tol),
        Command::Counterexample {
            spec,
            out_dir,
            no_tune,
            n_modes,
            wave_margin,
            tol,
        } => cmd_counterexample(spec.as_deref(), out_dir, *no_tune, *n_modes, *wave_margin, tol),
        Command::Selftest => cmd_selftest(),
    };
    match result {
        Ok(mut report) => {
            report.wall_time_s = start.elapsed().as_secs_f64();
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            {
                use std::io::Write;
                let _ = writeln!(std::io::stdout(), "{text}");
            }
            if let Some(p) = &cli.report {
                if let Err(e) = fs::write(p, &text) {
                    eprintln!("error: cannot write report: {e}");
                    return 2;
                }
            }
            i32::from(!report.passed())
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Domain(_) => 2,
                _ => 1,
            }
        }
    }
}
