//! Experiment scenarios: configuration files, the ball-target baseline and the
//! non-monotone counterexample built from two disks tangent to `x₂ = x₁^α`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{classify_pair, ClassifyOptions, RegionVerdict};
use crate::error::{Error, Result};
use crate::minnorm::{minimal_norm, SolverOptions};
use crate::mintime::{minimal_time, sample_profile, NormProfile, TimeOptions};
use crate::spectral::{SpectralSystem, State, Window};
use crate::targets::{
    hull_curve_check, tangent_disk, Disk2, DiskHull, HullCheckParams, HullCheckReport, TangentDisk,
    TargetSet, DEFAULT_MEMBERSHIP_TOL,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n_modes: usize,
    pub omega: Window,
}

impl SystemConfig {
    pub fn build(&self) -> Result<SpectralSystem> {
        SpectralSystem::new(self.n_modes, self.omega)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CounterexampleSpec {
    /// Second plane mode, `α = λ_k / λ₁ = k²`.
    pub k: usize,
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub theta1: f64,
    pub theta2: f64,
    /// Radius factor `α₀ ∈ [0, 1)` applied to the first disk.
    pub shrink: f64,
    pub complement_radius: f64,
}

impl Default for CounterexampleSpec {
    fn default() -> Self {
        Self {
            k: 2,
            a0: 2.0,
            a1: 1.2,
            a2: 0.6,
            theta1: 0.4,
            theta2: 0.4,
            shrink: 0.9,
            complement_radius: 1.0,
        }
    }
}

/// Scenario as stored on disk. `y0` and `target` may be omitted when a
/// counterexample parameter set is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    pub system: SystemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSet>,
    /// Profile window `(t_min, t_max]`.
    pub window: [f64; 2],
    #[serde(default = "default_profile_points")]
    pub profile_points: usize,
    #[serde(default)]
    pub m_max: Option<f64>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub time: TimeOptions,
    /// Horizons used by the truncation audit.
    #[serde(default)]
    pub check_times: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<CounterexampleSpec>,
}

fn default_profile_points() -> usize {
    48
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub system: SystemConfig,
    pub y0: State,
    pub target: TargetSet,
    pub window: (f64, f64),
    pub profile_points: usize,
    pub m_max: Option<f64>,
    pub solver: SolverOptions,
    pub time: TimeOptions,
    pub check_times: Vec<f64>,
    pub counterexample: Option<CounterexampleSpec>,
    /// Construction log.
    pub provenance: Vec<String>,
}

impl Scenario {
    pub fn sys(&self) -> Result<SpectralSystem> {
        self.system.build()
    }

    pub fn to_file(&self) -> ScenarioFile {
        ScenarioFile {
            name: self.name.clone(),
            system: self.system,
            y0: Some(self.y0.as_slice().to_vec()),
            target: Some(self.target.clone()),
            window: [self.window.0, self.window.1],
            profile_points: self.profile_points,
            m_max: self.m_max,
            solver: self.solver.clone(),
            time: self.time.clone(),
            check_times: self.check_times.clone(),
            counterexample: self.counterexample.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    /// SHA-256 of the serialized scenario, hex encoded.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }

    pub fn profile(&self) -> Result<NormProfile> {
        sample_profile(
            &self.sys()?,
            &self.y0,
            &self.target,
            self.window.0,
            self.window.1,
            self.profile_points,
            &self.solver,
            &self.time,
        )
    }

    fn validate(&self) -> Result<()> {
        let n = self.system.n_modes;
        if self.y0.len() != n {
            return Err(Error::Config(format!(
                "y0 has {} coefficients but system.n_modes = {n}",
                self.y0.len()
            )));
        }
        self.target
            .validate(n)
            .map_err(|e| Error::Config(format!("target: {e}")))?;
        if !self.target.has_interior() {
            return Err(Error::Config("target: empty interior is not admissible".into()));
        }
        if self.target.contains(&self.y0, DEFAULT_MEMBERSHIP_TOL) {
            return Err(Error::Config("y0: initial state must lie outside the target".into()));
        }
        let (a, b) = self.window;
        if !(a > 0.0 && b > a) {
            return Err(Error::Config(format!(
                "window: need 0 < t_min < t_max, got [{a}, {b}]"
            )));
        }
        if self.profile_points < 2 {
            return Err(Error::Config("profile_points: need at least 2".into()));
        }
        if self.check_times.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("check_times: horizons must be positive".into()));
        }
        Ok(())
    }
}

/// Parses and validates a scenario; counterexample specs are rebuilt.
pub fn load_scenario(text: &str) -> Result<Scenario> {
    let file: ScenarioFile = serde_json::from_str(text)
        .map_err(|e| Error::Config(format!("scenario schema: {e}")))?;
    scenario_from_file(file)
}

pub fn scenario_from_file(file: ScenarioFile) -> Result<Scenario> {
    let mut provenance = vec![];
    let (y0, target) = match &file.counterexample {
        Some(spec) => {
            let (built, _) = build_counterexample(spec, file.system)?;
            if file.y0.as_ref().is_some_and(|y| y.as_slice() != built.y0.as_slice())
                || file.target.as_ref().is_some_and(|t| *t != built.target)
            {
                return Err(Error::Config(
                    "y0/target disagree with the inlined counterexample parameters".into(),
                ));
            }
            provenance = built.provenance;
            (built.y0, built.target)
        }
        None => {
            let y0 = file
                .y0
                .clone()
                .ok_or_else(|| Error::Config("y0: missing".into()))?;
            let target = file
                .target
                .clone()
                .ok_or_else(|| Error::Config("target: missing".into()))?;
            (State::from_vec(y0), target)
        }
    };
    let sc = Scenario {
        name: file.name,
        system: file.system,
        y0,
        target,
        window: (file.window[0], file.window[1]),
        profile_points: file.profile_points,
        m_max: file.m_max,
        solver: file.solver,
        time: file.time,
        check_times: file.check_times,
        counterexample: file.counterexample,
        provenance,
    };
    sc.validate()?;
    Ok(sc)
}

/// Control window used by the shipped scenarios.
pub fn default_window() -> Window {
    Window {
        left: 0.3,
        right: 2.8,
    }
}

/// Ball target around the origin; the free trajectory enters it near `t = 1.39`,
/// so `N` decreases to zero on the window.
pub fn ball_scenario() -> Scenario {
    let mut y0 = vec![0.0; 8];
    y0[..4].copy_from_slice(&[2.0, 1.0, -0.5, 0.25]);
    Scenario {
        name: "ball".into(),
        system: SystemConfig {
            n_modes: 8,
            omega: default_window(),
        },
        y0: State::from_vec(y0),
        target: TargetSet::ball(State::zeros(8), 0.5),
        window: (0.1, 2.0),
        profile_points: 48,
        m_max: None,
        solver: SolverOptions::default(),
        time: TimeOptions {
            blowup_t0: 1.2,
            ..Default::default()
        },
        check_times: vec![0.3, 0.7, 1.2],
        counterexample: None,
        provenance: vec!["ball target B(0, 0.5), y0 = (2, 1, -0.5, 0.25, 0, ...)".into()],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmarks {
    pub alpha: f64,
    pub t1: f64,
    pub t2: f64,
    /// Midpoint of `(T₁, T₂)`.
    pub tau2: f64,
    pub p0: [f64; 2],
    pub p1: [f64; 2],
    pub p2: [f64; 2],
    pub disk1: TangentDisk,
    pub disk2: TangentDisk,
    pub shrunk_disk1: Disk2,
    pub hull_check: HullCheckReport,
    pub p0_gap: f64,
    /// Largest `|x₂ - x₁^α|` along the sampled free trajectory.
    pub curve_deviation: f64,
    pub enters_at_t2: bool,
    pub outside_at_t1: bool,
    pub outside_before_t2: bool,
}

/// Builds the counterexample scenario: `y0 = a₀e₁ + a₀^α e_k`,
/// `Q = conv(α₀D₁ ∪ D₂) ⊕ B(ρ)` with disks tangent to the curve at `a₁` and `a₂`.
pub fn build_counterexample(spec: &CounterexampleSpec, system: SystemConfig) -> Result<(Scenario, Landmarks)> {
    let k = spec.k;
    if k < 2 {
        return Err(Error::Config(format!("k must be >= 2, got {k}")));
    }
    if system.n_modes < k {
        return Err(Error::Config(format!(
            "truncation J = {} must be >= k = {k}",
            system.n_modes
        )));
    }
    if !(spec.a0 > spec.a1 && spec.a1 > spec.a2 && spec.a2 > 0.0) {
        return Err(Error::Config(format!(
            "need a0 > a1 > a2 > 0 (got {}, {}, {})",
            spec.a0, spec.a1, spec.a2
        )));
    }
    if !(0.0..1.0).contains(&spec.shrink) {
        return Err(Error::Config(format!("shrink must lie in [0, 1), got {}", spec.shrink)));
    }
    let lambda1 = 1.0;
    let alpha = (k * k) as f64 / lambda1;
    let mut log = vec![format!("alpha = lambda_k / lambda_1 = {alpha}")];

    let d1 = tangent_disk(alpha, spec.a1, spec.theta1)?;
    let d2 = tangent_disk(alpha, spec.a2, spec.theta2)?;
    log.push(format!(
        "disk 1 tangent at a1 = {}: center {:?}, radius {:.6} ({} halvings)",
        spec.a1, d1.disk.center, d1.disk.radius, d1.halvings
    ));
    log.push(format!(
        "disk 2 tangent at a2 = {}: center {:?}, radius {:.6} ({} halvings)",
        spec.a2, d2.disk.center, d2.disk.radius, d2.halvings
    ));

    let center_gap = {
        let (c1, c2) = (d1.disk.center, d2.disk.center);
        ((c1[0] - c2[0]).powi(2) + (c1[1] - c2[1]).powi(2)).sqrt()
    };
    if center_gap <= d1.disk.radius + d2.disk.radius {
        return Err(Error::Geometry(format!(
            "tangent disks overlap (center distance {center_gap:.6} <= radii sum {:.6})",
            d1.disk.radius + d2.disk.radius
        )));
    }
    let hull_check = hull_curve_check(
        &d1.disk,
        &d2.disk,
        alpha,
        &[d1.tangent_point, d2.tangent_point],
        &HullCheckParams::default(),
    );
    if !hull_check.passed {
        return Err(Error::Geometry(format!(
            "hull of the tangent disks meets the curve away from the tangency points \
             (gap {:.3e} at x = {:.6})",
            hull_check.min_gap, hull_check.worst_abscissa
        )));
    }
    let p0 = [spec.a0, spec.a0.powf(alpha)];
    let p0_gap = DiskHull::new(d1.disk, d2.disk).distance(p0);
    if !(p0_gap > 0.0) {
        return Err(Error::Geometry(format!(
            "p0 = ({}, {}) lies in the hull of the tangent disks",
            p0[0], p0[1]
        )));
    }

    let shrunk = d1.disk.scaled(spec.shrink);
    let target = TargetSet::HullOfDisksProduct {
        plane_mode: k,
        disk1: shrunk,
        disk2: d2.disk,
        complement_radius: spec.complement_radius,
    };
    let mut y = vec![0.0; system.n_modes];
    y[0] = p0[0];
    y[k - 1] = p0[1];
    let y0 = State::from_vec(y);
    let t1 = (spec.a0 / spec.a1).ln() / lambda1;
    let t2 = (spec.a0 / spec.a2).ln() / lambda1;
    log.push(format!("T1 = {t1:.12}, T2 = {t2:.12}, shrink = {}", spec.shrink));

    let sys = system.build()?;
    let mut curve_deviation: f64 = 0.0;
    let mut outside_before_t2 = true;
    const SAMPLES: usize = 1000;
    for i in 0..=2 * SAMPLES {
        let t = t2 * i as f64 / SAMPLES as f64;
        let z = sys.free_flow(&y0, t)?;
        let (x1, x2) = (z.0[0], z.0[k - 1]);
        curve_deviation = curve_deviation.max((x2 - x1.powf(alpha)).abs());
        if i < SAMPLES && target.contains(&z, DEFAULT_MEMBERSHIP_TOL) {
            outside_before_t2 = false;
        }
    }
    let enters_at_t2 = target.contains(&sys.free_flow(&y0, t2)?, DEFAULT_MEMBERSHIP_TOL);
    let outside_at_t1 = !target.contains(&sys.free_flow(&y0, t1)?, DEFAULT_MEMBERSHIP_TOL);
    log.push(format!(
        "free trajectory: curve deviation {curve_deviation:.2e}, in Q at T2: {enters_at_t2}, \
         outside at T1: {outside_at_t1}, outside on (0, T2): {outside_before_t2}"
    ));

    let landmarks = Landmarks {
        alpha,
        t1,
        t2,
        tau2: 0.5 * (t1 + t2),
        p0,
        p1: d1.tangent_point,
        p2: d2.tangent_point,
        disk1: d1,
        disk2: d2,
        shrunk_disk1: shrunk,
        hull_check,
        p0_gap,
        curve_deviation,
        enters_at_t2,
        outside_at_t1,
        outside_before_t2,
    };
    let scenario = Scenario {
        name: "counterexample".into(),
        system,
        y0,
        target,
        window: (0.05, 1.6),
        profile_points: 64,
        m_max: None,
        solver: SolverOptions::default(),
        time: TimeOptions {
            blowup_t0: t1,
            ..Default::default()
        },
        check_times: vec![t1, 0.5 * (t1 + t2)],
        counterexample: Some(spec.clone()),
        provenance: log,
    };
    Ok((scenario, landmarks))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveReport {
    pub n_t2: f64,
    pub n_t1: f64,
    pub n_tau2: f64,
    pub tau1: Option<f64>,
    /// Smallest sampled `N` on `(0, τ₁]`.
    pub min_before_tau1: Option<f64>,
    pub margin: f64,
    /// `N(τ₂) - N(T₁)`.
    pub gap_low: f64,
    /// `min_{(0, τ₁]} N - N(τ₂)`.
    pub gap_high: Option<f64>,
    pub passed: bool,
}

/// Checks `0 ≈ N(T₂) <= N(T₁) < N(τ₂) < min_{(0, τ₁]} N` with gaps of at least
/// `margin_rel · N(τ₂)`.
///
/// `τ₁` is found by scanning backwards from `T₁` until `N` exceeds
/// `N(τ₂) + 2·margin`.
pub fn wave_report(
    sys: &SpectralSystem,
    y0: &State,
    target: &TargetSet,
    lm: &Landmarks,
    margin_rel: f64,
    solver: &SolverOptions,
    time: &TimeOptions,
) -> Result<WaveReport> {
    use rayon::prelude::*;
    let n = |t: f64| minimal_norm(sys, y0, target, t, solver).map(|s| s.value);
    let n_t2 = n(lm.t2)?;
    let n_t1 = n(lm.t1)?;
    let n_tau2 = n(lm.tau2)?;
    let margin = margin_rel * n_tau2;

    const SCAN: usize = 64;
    let h = lm.t1 / SCAN as f64;
    let mut tau1 = None;
    for j in 1..SCAN {
        let t = lm.t1 - h * j as f64;
        if n(t)? >= n_tau2 + 2.0 * margin {
            tau1 = Some(t);
            break;
        }
    }
    let min_before_tau1 = tau1.map(|tau1| {
        (1..=32)
            .into_par_iter()
            .map(|i| {
                let t = tau1 * i as f64 / 32.0;
                n(t).unwrap_or(f64::INFINITY)
            })
            .reduce(|| f64::INFINITY, f64::min)
    });
    let gap_low = n_tau2 - n_t1;
    let gap_high = min_before_tau1.map(|m| m - n_tau2);
    let passed = n_t2 <= time.tol_n
        && n_t1 > time.tol_n
        && n_t2 <= n_t1
        && gap_low >= margin
        && gap_high.is_some_and(|g| g >= margin);
    Ok(WaveReport {
        n_t2,
        n_t1,
        n_tau2,
        tau1,
        min_before_tau1,
        margin,
        gap_low,
        gap_high,
        passed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShrinkTuning {
    pub shrink: f64,
    pub candidates: Vec<(f64, std::result::Result<WaveReport, String>)>,
}

/// First shrink factor in `candidates` whose scenario passes the wave ordering.
pub fn tune_shrink(
    base: &CounterexampleSpec,
    system: SystemConfig,
    candidates: &[f64],
    margin_rel: f64,
    solver: &SolverOptions,
    time: &TimeOptions,
) -> Result<ShrinkTuning> {
    let mut tried = Vec::new();
    for &shrink in candidates {
        let spec = CounterexampleSpec {
            shrink,
            ..base.clone()
        };
        let report = build_counterexample(&spec, system).and_then(|(sc, lm)| {
            wave_report(&sc.sys()?, &sc.y0, &sc.target, &lm, margin_rel, solver, time)
        });
        let ok = report.as_ref().is_ok_and(|r| r.passed);
        tried.push((shrink, report.map_err(|e| e.to_string())));
        if ok {
            return Ok(ShrinkTuning {
                shrink,
                candidates: tried,
            });
        }
    }
    let summary: Vec<String> = tried
        .iter()
        .map(|(s, r)| match r {
            Ok(w) => format!(
                "shrink {s}: N(T2) = {:.3e}, N(T1) = {:.4}, N(tau2) = {:.4}, min before tau1 = {:?}",
                w.n_t2, w.n_t1, w.n_tau2, w.min_before_tau1
            ),
            Err(e) => format!("shrink {s}: {e}"),
        })
        .collect();
    Err(Error::TuningExhausted(summary.join("; ")))
}

/// Default shrink search sequence `0.9, 0.8, …, 0.0`.
pub fn default_shrink_candidates() -> Vec<f64> {
    (0..10).map(|i| f64::from(9 - i) / 10.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// `M₀ = min_{[τ₁, τ₂]} N`.
    pub m0: f64,
    /// Minimizer of `N` on `[τ₁, τ₂]`.
    pub t_hat: f64,
    pub tau2: f64,
    /// `T(1.05 M₀)`.
    pub t_above: Option<f64>,
    /// `T(0.95 M₀)`.
    pub t_below: Option<f64>,
    pub gap_length: f64,
    pub required_length: f64,
    pub passed: bool,
}

/// Locates `M₀` and `T̂` and checks that minimal times jump across `(T̂, τ₂)`
/// when the level passes `M₀`.
pub fn gt_gap_report(
    sys: &SpectralSystem,
    y0: &State,
    target: &TargetSet,
    tau1: f64,
    tau2: f64,
    profile: &NormProfile,
    solver: &SolverOptions,
    time: &TimeOptions,
) -> Result<GapReport> {
    use rayon::prelude::*;
    let n = |t: f64| minimal_norm(sys, y0, target, t, solver).map(|s| s.value);
    const SAMPLES: usize = 64;
    let pts: Vec<(f64, f64)> = (0..=SAMPLES)
        .into_par_iter()
        .map(|i| {
            let t = tau1 + (tau2 - tau1) * i as f64 / SAMPLES as f64;
            n(t).map(|v| (t, v))
        })
        .collect::<Result<_>>()?;
    let (imin, _) = pts
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("samples");
    // golden-section refinement around the sampled minimizer
    let (mut a, mut b) = (pts[imin.saturating_sub(1)].0, pts[(imin + 1).min(SAMPLES)].0);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (n(c)?, n(d)?);
    while b - a > 0.1 * time.time_tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = n(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = n(d)?;
        }
    }
    let (mut t_hat, mut m0) = if fc <= fd { (c, fc) } else { (d, fd) };
    if pts[imin].1 < m0 {
        (t_hat, m0) = pts[imin];
    }

    let t_above = minimal_time(sys, y0, target, 1.05 * m0, profile, solver, time)?.time;
    let t_below = minimal_time(sys, y0, target, 0.95 * m0, profile, solver, time)?.time;
    let gap_length = match (t_above, t_below) {
        (Some(x), Some(y)) => y - x,
        _ => f64::NAN,
    };
    let required_length = 0.5 * (tau2 - t_hat);
    let passed = t_above.is_some_and(|t| t <= t_hat)
        && t_hat < tau2
        && t_below.is_some_and(|t| t >= tau2 - time.time_tol)
        && gap_length >= required_length;
    Ok(GapReport {
        m0,
        t_hat,
        tau2,
        t_above,
        t_below,
        gap_length,
        required_length,
        passed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub shrink: f64,
    pub landmarks: Landmarks,
    pub wave: WaveReport,
    /// Verdict for `(M, T) = (0, T₂)`.
    pub null_pair: RegionVerdict,
    pub gap: Option<GapReport>,
    pub passed: bool,
}

/// Runs the wave, null-pair and gap checks on a built counterexample.
pub fn verify_counterexample(
    sc: &Scenario,
    lm: &Landmarks,
    profile: &NormProfile,
    margin_rel: f64,
    classify: &ClassifyOptions,
) -> Result<CounterexampleReport> {
    let sys = sc.sys()?;
    let wave = wave_report(&sys, &sc.y0, &sc.target, lm, margin_rel, &sc.solver, &sc.time)?;
    let null_pair = classify_pair(
        &sys, &sc.y0, &sc.target, 0.0, lm.t2, profile, &sc.solver, &sc.time, classify,
    )?;
    let gap = match wave.tau1 {
        Some(tau1) => Some(gt_gap_report(
            &sys, &sc.y0, &sc.target, tau1, lm.tau2, profile, &sc.solver, &sc.time,
        )?),
        None => None,
    };
    let passed = wave.passed
        && null_pair.region == crate::classify::Region::EquivalentNull
        && gap.as_ref().is_some_and(|g| g.passed);
    Ok(CounterexampleReport {
        shrink: sc.counterexample.as_ref().map_or(f64::NAN, |s| s.shrink),
        landmarks: lm.clone(),
        wave,
        null_pair,
        gap,
        passed,
    })
}
