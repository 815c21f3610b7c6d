//! Minimal norm profiles `t ↦ N(t)` and minimal times by the falling-sun identity
//! `T(M) = inf { t > 0 : N(t) <= M }`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minnorm::{minimal_norm, SolverOptions};
use crate::spectral::{SpectralSystem, State};
use crate::targets::{TargetSet, DEFAULT_MEMBERSHIP_TOL};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeOptions {
    /// Width of the final crossing bracket.
    pub time_tol: f64,
    /// Jump `|ΔN|` between neighbours that triggers a midpoint; `None` means
    /// half the median jump of the base grid.
    pub refine_jump: Option<f64>,
    pub max_depth: u32,
    pub max_nodes: usize,
    /// Absolute threshold below which `N` counts as zero.
    pub tol_n: f64,
    /// Relative accuracy of `N(T(M))` against `M` sought after the bracket
    /// reached `time_tol`.
    pub level_rel_tol: f64,
    pub blowup_t0: f64,
    pub blowup_levels: u32,
    pub blowup_factor: f64,
}

impl Default for TimeOptions {
    fn default() -> Self {
        Self {
            time_tol: 1e-3,
            refine_jump: None,
            max_depth: 6,
            max_nodes: 4096,
            tol_n: 1e-6,
            level_rel_tol: 5e-3,
            blowup_t0: 0.25,
            blowup_levels: 5,
            blowup_factor: 100.0,
        }
    }
}

impl TimeOptions {
    pub fn strict(mut self) -> Self {
        self.time_tol *= 0.5;
        self.tol_n *= 0.5;
        self.level_rel_tol *= 0.5;
        self
    }
}

/// `N` evaluated on a grid of `(t_min, t_max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormProfile {
    pub t_min: f64,
    pub t_max: f64,
    pub grid: Vec<f64>,
    /// `NaN` at invalid nodes, finite and nonnegative elsewhere.
    pub values: Vec<f64>,
    /// Node was inserted by refinement.
    pub refined: Vec<bool>,
    pub valid: Vec<bool>,
    pub refined_intervals: Vec<(f64, f64)>,
    pub meta: SolverOptions,
}

impl NormProfile {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Valid `(t, N)` pairs in time order.
    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.grid
            .iter()
            .zip(&self.values)
            .zip(&self.valid)
            .filter(|(_, ok)| **ok)
            .map(|((t, n), _)| (*t, *n))
    }

    pub fn max_value(&self) -> f64 {
        self.samples().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest sampled value and its time.
    pub fn argmin(&self) -> Option<(f64, f64)> {
        self.samples().min_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn zeros(&self, tol_n: f64) -> Vec<f64> {
        self.samples().filter(|s| s.1 <= tol_n).map(|s| s.0).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "N", "refined", "valid"])?;
        for i in 0..self.len() {
            out.write_record([
                format!("{:e}", self.grid[i]),
                format!("{:e}", self.values[i]),
                u8::from(self.refined[i]).to_string(),
                u8::from(self.valid[i]).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R, meta: SolverOptions) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let (mut grid, mut values, mut refined, mut valid) = (vec![], vec![], vec![], vec![]);
        for rec in rd.records() {
            let rec = rec?;
            let field = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Profile(format!("bad CSV field {i} in {rec:?}")))
            };
            grid.push(field(0)?);
            values.push(field(1)?);
            refined.push(field(2)? != 0.0);
            valid.push(field(3)? != 0.0);
        }
        if grid.is_empty() {
            return Err(Error::Profile("empty profile".into()));
        }
        Ok(Self {
            t_min: 0.0,
            t_max: *grid.last().unwrap(),
            grid,
            values,
            refined,
            valid,
            refined_intervals: vec![],
            meta,
        })
    }
}

fn solve_n(sys: &SpectralSystem, y0: &State, q: &TargetSet, t: f64, opts: &SolverOptions) -> Option<f64> {
    minimal_norm(sys, y0, q, t, opts).ok().map(|s| s.value)
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Samples `N` on `t_min + i (t_max - t_min) / m`, `i = 1..=m`, then inserts
/// midpoints between neighbours whose values jump by more than the refinement
/// threshold.
pub fn sample_profile(
    sys: &SpectralSystem,
    y0: &State,
    target: &TargetSet,
    t_min: f64,
    t_max: f64,
    m: usize,
    solver: &SolverOptions,
    opts: &TimeOptions,
) -> Result<NormProfile> {
    if !(t_min > 0.0 && t_max > t_min) {
        return Err(Error::Config(format!(
            "profile window must satisfy 0 < t_min < t_max (got {t_min}, {t_max})"
        )));
    }
    if m < 2 {
        return Err(Error::Config("profile needs at least 2 grid points".into()));
    }
    target.validate(sys.n_modes())?;
    let h = (t_max - t_min) / m as f64;
    let mut nodes: Vec<(f64, Option<f64>, bool, u32)> = (1..=m)
        .into_par_iter()
        .map(|i| {
            let t = if i == m { t_max } else { t_min + h * i as f64 };
            (t, solve_n(sys, y0, target, t, solver), false, 0)
        })
        .collect();

    let jumps = |nodes: &[(f64, Option<f64>, bool, u32)]| -> Vec<f64> {
        nodes
            .windows(2)
            .filter_map(|w| Some((w[1].1? - w[0].1?).abs()))
            .collect()
    };
    let threshold = opts.refine_jump.unwrap_or_else(|| 0.5 * median(jumps(&nodes)));
    let mut refined_intervals = Vec::new();

    if threshold > 0.0 {
        loop {
            let room = opts.max_nodes.saturating_sub(nodes.len());
            let mut cand: Vec<(usize, f64)> = nodes
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    let depth = w[0].3.max(w[1].3);
                    let jump = (w[1].1? - w[0].1?).abs();
                    (jump > threshold && depth < opts.max_depth).then_some((i, jump))
                })
                .collect();
            if cand.is_empty() || room == 0 {
                break;
            }
            cand.sort_by(|a, b| b.1.total_cmp(&a.1));
            cand.truncate(room);
            cand.sort_by_key(|c| c.0);
            let inserts: Vec<(usize, (f64, Option<f64>, bool, u32))> = cand
                .par_iter()
                .map(|&(i, _)| {
                    let (a, b) = (nodes[i].0, nodes[i + 1].0);
                    let t = 0.5 * (a + b);
                    let depth = nodes[i].3.max(nodes[i + 1].3) + 1;
                    (i, (t, solve_n(sys, y0, target, t, solver), true, depth))
                })
                .collect();
            for (i, _) in &inserts {
                refined_intervals.push((nodes[*i].0, nodes[*i + 1].0));
            }
            for (i, node) in inserts.into_iter().rev() {
                nodes.insert(i + 1, node);
            }
        }
    }

    let invalid = nodes.iter().filter(|n| n.1.is_none()).count();
    if invalid * 5 >= nodes.len() {
        return Err(Error::Profile(format!(
            "{invalid} of {} profile nodes failed to solve",
            nodes.len()
        )));
    }
    Ok(NormProfile {
        t_min,
        t_max,
        grid: nodes.iter().map(|n| n.0).collect(),
        values: nodes.iter().map(|n| n.1.unwrap_or(f64::NAN)).collect(),
        refined: nodes.iter().map(|n| n.2).collect(),
        valid: nodes.iter().map(|n| n.1.is_some()).collect(),
        refined_intervals,
        meta: solver.clone(),
    })
}

/// Largest difference quotient `|ΔN / Δt|` between valid neighbours inside `[a, b]`.
pub fn lipschitz_quotient(profile: &NormProfile, a: f64, b: f64) -> f64 {
    let pts: Vec<(f64, f64)> = profile.samples().filter(|s| s.0 >= a && s.0 <= b).collect();
    pts.windows(2)
        .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinTimeResult {
    pub level: f64,
    /// `None` when `N > M` on the whole window (`T(M) = +∞` over the window).
    pub time: Option<f64>,
    pub window: (f64, f64),
    pub crossing_bracket: Option<(f64, f64)>,
    /// `N` at the returned time.
    pub n_at_time: Option<f64>,
    /// `|N(T(M)) - M|`.
    pub residual: Option<f64>,
    /// `N` at the left end of the bracket exceeds `M`.
    pub before_exceeds: bool,
    /// The first profile node already satisfied `N <= M` and so did `t_min`.
    pub at_window_start: bool,
    pub widened: bool,
}

impl MinTimeResult {
    pub fn is_unbounded(&self) -> bool {
        self.time.is_none()
    }
}

fn level_tol(m: f64, solver: &SolverOptions, opts: &TimeOptions) -> f64 {
    opts.tol_n.max(solver.tol_bisect * m)
}

/// Minimal time at level `M` over the profile window.
pub fn minimal_time(
    sys: &SpectralSystem,
    y0: &State,
    target: &TargetSet,
    level: f64,
    profile: &NormProfile,
    solver: &SolverOptions,
    opts: &TimeOptions,
) -> Result<MinTimeResult> {
    if !(level >= 0.0) {
        return Err(Error::Domain(format!("level must be >= 0, got {level}")));
    }
    let tol = level_tol(level, solver, opts);
    let below = |n: f64| n <= level + tol;
    let n_at = |t: f64| -> Result<f64> { Ok(minimal_norm(sys, y0, target, t, solver)?.value) };
    let window = (profile.t_min, profile.t_max);

    let pts: Vec<(f64, f64)> = profile.samples().collect();
    let first_grid = pts.iter().position(|p| below(p.1));
    let unbounded = MinTimeResult {
        level,
        time: None,
        window,
        crossing_bracket: None,
        n_at_time: None,
        residual: None,
        before_exceeds: true,
        at_window_start: false,
        widened: false,
    };
    if pts.is_empty() {
        return Ok(unbounded);
    }
    let left_of = |i: usize| if i == 0 { profile.t_min } else { pts[i - 1].0 };

    // a dip narrower than the grid can hide between samples; probe every
    // sampled local minimum ahead of the first grid crossing
    let limit = first_grid.unwrap_or(pts.len());
    let mut dip = None;
    for i in 0..limit {
        let lower_than_left = i == 0 || pts[i].1 <= pts[i - 1].1;
        let lower_than_right = i + 1 == pts.len() || pts[i].1 <= pts[i + 1].1;
        if !(lower_than_left && lower_than_right) {
            continue;
        }
        let hi = pts.get(i + 1).map_or(profile.t_max, |p| p.0);
        if let Some(found) = probe_dip(&n_at, left_of(i), hi, &below, opts.time_tol)? {
            dip = Some((i, found));
            break;
        }
    }

    let mut widened = false;
    let (mut a, mut b, mut na, mut nb);
    if let Some((i, (t, n))) = dip {
        a = left_of(i);
        na = if i == 0 { n_at(a)? } else { pts[i - 1].1 };
        b = t;
        nb = n;
        if below(na) {
            return Ok(MinTimeResult {
                level,
                time: Some(a),
                window,
                crossing_bracket: None,
                n_at_time: Some(na),
                residual: Some((na - level).abs()),
                before_exceeds: false,
                at_window_start: true,
                widened,
            });
        }
    } else {
        let Some(first) = first_grid else {
            return Ok(unbounded);
        };
        a = left_of(first);
        b = pts[first].0;
        na = if first == 0 { n_at(a)? } else { pts[first - 1].1 };

        if first == 0 && below(na) {
            return Ok(MinTimeResult {
                level,
                time: Some(a),
                window,
                crossing_bracket: None,
                n_at_time: Some(na),
                residual: Some((na - level).abs()),
                before_exceeds: false,
                at_window_start: true,
                widened,
            });
        }

        // fresh endpoint evaluations must agree with the profile
        let fresh_a = n_at(a)?;
        let fresh_b = n_at(b)?;
        if below(fresh_a) || !below(fresh_b) {
            widened = true;
            a = if first >= 2 { pts[first - 2].0 } else { profile.t_min };
            b = pts.get(first + 1).map_or(b, |p| p.0);
            na = n_at(a)?;
            nb = n_at(b)?;
            if below(na) || !below(nb) {
                return Err(Error::NoisyCrossing(format!(
                    "level {level}: N({a}) = {na}, N({b}) = {nb} after widening"
                )));
            }
        } else {
            na = fresh_a;
            nb = fresh_b;
        }
    }

    let level_goal = opts.level_rel_tol * level.max(1.0);
    for _ in 0..200 {
        let width = b - a;
        if width <= opts.time_tol && ((nb - level).abs() <= level_goal || width < 1e-12 * b) {
            break;
        }
        let mid = 0.5 * (a + b);
        let nm = n_at(mid)?;
        if below(nm) {
            b = mid;
            nb = nm;
        } else {
            a = mid;
            na = nm;
        }
    }
    Ok(MinTimeResult {
        level,
        time: Some(b),
        window,
        crossing_bracket: Some((a, b)),
        n_at_time: Some(nb),
        residual: Some((nb - level).abs()),
        before_exceeds: na > level + tol,
        at_window_start: false,
        widened,
    })
}

/// Golden-section search for a point of `[lo, hi]` where `below(N)` holds.
fn probe_dip(
    n_at: &dyn Fn(f64) -> Result<f64>,
    mut lo: f64,
    mut hi: f64,
    below: &dyn Fn(f64) -> bool,
    time_tol: f64,
) -> Result<Option<(f64, f64)>> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut fc, mut fd) = (n_at(c)?, n_at(d)?);
    loop {
        if below(fc) {
            return Ok(Some((c, fc)));
        }
        if below(fd) {
            return Ok(Some((d, fd)));
        }
        if hi - lo <= 0.01 * time_tol {
            return Ok(None);
        }
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = n_at(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = n_at(d)?;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowupReport {
    pub passed: bool,
    pub times: Vec<f64>,
    /// `None` where the solve failed (unreachable within the control budget).
    pub values: Vec<Option<f64>>,
    pub threshold: f64,
    pub unreachable_flagged: bool,
}

/// Evaluates `N(t₀ 2^{-j})`, `j = 0..=levels`, and checks that the values
/// increase towards `t = 0` and end above `factor · N(t₀)`.
pub fn blowup_check(
    sys: &SpectralSystem,
    y0: &State,
    target: &TargetSet,
    solver: &SolverOptions,
    opts: &TimeOptions,
) -> Result<BlowupReport> {
    if target.contains(y0, DEFAULT_MEMBERSHIP_TOL) {
        return Err(Error::Precondition("initial state lies in the target".into()));
    }
    if !(opts.blowup_t0 > 0.0) {
        return Err(Error::Config("blowup_t0 must be positive".into()));
    }
    let times: Vec<f64> = (0..=opts.blowup_levels)
        .map(|j| opts.blowup_t0 * 0.5f64.powi(j as i32))
        .collect();
    let values: Vec<Option<f64>> = times
        .par_iter()
        .map(|&t| solve_n(sys, y0, target, t, solver))
        .collect();
    let as_num = |v: Option<f64>| v.unwrap_or(f64::INFINITY);
    let n0 = values[0].ok_or_else(|| Error::Profile(format!("N({}) failed to solve", times[0])))?;
    let threshold = opts.blowup_factor * n0.max(opts.tol_n);
    let unreachable_flagged = values.iter().any(Option::is_none);

    // eventually increasing: the last three steps towards zero increase strictly
    let nums: Vec<f64> = values.iter().map(|v| as_num(*v)).collect();
    let tail = nums.len().saturating_sub(4);
    let increasing = nums[tail..]
        .windows(2)
        .all(|w| w[1] > w[0] || (w[0].is_infinite() && w[1].is_infinite()));
    let passed = increasing && *nums.last().unwrap() >= threshold;
    Ok(BlowupReport {
        passed,
        times,
        values,
        threshold,
        unreachable_flagged,
    })
}
