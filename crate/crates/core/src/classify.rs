//! Classification of pairs `(M, T)` into the equivalence regions of the minimal
//! time and minimal norm problems.
//!
//! * `EquivalentNull`: `M = 0` and `N(T) = 0`, so null controls solve both problems.
//! * `EquivalentNontrivial`: `T = T(M)` and the pair is not of the previous kind.
//! * `NotEquivalent`: everything else.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minnorm::{minimal_norm, SolverOptions};
use crate::mintime::{minimal_time, sample_profile, MinTimeResult, NormProfile, TimeOptions};
use crate::spectral::{SpectralSystem, State};
use crate::targets::{TargetSet, DEFAULT_MEMBERSHIP_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    EquivalentNontrivial,
    EquivalentNull,
    NotEquivalent,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::EquivalentNontrivial => "equivalent_nontrivial",
            Self::EquivalentNull => "equivalent_null",
            Self::NotEquivalent => "not_equivalent",
        }
    }
}

/// Which condition failed for a `NotEquivalent` pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clause {
    BeforeCrossing,
    AfterCrossing,
    UnboundedTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyOptions {
    pub tol_m: f64,
    /// Relative tolerance on `N` (scaled by `max(1, M)`) used by spot checks.
    pub n_rel_tol: f64,
    /// Half-width of the band around `T = T(M)`; `None` uses `time_tol`.
    pub band: Option<f64>,
    pub spotcheck_tol: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            tol_m: 1e-6,
            n_rel_tol: 0.02,
            band: None,
            spotcheck_tol: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionVerdict {
    pub level: f64,
    pub horizon: f64,
    pub region: Region,
    pub clause: Option<Clause>,
    pub t_of_m: Option<f64>,
    pub n_of_t: f64,
    /// `|T - T(M)|`, infinite when `T(M)` is unbounded over the window.
    pub nt_residual: f64,
    /// `|N(T) - M|`.
    pub nn_residual: f64,
    pub band: f64,
    pub tol_m: f64,
    pub tol_n: f64,
}

fn verdict(
    level: f64,
    horizon: f64,
    n_of_t: f64,
    tm: &MinTimeResult,
    band: f64,
    opts: &ClassifyOptions,
    time: &TimeOptions,
) -> RegionVerdict {
    let nn_residual = (n_of_t - level).abs();
    let nt_residual = tm.time.map_or(f64::INFINITY, |t| (horizon - t).abs());
    let (region, clause) = if level <= opts.tol_m && n_of_t <= time.tol_n {
        (Region::EquivalentNull, None)
    } else if nt_residual <= band {
        (Region::EquivalentNontrivial, None)
    } else {
        let clause = match tm.time {
            None => Clause::UnboundedTime,
            Some(t) if horizon < t => Clause::BeforeCrossing,
            Some(_) => Clause::AfterCrossing,
        };
        (Region::NotEquivalent, Some(clause))
    };
    RegionVerdict {
        level,
        horizon,
        region,
        clause,
        t_of_m: tm.time,
        n_of_t,
        nt_residual,
        nn_residual,
        band,
        tol_m: opts.tol_m,
        tol_n: time.tol_n,
    }
}

/// Classifies one pair using `N(T)` and `T(M)` (the latter through `profile`).
pub fn classify_pair(
    sys: &SpectralSystem,
    y0: &State,
    target: &TargetSet,
    level: f64,
    horizon: f64,
    profile: &NormProfile,
    solver: &SolverOptions,
    time: &TimeOptions,
    opts: &ClassifyOptions,
) -> Result<RegionVerdict> {
    if !(level >= 0.0 && horizon > 0.0) {
        return Err(Error::Domain(format!(
            "pair needs M >= 0 and T > 0 (got {level}, {horizon})"
        )));
    }
    let n_of_t = minimal_norm(sys, y0, target, horizon, solver)?.value;
    let tm = minimal_time(sys, y0, target, level, profile, solver, time)?;
    let band = opts.band.unwrap_or(time.time_tol);
    Ok(verdict(level, horizon, n_of_t, &tm, band, opts, time))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionCell {
    pub verdict: Option<RegionVerdict>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub nontrivial: usize,
    pub null: usize,
    pub not_equivalent: usize,
    pub failed: usize,
    /// Half-width of the band rendered as `T = T(M)`.
    pub band: f64,
    pub levels: usize,
    pub horizons: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionMap {
    pub levels: Vec<f64>,
    pub horizons: Vec<f64>,
    /// Row-major over `levels × horizons`.
    pub cells: Vec<RegionCell>,
    pub minimal_times: Vec<Option<MinTimeResult>>,
    pub summary: RegionSummary,
}

impl RegionMap {
    pub fn cell(&self, i: usize, j: usize) -> &RegionCell {
        &self.cells[i * self.horizons.len() + j]
    }

    pub fn region(&self, i: usize, j: usize) -> Option<Region> {
        self.cell(i, j).verdict.as_ref().map(|v| v.region)
    }

    /// Cells `(i, j)` classified as `region`.
    pub fn cells_in(&self, region: Region) -> Vec<(usize, usize)> {
        let nt = self.horizons.len();
        (0..self.cells.len())
            .filter(|k| self.region(k / nt, k % nt) == Some(region))
            .map(|k| (k / nt, k % nt))
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["M", "T", "region", "nT_residual", "nN_residual"])?;
        for (k, cell) in self.cells.iter().enumerate() {
            let (i, j) = (k / self.horizons.len(), k % self.horizons.len());
            let (region, nt, nn) = match &cell.verdict {
                Some(v) => (v.region.as_str(), v.nt_residual, v.nn_residual),
                None => ("failed", f64::NAN, f64::NAN),
            };
            out.write_record([
                format!("{:.12e}", self.levels[i]),
                format!("{:.12e}", self.horizons[j]),
                region.to_string(),
                format!("{nt:.6e}"),
                format!("{nn:.6e}"),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Classifies the product grid `levels × horizons`.
///
/// One profile on `(t_min, t_max]` is shared by every row. The `T = T(M)` band
/// half-width is `max(time_tol, pitch/2)` where `pitch` is the largest gap of
/// `horizons`, so that each row can register its crossing.
pub fn region_map(
    sys: &SpectralSystem,
    y0: &State,
    target: &TargetSet,
    levels: &[f64],
    horizons: &[f64],
    window: (f64, f64, usize),
    solver: &SolverOptions,
    time: &TimeOptions,
    opts: &ClassifyOptions,
) -> Result<RegionMap> {
    if levels.is_empty() || horizons.is_empty() {
        return Err(Error::Config("region map needs nonempty grids".into()));
    }
    if levels.iter().any(|m| !(*m >= 0.0)) || horizons.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Domain("levels must be >= 0 and horizons > 0".into()));
    }
    let profile = sample_profile(sys, y0, target, window.0, window.1, window.2, solver, time)?;
    let pitch = horizons
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);
    let band = opts.band.unwrap_or_else(|| time.time_tol.max(0.5 * pitch));

    let n_of_t: Vec<std::result::Result<f64, String>> = horizons
        .par_iter()
        .map(|&t| {
            minimal_norm(sys, y0, target, t, solver)
                .map(|s| s.value)
                .map_err(|e| e.to_string())
        })
        .collect();
    let minimal_times: Vec<std::result::Result<MinTimeResult, String>> = levels
        .par_iter()
        .map(|&m| minimal_time(sys, y0, target, m, &profile, solver, time).map_err(|e| e.to_string()))
        .collect();

    let mut cells = Vec::with_capacity(levels.len() * horizons.len());
    for (i, &m) in levels.iter().enumerate() {
        for (j, &t) in horizons.iter().enumerate() {
            let cell = match (&minimal_times[i], &n_of_t[j]) {
                (Ok(tm), Ok(n)) => RegionCell {
                    verdict: Some(verdict(m, t, *n, tm, band, opts, time)),
                    error: None,
                },
                (Err(e), _) | (_, Err(e)) => RegionCell {
                    verdict: None,
                    error: Some(e.clone()),
                },
            };
            cells.push(cell);
        }
    }
    let count = |r: Region| {
        cells
            .iter()
            .filter(|c| c.verdict.as_ref().map(|v| v.region) == Some(r))
            .count()
    };
    let summary = RegionSummary {
        nontrivial: count(Region::EquivalentNontrivial),
        null: count(Region::EquivalentNull),
        not_equivalent: count(Region::NotEquivalent),
        failed: cells.iter().filter(|c| c.verdict.is_none()).count(),
        band,
        levels: levels.len(),
        horizons: horizons.len(),
    };
    Ok(RegionMap {
        levels: levels.to_vec(),
        horizons: horizons.to_vec(),
        cells,
        minimal_times: minimal_times.into_iter().map(|r| r.ok()).collect(),
        summary,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpotcheckReport {
    pub level: f64,
    pub horizon: f64,
    /// `|‖v*‖ - M| / max(1, M)`.
    pub norm_residual: f64,
    /// Terminal distance of `v*` to the target, scaled by `max(1, M)`.
    pub terminal_residual: f64,
    pub null_control: bool,
    pub passed: bool,
}

/// Solves the minimal norm problem at an equivalent pair and checks that its
/// optimal control also has norm `M` and steers into the target at `T`.
pub fn equivalence_spotcheck(
    sys: &SpectralSystem,
    y0: &State,
    target: &TargetSet,
    verdict: &RegionVerdict,
    solver: &SolverOptions,
    opts: &ClassifyOptions,
) -> Result<SpotcheckReport> {
    let (m, t) = (verdict.level, verdict.horizon);
    match verdict.region {
        Region::NotEquivalent => Err(Error::Precondition(format!(
            "pair ({m}, {t}) is not an equivalent pair"
        ))),
        Region::EquivalentNull => {
            let z = sys.free_flow(y0, t)?;
            let d = target.distance(&z);
            Ok(SpotcheckReport {
                level: m,
                horizon: t,
                norm_residual: m,
                terminal_residual: d,
                null_control: true,
                passed: d <= solver.tol_terminal.max(DEFAULT_MEMBERSHIP_TOL),
            })
        }
        Region::EquivalentNontrivial => {
            let sol = minimal_norm(sys, y0, target, t, solver)?;
            let scale = m.max(1.0);
            let norm_residual = (sol.control.sup_norm() - m).abs() / scale;
            let z = sys.terminal_map(y0, &sol.control)?;
            let terminal_residual = target.distance(&z) / scale;
            Ok(SpotcheckReport {
                level: m,
                horizon: t,
                norm_residual,
                terminal_residual,
                null_control: false,
                passed: norm_residual <= opts.spotcheck_tol && terminal_residual <= opts.spotcheck_tol,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Window;

    fn setup() -> (SpectralSystem, State, TargetSet, SolverOptions) {
        let sys = SpectralSystem::new(4, Window::new(0.3, 2.8).unwrap()).unwrap();
        let y0 = State::from_vec(vec![2.0, 1.0, -0.5, 0.25]);
        let q = TargetSet::ball(State::zeros(4), 0.5);
        let s = SolverOptions {
            n_slices: 16,
            ..Default::default()
        };
        (sys, y0, q, s)
    }

    #[test]
    fn pair_on_the_crossing_is_nontrivial() {
        let (sys, y0, q, s) = setup();
        let time = TimeOptions::default();
        let p = sample_profile(&sys, &y0, &q, 0.2, 2.0, 12, &s, &time).unwrap();
        let tm = minimal_time(&sys, &y0, &q, 2.0, &p, &s, &time).unwrap();
        let t = tm.time.unwrap();
        let v = classify_pair(&sys, &y0, &q, 2.0, t, &p, &s, &time, &ClassifyOptions::default()).unwrap();
        assert_eq!(v.region, Region::EquivalentNontrivial);
        let early = classify_pair(&sys, &y0, &q, 2.0, 0.5 * t, &p, &s, &time, &ClassifyOptions::default()).unwrap();
        assert_eq!(early.region, Region::NotEquivalent);
        assert_eq!(early.clause, Some(Clause::BeforeCrossing));
        let rep = equivalence_spotcheck(&sys, &y0, &q, &v, &s, &ClassifyOptions::default()).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert!(equivalence_spotcheck(&sys, &y0, &q, &early, &s, &ClassifyOptions::default()).is_err());
    }

    #[test]
    fn null_level_past_free_entry_is_null_region() {
        let (sys, y0, q, s) = setup();
        let time = TimeOptions::default();
        let p = sample_profile(&sys, &y0, &q, 0.2, 2.0, 12, &s, &time).unwrap();
        let v = classify_pair(&sys, &y0, &q, 0.0, 1.9, &p, &s, &time, &ClassifyOptions::default()).unwrap();
        assert_eq!(v.region, Region::EquivalentNull);
        let rep = equivalence_spotcheck(&sys, &y0, &q, &v, &s, &ClassifyOptions::default()).unwrap();
        assert!(rep.null_control && rep.passed);
    }

    #[test]
    fn degenerate_grid() {
        let (sys, y0, q, s) = setup();
        let map = region_map(
            &sys,
            &y0,
            &q,
            &[1.0],
            &[1.0],
            (0.2, 2.0, 8),
            &s,
            &TimeOptions::default(),
            &ClassifyOptions::default(),
        )
        .unwrap();
        assert_eq!(map.cells.len(), 1);
        assert_eq!(map.summary.failed, 0);
    }
}
