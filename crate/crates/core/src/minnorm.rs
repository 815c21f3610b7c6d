//! Minimal norm controls at a fixed horizon.
//!
//! `N(T) = inf { ‖v‖_{L∞(0,T;L²)} : ŷ(T; y0, v) ∈ Q }` is computed by bisection on
//! the control bound `M`. Each step solves the distance program
//!
//! ```text
//! min ½ dist²(c + A v, Q)   subject to   ‖v_i‖ <= M for every slice i
//! ```
//!
//! with accelerated projected gradient, where `c = e^{ΔT} y0` and `A` is the
//! control-to-terminal-state map. The residual direction `η` of that program
//! doubles as a separating functional: for every `η` with
//! `g(η) = inf_Q ⟨q - c, η⟩ > 0`, weak duality gives `N >= g(η) / Φ(η)` with
//! `Φ(η) = Σ_i ‖A_iᵀ η‖`, and the maximum-principle control
//! `v_i = M A_iᵀη / ‖A_iᵀη‖` is the support point of the reachable set in
//! direction `η`. Both facts tighten the bisection bracket.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{ControlOperator, PiecewiseControl, SpectralSystem, State};
use crate::targets::TargetSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub n_slices: usize,
    /// Absolute state-space tolerance for landing in the target.
    pub tol_terminal: f64,
    /// Relative bracket width of the bisection on `M`.
    pub tol_bisect: f64,
    /// Relative back-off below `N` where the separating direction is sampled.
    pub delta_eta: f64,
    /// Terminal tolerance of the reconstructed bang-bang control.
    pub bb_terminal_tol: f64,
    pub max_iters: usize,
    /// Relative duality gap at which an infeasible distance is accepted.
    pub gap_rel: f64,
    pub m_cap: f64,
    /// Allowed relative change of `N` when the truncation order is doubled.
    pub truncation_tol: f64,
    /// Attach the maximum-principle control to every solution.
    pub with_bangbang: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            n_slices: 64,
            tol_terminal: 1e-6,
            tol_bisect: 1e-4,
            delta_eta: 0.02,
            bb_terminal_tol: 1e-5,
            max_iters: 20_000,
            gap_rel: 1e-3,
            m_cap: 1e9,
            truncation_tol: 1e-2,
            with_bangbang: false,
        }
    }
}

impl SolverOptions {
    /// Halves every tolerance.
    pub fn strict(mut self) -> Self {
        self.tol_terminal *= 0.5;
        self.tol_bisect *= 0.5;
        self.bb_terminal_tol *= 0.5;
        self.gap_rel *= 0.5;
        self.truncation_tol *= 0.5;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_slices == 0 {
            return Err(Error::Config("n_slices must be positive".into()));
        }
        if !(self.tol_terminal > 0.0 && self.tol_bisect > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if !(self.delta_eta > 0.0 && self.delta_eta < 1.0) {
            return Err(Error::Config("delta_eta must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// The finite-dimensional problem data for one `(y0, Q, T)` triple.
pub(crate) struct NormProblem<'a> {
    op: ControlOperator,
    free: Vec<f64>,
    target: &'a TargetSet,
    lipschitz: f64,
}

struct DistanceOutcome {
    distance: f64,
    control: Vec<f64>,
    eta: Vec<f64>,
    dual_bound: f64,
    feasible: bool,
    iterations: usize,
    converged: bool,
}

impl<'a> NormProblem<'a> {
    pub(crate) fn new(
        sys: &SpectralSystem,
        y0: &State,
        target: &'a TargetSet,
        horizon: f64,
        n_slices: usize,
    ) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        target.validate(sys.n_modes())?;
        let free = sys.free_flow(y0, horizon)?.as_slice().to_vec();
        let op = ControlOperator::new(sys, horizon, n_slices);
        let lipschitz = op.lipschitz();
        Ok(Self {
            op,
            free,
            target,
            lipschitz,
        })
    }

    fn n_modes(&self) -> usize {
        self.op.n_modes()
    }

    fn n_vars(&self) -> usize {
        self.op.n_modes() * self.op.n_slices()
    }

    fn terminal(&self, v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.free);
        self.op.apply_add(v, out);
    }

    /// Distance of `z` to the target; leaves the projection in `proj`.
    fn distance(&self, z: &[f64], proj: &mut [f64]) -> f64 {
        self.target.project_into(z, proj);
        z.iter()
            .zip(proj.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    fn project_slices(&self, v: &mut [f64], m: f64) {
        for vi in v.chunks_mut(self.n_modes()) {
            let n = norm(vi);
            if n > m {
                let s = if n > 0.0 { m / n } else { 0.0 };
                vi.iter_mut().for_each(|x| *x *= s);
            }
        }
    }

    /// Maximum-principle control of bound `m` in direction `eta`; returns `Φ(η)`.
    fn bangbang_into(&self, eta: &[f64], m: f64, v: &mut [f64]) -> f64 {
        self.op.adjoint(eta, v);
        let mut phi = 0.0;
        for vi in v.chunks_mut(self.n_modes()) {
            let n = norm(vi);
            phi += n;
            let s = if n > 0.0 { m / n } else { 0.0 };
            vi.iter_mut().for_each(|x| *x *= s);
        }
        phi
    }

    fn phi(&self, eta: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.n_vars()];
        self.op.adjoint(eta, &mut buf);
        buf.chunks(self.n_modes()).map(norm).sum()
    }

    /// `g(η) = inf_{q ∈ Q} ⟨q - c, η⟩`.
    fn support_gap(&self, eta: &[f64]) -> f64 {
        let neg: Vec<f64> = eta.iter().map(|x| -x).collect();
        -self.target.support(&neg) - dot(&self.free, eta)
    }

    /// Weak-duality lower bound `g(η) / Φ(η)` on the minimal norm.
    pub(crate) fn dual_ratio(&self, eta: &[f64]) -> f64 {
        let g = self.support_gap(eta);
        if g <= 0.0 {
            return 0.0;
        }
        let phi = self.phi(eta);
        if phi > 0.0 {
            g / phi
        } else {
            f64::INFINITY
        }
    }

    /// Terminal distance of the maximum-principle control `(eta, m)`.
    fn bangbang_distance(&self, eta: &[f64], m: f64, v: &mut [f64]) -> f64 {
        self.bangbang_into(eta, m, v);
        let mut z = vec![0.0; self.n_modes()];
        let mut p = vec![0.0; self.n_modes()];
        self.terminal(v, &mut z);
        self.distance(&z, &mut p)
    }

    /// Accelerated projected gradient with gradient-based restart on
    /// `½ dist²(c + A v, Q)` over slice balls of radius `m`.
    fn solve_distance(
        &self,
        m: f64,
        warm: Option<&[f64]>,
        opts: &SolverOptions,
    ) -> DistanceOutcome {
        const DUAL_EVERY: usize = 5;
        let nm = self.n_modes();
        let nv = self.n_vars();
        let step = if self.lipschitz > 0.0 {
            1.0 / self.lipschitz
        } else {
            1.0
        };

        let mut x = warm.map_or_else(|| vec![0.0; nv], <[f64]>::to_vec);
        self.project_slices(&mut x, m);
        let mut zx = vec![0.0; nm];
        self.terminal(&x, &mut zx);
        let mut x_prev = x.clone();
        let mut zx_prev = zx.clone();

        let mut proj = vec![0.0; nm];
        let mut best_d = self.distance(&zx, &mut proj);
        let mut best_x = x.clone();
        let mut best_eta = vec![0.0; nm];
        let mut best_lb = f64::NEG_INFINITY;
        let mut bb = vec![0.0; nv];

        let mut y = vec![0.0; nv];
        let mut zy = vec![0.0; nm];
        let mut grad = vec![0.0; nv];
        let mut z_new = vec![0.0; nm];
        let mut r = vec![0.0; nm];
        let mut t = 1.0f64;

        let done = |d: f64, x: Vec<f64>, eta: Vec<f64>, lb: f64, it: usize, conv: bool| {
            DistanceOutcome {
                distance: d,
                control: x,
                eta,
                dual_bound: lb.max(0.0),
                feasible: d <= opts.tol_terminal,
                iterations: it,
                converged: conv,
            }
        };

        if best_d <= opts.tol_terminal {
            return done(best_d, best_x, best_eta, 0.0, 0, true);
        }

        for it in 1..=opts.max_iters {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            for i in 0..nv {
                y[i] = x[i] + beta * (x[i] - x_prev[i]);
            }
            for j in 0..nm {
                zy[j] = (1.0 + beta) * zx[j] - beta * zx_prev[j];
            }
            self.target.project_into(&zy, &mut proj);
            for j in 0..nm {
                r[j] = zy[j] - proj[j];
            }
            self.op.adjoint(&r, &mut grad);
            let mut x_new: Vec<f64> = y.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
            self.project_slices(&mut x_new, m);
            self.terminal(&x_new, &mut z_new);
            let d_new = self.distance(&z_new, &mut proj);

            if d_new < best_d {
                best_d = d_new;
                best_x.copy_from_slice(&x_new);
            }
            if d_new <= opts.tol_terminal {
                return done(d_new, x_new, vec![0.0; nm], 0.0, it, true);
            }

            if it % DUAL_EVERY == 0 {
                let eta: Vec<f64> = proj.iter().zip(&z_new).map(|(p, z)| (p - z) / d_new).collect();
                let phi = self.bangbang_into(&eta, m, &mut bb);
                let lb = self.support_gap(&eta) - m * phi;
                if lb > best_lb {
                    best_lb = lb;
                    best_eta.copy_from_slice(&eta);
                }
                // the support point in direction η may already land in Q
                let mut zb = vec![0.0; nm];
                let mut pb = vec![0.0; nm];
                self.terminal(&bb, &mut zb);
                let db = self.distance(&zb, &mut pb);
                if db <= opts.tol_terminal {
                    return done(db, bb, vec![0.0; nm], 0.0, it, true);
                }
                if best_lb > 0.0 && best_d - best_lb <= opts.gap_rel * best_d {
                    return done(best_d, best_x, best_eta, best_lb, it, true);
                }
            }

            // gradient restart
            let restart: f64 = (0..nv).map(|i| (y[i] - x_new[i]) * (x_new[i] - x[i])).sum();
            if restart > 0.0 {
                t = 1.0;
                x_prev.copy_from_slice(&x_new);
                zx_prev.copy_from_slice(&z_new);
            } else {
                t = t_next;
                x_prev = std::mem::replace(&mut x, x_new.clone());
                zx_prev.copy_from_slice(&zx);
            }
            x = x_new;
            zx.copy_from_slice(&z_new);
        }

        if best_lb == f64::NEG_INFINITY {
            // no dual sample taken yet; use the residual of the best iterate
            let mut zb = vec![0.0; nm];
            self.terminal(&best_x, &mut zb);
            let d = self.distance(&zb, &mut proj);
            best_eta = proj.iter().zip(&zb).map(|(p, z)| (p - z) / d).collect();
            best_lb = self.support_gap(&best_eta) - m * self.phi(&best_eta);
        }
        done(best_d, best_x, best_eta, best_lb, opts.max_iters, false)
    }
}

/// Result of the distance program at a fixed bound `M`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeasibilityResult {
    /// Terminal distance to `Q` reached by `control` (an upper bound on the optimum).
    pub distance: f64,
    pub control: PiecewiseControl,
    /// Unit separating direction pointing from the reachable set towards `Q`
    /// (the residual direction `P_Q z - z`); zero when the distance vanished.
    pub gap_direction: State,
    /// Certified lower bound on the optimal distance.
    pub dual_bound: f64,
    pub feasible: bool,
    pub iterations: usize,
    pub converged: bool,
}

pub fn feasibility_distance(
    sys: &SpectralSystem,
    y0: &State,
    target: &TargetSet,
    horizon: f64,
    bound: f64,
    opts: &SolverOptions,
) -> Result<FeasibilityResult> {
    opts.validate()?;
    if !(bound >= 0.0) {
        return Err(Error::Domain(format!("control bound must be >= 0, got {bound}")));
    }
    let prob = NormProblem::new(sys, y0, target, horizon, opts.n_slices)?;
    let out = prob.solve_distance(bound, None, opts);
    Ok(FeasibilityResult {
        distance: out.distance,
        control: PiecewiseControl::from_flat(horizon, sys.n_modes(), &out.control),
        gap_direction: State::from_vec(out.eta),
        dual_bound: out.dual_bound,
        feasible: out.feasible,
        iterations: out.iterations,
        converged: out.converged,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BisectionStep {
    pub bound: f64,
    pub distance: f64,
    pub dual_bound: f64,
    pub feasible: bool,
    pub iterations: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormDiagnostics {
    pub bisection_iterations: usize,
    pub final_distance: f64,
    /// Best weak-duality lower bound on `N`.
    pub lower_bound: f64,
    pub converged: bool,
    /// Distances along the bisection history are consistent with a
    /// nonincreasing function of `M`.
    pub monotone: bool,
    pub trace: Vec<BisectionStep>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormSolution {
    pub horizon: f64,
    pub value: f64,
    /// Feasible witness with `sup_norm <= value`.
    pub control: PiecewiseControl,
    /// Normalized separating direction, pointing from the reachable set into `Q`.
    pub eta: Option<State>,
    pub bangbang: Option<BangBang>,
    pub diagnostics: NormDiagnostics,
}

impl NormSolution {
    /// JSON summary: value, per-slice norms, diagnostics.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "horizon": self.horizon,
            "value": self.value,
            "slice_norms": self.control.slice_norms(),
            "bangbang_slice_norms": self.bangbang.as_ref().map(|b| b.control.slice_norms()),
            "bangbang_terminal_distance": self.bangbang.as_ref().map(|b| b.terminal_distance),
            "diagnostics": {
                "bisection_iterations": self.diagnostics.bisection_iterations,
                "final_distance": self.diagnostics.final_distance,
                "lower_bound": self.diagnostics.lower_bound,
                "converged": self.diagnostics.converged,
                "monotone": self.diagnostics.monotone,
            }
        })
    }
}

fn monotone_trace(trace: &[BisectionStep], slack: f64) -> bool {
    let mut steps: Vec<&BisectionStep> = trace.iter().collect();
    steps.sort_by(|a, b| a.bound.total_cmp(&b.bound));
    // a certified distance at a larger bound may never exceed an achieved one at a smaller bound
    steps.iter().enumerate().all(|(i, lo)| {
        steps[i + 1..]
            .iter()
            .all(|hi| hi.dual_bound <= lo.distance + slack)
    })
}

/// Minimal norm `N(T, y0, Q)` with a feasible witness control.
pub fn minimal_norm(
    sys: &SpectralSystem,
    y0: &State,
    target: &TargetSet,
    horizon: f64,
    opts: &SolverOptions,
) -> Result<NormSolution> {
    opts.validate()?;
    let prob = NormProblem::new(sys, y0, target, horizon, opts.n_slices)?;
    let nm = sys.n_modes();
    let nv = prob.n_vars();

    let mut proj = vec![0.0; nm];
    let d_free = prob.distance(&prob.free, &mut proj);
    if d_free <= opts.tol_terminal {
        return Ok(NormSolution {
            horizon,
            value: 0.0,
            control: PiecewiseControl::zeros(horizon, opts.n_slices, nm),
            eta: None,
            bangbang: None,
            diagnostics: NormDiagnostics {
                final_distance: d_free,
                converged: true,
                monotone: true,
                ..Default::default()
            },
        });
    }

    let mut best_eta: Vec<f64> = proj
        .iter()
        .zip(&prob.free)
        .map(|(p, c)| (p - c) / d_free)
        .collect();
    let mut lo = prob.dual_ratio(&best_eta);
    let mut trace = Vec::new();
    let mut converged = true;
    let mut warm = vec![0.0; nv];

    // try the maximum-principle control of the best direction at a bound just above `lo`
    let primal_cut = |eta: &[f64], m: f64, v: &mut Vec<f64>| -> bool {
        prob.bangbang_distance(eta, m, v) <= opts.tol_terminal
    };

    let absorb = |out: &DistanceOutcome,
                      m: f64,
                      lo: &mut f64,
                      best_eta: &mut Vec<f64>,
                      trace: &mut Vec<BisectionStep>,
                      converged: &mut bool| {
        trace.push(BisectionStep {
            bound: m,
            distance: out.distance,
            dual_bound: out.dual_bound,
            feasible: out.feasible,
            iterations: out.iterations,
        });
        *converged &= out.converged;
        if !out.feasible {
            *lo = lo.max(m);
            if norm(&out.eta) > 0.0 {
                let ratio = prob.dual_ratio(&out.eta);
                if ratio > *lo {
                    *lo = ratio;
                    best_eta.copy_from_slice(&out.eta);
                }
            }
        }
    };

    // upper bracket by doubling
    let mut m = if lo > 0.0 { 1.1 * lo } else { 1.0 };
    let (mut hi, mut witness) = loop {
        if m > opts.m_cap {
            return Err(Error::Unreachable { m_cap: opts.m_cap });
        }
        let mut cand = vec![0.0; nv];
        if primal_cut(&best_eta, m, &mut cand) {
            trace.push(BisectionStep {
                bound: m,
                distance: 0.0,
                dual_bound: 0.0,
                feasible: true,
                iterations: 0,
            });
            break (m, cand);
        }
        prob.bangbang_into(&best_eta, m, &mut warm);
        let out = prob.solve_distance(m, Some(&warm), opts);
        absorb(&out, m, &mut lo, &mut best_eta, &mut trace, &mut converged);
        if out.feasible {
            break (m, out.control);
        }
        m = (2.0 * m).max(1.1 * lo);
    };

    let mut iterations = 0;
    while hi - lo > opts.tol_bisect * hi.max(1.0) && iterations < 200 {
        iterations += 1;
        let cut = lo * (1.0 + 0.25 * opts.tol_bisect);
        let mut cand = vec![0.0; nv];
        if cut < hi && primal_cut(&best_eta, cut, &mut cand) {
            hi = cut;
            witness = cand;
            trace.push(BisectionStep {
                bound: cut,
                distance: 0.0,
                dual_bound: 0.0,
                feasible: true,
                iterations: 0,
            });
            continue;
        }
        let mid = 0.5 * (lo + hi);
        prob.bangbang_into(&best_eta, mid, &mut warm);
        let out = prob.solve_distance(mid, Some(&warm), opts);
        absorb(&out, mid, &mut lo, &mut best_eta, &mut trace, &mut converged);
        if out.feasible {
            hi = mid;
            witness = out.control;
        }
    }
    let lo = lo.min(hi);

    let mut z = vec![0.0; nm];
    prob.terminal(&witness, &mut z);
    let final_distance = prob.distance(&z, &mut proj);
    let slack = opts.tol_terminal + opts.gap_rel * hi;
    let monotone = monotone_trace(&trace, slack);

    let mut sol = NormSolution {
        horizon,
        value: hi,
        control: PiecewiseControl::from_flat(horizon, nm, &witness),
        eta: Some(State::from_vec(best_eta)),
        bangbang: None,
        diagnostics: NormDiagnostics {
            bisection_iterations: iterations,
            final_distance,
            lower_bound: lo,
            converged: converged && hi - lo <= opts.tol_bisect * hi.max(1.0),
            monotone,
            trace,
        },
    };
    if opts.with_bangbang {
        sol.bangbang = Some(bangbang_extract(sys, y0, target, horizon, &sol, opts)?);
    }
    Ok(sol)
}

/// Maximum-principle reconstruction of a minimal norm control.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BangBang {
    pub control: PiecewiseControl,
    pub eta: State,
    /// Terminal distance of the control built from the unpolished direction.
    pub seed_distance: f64,
    pub terminal_distance: f64,
    pub polish_iterations: usize,
    pub delta_eta: f64,
}

impl NormProblem<'_> {
    /// Terminal residual `z - P_Q z` of the maximum-principle control `(u/‖u‖, m)`.
    fn bangbang_residual(&self, u: &[f64], m: f64, v: &mut [f64]) -> Vec<f64> {
        let nm = self.n_modes();
        let n = norm(u);
        let eta: Vec<f64> = u.iter().map(|x| x / n).collect();
        self.bangbang_into(&eta, m, v);
        let mut z = vec![0.0; nm];
        let mut p = vec![0.0; nm];
        self.terminal(v, &mut z);
        self.target.project_into(&z, &mut p);
        z.iter().zip(&p).map(|(a, b)| a - b).collect()
    }

    /// Levenberg-Marquardt on the direction so that the maximum-principle
    /// control of bound `m` lands in the target.
    fn polish_direction(&self, seed: &[f64], m: f64, tol: f64, max_iters: usize) -> (Vec<f64>, f64, usize) {
        let nm = self.n_modes();
        let mut v = vec![0.0; self.n_vars()];
        let mut u: Vec<f64> = seed.to_vec();
        let mut f = self.bangbang_residual(&u, m, &mut v);
        let mut fn2 = dot(&f, &f);
        let mut mu = 1e-3;
        let mut it = 0;
        while it < max_iters && fn2.sqrt() > tol {
            it += 1;
            let h = 1e-7;
            let mut jac = DMatrix::zeros(nm, nm);
            for c in 0..nm {
                let mut up = u.clone();
                up[c] += h;
                let fp = self.bangbang_residual(&up, m, &mut v);
                for r in 0..nm {
                    jac[(r, c)] = (fp[r] - f[r]) / h;
                }
            }
            let jt = jac.transpose();
            let jtj = &jt * &jac;
            let jtf = &jt * DVector::from_column_slice(&f);
            let scale = jtj.diagonal().max().max(1e-300);
            let mut improved = false;
            for _ in 0..30 {
                let lhs = &jtj + DMatrix::identity(nm, nm) * (mu * scale);
                let Some(step) = lhs.cholesky().map(|c| c.solve(&(-&jtf))) else {
                    mu *= 4.0;
                    continue;
                };
                let mut trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                let tn = norm(&trial);
                trial.iter_mut().for_each(|x| *x /= tn);
                let ft = self.bangbang_residual(&trial, m, &mut v);
                let ftn2 = dot(&ft, &ft);
                if ftn2 < fn2 {
                    u = trial;
                    f = ft;
                    fn2 = ftn2;
                    mu = (mu / 3.0).max(1e-12);
                    improved = true;
                    break;
                }
                mu *= 4.0;
            }
            if !improved {
                break;
            }
        }
        let n = norm(&u);
        (u.iter().map(|x| x / n).collect(), fn2.sqrt(), it)
    }
}

/// Builds `v*(t) = N · A_tᵀη* / ‖A_tᵀη*‖` slice by slice.
///
/// `η*` is seeded by the residual direction of the distance program at the
/// strictly infeasible bound `N (1 - δ_η)` and then refined until the
/// maximum-principle control lands in `Q`. The slice weights are the exact
/// slice integrals of `e^{-Λ(T-t)}`.
pub fn bangbang_extract(
    sys: &SpectralSystem,
    y0: &State,
    target: &TargetSet,
    horizon: f64,
    sol: &NormSolution,
    opts: &SolverOptions,
) -> Result<BangBang> {
    if !(sol.value > 0.0) {
        return Err(Error::Precondition(
            "bang-bang extraction needs a positive minimal norm".into(),
        ));
    }
    let prob = NormProblem::new(sys, y0, target, horizon, opts.n_slices)?;
    let nm = sys.n_modes();
    let n_val = sol.value;
    let polish_tol = 0.1 * opts.tol_terminal;

    let mut delta = opts.delta_eta;
    let mut seed = None;
    for _ in 0..6 {
        let out = prob.solve_distance(n_val * (1.0 - delta), None, opts);
        if !out.feasible && norm(&out.eta) > 0.0 {
            seed = Some(out.eta);
            break;
        }
        delta *= 2.0;
        if delta >= 1.0 {
            break;
        }
    }
    let seed = seed.ok_or_else(|| {
        Error::BangBang("separating direction vanished at every back-off".into())
    })?;

    let mut v = vec![0.0; prob.n_vars()];
    let seed_distance = prob.bangbang_distance(&seed, n_val, &mut v);

    let mut candidates = vec![seed];
    if let Some(eta) = &sol.eta {
        candidates.push(eta.as_slice().to_vec());
    }
    let mut best: Option<(Vec<f64>, f64, usize)> = None;
    for cand in candidates {
        let (eta, res, it) = prob.polish_direction(&cand, n_val, polish_tol, 200);
        if best.as_ref().map_or(true, |b| res < b.1) {
            best = Some((eta, res, it));
        }
        if res <= polish_tol {
            break;
        }
    }
    let (eta, _, polish_iterations) = best.expect("at least one candidate");
    let terminal_distance = prob.bangbang_distance(&eta, n_val, &mut v);
    if !terminal_distance.is_finite() {
        return Err(Error::BangBang("non-finite terminal state".into()));
    }
    Ok(BangBang {
        control: PiecewiseControl::from_flat(horizon, nm, &v),
        eta: State::from_vec(eta),
        seed_distance,
        terminal_distance,
        polish_iterations,
        delta_eta: delta,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationAudit {
    pub n_modes: usize,
    pub value: f64,
    pub doubled_value: f64,
    pub relative_change: f64,
    pub passed: bool,
}

/// Re-solves at twice the truncation order and compares minimal norms.
pub fn truncation_check(
    sys: &SpectralSystem,
    y0: &State,
    target: &TargetSet,
    horizon: f64,
    opts: &SolverOptions,
) -> Result<TruncationAudit> {
    let base = minimal_norm(sys, y0, target, horizon, opts)?.value;
    let n2 = 2 * sys.n_modes();
    let sys2 = SpectralSystem::new(n2, sys.omega())?;
    let doubled = minimal_norm(&sys2, &y0.resized(n2), &target.resized(n2), horizon, opts)?.value;
    let relative_change = (doubled - base).abs() / base.abs().max(1e-12);
    let relative_change = if base == 0.0 && doubled == 0.0 {
        0.0
    } else {
        relative_change
    };
    Ok(TruncationAudit {
        n_modes: sys.n_modes(),
        value: base,
        doubled_value: doubled,
        relative_change,
        passed: relative_change <= opts.truncation_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Window;

    fn opts(n_slices: usize) -> SolverOptions {
        SolverOptions {
            n_slices,
            ..Default::default()
        }
    }

    #[test]
    fn null_control_when_free_flow_lands() {
        let sys = SpectralSystem::new(3, Window::new(0.3, 2.8).unwrap()).unwrap();
        let y0 = State::from_vec(vec![2.0, 1.0, 0.5]);
        let q = TargetSet::ball(State::zeros(3), 1.0);
        let sol = minimal_norm(&sys, &y0, &q, 2.0, &opts(8)).unwrap();
        assert_eq!(sol.value, 0.0);
        assert!(sol.control.sup_norm() == 0.0);
    }

    #[test]
    fn zero_bound_distance_is_free_distance() {
        let sys = SpectralSystem::new(3, Window::new(0.3, 2.8).unwrap()).unwrap();
        let y0 = State::from_vec(vec![3.0, -1.0, 0.5]);
        let q = TargetSet::ball(State::from_vec(vec![0.5, 0.5, 0.0]), 0.2);
        let res = feasibility_distance(&sys, &y0, &q, 0.7, 0.0, &opts(4)).unwrap();
        let free = sys.free_flow(&y0, 0.7).unwrap();
        assert!((res.distance - q.distance(&free)).abs() < 1e-14);
    }

    #[test]
    fn large_bound_is_feasible() {
        let sys = SpectralSystem::new(3, Window::new(0.3, 2.8).unwrap()).unwrap();
        let y0 = State::from_vec(vec![3.0, -1.0, 0.5]);
        let q = TargetSet::ball(State::from_vec(vec![0.5, 0.5, 0.0]), 0.2);
        let res = feasibility_distance(&sys, &y0, &q, 0.7, 200.0, &opts(4)).unwrap();
        assert!(res.feasible, "{}", res.distance);
    }

    #[test]
    fn scalar_point_target_sign() {
        let sys = SpectralSystem::new(1, Window::new(0.0, 2.0).unwrap()).unwrap();
        let y0 = State::from_vec(vec![1.0]);
        let q = TargetSet::Point {
            center: State::from_vec(vec![2.0]),
        };
        let o = SolverOptions {
            n_slices: 4,
            with_bangbang: true,
            ..Default::default()
        };
        let sol = minimal_norm(&sys, &y0, &q, 0.5, &o).unwrap();
        let bb = sol.bangbang.unwrap();
        assert!(bb.control.slices.iter().all(|s| s.0[0] > 0.0));
    }
}
