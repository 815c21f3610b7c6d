//! Convex targets with exact Euclidean projection and support-function oracles.
//!
//! Besides balls (and points, kept only as an analytic test device) this module
//! carries the planar geometry used by the non-monotone construction: the
//! convex hull of two disks tangent to the curve `x₂ = x₁^α` from above,
//! embedded into the modes `(1, k)` and completed by a ball in the remaining
//! coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::State;

pub const DEFAULT_MEMBERSHIP_TOL: f64 = 1e-8;

type P2 = [f64; 2];

fn sub(a: P2, b: P2) -> P2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: P2, b: P2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn norm(a: P2) -> f64 {
    a[0].hypot(a[1])
}

fn dist(a: P2, b: P2) -> f64 {
    norm(sub(a, b))
}

/// Closed disk in the plane spanned by `e₁` and `e_k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disk2 {
    pub center: P2,
    pub radius: f64,
}

impl Disk2 {
    pub fn new(center: P2, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn project(&self, p: P2) -> P2 {
        let d = sub(p, self.center);
        let n = norm(d);
        if n <= self.radius {
            p
        } else {
            let s = self.radius / n;
            [self.center[0] + s * d[0], self.center[1] + s * d[1]]
        }
    }

    pub fn support(&self, u: P2) -> f64 {
        dot(self.center, u) + self.radius * norm(u)
    }

    /// Same center, radius scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            center: self.center,
            radius: self.radius * factor,
        }
    }
}

fn project_segment(p: P2, a: P2, b: P2) -> P2 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    if len2 == 0.0 {
        return a;
    }
    let s = (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0);
    [a[0] + s * ab[0], a[1] + s * ab[1]]
}

/// Convex hull of two disks, described by its boundary pieces.
#[derive(Clone, Debug, PartialEq)]
pub struct DiskHull {
    disks: [Disk2; 2],
    /// Outer common tangent segments; `None` when one disk contains the other.
    tangents: Option<[[P2; 2]; 2]>,
}

impl DiskHull {
    pub fn new(d1: Disk2, d2: Disk2) -> Self {
        let d = dist(d1.center, d2.center);
        if d <= (d1.radius - d2.radius).abs() {
            // nested: the hull is the larger disk
            let big = if d1.radius >= d2.radius { d1 } else { d2 };
            return Self {
                disks: [big, big],
                tangents: None,
            };
        }
        // Outer tangents share the support value of both disks: ⟨n, c₁⟩ + r₁ = ⟨n, c₂⟩ + r₂.
        let u = [(d2.center[0] - d1.center[0]) / d, (d2.center[1] - d1.center[1]) / d];
        let perp = [-u[1], u[0]];
        let cos = (d1.radius - d2.radius) / d;
        let sin = (1.0 - cos * cos).max(0.0).sqrt();
        let tangent = |sign: f64| {
            let n = [cos * u[0] + sign * sin * perp[0], cos * u[1] + sign * sin * perp[1]];
            let a = [d1.center[0] + d1.radius * n[0], d1.center[1] + d1.radius * n[1]];
            let b = [d2.center[0] + d2.radius * n[0], d2.center[1] + d2.radius * n[1]];
            [a, b]
        };
        Self {
            disks: [d1, d2],
            tangents: Some([tangent(1.0), tangent(-1.0)]),
        }
    }

    pub fn disks(&self) -> [Disk2; 2] {
        self.disks
    }

    pub fn tangent_segments(&self) -> Option<[[P2; 2]; 2]> {
        self.tangents
    }

    fn in_quad(&self, p: P2) -> bool {
        let Some([[a1, b1], [a2, b2]]) = self.tangents else {
            return false;
        };
        // quad a1 -> b1 -> b2 -> a2, either orientation
        let quad = [a1, b1, b2, a2];
        let mut pos = false;
        let mut neg = false;
        for i in 0..4 {
            let e = sub(quad[(i + 1) % 4], quad[i]);
            let w = sub(p, quad[i]);
            let cross = e[0] * w[1] - e[1] * w[0];
            pos |= cross > 0.0;
            neg |= cross < 0.0;
        }
        !(pos && neg)
    }

    pub fn contains_exact(&self, p: P2) -> bool {
        self.disks
            .iter()
            .any(|d| dist(p, d.center) <= d.radius)
            || self.in_quad(p)
    }

    /// Candidate method: inside test, else nearest of the per-disk and
    /// per-segment projections.
    pub fn project(&self, p: P2) -> P2 {
        if self.contains_exact(p) {
            return p;
        }
        let mut best = self.disks[0].project(p);
        let mut best_d = dist(p, best);
        let mut consider = |c: P2| {
            let dc = dist(p, c);
            if dc < best_d {
                best = c;
                best_d = dc;
            }
        };
        consider(self.disks[1].project(p));
        if let Some(segs) = self.tangents {
            for [a, b] in segs {
                consider(project_segment(p, a, b));
            }
        }
        best
    }

    pub fn distance(&self, p: P2) -> f64 {
        dist(p, self.project(p))
    }

    pub fn support(&self, u: P2) -> f64 {
        self.disks[0].support(u).max(self.disks[1].support(u))
    }
}

/// Convex target set `Q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSet {
    Ball {
        center: State,
        radius: f64,
    },
    /// Singleton target. Has empty interior, so it is only used as an
    /// analytic device in tests, never as a scenario target.
    Point {
        center: State,
    },
    /// `I_E(conv(D₁ ∪ D₂)) ⊕ B_{E⊥}(ρ)` with `E = span{e₁, e_k}`.
    HullOfDisksProduct {
        /// 1-based index `k` of the second plane mode.
        plane_mode: usize,
        disk1: Disk2,
        disk2: Disk2,
        complement_radius: f64,
    },
}

fn clip_ball(z: &[f64], center: &[f64], radius: f64, out: &mut [f64]) {
    let d: f64 = z
        .iter()
        .zip(center)
        .map(|(a, c)| (a - c) * (a - c))
        .sum::<f64>()
        .sqrt();
    if d <= radius {
        out.copy_from_slice(z);
    } else {
        let s = radius / d;
        for ((o, a), c) in out.iter_mut().zip(z).zip(center) {
            *o = c + s * (a - c);
        }
    }
}

impl TargetSet {
    pub fn ball(center: State, radius: f64) -> Self {
        Self::Ball { center, radius }
    }

    /// Whether the set belongs to the admissible target class (bounded,
    /// closed, convex, nonempty interior).
    pub fn has_interior(&self) -> bool {
        match self {
            Self::Ball { radius, .. } => *radius > 0.0,
            Self::Point { .. } => false,
            Self::HullOfDisksProduct {
                disk1,
                disk2,
                complement_radius,
                ..
            } => (disk1.radius > 0.0 || disk2.radius > 0.0) && *complement_radius > 0.0,
        }
    }

    /// Checks that the target lives in an `n_modes`-dimensional truncation.
    pub fn validate(&self, n_modes: usize) -> Result<()> {
        match self {
            Self::Ball { center, radius } => {
                if center.len() != n_modes {
                    return Err(Error::Shape {
                        expected: n_modes,
                        got: center.len(),
                    });
                }
                if !(*radius >= 0.0 && radius.is_finite()) {
                    return Err(Error::Config(format!("ball radius must be >= 0, got {radius}")));
                }
            }
            Self::Point { center } => {
                if center.len() != n_modes {
                    return Err(Error::Shape {
                        expected: n_modes,
                        got: center.len(),
                    });
                }
            }
            Self::HullOfDisksProduct {
                plane_mode,
                disk1,
                disk2,
                complement_radius,
            } => {
                if *plane_mode < 2 || *plane_mode > n_modes {
                    return Err(Error::Config(format!(
                        "plane mode k = {plane_mode} must satisfy 2 <= k <= {n_modes}"
                    )));
                }
                for d in [disk1, disk2] {
                    if !(d.radius >= 0.0 && d.radius.is_finite()) {
                        return Err(Error::Config(format!(
                            "disk radius must be >= 0, got {}",
                            d.radius
                        )));
                    }
                }
                if !(*complement_radius >= 0.0) {
                    return Err(Error::Config(format!(
                        "complement radius must be >= 0, got {complement_radius}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Same set viewed in an `n_modes`-dimensional truncation (centers are
    /// zero-padded, the complement ball gains or loses coordinates).
    pub fn resized(&self, n_modes: usize) -> Self {
        match self {
            Self::Ball { center, radius } => Self::Ball {
                center: center.resized(n_modes),
                radius: *radius,
            },
            Self::Point { center } => Self::Point {
                center: center.resized(n_modes),
            },
            other => other.clone(),
        }
    }

    pub fn hull(&self) -> Option<DiskHull> {
        match self {
            Self::HullOfDisksProduct { disk1, disk2, .. } => Some(DiskHull::new(*disk1, *disk2)),
            _ => None,
        }
    }

    /// Euclidean projection, slice form. `out` must have the length of `z`.
    pub fn project_into(&self, z: &[f64], out: &mut [f64]) {
        match self {
            Self::Ball { center, radius } => clip_ball(z, center.as_slice(), *radius, out),
            Self::Point { center } => out.copy_from_slice(center.as_slice()),
            Self::HullOfDisksProduct {
                plane_mode,
                disk1,
                disk2,
                complement_radius,
            } => {
                let k = plane_mode - 1;
                let p = DiskHull::new(*disk1, *disk2).project([z[0], z[k]]);
                let d2: f64 = z
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != 0 && *i != k)
                    .map(|(_, x)| x * x)
                    .sum();
                let d = d2.sqrt();
                let s = if d <= *complement_radius {
                    1.0
                } else {
                    complement_radius / d
                };
                for (i, (o, x)) in out.iter_mut().zip(z).enumerate() {
                    *o = if i == 0 {
                        p[0]
                    } else if i == k {
                        p[1]
                    } else {
                        s * x
                    };
                }
            }
        }
    }

    pub fn project(&self, z: &State) -> State {
        let mut out = vec![0.0; z.len()];
        self.project_into(z.as_slice(), &mut out);
        State::from_vec(out)
    }

    pub fn distance(&self, z: &State) -> f64 {
        (&z.0 - self.project(z).0).norm()
    }

    /// `dist(z, Q) <= tol`, computed through the projection.
    pub fn contains(&self, z: &State, tol: f64) -> bool {
        self.distance(z) <= tol
    }

    /// Support function `σ_Q(η) = sup_{q ∈ Q} ⟨q, η⟩`.
    pub fn support(&self, eta: &[f64]) -> f64 {
        match self {
            Self::Ball { center, radius } => {
                let c: f64 = center.as_slice().iter().zip(eta).map(|(a, b)| a * b).sum();
                c + radius * eta.iter().map(|x| x * x).sum::<f64>().sqrt()
            }
            Self::Point { center } => center.as_slice().iter().zip(eta).map(|(a, b)| a * b).sum(),
            Self::HullOfDisksProduct {
                plane_mode,
                disk1,
                disk2,
                complement_radius,
            } => {
                let k = plane_mode - 1;
                let plane = DiskHull::new(*disk1, *disk2).support([eta[0], eta[k]]);
                let rest: f64 = eta
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != 0 && *i != k)
                    .map(|(_, x)| x * x)
                    .sum();
                plane + complement_radius * rest.sqrt()
            }
        }
    }
}

/// `h(x) = x^α` and its first two derivatives.
fn curve(alpha: f64, x: f64) -> (f64, f64, f64) {
    (
        x.powf(alpha),
        alpha * x.powf(alpha - 1.0),
        alpha * (alpha - 1.0) * x.powf(alpha - 2.0),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentDisk {
    pub disk: Disk2,
    pub tangent_point: P2,
    /// Radius fraction after any halvings.
    pub theta: f64,
    pub halvings: u32,
}

const CONTAINMENT_SAMPLES: usize = 10_000;
const MAX_HALVINGS: u32 = 20;

/// Disk inside `G_h = {x₁ > 0, x₂ >= x₁^α}` tangent to its boundary at `(a, a^α)`,
/// with radius `θ / κ(a)` (a fraction of the radius of curvature).
///
/// Containment is verified by dense sampling of the curve and by the
/// half-plane condition `x₁ > 0`; on failure `θ` is halved, up to 20 times.
pub fn tangent_disk(alpha: f64, a: f64, theta: f64) -> Result<TangentDisk> {
    if !(alpha >= 2.0) || !(a > 0.0) || !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Config(format!(
            "tangent disk needs alpha >= 2, a > 0, 0 < theta < 1 (got {alpha}, {a}, {theta})"
        )));
    }
    let (h, dh, ddh) = curve(alpha, a);
    let slope = (1.0 + dh * dh).sqrt();
    let kappa = ddh / slope.powi(3);
    let normal = [-dh / slope, 1.0 / slope];
    let p = [a, h];

    let mut theta = theta;
    for halvings in 0..=MAX_HALVINGS {
        let r = theta / kappa;
        let c = [p[0] + r * normal[0], p[1] + r * normal[1]];
        let x_hi = 10f64.max(2.0 * (c[0] + r));
        let inside_half_plane = c[0] - r > 0.0;
        let clear_of_curve = (1..=CONTAINMENT_SAMPLES).all(|i| {
            let x = x_hi * i as f64 / CONTAINMENT_SAMPLES as f64;
            dist([x, x.powf(alpha)], c) >= r * (1.0 - 1e-12)
        });
        if inside_half_plane && clear_of_curve {
            return Ok(TangentDisk {
                disk: Disk2::new(c, r),
                tangent_point: p,
                theta,
                halvings,
            });
        }
        theta *= 0.5;
    }
    Err(Error::Geometry(format!(
        "no disk tangent at a = {a} fits inside G_h after {MAX_HALVINGS} halvings"
    )))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HullCheckParams {
    pub tol: f64,
    pub samples: usize,
    /// Radius around each allowed contact point excluded from the check.
    pub neighborhood: f64,
}

impl Default for HullCheckParams {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            samples: 10_000,
            neighborhood: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HullCheckReport {
    pub passed: bool,
    /// Smallest curve-to-hull distance among samples outside the neighborhoods.
    pub min_gap: f64,
    pub worst_abscissa: f64,
}

/// Verifies that the curve `x₂ = x₁^α` meets `conv(D₁ ∪ D₂)` only near the
/// given contact points.
pub fn hull_curve_check(
    disk1: &Disk2,
    disk2: &Disk2,
    alpha: f64,
    contacts: &[P2],
    params: &HullCheckParams,
) -> HullCheckReport {
    let hull = DiskHull::new(*disk1, *disk2);
    let x_hi = 1.5 * (disk1.center[0] + disk1.radius).max(disk2.center[0] + disk2.radius);
    let mut min_gap = f64::INFINITY;
    let mut worst = f64::NAN;
    for i in 1..=params.samples {
        let x = x_hi * i as f64 / params.samples as f64;
        let q = [x, x.powf(alpha)];
        if contacts.iter().any(|c| dist(*c, q) <= params.neighborhood) {
            continue;
        }
        let g = hull.distance(q);
        if g < min_gap {
            min_gap = g;
            worst = x;
        }
    }
    HullCheckReport {
        passed: min_gap > params.tol,
        min_gap,
        worst_abscissa: worst,
    }
}
