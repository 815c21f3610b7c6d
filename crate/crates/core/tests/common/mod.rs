//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Gram matrix `(2/π) ∫_l^r sin(jx) sin(kx) dx` by composite Simpson quadrature.
pub fn gram_quadrature(n: usize, l: f64, r: f64) -> Vec<Vec<f64>> {
    let steps = 4000;
    let h = (r - l) / steps as f64;
    let mut g = vec![vec![0.0; n]; n];
    for (j, row) in g.iter_mut().enumerate() {
        for (k, entry) in row.iter_mut().enumerate() {
            let f = |x: f64| ((j + 1) as f64 * x).sin() * ((k + 1) as f64 * x).sin();
            let mut s = f(l) + f(r);
            for i in 1..steps {
                let x = l + h * i as f64;
                s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
            }
            *entry = 2.0 / PI * s * h / 3.0;
        }
    }
    g
}

/// Slice weights `∫ e^{-λ(T-s)} ds` over `[t_i, t_{i+1}]` of a uniform grid.
pub fn slice_weight(lambda: f64, horizon: f64, n_slices: usize, i: usize) -> f64 {
    let dt = horizon / n_slices as f64;
    let (a, b) = (i as f64 * dt, (i + 1) as f64 * dt);
    ((-lambda * (horizon - b)).exp() - (-lambda * (horizon - a)).exp()) / lambda
}

/// 2-mode slice maps `G_i = diag(w_i) B`.
pub fn slice_maps_2(l: f64, r: f64, horizon: f64, n_slices: usize) -> Vec<[[f64; 2]; 2]> {
    let b = gram_quadrature(2, l, r);
    (0..n_slices)
        .map(|i| {
            let w = [
                slice_weight(1.0, horizon, n_slices, i),
                slice_weight(4.0, horizon, n_slices, i),
            ];
            [
                [w[0] * b[0][0], w[0] * b[0][1]],
                [w[1] * b[1][0], w[1] * b[1][1]],
            ]
        })
        .collect()
}

/// Closed-form minimal norm for a point target and a single slice: `‖G⁻¹ d‖`.
pub fn point_oracle(g: &[[f64; 2]; 2], d: [f64; 2]) -> f64 {
    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    let v = [
        (g[1][1] * d[0] - g[0][1] * d[1]) / det,
        (-g[1][0] * d[0] + g[0][0] * d[1]) / det,
    ];
    v[0].hypot(v[1])
}

/// Convex polygon, counter-clockwise vertices.
pub struct Polygon(pub Vec<[f64; 2]>);

impl Polygon {
    /// Inscribed polygon of the ellipse `G · (unit disk)`.
    pub fn ellipse(g: &[[f64; 2]; 2], vertices: usize) -> Self {
        let mut pts: Vec<[f64; 2]> = (0..vertices)
            .map(|k| {
                let th = 2.0 * PI * k as f64 / vertices as f64;
                let (c, s) = (th.cos(), th.sin());
                [g[0][0] * c + g[0][1] * s, g[1][0] * c + g[1][1] * s]
            })
            .collect();
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        if det < 0.0 {
            pts.reverse();
        }
        Polygon(pts)
    }

    /// Minkowski sum by merging edge directions.
    pub fn minkowski(polys: &[Polygon]) -> Self {
        let mut start = [0.0, 0.0];
        let mut edges: Vec<[f64; 2]> = vec![];
        for p in polys {
            let lowest = p
                .0
                .iter()
                .copied()
                .min_by(|a, b| a[1].total_cmp(&b[1]).then(a[0].total_cmp(&b[0])))
                .unwrap();
            start = [start[0] + lowest[0], start[1] + lowest[1]];
            let n = p.0.len();
            for i in 0..n {
                let (a, b) = (p.0[i], p.0[(i + 1) % n]);
                let e = [b[0] - a[0], b[1] - a[1]];
                if e[0] != 0.0 || e[1] != 0.0 {
                    edges.push(e);
                }
            }
        }
        let angle = |e: &[f64; 2]| {
            let a = e[1].atan2(e[0]);
            if a < 0.0 {
                a + 2.0 * PI
            } else {
                a
            }
        };
        edges.sort_by(|a, b| angle(a).total_cmp(&angle(b)));
        let mut pts = Vec::with_capacity(edges.len());
        let mut cur = start;
        for e in edges {
            pts.push(cur);
            cur = [cur[0] + e[0], cur[1] + e[1]];
        }
        Polygon(pts)
    }

    /// Euclidean distance from `p` to the (filled) polygon scaled by `m`.
    pub fn distance_scaled(&self, p: [f64; 2], m: f64) -> f64 {
        let n = self.0.len();
        let mut inside = true;
        let mut best = f64::INFINITY;
        for i in 0..n {
            let a = [m * self.0[i][0], m * self.0[i][1]];
            let b = [m * self.0[(i + 1) % n][0], m * self.0[(i + 1) % n][1]];
            let e = [b[0] - a[0], b[1] - a[1]];
            let w = [p[0] - a[0], p[1] - a[1]];
            if e[0] * w[1] - e[1] * w[0] < 0.0 {
                inside = false;
            }
            let len2 = e[0] * e[0] + e[1] * e[1];
            let t = if len2 > 0.0 {
                ((w[0] * e[0] + w[1] * e[1]) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = [a[0] + t * e[0] - p[0], a[1] + t * e[1] - p[1]];
            best = best.min(q[0].hypot(q[1]));
        }
        if inside {
            0.0
        } else {
            best
        }
    }
}

/// Smallest `M` with `dist(d, M · (Σ_i G_i · disk)) <= radius`, by bisection on
/// polygonal approximations of the reachable set.
pub fn ball_oracle(maps: &[[[f64; 2]; 2]], d: [f64; 2], radius: f64) -> f64 {
    if d[0].hypot(d[1]) <= radius {
        return 0.0;
    }
    let polys: Vec<Polygon> = maps.iter().map(|g| Polygon::ellipse(g, 2048)).collect();
    let sum = Polygon::minkowski(&polys);
    let ok = |m: f64| sum.distance_scaled(d, m) <= radius;
    let mut hi = 1.0;
    while !ok(hi) {
        hi *= 2.0;
        assert!(hi < 1e12, "oracle bracket diverged");
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Brute-force projection onto a planar convex set known only through a
/// membership test. The set is cut into vertical and horizontal slices at the
/// given pitch; slice ends are located by scanning and bisection. A query is
/// clamped into every slice and the nearest candidate wins.
pub struct SliceProjector {
    pub columns: Vec<(f64, f64, f64)>,
    pub rows: Vec<(f64, f64, f64)>,
    pub pitch: f64,
}

fn slice_extent(inside: &dyn Fn(f64) -> bool, lo: f64, hi: f64, pitch: f64) -> Option<(f64, f64)> {
    let n = ((hi - lo) / pitch).ceil() as usize;
    let first = (0..=n).map(|i| lo + i as f64 * pitch).find(|s| inside(*s))?;
    let last = (0..=n).rev().map(|i| lo + i as f64 * pitch).find(|s| inside(*s))?;
    let edge = |mut a: f64, mut b: f64| {
        // a inside, b outside
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            if inside(m) {
                a = m;
            } else {
                b = m;
            }
        }
        a
    };
    Some((edge(first, first - pitch), edge(last, last + pitch)))
}

impl SliceProjector {
    pub fn new(lo: [f64; 2], hi: [f64; 2], pitch: f64, inside: impl Fn([f64; 2]) -> bool) -> Self {
        let nx = ((hi[0] - lo[0]) / pitch).ceil() as usize;
        let ny = ((hi[1] - lo[1]) / pitch).ceil() as usize;
        let columns = (0..=nx)
            .filter_map(|i| {
                let x = lo[0] + i as f64 * pitch;
                slice_extent(&|y| inside([x, y]), lo[1], hi[1], pitch).map(|(a, b)| (x, a, b))
            })
            .collect();
        let rows = (0..=ny)
            .filter_map(|j| {
                let y = lo[1] + j as f64 * pitch;
                slice_extent(&|x| inside([x, y]), lo[0], hi[0], pitch).map(|(a, b)| (y, a, b))
            })
            .collect();
        Self { columns, rows, pitch }
    }

    pub fn project(&self, p: [f64; 2]) -> [f64; 2] {
        let cands = self
            .columns
            .iter()
            .map(|&(x, a, b)| [x, p[1].clamp(a, b)])
            .chain(self.rows.iter().map(|&(y, a, b)| [p[0].clamp(a, b), y]));
        cands
            .min_by(|a, b| {
                let da = (a[0] - p[0]).powi(2) + (a[1] - p[1]).powi(2);
                let db = (b[0] - p[0]).powi(2) + (b[1] - p[1]).powi(2);
                da.total_cmp(&db)
            })
            .unwrap()
    }
}
