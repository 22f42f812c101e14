//! Cell-centred grids on [-L, L]^n, analytic domains and boundary quadrature.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{param, Error, Result};

pub type Point = [f64; 3];

fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Uniform cell-centred grid with `m` nodes per axis on the box [-L, L]^n.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid {
    n: usize,
    half_width: f64,
    m: usize,
    h: f64,
}

impl Grid {
    pub fn new(n: usize, half_width: f64, m: usize) -> Result<Self> {
        if !(1..=3).contains(&n) {
            return Err(param(format!("dimension n = {n} must be 1, 2 or 3")));
        }
        if m < 4 || m % 2 == 1 {
            return Err(param(format!("nodes per axis m = {m} must be even and at least 4")));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(param(format!("box half-width L = {half_width} must be positive")));
        }
        Ok(Self { n, half_width, m, h: 2.0 * half_width / m as f64 })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.m
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.m.pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Lumped mass h^n.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.n as i32)
    }

    pub fn axis_coord(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.h
    }

    /// Row-major flat index, axis 0 slowest. Unused axes must be 0.
    pub fn index_of(&self, multi: [usize; 3]) -> usize {
        multi[..self.n].iter().fold(0, |acc, &i| acc * self.m + i)
    }

    pub fn multi_index(&self, mut idx: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for d in (0..self.n).rev() {
            out[d] = idx % self.m;
            idx /= self.m;
        }
        out
    }

    pub fn point(&self, idx: usize) -> Point {
        let mi = self.multi_index(idx);
        let mut p = [0.0; 3];
        for d in 0..self.n {
            p[d] = self.axis_coord(mi[d]);
        }
        p
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }
}

/// Analytic domain shapes. Components beyond the grid dimension are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    Ball {
        r: f64,
        #[serde(default)]
        center: Point,
    },
    /// Cube of max-norm half-width `a`.
    Box {
        a: f64,
        #[serde(default)]
        center: Point,
    },
    Ellipsoid {
        axes: Point,
        #[serde(default)]
        center: Point,
    },
}

impl Shape {
    pub fn ball(r: f64) -> Self {
        Shape::Ball { r, center: [0.0; 3] }
    }

    pub fn cube(a: f64) -> Self {
        Shape::Box { a, center: [0.0; 3] }
    }

    pub fn ellipsoid(axes: Point) -> Self {
        Shape::Ellipsoid { axes, center: [0.0; 3] }
    }

    pub fn center(&self) -> Point {
        match self {
            Shape::Ball { center, .. } | Shape::Box { center, .. } | Shape::Ellipsoid { center, .. } => *center,
        }
    }

    fn half_extent(&self, axis: usize) -> f64 {
        match self {
            Shape::Ball { r, .. } => *r,
            Shape::Box { a, .. } => *a,
            Shape::Ellipsoid { axes, .. } => axes[axis],
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let c = self.center();
        for d in 0..n {
            let e = self.half_extent(d);
            if !(e.is_finite() && e > 0.0) {
                return Err(param(format!("shape extent along axis {d} must be positive, got {e}")));
            }
            if !c[d].is_finite() {
                return Err(param("shape center must be finite"));
            }
        }
        Ok(())
    }

    /// Inradius about the shape's own center.
    pub fn inradius(&self, n: usize) -> f64 {
        (0..n).map(|d| self.half_extent(d)).fold(f64::INFINITY, f64::min)
    }

    /// Signed distance to the boundary (negative inside), in dimension n.
    pub fn signed_distance(&self, x: &Point, n: usize) -> f64 {
        let c = self.center();
        let mut d = [0.0; 3];
        for k in 0..n {
            d[k] = x[k] - c[k];
        }
        match self {
            Shape::Ball { r, .. } => dot(&d, &d).sqrt() - r,
            Shape::Box { a, .. } => {
                let q: Vec<f64> = d[..n].iter().map(|v| v.abs() - a).collect();
                let outside: f64 = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
                let inside = q.iter().copied().fold(f64::NEG_INFINITY, f64::max).min(0.0);
                outside + inside
            }
            Shape::Ellipsoid { axes, .. } => {
                let level: f64 = (0..n).map(|k| (d[k] / axes[k]).powi(2)).sum();
                let dist = ellipsoid_distance(&axes[..n], &d[..n]);
                if level < 1.0 {
                    -dist
                } else {
                    dist
                }
            }
        }
    }
}

/// Euclidean distance from `y` to the ellipsoid surface with semi-axes `e`.
fn ellipsoid_distance(e: &[f64], y: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..e.len()).collect();
    order.sort_by(|&a, &b| e[b].total_cmp(&e[a]));
    let es: Vec<f64> = order.iter().map(|&k| e[k]).collect();
    let ys: Vec<f64> = order.iter().map(|&k| y[k].abs()).collect();
    sorted_ellipsoid_distance(&es, &ys)
}

// Axes sorted descending, coordinates nonnegative.
fn sorted_ellipsoid_distance(e: &[f64], y: &[f64]) -> f64 {
    let k = e.len();
    if k == 1 {
        return (y[0] - e[0]).abs();
    }
    let last = k - 1;
    let f = |t: f64| -> f64 { e.iter().zip(y).map(|(&ei, &yi)| (ei * yi / (t + ei * ei)).powi(2)).sum::<f64>() - 1.0 };
    let closest = |t: f64| -> f64 {
        e.iter()
            .zip(y)
            .map(|(&ei, &yi)| {
                let xi = ei * ei * yi / (t + ei * ei);
                (xi - yi).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    };
    let pole = e
        .iter()
        .zip(y)
        .filter(|(_, &yi)| yi > 0.0)
        .map(|(&ei, _)| -ei * ei)
        .fold(f64::NEG_INFINITY, f64::max);
    if y[last] == 0.0 && pole < -e[last] * e[last] {
        // Closest point may leave the y_last = 0 plane.
        let tl = -e[last] * e[last];
        let mut level = 0.0;
        let mut d2 = 0.0;
        for i in 0..last {
            let denom = e[i] * e[i] + tl;
            if denom <= 0.0 {
                level = f64::INFINITY;
                break;
            }
            let xi = e[i] * e[i] * y[i] / denom;
            level += (xi / e[i]).powi(2);
            d2 += (xi - y[i]).powi(2);
        }
        if level < 1.0 {
            let xl = e[last] * (1.0 - level).sqrt();
            return (d2 + xl * xl).sqrt();
        }
        return sorted_ellipsoid_distance(&e[..last], &y[..last]);
    }
    if pole == f64::NEG_INFINITY {
        // y at the center: nearest boundary point is the end of the shortest axis.
        return e[last];
    }
    let (mut lo, mut hi) = (pole, 1.0);
    while f(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    closest(0.5 * (lo + hi))
}

/// Indicator of Omega on the grid plus the boundary distance of inside nodes.
#[derive(Clone, Debug)]
pub struct DomainMask {
    grid: Grid,
    shape: Shape,
    inside: Vec<bool>,
    delta: Vec<f64>,
    inside_nodes: Vec<usize>,
}

impl DomainMask {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn is_inside(&self, idx: usize) -> bool {
        self.inside[idx]
    }

    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    /// dist(x, boundary) for inside nodes, 0 elsewhere.
    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn inside_nodes(&self) -> &[usize] {
        &self.inside_nodes
    }

    pub fn inside_count(&self) -> usize {
        self.inside_nodes.len()
    }
}

/// Checks the shape parameters and a clearance of 2h to every box face.
pub fn check_clearance(shape: &Shape, grid: &Grid) -> Result<()> {
    let n = grid.dim();
    shape.validate(n)?;
    let c = shape.center();
    let limit = grid.half_width() - 2.0 * grid.spacing();
    for d in 0..n {
        let e = shape.half_extent(d);
        if c[d] + e > limit || c[d] - e < -limit {
            return Err(Error::Domain(format!(
                "shape reaches {:.4} along axis {d}, beyond the allowed {:.4} (clearance 2h = {:.4} from the box face)",
                (c[d] + e).abs().max((c[d] - e).abs()),
                limit,
                2.0 * grid.spacing()
            )));
        }
    }
    Ok(())
}

/// Rasterize `shape` on `grid`. Requires a clearance of 2h to every box face.
pub fn build_domain(shape: &Shape, grid: &Grid) -> Result<DomainMask> {
    let n = grid.dim();
    check_clearance(shape, grid)?;
    let mut inside = vec![false; grid.len()];
    let mut delta = vec![0.0; grid.len()];
    let mut inside_nodes = Vec::new();
    for (idx, x) in grid.points().enumerate() {
        let sd = shape.signed_distance(&x, n);
        if sd < 0.0 {
            inside[idx] = true;
            delta[idx] = -sd;
            inside_nodes.push(idx);
        }
    }
    if inside_nodes.is_empty() {
        return Err(Error::Domain("no grid node lies inside the shape".into()));
    }
    Ok(DomainMask { grid: grid.clone(), shape: shape.clone(), inside, delta, inside_nodes })
}

/// Points, unit outward normals and surface weights on the boundary.
#[derive(Clone, Debug, Default)]
pub struct BoundaryPatches {
    pub points: Vec<Point>,
    pub normals: Vec<Point>,
    pub areas: Vec<f64>,
}

impl BoundaryPatches {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Quadrature of g(x, nu) over the boundary.
    pub fn integrate<F: Fn(&Point, &Point) -> f64>(&self, g: F) -> f64 {
        self.points
            .iter()
            .zip(&self.normals)
            .zip(&self.areas)
            .map(|((x, nu), a)| a * g(x, nu))
            .sum()
    }

    fn push(&mut self, x: Point, nu: Point, area: f64) {
        let norm = dot(&nu, &nu).sqrt();
        self.points.push(x);
        self.normals.push([nu[0] / norm, nu[1] / norm, nu[2] / norm]);
        self.areas.push(area);
    }
}

/// Boundary quadrature from the analytic parametrization with roughly
/// `resolution` patches. Midpoint rule in the parameters; for the sphere the
/// (z, phi) cells are equal-area so the total area is exact.
pub fn boundary_patches(mask: &DomainMask, resolution: usize) -> BoundaryPatches {
    let n = mask.grid().dim();
    let shape = mask.shape();
    let c = shape.center();
    let mut out = BoundaryPatches::default();
    let res = resolution.max(8);
    match n {
        1 => {
            let e = shape.half_extent(0);
            out.push([c[0] + e, 0.0, 0.0], [1.0, 0.0, 0.0], 1.0);
            out.push([c[0] - e, 0.0, 0.0], [-1.0, 0.0, 0.0], 1.0);
        }
        2 => match shape {
            Shape::Box { a, .. } => {
                let k = res.div_ceil(4);
                let len = 2.0 * a / k as f64;
                for j in 0..k {
                    let t = -a + (j as f64 + 0.5) * len;
                    out.push([c[0] + a, c[1] + t, 0.0], [1.0, 0.0, 0.0], len);
                    out.push([c[0] - a, c[1] + t, 0.0], [-1.0, 0.0, 0.0], len);
                    out.push([c[0] + t, c[1] + a, 0.0], [0.0, 1.0, 0.0], len);
                    out.push([c[0] + t, c[1] - a, 0.0], [0.0, -1.0, 0.0], len);
                }
            }
            _ => {
                let (a, b) = (shape.half_extent(0), shape.half_extent(1));
                let dt = 2.0 * PI / res as f64;
                for j in 0..res {
                    let t = (j as f64 + 0.5) * dt;
                    let (st, ct) = t.sin_cos();
                    let speed = (a * a * st * st + b * b * ct * ct).sqrt();
                    out.push([c[0] + a * ct, c[1] + b * st, 0.0], [ct / a, st / b, 0.0], speed * dt);
                }
            }
        },
        _ => match shape {
            Shape::Box { a, .. } => {
                let k = ((res as f64 / 6.0).sqrt().ceil() as usize).max(1);
                let len = 2.0 * a / k as f64;
                for axis in 0..3 {
                    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                    for sign in [1.0, -1.0] {
                        for i in 0..k {
                            for j in 0..k {
                                let mut x = c;
                                x[axis] += sign * a;
                                x[u] += -a + (i as f64 + 0.5) * len;
                                x[v] += -a + (j as f64 + 0.5) * len;
                                let mut nu = [0.0; 3];
                                nu[axis] = sign;
                                out.push(x, nu, len * len);
                            }
                        }
                    }
                }
            }
            _ => {
                let axes = [shape.half_extent(0), shape.half_extent(1), shape.half_extent(2)];
                let kz = ((res as f64 / 2.0).sqrt().ceil() as usize).max(2);
                let kp = 2 * kz;
                let dz = 2.0 / kz as f64;
                let dp = 2.0 * PI / kp as f64;
                let det = axes[0] * axes[1] * axes[2];
                for i in 0..kz {
                    let z = -1.0 + (i as f64 + 0.5) * dz;
                    let rho = (1.0 - z * z).sqrt();
                    for j in 0..kp {
                        let phi = (j as f64 + 0.5) * dp;
                        let w = [rho * phi.cos(), rho * phi.sin(), z];
                        let nu = [w[0] / axes[0], w[1] / axes[1], w[2] / axes[2]];
                        let stretch = det * dot(&nu, &nu).sqrt();
                        let x = [c[0] + axes[0] * w[0], c[1] + axes[1] * w[1], c[2] + axes[2] * w[2]];
                        out.push(x, nu, stretch * dz * dp);
                    }
                }
            }
        },
    }
    out
}

/// Whether nu(x).x > 0 on every patch, with the minimum of nu(x).x.
pub fn is_strictly_star_shaped(patches: &BoundaryPatches) -> (bool, f64) {
    let min = patches
        .points
        .iter()
        .zip(&patches.normals)
        .map(|(x, nu)| dot(x, nu))
        .fold(f64::INFINITY, f64::min);
    (min > 0.0, min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_spacing_and_layout() {
        assert_eq!(Grid::new(1, 1.0, 8).unwrap().spacing(), 0.25);
        let g = Grid::new(3, 2.0, 16).unwrap();
        assert_eq!(g.spacing(), 0.25);
        assert_eq!(g.point(0), [-1.875; 3]);
        let idx = g.index_of([3, 5, 7]);
        assert_eq!(g.multi_index(idx), [3, 5, 7]);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(matches!(Grid::new(3, 1.0, 5), Err(Error::Param(_))));
        assert!(Grid::new(4, 1.0, 8).is_err());
        assert!(Grid::new(2, 0.0, 8).is_err());
        assert!(Grid::new(2, 1.0, 2).is_err());
    }

    #[test]
    fn ball_delta_at_center_node() {
        let g = Grid::new(3, 1.0, 32).unwrap();
        let mask = build_domain(&Shape::ball(0.8), &g).unwrap();
        let idx = g.index_of([16, 16, 16]);
        let h = g.spacing();
        let expect = 0.8 - h * 3f64.sqrt() / 2.0;
        assert!((mask.delta()[idx] - expect).abs() < 1e-15);
    }

    #[test]
    fn ball_touching_box_rejected() {
        let g = Grid::new(3, 1.0, 32).unwrap();
        assert!(matches!(build_domain(&Shape::ball(0.99), &g), Err(Error::Domain(_))));
    }

    #[test]
    fn box_inside_count_matches_enumeration() {
        let g = Grid::new(2, 1.0, 16).unwrap();
        let mask = build_domain(&Shape::cube(0.5), &g).unwrap();
        let mut count = 0;
        for i in 0..16 {
            for j in 0..16 {
                let (x, y) = (-1.0 + (i as f64 + 0.5) / 8.0, -1.0 + (j as f64 + 0.5) / 8.0);
                if x.abs().max(y.abs()) < 0.5 {
                    count += 1;
                }
            }
        }
        assert_eq!(mask.inside_count(), count);
    }

    #[test]
    fn sphere_area_and_radial_normals() {
        let g = Grid::new(3, 1.5, 16).unwrap();
        let mask = build_domain(&Shape::ball(1.0), &g).unwrap();
        let p = boundary_patches(&mask, 2048);
        assert!((p.total_area() / (4.0 * PI) - 1.0).abs() < 1e-3);
        for (x, nu) in p.points.iter().zip(&p.normals) {
            assert!((dot(nu, nu).sqrt() - 1.0).abs() < 1e-12);
            assert!((dot(x, nu) - 1.0).abs() < 1e-12);
        }
        let (star, min) = is_strictly_star_shaped(&p);
        assert!(star && (min - 1.0).abs() < 1e-12);
    }

    fn ellipse_perimeter_oracle(a: f64, b: f64) -> f64 {
        crate::quad::adaptive(|t: f64| (a * a * t.sin().powi(2) + b * b * t.cos().powi(2)).sqrt(), 0.0, 2.0 * PI, 1e-14, 1e-14).0
    }

    #[test]
    fn ellipse_perimeter_matches_arc_length() {
        let g = Grid::new(2, 1.5, 16).unwrap();
        let mask = build_domain(&Shape::ellipsoid([1.0, 0.5, 0.0]), &g).unwrap();
        let p = boundary_patches(&mask, 256);
        let oracle = ellipse_perimeter_oracle(1.0, 0.5);
        assert!((oracle - 4.844_224_110_273_838).abs() < 1e-12);
        assert!((p.total_area() - oracle).abs() < 1e-6);
    }

    #[test]
    fn ellipsoid_area_error_halves_with_patch_size() {
        let g = Grid::new(3, 1.5, 16).unwrap();
        let mask = build_domain(&Shape::ellipsoid([1.0, 0.7, 0.5]), &g).unwrap();
        let fine = boundary_patches(&mask, 2 * 160 * 160).total_area();
        let e1 = (boundary_patches(&mask, 2 * 10 * 10).total_area() - fine).abs();
        let e2 = (boundary_patches(&mask, 2 * 20 * 20).total_area() - fine).abs();
        assert!(e2 <= 0.5 * e1, "{e1} {e2}");
    }

    #[test]
    fn offset_ball_is_not_star_shaped() {
        let g = Grid::new(3, 1.5, 16).unwrap();
        let shape = Shape::Ball { r: 0.5, center: [0.6, 0.0, 0.0] };
        let mask = build_domain(&shape, &g).unwrap();
        let (star, min) = is_strictly_star_shaped(&boundary_patches(&mask, 512));
        assert!(!star && min < 0.0);
    }

    #[test]
    fn centered_box_star_shaped_with_min_a() {
        for n in [2, 3] {
            let g = Grid::new(n, 1.0, 16).unwrap();
            let mask = build_domain(&Shape::cube(0.5), &g).unwrap();
            let p = boundary_patches(&mask, 600);
            let (star, min) = is_strictly_star_shaped(&p);
            assert!(star && (min - 0.5).abs() < 1e-12);
            let perimeter = 2.0 * n as f64 * 1f64.powi(n as i32 - 1);
            assert!((p.total_area() - perimeter).abs() < 1e-12);
        }
    }

    fn brute_ellipse_distance(a: f64, b: f64, x: f64, y: f64) -> f64 {
        let k = 200_000;
        let mut best = f64::INFINITY;
        for j in 0..k {
            let t = 2.0 * PI * j as f64 / k as f64;
            best = best.min((a * t.cos() - x).hypot(b * t.sin() - y));
        }
        best
    }

    #[test]
    fn ellipse_distance_matches_dense_sampling() {
        for &(x, y) in &[(0.3, 0.1), (0.0, 0.0), (0.5, 0.0), (0.0, 0.2), (-0.9, 0.05), (0.2, -0.45)] {
            let d = -Shape::ellipsoid([1.0, 0.5, 0.0]).signed_distance(&[x, y, 0.0], 2);
            let b = brute_ellipse_distance(1.0, 0.5, x, y);
            assert!((d - b).abs() < 1e-6, "({x},{y}) {d} {b}");
        }
    }

    proptest! {
        #[test]
        fn centrally_symmetric_masks(r in 0.2f64..0.65, a in 0.2f64..0.65, n in 1usize..=3) {
            let g = Grid::new(n, 1.0, 12).unwrap();
            for shape in [Shape::ball(r), Shape::cube(a), Shape::ellipsoid([a, r, 0.5 * (a + r)])] {
                let mask = build_domain(&shape, &g).unwrap();
                for idx in 0..g.len() {
                    let mi = g.multi_index(idx);
                    let mut mirror = [0; 3];
                    for d in 0..n {
                        mirror[d] = 11 - mi[d];
                    }
                    prop_assert_eq!(mask.is_inside(idx), mask.is_inside(g.index_of(mirror)));
                }
            }
        }

        #[test]
        fn ball_delta_is_exact(r in 0.2f64..0.7) {
            let g = Grid::new(2, 1.0, 20).unwrap();
            let mask = build_domain(&Shape::ball(r), &g).unwrap();
            for &idx in mask.inside_nodes() {
                let x = g.point(idx);
                prop_assert_eq!(mask.delta()[idx], r - dot(&x, &x).sqrt());
            }
        }

        #[test]
        fn ellipsoid_delta_bounded_by_axis_distances(x in -0.4f64..0.4, y in -0.3f64..0.3, z in -0.2f64..0.2) {
            let axes = [0.9, 0.6, 0.45];
            let shape = Shape::ellipsoid(axes);
            let p = [x, y, z];
            let level: f64 = (0..3).map(|k| (p[k] / axes[k]).powi(2)).sum();
            prop_assume!(level < 1.0);
            let d = -shape.signed_distance(&p, 3);
            prop_assert!(d > 0.0);
            for k in 0..3 {
                prop_assert!(d <= axes[k] - p[k].abs() + 1e-12);
            }
        }
    }
}
