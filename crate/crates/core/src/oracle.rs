//! Independent references: single level sets traced as curves and solved as
//! classical rope problems, integration over levels by Gauss quadrature, and
//! the analytic catenary.

use rayon::prelude::*;

use crate::bulkcouple::line_energy;
use crate::error::{Error, Result};
use crate::errors::Displacement;
use crate::levelset::LevelSetField;
use crate::linalg::Vec3;
use crate::mechanics::MaterialParams;
use crate::mesh::Mesh;
use crate::refelem::gauss_legendre;
use crate::solver::{solve_with_continuation, Bvp, LineRopeTerm, SolverOptions};

/// One level set `phi = c` as an ordered chain between its two boundary
/// points.
#[derive(Debug, Clone)]
pub struct RopeCurve {
    pub c: f64,
    pub points: Vec<Vec3>,
    /// Arc length at each point, starting at zero.
    pub arc: Vec<f64>,
    step: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct TraceOptions {
    /// Marching step in arc length.
    pub step: f64,
    /// Tolerance on `phi - c` after projection.
    pub tol: f64,
    /// Give up (closed or runaway curve) after this length.
    pub max_length: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self { step: 0.01, tol: 1e-13, max_length: 1e3 }
    }
}

struct Tracer<'a> {
    field: &'a LevelSetField,
    domain: &'a dyn Fn(&Vec3) -> f64,
    c: f64,
    tol: f64,
}

impl Tracer<'_> {
    fn tangent(&self, x: &Vec3) -> Vec3 {
        let g = self.field.eval(x).grad;
        Vec3::new(-g[1], g[0], 0.0) / g.norm()
    }

    fn project(&self, x: Vec3) -> Result<Vec3> {
        let mut x = x;
        for _ in 0..50 {
            let e = self.field.eval(&x);
            let r = e.value - self.c;
            if r.abs() <= self.tol * (1.0 + self.c.abs()) {
                return Ok(x);
            }
            x -= r * e.grad / e.grad.norm_squared();
        }
        Err(Error::Validity(format!("projection onto level set {} does not converge", self.c)))
    }

    /// RK4 step of the unit-speed curve ODE followed by projection.
    fn advance(&self, x: &Vec3, h: f64) -> Result<Vec3> {
        let k1 = self.tangent(x);
        let k2 = self.tangent(&(x + 0.5 * h * k1));
        let k3 = self.tangent(&(x + 0.5 * h * k2));
        let k4 = self.tangent(&(x + h * k3));
        self.project(x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
    }

    /// Marches with signed step `h` until the boundary; returns the chain
    /// after `x0` and the step lengths.
    fn march(&self, x0: Vec3, h: f64, max_length: f64) -> Result<(Vec<Vec3>, Vec<f64>)> {
        let mut pts = Vec::new();
        let mut steps = Vec::new();
        let mut x = x0;
        let mut s = 0.0;
        loop {
            let y = self.advance(&x, h)?;
            if (self.domain)(&y) > 0.0 {
                let (mut lo, mut hi) = (0.0, 1.0);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if (self.domain)(&self.advance(&x, mid * h)?) > 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                    if hi - lo < 1e-16 {
                        break;
                    }
                }
                let t = 0.5 * (lo + hi);
                pts.push(self.advance(&x, t * h)?);
                steps.push(t * h.abs());
                return Ok((pts, steps));
            }
            pts.push(y);
            steps.push(h.abs());
            x = y;
            s += h.abs();
            if s > max_length {
                return Err(Error::Validity(format!("level set {} does not reach the boundary", self.c)));
            }
        }
    }
}

/// Traces `phi = c` through the domain `psi < 0`, starting from the
/// projection of `seed` onto the level set.
pub fn trace_levelset(
    field: &LevelSetField,
    domain: &dyn Fn(&Vec3) -> f64,
    c: f64,
    seed: &Vec3,
    opts: &TraceOptions,
) -> Result<RopeCurve> {
    if field.dim != 2 {
        return Err(Error::Unsupported("level-set tracing is implemented in 2D only".into()));
    }
    if let Some([lo, hi]) = field.interval {
        if !(lo..=hi).contains(&c) {
            return Err(Error::Config(format!("level {c} outside the interval [{lo}, {hi}]")));
        }
    }
    let tracer = Tracer { field, domain, c, tol: opts.tol };
    let x0 = tracer.project(*seed)?;
    if domain(&x0) >= 0.0 {
        return Err(Error::Config(format!("seed does not project into the domain for level {c}")));
    }
    let (back, back_steps) = tracer.march(x0, -opts.step, opts.max_length)?;
    let (fwd, fwd_steps) = tracer.march(x0, opts.step, opts.max_length)?;
    let mut points: Vec<Vec3> = back.into_iter().rev().collect();
    let mut lengths: Vec<f64> = back_steps.into_iter().rev().collect();
    points.push(x0);
    points.extend(fwd);
    lengths.extend(fwd_steps);
    let mut arc = vec![0.0];
    for l in lengths {
        arc.push(arc.last().unwrap() + l);
    }
    Ok(RopeCurve { c, points, arc, step: opts.step })
}

impl RopeCurve {
    pub fn length(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    pub fn endpoints(&self) -> (Vec3, Vec3) {
        (self.points[0], *self.points.last().unwrap())
    }

    /// Point at arc length `s`, integrated from the nearest chain point.
    pub fn point_at(&self, field: &LevelSetField, s: f64) -> Result<Vec3> {
        let i = match self.arc.binary_search_by(|a| a.total_cmp(&s)) {
            Ok(i) => return Ok(self.points[i]),
            Err(0) => 0,
            Err(i) => i - 1,
        };
        let i = i.min(self.points.len() - 1);
        let tracer = Tracer { field, domain: &|_| -1.0, c: self.c, tol: 1e-13 };
        let h = s - self.arc[i];
        if h.abs() > 2.0 * self.step {
            return Err(Error::Contract(format!("arc length {s} outside the curve")));
        }
        tracer.advance(&self.points[i], h)
    }

    /// Nodes of `n_el` Lagrange line elements of `order`, equally spaced in
    /// arc length, and the element connectivity.
    pub fn line_mesh(&self, field: &LevelSetField, n_el: usize, order: usize) -> Result<(Vec<[f64; 3]>, Vec<Vec<usize>>)> {
        let n = n_el * order;
        let len = self.length();
        let mut nodes = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let x = match k {
                0 => self.points[0],
                _ if k == n => *self.points.last().unwrap(),
                _ => self.point_at(field, len * k as f64 / n as f64)?,
            };
            nodes.push([x[0], x[1], 0.0]);
        }
        let elements = (0..n_el).map(|e| (e * order..=(e + 1) * order).collect()).collect();
        Ok((nodes, elements))
    }
}

/// Result of a classical rope solve on one curve.
#[derive(Debug, Clone)]
pub struct RopeSolution {
    pub nodes: Vec<[f64; 3]>,
    pub elements: Vec<Vec<usize>>,
    pub u: Vec<f64>,
    pub energy: f64,
    pub deformed_length: f64,
}

impl RopeSolution {
    pub fn deformed_nodes(&self) -> Vec<Vec3> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, x)| Vec3::new(x[0] + self.u[2 * i], x[1] + self.u[2 * i + 1], 0.0))
            .collect()
    }
}

/// Discretization of the curve for the rope solve.
#[derive(Debug, Clone, Copy)]
pub struct RopeMeshOptions {
    pub n_el: usize,
    pub order: usize,
}

/// Clamped rope under a dead load per unit undeformed length.
pub fn surface_fem_rope_solve(
    curve: &RopeCurve,
    field: &LevelSetField,
    mesh_opts: &RopeMeshOptions,
    material: &MaterialParams,
    force: &Vec3,
    options: &SolverOptions,
) -> Result<RopeSolution> {
    stiff_rope_solve(curve, field, mesh_opts, &[*material], force, options)
}

/// Rope solve by continuation through the given materials (e.g. increasing
/// Young's moduli); the last one defines the result.
pub fn stiff_rope_solve(
    curve: &RopeCurve,
    field: &LevelSetField,
    mesh_opts: &RopeMeshOptions,
    materials: &[MaterialParams],
    force: &Vec3,
    options: &SolverOptions,
) -> Result<RopeSolution> {
    let material = materials.last().ok_or_else(|| Error::Config("no rope material given".into()))?;
    let (nodes, elements) = curve.line_mesh(field, mesh_opts.n_el, mesh_opts.order)?;
    let (u, energy, deformed_length) = {
        let term = |m: &MaterialParams| LineRopeTerm::new(&nodes, elements.clone(), mesh_opts.order, *m, *force);
        let last = nodes.len() - 1;
        let u = solve_with_continuation(materials.len(), |k| {
            Ok(Bvp {
                dim: 2,
                n_nodes: nodes.len(),
                terms: vec![Box::new(term(&materials[k])?)],
                dirichlet: vec![(0, 0.0), (1, 0.0), (2 * last, 0.0), (2 * last + 1, 0.0)],
                options: *options,
            })
        })?
        .u;
        let term = term(material)?;
        let energy = line_energy(&term, Displacement::Nodal(&u));
        let mut length = 0.0;
        for e in 0..elements.len() {
            for (q, w) in term.quadrature().rule.weights.iter().enumerate() {
                let (f, p, _, len) = term.kinematics(e, q, &u);
                length += w * len * (f * p).norm();
            }
        }
        (u, energy, length)
    };
    Ok(RopeSolution { nodes, elements, u, energy, deformed_length })
}

/// `int_lo^hi e(c) dc` by an `n`-point Gauss rule over independent rope
/// solves on the levels `c_i`. Returns the sum and the per-level energies.
#[allow(clippy::too_many_arguments)]
pub fn gauss_sum_over_levels(
    field: &LevelSetField,
    domain: &(dyn Fn(&Vec3) -> f64 + Sync),
    seed: &Vec3,
    interval: [f64; 2],
    n: usize,
    trace: &TraceOptions,
    mesh_opts: &RopeMeshOptions,
    material: &MaterialParams,
    force: &Vec3,
    options: &SolverOptions,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let (t, w) = gauss_legendre(n);
    let (mid, half) = (0.5 * (interval[0] + interval[1]), 0.5 * (interval[1] - interval[0]));
    let levels: Vec<Result<(f64, f64)>> = t
        .par_iter()
        .map(|ti| {
            let c = mid + half * ti;
            let curve = trace_levelset(field, domain, c, seed, trace)?;
            let sol = surface_fem_rope_solve(&curve, field, mesh_opts, material, force, options)?;
            Ok((c, sol.energy))
        })
        .collect();
    let levels = levels.into_iter().collect::<Result<Vec<_>>>()?;
    let sum = levels.iter().zip(&w).map(|((_, e), wi)| wi * half * e).sum();
    Ok((sum, levels))
}

/// Hanging chain `y = a cosh((x - x0)/a) + y0`.
#[derive(Debug, Clone, Copy)]
pub struct Catenary {
    pub a: f64,
    pub x0: f64,
    pub y0: f64,
    x1: f64,
    y1: f64,
}

impl Catenary {
    pub fn y(&self, x: f64) -> f64 {
        // written as a difference of cosh values to stay accurate as a grows
        let a = self.a;
        self.y1 + 2.0 * a * ((x + self.x1 - 2.0 * self.x0) / (2.0 * a)).sinh() * ((x - self.x1) / (2.0 * a)).sinh()
    }

    /// Arc length between `xa` and `xb`.
    pub fn arc_length(&self, xa: f64, xb: f64) -> f64 {
        self.a * (((xb - self.x0) / self.a).sinh() - ((xa - self.x0) / self.a).sinh())
    }
}

/// Catenary through `p1` and `p2` with arc length `length`.
pub fn catenary_reference(p1: [f64; 2], p2: [f64; 2], length: f64) -> Result<Catenary> {
    let (p1, p2) = if p1[0] <= p2[0] { (p1, p2) } else { (p2, p1) };
    let h = p2[0] - p1[0];
    let v = p2[1] - p1[1];
    let chord = (h * h + v * v).sqrt();
    if !(length > chord) || h <= 0.0 {
        return Err(Error::Infeasible(format!(
            "arc length {length} does not exceed the chord {chord} (or the chord is vertical)"
        )));
    }
    // sinh(b) / b = r with b = h / (2a)
    let r = (length * length - v * v).sqrt() / h;
    let g = |b: f64| b.sinh() - r * b;
    let (mut lo, mut hi) = (0.0, 1.0);
    while g(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    let mut b = if r < 1.5 { (6.0 * (r - 1.0)).sqrt().clamp(lo, hi) } else { 0.5 * (lo + hi) };
    for _ in 0..200 {
        let gb = g(b);
        if gb.abs() <= 1e-15 * r * b {
            break;
        }
        if gb > 0.0 {
            hi = b;
        } else {
            lo = b;
        }
        let next = b - gb / (b.cosh() - r);
        b = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    let a = h / (2.0 * b);
    let x0 = 0.5 * (p1[0] + p2[0]) - a * (v / length).atanh();
    let y0 = p1[1] - a * ((p1[0] - x0) / a).cosh();
    Ok(Catenary { a, x0, y0, x1: p1[0], y1: p1[1] })
}

/// Displacement at a point of the bulk mesh (located by search).
/// Points just outside a curved boundary take the value at the closest
/// boundary point.
pub fn displacement_at(mesh: &Mesh, u: &[f64], x: &Vec3) -> Result<Vec3> {
    let d = mesh.dim();
    let (e, r) = mesh
        .locate_near(x, 1e-2 * mesh.diameter())
        .ok_or_else(|| Error::Contract(format!("point {:?} is outside the mesh", x.as_slice())))?;
    let eval = mesh.reference().eval(&r)?;
    let mut out = Vec3::zeros();
    for (a, &n) in mesh.element(e).iter().enumerate() {
        for i in 0..d {
            out[i] += eval.values[a] * u[n * d + i];
        }
    }
    Ok(out)
}

/// Largest vertical distance of `points` from the catenary.
pub fn catenary_deviation(cat: &Catenary, points: &[Vec3]) -> f64 {
    points.iter().fold(0.0f64, |m, p| m.max((p[1] - cat.y(p[0])).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levelset::{DomainSpec, FieldSpec};
    use crate::mesh::circle_in_disk_angles;

    fn xc() -> [f64; 2] {
        [-0.3 * 25f64.to_radians().sin(), 0.3 * 25f64.to_radians().cos()]
    }

    fn tc1_field(interval: Option<[f64; 2]>) -> LevelSetField {
        let c = xc();
        LevelSetField::new(2, FieldSpec::Radial { center: [c[0], c[1], 0.0], radius: 0.3 }, interval).unwrap()
    }

    fn disk(x: &Vec3) -> f64 {
        DomainSpec::Ball { center: [0.0; 3], radius: 0.28 }.eval(2, x).0
    }

    fn opts() -> TraceOptions {
        TraceOptions { step: 0.005, ..TraceOptions::default() }
    }

    #[test]
    fn traced_circle_arc() {
        let field = tc1_field(None);
        for c in [-0.2, 0.0, 0.15, 0.27] {
            let curve = trace_levelset(&field, &disk, c, &Vec3::zeros(), &opts()).unwrap();
            let ctr = Vec3::new(xc()[0], xc()[1], 0.0);
            for p in &curve.points {
                assert!(((p - ctr).norm() - (0.3 + c)).abs() < 1e-10);
            }
            let (a, b) = curve.endpoints();
            assert!(disk(&a).abs() < 1e-10 && disk(&b).abs() < 1e-10);
            let (b1, b2) = circle_in_disk_angles(0.28, xc(), 0.3 + c).unwrap();
            let exact = (0.3 + c) * (b2 - b1);
            assert!((curve.length() - exact).abs() < 1e-8, "{c}: {} {exact}", curve.length());
        }
    }

    #[test]
    fn levels_outside_the_interval_are_rejected() {
        let field = tc1_field(Some([-0.15, 0.15]));
        assert!(trace_levelset(&field, &disk, 0.2, &Vec3::zeros(), &opts()).is_err());
        // no part of the level set lies in the disk
        let field = tc1_field(None);
        assert!(trace_levelset(&field, &disk, 0.4, &Vec3::zeros(), &opts()).is_err());
    }

    #[test]
    fn unloaded_rope_stays_put() {
        let field = tc1_field(None);
        let curve = trace_levelset(&field, &disk, 0.05, &Vec3::zeros(), &opts()).unwrap();
        let sol = surface_fem_rope_solve(
            &curve,
            &field,
            &RopeMeshOptions { n_el: 8, order: 4 },
            &MaterialParams::rope(1e4),
            &Vec3::zeros(),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(sol.u.iter().all(|v| *v == 0.0));
        assert!((sol.deformed_length - curve.length()).abs() < 1e-9 * curve.length());
    }

    #[test]
    fn symmetric_catenary() {
        let cat = catenary_reference([-1.0, 0.0], [1.0, 0.0], 2.5).unwrap();
        assert!((2.0 * cat.a * (1.0 / cat.a).sinh() - 2.5).abs() < 1e-12);
        assert!(cat.x0.abs() < 1e-15);
        assert!(cat.y(1.0).abs() < 1e-12 && cat.y(-1.0).abs() < 1e-12);
        assert!((cat.arc_length(-1.0, 1.0) - 2.5).abs() < 1e-10);
    }

    #[test]
    fn skewed_catenary_and_chord_limit() {
        let cat = catenary_reference([0.3, 0.2], [-0.5, -0.1], 1.4).unwrap();
        assert!((cat.arc_length(-0.5, 0.3) - 1.4).abs() < 1e-10);
        assert!((cat.y(0.3) - 0.2).abs() < 1e-12 && (cat.y(-0.5) + 0.1).abs() < 1e-12);
        let chord = (0.8f64 * 0.8 + 0.3 * 0.3).sqrt();
        let flat = catenary_reference([0.3, 0.2], [-0.5, -0.1], chord * (1.0 + 1e-12)).unwrap();
        for x in [-0.4, 0.0, 0.2] {
            let line = -0.1 + (x + 0.5) * 0.3 / 0.8;
            assert!((flat.y(x) - line).abs() < 1e-5);
        }
        assert!(matches!(catenary_reference([0.0, 0.0], [1.0, 0.0], 0.9), Err(Error::Infeasible(_))));
    }

    #[test]
    fn stiff_rope_hangs_as_catenary() {
        let field = tc1_field(None);
        let curve = trace_levelset(&field, &disk, -0.07, &Vec3::zeros(), &opts()).unwrap();
        let materials: Vec<MaterialParams> = [1e4, 1e6, 1e8, 1e10].iter().map(|e| MaterialParams::rope(*e)).collect();
        let sol = stiff_rope_solve(
            &curve,
            &field,
            &RopeMeshOptions { n_el: 16, order: 4 },
            &materials,
            &Vec3::new(0.0, -100.0, 0.0),
            &SolverOptions::default(),
        )
        .unwrap();
        let (a, b) = curve.endpoints();
        let cat = catenary_reference([a[0], a[1]], [b[0], b[1]], curve.length()).unwrap();
        let dev = catenary_deviation(&cat, &sol.deformed_nodes());
        assert!(dev < 1e-4, "{dev}");
        assert!((sol.deformed_length - curve.length()).abs() < 1e-6 * curve.length());
    }

    #[test]
    fn gauss_sum_of_rope_energies_matches_reference() {
        let field = tc1_field(None);
        let (sum, levels) = gauss_sum_over_levels(
            &field,
            &disk,
            &Vec3::zeros(),
            [-0.15, 0.15],
            20,
            &opts(),
            &RopeMeshOptions { n_el: 16, order: 4 },
            &MaterialParams::rope(1e4),
            &Vec3::new(0.0, -100.0, 0.0),
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(levels.len(), 20);
        let reference = 7.792649686407e-3;
        assert!((sum - reference).abs() < 1e-6 * reference, "{sum}");
    }
}
