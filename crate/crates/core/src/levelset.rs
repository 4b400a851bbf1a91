//! Level-set fields, normals, projectors, conormals and a validity check for
//! level-set/domain combinations.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, Vec3};
use crate::mesh::{is_levelset_tag, Mesh};
use crate::refelem::Shape;

pub const DEFAULT_G_MIN: f64 = 1e-10;

/// Analytic scalar fields used as structure level sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// `|X - center| - radius`.
    Radial { center: [f64; 3], radius: f64 },
    /// `gradient . X + offset`.
    Linear { gradient: [f64; 3], offset: f64 },
    /// `coefficient * |X - center|^2`.
    Paraboloid { center: [f64; 3], coefficient: f64 },
    /// `scale * r - amplitude * sin(frequency * theta) + offset` in 2D with
    /// `r = |X - center|` and `theta = atan((Y - Yc) / (X - Xc))`.
    WavyRadial {
        center: [f64; 2],
        scale: f64,
        amplitude: f64,
        frequency: f64,
        offset: f64,
    },
}

/// Value, gradient and Hessian of a scalar field.
#[derive(Debug, Clone, Copy)]
pub struct FieldEval {
    pub value: f64,
    pub grad: Vec3,
    pub hess: Mat3,
}

fn radial_parts(d: usize, x: &Vec3, c: &Vec3) -> (f64, Vec3, Mat3) {
    let mut dx = x - c;
    for k in d..3 {
        dx[k] = 0.0;
    }
    let r = dx.norm();
    let e = dx / r;
    (r, e, (linalg::identity(d) - e * e.transpose()) / r)
}

impl FieldSpec {
    pub fn eval(&self, d: usize, x: &Vec3) -> FieldEval {
        match self {
            FieldSpec::Radial { center, radius } => {
                let (r, e, h) = radial_parts(d, x, &Vec3::from(*center));
                FieldEval {
                    value: r - radius,
                    grad: e,
                    hess: h,
                }
            }
            FieldSpec::Linear { gradient, offset } => {
                let mut g = Vec3::from(*gradient);
                for k in d..3 {
                    g[k] = 0.0;
                }
                FieldEval {
                    value: g.dot(x) + offset,
                    grad: g,
                    hess: Mat3::zeros(),
                }
            }
            FieldSpec::Paraboloid {
                center,
                coefficient,
            } => {
                let mut dx = x - Vec3::from(*center);
                for k in d..3 {
                    dx[k] = 0.0;
                }
                FieldEval {
                    value: coefficient * dx.norm_squared(),
                    grad: 2.0 * coefficient * dx,
                    hess: 2.0 * coefficient * linalg::identity(d),
                }
            }
            FieldSpec::WavyRadial {
                center,
                scale,
                amplitude,
                frequency,
                offset,
            } => {
                let (scale, amplitude, frequency, offset) = (*scale, *amplitude, *frequency, *offset);
                let c = Vec3::new(center[0], center[1], 0.0);
                let (r, e, hr) = radial_parts(2, x, &c);
                let (dx, dy) = (x[0] - c[0], x[1] - c[1]);
                let theta = (dy / dx).atan();
                let r2 = r * r;
                let gt = Vec3::new(-dy / r2, dx / r2, 0.0);
                let r4 = r2 * r2;
                let ht = Mat3::new(
                    2.0 * dx * dy / r4,
                    (dy * dy - dx * dx) / r4,
                    0.0,
                    (dy * dy - dx * dx) / r4,
                    -2.0 * dx * dy / r4,
                    0.0,
                    0.0,
                    0.0,
                    0.0,
                );
                let (s, cth) = ((frequency * theta).sin(), (frequency * theta).cos());
                FieldEval {
                    value: scale * r - amplitude * s + offset,
                    grad: scale * e - amplitude * frequency * cth * gt,
                    hess: scale * hr
                        - amplitude
                            * frequency
                            * (cth * ht - frequency * s * gt * gt.transpose()),
                }
            }
        }
    }
}

/// Analytic domain functions (negative inside).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    /// `|X - center| - radius`.
    Ball { center: [f64; 3], radius: f64 },
    /// `sum ((X_i - c_i)/a_i)^2 - 1`.
    Ellipsoid { center: [f64; 3], radii: [f64; 3] },
    /// Ellipse `(X/a)^2 + (Y/b)^2 - 1` plus the bell `1024 a^5 (1-a)^5` with
    /// `a = (r + R_B) / (2 R_B)`, `r = |X - X_B|`, zero outside `0 <= a <= 1`.
    EllipseWithBell {
        radii: [f64; 2],
        bell_center: [f64; 2],
        bell_radius: f64,
    },
}

impl DomainSpec {
    /// Value and gradient.
    pub fn eval(&self, d: usize, x: &Vec3) -> (f64, Vec3) {
        match self {
            DomainSpec::Ball { center, radius } => {
                let (r, e, _) = radial_parts(d, x, &Vec3::from(*center));
                (r - radius, e)
            }
            DomainSpec::Ellipsoid { center, radii } => {
                let mut v = -1.0;
                let mut g = Vec3::zeros();
                for k in 0..d {
                    let t = (x[k] - center[k]) / radii[k];
                    v += t * t;
                    g[k] = 2.0 * t / radii[k];
                }
                (v, g)
            }
            DomainSpec::EllipseWithBell {
                radii,
                bell_center,
                bell_radius,
            } => {
                let (tx, ty) = (x[0] / radii[0], x[1] / radii[1]);
                let mut v = tx * tx + ty * ty - 1.0;
                let mut g = Vec3::new(2.0 * tx / radii[0], 2.0 * ty / radii[1], 0.0);
                let (dx, dy) = (x[0] - bell_center[0], x[1] - bell_center[1]);
                let r = (dx * dx + dy * dy).sqrt();
                let a = (r + bell_radius) / (2.0 * bell_radius);
                if (0.0..=1.0).contains(&a) {
                    v += 1024.0 * a.powi(5) * (1.0 - a).powi(5);
                    if r > 0.0 {
                        let dfda = 1024.0
                            * (5.0 * a.powi(4) * (1.0 - a).powi(5) - 5.0 * a.powi(5) * (1.0 - a).powi(4));
                        let dadr = 1.0 / (2.0 * bell_radius);
                        g[0] += dfda * dadr * dx / r;
                        g[1] += dfda * dadr * dy / r;
                    }
                }
                (v, g)
            }
        }
    }
}

/// A structure field together with its admissible interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSetField {
    pub dim: usize,
    pub spec: FieldSpec,
    /// `[phi_min, phi_max]`; `None` means the range of the nodal values.
    #[serde(default)]
    pub interval: Option<[f64; 2]>,
    #[serde(default = "default_g_min")]
    pub g_min: f64,
}

fn default_g_min() -> f64 {
    DEFAULT_G_MIN
}

impl LevelSetField {
    pub fn new(dim: usize, spec: FieldSpec, interval: Option<[f64; 2]>) -> Result<Self> {
        if let Some([a, b]) = interval {
            if !(a < b) {
                return Err(Error::Config(format!("level-set interval [{a}, {b}] is empty")));
            }
        }
        Ok(Self {
            dim,
            spec,
            interval,
            g_min: DEFAULT_G_MIN,
        })
    }

    pub fn eval(&self, x: &Vec3) -> FieldEval {
        self.spec.eval(self.dim, x)
    }

    pub fn value(&self, x: &Vec3) -> f64 {
        self.eval(x).value
    }

    /// Nodal values of the interpolant `phi_h`.
    pub fn nodal(&self, mesh: &Mesh) -> Vec<f64> {
        mesh.interpolate(|x| self.value(x))
    }

    /// Analytic unit normal.
    pub fn normal(&self, x: &Vec3) -> Result<Vec3> {
        normal_from_gradient(&self.eval(x).grad, self.g_min)
    }

    /// Unit normal from the gradient of the interpolant at `r` in element `e`.
    pub fn normal_interpolated(&self, mesh: &Mesh, nodal: &[f64], e: usize, r: &[f64; 3]) -> Result<Vec3> {
        normal_from_gradient(&interpolant_gradient(mesh, nodal, e, r)?, self.g_min)
    }

    /// `[phi_min, phi_max]`, falling back to the nodal range.
    pub fn bounds(&self, nodal: &[f64]) -> (f64, f64) {
        match self.interval {
            Some([a, b]) => (a, b),
            None => nodal
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v))),
        }
    }
}

/// `grad phi_h = J^{-T} grad_r phi_h` at `r` in element `e`.
pub fn interpolant_gradient(mesh: &Mesh, nodal: &[f64], e: usize, r: &[f64; 3]) -> Result<Vec3> {
    let eval = mesh.reference().eval(r)?;
    let map = mesh.map_eval(e, &eval, r)?;
    let grads = mesh.physical_grads(&map, &eval);
    Ok(mesh
        .element(e)
        .iter()
        .zip(&grads)
        .fold(Vec3::zeros(), |acc, (&n, g)| acc + nodal[n] * g))
}

pub fn normal_from_gradient(g: &Vec3, g_min: f64) -> Result<Vec3> {
    let norm = g.norm();
    if !(norm > g_min) {
        return Err(Error::DegenerateLevelSet { norm, g_min });
    }
    Ok(g / norm)
}

fn check_unit(v: &Vec3, what: &str) -> Result<()> {
    if (v.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::Contract(format!("{what} is not a unit vector (|v| = {})", v.norm())));
    }
    Ok(())
}

/// `P = I - N (x) N` in `d` dimensions.
pub fn projector(d: usize, n: &Vec3) -> Result<Mat3> {
    check_unit(n, "normal")?;
    Ok(linalg::identity(d) - n * n.transpose())
}

/// Unit conormal `[-N_y, N_x]` of a curve in the plane.
pub fn conormal_2d(n: &Vec3) -> Result<Vec3> {
    check_unit(n, "normal")?;
    Ok(Vec3::new(-n[1], n[0], 0.0))
}

/// Unit conormal `N x M x N = M - (N.M) N`, normalized. Fails when the level
/// set touches the boundary tangentially.
pub fn conormal_3d(n: &Vec3, m: &Vec3) -> Result<Vec3> {
    check_unit(n, "normal")?;
    check_unit(m, "boundary normal")?;
    let cross = n.cross(m).norm();
    if cross <= 1e-8 {
        return Err(Error::ConormalUndefined { cross });
    }
    let q = m - n.dot(m) * n;
    Ok(q / q.norm())
}

/// Conormal oriented so that `Q . M >= 0`.
pub fn outward_conormal(d: usize, n: &Vec3, m: &Vec3) -> Result<Vec3> {
    if d == 2 {
        let q = conormal_2d(n)?;
        Ok(if q.dot(m) < 0.0 { -q } else { q })
    } else {
        conormal_3d(n, m)
    }
}

/// Outcome of the level-set/domain validity heuristics.
#[derive(Debug, Clone, Serialize)]
pub struct ValidityReport {
    pub valid: bool,
    pub interval: [f64; 2],
    /// Interior points where the interpolated gradient vanishes.
    pub critical_points: Vec<[f64; 3]>,
    /// Quadrature points with `|grad phi_h| < g_min`.
    pub small_gradient_points: usize,
    /// Boundary points where a level set touches a non-level-set boundary
    /// tangentially.
    pub tangential_contacts: Vec<[f64; 3]>,
    /// Minimum and maximum number of boundary intersections per sampled level.
    pub intersection_count_range: [usize; 2],
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct ValidityOptions {
    pub n_levels: usize,
    /// Fraction of the interval width treated as "at the extremes".
    pub end_margin: f64,
    /// Threshold on `|N x M|` below which contact counts as tangential.
    pub tangency_tol: f64,
}

impl Default for ValidityOptions {
    fn default() -> Self {
        Self {
            n_levels: 101,
            end_margin: 0.02,
            tangency_tol: 1e-6,
        }
    }
}

struct BoundarySample {
    x: Vec3,
    phi: f64,
    n: Option<Vec3>,
    m: Vec3,
}

fn sample_facet(
    mesh: &Mesh,
    nodal: &[f64],
    elem: usize,
    facet: usize,
    params: &[[f64; 3]],
    g_min: f64,
) -> Result<Vec<BoundarySample>> {
    let re = mesh.reference();
    let conn = mesh.element(elem);
    let n_ref = Vec3::from(re.facet_reference_normal(facet));
    let mut out = Vec::with_capacity(params.len());
    for t in params {
        let (r, _) = re.facet_map(facet, t);
        let eval = re.eval(&r)?;
        let map = mesh.map_eval(elem, &eval, &r)?;
        let grads = mesh.physical_grads(&map, &eval);
        let mut phi = 0.0;
        let mut g = Vec3::zeros();
        for (a, &node) in conn.iter().enumerate() {
            phi += nodal[node] * eval.values[a];
            g += nodal[node] * grads[a];
        }
        let m = map.jinv_t * n_ref;
        out.push(BoundarySample {
            x: map.x,
            phi,
            n: normal_from_gradient(&g, g_min).ok(),
            m: m / m.norm(),
        });
    }
    Ok(out)
}

/// Checks the three heuristics: interior critical points of `phi_h`,
/// tangential contact with the non-level-set boundary, and a varying number of
/// boundary intersections across sampled levels.
pub fn validate_levelset_domain(
    field: &LevelSetField,
    mesh: &Mesh,
    opts: &ValidityOptions,
) -> Result<ValidityReport> {
    let d = mesh.dim();
    let nodal = field.nodal(mesh);
    let (lo, hi) = field.bounds(&nodal);
    let margin = opts.end_margin * (hi - lo);
    let re = mesh.reference();
    let mut flags = Vec::new();

    // (a) critical points
    let mut small = 0;
    let q = mesh.quadrature(0);
    for e in 0..mesh.n_elements() {
        for (r, ev) in q.rule.points.iter().zip(&q.evals) {
            let map = mesh.map_eval(e, ev, r)?;
            let grads = mesh.physical_grads(&map, ev);
            let g = mesh
                .element(e)
                .iter()
                .zip(&grads)
                .fold(Vec3::zeros(), |acc, (&n, g)| acc + nodal[n] * g);
            if g.norm() < field.g_min {
                small += 1;
            }
        }
    }
    let mut critical = Vec::new();
    for e in 0..mesh.n_elements() {
        let conn = mesh.element(e);
        let mut r = re.center();
        let mut converged = false;
        for _ in 0..30 {
            let ev = re.eval_unchecked(&r);
            let mut g = Vec3::zeros();
            let mut h = Mat3::zeros();
            for (a, &node) in conn.iter().enumerate() {
                for j in 0..d {
                    g[j] += nodal[node] * ev.grads[a][j];
                    for k in 0..d {
                        h[(j, k)] += nodal[node] * ev.hessians[a][j][k];
                    }
                }
            }
            let Some(hinv) = linalg::inverse(d, &h) else { break };
            let dr = -(hinv * g);
            if !dr.iter().all(|v| v.is_finite()) {
                break;
            }
            for k in 0..d {
                r[k] += dr[k];
            }
            if r[..d].iter().any(|v| v.abs() > 3.0) {
                break;
            }
            if dr.norm() < 1e-12 {
                converged = true;
                break;
            }
        }
        let inside = match re.shape() {
            Shape::Triangle => r[0] >= -1e-9 && r[1] >= -1e-9 && r[0] + r[1] <= 1.0 + 1e-9,
            _ => r[..d].iter().all(|v| v.abs() <= 1.0 + 1e-9),
        };
        if converged && inside {
            let mut rr = r;
            for v in rr.iter_mut().take(d) {
                *v = if re.shape() == Shape::Triangle { v.clamp(0.0, 1.0) } else { v.clamp(-1.0, 1.0) };
            }
            let x = mesh.element_map(e, &rr)?.x;
            let xa = linalg::to_array(&x);
            if !critical
                .iter()
                .any(|c: &[f64; 3]| (Vec3::from(*c) - x).norm() < 1e-8 * (1.0 + x.norm()))
            {
                critical.push(xa);
            }
        }
    }
    if small > 0 || !critical.is_empty() {
        flags.push(format!(
            "interior critical points: {} located, {small} quadrature points below g_min",
            critical.len()
        ));
    }

    // Boundary samples, facet by facet.
    if d < 2 {
        return Err(Error::Unsupported("validity check for 1D meshes".into()));
    }
    let m_per = 2 * mesh.order() + 1;
    let params: Vec<[f64; 3]> = if d == 2 {
        (0..m_per)
            .map(|i| [-1.0 + 2.0 * i as f64 / (m_per - 1) as f64, 0.0, 0.0])
            .collect()
    } else {
        let mut v = Vec::new();
        for j in 0..m_per {
            for i in 0..m_per {
                let s = |k: usize| -1.0 + 2.0 * k as f64 / (m_per - 1) as f64;
                v.push([s(i), s(j), 0.0]);
            }
        }
        v
    };
    let facets: Vec<_> = mesh.boundary().to_vec();
    let mut samples = Vec::with_capacity(facets.len());
    for b in &facets {
        samples.push(sample_facet(mesh, &nodal, b.elem, b.facet, &params, field.g_min)?);
    }
    let interior = |phi: f64| phi > lo + margin && phi < hi - margin;

    // (b) tangential contact
    let mut contacts = Vec::new();
    let mut record = |x: &Vec3| {
        if !contacts
            .iter()
            .any(|c: &[f64; 3]| (Vec3::from(*c) - x).norm() < 1e-6 * (1.0 + x.norm()))
        {
            contacts.push(linalg::to_array(x));
        }
    };
    let signed_cross = |s: &BoundarySample| -> Option<f64> {
        s.n.map(|n| if d == 2 { n[0] * s.m[1] - n[1] * s.m[0] } else { n.cross(&s.m).norm() })
    };
    let loops = if d == 2 { boundary_loops(mesh)? } else { Vec::new() };
    if d == 2 {
        for lp in &loops {
            // Concatenate samples of non-level-set facets in loop order.
            let mut seq: Vec<Option<&BoundarySample>> = Vec::new();
            for &(fi, reversed) in lp {
                if is_levelset_tag(&facets[fi].tag) {
                    seq.push(None);
                    continue;
                }
                let s = &samples[fi];
                let order: Vec<usize> = if reversed {
                    (0..s.len()).rev().collect()
                } else {
                    (0..s.len()).collect()
                };
                for i in order {
                    seq.push(Some(&s[i]));
                }
            }
            let len = seq.len();
            for i in 0..len {
                let (Some(a), Some(b)) = (seq[i], seq[(i + 1) % len]) else { continue };
                // Skip corners where the boundary normal jumps.
                if (a.m - b.m).norm() > 0.1 {
                    continue;
                }
                let (Some(ca), Some(cb)) = (signed_cross(a), signed_cross(b)) else { continue };
                if ca.abs() < opts.tangency_tol && interior(a.phi) {
                    record(&a.x);
                } else if ca * cb < 0.0 && (interior(a.phi) || interior(b.phi)) {
                    record(&(0.5 * (a.x + b.x)));
                }
            }
        }
    } else {
        let tol3 = opts.tangency_tol.max(1e-3);
        for (fi, s) in samples.iter().enumerate() {
            if is_levelset_tag(&facets[fi].tag) {
                continue;
            }
            for p in s {
                if let Some(c) = signed_cross(p) {
                    if c < tol3 && interior(p.phi) {
                        record(&p.x);
                    }
                }
            }
        }
    }
    if !contacts.is_empty() {
        flags.push(format!("tangential boundary contact at {} points", contacts.len()));
    }

    // (c) boundary-intersection counts
    let n_lv = opts.n_levels.max(1);
    let mut cmin = usize::MAX;
    let mut cmax = 0;
    for k in 0..n_lv {
        let c = lo + (hi - lo) * (k as f64 + 0.5) / n_lv as f64;
        let count = if d == 2 {
            let mut count = 0;
            for lp in &loops {
                let mut vals = Vec::new();
                for &(fi, reversed) in lp {
                    let s = &samples[fi];
                    let mut v: Vec<f64> = s.iter().map(|p| p.phi - c).collect();
                    if reversed {
                        v.reverse();
                    }
                    vals.extend(v);
                }
                let nz: Vec<f64> = vals.into_iter().filter(|v| *v != 0.0).collect();
                for i in 0..nz.len() {
                    if nz[i] * nz[(i + 1) % nz.len()] < 0.0 {
                        count += 1;
                    }
                }
            }
            count
        } else {
            crossed_components(mesh, &facets, &samples, c, 1e-12 * (hi - lo))
        };
        cmin = cmin.min(count);
        cmax = cmax.max(count);
    }
    if cmin != cmax {
        flags.push(format!("boundary intersections per level vary between {cmin} and {cmax}"));
    }

    Ok(ValidityReport {
        valid: flags.is_empty(),
        interval: [lo, hi],
        critical_points: critical,
        small_gradient_points: small,
        tangential_contacts: contacts,
        intersection_count_range: [cmin, cmax],
        flags,
    })
}

/// Closed boundary loops of a 2D mesh as (facet index, walked backwards).
fn boundary_loops(mesh: &Mesh) -> Result<Vec<Vec<(usize, bool)>>> {
    let re = mesh.reference();
    let ends: Vec<(usize, usize)> = mesh
        .boundary()
        .iter()
        .map(|b| {
            let nodes = re.facet_nodes(b.facet);
            let conn = mesh.element(b.elem);
            (conn[nodes[0]], conn[*nodes.last().expect("facet nodes")])
        })
        .collect();
    let mut at: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &(a, b)) in ends.iter().enumerate() {
        at.entry(a).or_default().push(i);
        at.entry(b).or_default().push(i);
    }
    let mut used = vec![false; ends.len()];
    let mut loops = Vec::new();
    for start in 0..ends.len() {
        if used[start] {
            continue;
        }
        let mut lp = vec![(start, false)];
        used[start] = true;
        let mut node = ends[start].1;
        loop {
            let next = at
                .get(&node)
                .and_then(|v| v.iter().copied().find(|&f| !used[f]));
            let Some(f) = next else { break };
            used[f] = true;
            let reversed = ends[f].1 == node;
            node = if reversed { ends[f].0 } else { ends[f].1 };
            lp.push((f, reversed));
        }
        if node != ends[start].0 {
            return Err(Error::Validity("boundary facets do not form closed loops".into()));
        }
        loops.push(lp);
    }
    Ok(loops)
}

/// Number of connected groups of boundary facets crossed by level `c`.
fn crossed_components(
    mesh: &Mesh,
    facets: &[crate::mesh::BoundaryFacet],
    samples: &[Vec<BoundarySample>],
    c: f64,
    tol: f64,
) -> usize {
    let re = mesh.reference();
    let crossed: Vec<usize> = (0..facets.len())
        .filter(|&fi| {
            let s = &samples[fi];
            s.iter().any(|p| p.phi <= c + tol) && s.iter().any(|p| p.phi >= c - tol)
        })
        .collect();
    let mut parent: Vec<usize> = (0..crossed.len()).collect();
    fn find(p: &mut Vec<usize>, i: usize) -> usize {
        let mut i = i;
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let mut owner: HashMap<usize, usize> = HashMap::new();
    for (k, &fi) in crossed.iter().enumerate() {
        let b = &facets[fi];
        let conn = mesh.element(b.elem);
        for a in re.facet_nodes(b.facet) {
            let node = conn[a];
            if let Some(&other) = owner.get(&node) {
                let (ra, rb) = (find(&mut parent, k), find(&mut parent, other));
                parent[ra] = rb;
            } else {
                owner.insert(node, k);
            }
        }
    }
    (0..crossed.len())
        .filter(|&k| find(&mut parent, k) == k)
        .count()
}
