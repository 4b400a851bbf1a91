//! Reference Lagrange elements with equally spaced nodes and Gauss rules.
//!
//! Node ordering is fixed:
//! - line: `r = -1 + 2i/p`, `i = 0..=p`;
//! - quadrilateral / hexahedron: tensor lattice, `r` fastest, then `s`, then `t`;
//! - triangle (vertices `(0,0)`, `(1,0)`, `(0,1)`): rows of constant `s`
//!   bottom to top, each row left to right, i.e. node `(i/p, j/p)` has index
//!   `sum_{jj<j}(p+1-jj) + i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DOMAIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Line,
    Triangle,
    #[serde(alias = "quad")]
    Quadrilateral,
    #[serde(alias = "hex")]
    Hexahedron,
}

impl Shape {
    pub fn dim(self) -> usize {
        match self {
            Shape::Line => 1,
            Shape::Triangle | Shape::Quadrilateral => 2,
            Shape::Hexahedron => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::Line => "line",
            Shape::Triangle => "triangle",
            Shape::Quadrilateral => "quadrilateral",
            Shape::Hexahedron => "hexahedron",
        }
    }

    /// Shape of the boundary facets.
    pub fn facet_shape(self) -> Option<Shape> {
        match self {
            Shape::Line => None,
            Shape::Triangle | Shape::Quadrilateral => Some(Shape::Line),
            Shape::Hexahedron => Some(Shape::Quadrilateral),
        }
    }
}

/// Shape function values and reference derivatives at one point.
/// Unused trailing components of `grads` / `hessians` are zero.
#[derive(Debug, Clone)]
pub struct ShapeEval {
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 3]>,
    pub hessians: Vec<[[f64; 3]; 3]>,
}

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceElement {
    shape: Shape,
    order: usize,
    nodes: Vec<[f64; 3]>,
    /// Integer lattice coordinates of each node (triangle: `(i, j)`).
    lattice: Vec<[usize; 3]>,
}

/// Value, first and second derivative of a product of affine factors
/// `prod (a_q x + b_q)`.
fn affine_product(factors: impl Iterator<Item = (f64, f64)>, x: f64) -> (f64, f64, f64) {
    let (mut v, mut d1, mut d2) = (1.0, 0.0, 0.0);
    for (a, b) in factors {
        let f = a * x + b;
        d2 = d2 * f + 2.0 * d1 * a;
        d1 = d1 * f + v * a;
        v *= f;
    }
    (v, d1, d2)
}

/// 1D Lagrange polynomial `i` on equally spaced nodes of `[-1, 1]`.
fn lagrange_1d(order: usize, i: usize, x: f64) -> (f64, f64, f64) {
    let node = |k: usize| -1.0 + 2.0 * k as f64 / order as f64;
    let xi = node(i);
    affine_product(
        (0..=order).filter(|&j| j != i).map(|j| {
            let xj = node(j);
            (1.0 / (xi - xj), -xj / (xi - xj))
        }),
        x,
    )
}

/// Barycentric lattice factor `prod_{q<m} (p*l - q)/(q+1)`.
fn lattice_factor(order: usize, m: usize, l: f64) -> (f64, f64, f64) {
    let p = order as f64;
    affine_product(
        (0..m).map(|q| (p / (q as f64 + 1.0), -(q as f64) / (q as f64 + 1.0))),
        l,
    )
}

impl ReferenceElement {
    pub fn new(dim: usize, shape: Shape, order: usize) -> Result<Self> {
        if shape.dim() != dim {
            return Err(Error::Config(format!(
                "shape {} is not {dim}-dimensional",
                shape.name()
            )));
        }
        if !(1..=6).contains(&order) {
            return Err(Error::Config(format!(
                "element order {order} unsupported for {} (1..=6)",
                shape.name()
            )));
        }
        let p = order;
        let coord = |k: usize| -1.0 + 2.0 * k as f64 / p as f64;
        let mut nodes = Vec::new();
        let mut lattice = Vec::new();
        match shape {
            Shape::Line => {
                for i in 0..=p {
                    nodes.push([coord(i), 0.0, 0.0]);
                    lattice.push([i, 0, 0]);
                }
            }
            Shape::Quadrilateral => {
                for j in 0..=p {
                    for i in 0..=p {
                        nodes.push([coord(i), coord(j), 0.0]);
                        lattice.push([i, j, 0]);
                    }
                }
            }
            Shape::Hexahedron => {
                for k in 0..=p {
                    for j in 0..=p {
                        for i in 0..=p {
                            nodes.push([coord(i), coord(j), coord(k)]);
                            lattice.push([i, j, k]);
                        }
                    }
                }
            }
            Shape::Triangle => {
                for j in 0..=p {
                    for i in 0..=(p - j) {
                        nodes.push([i as f64 / p as f64, j as f64 / p as f64, 0.0]);
                        lattice.push([i, j, 0]);
                    }
                }
            }
        }
        Ok(Self {
            shape,
            order,
            nodes,
            lattice,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn lattice(&self) -> &[[usize; 3]] {
        &self.lattice
    }

    /// Local index of the node with the given lattice coordinates.
    pub fn lattice_index(&self, l: [usize; 3]) -> usize {
        let p = self.order;
        match self.shape {
            Shape::Line => l[0],
            Shape::Quadrilateral => l[0] + (p + 1) * l[1],
            Shape::Hexahedron => l[0] + (p + 1) * (l[1] + (p + 1) * l[2]),
            Shape::Triangle => (0..l[1]).map(|jj| p + 1 - jj).sum::<usize>() + l[0],
        }
    }

    pub fn contains(&self, r: &[f64; 3]) -> bool {
        let d = self.dim();
        match self.shape {
            Shape::Triangle => {
                r[0] >= -DOMAIN_TOL && r[1] >= -DOMAIN_TOL && r[0] + r[1] <= 1.0 + DOMAIN_TOL
            }
            _ => r[..d].iter().all(|x| x.abs() <= 1.0 + DOMAIN_TOL),
        }
    }

    /// Reference-domain centroid.
    pub fn center(&self) -> [f64; 3] {
        match self.shape {
            Shape::Triangle => [1.0 / 3.0, 1.0 / 3.0, 0.0],
            _ => [0.0; 3],
        }
    }

    pub fn eval(&self, r: &[f64; 3]) -> Result<ShapeEval> {
        if !self.contains(r) {
            return Err(Error::OutsideReferenceDomain {
                shape: self.shape.name(),
                point: *r,
            });
        }
        Ok(self.eval_unchecked(r))
    }

    /// Same as [`eval`](Self::eval) without the domain check; used by
    /// Newton searches that may step slightly outside.
    pub fn eval_unchecked(&self, r: &[f64; 3]) -> ShapeEval {
        let n = self.n_nodes();
        let mut values = vec![0.0; n];
        let mut grads = vec![[0.0; 3]; n];
        let mut hessians = vec![[[0.0; 3]; 3]; n];
        let p = self.order;
        match self.shape {
            Shape::Line | Shape::Quadrilateral | Shape::Hexahedron => {
                let d = self.dim();
                // Per-direction 1D tables.
                let tables: Vec<Vec<(f64, f64, f64)>> = (0..d)
                    .map(|k| (0..=p).map(|i| lagrange_1d(p, i, r[k])).collect())
                    .collect();
                for (a, l) in self.lattice.iter().enumerate() {
                    let f: Vec<(f64, f64, f64)> = (0..d).map(|k| tables[k][l[k]]).collect();
                    let mut v = 1.0;
                    for fk in &f {
                        v *= fk.0;
                    }
                    values[a] = v;
                    for m in 0..d {
                        let mut g = 1.0;
                        for (k, fk) in f.iter().enumerate() {
                            g *= if k == m { fk.1 } else { fk.0 };
                        }
                        grads[a][m] = g;
                        for q in 0..d {
                            let mut h = 1.0;
                            for (k, fk) in f.iter().enumerate() {
                                h *= match (k == m, k == q) {
                                    (true, true) => fk.2,
                                    (true, false) | (false, true) => fk.1,
                                    (false, false) => fk.0,
                                };
                            }
                            hessians[a][m][q] = h;
                        }
                    }
                }
            }
            Shape::Triangle => {
                let l3 = 1.0 - r[0] - r[1];
                for (a, l) in self.lattice.iter().enumerate() {
                    let (i, j) = (l[0], l[1]);
                    let k = p - i - j;
                    let (ti, ti1, ti2) = lattice_factor(p, i, r[0]);
                    let (tj, tj1, tj2) = lattice_factor(p, j, r[1]);
                    let (tk, tk1, tk2) = lattice_factor(p, k, l3);
                    values[a] = ti * tj * tk;
                    grads[a][0] = ti1 * tj * tk - ti * tj * tk1;
                    grads[a][1] = ti * tj1 * tk - ti * tj * tk1;
                    let hrr = ti2 * tj * tk - 2.0 * ti1 * tj * tk1 + ti * tj * tk2;
                    let hss = ti * tj2 * tk - 2.0 * ti * tj1 * tk1 + ti * tj * tk2;
                    let hrs = ti1 * tj1 * tk - ti1 * tj * tk1 - ti * tj1 * tk1 + ti * tj * tk2;
                    hessians[a][0][0] = hrr;
                    hessians[a][1][1] = hss;
                    hessians[a][0][1] = hrs;
                    hessians[a][1][0] = hrs;
                }
            }
        }
        ShapeEval {
            values,
            grads,
            hessians,
        }
    }

    /// Gauss rule exact at least up to `degree`; `degree == 0` selects the
    /// default `2p + 1`.
    pub fn quadrature(&self, degree: usize) -> QuadratureRule {
        let degree = if degree == 0 { 2 * self.order + 1 } else { degree };
        make_quadrature(self.shape, degree)
    }

    pub fn n_facets(&self) -> usize {
        match self.shape {
            Shape::Line => 2,
            Shape::Triangle => 3,
            Shape::Quadrilateral => 4,
            Shape::Hexahedron => 6,
        }
    }

    /// Reference element of the facets (same order).
    pub fn facet_element(&self) -> Option<ReferenceElement> {
        self.shape
            .facet_shape()
            .map(|s| ReferenceElement::new(s.dim(), s, self.order).expect("facet element"))
    }

    /// Local node indices of facet `f`, ordered like the nodes of
    /// [`facet_element`](Self::facet_element).
    pub fn facet_nodes(&self, f: usize) -> Vec<usize> {
        let p = self.order;
        match self.shape {
            Shape::Line => vec![if f == 0 { 0 } else { p }],
            Shape::Quadrilateral => (0..=p)
                .map(|t| {
                    let l = match f {
                        0 => [t, 0, 0],
                        1 => [p, t, 0],
                        2 => [t, p, 0],
                        _ => [0, t, 0],
                    };
                    self.lattice_index(l)
                })
                .collect(),
            Shape::Triangle => (0..=p)
                .map(|t| {
                    let l = match f {
                        0 => [t, 0, 0],
                        1 => [p - t, t, 0],
                        _ => [0, p - t, 0],
                    };
                    self.lattice_index(l)
                })
                .collect(),
            Shape::Hexahedron => {
                let mut out = Vec::with_capacity((p + 1) * (p + 1));
                for b in 0..=p {
                    for a in 0..=p {
                        let l = match f {
                            0 => [a, b, 0],
                            1 => [a, b, p],
                            2 => [a, 0, b],
                            3 => [a, p, b],
                            4 => [0, a, b],
                            _ => [p, a, b],
                        };
                        out.push(self.lattice_index(l));
                    }
                }
                out
            }
        }
    }

    /// Maps facet reference coordinates to element reference coordinates and
    /// returns the Jacobian columns `dr/dt_k`.
    pub fn facet_map(&self, f: usize, t: &[f64; 3]) -> ([f64; 3], [[f64; 3]; 2]) {
        let (a, b) = (t[0], t[1]);
        match self.shape {
            Shape::Line => ([if f == 0 { -1.0 } else { 1.0 }, 0.0, 0.0], [[0.0; 3]; 2]),
            Shape::Quadrilateral => match f {
                0 => ([a, -1.0, 0.0], [[1.0, 0.0, 0.0], [0.0; 3]]),
                1 => ([1.0, a, 0.0], [[0.0, 1.0, 0.0], [0.0; 3]]),
                2 => ([a, 1.0, 0.0], [[1.0, 0.0, 0.0], [0.0; 3]]),
                _ => ([-1.0, a, 0.0], [[0.0, 1.0, 0.0], [0.0; 3]]),
            },
            Shape::Triangle => {
                let u = 0.5 * (a + 1.0);
                match f {
                    0 => ([u, 0.0, 0.0], [[0.5, 0.0, 0.0], [0.0; 3]]),
                    1 => ([1.0 - u, u, 0.0], [[-0.5, 0.5, 0.0], [0.0; 3]]),
                    _ => ([0.0, 1.0 - u, 0.0], [[0.0, -0.5, 0.0], [0.0; 3]]),
                }
            }
            Shape::Hexahedron => {
                let e = |k: usize| {
                    let mut v = [0.0; 3];
                    v[k] = 1.0;
                    v
                };
                match f {
                    0 => ([a, b, -1.0], [e(0), e(1)]),
                    1 => ([a, b, 1.0], [e(0), e(1)]),
                    2 => ([a, -1.0, b], [e(0), e(2)]),
                    3 => ([a, 1.0, b], [e(0), e(2)]),
                    4 => ([-1.0, a, b], [e(1), e(2)]),
                    _ => ([1.0, a, b], [e(1), e(2)]),
                }
            }
        }
    }

    /// Outward normal of facet `f` in reference coordinates (not normalized
    /// for the triangle hypotenuse).
    pub fn facet_reference_normal(&self, f: usize) -> [f64; 3] {
        match self.shape {
            Shape::Line => [if f == 0 { -1.0 } else { 1.0 }, 0.0, 0.0],
            Shape::Quadrilateral => match f {
                0 => [0.0, -1.0, 0.0],
                1 => [1.0, 0.0, 0.0],
                2 => [0.0, 1.0, 0.0],
                _ => [-1.0, 0.0, 0.0],
            },
            Shape::Triangle => match f {
                0 => [0.0, -1.0, 0.0],
                1 => [1.0, 1.0, 0.0],
                _ => [-1.0, 0.0, 0.0],
            },
            Shape::Hexahedron => match f {
                0 => [0.0, 0.0, -1.0],
                1 => [0.0, 0.0, 1.0],
                2 => [0.0, -1.0, 0.0],
                3 => [0.0, 1.0, 0.0],
                4 => [-1.0, 0.0, 0.0],
                _ => [1.0, 0.0, 0.0],
            },
        }
    }
}

/// Gauss-Legendre rule with `n` points on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            }
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            // p1 = P_n(z), p0 = P_{n-1}(z)
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            z = 0.0;
            dp = 1.0;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n == 1 {
        w[0] = 2.0;
    }
    (x, w)
}

pub fn make_quadrature(shape: Shape, degree: usize) -> QuadratureRule {
    let degree = degree.max(1);
    let n = (degree + 2) / 2; // 2n - 1 >= degree
    let (x, w) = gauss_legendre(n);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    match shape {
        Shape::Line => {
            for i in 0..n {
                points.push([x[i], 0.0, 0.0]);
                weights.push(w[i]);
            }
        }
        Shape::Quadrilateral => {
            for j in 0..n {
                for i in 0..n {
                    points.push([x[i], x[j], 0.0]);
                    weights.push(w[i] * w[j]);
                }
            }
        }
        Shape::Hexahedron => {
            for k in 0..n {
                for j in 0..n {
                    for i in 0..n {
                        points.push([x[i], x[j], x[k]]);
                        weights.push(w[i] * w[j] * w[k]);
                    }
                }
            }
        }
        Shape::Triangle => {
            // Collapsed square: the Jacobian adds one degree in the second direction.
            let m = (degree + 3) / 2;
            let (xa, wa) = gauss_legendre(n);
            let (xb, wb) = gauss_legendre(m);
            for j in 0..m {
                let eta = 0.5 * (xb[j] + 1.0);
                for i in 0..n {
                    let xi = 0.5 * (xa[i] + 1.0);
                    points.push([xi * (1.0 - eta), eta, 0.0]);
                    weights.push(0.25 * wa[i] * wb[j] * (1.0 - eta));
                }
            }
        }
    }
    QuadratureRule {
        points,
        weights,
        degree,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_elements() -> Vec<ReferenceElement> {
        let mut out = Vec::new();
        for p in 1..=6 {
            out.push(ReferenceElement::new(1, Shape::Line, p).unwrap());
            out.push(ReferenceElement::new(2, Shape::Triangle, p).unwrap());
            out.push(ReferenceElement::new(2, Shape::Quadrilateral, p).unwrap());
            out.push(ReferenceElement::new(3, Shape::Hexahedron, p).unwrap());
        }
        out
    }

    /// Small deterministic LCG so the tests do not depend on an RNG crate.
    struct Lcg(u64);
    impl Lcg {
        fn next(&mut self) -> f64 {
            self.0 = self
                .0
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (self.0 >> 11) as f64 / (1u64 << 53) as f64
        }
        fn point(&mut self, e: &ReferenceElement) -> [f64; 3] {
            loop {
                let mut r = [0.0; 3];
                for k in 0..e.dim() {
                    r[k] = match e.shape() {
                        Shape::Triangle => self.next(),
                        _ => 2.0 * self.next() - 1.0,
                    };
                }
                if e.contains(&r) {
                    return r;
                }
            }
        }
    }

    #[test]
    fn linear_line_element() {
        let e = ReferenceElement::new(1, Shape::Line, 1).unwrap();
        assert_eq!(e.nodes(), &[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let ev = e.eval(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(ev.values, vec![0.5, 0.5]);
        let ev = e.eval(&[0.3, 0.0, 0.0]).unwrap();
        assert!((ev.values[0] - (1.0 - 0.3) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn node_counts() {
        let q = ReferenceElement::new(2, Shape::Quadrilateral, 2).unwrap();
        assert_eq!(q.n_nodes(), 9);
        let t = ReferenceElement::new(2, Shape::Triangle, 6).unwrap();
        assert_eq!(t.n_nodes(), 28);
        let h = ReferenceElement::new(3, Shape::Hexahedron, 3).unwrap();
        assert_eq!(h.n_nodes(), 64);
    }

    #[test]
    fn unsupported_combinations() {
        assert!(ReferenceElement::new(2, Shape::Hexahedron, 1).is_err());
        assert!(ReferenceElement::new(2, Shape::Quadrilateral, 7).is_err());
        assert!(ReferenceElement::new(1, Shape::Line, 0).is_err());
    }

    #[test]
    fn outside_domain_is_rejected() {
        let t = ReferenceElement::new(2, Shape::Triangle, 2).unwrap();
        assert!(t.eval(&[0.8, 0.8, 0.0]).is_err());
        let q = ReferenceElement::new(2, Shape::Quadrilateral, 2).unwrap();
        assert!(q.eval(&[1.1, 0.0, 0.0]).is_err());
    }

    #[test]
    fn kronecker_property() {
        for e in all_elements() {
            for (j, rj) in e.nodes().iter().enumerate() {
                let ev = e.eval(rj).unwrap();
                for (i, v) in ev.values.iter().enumerate() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((v - expect).abs() < 1e-11, "{:?} p={}", e.shape(), e.order());
                }
            }
        }
    }

    #[test]
    fn partition_of_unity_and_gradient_sum() {
        let mut rng = Lcg(7);
        for e in all_elements() {
            for _ in 0..100 {
                let r = rng.point(&e);
                let ev = e.eval(&r).unwrap();
                let s: f64 = ev.values.iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "{:?} p={} sum={s}", e.shape(), e.order());
                for k in 0..3 {
                    let g: f64 = ev.grads.iter().map(|g| g[k]).sum();
                    assert!(g.abs() < 1e-10, "{:?} p={} grad sum {g}", e.shape(), e.order());
                }
            }
        }
    }

    #[test]
    fn triangle_p6_partition_of_unity_50_points() {
        let e = ReferenceElement::new(2, Shape::Triangle, 6).unwrap();
        let mut rng = Lcg(99);
        for _ in 0..50 {
            let ev = e.eval(&rng.point(&e)).unwrap();
            assert!((ev.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Lcg(3);
        let h = 1e-6;
        for e in all_elements() {
            let n = if e.shape() == Shape::Quadrilateral && e.order() == 3 { 20 } else { 5 };
            for _ in 0..n {
                // keep the stencil inside the domain
                let mut r = rng.point(&e);
                for x in r.iter_mut().take(e.dim()) {
                    *x *= 0.9;
                }
                if e.shape() == Shape::Triangle {
                    r[0] = 0.05 + 0.4 * r[0];
                    r[1] = 0.05 + 0.4 * r[1];
                }
                let ev = e.eval(&r).unwrap();
                for k in 0..e.dim() {
                    let mut rp = r;
                    let mut rm = r;
                    rp[k] += h;
                    rm[k] -= h;
                    let vp = e.eval(&rp).unwrap();
                    let vm = e.eval(&rm).unwrap();
                    for a in 0..e.n_nodes() {
                        let fd = (vp.values[a] - vm.values[a]) / (2.0 * h);
                        assert!(
                            (fd - ev.grads[a][k]).abs() < 1e-7 * (1.0 + ev.grads[a][k].abs()),
                            "{:?} p={}",
                            e.shape(),
                            e.order()
                        );
                        // hessian row k vs difference of gradients
                        for m in 0..e.dim() {
                            let fd2 = (vp.grads[a][m] - vm.grads[a][m]) / (2.0 * h);
                            assert!(
                                (fd2 - ev.hessians[a][m][k]).abs()
                                    < 1e-6 * (1.0 + ev.hessians[a][m][k].abs()),
                                "hessian {:?} p={}",
                                e.shape(),
                                e.order()
                            );
                            assert_eq!(ev.hessians[a][m][k], ev.hessians[a][k][m]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn two_point_gauss_rule() {
        let q = make_quadrature(Shape::Line, 3);
        assert_eq!(q.len(), 2);
        assert!((q.weights.iter().sum::<f64>() - 2.0).abs() < 1e-15);
        assert!((q.points[1][0] - 1.0 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn quad_rule_degree_5_monomial() {
        let q = make_quadrature(Shape::Quadrilateral, 5);
        assert_eq!(q.len(), 9);
        let v: f64 = q
            .points
            .iter()
            .zip(&q.weights)
            .map(|(p, w)| w * p[0].powi(2) * p[1].powi(4))
            .sum();
        assert!((v - 4.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn triangle_rule_area() {
        let q = make_quadrature(Shape::Triangle, 4);
        assert!((q.weights.iter().sum::<f64>() - 0.5).abs() < 1e-15);
        assert!(q.weights.iter().all(|w| *w > 0.0));
    }

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    /// Exact integral of a monomial over the reference domain.
    fn exact_monomial(shape: Shape, e: [u32; 3]) -> f64 {
        let line = |k: u32| if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
        match shape {
            Shape::Line => line(e[0]),
            Shape::Quadrilateral => line(e[0]) * line(e[1]),
            Shape::Hexahedron => line(e[0]) * line(e[1]) * line(e[2]),
            Shape::Triangle => factorial(e[0]) * factorial(e[1]) / factorial(e[0] + e[1] + 2),
        }
    }

    #[test]
    fn quadrature_monomial_exactness() {
        for shape in [Shape::Line, Shape::Triangle, Shape::Quadrilateral, Shape::Hexahedron] {
            for degree in 1..=13 {
                let q = make_quadrature(shape, degree);
                assert!(q.weights.iter().all(|w| *w > 0.0));
                let d = shape.dim();
                let mut exps = Vec::new();
                for a in 0..=degree as u32 {
                    for b in 0..=(if d > 1 { degree as u32 - a } else { 0 }) {
                        for c in 0..=(if d > 2 { degree as u32 - a - b } else { 0 }) {
                            exps.push([a, b, c]);
                        }
                    }
                }
                for e in exps {
                    let v: f64 = q
                        .points
                        .iter()
                        .zip(&q.weights)
                        .map(|(p, w)| {
                            w * p[0].powi(e[0] as i32) * p[1].powi(e[1] as i32) * p[2].powi(e[2] as i32)
                        })
                        .sum();
                    let ex = exact_monomial(shape, e);
                    let tol = 1e-12 * ex.abs().max(1e-3);
                    assert!((v - ex).abs() <= tol, "{shape:?} deg {degree} {e:?}: {v} vs {ex}");
                }
            }
        }
    }

    #[test]
    fn default_degree_is_2p_plus_1() {
        let e = ReferenceElement::new(2, Shape::Quadrilateral, 3).unwrap();
        assert_eq!(e.quadrature(0).degree, 7);
    }

    #[test]
    fn facet_nodes_lie_on_facets() {
        for e in all_elements().into_iter().filter(|e| e.dim() > 1) {
            let fe = e.facet_element().unwrap();
            for f in 0..e.n_facets() {
                let nodes = e.facet_nodes(f);
                assert_eq!(nodes.len(), fe.n_nodes());
                for (k, &a) in nodes.iter().enumerate() {
                    let (r, _) = e.facet_map(f, &fe.nodes()[k]);
                    for c in 0..3 {
                        assert!((r[c] - e.nodes()[a][c]).abs() < 1e-14);
                    }
                }
            }
        }
    }
}
