//! Curved isoparametric meshes of the undeformed bulk domain.
//!
//! Built-in geometries are assembled from structured blocks: each block is a
//! smooth map from the unit parameter square/cube, refined uniformly, with
//! higher-order nodes placed at equally spaced parameter values. Shared nodes
//! between blocks are merged by position.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, Vec3};
use crate::refelem::{QuadratureRule, ReferenceElement, Shape, ShapeEval};

pub const FORMAT: &str = "btf-mesh-1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryFacet {
    pub elem: usize,
    pub facet: usize,
    pub tag: String,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    elem: ReferenceElement,
    nodes: Vec<[f64; 3]>,
    elements: Vec<Vec<usize>>,
    boundary: Vec<BoundaryFacet>,
}

/// Geometry at one reference point of an element.
#[derive(Debug, Clone)]
pub struct ElementMap {
    pub x: Vec3,
    /// `J[(i, j)] = dX_i / dr_j`.
    pub jac: Mat3,
    pub det: f64,
    pub jinv_t: Mat3,
    /// `d2x[m][(j, k)] = d^2 X_m / dr_j dr_k`.
    pub d2x: [Mat3; 3],
}

#[derive(Debug, Clone)]
pub struct FacetPoint {
    /// Element reference coordinates.
    pub r: [f64; 3],
    pub x: Vec3,
    /// Quadrature weight times surface measure.
    pub weight: f64,
    /// Outward unit normal.
    pub normal: Vec3,
}

#[derive(Debug, Clone)]
pub struct FacetFrame {
    pub elem: usize,
    pub facet: usize,
    pub points: Vec<FacetPoint>,
}

/// Shape functions tabulated at the points of a quadrature rule.
#[derive(Debug, Clone)]
pub struct QuadCache {
    pub rule: QuadratureRule,
    pub evals: Vec<ShapeEval>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeshFile {
    format: String,
    dim: usize,
    shape: Shape,
    order: usize,
    nodes: Vec<Vec<f64>>,
    elements: Vec<Vec<usize>>,
    boundary: Vec<BoundaryFacet>,
}

/// Tags whose facets coincide with a level set of the structure field.
pub fn is_levelset_tag(tag: &str) -> bool {
    tag.starts_with("levelset")
}

impl Mesh {
    pub fn new(
        dim: usize,
        elem: ReferenceElement,
        nodes: Vec<[f64; 3]>,
        elements: Vec<Vec<usize>>,
        boundary: Vec<BoundaryFacet>,
    ) -> Result<Self> {
        if elem.dim() != dim {
            return Err(Error::Config(format!(
                "element dimension {} does not match mesh dimension {dim}",
                elem.dim()
            )));
        }
        let npe = elem.n_nodes();
        for (e, conn) in elements.iter().enumerate() {
            if conn.len() != npe {
                return Err(Error::Config(format!(
                    "element {e} has {} nodes, expected {npe}",
                    conn.len()
                )));
            }
            if let Some(bad) = conn.iter().find(|&&i| i >= nodes.len()) {
                return Err(Error::Config(format!(
                    "element {e} references node {bad} of {}",
                    nodes.len()
                )));
            }
        }
        for b in &boundary {
            if b.elem >= elements.len() || b.facet >= elem.n_facets() {
                return Err(Error::Config(format!(
                    "boundary facet ({}, {}) out of range",
                    b.elem, b.facet
                )));
            }
        }
        Ok(Self {
            dim,
            elem,
            nodes,
            elements,
            boundary,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.elem.order()
    }

    pub fn reference(&self) -> &ReferenceElement {
        &self.elem
    }

    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn element(&self, e: usize) -> &[usize] {
        &self.elements[e]
    }

    pub fn elements(&self) -> &[Vec<usize>] {
        &self.elements
    }

    pub fn boundary(&self) -> &[BoundaryFacet] {
        &self.boundary
    }

    pub fn tags(&self) -> Vec<String> {
        let mut tags: Vec<String> = self.boundary.iter().map(|b| b.tag.clone()).collect();
        tags.sort();
        tags.dedup();
        tags
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.boundary.iter().any(|b| b.tag == tag)
    }

    /// Node ids on facets carrying `tag`, sorted and unique.
    pub fn tagged_nodes(&self, tag: &str) -> Vec<usize> {
        let mut out = Vec::new();
        for b in self.boundary.iter().filter(|b| b.tag == tag) {
            let conn = &self.elements[b.elem];
            out.extend(self.elem.facet_nodes(b.facet).into_iter().map(|a| conn[a]));
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn quadrature(&self, degree: usize) -> QuadCache {
        let rule = self.elem.quadrature(degree);
        let evals = rule
            .points
            .iter()
            .map(|r| self.elem.eval_unchecked(r))
            .collect();
        QuadCache { rule, evals }
    }

    /// Isoparametric map of element `e` at the point where `eval` was taken.
    pub fn map_eval(&self, e: usize, eval: &ShapeEval, r: &[f64; 3]) -> Result<ElementMap> {
        let d = self.dim;
        let conn = &self.elements[e];
        let mut x = Vec3::zeros();
        let mut jac = Mat3::zeros();
        let mut d2x = [Mat3::zeros(); 3];
        for (a, &node) in conn.iter().enumerate() {
            let xa = &self.nodes[node];
            let g = &eval.grads[a];
            let h = &eval.hessians[a];
            for i in 0..d {
                x[i] += eval.values[a] * xa[i];
                for j in 0..d {
                    jac[(i, j)] += xa[i] * g[j];
                    for k in 0..d {
                        d2x[i][(j, k)] += xa[i] * h[j][k];
                    }
                }
            }
        }
        let det = linalg::det(d, &jac);
        if det <= 0.0 || !det.is_finite() {
            return Err(Error::InvertedElement { elem: e, det, r: *r });
        }
        let jinv_t = linalg::inverse(d, &jac)
            .ok_or(Error::InvertedElement { elem: e, det, r: *r })?
            .transpose();
        Ok(ElementMap {
            x,
            jac,
            det,
            jinv_t,
            d2x,
        })
    }

    pub fn element_map(&self, e: usize, r: &[f64; 3]) -> Result<ElementMap> {
        let eval = self.elem.eval(r)?;
        self.map_eval(e, &eval, r)
    }

    /// Physical gradients `J^{-T} grad_r B_a` of all element functions.
    pub fn physical_grads(&self, map: &ElementMap, eval: &ShapeEval) -> Vec<Vec3> {
        let d = self.dim;
        eval.grads
            .iter()
            .map(|g| {
                let mut gr = Vec3::zeros();
                gr.as_mut_slice()[..d].copy_from_slice(&g[..d]);
                map.jinv_t * gr
            })
            .collect()
    }

    /// Physical Hessians of all element functions:
    /// `J^{-T} (H_r - sum_m dB/dX_m d2X_m/dr2) J^{-1}`.
    pub fn physical_hessians(
        &self,
        map: &ElementMap,
        eval: &ShapeEval,
        grads: &[Vec3],
    ) -> Vec<Mat3> {
        let d = self.dim;
        let jinv = map.jinv_t.transpose();
        eval.hessians
            .iter()
            .zip(grads)
            .map(|(h, g)| {
                let mut hr = Mat3::zeros();
                for j in 0..d {
                    for k in 0..d {
                        hr[(j, k)] = h[j][k];
                    }
                }
                for m in 0..d {
                    hr -= g[m] * map.d2x[m];
                }
                map.jinv_t * hr * jinv
            })
            .collect()
    }

    /// Facet quadrature with outward normals for all facets tagged `tag`.
    pub fn facet_frames(&self, tag: &str, degree: usize) -> Result<Vec<FacetFrame>> {
        if !self.has_tag(tag) {
            return Err(Error::Config(format!("unknown boundary tag '{tag}'")));
        }
        let fe = self
            .elem
            .facet_element()
            .ok_or_else(|| Error::Unsupported("facets of 1D meshes".into()))?;
        let rule = fe.quadrature(if degree == 0 { 2 * self.order() + 1 } else { degree });
        let mut frames = Vec::new();
        for b in self.boundary.iter().filter(|b| b.tag == tag) {
            let mut points = Vec::with_capacity(rule.len());
            for (t, w) in rule.points.iter().zip(&rule.weights) {
                let (r, dr) = self.elem.facet_map(b.facet, t);
                let map = self.element_map(b.elem, &r)?;
                let t1 = map.jac * Vec3::from(dr[0]);
                let measure = if self.dim == 2 {
                    t1.norm()
                } else {
                    t1.cross(&(map.jac * Vec3::from(dr[1]))).norm()
                };
                let n_ref = Vec3::from(self.elem.facet_reference_normal(b.facet));
                let m = map.jinv_t * n_ref;
                points.push(FacetPoint {
                    r,
                    x: map.x,
                    weight: w * measure,
                    normal: m / m.norm(),
                });
            }
            frames.push(FacetFrame {
                elem: b.elem,
                facet: b.facet,
                points,
            });
        }
        Ok(frames)
    }

    /// Checks `det J > 0` at every quadrature point.
    pub fn check_jacobians(&self, degree: usize) -> Result<()> {
        let q = self.quadrature(degree);
        for e in 0..self.n_elements() {
            for (r, ev) in q.rule.points.iter().zip(&q.evals) {
                self.map_eval(e, ev, r)?;
            }
        }
        Ok(())
    }

    /// Area (2D) or volume (3D) by quadrature.
    pub fn measure(&self, degree: usize) -> Result<f64> {
        let q = self.quadrature(degree);
        let mut total = 0.0;
        for e in 0..self.n_elements() {
            for ((r, ev), w) in q.rule.points.iter().zip(&q.evals).zip(&q.rule.weights) {
                total += w * self.map_eval(e, ev, r)?.det;
            }
        }
        Ok(total)
    }

    /// Diagonal of the axis-aligned bounding box of the nodes.
    pub fn diameter(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for x in &self.nodes {
            for k in 0..3 {
                lo[k] = lo[k].min(x[k]);
                hi[k] = hi[k].max(x[k]);
            }
        }
        (0..3).map(|k| (hi[k] - lo[k]).powi(2)).sum::<f64>().sqrt()
    }

    /// Finds the element and reference coordinates of a physical point.
    pub fn locate(&self, x: &Vec3) -> Option<(usize, [f64; 3])> {
        self.locate_near(x, 0.0)
    }

    /// Like [`Mesh::locate`], but falls back to the closest point of the
    /// closest element when `x` lies within `tol` outside the mesh, as
    /// happens for points on a curved boundary.
    pub fn locate_near(&self, x: &Vec3, tol: f64) -> Option<(usize, [f64; 3])> {
        let d = self.dim;
        let center = self.elem.center();
        let clamp = |r: &mut [f64; 3]| {
            for v in r.iter_mut().take(d) {
                *v = match self.elem.shape() {
                    Shape::Triangle => v.clamp(0.0, 1.0),
                    _ => v.clamp(-1.0, 1.0),
                };
            }
            if self.elem.shape() == Shape::Triangle && r[0] + r[1] > 1.0 {
                let s = r[0] + r[1];
                r[0] /= s;
                r[1] /= s;
            }
        };
        let mut best: Option<(f64, usize, [f64; 3])> = None;
        for (e, conn) in self.elements.iter().enumerate() {
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            for &n in conn {
                for k in 0..d {
                    lo[k] = lo[k].min(self.nodes[n][k]);
                    hi[k] = hi[k].max(self.nodes[n][k]);
                }
            }
            let pad = (0..d).map(|k| hi[k] - lo[k]).fold(0.0, f64::max) * 0.25 + tol;
            if (0..d).any(|k| x[k] < lo[k] - pad || x[k] > hi[k] + pad) {
                continue;
            }
            let mut r = center;
            for _ in 0..50 {
                let ev = self.elem.eval_unchecked(&r);
                let map = match self.map_eval(e, &ev, &r) {
                    Ok(m) => m,
                    Err(_) => break,
                };
                let dr = map.jinv_t.transpose() * (x - map.x);
                for k in 0..d {
                    r[k] += dr[k];
                    r[k] = r[k].clamp(-2.0, 2.0);
                }
                if dr.norm() < 1e-14 {
                    break;
                }
            }
            let inside = match self.elem.shape() {
                Shape::Triangle => r[0] >= -1e-9 && r[1] >= -1e-9 && r[0] + r[1] <= 1.0 + 1e-9,
                _ => r[..d].iter().all(|v| v.abs() <= 1.0 + 1e-9),
            };
            clamp(&mut r);
            let ev = self.elem.eval_unchecked(&r);
            let Ok(map) = self.map_eval(e, &ev, &r) else { continue };
            let dist = (map.x - x).norm();
            if inside && dist < 1e-10 * (1.0 + x.norm()) {
                return Some((e, r));
            }
            if dist <= tol && best.map_or(true, |b| dist < b.0) {
                best = Some((dist, e, r));
            }
        }
        best.map(|(_, e, r)| (e, r))
    }

    /// Interpolates a function at the nodes.
    pub fn interpolate<F: Fn(&Vec3) -> f64>(&self, f: F) -> Vec<f64> {
        self.nodes.iter().map(|x| f(&Vec3::from(*x))).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = String::new();
        s.push_str("{\n");
        s.push_str(&format!("\"format\": \"{FORMAT}\",\n"));
        s.push_str(&format!("\"dim\": {},\n", self.dim));
        s.push_str(&format!("\"shape\": \"{}\",\n", self.elem.shape().name()));
        s.push_str(&format!("\"order\": {},\n", self.order()));
        s.push_str("\"nodes\": [\n");
        for (i, x) in self.nodes.iter().enumerate() {
            let coords: Vec<String> = x[..self.dim].iter().map(|v| format!("{v:?}")).collect();
            let sep = if i + 1 < self.nodes.len() { "," } else { "" };
            s.push_str(&format!("[{}]{sep}\n", coords.join(", ")));
        }
        s.push_str("],\n\"elements\": [\n");
        for (i, conn) in self.elements.iter().enumerate() {
            let ids: Vec<String> = conn.iter().map(|v| v.to_string()).collect();
            let sep = if i + 1 < self.elements.len() { "," } else { "" };
            s.push_str(&format!("[{}]{sep}\n", ids.join(", ")));
        }
        s.push_str("],\n\"boundary\": [\n");
        for (i, b) in self.boundary.iter().enumerate() {
            let sep = if i + 1 < self.boundary.len() { "," } else { "" };
            s.push_str(&format!(
                "{{\"elem\": {}, \"facet\": {}, \"tag\": {}}}{sep}\n",
                b.elem,
                b.facet,
                serde_json::to_string(&b.tag).expect("string")
            ));
        }
        s.push_str("]\n}\n");
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MeshFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        let line_of = |key: &str, idx: usize| -> usize {
            text.lines()
                .position(|l| l.contains(&format!("\"{key}\"")))
                .map(|p| p + 2 + idx)
                .unwrap_or(0)
        };
        if file.format != FORMAT {
            return Err(Error::Parse {
                line: line_of("format", 0).saturating_sub(1),
                msg: format!("unknown format '{}'", file.format),
            });
        }
        let elem = ReferenceElement::new(file.dim, file.shape, file.order).map_err(|e| {
            Error::Parse {
                line: line_of("shape", 0).saturating_sub(1),
                msg: e.to_string(),
            }
        })?;
        let mut nodes = Vec::with_capacity(file.nodes.len());
        for (i, x) in file.nodes.iter().enumerate() {
            if x.len() != file.dim {
                return Err(Error::Parse {
                    line: line_of("nodes", i),
                    msg: format!("node {i} has {} coordinates, expected {}", x.len(), file.dim),
                });
            }
            let mut p = [0.0; 3];
            p[..file.dim].copy_from_slice(x);
            nodes.push(p);
        }
        for (i, conn) in file.elements.iter().enumerate() {
            if conn.len() != elem.n_nodes() {
                return Err(Error::Parse {
                    line: line_of("elements", i),
                    msg: format!("element {i} has {} nodes, expected {}", conn.len(), elem.n_nodes()),
                });
            }
            if let Some(bad) = conn.iter().find(|&&n| n >= nodes.len()) {
                return Err(Error::Parse {
                    line: line_of("elements", i),
                    msg: format!("element {i} references node {bad} but there are {} nodes", nodes.len()),
                });
            }
        }
        for (i, b) in file.boundary.iter().enumerate() {
            if b.elem >= file.elements.len() || b.facet >= elem.n_facets() {
                return Err(Error::Parse {
                    line: line_of("boundary", i),
                    msg: format!("boundary facet ({}, {}) out of range", b.elem, b.facet),
                });
            }
        }
        Mesh::new(file.dim, elem, nodes, file.elements, file.boundary)
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn import(path: &Path) -> Result<Self> {
        Mesh::from_json(&std::fs::read_to_string(path)?)
    }
}

/// A smooth map from the unit parameter box onto part of the domain.
pub struct Block<'a> {
    pub map: Box<dyn Fn(&[f64; 3]) -> [f64; 3] + Sync + 'a>,
    /// Elements per parameter direction.
    pub n: [usize; 3],
    /// Tags of the faces `s=0, s=1, t=0, t=1, u=0, u=1`; `None` for faces
    /// shared with another block.
    pub tags: [Option<String>; 6],
}

impl<'a> Block<'a> {
    pub fn new<F: Fn(&[f64; 3]) -> [f64; 3] + Sync + 'a>(
        map: F,
        n: [usize; 3],
        tags: [Option<&str>; 6],
    ) -> Self {
        Self {
            map: Box::new(map),
            n,
            tags: tags.map(|t| t.map(str::to_string)),
        }
    }
}

/// Spatial hash that merges points closer than `tol`.
struct NodeMerger {
    tol: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
    nodes: Vec<[f64; 3]>,
}

impl NodeMerger {
    fn new(tol: f64) -> Self {
        Self {
            tol,
            cells: HashMap::new(),
            nodes: Vec::new(),
        }
    }

    fn key(&self, x: &[f64; 3]) -> [i64; 3] {
        let c = 4.0 * self.tol;
        [
            (x[0] / c).floor() as i64,
            (x[1] / c).floor() as i64,
            (x[2] / c).floor() as i64,
        ]
    }

    fn insert(&mut self, x: [f64; 3]) -> usize {
        let k = self.key(&x);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &id in ids {
                            let y = &self.nodes[id];
                            let dist = ((x[0] - y[0]).powi(2)
                                + (x[1] - y[1]).powi(2)
                                + (x[2] - y[2]).powi(2))
                            .sqrt();
                            if dist <= self.tol {
                                return id;
                            }
                        }
                    }
                }
            }
        }
        let id = self.nodes.len();
        self.nodes.push(x);
        self.cells.entry(k).or_default().push(id);
        id
    }
}

fn block_jacobian_sign(dim: usize, block: &Block) -> f64 {
    let h = 1e-6;
    let c = [0.5, 0.5, 0.5];
    let mut jac = Mat3::zeros();
    for j in 0..dim {
        let mut p = c;
        let mut m = c;
        p[j] += h;
        m[j] -= h;
        let (xp, xm) = ((block.map)(&p), (block.map)(&m));
        for i in 0..dim {
            jac[(i, j)] = (xp[i] - xm[i]) / (2.0 * h);
        }
    }
    linalg::det(dim, &jac).signum()
}

/// Builds a conforming mesh from structured blocks. Blocks with negative
/// orientation are mirrored in their first parameter.
pub fn build_block_mesh(
    dim: usize,
    blocks: Vec<Block>,
    order: usize,
    triangles: bool,
) -> Result<Mesh> {
    let shape = match (dim, triangles) {
        (2, false) => Shape::Quadrilateral,
        (2, true) => Shape::Triangle,
        (3, false) => Shape::Hexahedron,
        _ => return Err(Error::Config(format!("no block elements for dim {dim}"))),
    };
    let elem = ReferenceElement::new(dim, shape, order)?;
    let p = order;
    // Merge tolerance relative to the domain size.
    let mut extent: f64 = 0.0;
    for b in &blocks {
        for corner in [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]] {
            let x = (b.map)(&corner);
            extent = extent.max(x.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
    }
    let mut merger = NodeMerger::new(1e-9 * extent.max(1.0));
    let mut elements = Vec::new();
    let mut boundary = Vec::new();

    for block in blocks {
        if block.n[..dim].iter().any(|&n| n == 0) {
            return Err(Error::Config("block element counts must be >= 1".into()));
        }
        let flip = block_jacobian_sign(dim, &block) < 0.0;
        let mut tags = block.tags.clone();
        if flip {
            tags.swap(0, 1);
        }
        let map = |s: &[f64; 3]| {
            let mut q = *s;
            if flip {
                q[0] = 1.0 - q[0];
            }
            (block.map)(&q)
        };
        let [nx, ny, nz] = [block.n[0], block.n[1], if dim == 3 { block.n[2] } else { 1 }];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let cell = [i, j, k];
                    let lo = [i as f64 / nx as f64, j as f64 / ny as f64, k as f64 / nz as f64];
                    let hs = [1.0 / nx as f64, 1.0 / ny as f64, 1.0 / nz as f64];
                    let on_face = |f: usize| -> Option<String> {
                        let axis = f / 2;
                        let at_end = if f % 2 == 0 {
                            cell[axis] == 0
                        } else {
                            cell[axis] + 1 == [nx, ny, nz][axis]
                        };
                        if at_end {
                            tags[f].clone()
                        } else {
                            None
                        }
                    };
                    match shape {
                        Shape::Quadrilateral | Shape::Hexahedron => {
                            let conn: Vec<usize> = elem
                                .lattice()
                                .iter()
                                .map(|l| {
                                    let mut s = [0.0; 3];
                                    for a in 0..dim {
                                        s[a] = lo[a] + hs[a] * l[a] as f64 / p as f64;
                                    }
                                    merger.insert(map(&s))
                                })
                                .collect();
                            let e = elements.len();
                            elements.push(conn);
                            // (block face, element facet)
                            let pairs: &[(usize, usize)] = if dim == 2 {
                                &[(0, 3), (1, 1), (2, 0), (3, 2)]
                            } else {
                                &[(0, 4), (1, 5), (2, 2), (3, 3), (4, 0), (5, 1)]
                            };
                            for &(face, facet) in pairs {
                                if let Some(tag) = on_face(face) {
                                    boundary.push(BoundaryFacet {
                                        elem: e,
                                        facet,
                                        tag,
                                    });
                                }
                            }
                        }
                        Shape::Triangle => {
                            let tris: [([f64; 2], [f64; 2], [f64; 2], usize, usize); 2] = [
                                ([0.0, 0.0], [1.0, 0.0], [0.0, 1.0], 2, 0),
                                ([1.0, 1.0], [0.0, 1.0], [1.0, 0.0], 3, 1),
                            ];
                            for (v0, v1, v2, face0, face2) in tris {
                                let conn: Vec<usize> = elem
                                    .lattice()
                                    .iter()
                                    .map(|l| {
                                        let (a, b) = (l[0] as f64 / p as f64, l[1] as f64 / p as f64);
                                        let u = v0[0] + a * (v1[0] - v0[0]) + b * (v2[0] - v0[0]);
                                        let v = v0[1] + a * (v1[1] - v0[1]) + b * (v2[1] - v0[1]);
                                        merger.insert(map(&[lo[0] + hs[0] * u, lo[1] + hs[1] * v, 0.0]))
                                    })
                                    .collect();
                                let e = elements.len();
                                elements.push(conn);
                                for (face, facet) in [(face0, 0), (face2, 2)] {
                                    if let Some(tag) = on_face(face) {
                                        boundary.push(BoundaryFacet {
                                            elem: e,
                                            facet,
                                            tag,
                                        });
                                    }
                                }
                            }
                        }
                        Shape::Line => unreachable!(),
                    }
                }
            }
        }
    }
    let mesh = Mesh::new(dim, elem, merger.nodes, elements, boundary)?;
    check_boundary_cover(&mesh)?;
    Ok(mesh)
}

/// Facets used by exactly one element must be exactly the tagged ones.
fn check_boundary_cover(mesh: &Mesh) -> Result<()> {
    let mut count: HashMap<Vec<usize>, usize> = HashMap::new();
    let elem = mesh.reference();
    for conn in mesh.elements() {
        for f in 0..elem.n_facets() {
            let mut key: Vec<usize> = elem.facet_nodes(f).into_iter().map(|a| conn[a]).collect();
            key.sort_unstable();
            *count.entry(key).or_default() += 1;
        }
    }
    let open = count.values().filter(|&&c| c == 1).count();
    let mut tagged = Vec::new();
    for b in mesh.boundary() {
        let conn = mesh.element(b.elem);
        let mut key: Vec<usize> = elem.facet_nodes(b.facet).into_iter().map(|a| conn[a]).collect();
        key.sort_unstable();
        if count.get(&key) != Some(&1) {
            return Err(Error::Config(format!(
                "tagged facet ({}, {}) is not on the mesh boundary",
                b.elem, b.facet
            )));
        }
        tagged.push(key);
    }
    tagged.sort();
    tagged.dedup();
    if tagged.len() != open || tagged.len() != mesh.boundary().len() {
        return Err(Error::Config(format!(
            "boundary tags cover {} of {open} boundary facets",
            tagged.len()
        )));
    }
    Ok(())
}

/// Point of the unit-square-plus-four-caps decomposition of a star-shaped
/// planar region. Block 0 is the central square `[-a, a]^2`; blocks 1..=4 blend
/// linearly from a square side (`t = 0`) to the outer curve
/// `radius(alpha) * (cos alpha, sin alpha)` (`t = 1`).
pub fn ogrid_point(block: usize, s: f64, t: f64, a: f64, radius: &dyn Fn(f64) -> f64) -> [f64; 2] {
    if block == 0 {
        return [a * (2.0 * s - 1.0), a * (2.0 * t - 1.0)];
    }
    let k = (block - 1) as f64;
    let rot = k * FRAC_PI_2;
    let (c, sn) = (rot.cos(), rot.sin());
    let sq = [a, a * (2.0 * s - 1.0)];
    let sq = [c * sq[0] - sn * sq[1], sn * sq[0] + c * sq[1]];
    let alpha = rot - FRAC_PI_4 + s * FRAC_PI_2;
    let rad = radius(alpha);
    let arc = [rad * alpha.cos(), rad * alpha.sin()];
    [(1.0 - t) * sq[0] + t * arc[0], (1.0 - t) * sq[1] + t * arc[1]]
}

/// Built-in geometries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometrySpec {
    /// Disk of given radius centred at the origin (O-grid of five blocks with
    /// `n` elements along each square side and `n_radial` across the caps).
    Disk {
        radius: f64,
        n: usize,
        #[serde(default)]
        n_radial: Option<usize>,
    },
    /// Part of the origin-centred disk between two circles around `center`.
    /// The circle sides are tagged `levelset_min`/`levelset_max`, the disk rim
    /// `rim`.
    CircleBand {
        disk_radius: f64,
        center: [f64; 2],
        rho_min: f64,
        rho_max: f64,
        n_level: usize,
        n_arc: usize,
    },
    /// Quarter annulus in the first quadrant; tags `inner`, `outer`,
    /// `bottom` (Y = 0) and `left` (X = 0).
    QuarterAnnulus {
        r_inner: f64,
        r_outer: f64,
        n_rad: usize,
        n_ang: usize,
    },
    /// Unit ball cut between two planes `z_min <= Z <= z_max`; tags
    /// `lateral`, `levelset_min`, `levelset_max`.
    SphericalSlab {
        z_min: f64,
        z_max: f64,
        n: usize,
        n_z: usize,
    },
    /// Full annulus; tags `inner`, `outer`.
    Ring {
        r_inner: f64,
        r_outer: f64,
        n_rad: usize,
        n_ang: usize,
    },
}

impl GeometrySpec {
    pub fn dim(&self) -> usize {
        match self {
            GeometrySpec::SphericalSlab { .. } => 3,
            _ => 2,
        }
    }

    /// Same geometry with element counts multiplied by `2^level`.
    pub fn refined(&self, level: u32) -> Self {
        let f = 1usize << level;
        let mut g = self.clone();
        match &mut g {
            GeometrySpec::Disk { n, n_radial, .. } => {
                *n *= f;
                if let Some(m) = n_radial {
                    *m *= f;
                }
            }
            GeometrySpec::CircleBand { n_level, n_arc, .. } => {
                *n_level *= f;
                *n_arc *= f;
            }
            GeometrySpec::QuarterAnnulus { n_rad, n_ang, .. }
            | GeometrySpec::Ring { n_rad, n_ang, .. } => {
                *n_rad *= f;
                *n_ang *= f;
            }
            GeometrySpec::SphericalSlab { n, n_z, .. } => {
                *n *= f;
                *n_z *= f;
            }
        }
        g
    }

    /// Analytic area or volume.
    pub fn exact_measure(&self) -> Option<f64> {
        match *self {
            GeometrySpec::Disk { radius, .. } => Some(PI * radius * radius),
            GeometrySpec::QuarterAnnulus {
                r_inner, r_outer, ..
            } => Some(0.25 * PI * (r_outer * r_outer - r_inner * r_inner)),
            GeometrySpec::Ring {
                r_inner, r_outer, ..
            } => Some(PI * (r_outer * r_outer - r_inner * r_inner)),
            GeometrySpec::SphericalSlab { z_min, z_max, .. } => {
                let f = |z: f64| z - z * z * z / 3.0;
                Some(PI * (f(z_max) - f(z_min)))
            }
            GeometrySpec::CircleBand { .. } => None,
        }
    }
}

/// Angular range `[beta1, beta2]` (around `center`) of the circle of radius
/// `rho` inside the origin-centred disk.
pub fn circle_in_disk_angles(disk_radius: f64, center: [f64; 2], rho: f64) -> Result<(f64, f64)> {
    let dc = (center[0] * center[0] + center[1] * center[1]).sqrt();
    let cos_delta = (rho * rho + dc * dc - disk_radius * disk_radius) / (2.0 * rho * dc);
    if !(cos_delta > -1.0 && cos_delta < 1.0) {
        return Err(Error::Config(format!(
            "circle of radius {rho} does not cross the disk boundary twice"
        )));
    }
    let delta = cos_delta.acos();
    let gamma0 = (-center[1]).atan2(-center[0]);
    Ok((gamma0 - delta, gamma0 + delta))
}

pub fn generate_mesh(spec: &GeometrySpec, order: usize, triangles: bool) -> Result<Mesh> {
    let pos = |n: usize, what: &str| -> Result<usize> {
        if n == 0 {
            Err(Error::Config(format!("{what} must be >= 1")))
        } else {
            Ok(n)
        }
    };
    match *spec {
        GeometrySpec::Disk {
            radius,
            n,
            n_radial,
        } => {
            let n = pos(n, "n")?;
            let m = pos(n_radial.unwrap_or(n), "n_radial")?;
            if radius <= 0.0 {
                return Err(Error::Config("disk radius must be positive".into()));
            }
            let a = 0.4 * radius;
            let blocks = (0..5)
                .map(|b| {
                    let counts = if b == 0 { [n, n, 1] } else { [n, m, 1] };
                    let tags = if b == 0 {
                        [None; 6]
                    } else {
                        [None, None, None, Some("rim"), None, None]
                    };
                    Block::new(
                        move |s| {
                            let x = ogrid_point(b, s[0], s[1], a, &|_| radius);
                            [x[0], x[1], 0.0]
                        },
                        counts,
                        tags,
                    )
                })
                .collect();
            build_block_mesh(2, blocks, order, triangles)
        }
        GeometrySpec::CircleBand {
            disk_radius,
            center,
            rho_min,
            rho_max,
            n_level,
            n_arc,
        } => {
            pos(n_level, "n_level")?;
            pos(n_arc, "n_arc")?;
            if !(rho_min > 0.0 && rho_max > rho_min) {
                return Err(Error::Config("circle band needs 0 < rho_min < rho_max".into()));
            }
            circle_in_disk_angles(disk_radius, center, rho_min)?;
            circle_in_disk_angles(disk_radius, center, rho_max)?;
            let block = Block::new(
                move |s| {
                    let rho = rho_min + s[0] * (rho_max - rho_min);
                    let (b1, b2) = circle_in_disk_angles(disk_radius, center, rho)
                        .expect("checked at the ends");
                    let beta = b1 + s[1] * (b2 - b1);
                    [center[0] + rho * beta.cos(), center[1] + rho * beta.sin(), 0.0]
                },
                [n_level, n_arc, 1],
                [
                    Some("levelset_min"),
                    Some("levelset_max"),
                    Some("rim"),
                    Some("rim"),
                    None,
                    None,
                ],
            );
            build_block_mesh(2, vec![block], order, triangles)
        }
        GeometrySpec::QuarterAnnulus {
            r_inner,
            r_outer,
            n_rad,
            n_ang,
        } => {
            pos(n_rad, "n_rad")?;
            pos(n_ang, "n_ang")?;
            if !(r_inner > 0.0 && r_outer > r_inner) {
                return Err(Error::Config("annulus needs 0 < r_inner < r_outer".into()));
            }
            let block = Block::new(
                move |s| {
                    let r = r_inner + s[0] * (r_outer - r_inner);
                    let th = s[1] * FRAC_PI_2;
                    [r * th.cos(), r * th.sin(), 0.0]
                },
                [n_rad, n_ang, 1],
                [
                    Some("inner"),
                    Some("outer"),
                    Some("bottom"),
                    Some("left"),
                    None,
                    None,
                ],
            );
            build_block_mesh(2, vec![block], order, triangles)
        }
        GeometrySpec::Ring {
            r_inner,
            r_outer,
            n_rad,
            n_ang,
        } => {
            pos(n_rad, "n_rad")?;
            pos(n_ang, "n_ang")?;
            if !(r_inner > 0.0 && r_outer > r_inner) {
                return Err(Error::Config("ring needs 0 < r_inner < r_outer".into()));
            }
            let blocks = (0..4)
                .map(|q| {
                    Block::new(
                        move |s| {
                            let r = r_inner + s[0] * (r_outer - r_inner);
                            let th = (q as f64 + s[1]) * FRAC_PI_2;
                            [r * th.cos(), r * th.sin(), 0.0]
                        },
                        [n_rad, n_ang, 1],
                        [Some("inner"), Some("outer"), None, None, None, None],
                    )
                })
                .collect();
            build_block_mesh(2, blocks, order, triangles)
        }
        GeometrySpec::SphericalSlab {
            z_min,
            z_max,
            n,
            n_z,
        } => {
            pos(n, "n")?;
            pos(n_z, "n_z")?;
            if !(z_min > -1.0 && z_max < 1.0 && z_min < z_max) {
                return Err(Error::Config("slab needs -1 < z_min < z_max < 1".into()));
            }
            if triangles {
                return Err(Error::Unsupported("tetrahedral meshes".into()));
            }
            let blocks = (0..5)
                .map(|b| {
                    let lateral = if b == 0 { None } else { Some("lateral") };
                    Block::new(
                        move |s| {
                            let z = z_min + s[2] * (z_max - z_min);
                            let rho = (1.0 - z * z).sqrt();
                            let x = ogrid_point(b, s[0], s[1], 0.4, &|_| 1.0);
                            [rho * x[0], rho * x[1], z]
                        },
                        [n, n, n_z],
                        [
                            None,
                            None,
                            None,
                            lateral,
                            Some("levelset_min"),
                            Some("levelset_max"),
                        ],
                    )
                })
                .collect();
            build_block_mesh(3, blocks, order, false)
        }
    }
}
