//! Assembly of the discrete weak form, sparse linear solves and Newton
//! iteration with load stepping.

use std::io::Write;

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::{Llt, Lu, SymbolicLlt, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::{Conj, Mat, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levelset::{normal_from_gradient, outward_conormal};
use nalgebra::DMatrix;

use crate::linalg::{self, Mat3, Vec3};
use crate::mechanics::{kinematics, pk2, MaterialParams};
use crate::mesh::{FacetFrame, Mesh, QuadCache};
use crate::refelem::{ReferenceElement, Shape};

/// Load factor and prestress scaling for one evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LoadContext {
    /// Scales body forces, tractions and prescribed displacements.
    pub load: f64,
    /// Multiplies each term's prestress.
    pub prestress: f64,
}

impl LoadContext {
    pub fn full() -> Self {
        Self { load: 1.0, prestress: 0.0 }
    }
}

/// Element residual `r` and row-major tangent `k` (empty when not requested),
/// local DOF `a * d + i` for node `a`, component `i`.
#[derive(Debug, Clone, Default)]
pub struct ElementOutput {
    pub nodes: Vec<usize>,
    pub r: Vec<f64>,
    pub k: Vec<f64>,
}

/// A contribution to the global system, split into independent items.
pub trait Term: Sync {
    fn n_items(&self) -> usize;
    fn nodes(&self, item: usize) -> Vec<usize>;
    fn evaluate(&self, item: usize, u: &[f64], ctx: &LoadContext, tangent: bool) -> Result<ElementOutput>;
}

/// Inputs of the SVK kernel at one quadrature point.
pub(crate) struct Kernel<'a> {
    pub d: usize,
    /// Projected gradients `P grad B_a`.
    pub g: &'a [Vec3],
    pub b: &'a [f64],
    pub f: &'a Mat3,
    /// Total second Piola-Kirchhoff stress (including any prestress).
    pub s: &'a Mat3,
    pub p: &'a Mat3,
    pub lambda: f64,
    pub mu: f64,
    pub w: f64,
    pub force: Vec3,
}

impl Kernel<'_> {
    /// Adds `w (K g_a - B_a f)` to `r` and the point's tangent factors to
    /// `k`.
    pub fn add(&self, r: &mut [f64], k: Option<&mut TangentAccumulator>) {
        let d = self.d;
        let kst = self.f * self.s;
        for (a, g) in self.g.iter().enumerate() {
            let kg = kst * g;
            for i in 0..d {
                r[a * d + i] += self.w * (kg[i] - self.b[a] * self.force[i]);
            }
        }
        let Some(k) = k else { return };
        // K_(a,i),(b,k) = sum_jl g_a[j] g_b[l] T^ik_jl with
        // T^ik_jl = w (lambda F_ij F_kl + mu F_kj F_il + mu C_ik delta_jl + S_jl delta_ik)
        let c = self.f * self.p * self.f.transpose();
        let w = self.w;
        let mut t = [[Mat3::zeros(); 3]; 3];
        for i in 0..d {
            let fi = self.f.row(i).transpose();
            for kk in 0..d {
                let fk = self.f.row(kk).transpose();
                let mut m = self.lambda * fi * fk.transpose() + self.mu * fk * fi.transpose();
                for j in 0..d {
                    m[(j, j)] += self.mu * c[(i, kk)];
                }
                if i == kk {
                    m += self.s;
                }
                t[i][kk] = w * m;
            }
        }
        k.push(self.g, &t);
    }
}

/// Element tangent built from per-point factors: with `G` the `n x (Q d)`
/// matrix of all point gradients, block `(i, k)` is `G D^ik G^T`.
pub(crate) struct TangentAccumulator {
    d: usize,
    cols: usize,
    g: DMatrix<f64>,
    h: Vec<DMatrix<f64>>,
}

impl TangentAccumulator {
    pub fn new(n: usize, d: usize, points: usize) -> Self {
        Self {
            d,
            cols: 0,
            g: DMatrix::zeros(n, points * d),
            h: (0..d * d).map(|_| DMatrix::zeros(n, points * d)).collect(),
        }
    }

    fn push(&mut self, g: &[Vec3], t: &[[Mat3; 3]; 3]) {
        let d = self.d;
        let off = self.cols;
        self.cols += d;
        for (a, ga) in g.iter().enumerate() {
            for j in 0..d {
                self.g[(a, off + j)] = ga[j];
            }
            for i in 0..d {
                for kk in 0..d {
                    let h = &mut self.h[i * d + kk];
                    let tm = &t[i][kk];
                    for l in 0..d {
                        let mut v = 0.0;
                        for j in 0..d {
                            v += ga[j] * tm[(j, l)];
                        }
                        h[(a, off + l)] = v;
                    }
                }
            }
        }
    }

    /// Adds the element tangent to the row-major `k`.
    pub fn finish(self, k: &mut [f64]) {
        let d = self.d;
        let n = self.g.nrows();
        let nd = n * d;
        let cols = self.cols;
        let gt = self.g.columns(0, cols).transpose();
        for i in 0..d {
            for kk in 0..d {
                let block = self.h[i * d + kk].columns(0, cols) * &gt;
                for a in 0..n {
                    let row = (a * d + i) * nd + kk;
                    for b in 0..n {
                        k[row + b * d] += block[(a, b)];
                    }
                }
            }
        }
    }
}

/// Displacement gradient `sum_a u_a (x) g_a`.
pub(crate) fn displacement_gradient(d: usize, nodes: &[usize], u: &[f64], grads: &[Vec3]) -> Mat3 {
    let mut gu = Mat3::zeros();
    for (a, &node) in nodes.iter().enumerate() {
        for i in 0..d {
            let ui = u[node * d + i];
            if ui != 0.0 {
                for j in 0..d {
                    gu[(i, j)] += ui * grads[a][j];
                }
            }
        }
    }
    gu
}

fn inverted(e: usize, r: [f64; 3], err: Error) -> Error {
    match err {
        Error::InvertedElement { det, .. } => Error::InvertedElement { elem: e, det, r },
        other => other,
    }
}

/// Ropes or membranes on all level sets of `phi_h` (the bulk trace term).
pub struct StructureTerm<'a> {
    pub mesh: &'a Mesh,
    pub phi: Vec<f64>,
    pub material: MaterialParams,
    /// Force per unit level-set measure.
    pub body_force: Vec3,
    /// Prestress magnitude `s0` added as `s0 P` (scaled by the context).
    pub prestress: f64,
    pub g_min: f64,
    cache: QuadCache,
    neumann: Vec<(FacetFrame, Vec3)>,
}

impl<'a> StructureTerm<'a> {
    pub fn new(
        mesh: &'a Mesh,
        phi: Vec<f64>,
        material: MaterialParams,
        body_force: Vec3,
        neumann: &[(String, Vec3)],
        g_min: f64,
    ) -> Result<Self> {
        if phi.len() != mesh.n_nodes() {
            return Err(Error::Contract("nodal level-set values do not match the mesh".into()));
        }
        material.validate()?;
        let mut frames = Vec::new();
        for (tag, h) in neumann {
            if crate::mesh::is_levelset_tag(tag) {
                return Err(Error::Config(format!("level-set boundary '{tag}' cannot carry tractions")));
            }
            for f in mesh.facet_frames(tag, 0)? {
                frames.push((f, *h));
            }
        }
        Ok(Self {
            mesh,
            phi,
            material,
            body_force,
            prestress: 1e-3 * material.young,
            g_min,
            cache: mesh.quadrature(0),
            neumann: frames,
        })
    }

    fn volume_item(&self, e: usize, u: &[f64], ctx: &LoadContext, tangent: bool) -> Result<ElementOutput> {
        let mesh = self.mesh;
        let d = mesh.dim();
        let nodes = mesh.element(e).to_vec();
        let nd = nodes.len() * d;
        let mut out = ElementOutput {
            r: vec![0.0; nd],
            k: if tangent { vec![0.0; nd * nd] } else { Vec::new() },
            nodes,
        };
        let (lambda, mu) = self.material.lame();
        let force = ctx.load * self.body_force;
        let mut acc = tangent.then(|| TangentAccumulator::new(out.nodes.len(), d, self.cache.rule.points.len()));
        for ((r, eval), wq) in self.cache.rule.points.iter().zip(&self.cache.evals).zip(&self.cache.rule.weights) {
            let map = mesh.map_eval(e, eval, r)?;
            let grads = mesh.physical_grads(&map, eval);
            let grad_phi = out
                .nodes
                .iter()
                .zip(&grads)
                .fold(Vec3::zeros(), |acc, (&n, g)| acc + self.phi[n] * g);
            normal_from_gradient(&grad_phi, self.g_min)?;
            let gu = displacement_gradient(d, &out.nodes, u, &grads);
            let st = kinematics(d, &gu, &grad_phi).map_err(|err| inverted(e, *r, err))?;
            let s = pk2(&st.green_tang, &st.p, &self.material) + ctx.prestress * self.prestress * st.p;
            let g: Vec<Vec3> = grads.iter().map(|g| st.p * g).collect();
            Kernel {
                d,
                g: &g,
                b: &eval.values,
                f: &st.f_surf,
                s: &s,
                p: &st.p,
                lambda,
                mu,
                w: wq * map.det * grad_phi.norm(),
                force,
            }
            .add(&mut out.r, acc.as_mut());
        }
        if let Some(acc) = acc {
            acc.finish(&mut out.k);
        }
        Ok(out)
    }

    fn neumann_item(&self, i: usize, ctx: &LoadContext) -> Result<ElementOutput> {
        let mesh = self.mesh;
        let d = mesh.dim();
        let (frame, h) = &self.neumann[i];
        let nodes = mesh.element(frame.elem).to_vec();
        let mut r = vec![0.0; nodes.len() * d];
        for fp in &frame.points {
            let eval = mesh.reference().eval(&fp.r)?;
            let map = mesh.map_eval(frame.elem, &eval, &fp.r)?;
            let grads = mesh.physical_grads(&map, &eval);
            let grad_phi = nodes
                .iter()
                .zip(&grads)
                .fold(Vec3::zeros(), |acc, (&n, g)| acc + self.phi[n] * g);
            let n = normal_from_gradient(&grad_phi, self.g_min)?;
            let q = outward_conormal(d, &n, &fp.normal)?;
            let w = ctx.load * fp.weight * q.dot(&fp.normal) * grad_phi.norm();
            for (a, ba) in eval.values.iter().enumerate() {
                for k in 0..d {
                    r[a * d + k] -= w * ba * h[k];
                }
            }
        }
        Ok(ElementOutput { nodes, r, k: Vec::new() })
    }
}

impl Term for StructureTerm<'_> {
    fn n_items(&self) -> usize {
        self.mesh.n_elements() + self.neumann.len()
    }

    fn nodes(&self, item: usize) -> Vec<usize> {
        let e = if item < self.mesh.n_elements() {
            item
        } else {
            self.neumann[item - self.mesh.n_elements()].0.elem
        };
        self.mesh.element(e).to_vec()
    }

    fn evaluate(&self, item: usize, u: &[f64], ctx: &LoadContext, tangent: bool) -> Result<ElementOutput> {
        let ne = self.mesh.n_elements();
        if item < ne {
            self.volume_item(item, u, ctx, tangent)
        } else {
            let mut out = self.neumann_item(item - ne, ctx)?;
            if tangent {
                let nd = out.r.len();
                out.k = vec![0.0; nd * nd];
            }
            Ok(out)
        }
    }
}

/// Classical rope elements along curves in the plane: 1D isoparametric
/// Lagrange elements whose nodes index a shared coordinate array.
pub struct LineRopeTerm<'a> {
    pub nodes: &'a [[f64; 3]],
    pub elements: Vec<Vec<usize>>,
    pub material: MaterialParams,
    /// Force per unit undeformed length.
    pub body_force: Vec3,
    pub prestress: f64,
    reference: ReferenceElement,
    cache: QuadCache,
}

impl<'a> LineRopeTerm<'a> {
    pub fn new(
        nodes: &'a [[f64; 3]],
        elements: Vec<Vec<usize>>,
        order: usize,
        material: MaterialParams,
        body_force: Vec3,
    ) -> Result<Self> {
        let reference = ReferenceElement::new(1, Shape::Line, order)?;
        if let Some(bad) = elements.iter().find(|e| e.len() != order + 1) {
            return Err(Error::Contract(format!("line element with {} nodes for order {order}", bad.len())));
        }
        let rule = reference.quadrature(0);
        let evals = rule.points.iter().map(|r| reference.eval_unchecked(r)).collect();
        Ok(Self {
            nodes,
            elements,
            material,
            body_force,
            prestress: 1e-3 * material.young,
            reference,
            cache: QuadCache { rule, evals },
        })
    }

    pub fn reference(&self) -> &ReferenceElement {
        &self.reference
    }

    /// Unit tangent, `|dX/dxi|` and physical derivatives `dB_a/ds` at a
    /// tabulated point.
    pub(crate) fn frame(&self, e: usize, q: usize) -> (Vec3, f64, Vec<f64>) {
        let eval = &self.cache.evals[q];
        let mut jac = Vec3::zeros();
        for (a, &n) in self.elements[e].iter().enumerate() {
            jac += eval.grads[a][0] * Vec3::from(self.nodes[n]);
        }
        let len = jac.norm();
        (jac / len, len, eval.grads.iter().map(|g| g[0] / len).collect())
    }

    pub fn quadrature(&self) -> &QuadCache {
        &self.cache
    }

    /// Position of point `q` of element `e`.
    pub(crate) fn point(&self, e: usize, q: usize) -> Vec3 {
        let eval = &self.cache.evals[q];
        self.elements[e]
            .iter()
            .zip(&eval.values)
            .fold(Vec3::zeros(), |acc, (&n, b)| acc + *b * Vec3::from(self.nodes[n]))
    }

    /// Total undeformed length of all elements.
    pub fn length(&self) -> f64 {
        let mut s = 0.0;
        for e in 0..self.elements.len() {
            for (q, w) in self.cache.rule.weights.iter().enumerate() {
                s += w * self.frame(e, q).1;
            }
        }
        s
    }

    /// Surface deformation gradient `I + sum_a u_a (x) t dB_a/ds`, projector
    /// `t (x) t` and shape gradients at point `q` of element `e`.
    pub(crate) fn kinematics(&self, e: usize, q: usize, u: &[f64]) -> (Mat3, Mat3, Vec<Vec3>, f64) {
        let (t, len, db) = self.frame(e, q);
        let g: Vec<Vec3> = db.iter().map(|v| *v * t).collect();
        let gu = displacement_gradient(2, &self.elements[e], u, &g);
        (linalg::identity(2) + gu, t * t.transpose(), g, len)
    }
}

impl Term for LineRopeTerm<'_> {
    fn n_items(&self) -> usize {
        self.elements.len()
    }

    fn nodes(&self, item: usize) -> Vec<usize> {
        self.elements[item].clone()
    }

    fn evaluate(&self, item: usize, u: &[f64], ctx: &LoadContext, tangent: bool) -> Result<ElementOutput> {
        let d = 2;
        let nodes = self.elements[item].clone();
        let nd = nodes.len() * d;
        let mut out = ElementOutput {
            r: vec![0.0; nd],
            k: if tangent { vec![0.0; nd * nd] } else { Vec::new() },
            nodes,
        };
        let (lambda, mu) = self.material.lame();
        let mut acc = tangent.then(|| TangentAccumulator::new(out.nodes.len(), d, self.cache.rule.weights.len()));
        for (q, wq) in self.cache.rule.weights.iter().enumerate() {
            let (f, p, g, len) = self.kinematics(item, q, u);
            let e_t = p * (0.5 * (f.transpose() * f - linalg::identity(d))) * p;
            let s = pk2(&e_t, &p, &self.material) + ctx.prestress * self.prestress * p;
            Kernel {
                d,
                g: &g,
                b: &self.cache.evals[q].values,
                f: &f,
                s: &s,
                p: &p,
                lambda,
                mu,
                w: wq * len,
                force: ctx.load * self.body_force,
            }
            .add(&mut out.r, acc.as_mut());
        }
        if let Some(acc) = acc {
            acc.finish(&mut out.k);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub n_steps: usize,
    pub tol_r: f64,
    pub tol_du: f64,
    pub max_iter: usize,
    pub max_bisections: usize,
    /// Accept a step whose residual is below `tol_stall (1 + |F_ext|)` but
    /// has stopped decreasing (the roundoff floor of very stiff problems).
    /// Zero disables the test.
    pub tol_stall: f64,
    /// Scales the regularizing prestress of each term (`1e-3 E` at scale 1)
    /// at zero load. The prestress vanishes at full load.
    pub prestress_scale: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            n_steps: 10,
            tol_r: 1e-10,
            tol_du: 1e-12,
            max_iter: 25,
            max_bisections: 8,
            tol_stall: 1e-4,
            prestress_scale: 1.0,
        }
    }
}

/// A boundary value problem: terms on shared nodal DOFs plus prescribed DOFs.
pub struct Bvp<'a> {
    pub dim: usize,
    pub n_nodes: usize,
    pub terms: Vec<Box<dyn Term + 'a>>,
    /// `(dof, value at full load)`.
    pub dirichlet: Vec<(usize, f64)>,
    pub options: SolverOptions,
}

/// Prescribed DOFs for all nodes on `tag`, all components.
pub fn dirichlet_on_tag(mesh: &Mesh, tag: &str, value: &Vec3) -> Result<Vec<(usize, f64)>> {
    if crate::mesh::is_levelset_tag(tag) {
        return Err(Error::Config(format!("level-set boundary '{tag}' cannot carry Dirichlet conditions")));
    }
    if !mesh.has_tag(tag) {
        return Err(Error::Config(format!("unknown boundary tag '{tag}'")));
    }
    let d = mesh.dim();
    Ok(mesh
        .tagged_nodes(tag)
        .into_iter()
        .flat_map(|n| (0..d).map(move |i| (n * d + i, value[i])))
        .collect())
}

/// Square sparse matrix in compressed-column form.
#[derive(Debug, Clone)]
pub struct CscMatrix {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            cols[j].push((i, v));
        }
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for mut c in cols {
            c.sort_by_key(|e| e.0);
            for (i, v) in c {
                if row_idx.len() > *col_ptr.last().unwrap() && *row_idx.last().unwrap() == i {
                    *values.last_mut().unwrap() += v;
                } else {
                    row_idx.push(i);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self { n, col_ptr, row_idx, values }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let rows = &self.row_idx[self.col_ptr[j]..self.col_ptr[j + 1]];
        rows.binary_search(&i).map(|p| self.values[self.col_ptr[j] + p]).unwrap_or(0.0)
    }

    /// Returns `(A x, |A| |x|)`.
    pub fn mul_abs(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut y = vec![0.0; self.n];
        let mut ya = vec![0.0; self.n];
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                y[self.row_idx[p]] += self.values[p] * x[j];
                ya[self.row_idx[p]] += (self.values[p] * x[j]).abs();
            }
        }
        (y, ya)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                m[self.row_idx[p]][j] = self.values[p];
            }
        }
        m
    }
}

/// Direct sparse solver that keeps the symbolic factorization for repeated
/// solves on one pattern.
#[derive(Default)]
pub struct LinearSolver {
    llt: Option<SymbolicLlt<usize>>,
    lu: Option<SymbolicLu<usize>>,
}

impl LinearSolver {
    pub fn solve(&mut self, a: &CscMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = a.n;
        if rhs.len() != n {
            return Err(Error::Contract("right-hand side length mismatch".into()));
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let sym = SymbolicSparseColMat::<usize>::new_checked(n, n, a.col_ptr.clone(), None, a.row_idx.clone());
        let mat = SparseColMatRef::new(sym.as_ref(), &a.values);
        let mut b = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
        let mut solved = false;
        if self.llt.is_none() {
            self.llt = SymbolicLlt::try_new(sym.as_ref(), Side::Lower).ok();
        }
        if let Some(s) = &self.llt {
            if let Ok(f) = Llt::try_new_with_symbolic(s.clone(), mat, Side::Lower) {
                f.solve_in_place_with_conj(Conj::No, b.as_mut());
                solved = Self::accept(a, rhs, &b);
            }
        }
        if !solved {
            if self.lu.is_none() {
                self.lu = Some(SymbolicLu::try_new(sym.as_ref()).map_err(|e| Error::Singular(format!("symbolic LU failed: {e:?}")))?);
            }
            let s = self.lu.clone().expect("symbolic LU");
            let f = Lu::try_new_with_symbolic(s, mat)
                .map_err(|e| Error::Singular(format!("LU factorization failed: {e:?}")))?;
            b = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
            f.solve_in_place_with_conj(Conj::No, b.as_mut());
            if !Self::accept(a, rhs, &b) {
                return Err(Error::Singular("solution not finite or residual too large".into()));
            }
        }
        Ok((0..n).map(|i| b[(i, 0)]).collect())
    }

    fn accept(a: &CscMatrix, rhs: &[f64], x: &Mat<f64>) -> bool {
        let xv: Vec<f64> = (0..a.n).map(|i| x[(i, 0)]).collect();
        if !xv.iter().all(|v| v.is_finite()) {
            return false;
        }
        let (ax, axa) = a.mul_abs(&xv);
        let res: f64 = ax.iter().zip(rhs).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        let scale: f64 = axa.iter().zip(rhs).map(|(p, q)| (p + q.abs()).powi(2)).sum::<f64>().sqrt();
        res <= 1e-8 * scale
    }
}

/// One-shot `A x = b`.
pub fn linear_solve(a: &CscMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    LinearSolver::default().solve(a, rhs)
}

/// Free-DOF numbering and the sparsity pattern of the free-free block.
pub struct System {
    pub dim: usize,
    pub n_dofs: usize,
    /// Global DOF to free index.
    pub free: Vec<Option<usize>>,
    pub n_free: usize,
    pattern: CscMatrix,
}

const CHUNK: usize = 512;

impl System {
    pub fn new(bvp: &Bvp) -> Result<Self> {
        let d = bvp.dim;
        let n_dofs = bvp.n_nodes * d;
        let mut fixed = vec![false; n_dofs];
        for &(dof, _) in &bvp.dirichlet {
            if dof >= n_dofs {
                return Err(Error::Contract(format!("prescribed DOF {dof} out of range")));
            }
            fixed[dof] = true;
        }
        let mut free = vec![None; n_dofs];
        let mut n_free = 0;
        for (k, f) in fixed.iter().enumerate() {
            if !f {
                free[k] = Some(n_free);
                n_free += 1;
            }
        }
        // node adjacency
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); bvp.n_nodes];
        for term in &bvp.terms {
            for item in 0..term.n_items() {
                let nodes = term.nodes(item);
                for &a in &nodes {
                    adj[a].extend_from_slice(&nodes);
                }
            }
            for list in adj.iter_mut() {
                list.sort_unstable();
                list.dedup();
            }
        }
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        for dof in 0..n_dofs {
            if free[dof].is_none() {
                continue;
            }
            for &nb in &adj[dof / d] {
                for i in 0..d {
                    if let Some(fr) = free[nb * d + i] {
                        row_idx.push(fr);
                    }
                }
            }
            col_ptr.push(row_idx.len());
        }
        let nnz = row_idx.len();
        Ok(Self {
            dim: d,
            n_dofs,
            free,
            n_free,
            pattern: CscMatrix { n: n_free, col_ptr, row_idx, values: vec![0.0; nnz] },
        })
    }

    /// Full residual over all DOFs and, optionally, the free-free tangent.
    pub fn assemble(
        &self,
        bvp: &Bvp,
        u: &[f64],
        ctx: &LoadContext,
        tangent: bool,
    ) -> Result<(Vec<f64>, Option<CscMatrix>)> {
        let d = self.dim;
        let mut r = vec![0.0; self.n_dofs];
        let mut mat = tangent.then(|| self.pattern.clone());
        for term in &bvp.terms {
            let n = term.n_items();
            let mut start = 0;
            while start < n {
                let end = (start + CHUNK).min(n);
                let outs: Vec<Result<ElementOutput>> =
                    (start..end).into_par_iter().map(|i| term.evaluate(i, u, ctx, tangent)).collect();
                for out in outs {
                    let out = out?;
                    let dofs: Vec<usize> = out
                        .nodes
                        .iter()
                        .flat_map(|&nd| (0..d).map(move |i| nd * d + i))
                        .collect();
                    for (l, &g) in dofs.iter().enumerate() {
                        r[g] += out.r[l];
                    }
                    if let (Some(m), false) = (mat.as_mut(), out.k.is_empty()) {
                        let nl = dofs.len();
                        for (lb, &gb) in dofs.iter().enumerate() {
                            let Some(cb) = self.free[gb] else { continue };
                            let (c0, c1) = (m.col_ptr[cb], m.col_ptr[cb + 1]);
                            for (la, &ga) in dofs.iter().enumerate() {
                                let Some(ra) = self.free[ga] else { continue };
                                let v = out.k[la * nl + lb];
                                if v == 0.0 {
                                    continue;
                                }
                                let pos = m.row_idx[c0..c1]
                                    .binary_search(&ra)
                                    .map_err(|_| Error::Contract("entry outside sparsity pattern".into()))?;
                                m.values[c0 + pos] += v;
                            }
                        }
                    }
                }
                start = end;
            }
        }
        Ok((r, mat))
    }

    pub fn free_part(&self, full: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_free];
        for (g, f) in self.free.iter().enumerate() {
            if let Some(f) = f {
                out[*f] = full[g];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub load: f64,
    pub iterations: usize,
    pub residual_norms: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionState {
    pub dim: usize,
    /// Nodal displacements, `d` entries per node.
    pub u: Vec<f64>,
    pub history: Vec<StepRecord>,
    pub final_residual: f64,
    /// Residual entries at prescribed DOFs, `(dof, reaction)`.
    pub reactions: Vec<(usize, f64)>,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// The last three residuals are all below `bound` and none improved on the
/// best earlier one by more than a factor of two.
fn stalled(norms: &[f64], bound: f64) -> bool {
    let n = norms.len();
    if bound <= 0.0 || n < 4 {
        return false;
    }
    let best = norms[..n - 3].iter().fold(f64::INFINITY, |a, v| a.min(*v));
    norms[n - 3..].iter().all(|v| *v < bound && *v > 0.5 * best)
}

/// Newton iteration with load stepping, step bisection and a prestress that
/// ramps from `s0` to zero. Writes one JSON line per iteration to `log`.
pub fn newton_solve(bvp: &Bvp, u0: Option<&[f64]>, mut log: Option<&mut dyn Write>) -> Result<SolutionState> {
    let opts = bvp.options;
    if opts.n_steps == 0 || opts.max_iter == 0 {
        return Err(Error::Config("n_steps and max_iter must be >= 1".into()));
    }
    let sys = System::new(bvp)?;
    let mut u = match u0 {
        Some(v) if v.len() == sys.n_dofs => v.to_vec(),
        Some(_) => return Err(Error::Contract("initial displacement length mismatch".into())),
        None => vec![0.0; sys.n_dofs],
    };
    let mut lin = LinearSolver::default();
    let zero = vec![0.0; sys.n_dofs];
    let (r_ext, _) = sys.assemble(bvp, &zero, &LoadContext::full(), false)?;
    let f_ext = norm2(&sys.free_part(&r_ext));
    let set_prescribed = |u: &mut [f64], t: f64| {
        for &(dof, v) in &bvp.dirichlet {
            u[dof] = t * v;
        }
    };
    let mut history = Vec::new();
    let emit = |rec: serde_json::Value, log: &mut Option<&mut dyn Write>| {
        if let Some(w) = log.as_deref_mut() {
            let _ = writeln!(w, "{rec}");
        }
    };

    // Already in equilibrium at full load?
    let mut start = u.clone();
    set_prescribed(&mut start, 1.0);
    let (r0, _) = sys.assemble(bvp, &start, &LoadContext::full(), false)?;
    let r0n = norm2(&sys.free_part(&r0));
    if r0n < opts.tol_r * (1.0 + f_ext) {
        emit(
            serde_json::json!({"step": 0, "load": 1.0, "iter": 0, "residual_norm": r0n, "du_norm": 0.0}),
            &mut log,
        );
        history.push(StepRecord { step: 0, load: 1.0, iterations: 1, residual_norms: vec![r0n] });
        return finish(bvp, &sys, start, history);
    }

    let mut t_prev = 0.0;
    let mut step = 0;
    for k in 1..=opts.n_steps {
        let t_target = k as f64 / opts.n_steps as f64;
        let mut dt = t_target - t_prev;
        let mut cuts = 0;
        while t_prev < t_target {
            let t = (t_prev + dt).min(t_target);
            let ctx = LoadContext { load: t, prestress: (1.0 - t) * opts.prestress_scale };
            let mut trial = u.clone();
            set_prescribed(&mut trial, t);
            step += 1;
            let mut rec = StepRecord { step, load: t, iterations: 0, residual_norms: Vec::new() };
            let mut ok = false;
            for it in 0..opts.max_iter {
                rec.iterations = it + 1;
                let (r, m) = match sys.assemble(bvp, &trial, &ctx, true) {
                    Ok(v) => v,
                    Err(Error::InvertedElement { .. }) => break,
                    Err(e) => return Err(e),
                };
                let rf = sys.free_part(&r);
                let rn = norm2(&rf);
                rec.residual_norms.push(rn);
                if !rn.is_finite() {
                    break;
                }
                if rn < opts.tol_r * (1.0 + t * f_ext) || stalled(&rec.residual_norms, opts.tol_stall * (1.0 + t * f_ext)) {
                    emit(
                        serde_json::json!({"step": step, "load": t, "iter": it, "residual_norm": rn, "du_norm": 0.0}),
                        &mut log,
                    );
                    ok = true;
                    break;
                }
                let rhs: Vec<f64> = rf.iter().map(|v| -v).collect();
                let du = match lin.solve(m.as_ref().expect("tangent"), &rhs) {
                    Ok(v) => v,
                    Err(Error::Singular(_)) => break,
                    Err(e) => return Err(e),
                };
                let dun = du.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                emit(
                    serde_json::json!({"step": step, "load": t, "iter": it, "residual_norm": rn, "du_norm": dun}),
                    &mut log,
                );
                for (g, f) in sys.free.iter().enumerate() {
                    if let Some(f) = f {
                        trial[g] += du[*f];
                    }
                }
                if dun < opts.tol_du {
                    ok = true;
                    break;
                }
            }
            let fast = rec.iterations <= 6;
            history.push(rec);
            if ok {
                u = trial;
                t_prev = t;
                // grow a bisected increment back after easy steps
                if fast && cuts > 0 {
                    cuts -= 1;
                    dt *= 2.0;
                }
            } else {
                cuts += 1;
                if cuts > opts.max_bisections {
                    return Err(Error::SolverFailure(format!(
                        "no convergence at load {t:.6} after {} bisections; history: {}",
                        opts.max_bisections,
                        serde_json::to_string(&history).unwrap_or_default()
                    )));
                }
                dt *= 0.5;
            }
        }
    }
    finish(bvp, &sys, u, history)
}

/// Solves a chain of problems, typically of increasing stiffness. Stage 0 is
/// load-stepped as usual; every later stage starts from the previous
/// solution with a single full-load step.
pub fn solve_with_continuation<'a, B>(stages: usize, build: B) -> Result<SolutionState>
where
    B: Fn(usize) -> Result<Bvp<'a>>,
{
    if stages == 0 {
        return Err(Error::Config("continuation needs at least one stage".into()));
    }
    let mut sol = newton_solve(&build(0)?, None, None)?;
    for k in 1..stages {
        let mut bvp = build(k)?;
        bvp.options.n_steps = 1;
        let mut next = newton_solve(&bvp, Some(&sol.u), None)?;
        let mut history = std::mem::take(&mut sol.history);
        history.append(&mut next.history);
        next.history = history;
        sol = next;
    }
    Ok(sol)
}

fn finish(bvp: &Bvp, sys: &System, u: Vec<f64>, history: Vec<StepRecord>) -> Result<SolutionState> {
    let (r, _) = sys.assemble(bvp, &u, &LoadContext::full(), false)?;
    let final_residual = norm2(&sys.free_part(&r));
    let reactions = bvp.dirichlet.iter().map(|&(dof, _)| (dof, r[dof])).collect();
    Ok(SolutionState { dim: bvp.dim, u, history, final_residual, reactions })
}
