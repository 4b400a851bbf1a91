//! Elastic bulk material superposed with fibers: continuous fibers on all
//! level sets, or discrete rope elements along conforming mesh edges.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::errors::{stored_energy_of, Displacement};
use crate::linalg::{self, Mat3, Vec3};
use crate::mechanics::{pk2, MaterialParams};
use crate::mesh::{Mesh, QuadCache};
use crate::solver::{
    displacement_gradient, ElementOutput, Kernel, LineRopeTerm, LoadContext, StructureTerm, TangentAccumulator, Term,
};
use crate::tdc::{coarea_integrate_domain, integrate_domain};

/// Isotropic Saint Venant-Kirchhoff bulk; in 2D the Lame constants are the
/// plane-strain ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BulkMaterial {
    #[serde(rename = "E_b")]
    pub young: f64,
    #[serde(rename = "nu_b")]
    pub poisson: f64,
}

impl BulkMaterial {
    pub fn new(young: f64, poisson: f64) -> Result<Self> {
        let m = Self { young, poisson };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.young > 0.0 && self.young.is_finite()) {
            return Err(Error::Config(format!("bulk Young's modulus {} must be > 0", self.young)));
        }
        if !(0.0..0.5).contains(&self.poisson) {
            return Err(Error::Config(format!("bulk Poisson ratio {} outside [0, 0.5)", self.poisson)));
        }
        Ok(())
    }

    pub fn lame(&self) -> (f64, f64) {
        let (e, nu) = (self.young, self.poisson);
        (e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)), e / (2.0 * (1.0 + nu)))
    }

    /// Green-Lagrange strain and second Piola-Kirchhoff stress.
    pub fn stress(&self, d: usize, grad_u: &Mat3) -> Result<(Mat3, Mat3)> {
        let id = linalg::identity(d);
        let f = id + grad_u;
        let det = linalg::det(d, &f);
        if !(det > 0.0) {
            return Err(Error::InvertedElement { elem: usize::MAX, det, r: [0.0; 3] });
        }
        let e = 0.5 * (f.transpose() * f - id);
        let (lambda, mu) = self.lame();
        Ok((e, lambda * e.trace() * id + 2.0 * mu * e))
    }

    pub fn energy_density(&self, d: usize, grad_u: &Mat3) -> Result<f64> {
        let (e, s) = self.stress(d, grad_u)?;
        Ok(0.5 * e.component_mul(&s).sum())
    }
}

/// The standard finite-strain continuum on the whole mesh.
pub struct BulkTerm<'a> {
    pub mesh: &'a Mesh,
    pub material: BulkMaterial,
    /// Force per unit undeformed volume.
    pub body_force: Vec3,
    cache: QuadCache,
}

impl<'a> BulkTerm<'a> {
    pub fn new(mesh: &'a Mesh, material: BulkMaterial, body_force: Vec3) -> Result<Self> {
        material.validate()?;
        Ok(Self { mesh, material, body_force, cache: mesh.quadrature(0) })
    }
}

impl Term for BulkTerm<'_> {
    fn n_items(&self) -> usize {
        self.mesh.n_elements()
    }

    fn nodes(&self, item: usize) -> Vec<usize> {
        self.mesh.element(item).to_vec()
    }

    fn evaluate(&self, item: usize, u: &[f64], ctx: &LoadContext, tangent: bool) -> Result<ElementOutput> {
        let mesh = self.mesh;
        let d = mesh.dim();
        let nodes = mesh.element(item).to_vec();
        let nd = nodes.len() * d;
        let mut out = ElementOutput {
            r: vec![0.0; nd],
            k: if tangent { vec![0.0; nd * nd] } else { Vec::new() },
            nodes,
        };
        let (lambda, mu) = self.material.lame();
        let id = linalg::identity(d);
        let mut acc = tangent.then(|| TangentAccumulator::new(out.nodes.len(), d, self.cache.rule.points.len()));
        for ((r, eval), wq) in self.cache.rule.points.iter().zip(&self.cache.evals).zip(&self.cache.rule.weights) {
            let map = mesh.map_eval(item, eval, r)?;
            let grads = mesh.physical_grads(&map, eval);
            let gu = displacement_gradient(d, &out.nodes, u, &grads);
            let (_, s) = self.material.stress(d, &gu).map_err(|err| match err {
                Error::InvertedElement { det, .. } => Error::InvertedElement { elem: item, det, r: *r },
                other => other,
            })?;
            Kernel {
                d,
                g: &grads,
                b: &eval.values,
                f: &(id + gu),
                s: &s,
                p: &id,
                lambda,
                mu,
                w: wq * map.det,
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

/// `int_Omega 1/2 E : S dOmega` of the bulk.
pub fn bulk_energy(mesh: &Mesh, material: &BulkMaterial, u: Displacement, degree: usize) -> Result<f64> {
    let d = mesh.dim();
    integrate_domain(mesh, degree, |p| material.energy_density(d, &u.gradient(mesh, p)))
}

/// Fiber modulus such that bulk and fiber stiffness integrate to `target`:
/// `(target - bulk_stiffness) / fiber_measure`.
pub fn fiber_modulus(target: f64, bulk_stiffness: f64, fiber_measure: f64) -> Result<f64> {
    if !(fiber_measure > 0.0) {
        return Err(Error::Config("fibers have zero total measure".into()));
    }
    let e = (target - bulk_stiffness) / fiber_measure;
    if !(e >= 0.0 && e.is_finite()) {
        return Err(Error::Config(format!(
            "target stiffness {target} is below the bulk stiffness {bulk_stiffness}"
        )));
    }
    Ok(e)
}

/// `n + 1` equally spaced fiber levels on `[lo, hi]`.
pub fn fiber_levels(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// Mesh edges on which `field` equals `value` at every node (within `tol`),
/// as 1D element node lists in facet order. Shared edges appear once.
pub fn conforming_edges(mesh: &Mesh, field: &dyn Fn(&Vec3) -> f64, value: f64, tol: f64) -> Result<Vec<Vec<usize>>> {
    if mesh.dim() != 2 {
        return Err(Error::Unsupported("discrete fibers are implemented in 2D only".into()));
    }
    let re = mesh.reference();
    let on = |n: usize| (field(&Vec3::from(mesh.nodes()[n])) - value).abs() <= tol;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for conn in mesh.elements() {
        for f in 0..re.n_facets() {
            let edge: Vec<usize> = re.facet_nodes(f).into_iter().map(|l| conn[l]).collect();
            if edge.iter().all(|&n| on(n)) {
                let mut key = edge.clone();
                key.sort_unstable();
                if seen.insert(key) {
                    out.push(edge);
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("no mesh edges conform to the fiber at level {value}")));
    }
    Ok(out)
}

/// How fibers enter the model.
pub enum Fibers {
    None,
    /// Ropes on all level sets of the nodal field.
    Continuous { phi: Vec<f64>, young: f64 },
    /// Rope elements along mesh edges.
    Discrete { elements: Vec<Vec<usize>>, young: f64 },
}

/// Bulk material with embedded fibers on one mesh.
pub struct CoupledModel<'a> {
    pub mesh: &'a Mesh,
    pub bulk: BulkMaterial,
    pub body_force: Vec3,
    pub fibers: Fibers,
    pub g_min: f64,
}

impl<'a> CoupledModel<'a> {
    /// Continuous fibers on the level sets of `phi`, stiffness from the
    /// integrated target.
    pub fn continuous(mesh: &'a Mesh, bulk: BulkMaterial, body_force: Vec3, phi: Vec<f64>, target: f64) -> Result<Self> {
        let area = mesh.measure(0)?;
        let measure = coarea_integrate_domain(mesh, &phi, 0, false, |_| Ok(1.0))?;
        let young = fiber_modulus(target, bulk.young * area, measure)?;
        Ok(Self { mesh, bulk, body_force, fibers: Fibers::Continuous { phi, young }, g_min: 1e-10 })
    }

    /// Discrete fibers on the mesh edges where `field` takes one of `values`.
    pub fn discrete(
        mesh: &'a Mesh,
        bulk: BulkMaterial,
        body_force: Vec3,
        field: &dyn Fn(&Vec3) -> f64,
        values: &[f64],
        target: f64,
    ) -> Result<Self> {
        let scale = values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let mut elements = Vec::new();
        for &c in values {
            elements.extend(conforming_edges(mesh, field, c, 1e-9 * scale)?);
        }
        let area = mesh.measure(0)?;
        let length = LineRopeTerm::new(mesh.nodes(), elements.clone(), mesh.order(), MaterialParams::rope(0.0), Vec3::zeros())?
            .length();
        let young = fiber_modulus(target, bulk.young * area, length)?;
        Ok(Self { mesh, bulk, body_force, fibers: Fibers::Discrete { elements, young }, g_min: 1e-10 })
    }

    pub fn fiber_young(&self) -> f64 {
        match self.fibers {
            Fibers::None => 0.0,
            Fibers::Continuous { young, .. } | Fibers::Discrete { young, .. } => young,
        }
    }

    /// `int E_b dOmega + int E_fiber dGamma` over all fibers.
    pub fn integrated_stiffness(&self) -> Result<f64> {
        let bulk = self.bulk.young * self.mesh.measure(0)?;
        let fibers = match &self.fibers {
            Fibers::None => 0.0,
            Fibers::Continuous { phi, young } => {
                young * coarea_integrate_domain(self.mesh, phi, 0, false, |_| Ok(1.0))?
            }
            Fibers::Discrete { young, .. } => young * self.line_term()?.map_or(0.0, |t| t.length()),
        };
        Ok(bulk + fibers)
    }

    fn line_term(&self) -> Result<Option<LineRopeTerm<'a>>> {
        match &self.fibers {
            Fibers::Discrete { elements, young } => Ok(Some(LineRopeTerm::new(
                self.mesh.nodes(),
                elements.clone(),
                self.mesh.order(),
                MaterialParams::rope(*young),
                Vec3::zeros(),
            )?)),
            _ => Ok(None),
        }
    }

    /// Bulk term followed by the fiber term, all on the mesh DOFs.
    pub fn terms(&self) -> Result<Vec<Box<dyn Term + 'a>>> {
        let mut terms: Vec<Box<dyn Term + 'a>> = vec![Box::new(BulkTerm::new(self.mesh, self.bulk, self.body_force)?)];
        match &self.fibers {
            Fibers::None => {}
            Fibers::Continuous { phi, young } => terms.push(Box::new(StructureTerm::new(
                self.mesh,
                phi.clone(),
                MaterialParams::rope(*young),
                Vec3::zeros(),
                &[],
                self.g_min,
            )?)),
            Fibers::Discrete { .. } => {
                if let Some(t) = self.line_term()? {
                    terms.push(Box::new(t));
                }
            }
        }
        Ok(terms)
    }

    /// Stored energy split into `(bulk, fibers)`.
    pub fn energy(&self, u: Displacement, degree: usize) -> Result<(f64, f64)> {
        let bulk = bulk_energy(self.mesh, &self.bulk, u, degree)?;
        let fibers = match &self.fibers {
            Fibers::None => 0.0,
            Fibers::Continuous { phi, young } => {
                stored_energy_of(self.mesh, phi, u, &MaterialParams::rope(*young), degree)?
            }
            Fibers::Discrete { .. } => match self.line_term()? {
                Some(t) => line_energy(&t, u),
                None => 0.0,
            },
        };
        Ok((bulk, fibers))
    }
}

/// `1/2 int E_tang : S ds` over rope elements.
pub fn line_energy(term: &LineRopeTerm, u: Displacement) -> f64 {
    let mut s = 0.0;
    for e in 0..term.elements.len() {
        for (q, wq) in term.quadrature().rule.weights.iter().enumerate() {
            let (f, p, len) = match u {
                Displacement::Nodal(v) => {
                    let (f, p, _, len) = term.kinematics(e, q, v);
                    (f, p, len)
                }
                Displacement::Analytic(g) => {
                    let (t, len, _) = term.frame(e, q);
                    let p = t * t.transpose();
                    (linalg::identity(2) + g(&term.point(e, q)) * p, p, len)
                }
            };
            let e_t = p * (0.5 * (f.transpose() * f - linalg::identity(2))) * p;
            let st = pk2(&e_t, &p, &term.material);
            s += wq * len * 0.5 * e_t.component_mul(&st).sum();
        }
    }
    s
}
