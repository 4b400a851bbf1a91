//! Error measures: integrated deformed level sets, stored energy, residual
//! error, and rate fitting for refinement studies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levelset::{projector, LevelSetField};
use crate::linalg::{self, Mat3, Vec3};
use crate::mechanics::{cauchy, energy_density, kinematics, pk2, MaterialParams};
use crate::mesh::Mesh;
use crate::solver::displacement_gradient;
use crate::tdc::{coarea_integrate_domain, BulkPoint, normal_derivatives, projector_derivatives, tensor_surface_divergence};

/// `D(u_h) = int Lambda |grad phi_h| dOmega_X`, the total measure of all
/// deformed level sets.
pub fn integrated_levelsets(mesh: &Mesh, phi: &[f64], u: &[f64], degree: usize) -> Result<f64> {
    let d = mesh.dim();
    coarea_integrate_domain(mesh, phi, degree, false, |p| {
        let nodes = mesh.element(p.elem);
        let gu = displacement_gradient(d, nodes, u, p.grads);
        Ok(kinematics(d, &gu, &p.grad_phi)?.stretch)
    })
}

/// A displacement field given by nodal values or by its analytic gradient.
#[derive(Clone, Copy)]
pub enum Displacement<'a> {
    Nodal(&'a [f64]),
    Analytic(&'a (dyn Fn(&Vec3) -> Mat3 + Sync)),
}

impl Displacement<'_> {
    /// Displacement gradient at a bulk quadrature point.
    pub fn gradient(&self, mesh: &Mesh, p: &BulkPoint) -> Mat3 {
        match self {
            Displacement::Nodal(u) => displacement_gradient(mesh.dim(), mesh.element(p.elem), u, p.grads),
            Displacement::Analytic(g) => g(&p.map.x),
        }
    }
}

/// `e(u_h) = 1/2 int E_tang : S |grad phi_h| dOmega_X`.
pub fn stored_energy(mesh: &Mesh, phi: &[f64], u: &[f64], mat: &MaterialParams, degree: usize) -> Result<f64> {
    stored_energy_of(mesh, phi, Displacement::Nodal(u), mat, degree)
}

/// Stored energy of the level-set structure for any displacement source.
pub fn stored_energy_of(
    mesh: &Mesh,
    phi: &[f64],
    u: Displacement,
    mat: &MaterialParams,
    degree: usize,
) -> Result<f64> {
    let d = mesh.dim();
    coarea_integrate_domain(mesh, phi, degree, false, |p| {
        Ok(energy_density(&kinematics(d, &u.gradient(mesh, p), &p.grad_phi)?, mat))
    })
}

/// The same energy from deformed quantities, `1/2 int e_tang : sigma
/// Lambda |grad phi_h| dOmega_X`.
pub fn stored_energy_spatial(
    mesh: &Mesh,
    phi: &[f64],
    u: &[f64],
    mat: &MaterialParams,
    degree: usize,
) -> Result<f64> {
    let d = mesh.dim();
    coarea_integrate_domain(mesh, phi, degree, false, |p| {
        let gu = displacement_gradient(d, mesh.element(p.elem), u, p.grads);
        let st = kinematics(d, &gu, &p.grad_phi)?;
        let sigma = cauchy(&st.f_surf, &pk2(&st.green_tang, &st.p, mat), st.stretch);
        Ok(0.5 * st.almansi_tang.component_mul(&sigma).sum() * st.stretch)
    })
}

/// `Div_G K` at a point from the displacement gradient `G`, its derivatives
/// `dG[m] = dG/dX_m`, and the gradient and Hessian of the level-set field.
pub fn pk1_surface_divergence(
    d: usize,
    g_u: &Mat3,
    dg_u: &[Mat3; 3],
    g_phi: &Vec3,
    h_phi: &Mat3,
    mat: &MaterialParams,
) -> Result<Vec3> {
    let (lambda, mu) = mat.lame();
    let n = g_phi / g_phi.norm();
    let p = projector(d, &n)?;
    let dn = normal_derivatives(g_phi, h_phi, &p);
    let dp = projector_derivatives(&n, &dn);
    let id = linalg::identity(d);
    let f = id + g_u * p;
    let e = 0.5 * (f.transpose() * f - id);
    let et = p * e * p;
    let s = lambda * et.trace() * p + 2.0 * mu * et;
    let mut dk = [Mat3::zeros(); 3];
    for m in 0..d {
        let df = dg_u[m] * p + g_u * dp[m];
        let de = 0.5 * (df.transpose() * f + f.transpose() * df);
        let det = dp[m] * e * p + p * de * p + p * e * dp[m];
        let ds = lambda * det.trace() * p + lambda * et.trace() * dp[m] + 2.0 * mu * det;
        dk[m] = df * s + f * ds;
    }
    Ok(tensor_surface_divergence(&dk, &p))
}

/// `eps_res = sqrt(sum_e int |Div_G K + F|^2 / Lambda |grad phi| dOmega_X)`,
/// the element-wise L2 norm of `div sigma + f` over the deformed domain.
/// Uses the analytic field for derivatives of `phi` when given.
pub fn residual_error(
    mesh: &Mesh,
    phi: &[f64],
    u: &[f64],
    mat: &MaterialParams,
    force: &Vec3,
    analytic: Option<&LevelSetField>,
    degree: usize,
) -> Result<f64> {
    if mesh.order() < 2 {
        return Err(Error::Unsupported("residual error needs element order >= 2".into()));
    }
    let d = mesh.dim();
    let sum = coarea_integrate_domain(mesh, phi, degree, true, |p| {
        let nodes = mesh.element(p.elem);
        let gu = displacement_gradient(d, nodes, u, p.grads);
        let mut dgu = [Mat3::zeros(); 3];
        for (a, &node) in nodes.iter().enumerate() {
            let h = &p.hessians[a];
            for i in 0..d {
                let ui = u[node * d + i];
                for j in 0..d {
                    for (m, dg) in dgu.iter_mut().enumerate().take(d) {
                        dg[(i, j)] += ui * h[(j, m)];
                    }
                }
            }
        }
        let (g, h) = match analytic {
            Some(f) => {
                let ev = f.eval(&p.map.x);
                (ev.grad, ev.hess)
            }
            None => (p.grad_phi, p.hess_phi),
        };
        let div = pk1_surface_divergence(d, &gu, &dgu, &g, &h, mat)?;
        let stretch = kinematics(d, &gu, &g)?.stretch;
        let r = div + force;
        // The co-area weight |grad phi_h| is applied by the integrator; the
        // ratio corrects to the analytic gradient when one is used.
        Ok(r.norm_squared() / stretch * g.norm() / p.grad_phi.norm())
    })?;
    Ok(sum.max(0.0).sqrt())
}

/// Least-squares slope of `log e` against `log(1/h)` over the last three
/// points (all points if fewer). `None` when fewer than two usable points.
pub fn fit_slope(h: &[f64], e: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = h
        .iter()
        .zip(e)
        .filter(|(h, e)| **h > 0.0 && **e > 0.0 && e.is_finite())
        .map(|(h, e)| (-h.ln(), e.ln()))
        .collect();
    let pts = &pts[pts.len().saturating_sub(3)..];
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(-sxy / sxx)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorReport {
    pub order: usize,
    pub level: u32,
    pub h: f64,
    pub n_dof: usize,
    pub integrated_levelsets: f64,
    pub stored_energy: f64,
    pub eps_phi: Option<f64>,
    pub eps_e: Option<f64>,
    pub eps_res: Option<f64>,
}

/// One row of a refinement table; failed cells carry a message.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyRow {
    pub report: Option<ErrorReport>,
    pub order: usize,
    pub level: u32,
    pub failure: Option<String>,
    pub slope_phi: Option<f64>,
    pub slope_e: Option<f64>,
    pub slope_res: Option<f64>,
}

/// Fills in slopes for each order from the rows up to and including each
/// level.
pub fn annotate_slopes(rows: &mut [StudyRow]) {
    let orders: Vec<usize> = {
        let mut o: Vec<usize> = rows.iter().map(|r| r.order).collect();
        o.sort_unstable();
        o.dedup();
        o
    };
    for p in orders {
        let idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].order == p).collect();
        for (k, &i) in idx.iter().enumerate() {
            let upto: Vec<ErrorReport> = idx[..=k].iter().filter_map(|&j| rows[j].report.clone()).collect();
            let h: Vec<f64> = upto.iter().map(|r| r.h).collect();
            let col = |f: &dyn Fn(&ErrorReport) -> Option<f64>| -> Vec<f64> {
                upto.iter().map(|r| f(r).unwrap_or(f64::NAN)).collect()
            };
            rows[i].slope_phi = fit_slope(&h, &col(&|r| r.eps_phi));
            rows[i].slope_e = fit_slope(&h, &col(&|r| r.eps_e));
            rows[i].slope_res = fit_slope(&h, &col(&|r| r.eps_res));
        }
    }
}

pub fn study_csv(rows: &[StudyRow]) -> String {
    let f = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_default();
    let mut s = String::from("p,level,h,n_dof,eps_phi,eps_e,eps_res,slope_phi,slope_e,slope_res\n");
    for r in rows {
        let (h, n) = r.report.as_ref().map(|x| (Some(x.h), x.n_dof)).unwrap_or((None, 0));
        let rep = r.report.as_ref();
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.order,
            r.level,
            f(h),
            n,
            f(rep.and_then(|x| x.eps_phi)),
            f(rep.and_then(|x| x.eps_e)),
            f(rep.and_then(|x| x.eps_res)),
            f(r.slope_phi),
            f(r.slope_e),
            f(r.slope_res),
        ));
    }
    s
}
