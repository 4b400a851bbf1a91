//! Tangential differential calculus on level sets and integration over all
//! level sets via the co-area formula.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::levelset::{normal_from_gradient, outward_conormal};
use crate::linalg::{Mat3, Vec3};
use crate::mesh::{is_levelset_tag, ElementMap, Mesh, QuadCache};
use crate::refelem::{gauss_legendre, ShapeEval};

/// `P g`.
pub fn surface_gradient(g: &Vec3, p: &Mat3) -> Vec3 {
    p * g
}

/// Directional gradient `grad u P`.
pub fn directional_gradient(grad_u: &Mat3, p: &Mat3) -> Mat3 {
    grad_u * p
}

/// Covariant gradient `P grad u P`.
pub fn covariant_gradient(grad_u: &Mat3, p: &Mat3) -> Mat3 {
    p * grad_u * p
}

/// `div_G u = tr(grad u P)`.
pub fn surface_divergence(grad_u: &Mat3, p: &Mat3) -> f64 {
    (grad_u * p).trace()
}

/// Row-wise divergence `(Div_G K)_i = sum_{j,m} dK_ij/dX_m P_mj`, with
/// `dk[m] = dK/dX_m`.
pub fn tensor_surface_divergence(dk: &[Mat3; 3], p: &Mat3) -> Vec3 {
    let mut out = Vec3::zeros();
    for (m, dkm) in dk.iter().enumerate() {
        for i in 0..3 {
            for j in 0..3 {
                out[i] += dkm[(i, j)] * p[(m, j)];
            }
        }
    }
    out
}

/// Sum of principal curvatures `div N` from the gradient and Hessian of the
/// field.
pub fn mean_curvature(g: &Vec3, h: &Mat3) -> f64 {
    let n2 = g.norm_squared();
    (h.trace() - g.dot(&(h * g)) / n2) / n2.sqrt()
}

/// `dN/dX_m = (P H)_{:, m} / |g|` for `m = 0, 1, 2`.
pub fn normal_derivatives(g: &Vec3, h: &Mat3, p: &Mat3) -> [Vec3; 3] {
    let ph = p * h / g.norm();
    [ph.column(0).into(), ph.column(1).into(), ph.column(2).into()]
}

/// `dP/dX_m = -(dN (x) N + N (x) dN)`.
pub fn projector_derivatives(n: &Vec3, dn: &[Vec3; 3]) -> [Mat3; 3] {
    let f = |d: &Vec3| -(d * n.transpose() + n * d.transpose());
    [f(&dn[0]), f(&dn[1]), f(&dn[2])]
}

/// Data at one bulk quadrature point.
pub struct BulkPoint<'a> {
    pub elem: usize,
    pub r: [f64; 3],
    pub map: &'a ElementMap,
    pub eval: &'a ShapeEval,
    /// Quadrature weight times `det J`.
    pub weight: f64,
    pub phi: f64,
    pub grad_phi: Vec3,
    /// Zero unless Hessians were requested.
    pub hess_phi: Mat3,
    pub grads: &'a [Vec3],
    /// Empty unless Hessians were requested.
    pub hessians: &'a [Mat3],
}

/// Calls `f` at every quadrature point of element `e`.
pub fn visit_element<F>(
    mesh: &Mesh,
    nodal_phi: &[f64],
    cache: &QuadCache,
    e: usize,
    with_hessians: bool,
    mut f: F,
) -> Result<()>
where
    F: FnMut(&BulkPoint) -> Result<()>,
{
    let conn = mesh.element(e);
    for ((r, eval), w) in cache.rule.points.iter().zip(&cache.evals).zip(&cache.rule.weights) {
        let map = mesh.map_eval(e, eval, r)?;
        let grads = mesh.physical_grads(&map, eval);
        let hessians = if with_hessians {
            mesh.physical_hessians(&map, eval, &grads)
        } else {
            Vec::new()
        };
        let mut phi = 0.0;
        let mut grad_phi = Vec3::zeros();
        let mut hess_phi = Mat3::zeros();
        for (a, &node) in conn.iter().enumerate() {
            phi += nodal_phi[node] * eval.values[a];
            grad_phi += nodal_phi[node] * grads[a];
            if with_hessians {
                hess_phi += nodal_phi[node] * hessians[a];
            }
        }
        f(&BulkPoint {
            elem: e,
            r: *r,
            map: &map,
            eval,
            weight: w * map.det,
            phi,
            grad_phi,
            hess_phi,
            grads: &grads,
            hessians: &hessians,
        })?;
    }
    Ok(())
}

/// `int_Omega f |grad phi_h| dOmega`, i.e. the integral of `f` over all level
/// sets. Elements are processed in parallel and summed in element order.
pub fn coarea_integrate_domain<F>(
    mesh: &Mesh,
    nodal_phi: &[f64],
    degree: usize,
    with_hessians: bool,
    f: F,
) -> Result<f64>
where
    F: Fn(&BulkPoint) -> Result<f64> + Sync,
{
    let cache = mesh.quadrature(degree);
    let parts: Vec<Result<f64>> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let mut s = 0.0;
            visit_element(mesh, nodal_phi, &cache, e, with_hessians, |p| {
                s += p.weight * p.grad_phi.norm() * f(p)?;
                Ok(())
            })?;
            Ok(s)
        })
        .collect();
    parts.into_iter().sum()
}

/// Plain `int_Omega f dOmega` with the same point data (the level-set entries
/// are zero).
pub fn integrate_domain<F>(mesh: &Mesh, degree: usize, f: F) -> Result<f64>
where
    F: Fn(&BulkPoint) -> Result<f64> + Sync,
{
    let zero = vec![0.0; mesh.n_nodes()];
    let cache = mesh.quadrature(degree);
    let parts: Vec<Result<f64>> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let mut s = 0.0;
            visit_element(mesh, &zero, &cache, e, false, |p| {
                s += p.weight * f(p)?;
                Ok(())
            })?;
            Ok(s)
        })
        .collect();
    parts.into_iter().sum()
}

/// Data at one quadrature point of a non-level-set boundary facet.
pub struct BoundaryPoint<'a> {
    pub elem: usize,
    pub tag: &'a str,
    pub x: Vec3,
    /// Quadrature weight times facet measure.
    pub weight: f64,
    /// Outward unit normal of the domain.
    pub m: Vec3,
    pub phi: f64,
    pub grad_phi: Vec3,
    /// Unit normal of the level set.
    pub n: Vec3,
    /// Outward unit conormal of the level set.
    pub q: Vec3,
    pub eval: &'a ShapeEval,
    pub grads: &'a [Vec3],
}

/// `int_{dOmega} f (Q.M) |grad phi_h| dA` over every boundary part that is not
/// a level set, i.e. the integral of `f` over the boundaries of all level sets.
pub fn coarea_integrate_boundary<F>(
    mesh: &Mesh,
    nodal_phi: &[f64],
    degree: usize,
    g_min: f64,
    f: F,
) -> Result<f64>
where
    F: Fn(&BoundaryPoint) -> Result<f64>,
{
    let d = mesh.dim();
    let mut total = 0.0;
    for tag in mesh.tags().iter().filter(|t| !is_levelset_tag(t)) {
        for frame in mesh.facet_frames(tag, degree)? {
            let conn = mesh.element(frame.elem);
            for fp in &frame.points {
                let eval = mesh.reference().eval(&fp.r)?;
                let map = mesh.map_eval(frame.elem, &eval, &fp.r)?;
                let grads = mesh.physical_grads(&map, &eval);
                let mut phi = 0.0;
                let mut grad_phi = Vec3::zeros();
                for (a, &node) in conn.iter().enumerate() {
                    phi += nodal_phi[node] * eval.values[a];
                    grad_phi += nodal_phi[node] * grads[a];
                }
                let n = normal_from_gradient(&grad_phi, g_min)?;
                let q = outward_conormal(d, &n, &fp.normal)?;
                let bp = BoundaryPoint {
                    elem: frame.elem,
                    tag,
                    x: fp.x,
                    weight: fp.weight,
                    m: fp.normal,
                    phi,
                    grad_phi,
                    n,
                    q,
                    eval: &eval,
                    grads: &grads,
                };
                total += fp.weight * q.dot(&fp.normal) * grad_phi.norm() * f(&bp)?;
            }
        }
    }
    Ok(total)
}

/// `int_lo^hi g(c) dc` with an `n`-point Gauss-Legendre rule.
pub fn gauss_levelset_integrate<F>(lo: f64, hi: f64, n: usize, mut g: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if n == 0 || !(hi > lo) {
        return Err(Error::Config("level interval quadrature needs n >= 1 and lo < hi".into()));
    }
    let (t, w) = gauss_legendre(n);
    let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    let mut s = 0.0;
    for (ti, wi) in t.iter().zip(&w) {
        s += wi * half * g(mid + half * ti)?;
    }
    Ok(s)
}

/// Both sides of the surface divergence theorem summed over all level sets:
/// `int (div_G u - kappa u.N) |grad phi|` and `int_{boundary} (u.Q)(Q.M) |grad phi|`.
pub fn check_divergence_theorem<F>(
    mesh: &Mesh,
    nodal_phi: &[f64],
    degree: usize,
    g_min: f64,
    u: F,
) -> Result<(f64, f64)>
where
    F: Fn(&Vec3) -> (Vec3, Mat3) + Sync,
{
    let d = mesh.dim();
    let lhs = coarea_integrate_domain(mesh, nodal_phi, degree, true, |p| {
        let n = normal_from_gradient(&p.grad_phi, g_min)?;
        let proj = crate::levelset::projector(d, &n)?;
        let (val, grad) = u(&p.map.x);
        Ok(surface_divergence(&grad, &proj) - mean_curvature(&p.grad_phi, &p.hess_phi) * val.dot(&n))
    })?;
    let rhs = coarea_integrate_boundary(mesh, nodal_phi, degree, g_min, |b| Ok(u(&b.x).0.dot(&b.q)))?;
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levelset::{projector, FieldSpec, LevelSetField};
    use crate::mesh::{generate_mesh, GeometrySpec};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn unit(v: [f64; 3]) -> Option<Vec3> {
        let v = Vec3::from(v);
        (v.norm() > 1e-3).then(|| v / v.norm())
    }

    proptest! {
        #[test]
        fn projector_properties(v in prop::array::uniform3(-1.0f64..1.0)) {
            if let Some(n) = unit(v) {
                let p = projector(3, &n).unwrap();
                prop_assert!((p * p - p).norm() < 1e-14);
                prop_assert!((p * n).norm() < 1e-14);
                prop_assert!((p.trace() - 2.0).abs() < 1e-14);
                prop_assert!((p - p.transpose()).norm() == 0.0);
            }
        }

        #[test]
        fn projector_properties_2d(a in 0.0f64..(2.0 * PI)) {
            let n = Vec3::new(a.cos(), a.sin(), 0.0);
            let p = projector(2, &n).unwrap();
            prop_assert!((p * p - p).norm() < 1e-14);
            prop_assert!((p.trace() - 1.0).abs() < 1e-14);
            prop_assert!((p * n).norm() < 1e-14);
        }

        #[test]
        fn surface_gradient_is_tangential(v in prop::array::uniform3(-1.0f64..1.0),
                                           g in prop::array::uniform3(-5.0f64..5.0)) {
            if let Some(n) = unit(v) {
                let p = projector(3, &n).unwrap();
                let sg = surface_gradient(&Vec3::from(g), &p);
                prop_assert!(sg.dot(&n).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn curvature_of_spheres_and_circles() {
        for r in [0.3, 1.0, 7.5] {
            let f3 = FieldSpec::Radial { center: [0.1, 0.2, -0.3], radius: r };
            let x = Vec3::new(0.1 + r * 0.6, 0.2, -0.3 + r * 0.8);
            let e = f3.eval(3, &x);
            assert!((mean_curvature(&e.grad, &e.hess) - 2.0 / r).abs() < 1e-12);
            let f2 = FieldSpec::Radial { center: [0.1, 0.2, 0.0], radius: r };
            let x = Vec3::new(0.1 + r * 0.6, 0.2 + r * 0.8, 0.0);
            let e = f2.eval(2, &x);
            assert!((mean_curvature(&e.grad, &e.hess) - 1.0 / r).abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_of_projector_is_curvature_times_normal() {
        let spec = FieldSpec::Radial { center: [0.0; 3], radius: 0.0 };
        let x = Vec3::new(0.3, -0.4, 1.2);
        let e = spec.eval(3, &x);
        let n = e.grad.normalize();
        let p = projector(3, &n).unwrap();
        let dn = normal_derivatives(&e.grad, &e.hess, &p);
        let dp = projector_derivatives(&n, &dn);
        let div = tensor_surface_divergence(&dp, &p);
        let kappa = mean_curvature(&e.grad, &e.hess);
        assert!((div + kappa * n).norm() < 1e-13);

        // finite-difference check of dP
        let h = 1e-6;
        for m in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[m] += h;
            xm[m] -= h;
            let pp = projector(3, &spec.eval(3, &xp).grad.normalize()).unwrap();
            let pm = projector(3, &spec.eval(3, &xm).grad.normalize()).unwrap();
            assert!(((pp - pm) / (2.0 * h) - dp[m]).norm() < 1e-8);
        }
    }

    #[test]
    fn divergence_of_linear_field() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        let p = projector(3, &n).unwrap();
        let a = Mat3::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0);
        assert_eq!(surface_divergence(&a, &p), 6.0);
        let c = covariant_gradient(&a, &p);
        assert_eq!(c, Mat3::new(1.0, 2.0, 0.0, 4.0, 5.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(directional_gradient(&a, &p).column(2).norm(), 0.0);
    }

    fn annulus(order: usize) -> Mesh {
        generate_mesh(
            &GeometrySpec::QuarterAnnulus { r_inner: 8.0, r_outer: 12.0, n_rad: 4, n_ang: 8 },
            order,
            false,
        )
        .unwrap()
    }

    #[test]
    fn total_length_of_level_sets() {
        let mesh = annulus(4);
        let phi = mesh.interpolate(|x| x[0] * x[0] + x[1] * x[1]);
        let v = coarea_integrate_domain(&mesh, &phi, 0, false, |_| Ok(1.0)).unwrap();
        let exact = 1216.0 * PI / 3.0;
        assert!((v - exact).abs() / exact < 1e-9, "{v} {exact}");
        let phi = mesh.interpolate(|x| x.norm());
        let v = coarea_integrate_domain(&mesh, &phi, 0, false, |_| Ok(1.0)).unwrap();
        assert!((v - 20.0 * PI).abs() < 1e-8);
    }

    #[test]
    fn boundary_coarea_counts_endpoints() {
        let mesh = annulus(3);
        let phi = mesh.interpolate(|x| x.norm());
        let bottom = coarea_integrate_boundary(&mesh, &phi, 0, 1e-10, |b| {
            Ok(if b.tag == "bottom" { 1.0 } else { 0.0 })
        })
        .unwrap();
        assert!((bottom - 4.0).abs() < 1e-12, "{bottom}");
        let all = coarea_integrate_boundary(&mesh, &phi, 0, 1e-10, |_| Ok(1.0)).unwrap();
        assert!((all - 8.0).abs() < 1e-7, "{all}");
    }

    #[test]
    fn divergence_theorem_on_band() {
        let xc = [-0.3 * 25f64.to_radians().sin(), 0.3 * 25f64.to_radians().cos()];
        let mesh = generate_mesh(
            &GeometrySpec::CircleBand {
                disk_radius: 0.28,
                center: xc,
                rho_min: 0.15,
                rho_max: 0.45,
                n_level: 4,
                n_arc: 8,
            },
            4,
            false,
        )
        .unwrap();
        let field = LevelSetField::new(
            2,
            FieldSpec::Radial { center: [xc[0], xc[1], 0.0], radius: 0.3 },
            Some([-0.15, 0.15]),
        )
        .unwrap();
        let phi = field.nodal(&mesh);
        let (lhs, rhs) = check_divergence_theorem(&mesh, &phi, 0, 1e-10, |x| {
            let v = Vec3::new((3.0 * x[0]).sin(), x[0] * x[1] * x[1], 0.0);
            let g = Mat3::new(
                3.0 * (3.0 * x[0]).cos(), 0.0, 0.0,
                x[1] * x[1], 2.0 * x[0] * x[1], 0.0,
                0.0, 0.0, 0.0,
            );
            (v, g)
        })
        .unwrap();
        assert!((lhs - rhs).abs() < 1e-6 * (1.0 + rhs.abs()), "{lhs} {rhs}");
    }

    #[test]
    fn divergence_theorem_on_slab() {
        let mesh = generate_mesh(
            &GeometrySpec::SphericalSlab { z_min: -0.2, z_max: 0.4, n: 2, n_z: 2 },
            3,
            false,
        )
        .unwrap();
        let phi = mesh.interpolate(|x| x[2]);
        let (lhs, rhs) = check_divergence_theorem(&mesh, &phi, 0, 1e-10, |x| {
            let v = Vec3::new(x[0] * x[0], x[1] + x[2], x[0] * x[1]);
            let g = Mat3::new(
                2.0 * x[0], 0.0, 0.0,
                0.0, 1.0, 1.0,
                x[1], x[0], 0.0,
            );
            (v, g)
        })
        .unwrap();
        assert!((lhs - rhs).abs() < 1e-3 * rhs.abs(), "{lhs} {rhs}");
    }

    #[test]
    fn level_interval_quadrature() {
        let v = gauss_levelset_integrate(-0.15, 0.15, 20, |c| Ok(c.powi(10) + 1.0)).unwrap();
        let exact = 0.3 + 2.0 * 0.15f64.powi(11) / 11.0;
        assert!((v - exact).abs() < 1e-15);
    }
}
