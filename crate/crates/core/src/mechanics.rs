//! Finite-strain kinematics and the Saint Venant-Kirchhoff law for ropes and
//! membranes on level sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureKind {
    Rope,
    Membrane,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialParams {
    pub young: f64,
    #[serde(default)]
    pub poisson: f64,
    pub kind: StructureKind,
}

impl MaterialParams {
    pub fn new(young: f64, poisson: f64, kind: StructureKind) -> Result<Self> {
        let m = Self { young, poisson, kind };
        m.validate()?;
        Ok(m)
    }

    pub fn rope(young: f64) -> Self {
        Self { young, poisson: 0.0, kind: StructureKind::Rope }
    }

    pub fn membrane(young: f64, poisson: f64) -> Self {
        Self { young, poisson, kind: StructureKind::Membrane }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.young >= 0.0 && self.young.is_finite()) {
            return Err(Error::Config(format!("Young's modulus {} must be >= 0", self.young)));
        }
        if self.kind == StructureKind::Membrane && !(0.0..1.0).contains(&self.poisson) {
            return Err(Error::Config(format!("membrane Poisson ratio {} outside [0, 1)", self.poisson)));
        }
        Ok(())
    }

    /// Lame constants `(lambda, mu)`.
    pub fn lame(&self) -> (f64, f64) {
        match self.kind {
            StructureKind::Rope => (0.0, 0.5 * self.young),
            StructureKind::Membrane => (
                self.young * self.poisson / (1.0 - self.poisson * self.poisson),
                self.young / (2.0 * (1.0 + self.poisson)),
            ),
        }
    }
}

/// Kinematic quantities at one material point.
#[derive(Debug, Clone)]
pub struct KinematicState {
    pub dim: usize,
    pub f_bulk: Mat3,
    pub f_surf: Mat3,
    /// Undeformed projector `P`.
    pub p: Mat3,
    /// Deformed projector `p`.
    pub p_def: Mat3,
    /// Unit undeformed normal.
    pub n: Vec3,
    /// Unnormalized deformed normal `F_bulk^{-T} N*`.
    pub n_star_def: Vec3,
    /// Line or area stretch.
    pub stretch: f64,
    pub green_dir: Mat3,
    pub green_tang: Mat3,
    pub almansi_dir: Mat3,
    pub almansi_tang: Mat3,
}

/// Kinematics from the bulk displacement gradient and the (unnormalized)
/// level-set normal `N* = grad phi`.
pub fn kinematics(d: usize, grad_u: &Mat3, n_star: &Vec3) -> Result<KinematicState> {
    let id = linalg::identity(d);
    let f_bulk = id + grad_u;
    let det = linalg::det(d, &f_bulk);
    let n = n_star / n_star.norm();
    let p = id - n * n.transpose();
    let f_surf = id + grad_u * p;
    let (finv_t, fs_inv) = match (linalg::inverse(d, &f_bulk), linalg::inverse(d, &(f_surf * f_surf.transpose()))) {
        (Some(a), Some(b)) if det > 0.0 && det.is_finite() => (a.transpose(), b),
        _ => {
            return Err(Error::InvertedElement { elem: usize::MAX, det, r: [0.0; 3] });
        }
    };
    let n_star_def = finv_t * n_star;
    let nd = n_star_def / n_star_def.norm();
    let p_def = id - nd * nd.transpose();
    let stretch = n_star_def.norm() / n_star.norm() * det;
    let green_dir = 0.5 * (f_surf.transpose() * f_surf - id);
    let green_tang = p * green_dir * p;
    let almansi_dir = 0.5 * (id - fs_inv);
    let almansi_tang = p_def * almansi_dir * p_def;
    Ok(KinematicState {
        dim: d,
        f_bulk,
        f_surf,
        p,
        p_def,
        n,
        n_star_def,
        stretch,
        green_dir,
        green_tang,
        almansi_dir,
        almansi_tang,
    })
}

/// `S = lambda tr(E_tang) P + 2 mu E_tang`.
pub fn pk2(green_tang: &Mat3, p: &Mat3, mat: &MaterialParams) -> Mat3 {
    let (lambda, mu) = mat.lame();
    lambda * green_tang.trace() * p + 2.0 * mu * green_tang
}

/// The equivalent form `P (lambda tr(E_dir) I + 2 mu E_dir) P`.
pub fn pk2_from_dir(d: usize, green_dir: &Mat3, p: &Mat3, mat: &MaterialParams) -> Mat3 {
    let (lambda, mu) = mat.lame();
    p * (lambda * green_dir.trace() * linalg::identity(d) + 2.0 * mu * green_dir) * p
}

pub fn pk1(f_surf: &Mat3, s: &Mat3) -> Mat3 {
    f_surf * s
}

pub fn cauchy(f_surf: &Mat3, s: &Mat3, stretch: f64) -> Mat3 {
    f_surf * s * f_surf.transpose() / stretch
}

/// Rope: `|sigma_1|`; membrane: `sqrt(s1^2 - s1 s2 + s2^2)` from the two
/// in-plane principal stresses.
pub fn von_mises(sigma: &Mat3, kind: StructureKind) -> f64 {
    let ev = linalg::sym_eigenvalues(sigma);
    match kind {
        StructureKind::Rope => ev[0].abs(),
        StructureKind::Membrane => (ev[0] * ev[0] - ev[0] * ev[1] + ev[1] * ev[1]).max(0.0).sqrt(),
    }
}

/// Stored energy per unit undeformed measure, `1/2 E_tang : S`.
pub fn energy_density(state: &KinematicState, mat: &MaterialParams) -> f64 {
    let s = pk2(&state.green_tang, &state.p, mat);
    0.5 * state.green_tang.component_mul(&s).sum()
}

#[derive(Debug, Clone)]
pub struct StressState {
    pub s: Mat3,
    pub k: Mat3,
    pub sigma: Mat3,
    pub von_mises: f64,
}

pub fn stresses(state: &KinematicState, mat: &MaterialParams) -> StressState {
    let s = pk2(&state.green_tang, &state.p, mat);
    let sigma = cauchy(&state.f_surf, &s, state.stretch);
    StressState {
        k: pk1(&state.f_surf, &s),
        von_mises: von_mises(&sigma, mat.kind),
        s,
        sigma,
    }
}

/// Directional derivatives `(dS, dK)` of the stresses for an increment
/// `dF` of the surface deformation gradient.
pub fn pk2_linearization(state: &KinematicState, mat: &MaterialParams, d_f: &Mat3) -> (Mat3, Mat3) {
    let (lambda, mu) = mat.lame();
    let f = &state.f_surf;
    let de = 0.5 * (d_f.transpose() * f + f.transpose() * d_f);
    let ds = state.p * (lambda * de.trace() * linalg::identity(state.dim) + 2.0 * mu * de) * state.p;
    let s = pk2(&state.green_tang, &state.p, mat);
    (ds, d_f * s + f * ds)
}
