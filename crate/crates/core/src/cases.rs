//! Run configurations, the test-case presets, single runs and refinement
//! studies.

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bulkcouple::{fiber_levels, BulkMaterial, CoupledModel};
use crate::error::{Error, Result};
use crate::errors::{
    annotate_slopes, integrated_levelsets, residual_error, stored_energy_of, Displacement, ErrorReport, StudyRow,
};
use crate::levelset::{DomainSpec, FieldSpec, LevelSetField};
use crate::linalg::{self, Mat3, Vec3};
use crate::mechanics::{kinematics, stresses, von_mises, MaterialParams, StructureKind};
use crate::mesh::{generate_mesh, GeometrySpec, Mesh};
use crate::oracle::displacement_at;
use crate::solver::{dirichlet_on_tag, displacement_gradient, newton_solve, Bvp, SolutionState, SolverOptions, StructureTerm, Term};

/// Where the bulk mesh comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSource {
    Generated {
        geometry: GeometrySpec,
        #[serde(default)]
        triangles: bool,
    },
    /// Mesh file; relative paths are resolved against the fixture directory.
    File { path: PathBuf },
}

/// Fibers embedded in a bulk material. The fiber modulus follows from the
/// integrated stiffness `target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FiberModel {
    /// Ropes on all level sets of the field.
    Continuous { target: f64 },
    /// Ropes on the mesh edges at the element layers of the field interval.
    Discrete { target: f64 },
}

/// Analytic displacement used instead of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PrescribedField {
    /// `u = [a_0 sin(k_0 Y), a_1 sin(k_1 Y)]`.
    SineY { amplitude: [f64; 2], wavenumber: [f64; 2] },
}

impl PrescribedField {
    pub fn gradient(&self, x: &Vec3) -> Mat3 {
        match *self {
            PrescribedField::SineY { amplitude: a, wavenumber: k } => {
                let mut g = Mat3::zeros();
                g[(0, 1)] = a[0] * k[0] * (k[0] * x[1]).cos();
                g[(1, 1)] = a[1] * k[1] * (k[1] * x[1]).cos();
                g
            }
        }
    }

    pub fn value(&self, x: &Vec3) -> Vec3 {
        match *self {
            PrescribedField::SineY { amplitude: a, wavenumber: k } => {
                Vec3::new(a[0] * (k[0] * x[1]).sin(), a[1] * (k[1] * x[1]).sin(), 0.0)
            }
        }
    }
}

/// Benchmark values for the error measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reference {
    pub integrated_levelsets: Option<f64>,
    pub stored_energy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub name: String,
    pub mesh: MeshSource,
    /// Element order of generated meshes; must match imported files.
    pub order: usize,
    /// Uniform refinement level of generated meshes.
    #[serde(default)]
    pub level: u32,
    pub field: LevelSetField,
    /// Implicit description of the bulk domain, informational.
    #[serde(default)]
    pub domain: Option<DomainSpec>,
    /// Material of the level-set structures when there is no bulk material.
    #[serde(default)]
    pub structure: Option<MaterialParams>,
    /// Dead load per unit reference measure.
    #[serde(default)]
    pub body_force: [f64; 3],
    /// Boundary tags with zero displacement.
    pub dirichlet: Vec<String>,
    #[serde(default)]
    pub bulk: Option<BulkMaterial>,
    #[serde(default)]
    pub fibers: Option<FiberModel>,
    #[serde(default)]
    pub prescribed: Option<PrescribedField>,
    #[serde(default)]
    pub reference: Option<Reference>,
    /// Points where the displacement is reported.
    #[serde(default)]
    pub probes: Vec<[f64; 3]>,
    #[serde(default)]
    pub solver: SolverOptions,
    /// Extra quadrature degree on top of the default `2p`.
    #[serde(default)]
    pub quadrature_degree: usize,
    /// Use analytic derivatives of the field in the residual error.
    #[serde(default = "yes")]
    pub analytic_residual: bool,
}

fn yes() -> bool {
    true
}

pub const PRESETS: [&str; 6] = ["tc1", "tc1-interval", "tc2", "tc3", "tc4", "tc5"];

/// Directory of the shipped mesh fixtures (`BTF_FIXTURES` overrides).
pub fn fixtures_dir() -> PathBuf {
    std::env::var_os("BTF_FIXTURES")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"))
}

fn tc1_center() -> [f64; 3] {
    let a = 25f64.to_radians();
    [-0.3 * a.sin(), 0.3 * a.cos(), 0.0]
}

/// One of the test-case presets at element order `order` and refinement
/// `level`.
pub fn preset(name: &str, order: usize, level: u32) -> Result<CaseConfig> {
    let c = tc1_center();
    let field = |dim, spec, interval| LevelSetField::new(dim, spec, interval);
    let rope = Some(MaterialParams::rope(1e4));
    let membrane = Some(MaterialParams::membrane(1e3, 0.3));
    let base = |mesh, field, structure, body_force, dirichlet: &str| CaseConfig {
        name: name.to_string(),
        mesh,
        order,
        level,
        field,
        domain: None,
        structure,
        body_force,
        dirichlet: vec![dirichlet.to_string()],
        bulk: None,
        fibers: None,
        prescribed: None,
        reference: None,
        probes: Vec::new(),
        solver: SolverOptions::default(),
        quadrature_degree: 0,
        analytic_residual: true,
    };
    let generated = |geometry| MeshSource::Generated { geometry, triangles: false };
    let cfg = match name {
        "tc1" => CaseConfig {
            domain: Some(DomainSpec::Ball { center: [0.0; 3], radius: 0.28 }),
            ..base(
                generated(GeometrySpec::Disk { radius: 0.28, n: 4, n_radial: Some(2) }),
                field(2, FieldSpec::Radial { center: c, radius: 0.3 }, None)?,
                rope,
                [0.0, -100.0, 0.0],
                "rim",
            )
        },
        "tc1-interval" => CaseConfig {
            domain: Some(DomainSpec::Ball { center: [0.0; 3], radius: 0.28 }),
            reference: Some(Reference {
                integrated_levelsets: Some(0.1644415441226),
                stored_energy: Some(7.792649686407e-3),
            }),
            ..base(
                generated(GeometrySpec::CircleBand {
                    disk_radius: 0.28,
                    center: [c[0], c[1]],
                    rho_min: 0.15,
                    rho_max: 0.45,
                    n_level: 2,
                    n_arc: 32,
                }),
                field(2, FieldSpec::Radial { center: c, radius: 0.3 }, Some([-0.15, 0.15]))?,
                rope,
                [0.0, -100.0, 0.0],
                "rim",
            )
        },
        "tc2" => CaseConfig {
            domain: Some(DomainSpec::EllipseWithBell {
                radii: [10.0, 6.5],
                bell_center: [4.0, 5.0],
                bell_radius: 12.0,
            }),
            reference: Some(Reference {
                integrated_levelsets: Some(39.05000466379),
                stored_energy: Some(2317.129363166),
            }),
            ..base(
                MeshSource::File { path: format!("tc2_p{order}.json").into() },
                field(
                    2,
                    FieldSpec::WavyRadial {
                        center: [-10.0, 10.0],
                        scale: 0.5,
                        amplitude: 0.1,
                        frequency: 8.0,
                        offset: -0.5,
                    },
                    Some([4.0, 7.0]),
                )?,
                rope,
                [0.0, -200.0, 0.0],
                "boundary",
            )
        },
        "tc3" => CaseConfig {
            domain: Some(DomainSpec::Ball { center: [0.0; 3], radius: 1.0 }),
            reference: Some(Reference {
                integrated_levelsets: Some(1.981355380281),
                stored_energy: Some(6.588725461796),
            }),
            // The flat start is very soft; a larger initial prestress avoids
            // overshooting Newton steps.
            solver: SolverOptions { prestress_scale: 100.0, ..SolverOptions::default() },
            ..base(
                generated(GeometrySpec::SphericalSlab { z_min: -0.2, z_max: 0.4, n: 1, n_z: 1 }),
                field(3, FieldSpec::Linear { gradient: [0.0, 0.0, 1.0], offset: 0.0 }, Some([-0.2, 0.4]))?,
                membrane,
                [0.0, 0.0, -100.0],
                "lateral",
            )
        },
        "tc4" => CaseConfig {
            domain: Some(DomainSpec::Ellipsoid { center: [-0.2, 0.2, 0.1], radii: [0.9, 0.7, 0.8] }),
            reference: Some(Reference {
                integrated_levelsets: Some(1.032907088507),
                stored_energy: Some(1.863258461070),
            }),
            ..base(
                MeshSource::File { path: format!("tc4_p{order}.json").into() },
                field(3, FieldSpec::Radial { center: [-1.0, 1.0, 2.0], radius: 2.0 }, Some([0.0, 0.5]))?,
                membrane,
                [0.0, 0.0, -100.0],
                "lateral",
            )
        },
        "tc5" => CaseConfig {
            bulk: Some(BulkMaterial::new(1e4, 0.3)?),
            fibers: Some(FiberModel::Continuous { target: 580_000.0 * PI }),
            probes: vec![[0.0, 8.0, 0.0]],
            ..base(
                generated(GeometrySpec::QuarterAnnulus { r_inner: 8.0, r_outer: 12.0, n_rad: 4, n_ang: 8 }),
                field(2, FieldSpec::Radial { center: [0.0; 3], radius: 0.0 }, Some([8.0, 12.0]))?,
                None,
                [0.0, -20.0, 0.0],
                "bottom",
            )
        },
        other => {
            return Err(Error::Config(format!(
                "unknown case '{other}' (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(cfg)
}

/// The TC5 prescribed displacement `u = [sin(Y/2)/2, sin(Y)/10]`.
pub fn tc5_prescribed() -> PrescribedField {
    PrescribedField::SineY { amplitude: [0.5, 0.1], wavenumber: [0.5, 1.0] }
}

/// A configuration with its mesh and nodal field.
pub struct Setup {
    pub config: CaseConfig,
    pub mesh: Mesh,
    pub phi: Vec<f64>,
}

impl Setup {
    pub fn new(config: CaseConfig) -> Result<Self> {
        validate_config(&config)?;
        let mesh = match &config.mesh {
            MeshSource::Generated { geometry, triangles } => {
                generate_mesh(&geometry.refined(config.level), config.order, *triangles)?
            }
            MeshSource::File { path } => {
                if config.level != 0 {
                    return Err(Error::Config("imported meshes cannot be refined (level must be 0)".into()));
                }
                let path = if path.is_absolute() { path.clone() } else { fixtures_dir().join(path) };
                let mesh = Mesh::import(&path)?;
                if mesh.order() != config.order {
                    return Err(Error::Config(format!(
                        "mesh file {} has order {}, config asks for {}",
                        path.display(),
                        mesh.order(),
                        config.order
                    )));
                }
                mesh
            }
        };
        if mesh.dim() != config.field.dim {
            return Err(Error::Config(format!(
                "field is {}-dimensional, mesh is {}-dimensional",
                config.field.dim,
                mesh.dim()
            )));
        }
        let phi = config.field.nodal(&mesh);
        Ok(Self { config, mesh, phi })
    }

    pub fn degree(&self) -> usize {
        if self.config.quadrature_degree == 0 {
            0
        } else {
            2 * self.mesh.order() + self.config.quadrature_degree
        }
    }

    fn force(&self) -> Vec3 {
        Vec3::from(self.config.body_force)
    }

    fn dirichlet(&self) -> Result<Vec<(usize, f64)>> {
        let mut out = Vec::new();
        for tag in &self.config.dirichlet {
            out.extend(dirichlet_on_tag(&self.mesh, tag, &Vec3::zeros())?);
        }
        out.sort_by_key(|p| p.0);
        out.dedup_by_key(|p| p.0);
        Ok(out)
    }

    fn coupled(&self) -> Result<Option<CoupledModel<'_>>> {
        let Some(bulk) = self.config.bulk else { return Ok(None) };
        let model = match self.config.fibers {
            None => CoupledModel {
                mesh: &self.mesh,
                bulk,
                body_force: self.force(),
                fibers: crate::bulkcouple::Fibers::None,
                g_min: self.config.field.g_min,
            },
            Some(FiberModel::Continuous { target }) => {
                let mut m = CoupledModel::continuous(&self.mesh, bulk, self.force(), self.phi.clone(), target)?;
                m.g_min = self.config.field.g_min;
                m
            }
            Some(FiberModel::Discrete { target }) => {
                let layers = element_layers(&self.config.mesh, self.config.level)?;
                let (lo, hi) = self.config.field.bounds(&self.phi);
                let field = &self.config.field;
                CoupledModel::discrete(
                    &self.mesh,
                    bulk,
                    self.force(),
                    &|x| field.value(x),
                    &fiber_levels(lo, hi, layers),
                    target,
                )?
            }
        };
        Ok(Some(model))
    }

    /// The boundary value problem of the configuration.
    pub fn bvp(&self) -> Result<Bvp<'_>> {
        let terms: Vec<Box<dyn Term + '_>> = match self.coupled()? {
            Some(model) => model.terms()?,
            None => {
                let mat = self.structure()?;
                vec![Box::new(StructureTerm::new(
                    &self.mesh,
                    self.phi.clone(),
                    mat,
                    self.force(),
                    &[],
                    self.config.field.g_min,
                )?)]
            }
        };
        Ok(Bvp {
            dim: self.mesh.dim(),
            n_nodes: self.mesh.n_nodes(),
            terms,
            dirichlet: self.dirichlet()?,
            options: self.config.solver,
        })
    }

    fn structure(&self) -> Result<MaterialParams> {
        self.config
            .structure
            .ok_or_else(|| Error::Config("a structure material is required without a bulk material".into()))
    }

    pub fn solve(&self, log: Option<&mut dyn Write>) -> Result<SolutionState> {
        newton_solve(&self.bvp()?, None, log)
    }

    /// Error measures and energies for a displacement (nodal or the
    /// configured prescribed field).
    pub fn evaluate(&self, u: Option<&[f64]>) -> Result<RunReport> {
        let cfg = &self.config;
        let degree = self.degree();
        let grad = cfg.prescribed.map(|p| move |x: &Vec3| p.gradient(x));
        let disp = match (u, &grad) {
            (Some(u), _) => Displacement::Nodal(u),
            (None, Some(g)) => Displacement::Analytic(g),
            (None, None) => return Err(Error::Config("nothing to evaluate: no solution and no prescribed field".into())),
        };
        let d_measure = match u {
            Some(u) => integrated_levelsets(&self.mesh, &self.phi, u, degree)?,
            None => f64::NAN,
        };
        let mut report = RunReport {
            case: cfg.name.clone(),
            errors: ErrorReport {
                order: self.mesh.order(),
                level: cfg.level,
                h: 0.5f64.powi(cfg.level as i32),
                n_dof: self.mesh.dim() * self.mesh.n_nodes(),
                integrated_levelsets: d_measure,
                stored_energy: 0.0,
                eps_phi: None,
                eps_e: None,
                eps_res: None,
            },
            bulk_energy: None,
            fiber_energy: None,
            fiber_young: None,
            probes: Vec::new(),
            newton: None,
        };
        match self.coupled()? {
            Some(model) => {
                let (b, f) = model.energy(disp, degree)?;
                report.errors.stored_energy = b + f;
                report.bulk_energy = Some(b);
                report.fiber_energy = Some(f);
                report.fiber_young = Some(model.fiber_young());
            }
            None => {
                let mat = self.structure()?;
                report.errors.stored_energy = stored_energy_of(&self.mesh, &self.phi, disp, &mat, degree)?;
                if let Some(u) = u {
                    if self.mesh.order() >= 2 {
                        let analytic = cfg.analytic_residual.then_some(&cfg.field);
                        report.errors.eps_res =
                            Some(residual_error(&self.mesh, &self.phi, u, &mat, &self.force(), analytic, degree)?);
                    }
                }
            }
        }
        if let Some(r) = cfg.reference {
            if u.is_some() {
                report.errors.eps_phi = r.integrated_levelsets.map(|v| (v - d_measure).abs());
            }
            report.errors.eps_e = r.stored_energy.map(|v| (v - report.errors.stored_energy).abs());
        }
        for p in &cfg.probes {
            let x = Vec3::from(*p);
            let v = match (u, cfg.prescribed) {
                (Some(u), _) => displacement_at(&self.mesh, u, &x)?,
                (None, Some(f)) => f.value(&x),
                _ => unreachable!(),
            };
            report.probes.push(Probe { point: *p, displacement: [v[0], v[1], v[2]] });
        }
        Ok(report)
    }

    /// Von Mises stress at reference point `r` of element `e`: of the
    /// level-set structure, or of the bulk (in-plane in 2D) when there is a
    /// bulk material. Zero where the field gradient degenerates.
    pub fn von_mises(&self, e: usize, r: &[f64; 3], u: &[f64]) -> Result<f64> {
        let d = self.mesh.dim();
        let eval = self.mesh.reference().eval(r)?;
        let map = self.mesh.map_eval(e, &eval, r)?;
        let grads = self.mesh.physical_grads(&map, &eval);
        let nodes = self.mesh.element(e);
        let gu = displacement_gradient(d, nodes, u, &grads);
        if let Some(bulk) = self.config.bulk {
            let (_, s) = bulk.stress(d, &gu)?;
            let f = linalg::identity(d) + gu;
            let sigma = f * s * f.transpose() / linalg::det(d, &f);
            return Ok(if d == 2 { von_mises(&sigma, StructureKind::Membrane) } else { von_mises_3d(&sigma) });
        }
        let g = nodes.iter().zip(&grads).fold(Vec3::zeros(), |acc, (&n, g)| acc + self.phi[n] * g);
        if g.norm() < self.config.field.g_min {
            return Ok(0.0);
        }
        let st = kinematics(d, &gu, &g)?;
        Ok(stresses(&st, &self.structure()?).von_mises)
    }

    /// Solves (unless a displacement is prescribed) and evaluates.
    pub fn run(&self, log: Option<&mut dyn Write>) -> Result<(RunReport, Option<SolutionState>)> {
        if self.config.prescribed.is_some() {
            return Ok((self.evaluate(None)?, None));
        }
        let sol = self.solve(log)?;
        let mut report = self.evaluate(Some(&sol.u))?;
        report.newton = Some(NewtonSummary {
            load_steps: sol.history.len(),
            iterations: sol.history.iter().map(|h| h.iterations).sum(),
            final_residual: sol.final_residual,
        });
        Ok((report, Some(sol)))
    }
}

fn von_mises_3d(s: &Mat3) -> f64 {
    let dev = s - Mat3::identity() * (s.trace() / 3.0);
    (1.5 * dev.component_mul(&dev).sum()).sqrt()
}

/// Number of element layers across the field interval of a generated mesh.
fn element_layers(mesh: &MeshSource, level: u32) -> Result<usize> {
    match mesh {
        MeshSource::Generated { geometry, .. } => match geometry.refined(level) {
            GeometrySpec::QuarterAnnulus { n_rad, .. } | GeometrySpec::Ring { n_rad, .. } => Ok(n_rad),
            GeometrySpec::CircleBand { n_level, .. } => Ok(n_level),
            GeometrySpec::SphericalSlab { n_z, .. } => Ok(n_z),
            GeometrySpec::Disk { .. } => Err(Error::Config("discrete fibers need a layered geometry".into())),
        },
        MeshSource::File { .. } => Err(Error::Config("discrete fibers need a generated mesh".into())),
    }
}

fn validate_config(cfg: &CaseConfig) -> Result<()> {
    if !(1..=6).contains(&cfg.order) {
        return Err(Error::Config(format!("order must be in 1..=6, got {}", cfg.order)));
    }
    if let Some(m) = &cfg.structure {
        m.validate()?;
    }
    if let Some(b) = &cfg.bulk {
        b.validate()?;
        if cfg.structure.is_some() {
            return Err(Error::Config("set either 'structure' or 'bulk' with 'fibers', not both".into()));
        }
    } else if cfg.fibers.is_some() {
        return Err(Error::Config("'fibers' requires a 'bulk' material".into()));
    }
    if cfg.body_force.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("body force must be finite".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Probe {
    pub point: [f64; 3],
    pub displacement: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewtonSummary {
    pub load_steps: usize,
    pub iterations: usize,
    pub final_residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub case: String,
    pub errors: ErrorReport,
    pub bulk_energy: Option<f64>,
    pub fiber_energy: Option<f64>,
    pub fiber_young: Option<f64>,
    pub probes: Vec<Probe>,
    pub newton: Option<NewtonSummary>,
}

/// Runs every `(order, level)` cell of a refinement study and fits slopes.
/// Cells run one after another; each uses all worker threads for assembly.
/// A failing cell is recorded and does not stop the study.
pub fn convergence_study(base: &CaseConfig, orders: &[usize], levels: &[u32]) -> Result<Vec<StudyRow>> {
    if base.reference.is_none() {
        return Err(Error::Config(format!("case '{}' has no benchmark values", base.name)));
    }
    let mut rows = Vec::new();
    for &p in orders {
        for &l in levels {
            let cfg = CaseConfig { order: p, level: l, ..base.clone() };
            let cell = Setup::new(cfg).and_then(|s| s.run(None));
            let (report, failure) = match cell {
                Ok((r, _)) => (Some(r.errors), None),
                Err(e) => (None, Some(e.to_string())),
            };
            rows.push(StudyRow {
                report,
                order: p,
                level: l,
                failure,
                slope_phi: None,
                slope_e: None,
                slope_res: None,
            });
        }
    }
    annotate_slopes(&mut rows);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_json() {
        for name in PRESETS {
            let cfg = preset(name, 2, 0).unwrap();
            let text = serde_json::to_string_pretty(&cfg).unwrap();
            let back: CaseConfig = serde_json::from_str(&text).unwrap();
            assert_eq!(back, cfg, "{name}");
        }
        assert!(matches!(preset("tc9", 2, 0), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = serde_json::to_value(preset("tc3", 2, 0).unwrap()).unwrap();
        v["solver"]["tolerance"] = serde_json::json!(1.0);
        assert!(serde_json::from_value::<CaseConfig>(v).is_err());
        let mut v = serde_json::to_value(preset("tc3", 2, 0).unwrap()).unwrap();
        v["colour"] = serde_json::json!("red");
        assert!(serde_json::from_value::<CaseConfig>(v).is_err());
    }

    #[test]
    fn inconsistent_configs_fail() {
        let mut cfg = preset("tc5", 2, 0).unwrap();
        cfg.structure = Some(MaterialParams::rope(1.0));
        assert!(Setup::new(cfg).is_err());
        let mut cfg = preset("tc1", 7, 0).unwrap();
        assert!(Setup::new(cfg.clone()).is_err());
        cfg.order = 2;
        cfg.dirichlet = vec!["nowhere".into()];
        assert!(Setup::new(cfg).unwrap().bvp().is_err());
    }

    #[test]
    fn prescribed_field_gradient() {
        let f = tc5_prescribed();
        let x = Vec3::new(9.0, 3.0, 0.0);
        let h = 1e-6;
        let dy = (f.value(&(x + Vec3::new(0.0, h, 0.0))) - f.value(&(x - Vec3::new(0.0, h, 0.0)))) / (2.0 * h);
        let g = f.gradient(&x);
        assert!((g[(0, 1)] - dy[0]).abs() < 1e-9 && (g[(1, 1)] - dy[1]).abs() < 1e-9);
        assert_eq!(g[(0, 0)], 0.0);
    }

    #[test]
    fn small_tc1_interval_run() {
        let mut cfg = preset("tc1-interval", 2, 0).unwrap();
        cfg.solver.n_steps = 2;
        let (r, sol) = Setup::new(cfg).unwrap().run(None).unwrap();
        let sol = sol.unwrap();
        assert!(sol.final_residual < 1e-8);
        assert!(r.errors.eps_phi.unwrap() < 1e-4);
        assert!(r.errors.eps_e.unwrap() < 2e-5, "{:?}", r.errors);
        assert!(r.errors.eps_res.is_some());
    }
}
