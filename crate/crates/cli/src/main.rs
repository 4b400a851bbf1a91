//! `btf`: runs the bulk trace solver on presets or JSON configurations.

mod vtk;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use btf_core::cases::{convergence_study, preset, tc5_prescribed, CaseConfig, FiberModel, Setup};
use btf_core::errors::study_csv;
use btf_core::levelset::{validate_levelset_domain, ValidityOptions};
use btf_core::linalg::Vec3;
use btf_core::oracle::{displacement_at, trace_levelset, TraceOptions};
use btf_core::solver::SolutionState;
use btf_core::{Error, Result};

#[derive(Parser)]
#[command(name = "btf", version, about = "Ropes and membranes on all level sets of a bulk domain")]
struct Cli {
    /// Worker threads for assembly (default: all cores).
    #[arg(long, global = true, env = "BTF_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one configuration and write solution, log, report and VTK files.
    Run {
        #[command(flatten)]
        case: CaseArgs,
        /// Uniform refinement level of generated meshes.
        #[arg(long, visible_alias = "levels", default_value_t = 0)]
        level: u32,
        #[arg(long, default_value = "btf-out")]
        out: PathBuf,
    },
    /// Refinement study over orders and levels; writes study.csv and study.json.
    Convergence {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        orders: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        levels: Vec<u32>,
        #[arg(long, default_value = "btf-out")]
        out: PathBuf,
    },
    /// Checks the level-set field against the domain; exit code 3 if invalid.
    Validate {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long, default_value_t = 0)]
        level: u32,
    },
    /// Writes VTK files for a stored solution.
    Export {
        /// Configuration written by `run`.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        solution: PathBuf,
        /// Levels to extract as polylines (2D only).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        levelsets: Vec<f64>,
        #[arg(long, default_value = "btf-out")]
        out: PathBuf,
    },
    /// Generates the mesh of a configuration; writes mesh.json and mesh.vtk.
    Mesh {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long, default_value_t = 0)]
        level: u32,
        #[arg(long, default_value = "btf-out")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Fibers {
    None,
    Continuous,
    Discrete,
}

#[derive(Args)]
struct CaseArgs {
    /// Preset: tc1, tc1-interval, tc2, tc3, tc4, tc5.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    case: Option<String>,
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Element order (default 2 for presets).
    #[arg(long)]
    order: Option<usize>,
    #[arg(long, value_enum)]
    fibers: Option<Fibers>,
    /// Evaluate the analytic displacement field instead of solving.
    #[arg(long)]
    prescribed_displacement: bool,
    #[arg(long)]
    n_steps: Option<usize>,
}

impl CaseArgs {
    fn load(&self, level: u32) -> Result<CaseConfig> {
        let mut cfg = match (&self.case, &self.config) {
            (Some(name), _) => preset(name, self.order.unwrap_or(2), level)?,
            (None, Some(path)) => {
                let text = fs::read_to_string(path)?;
                let mut cfg: CaseConfig = serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                if let Some(p) = self.order {
                    cfg.order = p;
                }
                if level != 0 {
                    cfg.level = level;
                }
                cfg
            }
            (None, None) => return Err(Error::Config("give --case or --config".into())),
        };
        if let Some(f) = self.fibers {
            let target = match cfg.fibers {
                Some(FiberModel::Continuous { target }) | Some(FiberModel::Discrete { target }) => target,
                None if matches!(f, Fibers::None) => 0.0,
                None => return Err(Error::Config(format!("case '{}' has no fibers", cfg.name))),
            };
            cfg.fibers = match f {
                Fibers::None => None,
                Fibers::Continuous => Some(FiberModel::Continuous { target }),
                Fibers::Discrete => Some(FiberModel::Discrete { target }),
            };
        }
        if self.prescribed_displacement {
            if cfg.bulk.is_none() {
                return Err(Error::Config("--prescribed-displacement needs a bulk material".into()));
            }
            cfg.prescribed = Some(tc5_prescribed());
        }
        if let Some(n) = self.n_steps {
            cfg.solver.n_steps = n;
        }
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::SolverFailure(_)
        | Error::Singular(_)
        | Error::InvertedElement { .. }
        | Error::DegenerateLevelSet { .. }
        | Error::ConormalUndefined { .. }
        | Error::Infeasible(_) => 2,
        Error::Validity(_) => 3,
        _ => 1,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn cmd_run(cfg: CaseConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), &cfg)?;
    let setup = Setup::new(cfg)?;
    let mut log = BufWriter::new(File::create(out.join("log.jsonl"))?);
    let (report, sol) = setup.run(Some(&mut log))?;
    log.flush()?;
    let sol = match sol {
        Some(s) => s,
        None => {
            let field = setup.config.prescribed.expect("prescribed run");
            let d = setup.mesh.dim();
            let u = setup
                .mesh
                .nodes()
                .iter()
                .flat_map(|x| field.value(&Vec3::from(*x)).iter().take(d).copied().collect::<Vec<_>>())
                .collect();
            SolutionState { dim: d, u, history: Vec::new(), final_residual: 0.0, reactions: Vec::new() }
        }
    };
    write_json(&out.join("solution.json"), &sol)?;
    write_json(&out.join("report.json"), &report)?;
    vtk::write_field(&out.join("undeformed.vtk"), &setup, &sol.u, false)?;
    vtk::write_field(&out.join("deformed.vtk"), &setup, &sol.u, true)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_convergence(cfg: CaseConfig, orders: &[usize], levels: &[u32], out: &Path) -> Result<()> {
    let rows = convergence_study(&cfg, orders, levels)?;
    fs::create_dir_all(out)?;
    let csv = study_csv(&rows);
    fs::write(out.join("study.csv"), &csv)?;
    write_json(&out.join("study.json"), &rows)?;
    print!("{csv}");
    if let Some(r) = rows.iter().find(|r| r.failure.is_some()) {
        return Err(Error::SolverFailure(format!(
            "cell p={} level={}: {}",
            r.order,
            r.level,
            r.failure.as_deref().unwrap_or_default()
        )));
    }
    Ok(())
}

fn cmd_validate(cfg: CaseConfig) -> Result<()> {
    let setup = Setup::new(cfg)?;
    let report = validate_levelset_domain(&setup.config.field, &setup.mesh, &ValidityOptions::default())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if report.valid {
        Ok(())
    } else {
        Err(Error::Validity(report.flags.join("; ")))
    }
}

/// Traces each level through the configured domain, seeded at the mesh node
/// closest to the level.
fn polylines(setup: &Setup, u: &[f64], levels: &[f64]) -> Result<Vec<vtk::Polyline>> {
    let domain = setup
        .config
        .domain
        .as_ref()
        .ok_or_else(|| Error::Config("level-set export needs 'domain' in the configuration".into()))?;
    let d = setup.mesh.dim();
    let psi = move |x: &Vec3| domain.eval(d, x).0;
    let opts = TraceOptions { step: (1e-2 * setup.mesh.diameter()).min(0.01), ..TraceOptions::default() };
    let mut out = Vec::new();
    for &c in levels {
        let seed = setup
            .phi
            .iter()
            .zip(setup.mesh.nodes())
            .filter(|(_, x)| psi(&Vec3::from(**x)) < 0.0)
            .min_by(|a, b| (a.0 - c).abs().total_cmp(&(b.0 - c).abs()))
            .map(|(_, x)| Vec3::from(*x))
            .ok_or_else(|| Error::Config("no mesh node inside the domain".into()))?;
        let curve = trace_levelset(&setup.config.field, &psi, c, &seed, &opts)?;
        let mut line = vtk::Polyline { c, points: Vec::new(), displacement: Vec::new() };
        for x in &curve.points {
            let w = displacement_at(&setup.mesh, u, x)?;
            line.points.push([x[0], x[1], x[2]]);
            line.displacement.push([w[0], w[1], w[2]]);
        }
        out.push(line);
    }
    Ok(out)
}

fn cmd_export(config: &Path, solution: &Path, levels: &[f64], out: &Path) -> Result<()> {
    let cfg: CaseConfig = serde_json::from_str(&fs::read_to_string(config)?)?;
    let sol: SolutionState = serde_json::from_str(&fs::read_to_string(solution)?)?;
    let setup = Setup::new(cfg)?;
    fs::create_dir_all(out)?;
    vtk::write_field(&out.join("undeformed.vtk"), &setup, &sol.u, false)?;
    vtk::write_field(&out.join("deformed.vtk"), &setup, &sol.u, true)?;
    if !levels.is_empty() {
        let lines = polylines(&setup, &sol.u, levels)?;
        vtk::write_polylines(&out.join("levelsets_undeformed.vtk"), &lines, false)?;
        vtk::write_polylines(&out.join("levelsets_deformed.vtk"), &lines, true)?;
    }
    Ok(())
}

fn cmd_mesh(cfg: CaseConfig, out: &Path) -> Result<()> {
    let setup = Setup::new(cfg)?;
    fs::create_dir_all(out)?;
    setup.mesh.export(&out.join("mesh.json"))?;
    let zero = vec![0.0; setup.mesh.dim() * setup.mesh.n_nodes()];
    vtk::write_field(&out.join("mesh.vtk"), &setup, &zero, false)?;
    println!(
        "{} elements, {} nodes, order {}, measure {:.12}",
        setup.mesh.n_elements(),
        setup.mesh.n_nodes(),
        setup.mesh.order(),
        setup.mesh.measure(0)?
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Run { case, level, out } => case.load(*level).and_then(|c| cmd_run(c, out)),
        Command::Convergence { case, orders, levels, out } => {
            case.load(0).and_then(|c| cmd_convergence(c, orders, levels, out))
        }
        Command::Validate { case, level } => case.load(*level).and_then(cmd_validate),
        Command::Export { config, solution, levelsets, out } => cmd_export(config, solution, levelsets, out),
        Command::Mesh { case, level, out } => case.load(*level).and_then(|c| cmd_mesh(c, out)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
