//! Legacy ASCII VTK output.
//!
//! Higher-order elements are split into linear sub-cells on their node
//! lattice. Points are duplicated per element so that element-wise stresses
//! stay discontinuous.

use std::fmt::Write as _;
use std::path::Path;

use btf_core::cases::Setup;
use btf_core::refelem::{ReferenceElement, Shape};
use btf_core::{Error, Result};

/// Linear sub-cells of one element as local node indices, with the VTK cell
/// type.
fn sub_cells(re: &ReferenceElement) -> (Vec<Vec<usize>>, u8) {
    let p = re.order();
    let idx = |i, j, k| re.lattice_index([i, j, k]);
    let mut cells = Vec::new();
    match re.shape() {
        Shape::Line => {
            for i in 0..p {
                cells.push(vec![idx(i, 0, 0), idx(i + 1, 0, 0)]);
            }
            (cells, 3)
        }
        Shape::Triangle => {
            for j in 0..p {
                for i in 0..p - j {
                    cells.push(vec![idx(i, j, 0), idx(i + 1, j, 0), idx(i, j + 1, 0)]);
                    if i + j + 1 < p {
                        cells.push(vec![idx(i + 1, j, 0), idx(i + 1, j + 1, 0), idx(i, j + 1, 0)]);
                    }
                }
            }
            (cells, 5)
        }
        Shape::Quadrilateral => {
            for j in 0..p {
                for i in 0..p {
                    cells.push(vec![idx(i, j, 0), idx(i + 1, j, 0), idx(i + 1, j + 1, 0), idx(i, j + 1, 0)]);
                }
            }
            (cells, 9)
        }
        Shape::Hexahedron => {
            for k in 0..p {
                for j in 0..p {
                    for i in 0..p {
                        cells.push(vec![
                            idx(i, j, k),
                            idx(i + 1, j, k),
                            idx(i + 1, j + 1, k),
                            idx(i, j + 1, k),
                            idx(i, j, k + 1),
                            idx(i + 1, j, k + 1),
                            idx(i + 1, j + 1, k + 1),
                            idx(i, j + 1, k + 1),
                        ]);
                    }
                }
            }
            (cells, 12)
        }
    }
}

/// Writes the mesh of `setup`, displaced by `u` when `deformed` is set, with
/// point data `displacement`, `phi` and `von_mises`.
pub fn write_field(path: &Path, setup: &Setup, u: &[f64], deformed: bool) -> Result<()> {
    let mesh = &setup.mesh;
    let d = mesh.dim();
    if u.len() != d * mesh.n_nodes() {
        return Err(Error::Config(format!(
            "solution has {} entries, mesh needs {}",
            u.len(),
            d * mesh.n_nodes()
        )));
    }
    let re = mesh.reference();
    let (cells, cell_type) = sub_cells(re);
    let per = re.n_nodes();
    let n_points = per * mesh.n_elements();

    let mut pts = String::new();
    let mut disp = String::new();
    let mut phi = String::new();
    let mut vm = String::new();
    for e in 0..mesh.n_elements() {
        for (a, &node) in mesh.element(e).iter().enumerate() {
            let x = mesh.nodes()[node];
            let mut w = [0.0; 3];
            w[..d].copy_from_slice(&u[d * node..d * node + d]);
            let s = if deformed { 1.0 } else { 0.0 };
            writeln!(pts, "{} {} {}", x[0] + s * w[0], x[1] + s * w[1], x[2] + s * w[2]).unwrap();
            writeln!(disp, "{} {} {}", w[0], w[1], w[2]).unwrap();
            writeln!(phi, "{}", setup.phi[node]).unwrap();
            writeln!(vm, "{}", setup.von_mises(e, &re.nodes()[a], u)?).unwrap();
        }
    }

    let mut out = String::new();
    writeln!(out, "# vtk DataFile Version 3.0").unwrap();
    let label = if deformed { "deformed" } else { "undeformed" };
    writeln!(out, "{} {label}", setup.config.name).unwrap();
    writeln!(out, "ASCII\nDATASET UNSTRUCTURED_GRID").unwrap();
    writeln!(out, "POINTS {n_points} double").unwrap();
    out.push_str(&pts);
    let n_cells = cells.len() * mesh.n_elements();
    let size: usize = cells.iter().map(|c| c.len() + 1).sum::<usize>() * mesh.n_elements();
    writeln!(out, "CELLS {n_cells} {size}").unwrap();
    for e in 0..mesh.n_elements() {
        for c in &cells {
            write!(out, "{}", c.len()).unwrap();
            for &a in c {
                write!(out, " {}", e * per + a).unwrap();
            }
            out.push('\n');
        }
    }
    writeln!(out, "CELL_TYPES {n_cells}").unwrap();
    for _ in 0..n_cells {
        writeln!(out, "{cell_type}").unwrap();
    }
    writeln!(out, "POINT_DATA {n_points}").unwrap();
    writeln!(out, "VECTORS displacement double").unwrap();
    out.push_str(&disp);
    writeln!(out, "SCALARS phi double 1\nLOOKUP_TABLE default").unwrap();
    out.push_str(&phi);
    writeln!(out, "SCALARS von_mises double 1\nLOOKUP_TABLE default").unwrap();
    out.push_str(&vm);
    std::fs::write(path, out)?;
    Ok(())
}

/// A polyline with a displacement at every point.
pub struct Polyline {
    pub c: f64,
    pub points: Vec<[f64; 3]>,
    pub displacement: Vec<[f64; 3]>,
}

/// Writes level-set polylines, displaced when `deformed` is set, with point
/// data `displacement` and cell data `level`.
pub fn write_polylines(path: &Path, lines: &[Polyline], deformed: bool) -> Result<()> {
    let n_points: usize = lines.iter().map(|l| l.points.len()).sum();
    let mut out = String::new();
    writeln!(out, "# vtk DataFile Version 3.0\nlevel sets\nASCII\nDATASET UNSTRUCTURED_GRID").unwrap();
    writeln!(out, "POINTS {n_points} double").unwrap();
    for l in lines {
        for (x, w) in l.points.iter().zip(&l.displacement) {
            let s = if deformed { 1.0 } else { 0.0 };
            writeln!(out, "{} {} {}", x[0] + s * w[0], x[1] + s * w[1], x[2] + s * w[2]).unwrap();
        }
    }
    writeln!(out, "CELLS {} {}", lines.len(), n_points + lines.len()).unwrap();
    let mut first = 0;
    for l in lines {
        write!(out, "{}", l.points.len()).unwrap();
        for i in 0..l.points.len() {
            write!(out, " {}", first + i).unwrap();
        }
        out.push('\n');
        first += l.points.len();
    }
    writeln!(out, "CELL_TYPES {}", lines.len()).unwrap();
    for _ in lines {
        writeln!(out, "4").unwrap();
    }
    writeln!(out, "CELL_DATA {}\nSCALARS level double 1\nLOOKUP_TABLE default", lines.len()).unwrap();
    for l in lines {
        writeln!(out, "{}", l.c).unwrap();
    }
    writeln!(out, "POINT_DATA {n_points}\nVECTORS displacement double").unwrap();
    for l in lines {
        for w in &l.displacement {
            writeln!(out, "{} {} {}", w[0], w[1], w[2]).unwrap();
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
