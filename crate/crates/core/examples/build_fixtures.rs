//! Writes the TC2 and TC4 mesh fixtures.
//!
//! ```text
//! cargo run --release --example build_fixtures -- tc2 <order> <n_level> <n_arc> <out.json>
//! cargo run --release --example build_fixtures -- tc4 <order> <n> <n_layers> <out.json>
//! ```
//!
//! Both domains are cut from a simple shape by two level sets of `phi`, so a
//! block parametrization along the level sets exists. Boundary points on the
//! implicit surface `psi = 0` are found by bracketed root finding.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use btf_core::levelset::DomainSpec;
use btf_core::linalg::Vec3;
use btf_core::mesh::{build_block_mesh, ogrid_point, Block, Mesh};

fn tc2_domain() -> DomainSpec {
    DomainSpec::EllipseWithBell {
        radii: [10.0, 6.5],
        bell_center: [4.0, 5.0],
        bell_radius: 12.0,
    }
}

/// Root of `f` in `[a, b]` with `f(a) < 0 < f(b)` or the reverse.
fn bracket_root(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 || (b - a).abs() < 1e-16 * (1.0 + m.abs()) {
            return m;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

const X_F: [f64; 2] = [-10.0, 10.0];

fn tc2_point(c: f64, theta: f64) -> Vec3 {
    let r = 2.0 * (c + 0.5 + 0.1 * (8.0 * theta).sin());
    Vec3::new(X_F[0] + r * theta.cos(), X_F[1] + r * theta.sin(), 0.0)
}

/// Angles where the level set `phi = c` leaves the bulk domain.
fn tc2_angles(c: f64) -> (f64, f64) {
    let psi = tc2_domain();
    let g = |t: f64| psi.eval(2, &tc2_point(c, t)).0;
    let n = 4000;
    let ts: Vec<f64> = (0..=n).map(|i| -FRAC_PI_2 + 1e-6 + (i as f64) * (FRAC_PI_2 * 2.0 - 2e-6) / n as f64).collect();
    let mut roots = Vec::new();
    for w in ts.windows(2) {
        if (g(w[0]) < 0.0) != (g(w[1]) < 0.0) {
            roots.push(bracket_root(&g, w[0], w[1]));
        }
    }
    assert_eq!(roots.len(), 2, "level {c} crosses the boundary {} times", roots.len());
    (roots[0], roots[1])
}

fn tc2(order: usize, n_level: usize, n_arc: usize) -> Mesh {
    let block = Block::new(
        |s| {
            let c = 4.0 + 3.0 * s[0];
            let (a, b) = tc2_angles(c);
            let x = tc2_point(c, a + s[1] * (b - a));
            [x[0], x[1], 0.0]
        },
        [n_level, n_arc, 1],
        [Some("levelset_min"), Some("levelset_max"), Some("boundary"), Some("boundary"), None, None],
    );
    build_block_mesh(2, vec![block], order, false).expect("tc2 mesh")
}

const X_S: [f64; 3] = [-1.0, 1.0, 2.0];

struct Cap {
    d0: Vec3,
    e1: Vec3,
    e2: Vec3,
    psi: DomainSpec,
}

impl Cap {
    fn new() -> Self {
        let xe = Vec3::new(-0.2, 0.2, 0.1);
        let d0 = (xe - Vec3::from(X_S)).normalize();
        let e1 = d0.cross(&Vec3::z()).normalize();
        let e2 = d0.cross(&e1);
        Self {
            d0,
            e1,
            e2,
            psi: DomainSpec::Ellipsoid {
                center: [-0.2, 0.2, 0.1],
                radii: [0.9, 0.7, 0.8],
            },
        }
    }

    /// Unit direction from planar exponential-map coordinates.
    fn direction(&self, x: f64, y: f64) -> Vec3 {
        let g = x.hypot(y);
        let sinc = if g < 1e-8 { 1.0 - g * g / 6.0 } else { g.sin() / g };
        g.cos() * self.d0 + sinc * (x * self.e1 + y * self.e2)
    }

    /// Geodesic angle of the cap boundary on the sphere of radius `rho`.
    fn radius(&self, alpha: f64, rho: f64) -> f64 {
        let f = |g: f64| {
            let d = self.direction(g * alpha.cos(), g * alpha.sin());
            self.psi.eval(3, &(Vec3::from(X_S) + rho * d)).0
        };
        bracket_root(&f, 0.0, FRAC_PI_2)
    }
}

fn tc4(order: usize, n: usize, n_layers: usize) -> Mesh {
    let cap = Cap::new();
    let blocks = (0..5)
        .map(|b| {
            let cap = &cap;
            let lateral = if b == 0 { None } else { Some("lateral") };
            Block::new(
                move |s| {
                    let rho = 2.0 + 0.5 * s[2];
                    let mean = (0..4).map(|k| cap.radius(k as f64 * FRAC_PI_2, rho)).sum::<f64>() / 4.0;
                    let p = ogrid_point(b, s[0], s[1], 0.4 * mean, &|a| cap.radius(a, rho));
                    let x = Vec3::from(X_S) + rho * cap.direction(p[0], p[1]);
                    [x[0], x[1], x[2]]
                },
                [n, n, n_layers],
                [None, None, None, lateral, Some("levelset_min"), Some("levelset_max")],
            )
        })
        .collect();
    build_block_mesh(3, blocks, order, false).expect("tc4 mesh")
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() != 5 {
        eprintln!("usage: build_fixtures tc2|tc4 <order> <n1> <n2> <out.json>");
        std::process::exit(1);
    }
    let num = |i: usize| args[i].parse::<usize>().expect("integer argument");
    let mesh = match args[0].as_str() {
        "tc2" => tc2(num(1), num(2), num(3)),
        "tc4" => tc4(num(1), num(2), num(3)),
        other => {
            eprintln!("unknown case {other}");
            std::process::exit(1);
        }
    };
    mesh.export(Path::new(&args[4])).expect("write mesh");
    println!(
        "{}: {} elements, {} nodes, measure {:.12}",
        args[4],
        mesh.n_elements(),
        mesh.n_nodes(),
        mesh.measure(0).expect("positive Jacobians")
    );
}
