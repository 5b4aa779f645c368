//! Built-in mesh generators.
//!
//! Three parametric families cover the bundled experiments:
//!
//! * [`tapered_bar`] — a one-dimensional bar of length 12 whose
//!   cross-section (applied through [`BarSection::Tapered`] at assembly
//!   time) narrows from 0.8 at the ends to ≈ 0.19 at the centre, so
//!   plasticity localizes in a well-defined hot spot.  Element counts from
//!   32 to about 3000 span the mesh-density study.
//! * [`rve_cell`] — a structured quadrilateral grid over the unit square,
//!   used as a periodic representative volume element.  Constituent
//!   assignment (fibers vs matrix) happens by centroid lookup against
//!   circular inclusions, see [`assign_phases`](super::rve::assign_phases).
//! * [`plate_with_cutouts`] — a rectangular plate perforated by circular
//!   holes, discretized with constant-strain triangles on a structured
//!   grid (holes are "staircased": an element survives when its centroid
//!   lies outside every hole).  The bundled plate mesh file is generated
//!   by this function.
//!
//! All generators number nodes row-major so the assembled stiffness has a
//! small bandwidth.

use std::collections::BTreeMap;

use super::elements::TAPERED_BAR_LENGTH;
use super::mesh::{Element, ElementType, Mesh};
use super::FemError;

/// Element counts of the bar mesh family used in the mesh-density study.
pub const BAR_FAMILY: [usize; 5] = [32, 96, 320, 1024, 3020];

/// One-dimensional tapered bar with `n` equal elements on
/// `[0, TAPERED_BAR_LENGTH]`.
///
/// Node groups: `left` (x = 0) and `right` (x = L).
pub fn tapered_bar(n: usize) -> Mesh {
    assert!(n >= 1, "bar needs at least one element");
    let nodes = (0..=n)
        .map(|i| [TAPERED_BAR_LENGTH * i as f64 / n as f64, 0.0])
        .collect();
    let elements = (0..n)
        .map(|e| Element { etype: ElementType::Bar2, nodes: vec![e, e + 1] })
        .collect();
    let mut groups = BTreeMap::new();
    groups.insert("left".to_string(), vec![0]);
    groups.insert("right".to_string(), vec![n]);
    Mesh { nodes, elements, groups }
}

/// Structured `n x n` quadrilateral grid over the unit square, for use as
/// a periodic cell.
///
/// Node groups: `corner` (the origin node, for pinning rigid-body modes).
/// Boundary pairing is reconstructed geometrically by the periodic solver,
/// so no edge groups are needed.
pub fn rve_cell(n: usize) -> Mesh {
    assert!(n >= 1, "cell needs at least one element per side");
    let np = n + 1;
    let mut nodes = Vec::with_capacity(np * np);
    for j in 0..np {
        for i in 0..np {
            nodes.push([i as f64 / n as f64, j as f64 / n as f64]);
        }
    }
    let mut elements = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let n0 = j * np + i;
            elements.push(Element {
                etype: ElementType::Quad4,
                nodes: vec![n0, n0 + 1, n0 + np + 1, n0 + np],
            });
        }
    }
    let mut groups = BTreeMap::new();
    groups.insert("corner".to_string(), vec![0]);
    Mesh { nodes, elements, groups }
}

/// A circular hole cut out of the plate.
#[derive(Debug, Clone, Copy)]
pub struct Hole {
    /// Centre x.
    pub cx: f64,
    /// Centre y.
    pub cy: f64,
    /// Radius.
    pub r: f64,
}

/// Hole pattern of the bundled plate: five staggered cutouts that funnel
/// plastic flow into bands between the holes.
pub fn plate_holes() -> Vec<Hole> {
    vec![
        Hole { cx: 5.0, cy: 5.0, r: 2.6 },
        Hole { cx: 15.0, cy: 5.0, r: 2.6 },
        Hole { cx: 10.0, cy: 10.0, r: 2.9 },
        Hole { cx: 5.0, cy: 15.0, r: 2.6 },
        Hole { cx: 15.0, cy: 15.0, r: 2.6 },
    ]
}

/// Rectangular plate `width x height` on an `nx x ny` grid of quads split
/// into constant-strain triangles, with `holes` staircased out.
///
/// Node groups: `bottom` (y = 0), `top` (y = height) and `anchor` (the
/// bottom-left surviving node, for pinning horizontal rigid motion).
pub fn plate_with_cutouts(
    width: f64,
    height: f64,
    nx: usize,
    ny: usize,
    holes: &[Hole],
) -> Result<Mesh, FemError> {
    assert!(nx >= 1 && ny >= 1, "plate needs at least one element per side");
    let npx = nx + 1;
    let coord = |i: usize, j: usize| [width * i as f64 / nx as f64, height * j as f64 / ny as f64];
    let inside_hole = |p: [f64; 2]| {
        holes
            .iter()
            .any(|h| (p[0] - h.cx).powi(2) + (p[1] - h.cy).powi(2) < h.r * h.r)
    };

    // Collect surviving triangles in grid-node indexing first.
    let mut tris: Vec<[usize; 3]> = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let n00 = j * npx + i;
            let n10 = n00 + 1;
            let n01 = n00 + npx;
            let n11 = n01 + 1;
            // Alternate the split diagonal in a checkerboard so the hole
            // staircase stays roughly symmetric.
            let pair: [[usize; 3]; 2] = if (i + j) % 2 == 0 {
                [[n00, n10, n11], [n00, n11, n01]]
            } else {
                [[n00, n10, n01], [n10, n11, n01]]
            };
            for tri in pair {
                let pts: Vec<[f64; 2]> =
                    tri.iter().map(|&n| coord(n % npx, n / npx)).collect();
                let centroid = [
                    (pts[0][0] + pts[1][0] + pts[2][0]) / 3.0,
                    (pts[0][1] + pts[1][1] + pts[2][1]) / 3.0,
                ];
                if !inside_hole(centroid) {
                    tris.push(tri);
                }
            }
        }
    }

    // Drop orphan nodes and remap densely.
    let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
    for tri in &tris {
        for &n in tri {
            let next = remap.len();
            remap.entry(n).or_insert(next);
        }
    }
    let mut nodes = vec![[0.0, 0.0]; remap.len()];
    for (&grid, &dense) in &remap {
        nodes[dense] = coord(grid % npx, grid / npx);
    }
    let elements = tris
        .into_iter()
        .map(|tri| Element {
            etype: ElementType::Tri3,
            nodes: tri.iter().map(|n| remap[n]).collect(),
        })
        .collect();

    let tol = 1e-9 * width.max(height);
    let mut bottom = Vec::new();
    let mut top = Vec::new();
    for (i, &[_, y]) in nodes.iter().enumerate() {
        if y.abs() < tol {
            bottom.push(i);
        } else if (y - height).abs() < tol {
            top.push(i);
        }
    }
    if bottom.is_empty() || top.is_empty() {
        return Err(FemError::Config(
            "plate holes removed an entire loading edge".into(),
        ));
    }
    let anchor = *bottom
        .iter()
        .min_by(|&&a, &&b| nodes[a][0].total_cmp(&nodes[b][0]))
        .expect("bottom group non-empty");

    let mut groups = BTreeMap::new();
    groups.insert("bottom".to_string(), bottom);
    groups.insert("top".to_string(), top);
    groups.insert("anchor".to_string(), vec![anchor]);
    let mesh = Mesh { nodes, elements, groups };
    mesh.validate()?;
    Ok(mesh)
}
