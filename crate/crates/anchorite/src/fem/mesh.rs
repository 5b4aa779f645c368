//! Mesh container and a plain-text mesh interchange format.
//!
//! A [`Mesh`] couples node coordinates, element connectivity and named node
//! groups used to attach boundary conditions.  Three element families are
//! supported: two-node axial bars, three-node constant-strain triangles and
//! four-node isoparametric quadrilaterals (Zienkiewicz & Taylor, *The Finite
//! Element Method*, 7th ed., chs. 5–6).
//!
//! # File format
//!
//! Mesh files are whitespace-delimited text with three sections.  Everything
//! after a `#` is a comment.  Node identifiers may be arbitrary non-negative
//! integers; they are mapped to dense indices in order of first appearance.
//! Element order in the file defines the element indices used everywhere
//! else (integration-point numbering, constituent assignment, ...).
//!
//! ```text
//! # minimal bar mesh
//! NODES
//! 0   0.0  0.0
//! 1   1.0  0.0
//! ELEMENTS
//! 0  bar2  0 1
//! GROUPS
//! left   0
//! right  1
//! ```
//!
//! [`load_mesh`] validates every element Jacobian on read, so a mesh that
//! parses successfully is safe to assemble.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use super::FemError;

/// Supported element families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    /// Two-node axial bar with one integration point, oriented along +x.
    Bar2,
    /// Three-node constant-strain triangle with one integration point.
    Tri3,
    /// Four-node isoparametric quadrilateral with a 2x2 Gauss rule.
    Quad4,
}

impl ElementType {
    /// Number of nodes in the connectivity of this element type.
    pub fn n_nodes(self) -> usize {
        match self {
            ElementType::Bar2 => 2,
            ElementType::Tri3 => 3,
            ElementType::Quad4 => 4,
        }
    }

    /// Number of integration points of the (fixed) quadrature rule.
    pub fn n_ips(self) -> usize {
        match self {
            ElementType::Bar2 | ElementType::Tri3 => 1,
            ElementType::Quad4 => 4,
        }
    }

    /// Lower-case keyword used in mesh files.
    pub fn name(self) -> &'static str {
        match self {
            ElementType::Bar2 => "bar2",
            ElementType::Tri3 => "tri3",
            ElementType::Quad4 => "quad4",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "bar2" => Some(ElementType::Bar2),
            "tri3" => Some(ElementType::Tri3),
            "quad4" => Some(ElementType::Quad4),
            _ => None,
        }
    }
}

impl fmt::Display for ElementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A single element: its type plus the dense node indices it connects.
#[derive(Debug, Clone)]
pub struct Element {
    /// Element family.
    pub etype: ElementType,
    /// Dense node indices, length `etype.n_nodes()`.
    pub nodes: Vec<usize>,
}

/// Node coordinates, connectivity and named node groups.
#[derive(Debug, Clone, Default)]
pub struct Mesh {
    /// Node coordinates `(x, y)`, indexed densely from zero.
    pub nodes: Vec<[f64; 2]>,
    /// Elements in file order.
    pub elements: Vec<Element>,
    /// Named node groups for boundary conditions, sorted by name.
    pub groups: BTreeMap<String, Vec<usize>>,
}

impl Mesh {
    /// Number of nodes.
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Number of elements.
    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    /// Looks up a named node group.
    pub fn group(&self, name: &str) -> Result<&[usize], FemError> {
        self.groups
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| FemError::UnknownGroup(name.to_string()))
    }

    /// Checks connectivity bounds and element geometry.
    ///
    /// Bars must have positive length along +x; triangles and
    /// quadrilaterals must have a positive Jacobian at every integration
    /// point (counter-clockwise connectivity).
    pub fn validate(&self) -> Result<(), FemError> {
        for (index, element) in self.elements.iter().enumerate() {
            let invalid = |message: String| FemError::InvalidElement { element: index, message };
            if element.nodes.len() != element.etype.n_nodes() {
                return Err(invalid(format!(
                    "{} element needs {} nodes, got {}",
                    element.etype,
                    element.etype.n_nodes(),
                    element.nodes.len()
                )));
            }
            for &n in &element.nodes {
                if n >= self.nodes.len() {
                    return Err(invalid(format!("node index {n} out of bounds")));
                }
            }
            let xy = |i: usize| self.nodes[element.nodes[i]];
            match element.etype {
                ElementType::Bar2 => {
                    let length = xy(1)[0] - xy(0)[0];
                    if length <= 0.0 {
                        return Err(invalid(format!(
                            "bar must run along +x with positive length, got dx = {length}"
                        )));
                    }
                }
                ElementType::Tri3 => {
                    let area = triangle_area(xy(0), xy(1), xy(2));
                    if area <= 0.0 {
                        return Err(invalid(format!(
                            "triangle has non-positive Jacobian (signed area {area}); \
                             connectivity must be counter-clockwise"
                        )));
                    }
                }
                ElementType::Quad4 => {
                    let coords = [xy(0), xy(1), xy(2), xy(3)];
                    let g = 1.0 / 3.0f64.sqrt();
                    for (xi, eta) in [(-g, -g), (g, -g), (g, g), (-g, g)] {
                        let det = quad_jacobian_det(&coords, xi, eta);
                        if det <= 0.0 {
                            return Err(invalid(format!(
                                "quadrilateral has non-positive Jacobian ({det}) at \
                                 Gauss point ({xi:.4}, {eta:.4})"
                            )));
                        }
                    }
                }
            }
        }
        for (name, nodes) in &self.groups {
            for &n in nodes {
                if n >= self.nodes.len() {
                    return Err(FemError::Parse {
                        line: 0,
                        message: format!("group '{name}' references node index {n} out of bounds"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Signed area of the triangle `(a, b, c)`; positive when counter-clockwise.
pub(crate) fn triangle_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Jacobian determinant of the bilinear quadrilateral map at `(xi, eta)`.
pub(crate) fn quad_jacobian_det(coords: &[[f64; 2]; 4], xi: f64, eta: f64) -> f64 {
    let (dxi, deta) = quad_shape_derivatives(xi, eta);
    let mut j = [[0.0; 2]; 2];
    for i in 0..4 {
        j[0][0] += dxi[i] * coords[i][0];
        j[0][1] += dxi[i] * coords[i][1];
        j[1][0] += deta[i] * coords[i][0];
        j[1][1] += deta[i] * coords[i][1];
    }
    j[0][0] * j[1][1] - j[0][1] * j[1][0]
}

/// Derivatives of the four bilinear shape functions with respect to the
/// parent coordinates, nodes ordered counter-clockwise from `(-1, -1)`.
pub(crate) fn quad_shape_derivatives(xi: f64, eta: f64) -> ([f64; 4], [f64; 4]) {
    let dxi = [
        -0.25 * (1.0 - eta),
        0.25 * (1.0 - eta),
        0.25 * (1.0 + eta),
        -0.25 * (1.0 + eta),
    ];
    let deta = [
        -0.25 * (1.0 - xi),
        -0.25 * (1.0 + xi),
        0.25 * (1.0 + xi),
        0.25 * (1.0 - xi),
    ];
    (dxi, deta)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Nodes,
    Elements,
    Groups,
}

/// Parses a mesh from text in the format described in the module docs.
///
/// The result is *not* geometrically validated; [`load_mesh`] combines
/// parsing with [`Mesh::validate`].
pub fn parse_mesh(text: &str) -> Result<Mesh, FemError> {
    let mut section = Section::None;
    let mut node_ids: BTreeMap<u64, usize> = BTreeMap::new();
    let mut element_ids: BTreeMap<u64, usize> = BTreeMap::new();
    let mut mesh = Mesh::default();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |message: String| FemError::Parse { line: line_no, message };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line {
            "NODES" => {
                section = Section::Nodes;
                continue;
            }
            "ELEMENTS" => {
                section = Section::Elements;
                continue;
            }
            "GROUPS" => {
                section = Section::Groups;
                continue;
            }
            _ => {}
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match section {
            Section::None => {
                return Err(err(format!(
                    "expected a section header (NODES, ELEMENTS or GROUPS), got '{line}'"
                )));
            }
            Section::Nodes => {
                if tokens.len() != 3 {
                    return Err(err(format!(
                        "node line needs 'id x y', got {} tokens",
                        tokens.len()
                    )));
                }
                let id: u64 = tokens[0]
                    .parse()
                    .map_err(|_| err(format!("invalid node id '{}'", tokens[0])))?;
                let x: f64 = tokens[1]
                    .parse()
                    .map_err(|_| err(format!("invalid x coordinate '{}'", tokens[1])))?;
                let y: f64 = tokens[2]
                    .parse()
                    .map_err(|_| err(format!("invalid y coordinate '{}'", tokens[2])))?;
                if node_ids.insert(id, mesh.nodes.len()).is_some() {
                    return Err(err(format!("duplicate node id {id}")));
                }
                mesh.nodes.push([x, y]);
            }
            Section::Elements => {
                if tokens.len() < 2 {
                    return Err(err("element line needs 'id type n1 n2 ...'".to_string()));
                }
                let id: u64 = tokens[0]
                    .parse()
                    .map_err(|_| err(format!("invalid element id '{}'", tokens[0])))?;
                let etype = ElementType::from_name(tokens[1])
                    .ok_or_else(|| err(format!("unknown element type '{}'", tokens[1])))?;
                let conn = &tokens[2..];
                if conn.len() != etype.n_nodes() {
                    return Err(err(format!(
                        "{} element needs {} nodes, got {}",
                        etype,
                        etype.n_nodes(),
                        conn.len()
                    )));
                }
                let mut nodes = Vec::with_capacity(conn.len());
                for token in conn {
                    let nid: u64 = token
                        .parse()
                        .map_err(|_| err(format!("invalid node id '{token}'")))?;
                    let index = *node_ids
                        .get(&nid)
                        .ok_or_else(|| err(format!("element references unknown node id {nid}")))?;
                    nodes.push(index);
                }
                if element_ids.insert(id, mesh.elements.len()).is_some() {
                    return Err(err(format!("duplicate element id {id}")));
                }
                mesh.elements.push(Element { etype, nodes });
            }
            Section::Groups => {
                if tokens.len() < 2 {
                    return Err(err("group line needs 'name n1 n2 ...'".to_string()));
                }
                let name = tokens[0].to_string();
                if mesh.groups.contains_key(&name) {
                    return Err(err(format!("duplicate group name '{name}'")));
                }
                let mut nodes = Vec::with_capacity(tokens.len() - 1);
                for token in &tokens[1..] {
                    let nid: u64 = token
                        .parse()
                        .map_err(|_| err(format!("invalid node id '{token}'")))?;
                    let index = *node_ids
                        .get(&nid)
                        .ok_or_else(|| err(format!("group references unknown node id {nid}")))?;
                    nodes.push(index);
                }
                mesh.groups.insert(name, nodes);
            }
        }
    }
    Ok(mesh)
}

/// Reads and validates a mesh file.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh, FemError> {
    let text = fs::read_to_string(path)?;
    let mesh = parse_mesh(&text)?;
    mesh.validate()?;
    Ok(mesh)
}

/// Serializes a mesh to the text format described in the module docs.
///
/// Dense indices are written back as ids, so a parse/format round trip is
/// the identity.
pub fn format_mesh(mesh: &Mesh) -> String {
    let mut out = String::new();
    out.push_str("NODES\n");
    for (i, [x, y]) in mesh.nodes.iter().enumerate() {
        out.push_str(&format!("{i} {x} {y}\n"));
    }
    out.push_str("ELEMENTS\n");
    for (i, element) in mesh.elements.iter().enumerate() {
        out.push_str(&format!("{i} {}", element.etype));
        for n in &element.nodes {
            out.push_str(&format!(" {n}"));
        }
        out.push('\n');
    }
    if !mesh.groups.is_empty() {
        out.push_str("GROUPS\n");
        for (name, nodes) in &mesh.groups {
            out.push_str(name);
            for n in nodes {
                out.push_str(&format!(" {n}"));
            }
            out.push('\n');
        }
    }
    out
}

/// Validates and writes a mesh file.
pub fn write_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<(), FemError> {
    mesh.validate()?;
    fs::write(path, format_mesh(mesh))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL_BAR: &str = "\
# a single bar element
NODES
0   0.0  0.0
1   1.0  0.0
ELEMENTS
0  bar2  0 1
GROUPS
left   0
right  1
";

    #[test]
    fn parses_minimal_bar_file() {
        let mesh = parse_mesh(MINIMAL_BAR).expect("minimal bar file parses");
        mesh.validate().expect("minimal bar mesh is valid");
        assert_eq!(mesh.n_nodes(), 2, "two nodes expected");
        assert_eq!(mesh.n_elements(), 1, "one element expected");
        assert_eq!(mesh.elements[0].etype, ElementType::Bar2, "element type is bar2");
        assert_eq!(mesh.group("left").unwrap(), &[0], "left group holds node 0");
        assert_eq!(mesh.group("right").unwrap(), &[1], "right group holds node 1");
    }

    #[test]
    fn format_parse_round_trip_is_identity() {
        let mesh = parse_mesh(MINIMAL_BAR).unwrap();
        let text = format_mesh(&mesh);
        let back = parse_mesh(&text).expect("formatted mesh parses");
        assert_eq!(back.nodes, mesh.nodes, "node coordinates survive the round trip");
        assert_eq!(back.n_elements(), mesh.n_elements(), "element count survives");
        assert_eq!(
            back.elements[0].nodes, mesh.elements[0].nodes,
            "connectivity survives the round trip"
        );
        assert_eq!(back.groups, mesh.groups, "groups survive the round trip");
    }

    #[test]
    fn reversed_triangle_is_rejected() {
        let text = "\
NODES
0 0 0
1 1 0
2 0 1
ELEMENTS
0 tri3 0 2 1
";
        let mesh = parse_mesh(text).unwrap();
        let err = mesh.validate().expect_err("clockwise triangle must be rejected");
        match err {
            FemError::InvalidElement { element, message } => {
                assert_eq!(element, 0, "offending element index is reported");
                assert!(message.contains("Jacobian"), "message mentions the Jacobian: {message}");
            }
            other => panic!("expected InvalidElement, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "NODES\n0 0.0 0.0\n1 oops 0.0\n";
        let err = parse_mesh(text).expect_err("bad coordinate must fail");
        match err {
            FemError::Parse { line, message } => {
                assert_eq!(line, 3, "error points at the offending line");
                assert!(message.contains("oops"), "message quotes the bad token: {message}");
            }
            other => panic!("expected ParseError, got {other:?}"),
        }
    }

    #[test]
    fn unknown_node_reference_is_a_parse_error() {
        let text = "NODES\n0 0 0\n1 1 0\nELEMENTS\n0 bar2 0 7\n";
        let err = parse_mesh(text).expect_err("unknown node id must fail");
        match err {
            FemError::Parse { line, message } => {
                assert_eq!(line, 5, "error points at the element line");
                assert!(message.contains('7'), "message names the missing id: {message}");
            }
            other => panic!("expected ParseError, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_node_id_is_rejected() {
        let text = "NODES\n0 0 0\n0 1 0\n";
        let err = parse_mesh(text).expect_err("duplicate node id must fail");
        assert!(
            matches!(err, FemError::Parse { line: 3, .. }),
            "duplicate reported on its own line, got {err:?}"
        );
    }

    #[test]
    fn content_before_section_header_is_rejected() {
        let err = parse_mesh("0 0 0\n").expect_err("data before any section must fail");
        assert!(matches!(err, FemError::Parse { line: 1, .. }), "got {err:?}");
    }

    #[test]
    fn arbitrary_node_ids_are_densely_remapped() {
        let text = "\
NODES
10 0 0
20 1 0
30 0 1
ELEMENTS
5 tri3 10 20 30
GROUPS
corner 30
";
        let mesh = parse_mesh(text).unwrap();
        mesh.validate().unwrap();
        assert_eq!(mesh.elements[0].nodes, vec![0, 1, 2], "ids remapped in appearance order");
        assert_eq!(mesh.group("corner").unwrap(), &[2], "group ids remapped consistently");
    }

    #[test]
    fn load_and_write_round_trip_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bar.mesh");
        let mesh = parse_mesh(MINIMAL_BAR).unwrap();
        write_mesh(&mesh, &path).expect("mesh writes");
        let back = load_mesh(&path).expect("mesh loads");
        assert_eq!(back.nodes, mesh.nodes, "file round trip preserves nodes");
        assert_eq!(back.groups, mesh.groups, "file round trip preserves groups");
    }

    #[test]
    fn clockwise_quad_is_rejected() {
        // Clockwise node ordering flips the Jacobian sign everywhere.
        let text = "\
NODES
0 0 0
1 0 1
2 1 1
3 1 0
ELEMENTS
0 quad4 0 1 2 3
";
        let mesh = parse_mesh(text).unwrap();
        let err = mesh.validate().expect_err("clockwise quad must be rejected");
        assert!(matches!(err, FemError::InvalidElement { element: 0, .. }), "got {err:?}");
    }

    #[test]
    fn crossed_quad_is_rejected() {
        // A bowtie quad self-intersects, so the Jacobian changes sign
        // across the reference square.
        let text = "\
NODES
0 0 0
1 1 0
2 0 1
3 1 1
ELEMENTS
0 quad4 0 1 2 3
";
        let mesh = parse_mesh(text).unwrap();
        let err = mesh.validate().expect_err("crossed quad must be rejected");
        assert!(matches!(err, FemError::InvalidElement { element: 0, .. }), "got {err:?}");
    }
}
