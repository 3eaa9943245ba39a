//! Triangulations of the unit square with a two-part boundary labeling.
//!
//! The Dirichlet (or Robin) part of the boundary is [`BoundaryLabel::Gamma1`];
//! the Neumann control part is [`BoundaryLabel::Gamma2`]. Meshes are immutable
//! once built; all constructors validate.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryLabel {
    Gamma1,
    Gamma2,
}

impl BoundaryLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryLabel::Gamma1 => "Gamma1",
            BoundaryLabel::Gamma2 => "Gamma2",
        }
    }
}

impl FromStr for BoundaryLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Gamma1" => Ok(BoundaryLabel::Gamma1),
            "Gamma2" => Ok(BoundaryLabel::Gamma2),
            other => Err(Error::Mesh(format!("unknown boundary label `{other}`"))),
        }
    }
}

/// A side of the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Bottom => "bottom",
            Side::Right => "right",
            Side::Top => "top",
            Side::Left => "left",
        }
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bottom" => Ok(Side::Bottom),
            "right" => Ok(Side::Right),
            "top" => Ok(Side::Top),
            "left" => Ok(Side::Left),
            other => Err(Error::Validation(format!("unknown side `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub label: BoundaryLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    h: f64,
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn distance(a: Point, b: Point) -> f64 {
    (b[0] - a[0]).hypot(b[1] - a[1])
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Mesh {
    /// Builds and validates a mesh; `h` is computed as the longest triangle side.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>, boundary_edges: Vec<BoundaryEdge>) -> Result<Self> {
        let mut mesh = Mesh { vertices, triangles, boundary_edges, h: 0.0 };
        mesh.h = mesh
            .triangles
            .iter()
            .flat_map(|t| {
                let p = t.map(|i| mesh.vertices.get(i).copied().unwrap_or([f64::NAN; 2]));
                [distance(p[0], p[1]), distance(p[1], p[2]), distance(p[2], p[0])]
            })
            .fold(0.0, f64::max);
        mesh.validate()?;
        Ok(mesh)
    }

    /// Structured triangulation of `[0,1]²` with `n` cells per side, each cell
    /// split along its `(0,0)–(1,1)` diagonal. Vertices are numbered row-major
    /// from the origin. Edges on `gamma1_sides` are labeled Γ1, the rest Γ2.
    pub fn unit_square(n: usize, gamma1_sides: &[Side]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation("mesh subdivisions must be at least 1".into()));
        }
        let mut sides = gamma1_sides.to_vec();
        sides.sort();
        sides.dedup();
        if sides.is_empty() || sides.len() == 4 {
            return Err(Error::Validation(
                "gamma1 sides must be a nonempty proper subset of {bottom, right, top, left}".into(),
            ));
        }
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let nf = n as f64;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 / nf, j as f64 / nf]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        let label = |s: Side| {
            if sides.contains(&s) {
                BoundaryLabel::Gamma1
            } else {
                BoundaryLabel::Gamma2
            }
        };
        let mut boundary_edges = Vec::with_capacity(4 * n);
        // Counterclockwise traversal so the outward normal is on the right.
        for i in 0..n {
            boundary_edges.push(BoundaryEdge { vertices: [idx(i, 0), idx(i + 1, 0)], label: label(Side::Bottom) });
        }
        for j in 0..n {
            boundary_edges.push(BoundaryEdge { vertices: [idx(n, j), idx(n, j + 1)], label: label(Side::Right) });
        }
        for i in (0..n).rev() {
            boundary_edges.push(BoundaryEdge { vertices: [idx(i + 1, n), idx(i, n)], label: label(Side::Top) });
        }
        for j in (0..n).rev() {
            boundary_edges.push(BoundaryEdge { vertices: [idx(0, j + 1), idx(0, j)], label: label(Side::Left) });
        }
        Mesh::new(vertices, triangles, boundary_edges)
    }

    /// Splits every triangle into four through its edge midpoints.
    pub fn refine_uniform(&self) -> Result<Mesh> {
        let mut vertices = self.vertices.clone();
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Point>| -> usize {
            *midpoints.entry(edge_key(a, b)).or_insert_with(|| {
                let (pa, pb) = (vertices[a], vertices[b]);
                vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for &[a, b, c] in &self.triangles {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            triangles.push([a, ab, ca]);
            triangles.push([ab, b, bc]);
            triangles.push([ca, bc, c]);
            triangles.push([ab, bc, ca]);
        }
        let mut boundary_edges = Vec::with_capacity(2 * self.boundary_edges.len());
        for e in &self.boundary_edges {
            let [a, b] = e.vertices;
            let m = midpoint(a, b, &mut vertices);
            boundary_edges.push(BoundaryEdge { vertices: [a, m], label: e.label });
            boundary_edges.push(BoundaryEdge { vertices: [m, b], label: e.label });
        }
        Mesh::new(vertices, triangles, boundary_edges)
    }

    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len();
        if self.triangles.is_empty() {
            return Err(Error::Mesh("no triangles".into()));
        }
        if self.vertices.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::Mesh("non-finite vertex coordinate".into()));
        }
        let mut incidence: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= nv) {
                return Err(Error::Mesh(format!("triangle {t} references a missing vertex")));
            }
            let area = self.triangle_area(t);
            if !(area > 0.0) {
                return Err(Error::DegenerateTriangle { index: t, area });
            }
            for k in 0..3 {
                *incidence.entry(edge_key(tri[k], tri[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        let mut seen = HashMap::new();
        for e in &self.boundary_edges {
            let key = edge_key(e.vertices[0], e.vertices[1]);
            if incidence.get(&key) != Some(&1) {
                return Err(Error::Mesh(format!("boundary edge {key:?} is not incident to exactly one triangle")));
            }
            if seen.insert(key, e.label).is_some() {
                return Err(Error::Mesh(format!("boundary edge {key:?} listed twice")));
            }
        }
        for (key, count) in &incidence {
            match count {
                1 if !seen.contains_key(key) => {
                    return Err(Error::Mesh(format!("edge {key:?} lies on the boundary but carries no label")))
                }
                1 | 2 => {}
                _ => return Err(Error::Mesh(format!("edge {key:?} shared by {count} triangles"))),
            }
        }
        for label in [BoundaryLabel::Gamma1, BoundaryLabel::Gamma2] {
            if !self.boundary_edges.iter().any(|e| e.label == label) {
                return Err(Error::Mesh(format!("no {} edges", label.as_str())));
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Longest triangle side.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn edge_length(&self, e: &BoundaryEdge) -> f64 {
        distance(self.vertices[e.vertices[0]], self.vertices[e.vertices[1]])
    }

    /// Total length of the edges carrying `label`.
    pub fn boundary_measure(&self, label: BoundaryLabel) -> f64 {
        self.boundary_edges.iter().filter(|e| e.label == label).map(|e| self.edge_length(e)).sum()
    }

    /// Sorted, unique vertices incident to an edge with `label`.
    pub fn boundary_vertices(&self, label: BoundaryLabel) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .boundary_edges
            .iter()
            .filter(|e| e.label == label)
            .flat_map(|e| e.vertices)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Plain-text dump: `v x y`, `t i j k`, `e i j LABEL` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for p in &self.vertices {
            writeln!(s, "v {:?} {:?}", p[0], p[1]).unwrap();
        }
        for t in &self.triangles {
            writeln!(s, "t {} {} {}", t[0], t[1], t[2]).unwrap();
        }
        for e in &self.boundary_edges {
            writeln!(s, "e {} {} {}", e.vertices[0], e.vertices[1], e.label.as_str()).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        let mut edges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Mesh(format!("line {}: malformed `{line}`", lineno + 1));
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
            match fields.as_slice() {
                [] => {}
                ["v", x, y] => vertices.push([x.parse().map_err(|_| bad())?, y.parse().map_err(|_| bad())?]),
                ["t", i, j, k] => triangles.push([num(i)?, num(j)?, num(k)?]),
                ["e", i, j, label] => edges.push(BoundaryEdge { vertices: [num(i)?, num(j)?], label: label.parse()? }),
                _ => return Err(bad()),
            }
        }
        Mesh::new(vertices, triangles, edges)
    }
}

/// Bucket-grid point location for evaluating P1 functions at arbitrary points.
#[derive(Debug, Clone)]
pub struct PointLocator<'m> {
    mesh: &'m Mesh,
    origin: Point,
    cell: [f64; 2],
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

impl<'m> PointLocator<'m> {
    pub fn new(mesh: &'m Mesh) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in mesh.vertices() {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let side = ((mesh.triangles().len() as f64).sqrt().ceil() as usize).max(1);
        let dims = [side, side];
        let cell = [((hi[0] - lo[0]) / side as f64).max(f64::MIN_POSITIVE), ((hi[1] - lo[1]) / side as f64).max(f64::MIN_POSITIVE)];
        let mut locator = PointLocator { mesh, origin: lo, cell, dims, buckets: vec![Vec::new(); side * side] };
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let (mut tlo, mut thi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for &v in tri {
                let p = mesh.vertices()[v];
                for d in 0..2 {
                    tlo[d] = tlo[d].min(p[d]);
                    thi[d] = thi[d].max(p[d]);
                }
            }
            let (i0, j0) = locator.bucket_of(tlo);
            let (i1, j1) = locator.bucket_of(thi);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    locator.buckets[j * dims[0] + i].push(t);
                }
            }
        }
        locator
    }

    fn bucket_of(&self, p: Point) -> (usize, usize) {
        let f = |d: usize| (((p[d] - self.origin[d]) / self.cell[d]).floor().max(0.0) as usize).min(self.dims[d] - 1);
        (f(0), f(1))
    }

    /// Triangle containing `p` and the barycentric coordinates of `p` in it.
    pub fn locate(&self, p: Point) -> Option<(usize, [f64; 3])> {
        let (i, j) = self.bucket_of(p);
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &t in &self.buckets[j * self.dims[0] + i] {
            let [a, b, c] = self.mesh.triangles()[t].map(|v| self.mesh.vertices()[v]);
            let area = signed_area(a, b, c);
            let l = [signed_area(p, b, c) / area, signed_area(a, p, c) / area, signed_area(a, b, p) / area];
            let worst = l.iter().copied().fold(f64::INFINITY, f64::min);
            if worst >= -1e-12 {
                return Some((t, l));
            }
            if best.as_ref().map_or(true, |&(_, _, w)| worst > w) {
                best = Some((t, l, worst));
            }
        }
        best.filter(|&(_, _, w)| w >= -1e-9).map(|(t, l, _)| (t, l))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(mesh: &Mesh, label: BoundaryLabel) -> usize {
        mesh.boundary_edges().iter().filter(|e| e.label == label).count()
    }

    #[test]
    fn single_cell_counts() {
        let m = Mesh::unit_square(1, &[Side::Bottom]).unwrap();
        assert_eq!(m.vertex_count(), 4);
        assert_eq!(m.triangles().len(), 2);
        assert_eq!(m.boundary_edges().len(), 4);
        assert_eq!(count(&m, BoundaryLabel::Gamma1), 1);
        assert_eq!(count(&m, BoundaryLabel::Gamma2), 3);
    }

    #[test]
    fn two_by_two_counts() {
        let m = Mesh::unit_square(2, &[Side::Bottom]).unwrap();
        assert_eq!((m.vertex_count(), m.triangles().len(), m.boundary_edges().len()), (9, 8, 8));
        assert_eq!(count(&m, BoundaryLabel::Gamma1), 2);
        assert_eq!(count(&m, BoundaryLabel::Gamma2), 6);
        let m = Mesh::unit_square(2, &[Side::Bottom, Side::Left]).unwrap();
        assert_eq!(count(&m, BoundaryLabel::Gamma1), 4);
        assert!((m.boundary_measure(BoundaryLabel::Gamma1) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_empty_or_full_gamma1() {
        assert!(matches!(Mesh::unit_square(2, &[]), Err(Error::Validation(_))));
        assert!(matches!(Mesh::unit_square(2, &Side::ALL), Err(Error::Validation(_))));
        assert!(Mesh::unit_square(0, &[Side::Bottom]).is_err());
    }

    #[test]
    fn refinement_halves_h_and_quadruples_triangles() {
        let m = Mesh::unit_square(1, &[Side::Bottom]).unwrap();
        let r = m.refine_uniform().unwrap();
        assert_eq!(r.triangles().len(), 8);
        assert!((r.h() - 2f64.sqrt() / 2.0).abs() < 1e-15);
        let rr = r.refine_uniform().unwrap();
        assert_eq!(rr.triangles().len(), 32);
        assert_eq!(count(&r, BoundaryLabel::Gamma1), 2);
        assert_eq!(count(&rr, BoundaryLabel::Gamma1), 4);
        assert!(((rr.h() - r.h() / 2.0) / r.h()).abs() <= 1e-15);
    }

    #[test]
    fn boundary_measures() {
        let m = Mesh::unit_square(4, &[Side::Bottom]).unwrap();
        assert!((m.boundary_measure(BoundaryLabel::Gamma1) - 1.0).abs() < 1e-15);
        assert!((m.boundary_measure(BoundaryLabel::Gamma2) - 3.0).abs() < 1e-14);
        assert!((m.area() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn text_dump_round_trips() {
        let m = Mesh::unit_square(3, &[Side::Top, Side::Left]).unwrap();
        let text = m.to_text();
        assert!(text.lines().any(|l| l.starts_with("e ") && l.ends_with("Gamma1")));
        assert_eq!(Mesh::from_text(&text).unwrap(), m);
    }

    #[test]
    fn validation_catches_bad_meshes() {
        let m = Mesh::unit_square(1, &[Side::Bottom]).unwrap();
        let mut tris = m.triangles().to_vec();
        tris[0].swap(1, 2);
        assert!(Mesh::new(m.vertices().to_vec(), tris, m.boundary_edges().to_vec()).is_err());
        let edges: Vec<_> = m.boundary_edges().iter().map(|e| BoundaryEdge { label: BoundaryLabel::Gamma2, ..*e }).collect();
        assert!(Mesh::new(m.vertices().to_vec(), m.triangles().to_vec(), edges).is_err());
        let edges = m.boundary_edges()[1..].to_vec();
        assert!(Mesh::new(m.vertices().to_vec(), m.triangles().to_vec(), edges).is_err());
    }

    #[test]
    fn locator_finds_points() {
        let m = Mesh::unit_square(5, &[Side::Bottom]).unwrap();
        let loc = PointLocator::new(&m);
        for p in [[0.0, 0.0], [1.0, 1.0], [0.33, 0.71], [1.0, 0.5], [0.5, 0.0]] {
            let (t, l) = loc.locate(p).expect("inside");
            let x: f64 = (0..3).map(|k| l[k] * m.vertices()[m.triangles()[t][k]][0]).sum();
            let y: f64 = (0..3).map(|k| l[k] * m.vertices()[m.triangles()[t][k]][1]).sum();
            assert!((x - p[0]).abs() < 1e-12 && (y - p[1]).abs() < 1e-12);
        }
        assert!(loc.locate([1.5, 0.5]).is_none());
    }
}
