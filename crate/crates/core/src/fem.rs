//! P1 Lagrange spaces on a [`Mesh`]: element matrices, assembled forms,
//! nodal interpolation, traces on Γ2, and the norms of H = L²(Ω),
//! V = H¹(Ω), V₀ and Q = L²(Γ2).
//!
//! All integrands are polynomials of degree at most two, so every matrix is
//! integrated exactly in closed form.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{BoundaryLabel, Mesh, Point, PointLocator};
use crate::sparse::{SparseSymMatrix, SymTripletBuilder};

/// Which discrete space a nodal vector claims to belong to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Space {
    /// All continuous piecewise-linear functions.
    Vh,
    /// Functions vanishing at every Γ1 vertex.
    V0h,
    /// Functions equal to the given constant at every Γ1 vertex.
    Kh(f64),
}

/// A P1 function given by its nodal values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeFunction {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
    space: Space,
}

impl FeFunction {
    /// Wraps nodal values, checking the length and the claimed space membership.
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>, space: Space) -> Result<Self> {
        if values.len() != mesh.vertex_count() {
            return Err(Error::Dimension { expected: mesh.vertex_count(), found: values.len() });
        }
        let required = match space {
            Space::Vh => None,
            Space::V0h => Some(0.0),
            Space::Kh(b) => Some(b),
        };
        if let Some(r) = required {
            if let Some(&v) = mesh.boundary_vertices(BoundaryLabel::Gamma1).iter().find(|&&v| values[v] != r) {
                return Err(Error::Validation(format!(
                    "value {} at Gamma1 vertex {v} contradicts space {space:?}",
                    values[v]
                )));
            }
        }
        Ok(Self { mesh, values, space })
    }

    pub fn zeros(mesh: Arc<Mesh>) -> Self {
        let n = mesh.vertex_count();
        Self { mesh, values: vec![0.0; n], space: Space::V0h }
    }

    pub fn constant(mesh: Arc<Mesh>, c: f64) -> Self {
        let n = mesh.vertex_count();
        Self { mesh, values: vec![c; n], space: Space::Kh(c) }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `self + s * other`; the result claims only membership in `Vh`
    /// unless both operands lie in `V0h`.
    pub fn add_scaled(&self, other: &FeFunction, s: f64) -> Result<FeFunction> {
        same_mesh(&self.mesh, &other.mesh)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + s * b).collect();
        let space = match (self.space, other.space) {
            (Space::V0h, Space::V0h) => Space::V0h,
            _ => Space::Vh,
        };
        Ok(FeFunction { mesh: self.mesh.clone(), values, space })
    }

    pub fn scaled(&self, s: f64) -> FeFunction {
        let space = if self.space == Space::V0h { Space::V0h } else { Space::Vh };
        FeFunction { mesh: self.mesh.clone(), values: self.values.iter().map(|v| s * v).collect(), space }
    }

    /// Pointwise evaluation, `None` outside the mesh.
    pub fn evaluate(&self, locator: &PointLocator<'_>, p: Point) -> Option<f64> {
        let (t, l) = locator.locate(p)?;
        let tri = self.mesh.triangles()[t];
        Some((0..3).map(|k| l[k] * self.values[tri[k]]).sum())
    }
}

/// A P1 function on the Γ2 edge mesh, stored at the Γ2 vertices only.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    mesh: Arc<Mesh>,
    nodes: Arc<[usize]>,
    values: Vec<f64>,
}

impl BoundaryTrace {
    pub fn new(space: &P1Space, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.gamma2_nodes.len() {
            return Err(Error::Dimension { expected: space.gamma2_nodes.len(), found: values.len() });
        }
        Ok(Self { mesh: space.mesh.clone(), nodes: space.gamma2_nodes.clone(), values })
    }

    pub fn zeros(space: &P1Space) -> Self {
        Self { mesh: space.mesh.clone(), nodes: space.gamma2_nodes.clone(), values: vec![0.0; space.gamma2_nodes.len()] }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Extension by zero to a full nodal vector.
    pub fn extend_by_zero(&self) -> Vec<f64> {
        let mut full = vec![0.0; self.mesh.vertex_count()];
        for (&i, &v) in self.nodes.iter().zip(&self.values) {
            full[i] = v;
        }
        full
    }

    pub fn add_scaled(&self, other: &BoundaryTrace, s: f64) -> Result<BoundaryTrace> {
        same_mesh(&self.mesh, &other.mesh)?;
        Ok(BoundaryTrace {
            mesh: self.mesh.clone(),
            nodes: self.nodes.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + s * b).collect(),
        })
    }

    pub fn scaled(&self, s: f64) -> BoundaryTrace {
        BoundaryTrace { mesh: self.mesh.clone(), nodes: self.nodes.clone(), values: self.values.iter().map(|v| s * v).collect() }
    }
}

/// A control pair `(g, q)` in the discrete realization of H × Q.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPair {
    pub g: FeFunction,
    pub q: BoundaryTrace,
}

impl ControlPair {
    pub fn new(g: FeFunction, q: BoundaryTrace) -> Result<Self> {
        same_mesh(g.mesh(), q.mesh())?;
        Ok(Self { g, q })
    }

    pub fn zeros(space: &P1Space) -> Self {
        Self { g: FeFunction::zeros(space.mesh.clone()), q: BoundaryTrace::zeros(space) }
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &ControlPair, s: f64) -> Result<ControlPair> {
        Ok(ControlPair { g: self.g.add_scaled(&other.g, s)?, q: self.q.add_scaled(&other.q, s)? })
    }

    pub fn scaled(&self, s: f64) -> ControlPair {
        ControlPair { g: self.g.scaled(s), q: self.q.scaled(s) }
    }

    /// Concatenated coordinates `[g; q]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.g.values().to_vec();
        v.extend_from_slice(self.q.values());
        v
    }

    pub fn from_vec(space: &P1Space, v: &[f64]) -> Result<ControlPair> {
        let nv = space.mesh.vertex_count();
        let expected = nv + space.gamma2_nodes.len();
        if v.len() != expected {
            return Err(Error::Dimension { expected, found: v.len() });
        }
        Ok(ControlPair {
            g: FeFunction::new(space.mesh.clone(), v[..nv].to_vec(), Space::Vh)?,
            q: BoundaryTrace::new(space, v[nv..].to_vec())?,
        })
    }
}

pub(crate) fn same_mesh(a: &Arc<Mesh>, b: &Arc<Mesh>) -> Result<()> {
    if Arc::ptr_eq(a, b) || **a == **b {
        Ok(())
    } else {
        Err(Error::MeshMismatch)
    }
}

/// Norm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// L²(Ω).
    H,
    /// H¹ seminorm, the norm of V₀.
    V0,
    /// Full H¹(Ω) norm.
    V,
    /// L²(Γ2), for boundary traces.
    Q,
}

impl NormKind {
    fn name(self) -> &'static str {
        match self {
            NormKind::H => "H",
            NormKind::V0 => "V0",
            NormKind::V => "V",
            NormKind::Q => "Q",
        }
    }
}

/// Something that can be measured by [`P1Space::norm`].
#[derive(Debug, Clone, Copy)]
pub enum Field<'a> {
    Domain(&'a FeFunction),
    Boundary(&'a BoundaryTrace),
}

impl<'a> From<&'a FeFunction> for Field<'a> {
    fn from(f: &'a FeFunction) -> Self {
        Field::Domain(f)
    }
}

impl<'a> From<&'a BoundaryTrace> for Field<'a> {
    fn from(q: &'a BoundaryTrace) -> Self {
        Field::Boundary(q)
    }
}

/// Element stiffness `∫_T ∇φ_i·∇φ_j` for a counterclockwise triangle.
pub fn stiffness_element(p: [Point; 3]) -> Result<[[f64; 3]; 3]> {
    let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
    if !(area > 0.0) {
        return Err(Error::DegenerateTriangle { index: usize::MAX, area });
    }
    let b = [p[1][1] - p[2][1], p[2][1] - p[0][1], p[0][1] - p[1][1]];
    let c = [p[2][0] - p[1][0], p[0][0] - p[2][0], p[1][0] - p[0][0]];
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = (b[i] * b[j] + c[i] * c[j]) / (4.0 * area);
        }
    }
    Ok(k)
}

/// Element mass `∫_T φ_i φ_j = (A/12)·[[2,1,1],[1,2,1],[1,1,2]]`.
pub fn mass_element(area: f64) -> [[f64; 3]; 3] {
    let d = area / 6.0;
    let o = area / 12.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

/// Edge mass `∫_e φ_i φ_j = (ℓ/6)·[[2,1],[1,2]]`.
pub fn edge_mass_element(length: f64) -> [[f64; 2]; 2] {
    let d = length / 3.0;
    let o = length / 6.0;
    [[d, o], [o, d]]
}

pub fn assemble_stiffness(mesh: &Mesh) -> Result<SparseSymMatrix> {
    let mut b = SymTripletBuilder::new(mesh.vertex_count());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let k = stiffness_element(tri.map(|v| mesh.vertices()[v])).map_err(|e| match e {
            Error::DegenerateTriangle { area, .. } => Error::DegenerateTriangle { index: t, area },
            other => other,
        })?;
        b.add_block(tri, &k);
    }
    Ok(b.build())
}

pub fn assemble_domain_mass(mesh: &Mesh) -> Result<SparseSymMatrix> {
    let mut b = SymTripletBuilder::new(mesh.vertex_count());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.triangle_area(t);
        if !(area > 0.0) {
            return Err(Error::DegenerateTriangle { index: t, area });
        }
        b.add_block(tri, &mass_element(area));
    }
    Ok(b.build())
}

/// Boundary mass on the edges carrying `label`, or on the whole boundary when `None`.
pub fn assemble_boundary_mass(mesh: &Mesh, label: Option<BoundaryLabel>) -> SparseSymMatrix {
    let mut b = SymTripletBuilder::new(mesh.vertex_count());
    for e in mesh.boundary_edges().iter().filter(|e| label.map_or(true, |l| e.label == l)) {
        b.add_block(&e.vertices, &edge_mass_element(mesh.edge_length(e)));
    }
    b.build()
}

/// Nodal interpolant `π_h f`.
pub fn interpolate(mesh: &Arc<Mesh>, f: impl Fn(f64, f64) -> f64) -> Result<FeFunction> {
    let values: Vec<f64> = mesh.vertices().iter().map(|p| f(p[0], p[1])).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("interpolated field is not finite at vertex {i}")));
    }
    Ok(FeFunction { mesh: mesh.clone(), values, space: Space::Vh })
}

/// The P1 space of a mesh together with every assembled form the control
/// problems need.
#[derive(Debug)]
pub struct P1Space {
    mesh: Arc<Mesh>,
    stiffness: SparseSymMatrix,
    mass: SparseSymMatrix,
    gamma1_mass: SparseSymMatrix,
    gamma2_mass: SparseSymMatrix,
    boundary_mass: SparseSymMatrix,
    /// `gamma2_mass` restricted to the Γ2 vertices: the Gram matrix of Q.
    q_gram: SparseSymMatrix,
    gamma1_nodes: Vec<usize>,
    gamma2_nodes: Arc<[usize]>,
    free_nodes: Vec<usize>,
}

impl P1Space {
    pub fn new(mesh: Arc<Mesh>) -> Result<Self> {
        mesh.validate()?;
        let stiffness = assemble_stiffness(&mesh)?;
        let mass = assemble_domain_mass(&mesh)?;
        let gamma1_mass = assemble_boundary_mass(&mesh, Some(BoundaryLabel::Gamma1));
        let gamma2_mass = assemble_boundary_mass(&mesh, Some(BoundaryLabel::Gamma2));
        let boundary_mass = assemble_boundary_mass(&mesh, None);
        let gamma1_nodes = mesh.boundary_vertices(BoundaryLabel::Gamma1);
        let gamma2_nodes: Arc<[usize]> = mesh.boundary_vertices(BoundaryLabel::Gamma2).into();
        let q_gram = gamma2_mass.restrict(&gamma2_nodes);
        let mut on_gamma1 = vec![false; mesh.vertex_count()];
        for &v in &gamma1_nodes {
            on_gamma1[v] = true;
        }
        let free_nodes = (0..mesh.vertex_count()).filter(|&v| !on_gamma1[v]).collect();
        Ok(Self { mesh, stiffness, mass, gamma1_mass, gamma2_mass, boundary_mass, q_gram, gamma1_nodes, gamma2_nodes, free_nodes })
    }

    pub fn from_mesh(mesh: Mesh) -> Result<Self> {
        Self::new(Arc::new(mesh))
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    /// `a(u, v) = ∫ ∇u·∇v`.
    pub fn stiffness(&self) -> &SparseSymMatrix {
        &self.stiffness
    }

    /// `(u, v)_H`.
    pub fn mass(&self) -> &SparseSymMatrix {
        &self.mass
    }

    pub fn gamma1_mass(&self) -> &SparseSymMatrix {
        &self.gamma1_mass
    }

    pub fn gamma2_mass(&self) -> &SparseSymMatrix {
        &self.gamma2_mass
    }

    /// Mass on the full boundary Γ.
    pub fn boundary_mass(&self) -> &SparseSymMatrix {
        &self.boundary_mass
    }

    /// Gram matrix of Q on the Γ2 vertices.
    pub fn q_gram(&self) -> &SparseSymMatrix {
        &self.q_gram
    }

    pub fn gamma1_nodes(&self) -> &[usize] {
        &self.gamma1_nodes
    }

    pub fn gamma2_nodes(&self) -> &[usize] {
        &self.gamma2_nodes
    }

    /// Vertices not on Γ1: the unknowns of V₀h.
    pub fn free_nodes(&self) -> &[usize] {
        &self.free_nodes
    }

    pub fn dim(&self) -> usize {
        self.mesh.vertex_count()
    }

    pub fn interpolate(&self, f: impl Fn(f64, f64) -> f64) -> Result<FeFunction> {
        interpolate(&self.mesh, f)
    }

    /// Restriction of a P1 function to the Γ2 vertices.
    pub fn trace(&self, u: &FeFunction) -> Result<BoundaryTrace> {
        same_mesh(&self.mesh, u.mesh())?;
        Ok(BoundaryTrace {
            mesh: self.mesh.clone(),
            nodes: self.gamma2_nodes.clone(),
            values: self.gamma2_nodes.iter().map(|&i| u.values()[i]).collect(),
        })
    }

    pub fn h_inner(&self, u: &FeFunction, v: &FeFunction) -> Result<f64> {
        same_mesh(&self.mesh, u.mesh())?;
        same_mesh(&self.mesh, v.mesh())?;
        Ok(self.mass.bilinear(u.values(), v.values()))
    }

    pub fn q_inner(&self, p: &BoundaryTrace, q: &BoundaryTrace) -> Result<f64> {
        same_mesh(&self.mesh, p.mesh())?;
        same_mesh(&self.mesh, q.mesh())?;
        Ok(self.q_gram.bilinear(p.values(), q.values()))
    }

    /// `(f, g)_H + (η, q)_Q`.
    pub fn control_inner(&self, a: &ControlPair, b: &ControlPair) -> Result<f64> {
        Ok(self.h_inner(&a.g, &b.g)? + self.q_inner(&a.q, &b.q)?)
    }

    pub fn norm<'a>(&self, field: impl Into<Field<'a>>, kind: NormKind) -> Result<f64> {
        let squared = match (field.into(), kind) {
            (Field::Domain(u), NormKind::H) => self.h_inner(u, u)?,
            (Field::Domain(u), NormKind::V0) => {
                same_mesh(&self.mesh, u.mesh())?;
                self.stiffness.quad_form(u.values())
            }
            (Field::Domain(u), NormKind::V) => {
                same_mesh(&self.mesh, u.mesh())?;
                self.mass.quad_form(u.values()) + self.stiffness.quad_form(u.values())
            }
            (Field::Boundary(q), NormKind::Q) => self.q_inner(q, q)?,
            (Field::Domain(_), k) => return Err(Error::NormKind { kind: k.name(), object: "a domain function" }),
            (Field::Boundary(_), k) => return Err(Error::NormKind { kind: k.name(), object: "a boundary trace" }),
        };
        Ok(squared.max(0.0).sqrt())
    }

    /// `‖(g, q)‖_{H×Q} = (‖g‖²_H + ‖q‖²_Q)^{1/2}`.
    pub fn control_norm(&self, c: &ControlPair) -> Result<f64> {
        let g = self.norm(&c.g, NormKind::H)?;
        let q = self.norm(&c.q, NormKind::Q)?;
        Ok(g.hypot(q))
    }

    /// Load vector `i ↦ (g, φ_i)_H − (q, φ_i)_Q`.
    pub fn control_load(&self, c: &ControlPair) -> Result<Vec<f64>> {
        same_mesh(&self.mesh, c.g.mesh())?;
        same_mesh(&self.mesh, c.q.mesh())?;
        let mut load = self.mass.mul_vec(c.g.values());
        let boundary = self.gamma2_mass.mul_vec(&c.q.extend_by_zero());
        for (l, b) in load.iter_mut().zip(&boundary) {
            *l -= b;
        }
        Ok(load)
    }

    /// Riesz map of a dual vector on the Γ2 vertices: the coefficients of
    /// `(q, ·)_Q` against the P1 boundary basis.
    pub fn q_dual(&self, q: &BoundaryTrace) -> Vec<f64> {
        self.q_gram.mul_vec(q.values())
    }

    pub fn h_dual(&self, g: &FeFunction) -> Vec<f64> {
        self.mass.mul_vec(g.values())
    }

    pub(crate) fn gamma2_arc(&self) -> Arc<[usize]> {
        self.gamma2_nodes.clone()
    }
}

/// Nodal interpolation from a coarse mesh onto the vertices of a finer one.
///
/// For nested meshes the transfer is the exact embedding of the coarse P1
/// space into the fine one, and its transpose maps fine dual vectors to
/// coarse ones exactly.
#[derive(Debug, Clone)]
pub struct Transfer {
    coarse: Arc<Mesh>,
    fine: Arc<Mesh>,
    rows: Vec<([usize; 3], [f64; 3])>,
}

impl Transfer {
    pub fn new(coarse: &Arc<Mesh>, fine: &Arc<Mesh>) -> Result<Self> {
        let locator = PointLocator::new(coarse);
        let mut rows = Vec::with_capacity(fine.vertex_count());
        for (i, &p) in fine.vertices().iter().enumerate() {
            let (t, mut l) = locator
                .locate(p)
                .ok_or_else(|| Error::Validation(format!("fine vertex {i} lies outside the coarse mesh")))?;
            // Snap roundoff so points on coarse edges interpolate from that edge only.
            for w in l.iter_mut() {
                if w.abs() < 1e-12 {
                    *w = 0.0;
                }
            }
            let s: f64 = l.iter().sum();
            rows.push((coarse.triangles()[t], l.map(|w| w / s)));
        }
        Ok(Self { coarse: coarse.clone(), fine: fine.clone(), rows })
    }

    pub fn coarse(&self) -> &Arc<Mesh> {
        &self.coarse
    }

    pub fn fine(&self) -> &Arc<Mesh> {
        &self.fine
    }

    pub fn apply(&self, coarse: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|(idx, w)| (0..3).map(|k| w[k] * coarse[idx[k]]).sum()).collect()
    }

    pub fn apply_transpose(&self, fine: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.coarse.vertex_count()];
        for ((idx, w), &f) in self.rows.iter().zip(fine) {
            for k in 0..3 {
                out[idx[k]] += w[k] * f;
            }
        }
        out
    }

    pub fn function(&self, u: &FeFunction) -> Result<FeFunction> {
        same_mesh(&self.coarse, u.mesh())?;
        Ok(FeFunction { mesh: self.fine.clone(), values: self.apply(u.values()), space: Space::Vh })
    }

    /// Prolongs a Γ2 trace of the coarse space to the Γ2 vertices of the fine space.
    pub fn trace(&self, q: &BoundaryTrace, fine_space: &P1Space) -> Result<BoundaryTrace> {
        same_mesh(&self.coarse, q.mesh())?;
        same_mesh(&self.fine, fine_space.mesh())?;
        let full = self.apply(&q.extend_by_zero());
        Ok(BoundaryTrace {
            mesh: self.fine.clone(),
            nodes: fine_space.gamma2_arc(),
            values: fine_space.gamma2_nodes().iter().map(|&i| full[i]).collect(),
        })
    }

    pub fn control(&self, c: &ControlPair, fine_space: &P1Space) -> Result<ControlPair> {
        Ok(ControlPair { g: self.function(&c.g)?, q: self.trace(&c.q, fine_space)? })
    }

    /// Coarse load `i ↦ (g, φ_i)_H − (q, φ_i)_Q` of a fine-mesh control.
    pub fn coarse_load(&self, fine_space: &P1Space, c: &ControlPair) -> Result<Vec<f64>> {
        Ok(self.apply_transpose(&fine_space.control_load(c)?))
    }
}
