//! Test oracles shared by the integration tests.

#![allow(dead_code)]

use std::f64::consts::PI;

use mixed_ocp::fem::{FeFunction, P1Space};
use mixed_ocp::mesh::{BoundaryLabel, Mesh, Point};

/// Seven-point rule on a triangle, exact for degree 5: barycentric points and weights.
pub fn triangle_rule() -> Vec<([f64; 3], f64)> {
    let s = 15f64.sqrt();
    let (a, b) = ((6.0 - s) / 21.0, (6.0 + s) / 21.0);
    let (wa, wb) = ((155.0 - s) / 1200.0, (155.0 + s) / 1200.0);
    let mut rule = vec![([1.0 / 3.0; 3], 9.0 / 40.0)];
    for (p, w) in [(a, wa), (b, wb)] {
        let c = 1.0 - 2.0 * p;
        rule.extend([([p, p, c], w), ([p, c, p], w), ([c, p, p], w)]);
    }
    rule
}

/// Three-point Gauss rule on [0, 1].
pub fn segment_rule() -> [(f64, f64); 3] {
    let d = 0.5 * (0.6f64).sqrt();
    [(0.5 - d, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + d, 5.0 / 18.0)]
}

fn corners(mesh: &Mesh, t: [usize; 3]) -> [Point; 3] {
    t.map(|i| mesh.vertices()[i])
}

fn signed_area(p: [Point; 3]) -> f64 {
    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
}

/// Gradients of the three barycentric coordinates.
fn hat_gradients(p: [Point; 3]) -> [[f64; 2]; 3] {
    let two_a = 2.0 * signed_area(p);
    std::array::from_fn(|i| {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        [(p[j][1] - p[k][1]) / two_a, (p[k][0] - p[j][0]) / two_a]
    })
}

/// Manufactured state `b + y sin(πx)` on the unit square with Γ1 = bottom.
pub struct Manufactured {
    pub b: f64,
}

impl Manufactured {
    pub fn u(&self, x: f64, y: f64) -> f64 {
        self.b + y * (PI * x).sin()
    }

    pub fn grad(&self, x: f64, y: f64) -> [f64; 2] {
        [PI * y * (PI * x).cos(), (PI * x).sin()]
    }

    /// `−Δu`.
    pub fn source(&self, x: f64, y: f64) -> f64 {
        PI * PI * y * (PI * x).sin()
    }

    /// `−∂u/∂n` on the left, right and top sides.
    pub fn flux(&self, x: f64, y: f64, side_normal: [f64; 2]) -> f64 {
        let g = self.grad(x, y);
        -(g[0] * side_normal[0] + g[1] * side_normal[1])
    }

    /// Load `i ↦ ∫ source φ_i − ∫_Γ2 flux φ_i`, by quadrature.
    pub fn load(&self, mesh: &Mesh) -> Vec<f64> {
        let mut load = vec![0.0; mesh.vertex_count()];
        let rule = triangle_rule();
        for &t in mesh.triangles() {
            let p = corners(mesh, t);
            let area = signed_area(p);
            for (l, w) in &rule {
                let x = l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0];
                let y = l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1];
                let f = self.source(x, y) * w * area;
                for k in 0..3 {
                    load[t[k]] += f * l[k];
                }
            }
        }
        for e in mesh.boundary_edges().iter().filter(|e| e.label == BoundaryLabel::Gamma2) {
            let [i, j] = e.vertices;
            let (a, b) = (mesh.vertices()[i], mesh.vertices()[j]);
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            let normal = if mid[0] < 1e-12 {
                [-1.0, 0.0]
            } else if mid[0] > 1.0 - 1e-12 {
                [1.0, 0.0]
            } else {
                [0.0, 1.0]
            };
            for (s, w) in segment_rule() {
                let x = a[0] + s * (b[0] - a[0]);
                let y = a[1] + s * (b[1] - a[1]);
                let f = self.flux(x, y, normal) * w * len;
                load[i] -= f * (1.0 - s);
                load[j] -= f * s;
            }
        }
        load
    }

    /// `(‖u − u_h‖_H, ‖∇(u − u_h)‖)` by quadrature.
    pub fn errors(&self, uh: &FeFunction) -> (f64, f64) {
        let mesh = uh.mesh();
        let rule = triangle_rule();
        let (mut l2, mut h1) = (0.0, 0.0);
        for &t in mesh.triangles() {
            let p = corners(mesh, t);
            let area = signed_area(p);
            let grads = hat_gradients(p);
            let v = t.map(|i| uh.values()[i]);
            let gh = [0, 1].map(|d| (0..3).map(|k| v[k] * grads[k][d]).sum::<f64>());
            for (l, w) in &rule {
                let x = l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0];
                let y = l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1];
                let uhv = l[0] * v[0] + l[1] * v[1] + l[2] * v[2];
                let g = self.grad(x, y);
                l2 += w * area * (self.u(x, y) - uhv).powi(2);
                h1 += w * area * ((g[0] - gh[0]).powi(2) + (g[1] - gh[1]).powi(2));
            }
        }
        (l2.sqrt(), h1.sqrt())
    }
}

/// `|a − b| / max(|a|, |b|)`.
pub fn rel(a: f64, b: f64) -> f64 {
    mixed_ocp::verify::rel_diff(a, b)
}

pub fn unit_space(n: usize) -> P1Space {
    P1Space::from_mesh(Mesh::unit_square(n, &[mixed_ocp::Side::Bottom]).unwrap()).unwrap()
}
