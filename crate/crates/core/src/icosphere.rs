//! Subdivided icosahedron, used both as the voting grid for principal
//! directions and as the query point set for distance fields.

use std::collections::HashMap;

use crate::sphere::{angle_between, Vec3};

#[derive(Debug, Clone)]
pub struct Icosphere {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

/// Vertex count after `level` subdivisions: `10 * 4^level + 2`.
pub fn vertex_count(level: u32) -> usize {
    10 * 4usize.pow(level) + 2
}

/// Smallest level whose vertex count is at least `n`.
pub fn level_for(n: usize) -> u32 {
    let mut level = 0;
    while vertex_count(level) < n {
        level += 1;
    }
    level
}

impl Icosphere {
    pub fn new(level: u32) -> Self {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let mut vertices: Vec<Vec3> = [
            (-1.0, phi, 0.0),
            (1.0, phi, 0.0),
            (-1.0, -phi, 0.0),
            (1.0, -phi, 0.0),
            (0.0, -1.0, phi),
            (0.0, 1.0, phi),
            (0.0, -1.0, -phi),
            (0.0, 1.0, -phi),
            (phi, 0.0, -1.0),
            (phi, 0.0, 1.0),
            (-phi, 0.0, -1.0),
            (-phi, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
        .collect();
        let mut faces: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];

        for _ in 0..level {
            let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
            let mut next = Vec::with_capacity(faces.len() * 4);
            let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
                let key = (a.min(b), a.max(b));
                *midpoints.entry(key).or_insert_with(|| {
                    vertices.push((vertices[a] + vertices[b]).normalize());
                    vertices.len() - 1
                })
            };
            for &[a, b, c] in &faces {
                let ab = midpoint(a, b, &mut vertices);
                let bc = midpoint(b, c, &mut vertices);
                let ca = midpoint(c, a, &mut vertices);
                next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            faces = next;
        }
        Icosphere { vertices, faces }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Index of the vertex nearest to `v`; ties go to the lower index.
    pub fn nearest(&self, v: &Vec3) -> usize {
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (i, p) in self.vertices.iter().enumerate() {
            let d = p.dot(v);
            if d > best_dot {
                best_dot = d;
                best = i;
            }
        }
        best
    }

    /// Index of the vertex `-v_i` for every vertex.
    pub fn antipodes(&self) -> Vec<usize> {
        self.vertices.iter().map(|v| self.nearest(&-v)).collect()
    }

    /// Largest angular distance from any sphere point to its nearest vertex.
    pub fn cell_radius(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let c = (self.vertices[f[0]] + self.vertices[f[1]] + self.vertices[f[2]]).normalize();
                f.iter()
                    .map(|&i| angle_between(&c, &self.vertices[i]))
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertex_counts_follow_subdivision() {
        for level in 0..4 {
            let ico = Icosphere::new(level);
            assert_eq!(ico.vertices().len(), vertex_count(level));
            assert_eq!(ico.faces().len(), 20 * 4usize.pow(level));
            assert!(ico.vertices().iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        }
        assert_eq!(vertex_count(3), 642);
    }

    #[test]
    fn level_selection() {
        assert_eq!(level_for(12), 0);
        assert_eq!(level_for(13), 1);
        assert_eq!(level_for(42), 1);
        assert_eq!(level_for(100), 2);
        assert_eq!(level_for(642), 3);
    }

    #[test]
    fn antipodally_symmetric() {
        let ico = Icosphere::new(3);
        let anti = ico.antipodes();
        for (i, &j) in anti.iter().enumerate() {
            assert_ne!(i, j);
            assert!((ico.vertices()[i] + ico.vertices()[j]).norm() < 1e-12);
        }
    }

    #[test]
    fn cell_radius_is_a_few_degrees_at_level_three() {
        let r = Icosphere::new(3).cell_radius().to_degrees();
        assert!(r > 3.0 && r < 6.0, "{r}");
    }
}
