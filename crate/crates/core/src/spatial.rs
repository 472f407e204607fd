//! Uniform voxel hashing for radius and nearest-neighbor queries.

use nalgebra::{Point3, Vector3};
use std::collections::{BTreeMap, HashMap};

type Key = [i64; 3];

fn key(p: &Point3<f64>, inv_cell: f64) -> Key {
    [
        (p.x * inv_cell).floor() as i64,
        (p.y * inv_cell).floor() as i64,
        (p.z * inv_cell).floor() as i64,
    ]
}

/// Point index bucketed into cubic voxels of edge `cell`.
pub struct VoxelIndex {
    inv_cell: f64,
    cell: f64,
    buckets: HashMap<Key, Vec<u32>>,
    points: Vec<Point3<f64>>,
}

impl VoxelIndex {
    pub fn new(points: &[Point3<f64>], cell: f64) -> Self {
        assert!(cell > 0.0, "voxel cell must be positive");
        let inv_cell = 1.0 / cell;
        let mut buckets: HashMap<Key, Vec<u32>> = HashMap::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            buckets.entry(key(p, inv_cell)).or_default().push(i as u32);
        }
        Self {
            inv_cell,
            cell,
            buckets,
            points: points.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &Point3<f64> {
        &self.points[i]
    }

    /// Nearest indexed point within `radius` of `q`, with its distance.
    /// Ties resolve to the lower index.
    pub fn nearest_within(&self, q: &Point3<f64>, radius: f64) -> Option<(usize, f64)> {
        let reach = (radius * self.inv_cell).ceil() as i64;
        let k = key(q, self.inv_cell);
        let r2 = radius * radius;
        let mut best: Option<(usize, f64)> = None;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    let Some(bucket) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) else {
                        continue;
                    };
                    for &i in bucket {
                        let d2 = (self.points[i as usize] - q).norm_squared();
                        if d2 <= r2 {
                            let better = match best {
                                None => true,
                                Some((bi, bd)) => d2 < bd || (d2 == bd && (i as usize) < bi),
                            };
                            if better {
                                best = Some((i as usize, d2));
                            }
                        }
                    }
                }
            }
        }
        best.map(|(i, d2)| (i, d2.sqrt()))
    }

    pub fn any_within(&self, q: &Point3<f64>, radius: f64) -> bool {
        let reach = (radius * self.inv_cell).ceil() as i64;
        let k = key(q, self.inv_cell);
        let r2 = radius * radius;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(bucket) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        if bucket.iter().any(|&i| (self.points[i as usize] - q).norm_squared() <= r2) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }

    /// Indices of all points within `radius` of `q`, ascending.
    pub fn within(&self, q: &Point3<f64>, radius: f64) -> Vec<usize> {
        let reach = (radius * self.inv_cell).ceil() as i64;
        let k = key(q, self.inv_cell);
        let r2 = radius * radius;
        let mut out = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(bucket) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        out.extend(
                            bucket
                                .iter()
                                .map(|&i| i as usize)
                                .filter(|&i| (self.points[i] - q).norm_squared() <= r2),
                        );
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }
}

/// Unit surface normal of each point from the covariance of its neighbors within `radius`.
///
/// `None` where fewer than `min_neighbors` points are found. The sign is arbitrary.
pub fn estimate_normals(points: &[Point3<f64>], radius: f64, min_neighbors: usize) -> Vec<Option<Vector3<f64>>> {
    let index = VoxelIndex::new(points, radius);
    points
        .iter()
        .map(|p| {
            let nb = index.within(p, radius);
            if nb.len() < min_neighbors.max(3) {
                return None;
            }
            let mean = nb.iter().fold(Vector3::zeros(), |a, &i| a + points[i].coords) / nb.len() as f64;
            let cov = nb.iter().fold(nalgebra::Matrix3::zeros(), |a, &i| {
                let d = points[i].coords - mean;
                a + d * d.transpose()
            });
            let eig = cov.symmetric_eigen();
            let (k, _) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("three eigenvalues");
            Some(eig.eigenvectors.column(k).normalize())
        })
        .collect()
}

/// Replaces the points in each occupied voxel by their centroid, in voxel-key order.
pub fn voxel_downsample(points: &[Point3<f64>], voxel: f64) -> Vec<Point3<f64>> {
    let inv = 1.0 / voxel;
    let mut acc: BTreeMap<Key, (Vector3<f64>, usize)> = BTreeMap::new();
    for p in points {
        let e = acc.entry(key(p, inv)).or_insert((Vector3::zeros(), 0));
        e.0 += p.coords;
        e.1 += 1;
    }
    acc.into_values()
        .map(|(sum, n)| Point3::from(sum / n as f64))
        .collect()
}

/// Dilated occupancy set: a voxel is marked when some point lies within `radius` of its cells.
///
/// Membership queries are O(1), used for scoring many alignment hypotheses.
pub struct OccupancyField {
    inv_cell: f64,
    cells: std::collections::HashSet<Key>,
}

impl OccupancyField {
    pub fn new(points: &[Point3<f64>], cell: f64, radius: f64) -> Self {
        let inv_cell = 1.0 / cell;
        let reach = (radius * inv_cell).ceil() as i64;
        let mut cells = std::collections::HashSet::with_capacity(points.len() * 8);
        for p in points {
            let k = key(p, inv_cell);
            for dx in -reach..=reach {
                for dy in -reach..=reach {
                    for dz in -reach..=reach {
                        let center = Point3::new(
                            (k[0] + dx) as f64 + 0.5,
                            (k[1] + dy) as f64 + 0.5,
                            (k[2] + dz) as f64 + 0.5,
                        ) * cell;
                        if (center - p).norm() <= radius + 0.5 * cell {
                            cells.insert([k[0] + dx, k[1] + dy, k[2] + dz]);
                        }
                    }
                }
            }
        }
        Self { inv_cell, cells }
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        self.cells.contains(&key(p, self.inv_cell))
    }
}
