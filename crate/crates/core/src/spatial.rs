//! Exact k-nearest-neighbour and fixed-radius queries over a static point set.
//!
//! The index is a median-split k-d tree with small leaf buckets. Results are
//! ordered by `(squared distance, point index)`, so equidistant neighbours are
//! resolved toward the lower index and every query is deterministic.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 12;

/// How a point's local neighbourhood is gathered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "scale")]
pub enum NeighborhoodSpec {
    Knn(usize),
    Spherical(f64),
}

impl NeighborhoodSpec {
    pub fn validate(self) -> Result<Self> {
        match self {
            NeighborhoodSpec::Knn(k) if k < 3 => {
                Err(Error::Domain(format!("knn scale must be at least 3, got {k}")))
            }
            NeighborhoodSpec::Spherical(r) if !(r > 0.0 && r.is_finite()) => Err(Error::Domain(format!(
                "spherical scale must be a positive radius, got {r}"
            ))),
            spec => Ok(spec),
        }
    }
}

impl fmt::Display for NeighborhoodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NeighborhoodSpec::Knn(k) => write!(f, "{k}"),
            NeighborhoodSpec::Spherical(r) => write!(f, "{r}"),
        }
    }
}

/// A neighbour found by a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Neighbor {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: u32,
        end: u32,
    },
    Split {
        axis: u8,
        value: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Point>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

pub fn build_index(cloud: &PointCloud) -> Result<SpatialIndex> {
    SpatialIndex::new(cloud.points().to_vec())
}

#[inline]
fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl SpatialIndex {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if points.len() > u32::MAX as usize {
            return Err(Error::Domain("too many points for the index".into()));
        }
        let mut index = SpatialIndex {
            order: (0..points.len() as u32).collect(),
            points,
            nodes: Vec::new(),
        };
        index.build(0, index.points.len());
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &Point {
        &self.points[i]
    }

    fn build(&mut self, start: usize, end: usize) -> u32 {
        let id = self.nodes.len() as u32;
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf {
                start: start as u32,
                end: end as u32,
            });
            return id;
        }
        let slice = &mut self.order[start..end];
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in slice.iter() {
            let p = &self.points[i as usize];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        let mid = slice.len() / 2;
        let points = &self.points;
        slice.select_nth_unstable_by(mid, |&a, &b| {
            points[a as usize][axis]
                .total_cmp(&points[b as usize][axis])
                .then(a.cmp(&b))
        });
        let value = points[slice[mid] as usize][axis];
        // Placeholder; children are filled in after recursion.
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, start + mid);
        let right = self.build(start + mid, end);
        self.nodes[id as usize] = Node::Split {
            axis: axis as u8,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points to `query`, nearest first.
    pub fn knn(&self, query: &Point, k: usize) -> Result<Vec<Neighbor>> {
        if k > self.points.len() {
            return Err(Error::InsufficientPoints {
                k,
                available: self.points.len(),
            });
        }
        let mut best = Vec::with_capacity(k + 1);
        if k > 0 {
            self.knn_node(0, query, k, &mut best);
        }
        Ok(best)
    }

    fn knn_node(&self, node: u32, q: &Point, k: usize, best: &mut Vec<Neighbor>) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    let cand = Neighbor {
                        index: i as usize,
                        dist2: dist2(q, &self.points[i as usize]),
                    };
                    if best.len() == k {
                        if cand.key_cmp(best.last().unwrap()) != Ordering::Less {
                            continue;
                        }
                        best.pop();
                    }
                    let at = best.binary_search_by(|n| n.key_cmp(&cand)).unwrap_or_else(|e| e);
                    best.insert(at, cand);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.knn_node(near, q, k, best);
                if best.len() < k || diff * diff <= best.last().unwrap().dist2 {
                    self.knn_node(far, q, k, best);
                }
            }
        }
    }

    /// All points within Euclidean distance `radius` of `query` (inclusive),
    /// nearest first.
    pub fn radius_query(&self, query: &Point, radius: f64) -> Vec<Neighbor> {
        let mut out = Vec::new();
        if radius >= 0.0 {
            self.radius_node(0, query, radius * radius, &mut out);
        }
        out.sort_unstable_by(Neighbor::key_cmp);
        out
    }

    fn radius_node(&self, node: u32, q: &Point, r2: f64, out: &mut Vec<Neighbor>) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    let d2 = dist2(q, &self.points[i as usize]);
                    if d2 <= r2 {
                        out.push(Neighbor {
                            index: i as usize,
                            dist2: d2,
                        });
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.radius_node(near, q, r2, out);
                if diff * diff <= r2 {
                    self.radius_node(far, q, r2, out);
                }
            }
        }
    }

    /// Neighbourhood of the indexed point `i` under `spec` (includes `i` itself).
    pub fn neighborhood(&self, i: usize, spec: NeighborhoodSpec) -> Result<Vec<Neighbor>> {
        let q = self.points[i];
        match spec.validate()? {
            NeighborhoodSpec::Knn(k) => self.knn(&q, k),
            NeighborhoodSpec::Spherical(r) => Ok(self.radius_query(&q, r)),
        }
    }
}
