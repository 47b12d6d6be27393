//! K-nearest-neighbor element neighborhoods and relative position features.

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Meshes above this size use the lattice ring search instead of a full scan.
pub const GRID_SEARCH_THRESHOLD: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub query: usize,
    /// Sorted by ascending centroid distance, ties by element index.
    pub neighbors: Vec<usize>,
}

impl Neighborhood {
    pub fn k(&self) -> usize {
        self.neighbors.len()
    }

    /// Query followed by its neighbors: the token order.
    pub fn elements(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.query).chain(self.neighbors.iter().copied())
    }
}

/// Per-token `(u_x, u_y, d)` rows; row 0 is the query with `(0, 0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionMatrix {
    pub rows: Vec<[f64; 3]>,
}

impl PositionMatrix {
    pub fn n_tokens(&self) -> usize {
        self.rows.len()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }
}

fn lattice(mesh: &Mesh, e: usize) -> (i64, i64) {
    ((e % mesh.nex) as i64, (e / mesh.nex) as i64)
}

/// K nearest elements to `query` by centroid distance.
///
/// Centroids sit on a uniform lattice, so distances are ranked through exact
/// integer lattice offsets; equal distances fall back to the element index.
pub fn knn_neighbors(mesh: &Mesh, query: usize, k: usize) -> Result<Neighborhood> {
    let n = mesh.n_elements();
    if query >= n {
        return Err(Error::Index { index: query, len: n });
    }
    if k + 1 > n {
        return Err(Error::InsufficientElements {
            requested: k,
            available: n,
        });
    }
    let neighbors = if n > GRID_SEARCH_THRESHOLD {
        ring_search(mesh, query, k)
    } else {
        brute_force(mesh, query, k)
    };
    Ok(Neighborhood { query, neighbors })
}

fn brute_force(mesh: &Mesh, query: usize, k: usize) -> Vec<usize> {
    let (qx, qy) = lattice(mesh, query);
    let mut cand: Vec<(i64, usize)> = (0..mesh.n_elements())
        .filter(|&e| e != query)
        .map(|e| {
            let (x, y) = lattice(mesh, e);
            ((x - qx).pow(2) + (y - qy).pow(2), e)
        })
        .collect();
    if k < cand.len() {
        cand.select_nth_unstable(k);
        cand.truncate(k);
    }
    cand.sort_unstable();
    cand.into_iter().map(|(_, e)| e).collect()
}

/// Expands square rings around the query until no element outside the ring
/// can beat the current K-th distance.
fn ring_search(mesh: &Mesh, query: usize, k: usize) -> Vec<usize> {
    let (qx, qy) = lattice(mesh, query);
    let (nx, ny) = (mesh.nex as i64, mesh.ney as i64);
    let max_r = nx.max(ny);
    let mut r = 1i64;
    loop {
        let mut cand = Vec::new();
        for y in (qy - r).max(0)..=(qy + r).min(ny - 1) {
            for x in (qx - r).max(0)..=(qx + r).min(nx - 1) {
                if (x, y) != (qx, qy) {
                    cand.push(((x - qx).pow(2) + (y - qy).pow(2), (y * nx + x) as usize));
                }
            }
        }
        if cand.len() >= k {
            cand.sort_unstable();
            cand.truncate(k);
            let kth = cand.last().map_or(0, |c| c.0);
            // Anything outside the ring is at least (r + 1) lattice steps away.
            if kth < (r + 1).pow(2) || r >= max_r {
                return cand.into_iter().map(|(_, e)| e).collect();
            }
        }
        r *= 2;
    }
}

/// Unit direction and distance from the query centroid to each neighbor centroid.
pub fn relative_positions(mesh: &Mesh, nbh: &Neighborhood) -> Result<PositionMatrix> {
    relative_positions_from(&mesh.centroids, nbh.query, &nbh.neighbors)
}

pub fn relative_positions_from(
    centroids: &[[f64; 2]],
    query: usize,
    neighbors: &[usize],
) -> Result<PositionMatrix> {
    let get = |e: usize| {
        centroids.get(e).copied().ok_or(Error::Index {
            index: e,
            len: centroids.len(),
        })
    };
    let [qx, qy] = get(query)?;
    let mut rows = Vec::with_capacity(neighbors.len() + 1);
    rows.push([0.0, 0.0, 0.0]);
    for &e in neighbors {
        let [x, y] = get(e)?;
        let (dx, dy) = (x - qx, y - qy);
        let d = dx.hypot(dy);
        if d == 0.0 {
            return Err(Error::DegenerateGeometry(format!(
                "element {e} shares its centroid with query {query}"
            )));
        }
        rows.push([dx / d, dy / d, d]);
    }
    Ok(PositionMatrix { rows })
}
