//! 2D structured finite-volume grid with rectangular obstacles.
//!
//! Active cells (non-obstacle) carry the unknowns and are indexed
//! contiguously in `[0, n_active)`. Obstacle cells are removed from the
//! unknown set entirely; the faces separating them from active cells are
//! wall faces. The grid is immutable after construction.

use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid resolution too small: nx={0}, ny={1} (need at least 4x4)")]
    TooSmall(usize, usize),
    #[error("domain extents are degenerate")]
    BadExtents,
    #[error("obstacle rectangle [{0}, {1}] x [{2}, {3}] lies outside the domain")]
    ObstacleOutOfDomain(f64, f64, f64, f64),
    #[error("road segment intersects an obstacle near ({0}, {1})")]
    RoadInObstacle(f64, f64),
    #[error("obstacles disconnect the active region into {0} components")]
    Disconnected(usize),
    #[error("all cells are blocked")]
    NoActiveCells,
    #[error("field length {got} does not match active cell count {expected}")]
    SizeMismatch { got: usize, expected: usize },
}

/// Outer-boundary side classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryTag {
    West,
    East,
    South,
    North,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaceKind {
    /// Face joining two active cells; the unit normal points owner -> neighbour.
    Interior { neighbor: usize },
    /// Face on the outer rectangle; the unit normal points outward.
    Boundary { tag: BoundaryTag },
    /// Face against an obstacle cell; zero-flux closure.
    Wall,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face<R> {
    pub owner: usize,
    pub kind: FaceKind,
    /// Face area S_f (unit depth: dy for x-faces, dx for y-faces).
    pub area: R,
    /// Unit normal, axis-aligned.
    pub normal: (R, R),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub nx: usize,
    pub ny: usize,
    #[serde(default)]
    pub obstacles: Vec<Rect>,
    #[serde(default)]
    pub roads: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredGrid<R> {
    pub nx: usize,
    pub ny: usize,
    pub dx: R,
    pub dy: R,
    pub origin: (R, R),
    /// Row-major nx*ny mask; `true` = blocked.
    pub obstacle_mask: Vec<bool>,
    /// Row-major raw index -> active index.
    cell_index: Vec<Option<usize>>,
    /// Active index -> (i, j).
    active_cells: Vec<(usize, usize)>,
    pub faces: Vec<Face<R>>,
    pub road_cells: Vec<usize>,
}

fn point_segment_distance(px: f64, py: f64, s: &Segment) -> f64 {
    let (dx, dy) = (s.x1 - s.x0, s.y1 - s.y0);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - s.x0) * dx + (py - s.y0) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (s.x0 + t * dx, s.y0 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

impl<R: Real> StructuredGrid<R> {
    pub fn build(cfg: &GridConfig) -> Result<Self, GridError> {
        if cfg.nx < 4 || cfg.ny < 4 {
            return Err(GridError::TooSmall(cfg.nx, cfg.ny));
        }
        if cfg.x1 <= cfg.x0 || cfg.y1 <= cfg.y0 {
            return Err(GridError::BadExtents);
        }
        let dxf = (cfg.x1 - cfg.x0) / cfg.nx as f64;
        let dyf = (cfg.y1 - cfg.y0) / cfg.ny as f64;
        for r in &cfg.obstacles {
            if r.x0 >= r.x1 || r.y0 >= r.y1 || r.x0 < cfg.x0 || r.x1 > cfg.x1 || r.y0 < cfg.y0 || r.y1 > cfg.y1 {
                return Err(GridError::ObstacleOutOfDomain(r.x0, r.x1, r.y0, r.y1));
            }
        }

        let n_raw = cfg.nx * cfg.ny;
        let mut mask = vec![false; n_raw];
        for j in 0..cfg.ny {
            for i in 0..cfg.nx {
                let (cx, cy) = (cfg.x0 + (i as f64 + 0.5) * dxf, cfg.y0 + (j as f64 + 0.5) * dyf);
                if cfg.obstacles.iter().any(|r| cx > r.x0 && cx < r.x1 && cy > r.y0 && cy < r.y1) {
                    mask[j * cfg.nx + i] = true;
                }
            }
        }

        let mut cell_index = vec![None; n_raw];
        let mut active_cells = Vec::new();
        for j in 0..cfg.ny {
            for i in 0..cfg.nx {
                if !mask[j * cfg.nx + i] {
                    cell_index[j * cfg.nx + i] = Some(active_cells.len());
                    active_cells.push((i, j));
                }
            }
        }
        if active_cells.is_empty() {
            return Err(GridError::NoActiveCells);
        }

        // Connectivity: flood fill from the first active cell.
        let n_active = active_cells.len();
        let mut seen = vec![false; n_active];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut visited = 1usize;
        while let Some(e) = stack.pop() {
            let (i, j) = active_cells[e];
            let mut visit = |ii: isize, jj: isize| {
                if ii >= 0 && jj >= 0 && (ii as usize) < cfg.nx && (jj as usize) < cfg.ny {
                    if let Some(nb) = cell_index[jj as usize * cfg.nx + ii as usize] {
                        if !seen[nb] {
                            seen[nb] = true;
                            visited += 1;
                            stack.push(nb);
                        }
                    }
                }
            };
            visit(i as isize - 1, j as isize);
            visit(i as isize + 1, j as isize);
            visit(i as isize, j as isize - 1);
            visit(i as isize, j as isize + 1);
        }
        if visited != n_active {
            // count components for the error message
            let mut comps = 1usize;
            let mut seen2 = seen;
            loop {
                let next = match seen2.iter().position(|&s| !s) {
                    Some(p) => p,
                    None => break,
                };
                comps += 1;
                let mut st = vec![next];
                seen2[next] = true;
                while let Some(e) = st.pop() {
                    let (i, j) = active_cells[e];
                    for (ii, jj) in [
                        (i as isize - 1, j as isize),
                        (i as isize + 1, j as isize),
                        (i as isize, j as isize - 1),
                        (i as isize, j as isize + 1),
                    ] {
                        if ii >= 0 && jj >= 0 && (ii as usize) < cfg.nx && (jj as usize) < cfg.ny {
                            if let Some(nb) = cell_index[jj as usize * cfg.nx + ii as usize] {
                                if !seen2[nb] {
                                    seen2[nb] = true;
                                    st.push(nb);
                                }
                            }
                        }
                    }
                }
            }
            return Err(GridError::Disconnected(comps));
        }

        let dx = R::of(dxf);
        let dy = R::of(dyf);
        let one = R::one();

        // Faces: x-faces then y-faces, scanned in raw cell order.
        let mut faces = Vec::new();
        let raw = |i: usize, j: usize| j * cfg.nx + i;
        for j in 0..cfg.ny {
            for i in 0..cfg.nx {
                let own = match cell_index[raw(i, j)] {
                    Some(e) => e,
                    None => continue,
                };
                // West side: boundary face or wall (interior faces emitted by the eastern pass).
                if i == 0 {
                    faces.push(Face { owner: own, kind: FaceKind::Boundary { tag: BoundaryTag::West }, area: dy, normal: (-one, R::zero()) });
                } else if mask[raw(i - 1, j)] {
                    faces.push(Face { owner: own, kind: FaceKind::Wall, area: dy, normal: (-one, R::zero()) });
                }
                // East side.
                if i + 1 == cfg.nx {
                    faces.push(Face { owner: own, kind: FaceKind::Boundary { tag: BoundaryTag::East }, area: dy, normal: (one, R::zero()) });
                } else if mask[raw(i + 1, j)] {
                    faces.push(Face { owner: own, kind: FaceKind::Wall, area: dy, normal: (one, R::zero()) });
                } else {
                    let nb = cell_index[raw(i + 1, j)].unwrap();
                    faces.push(Face { owner: own, kind: FaceKind::Interior { neighbor: nb }, area: dy, normal: (one, R::zero()) });
                }
                // South side.
                if j == 0 {
                    faces.push(Face { owner: own, kind: FaceKind::Boundary { tag: BoundaryTag::South }, area: dx, normal: (R::zero(), -one) });
                } else if mask[raw(i, j - 1)] {
                    faces.push(Face { owner: own, kind: FaceKind::Wall, area: dx, normal: (R::zero(), -one) });
                }
                // North side.
                if j + 1 == cfg.ny {
                    faces.push(Face { owner: own, kind: FaceKind::Boundary { tag: BoundaryTag::North }, area: dx, normal: (R::zero(), one) });
                } else if mask[raw(i, j + 1)] {
                    faces.push(Face { owner: own, kind: FaceKind::Wall, area: dx, normal: (R::zero(), one) });
                } else {
                    let nb = cell_index[raw(i, j + 1)].unwrap();
                    faces.push(Face { owner: own, kind: FaceKind::Interior { neighbor: nb }, area: dx, normal: (R::zero(), one) });
                }
            }
        }

        // Road cells: centers within half a cell width of a segment centerline.
        let half_cell = 0.5 * dxf.max(dyf);
        let mut road_cells = Vec::new();
        for (e, &(i, j)) in active_cells.iter().enumerate() {
            let (cx, cy) = (cfg.x0 + (i as f64 + 0.5) * dxf, cfg.y0 + (j as f64 + 0.5) * dyf);
            if cfg.roads.iter().any(|s| point_segment_distance(cx, cy, s) <= half_cell) {
                road_cells.push(e);
            }
        }
        for s in &cfg.roads {
            // Reject roads whose endpoints sit inside an obstacle.
            for &(px, py) in &[(s.x0, s.y0), (s.x1, s.y1)] {
                if cfg.obstacles.iter().any(|r| px > r.x0 && px < r.x1 && py > r.y0 && py < r.y1) {
                    return Err(GridError::RoadInObstacle(px, py));
                }
            }
        }

        let g = Self {
            nx: cfg.nx,
            ny: cfg.ny,
            dx,
            dy,
            origin: (R::of(cfg.x0), R::of(cfg.y0)),
            obstacle_mask: mask,
            cell_index,
            active_cells,
            faces,
            road_cells,
        };
        debug_assert!(g.closed_cell_identity());
        Ok(g)
    }

    pub fn n_active(&self) -> usize {
        self.active_cells.len()
    }

    pub fn cell_volume(&self) -> R {
        self.dx * self.dy
    }

    pub fn active_index(&self, i: usize, j: usize) -> Option<usize> {
        self.cell_index[j * self.nx + i]
    }

    pub fn cell_coords(&self, e: usize) -> (usize, usize) {
        self.active_cells[e]
    }

    pub fn cell_center(&self, e: usize) -> (R, R) {
        let (i, j) = self.active_cells[e];
        let half = R::of(0.5);
        (
            self.origin.0 + (R::of(i as f64) + half) * self.dx,
            self.origin.1 + (R::of(j as f64) + half) * self.dy,
        )
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    /// Signed sum of outward face-area vectors must vanish for every cell.
    pub fn closed_cell_identity(&self) -> bool {
        let n = self.n_active();
        let mut sums = vec![(R::zero(), R::zero()); n];
        for f in &self.faces {
            let (nx, ny) = f.normal;
            sums[f.owner].0 += nx * f.area;
            sums[f.owner].1 += ny * f.area;
            if let FaceKind::Interior { neighbor } = f.kind {
                sums[neighbor].0 -= nx * f.area;
                sums[neighbor].1 -= ny * f.area;
            }
        }
        sums.iter().all(|&(sx, sy)| sx == R::zero() && sy == R::zero())
    }

    pub fn check_field(&self, field: &[R]) -> Result<(), GridError> {
        if field.len() != self.n_active() {
            return Err(GridError::SizeMismatch { got: field.len(), expected: self.n_active() });
        }
        Ok(())
    }

    /// Discrete L2(Omega) inner product: volume-weighted sum.
    pub fn inner_product(&self, a: &[R], b: &[R]) -> Result<R, GridError> {
        self.check_field(a)?;
        self.check_field(b)?;
        let v = self.cell_volume();
        let mut s = R::zero();
        for (x, y) in a.iter().zip(b) {
            s += *x * *y;
        }
        Ok(s * v)
    }

    pub fn norm(&self, a: &[R]) -> Result<R, GridError> {
        Ok(num_traits::Float::sqrt(self.inner_product(a, a)?))
    }

    /// CSV summary: cell index, center x, center y, road flag.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("cell,x,y,road\n");
        let road: std::collections::HashSet<usize> = self.road_cells.iter().copied().collect();
        for e in 0..self.n_active() {
            let (x, y) = self.cell_center(e);
            out.push_str(&format!(
                "{},{},{},{}\n",
                e,
                x.to_f64(),
                y.to_f64(),
                u8::from(road.contains(&e))
            ));
        }
        out
    }
}
