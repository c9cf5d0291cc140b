//! Navigation on a top-down projection of the voxel map: occupancy
//! projection, 8-connected A*, conversion of paths into the discrete action
//! set (forward 0.1 m, turn 5° left or right, stop) and success judgment.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::VoxelFeatureMap;
use crate::spatial::{dist_xy, GridSpec};

pub const FORWARD_STEP_M: f64 = 0.1;
pub const TURN_STEP_DEG: f64 = 5.0;
/// Longest straight stretch between re-aimed headings.
pub const MAX_WAYPOINT_SPACING_M: f64 = 0.5;
pub const GOAL_SNAP_RADIUS_M: f64 = 1.0;
pub const SUCCESS_RADIUS_M: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("start ({0:.3}, {1:.3}) lies outside the occupancy grid")]
    StartOutside(f64, f64),
    #[error("goal ({0:.3}, {1:.3}) lies outside the occupancy grid")]
    GoalOutside(f64, f64),
    #[error("start cell ({0}, {1}) is not free")]
    StartBlocked(usize, usize),
    #[error("no path to the goal")]
    NoPath,
    #[error("grid has {got} cells, expected {expected}")]
    Shape { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Free,
    Occupied,
    Unknown,
}

/// 2D grid aligned with the xy columns of a [`GridSpec`]. Cell `(x, y)` is
/// 0-based and centered at `origin + (x, y) * resolution`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    nx: usize,
    ny: usize,
    resolution: f64,
    origin: [f64; 2],
    cells: Vec<Cell>,
    inflation_m: f64,
}

impl OccupancyGrid {
    /// Cells are ordered with x slowest, matching [`GridSpec`] columns.
    pub fn from_cells(
        nx: usize,
        ny: usize,
        resolution: f64,
        origin: [f64; 2],
        cells: Vec<Cell>,
    ) -> Result<Self, PlanError> {
        if cells.len() != nx * ny {
            return Err(PlanError::Shape {
                expected: nx * ny,
                got: cells.len(),
            });
        }
        Ok(Self {
            nx,
            ny,
            resolution,
            origin,
            cells,
            inflation_m: 0.0,
        })
    }

    pub fn free(nx: usize, ny: usize, resolution: f64, origin: [f64; 2]) -> Self {
        Self::from_cells(nx, ny, resolution, origin, vec![Cell::Free; nx * ny]).expect("shape matches")
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn inflation(&self) -> f64 {
        self.inflation_m
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn get(&self, x: usize, y: usize) -> Cell {
        self.cells[x * self.ny + y]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Cell) {
        self.cells[x * self.ny + y] = c;
    }

    pub fn is_free(&self, x: usize, y: usize) -> bool {
        self.get(x, y) == Cell::Free
    }

    pub fn cell_center(&self, (x, y): (usize, usize)) -> [f64; 2] {
        [
            self.origin[0] + x as f64 * self.resolution,
            self.origin[1] + y as f64 * self.resolution,
        ]
    }

    /// Cell containing a world xy position.
    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let fx = ((p[0] - self.origin[0]) / self.resolution).round();
        let fy = ((p[1] - self.origin[1]) / self.resolution).round();
        if fx < 0.0 || fy < 0.0 || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    /// Marks every cell whose center lies within `radius` meters of an
    /// occupied cell center as occupied.
    pub fn inflated(&self, radius: f64) -> OccupancyGrid {
        let r = (radius / self.resolution + 1e-9).floor() as isize;
        let limit = (radius / self.resolution).powi(2) + 1e-9;
        let disk: Vec<(isize, isize)> = (-r..=r)
            .flat_map(|dx| (-r..=r).map(move |dy| (dx, dy)))
            .filter(|(dx, dy)| ((dx * dx + dy * dy) as f64) <= limit)
            .collect();
        let mut out = self.clone();
        for x in 0..self.nx {
            for y in 0..self.ny {
                if self.get(x, y) != Cell::Occupied {
                    continue;
                }
                for (dx, dy) in &disk {
                    let (tx, ty) = (x as isize + dx, y as isize + dy);
                    if tx >= 0 && ty >= 0 && (tx as usize) < self.nx && (ty as usize) < self.ny {
                        out.set(tx as usize, ty as usize, Cell::Occupied);
                    }
                }
            }
        }
        out.inflation_m = self.inflation_m + radius;
        out
    }

    /// Top-down rendering: free white, occupied black, unknown grey, path
    /// red. Image row 0 is the largest y.
    pub fn render(&self, path: &[(usize, usize)]) -> RgbImage {
        let mut img = RgbImage::new(self.nx as u32, self.ny as u32);
        for x in 0..self.nx {
            for y in 0..self.ny {
                let c = match self.get(x, y) {
                    Cell::Free => Rgb([255, 255, 255]),
                    Cell::Occupied => Rgb([0, 0, 0]),
                    Cell::Unknown => Rgb([128, 128, 128]),
                };
                img.put_pixel(x as u32, (self.ny - 1 - y) as u32, c);
            }
        }
        for &(x, y) in path {
            img.put_pixel(x as u32, (self.ny - 1 - y) as u32, Rgb([255, 0, 0]));
        }
        img
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    /// World-z band in meters whose occupied voxels become obstacles.
    pub z_min: f64,
    pub z_max: f64,
    pub inflation_radius: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            z_min: 0.1,
            z_max: 1.5,
            inflation_radius: 0.3,
        }
    }
}

/// A column is occupied iff some occupied voxel center in it has world z in
/// `[z_min, z_max]`; the result is then inflated.
pub fn project_occupancy(voxels: &VoxelFeatureMap, cfg: &ProjectionConfig) -> OccupancyGrid {
    let spec: &GridSpec = voxels.spec();
    let [nx, ny, _] = spec.dims();
    let o = spec.origin();
    let (lo, hi) = spec.bounds();
    if cfg.z_max < lo[2] || cfg.z_min > hi[2] {
        log::warn!("obstacle band [{}, {}] misses the grid z extent", cfg.z_min, cfg.z_max);
    }
    let mut grid = OccupancyGrid::free(nx, ny, spec.resolution(), [o[0], o[1]]);
    for (v, _, _) in voxels.iter() {
        let z = spec.voxel_to_world(v)[2];
        if z >= cfg.z_min && z <= cfg.z_max {
            grid.set(v.x - 1, v.y - 1, Cell::Occupied);
        }
    }
    if cfg.inflation_radius > 0.0 {
        grid.inflated(cfg.inflation_radius)
    } else {
        grid
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    pub cells: Vec<(usize, usize)>,
    /// Length in meters.
    pub cost: f64,
    /// Cell actually planned to, after snapping an occupied goal.
    pub goal: (usize, usize),
}

#[derive(Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    h: f64,
    idx: usize,
}

impl Eq for Open {}

impl Ord for Open {
    // BinaryHeap is a max-heap: reverse so the smallest f (then h, then index)
    // pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(other.h.total_cmp(&self.h))
            .then(other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NEIGHBORS: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

fn octile(a: (usize, usize), b: (usize, usize)) -> f64 {
    let dx = a.0.abs_diff(b.0) as f64;
    let dy = a.1.abs_diff(b.1) as f64;
    dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy)
}

/// Free neighbors of a cell with step lengths in cells. Diagonal moves need
/// both adjacent orthogonal cells free.
pub fn neighbors(grid: &OccupancyGrid, (x, y): (usize, usize)) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
    let (nx, ny) = grid.dims();
    NEIGHBORS.iter().filter_map(move |&(dx, dy)| {
        let (tx, ty) = (x as isize + dx, y as isize + dy);
        if tx < 0 || ty < 0 || tx as usize >= nx || ty as usize >= ny {
            return None;
        }
        let (tx, ty) = (tx as usize, ty as usize);
        if !grid.is_free(tx, ty) {
            return None;
        }
        if dx != 0 && dy != 0 {
            if !grid.is_free(tx, y) || !grid.is_free(x, ty) {
                return None;
            }
            Some(((tx, ty), std::f64::consts::SQRT_2))
        } else {
            Some(((tx, ty), 1.0))
        }
    })
}

/// Nearest free cell to `goal` within `radius_m`; ties go to the lowest
/// `(x, y)`.
pub fn nearest_free(grid: &OccupancyGrid, goal: (usize, usize), radius_m: f64) -> Option<(usize, usize)> {
    if grid.is_free(goal.0, goal.1) {
        return Some(goal);
    }
    let r = (radius_m / grid.resolution()).floor() as isize;
    let (nx, ny) = grid.dims();
    let mut best: Option<((usize, usize), isize)> = None;
    for dx in -r..=r {
        for dy in -r..=r {
            let d2 = dx * dx + dy * dy;
            if d2 > r * r {
                continue;
            }
            let (tx, ty) = (goal.0 as isize + dx, goal.1 as isize + dy);
            if tx < 0 || ty < 0 || tx as usize >= nx || ty as usize >= ny {
                continue;
            }
            let c = (tx as usize, ty as usize);
            if grid.is_free(c.0, c.1) && best.is_none_or(|(b, bd)| d2 < bd || (d2 == bd && c < b)) {
                best = Some((c, d2));
            }
        }
    }
    best.map(|b| b.0)
}

/// Shortest 8-connected path by A* with the octile heuristic.
pub fn plan_path(grid: &OccupancyGrid, start: (usize, usize), goal: (usize, usize)) -> Result<GridPath, PlanError> {
    if !grid.is_free(start.0, start.1) {
        return Err(PlanError::StartBlocked(start.0, start.1));
    }
    let goal = nearest_free(grid, goal, GOAL_SNAP_RADIUS_M).ok_or(PlanError::NoPath)?;
    let (_, ny) = grid.dims();
    let idx = |c: (usize, usize)| c.0 * ny + c.1;
    let cell = |i: usize| (i / ny, i % ny);
    let n = grid.cells().len();
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    g[idx(start)] = 0.0;
    let h0 = octile(start, goal);
    open.push(Open {
        f: h0,
        h: h0,
        idx: idx(start),
    });
    while let Some(Open { idx: i, .. }) = open.pop() {
        if closed[i] {
            continue;
        }
        closed[i] = true;
        let c = cell(i);
        if c == goal {
            let mut cells = vec![c];
            let mut j = i;
            while parent[j] != usize::MAX {
                j = parent[j];
                cells.push(cell(j));
            }
            cells.reverse();
            return Ok(GridPath {
                cells,
                cost: g[i] * grid.resolution(),
                goal,
            });
        }
        for (nb, step) in neighbors(grid, c) {
            let j = idx(nb);
            let cand = g[i] + step;
            if !closed[j] && cand < g[j] {
                g[j] = cand;
                parent[j] = i;
                let h = octile(nb, goal);
                open.push(Open { f: cand + h, h, idx: j });
            }
        }
    }
    Err(PlanError::NoPath)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
    Stop,
}

/// Planar robot state; heading in degrees counter-clockwise from +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub position: [f64; 2],
    pub heading_deg: f64,
}

impl RobotState {
    pub fn apply(&mut self, a: Action) {
        match a {
            Action::Forward => {
                let h = self.heading_deg.to_radians();
                self.position[0] += FORWARD_STEP_M * h.cos();
                self.position[1] += FORWARD_STEP_M * h.sin();
            }
            Action::TurnLeft => self.heading_deg += TURN_STEP_DEG,
            Action::TurnRight => self.heading_deg -= TURN_STEP_DEG,
            Action::Stop => {}
        }
    }
}

/// Runs actions in a noise-free kinematic model, stopping at the first `Stop`.
pub fn simulate(start: RobotState, actions: &[Action]) -> RobotState {
    let mut s = start;
    for &a in actions {
        if a == Action::Stop {
            break;
        }
        s.apply(a);
    }
    s
}

/// Drops interior points where the direction does not change.
fn compress(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = Vec::new();
    for &p in points {
        if out.len() >= 2 {
            let a = out[out.len() - 2];
            let b = out[out.len() - 1];
            let cross = (b[0] - a[0]) * (p[1] - b[1]) - (b[1] - a[1]) * (p[0] - b[0]);
            let dot = (b[0] - a[0]) * (p[0] - b[0]) + (b[1] - a[1]) * (p[1] - b[1]);
            if cross.abs() < 1e-9 && dot > 0.0 {
                out.pop();
            }
        }
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    out
}

/// Corner points with long straight runs split into pieces no longer than
/// [`MAX_WAYPOINT_SPACING_M`].
pub fn waypoints(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let corners = compress(points);
    let mut out = Vec::new();
    for w in corners.windows(2) {
        let (a, b) = (w[0], w[1]);
        let d = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let pieces = (d / MAX_WAYPOINT_SPACING_M - 1e-9).ceil().max(1.0) as usize;
        for k in 1..=pieces {
            let t = k as f64 / pieces as f64;
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

fn wrap_deg(d: f64) -> f64 {
    let r = d.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Greedy conversion: for each waypoint, turn by the nearest multiple of 5°
/// toward it, then step forward the rounded number of 0.1 m steps. Each leg
/// is aimed from the simulated position, so rounding errors do not
/// accumulate. Always ends with `Stop`.
pub fn path_to_actions(start: RobotState, points: &[[f64; 2]]) -> Vec<Action> {
    let mut state = start;
    let mut actions = Vec::new();
    let mut route = vec![start.position];
    route.extend_from_slice(points);
    for wp in waypoints(&route) {
        let dx = wp[0] - state.position[0];
        let dy = wp[1] - state.position[1];
        let d = (dx * dx + dy * dy).sqrt();
        let steps = (d / FORWARD_STEP_M).round() as usize;
        if steps == 0 {
            continue;
        }
        let turn = (wrap_deg(dy.atan2(dx).to_degrees() - state.heading_deg) / TURN_STEP_DEG).round() as i64;
        let a = if turn > 0 { Action::TurnLeft } else { Action::TurnRight };
        for _ in 0..turn.unsigned_abs() {
            actions.push(a);
            state.apply(a);
        }
        for _ in 0..steps {
            actions.push(Action::Forward);
            state.apply(Action::Forward);
        }
    }
    actions.push(Action::Stop);
    actions
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavPlan {
    pub path: GridPath,
    pub actions: Vec<Action>,
    /// Where the kinematic model ends after executing `actions`.
    pub end: RobotState,
}

/// Plans from a world start to a world goal and converts to actions.
pub fn plan_to(grid: &OccupancyGrid, start: RobotState, goal: [f64; 2]) -> Result<NavPlan, PlanError> {
    let s = grid
        .cell_of(start.position)
        .ok_or(PlanError::StartOutside(start.position[0], start.position[1]))?;
    let g = grid.cell_of(goal).ok_or(PlanError::GoalOutside(goal[0], goal[1]))?;
    let path = plan_path(grid, s, g)?;
    let mut pts: Vec<[f64; 2]> = path.cells.iter().skip(1).map(|&c| grid.cell_center(c)).collect();
    if path.goal == g {
        // finish on the exact goal rather than its cell center
        pts.pop();
        pts.push(goal);
    }
    let actions = path_to_actions(start, &pts);
    let end = simulate(start, &actions);
    Ok(NavPlan { path, actions, end })
}

/// Success iff the stop position is strictly closer than `threshold` to the
/// goal in the horizontal plane.
pub fn judge_success(stop: [f64; 3], goal: [f64; 3], threshold: f64) -> bool {
    dist_xy(&stop, &goal) < threshold
}
