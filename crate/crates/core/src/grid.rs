//! Scene partitioning, dwell extraction and decayed heat-source energies.

use serde::{Deserialize, Serialize};

use crate::error::{HmbError, Result};
use crate::params::{Coefficient, HeatParams};

/// Partition of a `scene_width` x `scene_height` pixel scene into square patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    pub scene_width: u32,
    pub scene_height: u32,
    pub patch_size: u32,
}

impl GridSpec {
    pub fn new(scene_width: u32, scene_height: u32, patch_size: u32) -> Result<Self> {
        if patch_size == 0 {
            return Err(HmbError::InvalidGrid("patch size must be at least 1".into()));
        }
        if scene_width == 0 || scene_height == 0 {
            return Err(HmbError::InvalidGrid("scene must be non-empty".into()));
        }
        Ok(GridSpec {
            scene_width,
            scene_height,
            patch_size,
        })
    }

    /// Patches per row.
    pub fn cols(&self) -> usize {
        self.scene_width.div_ceil(self.patch_size) as usize
    }

    /// Patch rows.
    pub fn rows(&self) -> usize {
        self.scene_height.div_ceil(self.patch_size) as usize
    }

    pub fn len(&self) -> usize {
        self.cols() * self.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid center in patch coordinates, where patch `(col, row)` has its
    /// center at `(col, row)`.
    pub fn center(&self) -> [f64; 2] {
        [
            (self.cols() as f64 - 1.0) / 2.0,
            (self.rows() as f64 - 1.0) / 2.0,
        ]
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.cols() + col
    }

    pub fn col_row(&self, index: usize) -> (usize, usize) {
        (index % self.cols(), index / self.cols())
    }

    pub fn contains_pixel(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= self.scene_width as f64 && y <= self.scene_height as f64
    }

    /// Patch index of a pixel coordinate. Coordinates on the far scene edge
    /// are clamped into the last patch.
    pub fn patch_of(&self, x: f64, y: f64) -> Option<usize> {
        if !self.contains_pixel(x, y) {
            return None;
        }
        let ps = self.patch_size as f64;
        let col = ((x / ps).floor() as usize).min(self.cols() - 1);
        let row = ((y / ps).floor() as usize).min(self.rows() - 1);
        Some(self.index(col, row))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame: i64,
    pub x: f64,
    pub y: f64,
}

impl TrackPoint {
    pub fn new(frame: i64, x: f64, y: f64) -> Self {
        TrackPoint { frame, x, y }
    }
}

/// Time-stamped pixel positions of one object, sampled once per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub object_id: String,
    points: Vec<TrackPoint>,
}

impl Trajectory {
    /// Builds a trajectory, rejecting non-increasing frame numbers.
    pub fn new(object_id: impl Into<String>, points: Vec<TrackPoint>) -> Result<Self> {
        for w in points.windows(2) {
            if w[1].frame <= w[0].frame {
                return Err(HmbError::NonMonotoneFrames {
                    prev: w[0].frame,
                    next: w[1].frame,
                });
            }
        }
        Ok(Trajectory {
            object_id: object_id.into(),
            points,
        })
    }

    pub fn points(&self) -> &[TrackPoint] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first_frame(&self) -> Option<i64> {
        self.points.first().map(|p| p.frame)
    }

    pub fn last_frame(&self) -> Option<i64> {
        self.points.last().map(|p| p.frame)
    }

    pub fn check_bounds(&self, grid: &GridSpec) -> Result<()> {
        match self.points.iter().find(|p| !grid.contains_pixel(p.x, p.y)) {
            Some(p) => Err(HmbError::OutOfBounds {
                frame: p.frame,
                x: p.x,
                y: p.y,
                width: grid.scene_width,
                height: grid.scene_height,
            }),
            None => Ok(()),
        }
    }

    /// Points with `start <= frame <= end`.
    pub fn window(&self, start: i64, end: i64) -> Trajectory {
        Trajectory {
            object_id: self.object_id.clone(),
            points: self
                .points
                .iter()
                .copied()
                .filter(|p| p.frame >= start && p.frame <= end)
                .collect(),
        }
    }
}

/// A maximal run of consecutive samples of one trajectory inside one patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DwellInterval {
    pub patch: usize,
    /// Position of the trajectory within the clip it came from.
    pub trajectory: usize,
    pub t_enter: i64,
    pub t_leave: i64,
}

impl DwellInterval {
    pub fn duration(&self) -> i64 {
        self.t_leave - self.t_enter
    }
}

/// Splits a trajectory into per-patch dwell intervals in point order.
pub fn extract_dwell_intervals(
    traj: &Trajectory,
    trajectory: usize,
    grid: &GridSpec,
) -> Result<Vec<DwellInterval>> {
    if traj.is_empty() {
        return Err(HmbError::EmptyTrajectory);
    }
    traj.check_bounds(grid)?;
    let mut out: Vec<DwellInterval> = Vec::new();
    for p in traj.points() {
        // bounds were checked above
        let patch = grid.patch_of(p.x, p.y).expect("in bounds");
        match out.last_mut() {
            Some(last) if last.patch == patch => last.t_leave = p.frame,
            _ => out.push(DwellInterval {
                patch,
                trajectory,
                t_enter: p.frame,
                t_leave: p.frame,
            }),
        }
    }
    Ok(out)
}

/// Energy accumulated over a stay of `duration` frames:
/// `(C / k_t) * (1 - exp(-k_t * duration))`.
pub fn accumulated_energy(duration: f64, k_t: f64, c: f64) -> Result<f64> {
    if !(k_t > 0.0) {
        return Err(HmbError::NonPositiveDecay);
    }
    if !(c > 0.0) {
        return Err(HmbError::InvalidParameter("energy rate must be positive".into()));
    }
    if duration <= 0.0 {
        return Ok(0.0);
    }
    Ok(c / k_t * -(-k_t * duration).exp_m1())
}

/// Effective stay length of an interval under the configured dwell convention.
pub fn effective_duration(interval: &DwellInterval, inclusive: bool) -> f64 {
    let d = interval.duration() as f64;
    if inclusive {
        d + 1.0
    } else {
        d
    }
}

/// Per-patch decayed thermal energies.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatSourceField {
    pub grid: GridSpec,
    pub energies: Vec<f64>,
    pub t_cur: i64,
    /// Parameters the energies were computed with; `k_p` is not used here.
    pub params: HeatParams,
}

impl HeatSourceField {
    /// Indices of patches with positive energy.
    pub fn sources(&self) -> Vec<usize> {
        self.energies
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Field built directly from dwell intervals.
    ///
    /// With `k_t` infinite the field is the limit of `k_t * E`: every interval
    /// that ends exactly at `t_cur` with a positive stay contributes `C`, all
    /// others vanish.
    pub fn from_intervals(
        grid: GridSpec,
        intervals: &[DwellInterval],
        t_cur: i64,
        params: &HeatParams,
    ) -> Result<Self> {
        if intervals.is_empty() {
            return Err(HmbError::NoHeatSources);
        }
        if !(params.c > 0.0) {
            return Err(HmbError::InvalidParameter("energy rate must be positive".into()));
        }
        if let Coefficient::Finite(k) = params.k_t {
            if !(k > 0.0) {
                return Err(HmbError::NonPositiveDecay);
            }
        }
        if intervals.iter().any(|iv| iv.t_leave > t_cur) {
            return Err(HmbError::TCurPrecedesEnd);
        }
        let mut energies = vec![0.0; grid.len()];
        for iv in intervals {
            let duration = effective_duration(iv, params.inclusive_dwell);
            let e = match params.k_t {
                Coefficient::Finite(k) => {
                    let decay = (-k * (t_cur - iv.t_leave) as f64).exp();
                    accumulated_energy(duration, k, params.c)? * decay
                }
                Coefficient::Infinite => {
                    if iv.t_leave == t_cur && duration > 0.0 {
                        params.c
                    } else {
                        0.0
                    }
                }
            };
            energies[iv.patch] += e;
        }
        Ok(HeatSourceField {
            grid,
            energies,
            t_cur,
            params: *params,
        })
    }
}

/// Last frame over all trajectories of a clip.
pub fn clip_end(trajs: &[Trajectory]) -> Option<i64> {
    trajs.iter().filter_map(Trajectory::last_frame).max()
}

/// First frame over all trajectories of a clip.
pub fn clip_start(trajs: &[Trajectory]) -> Option<i64> {
    trajs.iter().filter_map(Trajectory::first_frame).min()
}

/// Sums decayed dwell energies of all trajectories into a heat-source field.
pub fn build_heat_source_field(
    trajs: &[Trajectory],
    grid: &GridSpec,
    t_cur: i64,
    params: &HeatParams,
) -> Result<HeatSourceField> {
    if trajs.is_empty() {
        return Err(HmbError::NoHeatSources);
    }
    let mut intervals = Vec::new();
    for (j, t) in trajs.iter().enumerate() {
        intervals.extend(extract_dwell_intervals(t, j, grid)?);
    }
    HeatSourceField::from_intervals(*grid, &intervals, t_cur, params)
}
