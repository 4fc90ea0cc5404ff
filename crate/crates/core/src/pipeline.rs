//! Trajectories or motion grids to heat maps in one call.

use crate::diffusion::{diffuse, HeatMap};
use crate::error::{HmbError, Result};
use crate::grid::{build_heat_source_field, clip_end, GridSpec, Trajectory};
use crate::io::{motion_grid_to_heat_sources, MotionGridSequence};
use crate::params::HeatParams;

/// Heat map of a clip. `t_cur` defaults to the clip's last frame.
pub fn heat_map_from_trajectories(
    trajs: &[Trajectory],
    grid: &GridSpec,
    params: &HeatParams,
    t_cur: Option<i64>,
) -> Result<HeatMap> {
    let t_cur = match t_cur {
        Some(t) => t,
        None => clip_end(trajs).ok_or(HmbError::NoHeatSources)?,
    };
    let field = build_heat_source_field(trajs, grid, t_cur, params)?;
    diffuse(&field, params.k_p)
}

pub fn heat_map_from_motion(seq: &MotionGridSequence, params: &HeatParams, t_cur: i64) -> Result<HeatMap> {
    let field = motion_grid_to_heat_sources(seq, t_cur, params)?;
    diffuse(&field, params.k_p)
}

/// A labeled clip of trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub clip_id: String,
    pub trajectories: Vec<Trajectory>,
}

impl Clip {
    pub fn heat_map(&self, grid: &GridSpec, params: &HeatParams) -> Result<HeatMap> {
        let mut hm = heat_map_from_trajectories(&self.trajectories, grid, params, None)?;
        hm.clip_id = self.clip_id.clone();
        Ok(hm)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub clip: Clip,
    pub label: String,
}

/// Labeled clips on one scene grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub grid: GridSpec,
    pub clips: Vec<LabeledClip>,
}

impl Dataset {
    pub fn labels(&self) -> Vec<String> {
        let mut l: Vec<String> = self.clips.iter().map(|c| c.label.clone()).collect();
        l.sort();
        l.dedup();
        l
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Clips whose label is in `labels`.
    pub fn filter_labels(&self, labels: &[&str]) -> Dataset {
        Dataset {
            grid: self.grid,
            clips: self
                .clips
                .iter()
                .filter(|c| labels.contains(&c.label.as_str()))
                .cloned()
                .collect(),
        }
    }

    pub fn count(&self, label: &str) -> usize {
        self.clips.iter().filter(|c| c.label == label).count()
    }
}
