//! Surface fitting classifiers and sliding-window labeling.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{AlignTransform, Aligner};
use crate::diffusion::HeatMap;
use crate::error::{HmbError, Result};
use crate::grid::{clip_end, clip_start, Trajectory};
use crate::io::MotionGridSequence;
use crate::params::SurfaceNorm;
use crate::pipeline::{heat_map_from_motion, heat_map_from_trajectories};
use crate::training::ActivityModel;

/// Distance between two surfaces on the same grid.
pub fn surface_distance(a: &[f64], b: &[f64], norm: SurfaceNorm) -> Result<f64> {
    if a.len() != b.len() {
        return Err(HmbError::GridMismatch);
    }
    let pairs = a.iter().zip(b);
    Ok(match norm {
        SurfaceNorm::L1 => pairs.map(|(x, y)| (x - y).abs()).sum(),
        SurfaceNorm::L2 => pairs.map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
    })
}

/// L1 distance between two heat maps.
pub fn heatmap_distance(a: &HeatMap, b: &HeatMap) -> Result<f64> {
    if a.grid != b.grid {
        return Err(HmbError::GridMismatch);
    }
    surface_distance(&a.values, &b.values, SurfaceNorm::L1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: String,
    /// Fit distance for surface fitting, winning vote mass for adaptive fitting.
    pub score: f64,
    pub per_label_scores: BTreeMap<String, f64>,
    pub transform_used: AlignTransform,
    /// Another label reached the same score; the lexicographically smallest won.
    pub tie: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Number of nearest training surfaces that vote.
    pub w: usize,
    pub sigma: f64,
}

impl KernelConfig {
    /// `w` neighbors with the model's stored kernel width.
    pub fn for_model(model: &ActivityModel, w: usize) -> Self {
        KernelConfig { w, sigma: model.sigma }
    }
}

/// Gaussian kernel `exp(-x^2 / (2 sigma^2))`.
pub fn gaussian_kernel(x: f64, sigma: f64) -> f64 {
    (-(x * x) / (2.0 * sigma * sigma)).exp()
}

fn check_grid(hm: &HeatMap, model: &ActivityModel) -> Result<()> {
    if hm.grid != model.grid {
        return Err(HmbError::GridMismatch);
    }
    Ok(())
}

fn aligner<'a>(hm: &'a HeatMap, model: &ActivityModel) -> Result<Aligner<'a>> {
    Aligner::new(hm, &model.params.align).map_err(|e| HmbError::Unclassifiable(Box::new(e)))
}

/// Surface fitting: align to each standard surface and pick the closest.
pub fn classify_sf(hm: &HeatMap, model: &ActivityModel) -> Result<Classification> {
    check_grid(hm, model)?;
    let al = aligner(hm, model)?;
    let fits: Vec<(String, f64, AlignTransform)> = model
        .clusters
        .par_iter()
        .map(|c| {
            let a = al.align_to(&c.mean_keypoints)?;
            let d = surface_distance(&a.aligned.values, &c.standard_surface, model.params.norm)?;
            Ok((c.label.clone(), d, a.transform))
        })
        .collect::<Result<_>>()?;
    let mut best: Option<&(String, f64, AlignTransform)> = None;
    for f in &fits {
        best = match best {
            Some(b) if (f.1, &f.0) >= (b.1, &b.0) => Some(b),
            _ => Some(f),
        };
    }
    let best = best.ok_or(HmbError::EmptyTrainingSet)?;
    let tie = fits.iter().filter(|f| f.1 == best.1).count() > 1;
    Ok(Classification {
        label: best.0.clone(),
        score: best.1,
        per_label_scores: fits.iter().map(|f| (f.0.clone(), f.1)).collect(),
        transform_used: best.2,
        tie,
    })
}

/// Aligned distance from `hm` to every training member, in member order.
pub fn member_distances(hm: &HeatMap, model: &ActivityModel) -> Result<Vec<(f64, AlignTransform)>> {
    check_grid(hm, model)?;
    let al = aligner(hm, model)?;
    model
        .members
        .par_iter()
        .map(|m| {
            let a = al.align_to(&m.keypoints)?;
            let d = surface_distance(&a.aligned.values, &m.surface, model.params.norm)?;
            Ok((d, a.transform))
        })
        .collect()
}

/// Adaptive surface fitting: Gaussian-weighted vote of the `w` nearest
/// training surfaces.
///
/// Votes are accumulated in the log domain so the winner stays correct when
/// every kernel weight underflows.
pub fn classify_asf(hm: &HeatMap, model: &ActivityModel, kc: &KernelConfig) -> Result<Classification> {
    if kc.w == 0 || kc.w > model.members.len() {
        return Err(HmbError::InvalidKernel(format!(
            "w must lie in 1..={}, got {}",
            model.members.len(),
            kc.w
        )));
    }
    if !(kc.sigma > 0.0) || !kc.sigma.is_finite() {
        return Err(HmbError::InvalidKernel(format!("sigma must be positive, got {}", kc.sigma)));
    }
    let dists = member_distances(hm, model)?;
    let mut order: Vec<usize> = (0..dists.len()).collect();
    order.sort_by(|&a, &b| dists[a].0.total_cmp(&dists[b].0).then(a.cmp(&b)));
    let neighbors = &order[..kc.w];

    let mut log_votes: BTreeMap<&str, Vec<f64>> = model.labels().into_iter().map(|l| (l, Vec::new())).collect();
    for &i in neighbors {
        let d = dists[i].0;
        log_votes
            .entry(model.members[i].label.as_str())
            .or_default()
            .push(-(d * d) / (2.0 * kc.sigma * kc.sigma));
    }
    let log_score: BTreeMap<&str, f64> = log_votes
        .iter()
        .map(|(l, v)| (*l, log_sum_exp(v)))
        .collect();
    let (label, best) = log_score
        .iter()
        .fold(None, |acc: Option<(&str, f64)>, (l, s)| match acc {
            Some((_, bs)) if *s <= bs => acc,
            _ => Some((l, *s)),
        })
        .ok_or(HmbError::EmptyTrainingSet)?;
    let tie = log_score.values().filter(|s| **s == best).count() > 1;
    let nearest_of_label = neighbors
        .iter()
        .copied()
        .find(|&i| model.members[i].label == label)
        .unwrap_or(neighbors[0]);
    Ok(Classification {
        label: label.to_string(),
        score: best.exp(),
        per_label_scores: log_score.iter().map(|(l, s)| (l.to_string(), s.exp())).collect(),
        transform_used: dists[nearest_of_label].1,
        tie,
    })
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Data a sliding window can run over.
#[derive(Debug, Clone, Copy)]
pub enum StreamInput<'a> {
    Trajectories(&'a [Trajectory]),
    Motion(&'a MotionGridSequence),
}

impl StreamInput<'_> {
    fn span(&self) -> Option<(i64, i64)> {
        match self {
            StreamInput::Trajectories(t) => Some((clip_start(t)?, clip_end(t)?)),
            StreamInput::Motion(m) => Some((m.frames.first()?.0, m.frames.last()?.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowLabel {
    pub start_frame: i64,
    pub end_frame: i64,
    pub label: String,
    pub score: f64,
}

/// Labels consecutive windows of `window` frames advanced by `stride`
/// frames; each window's heat map uses its last frame as current time.
pub fn classify_sliding(
    input: StreamInput<'_>,
    window: u32,
    stride: u32,
    model: &ActivityModel,
    kc: &KernelConfig,
) -> Result<Vec<WindowLabel>> {
    if window == 0 || stride == 0 {
        return Err(HmbError::InvalidParameter("window and stride must be positive".into()));
    }
    let (start, end) = input.span().ok_or(HmbError::NoHeatSources)?;
    let span = (end - start + 1) as u32;
    if window > span {
        return Err(HmbError::WindowTooLarge { window, span });
    }
    let starts: Vec<i64> = (start..)
        .step_by(stride as usize)
        .take_while(|s| s + window as i64 - 1 <= end)
        .collect();
    starts
        .par_iter()
        .map(|&s| {
            let e = s + window as i64 - 1;
            let hm = match input {
                StreamInput::Trajectories(trajs) => {
                    let windowed: Vec<Trajectory> =
                        trajs.iter().map(|t| t.window(s, e)).filter(|t| !t.is_empty()).collect();
                    heat_map_from_trajectories(&windowed, &model.grid, &model.params.heat, Some(e))?
                }
                StreamInput::Motion(seq) => heat_map_from_motion(&seq.window(s, e), &model.params.heat, e)?,
            };
            let c = classify_asf(&hm, model, kc)?;
            Ok(WindowLabel {
                start_frame: s,
                end_frame: e,
                label: c.label,
                score: c.score,
            })
        })
        .collect()
}

/// Replaces each label by the strict majority of the `span` labels around it
/// (the span is clamped at the ends). Without a majority the label stays.
pub fn majority_smooth<S: AsRef<str> + Clone>(labels: &[S], span: usize) -> Vec<S> {
    let n = labels.len();
    if span < 2 || n == 0 {
        return labels.to_vec();
    }
    let span = span.min(n);
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(span / 2).min(n - span);
            let win = &labels[lo..lo + span];
            win.iter()
                .find(|l| 2 * win.iter().filter(|m| m.as_ref() == l.as_ref()).count() > span)
                .unwrap_or(&labels[i])
                .clone()
        })
        .collect()
}

/// Collapses consecutive repeats: `[a, a, b, a]` becomes `[a, b, a]`.
pub fn label_runs<S: AsRef<str>>(labels: &[S]) -> Vec<&str> {
    let mut runs: Vec<&str> = Vec::new();
    for l in labels {
        if runs.last() != Some(&l.as_ref()) {
            runs.push(l.as_ref());
        }
    }
    runs
}
