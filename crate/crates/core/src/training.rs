//! Per-activity mean key points and standard surfaces.
//!
//! Each label forms one cluster. Member key points are normalized, a medoid
//! member seeds the mean, and members are repeatedly fitted onto the mean
//! whose points are then replaced by the rank-wise average of the fitted
//! points (re-normalized). Once converged every member heat map is aligned
//! onto the mean key points and the aligned surfaces are averaged.

use std::collections::BTreeMap;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{
    fit_keypoints, key_points, normalize_keypoints, self_normalize, target_radius, Aligner, KeyPointSet, Point,
};
use crate::diffusion::HeatMap;
use crate::error::{HmbError, Result};
use crate::grid::GridSpec;
use crate::params::{AlignConfig, FitMode, HeatParams, SurfaceNorm};
use crate::recognition::surface_distance;

pub const MAX_ITERATIONS: usize = 1000;

/// Labeled heat maps sharing one grid.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub items: Vec<(HeatMap, String)>,
}

impl TrainingSet {
    pub fn new(items: Vec<(HeatMap, String)>) -> Self {
        TrainingSet { items }
    }

    pub fn push(&mut self, hm: HeatMap, label: impl Into<String>) {
        self.items.push((hm, label.into()));
    }
}

/// How the initial mean of a cluster is picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MeanInit {
    /// Member with the smallest summed key-point distance to the others.
    #[default]
    Medoid,
    /// Seeded random member.
    Random(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub align: AlignConfig,
    pub init: MeanInit,
    /// Mean key points moving less than this (patch units) ends the iteration.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Derive the kernel width from pairwise member distances. Otherwise the
    /// stored width is 1.
    pub auto_sigma: bool,
    pub norm: SurfaceNorm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            align: AlignConfig::default(),
            init: MeanInit::Medoid,
            tolerance: 1e-6,
            max_iterations: MAX_ITERATIONS,
            auto_sigma: true,
            norm: SurfaceNorm::L1,
        }
    }
}

/// One training heat map, self-normalized, kept for adaptive fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub clip_id: String,
    pub label: String,
    pub keypoints: KeyPointSet,
    pub surface: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub label: String,
    pub mean_keypoints: KeyPointSet,
    pub standard_surface: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Total landmark residual after each iteration.
    pub residual_trace: Vec<f64>,
    /// Members whose heat maps yielded no usable key points.
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub heat: HeatParams,
    pub align: AlignConfig,
    pub i_radius: f64,
    pub norm: SurfaceNorm,
}

/// Trained activity library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityModel {
    pub grid: GridSpec,
    pub params: ModelParams,
    pub clusters: Vec<Cluster>,
    pub members: Vec<Member>,
    /// Default Gaussian kernel width for adaptive fitting.
    pub sigma: f64,
}

impl ActivityModel {
    pub fn labels(&self) -> Vec<&str> {
        self.clusters.iter().map(|c| c.label.as_str()).collect()
    }

    pub fn cluster(&self, label: &str) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.label == label)
    }

    /// Differences between the parameters the model was trained with and
    /// the ones a caller is about to use.
    pub fn parameter_mismatches(&self, heat: &HeatParams, align: &AlignConfig) -> Vec<String> {
        let mut out = Vec::new();
        let p = &self.params;
        if p.heat.k_t != heat.k_t {
            out.push(format!("k_t: model {} vs config {}", p.heat.k_t, heat.k_t));
        }
        if p.heat.k_p != heat.k_p {
            out.push(format!("k_p: model {} vs config {}", p.heat.k_p, heat.k_p));
        }
        if p.heat.c != heat.c {
            out.push(format!("C: model {} vs config {}", p.heat.c, heat.c));
        }
        if p.heat.inclusive_dwell != heat.inclusive_dwell {
            out.push("dwell convention differs".to_string());
        }
        if p.align.n_max != align.n_max {
            out.push(format!("n_max: model {} vs config {}", p.align.n_max, align.n_max));
        }
        let radius = target_radius(&self.grid, align);
        if (radius - p.i_radius).abs() > 1e-12 {
            out.push(format!("I: model {} vs config {}", p.i_radius, radius));
        }
        out
    }
}

fn keypoint_distance(a: &KeyPointSet, b: &KeyPointSet) -> f64 {
    a.points
        .iter()
        .zip(&b.points)
        .map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1]))
        .sum()
}

fn lexicographic(a: &KeyPointSet, b: &KeyPointSet) -> std::cmp::Ordering {
    let fa = a.points.iter().flatten();
    let fb = b.points.iter().flatten();
    for (x, y) in fa.zip(fb) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

fn pick_initial(normalized: &[KeyPointSet], init: MeanInit) -> usize {
    match init {
        MeanInit::Random(seed) => {
            let mut idx: Vec<usize> = (0..normalized.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            idx[0]
        }
        MeanInit::Medoid => {
            let cost: Vec<f64> = normalized
                .iter()
                .map(|a| normalized.iter().map(|b| keypoint_distance(a, b)).sum())
                .collect();
            (0..normalized.len())
                .min_by(|&i, &j| {
                    cost[i]
                        .total_cmp(&cost[j])
                        .then_with(|| lexicographic(&normalized[i], &normalized[j]))
                })
                .expect("non-empty cluster")
        }
    }
}

/// Outcome of the iterative mean key-point computation for one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanShape {
    pub mean: KeyPointSet,
    pub iterations: usize,
    pub converged: bool,
    pub residual_trace: Vec<f64>,
}

fn total_residual(
    normalized: &[KeyPointSet],
    mean: &KeyPointSet,
    center: Point,
    mode: FitMode,
) -> Result<(f64, Vec<KeyPointSet>)> {
    let mut total = 0.0;
    let mut moved = Vec::with_capacity(normalized.len());
    for p in normalized {
        let fit = fit_keypoints(p, mean, center, mode)?;
        total += fit.residual;
        let k = fit.count;
        let rel = |q: &Point| [q[0] - center[0], q[1] - center[1]];
        let pts = p.points[..k]
            .iter()
            .map(|q| {
                let r = rel(q);
                let m = &fit.matrix;
                [
                    r[0] * m[0][0] + r[1] * m[1][0] + center[0],
                    r[0] * m[0][1] + r[1] * m[1][1] + center[1],
                ]
            })
            .collect();
        moved.push(KeyPointSet::new(pts, p.heats[..k].to_vec()));
    }
    Ok((total, moved))
}

/// Iterates the mean key points of one cluster from normalized member key
/// points.
///
/// Each iteration fits every member onto the current mean, averages the
/// fitted points rank by rank and re-normalizes the result. An update that
/// would raise the total landmark residual is rejected and ends the
/// iteration, so the recorded trace never increases.
pub fn mean_keypoints(
    normalized: &[KeyPointSet],
    grid: &GridSpec,
    radius: f64,
    cfg: &TrainConfig,
) -> Result<MeanShape> {
    if normalized.is_empty() {
        return Err(HmbError::EmptyTrainingSet);
    }
    let center = grid.center();
    let mut mean = normalized[pick_initial(normalized, cfg.init)].clone();
    let (mut residual, mut moved) = total_residual(normalized, &mean, center, cfg.align.fit)?;
    let mut trace = vec![residual];
    let mut iterations = 0;
    let mut converged = false;
    let cap = cfg.max_iterations.min(MAX_ITERATIONS);
    while iterations < cap {
        iterations += 1;
        let n = mean.len();
        let mut sums = vec![[0.0f64; 2]; n];
        let mut counts = vec![0usize; n];
        for m in &moved {
            for (i, p) in m.points.iter().enumerate() {
                sums[i][0] += p[0];
                sums[i][1] += p[1];
                counts[i] += 1;
            }
        }
        let averaged = KeyPointSet::new(
            sums.iter()
                .zip(&counts)
                .map(|(s, &c)| [s[0] / c as f64, s[1] / c as f64])
                .collect(),
            mean.heats.clone(),
        );
        let candidate = match normalize_keypoints(&averaged, grid, radius) {
            Ok((k, _)) => k,
            Err(_) => {
                converged = true;
                break;
            }
        };
        let shift = candidate
            .points
            .iter()
            .zip(&mean.points)
            .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
            .fold(0.0, f64::max);
        let (next_residual, next_moved) = total_residual(normalized, &candidate, center, cfg.align.fit)?;
        if next_residual > residual {
            debug!("mean update would raise residual {residual} -> {next_residual}; stopping");
            converged = true;
            break;
        }
        mean = candidate;
        residual = next_residual;
        moved = next_moved;
        trace.push(residual);
        if shift < cfg.tolerance {
            converged = true;
            break;
        }
    }
    Ok(MeanShape {
        mean,
        iterations,
        converged,
        residual_trace: trace,
    })
}

struct Prepared {
    idx: usize,
    normalized_kps: KeyPointSet,
    surface: HeatMap,
}

fn average_surfaces(surfaces: &[HeatMap]) -> Vec<f64> {
    let n = surfaces.len() as f64;
    let mut acc = vec![0.0; surfaces[0].values.len()];
    for s in surfaces {
        for (a, v) in acc.iter_mut().zip(&s.values) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len().is_multiple_of(2) { (v[m - 1] + v[m]) / 2.0 } else { v[m] })
}

/// Trains one cluster per distinct label.
pub fn train(ts: &TrainingSet, cfg: &TrainConfig) -> Result<ActivityModel> {
    let Some((first, _)) = ts.items.first() else {
        return Err(HmbError::EmptyTrainingSet);
    };
    let grid = first.grid;
    let heat = first.params;
    if ts.items.iter().any(|(hm, _)| hm.grid != grid) {
        return Err(HmbError::GridMismatch);
    }
    let radius = target_radius(&grid, &cfg.align);

    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (_, label)) in ts.items.iter().enumerate() {
        by_label.entry(label.as_str()).or_default().push(i);
    }

    // key points and self-normalized surfaces for every item
    let prepared: Vec<std::result::Result<Prepared, HmbError>> = ts
        .items
        .par_iter()
        .enumerate()
        .map(|(idx, (hm, _))| {
            let (surface, normalized_kps, _) = self_normalize(hm, &cfg.align)?;
            Ok(Prepared {
                idx,
                normalized_kps,
                surface,
            })
        })
        .collect();

    let mut clusters = Vec::new();
    let mut members = Vec::new();
    let mut member_items = Vec::new();
    for (label, idxs) in &by_label {
        let mut ok: Vec<&Prepared> = Vec::new();
        let mut skipped = Vec::new();
        for &i in idxs {
            match &prepared[i] {
                Ok(p) => ok.push(p),
                Err(e) => {
                    warn!("skipping {:?} ({label}): {e}", ts.items[i].0.clip_id);
                    skipped.push(ts.items[i].0.clip_id.clone());
                }
            }
        }
        if ok.is_empty() {
            return Err(HmbError::InsufficientSamples(label.to_string()));
        }
        let normalized: Vec<KeyPointSet> = ok.iter().map(|p| p.normalized_kps.clone()).collect();
        let shape = mean_keypoints(&normalized, &grid, radius, cfg)?;

        let aligned: Vec<HeatMap> = ok
            .par_iter()
            .map(|p| {
                let hm = &ts.items[p.idx].0;
                Aligner::new(hm, &cfg.align)?
                    .align_to(&shape.mean)
                    .map(|a| a.aligned)
            })
            .collect::<Result<_>>()?;
        clusters.push(Cluster {
            label: label.to_string(),
            mean_keypoints: shape.mean,
            standard_surface: average_surfaces(&aligned),
            iterations: shape.iterations,
            converged: shape.converged,
            residual_trace: shape.residual_trace,
            skipped,
        });
        for p in ok {
            let hm = &ts.items[p.idx].0;
            member_items.push(p.idx);
            members.push(Member {
                clip_id: hm.clip_id.clone(),
                label: label.to_string(),
                keypoints: p.normalized_kps.clone(),
                surface: p.surface.values.clone(),
            });
        }
    }

    let sigma = if cfg.auto_sigma {
        pairwise_sigma(ts, &member_items, &members, cfg).unwrap_or(1.0)
    } else {
        1.0
    };

    Ok(ActivityModel {
        grid,
        params: ModelParams {
            heat,
            align: cfg.align,
            i_radius: radius,
            norm: cfg.norm,
        },
        clusters,
        members,
        sigma,
    })
}

/// Median aligned distance over ordered pairs of distinct members.
fn pairwise_sigma(ts: &TrainingSet, items: &[usize], members: &[Member], cfg: &TrainConfig) -> Option<f64> {
    let distances: Vec<f64> = items
        .par_iter()
        .enumerate()
        .flat_map_iter(|(a, &item)| {
            let hm = &ts.items[item].0;
            let aligner = Aligner::new(hm, &cfg.align).ok();
            members.iter().enumerate().filter(move |(b, _)| *b != a).filter_map(move |(_, m)| {
                let al = aligner.as_ref()?.align_to(&m.keypoints).ok()?;
                surface_distance(&al.aligned.values, &m.surface, cfg.norm).ok()
            })
        })
        .collect();
    median(distances).filter(|s| *s > 0.0 && s.is_finite())
}

/// Key points of a heat map normalized to the model radius.
pub fn normalized_keypoints(hm: &HeatMap, cfg: &AlignConfig) -> Result<KeyPointSet> {
    let kps = key_points(hm, cfg)?;
    normalize_keypoints(&kps, &hm.grid, target_radius(&hm.grid, cfg)).map(|(k, _)| k)
}
