//! Key-point based heat-map alignment.
//!
//! Peaks of a heat map serve as landmarks. Landmarks are shifted so their
//! centroid sits at the grid center, scaled so their mean distance from the
//! center equals a fixed radius, and then mapped onto target landmarks by a
//! least-squares 2x2 matrix. The same shift, scale and matrix are applied to
//! the whole surface with bilinear resampling.
//!
//! All coordinates are continuous patch coordinates: patch `(col, row)` has
//! its center at `(col, row)`. Points are row vectors, so a matrix `T` acts
//! as `p * T`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::diffusion::HeatMap;
use crate::error::{HmbError, Result};
use crate::grid::GridSpec;
use crate::params::{AlignConfig, FitMode};

pub type Point = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

pub const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

/// Landmarks ordered by non-increasing heat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyPointSet {
    pub points: Vec<Point>,
    pub heats: Vec<f64>,
}

impl KeyPointSet {
    pub fn new(points: Vec<Point>, heats: Vec<f64>) -> Self {
        debug_assert_eq!(points.len(), heats.len());
        KeyPointSet { points, heats }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `n` hottest points.
    pub fn truncated(&self, n: usize) -> KeyPointSet {
        let n = n.min(self.len());
        KeyPointSet {
            points: self.points[..n].to_vec(),
            heats: self.heats[..n].to_vec(),
        }
    }

    pub fn centroid(&self) -> Point {
        let n = self.len() as f64;
        let (sx, sy) = self
            .points
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
        [sx / n, sy / n]
    }

    /// Mean Euclidean distance of the points from `origin`.
    pub fn mean_radius(&self, origin: Point) -> f64 {
        self.points
            .iter()
            .map(|p| (p[0] - origin[0]).hypot(p[1] - origin[1]))
            .sum::<f64>()
            / self.len() as f64
    }
}

/// Shift, uniform scale about the grid center, then a 2x2 linear map about
/// the grid center: `p -> c + ((p + pre_shift - c) * pre_scale) * linear`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignTransform {
    pub center: Point,
    pub pre_shift: Point,
    pub pre_scale: f64,
    pub linear: Mat2,
}

impl AlignTransform {
    pub fn identity(center: Point) -> Self {
        AlignTransform {
            center,
            pre_shift: [0.0, 0.0],
            pre_scale: 1.0,
            linear: IDENTITY,
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        let q = [
            (p[0] + self.pre_shift[0] - self.center[0]) * self.pre_scale,
            (p[1] + self.pre_shift[1] - self.center[1]) * self.pre_scale,
        ];
        let r = mul_row(q, &self.linear);
        [r[0] + self.center[0], r[1] + self.center[1]]
    }

    pub fn apply_set(&self, kps: &KeyPointSet) -> KeyPointSet {
        KeyPointSet {
            points: kps.points.iter().map(|&p| self.apply(p)).collect(),
            heats: kps.heats.clone(),
        }
    }

    pub fn determinant(&self) -> f64 {
        det(&self.linear)
    }

    fn inverse_linear(&self) -> Result<Mat2> {
        let ok = self.pre_scale.is_finite()
            && self.pre_scale > 0.0
            && self.pre_shift.iter().all(|v| v.is_finite())
            && self.linear.iter().flatten().all(|v| v.is_finite());
        if !ok {
            return Err(HmbError::NonInvertibleAlignment);
        }
        invert(&self.linear).ok_or(HmbError::NonInvertibleAlignment)
    }

    /// Maps an output location back to where it came from.
    pub fn invert_point(&self, o: Point) -> Result<Point> {
        let inv = self.inverse_linear()?;
        Ok(self.invert_with(&inv, o))
    }

    fn invert_with(&self, inv: &Mat2, o: Point) -> Point {
        let q = mul_row([o[0] - self.center[0], o[1] - self.center[1]], inv);
        [
            q[0] / self.pre_scale + self.center[0] - self.pre_shift[0],
            q[1] / self.pre_scale + self.center[1] - self.pre_shift[1],
        ]
    }
}

fn mul_row(p: Point, m: &Mat2) -> Point {
    [
        p[0] * m[0][0] + p[1] * m[1][0],
        p[0] * m[0][1] + p[1] * m[1][1],
    ]
}

fn det(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

fn invert(m: &Mat2) -> Option<Mat2> {
    let d = det(m);
    let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    if d == 0.0 || !d.is_finite() || d.abs() <= 1e-14 * scale * scale {
        return None;
    }
    Some([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]])
}

const NEIGHBORS: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

fn neighbors(grid: &GridSpec, idx: usize) -> impl Iterator<Item = usize> + '_ {
    let (c, r) = grid.col_row(idx);
    let (cols, rows) = (grid.cols() as isize, grid.rows() as isize);
    NEIGHBORS.iter().filter_map(move |&(dc, dr)| {
        let (nc, nr) = (c as isize + dc, r as isize + dr);
        (nc >= 0 && nr >= 0 && nc < cols && nr < rows).then(|| grid.index(nc as usize, nr as usize))
    })
}

fn point_of(grid: &GridSpec, idx: usize) -> Point {
    let (c, r) = grid.col_row(idx);
    [c as f64, r as f64]
}

/// Local maxima of a heat map, hottest first.
///
/// A patch is a peak when it is strictly greater than all of its existing
/// 8-neighbors. A connected plateau of equal values counts as one peak,
/// located at the plateau patch closest to the plateau centroid, when all of
/// its outside neighbors are lower and at least one such neighbor exists.
/// Peaks below `min_prominence` of the global maximum are dropped.
pub fn extract_peaks(hm: &HeatMap, cfg: &AlignConfig) -> Result<KeyPointSet> {
    let grid = &hm.grid;
    let v = &hm.values;
    let global = hm.max();
    if !(global > 0.0) || !global.is_finite() {
        return Err(HmbError::DegenerateHeatMap);
    }
    let floor = cfg.min_prominence * global;
    let mut visited = vec![false; v.len()];
    let mut found: Vec<(usize, f64)> = Vec::new();
    for i in 0..v.len() {
        if visited[i] || v[i] < floor || v[i] <= 0.0 {
            continue;
        }
        let mut equal = false;
        let mut higher = false;
        for n in neighbors(grid, i) {
            if v[n] > v[i] {
                higher = true;
                break;
            }
            equal |= v[n] == v[i];
        }
        if higher {
            continue;
        }
        if !equal {
            visited[i] = true;
            found.push((i, v[i]));
            continue;
        }
        // plateau flood fill
        let value = v[i];
        let mut members = Vec::new();
        let mut queue = VecDeque::from([i]);
        visited[i] = true;
        let (mut has_lower, mut has_higher) = (false, false);
        while let Some(p) = queue.pop_front() {
            members.push(p);
            for n in neighbors(grid, p) {
                if v[n] == value {
                    if !visited[n] {
                        visited[n] = true;
                        queue.push_back(n);
                    }
                } else if v[n] > value {
                    has_higher = true;
                } else {
                    has_lower = true;
                }
            }
        }
        if has_higher || !has_lower {
            continue;
        }
        let k = members.len() as f64;
        let (sx, sy) = members.iter().fold((0.0, 0.0), |(sx, sy), &m| {
            let p = point_of(grid, m);
            (sx + p[0], sy + p[1])
        });
        let centroid = [sx / k, sy / k];
        let rep = members
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let da = dist2(point_of(grid, a), centroid);
                let db = dist2(point_of(grid, b), centroid);
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("plateau has members");
        found.push((rep, value));
    }
    if found.is_empty() {
        return Err(HmbError::DegenerateHeatMap);
    }
    found.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    found.truncate(cfg.n_max.max(1));
    Ok(KeyPointSet {
        points: found.iter().map(|&(i, _)| point_of(grid, i)).collect(),
        heats: found.iter().map(|&(_, h)| h).collect(),
    })
}

fn dist2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn angle_from_x(peak: Point, p: Point) -> f64 {
    let a = (p[1] - peak[1]).atan2(p[0] - peak[0]);
    if a < 0.0 {
        a + std::f64::consts::TAU
    } else {
        a
    }
}

/// Bilinear sample at a continuous location, `None` outside the grid.
pub fn sample_bilinear(hm: &HeatMap, p: Point) -> Option<f64> {
    const EPS: f64 = 1e-9;
    let (cols, rows) = (hm.cols(), hm.rows());
    let (maxx, maxy) = ((cols - 1) as f64, (rows - 1) as f64);
    let (x, y) = (p[0], p[1]);
    if !(x >= -EPS && y >= -EPS && x <= maxx + EPS && y <= maxy + EPS) {
        return None;
    }
    let x = x.clamp(0.0, maxx);
    let y = y.clamp(0.0, maxy);
    let x0 = (x.floor() as usize).min(cols.saturating_sub(2));
    let y0 = (y.floor() as usize).min(rows.saturating_sub(2));
    let x1 = (x0 + 1).min(cols - 1);
    let y1 = (y0 + 1).min(rows - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let v00 = hm.at(x0, y0);
    let v10 = hm.at(x1, y0);
    let v01 = hm.at(x0, y1);
    let v11 = hm.at(x1, y1);
    Some((1.0 - fx) * (1.0 - fy) * v00 + fx * (1.0 - fy) * v10 + (1.0 - fx) * fy * v01 + fx * fy * v11)
}

/// Extra landmark for single-peak maps: the half-height point farthest from
/// the peak, marking the slowest-descending slope.
///
/// Patches within 2% of half the peak height qualify; the band doubles until
/// it holds a patch or exceeds half the peak height. If no patch qualifies,
/// the half-height crossing is located on the bilinear surface along 720
/// rays from the peak instead. Ties prefer the smaller angle from the
/// positive x axis, then the lower patch index.
pub fn second_key_point(hm: &HeatMap, peak: Point) -> Result<Point> {
    let grid = &hm.grid;
    let peak_h = sample_bilinear(hm, peak).ok_or(HmbError::NoHalfHeightContour)?;
    if !(peak_h > 0.0) {
        return Err(HmbError::NoHalfHeightContour);
    }
    let half = peak_h / 2.0;
    let mut tol = 0.02 * peak_h;
    while tol <= 0.5 * peak_h {
        let mut best: Option<(f64, f64, usize)> = None;
        for (i, &h) in hm.values.iter().enumerate() {
            if (h - half).abs() > tol {
                continue;
            }
            let p = point_of(grid, i);
            let d = dist2(p, peak).sqrt();
            if d == 0.0 {
                continue;
            }
            let a = angle_from_x(peak, p);
            let better = match best {
                None => true,
                Some((bd, ba, bi)) => {
                    if (d - bd).abs() > 1e-9 {
                        d > bd
                    } else if (a - ba).abs() > 1e-12 {
                        a < ba
                    } else {
                        i < bi
                    }
                }
            };
            if better {
                best = Some((d, a, i));
            }
        }
        if let Some((_, _, i)) = best {
            return Ok(point_of(grid, i));
        }
        tol *= 2.0;
    }
    contour_crossing(hm, peak, half).ok_or(HmbError::NoHalfHeightContour)
}

fn contour_crossing(hm: &HeatMap, peak: Point, half: f64) -> Option<Point> {
    const RAYS: usize = 720;
    const STEP: f64 = 0.01;
    let mut best: Option<(f64, Point)> = None;
    for k in 0..RAYS {
        let a = k as f64 * std::f64::consts::TAU / RAYS as f64;
        let (dx, dy) = (a.cos(), a.sin());
        let mut t = STEP;
        let mut prev_h = sample_bilinear(hm, peak)?;
        while let Some(h) = sample_bilinear(hm, [peak[0] + t * dx, peak[1] + t * dy]) {
            if h <= half {
                // linear refinement between the last two samples
                let frac = if prev_h > h { (prev_h - half) / (prev_h - h) } else { 1.0 };
                let r = t - STEP + frac * STEP;
                if best.is_none_or(|(bd, _)| r > bd + 1e-9) {
                    best = Some((r, [peak[0] + r * dx, peak[1] + r * dy]));
                }
                break;
            }
            prev_h = h;
            t += STEP;
        }
    }
    best.map(|(_, p)| p)
}

/// Peaks plus, for single-peak maps, the half-height landmark.
pub fn key_points(hm: &HeatMap, cfg: &AlignConfig) -> Result<KeyPointSet> {
    let mut kps = extract_peaks(hm, cfg)?;
    if kps.len() == 1 {
        let p = second_key_point(hm, kps.points[0])?;
        let h = sample_bilinear(hm, p).unwrap_or(0.0);
        kps.points.push(p);
        kps.heats.push(h);
    }
    Ok(kps)
}

/// Target mean radius for a grid.
pub fn target_radius(grid: &GridSpec, cfg: &AlignConfig) -> f64 {
    cfg.i_radius
        .unwrap_or_else(|| grid.cols().min(grid.rows()) as f64 / 4.0)
}

/// Shift and scale found by [`normalize_keypoints`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub shift: Point,
    pub scale: f64,
}

/// Centers key points on the grid center and scales them to mean radius
/// `radius`.
pub fn normalize_keypoints(
    kps: &KeyPointSet,
    grid: &GridSpec,
    radius: f64,
) -> Result<(KeyPointSet, Normalization)> {
    if kps.is_empty() {
        return Err(HmbError::ZeroSpread);
    }
    if !(radius > 0.0) {
        return Err(HmbError::InvalidParameter("target radius must be positive".into()));
    }
    let center = grid.center();
    let m = kps.centroid();
    let shift = [center[0] - m[0], center[1] - m[1]];
    let shifted = KeyPointSet {
        points: kps.points.iter().map(|p| [p[0] + shift[0], p[1] + shift[1]]).collect(),
        heats: kps.heats.clone(),
    };
    let spread = shifted.mean_radius(center);
    if !(spread > 1e-12) {
        return Err(HmbError::ZeroSpread);
    }
    let scale = radius / spread;
    let points = shifted
        .points
        .iter()
        .map(|p| {
            [
                center[0] + (p[0] - center[0]) * scale,
                center[1] + (p[1] - center[1]) * scale,
            ]
        })
        .collect();
    Ok((
        KeyPointSet {
            points,
            heats: kps.heats.clone(),
        },
        Normalization { shift, scale },
    ))
}

/// Result of fitting the 2x2 landmark map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub matrix: Mat2,
    /// Sum of squared landmark errors after the fit.
    pub residual: f64,
    /// Rank-deficient landmarks, or a singular least-squares map, forced a
    /// rotation plus uniform scale fit.
    pub constrained: bool,
    /// Points used, `min(src.len(), dst.len())`.
    pub count: usize,
}

impl LinearFit {
    pub fn reflects(&self) -> bool {
        det(&self.matrix) < 0.0
    }
}

/// Least-squares `T` minimizing `sum |G_i - P_i T|^2` over rank-matched
/// landmarks, with coordinates taken relative to `center`.
pub fn fit_linear(src: &KeyPointSet, dst: &KeyPointSet, center: Point) -> Result<LinearFit> {
    let n = src.len().min(dst.len());
    if n < 2 {
        return Err(HmbError::InvalidParameter(
            "alignment needs at least two key points".into(),
        ));
    }
    let rel = |p: Point| [p[0] - center[0], p[1] - center[1]];
    let ps: Vec<Point> = src.points[..n].iter().map(|&p| rel(p)).collect();
    let gs: Vec<Point> = dst.points[..n].iter().map(|&p| rel(p)).collect();

    let (mut a, mut b) = ([[0.0; 2]; 2], [[0.0; 2]; 2]);
    for (p, g) in ps.iter().zip(&gs) {
        for r in 0..2 {
            for c in 0..2 {
                a[r][c] += p[r] * p[c];
                b[r][c] += p[r] * g[c];
            }
        }
    }
    let tr = a[0][0] + a[1][1];
    let disc = ((a[0][0] - a[1][1]).powi(2) / 4.0 + a[0][1] * a[1][0]).max(0.0).sqrt();
    let (lmax, lmin) = (tr / 2.0 + disc, tr / 2.0 - disc);
    if !(lmax > 1e-18) {
        return Err(HmbError::ZeroSpread);
    }
    let (matrix, constrained) = match invert(&a) {
        Some(inv) if lmin > 1e-9 * lmax => {
            let mut t = [[0.0; 2]; 2];
            for r in 0..2 {
                for c in 0..2 {
                    t[r][c] = inv[r][0] * b[0][c] + inv[r][1] * b[1][c];
                }
            }
            // collinear targets make the least-squares map itself singular
            let fro = t.iter().flatten().map(|v| v * v).sum::<f64>();
            if det(&t).abs() > 1e-9 * fro {
                (t, false)
            } else {
                (similarity_fit(&ps, &gs), true)
            }
        }
        _ => (similarity_fit(&ps, &gs), true),
    };
    let residual = landmark_residual(&ps, &gs, &matrix);
    Ok(LinearFit {
        matrix,
        residual,
        constrained,
        count: n,
    })
}

fn similarity_sums(ps: &[Point], gs: &[Point]) -> (f64, f64, f64) {
    let (mut norm, mut sa, mut sb) = (0.0, 0.0, 0.0);
    for (p, g) in ps.iter().zip(gs) {
        norm += p[0] * p[0] + p[1] * p[1];
        sa += p[0] * g[0] + p[1] * g[1];
        sb += p[0] * g[1] - p[1] * g[0];
    }
    (norm, sa, sb)
}

/// Best rotation plus uniform scale `[[a, b], [-b, a]]`.
fn similarity_fit(ps: &[Point], gs: &[Point]) -> Mat2 {
    let (norm, sa, sb) = similarity_sums(ps, gs);
    let (a, b) = (sa / norm, sb / norm);
    [[a, b], [-b, a]]
}

/// Best pure rotation (orthogonal Procrustes without reflection).
fn rotation_fit(ps: &[Point], gs: &[Point]) -> Mat2 {
    let (_, sa, sb) = similarity_sums(ps, gs);
    let h = sa.hypot(sb);
    if h == 0.0 {
        return IDENTITY;
    }
    let (a, b) = (sa / h, sb / h);
    [[a, b], [-b, a]]
}

/// Fits the landmark map of the requested family. `Linear` is
/// [`fit_linear`]; the constrained families never report a fallback.
pub fn fit_keypoints(src: &KeyPointSet, dst: &KeyPointSet, center: Point, mode: FitMode) -> Result<LinearFit> {
    if mode == FitMode::Linear {
        return fit_linear(src, dst, center);
    }
    let n = src.len().min(dst.len());
    if n < 2 {
        return Err(HmbError::InvalidParameter(
            "alignment needs at least two key points".into(),
        ));
    }
    let rel = |p: &Point| [p[0] - center[0], p[1] - center[1]];
    let ps: Vec<Point> = src.points[..n].iter().map(rel).collect();
    let gs: Vec<Point> = dst.points[..n].iter().map(rel).collect();
    if !(similarity_sums(&ps, &gs).0 > 1e-18) {
        return Err(HmbError::ZeroSpread);
    }
    let matrix = match mode {
        FitMode::Similarity => similarity_fit(&ps, &gs),
        _ => rotation_fit(&ps, &gs),
    };
    Ok(LinearFit {
        matrix,
        residual: landmark_residual(&ps, &gs, &matrix),
        constrained: false,
        count: n,
    })
}

fn landmark_residual(ps: &[Point], gs: &[Point], m: &Mat2) -> f64 {
    ps.iter()
        .zip(gs)
        .map(|(&p, g)| {
            let q = mul_row(p, m);
            (g[0] - q[0]).powi(2) + (g[1] - q[1]).powi(2)
        })
        .sum()
}

/// Resamples a heat map under `xf` by inverse mapping with bilinear
/// interpolation; locations that map outside the source grid become 0.
pub fn warp_heatmap(hm: &HeatMap, xf: &AlignTransform) -> Result<HeatMap> {
    let inv = xf.inverse_linear()?;
    let grid = hm.grid;
    let values = (0..grid.len())
        .map(|i| {
            let src = xf.invert_with(&inv, point_of(&grid, i));
            sample_bilinear(hm, src).unwrap_or(0.0)
        })
        .collect();
    Ok(HeatMap {
        values,
        ..hm.clone()
    })
}

/// Outcome of aligning one heat map onto target key points.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub aligned: HeatMap,
    pub transform: AlignTransform,
    /// Landmark residual after the fit.
    pub residual: f64,
    /// Landmark residual of the raw, untransformed key points.
    pub residual_before: f64,
    pub constrained: bool,
    pub reflects: bool,
}

/// A heat map with its key points extracted once, ready to be aligned to
/// many targets.
#[derive(Debug, Clone)]
pub struct Aligner<'a> {
    hm: &'a HeatMap,
    keypoints: KeyPointSet,
    radius: f64,
    mode: FitMode,
}

impl<'a> Aligner<'a> {
    pub fn new(hm: &'a HeatMap, cfg: &AlignConfig) -> Result<Self> {
        let keypoints = key_points(hm, cfg)?;
        Ok(Aligner {
            hm,
            keypoints,
            radius: target_radius(&hm.grid, cfg),
            mode: cfg.fit,
        })
    }

    pub fn keypoints(&self) -> &KeyPointSet {
        &self.keypoints
    }

    /// Transform and landmark fit onto `target` without warping.
    pub fn fit(&self, target: &KeyPointSet) -> Result<(AlignTransform, LinearFit)> {
        let grid = &self.hm.grid;
        let k = self.keypoints.len().min(target.len());
        let src = self.keypoints.truncated(k);
        let (norm, n) = normalize_keypoints(&src, grid, self.radius)?;
        let fit = fit_keypoints(&norm, target, grid.center(), self.mode)?;
        let xf = AlignTransform {
            center: grid.center(),
            pre_shift: n.shift,
            pre_scale: n.scale,
            linear: fit.matrix,
        };
        Ok((xf, fit))
    }

    pub fn align_to(&self, target: &KeyPointSet) -> Result<Alignment> {
        let (transform, fit) = self.fit(target)?;
        let aligned = warp_heatmap(self.hm, &transform)?;
        let k = fit.count;
        let residual_before = self.keypoints.points[..k]
            .iter()
            .zip(&target.points[..k])
            .map(|(&p, &g)| dist2(p, g))
            .sum();
        Ok(Alignment {
            aligned,
            transform,
            residual: fit.residual,
            residual_before,
            constrained: fit.constrained,
            reflects: fit.reflects(),
        })
    }
}

/// Aligns `hm` onto already-normalized target key points.
pub fn align(hm: &HeatMap, target: &KeyPointSet, cfg: &AlignConfig) -> Result<Alignment> {
    Aligner::new(hm, cfg)?.align_to(target)
}

/// Self-normalization of a heat map: its key points moved to the grid
/// center at the configured radius, and the surface warped accordingly.
pub fn self_normalize(hm: &HeatMap, cfg: &AlignConfig) -> Result<(HeatMap, KeyPointSet, AlignTransform)> {
    let kps = key_points(hm, cfg)?;
    let (norm, n) = normalize_keypoints(&kps, &hm.grid, target_radius(&hm.grid, cfg))?;
    let xf = AlignTransform {
        center: hm.grid.center(),
        pre_shift: n.shift,
        pre_scale: n.scale,
        linear: IDENTITY,
    };
    Ok((warp_heatmap(hm, &xf)?, norm, xf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::diffuse;
    use crate::grid::HeatSourceField;
    use crate::params::{Coefficient, HeatParams};
    use approx::assert_abs_diff_eq;

    fn assert_mat_eq(a: &Mat2, b: &Mat2, eps: f64) {
        for (ra, rb) in a.iter().zip(b) {
            for (x, y) in ra.iter().zip(rb) {
                assert_abs_diff_eq!(x, y, epsilon = eps);
            }
        }
    }

    fn diffused(grid: GridSpec, sources: &[(usize, usize, f64)], kp: f64) -> HeatMap {
        let mut energies = vec![0.0; grid.len()];
        for &(c, r, e) in sources {
            energies[grid.index(c, r)] = e;
        }
        let field = HeatSourceField {
            grid,
            energies,
            t_cur: 0,
            params: HeatParams::default(),
        };
        diffuse(&field, Coefficient::Finite(kp)).unwrap()
    }

    fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> HeatMap {
        let values = (0..grid.len())
            .map(|i| {
                let (c, r) = grid.col_row(i);
                f(c as f64, r as f64)
            })
            .collect();
        HeatMap::new(grid, values, HeatParams::default(), "t").unwrap()
    }

    fn g(cols: u32, rows: u32) -> GridSpec {
        GridSpec::new(cols * 10, rows * 10, 10).unwrap()
    }

    fn kps(points: &[Point]) -> KeyPointSet {
        let heats = (0..points.len()).map(|i| (points.len() - i) as f64).collect();
        KeyPointSet::new(points.to_vec(), heats)
    }

    fn rot(theta: f64) -> Mat2 {
        // row-vector convention: p * R rotates p by theta
        [[theta.cos(), theta.sin()], [-theta.sin(), theta.cos()]]
    }

    #[test]
    fn single_source_has_one_peak() {
        let hm = diffused(g(20, 20), &[(5, 7, 3.0)], 2.0);
        let p = extract_peaks(&hm, &AlignConfig::default()).unwrap();
        assert_eq!(p.points, vec![[5.0, 7.0]]);
    }

    #[test]
    fn two_sources_hotter_first() {
        let hm = diffused(g(20, 20), &[(4, 10, 1.0), (6, 10, 2.0)], 2.0);
        let p = extract_peaks(&hm, &AlignConfig::default()).unwrap();
        assert_eq!(p.points, vec![[6.0, 10.0], [4.0, 10.0]]);
        assert!(p.heats[0] > p.heats[1]);
    }

    #[test]
    fn flat_and_zero_maps_are_degenerate() {
        let flat = diffused(g(10, 10), &[(2, 2, 1.0), (7, 7, 1.0)], 0.0);
        assert!(matches!(extract_peaks(&flat, &AlignConfig::default()), Err(HmbError::DegenerateHeatMap)));
        let zero = from_fn(g(5, 5), |_, _| 0.0);
        assert!(matches!(extract_peaks(&zero, &AlignConfig::default()), Err(HmbError::DegenerateHeatMap)));
    }

    #[test]
    fn plateau_resolves_to_centroid_patch() {
        let hm = from_fn(g(9, 9), |c, r| {
            if (3.0..=5.0).contains(&c) && (3.0..=5.0).contains(&r) {
                1.0
            } else {
                0.1
            }
        });
        let p = extract_peaks(&hm, &AlignConfig::default()).unwrap();
        assert_eq!(p.points, vec![[4.0, 4.0]]);
    }

    #[test]
    fn prominence_floor_and_cap() {
        let hm = diffused(g(30, 10), &[(3, 5, 10.0), (12, 5, 0.5), (20, 5, 5.0)], 2.0);
        let p = extract_peaks(&hm, &AlignConfig::default()).unwrap();
        assert_eq!(p.points, vec![[3.0, 5.0], [20.0, 5.0]]);
        let cfg = AlignConfig {
            n_max: 1,
            ..AlignConfig::default()
        };
        assert_eq!(extract_peaks(&hm, &cfg).unwrap().len(), 1);
    }

    #[test]
    fn symmetric_half_height_tie_picks_angle_zero() {
        let hm = from_fn(g(21, 21), |c, r| (1.0 - (c - 10.0).hypot(r - 10.0) / 6.0).max(0.0));
        assert_eq!(second_key_point(&hm, [10.0, 10.0]).unwrap(), [13.0, 10.0]);
    }

    #[test]
    fn elongated_peak_points_along_long_axis() {
        let hm = diffused(g(21, 21), &[(10, 10, 1.0), (11, 10, 0.8)], 2.0);
        let peaks = extract_peaks(&hm, &AlignConfig::default()).unwrap();
        assert_eq!(peaks.points, vec![[10.0, 10.0]]);
        let p = second_key_point(&hm, peaks.points[0]).unwrap();
        assert!(p[0] > 10.5 && (p[1] - 10.0).abs() < 0.05, "{p:?}");
    }

    #[test]
    fn corner_peak_stays_in_grid() {
        let hm = diffused(g(12, 12), &[(0, 0, 1.0)], 0.5);
        let p = second_key_point(&hm, [0.0, 0.0]).unwrap();
        assert!(p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= 11.0 && p[1] <= 11.0);
        assert!(p != [0.0, 0.0]);
    }

    #[test]
    fn key_points_augment_single_peak() {
        let hm = diffused(g(20, 20), &[(8, 8, 1.0)], 0.5);
        let k = key_points(&hm, &AlignConfig::default()).unwrap();
        assert_eq!(k.len(), 2);
        assert_eq!(k.points[0], [8.0, 8.0]);
    }

    #[test]
    fn normalization_examples() {
        let grid = g(40, 40);
        let c = grid.center();
        let r = 10.0;
        let base = kps(&[[c[0] + 10.0, c[1]], [c[0] - 10.0, c[1]], [c[0], c[1] + 10.0], [c[0], c[1] - 10.0]]);
        let (same, n) = normalize_keypoints(&base, &grid, r).unwrap();
        assert_eq!(n.shift, [0.0, 0.0]);
        assert_eq!(n.scale, 1.0);
        assert_eq!(same.points, base.points);

        let moved = kps(&base.points.iter().map(|p| [p[0] + 5.0, p[1] - 3.0]).collect::<Vec<_>>());
        let (back, n) = normalize_keypoints(&moved, &grid, r).unwrap();
        assert_abs_diff_eq!(n.shift[0], -5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(n.shift[1], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(n.scale, 1.0, epsilon = 1e-12);
        for (a, b) in back.points.iter().zip(&base.points) {
            assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-12);
            assert_abs_diff_eq!(a[1], b[1], epsilon = 1e-12);
        }

        let doubled = kps(&base
            .points
            .iter()
            .map(|p| [c[0] + 2.0 * (p[0] - c[0]), c[1] + 2.0 * (p[1] - c[1])])
            .collect::<Vec<_>>());
        assert_abs_diff_eq!(normalize_keypoints(&doubled, &grid, r).unwrap().1.scale, 0.5, epsilon = 1e-12);

        let same_spot = kps(&[[3.0, 4.0], [3.0, 4.0]]);
        assert!(matches!(normalize_keypoints(&same_spot, &grid, r), Err(HmbError::ZeroSpread)));
    }

    #[test]
    fn fit_identity_and_rotation() {
        let c = [20.0, 20.0];
        let src = kps(&[[30.0, 21.0], [14.0, 25.0], [18.0, 9.0]]);
        let f = fit_linear(&src, &src, c).unwrap();
        assert_mat_eq(&f.matrix, &IDENTITY, 1e-12);
        assert!(f.residual < 1e-20);

        let t = rot(30f64.to_radians());
        let dst = kps(&src
            .points
            .iter()
            .map(|&p| {
                let q = mul_row([p[0] - c[0], p[1] - c[1]], &t);
                [q[0] + c[0], q[1] + c[1]]
            })
            .collect::<Vec<_>>());
        let f = fit_linear(&src, &dst, c).unwrap();
        assert_mat_eq(&f.matrix, &t, 1e-6);
        assert!(f.residual <= 1e-9);
        assert!(!f.constrained && !f.reflects());
    }

    fn residual_of(ps: &[Point], gs: &[Point], m: &Mat2) -> f64 {
        ps.iter()
            .zip(gs)
            .map(|(&p, g)| {
                let q = mul_row(p, m);
                (g[0] - q[0]).powi(2) + (g[1] - q[1]).powi(2)
            })
            .sum()
    }

    #[test]
    fn noisy_fit_matches_brute_force_optimum() {
        let c = [0.0, 0.0];
        let ps = [[3.0, 1.0], [-2.0, 2.5], [0.5, -3.0], [-1.5, -1.0]];
        let truth = [[0.8, 0.3], [-0.4, 1.1]];
        let noise = [[0.1, -0.05], [-0.08, 0.12], [0.03, 0.07], [-0.11, -0.02]];
        let gs: Vec<Point> = ps
            .iter()
            .zip(&noise)
            .map(|(&p, n)| {
                let q = mul_row(p, &truth);
                [q[0] + n[0], q[1] + n[1]]
            })
            .collect();
        let fit = fit_linear(&kps(&ps), &kps(&gs), c).unwrap();

        // coarse lattice over the four entries, then compass search
        let mut best = (f64::INFINITY, [[0.0; 2]; 2]);
        let steps: Vec<f64> = (0..=16).map(|i| -2.0 + 0.25 * i as f64).collect();
        for &a in &steps {
            for &b in &steps {
                for &cc in &steps {
                    for &d in &steps {
                        let m = [[a, b], [cc, d]];
                        let r = residual_of(&ps, &gs, &m);
                        if r < best.0 {
                            best = (r, m);
                        }
                    }
                }
            }
        }
        let mut step = 0.125;
        while step > 1e-12 {
            let mut improved = false;
            for k in 0..4 {
                for s in [-step, step] {
                    let mut m = best.1;
                    m[k / 2][k % 2] += s;
                    let r = residual_of(&ps, &gs, &m);
                    if r < best.0 {
                        best = (r, m);
                        improved = true;
                    }
                }
            }
            if !improved {
                step /= 2.0;
            }
        }
        assert_abs_diff_eq!(fit.residual, best.0, epsilon = 1e-9);
        assert!(fit.residual <= best.0 + 1e-12);
    }

    #[test]
    fn rank_deficient_sources_use_similarity() {
        let c = [0.0, 0.0];
        let two = fit_linear(&kps(&[[1.0, 0.0], [-1.0, 0.0]]), &kps(&[[0.0, 2.0], [0.0, -2.0]]), c).unwrap();
        assert!(two.constrained);
        assert!(two.residual < 1e-20);
        assert_abs_diff_eq!(two.matrix[0][1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(two.matrix[1][0], -2.0, epsilon = 1e-12);
        let line = fit_linear(
            &kps(&[[1.0, 1.0], [2.0, 2.0], [-1.0, -1.0]]),
            &kps(&[[1.0, -1.0], [2.0, -2.0], [-1.0, 1.0]]),
            c,
        )
        .unwrap();
        assert!(line.constrained);
        assert!(det(&line.matrix).abs() > 0.0);
    }

    #[test]
    fn warp_identity_and_integer_shift() {
        let hm = diffused(g(16, 12), &[(5, 4, 2.0), (9, 8, 1.0)], 0.7);
        let c = hm.grid.center();
        assert_eq!(warp_heatmap(&hm, &AlignTransform::identity(c)).unwrap().values, hm.values);
        let mut shift = AlignTransform::identity(c);
        shift.pre_shift = [2.0, -1.0];
        let w = warp_heatmap(&hm, &shift).unwrap();
        for r in 0..12 {
            for col in 0..16 {
                let expect = if col >= 2 && r + 1 < 12 { hm.at(col - 2, r + 1) } else { 0.0 };
                assert_eq!(w.at(col, r), expect);
            }
        }
    }

    #[test]
    fn warp_values_stay_within_source_range() {
        let hm = diffused(g(20, 20), &[(6, 6, 2.0), (13, 9, 1.0)], 0.5);
        let xf = AlignTransform {
            center: hm.grid.center(),
            pre_shift: [0.7, -1.3],
            pre_scale: 1.4,
            linear: [[0.9, 0.4], [-0.2, 1.1]],
        };
        let w = warp_heatmap(&hm, &xf).unwrap();
        assert!(w.values.iter().all(|&v| v >= 0.0 && v <= hm.max() + 1e-15));
    }

    #[test]
    fn rotation_round_trip() {
        let hm = diffused(g(41, 41), &[(17, 20, 2.0), (24, 22, 1.0)], 0.4);
        let c = hm.grid.center();
        let theta = 0.7;
        let fwd = AlignTransform {
            linear: rot(theta),
            ..AlignTransform::identity(c)
        };
        let back = AlignTransform {
            linear: rot(-theta),
            ..AlignTransform::identity(c)
        };
        let round = warp_heatmap(&warp_heatmap(&hm, &fwd).unwrap(), &back).unwrap();
        let l1: f64 = round.values.iter().zip(&hm.values).map(|(a, b)| (a - b).abs()).sum();
        assert!(l1 / hm.values.len() as f64 <= 0.02 * hm.max());
    }

    #[test]
    fn singular_transform_is_rejected() {
        let hm = diffused(g(8, 8), &[(3, 3, 1.0)], 1.0);
        let xf = AlignTransform {
            linear: [[1.0, 2.0], [2.0, 4.0]],
            ..AlignTransform::identity(hm.grid.center())
        };
        assert!(matches!(warp_heatmap(&hm, &xf), Err(HmbError::NonInvertibleAlignment)));
    }

    #[test]
    fn self_alignment_is_near_identity() {
        let hm = diffused(g(40, 30), &[(10, 10, 3.0), (25, 12, 2.0), (18, 22, 1.0)], 1.0);
        let cfg = AlignConfig::default();
        let (warped, own, xf) = self_normalize(&hm, &cfg).unwrap();
        let a = align(&hm, &own, &cfg).unwrap();
        assert_mat_eq(&a.transform.linear, &IDENTITY, 1e-6);
        assert!(a.residual < 1e-12);
        assert_eq!(a.transform.pre_shift, xf.pre_shift);
        let l1: f64 = a.aligned.values.iter().zip(&warped.values).map(|(x, y)| (x - y).abs()).sum();
        assert!(l1 < 1e-9);
        // the hottest peak lands on its normalized location
        let p = xf.apply(key_points(&hm, &cfg).unwrap().points[0]);
        assert_abs_diff_eq!(p[0], own.points[0][0], epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], own.points[0][1], epsilon = 1e-12);
        assert_abs_diff_eq!(xf.invert_point(p).unwrap()[0], 10.0, epsilon = 1e-9);
    }

    #[test]
    fn transformed_copy_residual_drops() {
        let cfg = AlignConfig::default();
        let grid = g(48, 48);
        let base = diffused(grid, &[(15, 20, 3.0), (30, 18, 2.0), (22, 32, 1.0)], 1.0);
        let (_, target, _) = self_normalize(&base, &cfg).unwrap();
        // same layout rotated by 90 degrees and shrunk about the grid center
        let copy = diffused(grid, &[(27, 16, 3.0), (26, 25, 2.0), (19, 20, 1.0)], 1.0);
        let a = align(&copy, &target, &cfg).unwrap();
        assert!(a.residual * 10.0 <= a.residual_before, "{} vs {}", a.residual, a.residual_before);
    }

    #[test]
    fn truncation_uses_common_peaks_only() {
        let cfg = AlignConfig::default();
        let grid = g(48, 48);
        let three = diffused(grid, &[(12, 12, 3.0), (34, 14, 2.0), (20, 36, 1.0)], 2.0);
        let two = diffused(grid, &[(14, 20, 3.0), (33, 28, 2.0)], 2.0);
        let (_, target, _) = self_normalize(&two, &cfg).unwrap();
        assert_eq!(target.len(), 2);
        let al = Aligner::new(&three, &cfg).unwrap();
        assert_eq!(al.keypoints().len(), 3);
        let (full, fit) = al.fit(&target).unwrap();
        assert_eq!(fit.count, 2);
        let cut = KeyPointSet::new(three_peaks_truncated(&three, &cfg), vec![3.0, 2.0]);
        let (n, _) = normalize_keypoints(&cut, &grid, target_radius(&grid, &cfg)).unwrap();
        let direct = fit_linear(&n, &target, grid.center()).unwrap();
        assert_mat_eq(&full.linear, &direct.matrix, 1e-12);
    }

    fn three_peaks_truncated(hm: &HeatMap, cfg: &AlignConfig) -> Vec<Point> {
        extract_peaks(hm, cfg).unwrap().points[..2].to_vec()
    }
}
