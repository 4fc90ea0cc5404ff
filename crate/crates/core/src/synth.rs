//! Synthetic labeled multi-object clips.
//!
//! Meeting-style activities (gather, separate, wait, leave, exchange,
//! return and the pair sub-activities) place every actor at an anchor near a
//! common meeting point. A moving actor's distance from its anchor follows
//! the phase plan: approach shrinks it to zero, depart grows it, stay holds
//! it. Walking activities (together, follow) move a formation or a leader
//! along a gently curving path. Positions are sampled once per frame with
//! optional Gaussian jitter.
//!
//! The predicates in this module are the contract for each label; generator
//! internals may change as long as every clip passes its predicate.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{HmbError, Result};
use crate::grid::{GridSpec, TrackPoint, Trajectory};
use crate::pipeline::{Clip, Dataset, LabeledClip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActivityKind {
    Gather,
    Follow,
    Wait,
    Separate,
    Leave,
    Together,
    Exchange,
    Return,
    /// Pair sub-activity: two people walking toward each other.
    PairApproach,
    /// Pair sub-activity: two people standing together.
    PairStay,
    /// Pair sub-activity: two people walking apart.
    PairSeparate,
}

impl ActivityKind {
    pub const GROUP: [ActivityKind; 6] = [
        ActivityKind::Gather,
        ActivityKind::Follow,
        ActivityKind::Wait,
        ActivityKind::Separate,
        ActivityKind::Leave,
        ActivityKind::Together,
    ];
    pub const COMPLEX: [ActivityKind; 2] = [ActivityKind::Exchange, ActivityKind::Return];
    pub const SUB_ACTIVITIES: [ActivityKind; 3] =
        [ActivityKind::PairApproach, ActivityKind::PairStay, ActivityKind::PairSeparate];

    pub fn label(&self) -> &'static str {
        match self {
            ActivityKind::Gather => "Gather",
            ActivityKind::Follow => "Follow",
            ActivityKind::Wait => "Wait",
            ActivityKind::Separate => "Separate",
            ActivityKind::Leave => "Leave",
            ActivityKind::Together => "Together",
            ActivityKind::Exchange => "Exchange",
            ActivityKind::Return => "Return",
            ActivityKind::PairApproach => "Approach",
            ActivityKind::PairStay => "Stay",
            ActivityKind::PairSeparate => "Separate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseKind {
    Approach,
    Depart,
    Stay,
    Parallel,
    FollowOffset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub kind: PhaseKind,
    /// Inclusive frame-count range.
    pub frames: (u32, u32),
}

impl Phase {
    pub const fn new(kind: PhaseKind, min: u32, max: u32) -> Self {
        Phase { kind, frames: (min, max) }
    }
}

/// Frames per pair sub-activity clip; a sliding window of this many frames
/// matches their time scale.
pub const SUB_CLIP_FRAMES: u32 = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityTemplate {
    pub name: String,
    pub kind: ActivityKind,
    pub actors: (usize, usize),
    pub phases: Vec<Phase>,
    /// Pixels per frame.
    pub speed: (f64, f64),
    #[serde(default)]
    pub crop: Option<Crop>,
}

/// Keep only a random excerpt of `frames` frames containing at least
/// `min_focus` frames of phase `focus`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crop {
    pub frames: u32,
    pub focus: usize,
    pub min_focus: u32,
}

impl Crop {
    /// A sub-activity excerpt whose majority of frames lie in `focus`.
    pub fn dominant(focus: usize) -> Self {
        Crop {
            frames: SUB_CLIP_FRAMES,
            focus,
            min_focus: SUB_CLIP_FRAMES / 2 + 1,
        }
    }
}

impl ActivityTemplate {
    pub fn builtin(kind: ActivityKind) -> Self {
        use PhaseKind::*;
        let (actors, phases): ((usize, usize), Vec<Phase>) = match kind {
            ActivityKind::Gather => ((2, 5), vec![Phase::new(Approach, 12, 20), Phase::new(Stay, 4, 10)]),
            ActivityKind::Separate => ((2, 5), vec![Phase::new(Stay, 4, 10), Phase::new(Depart, 12, 20)]),
            ActivityKind::Wait => ((2, 3), vec![Phase::new(Approach, 12, 20), Phase::new(Stay, 4, 10)]),
            ActivityKind::Leave => ((2, 3), vec![Phase::new(Stay, 4, 10), Phase::new(Depart, 12, 20)]),
            ActivityKind::Together => ((2, 4), vec![Phase::new(Parallel, 20, 30)]),
            ActivityKind::Follow => ((2, 3), vec![Phase::new(FollowOffset, 20, 30)]),
            ActivityKind::Exchange => (
                (2, 2),
                vec![Phase::new(Approach, 30, 45), Phase::new(Stay, 30, 45), Phase::new(Depart, 30, 45)],
            ),
            ActivityKind::Return => ((2, 2), vec![Phase::new(Depart, 30, 45), Phase::new(Approach, 30, 45)]),
            ActivityKind::PairApproach => (
                (2, 2),
                vec![Phase::new(Approach, SUB_CLIP_FRAMES, 2 * SUB_CLIP_FRAMES), Phase::new(Stay, 15, 30)],
            ),
            ActivityKind::PairStay => (
                (2, 2),
                vec![
                    Phase::new(Approach, 15, 30),
                    Phase::new(Stay, SUB_CLIP_FRAMES, 2 * SUB_CLIP_FRAMES),
                    Phase::new(Depart, 15, 30),
                ],
            ),
            ActivityKind::PairSeparate => (
                (2, 2),
                vec![Phase::new(Stay, 15, 30), Phase::new(Depart, SUB_CLIP_FRAMES, 2 * SUB_CLIP_FRAMES)],
            ),
        };
        // sub-activities are random excerpts dominated by the labeled phase,
        // as a sliding window over a longer interaction would see them
        let crop = match kind {
            ActivityKind::PairApproach => Some(Crop::dominant(0)),
            ActivityKind::PairStay | ActivityKind::PairSeparate => Some(Crop::dominant(1)),
            _ => None,
        };
        // pair interactions are long, so they walk slower to stay in the scene
        let speed = if actors == (2, 2) { (2.0, 4.0) } else { (4.0, 8.0) };
        ActivityTemplate {
            name: kind.label().to_string(),
            kind,
            actors,
            phases,
            speed,
            crop,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HmbError::InfeasibleTemplate(format!("{}: {m}", self.name)));
        if self.phases.is_empty() {
            return bad("no phases");
        }
        if self.phases.iter().any(|p| p.frames.0 == 0 || p.frames.0 > p.frames.1) {
            return bad("phase durations must be positive ranges");
        }
        if self.actors.0 < 1 || self.actors.0 > self.actors.1 {
            return bad("invalid actor count range");
        }
        if !(self.speed.0 > 0.0 && self.speed.0 <= self.speed.1) {
            return bad("invalid speed range");
        }
        if let Some(c) = self.crop {
            let shortest = 1 + self.phases.iter().map(|p| p.frames.0).sum::<u32>();
            if c.frames < 2 || c.frames > shortest {
                return bad("crop must keep 2 frames and fit the shortest plan");
            }
            match self.phases.get(c.focus) {
                Some(p) if p.frames.0 >= c.min_focus && c.min_focus <= c.frames => {}
                _ => return bad("crop focus phase cannot supply the required frames"),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub grid: GridSpec,
    /// Per-axis standard deviation of per-frame position jitter, pixels.
    pub jitter: f64,
}

pub const DEFAULT_JITTER: f64 = 0.75;

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            grid: GridSpec {
                scene_width: 640,
                scene_height: 480,
                patch_size: 10,
            },
            jitter: DEFAULT_JITTER,
        }
    }
}

/// SplitMix64 finalizer; derives independent stream seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

type Path2 = Vec<[f64; 2]>;

fn sample_len(rng: &mut ChaCha8Rng, (lo, hi): (u32, u32)) -> usize {
    rng.gen_range(lo..=hi) as usize
}

fn unit(a: f64) -> [f64; 2] {
    [a.cos(), a.sin()]
}

/// Distance of a moving actor from its anchor: the initial radius followed
/// by one value per phase frame.
fn radial_profile(phases: &[(PhaseKind, usize)], speed: f64) -> Vec<f64> {
    let mut r = match phases.first() {
        Some(&(PhaseKind::Approach, n)) => speed * n as f64,
        _ => 0.0,
    };
    let mut out = vec![r];
    for &(k, n) in phases {
        match k {
            PhaseKind::Approach => {
                let start = r;
                out.extend((1..=n).map(|i| start * (1.0 - i as f64 / n as f64)));
                r = 0.0;
            }
            PhaseKind::Depart => {
                for _ in 0..n {
                    r += speed;
                    out.push(r);
                }
            }
            _ => out.extend(std::iter::repeat_n(r, n)),
        }
    }
    out
}

/// Standing spots on a ring around the meeting point, with their angles.
fn anchor_offsets(rng: &mut ChaCha8Rng, n: usize) -> Vec<([f64; 2], f64)> {
    let base = rng.gen_range(0.0..TAU);
    let radius = rng.gen_range(15.0..25.0);
    (0..n)
        .map(|i| {
            let a = base + TAU * i as f64 / n as f64;
            let u = unit(a);
            ([u[0] * radius, u[1] * radius], a)
        })
        .collect()
}

/// Paths of a meeting-style activity and the sampled phase lengths.
fn meeting_paths(
    t: &ActivityTemplate,
    rng: &mut ChaCha8Rng,
    grid: &GridSpec,
) -> (Vec<Path2>, Vec<(PhaseKind, usize)>) {
    let n = rng.gen_range(t.actors.0..=t.actors.1);
    let phases: Vec<(PhaseKind, usize)> = t.phases.iter().map(|p| (p.kind, sample_len(rng, p.frames))).collect();
    let total: usize = 1 + phases.iter().map(|p| p.1).sum::<usize>();
    // Wait and Leave keep all but one actor in place
    let stationary = match t.kind {
        ActivityKind::Wait | ActivityKind::Leave => n - 1,
        _ => 0,
    };
    let anchors = anchor_offsets(rng, n);
    let meet = [
        rng.gen_range(0.3..0.7) * grid.scene_width as f64,
        rng.gen_range(0.3..0.7) * grid.scene_height as f64,
    ];
    let paths = anchors
        .iter()
        .enumerate()
        .map(|(i, &(off, angle))| {
            let anchor = [meet[0] + off[0], meet[1] + off[1]];
            if i < stationary {
                return vec![anchor; total];
            }
            let speed = rng.gen_range(t.speed.0..=t.speed.1);
            // movers arrive from / leave toward their own side of the ring
            let u = unit(angle + rng.gen_range(-0.3..0.3));
            radial_profile(&phases, speed)
                .into_iter()
                .map(|r| [anchor[0] + u[0] * r, anchor[1] + u[1] * r])
                .collect()
        })
        .collect();
    (paths, phases)
}

/// Start of an excerpt satisfying `crop`. Phase `k` covers samples
/// `(start_k, start_k + n_k]`; sample 0 is the initial position.
fn crop_start(rng: &mut ChaCha8Rng, phases: &[(PhaseKind, usize)], len: usize, crop: &Crop) -> usize {
    let keep = crop.frames as usize;
    let f0 = 1 + phases[..crop.focus].iter().map(|p| p.1).sum::<usize>();
    let f1 = f0 + phases[crop.focus].1;
    let valid: Vec<usize> = (0..=len - keep)
        .filter(|&s| {
            let (lo, hi) = (s.max(f0), (s + keep).min(f1));
            hi > lo && hi - lo >= crop.min_focus as usize
        })
        .collect();
    valid[rng.gen_range(0..valid.len())]
}

/// Curving path of `len` frames starting at `start` with initial heading
/// `heading`; also returns the heading at each frame.
fn curved_path(start: [f64; 2], heading: f64, turn: f64, speed: f64, len: usize) -> (Path2, Vec<f64>) {
    let mut p = start;
    let mut pts = Vec::with_capacity(len);
    let mut hs = Vec::with_capacity(len);
    for i in 0..len {
        let h = heading + turn * i as f64;
        pts.push(p);
        hs.push(h);
        p = [p[0] + speed * h.cos(), p[1] + speed * h.sin()];
    }
    (pts, hs)
}

fn walking_paths(t: &ActivityTemplate, rng: &mut ChaCha8Rng, grid: &GridSpec) -> Vec<Path2> {
    let n = rng.gen_range(t.actors.0..=t.actors.1);
    let len = sample_len(rng, t.phases[0].frames);
    let speed = rng.gen_range(t.speed.0..=t.speed.1);
    let heading = rng.gen_range(0.0..TAU);
    let turn = rng.gen_range(-0.03..0.03);
    // start so the path midpoint lands near the scene center
    let mid = [
        rng.gen_range(0.4..0.6) * grid.scene_width as f64,
        rng.gen_range(0.4..0.6) * grid.scene_height as f64,
    ];
    let half = speed * len as f64 / 2.0;
    let start = [mid[0] - half * heading.cos(), mid[1] - half * heading.sin()];
    match t.kind {
        ActivityKind::Follow => {
            let delay = rng.gen_range(5..=10usize);
            let leaders = n - 1;
            // leader path covers [-delay, len)
            let (lead, hs) = curved_path(
                [start[0] - speed * delay as f64 * heading.cos(), start[1] - speed * delay as f64 * heading.sin()],
                heading - turn * delay as f64,
                turn,
                speed,
                len + delay,
            );
            let side = rng.gen_range(20.0..30.0);
            let mut out: Vec<Path2> = Vec::new();
            for k in 0..leaders {
                let off = side * k as f64;
                out.push(
                    (delay..len + delay)
                        .map(|f| {
                            let nrm = unit(hs[f] + PI / 2.0);
                            [lead[f][0] + nrm[0] * off, lead[f][1] + nrm[1] * off]
                        })
                        .collect(),
                );
            }
            let shift = {
                let a = rng.gen_range(0.0..TAU);
                let m = rng.gen_range(2.0..5.0);
                [m * a.cos(), m * a.sin()]
            };
            out.push((0..len).map(|f| [lead[f][0] + shift[0], lead[f][1] + shift[1]]).collect());
            out
        }
        _ => {
            let (path, hs) = curved_path(start, heading, turn, speed, len);
            let gap = rng.gen_range(20.0..30.0);
            let stagger: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            (0..n)
                .map(|k| {
                    let lateral = gap * (k as f64 - (n as f64 - 1.0) / 2.0);
                    path.iter()
                        .zip(&hs)
                        .map(|(p, &h)| {
                            let fwd = unit(h);
                            let nrm = unit(h + PI / 2.0);
                            [
                                p[0] + nrm[0] * lateral + fwd[0] * stagger[k],
                                p[1] + nrm[1] * lateral + fwd[1] * stagger[k],
                            ]
                        })
                        .collect()
                })
                .collect()
        }
    }
}

fn to_trajectories(paths: &[Path2], jitter: f64, rng: &mut ChaCha8Rng, grid: &GridSpec) -> Option<Vec<Trajectory>> {
    let noise = Normal::new(0.0, jitter.max(0.0)).ok()?;
    let mut out = Vec::with_capacity(paths.len());
    for (i, path) in paths.iter().enumerate() {
        let mut pts = Vec::with_capacity(path.len());
        for (f, p) in path.iter().enumerate() {
            let (dx, dy) = if jitter > 0.0 {
                (noise.sample(rng), noise.sample(rng))
            } else {
                (0.0, 0.0)
            };
            let (x, y) = (p[0] + dx, p[1] + dy);
            let margin = 1.0;
            if x < margin
                || y < margin
                || x > grid.scene_width as f64 - margin
                || y > grid.scene_height as f64 - margin
            {
                return None;
            }
            pts.push(TrackPoint::new(f as i64, x, y));
        }
        out.push(Trajectory::new(format!("o{i}"), pts).ok()?);
    }
    Some(out)
}

/// Generates one clip, resampling placements that leave the scene.
pub fn generate_clip(template: &ActivityTemplate, cfg: &SynthConfig, seed: u64) -> Result<Vec<Trajectory>> {
    template.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..200 {
        let (mut paths, phases) = match template.kind {
            ActivityKind::Together | ActivityKind::Follow => (walking_paths(template, &mut rng, &cfg.grid), Vec::new()),
            _ => meeting_paths(template, &mut rng, &cfg.grid),
        };
        if let Some(crop) = &template.crop {
            if phases.is_empty() {
                return Err(HmbError::InfeasibleTemplate(format!("{}: crop needs a phase plan", template.name)));
            }
            let start = crop_start(&mut rng, &phases, paths[0].len(), crop);
            let keep = crop.frames as usize;
            for p in &mut paths {
                *p = p[start..start + keep].to_vec();
            }
        }
        if let Some(t) = to_trajectories(&paths, cfg.jitter, &mut rng, &cfg.grid) {
            return Ok(t);
        }
    }
    Err(HmbError::InfeasibleTemplate(format!(
        "{}: no placement fits a {}x{} scene",
        template.name, cfg.grid.scene_width, cfg.grid.scene_height
    )))
}

/// `count` clips of one template, each paired with the template label.
pub fn generate(
    template: &ActivityTemplate,
    cfg: &SynthConfig,
    seed: u64,
    count: usize,
) -> Result<Vec<(Vec<Trajectory>, String)>> {
    if count == 0 {
        return Err(HmbError::InvalidParameter("count must be at least 1".into()));
    }
    (0..count)
        .map(|i| Ok((generate_clip(template, cfg, mix_seed(seed, i as u64))?, template.name.clone())))
        .collect()
}

fn labeled(kind: ActivityKind, cfg: &SynthConfig, seed: u64, count: usize, prefix: &str) -> Result<Vec<LabeledClip>> {
    let template = ActivityTemplate::builtin(kind);
    let stream = mix_seed(seed, kind as u64 + 1);
    Ok(generate(&template, cfg, stream, count)?
        .into_iter()
        .enumerate()
        .map(|(i, (trajectories, label))| LabeledClip {
            clip: Clip {
                clip_id: format!("{prefix}{}-{i:03}", label.to_lowercase()),
                trajectories,
            },
            label,
        })
        .collect())
}

/// Clip counts per group activity in the builtin suite.
pub const GROUP_COUNTS: [usize; 6] = [33, 33, 34, 33, 33, 34];
/// Exchange and Return clips in the builtin suite.
pub const COMPLEX_COUNTS: [usize; 2] = [16, 16];

/// The six group activities, 200 clips.
pub fn builtin_activity_suite(seed: u64, cfg: &SynthConfig) -> Result<Dataset> {
    let mut clips = Vec::new();
    for (kind, &n) in ActivityKind::GROUP.iter().zip(&GROUP_COUNTS) {
        clips.extend(labeled(*kind, cfg, seed, n, "")?);
    }
    Ok(Dataset { grid: cfg.grid, clips })
}

/// Exchange and Return pair clips, 32 in total.
pub fn builtin_complex_suite(seed: u64, cfg: &SynthConfig) -> Result<Dataset> {
    let mut clips = Vec::new();
    for (kind, &n) in ActivityKind::COMPLEX.iter().zip(&COMPLEX_COUNTS) {
        clips.extend(labeled(*kind, cfg, seed, n, "")?);
    }
    Ok(Dataset { grid: cfg.grid, clips })
}

/// The full desk-scale benchmark: 200 group-activity clips plus 32
/// Exchange/Return clips.
pub fn builtin_suite(seed: u64) -> Result<Dataset> {
    builtin_suite_with(seed, &SynthConfig::default())
}

pub fn builtin_suite_with(seed: u64, cfg: &SynthConfig) -> Result<Dataset> {
    let mut ds = builtin_activity_suite(seed, cfg)?;
    ds.clips.extend(builtin_complex_suite(seed, cfg)?.clips);
    Ok(ds)
}

/// Short Approach / Stay / Separate pair clips for sliding-window models.
pub fn sub_activity_suite(seed: u64, per_label: usize, cfg: &SynthConfig) -> Result<Dataset> {
    let mut clips = Vec::new();
    for kind in ActivityKind::SUB_ACTIVITIES {
        clips.extend(labeled(kind, cfg, seed, per_label, "sub-")?);
    }
    Ok(Dataset { grid: cfg.grid, clips })
}

// ---------------------------------------------------------------------------
// label predicates

fn dist(a: &TrackPoint, b: &TrackPoint) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Distance series between two trajectories over their shared frames.
fn pair_distances(a: &Trajectory, b: &Trajectory) -> Vec<f64> {
    let mut out = Vec::new();
    let (pa, pb) = (a.points(), b.points());
    let (mut i, mut j) = (0, 0);
    while i < pa.len() && j < pb.len() {
        match pa[i].frame.cmp(&pb[j].frame) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(dist(&pa[i], &pb[j]));
                i += 1;
                j += 1;
            }
        }
    }
    out
}

fn pairs(trajs: &[Trajectory]) -> impl Iterator<Item = (&Trajectory, &Trajectory)> {
    trajs
        .iter()
        .enumerate()
        .flat_map(move |(i, a)| trajs[i + 1..].iter().map(move |b| (a, b)))
}

fn displacement(t: &Trajectory) -> f64 {
    let p0 = t.points()[0];
    t.points().iter().map(|p| dist(p, &p0)).fold(0.0, f64::max)
}

/// Mean of the first / last `k` samples, which absorbs jitter.
fn head_tail(d: &[f64], k: usize) -> (f64, f64) {
    let k = k.min(d.len()).max(1);
    let head = d[..k].iter().sum::<f64>() / k as f64;
    let tail = d[d.len() - k..].iter().sum::<f64>() / k as f64;
    (head, tail)
}

/// Checks that a clip satisfies the geometric definition of `kind`.
/// `patch` is the patch side in pixels.
pub fn satisfies(kind: ActivityKind, trajs: &[Trajectory], patch: f64) -> bool {
    if trajs.len() < 2 || trajs.iter().any(|t| t.points().len() < 2) {
        return false;
    }
    let all_pairs = || pairs(trajs).map(|(a, b)| pair_distances(a, b));
    match kind {
        ActivityKind::Gather => all_pairs().all(|d| {
            let (h, t) = head_tail(&d, 3);
            t < 0.5 * h
        }),
        ActivityKind::Separate => all_pairs().all(|d| {
            let (h, t) = head_tail(&d, 3);
            t > 2.0 * h
        }),
        ActivityKind::PairApproach => all_pairs().all(|d| {
            let (h, t) = head_tail(&d, 2);
            h - t > 2.0 * patch
        }),
        ActivityKind::PairSeparate => all_pairs().all(|d| {
            let (h, t) = head_tail(&d, 2);
            t - h > 2.0 * patch
        }),
        ActivityKind::Together => all_pairs().all(|d| {
            let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = d.iter().copied().fold(0.0, f64::max);
            hi - lo < patch
        }),
        ActivityKind::PairStay => {
            // most frame steps are spent standing
            let steps = trajs[0].points().len() - 1;
            let still = (0..steps)
                .filter(|&i| trajs.iter().all(|t| dist(&t.points()[i], &t.points()[i + 1]) < 0.15 * patch))
                .count();
            2 * still > steps
        }
        ActivityKind::Wait => trajs.iter().any(|w| {
            displacement(w) < patch
                && trajs.iter().any(|m| {
                    !std::ptr::eq(m, w) && {
                        let (h, t) = head_tail(&pair_distances(w, m), 3);
                        t < 0.5 * h
                    }
                })
        }),
        ActivityKind::Leave => trajs.iter().any(|s| {
            displacement(s) < patch
                && trajs.iter().any(|m| {
                    !std::ptr::eq(m, s) && {
                        let (h, t) = head_tail(&pair_distances(s, m), 3);
                        t > 2.0 * h && t - h > 3.0 * patch
                    }
                })
        }),
        ActivityKind::Follow => pairs(trajs).any(|(a, b)| follows(a, b, patch) || follows(b, a, patch)),
        ActivityKind::Exchange => all_pairs().all(|d| {
            let (h, t) = head_tail(&d, 3);
            let m = d.iter().copied().fold(f64::INFINITY, f64::min);
            m < 0.5 * h.min(t)
        }),
        ActivityKind::Return => all_pairs().all(|d| {
            let (h, t) = head_tail(&d, 3);
            let m = d.iter().copied().fold(0.0, f64::max);
            m > 2.0 * h.max(t)
        }),
    }
}

/// `follower` retraces `leader` with a constant delay and spatial offset.
fn follows(leader: &Trajectory, follower: &Trajectory, patch: f64) -> bool {
    let (l, f) = (leader.points(), follower.points());
    let n = l.len().min(f.len());
    for delay in 1..n / 2 {
        let diffs: Vec<[f64; 2]> = (delay..n).map(|i| [f[i].x - l[i - delay].x, f[i].y - l[i - delay].y]).collect();
        let m = diffs.len() as f64;
        let mean = diffs.iter().fold([0.0, 0.0], |a, d| [a[0] + d[0] / m, a[1] + d[1] / m]);
        let spread = diffs
            .iter()
            .map(|d| (d[0] - mean[0]).hypot(d[1] - mean[1]))
            .fold(0.0, f64::max);
        let moved = dist(&l[0], &l[n - 1]);
        if spread < 0.5 * patch && moved > 2.0 * patch {
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact() -> SynthConfig {
        SynthConfig {
            jitter: 0.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn radial_profiles() {
        let p = radial_profile(&[(PhaseKind::Approach, 4), (PhaseKind::Stay, 2)], 2.0);
        assert_eq!(p, vec![8.0, 6.0, 4.0, 2.0, 0.0, 0.0, 0.0]);
        let p = radial_profile(&[(PhaseKind::Stay, 2), (PhaseKind::Depart, 3)], 1.5);
        assert_eq!(p, vec![0.0, 0.0, 0.0, 1.5, 3.0, 4.5]);
        let p = radial_profile(&[(PhaseKind::Depart, 2), (PhaseKind::Approach, 2)], 1.0);
        assert_eq!(p, vec![0.0, 1.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn every_kind_passes_its_predicate_without_jitter() {
        let cfg = exact();
        let kinds = ActivityKind::GROUP
            .iter()
            .chain(&ActivityKind::COMPLEX)
            .chain(&ActivityKind::SUB_ACTIVITIES);
        for &kind in kinds {
            let t = ActivityTemplate::builtin(kind);
            for (clip, _) in generate(&t, &cfg, 11, 20).unwrap() {
                assert!(satisfies(kind, &clip, 10.0), "{kind:?} failed its predicate");
                assert!(clip.len() >= t.actors.0 && clip.len() <= t.actors.1);
            }
        }
    }

    #[test]
    fn gather_pair_closes_in() {
        let mut t = ActivityTemplate::builtin(ActivityKind::Gather);
        t.actors = (2, 2);
        let clip = generate_clip(&t, &exact(), 7).unwrap();
        let d = pair_distances(&clip[0], &clip[1]);
        assert!(d[d.len() - 1] < 0.5 * d[0]);
    }

    #[test]
    fn together_keeps_formation() {
        let mut t = ActivityTemplate::builtin(ActivityKind::Together);
        t.actors = (3, 3);
        let clip = generate_clip(&t, &exact(), 3).unwrap();
        for (a, b) in pairs(&clip) {
            let d = pair_distances(a, b);
            let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = d.iter().copied().fold(0.0, f64::max);
            assert!(hi - lo < 10.0);
        }
    }

    #[test]
    fn infeasible_template_errors() {
        let tiny = SynthConfig {
            grid: GridSpec::new(30, 30, 10).unwrap(),
            jitter: 0.0,
        };
        let t = ActivityTemplate::builtin(ActivityKind::Gather);
        assert!(matches!(generate_clip(&t, &tiny, 1), Err(HmbError::InfeasibleTemplate(_))));
        let mut bad = t.clone();
        bad.phases.clear();
        assert!(generate_clip(&bad, &exact(), 1).is_err());
    }

    #[test]
    fn seeds_are_reproducible() {
        let cfg = SynthConfig::default();
        let a = builtin_activity_suite(5, &cfg).unwrap();
        let b = builtin_activity_suite(5, &cfg).unwrap();
        let c = builtin_activity_suite(6, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for l in a.labels() {
            assert_eq!(a.count(&l), c.count(&l));
        }
    }
}
