//! File formats: trajectory records, clip manifests, motion-magnitude grids
//! and heat-map exports.
//!
//! Trajectory files are CSV with the header `clip_id,object_id,frame,x,y`.
//! Manifests are CSV with `clip_id,label`. Motion grid files look like
//!
//! ```text
//! grid 64 48
//! frame 12
//! <48 lines of 64 magnitudes>
//! frame 13
//! ...
//! ```

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::HeatMap;
use crate::error::{HmbError, Result};
use crate::grid::{DwellInterval, GridSpec, HeatSourceField, TrackPoint, Trajectory};
use crate::params::{Coefficient, HeatParams};
use crate::pipeline::{Clip, Dataset, LabeledClip};

pub const TRAJECTORY_FILE: &str = "trajectories.csv";
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub clip_id: String,
    pub object_id: String,
    pub frame: i64,
    pub x: f64,
    pub y: f64,
}

fn csv_line(e: &csv::Error) -> u64 {
    e.position().map(|p| p.line()).unwrap_or(0)
}

type ObjectPoints = (String, Vec<TrackPoint>);

/// Parses trajectory records, grouping them by clip and then object in
/// order of first appearance.
pub fn read_trajectories<R: Read>(reader: R, grid: Option<&GridSpec>) -> Result<Vec<Clip>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut clips: Vec<(String, Vec<ObjectPoints>)> = Vec::new();
    let mut clip_index: HashMap<String, usize> = HashMap::new();
    let mut object_index: HashMap<(usize, String), usize> = HashMap::new();
    let mut any = false;
    let headers = rdr
        .headers()
        .map_err(|e| HmbError::Parse {
            line: csv_line(&e),
            message: e.to_string(),
        })?
        .clone();
    for row in rdr.records() {
        let record = row.map_err(|e| HmbError::Parse {
            line: csv_line(&e),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let rec: TrajectoryRecord = record.deserialize(Some(&headers)).map_err(|e| HmbError::Parse {
            line,
            message: e.to_string(),
        })?;
        any = true;
        if !rec.x.is_finite() || !rec.y.is_finite() {
            return Err(HmbError::Parse {
                line,
                message: "non-finite coordinate".into(),
            });
        }
        if let Some(g) = grid {
            if !g.contains_pixel(rec.x, rec.y) {
                return Err(HmbError::Parse {
                    line,
                    message: format!(
                        "point ({}, {}) outside the {}x{} scene",
                        rec.x, rec.y, g.scene_width, g.scene_height
                    ),
                });
            }
        }
        let ci = *clip_index.entry(rec.clip_id.clone()).or_insert_with(|| {
            clips.push((rec.clip_id.clone(), Vec::new()));
            clips.len() - 1
        });
        let objects = &mut clips[ci].1;
        let oi = *object_index.entry((ci, rec.object_id.clone())).or_insert_with(|| {
            objects.push((rec.object_id.clone(), Vec::new()));
            objects.len() - 1
        });
        let pts = &mut objects[oi].1;
        if let Some(last) = pts.last() {
            if rec.frame <= last.frame {
                return Err(HmbError::Parse {
                    line,
                    message: format!(
                        "frame {} of object {:?} does not follow frame {}",
                        rec.frame, rec.object_id, last.frame
                    ),
                });
            }
        }
        pts.push(TrackPoint::new(rec.frame, rec.x, rec.y));
    }
    if !any {
        return Err(HmbError::NoRecords);
    }
    clips
        .into_iter()
        .map(|(clip_id, objects)| {
            let trajectories = objects
                .into_iter()
                .map(|(id, pts)| Trajectory::new(id, pts))
                .collect::<Result<_>>()?;
            Ok(Clip { clip_id, trajectories })
        })
        .collect()
}

pub fn ingest_trajectories(path: impl AsRef<Path>, grid: Option<&GridSpec>) -> Result<Vec<Clip>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| HmbError::io(path, e))?;
    read_trajectories(BufReader::new(f), grid)
}

fn csv_io(e: csv::Error) -> HmbError {
    HmbError::io(PathBuf::new(), std::io::Error::other(e))
}

pub fn write_trajectories<W: Write>(writer: W, clips: &[Clip]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for clip in clips {
        for t in &clip.trajectories {
            for p in t.points() {
                w.serialize(TrajectoryRecord {
                    clip_id: clip.clip_id.clone(),
                    object_id: t.object_id.clone(),
                    frame: p.frame,
                    x: p.x,
                    y: p.y,
                })
                .map_err(csv_io)?;
            }
        }
    }
    w.flush().map_err(|e| HmbError::io(PathBuf::new(), e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub label: String,
}

pub fn read_manifest<R: Read>(reader: R) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let entries = rdr
        .deserialize::<ManifestEntry>()
        .map(|r| {
            r.map_err(|e| HmbError::Parse {
                line: csv_line(&e),
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if entries.is_empty() {
        return Err(HmbError::NoRecords);
    }
    Ok(entries)
}

pub fn write_manifest<W: Write>(writer: W, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for e in entries {
        w.serialize(e).map_err(csv_io)?;
    }
    w.flush().map_err(|e| HmbError::io(PathBuf::new(), e))
}

/// Writes `trajectories.csv` and `manifest.csv` into `dir`.
pub fn save_dataset(dir: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| HmbError::io(dir, e))?;
    let tpath = dir.join(TRAJECTORY_FILE);
    let f = File::create(&tpath).map_err(|e| HmbError::io(&tpath, e))?;
    let clips: Vec<Clip> = ds.clips.iter().map(|c| c.clip.clone()).collect();
    write_trajectories(BufWriter::new(f), &clips)?;
    let mpath = dir.join(MANIFEST_FILE);
    let f = File::create(&mpath).map_err(|e| HmbError::io(&mpath, e))?;
    let entries: Vec<ManifestEntry> = ds
        .clips
        .iter()
        .map(|c| ManifestEntry {
            clip_id: c.clip.clip_id.clone(),
            label: c.label.clone(),
        })
        .collect();
    write_manifest(BufWriter::new(f), &entries)
}

/// Reads a dataset directory written by [`save_dataset`]. Clips follow
/// manifest order; clips missing from the manifest are an error.
pub fn load_dataset(dir: impl AsRef<Path>, grid: &GridSpec) -> Result<Dataset> {
    let dir = dir.as_ref();
    let clips = ingest_trajectories(dir.join(TRAJECTORY_FILE), Some(grid))?;
    let mpath = dir.join(MANIFEST_FILE);
    let f = File::open(&mpath).map_err(|e| HmbError::io(&mpath, e))?;
    let manifest = read_manifest(BufReader::new(f))?;
    let mut by_id: HashMap<String, Clip> = clips.into_iter().map(|c| (c.clip_id.clone(), c)).collect();
    let mut out = Vec::with_capacity(manifest.len());
    for m in manifest {
        let clip = by_id.remove(&m.clip_id).ok_or_else(|| HmbError::Parse {
            line: 0,
            message: format!("manifest clip {:?} has no trajectories", m.clip_id),
        })?;
        out.push(LabeledClip { clip, label: m.label });
    }
    if let Some(id) = by_id.keys().next() {
        return Err(HmbError::Parse {
            line: 0,
            message: format!("clip {id:?} is missing from the manifest"),
        });
    }
    Ok(Dataset { grid: *grid, clips: out })
}

/// Per-frame motion magnitudes on the patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionGridSequence {
    pub grid: GridSpec,
    pub frames: Vec<(i64, Vec<f64>)>,
    /// Magnitude at or above which a patch counts as moving.
    pub threshold: f64,
}

impl MotionGridSequence {
    pub fn new(grid: GridSpec, frames: Vec<(i64, Vec<f64>)>, threshold: Option<f64>) -> Result<Self> {
        for w in frames.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(HmbError::NonMonotoneFrames {
                    prev: w[0].0,
                    next: w[1].0,
                });
            }
        }
        for (f, m) in &frames {
            if m.len() != grid.len() {
                return Err(HmbError::GridMismatch);
            }
            if m.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(HmbError::InvalidParameter(format!(
                    "frame {f}: magnitudes must be finite and non-negative"
                )));
            }
        }
        let threshold = match threshold {
            Some(t) => t,
            None => otsu_threshold(frames.iter().flat_map(|(_, m)| m.iter().copied())),
        };
        Ok(MotionGridSequence { grid, frames, threshold })
    }

    /// Frames with `start <= frame <= end`, same threshold.
    pub fn window(&self, start: i64, end: i64) -> MotionGridSequence {
        MotionGridSequence {
            grid: self.grid,
            frames: self
                .frames
                .iter()
                .filter(|(f, _)| *f >= start && *f <= end)
                .cloned()
                .collect(),
            threshold: self.threshold,
        }
    }

    /// Maximal runs of above-threshold frames per patch.
    pub fn dwell_intervals(&self) -> Vec<DwellInterval> {
        let mut out = Vec::new();
        for patch in 0..self.grid.len() {
            let mut run: Option<(i64, i64)> = None;
            for (frame, mags) in &self.frames {
                if mags[patch] >= self.threshold {
                    run = Some(match run {
                        Some((s, _)) => (s, *frame),
                        None => (*frame, *frame),
                    });
                } else if let Some((s, e)) = run.take() {
                    out.push(DwellInterval {
                        patch,
                        trajectory: 0,
                        t_enter: s,
                        t_leave: e,
                    });
                }
            }
            if let Some((s, e)) = run {
                out.push(DwellInterval {
                    patch,
                    trajectory: 0,
                    t_enter: s,
                    t_leave: e,
                });
            }
        }
        out
    }
}

/// Otsu split of a magnitude histogram (256 bins over the observed range).
pub fn otsu_threshold(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return 0.0;
    }
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return lo;
    }
    const BINS: usize = 256;
    let width = (hi - lo) / BINS as f64;
    let mut hist = [0usize; BINS];
    for x in &v {
        let b = (((x - lo) / width) as usize).min(BINS - 1);
        hist[b] += 1;
    }
    let total = v.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_var) = (0usize, -1.0);
    for (i, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += i as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (m0 - m1).powi(2);
        if var > best_var {
            best_var = var;
            best = i;
        }
    }
    lo + (best + 1) as f64 * width
}

/// Heat-source field whose dwell intervals are runs of moving patches.
pub fn motion_grid_to_heat_sources(
    seq: &MotionGridSequence,
    t_cur: i64,
    params: &HeatParams,
) -> Result<HeatSourceField> {
    if seq.frames.is_empty() {
        return Err(HmbError::NoHeatSources);
    }
    let intervals = seq.dwell_intervals();
    if intervals.is_empty() {
        return Err(HmbError::NoHeatSources);
    }
    HeatSourceField::from_intervals(seq.grid, &intervals, t_cur, params)
}

/// Parses a motion grid file. The `grid` header must match `grid`.
pub fn read_motion_grids<R: Read>(reader: R, grid: &GridSpec, threshold: Option<f64>) -> Result<MotionGridSequence> {
    let mut lines = BufReader::new(reader)
        .lines()
        .enumerate()
        .map(|(i, l)| (i as u64 + 1, l))
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty() && !s.trim_start().starts_with('#')));
    let parse_err = |line: u64, message: String| HmbError::Parse { line, message };
    let mut next = || -> Result<Option<(u64, String)>> {
        match lines.next() {
            None => Ok(None),
            Some((n, Ok(s))) => Ok(Some((n, s))),
            Some((_, Err(e))) => Err(HmbError::io(PathBuf::new(), e)),
        }
    };
    let (n, header) = next()?.ok_or(HmbError::NoRecords)?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    let (cols, rows) = match dims.as_slice() {
        ["grid", c, r] => (
            c.parse::<usize>().map_err(|e| parse_err(n, e.to_string()))?,
            r.parse::<usize>().map_err(|e| parse_err(n, e.to_string()))?,
        ),
        _ => return Err(parse_err(n, "expected `grid <cols> <rows>`".into())),
    };
    if cols != grid.cols() || rows != grid.rows() {
        return Err(HmbError::GridMismatch);
    }
    let mut frames = Vec::new();
    while let Some((n, line)) = next()? {
        let frame = match line.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["frame", f] => f.parse::<i64>().map_err(|e| parse_err(n, e.to_string()))?,
            _ => return Err(parse_err(n, "expected `frame <number>`".into())),
        };
        let mut mags = Vec::with_capacity(cols * rows);
        for _ in 0..rows {
            let (n, line) = next()?.ok_or_else(|| parse_err(n, format!("frame {frame} is incomplete")))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| parse_err(n, e.to_string())))
                .collect::<Result<_>>()?;
            if row.len() != cols {
                return Err(parse_err(n, format!("expected {cols} values, found {}", row.len())));
            }
            mags.extend(row);
        }
        if let Some((prev, _)) = frames.last() {
            if frame <= *prev {
                return Err(parse_err(n, format!("frame {frame} does not follow frame {prev}")));
            }
        }
        frames.push((frame, mags));
    }
    if frames.is_empty() {
        return Err(HmbError::NoRecords);
    }
    MotionGridSequence::new(*grid, frames, threshold)
}

pub fn write_motion_grids<W: Write>(mut w: W, seq: &MotionGridSequence) -> std::io::Result<()> {
    let (cols, rows) = (seq.grid.cols(), seq.grid.rows());
    writeln!(w, "grid {cols} {rows}")?;
    for (frame, mags) in &seq.frames {
        writeln!(w, "frame {frame}")?;
        for r in 0..rows {
            let row: Vec<String> = mags[r * cols..(r + 1) * cols].iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
    }
    Ok(())
}

/// Sidecar describing an exported heat-map matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatMapMeta {
    pub clip_id: String,
    pub cols: usize,
    pub rows: usize,
    pub scene_width: u32,
    pub scene_height: u32,
    pub patch_size: u32,
    pub k_t: Coefficient,
    pub k_p: Coefficient,
    pub c: f64,
    pub inclusive_dwell: bool,
}

/// Sidecar path for a matrix file: `x.txt` -> `x.meta.json`.
pub fn sidecar_path(matrix: &Path) -> PathBuf {
    matrix.with_extension("meta.json")
}

/// Writes the surface as a plain-text matrix (one grid row per line) plus a
/// JSON sidecar.
pub fn export_heatmap(hm: &HeatMap, matrix: impl AsRef<Path>) -> Result<()> {
    let matrix = matrix.as_ref();
    let f = File::create(matrix).map_err(|e| HmbError::io(matrix, e))?;
    let mut w = BufWriter::new(f);
    let cols = hm.cols();
    for row in hm.values.chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(" ")).map_err(|e| HmbError::io(matrix, e))?;
    }
    w.flush().map_err(|e| HmbError::io(matrix, e))?;
    let meta = HeatMapMeta {
        clip_id: hm.clip_id.clone(),
        cols,
        rows: hm.rows(),
        scene_width: hm.grid.scene_width,
        scene_height: hm.grid.scene_height,
        patch_size: hm.grid.patch_size,
        k_t: hm.params.k_t,
        k_p: hm.params.k_p,
        c: hm.params.c,
        inclusive_dwell: hm.params.inclusive_dwell,
    };
    let side = sidecar_path(matrix);
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    fs::write(&side, json).map_err(|e| HmbError::io(&side, e))
}

/// Reads a matrix and its sidecar back into a heat map.
pub fn import_heatmap(matrix: impl AsRef<Path>) -> Result<HeatMap> {
    let matrix = matrix.as_ref();
    let side = sidecar_path(matrix);
    let meta: HeatMapMeta = serde_json::from_str(&fs::read_to_string(&side).map_err(|e| HmbError::io(&side, e))?)
        .map_err(|e| HmbError::Parse {
            line: e.line() as u64,
            message: e.to_string(),
        })?;
    let text = fs::read_to_string(matrix).map_err(|e| HmbError::io(matrix, e))?;
    let mut values = Vec::with_capacity(meta.cols * meta.rows);
    for (i, line) in text.lines().enumerate() {
        for t in line.split_whitespace() {
            values.push(t.parse::<f64>().map_err(|e| HmbError::Parse {
                line: i as u64 + 1,
                message: e.to_string(),
            })?);
        }
    }
    let grid = GridSpec::new(meta.scene_width, meta.scene_height, meta.patch_size)?;
    if grid.cols() != meta.cols || grid.rows() != meta.rows {
        return Err(HmbError::GridMismatch);
    }
    HeatMap::new(
        grid,
        values,
        HeatParams {
            k_t: meta.k_t,
            k_p: meta.k_p,
            c: meta.c,
            inclusive_dwell: meta.inclusive_dwell,
        },
        meta.clip_id,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(100, 60, 10).unwrap()
    }

    #[test]
    fn two_object_clip() {
        let text = "clip_id,object_id,frame,x,y\nc1,a,0,1.5,2\nc1,b,0,50,30\nc1,a,1,2.5,2\nc1,b,1,51,30\n";
        let clips = read_trajectories(text.as_bytes(), Some(&grid())).unwrap();
        assert_eq!(clips.len(), 1);
        assert_eq!(clips[0].trajectories.len(), 2);
        assert_eq!(clips[0].trajectories[0].points()[1].x, 2.5);
    }

    #[test]
    fn frame_regression_names_line() {
        let text = "clip_id,object_id,frame,x,y\nc1,a,0,1,2\nc1,a,5,1,2\nc1,a,3,1,2\n";
        match read_trajectories(text.as_bytes(), None) {
            Err(HmbError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_and_out_of_bounds_rows() {
        let text = "clip_id,object_id,frame,x,y\nc1,a,0,1,2\nc1,a,x,1,2\n";
        assert!(matches!(read_trajectories(text.as_bytes(), None), Err(HmbError::Parse { line: 3, .. })));
        let text = "clip_id,object_id,frame,x,y\nc1,a,0,1,2\nc1,a,1,101,2\n";
        match read_trajectories(text.as_bytes(), Some(&grid())) {
            Err(HmbError::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("outside"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file() {
        assert!(matches!(read_trajectories("".as_bytes(), None), Err(HmbError::NoRecords)));
        assert!(matches!(
            read_trajectories("clip_id,object_id,frame,x,y\n".as_bytes(), None),
            Err(HmbError::NoRecords)
        ));
    }

    #[test]
    fn otsu_splits_bimodal() {
        let mut v = vec![0.1; 100];
        v.extend(vec![5.0; 20]);
        let t = otsu_threshold(v);
        assert!(t > 0.1 && t <= 5.0);
    }

    #[test]
    fn motion_grid_text_round_trip() {
        let g = grid();
        let mut frames = Vec::new();
        for f in 0..3 {
            let mut m = vec![0.0; g.len()];
            m[f as usize] = 2.5;
            frames.push((f + 10, m));
        }
        let seq = MotionGridSequence::new(g, frames, Some(1.0)).unwrap();
        let mut buf = Vec::new();
        write_motion_grids(&mut buf, &seq).unwrap();
        let back = read_motion_grids(buf.as_slice(), &g, Some(1.0)).unwrap();
        assert_eq!(back, seq);
        let other = GridSpec::new(200, 60, 10).unwrap();
        assert!(matches!(read_motion_grids(buf.as_slice(), &other, None), Err(HmbError::GridMismatch)));
    }

    #[test]
    fn motion_runs() {
        let g = grid();
        let n = g.len();
        // patch 0 always moving, patch 1 only in frames 1 and 3
        let frames: Vec<(i64, Vec<f64>)> = (0..5)
            .map(|f| {
                let mut m = vec![0.0; n];
                m[0] = 3.0;
                if f == 1 || f == 3 {
                    m[1] = 3.0;
                }
                (f, m)
            })
            .collect();
        let seq = MotionGridSequence::new(g, frames, Some(1.0)).unwrap();
        let iv = seq.dwell_intervals();
        assert_eq!(iv.len(), 3);
        assert_eq!((iv[0].patch, iv[0].t_enter, iv[0].t_leave), (0, 0, 4));
        assert_eq!((iv[1].t_enter, iv[1].t_leave), (1, 1));
        let quiet = MotionGridSequence::new(g, vec![(0, vec![0.0; n])], Some(1.0)).unwrap();
        assert!(matches!(
            motion_grid_to_heat_sources(&quiet, 0, &HeatParams::default()),
            Err(HmbError::NoHeatSources)
        ));
    }

    #[test]
    fn zero_threshold_makes_every_patch_a_source() {
        let g = grid();
        let frames: Vec<(i64, Vec<f64>)> = (0..4).map(|f| (f, vec![0.5; g.len()])).collect();
        let seq = MotionGridSequence::new(g, frames, Some(0.0)).unwrap();
        let f = motion_grid_to_heat_sources(&seq, 3, &HeatParams::default()).unwrap();
        assert_eq!(f.sources().len(), g.len());
        assert!(f.energies.windows(2).all(|w| w[0] == w[1]));
    }
}
