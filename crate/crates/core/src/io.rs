//! File formats: line-delimited JSON event streams, ground-truth and config
//! documents.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simgen::GroundTruth;
use crate::types::{CameraId, EventStream, FeatureVector, Observation, PersonTrack, Point2};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireObservation {
    time: f64,
    position: Point2,
    feature: FeatureVector,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireTrack {
    camera: CameraId,
    label: Option<u64>,
    entry_time: f64,
    exit_time: f64,
    entry_point: Point2,
    exit_point: Point2,
    observations: Vec<WireObservation>,
}

impl From<&PersonTrack> for WireTrack {
    fn from(t: &PersonTrack) -> Self {
        Self {
            camera: t.camera,
            label: t.label,
            entry_time: t.entry_time(),
            exit_time: t.exit_time(),
            entry_point: t.entry_point,
            exit_point: t.exit_point,
            observations: t
                .observations()
                .iter()
                .map(|o| WireObservation {
                    time: o.time,
                    position: o.position,
                    feature: o.feature.clone(),
                })
                .collect(),
        }
    }
}

impl WireTrack {
    fn into_track(self) -> std::result::Result<PersonTrack, String> {
        let camera = self.camera;
        let observations = self
            .observations
            .into_iter()
            .map(|o| Observation {
                camera,
                time: o.time,
                position: o.position,
                feature: o.feature,
            })
            .collect();
        let track = PersonTrack::new(camera, self.label, observations, self.entry_point, self.exit_point)
            .map_err(|e| e.to_string())?;
        if (track.entry_time() - self.entry_time).abs() > 1e-9 {
            return Err(format!(
                "entry_time {} does not match first observation {}",
                self.entry_time,
                track.entry_time()
            ));
        }
        if (track.exit_time() - self.exit_time).abs() > 1e-9 {
            return Err(format!(
                "exit_time {} does not match last observation {}",
                self.exit_time,
                track.exit_time()
            ));
        }
        Ok(track)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serializes one track per line.
pub fn write_events(path: &Path, stream: &EventStream) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for t in stream.tracks() {
        serde_json::to_writer(&mut w, &WireTrack::from(t))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn events_to_string(stream: &EventStream) -> Result<String> {
    let mut out = String::new();
    for t in stream.tracks() {
        out.push_str(&serde_json::to_string(&WireTrack::from(t))?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses a JSONL event stream. Blank lines are ignored; any malformed or
/// invariant-violating track is reported with its 1-based line number.
pub fn read_events(path: &Path) -> Result<EventStream> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut tracks = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let wire: WireTrack = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        tracks.push(wire.into_track().map_err(parse_err)?);
    }
    Ok(EventStream::new(tracks))
}

/// Sibling ground-truth path for an events file: `x.jsonl` -> `x.gt.json`.
pub fn ground_truth_path(events: &Path) -> PathBuf {
    events.with_extension("gt.json")
}

pub fn export_events(stream: &EventStream, gt: Option<&GroundTruth>, path: &Path) -> Result<()> {
    write_events(path, stream)?;
    if let Some(gt) = gt {
        write_json(&ground_truth_path(path), gt)?;
    }
    Ok(())
}

/// Reads an events file and, if present, its sibling ground truth.
pub fn import_events(path: &Path) -> Result<(EventStream, Option<GroundTruth>)> {
    let stream = read_events(path)?;
    let gt_path = ground_truth_path(path);
    let gt = if gt_path.exists() {
        Some(read_json(&gt_path)?)
    } else {
        None
    };
    Ok((stream, gt))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        reason: e.to_string(),
    })
}
