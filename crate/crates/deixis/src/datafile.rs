//! Dataset file format: JSON Lines. The first line is a header carrying the
//! format version, the scene identity and the capture rate; every following
//! line is one referencing event with its frames as a 36x6x3 nested array
//! (feature order: finger tip, finger direction, eye position, eye
//! direction, head position, head orientation in degrees) plus a 36x6
//! availability matrix. Numeric fields round-trip losslessly.

use crate::error::{AppError, Result};
use crate::scenefile::parse_use_case;
use deixis_core::event::{
    Dataset, Frame, Hand, ReferencingEvent, UseCase, FEATURE_COUNT, FRAME_RATE_HZ,
};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    scene_ref: String,
    frame_rate_hz: u32,
    units: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EventRecord {
    subject_id: String,
    use_case: String,
    target_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pose_id: Option<u8>,
    hand: String,
    woz_index: usize,
    frames: Vec<Vec<[f64; 3]>>,
    availability: Vec<Vec<bool>>,
}

fn to_record(event: &ReferencingEvent) -> EventRecord {
    let frames = event
        .frames
        .iter()
        .map(|f| {
            deixis_core::event::FeatureId::ALL
                .iter()
                .map(|feat| f.feature(*feat))
                .collect()
        })
        .collect();
    let availability = event
        .frames
        .iter()
        .map(|f| {
            deixis_core::event::FeatureId::ALL
                .iter()
                .map(|feat| f.is_available(*feat))
                .collect()
        })
        .collect();
    EventRecord {
        subject_id: event.subject_id.clone(),
        use_case: event.use_case.as_str().to_string(),
        target_id: event.target_id.clone(),
        pose_id: event.pose_id,
        hand: event.hand.as_str().to_string(),
        woz_index: event.woz_index,
        frames,
        availability,
    }
}

fn from_record(record: EventRecord, path: &Path, line: usize) -> Result<ReferencingEvent> {
    let context = |msg: String| AppError::Parse {
        path: path.display().to_string(),
        location: format!(" (line {line}, event {})", record.subject_id),
        message: msg,
    };
    let use_case = parse_use_case(&record.use_case)
        .ok_or_else(|| context(format!("unknown use_case {:?}", record.use_case)))?;
    let hand = match record.hand.as_str() {
        "left" => Hand::Left,
        "right" => Hand::Right,
        other => return Err(context(format!("unknown hand {other:?}"))),
    };
    if record.frames.len() != deixis_core::event::EVENT_FRAMES {
        return Err(context(format!(
            "event holds {} frames, expected {}",
            record.frames.len(),
            deixis_core::event::EVENT_FRAMES
        )));
    }
    if record.availability.len() != record.frames.len() {
        return Err(context("availability matrix does not match frames".into()));
    }
    let mut frames = Vec::with_capacity(record.frames.len());
    for (t, (row, avail)) in record.frames.iter().zip(&record.availability).enumerate() {
        if row.len() != FEATURE_COUNT || avail.len() != FEATURE_COUNT {
            return Err(context(format!(
                "frame {t} does not hold {FEATURE_COUNT} features"
            )));
        }
        let mut frame = Frame::default();
        for (feature, (values, &available)) in deixis_core::event::FeatureId::ALL
            .iter()
            .zip(row.iter().zip(avail))
        {
            frame.set_feature(*feature, *values);
            frame.set_available(*feature, available);
        }
        frames.push(frame);
    }
    let event = ReferencingEvent {
        subject_id: record.subject_id.clone(),
        use_case,
        target_id: record.target_id,
        pose_id: record.pose_id,
        frames,
        woz_index: record.woz_index,
        hand,
    };
    event.validate().map_err(|e| context(e.to_string()))?;
    Ok(event)
}

pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        format_version: DATASET_FORMAT_VERSION,
        scene_ref: dataset.scene_ref.clone(),
        frame_rate_hz: FRAME_RATE_HZ,
        units: crate::scenefile::UNITS.to_string(),
        split: dataset.split.clone(),
    };
    let mut write_line = |value: String| -> Result<()> {
        w.write_all(value.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| AppError::io(path, e))
    };
    write_line(serde_json::to_string(&header).expect("header serializes"))?;
    for event in &dataset.events {
        write_line(serde_json::to_string(&to_record(event)).expect("record serializes"))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| AppError::parse(path, "empty dataset file"))?;
    let header_line = header_line.map_err(|e| AppError::io(path, e))?;
    let header: Header =
        serde_json::from_str(&header_line).map_err(|e| AppError::parse_json(path, &e))?;
    if header.format_version != DATASET_FORMAT_VERSION {
        return Err(AppError::parse(
            path,
            format!(
                "unsupported format_version {} (expected {DATASET_FORMAT_VERSION})",
                header.format_version
            ),
        ));
    }
    let mut events = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| AppError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EventRecord = serde_json::from_str(&line).map_err(|e| AppError::Parse {
            path: path.display().to_string(),
            location: format!(" (line {}, column {})", idx + 1, e.column()),
            message: e.to_string(),
        })?;
        events.push(from_record(record, path, idx + 1)?);
    }
    Ok(Dataset {
        events,
        scene_ref: header.scene_ref,
        split: header.split,
    })
}

/// Loads a dataset and checks that every event resolves against the scene.
pub fn load_dataset_checked(path: &Path, use_case: Option<UseCase>) -> Result<Dataset> {
    let dataset = load_dataset(path)?;
    if let Some(expected) = use_case {
        if let Some(event) = dataset.events.iter().find(|e| e.use_case != expected) {
            return Err(AppError::Config(format!(
                "dataset {} contains {} events but {} was requested",
                path.display(),
                event.use_case,
                expected
            )));
        }
    }
    Ok(dataset)
}
