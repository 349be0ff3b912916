use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::BBox;
use crate::error::{Error, Result};

/// One line of a MOTChallenge file. Frame and id are 1-based; the box is in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotRecord {
    pub frame: u32,
    pub id: i64,
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    pub conf: f64,
}

impl MotRecord {
    /// Converts a normalized box from a 0-based frame / 0-based id into a record.
    pub fn from_normalized(
        frame_index: usize,
        track_id: u64,
        bbox: &BBox,
        conf: f64,
        image_width: usize,
        image_height: usize,
    ) -> Self {
        let (w, h) = (image_width as f64, image_height as f64);
        Self {
            frame: frame_index as u32 + 1,
            id: track_id as i64 + 1,
            left: bbox.x1 * w,
            top: bbox.y1 * h,
            width: bbox.width() * w,
            height: bbox.height() * h,
            conf,
        }
    }

    /// `[x1, y1, x2, y2]` in pixels.
    pub fn corners(&self) -> [f64; 4] {
        [
            self.left,
            self.top,
            self.left + self.width,
            self.top + self.height,
        ]
    }

    pub fn iou(&self, other: &MotRecord) -> f64 {
        let a = self.corners();
        let b = other.corners();
        let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
        let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
        let inter = iw * ih;
        let union = self.width * self.height + other.width * other.height - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Per-video tracker output (or ground truth) as a flat record list.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackingResult {
    pub records: Vec<MotRecord>,
}

impl TrackingResult {
    pub fn new(records: Vec<MotRecord>) -> Self {
        Self { records }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn max_frame(&self) -> u32 {
        self.records.iter().map(|r| r.frame).max().unwrap_or(0)
    }

    /// Records grouped by frame, preserving file order inside a frame.
    pub fn by_frame(&self) -> BTreeMap<u32, Vec<MotRecord>> {
        let mut map: BTreeMap<u32, Vec<MotRecord>> = BTreeMap::new();
        for r in &self.records {
            map.entry(r.frame).or_default().push(*r);
        }
        map
    }
}

/// Formats records as `frame,id,left,top,width,height,conf,-1,-1,-1` lines.
pub fn format_records(records: &[MotRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 48);
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},-1,-1,-1",
            r.frame, r.id, r.left, r.top, r.width, r.height, r.conf
        )
        .expect("writing to String cannot fail");
    }
    out
}

fn parse_int(field: &str, line: usize, what: &str) -> Result<i64> {
    let field = field.trim();
    if let Ok(v) = field.parse::<i64>() {
        return Ok(v);
    }
    match field.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.is_finite() => Ok(v as i64),
        _ => Err(Error::Parse {
            line,
            message: format!("{what} {field:?} is not an integer"),
        }),
    }
}

fn parse_real(field: &str, line: usize, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("{what} {field:?} is not a number"),
    })
}

/// Parses MOTChallenge text. Lines need at least seven fields; extra columns are ignored.
pub fn parse_records(text: &str) -> Result<Vec<MotRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() < 7 {
            return Err(Error::Parse {
                line,
                message: format!(
                    "expected at least 7 comma-separated fields, found {}",
                    fields.len()
                ),
            });
        }
        let frame = parse_int(fields[0], line, "frame")?;
        if frame < 1 || frame > u32::MAX as i64 {
            return Err(Error::Parse {
                line,
                message: format!("frame {frame} must be a positive 1-based index"),
            });
        }
        out.push(MotRecord {
            frame: frame as u32,
            id: parse_int(fields[1], line, "id")?,
            left: parse_real(fields[2], line, "bb_left")?,
            top: parse_real(fields[3], line, "bb_top")?,
            width: parse_real(fields[4], line, "bb_width")?,
            height: parse_real(fields[5], line, "bb_height")?,
            conf: parse_real(fields[6], line, "conf")?,
        });
    }
    Ok(out)
}

pub fn read_motchallenge(path: impl AsRef<Path>) -> Result<TrackingResult> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text).map(TrackingResult::new)
}

pub fn write_motchallenge(result: &TrackingResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, format_records(&result.records)).map_err(|e| Error::io(path, e))
}
