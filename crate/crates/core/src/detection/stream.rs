//! `.detstream` line-delimited detection records.
//!
//! One JSON object per line, no blank lines inside a stream:
//!
//! ```text
//! {"v":1,"frame":0,"t_ms":0,"size":[640,480],"objects":[{"label":"drill","score":0.9,"bbox":[60.0,360.0,80.0,50.0]}],"skeleton":{"person":0,"joints":[[x,y,c], ... 18 entries]}}
//! ```
//!
//! `skeleton` is `null` when no person was detected. Joints use the 18-keypoint
//! layout with `x` as a fraction of frame width and `y` as a fraction of frame
//! height; a confidence of `0` marks a missing joint. An optional
//! `"operator":"force_advance"` field carries operator input for that frame.
//! Frame ids must strictly increase.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DetectionError, DetectionProvider, FrameDetections, ObjectDetection, OperatorAction, Result};
use crate::pose_features::{Keypoint, RawSkeleton, RAW_JOINT_COUNT};

pub const STREAM_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    v: u32,
    frame: u64,
    t_ms: u64,
    size: [u32; 2],
    objects: Vec<ObjectDetection>,
    skeleton: Option<SkeletonRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    operator: Option<OperatorAction>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonRecord {
    person: u32,
    joints: Vec<[f64; 3]>,
}

impl Record {
    fn from_frame(f: &FrameDetections) -> Self {
        Record {
            v: STREAM_VERSION,
            frame: f.frame_id,
            t_ms: f.timestamp_ms,
            size: [f.width, f.height],
            objects: f.objects.clone(),
            skeleton: f.skeleton.as_ref().map(|s| SkeletonRecord {
                person: s.person_id,
                joints: s
                    .joints
                    .iter()
                    .map(|k| k.map_or([0.0, 0.0, 0.0], |k| [k.x, k.y, k.confidence]))
                    .collect(),
            }),
            operator: f.operator,
        }
    }

    fn into_frame(self, line: usize) -> Result<FrameDetections> {
        let perr = |msg: String| DetectionError::Parse { line, msg };
        if self.v != STREAM_VERSION {
            return Err(perr(format!("unsupported stream version {}", self.v)));
        }
        if self.size[0] == 0 || self.size[1] == 0 {
            return Err(perr("frame size must be positive".into()));
        }
        for o in &self.objects {
            if !o.bbox.is_valid() {
                return Err(perr(format!("object {} has an invalid box", o.label)));
            }
            if !(0.0..=1.0).contains(&o.score) {
                return Err(perr(format!("object {} score {} outside [0, 1]", o.label, o.score)));
            }
        }
        let skeleton = match self.skeleton {
            None => None,
            Some(s) => {
                if s.joints.len() != RAW_JOINT_COUNT {
                    return Err(perr(format!("skeleton has {} joints, expected {RAW_JOINT_COUNT}", s.joints.len())));
                }
                let mut raw = RawSkeleton::empty(self.frame, s.person);
                for (slot, [x, y, c]) in raw.joints.iter_mut().zip(s.joints) {
                    if c == 0.0 {
                        continue;
                    }
                    let kp = Keypoint::new(x, y, c);
                    if !kp.is_valid() {
                        return Err(perr(format!("invalid keypoint ({x}, {y}, {c})")));
                    }
                    *slot = Some(kp);
                }
                Some(raw)
            }
        };
        Ok(FrameDetections {
            frame_id: self.frame,
            timestamp_ms: self.t_ms,
            width: self.size[0],
            height: self.size[1],
            objects: self.objects,
            skeleton,
            operator: self.operator,
        })
    }
}

/// Serializes one frame as a single line without the trailing newline.
pub fn frame_to_line(frame: &FrameDetections) -> String {
    serde_json::to_string(&Record::from_frame(frame)).expect("records always serialize")
}

pub fn record_stream<'a>(frames: impl IntoIterator<Item = &'a FrameDetections>, mut sink: impl Write) -> Result<()> {
    let io = |source| DetectionError::Io { context: "writing detection stream".into(), source };
    for f in frames {
        sink.write_all(frame_to_line(f).as_bytes()).map_err(io)?;
        sink.write_all(b"\n").map_err(io)?;
    }
    sink.flush().map_err(io)
}

pub fn parse_stream(source: impl BufRead) -> Result<Vec<FrameDetections>> {
    let mut provider = ReplayProvider::new(source);
    let mut out = Vec::new();
    while let Some(f) = provider.read_frame()? {
        out.push(f);
    }
    Ok(out)
}

pub fn write_stream_file(path: &Path, frames: &[FrameDetections]) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|source| DetectionError::Io { context: format!("creating {}", path.display()), source })?;
    record_stream(frames, std::io::BufWriter::new(file))
}

pub fn read_stream_file(path: &Path) -> Result<Vec<FrameDetections>> {
    parse_stream(ReplayProvider::open(path)?.into_inner())
}

/// Reads frames lazily from a `.detstream` source.
pub struct ReplayProvider<R> {
    reader: R,
    line: usize,
    last_frame: Option<u64>,
    buf: String,
}

impl ReplayProvider<BufReader<std::fs::File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|source| DetectionError::Io { context: format!("opening {}", path.display()), source })?;
        Ok(Self::new(BufReader::new(file)))
    }
}

impl<R: BufRead> ReplayProvider<R> {
    pub fn new(reader: R) -> Self {
        Self { reader, line: 0, last_frame: None, buf: String::new() }
    }

    fn into_inner(self) -> R {
        self.reader
    }

    pub fn read_frame(&mut self) -> Result<Option<FrameDetections>> {
        self.buf.clear();
        let n = self
            .reader
            .read_line(&mut self.buf)
            .map_err(|source| DetectionError::Io { context: format!("reading line {}", self.line + 1), source })?;
        if n == 0 {
            return Ok(None);
        }
        self.line += 1;
        let line = self.line;
        let record: Record = serde_json::from_str(self.buf.trim_end_matches(['\n', '\r']))
            .map_err(|e| DetectionError::Parse { line, msg: e.to_string() })?;
        let frame = record.into_frame(line)?;
        if let Some(last) = self.last_frame {
            if frame.frame_id <= last {
                return Err(DetectionError::Ordering { line, last, got: frame.frame_id });
            }
        }
        self.last_frame = Some(frame.frame_id);
        Ok(Some(frame))
    }
}

impl<R: BufRead + Send> DetectionProvider for ReplayProvider<R> {
    fn next_frame(&mut self) -> Result<Option<FrameDetections>> {
        self.read_frame()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use crate::pose_features::raw;

    fn frame(id: u64) -> FrameDetections {
        let mut f = FrameDetections::new(id, id * 33, 640, 480);
        f.objects.push(ObjectDetection::new("drill", 0.91, BBox::new(60.0, 360.0, 80.0, 50.0)));
        let mut s = RawSkeleton::empty(id, 0);
        s.joints[raw::NECK] = Some(Keypoint::new(0.5, 0.25, 0.9));
        s.joints[raw::LEFT_HIP] = Some(Keypoint::new(0.53, 0.55, 0.8));
        f.skeleton = Some(s);
        f
    }

    #[test]
    fn empty_source_is_end_of_stream() {
        let mut p = ReplayProvider::new("".as_bytes());
        assert!(p.next_frame().unwrap().is_none());
        assert!(parse_stream("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn two_records_then_end() {
        let mut buf = Vec::new();
        record_stream(&[frame(0), frame(1)], &mut buf).unwrap();
        let mut p = ReplayProvider::new(buf.as_slice());
        assert_eq!(p.next_frame().unwrap().unwrap(), frame(0));
        assert_eq!(p.next_frame().unwrap().unwrap(), frame(1));
        assert!(p.next_frame().unwrap().is_none());
    }

    #[test]
    fn out_of_order_is_an_error() {
        let mut buf = Vec::new();
        record_stream(&[frame(3), frame(2)], &mut buf).unwrap();
        match parse_stream(buf.as_slice()) {
            Err(DetectionError::Ordering { line: 2, last: 3, got: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_last_line_names_line() {
        let mut buf = Vec::new();
        record_stream(&[frame(0), frame(1), frame(2)], &mut buf).unwrap();
        buf.truncate(buf.len() - 20);
        match parse_stream(buf.as_slice()) {
            Err(DetectionError::Parse { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn operator_field_round_trips() {
        let mut f = frame(4);
        f.operator = Some(OperatorAction::ForceAdvance);
        let line = frame_to_line(&f);
        assert!(line.contains(r#""operator":"force_advance""#));
        assert_eq!(parse_stream(format!("{line}\n").as_bytes()).unwrap(), vec![f]);
        assert!(!frame_to_line(&frame(1)).contains("operator"));
    }

    #[test]
    fn rejects_bad_records() {
        let good = frame_to_line(&frame(0));
        for bad in [
            good.replace("\"v\":1", "\"v\":2"),
            good.replace("[640,480]", "[0,480]"),
            good.replace("0.91", "1.5"),
            good.replace("\"frame\"", "\"frame_no\""),
        ] {
            assert!(matches!(parse_stream(bad.as_bytes()), Err(DetectionError::Parse { line: 1, .. })), "{bad}");
        }
    }
}
