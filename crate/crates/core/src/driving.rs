//! JSON Lines driving stream: one `{theta, phi, camera}` object per line.

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::render::{Camera, CameraError};
use crate::rig::{ExprParams, PoseParams};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Pinhole intrinsics in pixels plus a row-major 4×4 world-to-camera matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub w2c: [f64; 16],
}

impl CameraSpec {
    pub fn to_camera(&self, width: u32, height: u32) -> Result<Camera, CameraError> {
        let m = &self.w2c;
        let rows = [0, 1, 2].map(|r| [m[4 * r] as f32, m[4 * r + 1] as f32, m[4 * r + 2] as f32, m[4 * r + 3] as f32]);
        Camera::new(self.fx as f32, self.fy as f32, self.cx as f32, self.cy as f32, rows, width, height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivingFrame {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub camera: CameraSpec,
}

impl DrivingFrame {
    pub fn pose(&self) -> PoseParams {
        PoseParams(self.theta.clone())
    }

    pub fn expression(&self) -> ExprParams {
        ExprParams(self.phi.clone())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("frame serializes")
    }
}

/// Lazily parse a driving stream. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn read_stream<R: BufRead>(reader: R) -> impl Iterator<Item = Result<DrivingFrame, StreamError>> {
    reader.lines().enumerate().filter_map(|(i, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(StreamError::Io(e))),
        };
        if line.trim().is_empty() {
            return None;
        }
        Some(serde_json::from_str(&line).map_err(|e| StreamError::Parse { line: i + 1, message: e.to_string() }))
    })
}

pub fn parse_stream(text: &str) -> Result<Vec<DrivingFrame>, StreamError> {
    read_stream(text.as_bytes()).collect()
}

pub fn write_stream(frames: &[DrivingFrame]) -> String {
    let mut s = String::new();
    for f in frames {
        s.push_str(&f.to_json_line());
        s.push('\n');
    }
    s
}
