use std::fmt::Write as _;
use std::path::Path;

use super::{wrap_angle, AgentState, Category};
use crate::{Error, Result};

/// All agent observations sharing one frame id.
#[derive(Clone, Debug)]
pub struct FrameRecords {
    pub frame_id: i64,
    pub agents: Vec<AgentState>,
}

#[derive(Clone, Debug, Default)]
pub struct ParseOutcome {
    /// Frames grouped and sorted by ascending frame id.
    pub frames: Vec<FrameRecords>,
    /// Lines whose object_type was outside 1..5 and fell back to Other.
    pub unknown_type_count: usize,
}

pub fn parse_trajectory_file(path: &Path) -> Result<ParseOutcome> {
    let text = std::fs::read_to_string(path)?;
    parse_trajectory_str(&text, &path.display().to_string())
}

/// Parses the 10-field trajectory text format. The z and height fields are
/// validated as numbers but dropped; prediction is planar.
pub fn parse_trajectory_str(text: &str, path_label: &str) -> Result<ParseOutcome> {
    let mut outcome = ParseOutcome::default();
    let mut by_frame: Vec<(i64, Vec<AgentState>)> = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        let line_num = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 10 {
            return Err(Error::Parse {
                path: path_label.to_string(),
                line: line_num,
                msg: format!("expected 10 fields, got {}", fields.len()),
            });
        }
        let int = |idx: usize, name: &str| -> Result<i64> {
            fields[idx].parse::<i64>().map_err(|_| Error::Parse {
                path: path_label.to_string(),
                line: line_num,
                msg: format!("invalid {}: {:?}", name, fields[idx]),
            })
        };
        let num = |idx: usize, name: &str| -> Result<f64> {
            match fields[idx].parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    path: path_label.to_string(),
                    line: line_num,
                    msg: format!("invalid {}: {:?}", name, fields[idx]),
                }),
            }
        };

        let frame_id = int(0, "frame_id")?;
        let agent_id = int(1, "object_id")?;
        let type_code = int(2, "object_type")?;
        let x = num(3, "x")?;
        let y = num(4, "y")?;
        let _z = num(5, "z")?;
        let length = num(6, "length")?;
        let width = num(7, "width")?;
        let _height = num(8, "height")?;
        let heading = num(9, "heading")?;

        let category = match Category::from_code(type_code) {
            Some(c) => c,
            None => {
                outcome.unknown_type_count += 1;
                Category::Other
            }
        };
        let state = AgentState {
            agent_id,
            x,
            y,
            length,
            width,
            heading: wrap_angle(heading),
            category,
        };
        match by_frame.binary_search_by_key(&frame_id, |(f, _)| *f) {
            Ok(pos) => by_frame[pos].1.push(state),
            Err(pos) => by_frame.insert(pos, (frame_id, vec![state])),
        }
    }

    outcome.frames = by_frame
        .into_iter()
        .map(|(frame_id, agents)| FrameRecords { frame_id, agents })
        .collect();
    Ok(outcome)
}

/// Serializes frames back into the ingestion text format (z and height 0).
pub fn write_records(frames: &[FrameRecords]) -> String {
    let mut out = String::new();
    for frame in frames {
        for a in &frame.agents {
            let _ = writeln!(
                out,
                "{} {} {} {} {} 0 {} {} 0 {}",
                frame.frame_id, a.agent_id, a.category.code(), a.x, a.y, a.length, a.width, a.heading
            );
        }
    }
    out
}
