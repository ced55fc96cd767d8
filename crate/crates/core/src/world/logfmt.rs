//! Unified scene-log format.
//!
//! Text form (UTF-8, one record per line, fields separated by single spaces):
//!
//! ```text
//! BITSLOG 1
//! map_id <token>
//! map <MapSpec as one-line JSON>
//! dt <float>
//! meta <EpisodeMeta as one-line JSON>
//! units m rad m/s
//! steps <count>
//! step <index> <agents>
//! <agent_id> <x> <y> <heading> <speed> <length> <width>   (repeated <agents> times)
//! ...                                                      (repeated <count> times)
//! end
//! ```
//!
//! Floats use the shortest representation that parses back to the same
//! bits. The binary form starts with `BITSLOGB`, a little-endian `u32`
//! version and a length-prefixed JSON header, followed by `u32` step and
//! agent counts and raw little-endian `f64` fields.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::world::map::MapSpec;
use crate::world::types::{AgentState, EpisodeMeta, SceneLog};

pub const TEXT_MAGIC: &str = "BITSLOG";
pub const BINARY_MAGIC: &[u8; 8] = b"BITSLOGB";
pub const LOG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogFormat {
    Text,
    Binary,
}

pub fn serialize_log(log: &SceneLog, format: LogFormat) -> Vec<u8> {
    match format {
        LogFormat::Text => to_text(log).into_bytes(),
        LogFormat::Binary => to_binary(log),
    }
}

/// Parses either form, detected from the leading magic.
pub fn parse_log(bytes: &[u8]) -> Result<SceneLog> {
    if bytes.starts_with(BINARY_MAGIC) {
        from_binary(bytes)
    } else {
        let text = std::str::from_utf8(bytes).map_err(|e| SimError::Parse {
            offset: e.valid_up_to(),
            message: "invalid UTF-8".into(),
        })?;
        from_text(text)
    }
}

pub fn save_log(log: &SceneLog, path: &Path, format: LogFormat) -> Result<()> {
    crate::io::write_atomic(path, &serialize_log(log, format))
}

pub fn load_log(path: &Path) -> Result<SceneLog> {
    parse_log(&std::fs::read(path)?)
}

pub fn to_text(log: &SceneLog) -> String {
    let mut out = String::new();
    let map = serde_json::to_string(&log.map).expect("map spec serializes");
    let meta = serde_json::to_string(&log.meta).expect("metadata serializes");
    let _ = writeln!(out, "{TEXT_MAGIC} {LOG_VERSION}");
    let _ = writeln!(out, "map_id {}", log.map_id);
    let _ = writeln!(out, "map {map}");
    let _ = writeln!(out, "dt {}", log.dt);
    let _ = writeln!(out, "meta {meta}");
    let _ = writeln!(out, "units m rad m/s");
    let _ = writeln!(out, "steps {}", log.steps.len());
    for (t, frame) in log.steps.iter().enumerate() {
        let _ = writeln!(out, "step {t} {}", frame.len());
        for s in frame {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {}",
                s.agent_id, s.x, s.y, s.heading, s.speed, s.length, s.width
            );
        }
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Lines<'a> {
    /// Next line and its byte offset; `what` names the expected section for
    /// the end-of-input error.
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        if self.pos >= self.text.len() {
            return Err(SimError::Parse {
                offset: self.pos,
                message: format!("unexpected end of input: missing {what}"),
            });
        }
        let start = self.pos;
        let rest = &self.text[start..];
        let (line, adv) = match rest.find('\n') {
            Some(i) => (&rest[..i], i + 1),
            None => (rest, rest.len()),
        };
        self.pos += adv;
        Ok((start, line))
    }

    /// Expects `key <value>` and returns the value.
    fn keyed(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (off, line) = self.next(&format!("`{key}` record"))?;
        match line.strip_prefix(key).and_then(|r| r.strip_prefix(' ')) {
            Some(v) => Ok((off + key.len() + 1, v)),
            None => Err(perr(off, format!("expected `{key}` record"))),
        }
    }
}

fn perr(offset: usize, message: impl Into<String>) -> SimError {
    SimError::Parse {
        offset,
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(offset: usize, field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| perr(offset, format!("invalid {what} `{field}`")))
}

pub fn from_text(text: &str) -> Result<SceneLog> {
    let mut lines = Lines { text, pos: 0 };
    let (off, magic) = lines.next("header")?;
    let version = magic
        .strip_prefix(TEXT_MAGIC)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| perr(off, "not a scene log (bad magic)"))?;
    let version: u32 = num(off + TEXT_MAGIC.len() + 1, version, "version")?;
    if version != LOG_VERSION {
        return Err(perr(off, format!("unsupported log version {version}")));
    }
    let (_, map_id) = lines.keyed("map_id")?;
    let (off, map) = lines.keyed("map")?;
    let map: MapSpec = serde_json::from_str(map).map_err(|e| perr(off, format!("map: {e}")))?;
    let (off, dt) = lines.keyed("dt")?;
    let dt: f64 = num(off, dt, "dt")?;
    let (off, meta) = lines.keyed("meta")?;
    let meta: EpisodeMeta = serde_json::from_str(meta).map_err(|e| perr(off, format!("meta: {e}")))?;
    let (off, units) = lines.keyed("units")?;
    if units != "m rad m/s" {
        return Err(perr(off, format!("unsupported units `{units}`")));
    }
    let (off, count) = lines.keyed("steps")?;
    let count: usize = num(off, count, "step count")?;
    let mut steps = Vec::with_capacity(count.min(1 << 20));
    for t in 0..count {
        let (off, rec) = lines
            .keyed("step")
            .map_err(|e| rename_missing(e, &format!("step {t} of {count}")))?;
        let mut parts = rec.split(' ');
        let idx: usize = num(off, parts.next().unwrap_or(""), "step index")?;
        if idx != t {
            return Err(perr(off, format!("step index {idx}, expected {t}")));
        }
        let agents: usize = num(off, parts.next().unwrap_or(""), "agent count")?;
        if parts.next().is_some() {
            return Err(perr(off, "trailing fields in step record"));
        }
        let mut frame = Vec::with_capacity(agents.min(1 << 16));
        for k in 0..agents {
            let (off, line) = lines.next(&format!("agent {k} of step {t}"))?;
            let f: Vec<&str> = line.split(' ').collect();
            if f.len() != 7 {
                return Err(perr(off, format!("agent record has {} fields, expected 7", f.len())));
            }
            let mut vals = [0.0; 6];
            for (v, s) in vals.iter_mut().zip(&f[1..]) {
                *v = num(off, s, "float")?;
            }
            frame.push(AgentState {
                agent_id: num(off, f[0], "agent id")?,
                x: vals[0],
                y: vals[1],
                heading: vals[2],
                speed: vals[3],
                length: vals[4],
                width: vals[5],
            });
        }
        steps.push(frame);
    }
    let (off, end) = lines.next("`end` record")?;
    if end != "end" {
        return Err(perr(off, "expected `end` record"));
    }
    if lines.pos < text.len() && !text[lines.pos..].trim().is_empty() {
        return Err(perr(lines.pos, "trailing data after `end`"));
    }
    let log = SceneLog {
        map_id: map_id.to_string(),
        map,
        dt,
        steps,
        meta,
    };
    log.validate().map_err(|e| perr(0, format!("invalid log: {e}")))?;
    Ok(log)
}

fn rename_missing(e: SimError, what: &str) -> SimError {
    match e {
        SimError::Parse { offset, message } if message.starts_with("unexpected end") => SimError::Parse {
            offset,
            message: format!("unexpected end of input: missing {what}"),
        },
        other => other,
    }
}

#[derive(Serialize, Deserialize)]
struct BinaryHeader {
    map_id: String,
    map: MapSpec,
    dt: f64,
    meta: EpisodeMeta,
}

pub fn to_binary(log: &SceneLog) -> Vec<u8> {
    let header = serde_json::to_vec(&BinaryHeader {
        map_id: log.map_id.clone(),
        map: log.map.clone(),
        dt: log.dt,
        meta: log.meta.clone(),
    })
    .expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&LOG_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(log.steps.len() as u32).to_le_bytes());
    for frame in &log.steps {
        out.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        for s in frame {
            out.extend_from_slice(&s.agent_id.to_le_bytes());
            for v in [s.x, s.y, s.heading, s.speed, s.length, s.width] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(perr(self.pos, format!("unexpected end of input: missing {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn from_binary(bytes: &[u8]) -> Result<SceneLog> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != BINARY_MAGIC {
        return Err(perr(0, "not a binary scene log (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != LOG_VERSION {
        return Err(perr(8, format!("unsupported log version {version}")));
    }
    let hlen = r.u32("header length")? as usize;
    let off = r.pos;
    let header: BinaryHeader =
        serde_json::from_slice(r.take(hlen, "header")?).map_err(|e| perr(off, format!("header: {e}")))?;
    let count = r.u32("step count")? as usize;
    let mut steps = Vec::with_capacity(count.min(1 << 20));
    for t in 0..count {
        let agents = r.u32(&format!("step {t} of {count}"))? as usize;
        let mut frame = Vec::with_capacity(agents.min(1 << 16));
        for k in 0..agents {
            let what = format!("agent {k} of step {t}");
            let agent_id = r.u32(&what)?;
            let mut v = [0.0; 6];
            for x in v.iter_mut() {
                *x = r.f64(&what)?;
            }
            frame.push(AgentState {
                agent_id,
                x: v[0],
                y: v[1],
                heading: v[2],
                speed: v[3],
                length: v[4],
                width: v[5],
            });
        }
        steps.push(frame);
    }
    if r.pos != bytes.len() {
        return Err(perr(r.pos, "trailing data after last step"));
    }
    let log = SceneLog {
        map_id: header.map_id,
        map: header.map,
        dt: header.dt,
        steps,
        meta: header.meta,
    };
    log.validate().map_err(|e| perr(0, format!("invalid log: {e}")))?;
    Ok(log)
}
