//! Binary episode files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "IMLT" | version: u32 = 1 | count: u32
//! per task:
//!   kind: u8 (0 regression, 1 classification)
//!   n_way: u32 | k_shot: u32 | q_per_class: u32
//!   origin_len: u32 | origin: utf-8 bytes
//!   support_x  matrix
//!   support_y  matrix (regression) or labels (classification)
//!   query_x    matrix
//!   query_y    matrix or labels
//! matrix: rows: u32 | cols: u32 | rows*cols f64, row-major
//! labels: count: u32 | count u32
//! ```

use std::path::Path;

use super::{Targets, Task, TaskKind};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const EPISODE_MAGIC: &[u8; 4] = b"IMLT";
pub const EPISODE_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(u32::try_from(v).expect("episode dimension exceeds u32")).to_le_bytes());
}

fn put_matrix(out: &mut Vec<u8>, t: &Tensor<f64>) {
    put_u32(out, t.rows());
    put_u32(out, t.cols());
    for x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_targets(out: &mut Vec<u8>, y: &Targets) {
    match y {
        Targets::Values(t) => put_matrix(out, t),
        Targets::Labels(l) => {
            put_u32(out, l.len());
            for v in l {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

pub fn encode_tasks(tasks: &[Task]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(EPISODE_MAGIC);
    put_u32(&mut out, EPISODE_VERSION as usize);
    put_u32(&mut out, tasks.len());
    for t in tasks {
        out.push(match t.kind {
            TaskKind::Regression => 0,
            TaskKind::Classification => 1,
        });
        put_u32(&mut out, t.n_way);
        put_u32(&mut out, t.k_shot);
        put_u32(&mut out, t.q_per_class);
        put_u32(&mut out, t.origin.len());
        out.extend_from_slice(t.origin.as_bytes());
        put_matrix(&mut out, &t.support_x);
        put_targets(&mut out, &t.support_y);
        put_matrix(&mut out, &t.query_x);
        put_targets(&mut out, &t.query_y);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset: self.pos,
            msg: msg.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.buf.len() => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => self.err(format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos)),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        Ok(self.u32(what)? as usize)
    }

    fn matrix(&mut self, what: &str) -> Result<Tensor<f64>> {
        let start = self.pos;
        let rows = self.len(what)?;
        let cols = self.len(what)?;
        let Some(n) = rows.checked_mul(cols) else {
            self.pos = start;
            return self.err(format!("{what} extent overflows"));
        };
        let bytes = self.take(n.saturating_mul(8), what)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Tensor::from_parts(vec![rows, cols], data))
    }

    fn labels(&mut self, what: &str) -> Result<Vec<u32>> {
        let n = self.len(what)?;
        let bytes = self.take(n.saturating_mul(4), what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

pub fn decode_tasks(buf: &[u8]) -> Result<Vec<Task>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != EPISODE_MAGIC {
        r.pos = 0;
        return r.err("bad magic, expected IMLT");
    }
    let version = r.u32("version")?;
    if version != EPISODE_VERSION {
        r.pos -= 4;
        return r.err(format!("unsupported episode file version {version}"));
    }
    let count = r.len("count")?;
    let mut tasks = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let start = r.pos;
        let kind = match r.u8("kind tag")? {
            0 => TaskKind::Regression,
            1 => TaskKind::Classification,
            other => {
                r.pos = start;
                return r.err(format!("unknown task kind tag {other}"));
            }
        };
        let n_way = r.len("n_way")?;
        let k_shot = r.len("k_shot")?;
        let q_per_class = r.len("q_per_class")?;
        let origin_len = r.len("origin length")?;
        let origin_at = r.pos;
        let origin = match std::str::from_utf8(r.take(origin_len, "origin")?) {
            Ok(s) => s.to_string(),
            Err(_) => {
                r.pos = origin_at;
                return r.err("origin is not utf-8");
            }
        };
        let targets = |r: &mut Reader, what: &str| -> Result<Targets> {
            match kind {
                TaskKind::Regression => r.matrix(what).map(Targets::Values),
                TaskKind::Classification => r.labels(what).map(Targets::Labels),
            }
        };
        let support_x = r.matrix("support_x")?;
        let support_y = targets(&mut r, "support_y")?;
        let query_x = r.matrix("query_x")?;
        let query_y = targets(&mut r, "query_y")?;
        let task = Task {
            kind,
            support_x,
            support_y,
            query_x,
            query_y,
            n_way,
            k_shot,
            q_per_class,
            origin,
        };
        if let Err(e) = task.validate() {
            r.pos = start;
            return r.err(format!("inconsistent task: {e}"));
        }
        tasks.push(task);
    }
    if r.pos != buf.len() {
        return r.err(format!("{} trailing bytes", buf.len() - r.pos));
    }
    Ok(tasks)
}

pub fn write_tasks(path: impl AsRef<Path>, tasks: &[Task]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_tasks(tasks)).map_err(|e| Error::io(path, e))
}

pub fn read_tasks(path: impl AsRef<Path>) -> Result<Vec<Task>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tasks(&bytes)
}
