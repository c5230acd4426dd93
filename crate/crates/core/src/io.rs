//! Event files (`time,mark` CSV plus a JSON sidecar), graph files and
//! atomic writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{MarkedEventSequence, Window};
use crate::graph::DirectedGraph;

/// Window and dimension of an event file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub t_start: f64,
    pub t_end: f64,
    pub d: usize,
}

impl Sidecar {
    pub fn of(seq: &MarkedEventSequence) -> Self {
        Self {
            t_start: seq.window().start,
            t_end: seq.window().end,
            d: seq.d(),
        }
    }

    pub fn window(&self) -> Result<Window> {
        Window::new(self.t_start, self.t_end)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EventRow {
    time: f64,
    mark: usize,
}

/// `events.csv` -> `events.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes to a temporary file next to `path` and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(format!("{} is not a file path", path.display())))?
        .to_string_lossy()
        .into_owned();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// CSV with header `time,mark`; times use the shortest representation that
/// parses back to the same value.
pub fn events_to_csv(seq: &MarkedEventSequence) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (time, mark) in seq.iter() {
        w.serialize(EventRow { time, mark })?;
    }
    if seq.is_empty() {
        w.write_record(["time", "mark"])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

/// Raw `(times, marks)` columns of an event CSV.
pub fn parse_events_csv(bytes: &[u8]) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let headers = r.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "time" || &headers[1] != "mark" {
        return Err(Error::Parse(format!(
            "expected header `time,mark`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut times = Vec::new();
    let mut marks = Vec::new();
    for (line, row) in r.deserialize::<EventRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse(format!("row {}: {e}", line + 2)))?;
        times.push(row.time);
        marks.push(row.mark);
    }
    Ok((times, marks))
}

/// Separates exact ties: the `i`-th repeat of a time moves by `i * eps`.
pub fn jitter_ties(times: &mut [f64], marks: &mut [usize], eps: f64) -> Result<usize> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidConfig(format!("jitter {eps} must be > 0")));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(a.cmp(&b)));
    let sorted_t: Vec<f64> = order.iter().map(|&i| times[i]).collect();
    let sorted_m: Vec<usize> = order.iter().map(|&i| marks[i]).collect();
    let mut moved = 0;
    let mut run = 0;
    for i in 0..sorted_t.len() {
        run = if i > 0 && sorted_t[i] == sorted_t[i - 1] { run + 1 } else { 0 };
        times[i] = sorted_t[i] + run as f64 * eps;
        marks[i] = sorted_m[i];
        moved += usize::from(run > 0);
    }
    Ok(moved)
}

pub fn write_events(path: &Path, seq: &MarkedEventSequence) -> Result<()> {
    atomic_write(path, &events_to_csv(seq)?)?;
    let sidecar = serde_json::to_vec_pretty(&Sidecar::of(seq))?;
    atomic_write(&sidecar_path(path), &sidecar)
}

/// Reads an event CSV. Window and dimension come from `meta` when given,
/// otherwise from the sidecar next to the file.
pub fn read_events(path: &Path, meta: Option<Sidecar>, jitter: Option<f64>) -> Result<MarkedEventSequence> {
    let bytes = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let (mut times, mut marks) = parse_events_csv(&bytes)?;
    let meta = match meta {
        Some(m) => m,
        None => read_sidecar(&sidecar_path(path))?,
    };
    if let Some(eps) = jitter {
        jitter_ties(&mut times, &mut marks, eps)?;
    }
    MarkedEventSequence::new(times, marks, meta.window()?, meta.d)
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let bytes = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn graph_to_json(g: &DirectedGraph) -> Result<String> {
    Ok(serde_json::to_string(g)?)
}

pub fn graph_from_json(s: &str) -> Result<DirectedGraph> {
    Ok(serde_json::from_str(s)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let w = Window::new(0.0, 10.0).unwrap();
        let times = vec![0.1, 1.0 / 3.0, 2.718281828459045, 9.999999999999998];
        let seq = MarkedEventSequence::new(times, vec![0, 1, 0, 2], w, 3).unwrap();
        let bytes = events_to_csv(&seq).unwrap();
        assert!(bytes.starts_with(b"time,mark\n0.1,0\n"));
        let (t, m) = parse_events_csv(&bytes).unwrap();
        let back = MarkedEventSequence::new(t, m, w, 3).unwrap();
        assert_eq!(back, seq);
        let empty = MarkedEventSequence::empty(w, 2);
        assert_eq!(events_to_csv(&empty).unwrap(), b"time,mark\n");
        assert_eq!(parse_events_csv(b"time,mark\n").unwrap().0.len(), 0);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_events_csv(b"t,m\n1,0\n"), Err(Error::Parse(_))));
        assert!(matches!(parse_events_csv(b"time,mark\n1,x\n"), Err(Error::Parse(_))));
        assert!(matches!(parse_events_csv(b"time,mark\n1,-1\n"), Err(Error::Parse(_))));
    }

    #[test]
    fn jitter_separates_ties() {
        let mut t = vec![0.5, 0.3, 0.3, 0.3];
        let mut m = vec![0, 1, 0, 1];
        assert_eq!(jitter_ties(&mut t, &mut m, 1e-6).unwrap(), 2);
        assert_eq!(t, vec![0.3, 0.3 + 1e-6, 0.3 + 2e-6, 0.5]);
        assert_eq!(m, vec![1, 0, 1, 0]);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ev.csv");
        let w = Window::new(0.0, 5.0).unwrap();
        let seq = MarkedEventSequence::new(vec![0.25, 4.5], vec![1, 0], w, 2).unwrap();
        write_events(&path, &seq).unwrap();
        assert_eq!(read_events(&path, None, None).unwrap(), seq);
        let sc = read_sidecar(&dir.path().join("ev.json")).unwrap();
        assert_eq!(sc, Sidecar { t_start: 0.0, t_end: 5.0, d: 2 });
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 2);
    }

    #[test]
    fn graph_json_shape() {
        let mut g = DirectedGraph::empty(3);
        g.add_edge(2, 0);
        g.add_edge(0, 1);
        assert_eq!(graph_to_json(&g).unwrap(), r#"{"d":3,"edges":[[0,1],[2,0]]}"#);
        assert_eq!(graph_from_json(r#"{"d":3,"edges":[[0,1],[2,0]]}"#).unwrap(), g);
    }
}
