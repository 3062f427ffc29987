use std::collections::HashMap;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeDelta};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Longest run of missing values per node that is filled by interpolation.
pub const MAX_INTERPOLATED_GAP: usize = 3;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Uniformly spaced speed readings, `time × node`.
///
/// Rows that could not be filled hold NaN and separate contiguous
/// [`segments`](SpeedSeries::segments) of complete rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedSeries {
    timestamps: Vec<NaiveDateTime>,
    node_ids: Vec<String>,
    values: Vec<f64>,
    segments: Vec<Range<usize>>,
}

pub(crate) fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Maximal runs of rows whose values are all finite.
fn find_segments(values: &[f64], n: usize) -> Vec<Range<usize>> {
    let rows = if n == 0 { 0 } else { values.len() / n };
    let mut out = Vec::new();
    let mut start = None;
    for r in 0..rows {
        let ok = values[r * n..(r + 1) * n].iter().all(|v| v.is_finite());
        match (ok, start) {
            (true, None) => start = Some(r),
            (false, Some(s)) => {
                out.push(s..r);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(s..rows);
    }
    out
}

/// Fills interior NaN runs of at most `MAX_INTERPOLATED_GAP` per column.
fn interpolate_gaps(values: &mut [f64], n: usize) {
    let rows = values.len() / n.max(1);
    for c in 0..n {
        let mut r = 0;
        while r < rows {
            if values[r * n + c].is_finite() {
                r += 1;
                continue;
            }
            let start = r;
            while r < rows && !values[r * n + c].is_finite() {
                r += 1;
            }
            let len = r - start;
            if start == 0 || r == rows || len > MAX_INTERPOLATED_GAP {
                continue;
            }
            let (a, b) = (values[(start - 1) * n + c], values[r * n + c]);
            for k in 0..len {
                let w = (k + 1) as f64 / (len + 1) as f64;
                values[(start + k) * n + c] = a + w * (b - a);
            }
        }
    }
}

impl SpeedSeries {
    /// Builds a series from complete rows; NaN marks unusable readings.
    pub fn new(timestamps: Vec<NaiveDateTime>, node_ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let n = node_ids.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if values.len() != timestamps.len() * n {
            return Err(Error::shape(format!(
                "{} values for {} rows of {n} nodes",
                values.len(),
                timestamps.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| **v < 0.0 || v.is_infinite()) {
            return Err(Error::MalformedCsv { line: 0, msg: format!("speed {v} is not a non-negative number") });
        }
        let segments = find_segments(&values, n);
        Ok(SpeedSeries { timestamps, node_ids, values, segments })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n(&self) -> usize {
        self.node_ids.len()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    /// Row-major `len × n` values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n()..(t + 1) * self.n()]
    }

    pub fn segments(&self) -> &[Range<usize>] {
        &self.segments
    }

    /// Parses `timestamp,<id>,...` CSV. Rows are sorted, missing timestamps
    /// inserted, short gaps interpolated and longer ones left as breaks.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(|e| crate::graph::csv_error(e, 1))?.clone();
        if header.len() < 2 || !header[0].eq_ignore_ascii_case("timestamp") {
            return Err(Error::MalformedCsv { line: 1, msg: "header must be timestamp,<node_id>,...".into() });
        }
        let node_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut seen = HashMap::new();
        for id in &node_ids {
            if seen.insert(id.as_str(), ()).is_some() || id.is_empty() {
                return Err(Error::MalformedCsv { line: 1, msg: format!("duplicate or empty node id {id:?}") });
            }
        }
        let n = node_ids.len();
        let mut rows: Vec<(NaiveDateTime, Vec<f64>, usize)> = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| crate::graph::csv_error(e, line))?;
            if rec.len() != n + 1 {
                return Err(Error::MalformedCsv { line, msg: format!("expected {} fields, found {}", n + 1, rec.len()) });
            }
            let ts = parse_timestamp(&rec[0])
                .ok_or_else(|| Error::MalformedCsv { line, msg: format!("bad timestamp {:?}", &rec[0]) })?;
            let vals = rec
                .iter()
                .skip(1)
                .map(|cell| {
                    if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                        return Ok(f64::NAN);
                    }
                    match cell.parse::<f64>() {
                        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
                        _ => Err(Error::MalformedCsv { line, msg: format!("bad speed {cell:?}") }),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push((ts, vals, line));
        }
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        rows.sort_by_key(|r| r.0);
        let step = Self::infer_step(&rows)?;

        let mut timestamps = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len() * n);
        for (i, (ts, vals, _)) in rows.iter().enumerate() {
            if i > 0 {
                let mut t = timestamps[timestamps.len() - 1] + step;
                while t < *ts {
                    timestamps.push(t);
                    values.extend(std::iter::repeat_n(f64::NAN, n));
                    t += step;
                }
            }
            timestamps.push(*ts);
            values.extend_from_slice(vals);
        }
        interpolate_gaps(&mut values, n);
        Self::new(timestamps, node_ids, values)
    }

    /// Most common positive spacing; every spacing must be a multiple of it.
    fn infer_step(rows: &[(NaiveDateTime, Vec<f64>, usize)]) -> Result<TimeDelta> {
        let mut counts: HashMap<i64, usize> = HashMap::new();
        for w in rows.windows(2) {
            let d = (w[1].0 - w[0].0).num_seconds();
            if d == 0 {
                return Err(Error::MalformedCsv { line: w[1].2, msg: format!("duplicate timestamp {}", w[1].0) });
            }
            *counts.entry(d).or_default() += 1;
        }
        let Some(step) = counts.iter().max_by_key(|(d, c)| (**c, -**d)).map(|(d, _)| *d) else {
            return Ok(TimeDelta::minutes(5));
        };
        for (row, w) in rows.windows(2).enumerate() {
            let d = (w[1].0 - w[0].0).num_seconds();
            if d % step != 0 {
                return Err(Error::NonUniformSpacing {
                    row: row + 1,
                    msg: format!("gap of {d}s is not a multiple of the {step}s step"),
                });
            }
        }
        Ok(TimeDelta::seconds(step))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Writes the series; unusable readings become empty cells.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.node_ids.iter().cloned());
        wtr.write_record(&header).map_err(|e| crate::graph::csv_error(e, 0))?;
        for (t, ts) in self.timestamps.iter().enumerate() {
            let mut rec = vec![ts.format(TIMESTAMP_FORMAT).to_string()];
            rec.extend(self.row(t).iter().map(|v| if v.is_finite() { v.to_string() } else { String::new() }));
            wtr.write_record(&rec).map_err(|e| crate::graph::csv_error(e, t + 2))?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reorders columns to the graph's node order. Every graph node must
    /// have a column and every column a node.
    pub fn align_to_graph(&self, graph: &Graph) -> Result<SpeedSeries> {
        if let Some(id) = self.node_ids.iter().find(|id| graph.index_of(id).is_none()) {
            return Err(Error::UnknownNode(id.clone()));
        }
        self.restrict_to_graph(graph)
    }

    /// Keeps only the columns of `graph`'s nodes, in graph order; columns
    /// outside the graph are dropped.
    pub fn restrict_to_graph(&self, graph: &Graph) -> Result<SpeedSeries> {
        let pos: HashMap<&str, usize> = self.node_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let order: Vec<usize> = graph
            .node_ids()
            .iter()
            .map(|id| pos.get(id.as_str()).copied().ok_or_else(|| Error::UnknownNode(id.clone())))
            .collect::<Result<_>>()?;
        let n = self.n();
        let mut values = Vec::with_capacity(self.values.len());
        for t in 0..self.len() {
            values.extend(order.iter().map(|&j| self.values[t * n + j]));
        }
        Ok(SpeedSeries {
            timestamps: self.timestamps.clone(),
            node_ids: graph.node_ids().to_vec(),
            values,
            segments: self.segments.clone(),
        })
    }
}
