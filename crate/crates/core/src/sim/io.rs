//! Trace serialization: lossless JSON, plot-ready CSV and JSON-lines event
//! logs. Floats are written with `Display`, which round-trips exactly.

use std::io::{Read, Write};
use std::path::Path;

use super::{SimTrace, EventRecord};
use crate::error::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("trace csv: {e}"))
}

impl SimTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Header: `time, q_*, A_*, D_*, T_*, Qmin_*` (the last block per station).
    pub fn csv_header(&self) -> Vec<String> {
        let width = |rows: &[Vec<u64>]| rows.first().map_or(0, Vec::len);
        let mut h = vec!["time".to_string()];
        for (prefix, n) in [
            ("q", width(&self.q)),
            ("A", width(&self.a)),
            ("D", width(&self.d)),
            ("T", self.t.first().map_or(0, Vec::len)),
            ("Qmin", width(&self.qmin)),
        ] {
            h.extend((0..n).map(|k| format!("{prefix}_{k}")));
        }
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.csv_header()).map_err(csv_err)?;
        for s in 0..self.len() {
            let mut row = vec![self.times[s].to_string()];
            row.extend(self.q[s].iter().map(u64::to_string));
            row.extend(self.a[s].iter().map(u64::to_string));
            row.extend(self.d[s].iter().map(u64::to_string));
            row.extend(self.t[s].iter().map(f64::to_string));
            row.extend(self.qmin[s].iter().map(u64::to_string));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV trace. Seed, policy, event log and bookkeeping errors are
    /// not part of the CSV and come back empty.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers().map_err(csv_err)?.clone();
        let count = |p: &str| header.iter().filter(|h| h.starts_with(&format!("{p}_"))).count();
        let (nq, na, nd, nt, nm) = (count("q"), count("A"), count("D"), count("T"), count("Qmin"));
        let mut tr = SimTrace {
            seed: 0,
            policy: String::new(),
            times: vec![],
            q: vec![],
            a: vec![],
            d: vec![],
            t: vec![],
            qmin: vec![],
            events: vec![],
            event_count: 0,
            residual_max_err: 0.0,
            counting_max_err: 0.0,
        };
        if header.len() != 1 + nq + na + nd + nt + nm {
            return Err(Error::Parse("unexpected trace csv columns".into()));
        }
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let f = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|e| Error::Parse(format!("column {i}: {e}")))
            };
            let u = |i: usize| -> Result<u64> {
                rec[i].parse().map_err(|e| Error::Parse(format!("column {i}: {e}")))
            };
            let mut c = 1;
            let ints = |n: usize, c: &mut usize| -> Result<Vec<u64>> {
                let v = (*c..*c + n).map(u).collect::<Result<Vec<_>>>()?;
                *c += n;
                Ok(v)
            };
            tr.times.push(f(0)?);
            tr.q.push(ints(nq, &mut c)?);
            tr.a.push(ints(na, &mut c)?);
            tr.d.push(ints(nd, &mut c)?);
            tr.t.push((c..c + nt).map(f).collect::<Result<Vec<_>>>()?);
            c += nt;
            tr.qmin.push(ints(nm, &mut c)?);
        }
        Ok(tr)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Event log as JSON lines.
    pub fn write_events<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_events<R: Read>(input: R) -> Result<Vec<EventRecord>> {
        serde_json::Deserializer::from_reader(input)
            .into_iter::<EventRecord>()
            .map(|e| e.map_err(Error::from))
            .collect()
    }
}
