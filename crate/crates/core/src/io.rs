//! Binary field records and CSV export.
//!
//! A record is one JSON header line (`{"d":2,"L":16,"kind":"gradient"}`,
//! optionally with a `"component"` tag) followed by the raw little-endian
//! `f64` payload in index order.  Records concatenate, so one file can hold
//! a whole sample stream.

use crate::error::{Error, Result};
use crate::lattice::{ConductanceField, GradientField, HeightField, Torus};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Height,
    Gradient,
    Conductance,
    /// A generic scalar per site (correctors, kernels, ...).
    Site,
    /// A generic scalar per oriented edge.
    Vector,
}

impl FieldKind {
    pub fn len(&self, torus: Torus) -> usize {
        match self {
            FieldKind::Height | FieldKind::Site => torus.sites(),
            _ => torus.edges(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldHeader {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub kind: FieldKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub component: Option<usize>,
}

impl FieldHeader {
    pub fn torus(&self) -> Result<Torus> {
        Torus::new(self.d, self.l)
    }
}

pub fn write_record<W: Write>(
    w: &mut W,
    torus: Torus,
    kind: FieldKind,
    component: Option<usize>,
    values: &[f64],
) -> Result<()> {
    if values.len() != kind.len(torus) {
        return Err(Error::invalid(format!(
            "record payload has {} values, {:?} on this torus needs {}",
            values.len(),
            kind,
            kind.len(torus)
        )));
    }
    let header = FieldHeader {
        d: torus.d(),
        l: torus.l(),
        kind,
        component,
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads one record; `Ok(None)` at clean end-of-stream.
pub fn read_record<R: BufRead>(r: &mut R) -> Result<Option<(FieldHeader, Vec<f64>)>> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    let header: FieldHeader = serde_json::from_str(line.trim_end())?;
    let torus = header.torus()?;
    let n = header.kind.len(torus);
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Some((header, values)))
}

pub fn write_height<W: Write>(w: &mut W, f: &HeightField) -> Result<()> {
    write_record(w, f.torus(), FieldKind::Height, None, f.values())
}

pub fn write_gradient<W: Write>(w: &mut W, f: &GradientField) -> Result<()> {
    write_record(w, f.torus(), FieldKind::Gradient, None, f.values())
}

pub fn write_conductance<W: Write>(w: &mut W, f: &ConductanceField) -> Result<()> {
    write_record(w, f.torus(), FieldKind::Conductance, None, f.values())
}

pub fn read_gradient<R: BufRead>(r: &mut R) -> Result<Option<GradientField>> {
    match read_record(r)? {
        None => Ok(None),
        Some((h, values)) => {
            if h.kind != FieldKind::Gradient {
                return Err(Error::invalid(format!("expected gradient record, got {:?}", h.kind)));
            }
            Ok(Some(GradientField::new(h.torus()?, values)?))
        }
    }
}

pub fn read_conductance<R: BufRead>(r: &mut R) -> Result<Option<ConductanceField>> {
    match read_record(r)? {
        None => Ok(None),
        Some((h, values)) => {
            if h.kind != FieldKind::Conductance {
                return Err(Error::invalid(format!(
                    "expected conductance record, got {:?}",
                    h.kind
                )));
            }
            Ok(Some(ConductanceField::new(h.torus()?, values)?))
        }
    }
}

/// Writes per-site data as `x0,x1,x2,value` (site fields) or
/// `x0,x1,x2,dir,value` (edge fields) for plotting.
pub fn export_csv<W: Write>(w: &mut W, torus: Torus, kind: FieldKind, values: &[f64]) -> Result<()> {
    if values.len() != kind.len(torus) {
        return Err(Error::invalid("csv payload length mismatch"));
    }
    let per_edge = values.len() == torus.edges();
    if per_edge {
        writeln!(w, "x0,x1,x2,dir,value")?;
    } else {
        writeln!(w, "x0,x1,x2,value")?;
    }
    for s in 0..torus.sites() {
        let c = torus.coords(s);
        if per_edge {
            for j in 0..torus.d() {
                writeln!(w, "{},{},{},{},{}", c[0], c[1], c[2], j, values[s * torus.d() + j])?;
            }
        } else {
            writeln!(w, "{},{},{},{}", c[0], c[1], c[2], values[s])?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn record_round_trip_and_concatenation() {
        let t = Torus::new(2, 3).unwrap();
        let eta = GradientField::new(t, (0..t.edges()).map(|e| e as f64 * 0.5 - 3.0).collect()).unwrap();
        let kap = ConductanceField::constant(t, 2.5).unwrap();
        let mut buf = Vec::new();
        write_gradient(&mut buf, &eta).unwrap();
        write_conductance(&mut buf, &kap).unwrap();
        let mut r = Cursor::new(buf);
        let back_eta = read_gradient(&mut r).unwrap().unwrap();
        assert_eq!(back_eta.values(), eta.values());
        let back_kap = read_conductance(&mut r).unwrap().unwrap();
        assert_eq!(back_kap.values(), kap.values());
        assert!(read_gradient(&mut r).unwrap().is_none());
    }

    #[test]
    fn header_is_a_json_line() {
        let t = Torus::new(1, 4).unwrap();
        let mut buf = Vec::new();
        write_record(&mut buf, t, FieldKind::Site, Some(1), &[0.0, 1.0, 2.0, 3.0]).unwrap();
        let nl = buf.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&buf[..nl]).unwrap();
        assert_eq!(header["d"], 1);
        assert_eq!(header["L"], 4);
        assert_eq!(header["kind"], "site");
        assert_eq!(header["component"], 1);
        assert_eq!(buf.len(), nl + 1 + 4 * 8);
        // payload is little-endian f64
        assert_eq!(
            f64::from_le_bytes(buf[nl + 1 + 8..nl + 1 + 16].try_into().unwrap()),
            1.0
        );
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let t = Torus::new(1, 3).unwrap();
        let mut buf = Vec::new();
        write_height(&mut buf, &HeightField::zeros(t)).unwrap();
        let mut r = Cursor::new(buf);
        assert!(read_gradient(&mut r).is_err());
    }

    #[test]
    fn truncated_payload_errors() {
        let t = Torus::new(1, 3).unwrap();
        let mut buf = Vec::new();
        write_height(&mut buf, &HeightField::zeros(t)).unwrap();
        buf.truncate(buf.len() - 4);
        let mut r = Cursor::new(buf);
        assert!(read_record(&mut r).is_err());
    }

    #[test]
    fn csv_has_one_row_per_edge() {
        let t = Torus::new(2, 2).unwrap();
        let mut out = Vec::new();
        export_csv(&mut out, t, FieldKind::Conductance, &vec![1.0; t.edges()]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1 + t.edges());
        assert!(text.starts_with("x0,x1,x2,dir,value"));
    }
}
