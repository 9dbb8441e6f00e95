//! Binary field files: a one-line JSON header
//! `{"d":2,"n":16,"kind":"node"}` followed by little-endian `f64` values in
//! row-major order (edges as `site * d + direction`).

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{EdgeField, NodeField, TorusLattice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Node,
    Edge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub d: usize,
    pub n: usize,
    pub kind: FieldKind,
}

#[derive(Debug, Clone)]
pub enum Field {
    Node(NodeField),
    Edge(EdgeField),
}

pub fn write_field(mut out: impl Write, header: FieldHeader, values: &[f64]) -> Result<()> {
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

pub fn write_node_field(path: &Path, field: &NodeField) -> Result<()> {
    let lat = field.lattice();
    let header = FieldHeader {
        d: lat.dim(),
        n: lat.side(),
        kind: FieldKind::Node,
    };
    write_field(std::fs::File::create(path)?, header, field.values())
}

pub fn write_edge_field(path: &Path, field: &EdgeField) -> Result<()> {
    let lat = field.lattice();
    let header = FieldHeader {
        d: lat.dim(),
        n: lat.side(),
        kind: FieldKind::Edge,
    };
    write_field(std::fs::File::create(path)?, header, field.values())
}

pub fn read_field(input: impl Read) -> Result<Field> {
    let mut reader = BufReader::new(input);
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Format("missing header line".into()));
    }
    let header: FieldHeader = serde_json::from_slice(&line).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    let lat = TorusLattice::new(header.d, header.n)?;
    let count = match header.kind {
        FieldKind::Node => lat.num_sites(),
        FieldKind::Edge => lat.num_edges(),
    };
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(Error::Format(format!(
            "expected {} payload bytes, found {}",
            count * 8,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight")))
        .collect();
    Ok(match header.kind {
        FieldKind::Node => Field::Node(NodeField::from_values(lat, values)?),
        FieldKind::Edge => Field::Edge(EdgeField::from_values(lat, values)?),
    })
}

pub fn read_field_file(path: &Path) -> Result<Field> {
    read_field(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_node_and_edge() {
        let lat = TorusLattice::new(2, 3).unwrap();
        let node = NodeField::from_fn(lat, |x| x as f64 * 0.1 - 0.35);
        let mut buf = Vec::new();
        write_field(
            &mut buf,
            FieldHeader {
                d: 2,
                n: 3,
                kind: FieldKind::Node,
            },
            node.values(),
        )
        .unwrap();
        assert!(buf.starts_with(b"{\"d\":2,\"n\":3,\"kind\":\"node\"}\n"));
        assert_eq!(buf.len(), 28 + 9 * 8);
        let Field::Node(back) = read_field(buf.as_slice()).unwrap() else {
            panic!("kind")
        };
        assert_eq!(back.values(), node.values());

        let edge = EdgeField::from_values(lat, (0..18).map(|k| 1.0 + k as f64).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.field");
        write_edge_field(&path, &edge).unwrap();
        let Field::Edge(back) = read_field_file(&path).unwrap() else {
            panic!("kind")
        };
        assert_eq!(back.values(), edge.values());
    }

    #[test]
    fn little_endian_payload() {
        let mut buf = Vec::new();
        write_field(
            &mut buf,
            FieldHeader {
                d: 1,
                n: 1,
                kind: FieldKind::Node,
            },
            &[1.0],
        )
        .unwrap();
        let payload = &buf[buf.len() - 8..];
        assert_eq!(payload, &[0, 0, 0, 0, 0, 0, 0xf0, 0x3f]);
    }

    #[test]
    fn rejects_malformed() {
        assert!(matches!(read_field(&b"no newline"[..]), Err(Error::Format(_))));
        assert!(matches!(read_field(&b"{\"d\":1}\n"[..]), Err(Error::Format(_))));
        let mut buf = Vec::new();
        write_field(
            &mut buf,
            FieldHeader {
                d: 1,
                n: 4,
                kind: FieldKind::Node,
            },
            &[1.0, 2.0],
        )
        .unwrap();
        assert!(matches!(read_field(buf.as_slice()), Err(Error::Format(_))));
    }
}
