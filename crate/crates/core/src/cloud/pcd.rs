//! Reader and writer for the PCD subset used by datasets: `x y z` plus an
//! optional `time` field, 4-byte floats, `ascii` or little-endian `binary` data.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use super::PointCloud;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PcdEncoding {
    Ascii,
    Binary,
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

/// Serializes a cloud to PCD bytes. Coordinates are stored as `f32`.
pub fn encode(cloud: &PointCloud, encoding: PcdEncoding) -> Vec<u8> {
    let has_time = cloud.per_point_time.is_some();
    let n = cloud.len();
    let mut out = Vec::with_capacity(256 + n * 16);
    let (fields, size, ty, count) = if has_time {
        ("x y z time", "4 4 4 4", "F F F F", "1 1 1 1")
    } else {
        ("x y z", "4 4 4", "F F F", "1 1 1")
    };
    let data = match encoding {
        PcdEncoding::Ascii => "ascii",
        PcdEncoding::Binary => "binary",
    };
    // writing into a Vec cannot fail
    let _ = write!(
        out,
        "# .PCD v0.7 - Point Cloud Data file format\nVERSION 0.7\nFIELDS {fields}\nSIZE {size}\nTYPE {ty}\nCOUNT {count}\nWIDTH {n}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {n}\nDATA {data}\n"
    );
    for (i, p) in cloud.points.iter().enumerate() {
        let mut vals = [p.x as f32, p.y as f32, p.z as f32, 0.0];
        if let Some(ts) = &cloud.per_point_time {
            vals[3] = ts[i] as f32;
        }
        let vals = &vals[..if has_time { 4 } else { 3 }];
        match encoding {
            PcdEncoding::Binary => {
                for v in vals {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            PcdEncoding::Ascii => {
                let line: Vec<String> = vals.iter().map(|v| format!("{v}")).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
    }
    out
}

pub fn write_pcd(path: impl AsRef<Path>, cloud: &PointCloud, encoding: PcdEncoding) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(cloud, encoding)).map_err(|e| Error::io(path, e))
}

pub fn read_pcd(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Parses PCD bytes. Unknown 4-byte float fields are skipped.
pub fn decode(bytes: &[u8]) -> Result<PointCloud> {
    let mut pos = 0;
    let mut fields: Vec<String> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    let mut types: Vec<String> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut width = None;
    let mut height = None;
    let mut points = None;
    let encoding;
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|e| pos + e)
            .ok_or_else(|| parse_err("header ended before DATA line"))?;
        let line = std::str::from_utf8(&bytes[pos..end])
            .map_err(|_| parse_err("header is not UTF-8"))?
            .trim();
        pos = end + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or_default().to_ascii_uppercase();
        let rest: Vec<&str> = parts.collect();
        let parse_usizes = |xs: &[&str]| -> Result<Vec<usize>> {
            xs.iter()
                .map(|s| s.parse::<usize>().map_err(|_| parse_err(format!("bad integer '{s}' in {key}"))))
                .collect()
        };
        match key.as_str() {
            "VERSION" | "VIEWPOINT" => {}
            "FIELDS" => fields = rest.iter().map(|s| s.to_string()).collect(),
            "SIZE" => sizes = parse_usizes(&rest)?,
            "TYPE" => types = rest.iter().map(|s| s.to_string()).collect(),
            "COUNT" => counts = parse_usizes(&rest)?,
            "WIDTH" => width = parse_usizes(&rest)?.first().copied(),
            "HEIGHT" => height = parse_usizes(&rest)?.first().copied(),
            "POINTS" => points = parse_usizes(&rest)?.first().copied(),
            "DATA" => {
                encoding = match rest.first().copied() {
                    Some("ascii") => PcdEncoding::Ascii,
                    Some("binary") => PcdEncoding::Binary,
                    other => return Err(parse_err(format!("unsupported DATA mode {other:?}"))),
                };
                break;
            }
            other => return Err(parse_err(format!("unknown header key '{other}'"))),
        }
    }

    let nf = fields.len();
    if counts.is_empty() {
        counts = vec![1; nf];
    }
    if sizes.len() != nf || types.len() != nf || counts.len() != nf {
        return Err(parse_err("FIELDS/SIZE/TYPE/COUNT lengths differ"));
    }
    for i in 0..nf {
        if sizes[i] != 4 || types[i] != "F" || counts[i] != 1 {
            return Err(parse_err(format!("field '{}' must be a single 4-byte float", fields[i])));
        }
    }
    let col = |name: &str| fields.iter().position(|f| f == name);
    let (ix, iy, iz) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(parse_err("fields x, y and z are required")),
    };
    let it = col("time");
    let width = width.ok_or_else(|| parse_err("missing WIDTH"))?;
    let height = height.unwrap_or(1);
    let n = points.unwrap_or(width * height);
    if n != width * height {
        return Err(parse_err(format!("POINTS {n} != WIDTH*HEIGHT {}", width * height)));
    }

    let mut rows: Vec<Vec<f32>> = Vec::with_capacity(n);
    let body = &bytes[pos..];
    match encoding {
        PcdEncoding::Binary => {
            let stride = 4 * nf;
            if body.len() < n * stride {
                return Err(parse_err(format!("binary payload has {} bytes, need {}", body.len(), n * stride)));
            }
            for r in 0..n {
                let row = (0..nf)
                    .map(|f| {
                        let o = r * stride + 4 * f;
                        f32::from_le_bytes([body[o], body[o + 1], body[o + 2], body[o + 3]])
                    })
                    .collect();
                rows.push(row);
            }
        }
        PcdEncoding::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| parse_err("ascii payload is not UTF-8"))?;
            for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
                let row: Vec<f32> = line
                    .split_whitespace()
                    .map(|s| s.parse::<f32>().map_err(|_| parse_err(format!("bad float '{s}'"))))
                    .collect::<Result<_>>()?;
                if row.len() != nf {
                    return Err(parse_err(format!("row has {} values, expected {nf}", row.len())));
                }
                rows.push(row);
            }
            if rows.len() != n {
                return Err(parse_err(format!("found {} rows, header says {n}", rows.len())));
            }
        }
    }

    let points = rows
        .iter()
        .map(|r| Vector3::new(r[ix] as f64, r[iy] as f64, r[iz] as f64))
        .collect();
    let per_point_time = it.map(|t| rows.iter().map(|r| r[t] as f64).collect());
    let cloud = PointCloud {
        points,
        per_point_time,
        ..Default::default()
    };
    if !cloud.is_valid() {
        return Err(parse_err("non-finite coordinates or decreasing per-point times"));
    }
    Ok(cloud)
}
