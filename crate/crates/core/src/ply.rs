//! PLY point-cloud files with a per-point instance id.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ObjectPointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlyFormat {
    #[default]
    BinaryLittleEndian,
    Ascii,
}

/// A point with the instance it belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub position: [f64; 3],
    pub instance: u32,
}

pub fn cloud_points(cloud: &ObjectPointCloud) -> Vec<LabeledPoint> {
    cloud
        .points
        .iter()
        .map(|p| LabeledPoint {
            position: *p,
            instance: cloud.instance_id,
        })
        .collect()
}

pub fn write_ply(w: &mut impl Write, points: &[LabeledPoint], format: PlyFormat) -> std::io::Result<()> {
    let tag = match format {
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
        PlyFormat::Ascii => "ascii",
    };
    write!(
        w,
        "ply\nformat {tag} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nproperty uint instance\nend_header\n",
        points.len()
    )?;
    match format {
        PlyFormat::BinaryLittleEndian => {
            let mut buf = Vec::with_capacity(points.len() * 28);
            for p in points {
                for c in p.position {
                    buf.extend_from_slice(&c.to_le_bytes());
                }
                buf.extend_from_slice(&p.instance.to_le_bytes());
            }
            w.write_all(&buf)
        }
        PlyFormat::Ascii => {
            for p in points {
                // shortest representation that parses back to the same value
                writeln!(w, "{:?} {:?} {:?} {}", p.position[0], p.position[1], p.position[2], p.instance)?;
            }
            Ok(())
        }
    }
}

pub fn save_ply(path: &Path, points: &[LabeledPoint], format: PlyFormat) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_ply(&mut w, points, format)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy)]
enum Scalar {
    F32,
    F64,
    I32,
    U32,
    U8,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "uchar" | "uint8" => Scalar::U8,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::F32 | Scalar::I32 | Scalar::U32 => 4,
            Scalar::F64 => 8,
            Scalar::U8 => 1,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Scalar::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b.try_into().unwrap()),
            Scalar::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::U8 => b[0] as f64,
        }
    }
}

/// Reads vertex positions and instance ids written by [`write_ply`] or any
/// PLY with `x`, `y`, `z` and an optional `instance` vertex property.
pub fn read_ply(r: impl Read, path: &Path) -> Result<Vec<LabeledPoint>> {
    let bad = |m: String| Error::parse(path, m);
    let mut r = BufReader::new(r);
    let mut line = String::new();
    let next = |r: &mut BufReader<_>, line: &mut String| -> Result<()> {
        line.clear();
        let n = r.read_line(line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::parse(path, "unexpected end of header"));
        }
        Ok(())
    };
    next(&mut r, &mut line)?;
    if line.trim() != "ply" {
        return Err(bad("missing ply magic".into()));
    }
    let mut binary = None;
    let mut count = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    loop {
        next(&mut r, &mut line)?;
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", other, _] => return Err(bad(format!("unsupported format {other}"))),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| bad(format!("bad vertex count {n}")))?)
            }
            ["element", ..] if count.is_some() => return Err(bad("only vertex elements are supported".into())),
            ["property", ty, name] => {
                let s = Scalar::parse(ty).ok_or_else(|| bad(format!("unsupported property type {ty}")))?;
                props.push((name.to_string(), s));
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => return Err(bad(format!("unrecognized header line {:?}", line.trim()))),
        }
    }
    let binary = binary.ok_or_else(|| bad("missing format line".into()))?;
    let count = count.ok_or_else(|| bad("missing vertex element".into()))?;
    let find = |n: &str| props.iter().position(|p| p.0 == n);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(bad("vertex needs x, y and z".into())),
    };
    let ii = find("instance");
    let mut out = Vec::with_capacity(count);
    let mut vals = vec![0.0; props.len()];
    if binary {
        let stride: usize = props.iter().map(|p| p.1.size()).sum();
        let mut buf = vec![0u8; stride];
        for _ in 0..count {
            r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
            let mut off = 0;
            for (v, (_, s)) in vals.iter_mut().zip(&props) {
                *v = s.decode(&buf[off..off + s.size()]);
                off += s.size();
            }
            out.push(LabeledPoint {
                position: [vals[ix], vals[iy], vals[iz]],
                instance: ii.map_or(0, |i| vals[i] as u32),
            });
        }
    } else {
        for k in 0..count {
            next(&mut r, &mut line).map_err(|_| bad(format!("missing vertex {k}")))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != props.len() {
                return Err(bad(format!("vertex {k} has {} values", f.len())));
            }
            for (v, s) in vals.iter_mut().zip(&f) {
                *v = s.parse().map_err(|_| bad(format!("vertex {k}: bad number {s}")))?;
            }
            out.push(LabeledPoint {
                position: [vals[ix], vals[iy], vals[iz]],
                instance: ii.map_or(0, |i| vals[i] as u32),
            });
        }
    }
    Ok(out)
}

pub fn load_ply(path: &Path) -> Result<Vec<LabeledPoint>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply(file, path)
}
