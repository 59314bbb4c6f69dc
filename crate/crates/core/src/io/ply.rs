//! Minimal PLY reader/writer for point clouds: x/y/z plus optional normals
//! and 8-bit RGB, in ASCII or binary little-endian form.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq)]
enum ScalarType {
    F32,
    F64,
    U8,
    I8,
    U16,
    I16,
    U32,
    I32,
}

impl ScalarType {
    fn parse(s: &str) -> Option<ScalarType> {
        Some(match s {
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            "uchar" | "uint8" => ScalarType::U8,
            "char" | "int8" => ScalarType::I8,
            "ushort" | "uint16" => ScalarType::U16,
            "short" | "int16" => ScalarType::I16,
            "uint" | "uint32" => ScalarType::U32,
            "int" | "int32" => ScalarType::I32,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::U8 | ScalarType::I8 => 1,
            ScalarType::U16 | ScalarType::I16 => 2,
            ScalarType::U32 | ScalarType::I32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read_le(self, bytes: &[u8]) -> f64 {
        match self {
            ScalarType::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            ScalarType::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
            ScalarType::U8 => bytes[0] as f64,
            ScalarType::I8 => bytes[0] as i8 as f64,
            ScalarType::U16 => u16::from_le_bytes(bytes[..2].try_into().unwrap()) as f64,
            ScalarType::I16 => i16::from_le_bytes(bytes[..2].try_into().unwrap()) as f64,
            ScalarType::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            ScalarType::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
        }
    }
}

#[derive(Debug, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
}

/// Reads a point cloud from a PLY file. Elements after `vertex` are ignored;
/// list properties inside the vertex element are rejected.
pub fn load_ply(path: &Path) -> Result<PointCloud> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);

    let mut line = String::new();
    let mut read_line = |reader: &mut BufReader<std::fs::File>| -> Result<String> {
        line.clear();
        reader
            .read_line(&mut line)
            .map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            return Err(Error::format(path, "unexpected end of header"));
        }
        Ok(line.trim_end().to_string())
    };

    if read_line(&mut reader)? != "ply" {
        return Err(Error::format(path, "missing 'ply' magic"));
    }
    let mut format = None;
    let mut vertex_count: Option<usize> = None;
    let mut properties: Vec<(String, ScalarType)> = Vec::new();
    let mut in_vertex_element = false;
    loop {
        let l = read_line(&mut reader)?;
        let tokens: Vec<&str> = l.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    other => {
                        return Err(Error::format(path, format!("unsupported format {other}")))
                    }
                });
            }
            ["element", "vertex", n] => {
                vertex_count = Some(
                    n.parse()
                        .map_err(|_| Error::format(path, "bad vertex count"))?,
                );
                in_vertex_element = true;
            }
            ["element", _, _] => {
                in_vertex_element = false;
            }
            ["property", "list", ..] => {
                if in_vertex_element {
                    return Err(Error::format(path, "list properties on vertices unsupported"));
                }
            }
            ["property", ty, name] => {
                if in_vertex_element {
                    let ty = ScalarType::parse(ty)
                        .ok_or_else(|| Error::format(path, format!("unknown type {ty}")))?;
                    properties.push((name.to_string(), ty));
                }
            }
            _ => return Err(Error::format(path, format!("unrecognized header line: {l}"))),
        }
    }
    let format = format.ok_or_else(|| Error::format(path, "missing format line"))?;
    let count = vertex_count.ok_or_else(|| Error::format(path, "missing vertex element"))?;

    let index_of = |name: &str| properties.iter().position(|(n, _)| n == name);
    let (ix, iy, iz) = match (index_of("x"), index_of("y"), index_of("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::format(path, "vertex element lacks x/y/z")),
    };
    let normal_idx = match (index_of("nx"), index_of("ny"), index_of("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };
    let color_idx = match (index_of("red"), index_of("green"), index_of("blue")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };

    let mut positions = Vec::with_capacity(count);
    let mut normals = normal_idx.map(|_| Vec::with_capacity(count));
    let mut colors = color_idx.map(|_| Vec::with_capacity(count));

    let mut push_row = |row: &[f64]| {
        positions.push(Vector3::new(row[ix], row[iy], row[iz]));
        if let (Some((a, b, c)), Some(ns)) = (normal_idx, normals.as_mut()) {
            ns.push(Vector3::new(row[a], row[b], row[c]));
        }
        if let (Some((a, b, c)), Some(cs)) = (color_idx, colors.as_mut()) {
            cs.push([row[a] as u8, row[b] as u8, row[c] as u8]);
        }
    };

    match format {
        Format::Ascii => {
            let mut row = vec![0.0; properties.len()];
            let mut text = String::new();
            reader
                .read_to_string(&mut text)
                .map_err(|e| Error::io(path, e))?;
            let mut values = text.split_whitespace();
            for _ in 0..count {
                for slot in row.iter_mut() {
                    let tok = values
                        .next()
                        .ok_or_else(|| Error::format(path, "truncated vertex data"))?;
                    *slot = tok
                        .parse()
                        .map_err(|_| Error::format(path, format!("bad vertex value {tok}")))?;
                }
                push_row(&row);
            }
        }
        Format::BinaryLe => {
            let stride: usize = properties.iter().map(|(_, t)| t.size()).sum();
            let mut buf = vec![0u8; stride * count];
            reader
                .read_exact(&mut buf)
                .map_err(|e| Error::io(path, e))?;
            let mut row = vec![0.0; properties.len()];
            for r in 0..count {
                let mut offset = r * stride;
                for (slot, (_, ty)) in row.iter_mut().zip(&properties) {
                    *slot = ty.read_le(&buf[offset..]);
                    offset += ty.size();
                }
                push_row(&row);
            }
        }
    }

    let cloud = PointCloud {
        positions,
        normals,
        colors,
    };
    cloud.validate()?;
    Ok(cloud)
}

/// Writes a point cloud as binary little-endian PLY with float32 positions,
/// optional float32 normals, and optional uchar colors.
pub fn save_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", cloud.len()));
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if cloud.normals.is_some() {
        header.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    if cloud.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes()).map_err(|e| Error::io(path, e))?;

    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        for v in [p.x, p.y, p.z] {
            w.write_all(&(v as f32).to_le_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
        if let Some(ns) = &cloud.normals {
            let n = ns[i];
            for v in [n.x, n.y, n.z] {
                w.write_all(&(v as f32).to_le_bytes())
                    .map_err(|e| Error::io(path, e))?;
            }
        }
        if let Some(cs) = &cloud.colors {
            w.write_all(&cs[i]).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
