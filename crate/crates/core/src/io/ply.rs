//! PLY point clouds: ASCII or binary little-endian, `x y z` plus optional `red green blue`.
//!
//! The reader accepts any scalar property types and skips unknown properties and
//! elements (including list properties); the writer emits `float` coordinates and
//! `uchar` colors.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: ScalarType },
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

fn data_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Data(format!("{}: {msg}", path.display()))
}

pub fn read_ply(path: &Path) -> Result<PointCloud<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply_from(&mut BufReader::new(file)).map_err(|e| match e {
        Error::Data(msg) => data_err(path, msg),
        other => other,
    })
}

pub fn read_ply_from<R: BufRead>(reader: &mut R) -> Result<PointCloud<f64>> {
    let mut line = String::new();
    let next_line = |reader: &mut R, line: &mut String| -> Result<()> {
        line.clear();
        let n = reader
            .read_line(line)
            .map_err(|e| Error::Data(format!("read error: {e}")))?;
        if n == 0 {
            return Err(Error::Data("unexpected end of PLY header".into()));
        }
        Ok(())
    };
    next_line(reader, &mut line)?;
    if line.trim() != "ply" {
        return Err(Error::Data("missing `ply` magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        next_line(reader, &mut line)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(Error::Data(format!("unsupported PLY format `{other}`"))),
                })
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::Data(format!("bad element count `{count}`")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, _name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::Data("property before element".into()))?;
                let parse = |t: &str| {
                    ScalarType::parse(t).ok_or_else(|| Error::Data(format!("unknown type `{t}`")))
                };
                el.properties.push(Property::List {
                    count: parse(count)?,
                    item: parse(item)?,
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::Data("property before element".into()))?;
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| Error::Data(format!("unknown type `{ty}`")))?;
                el.properties.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            _ => {
                return Err(Error::Data(format!(
                    "unrecognized header line `{}`",
                    line.trim()
                )))
            }
        }
    }
    let format = format.ok_or_else(|| Error::Data("missing format line".into()))?;
    let vertex = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::Data("no vertex element".into()))?;
    let props = &elements[vertex].properties;
    let find = |n: &str| {
        props
            .iter()
            .position(|p| matches!(p, Property::Scalar { name, .. } if name == n))
    };
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(Error::Data("vertex element lacks x/y/z".into())),
    };
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };

    let mut points = Vec::with_capacity(elements[vertex].count);
    let mut colors = rgb.map(|_| Vec::with_capacity(elements[vertex].count));
    let mut values: Vec<f64> = Vec::new();
    let mut tokens: Vec<String> = Vec::new();

    for (ei, el) in elements.iter().enumerate() {
        for _ in 0..el.count {
            values.clear();
            match format {
                PlyFormat::Ascii => {
                    line.clear();
                    if reader
                        .read_line(&mut line)
                        .map_err(|e| Error::Data(e.to_string()))?
                        == 0
                    {
                        return Err(Error::Data(format!("truncated `{}` element", el.name)));
                    }
                    tokens.clear();
                    tokens.extend(line.split_whitespace().map(str::to_owned));
                    let mut t = tokens.iter();
                    let mut next = || -> Result<f64> {
                        t.next()
                            .ok_or_else(|| Error::Data("short ASCII row".into()))?
                            .parse::<f64>()
                            .map_err(|_| Error::Data("bad ASCII number".into()))
                    };
                    for p in &el.properties {
                        match p {
                            Property::Scalar { ty, .. } => {
                                let v = next()?;
                                values.push(if *ty == ScalarType::F32 {
                                    v as f32 as f64
                                } else {
                                    v
                                });
                            }
                            Property::List { .. } => {
                                let n = next()? as usize;
                                for _ in 0..n {
                                    next()?;
                                }
                                values.push(f64::NAN);
                            }
                        }
                    }
                }
                PlyFormat::BinaryLittleEndian => {
                    let mut buf = [0u8; 8];
                    for p in &el.properties {
                        match *p {
                            Property::Scalar { ty, .. } => {
                                read_exact(reader, &mut buf[..ty.size()])?;
                                values.push(ty.decode(&buf));
                            }
                            Property::List { count, item } => {
                                read_exact(reader, &mut buf[..count.size()])?;
                                let n = count.decode(&buf) as usize;
                                let mut skip = vec![0u8; n * item.size()];
                                read_exact(reader, &mut skip)?;
                                values.push(f64::NAN);
                            }
                        }
                    }
                }
            }
            if ei == vertex {
                points.push(Vector3::new(values[ix], values[iy], values[iz]));
                if let (Some(out), Some([r, g, b])) = (colors.as_mut(), rgb) {
                    out.push([values[r] as u8, values[g] as u8, values[b] as u8]);
                }
            }
        }
        if ei == vertex && elements[ei + 1..].is_empty() {
            break;
        }
    }
    let cloud = PointCloud { points, colors };
    cloud.validate()?;
    Ok(cloud)
}

fn read_exact<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<()> {
    reader
        .read_exact(buf)
        .map_err(|_| Error::Data("truncated binary PLY body".into()))
}

/// Writes `cloud` with `float` coordinates (and `uchar` colors when present).
pub fn write_ply(path: &Path, cloud: &PointCloud<f64>, format: PlyFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ply_to(&mut w, cloud, format).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_ply_to<W: Write>(
    w: &mut W,
    cloud: &PointCloud<f64>,
    format: PlyFormat,
) -> std::io::Result<()> {
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply\nformat {fmt} 1.0\nelement vertex {}", cloud.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    if cloud.colors.is_some() {
        writeln!(
            w,
            "property uchar red\nproperty uchar green\nproperty uchar blue"
        )?;
    }
    writeln!(w, "end_header")?;
    for (i, p) in cloud.points.iter().enumerate() {
        let xyz = [p.x as f32, p.y as f32, p.z as f32];
        let color = cloud.colors.as_ref().map(|c| c[i]);
        match format {
            PlyFormat::Ascii => {
                write!(w, "{} {} {}", xyz[0], xyz[1], xyz[2])?;
                if let Some(c) = color {
                    write!(w, " {} {} {}", c[0], c[1], c[2])?;
                }
                writeln!(w)?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in xyz {
                    w.write_all(&v.to_le_bytes())?;
                }
                if let Some(c) = color {
                    w.write_all(&c)?;
                }
            }
        }
    }
    Ok(())
}
