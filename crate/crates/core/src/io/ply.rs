//! PLY reading (ascii and binary) and writing (binary little-endian, `f64`).
//!
//! Written clouds carry `x y z` and `feat_0 … feat_{F-1}` as `double`
//! properties, and an optional `comment label <id>` header line. On read,
//! `feat_*` properties become features when present; otherwise every
//! non-coordinate scalar property does, in header order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLe,
    BinaryBe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::format(format!("unknown PLY type {other}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], big_endian: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let mut a = [0u8; $n];
                a.copy_from_slice(&b[..$n]);
                if big_endian {
                    <$t>::from_be_bytes(a) as f64
                } else {
                    <$t>::from_le_bytes(a) as f64
                }
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => num!(i16, 2),
            Scalar::U16 => num!(u16, 2),
            Scalar::I32 => num!(i32, 4),
            Scalar::U32 => num!(u32, 4),
            Scalar::F32 => num!(f32, 4),
            Scalar::F64 => num!(f64, 8),
        }
    }
}

#[derive(Debug)]
struct Header {
    encoding: Encoding,
    vertex_count: usize,
    properties: Vec<(String, Scalar)>,
    label: Option<usize>,
}

fn parse_header<R: BufRead>(r: &mut R) -> Result<Header> {
    let mut line = String::new();
    let mut next_line = |line: &mut String| -> Result<()> {
        line.clear();
        if r.read_line(line)? == 0 {
            return Err(Error::format("PLY header ended unexpectedly"));
        }
        Ok(())
    };
    next_line(&mut line)?;
    if line.trim_end() != "ply" {
        return Err(Error::format("missing 'ply' magic line"));
    }
    let mut encoding = None;
    let mut vertex_count = None;
    let mut properties = Vec::new();
    let mut label = None;
    let mut in_vertex = false;
    let mut seen_vertex = false;
    loop {
        next_line(&mut line)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _version] => {
                encoding = Some(match *fmt {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::BinaryLe,
                    "binary_big_endian" => Encoding::BinaryBe,
                    other => return Err(Error::format(format!("unknown PLY format {other}"))),
                });
            }
            ["comment", "label", id] => {
                label = Some(id.parse().map_err(|_| Error::format("bad label comment"))?);
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count: usize = count.parse().map_err(|_| Error::format("bad element count"))?;
                if *name == "vertex" {
                    if seen_vertex {
                        return Err(Error::format("duplicate vertex element"));
                    }
                    vertex_count = Some(count);
                    in_vertex = true;
                    seen_vertex = true;
                } else {
                    if !seen_vertex {
                        return Err(Error::format("elements before 'vertex' are not supported"));
                    }
                    in_vertex = false;
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::format("list properties on vertices are not supported"));
            }
            ["property", ty, name] if in_vertex => properties.push((name.to_string(), Scalar::parse(ty)?)),
            ["property", ..] => {}
            _ => return Err(Error::format(format!("malformed header line: {}", line.trim_end()))),
        }
    }
    Ok(Header {
        encoding: encoding.ok_or_else(|| Error::format("missing format line"))?,
        vertex_count: vertex_count.ok_or_else(|| Error::format("missing vertex element"))?,
        properties,
        label,
    })
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_ply_from(BufReader::new(File::open(path)?))
}

pub fn read_ply_from<R: BufRead>(mut r: R) -> Result<PointCloud> {
    let header = parse_header(&mut r)?;
    let col = |name: &str| header.properties.iter().position(|(n, _)| n == name);
    let (xi, yi, zi) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(Error::format("vertex element lacks x/y/z")),
    };
    let mut feat_cols: Vec<(usize, usize)> = header
        .properties
        .iter()
        .enumerate()
        .filter_map(|(i, (n, _))| n.strip_prefix("feat_").and_then(|k| k.parse().ok()).map(|k| (k, i)))
        .collect();
    feat_cols.sort_unstable();
    let feat_cols: Vec<usize> = if feat_cols.is_empty() {
        (0..header.properties.len())
            .filter(|&i| i != xi && i != yi && i != zi)
            .collect()
    } else {
        if feat_cols.iter().enumerate().any(|(k, &(idx, _))| k != idx) {
            return Err(Error::format("feat_* properties are not contiguous from feat_0"));
        }
        feat_cols.into_iter().map(|(_, i)| i).collect()
    };

    let n = header.vertex_count;
    let np = header.properties.len();
    let mut rows = vec![0.0; n * np];
    match header.encoding {
        Encoding::Ascii => {
            let mut line = String::new();
            for v in 0..n {
                line.clear();
                if r.read_line(&mut line)? == 0 {
                    return Err(Error::format(format!("truncated payload: {v} of {n} vertices")));
                }
                let vals: Vec<&str> = line.split_whitespace().collect();
                if vals.len() < np {
                    return Err(Error::format(format!("vertex {v} has {} of {np} values", vals.len())));
                }
                for (p, s) in vals.iter().take(np).enumerate() {
                    rows[v * np + p] = s
                        .parse()
                        .map_err(|_| Error::format(format!("bad number '{s}' in vertex {v}")))?;
                }
            }
        }
        Encoding::BinaryLe | Encoding::BinaryBe => {
            let big = header.encoding == Encoding::BinaryBe;
            let stride: usize = header.properties.iter().map(|(_, t)| t.size()).sum();
            let mut buf = vec![0u8; stride];
            for v in 0..n {
                r.read_exact(&mut buf).map_err(|e| match e.kind() {
                    std::io::ErrorKind::UnexpectedEof => Error::format(format!("truncated payload: {v} of {n} vertices")),
                    _ => Error::Io(e),
                })?;
                let mut off = 0;
                for (p, (_, t)) in header.properties.iter().enumerate() {
                    rows[v * np + p] = t.decode(&buf[off..], big);
                    off += t.size();
                }
            }
        }
    }
    let positions = (0..n)
        .map(|v| [rows[v * np + xi], rows[v * np + yi], rows[v * np + zi]])
        .collect();
    let f = feat_cols.len();
    let mut feats = Vec::with_capacity(n * f);
    for v in 0..n {
        feats.extend(feat_cols.iter().map(|&c| rows[v * np + c]));
    }
    let mut cloud = PointCloud::new(positions, Tensor::new(vec![n, f], feats)?)?;
    cloud.label = header.label;
    Ok(cloud)
}

/// Extra per-vertex `uchar` properties written after the features.
pub struct ExtraColumns<'a> {
    pub names: &'a [&'a str],
    pub values: &'a [Vec<u8>],
}

pub fn write_ply(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    write_ply_with(cloud, None, path)
}

pub fn write_ply_with(cloud: &PointCloud, extra: Option<ExtraColumns<'_>>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply_to(cloud, extra, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_ply_to<W: Write>(cloud: &PointCloud, extra: Option<ExtraColumns<'_>>, w: &mut W) -> Result<()> {
    cloud.validate()?;
    let n = cloud.len();
    if let Some(e) = &extra {
        if e.names.len() != e.values.len() || e.values.iter().any(|v| v.len() != n) {
            return Err(Error::dim("extra PLY columns do not match the vertex count"));
        }
    }
    let f = cloud.feature_dim();
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    if let Some(label) = cloud.label {
        header.push_str(&format!("comment label {label}\n"));
    }
    header.push_str(&format!("element vertex {n}\n"));
    for axis in ["x", "y", "z"] {
        header.push_str(&format!("property double {axis}\n"));
    }
    for k in 0..f {
        header.push_str(&format!("property double feat_{k}\n"));
    }
    if let Some(e) = &extra {
        for name in e.names {
            header.push_str(&format!("property uchar {name}\n"));
        }
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;
    for i in 0..n {
        for v in cloud.positions[i] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in cloud.features.row(i) {
            w.write_all(&v.to_le_bytes())?;
        }
        if let Some(e) = &extra {
            for col in e.values {
                w.write_all(&[col[i]])?;
            }
        }
    }
    Ok(())
}

/// Parses a PLY file already held in memory.
pub fn read_ply_bytes(bytes: &[u8]) -> Result<PointCloud> {
    read_ply_from(BufReader::new(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn encode(cloud: &PointCloud) -> Vec<u8> {
        let mut buf = Vec::new();
        write_ply_to(cloud, None, &mut buf).unwrap();
        buf
    }

    #[test]
    fn binary_round_trip_is_bitwise() {
        let cloud = PointCloud::new(
            vec![[0.1, -2.5, 3.0e-300], [f64::MAX, 0.0, -0.0]],
            Tensor::from_rows(&[[1.0, 2.0], [std::f64::consts::PI, -1e-17]]).unwrap(),
        )
        .unwrap()
        .with_label(4);
        let back = read_ply_bytes(&encode(&cloud)).unwrap();
        assert_eq!(back.label, Some(4));
        for (a, b) in back.positions.iter().flatten().zip(cloud.positions.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in back.features.data().iter().zip(cloud.features.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn empty_features_round_trip() {
        let cloud = PointCloud::from_positions(vec![[1.0, 2.0, 3.0]]);
        let back = read_ply_bytes(&encode(&cloud)).unwrap();
        assert_eq!(back, cloud);
    }

    #[test]
    fn ascii_with_extra_properties() {
        // Hand-written: three float coordinates and three float attributes.
        let text = "ply\nformat ascii 1.0\ncomment written by hand\nelement vertex 2\n\
                    property float x\nproperty float y\nproperty float z\n\
                    property float nx\nproperty float ny\nproperty float nz\n\
                    element face 0\nproperty list uchar int vertex_indices\nend_header\n\
                    0.5 1 -2 0 0 1\n3 4 5 0.25 0.5 0.75\n";
        let cloud = read_ply_bytes(text.as_bytes()).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.feature_dim(), 3);
        assert_eq!(cloud.positions[0], [0.5, 1.0, -2.0]);
        assert_eq!(cloud.features.row(1), &[0.25, 0.5, 0.75]);
    }

    #[test]
    fn malformed_header() {
        assert!(read_ply_bytes(b"plx\n").is_err());
        assert!(read_ply_bytes(b"ply\nelement vertex 1\nproperty float x\nend_header\n").is_err());
        assert!(read_ply_bytes(b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n").is_err());
    }

    #[test]
    fn truncated_payload() {
        let cloud = PointCloud::from_positions(vec![[1.0, 2.0, 3.0]; 3]);
        let bytes = encode(&cloud);
        let err = read_ply_bytes(&bytes[..bytes.len() - 5]).unwrap_err();
        assert!(matches!(err, Error::Format(m) if m.contains("truncated")));
        let ascii =
            b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        assert!(read_ply_bytes(ascii).is_err());
    }

    #[test]
    fn big_endian_shorts() {
        let mut bytes = b"ply\nformat binary_big_endian 1.0\nelement vertex 1\nproperty short x\nproperty short y\nproperty short z\nproperty uchar intensity\nend_header\n".to_vec();
        for v in [1i16, -2, 300] {
            bytes.extend(v.to_be_bytes());
        }
        bytes.push(200);
        let cloud = read_ply_bytes(&bytes).unwrap();
        assert_eq!(cloud.positions[0], [1.0, -2.0, 300.0]);
        assert_eq!(cloud.features.data(), &[200.0]);
    }

    proptest! {
        #[test]
        fn write_read_write_is_stable(
            pts in prop::collection::vec((any::<f64>(), any::<f64>(), any::<f64>(), any::<f64>()), 1..20)
        ) {
            let pts: Vec<_> = pts.into_iter().filter(|(a, b, c, d)| [a, b, c, d].iter().all(|v| v.is_finite())).collect();
            prop_assume!(!pts.is_empty());
            let n = pts.len();
            let cloud = PointCloud::new(
                pts.iter().map(|&(a, b, c, _)| [a, b, c]).collect(),
                Tensor::new(vec![n, 1], pts.iter().map(|p| p.3).collect()).unwrap(),
            ).unwrap();
            let bytes = encode(&cloud);
            let back = read_ply_bytes(&bytes).unwrap();
            prop_assert_eq!(encode(&back), bytes);
        }
    }
}
