//! Point cloud I/O: whitespace-separated ASCII tables and ASCII PLY.
//!
//! Rows carry 3, 4, 6 or 7 columns: `x y z`, optionally followed by unit
//! normals `nx ny nz`, optionally terminated by the sensor depth `d` the
//! point was observed at (used by the stereo noise model). Mixed column
//! counts within one file are rejected.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    /// Outward unit normals, if the file carried them.
    pub normals: Option<Vec<Vector3<f64>>>,
    /// Sensor z-depth each point was observed at, if carried.
    pub depths: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Point3<f64>>) -> Self {
        Self {
            points,
            normals: None,
            depths: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = BufReader::new(file);
    let name = path.display().to_string();

    let mut first = String::new();
    reader
        .read_line(&mut first)
        .map_err(|e| Error::io(&name, e))?;
    if first.trim() == "ply" {
        parse_ply(reader, &name)
    } else {
        parse_ascii_table(first, reader, &name)
    }
}

fn parse_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

fn parse_row(path: &str, line_no: usize, line: &str) -> Result<Option<Vec<f64>>> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let mut vals = Vec::with_capacity(7);
    for tok in trimmed.split_whitespace() {
        let v: f64 = tok
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("not a number: {tok:?}")))?;
        if !v.is_finite() {
            return Err(parse_err(path, line_no, format!("non-finite value {v}")));
        }
        vals.push(v);
    }
    Ok(Some(vals))
}

fn parse_ascii_table(
    first: String,
    reader: impl BufRead,
    name: &str,
) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut depths = Vec::new();
    let mut width: Option<usize> = None;

    let mut handle = |line_no: usize, line: &str| -> Result<()> {
        let Some(vals) = parse_row(name, line_no, line)? else {
            return Ok(());
        };
        match width {
            None => {
                if !matches!(vals.len(), 3 | 4 | 6 | 7) {
                    return Err(parse_err(
                        name,
                        line_no,
                        format!("expected 3, 4, 6 or 7 columns, got {}", vals.len()),
                    ));
                }
                width = Some(vals.len());
            }
            Some(w) if w != vals.len() => {
                return Err(parse_err(
                    name,
                    line_no,
                    format!("expected {w} columns as in earlier rows, got {}", vals.len()),
                ));
            }
            _ => {}
        }
        points.push(Point3::new(vals[0], vals[1], vals[2]));
        match vals.len() {
            4 => depths.push(vals[3]),
            6 => normals.push(Vector3::new(vals[3], vals[4], vals[5])),
            7 => {
                normals.push(Vector3::new(vals[3], vals[4], vals[5]));
                depths.push(vals[6]);
            }
            _ => {}
        }
        Ok(())
    };

    handle(1, &first)?;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(name, e))?;
        handle(i + 2, &line)?;
    }

    Ok(PointCloud {
        points,
        normals: (!normals.is_empty()).then_some(normals),
        depths: (!depths.is_empty()).then_some(depths),
    })
}

fn parse_ply(reader: impl BufRead, name: &str) -> Result<PointCloud> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 2, l));
    let mut vertex_count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex_element = false;

    // header (the "ply" line was already consumed)
    loop {
        let Some((line_no, line)) = lines.next() else {
            return Err(parse_err(name, 0, "unexpected end of PLY header"));
        };
        let line = line.map_err(|e| Error::io(name, e))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(parse_err(
                    name,
                    line_no,
                    format!("only ascii PLY is supported, got format {other:?}"),
                ));
            }
            ["comment", ..] => {}
            ["element", "vertex", n] => {
                vertex_count = Some(n.parse().map_err(|_| {
                    parse_err(name, line_no, format!("bad vertex count {n:?}"))
                })?);
                in_vertex_element = true;
            }
            ["element", ..] => in_vertex_element = false,
            ["property", _ty, pname] if in_vertex_element => props.push(pname.to_string()),
            ["property", ..] => {}
            ["end_header"] => break,
            [] => {}
            _ => {
                return Err(parse_err(name, line_no, format!("unrecognized header line {line:?}")));
            }
        }
    }

    let count =
        vertex_count.ok_or_else(|| parse_err(name, 0, "PLY header lacks a vertex element"))?;
    let col = |p: &str| props.iter().position(|q| q == p);
    let (Some(ix), Some(iy), Some(iz)) = (col("x"), col("y"), col("z")) else {
        return Err(parse_err(name, 0, "PLY vertex element lacks x/y/z properties"));
    };
    let normal_cols = match (col("nx"), col("ny"), col("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };
    let depth_col = col("d").or_else(|| col("depth"));

    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::new();
    let mut depths = Vec::new();
    for _ in 0..count {
        let Some((line_no, line)) = lines.next() else {
            return Err(parse_err(
                name,
                0,
                format!("PLY ends after {} of {count} vertices", points.len()),
            ));
        };
        let line = line.map_err(|e| Error::io(name, e))?;
        let Some(vals) = parse_row(name, line_no, &line)? else {
            return Err(parse_err(name, line_no, "blank line inside vertex data"));
        };
        if vals.len() < props.len() {
            return Err(parse_err(
                name,
                line_no,
                format!("expected {} values, got {}", props.len(), vals.len()),
            ));
        }
        points.push(Point3::new(vals[ix], vals[iy], vals[iz]));
        if let Some((a, b, c)) = normal_cols {
            normals.push(Vector3::new(vals[a], vals[b], vals[c]));
        }
        if let Some(d) = depth_col {
            depths.push(vals[d]);
        }
    }

    Ok(PointCloud {
        points,
        normals: (!normals.is_empty()).then_some(normals),
        depths: (!depths.is_empty()).then_some(depths),
    })
}

/// Writes the ASCII table form, with whichever optional columns are present.
pub fn save_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let name = path.display().to_string();
    if let Some(n) = &cloud.normals {
        if n.len() != cloud.points.len() {
            return Err(Error::DimensionMismatch {
                expected: cloud.points.len(),
                actual: n.len(),
            });
        }
    }
    if let Some(d) = &cloud.depths {
        if d.len() != cloud.points.len() {
            return Err(Error::DimensionMismatch {
                expected: cloud.points.len(),
                actual: d.len(),
            });
        }
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(&name, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        for (i, p) in cloud.points.iter().enumerate() {
            write!(w, "{} {} {}", p.x, p.y, p.z)?;
            if let Some(n) = &cloud.normals {
                write!(w, " {} {} {}", n[i].x, n[i].y, n[i].z)?;
            }
            if let Some(d) = &cloud.depths {
                write!(w, " {}", d[i])?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(&name, e))
}

/// Writes an ASCII PLY (positions only), for viewers that do not read bare
/// coordinate tables.
pub fn save_ply(path: impl AsRef<Path>, points: &[Point3<f64>]) -> Result<()> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| Error::io(&name, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "ply")?;
        writeln!(w, "format ascii 1.0")?;
        writeln!(w, "element vertex {}", points.len())?;
        writeln!(w, "property float x")?;
        writeln!(w, "property float y")?;
        writeln!(w, "property float z")?;
        writeln!(w, "end_header")?;
        for p in points {
            writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(&name, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write as _;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_bare_xyz() {
        let f = write_temp("1 2 3\n4 5 6\n\n# comment\n7 8 9\n");
        let c = load_cloud(f.path()).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.points[1], Point3::new(4.0, 5.0, 6.0));
        assert!(c.normals.is_none());
        assert!(c.depths.is_none());
    }

    #[test]
    fn parses_xyz_with_depth() {
        let f = write_temp("0 0 5 5.2\n1 0 5 5.3\n");
        let c = load_cloud(f.path()).unwrap();
        assert_eq!(c.depths.as_ref().unwrap(), &vec![5.2, 5.3]);
        assert!(c.normals.is_none());
    }

    #[test]
    fn parses_xyz_with_normals() {
        let f = write_temp("0 0 0 1 0 0\n1 1 1 0 0 -1\n");
        let c = load_cloud(f.path()).unwrap();
        let n = c.normals.unwrap();
        assert_eq!(n[1], Vector3::new(0.0, 0.0, -1.0));
        assert!(c.depths.is_none());
    }

    #[test]
    fn parses_xyz_normals_depth() {
        let f = write_temp("0 0 9 0 1 0 9.01\n");
        let c = load_cloud(f.path()).unwrap();
        assert!(c.normals.is_some());
        assert_eq!(c.depths.unwrap()[0], 9.01);
    }

    #[test]
    fn rejects_mixed_column_counts() {
        let f = write_temp("1 2 3\n1 2 3 4 5 6\n");
        let err = load_cloud(f.path()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn rejects_garbage_token_with_line_number() {
        let f = write_temp("1 2 3\n1 two 3\n");
        match load_cloud(f.path()).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("two"));
            }
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn rejects_non_finite_values() {
        let f = write_temp("1 2 nan\n");
        assert!(matches!(load_cloud(f.path()).unwrap_err(), Error::Parse { .. }));
    }

    #[test]
    fn parses_ascii_ply_with_normals() {
        let f = write_temp(
            "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\n\
             property float x\nproperty float y\nproperty float z\n\
             property float nx\nproperty float ny\nproperty float nz\n\
             end_header\n0 0 0 1 0 0\n1 2 3 0 -1 0\n",
        );
        let c = load_cloud(f.path()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.points[1], Point3::new(1.0, 2.0, 3.0));
        assert_eq!(c.normals.unwrap()[1], Vector3::new(0.0, -1.0, 0.0));
    }

    #[test]
    fn rejects_binary_ply() {
        let f = write_temp(
            "ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n",
        );
        match load_cloud(f.path()).unwrap_err() {
            Error::Parse { message, .. } => assert!(message.contains("ascii")),
            other => panic!("expected Parse, got {other:?}"),
        }
    }

    #[test]
    fn rejects_truncated_ply() {
        let f = write_temp(
            "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\n\
             property float y\nproperty float z\nend_header\n0 0 0\n",
        );
        assert!(matches!(load_cloud(f.path()).unwrap_err(), Error::Parse { .. }));
    }

    #[test]
    fn round_trip_through_ascii_table() {
        let cloud = PointCloud {
            points: vec![Point3::new(0.25, -1.5, 3.0), Point3::new(1.0, 2.0, -0.125)],
            normals: Some(vec![Vector3::x(), Vector3::z()]),
            depths: Some(vec![3.0, 4.5]),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        save_cloud(&path, &cloud).unwrap();
        let back = load_cloud(&path).unwrap();
        assert_eq!(back, cloud);
    }

    #[test]
    fn ply_writer_output_parses_back() {
        let pts = vec![Point3::new(1.0, 2.0, 3.0), Point3::new(-1.0, 0.5, 0.0)];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        save_ply(&path, &pts).unwrap();
        let back = load_cloud(&path).unwrap();
        assert_eq!(back.points, pts);
    }
}
