//! Scan loading (XYZ and ASCII PLY), uniform downsampling, and the plain-text
//! transform file format.
//!
//! Transform files hold one line per scan:
//!
//! ```text
//! idx r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2
//! ```
//!
//! i.e. the scan index followed by the row-major 3x4 matrix `[R | t]`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::{Error, Point, Result, RigidTransform};

/// Tolerance used when accepting rotation blocks read from disk.
pub const FILE_ROTATION_TOLERANCE: f64 = 1e-6;

/// One scan: an ordered list of points and an identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub id: String,
    pub points: Vec<Point>,
}

impl PointSet {
    pub fn new(id: impl Into<String>, points: Vec<Point>) -> Self {
        PointSet {
            id: id.into(),
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn scan_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn parse_f64(path: &Path, line: usize, token: &str) -> Result<f64> {
    let x: f64 = token
        .parse()
        .map_err(|_| Error::parse(path, line, format!("not a number: {token:?}")))?;
    if !x.is_finite() {
        return Err(Error::parse(path, line, format!("non-finite value {token:?}")));
    }
    Ok(x)
}

/// Whitespace-separated `x y z` rows; extra columns are ignored, blank lines
/// and `#` comments skipped.
pub fn load_xyz(path: impl AsRef<Path>) -> Result<PointSet> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut points = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().take(3).collect();
        if fields.len() < 3 {
            return Err(Error::parse(
                path,
                n + 1,
                format!("expected 3 coordinates, found {}", fields.len()),
            ));
        }
        let x = parse_f64(path, n + 1, fields[0])?;
        let y = parse_f64(path, n + 1, fields[1])?;
        let z = parse_f64(path, n + 1, fields[2])?;
        points.push(Vector3::new(x, y, z));
    }
    if points.is_empty() {
        return Err(Error::format(path, "point cloud is empty"));
    }
    Ok(PointSet::new(scan_id(path), points))
}

struct PlyElement {
    name: String,
    count: usize,
    /// Property names; list properties are recorded but cannot appear in the vertex element.
    properties: Vec<(String, bool)>,
}

/// ASCII PLY reader for the vertex positions. Other vertex properties and
/// any further elements are skipped.
pub fn load_ply_ascii(path: impl AsRef<Path>) -> Result<PointSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    // Only the header must be text for the binary check to work.
    let text = String::from_utf8_lossy(&bytes);
    let mut lines = text.lines().enumerate();

    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(Error::format(path, "missing 'ply' magic line")),
    }

    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    let mut header_done = false;
    for (n, raw) in lines.by_ref() {
        let line = raw.trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                match tok.next() {
                    Some("ascii") => {}
                    Some(other) if other.starts_with("binary") => {
                        return Err(Error::format(
                            path,
                            format!("binary PLY ({other}) is not supported; convert to ASCII"),
                        ));
                    }
                    other => {
                        return Err(Error::parse(path, n + 1, format!("unknown PLY format {other:?}")))
                    }
                }
                saw_format = true;
            }
            Some("element") => {
                let name = tok.next().unwrap_or_default().to_string();
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::parse(path, n + 1, "bad element count"))?;
                elements.push(PlyElement {
                    name,
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, n + 1, "property before any element"))?;
                let is_list = tok.next() == Some("list");
                let name = tok.last().unwrap_or_default().to_string();
                element.properties.push((name, is_list));
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => {
                return Err(Error::parse(path, n + 1, format!("unexpected header keyword {other:?}")))
            }
        }
    }
    if !saw_format {
        return Err(Error::format(path, "missing 'format' line"));
    }
    if !header_done {
        return Err(Error::format(path, "missing 'end_header'"));
    }

    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::format(path, "no vertex element"))?;
    let vertex = &elements[vertex_pos];
    if vertex.properties.iter().any(|(_, list)| *list) {
        return Err(Error::format(path, "list properties in the vertex element are not supported"));
    }
    let column = |axis: &str| {
        vertex
            .properties
            .iter()
            .position(|(name, _)| name == axis)
            .ok_or_else(|| Error::format(path, format!("vertex element has no '{axis}' property")))
    };
    let (cx, cy, cz) = (column("x")?, column("y")?, column("z")?);

    // Skip the bodies of elements declared before the vertices.
    let mut data = lines.filter(|(_, l)| !l.trim().is_empty());
    for element in &elements[..vertex_pos] {
        for _ in 0..element.count {
            if data.next().is_none() {
                return Err(Error::format(path, format!("truncated '{}' element", element.name)));
            }
        }
    }

    let mut points = Vec::with_capacity(vertex.count);
    for read in 0..vertex.count {
        let Some((n, line)) = data.next() else {
            return Err(Error::format(
                path,
                format!("truncated vertex list: header declares {}, found {read}", vertex.count),
            ));
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < vertex.properties.len() {
            return Err(Error::parse(
                path,
                n + 1,
                format!("expected {} vertex properties, found {}", vertex.properties.len(), fields.len()),
            ));
        }
        points.push(Vector3::new(
            parse_f64(path, n + 1, fields[cx])?,
            parse_f64(path, n + 1, fields[cy])?,
            parse_f64(path, n + 1, fields[cz])?,
        ));
    }
    if points.is_empty() {
        return Err(Error::format(path, "point cloud is empty"));
    }
    Ok(PointSet::new(scan_id(path), points))
}

/// Dispatches on the file extension: `.ply` goes to the PLY reader, anything else is XYZ.
pub fn load_scan(path: impl AsRef<Path>) -> Result<PointSet> {
    let path = path.as_ref();
    let is_ply = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("ply"));
    if is_ply {
        load_ply_ascii(path)
    } else {
        load_xyz(path)
    }
}

/// Indices `round(j * n / count)` for `j in 0..count`, with `count = min(target, n)`.
/// Rounding is half-up and computed in integers, so the result is exact.
pub fn stride_indices(n: usize, target: usize) -> Vec<usize> {
    let count = target.min(n);
    if count == 0 {
        return Vec::new();
    }
    let mut out: Vec<usize> = (0..count)
        .map(|j| {
            let num = 2 * j as u128 * n as u128 + count as u128;
            (num / (2 * count as u128)) as usize
        })
        .collect();
    out.dedup();
    out
}

/// Deterministic index-stride subsampling; keeps every point when `n <= target`.
pub fn downsample_uniform(ps: &PointSet, target: usize) -> PointSet {
    let points = stride_indices(ps.len(), target.max(1))
        .into_iter()
        .map(|i| ps.points[i])
        .collect();
    PointSet::new(ps.id.clone(), points)
}

/// Reads a transform file. A missing file yields `expected` identity transforms.
pub fn load_transforms(path: impl AsRef<Path>, expected: usize) -> Result<Vec<RigidTransform>> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(vec![RigidTransform::identity(); expected]);
    }
    let text = read_text(path)?;
    let mut entries: Vec<(usize, RigidTransform, usize)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 13 {
            return Err(Error::parse(
                path,
                n + 1,
                format!("expected 13 fields (index + 3x4 matrix), found {}", fields.len()),
            ));
        }
        let idx: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(path, n + 1, format!("bad scan index {:?}", fields[0])))?;
        let mut m = [0.0; 12];
        for (slot, tok) in m.iter_mut().zip(&fields[1..]) {
            *slot = parse_f64(path, n + 1, tok)?;
        }
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vector3::new(m[3], m[7], m[11]);
        let t = RigidTransform::with_tolerance(rotation, translation, FILE_ROTATION_TOLERANCE)
            .map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
        if let Some((_, _, first)) = entries.iter().find(|(i, _, _)| *i == idx) {
            return Err(Error::parse(
                path,
                n + 1,
                format!("duplicate scan index {idx} (first seen on line {first})"),
            ));
        }
        entries.push((idx, t, n + 1));
    }
    entries.sort_by_key(|(i, _, _)| *i);
    if entries.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} transforms, found {}", entries.len()),
        ));
    }
    if let Some((pos, (idx, _, _))) = entries.iter().enumerate().find(|(pos, (i, _, _))| pos != i) {
        return Err(Error::format(path, format!("scan index {pos} missing (next index is {idx})")));
    }
    Ok(entries.into_iter().map(|(_, t, _)| t).collect())
}

/// Formats transforms in the file format, 17 significant digits per value.
pub fn format_transforms(transforms: &[RigidTransform]) -> String {
    let mut out = String::new();
    for (idx, t) in transforms.iter().enumerate() {
        let r = t.rotation();
        let tr = t.translation();
        write!(out, "{idx}").unwrap();
        for row in 0..3 {
            for col in 0..3 {
                write!(out, " {:.16e}", r[(row, col)]).unwrap();
            }
            write!(out, " {:.16e}", tr[row]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn save_transforms(path: impl AsRef<Path>, transforms: &[RigidTransform]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_transforms(transforms)).map_err(|e| Error::io(path, e))
}

/// Writes a scan as XYZ with round-trip precision.
pub fn save_xyz(path: impl AsRef<Path>, ps: &PointSet) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(ps.len() * 72);
    for p in &ps.points {
        writeln!(out, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{retract, Twist};
    use proptest::prelude::*;
    use std::path::PathBuf;
    use tempfile::TempDir;

    fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn xyz_basic() {
        let dir = TempDir::new().unwrap();
        let ps = load_xyz(write(&dir, "a.xyz", "0 0 0\n1 2 3\n")).unwrap();
        assert_eq!(ps.points, vec![Vector3::zeros(), Vector3::new(1.0, 2.0, 3.0)]);
        assert_eq!(ps.id, "a");
    }

    #[test]
    fn xyz_comments_blank_and_extra_columns() {
        let dir = TempDir::new().unwrap();
        let ps = load_xyz(write(&dir, "b.xyz", "# comment\n\n1 2 3 255 0 0\n")).unwrap();
        assert_eq!(ps.points, vec![Vector3::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn xyz_malformed_row() {
        let dir = TempDir::new().unwrap();
        match load_xyz(write(&dir, "c.xyz", "1 2\n")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        match load_xyz(write(&dir, "d.xyz", "1 2 3\n1 x 3\n")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn xyz_empty_and_missing() {
        let dir = TempDir::new().unwrap();
        assert!(matches!(load_xyz(write(&dir, "e.xyz", "# nothing\n")), Err(Error::Format { .. })));
        assert!(matches!(load_xyz(dir.path().join("nope.xyz")), Err(Error::Io { .. })));
    }

    const PLY_HEAD: &str = "ply\nformat ascii 1.0\ncomment test\n";

    #[test]
    fn ply_minimal() {
        let dir = TempDir::new().unwrap();
        let body = format!(
            "{PLY_HEAD}element vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n"
        );
        let ps = load_ply_ascii(write(&dir, "m.ply", &body)).unwrap();
        assert_eq!(ps.points, vec![Vector3::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn ply_extra_properties_and_elements() {
        let dir = TempDir::new().unwrap();
        let body = format!(
            "{PLY_HEAD}element vertex 2\nproperty float nx\nproperty float x\nproperty float y\n\
             property float z\nproperty float ny\nproperty float nz\n\
             element face 1\nproperty list uchar int vertex_indices\nend_header\n\
             9 1 2 3 9 9\n9 4 5 6 9 9\n3 0 1 1\n"
        );
        let ps = load_scan(write(&dir, "n.PLY", &body)).unwrap();
        assert_eq!(ps.points, vec![Vector3::new(1.0, 2.0, 3.0), Vector3::new(4.0, 5.0, 6.0)]);
    }

    #[test]
    fn ply_truncated() {
        let dir = TempDir::new().unwrap();
        let body = format!(
            "{PLY_HEAD}element vertex 5\nproperty float x\nproperty float y\nproperty float z\nend_header\n\
             1 2 3\n4 5 6\n7 8 9\n"
        );
        let err = load_ply_ascii(write(&dir, "t.ply", &body)).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn ply_rejects_binary_and_missing_axes() {
        let dir = TempDir::new().unwrap();
        let body = "ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nend_header\n";
        let err = load_ply_ascii(write(&dir, "b.ply", body)).unwrap_err();
        assert!(err.to_string().contains("binary"), "{err}");
        let body = format!("{PLY_HEAD}element vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n");
        let err = load_ply_ascii(write(&dir, "xy.ply", &body)).unwrap_err();
        assert!(err.to_string().contains("'z'"), "{err}");
    }

    fn cloud(n: usize) -> PointSet {
        PointSet::new("s", (0..n).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect())
    }

    #[test]
    fn downsample_exact_stride() {
        let out = downsample_uniform(&cloud(4000), 2000);
        assert_eq!(out.len(), 2000);
        assert!(out.points.iter().enumerate().all(|(j, p)| p.x == (2 * j) as f64));
    }

    #[test]
    fn downsample_never_upsamples() {
        let ps = cloud(100);
        assert_eq!(downsample_uniform(&ps, 2000), ps);
    }

    #[test]
    fn downsample_rounding_rule() {
        // Oracle: recompute round(j * 2001 / 2000) in floating point and collect distinct indices.
        let mut expected: Vec<usize> = (0..2000)
            .map(|j| (j as f64 * 2001.0 / 2000.0 + 0.5).floor() as usize)
            .collect();
        expected.dedup();
        let out = downsample_uniform(&cloud(2001), 2000);
        let got: Vec<usize> = out.points.iter().map(|p| p.x as usize).collect();
        assert_eq!(got, expected);
        assert_eq!(got.len(), 2000);
        // j = 1000 lands exactly on a half: 1000.5 rounds up.
        assert_eq!(got[1000], 1001);
    }

    #[test]
    fn transforms_identity_line() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "t.txt", "0 1 0 0 0 0 1 0 0 0 0 1 0\n");
        assert_eq!(load_transforms(&p, 1).unwrap(), vec![RigidTransform::identity()]);
    }

    #[test]
    fn transforms_absent_file_defaults_to_identity() {
        let dir = TempDir::new().unwrap();
        let got = load_transforms(dir.path().join("absent.txt"), 3).unwrap();
        assert_eq!(got, vec![RigidTransform::identity(); 3]);
    }

    #[test]
    fn transforms_errors() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "f.txt", "0 1 0 0 0 0 1 0 0 0 0 1\n");
        assert!(matches!(load_transforms(&p, 1), Err(Error::Parse { line: 1, .. })));
        let p = write(
            &dir,
            "d.txt",
            "0 1 0 0 0 0 1 0 0 0 0 1 0\n0 1 0 0 0 0 1 0 0 0 0 1 0\n",
        );
        let err = load_transforms(&p, 2).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
        let p = write(&dir, "r.txt", "0 1 0.001 0 0 0 1 0 0 0 0 1 0\n");
        assert!(load_transforms(&p, 1).is_err());
        let p = write(&dir, "c.txt", "0 1 0 0 0 0 1 0 0 0 0 1 0\n");
        assert!(load_transforms(&p, 2).is_err());
    }

    #[test]
    fn transforms_sorted_by_index() {
        let dir = TempDir::new().unwrap();
        let p = write(
            &dir,
            "s.txt",
            "1 1 0 0 5 0 1 0 0 0 0 1 0\n0 1 0 0 0 0 1 0 0 0 0 1 0\n",
        );
        let got = load_transforms(&p, 2).unwrap();
        assert_eq!(got[0], RigidTransform::identity());
        assert_eq!(*got[1].translation(), Vector3::new(5.0, 0.0, 0.0));
    }

    #[test]
    fn save_to_unwritable_path() {
        let dir = TempDir::new().unwrap();
        let p = dir.path().join("no/such/dir/t.txt");
        assert!(matches!(save_transforms(p, &[RigidTransform::identity()]), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn transforms_round_trip_bit_exact(
            raw in prop::collection::vec(prop::array::uniform6(-3.0f64..3.0), 1..8)
        ) {
            let ts: Vec<RigidTransform> = raw
                .iter()
                .map(|x| retract(&Twist::new(Vector3::new(x[0], x[1], x[2]), Vector3::new(x[3], x[4], x[5]) * 100.0)))
                .collect();
            let dir = TempDir::new().unwrap();
            let p = dir.path().join("rt.txt");
            save_transforms(&p, &ts).unwrap();
            prop_assert_eq!(load_transforms(&p, ts.len()).unwrap(), ts);
        }

        #[test]
        fn downsample_is_ordered_and_bounded(n in 0usize..5000, target in 1usize..3000) {
            let idx = stride_indices(n, target);
            prop_assert_eq!(idx.len(), target.min(n));
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(idx.iter().all(|&i| i < n));
        }
    }
}
