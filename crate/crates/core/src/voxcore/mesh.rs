//! Indexed triangle meshes, OFF parsing and OBJ output.

use std::fmt::Write as _;

use super::GeometryError;

pub type Point3 = [f64; 3];

/// An indexed triangle mesh. Coordinates are in meters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        let mesh = TriMesh {
            vertices,
            triangles,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i >= n) {
                return Err(GeometryError::InvalidMesh(format!(
                    "triangle {t} references vertex {bad} but mesh has {n} vertices"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(GeometryError::InvalidMesh(format!(
                    "triangle {t} repeats a vertex index: {tri:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Axis-aligned bounding box over all vertices, `None` for a vertex-less mesh.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (
                [lo[0].min(v[0]), lo[1].min(v[1]), lo[2].min(v[2])],
                [hi[0].max(v[0]), hi[1].max(v[1]), hi[2].max(v[2])],
            )
        }))
    }

    /// Signed enclosed volume (positive for outward-facing counter-clockwise winding).
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i]);
                (a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
                    + a[2] * (b[0] * c[1] - b[1] * c[0]))
                    / 6.0
            })
            .sum()
    }

    /// Undirected edges with the number of triangles using each one.
    pub fn edge_use_counts(&self) -> std::collections::HashMap<(usize, usize), usize> {
        let mut counts = std::collections::HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// V - E + F over the vertices actually referenced by triangles.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        let e = self.edge_use_counts().len() as i64;
        v - e + self.triangles.len() as i64
    }

    /// True when every edge is shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        !self.triangles.is_empty() && self.edge_use_counts().values().all(|&c| c == 2)
    }

    pub fn to_obj(&self) -> String {
        let mut out = String::with_capacity(32 * (self.vertices.len() + self.triangles.len()));
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        out
    }
}

/// Parses an OFF document. Faces with more than three vertices are
/// fan-triangulated from their first vertex.
pub fn parse_off(text: &str) -> Result<TriMesh, GeometryError> {
    // (line number, content) with comments and blank lines stripped
    let mut lines = text.lines().enumerate().filter_map(|(i, raw)| {
        let content = raw.split('#').next().unwrap_or("").trim();
        (!content.is_empty()).then_some((i + 1, content))
    });

    let err = |line: usize, msg: String| GeometryError::Off { line, msg };

    let (header_line, header) = lines
        .next()
        .ok_or_else(|| err(1, "empty document, expected \"OFF\" header".into()))?;
    // Some exporters put the counts on the header line ("OFF 8 6 0").
    let counts_inline = match header.strip_prefix("OFF") {
        Some(rest) if rest.is_empty() => None,
        Some(rest) if rest.starts_with(char::is_whitespace) => Some(rest.trim()),
        _ => {
            return Err(err(
                header_line,
                format!("expected \"OFF\" header, found {header:?}"),
            ))
        }
    };

    let (count_line, counts) = match counts_inline {
        Some(c) => (header_line, c),
        None => lines
            .next()
            .ok_or_else(|| err(header_line + 1, "missing vertex/face counts".into()))?,
    };
    let nums = parse_usizes(counts).map_err(|m| err(count_line, m))?;
    if nums.len() < 2 {
        return Err(err(count_line, format!("expected 3 counts, found {counts:?}")));
    }
    let (nv, nf) = (nums[0], nums[1]);

    let mut vertices = Vec::with_capacity(nv);
    for k in 0..nv {
        let (ln, content) = lines.next().ok_or_else(|| {
            err(
                count_line,
                format!("declared {nv} vertices but document ends after {k}"),
            )
        })?;
        let coords: Vec<f64> = content
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| err(ln, format!("bad vertex coordinate: {e}")))?;
        if coords.len() < 3 {
            return Err(err(ln, format!("vertex needs 3 coordinates, found {}", coords.len())));
        }
        vertices.push([coords[0], coords[1], coords[2]]);
    }

    let mut triangles = Vec::with_capacity(nf);
    for k in 0..nf {
        let (ln, content) = lines.next().ok_or_else(|| {
            err(
                count_line,
                format!("declared {nf} faces but document ends after {k}"),
            )
        })?;
        let idx = parse_usizes(content).map_err(|m| err(ln, m))?;
        let Some((&n, rest)) = idx.split_first() else {
            return Err(err(ln, "empty face record".into()));
        };
        if n < 3 || rest.len() < n {
            return Err(err(ln, format!("face declares {n} vertices but lists {}", rest.len())));
        }
        let poly = &rest[..n];
        if let Some(&bad) = poly.iter().find(|&&i| i >= nv) {
            return Err(err(ln, format!("vertex index {bad} out of range (0..{nv})")));
        }
        for w in 1..n - 1 {
            let tri = [poly[0], poly[w], poly[w + 1]];
            if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
                triangles.push(tri);
            }
        }
    }

    if let Some((ln, extra)) = lines.next() {
        return Err(err(
            ln,
            format!("unexpected content after {nv} vertices and {nf} faces: {extra:?}"),
        ));
    }

    Ok(TriMesh {
        vertices,
        triangles,
    })
}

fn parse_usizes(s: &str) -> Result<Vec<usize>, String> {
    s.split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|e| format!("bad integer {t:?}: {e}")))
        .collect()
}

/// Unit cube `[0,1]^3` with outward quads, as an OFF document.
#[cfg(test)]
pub(crate) const UNIT_CUBE_OFF: &str = "OFF
8 6 0
0 0 0
1 0 0
1 1 0
0 1 0
0 0 1
1 0 1
1 1 1
0 1 1
4 0 3 2 1
4 4 5 6 7
4 0 1 5 4
4 2 3 7 6
4 1 2 6 5
4 0 4 7 3
";
