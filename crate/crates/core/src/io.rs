//! File formats: legacy VTK (ASCII), a plain-text mesh/field format and the
//! monitor CSV. Every writer goes through [`write_atomic`].

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::flow::MonitorRow;
use crate::mesh::{BoundaryEdge, TriMesh};
use crate::operators::ScalarField;

/// Column header of `monitors.csv`.
pub const MONITOR_COLUMNS: [&str; 8] = ["step", "t", "supV", "min_ut", "max_ut", "mass", "energy", "dissipation"];

/// Write `contents` to a sibling temp file, sync it, then rename over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Shortest round-trip representation, in exponent form outside
/// `[1e-4, 1e15)`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Legacy VTK unstructured grid with point scalars.
pub fn vtk_string(mesh: &TriMesh, title: &str, fields: &[(&str, &ScalarField)]) -> String {
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    // the title line must be a single line of at most 255 characters
    let title: String = title.chars().filter(|c| *c != '\n').take(255).collect();
    s.push_str(&title);
    s.push('\n');
    s.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {} double", mesh.nodes.len());
    for (i, p) in mesh.nodes.iter().enumerate() {
        let z = fields.first().map_or(0.0, |(_, f)| f.values[i]);
        let _ = writeln!(s, "{} {} {}", fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(z));
    }
    let nt = mesh.triangles.len();
    let _ = writeln!(s, "CELLS {} {}", nt, 4 * nt);
    for t in &mesh.triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        s.push_str("5\n");
    }
    if !fields.is_empty() {
        let _ = writeln!(s, "POINT_DATA {}", mesh.nodes.len());
        for (name, f) in fields {
            let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
            for v in &f.values {
                s.push_str(&fmt_f64(*v));
                s.push('\n');
            }
        }
    }
    s
}

pub fn mesh_to_text(mesh: &TriMesh) -> String {
    let mut s = String::from("msflow-mesh 1\n");
    let _ = writeln!(s, "h {}", fmt_f64(mesh.h_target));
    let _ = writeln!(s, "area {}", fmt_f64(mesh.domain_area));
    let _ = writeln!(s, "perimeter {}", fmt_f64(mesh.domain_perimeter));
    let _ = writeln!(s, "nodes {}", mesh.nodes.len());
    for p in &mesh.nodes {
        let _ = writeln!(s, "{} {}", fmt_f64(p[0]), fmt_f64(p[1]));
    }
    let _ = writeln!(s, "boundary {}", mesh.boundary_theta.len());
    for t in &mesh.boundary_theta {
        let _ = writeln!(s, "{}", fmt_f64(*t));
    }
    let _ = writeln!(s, "triangles {}", mesh.triangles.len());
    for t in &mesh.triangles {
        let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "edges {}", mesh.boundary_edges.len());
    for e in &mesh.boundary_edges {
        let _ = writeln!(s, "{} {} {} {}", e.a, e.b, fmt_f64(e.theta_mid), fmt_f64(e.length));
    }
    s
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines { inner: text.lines().enumerate(), last: 0 }
    }

    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError { line: self.last, message: message.into() }
    }

    fn next_line(&mut self) -> Result<&'a str, ParseError> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok(l)
            }
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str, ParseError> {
        let l = self.next_line()?;
        l.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| self.err(format!("expected `{key} ...`")))
    }

    fn keyed_count(&mut self, key: &str) -> Result<usize, ParseError> {
        let v = self.keyed(key)?;
        v.trim().parse().map_err(|_| self.err(format!("bad count for `{key}`")))
    }

    fn keyed_f64(&mut self, key: &str) -> Result<f64, ParseError> {
        let v = self.keyed(key)?;
        v.trim().parse().map_err(|_| self.err(format!("bad number for `{key}`")))
    }

    fn numbers<T: std::str::FromStr>(&mut self, n: usize) -> Result<Vec<T>, ParseError> {
        let l = self.next_line()?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        if parts.len() != n {
            return Err(self.err(format!("expected {n} values, found {}", parts.len())));
        }
        parts.iter().map(|p| p.parse().map_err(|_| self.err(format!("cannot parse `{p}`")))).collect()
    }
}

pub fn mesh_from_text(text: &str) -> Result<TriMesh, ParseError> {
    let mut it = Lines::new(text);
    if it.next_line()? != "msflow-mesh 1" {
        return Err(it.err("not an msflow mesh file"));
    }
    let h = it.keyed_f64("h")?;
    let area = it.keyed_f64("area")?;
    let perimeter = it.keyed_f64("perimeter")?;
    let nn = it.keyed_count("nodes")?;
    let mut nodes = Vec::with_capacity(nn);
    for _ in 0..nn {
        let v: Vec<f64> = it.numbers(2)?;
        nodes.push([v[0], v[1]]);
    }
    let nb = it.keyed_count("boundary")?;
    let mut boundary_theta = Vec::with_capacity(nb);
    for _ in 0..nb {
        boundary_theta.push(it.numbers::<f64>(1)?[0]);
    }
    let nt = it.keyed_count("triangles")?;
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let v: Vec<usize> = it.numbers(3)?;
        if v.iter().any(|&i| i >= nn) {
            return Err(it.err("triangle references a missing node"));
        }
        triangles.push([v[0], v[1], v[2]]);
    }
    let ne = it.keyed_count("edges")?;
    let mut boundary_edges = Vec::with_capacity(ne);
    for _ in 0..ne {
        let l = it.next_line()?;
        let p: Vec<&str> = l.split_whitespace().collect();
        let bad = || it.err("bad boundary edge");
        if p.len() != 4 {
            return Err(bad());
        }
        let a: usize = p[0].parse().map_err(|_| bad())?;
        let b: usize = p[1].parse().map_err(|_| bad())?;
        let theta_mid: f64 = p[2].parse().map_err(|_| bad())?;
        let length: f64 = p[3].parse().map_err(|_| bad())?;
        if a >= nn || b >= nn {
            return Err(bad());
        }
        boundary_edges.push(BoundaryEdge { a, b, theta_mid, length });
    }
    Ok(TriMesh {
        nodes,
        triangles,
        boundary_edges,
        boundary_theta,
        h_target: h,
        domain_area: area,
        domain_perimeter: perimeter,
    })
}

pub fn field_to_text(name: &str, field: &ScalarField) -> String {
    let mut s = String::from("msflow-field 1\n");
    let _ = writeln!(s, "name {name}");
    let _ = writeln!(s, "values {}", field.len());
    for v in &field.values {
        s.push_str(&fmt_f64(*v));
        s.push('\n');
    }
    s
}

pub fn field_from_text(text: &str) -> Result<(String, ScalarField), ParseError> {
    let mut it = Lines::new(text);
    if it.next_line()? != "msflow-field 1" {
        return Err(it.err("not an msflow field file"));
    }
    let name = it.keyed("name")?.to_string();
    let n = it.keyed_count("values")?;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let v = it.numbers::<f64>(1)?[0];
        if !v.is_finite() {
            return Err(it.err("non-finite value"));
        }
        values.push(v);
    }
    Ok((name, ScalarField::new(values)))
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn monitors_csv(rows: &[MonitorRow]) -> String {
    let mut s = MONITOR_COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.step,
            fmt_f64(r.t),
            fmt_f64(r.sup_v),
            opt(r.min_ut),
            opt(r.max_ut),
            fmt_f64(r.mass),
            fmt_f64(r.energy),
            fmt_f64(r.dissipation)
        );
    }
    s
}
