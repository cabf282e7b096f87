//! Triangulated planar meshes.
//!
//! A [`TriMesh`] hosts the finite-element assembly in [`crate::fem`]. Meshes
//! are either generated structurally over a rectangle (a regular vertex grid
//! with each cell split into two right triangles) or loaded from CSV files
//! produced by external mesh generators.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ShotError};

/// A point in the plane. Coordinates are planar units (typically degrees
/// treated as planar); all distances in the crate are Euclidean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Maximum pairwise distance among a set of points (the domain diameter used
/// to scale range priors). Zero for fewer than two points.
pub fn max_pairwise_distance(points: &[Point]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            best = best.max(points[i].dist(&points[j]));
        }
    }
    best
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Rect {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    /// Smallest rectangle containing all points.
    pub fn bounding(points: &[Point]) -> Option<Rect> {
        let first = points.first()?;
        let mut r = Rect::new(first.x, first.y, first.x, first.y);
        for p in points {
            r.min_x = r.min_x.min(p.x);
            r.min_y = r.min_y.min(p.y);
            r.max_x = r.max_x.max(p.x);
            r.max_y = r.max_y.max(p.y);
        }
        Some(r)
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }
}

/// Conforming triangulation with consistently oriented triangles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TriMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    /// Width by which the generating box was extended on all sides; zero for
    /// loaded meshes unless recorded externally.
    extension: f64,
}

fn signed_area(a: &Point, b: &Point, c: &Point) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
}

impl TriMesh {
    /// Build a mesh from raw vertex and triangle lists, validating all mesh
    /// invariants. Negatively oriented triangles are flipped.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>, extension: f64) -> Result<Self> {
        let n = vertices.len();
        if n < 3 || triangles.is_empty() {
            return Err(ShotError::Geometry(
                "a mesh needs at least 3 vertices and 1 triangle".into(),
            ));
        }
        let mut oriented = Vec::with_capacity(triangles.len());
        let scale = {
            let r = Rect::bounding(&vertices).unwrap();
            r.width().max(r.height()).max(f64::MIN_POSITIVE)
        };
        for (t_idx, t) in triangles.iter().enumerate() {
            let [a, b, c] = *t;
            if a >= n || b >= n || c >= n {
                return Err(ShotError::Geometry(format!(
                    "triangle {t_idx} references vertex out of range (n = {n})"
                )));
            }
            if a == b || b == c || a == c {
                return Err(ShotError::Geometry(format!(
                    "triangle {t_idx} has repeated vertices"
                )));
            }
            let area = signed_area(&vertices[a], &vertices[b], &vertices[c]);
            if area.abs() <= 1e-14 * scale * scale {
                return Err(ShotError::Geometry(format!(
                    "triangle {t_idx} is degenerate (area {area})"
                )));
            }
            if area > 0.0 {
                oriented.push([a, b, c]);
            } else {
                oriented.push([a, c, b]);
            }
        }
        // Conformity: a (sorted) edge may appear in at most two triangles.
        let mut edges: std::collections::HashMap<(usize, usize), usize> =
            std::collections::HashMap::new();
        for t in &oriented {
            for (u, v) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let key = (u.min(v), u.max(v));
                let count = edges.entry(key).or_insert(0);
                *count += 1;
                if *count > 2 {
                    return Err(ShotError::Geometry(format!(
                        "edge ({}, {}) is shared by more than two triangles",
                        key.0, key.1
                    )));
                }
            }
        }
        Ok(TriMesh {
            vertices,
            triangles: oriented,
            extension,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn extension(&self) -> f64 {
        self.extension
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(&self.vertices[a], &self.vertices[b], &self.vertices[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| self.triangle_area(t))
            .sum()
    }

    /// Barycentric coordinates of `p` with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, p: &Point) -> [f64; 3] {
        let [ia, ib, ic] = self.triangles[t];
        let (a, b, c) = (&self.vertices[ia], &self.vertices[ib], &self.vertices[ic]);
        let total = signed_area(a, b, c);
        let wa = signed_area(p, b, c) / total;
        let wb = signed_area(a, p, c) / total;
        let wc = signed_area(a, b, p) / total;
        [wa, wb, wc]
    }

    /// Find the containing triangle by brute-force scan in index order, so a
    /// point on a shared edge resolves to the lowest-index triangle.
    pub fn locate(&self, p: &Point) -> Option<(usize, [f64; 3])> {
        const TOL: f64 = -1e-12;
        for t in 0..self.triangles.len() {
            let w = self.barycentric(t, p);
            if w.iter().all(|&v| v >= TOL) {
                return Some((t, w));
            }
        }
        None
    }
}

/// Uniform-grid spatial index over triangle bounding boxes. Produces the same
/// answers as [`TriMesh::locate`] (candidates are scanned in ascending
/// triangle index), just faster on fine meshes.
pub struct TriLocator<'a> {
    mesh: &'a TriMesh,
    rect: Rect,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<usize>>,
}

impl<'a> TriLocator<'a> {
    pub fn new(mesh: &'a TriMesh) -> Self {
        let rect = Rect::bounding(mesh.vertices()).expect("nonempty mesh");
        let target = (mesh.n_triangles() as f64).sqrt().ceil() as usize;
        let nx = target.max(1);
        let ny = target.max(1);
        let mut cells = vec![Vec::new(); nx * ny];
        let span_x = rect.width().max(f64::MIN_POSITIVE);
        let span_y = rect.height().max(f64::MIN_POSITIVE);
        for (t_idx, t) in mesh.triangles().iter().enumerate() {
            let xs = t.map(|v| mesh.vertices()[v].x);
            let ys = t.map(|v| mesh.vertices()[v].y);
            let x0 = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let x1 = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let y0 = ys.iter().cloned().fold(f64::INFINITY, f64::min);
            let y1 = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let cx0 = (((x0 - rect.min_x) / span_x * nx as f64).floor() as isize).max(0) as usize;
            let cx1 = (((x1 - rect.min_x) / span_x * nx as f64).floor() as usize).min(nx - 1);
            let cy0 = (((y0 - rect.min_y) / span_y * ny as f64).floor() as isize).max(0) as usize;
            let cy1 = (((y1 - rect.min_y) / span_y * ny as f64).floor() as usize).min(ny - 1);
            for cx in cx0..=cx1 {
                for cy in cy0..=cy1 {
                    cells[cy * nx + cx].push(t_idx);
                }
            }
        }
        TriLocator {
            mesh,
            rect,
            nx,
            ny,
            cells,
        }
    }

    pub fn locate(&self, p: &Point) -> Option<(usize, [f64; 3])> {
        const TOL: f64 = -1e-12;
        if p.x < self.rect.min_x
            || p.x > self.rect.max_x
            || p.y < self.rect.min_y
            || p.y > self.rect.max_y
        {
            return None;
        }
        let span_x = self.rect.width().max(f64::MIN_POSITIVE);
        let span_y = self.rect.height().max(f64::MIN_POSITIVE);
        let cx = (((p.x - self.rect.min_x) / span_x * self.nx as f64).floor() as usize)
            .min(self.nx - 1);
        let cy = (((p.y - self.rect.min_y) / span_y * self.ny as f64).floor() as usize)
            .min(self.ny - 1);
        // Candidate lists are built in ascending triangle order, matching the
        // brute-force tie-break.
        for &t in &self.cells[cy * self.nx + cx] {
            let w = self.mesh.barycentric(t, p);
            if w.iter().all(|&v| v >= TOL) {
                return Some((t, w));
            }
        }
        None
    }
}

/// Structured triangulation of `bounding_box` extended by `extension` on all
/// sides: a regular vertex grid with spacing at most `target_edge_length`,
/// each cell split into two right triangles.
pub fn build_rect_mesh(
    bounding_box: Rect,
    target_edge_length: f64,
    extension: f64,
) -> Result<TriMesh> {
    if !(target_edge_length > 0.0) {
        return Err(ShotError::Parameter(format!(
            "target_edge_length must be positive, got {target_edge_length}"
        )));
    }
    if !(extension >= 0.0) {
        return Err(ShotError::Parameter(format!(
            "extension must be nonnegative, got {extension}"
        )));
    }
    if bounding_box.width() <= 0.0 || bounding_box.height() <= 0.0 {
        return Err(ShotError::Geometry(format!(
            "degenerate bounding box {bounding_box:?}"
        )));
    }
    let min_x = bounding_box.min_x - extension;
    let max_x = bounding_box.max_x + extension;
    let min_y = bounding_box.min_y - extension;
    let max_y = bounding_box.max_y + extension;
    let nx = ((max_x - min_x) / target_edge_length).ceil() as usize;
    let ny = ((max_y - min_y) / target_edge_length).ceil() as usize;
    let nx = nx.max(1);
    let ny = ny.max(1);
    let hx = (max_x - min_x) / nx as f64;
    let hy = (max_y - min_y) / ny as f64;

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for iy in 0..=ny {
        for ix in 0..=nx {
            vertices.push(Point::new(min_x + ix as f64 * hx, min_y + iy as f64 * hy));
        }
    }
    let idx = |ix: usize, iy: usize| iy * (nx + 1) + ix;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let v00 = idx(ix, iy);
            let v10 = idx(ix + 1, iy);
            let v01 = idx(ix, iy + 1);
            let v11 = idx(ix + 1, iy + 1);
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    TriMesh::new(vertices, triangles, extension)
}

/// Load a mesh from `dir/vertices.csv` (id,x,y) and `dir/triangles.csv`
/// (id,v1,v2,v3), 0-based ids matching line order, header row required.
pub fn load_mesh(dir: &Path) -> Result<TriMesh> {
    let v_path = dir.join("vertices.csv");
    let t_path = dir.join("triangles.csv");
    let parse_err = |path: &Path, message: String| ShotError::Parse {
        path: path.display().to_string(),
        message,
    };

    let mut vertices = Vec::new();
    let mut rdr = csv::Reader::from_path(&v_path)?;
    for (line, rec) in rdr.deserialize::<(usize, f64, f64)>().enumerate() {
        let (id, x, y) = rec.map_err(|e| parse_err(&v_path, e.to_string()))?;
        if id != line {
            return Err(parse_err(
                &v_path,
                format!("vertex id {id} out of order at line {line}"),
            ));
        }
        vertices.push(Point::new(x, y));
    }

    let mut triangles = Vec::new();
    let mut rdr = csv::Reader::from_path(&t_path)?;
    for (line, rec) in rdr.deserialize::<(usize, usize, usize, usize)>().enumerate() {
        let (id, a, b, c) = rec.map_err(|e| parse_err(&t_path, e.to_string()))?;
        if id != line {
            return Err(parse_err(
                &t_path,
                format!("triangle id {id} out of order at line {line}"),
            ));
        }
        triangles.push([a, b, c]);
    }
    TriMesh::new(vertices, triangles, 0.0)
}

/// Write `dir/vertices.csv` and `dir/triangles.csv` in the load format.
pub fn save_mesh(mesh: &TriMesh, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("vertices.csv"))?;
    w.write_record(["id", "x", "y"])?;
    for (i, p) in mesh.vertices().iter().enumerate() {
        w.write_record([i.to_string(), p.x.to_string(), p.y.to_string()])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("triangles.csv"))?;
    w.write_record(["id", "v1", "v2", "v3"])?;
    for (i, t) in mesh.triangles().iter().enumerate() {
        w.write_record([
            i.to_string(),
            t[0].to_string(),
            t[1].to_string(),
            t[2].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
