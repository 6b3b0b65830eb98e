//! Simplicial meshes of boxes and special Lipschitz graph domains,
//! their reflections across the graph, and dilations.
//!
//! All meshes are conforming tetrahedral decompositions with explicitly
//! stored boundary facets and outward unit normals. Meshes are immutable
//! after construction and safe to share across threads.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geom::{self, Point};

/// Lipschitz character `(M, N)` with cover radius `r0`: the boundary is
/// covered by `N` balls of radius `r0`, inside which it is the graph of a
/// Lipschitz function with slope at most `M`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LipschitzCharacter {
    pub m: f64,
    pub n_cover: usize,
    pub r0: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub enum FacetTag {
    /// Nothing special known about the facet.
    General,
    /// Bottom part of the boundary of a graph domain (the graph itself).
    Bottom,
    /// Side walls of a graph domain.
    Side,
    /// Top lid of a graph domain.
    Top,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryFacet {
    pub verts: [usize; 3],
    /// Index of the unique cell owning this facet.
    pub cell: usize,
    /// Outward unit normal.
    pub normal: Point,
    pub area: f64,
    pub tag: FacetTag,
}

/// How an extruded mesh vertex relates to the base triangulation: vertex =
/// (base node, layer), layer 0 being the graph surface itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphMeta {
    pub base_radius: f64,
    pub lipschitz_m: f64,
    /// Height of the extrusion, `(M + 1) r`.
    pub height: f64,
    pub layers: usize,
    /// Base node coordinates (x', 2 components used).
    pub base_nodes: Vec<[f64; 2]>,
    /// psi sampled at the base nodes.
    pub psi: Vec<f64>,
    /// Base triangulation (indices into `base_nodes`).
    pub base_tris: Vec<[usize; 3]>,
    /// Mesh vertex -> (base node, layer). Layers may be negative after
    /// reflection.
    pub vertex_layer: Vec<(usize, i64)>,
}

#[derive(Debug, Clone)]
pub struct SimplicialMesh {
    pub dim: usize,
    pub vertices: Vec<Point>,
    pub cells: Vec<[usize; 4]>,
    pub boundary: Vec<BoundaryFacet>,
    pub character: Option<LipschitzCharacter>,
    pub graph: Option<GraphMeta>,
    cell_volumes: Vec<f64>,
}

pub type MeshRef = Arc<SimplicialMesh>;

impl SimplicialMesh {
    /// Assembles a mesh from raw vertices and cells: orients cells
    /// positively, extracts the boundary and computes outward normals.
    pub fn from_cells(vertices: Vec<Point>, mut cells: Vec<[usize; 4]>) -> Result<Self> {
        if vertices.is_empty() || cells.is_empty() {
            return Err(Error::InvalidMesh("empty vertex or cell list".into()));
        }
        for c in &mut cells {
            let p = tet_coords(&vertices, c);
            let v = geom::signed_volume(&p);
            if v == 0.0 || !v.is_finite() {
                return Err(Error::InvalidMesh(format!("degenerate cell {c:?}")));
            }
            if v < 0.0 {
                c.swap(2, 3);
            }
        }
        let cell_volumes: Vec<f64> = cells
            .iter()
            .map(|c| geom::signed_volume(&tet_coords(&vertices, c)))
            .collect();

        // face -> (cell, local face) map; boundary faces appear exactly once
        let mut face_map: BTreeMap<[usize; 3], Vec<(usize, [usize; 3])>> = BTreeMap::new();
        for (ci, c) in cells.iter().enumerate() {
            for f in tet_faces(c) {
                let mut key = f;
                key.sort_unstable();
                face_map.entry(key).or_default().push((ci, f));
            }
        }
        let mut boundary = Vec::new();
        for (key, owners) in &face_map {
            match owners.len() {
                1 => {
                    let (ci, f) = owners[0];
                    let tri = [vertices[f[0]], vertices[f[1]], vertices[f[2]]];
                    let area = geom::triangle_area(&tri);
                    if area <= 0.0 {
                        return Err(Error::InvalidMesh(format!("degenerate facet {key:?}")));
                    }
                    let mut normal = geom::cross(
                        geom::sub(tri[1], tri[0]),
                        geom::sub(tri[2], tri[0]),
                    );
                    let cc = cell_centroid(&vertices, &cells[ci]);
                    let fc = geom::scale(geom::add(geom::add(tri[0], tri[1]), tri[2]), 1.0 / 3.0);
                    if geom::dot(normal, geom::sub(fc, cc)) < 0.0 {
                        normal = geom::scale(normal, -1.0);
                    }
                    let normal = geom::scale(normal, 1.0 / geom::norm(normal));
                    boundary.push(BoundaryFacet {
                        verts: f,
                        cell: ci,
                        normal,
                        area,
                        tag: FacetTag::General,
                    });
                }
                2 => {}
                k => {
                    return Err(Error::InvalidMesh(format!(
                        "face {key:?} shared by {k} cells"
                    )))
                }
            }
        }
        Ok(Self {
            dim: 3,
            vertices,
            cells,
            boundary,
            character: None,
            graph: None,
            cell_volumes,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_volume(&self, c: usize) -> f64 {
        self.cell_volumes[c]
    }

    pub fn total_volume(&self) -> f64 {
        self.cell_volumes.iter().sum()
    }

    pub fn boundary_area(&self) -> f64 {
        self.boundary.iter().map(|f| f.area).sum()
    }

    pub fn cell_coords(&self, c: usize) -> [Point; 4] {
        tet_coords(&self.vertices, &self.cells[c])
    }

    pub fn cell_centroid(&self, c: usize) -> Point {
        cell_centroid(&self.vertices, &self.cells[c])
    }

    pub fn facet_coords(&self, f: &BoundaryFacet) -> [Point; 3] {
        [
            self.vertices[f.verts[0]],
            self.vertices[f.verts[1]],
            self.vertices[f.verts[2]],
        ]
    }

    /// Longest edge over all cells.
    pub fn mesh_size(&self) -> f64 {
        let mut h: f64 = 0.0;
        for c in &self.cells {
            let p = tet_coords(&self.vertices, c);
            for i in 0..4 {
                for j in (i + 1)..4 {
                    h = h.max(geom::dist(p[i], p[j]));
                }
            }
        }
        h
    }

    /// Longest edge among cells touching the vertex nearest to `x`.
    pub fn local_mesh_size(&self, x: Point) -> f64 {
        let mut best = (f64::INFINITY, 0usize);
        for (i, v) in self.vertices.iter().enumerate() {
            let d = geom::dist(*v, x);
            if d < best.0 {
                best = (d, i);
            }
        }
        let mut h: f64 = 0.0;
        for c in &self.cells {
            if c.contains(&best.1) {
                let p = tet_coords(&self.vertices, c);
                for i in 0..4 {
                    for j in (i + 1)..4 {
                        h = h.max(geom::dist(p[i], p[j]));
                    }
                }
            }
        }
        h
    }

    /// Locates the cell containing `x` (brute force over cells).
    pub fn locate(&self, x: Point) -> Option<(usize, [f64; 4])> {
        let mut best: Option<(usize, [f64; 4], f64)> = None;
        for c in 0..self.cells.len() {
            let p = self.cell_coords(c);
            let lam = geom::barycentric(&p, x);
            let worst = lam.iter().cloned().fold(f64::INFINITY, f64::min);
            if worst >= -1e-12 {
                return Some((c, lam));
            }
            if best.map(|(_, _, w)| worst > w).unwrap_or(true) {
                best = Some((c, lam, worst));
            }
        }
        // accept slightly-outside points near the boundary
        match best {
            Some((c, lam, w)) if w >= -1e-9 => Some((c, lam)),
            _ => None,
        }
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// SHA-256 of the canonical mesh bytes, for report provenance.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.vertices.len() as u64).to_le_bytes());
        for v in &self.vertices {
            for &x in v {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        h.update((self.cells.len() as u64).to_le_bytes());
        for c in &self.cells {
            for &i in c {
                h.update((i as u64).to_le_bytes());
            }
        }
        let digest = h.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn tet_coords(vertices: &[Point], c: &[usize; 4]) -> [Point; 4] {
    [
        vertices[c[0]],
        vertices[c[1]],
        vertices[c[2]],
        vertices[c[3]],
    ]
}

fn cell_centroid(vertices: &[Point], c: &[usize; 4]) -> Point {
    let mut s = [0.0; 3];
    for &i in c {
        s = geom::add(s, vertices[i]);
    }
    geom::scale(s, 0.25)
}

fn tet_faces(c: &[usize; 4]) -> [[usize; 3]; 4] {
    [
        [c[1], c[2], c[3]],
        [c[0], c[2], c[3]],
        [c[0], c[1], c[3]],
        [c[0], c[1], c[2]],
    ]
}

// ---------------------------------------------------------------------------
// box meshes
// ---------------------------------------------------------------------------

/// Kuhn triangulation of an axis-aligned box: each grid cube splits into
/// 3! = 6 tetrahedra sharing the main diagonal, which makes neighbouring
/// cubes conform automatically.
pub fn build_box_mesh(lo: Point, hi: Point, subdivisions: [usize; 3]) -> Result<SimplicialMesh> {
    for k in 0..3 {
        if !(hi[k] > lo[k]) || !lo[k].is_finite() || !hi[k].is_finite() {
            return Err(Error::DegenerateBox(format!(
                "axis {k}: [{}, {}]",
                lo[k], hi[k]
            )));
        }
        if subdivisions[k] == 0 {
            return Err(Error::DegenerateBox(format!("axis {k}: 0 subdivisions")));
        }
    }
    let [nx, ny, nz] = subdivisions;
    let idx = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([
                    lo[0] + (hi[0] - lo[0]) * (i as f64 / nx as f64),
                    lo[1] + (hi[1] - lo[1]) * (j as f64 / ny as f64),
                    lo[2] + (hi[2] - lo[2]) * (k as f64 / nz as f64),
                ]);
            }
        }
    }
    let perms: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut cells = Vec::with_capacity(6 * nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                for perm in &perms {
                    let mut corner = [i, j, k];
                    let mut tet = [idx(corner[0], corner[1], corner[2]); 4];
                    for (step, &axis) in perm.iter().enumerate() {
                        corner[axis] += 1;
                        tet[step + 1] = idx(corner[0], corner[1], corner[2]);
                    }
                    cells.push(tet);
                }
            }
        }
    }
    let mut mesh = SimplicialMesh::from_cells(vertices, cells)?;
    let min_side = (0..3).map(|k| hi[k] - lo[k]).fold(f64::INFINITY, f64::min);
    let r0 = min_side / 2.0;
    let area = mesh.boundary_area();
    mesh.character = Some(LipschitzCharacter {
        m: 2.0f64.sqrt(),
        n_cover: ((area / (r0 * r0)).ceil() as usize).max(1),
        r0,
    });
    Ok(mesh)
}

// ---------------------------------------------------------------------------
// graph domains
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub enum GraphBase {
    /// Square `[-r, r]^2` (meshes exactly).
    Square,
    /// Regular polygon with the given segment count approximating the disk
    /// of radius `r`.
    Disk { segments: usize },
}

/// A special Lipschitz graph domain: the slab of height `(M + 1) r` above
/// the graph of a piecewise-linear `psi` with `psi(0) = 0` and slope at
/// most `M` over the base of radius `r`.
#[derive(Clone)]
pub struct GraphDomainSpec {
    pub base: GraphBase,
    pub radius: f64,
    pub lipschitz_m: f64,
    pub psi: Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for GraphDomainSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GraphDomainSpec")
            .field("base", &self.base)
            .field("radius", &self.radius)
            .field("lipschitz_m", &self.lipschitz_m)
            .finish()
    }
}

impl GraphDomainSpec {
    pub fn flat(base: GraphBase, radius: f64) -> Self {
        Self {
            base,
            radius,
            lipschitz_m: 0.0,
            psi: Arc::new(|_| 0.0),
        }
    }

    pub fn with_psi(
        base: GraphBase,
        radius: f64,
        lipschitz_m: f64,
        psi: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            base,
            radius,
            lipschitz_m,
            psi: Arc::new(psi),
        }
    }

    pub fn height(&self) -> f64 {
        (self.lipschitz_m + 1.0) * self.radius
    }
}

/// Extrudes the graph domain into tetrahedra. The square base is meshed as
/// a sheared Kuhn box (shears preserve cell volumes exactly); the polygonal
/// disk base uses ring triangles extruded into prisms, each split into
/// three tetrahedra with globally consistent diagonals.
pub fn build_graph_domain_mesh(
    spec: &GraphDomainSpec,
    resolution: usize,
) -> Result<SimplicialMesh> {
    if resolution == 0 {
        return Err(Error::InvalidParameter("resolution must be >= 1".into()));
    }
    if spec.radius <= 0.0 {
        return Err(Error::InvalidParameter("radius must be positive".into()));
    }
    let psi0 = (spec.psi)([0.0, 0.0]);
    if psi0.abs() > 1e-14 * spec.radius.max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "psi(0) = {psi0:e}, must vanish"
        )));
    }

    let (base_nodes, base_tris) = match spec.base {
        GraphBase::Square => square_base(spec.radius, resolution),
        GraphBase::Disk { segments } => disk_base(spec.radius, segments, resolution),
    };
    let psi: Vec<f64> = base_nodes.iter().map(|&p| (spec.psi)(p)).collect();

    // slope of the PL interpolant per base triangle
    let mut max_slope: f64 = 0.0;
    for t in &base_tris {
        max_slope = max_slope.max(tri_slope(&base_nodes, &psi, t));
    }
    if max_slope > spec.lipschitz_m + 1e-12 * (1.0 + spec.lipschitz_m) {
        return Err(Error::SlopeExceedsBound {
            found: max_slope,
            declared: spec.lipschitz_m,
        });
    }

    let layers = resolution;
    let dz = spec.height() / layers as f64;
    let nb = base_nodes.len();
    let mut vertices = Vec::with_capacity(nb * (layers + 1));
    let mut vertex_layer = Vec::with_capacity(nb * (layers + 1));
    for s in 0..=layers {
        for (b, p) in base_nodes.iter().enumerate() {
            vertices.push([p[0], p[1], psi[b] + s as f64 * dz]);
            vertex_layer.push((b, s as i64));
        }
    }
    let vid = |b: usize, s: usize| b + s * nb;
    let mut cells = Vec::new();
    for s in 0..layers {
        for t in &base_tris {
            prism_to_tets(
                [vid(t[0], s), vid(t[1], s), vid(t[2], s)],
                [vid(t[0], s + 1), vid(t[1], s + 1), vid(t[2], s + 1)],
                &mut cells,
            );
        }
    }
    let mut mesh = SimplicialMesh::from_cells(vertices, cells)?;
    tag_graph_boundary(&mut mesh, &vertex_layer, layers as i64);
    mesh.character = Some(LipschitzCharacter {
        m: max_slope,
        n_cover: cover_count(spec),
        r0: spec.radius,
    });
    mesh.graph = Some(GraphMeta {
        base_radius: spec.radius,
        lipschitz_m: max_slope,
        height: spec.height(),
        layers,
        base_nodes,
        psi,
        base_tris,
        vertex_layer,
    });
    Ok(mesh)
}

fn square_base(r: f64, res: usize) -> (Vec<[f64; 2]>, Vec<[usize; 3]>) {
    let mut nodes = Vec::with_capacity((res + 1) * (res + 1));
    for j in 0..=res {
        for i in 0..=res {
            nodes.push([
                -r + 2.0 * r * i as f64 / res as f64,
                -r + 2.0 * r * j as f64 / res as f64,
            ]);
        }
    }
    let idx = |i: usize, j: usize| i + (res + 1) * j;
    let mut tris = Vec::with_capacity(2 * res * res);
    for j in 0..res {
        for i in 0..res {
            tris.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            tris.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    (nodes, tris)
}

fn disk_base(r: f64, segments: usize, rings: usize) -> (Vec<[f64; 2]>, Vec<[usize; 3]>) {
    let segments = segments.max(3);
    let mut nodes = vec![[0.0, 0.0]];
    let mut ring_start = vec![0usize; rings + 1];
    for ring in 1..=rings {
        ring_start[ring] = nodes.len();
        let rr = r * ring as f64 / rings as f64;
        for k in 0..segments {
            let ang = 2.0 * std::f64::consts::PI * k as f64 / segments as f64;
            nodes.push([rr * ang.cos(), rr * ang.sin()]);
        }
    }
    let mut tris = Vec::new();
    // innermost fan
    for k in 0..segments {
        let a = ring_start[1] + k;
        let b = ring_start[1] + (k + 1) % segments;
        tris.push([0, a, b]);
    }
    // quads between rings, split along a consistent diagonal
    for ring in 1..rings {
        for k in 0..segments {
            let a = ring_start[ring] + k;
            let b = ring_start[ring] + (k + 1) % segments;
            let c = ring_start[ring + 1] + k;
            let d = ring_start[ring + 1] + (k + 1) % segments;
            tris.push([a, c, d]);
            tris.push([a, d, b]);
        }
    }
    (nodes, tris)
}

fn tri_slope(nodes: &[[f64; 2]], psi: &[f64], t: &[usize; 3]) -> f64 {
    let p0 = nodes[t[0]];
    let e1 = [nodes[t[1]][0] - p0[0], nodes[t[1]][1] - p0[1]];
    let e2 = [nodes[t[2]][0] - p0[0], nodes[t[2]][1] - p0[1]];
    let d1 = psi[t[1]] - psi[t[0]];
    let d2 = psi[t[2]] - psi[t[0]];
    let det = e1[0] * e2[1] - e1[1] * e2[0];
    let gx = (d1 * e2[1] - d2 * e1[1]) / det;
    let gy = (d2 * e1[0] - d1 * e2[0]) / det;
    (gx * gx + gy * gy).sqrt()
}

/// Splits the prism with bottom triangle `bot` and top triangle `top`
/// (vertex i of top above vertex i of bottom) into three tetrahedra.
/// Every quad face is cut by the diagonal through its smallest global
/// vertex, so neighbouring prisms conform without bookkeeping.
fn prism_to_tets(bot: [usize; 3], top: [usize; 3], cells: &mut Vec<[usize; 4]>) {
    // rotate so that the smallest bottom index comes first
    let k = (0..3).min_by_key(|&k| bot[k]).unwrap();
    let b = [bot[k], bot[(k + 1) % 3], bot[(k + 2) % 3]];
    let t = [top[k], top[(k + 1) % 3], top[(k + 2) % 3]];
    if b[1].min(t[2]) < b[2].min(t[1]) {
        cells.push([b[0], b[1], b[2], t[2]]);
        cells.push([b[0], b[1], t[2], t[1]]);
        cells.push([b[0], t[1], t[2], t[0]]);
    } else {
        cells.push([b[0], b[1], b[2], t[1]]);
        cells.push([b[0], t[1], b[2], t[2]]);
        cells.push([b[0], t[1], t[2], t[0]]);
    }
}

fn tag_graph_boundary(mesh: &mut SimplicialMesh, vertex_layer: &[(usize, i64)], layers: i64) {
    for f in &mut mesh.boundary {
        let ls: Vec<i64> = f.verts.iter().map(|&v| vertex_layer[v].1).collect();
        f.tag = if ls.iter().all(|&l| l == 0) {
            FacetTag::Bottom
        } else if ls.iter().all(|&l| l == layers) {
            FacetTag::Top
        } else if ls.iter().all(|&l| l == -layers) {
            // mirrored lid of a reflected mesh
            FacetTag::Top
        } else {
            FacetTag::Side
        };
    }
}

fn cover_count(spec: &GraphDomainSpec) -> usize {
    // a special Lipschitz domain is covered by N(n, M) balls of radius r
    let m = spec.lipschitz_m;
    (((m + 1.0) * 16.0).ceil() as usize).max(8)
}

// ---------------------------------------------------------------------------
// reflection
// ---------------------------------------------------------------------------

/// The involution `Psi(x', x_n) = (x', 2 psi(x') - x_n)` mapping the graph
/// domain onto its mirror image below the graph.
#[derive(Clone)]
pub struct ReflectionMap {
    pub meta: GraphMeta,
}

impl ReflectionMap {
    pub fn new(mesh: &SimplicialMesh) -> Result<Self> {
        let meta = mesh
            .graph
            .clone()
            .ok_or_else(|| Error::InvalidMesh("mesh is not graph-conforming".into()))?;
        Ok(Self { meta })
    }

    /// Evaluates the piecewise-linear psi of the underlying base mesh.
    pub fn psi(&self, xp: [f64; 2]) -> f64 {
        for t in &self.meta.base_tris {
            let p0 = self.meta.base_nodes[t[0]];
            let p1 = self.meta.base_nodes[t[1]];
            let p2 = self.meta.base_nodes[t[2]];
            let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
            let l1 = ((xp[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (xp[1] - p0[1])) / det;
            let l2 = ((p1[0] - p0[0]) * (xp[1] - p0[1]) - (xp[0] - p0[0]) * (p1[1] - p0[1])) / det;
            let l0 = 1.0 - l1 - l2;
            if l0 >= -1e-12 && l1 >= -1e-12 && l2 >= -1e-12 {
                return l0 * self.meta.psi[t[0]] + l1 * self.meta.psi[t[1]] + l2 * self.meta.psi[t[2]];
            }
        }
        f64::NAN
    }

    pub fn apply(&self, x: Point) -> Point {
        let p = self.psi([x[0], x[1]]);
        [x[0], x[1], 2.0 * p - x[2]]
    }

    /// Jacobian on the base triangle containing `x'`; piecewise constant.
    pub fn jacobian(&self, xp: [f64; 2]) -> [[f64; 3]; 3] {
        for t in &self.meta.base_tris {
            let p0 = self.meta.base_nodes[t[0]];
            let p1 = self.meta.base_nodes[t[1]];
            let p2 = self.meta.base_nodes[t[2]];
            let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
            let l1 = ((xp[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (xp[1] - p0[1])) / det;
            let l2 = ((p1[0] - p0[0]) * (xp[1] - p0[1]) - (xp[0] - p0[0]) * (p1[1] - p0[1])) / det;
            let l0 = 1.0 - l1 - l2;
            if l0 >= -1e-12 && l1 >= -1e-12 && l2 >= -1e-12 {
                let d1 = self.meta.psi[t[1]] - self.meta.psi[t[0]];
                let d2 = self.meta.psi[t[2]] - self.meta.psi[t[0]];
                let e1 = [p1[0] - p0[0], p1[1] - p0[1]];
                let e2 = [p2[0] - p0[0], p2[1] - p0[1]];
                let gx = (d1 * e2[1] - d2 * e1[1]) / det;
                let gy = (d2 * e1[0] - d1 * e2[0]) / det;
                return [
                    [1.0, 0.0, 0.0],
                    [0.0, 1.0, 0.0],
                    [2.0 * gx, 2.0 * gy, -1.0],
                ];
            }
        }
        [[f64::NAN; 3]; 3]
    }
}

/// The outcome of reflecting a graph-domain mesh: the union mesh covering
/// both sides of the graph, with the vertex pairing induced by `Psi`.
#[derive(Debug, Clone)]
pub struct ReflectedMesh {
    pub mesh: SimplicialMesh,
    /// Union vertex -> vertex of the original upper mesh, if it has one.
    pub from_original: Vec<Option<usize>>,
    /// Union vertex -> its `Psi`-partner in the union mesh.
    pub mirror: Vec<usize>,
    /// Union cell -> (original cell index, true if mirrored copy).
    pub cell_source: Vec<(usize, bool)>,
}

/// Reflects a graph-domain mesh across its graph: the union covers
/// `Omega_r = Omega_r^+ \cup bottom \cup Omega_r^-`, mirrored cells have
/// exactly the volume of their sources.
pub fn reflect_mesh(mesh: &SimplicialMesh) -> Result<ReflectedMesh> {
    let meta = mesh
        .graph
        .clone()
        .ok_or_else(|| Error::InvalidMesh("mesh is not graph-conforming".into()))?;
    if meta.vertex_layer.iter().any(|&(_, s)| s < 0) {
        return Err(Error::InvalidMesh("mesh is already reflected".into()));
    }
    let nb = meta.base_nodes.len();
    let layers = meta.layers as i64;
    let dz = meta.height / meta.layers as f64;

    // union vertex layout: layer s in -L..=L, id = base + (s + L) * nb
    let uid = |b: usize, s: i64| b + ((s + layers) as usize) * nb;
    let mut vertices = vec![[0.0; 3]; nb * (2 * meta.layers + 1)];
    let mut vertex_layer = vec![(0usize, 0i64); vertices.len()];
    for s in -layers..=layers {
        for b in 0..nb {
            let p = meta.base_nodes[b];
            vertices[uid(b, s)] = [p[0], p[1], meta.psi[b] + s as f64 * dz];
            vertex_layer[uid(b, s)] = (b, s);
        }
    }
    let mut cells = Vec::with_capacity(2 * mesh.cells.len());
    let mut cell_source = Vec::with_capacity(2 * mesh.cells.len());
    for (ci, c) in mesh.cells.iter().enumerate() {
        let mapped = c.map(|v| {
            let (b, s) = meta.vertex_layer[v];
            uid(b, s)
        });
        cells.push(mapped);
        cell_source.push((ci, false));
    }
    for (ci, c) in mesh.cells.iter().enumerate() {
        let mut mirrored = c.map(|v| {
            let (b, s) = meta.vertex_layer[v];
            uid(b, -s)
        });
        mirrored.swap(2, 3); // restore positive orientation
        cells.push(mirrored);
        cell_source.push((ci, true));
    }
    let mut union = SimplicialMesh::from_cells(vertices, cells)?;
    tag_graph_boundary(&mut union, &vertex_layer, layers);
    union.character = mesh.character;
    let mut from_original = vec![None; union.vertices.len()];
    for (v, &(b, s)) in meta.vertex_layer.iter().enumerate() {
        from_original[uid(b, s)] = Some(v);
    }
    let mirror: Vec<usize> = vertex_layer.iter().map(|&(b, s)| uid(b, -s)).collect();
    union.graph = Some(GraphMeta {
        vertex_layer,
        ..meta
    });
    Ok(ReflectedMesh {
        mesh: union,
        from_original,
        mirror,
        cell_source,
    })
}

// ---------------------------------------------------------------------------
// dilation
// ---------------------------------------------------------------------------

/// Scales all coordinates by `r`. The Lipschitz slope `M` is unchanged;
/// the cover radius scales with `r`.
pub fn dilate_mesh(mesh: &SimplicialMesh, r: f64) -> Result<SimplicialMesh> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("scale factor {r} <= 0")));
    }
    let vertices: Vec<Point> = mesh.vertices.iter().map(|&v| geom::scale(v, r)).collect();
    let mut out = SimplicialMesh::from_cells(vertices, mesh.cells.clone())?;
    for (fo, fi) in out.boundary.iter_mut().zip(mesh.boundary.iter()) {
        fo.tag = fi.tag;
    }
    out.character = mesh.character.map(|c| LipschitzCharacter {
        m: c.m,
        n_cover: c.n_cover,
        r0: c.r0 * r,
    });
    out.graph = mesh.graph.clone().map(|g| GraphMeta {
        base_radius: g.base_radius * r,
        height: g.height * r,
        base_nodes: g.base_nodes.iter().map(|p| [p[0] * r, p[1] * r]).collect(),
        psi: g.psi.iter().map(|&z| z * r).collect(),
        ..g
    });
    Ok(out)
}

// ---------------------------------------------------------------------------
// diagnostics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct MeshDiagnostics {
    pub conforming: bool,
    pub oriented: bool,
    pub min_quality: f64,
    /// `sum over facets of area * normal`; zero for a closed boundary.
    pub boundary_closure: Point,
    pub max_normal_deviation: f64,
    pub total_volume: f64,
    pub boundary_area: f64,
}

/// Report-only consistency checks: conformity, orientation, cell quality,
/// boundary closure and unit normals.
pub fn verify_mesh(mesh: &SimplicialMesh) -> MeshDiagnostics {
    let mut face_map: BTreeMap<[usize; 3], usize> = BTreeMap::new();
    for c in &mesh.cells {
        for f in tet_faces(c) {
            let mut key = f;
            key.sort_unstable();
            *face_map.entry(key).or_insert(0) += 1;
        }
    }
    let conforming = face_map.values().all(|&k| k == 1 || k == 2)
        && face_map.values().filter(|&&k| k == 1).count() == mesh.boundary.len();

    let mut oriented = true;
    let mut min_quality = f64::INFINITY;
    for c in 0..mesh.num_cells() {
        let p = mesh.cell_coords(c);
        let v = geom::signed_volume(&p);
        if v <= 0.0 {
            oriented = false;
        }
        let mut longest: f64 = 0.0;
        for i in 0..4 {
            for j in (i + 1)..4 {
                longest = longest.max(geom::dist(p[i], p[j]));
            }
        }
        // normalized so the regular tetrahedron scores 1
        let q = v.abs() / (longest.powi(3) / (6.0 * 2.0f64.sqrt()));
        min_quality = min_quality.min(q);
    }

    let mut closure = [0.0; 3];
    let mut max_dev: f64 = 0.0;
    for f in &mesh.boundary {
        closure = geom::add(closure, geom::scale(f.normal, f.area));
        max_dev = max_dev.max((geom::norm(f.normal) - 1.0).abs());
    }
    MeshDiagnostics {
        conforming,
        oriented,
        min_quality,
        boundary_closure: closure,
        max_normal_deviation: max_dev,
        total_volume: mesh.total_volume(),
        boundary_area: mesh.boundary_area(),
    }
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct MeshDocument {
    version: u32,
    n: usize,
    vertices: Vec<Point>,
    cells: Vec<[usize; 4]>,
    boundary: Vec<BoundaryFacet>,
    character: Option<LipschitzCharacter>,
    graph: Option<GraphMeta>,
}

pub fn mesh_to_json(mesh: &SimplicialMesh) -> Result<String> {
    let doc = MeshDocument {
        version: 1,
        n: mesh.dim,
        vertices: mesh.vertices.clone(),
        cells: mesh.cells.clone(),
        boundary: mesh.boundary.clone(),
        character: mesh.character,
        graph: mesh.graph.clone(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// Imports a mesh document, revalidating all structural invariants
/// (orientation, facet ownership, normals).
pub fn mesh_from_json(text: &str) -> Result<SimplicialMesh> {
    let doc: MeshDocument = serde_json::from_str(text)?;
    if doc.version != 1 {
        return Err(Error::InvalidMesh(format!(
            "unsupported mesh document version {}",
            doc.version
        )));
    }
    if doc.n != 3 {
        return Err(Error::InvalidMesh(format!(
            "only n = 3 meshes are supported, got n = {}",
            doc.n
        )));
    }
    let mut mesh = SimplicialMesh::from_cells(doc.vertices, doc.cells)?;
    if mesh.boundary.len() != doc.boundary.len() {
        return Err(Error::InvalidMesh(format!(
            "boundary facet count mismatch: document {} vs extracted {}",
            doc.boundary.len(),
            mesh.boundary.len()
        )));
    }
    // keep document tags; geometry (normals, areas) is recomputed
    let mut tag_map: BTreeMap<[usize; 3], FacetTag> = BTreeMap::new();
    for f in &doc.boundary {
        let mut key = f.verts;
        key.sort_unstable();
        tag_map.insert(key, f.tag);
    }
    for f in &mut mesh.boundary {
        let mut key = f.verts;
        key.sort_unstable();
        if let Some(&t) = tag_map.get(&key) {
            f.tag = t;
        }
    }
    mesh.character = doc.character;
    mesh.graph = doc.graph;
    let diag = verify_mesh(&mesh);
    if !diag.conforming || !diag.oriented {
        return Err(Error::InvalidMesh(
            "imported mesh failed conformity/orientation check".into(),
        ));
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_cube_single_kuhn_split() {
        let m = build_box_mesh([0.0; 3], [1.0; 3], [1, 1, 1]).unwrap();
        assert_eq!(m.num_cells(), 6);
        assert!((m.total_volume() - 1.0).abs() < 1e-14);
        assert_eq!(m.boundary.len(), 12);
        assert!((m.boundary_area() - 6.0).abs() < 1e-13);
    }

    #[test]
    fn cube_2x2x2_has_48_cells() {
        let m = build_box_mesh([0.0; 3], [1.0; 3], [2, 2, 2]).unwrap();
        assert_eq!(m.num_cells(), 48);
        assert!((m.total_volume() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn pi_box_volume_exact() {
        use std::f64::consts::PI;
        let m = build_box_mesh([0.0; 3], [PI; 3], [4, 4, 4]).unwrap();
        assert!((m.total_volume() - PI.powi(3)).abs() < 1e-12 * PI.powi(3));
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(build_box_mesh([0.0; 3], [1.0, 0.0, 1.0], [1, 1, 1]).is_err());
        assert!(build_box_mesh([0.0; 3], [1.0; 3], [0, 1, 1]).is_err());
    }

    #[test]
    fn boundary_closure_is_zero() {
        let m = build_box_mesh([0.0; 3], [1.0; 3], [2, 2, 2]).unwrap();
        let d = verify_mesh(&m);
        assert!(d.conforming && d.oriented);
        for k in 0..3 {
            assert!(d.boundary_closure[k].abs() < 1e-13);
        }
        assert!(d.max_normal_deviation < 1e-14);
    }

    #[test]
    fn flipped_cell_flagged() {
        let mut m = build_box_mesh([0.0; 3], [1.0; 3], [1, 1, 1]).unwrap();
        m.cells[0].swap(0, 1);
        let d = verify_mesh(&m);
        assert!(!d.oriented);
    }

    #[test]
    fn flat_graph_domain_is_box() {
        let spec = GraphDomainSpec::flat(GraphBase::Square, 1.0);
        let m = build_graph_domain_mesh(&spec, 2).unwrap();
        assert!((m.total_volume() - 4.0).abs() < 1e-13);
        let (lo, hi) = m.bounding_box();
        assert_eq!(lo, [-1.0, -1.0, 0.0]);
        assert_eq!(hi, [1.0, 1.0, 1.0]);
        let d = verify_mesh(&m);
        assert!(d.conforming && d.oriented);
        assert!(m.boundary.iter().any(|f| f.tag == FacetTag::Bottom));
    }

    #[test]
    fn linear_graph_slope_measured() {
        let spec = GraphDomainSpec::with_psi(GraphBase::Square, 1.0, 0.5, |p| 0.5 * p[0]);
        let m = build_graph_domain_mesh(&spec, 2).unwrap();
        assert!((m.character.unwrap().m - 0.5).abs() < 1e-12);
        let d = verify_mesh(&m);
        assert!(d.conforming && d.oriented);
    }

    #[test]
    fn slope_violation_rejected() {
        let spec = GraphDomainSpec::with_psi(GraphBase::Square, 1.0, 0.1, |p| 0.5 * p[0]);
        assert!(matches!(
            build_graph_domain_mesh(&spec, 2),
            Err(Error::SlopeExceedsBound { .. })
        ));
    }

    #[test]
    fn disk_base_volume_deficit() {
        let spec = GraphDomainSpec::flat(GraphBase::Disk { segments: 64 }, 1.0);
        let m = build_graph_domain_mesh(&spec, 4).unwrap();
        let exact = std::f64::consts::PI; // pi r^2 * (M+1) r with M = 0, r = 1
        let deficit = 1.0 - m.total_volume() / exact;
        let predicted = 1.0 - (64.0 / (2.0 * std::f64::consts::PI))
            * (2.0 * std::f64::consts::PI / 64.0).sin();
        assert!(
            (deficit - predicted).abs() < 1e-12,
            "deficit {deficit} vs predicted {predicted}"
        );
        let d = verify_mesh(&m);
        assert!(d.conforming && d.oriented, "{d:?}");
    }

    #[test]
    fn reflection_doubles_volume_and_preserves_cells() {
        let spec = GraphDomainSpec::with_psi(GraphBase::Square, 1.0, 0.5, |p| 0.5 * p[0]);
        let m = build_graph_domain_mesh(&spec, 3).unwrap();
        let r = reflect_mesh(&m).unwrap();
        assert!((r.mesh.total_volume() - 2.0 * m.total_volume()).abs() < 1e-12);
        let d = verify_mesh(&r.mesh);
        assert!(d.conforming && d.oriented);
        // mirrored cells match source volumes
        for (uc, &(src, mirrored)) in r.cell_source.iter().enumerate() {
            if mirrored {
                assert!(
                    (r.mesh.cell_volume(uc) - m.cell_volume(src)).abs()
                        < 1e-14 * m.cell_volume(src).max(1.0)
                );
            }
        }
    }

    #[test]
    fn reflect_twice_reproduces_coordinates() {
        let spec = GraphDomainSpec::with_psi(GraphBase::Square, 1.0, 0.5, |p| 0.5 * p[0]);
        let m = build_graph_domain_mesh(&spec, 3).unwrap();
        let map = ReflectionMap::new(&m).unwrap();
        for v in &m.vertices {
            let w = map.apply(map.apply(*v));
            assert!(geom::dist(*v, w) < 1e-14);
        }
        // |det DPsi| = 1 on every base triangle
        let j = map.jacobian([0.3, -0.2]);
        let det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
            - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
            + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
        assert!((det.abs() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn mirror_box_exact_doubling() {
        let spec = GraphDomainSpec::flat(GraphBase::Square, 1.0);
        let m = build_graph_domain_mesh(&spec, 2).unwrap();
        let r = reflect_mesh(&m).unwrap();
        let (lo, hi) = r.mesh.bounding_box();
        assert_eq!(lo, [-1.0, -1.0, -1.0]);
        assert_eq!(hi, [1.0, 1.0, 1.0]);
        assert!((r.mesh.total_volume() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn dilation_scales_volume_and_keeps_character() {
        let m = build_box_mesh([0.0; 3], [1.0; 3], [2, 2, 2]).unwrap();
        let d2 = dilate_mesh(&m, 2.0).unwrap();
        assert!((d2.total_volume() - 8.0).abs() < 1e-12);
        let d1 = dilate_mesh(&m, 1.0).unwrap();
        assert_eq!(d1.vertices, m.vertices);
        assert!(dilate_mesh(&m, 0.0).is_err());
        assert!(dilate_mesh(&m, -1.0).is_err());

        let spec = GraphDomainSpec::with_psi(GraphBase::Square, 1.0, 0.5, |p| 0.5 * p[0]);
        let g = build_graph_domain_mesh(&spec, 2).unwrap();
        let g3 = dilate_mesh(&g, 3.0).unwrap();
        assert!((g3.character.unwrap().m - 0.5).abs() < 1e-12);
        assert!((g3.character.unwrap().r0 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn dilate_round_trip() {
        let m = build_box_mesh([0.0; 3], [1.0; 3], [3, 2, 2]).unwrap();
        let back = dilate_mesh(&dilate_mesh(&m, 1.7).unwrap(), 1.0 / 1.7).unwrap();
        for (a, b) in m.vertices.iter().zip(back.vertices.iter()) {
            assert!(geom::dist(*a, *b) < 1e-13);
        }
    }

    #[test]
    fn divergence_theorem_for_affine_fields() {
        let m = build_box_mesh([0.0; 3], [1.0; 3], [2, 3, 2]).unwrap();
        // w(x) = G x + w0, div w = tr G, both sides computed exactly
        let g = [[1.0, 2.0, -1.0], [0.5, -3.0, 0.0], [2.0, 1.0, 4.0]];
        let w0 = [0.3, -0.7, 1.1];
        let div = g[0][0] + g[1][1] + g[2][2];
        let mut flux = 0.0;
        for f in &m.boundary {
            let tri = m.facet_coords(f);
            let c = geom::scale(geom::add(geom::add(tri[0], tri[1]), tri[2]), 1.0 / 3.0);
            let w = [
                g[0][0] * c[0] + g[0][1] * c[1] + g[0][2] * c[2] + w0[0],
                g[1][0] * c[0] + g[1][1] * c[1] + g[1][2] * c[2] + w0[1],
                g[2][0] * c[0] + g[2][1] * c[1] + g[2][2] * c[2] + w0[2],
            ];
            flux += geom::dot(w, f.normal) * f.area;
        }
        assert!((flux - div * m.total_volume()).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let spec = GraphDomainSpec::with_psi(GraphBase::Square, 1.0, 0.5, |p| 0.5 * p[0]);
        let m = build_graph_domain_mesh(&spec, 2).unwrap();
        let text = mesh_to_json(&m).unwrap();
        let back = mesh_from_json(&text).unwrap();
        assert_eq!(back.vertices, m.vertices);
        assert_eq!(back.cells, m.cells);
        assert_eq!(back.content_hash(), m.content_hash());
        let tags: Vec<_> = back.boundary.iter().map(|f| f.tag).collect();
        let orig: Vec<_> = m.boundary.iter().map(|f| f.tag).collect();
        assert_eq!(tags, orig);
    }
}
