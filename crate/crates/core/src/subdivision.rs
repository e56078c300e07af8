//! Midpoint subdivision of a triangle mesh that carries per-vertex
//! attribute channels along.
//!
//! Each pass inserts one vertex at the midpoint of every unique undirected
//! edge and splits each face into three corner triangles plus a center
//! triangle. Old vertices keep their positions, attributes and indices. New
//! vertices are appended in ascending `(min, max)` edge order, and each of
//! their attribute rows is the mean of the two endpoint rows.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("face {face} is degenerate: {indices:?}")]
    DegenerateFace { face: usize, indices: [u32; 3] },
    #[error("face {face} references vertex {vertex}, mesh has {count}")]
    IndexOutOfRange { face: usize, vertex: u32, count: usize },
    #[error("face {face} duplicates face {first}")]
    DuplicateFace { face: usize, first: usize },
    #[error("attribute channel \"{name}\" has {rows} rows, mesh has {vertices} vertices")]
    ChannelRows { name: String, rows: usize, vertices: usize },
    #[error("mesh would exceed u32 vertex indices")]
    TooLarge,
}

/// How a channel's rows are treated after averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    Plain,
    /// Rows are convex weights and get re-normalized to sum to one.
    Partition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeChannel {
    pub name: String,
    pub width: usize,
    pub kind: ChannelKind,
    /// Row-major `[V][width]`.
    pub data: Vec<f64>,
}

impl AttributeChannel {
    pub fn new(name: impl Into<String>, width: usize, kind: ChannelKind, data: Vec<f64>) -> Self {
        Self { name: name.into(), width, kind, data }
    }

    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributedMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
    pub channels: Vec<AttributeChannel>,
}

impl AttributedMesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[u32; 3]>) -> Self {
        Self { vertices, faces, channels: Vec::new() }
    }

    pub fn with_channel(mut self, channel: AttributeChannel) -> Self {
        self.channels.push(channel);
        self
    }

    pub fn channel(&self, name: &str) -> Option<&AttributeChannel> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let v = self.vertices.len();
        let mut seen: HashMap<[u32; 3], usize> = HashMap::with_capacity(self.faces.len());
        for (i, f) in self.faces.iter().enumerate() {
            if let Some(&bad) = f.iter().find(|&&x| x as usize >= v) {
                return Err(MeshError::IndexOutOfRange { face: i, vertex: bad, count: v });
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::DegenerateFace { face: i, indices: *f });
            }
            let mut key = *f;
            key.sort_unstable();
            if let Some(&first) = seen.get(&key) {
                return Err(MeshError::DuplicateFace { face: i, first });
            }
            seen.insert(key, i);
        }
        for c in &self.channels {
            if c.width > 0 && (c.data.len() != v * c.width) {
                return Err(MeshError::ChannelRows { name: c.name.clone(), rows: c.data.len() / c.width, vertices: v });
            }
        }
        Ok(())
    }

    /// Unique undirected edges as sorted `(min, max)` pairs, ascending.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut set = BTreeSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                set.insert((a.min(b), a.max(b)));
            }
        }
        set.into_iter().collect()
    }

    /// Edges used by exactly one face.
    pub fn boundary_edges(&self) -> Vec<(u32, u32)> {
        let mut count: HashMap<(u32, u32), u32> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut out: Vec<_> = count.into_iter().filter(|(_, c)| *c == 1).map(|(e, _)| e).collect();
        out.sort_unstable();
        out
    }

    /// `V - E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges().len() as i64 + self.faces.len() as i64
    }
}

/// One midpoint subdivision pass.
pub fn subdivide_once(mesh: &AttributedMesh) -> Result<AttributedMesh, MeshError> {
    mesh.validate()?;
    let edges = mesh.edges();
    let v0 = mesh.vertices.len();
    if v0 + edges.len() > u32::MAX as usize {
        return Err(MeshError::TooLarge);
    }
    let midpoint_index = |a: u32, b: u32| -> u32 {
        let key = (a.min(b), a.max(b));
        // edges is sorted, so this is a deterministic lookup
        (v0 + edges.binary_search(&key).expect("edge of a validated face")) as u32
    };

    let mut vertices = Vec::with_capacity(v0 + edges.len());
    vertices.extend_from_slice(&mesh.vertices);
    for &(a, b) in &edges {
        let (pa, pb) = (mesh.vertices[a as usize], mesh.vertices[b as usize]);
        vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1]), 0.5 * (pa[2] + pb[2])]);
    }

    let mut faces = Vec::with_capacity(4 * mesh.faces.len());
    for f in &mesh.faces {
        let [a, b, c] = *f;
        let ab = midpoint_index(a, b);
        let bc = midpoint_index(b, c);
        let ca = midpoint_index(c, a);
        faces.push([a, ab, ca]);
        faces.push([ab, b, bc]);
        faces.push([ca, bc, c]);
        faces.push([ab, bc, ca]);
    }

    let channels = mesh
        .channels
        .iter()
        .map(|ch| {
            let w = ch.width;
            let mut data = Vec::with_capacity((v0 + edges.len()) * w);
            data.extend_from_slice(&ch.data);
            if w > 0 {
                for &(a, b) in &edges {
                    let (ra, rb) = (ch.row(a as usize), ch.row(b as usize));
                    let start = data.len();
                    data.extend(ra.iter().zip(rb).map(|(x, y)| 0.5 * (x + y)));
                    if ch.kind == ChannelKind::Partition {
                        let row = &mut data[start..];
                        let sum: f64 = row.iter().sum();
                        if sum > 0.0 {
                            row.iter_mut().for_each(|x| *x /= sum);
                        }
                    }
                }
            }
            AttributeChannel { name: ch.name.clone(), width: w, kind: ch.kind, data }
        })
        .collect();

    Ok(AttributedMesh { vertices, faces, channels })
}

/// `iterations` passes of [`subdivide_once`]; zero passes returns a copy.
pub fn subdivide(mesh: &AttributedMesh, iterations: u32) -> Result<AttributedMesh, MeshError> {
    mesh.validate()?;
    let mut current = mesh.clone();
    for _ in 0..iterations {
        current = subdivide_once(&current)?;
    }
    Ok(current)
}
