//! Observation tracks as 1D finite-element meshes.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::SymTridiagonal;

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Ordered nodes along one track. Neighbouring nodes share an element.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackMesh {
    track_id: String,
    positions: Vec<f64>,
    edges: Vec<f64>,
    lonlat: Option<Vec<(f64, f64)>>,
}

/// Raw node locations of one acquisition sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum Locations {
    /// Along-track arc length in km.
    ArcKm(Vec<f64>),
    /// `(longitude, latitude)` in degrees.
    LonLat(Vec<(f64, f64)>),
}

impl Locations {
    pub fn len(&self) -> usize {
        match self {
            Locations::ArcKm(v) => v.len(),
            Locations::LonLat(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl TrackMesh {
    /// Mesh with strictly increasing arc-length `positions`.
    pub fn from_positions(positions: Vec<f64>) -> Result<Self> {
        Self::with_id("0", positions)
    }

    pub fn with_id(track_id: impl Into<String>, positions: Vec<f64>) -> Result<Self> {
        let track_id = track_id.into();
        if positions.len() < 2 {
            return Err(Error::Mesh(format!(
                "track `{track_id}` has {} node(s), at least 2 are required",
                positions.len()
            )));
        }
        if let Some(bad) = positions.iter().position(|x| !x.is_finite()) {
            return Err(Error::Mesh(format!(
                "track `{track_id}`: non-finite position at node {bad}"
            )));
        }
        let edges: Vec<f64> = positions.windows(2).map(|w| w[1] - w[0]).collect();
        if let Some(i) = edges.iter().position(|&e| e <= 0.0) {
            let kind = if edges[i] == 0.0 { "duplicate" } else { "out-of-order" };
            return Err(Error::Mesh(format!(
                "track `{track_id}`: {kind} location between nodes {i} and {}",
                i + 1
            )));
        }
        Ok(Self {
            track_id,
            positions,
            edges,
            lonlat: None,
        })
    }

    /// Uniform mesh of `p` nodes with spacing `h`, starting at zero.
    pub fn uniform(p: usize, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid("h", "spacing must be positive"));
        }
        Self::from_positions((0..p).map(|i| i as f64 * h).collect())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn track_id(&self) -> &str {
        &self.track_id
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn lonlat(&self) -> Option<&[(f64, f64)]> {
        self.lonlat.as_deref()
    }

    pub fn length(&self) -> f64 {
        self.positions[self.len() - 1] - self.positions[0]
    }

    pub fn mean_spacing(&self) -> f64 {
        self.length() / (self.len() - 1) as f64
    }

    /// Positions rebuilt from the first node and the edge lengths.
    pub fn reconstruct_positions(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut x = self.positions[0];
        out.push(x);
        for e in &self.edges {
            x += e;
            out.push(x);
        }
        out
    }
}

/// Great-circle distance in km on a spherical Earth.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lon1, lat1) = (a.0.to_radians(), a.1.to_radians());
    let (lon2, lat2) = (b.0.to_radians(), b.1.to_radians());
    let s_lat = ((lat2 - lat1) / 2.0).sin();
    let s_lon = ((lon2 - lon1) / 2.0).sin();
    let h = s_lat * s_lat + lat1.cos() * lat2.cos() * s_lon * s_lon;
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Build one or more meshes from locations ordered along acquisition.
///
/// The sequence is split wherever a gap exceeds `gap_split_factor` times the
/// median spacing; pass `f64::INFINITY` to never split. Split pieces are
/// labelled `<track_id>.<piece>`.
pub fn build_track_mesh(track_id: &str, locations: &Locations, gap_split_factor: f64) -> Result<Vec<TrackMesh>> {
    if !(gap_split_factor > 0.0) {
        return Err(Error::invalid("gap_split_factor", "must be positive"));
    }
    if locations.len() < 2 {
        return Err(Error::Mesh(format!(
            "track `{track_id}` has {} location(s), at least 2 are required",
            locations.len()
        )));
    }
    let (positions, lonlat) = match locations {
        Locations::ArcKm(v) => (v.clone(), None),
        Locations::LonLat(v) => {
            let mut pos = Vec::with_capacity(v.len());
            let mut s = 0.0;
            pos.push(s);
            for w in v.windows(2) {
                s += haversine_km(w[0], w[1]);
                pos.push(s);
            }
            (pos, Some(v.clone()))
        }
    };
    // Validate ordering and duplicates on the whole sequence first.
    TrackMesh::with_id(track_id, positions.clone())?;

    let gaps: Vec<f64> = positions.windows(2).map(|w| w[1] - w[0]).collect();
    let threshold = gap_split_factor * median(&gaps);
    let mut cuts = vec![0];
    for (i, g) in gaps.iter().enumerate() {
        if *g > threshold {
            cuts.push(i + 1);
        }
    }
    cuts.push(positions.len());

    let split = cuts.len() > 2;
    let mut meshes = Vec::with_capacity(cuts.len() - 1);
    for (piece, w) in cuts.windows(2).enumerate() {
        let id = if split {
            format!("{track_id}.{piece}")
        } else {
            track_id.to_string()
        };
        let mut mesh = TrackMesh::with_id(id, positions[w[0]..w[1]].to_vec())?;
        mesh.lonlat = lonlat.as_ref().map(|ll: &Vec<(f64, f64)>| ll[w[0]..w[1]].to_vec());
        meshes.push(mesh);
    }
    Ok(meshes)
}

/// Contiguous tiles of a track with their halo nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshPartition {
    p: usize,
    tiles: Vec<Range<usize>>,
    halos: Vec<Vec<usize>>,
}

impl MeshPartition {
    /// Split `p` nodes into `n_tiles` contiguous ranges whose sizes differ by
    /// at most one.
    pub fn new(p: usize, n_tiles: usize) -> Result<Self> {
        if n_tiles == 0 || n_tiles > p {
            return Err(Error::invalid(
                "n_tiles",
                format!("must lie in [1, {p}], got {n_tiles}"),
            ));
        }
        let base = p / n_tiles;
        let extra = p % n_tiles;
        let mut tiles = Vec::with_capacity(n_tiles);
        let mut start = 0;
        for t in 0..n_tiles {
            let len = base + usize::from(t < extra);
            tiles.push(start..start + len);
            start += len;
        }
        let halos = tiles
            .iter()
            .map(|r| {
                let mut h = Vec::with_capacity(2);
                if r.start > 0 {
                    h.push(r.start - 1);
                }
                if r.end < p {
                    h.push(r.end);
                }
                h
            })
            .collect();
        Ok(Self { p, tiles, halos })
    }

    pub fn for_mesh(mesh: &TrackMesh, n_tiles: usize) -> Result<Self> {
        Self::new(mesh.len(), n_tiles)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn tiles(&self) -> &[Range<usize>] {
        &self.tiles
    }

    pub fn halos(&self) -> &[Vec<usize>] {
        &self.halos
    }

    /// Tile owning node `i`.
    pub fn tile_of(&self, i: usize) -> Option<usize> {
        self.tiles.iter().position(|r| r.contains(&i))
    }

    /// Tridiagonal product computed tile by tile. Each tile first copies its
    /// owned values and its halo into a local buffer, then computes its rows
    /// from that buffer only.
    pub fn matvec(&self, t: &SymTridiagonal, v: &[f64]) -> Vec<f64> {
        let pieces: Vec<Vec<f64>> = self
            .tiles
            .par_iter()
            .map(|r| {
                let lo = r.start.saturating_sub(1);
                let hi = (r.end + 1).min(self.p);
                // Halo exchange: the only reads of off-tile data.
                let local = &v[lo..hi];
                let offset = r.start - lo;
                let mut out = Vec::with_capacity(r.len());
                for i in r.clone() {
                    let li = i - r.start + offset;
                    let mut s = t.diag[i] * local[li];
                    if i > 0 {
                        s += t.off[i - 1] * local[li - 1];
                    }
                    if i + 1 < self.p {
                        s += t.off[i] * local[li + 1];
                    }
                    out.push(s);
                }
                out
            })
            .collect();
        pieces.concat()
    }
}
