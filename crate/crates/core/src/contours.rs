//! Region labelling and boundary extraction from class masks.
//!
//! Boundaries run along pixel edges, so ring vertices sit on the integer
//! lattice and a single pixel `(x, y)` becomes the unit square
//! `(x,y),(x+1,y),(x+1,y+1),(x,y+1)`. Exterior rings come out with positive
//! signed area and holes with negative signed area (y-down frame). Only the
//! corners of each boundary chain are kept; straight runs are collapsed.

use rayon::prelude::*;

use crate::geometry::{Point2, PolygonWithHoles, Ring};
use crate::raster::MaskRaster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    pub fn from_neighbours(n: u8) -> Option<Self> {
        match n {
            4 => Some(Self::Four),
            8 => Some(Self::Eight),
            _ => None,
        }
    }
}

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelBox {
    fn point(x: usize, y: usize) -> Self {
        Self {
            x0: x,
            y0: y,
            x1: x,
            y1: y,
        }
    }

    fn include(&mut self, x: usize, y: usize) {
        self.x0 = self.x0.min(x);
        self.y0 = self.y0.min(y);
        self.x1 = self.x1.max(x);
        self.y1 = self.y1.max(y);
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub class: u8,
    pub pixel_count: usize,
    pub bbox: PixelBox,
}

/// Per-pixel region ids. Id 0 is background; region `k` (1-based) is
/// described by `regions[k - 1]`. Ids are assigned in row-major order of
/// each region's first pixel.
#[derive(Debug, Clone)]
pub struct Components {
    pub width: usize,
    pub height: usize,
    pub ids: Vec<u32>,
    pub regions: Vec<Region>,
}

impl Components {
    pub fn id_at(&self, x: usize, y: usize) -> u32 {
        self.ids[y * self.width + x]
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn find(&mut self, mut a: u32) -> u32 {
        while self.parent[a as usize] != a {
            let grand = self.parent[self.parent[a as usize] as usize];
            self.parent[a as usize] = grand;
            a = grand;
        }
        a
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller root so provisional order is row-major
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Labels connected regions of equal non-zero class.
pub fn connected_components(mask: &MaskRaster, connectivity: Connectivity) -> Components {
    let (w, h) = (mask.width(), mask.height());
    let labels = mask.labels();
    let mut ids = vec![0u32; w * h];
    let mut sets = DisjointSet { parent: vec![0] };

    for y in 0..h {
        for x in 0..w {
            let c = labels[y * w + x];
            if c == 0 {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut count = 0;
            let mut consider = |nx: usize, ny: usize| {
                let i = ny * w + nx;
                if labels[i] == c {
                    neighbours[count] = ids[i];
                    count += 1;
                }
            };
            if x > 0 {
                consider(x - 1, y);
            }
            if y > 0 {
                consider(x, y - 1);
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        consider(x - 1, y - 1);
                    }
                    if x + 1 < w {
                        consider(x + 1, y - 1);
                    }
                }
            }
            let id = if count == 0 {
                let id = sets.parent.len() as u32;
                sets.parent.push(id);
                id
            } else {
                let first = neighbours[0];
                for &other in &neighbours[1..count] {
                    sets.union(first, other);
                }
                first
            };
            ids[y * w + x] = id;
        }
    }

    // Resolve to dense final ids in row-major first-pixel order.
    let mut remap = vec![0u32; sets.parent.len()];
    let mut regions: Vec<Region> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if ids[i] == 0 {
                continue;
            }
            let root = sets.find(ids[i]) as usize;
            if remap[root] == 0 {
                regions.push(Region {
                    class: labels[i],
                    pixel_count: 0,
                    bbox: PixelBox::point(x, y),
                });
                remap[root] = regions.len() as u32;
            }
            let id = remap[root];
            let r = &mut regions[id as usize - 1];
            r.pixel_count += 1;
            r.bbox.include(x, y);
            ids[i] = id;
        }
    }

    Components {
        width: w,
        height: h,
        ids,
        regions,
    }
}

/// One traced region: its class, id in [`Components`] and boundary polygon.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    pub class: u8,
    pub region: u32,
    pub polygon: PolygonWithHoles,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContourSet {
    pub contours: Vec<Contour>,
}

impl ContourSet {
    pub fn len(&self) -> usize {
        self.contours.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contours.is_empty()
    }
}

/// Traces the exterior and hole boundaries of every region.
///
/// Regions are traced independently (in parallel) and returned in region-id
/// order. Pinch vertices, where two region pixels touch only diagonally, are
/// passed through when `connectivity` joins diagonal pixels and turned at
/// otherwise, so each ring encloses exactly one region's pixels.
pub fn extract_contours(mask: &MaskRaster, connectivity: Connectivity) -> ContourSet {
    let comps = connected_components(mask, connectivity);
    extract_from_components(&comps, connectivity)
}

pub fn extract_from_components(comps: &Components, connectivity: Connectivity) -> ContourSet {
    let contours = comps
        .regions
        .par_iter()
        .enumerate()
        .map(|(k, region)| {
            let id = k as u32 + 1;
            let polygon = trace_region(comps, id, &region.bbox, connectivity);
            Contour {
                class: region.class,
                region: id,
                polygon,
            }
        })
        .collect();
    ContourSet { contours }
}

// Directed boundary edges keep the region on the same side. For a pixel at
// (px, py): top (px,py)->(px+1,py), right (px+1,py)->(px+1,py+1),
// bottom (px+1,py+1)->(px,py+1), left (px,py+1)->(px,py).
#[derive(Clone, Copy)]
struct BoundaryEdge {
    from: (usize, usize),
    to: (usize, usize),
    owner: (usize, usize),
}

fn trace_region(comps: &Components, id: u32, bbox: &PixelBox, connectivity: Connectivity) -> PolygonWithHoles {
    let (bw, bh) = (bbox.width(), bbox.height());
    let vw = bw + 1;
    let vertex = |(x, y): (usize, usize)| y * vw + x;
    let inside = |lx: isize, ly: isize| -> bool {
        if lx < 0 || ly < 0 || lx >= bw as isize || ly >= bh as isize {
            return false;
        }
        comps.id_at(bbox.x0 + lx as usize, bbox.y0 + ly as usize) == id
    };

    let mut edges: Vec<BoundaryEdge> = Vec::new();
    for ly in 0..bh {
        for lx in 0..bw {
            let (ix, iy) = (lx as isize, ly as isize);
            if !inside(ix, iy) {
                continue;
            }
            let owner = (lx, ly);
            let mut push = |from, to| edges.push(BoundaryEdge { from, to, owner });
            if !inside(ix, iy - 1) {
                push((lx, ly), (lx + 1, ly));
            }
            if !inside(ix + 1, iy) {
                push((lx + 1, ly), (lx + 1, ly + 1));
            }
            if !inside(ix, iy + 1) {
                push((lx + 1, ly + 1), (lx, ly + 1));
            }
            if !inside(ix - 1, iy) {
                push((lx, ly + 1), (lx, ly));
            }
        }
    }

    // Outgoing edges per lattice vertex; two only at saddles.
    let mut outgoing: Vec<[u32; 2]> = vec![[u32::MAX; 2]; vw * (bh + 1)];
    for (k, e) in edges.iter().enumerate() {
        let slot = &mut outgoing[vertex(e.from)];
        if slot[0] == u32::MAX {
            slot[0] = k as u32;
        } else {
            slot[1] = k as u32;
        }
    }

    // At a saddle the incoming edge's owner pixel also owns exactly one of the
    // two outgoing edges. Staying with that pixel separates diagonal
    // neighbours; switching to the other edge joins them.
    let next_edge = |incoming: &BoundaryEdge| -> usize {
        let slot = outgoing[vertex(incoming.to)];
        if slot[1] == u32::MAX {
            return slot[0] as usize;
        }
        let same = usize::from(edges[slot[0] as usize].owner != incoming.owner);
        let pick = match connectivity {
            Connectivity::Four => same,
            Connectivity::Eight => 1 - same,
        };
        slot[pick] as usize
    };

    let mut used = vec![false; edges.len()];
    let mut rings: Vec<Ring> = Vec::new();
    for first in 0..edges.len() {
        if used[first] {
            continue;
        }
        let mut chain = Vec::new();
        let mut current = first;
        loop {
            used[current] = true;
            chain.push(edges[current].from);
            current = next_edge(&edges[current]);
            if current == first {
                break;
            }
        }
        if let Some(r) = chain_to_ring(&chain, bbox) {
            rings.push(r);
        }
    }

    let (exteriors, holes): (Vec<Ring>, Vec<Ring>) = rings.into_iter().partition(|r| r.signed_area() > 0.0);
    // A connected region has exactly one outer boundary.
    debug_assert_eq!(exteriors.len(), 1);
    let exterior = exteriors
        .into_iter()
        .max_by(|a, b| a.signed_area().total_cmp(&b.signed_area()))
        .expect("every region has an exterior boundary");
    PolygonWithHoles::new(exterior, holes).expect("traced holes lie inside the exterior")
}

fn chain_to_ring(chain: &[(usize, usize)], bbox: &PixelBox) -> Option<Ring> {
    let n = chain.len();
    let pts: Vec<Point2> = (0..n)
        .filter(|&i| {
            let prev = chain[(i + n - 1) % n];
            let here = chain[i];
            let next = chain[(i + 1) % n];
            let d1 = (here.0 as isize - prev.0 as isize, here.1 as isize - prev.1 as isize);
            let d2 = (next.0 as isize - here.0 as isize, next.1 as isize - here.1 as isize);
            d1 != d2
        })
        .map(|i| {
            let (x, y) = chain[i];
            Point2::new((x + bbox.x0) as f64, (y + bbox.y0) as f64)
        })
        .collect();
    Ring::new(pts).ok()
}
