//! Nearest-neighbour index tables for a region, shared by the solvers and
//! the energy sums.

use crate::geometry::{Region, Site};

pub const NONE: u32 = u32::MAX;

/// For every site and every direction (−e₀, +e₀, −e₁, …) the index of the
/// neighbour inside the region, or [`NONE`].
#[derive(Clone, Debug)]
pub struct Stencil {
    pub dim: usize,
    nbr: Vec<u32>,
}

impl Stencil {
    pub fn new(region: &Region) -> Stencil {
        let dim = region.dim();
        let dirs = 2 * dim;
        let mut nbr = vec![NONE; region.len() * dirs];
        for (i, &x) in region.sites().iter().enumerate() {
            for k in 0..dirs {
                if let Some(j) = region.position(direction_step(x, k)) {
                    nbr[i * dirs + k] = j as u32;
                }
            }
        }
        Stencil { dim, nbr }
    }

    pub fn dirs(&self) -> usize {
        2 * self.dim
    }

    pub fn len(&self) -> usize {
        self.nbr.len() / self.dirs()
    }

    pub fn is_empty(&self) -> bool {
        self.nbr.is_empty()
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[u32] {
        let d = self.dirs();
        &self.nbr[i * d..(i + 1) * d]
    }

    /// Number of neighbours inside the region.
    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).iter().filter(|&&j| j != NONE).count()
    }
}

/// The neighbour of `x` in direction `k` (k = 2·axis for −, 2·axis+1 for +).
#[inline]
pub fn direction_step(x: Site, k: usize) -> Site {
    x.offset(k / 2, if k % 2 == 0 { -1 } else { 1 })
}

/// An edge `{x, y}` meeting a region, listed once. `outer` is `None` when both
/// ends lie in the region; otherwise the region end is `inner`.
#[derive(Clone, Copy, Debug)]
pub struct Edge {
    pub inner: usize,
    pub other: EdgeEnd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeEnd {
    Inside(usize),
    Outside(Site),
}

/// Every edge e with e ∩ R ≠ ∅: interior edges once (from the lower end) and
/// every boundary-crossing edge once.
pub fn edges_meeting(region: &Region, stencil: &Stencil) -> Vec<Edge> {
    let mut out = Vec::new();
    for (i, &x) in region.sites().iter().enumerate() {
        for (k, &j) in stencil.neighbors(i).iter().enumerate() {
            if j == NONE {
                out.push(Edge { inner: i, other: EdgeEnd::Outside(direction_step(x, k)) });
            } else if k % 2 == 1 {
                out.push(Edge { inner: i, other: EdgeEnd::Inside(j as usize) });
            }
        }
    }
    out
}
