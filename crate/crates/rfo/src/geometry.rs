//! Sites, boxes and regions of Z^d (d <= 3), their boundaries, connectivity,
//! block coarse-grainings and the two length scales.

use std::collections::VecDeque;
use std::sync::Arc;

use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A lattice site. Coordinates beyond the ambient dimension are kept at zero,
/// so the derived ordering is the lexicographic order on the first `d` axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Site(pub [i64; 3]);

impl Site {
    pub fn new(coords: &[i64]) -> Site {
        let mut c = [0; 3];
        c[..coords.len()].copy_from_slice(coords);
        Site(c)
    }

    pub fn origin() -> Site {
        Site([0; 3])
    }

    pub fn offset(self, axis: usize, step: i64) -> Site {
        let mut c = self.0;
        c[axis] += step;
        Site(c)
    }

    pub fn add(self, other: Site) -> Site {
        Site([self.0[0] + other.0[0], self.0[1] + other.0[1], self.0[2] + other.0[2]])
    }

    pub fn sub(self, other: Site) -> Site {
        Site([self.0[0] - other.0[0], self.0[1] - other.0[1], self.0[2] - other.0[2]])
    }

    pub fn linf(self, other: Site) -> i64 {
        (0..3).map(|i| (self.0[i] - other.0[i]).abs()).max().unwrap()
    }

    pub fn l1(self, other: Site) -> i64 {
        (0..3).map(|i| (self.0[i] - other.0[i]).abs()).sum()
    }

    pub fn l2(self, other: Site) -> f64 {
        (0..3).map(|i| ((self.0[i] - other.0[i]) as f64).powi(2)).sum::<f64>().sqrt()
    }

    pub fn coords(&self, dim: usize) -> Vec<i64> {
        self.0[..dim].to_vec()
    }
}

/// Floor division that rounds toward negative infinity.
pub fn floor_div(a: i64, b: i64) -> i64 {
    a.div_euclid(b)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoxStyle {
    /// `corner + {0..side-1}^d`
    Corner,
    /// `corner + {-side/2..side/2-1}^d`
    Centered,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatticeBox {
    pub dim: usize,
    pub corner: Site,
    pub side: i64,
    pub style: BoxStyle,
}

impl LatticeBox {
    pub fn new(dim: usize, corner: Site, side: i64) -> LatticeBox {
        assert!(side >= 1, "box side must be positive");
        assert!((1..=3).contains(&dim));
        LatticeBox { dim, corner, side, style: BoxStyle::Corner }
    }

    pub fn centered(dim: usize, center: Site, side: i64) -> Result<LatticeBox> {
        if side < 2 || side % 2 != 0 {
            return Err(Error::invalid("center-anchored boxes need an even side"));
        }
        Ok(LatticeBox { dim, corner: center, side, style: BoxStyle::Centered })
    }

    /// Lowest corner of the box, whatever its anchoring.
    pub fn lo(&self) -> Site {
        match self.style {
            BoxStyle::Corner => self.corner,
            BoxStyle::Centered => {
                let mut c = self.corner.0;
                for v in c.iter_mut().take(self.dim) {
                    *v -= self.side / 2;
                }
                Site(c)
            }
        }
    }

    pub fn hi(&self) -> Site {
        let mut c = self.lo().0;
        for v in c.iter_mut().take(self.dim) {
            *v += self.side - 1;
        }
        Site(c)
    }

    pub fn volume(&self) -> usize {
        (self.side as usize).pow(self.dim as u32)
    }

    pub fn contains(&self, x: Site) -> bool {
        let lo = self.lo();
        (0..self.dim).all(|i| x.0[i] >= lo.0[i] && x.0[i] < lo.0[i] + self.side)
    }

    pub fn contains_box(&self, other: &LatticeBox) -> bool {
        self.contains(other.lo()) && self.contains(other.hi())
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.dim, self.lo(), [self.side as usize; 3])
    }

    pub fn sites(&self) -> Vec<Site> {
        self.grid().sites()
    }

    pub fn region(&self) -> Region {
        Region::from_sorted_unique(self.dim, self.sites())
    }

    /// ℓ^∞ distance from an interior site to the outer boundary of the box.
    pub fn dist_to_outer_boundary(&self, x: Site) -> i64 {
        let lo = self.lo();
        (0..self.dim)
            .map(|i| (x.0[i] - lo.0[i] + 1).min(lo.0[i] + self.side - x.0[i]))
            .min()
            .unwrap()
    }

    pub fn intersects_region(&self, region: &Region) -> bool {
        if region.len() <= self.volume() {
            region.sites().iter().any(|&s| self.contains(s))
        } else {
            self.sites().iter().any(|s| region.contains(*s))
        }
    }
}

/// Dense rectangular index over a box of sites, used for fast per-site
/// arrays, prefix sums and distance transforms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid {
    pub dim: usize,
    pub lo: Site,
    pub shape: [usize; 3],
}

impl Grid {
    pub fn new(dim: usize, lo: Site, shape: [usize; 3]) -> Grid {
        let mut s = shape;
        for v in s.iter_mut().skip(dim) {
            *v = 1;
        }
        let mut l = lo;
        for v in l.0.iter_mut().skip(dim) {
            *v = 0;
        }
        Grid { dim, lo: l, shape: s }
    }

    /// Bounding grid of a non-empty region, padded by `margin` on every side.
    pub fn covering(region: &Region, margin: i64) -> Grid {
        let (lo, hi) = region.bounds().expect("covering grid of empty region");
        let mut l = lo;
        let mut shape = [1usize; 3];
        for i in 0..region.dim() {
            l.0[i] -= margin;
            shape[i] = (hi.0[i] - lo.0[i] + 1 + 2 * margin) as usize;
        }
        Grid::new(region.dim(), l, shape)
    }

    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, x: Site) -> Option<usize> {
        let mut idx = 0usize;
        for i in 0..3 {
            let r = x.0[i] - self.lo.0[i];
            if r < 0 || r >= self.shape[i] as i64 {
                return None;
            }
            idx = idx * self.shape[i] + r as usize;
        }
        Some(idx)
    }

    pub fn site(&self, mut idx: usize) -> Site {
        let mut c = [0i64; 3];
        for i in (0..3).rev() {
            c[i] = self.lo.0[i] + (idx % self.shape[i]) as i64;
            idx /= self.shape[i];
        }
        Site(c)
    }

    /// Index stride of one step along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.shape[axis + 1..].iter().product()
    }

    pub fn sites(&self) -> Vec<Site> {
        (0..self.len()).map(|i| self.site(i)).collect()
    }

    pub fn contains(&self, x: Site) -> bool {
        self.index(x).is_some()
    }

    /// Exact ℓ^∞ distance from every grid site to the nearest source, by
    /// multi-source BFS over king moves. `u32::MAX` where no source exists.
    pub fn linf_distance(&self, sources: impl Iterator<Item = Site>) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.len()];
        let mut queue = VecDeque::new();
        for s in sources {
            if let Some(i) = self.index(s) {
                if dist[i] == u32::MAX {
                    dist[i] = 0;
                    queue.push_back(i);
                }
            }
        }
        let moves = king_moves(self.dim);
        while let Some(i) = queue.pop_front() {
            let x = self.site(i);
            for m in &moves {
                if let Some(j) = self.index(x.add(*m)) {
                    if dist[j] == u32::MAX {
                        dist[j] = dist[i] + 1;
                        queue.push_back(j);
                    }
                }
            }
        }
        dist
    }
}

fn king_moves(dim: usize) -> Vec<Site> {
    let mut out = Vec::new();
    let r = |i: usize| if i < dim { -1..=1 } else { 0..=0 };
    for a in r(0) {
        for b in r(1) {
            for c in r(2) {
                if (a, b, c) != (0, 0, 0) {
                    out.push(Site([a, b, c]));
                }
            }
        }
    }
    out
}

fn axis_moves(dim: usize) -> Vec<Site> {
    let mut out = Vec::new();
    for i in 0..dim {
        out.push(Site::origin().offset(i, -1));
        out.push(Site::origin().offset(i, 1));
    }
    out
}

/// A finite set of sites, stored sorted with a hash index so that membership
/// is O(1) and per-site arrays can be aligned with `sites()`.
#[derive(Clone, Debug)]
pub struct Region {
    dim: usize,
    sites: Vec<Site>,
    index: FxHashMap<Site, usize>,
}

impl PartialEq for Region {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.sites == other.sites
    }
}

impl Eq for Region {}

impl Region {
    pub fn empty(dim: usize) -> Region {
        Region { dim, sites: Vec::new(), index: FxHashMap::default() }
    }

    pub fn from_sites(dim: usize, sites: impl IntoIterator<Item = Site>) -> Region {
        let mut v: Vec<Site> = sites.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Region::from_sorted_unique(dim, v)
    }

    fn from_sorted_unique(dim: usize, sites: Vec<Site>) -> Region {
        let mut index = FxHashMap::default();
        index.reserve(sites.len());
        for (i, s) in sites.iter().enumerate() {
            debug_assert!(s.0[dim..].iter().all(|&c| c == 0));
            index.insert(*s, i);
        }
        Region { dim, sites, index }
    }

    pub fn from_boxes(dim: usize, boxes: &[LatticeBox]) -> Region {
        Region::from_sites(dim, boxes.iter().flat_map(|b| b.sites()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn contains(&self, x: Site) -> bool {
        self.index.contains_key(&x)
    }

    pub fn position(&self, x: Site) -> Option<usize> {
        self.index.get(&x).copied()
    }

    pub fn bounds(&self) -> Option<(Site, Site)> {
        let first = *self.sites.first()?;
        let (mut lo, mut hi) = (first, first);
        for s in &self.sites {
            for i in 0..3 {
                lo.0[i] = lo.0[i].min(s.0[i]);
                hi.0[i] = hi.0[i].max(s.0[i]);
            }
        }
        Some((lo, hi))
    }

    pub fn union(&self, other: &Region) -> Region {
        Region::from_sites(self.dim, self.sites.iter().chain(other.sites.iter()).copied())
    }

    pub fn intersection(&self, other: &Region) -> Region {
        let v = self.sites.iter().copied().filter(|s| other.contains(*s)).collect();
        Region::from_sorted_unique(self.dim, v)
    }

    pub fn difference(&self, other: &Region) -> Region {
        let v = self.sites.iter().copied().filter(|s| !other.contains(*s)).collect();
        Region::from_sorted_unique(self.dim, v)
    }

    pub fn filter(&self, mut keep: impl FnMut(Site) -> bool) -> Region {
        let v = self.sites.iter().copied().filter(|s| keep(*s)).collect();
        Region::from_sorted_unique(self.dim, v)
    }

    pub fn is_subset(&self, other: &Region) -> bool {
        self.sites.iter().all(|s| other.contains(*s))
    }

    pub fn is_disjoint(&self, other: &Region) -> bool {
        let (small, big) = if self.len() <= other.len() { (self, other) } else { (other, self) };
        small.sites.iter().all(|s| !big.contains(*s))
    }

    pub fn translate(&self, v: Site) -> Region {
        Region::from_sorted_unique(self.dim, self.sites.iter().map(|s| s.add(v)).collect())
    }

    /// Nearest-neighbour (ℓ¹) neighbours of a site.
    pub fn neighbors(&self, x: Site) -> impl Iterator<Item = Site> + '_ {
        (0..self.dim).flat_map(move |i| [x.offset(i, -1), x.offset(i, 1)])
    }

    /// Is every site of the region inside some standard block of this scale,
    /// i.e. is it a union of such blocks?
    pub fn is_measurable(&self, scale: i64) -> bool {
        let blocks = enumerate_blocks(self, scale, BlockFamily::Standard).unwrap();
        blocks.len() * (scale as usize).pow(self.dim as u32) == self.len()
    }

    pub fn shared(self) -> Arc<Region> {
        Arc::new(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Inner,
    Outer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connectivity {
    /// ℓ¹ adjacency
    Graph,
    /// ℓ^∞ adjacency: the closed unit cubes centred at the sites touch
    Closed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockFamily {
    /// corners in `scale·Z^d`
    Standard,
    /// the standard family translated by a single offset from `(scale/16)·{-32..32}^d`
    Shifted(Site),
    /// union over every admissible offset, i.e. corners in `(scale/16)·Z^d`
    AllShifts,
    /// the standard family translated by `scale/2` in every direction
    Staggered,
}

/// Every block of the family that meets `region`, once, in lexicographic
/// order of corners.
pub fn enumerate_blocks(region: &Region, scale: i64, family: BlockFamily) -> Result<Vec<LatticeBox>> {
    if scale < 1 {
        return Err(Error::invalid("block scale must be positive"));
    }
    let dim = region.dim();
    let mut corners: FxHashSet<Site> = FxHashSet::default();
    let snap = |x: Site, offset: Site, step: i64| {
        let mut c = [0; 3];
        for i in 0..dim {
            c[i] = floor_div(x.0[i] - offset.0[i], step) * step + offset.0[i];
        }
        Site(c)
    };
    match family {
        BlockFamily::Standard | BlockFamily::Staggered | BlockFamily::Shifted(_) => {
            let offset = match family {
                BlockFamily::Standard => Site::origin(),
                BlockFamily::Staggered => {
                    if scale % 2 != 0 {
                        return Err(Error::invalid("staggered family needs an even scale"));
                    }
                    let mut c = [0; 3];
                    c[..dim].iter_mut().for_each(|v| *v = scale / 2);
                    Site(c)
                }
                BlockFamily::Shifted(eta) => {
                    check_shift(dim, scale, eta)?;
                    eta
                }
                BlockFamily::AllShifts => unreachable!(),
            };
            for &x in region.sites() {
                corners.insert(snap(x, offset, scale));
            }
        }
        BlockFamily::AllShifts => {
            if scale % 16 != 0 {
                return Err(Error::invalid(format!("shifted family needs 16 | scale, got {scale}")));
            }
            let step = scale / 16;
            // every corner c on the step lattice with c <= x < c + scale
            let per_axis = (scale / step) as usize;
            for &x in region.sites() {
                let base = snap(x, Site::origin(), step);
                let ranges: Vec<usize> = (0..3).map(|i| if i < dim { per_axis } else { 1 }).collect();
                for a in 0..ranges[0] {
                    for b in 0..ranges[1] {
                        for c in 0..ranges[2] {
                            let k = [a as i64, b as i64, c as i64];
                            let mut s = base.0;
                            for i in 0..dim {
                                s[i] -= k[i] * step;
                            }
                            corners.insert(Site(s));
                        }
                    }
                }
            }
        }
    }
    let mut v: Vec<Site> = corners.into_iter().collect();
    v.sort_unstable();
    Ok(v.into_iter().map(|c| LatticeBox::new(dim, c, scale)).collect())
}

fn check_shift(dim: usize, scale: i64, eta: Site) -> Result<()> {
    if scale % 16 != 0 {
        return Err(Error::invalid(format!("shifted family needs 16 | scale, got {scale}")));
    }
    let step = scale / 16;
    for i in 0..dim {
        if eta.0[i] % step != 0 || (eta.0[i] / step).abs() > 32 {
            return Err(Error::invalid(format!("shift {:?} not in (scale/16)·{{-32..32}}^d", eta.0)));
        }
    }
    Ok(())
}

/// The admissible shifts `(scale/16)·{-32..32}^d`, subsampled by `stride`
/// (stride 1 gives the full family).
pub fn shift_offsets(dim: usize, scale: i64, stride: i64) -> Result<Vec<Site>> {
    if scale % 16 != 0 {
        return Err(Error::invalid(format!("shifted family needs 16 | scale, got {scale}")));
    }
    if stride < 1 || 32 % stride != 0 {
        return Err(Error::invalid("shift stride must divide 32"));
    }
    let step = scale / 16;
    let ks: Vec<i64> = (-32..=32).filter(|k| k % stride == 0).collect();
    let axis = |i: usize| if i < dim { ks.clone() } else { vec![0] };
    let mut out = Vec::new();
    for a in axis(0) {
        for b in axis(1) {
            for c in axis(2) {
                out.push(Site([a * step, b * step, c * step]));
            }
        }
    }
    Ok(out)
}

pub fn boundary(region: &Region, side: Side) -> Region {
    let moves = axis_moves(region.dim());
    match side {
        Side::Inner => region.filter(|x| moves.iter().any(|m| !region.contains(x.add(*m)))),
        Side::Outer => {
            let mut out = FxHashSet::default();
            for &x in region.sites() {
                for m in &moves {
                    let y = x.add(*m);
                    if !region.contains(y) {
                        out.insert(y);
                    }
                }
            }
            Region::from_sites(region.dim(), out)
        }
    }
}

/// Components ordered by their least site.
pub fn connected_components(region: &Region, mode: Connectivity) -> Vec<Region> {
    let moves = match mode {
        Connectivity::Graph => axis_moves(region.dim()),
        Connectivity::Closed => king_moves(region.dim()),
    };
    let mut label = vec![usize::MAX; region.len()];
    let mut comps = Vec::new();
    for start in 0..region.len() {
        if label[start] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut members = vec![region.sites()[start]];
        label[start] = id;
        let mut head = 0;
        while head < members.len() {
            let x = members[head];
            head += 1;
            for m in &moves {
                if let Some(j) = region.position(x.add(*m)) {
                    if label[j] == usize::MAX {
                        label[j] = id;
                        members.push(region.sites()[j]);
                    }
                }
            }
        }
        comps.push(Region::from_sites(region.dim(), members));
    }
    comps
}

/// Union of the standard `scale`-blocks whose closed cube lies at ℓ^∞
/// distance `< threshold` from the closed hull of the region.
pub fn enlarge(region: &Region, scale: i64, threshold: i64) -> Region {
    enlarge_blocks(region, scale, threshold)
        .iter()
        .fold(Region::empty(region.dim()), |acc, b| acc.union(&b.region()))
}

/// Block list form of [`enlarge`], lexicographic by corner.
pub fn enlarge_blocks(region: &Region, scale: i64, threshold: i64) -> Vec<LatticeBox> {
    let dim = region.dim();
    // Block with corner r (closed cube [r-1/2, r+s-1/2]) and the unit cube of
    // site a: per-axis gap max(0, r-a-1, a-r-s). Gap < t for every axis
    // ⇔ a-s-t < r < a+1+t.
    let mut corners = FxHashSet::default();
    let blocks = enumerate_blocks(region, scale, BlockFamily::Standard).unwrap();
    for b in &blocks {
        let occupied: Vec<Site> = b.sites().into_iter().filter(|s| region.contains(*s)).collect();
        let mut ext = [(i64::MAX, i64::MIN); 3];
        for s in &occupied {
            for i in 0..dim {
                ext[i].0 = ext[i].0.min(s.0[i]);
                ext[i].1 = ext[i].1.max(s.0[i]);
            }
        }
        // candidate corners from the occupied extent, then verified per site
        let mut kr = [(0i64, 0i64); 3];
        for i in 0..3 {
            if i < dim {
                let rmin = ext[i].0 - scale - threshold + 1;
                let rmax = ext[i].1 + threshold;
                kr[i] = (ceil_div(rmin, scale), floor_div(rmax, scale));
            }
        }
        for k0 in kr[0].0..=kr[0].1 {
            for k1 in kr[1].0..=kr[1].1 {
                for k2 in kr[2].0..=kr[2].1 {
                    let r = Site([k0 * scale, k1 * scale, k2 * scale]);
                    if corners.contains(&r) {
                        continue;
                    }
                    let hit = occupied.iter().any(|a| {
                        (0..dim).all(|i| {
                            let gap = (r.0[i] - a.0[i] - 1).max(a.0[i] - r.0[i] - scale).max(0);
                            gap < threshold
                        })
                    });
                    if hit {
                        corners.insert(r);
                    }
                }
            }
        }
    }
    let mut v: Vec<Site> = corners.into_iter().collect();
    v.sort_unstable();
    v.into_iter().map(|c| LatticeBox::new(dim, c, scale)).collect()
}

fn ceil_div(a: i64, b: i64) -> i64 {
    -floor_div(-a, b)
}

/// Exterior/interior split of the complement of a region, computed inside a
/// frame two sites beyond its bounding box.
#[derive(Clone, Debug)]
pub struct IntExt {
    pub frame: Grid,
    /// the unbounded complement component, restricted to the frame
    pub exterior: Region,
    /// bounded complement components, ordered by least site
    pub interiors: Vec<Region>,
}

impl IntExt {
    /// Is `x` in the exterior (including everything outside the frame)?
    pub fn is_exterior(&self, x: Site) -> bool {
        !self.frame.contains(x) || self.exterior.contains(x)
    }

    pub fn interior_of(&self, x: Site) -> Option<usize> {
        self.interiors.iter().position(|r| r.contains(x))
    }
}

/// Complement components use ℓ¹ adjacency: two complement unit cubes are
/// joined in R^d minus the closed cubes of the region exactly when a chain of
/// face-sharing complement cubes connects them.
pub fn int_ext_decompose(region: &Region) -> IntExt {
    let dim = region.dim();
    if region.is_empty() {
        let frame = Grid::new(dim, Site::origin(), [0; 3]);
        return IntExt { frame, exterior: Region::empty(dim), interiors: Vec::new() };
    }
    let frame = Grid::covering(region, 2);
    let complement = Region::from_sites(dim, frame.sites().into_iter().filter(|s| !region.contains(*s)));
    let mut exterior = Region::empty(dim);
    let mut interiors = Vec::new();
    let lo = frame.lo;
    for comp in connected_components(&complement, Connectivity::Graph) {
        let touches_frame = comp.sites().iter().any(|s| {
            (0..dim).any(|i| s.0[i] == lo.0[i] || s.0[i] == lo.0[i] + frame.shape[i] as i64 - 1)
        });
        if touches_frame {
            exterior = exterior.union(&comp);
        } else {
            interiors.push(comp);
        }
    }
    IntExt { frame, exterior, interiors }
}

/// `c(A) = δ(A) ∪ Int(A)` with `δ` the `scale`-enlargement at threshold `scale`.
pub fn closed_hull(region: &Region, scale: i64) -> Result<Region> {
    if scale < 1 {
        return Err(Error::invalid("closed hull needs a positive scale"));
    }
    let mut hull = enlarge(region, scale, scale);
    for comp in int_ext_decompose(region).interiors {
        hull = hull.union(&comp);
    }
    Ok(hull)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub epsilon: f64,
    pub small: i64,
    pub large: i64,
    pub clamped: bool,
}

/// `log2 ℓ = floor(log2(ε^-1 |ln ε|^-4))`, `log2 L = ceil(log2(ε^-1 |ln ε|^4))`,
/// natural logarithm, both clamped below at 2.
pub fn derive_scales(epsilon: f64) -> Result<Scales> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!("ε must lie in (0,1), got {epsilon}")));
    }
    let le = epsilon.ln().abs();
    let raw_small = (1.0 / epsilon) * le.powi(-4);
    let raw_large = (1.0 / epsilon) * le.powi(4);
    let mut clamped = false;
    let mut pow2 = |raw: f64, up: bool| -> i64 {
        let e = if up { raw.log2().ceil() } else { raw.log2().floor() };
        let v = if e < 1.0 { 2.0 } else { 2f64.powf(e) };
        if raw < 2.0 {
            clamped = true;
            return 2;
        }
        v as i64
    };
    let small = pow2(raw_small, false);
    let large = pow2(raw_large, true);
    Ok(Scales { epsilon, small, large: large.max(small), clamped })
}
