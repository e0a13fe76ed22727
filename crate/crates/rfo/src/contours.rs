//! Contours: maximal closed-connected components of {Ψ = 0} with their ψ
//! labels, the regions derived from them, and the collar sets used by the
//! surgery.

use std::sync::Arc;

use rustc_hash::{FxHashMap, FxHashSet};
use serde::Serialize;

use crate::classification::{for_each_offset, region_taxonomy, Classifier, ClassifierParams, PhaseMap};
use crate::energy::{BoundaryCondition, SpinConfig};
use crate::error::{Error, Result};
use crate::fields::DisorderRealization;
use crate::geometry::{connected_components, int_ext_decompose, Connectivity, Grid, LatticeBox, Region, Site};

#[derive(Clone, Debug, PartialEq)]
pub struct Contour {
    pub scale: i64,
    /// corners of the L-blocks forming the spine, sorted
    pub blocks: Vec<Site>,
    pub spine: Arc<Region>,
    /// ψ on the spine, aligned with `spine.sites()`
    pub labels: Vec<i8>,
    /// the spine's 2L-neighbourhood or its collar leaves the domain
    pub touches_boundary: bool,
}

fn coarse(c: Site, scale: i64) -> Site {
    let mut s = c;
    for v in s.0.iter_mut() {
        *v = v.div_euclid(scale);
    }
    s
}

fn fine(k: Site, scale: i64) -> Site {
    let mut s = k;
    for v in s.0.iter_mut() {
        *v *= scale;
    }
    s
}

pub(crate) fn blocks_region(dim: usize, corners: &[Site], scale: i64) -> Region {
    let boxes: Vec<LatticeBox> = corners.iter().map(|&c| LatticeBox::new(dim, c, scale)).collect();
    Region::from_boxes(dim, &boxes)
}

/// Corners of the blocks king-adjacent to (or in) the given set.
fn king_dilate(dim: usize, corners: &[Site], scale: i64) -> Vec<Site> {
    let mut out: FxHashSet<Site> = FxHashSet::default();
    for &c in corners {
        for_each_offset(dim, 1, |k| {
            out.insert(c.add(fine(k, scale)));
        });
    }
    let mut v: Vec<Site> = out.into_iter().collect();
    v.sort_unstable();
    v
}

impl Contour {
    pub fn dim(&self) -> usize {
        self.spine.dim()
    }

    pub fn label(&self, x: Site) -> Option<i8> {
        self.spine.position(x).map(|i| self.labels[i])
    }

    /// Corners of the blocks of δ(Γ): the spine and every block touching it.
    pub fn delta_blocks(&self) -> Vec<Site> {
        king_dilate(self.dim(), &self.blocks, self.scale)
    }

    /// Corners of δ(Γ) \ sp(Γ).
    pub fn collar_blocks(&self) -> Vec<Site> {
        let own: FxHashSet<Site> = self.blocks.iter().copied().collect();
        self.delta_blocks().into_iter().filter(|c| !own.contains(c)).collect()
    }

    /// Ψ on the collar blocks as determined by the labels alone: a collar
    /// block carries sign s exactly when every spine block within 2L is
    /// labelled s throughout. None marks a block the labels do not determine.
    pub fn recovered_phase(&self) -> FxHashMap<Site, Option<i8>> {
        let dim = self.dim();
        let own: FxHashSet<Site> = self.blocks.iter().copied().collect();
        let mut block_sign: FxHashMap<Site, Option<i8>> = FxHashMap::default();
        for &c in &self.blocks {
            let vals: FxHashSet<i8> =
                LatticeBox::new(dim, c, self.scale).sites().iter().map(|&x| self.label(x).unwrap()).collect();
            let s = if vals.len() == 1 { vals.into_iter().next().filter(|v| *v != 0) } else { None };
            block_sign.insert(c, s);
        }
        let mut out = FxHashMap::default();
        for c in self.collar_blocks() {
            let mut signs = FxHashSet::default();
            let mut undetermined = false;
            for_each_offset(dim, 2, |k| {
                let nb = c.add(fine(k, self.scale));
                if own.contains(&nb) {
                    match block_sign[&nb] {
                        Some(s) => {
                            signs.insert(s);
                        }
                        None => undetermined = true,
                    }
                }
            });
            let v = if !undetermined && signs.len() == 1 { signs.into_iter().next() } else { None };
            out.insert(c, v);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Extraction {
    pub phases: PhaseMap,
    pub contours: Vec<Contour>,
}

/// Closed-connected components of {Ψ = 0} over the L-blocks of the domain,
/// ordered by least site. The domain must be L-measurable.
pub fn extract_contours(sigma: &SpinConfig, bc: &BoundaryCondition, params: &ClassifierParams) -> Result<Extraction> {
    let domain = sigma.region();
    let big = params.large;
    if !domain.is_measurable(big) {
        return Err(Error::invalid(format!("contour extraction needs an {big}-measurable domain")));
    }
    let phases = PhaseMap::compute(sigma, bc, params)?;
    let contours = contours_of(&phases, domain)?;
    Ok(Extraction { phases, contours })
}

fn contours_of(phases: &PhaseMap, domain: &Arc<Region>) -> Result<Vec<Contour>> {
    let dim = domain.dim();
    let big = phases.large;
    let zero: Vec<Site> = phases.blocks_with(0).iter().map(|&c| coarse(c, big)).collect();
    let affected: FxHashSet<Site> =
        phases.blocks().iter().filter(|(_, b)| b.boundary_affected).map(|(c, _)| *c).collect();
    let mut out = Vec::new();
    for comp in connected_components(&Region::from_sites(dim, zero), Connectivity::Closed) {
        let blocks: Vec<Site> = comp.sites().iter().map(|&k| fine(k, big)).collect();
        let spine = Arc::new(blocks_region(dim, &blocks, big));
        let labels = spine.sites().iter().map(|&x| phases.psi(x).unwrap_or(0)).collect();
        let collar_outside = king_dilate(dim, &blocks, big).iter().any(|c| phases.block(*c).is_none());
        let touches_boundary = collar_outside || blocks.iter().any(|c| affected.contains(c));
        out.push(Contour { scale: big, blocks, spine, labels, touches_boundary });
    }
    Ok(out)
}

/// Γ is a contour of the configuration whose phases are given: its spine is
/// a maximal closed-connected part of {Ψ = 0} and ψ reproduces its labels.
pub fn is_concrete(gamma: &Contour, phases: &PhaseMap) -> bool {
    if gamma.scale != phases.large {
        return false;
    }
    let spine_zero = gamma.blocks.iter().all(|c| phases.block(*c).map(|b| b.value) == Some(0));
    let collar_nonzero = gamma.collar_blocks().iter().all(|c| phases.block(*c).is_none_or(|b| b.value != 0));
    let labels = gamma.spine.sites().iter().zip(&gamma.labels).all(|(&x, &l)| phases.psi(x) == Some(l));
    spine_zero && collar_nonzero && labels
}

/// δ(Γ₁) ∩ sp(Γ₂) = ∅ (both ways) and the phases the two contours impose
/// agree on the blocks common to δ(Γ₁) and δ(Γ₂).
pub fn compatible(a: &Contour, b: &Contour) -> Result<bool> {
    if a.scale != b.scale || a.dim() != b.dim() {
        return Err(Error::invalid("contours of different scales cannot be compared"));
    }
    let spine_a: FxHashSet<Site> = a.blocks.iter().copied().collect();
    let spine_b: FxHashSet<Site> = b.blocks.iter().copied().collect();
    let da = a.delta_blocks();
    let db: FxHashSet<Site> = b.delta_blocks().into_iter().collect();
    if da.iter().any(|c| spine_b.contains(c)) || db.iter().any(|c| spine_a.contains(c)) {
        return Ok(false);
    }
    let (ra, rb) = (a.recovered_phase(), b.recovered_phase());
    Ok(da.iter().filter(|c| db.contains(c)).all(|c| ra[c] == rb[c]))
}

#[derive(Clone, Debug)]
pub struct ContourGeometry {
    pub delta: Arc<Region>,
    pub delta_ext: Region,
    pub delta_in: Vec<Region>,
    /// bounded components of the spine's complement
    pub interiors: Vec<Region>,
    /// c(Γ) = δ(Γ) ∪ Int(Γ)
    pub hull: Region,
    /// δ(Γ) ∩ Λ
    pub delta_in_domain: Region,
    pub n_large: usize,
    pub n_small: usize,
}

/// δ, δ_ext, δⁱ_in, Int, c(Γ) and the block counts, computed on the block
/// lattice (block unions have the same connectivity as their sites).
pub fn contour_geometry(gamma: &Contour, domain: &Region, small: i64) -> Result<ContourGeometry> {
    let dim = gamma.dim();
    let big = gamma.scale;
    if small < 1 || big % small != 0 {
        return Err(Error::invalid("the small scale must divide L"));
    }
    let spine_c = Region::from_sites(dim, gamma.blocks.iter().map(|&c| coarse(c, big)));
    let ie = int_ext_decompose(&spine_c);
    let delta_blocks = gamma.delta_blocks();
    let delta = Arc::new(blocks_region(dim, &delta_blocks, big));
    let expand = |r: &Region| -> Region {
        let corners: Vec<Site> = r.sites().iter().map(|&k| fine(k, big)).collect();
        blocks_region(dim, &corners, big)
    };
    let delta_c = Region::from_sites(dim, delta_blocks.iter().map(|&c| coarse(c, big)));
    let delta_ext = expand(&delta_c.filter(|k| !spine_c.contains(k) && ie.is_exterior(k)));
    let delta_in: Vec<Region> = ie.interiors.iter().map(|i| expand(&delta_c.intersection(i))).collect();
    let interiors: Vec<Region> = ie.interiors.iter().map(&expand).collect();
    let hull = interiors.iter().fold((*delta).clone(), |acc, r| acc.union(r));
    let n_large = delta.len() / (big as usize).pow(dim as u32);
    let n_small = delta.len() / (small as usize).pow(dim as u32);
    Ok(ContourGeometry {
        delta_in_domain: delta.intersection(domain),
        delta,
        delta_ext,
        delta_in,
        interiors,
        hull,
        n_large,
        n_small,
    })
}

// ---------------------------------------------------------------- masks

/// Dense boolean sets over a frame, for distance-based set definitions.
#[derive(Clone, Debug)]
pub(crate) struct Frame {
    pub grid: Grid,
}

impl Frame {
    pub fn around(domain: &Region, margin: i64) -> Frame {
        Frame { grid: Grid::covering(domain, margin) }
    }

    pub fn mask(&self, r: &Region) -> Vec<bool> {
        let mut m = vec![false; self.grid.len()];
        for &x in r.sites() {
            if let Some(i) = self.grid.index(x) {
                m[i] = true;
            }
        }
        m
    }

    pub fn region(&self, m: &[bool]) -> Region {
        Region::from_sites(self.grid.dim, (0..m.len()).filter(|&i| m[i]).map(|i| self.grid.site(i)))
    }

    /// Sites outside the set with a lattice neighbour inside it.
    pub fn outer_boundary(&self, m: &[bool]) -> Vec<bool> {
        let g = &self.grid;
        let mut out = vec![false; m.len()];
        for i in 0..m.len() {
            if m[i] {
                continue;
            }
            let x = g.site(i);
            out[i] = (0..g.dim).any(|a| {
                [-1, 1].iter().any(|&s| g.index(x.offset(a, s)).is_some_and(|j| m[j]))
            });
        }
        out
    }

    /// ℓ^∞ distance to the set (u32::MAX when empty).
    pub fn distance(&self, m: &[bool]) -> Vec<u32> {
        self.grid.linf_distance((0..m.len()).filter(|&i| m[i]).map(|i| self.grid.site(i)))
    }
}

fn and(a: &[bool], b: &[bool]) -> Vec<bool> {
    a.iter().zip(b).map(|(x, y)| *x && *y).collect()
}

fn and_not(a: &[bool], b: &[bool]) -> Vec<bool> {
    a.iter().zip(b).map(|(x, y)| *x && !*y).collect()
}

/// Smallest superset of `seed` whose outer boundary satisfies `ok`, grown
/// breadth-first by absorbing violating boundary sites. Growth is confined to
/// `allowed`; the flag reports violators left outside it.
pub fn grow_smallest(seed: &Region, allowed: impl Fn(Site) -> bool, ok: impl Fn(Site) -> bool) -> (Region, bool) {
    let dim = seed.dim();
    let mut set: FxHashSet<Site> = seed.sites().iter().copied().collect();
    let mut queue: Vec<Site> = seed.sites().to_vec();
    let mut escaped = false;
    let mut checked: FxHashSet<Site> = FxHashSet::default();
    while let Some(x) = queue.pop() {
        for a in 0..dim {
            for s in [-1, 1] {
                let y = x.offset(a, s);
                if set.contains(&y) || !checked.insert(y) {
                    continue;
                }
                if ok(y) {
                    // may become interior later; re-examined only through a new member
                    checked.remove(&y);
                    continue;
                }
                if allowed(y) {
                    set.insert(y);
                    queue.push(y);
                } else {
                    escaped = true;
                }
            }
        }
    }
    (Region::from_sites(dim, set), escaped)
}

// ---------------------------------------------------------------- collar

#[derive(Clone, Debug)]
pub struct CollarDecomposition {
    pub domain: Arc<Region>,
    /// 𝔠C = δ(Γ) ∩ sp(Γ)ᶜ ∩ Λ
    pub collar: Region,
    pub collar_plus: Region,
    pub collar_minus: Region,
    /// 𝔐: collar sites at distance ≥ `middle_threshold` from the collar's boundary in Λ
    pub middle: Region,
    pub middle_threshold: i64,
    /// M: union of the ℓ/2-blocks meeting 𝔐, within the collar
    pub middle_cover: Region,
    pub middle_cover_plus: Region,
    pub middle_cover_minus: Region,
    /// D: L-blocks of the collar with Ξ_L = 0
    pub bad_blocks: Vec<Site>,
    /// 𝒟: sites within 5L of D
    pub bad_halo: Region,
    pub bad_halo_plus: Region,
    pub bad_halo_minus: Region,
    /// 𝔇±_{L/16}, 𝔇±_{L/12}
    pub bad_core16_plus: Region,
    pub bad_core16_minus: Region,
    pub bad_core12_plus: Region,
    pub bad_core12_minus: Region,
    /// 𝒞± = 𝔠C± \ 𝔇±_{L/12}
    pub relaxed_plus: Region,
    pub relaxed_minus: Region,
    /// ℱ±: sites of 𝔠C± at distance ≥ L/8 from ∂ᵒ𝔠C± ∩ Λ
    pub seed_plus: Region,
    pub seed_minus: Region,
    /// the C:E1 envelope of 𝔣±: distance ≥ L/9 from ∂ᵒ𝔠C ∩ Λ
    pub envelope_plus: Region,
    pub envelope_minus: Region,
    /// 𝔑: collar sites at distance ≥ `inner_threshold` from ∂ᵒ𝔠C ∩ Λ
    pub inner: Region,
    pub inner_threshold: i64,
    /// closed-connected components 𝔠_i of 𝔑
    pub inner_components: Vec<Region>,
}

/// Threshold of 𝔐: L/2 − 100 where that is at least L/4, else L/4.
pub fn middle_threshold(big: i64) -> i64 {
    (big / 2 - 100).max(big / 4)
}

/// Every collar set of Γ for σ. Ξ_L comes from the classifier; Ψ from the
/// phases of σ.
pub fn collar_decomposition(
    gamma: &Contour,
    sigma: &SpinConfig,
    phases: &PhaseMap,
    classifier: &mut Classifier,
) -> Result<CollarDecomposition> {
    if !is_concrete(gamma, phases) {
        return Err(Error::invalid("Γ is not a contour of this configuration"));
    }
    let params = classifier.params().clone();
    let (big, small) = (params.large, params.small);
    let dim = gamma.dim();
    let domain = sigma.region().clone();
    let frame = Frame::around(&domain, 1);
    let g = &frame.grid;
    let dom = frame.mask(&domain);

    let collar_blocks: Vec<Site> =
        gamma.collar_blocks().into_iter().filter(|c| phases.block(*c).is_some()).collect();
    let collar = blocks_region(dim, &collar_blocks, big).intersection(&domain);
    let cm = frame.mask(&collar);
    let sign_mask = |s: i8| -> Vec<bool> {
        (0..g.len()).map(|i| cm[i] && phases.phase(g.site(i)) == Some(s)).collect()
    };
    let (cp, cn) = (sign_mask(1), sign_mask(-1));

    // distance to ∂ᵒ𝔠C ∩ Λ
    let edge = and(&frame.outer_boundary(&cm), &dom);
    let d_edge = frame.distance(&edge);
    let mid_t = middle_threshold(big);
    let middle_m: Vec<bool> = (0..g.len()).map(|i| cm[i] && d_edge[i] >= mid_t as u32).collect();
    let middle = frame.region(&middle_m);
    let half = (small / 2).max(1);
    let mut cover = Region::empty(dim);
    if !middle.is_empty() {
        let boxes = crate::geometry::enumerate_blocks(&middle, half, crate::geometry::BlockFamily::Standard)?;
        cover = Region::from_boxes(dim, &boxes).intersection(&collar);
    }
    let cover_m = frame.mask(&cover);
    let inner_t = (mid_t - half).max(0);
    let inner_m: Vec<bool> = (0..g.len()).map(|i| cm[i] && d_edge[i] >= inner_t as u32).collect();
    let inner = frame.region(&inner_m);

    // D and its halo
    let full: Vec<LatticeBox> = collar_blocks
        .iter()
        .map(|&c| LatticeBox::new(dim, c, big))
        .filter(|b| b.sites().iter().all(|s| collar.contains(*s)))
        .collect();
    let xi = classifier.xi_all(&full)?;
    let bad_blocks: Vec<Site> = full.iter().zip(&xi).filter(|(_, good)| !**good).map(|(b, _)| b.lo()).collect();
    let bad_m = frame.mask(&blocks_region(dim, &bad_blocks, big));
    let d_bad = frame.distance(&bad_m);
    let halo_m: Vec<bool> = d_bad.iter().map(|&d| d <= (5 * big) as u32).collect();
    let halo_plus = and(&halo_m, &cp);
    let halo_minus = and(&halo_m, &cn);
    let core = |h: &[bool], depth: i64| -> Vec<bool> {
        let d = frame.distance(&frame.outer_boundary(h));
        (0..h.len()).map(|i| h[i] && d[i] >= depth.max(0) as u32).collect()
    };
    let (c16p, c16n) = (core(&halo_plus, big / 16), core(&halo_minus, big / 16));
    let (c12p, c12n) = (core(&halo_plus, big / 12), core(&halo_minus, big / 12));

    let seed = |c: &[bool], depth: i64| -> Vec<bool> {
        let e = and(&frame.outer_boundary(c), &dom);
        let d = frame.distance(&e);
        (0..c.len()).map(|i| c[i] && d[i] >= depth as u32).collect()
    };
    let envelope = |c: &[bool]| -> Vec<bool> { (0..c.len()).map(|i| c[i] && d_edge[i] >= (big / 9) as u32).collect() };

    let inner_components = connected_components(&inner, Connectivity::Closed);
    Ok(CollarDecomposition {
        domain: domain.clone(),
        collar_plus: frame.region(&cp),
        collar_minus: frame.region(&cn),
        collar,
        middle,
        middle_threshold: mid_t,
        middle_cover_plus: frame.region(&and(&cover_m, &cp)),
        middle_cover_minus: frame.region(&and(&cover_m, &cn)),
        middle_cover: cover,
        bad_blocks,
        bad_halo: frame.region(&and(&halo_m, &cm)),
        bad_halo_plus: frame.region(&halo_plus),
        bad_halo_minus: frame.region(&halo_minus),
        bad_core16_plus: frame.region(&c16p),
        bad_core16_minus: frame.region(&c16n),
        relaxed_plus: frame.region(&and_not(&cp, &c12p)),
        relaxed_minus: frame.region(&and_not(&cn, &c12n)),
        bad_core12_plus: frame.region(&c12p),
        bad_core12_minus: frame.region(&c12n),
        seed_plus: frame.region(&seed(&cp, big / 8)),
        seed_minus: frame.region(&seed(&cn, big / 8)),
        envelope_plus: frame.region(&envelope(&cp)),
        envelope_minus: frame.region(&envelope(&cn)),
        inner,
        inner_threshold: inner_t,
        inner_components,
    })
}

/// Γ is ∗-clean: δ(Γ) is clean and c(Γ) is not strictly contained in 𝔻.
pub fn star_clean(
    gamma: &Contour,
    real: &DisorderRealization,
    params: &ClassifierParams,
    dirty: &Region,
) -> Result<bool> {
    let geo = contour_geometry(gamma, &Region::empty(gamma.dim()), params.small)?;
    let clean = region_taxonomy(real, &geo.delta, params)?.clean;
    let strictly_inside = geo.hull.is_subset(dirty) && geo.hull.len() < dirty.len();
    Ok(clean && !strictly_inside)
}

/// JSON-friendly summary of a contour.
#[derive(Clone, Debug, Serialize)]
pub struct ContourSummary {
    pub scale: i64,
    pub blocks: Vec<Site>,
    pub labels: Vec<i8>,
    pub touches_boundary: bool,
    pub n_large: usize,
    pub n_small: usize,
    pub interiors: usize,
}

impl ContourSummary {
    pub fn new(gamma: &Contour, geo: &ContourGeometry) -> ContourSummary {
        ContourSummary {
            scale: gamma.scale,
            blocks: gamma.blocks.clone(),
            labels: gamma.labels.clone(),
            touches_boundary: gamma.touches_boundary,
            n_large: geo.n_large,
            n_small: geo.n_small,
            interiors: geo.interiors.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::sample_alpha;
    use crate::geometry::{boundary, Side};
    use std::f64::consts::PI;

    const SMALL: i64 = 2;
    const BIG: i64 = 8;

    fn params() -> ClassifierParams {
        ClassifierParams::calibrated(0.3, 0.25, 2, SMALL, BIG).unwrap()
    }

    fn rect(w: i64, h: i64) -> Arc<Region> {
        let boxes: Vec<LatticeBox> = (0..w / BIG)
            .flat_map(|i| (0..h / BIG).map(move |j| LatticeBox::new(2, Site::new(&[i * BIG, j * BIG]), BIG)))
            .collect();
        Arc::new(Region::from_boxes(2, &boxes))
    }

    /// e₁ everywhere except the listed L-blocks, which point along −e₁.
    fn flipped(domain: Arc<Region>, corners: &[Site]) -> SpinConfig {
        let boxes: Vec<LatticeBox> = corners.iter().map(|&c| LatticeBox::new(2, c, BIG)).collect();
        SpinConfig::from_fn(domain, |x| if boxes.iter().any(|b| b.contains(x)) { PI } else { 0.0 })
    }

    fn extract(s: &SpinConfig) -> Extraction {
        extract_contours(s, &BoundaryCondition::e1(), &params()).unwrap()
    }

    #[test]
    fn uniform_configuration_has_no_contours() {
        let s = SpinConfig::constant(rect(64, 64), 0.0);
        assert!(extract(&s).contours.is_empty());
    }

    #[test]
    fn one_flipped_block_gives_one_contour_around_it() {
        let c = Site::new(&[48, 48]);
        let s = flipped(rect(104, 104), &[c]);
        let ex = extract(&s);
        assert_eq!(ex.contours.len(), 1);
        let g = &ex.contours[0];
        // every block whose 2L-neighbourhood contains the flipped block is in the spine
        for_each_offset(2, 2, |k| assert!(g.blocks.contains(&c.add(fine(k, BIG)))));
        assert!(!g.touches_boundary);
        assert!(is_concrete(g, &ex.phases));
        assert!(g.labels.iter().any(|&v| v == 0));
        assert_eq!(g.labels.len(), g.spine.len());
        assert_eq!(connected_components(&g.spine, Connectivity::Closed).len(), 1);
    }

    #[test]
    fn separation_decides_the_number_of_contours() {
        let a = Site::new(&[48, 48]);
        let far = flipped(rect(216, 104), &[a, a.offset(0, 10 * BIG)]);
        assert_eq!(extract(&far).contours.len(), 2);
        let near = flipped(rect(216, 104), &[a, a.offset(0, 2 * BIG)]);
        assert_eq!(extract(&near).contours.len(), 1);
    }

    #[test]
    fn contours_of_one_configuration_are_compatible_and_labels_recover_the_collar() {
        let a = Site::new(&[48, 48]);
        let s = flipped(rect(216, 104), &[a, a.offset(0, 10 * BIG)]);
        let ex = extract(&s);
        let (g1, g2) = (&ex.contours[0], &ex.contours[1]);
        assert!(compatible(g1, g2).unwrap() && compatible(g2, g1).unwrap());
        assert!(!compatible(g1, g1).unwrap());
        for g in &ex.contours {
            for (c, v) in g.recovered_phase() {
                assert_eq!(v, Some(ex.phases.block(c).unwrap().value), "block {c:?}");
            }
        }
    }

    #[test]
    fn conflicting_collar_phases_are_incompatible() {
        let a = Site::new(&[48, 48]);
        let s = flipped(rect(216, 104), &[a, a.offset(0, 10 * BIG)]);
        let ex = extract(&s);
        let (g1, g2) = (&ex.contours[0], &ex.contours[1]);
        // translate g2 so its collar overlaps g1's without touching the spine, then flip its sign
        let width = |g: &Contour| g.blocks.iter().map(|c| c.0[0]).max().unwrap() - g.blocks.iter().map(|c| c.0[0]).min().unwrap();
        let gap = g1.blocks.iter().map(|c| c.0[0]).max().unwrap() + 2 * BIG - g2.blocks.iter().map(|c| c.0[0]).min().unwrap();
        let shift = Site::new(&[gap, 0]);
        let moved = |sign: i8| Contour {
            scale: BIG,
            blocks: g2.blocks.iter().map(|c| c.add(shift)).collect(),
            spine: Arc::new(g2.spine.translate(shift)),
            labels: g2.labels.iter().map(|v| v * sign).collect(),
            touches_boundary: false,
        };
        assert!(width(g1) > 0);
        assert!(compatible(g1, &moved(1)).unwrap());
        assert!(!compatible(g1, &moved(-1)).unwrap());
    }

    fn contour_from_blocks(corners: &[Site]) -> Contour {
        let spine = Arc::new(blocks_region(2, corners, BIG));
        let mut blocks = corners.to_vec();
        blocks.sort_unstable();
        Contour { scale: BIG, labels: vec![0; spine.len()], blocks, spine, touches_boundary: false }
    }

    #[test]
    fn single_block_geometry() {
        let g = contour_from_blocks(&[Site::new(&[16, 16])]);
        let geo = contour_geometry(&g, &rect(64, 64), SMALL).unwrap();
        assert_eq!(geo.n_large, 9);
        assert_eq!(geo.n_small, 9 * 16);
        assert!(geo.interiors.is_empty() && geo.delta_in.is_empty());
        assert_eq!(geo.delta_ext.len(), 8 * 64);
        assert_eq!(geo.hull, *geo.delta);
    }

    #[test]
    fn ring_geometry_has_one_interior() {
        let mut ring = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                if i == 0 || j == 0 || i == 4 || j == 4 {
                    ring.push(Site::new(&[i * BIG, j * BIG]));
                }
            }
        }
        let g = contour_from_blocks(&ring);
        let geo = contour_geometry(&g, &rect(64, 64), SMALL).unwrap();
        assert_eq!(geo.interiors.len(), 1);
        assert_eq!(geo.interiors[0].len(), 9 * 64);
        assert_eq!(geo.delta_in.len(), 1);
        assert_eq!(geo.delta_in[0].len(), 8 * 64);
        assert!(geo.delta_ext.is_disjoint(&geo.delta_in[0]));
        assert!(geo.delta_ext.union(&geo.delta_in[0]).is_subset(&geo.delta));
        assert_eq!(geo.hull.len(), geo.delta.len() + 64);
        assert_eq!(geo.delta.len() % 64, 0);
    }

    #[test]
    fn growth_yields_the_smallest_closed_superset() {
        let seed = Region::from_sites(2, [Site::new(&[0, 0])]);
        // boundary sites with x < 3 are forbidden, so growth fills the strip 0..3 within the allowed band
        let allowed = |x: Site| x.0[1].abs() <= 1 && x.0[0] >= -5;
        let ok = |x: Site| x.0[0] >= 3 || x.0[0] < 0 || x.0[1].abs() > 1;
        let (grown, escaped) = grow_smallest(&seed, allowed, ok);
        assert!(!escaped);
        assert_eq!(grown.len(), 9);
        let again = grow_smallest(&grown, allowed, ok).0;
        assert_eq!(again, grown);
        for &y in boundary(&grown, Side::Outer).sites() {
            assert!(ok(y));
        }
        let (_, escaped) = grow_smallest(&seed, |x| x.0[0] < 2, ok);
        assert!(escaped);
    }

    fn lenient(mut p: ClassifierParams) -> ClassifierParams {
        p.a = -1e9;
        p.b = 1e9;
        let t = &mut p.thresholds;
        for v in [&mut t.field_sup, &mut t.gradient_sup, &mut t.alpha_sup, &mut t.alpha_mean, &mut t.dense_budget] {
            *v = 1e9;
        }
        p
    }

    fn ring_case() -> (SpinConfig, Extraction) {
        let s = flipped(rect(160, 160), &[Site::new(&[72, 72])]);
        let ex = extract(&s);
        (s, ex)
    }

    fn check_containments(cd: &CollarDecomposition) {
        assert!(cd.middle.is_subset(&cd.middle_cover));
        assert!(cd.middle_cover.is_subset(&cd.inner));
        assert!(cd.inner.is_subset(&cd.collar));
        assert!(cd.collar_plus.union(&cd.collar_minus).is_subset(&cd.collar));
        assert!(cd.bad_core12_plus.is_subset(&cd.bad_core16_plus));
        assert!(cd.bad_core16_plus.is_subset(&cd.bad_halo_plus));
        assert_eq!(cd.relaxed_plus, cd.collar_plus.difference(&cd.bad_core12_plus));
        assert_eq!(cd.relaxed_minus, cd.collar_minus.difference(&cd.bad_core12_minus));
        assert!(cd.seed_plus.is_subset(&cd.envelope_plus));
        let comps: usize = cd.inner_components.iter().map(|c| c.len()).sum();
        assert_eq!(comps, cd.inner.len());
    }

    #[test]
    fn all_good_disorder_has_no_bad_blocks() {
        let (s, ex) = ring_case();
        let p = lenient(params());
        let real = sample_alpha(s.region().clone(), 1, 0.3);
        let mut cls = Classifier::new(&real, &p);
        let g = &ex.contours[0];
        let cd = collar_decomposition(g, &s, &ex.phases, &mut cls).unwrap();
        assert!(cd.bad_blocks.is_empty());
        assert!(cd.bad_halo.is_empty() && cd.bad_halo_plus.is_empty() && cd.bad_halo_minus.is_empty());
        assert_eq!(cd.relaxed_plus, cd.collar_plus);
        assert_eq!(cd.collar_plus, cd.collar);
        assert!(cd.collar_minus.is_empty());
        assert!(!cd.middle.is_empty() && !cd.seed_plus.is_empty());
        check_containments(&cd);
    }

    #[test]
    fn planted_bad_block_spreads_its_halo() {
        let (s, ex) = ring_case();
        let g = &ex.contours[0];
        let target = g.collar_blocks()[0];
        let p = lenient(params());
        let base = sample_alpha(s.region().clone(), 1, 0.3);
        let spike = target.add(Site::new(&[3, 3]));
        let vals = s.region().sites().iter().zip(base.alpha().values()).map(|(x, v)| if *x == spike { 1e12 } else { *v }).collect();
        let real = DisorderRealization::from_field(0.3, crate::fields::ScalarField::new(s.region().clone(), vals).unwrap());
        let mut cls = Classifier::new(&real, &p);
        let cd = collar_decomposition(g, &s, &ex.phases, &mut cls).unwrap();
        assert!(cd.bad_blocks.contains(&target));
        let d = blocks_region(2, &cd.bad_blocks, BIG);
        for &x in cd.collar.sites() {
            let near = d.sites().iter().any(|y| y.linf(x) <= 5 * BIG);
            assert_eq!(cd.bad_halo.contains(x), near);
        }
        assert!(cd.relaxed_plus.len() < cd.collar_plus.len());
        check_containments(&cd);
        // translating everything by an L-vector translates every set
        let v = Site::new(&[BIG, -2 * BIG]);
        let s2 = SpinConfig::from_fn(Arc::new(s.region().translate(v)), |x| s.angle(x.sub(v)).unwrap());
        let vals2 = s2.region().sites().iter().map(|&x| real.alpha_at(x.sub(v))).collect();
        let real2 = DisorderRealization::from_field(0.3, crate::fields::ScalarField::new(s2.region().clone(), vals2).unwrap());
        let ex2 = extract(&s2);
        let mut cls2 = Classifier::new(&real2, &p);
        let cd2 = collar_decomposition(&ex2.contours[0], &s2, &ex2.phases, &mut cls2).unwrap();
        assert_eq!(cd2.bad_halo, cd.bad_halo.translate(v));
        assert_eq!(cd2.inner, cd.inner.translate(v));
        assert_eq!(cd2.relaxed_plus, cd.relaxed_plus.translate(v));
    }

    #[test]
    fn foreign_contour_is_rejected() {
        let (s, ex) = ring_case();
        let p = params();
        let real = sample_alpha(s.region().clone(), 1, 0.3);
        let mut cls = Classifier::new(&real, &p);
        let fake = contour_from_blocks(&[Site::new(&[0, 0])]);
        assert!(collar_decomposition(&fake, &s, &ex.phases, &mut cls).is_err());
    }

    #[test]
    fn star_clean_rejects_strict_containment_in_the_dirty_set() {
        let g = contour_from_blocks(&[Site::new(&[32, 32])]);
        let p = lenient(params());
        let world = Arc::new(LatticeBox::new(2, Site::origin(), 96).region());
        let real = sample_alpha(world.clone(), 2, 0.3);
        let mut strict = p.clone();
        strict.thresholds.outlier_budget = 1e9;
        strict.thresholds.energy_budget = 1e9;
        strict.thresholds.field_budget = 1e9;
        strict.thresholds.mean_budget_factor = 1e9;
        assert!(star_clean(&g, &real, &strict, &Region::empty(2)).unwrap());
        assert!(!star_clean(&g, &real, &strict, &world).unwrap());
        let mut harsh = strict.clone();
        harsh.thresholds.outlier_budget = -1.0;
        assert!(!star_clean(&g, &real, &harsh, &Region::empty(2)).unwrap());
    }
}
