//! Dense helpers over a [`Grid`]: box sums from prefix tables and separable
//! window reductions.

use crate::geometry::{Grid, Site};

/// Inclusive prefix sums over a grid, padded by one zero layer per axis.
pub(crate) struct Prefix {
    lo: Site,
    shape: [usize; 3],
    sums: Vec<f64>,
}

impl Prefix {
    pub fn new(grid: &Grid, values: &[f64]) -> Prefix {
        assert_eq!(values.len(), grid.len());
        let [n0, n1, n2] = grid.shape;
        let (p1, p2) = (n1 + 1, n2 + 1);
        let mut sums = vec![0.0; (n0 + 1) * p1 * p2];
        let at = |a: usize, b: usize, c: usize| (a * p1 + b) * p2 + c;
        for a in 0..n0 {
            for b in 0..n1 {
                for c in 0..n2 {
                    let v = values[(a * n1 + b) * n2 + c];
                    sums[at(a + 1, b + 1, c + 1)] = v + sums[at(a, b + 1, c + 1)] + sums[at(a + 1, b, c + 1)]
                        + sums[at(a + 1, b + 1, c)]
                        - sums[at(a, b, c + 1)]
                        - sums[at(a, b + 1, c)]
                        - sums[at(a + 1, b, c)]
                        + sums[at(a, b, c)];
                }
            }
        }
        Prefix { lo: grid.lo, shape: grid.shape, sums }
    }

    /// Sum over the sites `lo..=hi` (absolute coordinates), clipped to the grid.
    pub fn sum(&self, lo: Site, hi: Site) -> f64 {
        let mut a = [0usize; 3];
        let mut b = [0usize; 3];
        for i in 0..3 {
            let l = (lo.0[i] - self.lo.0[i]).max(0);
            let h = (hi.0[i] - self.lo.0[i] + 1).min(self.shape[i] as i64);
            if h <= l {
                return 0.0;
            }
            a[i] = l as usize;
            b[i] = h as usize;
        }
        let (p1, p2) = (self.shape[1] + 1, self.shape[2] + 1);
        let s = |x: usize, y: usize, z: usize| self.sums[(x * p1 + y) * p2 + z];
        s(b[0], b[1], b[2]) - s(a[0], b[1], b[2]) - s(b[0], a[1], b[2]) - s(b[0], b[1], a[2])
            + s(a[0], a[1], b[2])
            + s(a[0], b[1], a[2])
            + s(b[0], a[1], a[2])
            - s(a[0], a[1], a[2])
    }
}

/// For every site, is any flag set within ℓ^∞ distance `radius`? Positions
/// of the window beyond the grid count as `pad`.
pub(crate) fn window_any(grid: &Grid, flags: &[bool], radius: i64, pad: bool) -> Vec<bool> {
    let mut cur: Vec<bool> = flags.to_vec();
    let r = radius.max(0) as usize;
    for axis in 0..grid.dim {
        let n = grid.shape[axis];
        let stride = grid.stride(axis);
        let mut next = vec![false; cur.len()];
        let mut counts = vec![0usize; n + 1];
        for start in 0..cur.len() {
            // visit each line once, from its first element
            if (start / stride) % n != 0 {
                continue;
            }
            for k in 0..n {
                counts[k + 1] = counts[k] + cur[start + k * stride] as usize;
            }
            for k in 0..n {
                let lo = k.saturating_sub(r);
                let hi = (k + r).min(n - 1);
                let clipped = k < r || k + r > n - 1;
                next[start + k * stride] = counts[hi + 1] > counts[lo] || (pad && clipped);
            }
        }
        cur = next;
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_sums_match_direct_sums() {
        let g = Grid::new(3, Site::new(&[-2, 1, 0]), [4, 3, 5]);
        let vals: Vec<f64> = (0..g.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let p = Prefix::new(&g, &vals);
        let lo = Site::new(&[-1, 1, 2]);
        let hi = Site::new(&[1, 3, 6]);
        let direct: f64 = (0..g.len())
            .filter(|&i| {
                let x = g.site(i);
                (0..3).all(|a| x.0[a] >= lo.0[a] && x.0[a] <= hi.0[a])
            })
            .map(|i| vals[i])
            .sum();
        assert!((p.sum(lo, hi) - direct).abs() < 1e-12);
        assert_eq!(p.sum(Site::new(&[5, 5, 5]), Site::new(&[6, 6, 6])), 0.0);
    }

    #[test]
    fn window_any_matches_brute_force() {
        let g = Grid::new(2, Site::origin(), [7, 9, 1]);
        let flags: Vec<bool> = (0..g.len()).map(|i| i % 11 == 3).collect();
        for pad in [false, true] {
            let w = window_any(&g, &flags, 2, pad);
            for i in 0..g.len() {
                let x = g.site(i);
                let mut any = false;
                for dx in -2..=2 {
                    for dy in -2..=2 {
                        match g.index(Site::new(&[x.0[0] + dx, x.0[1] + dy])) {
                            Some(j) => any |= flags[j],
                            None => any |= pad,
                        }
                    }
                }
                assert_eq!(w[i], any);
            }
        }
    }
}
