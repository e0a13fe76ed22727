//! The spectral constants ς₂² = ∫ (‖k‖²+λ)^{-2} dk and
//! ς_∇² = ∫ ‖k‖²(‖k‖²+λ)^{-2} dk over [1/l, 2π]^d.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SpectralConstants {
    pub l: f64,
    pub lambda: f64,
    pub dim: usize,
    pub sigma2_sq: f64,
    pub sigma_grad_sq: f64,
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Globally adaptive Gauss–Kronrod on [a, b].
pub(crate) fn adaptive(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    let mut parts = vec![(a, b, gk15(f, a, b))];
    for _ in 0..2000 {
        let total: f64 = parts.iter().map(|p| p.2 .0).sum();
        let err: f64 = parts.iter().map(|p| p.2 .1).sum();
        if err <= rel * total.abs() || err < 1e-300 {
            break;
        }
        let (worst, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2 .1.partial_cmp(&y.1 .2 .1).unwrap())
            .unwrap();
        let (lo, hi, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        parts.push((lo, mid, gk15(f, lo, mid)));
        parts.push((mid, hi, gk15(f, mid, hi)));
    }
    parts.iter().map(|p| p.2 .0).sum()
}

/// ∫_{[a,b]^d} h(‖k‖²) dk by nested adaptive quadrature in log-coordinates
/// (k = e^u), which flattens the peak at the lower corner.
pub(crate) fn radial_box_integral(h: &dyn Fn(f64) -> f64, dim: usize, a: f64, b: f64, rel: f64) -> f64 {
    fn level(h: &dyn Fn(f64) -> f64, left: usize, partial: f64, la: f64, lb: f64, rel: f64) -> f64 {
        let mut inner = |u: f64| {
            let k = u.exp();
            let s = partial + k * k;
            let v = if left == 1 { h(s) } else { level(h, left - 1, s, la, lb, rel) };
            v * k
        };
        adaptive(&mut inner, la, lb, rel)
    }
    level(h, dim, 0.0, a.ln(), b.ln(), rel)
}

pub fn spectral_sigmas(l: f64, lambda: f64, dim: usize) -> Result<SpectralConstants> {
    if l < 2.0 {
        return Err(Error::invalid("spectral constants need l ≥ 2"));
    }
    if !(1..=3).contains(&dim) || lambda < 0.0 {
        return Err(Error::invalid("dimension must be 1..3 and λ ≥ 0"));
    }
    let (a, b) = (1.0 / l, 2.0 * std::f64::consts::PI);
    let rel = 1e-9;
    let s2 = radial_box_integral(&|s| 1.0 / ((s + lambda) * (s + lambda)), dim, a, b, rel);
    let sg = radial_box_integral(&|s| s / ((s + lambda) * (s + lambda)), dim, a, b, rel);
    Ok(SpectralConstants { l, lambda, dim, sigma2_sq: s2, sigma_grad_sq: sg })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_closed_form() {
        // ∫_a^b k^{-4} dk and ∫_a^b k^{-2} dk
        let l = 10.0;
        let c = spectral_sigmas(l, 0.0, 1).unwrap();
        let (a, b) = (0.1f64, 2.0 * std::f64::consts::PI);
        let s2 = (a.powi(-3) - b.powi(-3)) / 3.0;
        let sg = 1.0 / a - 1.0 / b;
        assert!((c.sigma2_sq / s2 - 1.0).abs() < 1e-8);
        assert!((c.sigma_grad_sq / sg - 1.0).abs() < 1e-8);
    }

    #[test]
    fn monotone_in_mass_and_size() {
        let mut last = f64::INFINITY;
        for lambda in [0.0, 0.1, 1.0, 10.0, 100.0] {
            let c = spectral_sigmas(16.0, lambda, 2).unwrap();
            assert!(c.sigma2_sq < last && c.sigma2_sq > 0.0);
            last = c.sigma2_sq;
        }
        let a = spectral_sigmas(8.0, 0.0, 2).unwrap();
        let b = spectral_sigmas(16.0, 0.0, 2).unwrap();
        assert!(b.sigma2_sq / a.sigma2_sq > 1.0);
    }
}
