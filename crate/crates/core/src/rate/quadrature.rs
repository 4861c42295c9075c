//! Deterministic Gauss–Hermite evaluation of interference-free mutual
//! information. Used as an oracle for the Monte Carlo estimator.

use num_complex::Complex64;

use super::RateError;
use crate::constellation::LabeledConstellation;

/// Nodes per dimension.
pub const GH_NODES: usize = 96;

/// Largest constellation the oracle accepts.
pub const MAX_ORACLE_POINTS: usize = 256;

/// Gauss–Hermite nodes and weights for the weight function `exp(-t^2)`.
///
/// Newton iteration on the orthonormal Hermite recurrence, seeded with the
/// usual asymptotic guesses for the largest roots.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mutual information in bits of `Y = h X + Z`, `X` uniform on `constellation`,
/// `Z ~ CN(0, 1)`, by two-dimensional Gauss–Hermite quadrature.
pub fn quadrature_mi(constellation: &LabeledConstellation, h: Complex64) -> Result<f64, RateError> {
    let points = constellation.points();
    if points.len() > MAX_ORACLE_POINTS {
        return Err(RateError::CardinalityCap {
            tuples: points.len(),
            cap: MAX_ORACLE_POINTS,
        });
    }
    if h.norm() == 0.0 || points.len() == 1 {
        return Ok(0.0);
    }
    let (nodes, weights) = gauss_hermite(GH_NODES);
    let m = (points.len() as f64).log2();
    let mut buf = vec![0.0; points.len()];
    let mut acc = 0.0;
    for x in points {
        let mut inner = 0.0;
        for (a, wa) in nodes.iter().zip(&weights) {
            for (b, wb) in nodes.iter().zip(&weights) {
                let t = Complex64::new(*a, *b);
                for (slot, xp) in buf.iter_mut().zip(points) {
                    *slot = -(t + h * (x - xp)).norm_sqr();
                }
                // log of sum_x' exp(-|t + h(x - x')|^2) / exp(-|t|^2)
                inner += wa * wb * (log_sum_exp(&buf) + t.norm_sqr());
            }
        }
        acc += inner / std::f64::consts::PI;
    }
    let penalty = acc / points.len() as f64 / std::f64::consts::LN_2;
    Ok(m - penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::{build_gray_qam, scale};

    #[test]
    fn nodes_integrate_polynomials() {
        let (x, w) = gauss_hermite(GH_NODES);
        let s0: f64 = w.iter().sum();
        let s2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        let s4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        let rpi = std::f64::consts::PI.sqrt();
        assert!((s0 - rpi).abs() < 1e-12);
        assert!((s2 - rpi / 2.0).abs() < 1e-12);
        assert!((s4 - 3.0 * rpi / 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_channel() {
        let q = build_gray_qam(4).unwrap();
        assert_eq!(quadrature_mi(&q, Complex64::new(0.0, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn two_points_saturate() {
        let b = build_gray_qam(1).unwrap();
        let i = quadrature_mi(&b, Complex64::new(40.0, 0.0)).unwrap();
        assert!((i - 1.0).abs() < 1e-9, "{i}");
    }

    #[test]
    fn bpsk_closed_form_cross_check() {
        // Real-valued two-point set: only the in-phase noise matters, so a
        // one-dimensional trapezoid integral of the same integrand must agree.
        let b = build_gray_qam(1).unwrap();
        let amp = 1.3;
        let oracle = quadrature_mi(&b, Complex64::new(amp, 0.0)).unwrap();
        // Y = amp*x + Z_re with Z_re ~ N(0, 1/2), x = +-0.5, distance d = amp.
        let d = amp;
        let mut acc = 0.0;
        let steps = 200_000;
        let lim = 12.0;
        let dz = 2.0 * lim / steps as f64;
        for k in 0..=steps {
            let z = -lim + k as f64 * dz;
            let pdf = (-z * z).exp() / std::f64::consts::PI.sqrt();
            let f = (1.0 + (-(z + d).powi(2) + z * z).exp()).ln();
            let wt = if k == 0 || k == steps { 0.5 } else { 1.0 };
            acc += wt * pdf * f * dz;
        }
        let expect = 1.0 - acc / std::f64::consts::LN_2;
        assert!((oracle - expect).abs() < 1e-8, "{oracle} vs {expect}");
    }

    #[test]
    fn rejects_large_sets() {
        let q = build_gray_qam(10).unwrap();
        assert!(quadrature_mi(&q, Complex64::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn phase_invariant() {
        let q = build_gray_qam(4).unwrap();
        let q = scale(&q, Complex64::new(0.4, 0.0)).unwrap();
        let a = quadrature_mi(&q, Complex64::new(2.0, 0.0)).unwrap();
        let b = quadrature_mi(&q, Complex64::from_polar(2.0, 0.7)).unwrap();
        assert!((a - b).abs() < 1e-6);
    }
}
