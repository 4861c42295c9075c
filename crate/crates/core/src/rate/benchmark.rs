//! Gaussian and shell-code benchmark rates.
//!
//! Both use the real-channel capacity and dispersion doubled for the complex
//! channel. The Gaussian formulas take an SINR, so they cover treating
//! interference as noise as well as links cleaned by perfect interference
//! cancellation. The shell-code dispersion is only valid on interference-free
//! links.

use serde::{Deserialize, Serialize};

use super::{check_epsilon, qfunc_inv, RateError};

const LOG2E: f64 = std::f64::consts::LOG2_E;

/// Capacity of the complex AWGN channel at SNR `gamma`, in bits.
pub fn complex_capacity(gamma: f64) -> f64 {
    (1.0 + gamma).log2()
}

/// Dispersion of i.i.d. complex Gaussian codes, `2 log2(e)^2 gamma / (gamma + 1)`.
pub fn gaussian_dispersion(gamma: f64) -> f64 {
    2.0 * LOG2E * LOG2E * gamma / (gamma + 1.0)
}

/// Dispersion of complex shell codes, `log2(e)^2 gamma (gamma + 2) / (gamma + 1)^2`.
pub fn shell_dispersion(gamma: f64) -> f64 {
    LOG2E * LOG2E * gamma * (gamma + 2.0) / ((gamma + 1.0) * (gamma + 1.0))
}

/// How interference is handled when building benchmark SINRs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchmarkMode {
    /// Every other participant of the sub-block is noise.
    Tin,
    /// Weaker users' signals are cancelled perfectly; stronger users' signals
    /// remain as noise.
    PerfectSic,
}

/// Signal and interference powers seen by one user on one sub-block, both
/// already multiplied by `|h|^2`. Noise power is 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkPower {
    pub signal: f64,
    pub interference: f64,
}

impl LinkPower {
    pub fn sinr(&self) -> f64 {
        self.signal / (self.interference + 1.0)
    }
}

fn combine(capacities: &[f64], dispersions: &[f64], lengths: &[usize], epsilon: f64, blocklength: usize) -> Result<f64, RateError> {
    if capacities.len() != lengths.len() {
        return Err(RateError::LengthMismatch {
            expected: lengths.len(),
            got: capacities.len(),
        });
    }
    check_epsilon(epsilon)?;
    let first: f64 = capacities.iter().zip(lengths).map(|(c, l)| c * *l as f64).sum();
    let second: f64 = dispersions.iter().zip(lengths).map(|(v, l)| v * *l as f64).sum();
    Ok((first - second.sqrt() * qfunc_inv(epsilon)?) / blocklength as f64)
}

/// Second-order rate of Gaussian codes over sub-blocks with SINRs `sinrs`
/// and lengths `lengths`, for a user with blocklength `blocklength`.
pub fn gaussian_benchmark(sinrs: &[f64], lengths: &[usize], epsilon: f64, blocklength: usize) -> Result<f64, RateError> {
    if let Some(&g) = sinrs.iter().find(|g| g.is_nan() || **g < 0.0) {
        return Err(RateError::NegativeSinr(g));
    }
    let c: Vec<f64> = sinrs.iter().map(|g| complex_capacity(*g)).collect();
    let v: Vec<f64> = sinrs.iter().map(|g| gaussian_dispersion(*g)).collect();
    combine(&c, &v, lengths, epsilon, blocklength)
}

/// Second-order rate of a shell code of length `n` at SNR `p_eff`.
pub fn shell_benchmark(p_eff: f64, n: usize, epsilon: f64) -> Result<f64, RateError> {
    shell_benchmark_links(
        &[LinkPower {
            signal: p_eff,
            interference: 0.0,
        }],
        &[n],
        epsilon,
        n,
    )
}

/// Shell-code rate over several sub-blocks. Refuses any link that carries
/// interference.
pub fn shell_benchmark_links(links: &[LinkPower], lengths: &[usize], epsilon: f64, blocklength: usize) -> Result<f64, RateError> {
    if let Some(l) = links.iter().zip(lengths).find(|(l, n)| **n > 0 && l.interference > 0.0) {
        return Err(RateError::InterferencePresent(l.0.interference));
    }
    let c: Vec<f64> = links.iter().map(|l| complex_capacity(l.signal)).collect();
    let v: Vec<f64> = links.iter().map(|l| shell_dispersion(l.signal)).collect();
    combine(&c, &v, lengths, epsilon, blocklength)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_reference_value() {
        let r = gaussian_benchmark(&[10.0], &[128], 1e-6, 128).unwrap();
        // log2(11) - sqrt(2 log2(e)^2 (10/11) / 128) Q^{-1}(1e-6)
        assert!((r - 2.642).abs() < 5e-4, "{r}");
    }

    #[test]
    fn zero_sinr_contributes_nothing() {
        assert_eq!(complex_capacity(0.0), 0.0);
        assert_eq!(gaussian_dispersion(0.0), 0.0);
        let r = gaussian_benchmark(&[0.0, 3.0], &[10, 10], 1e-3, 20).unwrap();
        let only = gaussian_benchmark(&[3.0], &[10], 1e-3, 20).unwrap();
        assert!((r - only).abs() < 1e-12);
    }

    #[test]
    fn half_epsilon_is_capacity() {
        let r = gaussian_benchmark(&[7.0], &[50], 0.5, 50).unwrap();
        assert!((r - 3.0).abs() < 1e-12);
        let s = shell_benchmark(7.0, 50, 0.5).unwrap();
        assert!((s - 3.0).abs() < 1e-12);
    }

    #[test]
    fn shell_beats_gaussian() {
        for &p in &[0.1, 1.0, 10.0, 100.0] {
            assert!(shell_dispersion(p) < gaussian_dispersion(p));
            let s = shell_benchmark(p, 200, 1e-5).unwrap();
            let g = gaussian_benchmark(&[p], &[200], 1e-5, 200).unwrap();
            assert!(s >= g);
        }
    }

    #[test]
    fn shell_vanishes_with_power() {
        let r = shell_benchmark(1e-12, 100, 1e-3).unwrap();
        assert!(r.abs() < 1e-4);
    }

    #[test]
    fn shell_refuses_interference() {
        let links = [LinkPower { signal: 2.0, interference: 0.5 }];
        assert!(matches!(
            shell_benchmark_links(&links, &[10], 1e-3, 10),
            Err(RateError::InterferencePresent(_))
        ));
    }

    #[test]
    fn sinr() {
        let l = LinkPower { signal: 6.0, interference: 2.0 };
        assert_eq!(l.sinr(), 2.0);
    }
}
