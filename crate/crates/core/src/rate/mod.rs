//! Mutual information, dispersion and second-order achievable rates.
//!
//! A user's rate combines its per-sub-block statistics weighted by the
//! sub-block lengths:
//!
//! ```text
//! R_k = [ sum_j L_j I_j - sqrt(sum_j L_j V_j) Q^{-1}(eps_k) ] / N_k
//! ```
//!
//! Third-order terms are not included.

mod benchmark;
mod estimator;
mod qfunc;
mod quadrature;

pub use benchmark::{
    complex_capacity, gaussian_benchmark, gaussian_dispersion, shell_benchmark, shell_benchmark_links, shell_dispersion,
    BenchmarkMode, LinkPower,
};
pub use estimator::{
    estimate_mi_dispersion, estimate_third_abs_moment, estimate_with_route, EstimatorSettings, Route, SubBlockRateStats,
    MAX_TUPLES, MIN_NOISE_SAMPLES,
};
pub(crate) use estimator::noise_chunk;
pub use qfunc::{qfunc, qfunc_inv};
pub use quadrature::{gauss_hermite, quadrature_mi, GH_NODES, MAX_ORACLE_POINTS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scheme::{SchemePlan, SubBlockLayout, UserSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("probability {0} outside (0, 0.5]")]
    ProbabilityOutOfRange(f64),
    #[error("error target {0} outside (0, 0.5]")]
    EpsilonOutOfRange(f64),
    #[error("{tuples} symbol tuples exceed the enumeration cap {cap}")]
    CardinalityCap { tuples: usize, cap: usize },
    #[error("{got} noise samples requested, at least {min} required")]
    TooFewSamples { got: usize, min: usize },
    #[error("non-finite intermediate value")]
    NonFinite,
    #[error("constellations do not factor into per-axis grids")]
    NotSeparable,
    #[error("negative SINR {0}")]
    NegativeSinr(f64),
    #[error("shell-code rate requested on a link with interference power {0}")]
    InterferencePresent(f64),
    #[error("expected {expected} per-sub-block values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<(), RateError> {
    if epsilon > 0.0 && epsilon <= 0.5 {
        Ok(())
    } else {
        Err(RateError::EpsilonOutOfRange(epsilon))
    }
}

/// Berry–Esseen constant.
pub const BERRY_ESSEEN_C0: f64 = 0.56;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderRate {
    pub rate: f64,
    /// `sum_j L_j I_j / N_k`.
    pub first_order: f64,
    /// `sum_j L_j V_j / N_k`.
    pub dispersion: f64,
    /// Set when the rate is not positive; the value is still reported.
    pub nonpositive: bool,
}

/// Combines per-sub-block statistics into a second-order rate.
pub fn second_order_rate(
    lengths: &[usize],
    stats: &[SubBlockRateStats],
    epsilon: f64,
    blocklength: usize,
) -> Result<SecondOrderRate, RateError> {
    if lengths.len() != stats.len() {
        return Err(RateError::LengthMismatch {
            expected: lengths.len(),
            got: stats.len(),
        });
    }
    check_epsilon(epsilon)?;
    if stats.iter().any(|s| !s.mutual_information.is_finite() || !s.dispersion.is_finite()) {
        return Err(RateError::NonFinite);
    }
    let n = blocklength as f64;
    let first: f64 = lengths.iter().zip(stats).map(|(l, s)| *l as f64 * s.mutual_information).sum();
    let second: f64 = lengths.iter().zip(stats).map(|(l, s)| *l as f64 * s.dispersion.max(0.0)).sum();
    let rate = (first - second.sqrt() * qfunc_inv(epsilon)?) / n;
    Ok(SecondOrderRate {
        rate,
        first_order: first / n,
        dispersion: second / n,
        nonpositive: rate <= 0.0,
    })
}

/// Rate of a user occupying one homogeneous block: `I - sqrt(V/N) Q^{-1}(eps)`.
pub fn single_block_rate(stats: &SubBlockRateStats, epsilon: f64, blocklength: usize) -> Result<f64, RateError> {
    check_epsilon(epsilon)?;
    let n = blocklength as f64;
    Ok(stats.mutual_information - (stats.dispersion / n).sqrt() * qfunc_inv(epsilon)?)
}

/// Rate of the longer user of a two-user system: `first` covers the first
/// `n_short` symbols and `second` the remaining `n_long - n_short`.
pub fn two_block_rate(
    first: &SubBlockRateStats,
    second: &SubBlockRateStats,
    n_short: usize,
    n_long: usize,
    epsilon: f64,
) -> Result<f64, RateError> {
    check_epsilon(epsilon)?;
    let (a, b) = (n_short as f64, (n_long - n_short) as f64);
    let mean = a * first.mutual_information + b * second.mutual_information;
    let var = a * first.dispersion + b * second.dispersion;
    Ok((mean - var.sqrt() * qfunc_inv(epsilon)?) / n_long as f64)
}

/// Second-order rate and supporting statistics of one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRate {
    /// Position in the input spec.
    pub input_index: usize,
    pub blocklength: usize,
    pub epsilon: f64,
    pub rate: SecondOrderRate,
    /// Lengths of sub-blocks `0..=k`.
    pub lengths: Vec<usize>,
    pub sub_blocks: Vec<SubBlockRateStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    /// Users in blocklength order.
    pub users: Vec<UserRate>,
}

impl RateResult {
    pub fn rates(&self) -> Vec<f64> {
        self.users.iter().map(|u| u.rate.rate).collect()
    }
}

/// Statistics of user `k` on sub-block `j` of `plan`.
pub fn sub_block_stats(
    plan: &SchemePlan,
    user: usize,
    sub_block: usize,
    settings: EstimatorSettings,
) -> Result<SubBlockRateStats, RateError> {
    if plan.layout.sub_blocks[sub_block].is_empty() || plan.orders.get(user, sub_block) == 0 {
        return Ok(SubBlockRateStats::zero());
    }
    estimate_mi_dispersion(
        &plan.user_constellation(user, sub_block),
        &plan.interferers(user, sub_block),
        plan.channel(user),
        settings,
    )
}

/// Rates of every user of `plan`. All sub-blocks share `settings.seed`.
pub fn evaluate_plan(plan: &SchemePlan, settings: EstimatorSettings) -> Result<RateResult, RateError> {
    let users = (0..plan.user_count())
        .map(|k| {
            let stats = (0..=k)
                .map(|j| sub_block_stats(plan, k, j, settings))
                .collect::<Result<Vec<_>, _>>()?;
            user_rate_from_stats(plan, k, stats)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RateResult { users })
}

pub(crate) fn user_rate_from_stats(
    plan: &SchemePlan,
    user: usize,
    stats: Vec<SubBlockRateStats>,
) -> Result<UserRate, RateError> {
    let lengths = plan.layout.lengths_for(user);
    let u = plan.users[user];
    let rate = second_order_rate(&lengths, &stats, u.epsilon, u.blocklength)?;
    Ok(UserRate {
        input_index: plan.layout.user_order[user],
        blocklength: u.blocklength,
        epsilon: u.epsilon,
        rate,
        lengths,
        sub_blocks: stats,
    })
}

/// Received signal and interference powers for a power matrix.
///
/// `powers[k][j]` is user `k`'s power on sub-block `j`. In
/// [`BenchmarkMode::PerfectSic`] only participants with a stronger channel
/// remain as interference.
pub fn benchmark_links(
    users: &[UserSpec],
    layout: &SubBlockLayout,
    powers: &[Vec<f64>],
    mode: BenchmarkMode,
) -> Vec<Vec<LinkPower>> {
    (0..users.len())
        .map(|k| {
            let g = users[k].gain();
            layout.sub_blocks[..=k]
                .iter()
                .map(|sb| {
                    let signal = powers[k][sb.index] * g;
                    let others = sb.participants.iter().filter(|&&u| u != k);
                    let interference: f64 = match mode {
                        BenchmarkMode::Tin => others.map(|&u| powers[u][sb.index]).sum(),
                        BenchmarkMode::PerfectSic => others
                            .filter(|&&u| users[u].gain() > g)
                            .map(|&u| powers[u][sb.index])
                            .sum(),
                    };
                    LinkPower {
                        signal,
                        interference: interference * g,
                    }
                })
                .collect()
        })
        .collect()
}

/// Gaussian-code rates of every user for a power matrix.
pub fn gaussian_rates(
    users: &[UserSpec],
    layout: &SubBlockLayout,
    powers: &[Vec<f64>],
    mode: BenchmarkMode,
) -> Result<Vec<f64>, RateError> {
    benchmark_links(users, layout, powers, mode)
        .iter()
        .enumerate()
        .map(|(k, links)| {
            let sinrs: Vec<f64> = links.iter().map(LinkPower::sinr).collect();
            gaussian_benchmark(&sinrs, &layout.lengths_for(k), users[k].epsilon, users[k].blocklength)
        })
        .collect()
}

/// Berry–Esseen constant `B_k` of one user, as a diagnostic.
///
/// `B_k = C0 sum_j (L_j/N_k) T_j / (sum_j (L_j/N_k) V_j)^{3/2}` with `T_j` the
/// third absolute central moment of the information density on sub-block `j`.
pub fn berry_esseen_constant(plan: &SchemePlan, user: usize, settings: EstimatorSettings) -> Result<f64, RateError> {
    let n = plan.layout.blocklength(user) as f64;
    let mut third = 0.0;
    let mut var = 0.0;
    for j in 0..=user {
        let sb = &plan.layout.sub_blocks[j];
        if sb.is_empty() || plan.orders.get(user, j) == 0 {
            continue;
        }
        let w = sb.len() as f64 / n;
        let desired = plan.user_constellation(user, j);
        let interferers = plan.interferers(user, j);
        let s = estimate_mi_dispersion(&desired, &interferers, plan.channel(user), settings)?;
        let t = estimate_third_abs_moment(&desired, &interferers, plan.channel(user), settings, s.mutual_information)?;
        third += w * t;
        var += w * s.dispersion;
    }
    if var <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(BERRY_ESSEEN_C0 * third / var.powf(1.5))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(i: f64, v: f64) -> SubBlockRateStats {
        SubBlockRateStats {
            mutual_information: i,
            dispersion: v,
            ..SubBlockRateStats::zero()
        }
    }

    #[test]
    fn zero_dispersion_gives_first_order() {
        let r = second_order_rate(&[10, 30], &[stats(2.0, 0.0), stats(1.0, 0.0)], 1e-5, 40).unwrap();
        assert!((r.rate - 50.0 / 40.0).abs() < 1e-15);
        assert_eq!(r.rate, r.first_order);
    }

    #[test]
    fn half_epsilon_drops_dispersion() {
        let r = second_order_rate(&[16], &[stats(1.5, 3.0)], 0.5, 16).unwrap();
        assert_eq!(r.rate, 1.5);
    }

    #[test]
    fn single_block_matches_general_form() {
        let s = stats(1.7, 0.9);
        let a = second_order_rate(&[128], &[s], 1e-6, 128).unwrap().rate;
        let b = single_block_rate(&s, 1e-6, 128).unwrap();
        assert!((a - b).abs() <= 1e-14);
    }

    #[test]
    fn two_blocks_match_general_form() {
        let (s1, s2) = (stats(1.2, 0.7), stats(2.9, 0.4));
        let a = second_order_rate(&[100, 156], &[s1, s2], 1e-4, 256).unwrap().rate;
        let b = two_block_rate(&s1, &s2, 100, 256, 1e-4).unwrap();
        assert!((a - b).abs() <= 1e-14);
    }

    #[test]
    fn empty_sub_block_is_ignored() {
        let a = second_order_rate(&[64, 0], &[stats(1.0, 0.5), stats(3.0, 9.0)], 1e-3, 64).unwrap();
        let b = second_order_rate(&[64], &[stats(1.0, 0.5)], 1e-3, 64).unwrap();
        assert_eq!(a.rate, b.rate);
    }

    #[test]
    fn nonpositive_is_flagged() {
        let r = second_order_rate(&[4], &[stats(0.1, 4.0)], 1e-6, 4).unwrap();
        assert!(r.nonpositive);
        assert!(r.rate < 0.0);
    }

    #[test]
    fn monotone_in_epsilon_and_length() {
        let s = [stats(1.0, 0.8), stats(2.0, 0.3)];
        let mut last = f64::NEG_INFINITY;
        for eps in [1e-9, 1e-6, 1e-3, 0.1, 0.5] {
            let r = second_order_rate(&[50, 50], &s, eps, 100).unwrap().rate;
            assert!(r >= last);
            last = r;
        }
        let mut last = f64::NEG_INFINITY;
        for scale in [1, 2, 4, 8] {
            let r = second_order_rate(&[50 * scale, 50 * scale], &s, 1e-5, 100 * scale).unwrap().rate;
            assert!(r >= last);
            last = r;
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            second_order_rate(&[1, 2], &[stats(1.0, 1.0)], 1e-3, 3),
            Err(RateError::LengthMismatch { .. })
        ));
        assert!(matches!(
            second_order_rate(&[1], &[stats(1.0, 1.0)], 0.7, 1),
            Err(RateError::EpsilonOutOfRange(_))
        ));
        assert!(matches!(
            second_order_rate(&[1], &[stats(f64::NAN, 1.0)], 0.1, 1),
            Err(RateError::NonFinite)
        ));
    }
}
