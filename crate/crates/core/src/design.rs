//! Exhaustive search over feasible modulation orders.
//!
//! Sub-blocks are independent once the power of each is fixed, so the search
//! enumerates feasible order vectors per sub-block, estimates the statistics
//! of every participant once per vector, and then combines vectors across
//! sub-blocks. Candidates are Pareto-filtered over the users with non-zero
//! weight and sorted by weighted sum rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rate::{sub_block_stats, user_rate_from_stats, EstimatorSettings, RateError, RateResult, SubBlockRateStats};
use crate::scheme::{
    assign_power, build_layout, check_modulation_constraints, OrderMatrix, SchemeError, SchemePlan, SubBlockLayout,
    SystemSpec,
};

/// Largest total order searched per sub-block.
pub const DESIGN_ORDER_CAP: u32 = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("weights must be finite, non-negative and not all zero")]
    InvalidWeights,
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Rate(#[from] RateError),
}

/// Channel-code parameters of one user: `k` information bits in `n` coded bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeParams {
    pub k: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignCandidate {
    pub orders: OrderMatrix,
    pub plan: SchemePlan,
    pub rates: RateResult,
    /// In blocklength order.
    pub code: Vec<CodeParams>,
    pub weighted_sum: f64,
    /// Smallest order-bound slack of each sub-block.
    pub slack: Vec<f64>,
    pub pareto: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignOutcome {
    /// Pareto-optimal candidates, best weighted sum first.
    pub candidates: Vec<DesignCandidate>,
    /// Every admissible candidate in the same order, dominated ones included.
    pub evaluated: Vec<DesignCandidate>,
    /// Why the list is empty, when it is.
    pub explanation: Option<String>,
}

/// Searches all feasible order matrices with at most [`DESIGN_ORDER_CAP`]
/// bits per superimposed symbol in each sub-block.
///
/// `weights` follow the input order of `spec.users`. A candidate is admissible
/// when every user with non-zero weight carries bits and has a positive rate.
/// Ties in weighted sum go to the lexicographically smaller order matrix.
pub fn design_search(
    spec: &SystemSpec,
    weights: &[f64],
    settings: EstimatorSettings,
) -> Result<DesignOutcome, DesignError> {
    let layout = build_layout(spec)?;
    let k = layout.user_count();
    if weights.len() != k {
        return Err(DesignError::WeightCount {
            expected: k,
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().all(|w| *w == 0.0) {
        return Err(DesignError::InvalidWeights);
    }
    let sorted_weights: Vec<f64> = layout.user_order.iter().map(|&i| weights[i]).collect();

    let per_block: Vec<Vec<Vec<u32>>> = (0..k).map(|j| feasible_vectors(spec, &layout, j)).collect::<Result<_, _>>()?;

    // Statistics of every participant for every feasible vector.
    let jobs: Vec<(usize, usize)> = per_block
        .iter()
        .enumerate()
        .flat_map(|(j, vs)| (0..vs.len()).map(move |v| (j, v)))
        .collect();
    let computed: Vec<Vec<SubBlockRateStats>> = jobs
        .par_iter()
        .map(|&(j, v)| vector_stats(spec, &layout, &per_block, j, v, settings))
        .collect::<Result<_, DesignError>>()?;
    let mut stats: Vec<Vec<Vec<SubBlockRateStats>>> = per_block.iter().map(|vs| Vec::with_capacity(vs.len())).collect();
    for ((j, _), s) in jobs.iter().zip(computed) {
        stats[*j].push(s);
    }

    let mut evaluated = Vec::new();
    let mut rejected = 0usize;
    let mut choice = vec![0usize; k];
    loop {
        let vectors: Vec<Vec<u32>> = choice.iter().enumerate().map(|(j, &c)| per_block[j][c].clone()).collect();
        let orders = OrderMatrix::from_sub_blocks(&vectors)?;
        let plan = assign_power(&orders, spec, &layout)?;
        let users = (0..k)
            .map(|u| {
                let s: Vec<SubBlockRateStats> = (0..=u).map(|j| stats[j][choice[j]][u - j]).collect();
                user_rate_from_stats(&plan, u, s)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let rates = RateResult { users };
        let admissible = (0..k).all(|u| {
            sorted_weights[u] == 0.0 || (plan.codeword_lengths[u] > 0 && rates.users[u].rate.rate > 0.0)
        });
        if admissible {
            let report = check_modulation_constraints(&orders, spec, &layout)?;
            let slack = (0..k).map(|j| report.min_slack(j).unwrap_or(0.0)).collect();
            let code = (0..k)
                .map(|u| CodeParams {
                    k: (rates.users[u].rate.rate * plan.users[u].blocklength as f64).floor().max(0.0) as usize,
                    n: plan.codeword_lengths[u],
                })
                .collect();
            let weighted_sum = rates.rates().iter().zip(&sorted_weights).map(|(r, w)| r * w).sum();
            evaluated.push(DesignCandidate {
                orders,
                plan,
                rates,
                code,
                weighted_sum,
                slack,
                pareto: false,
            });
        } else {
            rejected += 1;
        }
        if !advance(&mut choice, &per_block) {
            break;
        }
    }

    evaluated.sort_by(|a, b| b.weighted_sum.total_cmp(&a.weighted_sum).then_with(|| a.orders.cmp(&b.orders)));
    let active: Vec<usize> = (0..k).filter(|&u| sorted_weights[u] > 0.0).collect();
    let flags: Vec<bool> = (0..evaluated.len())
        .map(|i| !evaluated.iter().any(|other| dominates(other, &evaluated[i], &active)))
        .collect();
    for (c, f) in evaluated.iter_mut().zip(flags) {
        c.pareto = f;
    }
    let candidates: Vec<DesignCandidate> = evaluated.iter().filter(|c| c.pareto).cloned().collect();
    let explanation = candidates.is_empty().then(|| {
        let bounds: Vec<String> = (0..k)
            .map(|j| format!("{:?}", crate::scheme::order_bound_rhs(spec, &layout, j)))
            .collect();
        format!(
            "no admissible design: {rejected} feasible order matrices leave a weighted user without bits or with a non-positive rate; order bounds per sub-block {}",
            bounds.join(" ")
        )
    });
    Ok(DesignOutcome {
        candidates,
        evaluated,
        explanation,
    })
}

fn dominates(a: &DesignCandidate, b: &DesignCandidate, active: &[usize]) -> bool {
    let ra = a.rates.rates();
    let rb = b.rates.rates();
    active.iter().all(|&u| ra[u] >= rb[u]) && active.iter().any(|&u| ra[u] > rb[u])
}

fn advance(choice: &mut [usize], per_block: &[Vec<Vec<u32>>]) -> bool {
    for j in (0..choice.len()).rev() {
        choice[j] += 1;
        if choice[j] < per_block[j].len() {
            return true;
        }
        choice[j] = 0;
    }
    false
}

/// Feasible order vectors of sub-block `j` in participant order. An empty
/// sub-block only gets the all-zero vector.
pub fn feasible_vectors(spec: &SystemSpec, layout: &SubBlockLayout, j: usize) -> Result<Vec<Vec<u32>>, SchemeError> {
    let k = layout.user_count();
    let width = k - j;
    if layout.sub_blocks[j].is_empty() {
        return Ok(vec![vec![0; width]]);
    }
    let mut all = Vec::new();
    let mut current = vec![0u32; width];
    enumerate(&mut current, 0, DESIGN_ORDER_CAP, &mut all);
    let mut out = Vec::new();
    for v in all {
        let mut per: Vec<Vec<u32>> = (0..k).map(|i| vec![0; k - i]).collect();
        per[j] = v.clone();
        let orders = OrderMatrix::from_sub_blocks(&per)?;
        let report = check_modulation_constraints(&orders, spec, layout)?;
        if report.checks.iter().filter(|c| c.sub_block == j).all(|c| c.satisfied) {
            out.push(v);
        }
    }
    Ok(out)
}

fn enumerate(current: &mut Vec<u32>, at: usize, budget: u32, out: &mut Vec<Vec<u32>>) {
    if at == current.len() {
        out.push(current.clone());
        return;
    }
    for m in 0..=budget {
        current[at] = m;
        enumerate(current, at + 1, budget - m, out);
    }
    current[at] = 0;
}

fn vector_stats(
    spec: &SystemSpec,
    layout: &SubBlockLayout,
    per_block: &[Vec<Vec<u32>>],
    j: usize,
    v: usize,
    settings: EstimatorSettings,
) -> Result<Vec<SubBlockRateStats>, DesignError> {
    let k = layout.user_count();
    let mut per: Vec<Vec<u32>> = (0..k).map(|i| vec![0; k - i]).collect();
    per[j] = per_block[j][v].clone();
    let orders = OrderMatrix::from_sub_blocks(&per)?;
    let plan = assign_power(&orders, spec, layout)?;
    (j..k)
        .map(|u| sub_block_stats(&plan, u, j, settings).map_err(DesignError::from))
        .collect()
}
