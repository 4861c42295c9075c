//! From a system specification to a transmission plan.
//!
//! Users are indexed by non-decreasing blocklength. The superimposed frame
//! splits into sub-blocks `j = 0..K`: sub-block `j` covers symbols
//! `N_{j-1}..N_j` and carries users `j..K`. Within a sub-block the
//! participants are ranked by decreasing `|h|`; the strongest user gets the
//! finest grid and each weaker user's grid is scaled to nest around it.

mod mapping;
mod spec;

pub use mapping::{build_frame, codeword_lengths, map_bits, Frame};
pub use spec::{SystemSpec, UserSpec, CHANNEL_TIE_TOLERANCE};

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constellation::{
    qam_energy, scale, superimpose, ConstellationError, LabeledConstellation, MAX_ORDER,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemeError {
    #[error("system has no users")]
    NoUsers,
    #[error("total power {0} must be positive and finite")]
    InvalidPower(f64),
    #[error("user {0} has zero blocklength")]
    ZeroBlocklength(usize),
    #[error("user {user}: error target {epsilon} outside (0, 0.5)")]
    InvalidEpsilon { user: usize, epsilon: f64 },
    #[error("user {0}: channel must be non-zero and finite")]
    InvalidChannel(usize),
    #[error("users {0} and {1} have equal channel magnitudes; ranking is undefined")]
    ChannelTie(usize, usize),
    #[error("order matrix row {row} has {got} entries, expected {expected}")]
    OrderShape { row: usize, expected: usize, got: usize },
    #[error("order matrix has {got} rows for {expected} users")]
    OrderRows { expected: usize, got: usize },
    #[error("modulation orders are infeasible: {0}")]
    Infeasible(String),
    #[error("user {user}: expected {expected} bits, got {got}")]
    BitLength { user: usize, expected: usize, got: usize },
    #[error("user {user}: expected {expected} symbols, got {got}")]
    SymbolLength { user: usize, expected: usize, got: usize },
    #[error("plan file disagrees with its recomputation: {0}")]
    PlanMismatch(String),
    #[error(transparent)]
    Constellation(#[from] ConstellationError),
}

/// One sub-block of the superimposed frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubBlock {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    /// Users `index..K` (sorted indices).
    pub participants: Vec<usize>,
    /// Participants by decreasing channel magnitude.
    pub ranking: Vec<usize>,
}

impl SubBlock {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    /// Zero-based rank of `user` in this sub-block.
    pub fn rank_of(&self, user: usize) -> Option<usize> {
        self.ranking.iter().position(|&u| u == user)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubBlockLayout {
    /// `N_0 = 0, N_1, ..., N_K` in sorted user order.
    pub boundaries: Vec<usize>,
    pub sub_blocks: Vec<SubBlock>,
    /// `user_order[k]` is the input index of sorted user `k`.
    pub user_order: Vec<usize>,
}

impl SubBlockLayout {
    pub fn user_count(&self) -> usize {
        self.sub_blocks.len()
    }

    /// True when the input users were not already sorted by blocklength.
    pub fn reordered(&self) -> bool {
        self.user_order.iter().enumerate().any(|(i, &o)| i != o)
    }

    /// Lengths of the sub-blocks user `k` spans.
    pub fn lengths_for(&self, user: usize) -> Vec<usize> {
        self.sub_blocks[..=user].iter().map(SubBlock::len).collect()
    }

    pub fn blocklength(&self, user: usize) -> usize {
        self.boundaries[user + 1]
    }

    /// Users sorted by blocklength, drawn from `spec`.
    pub fn sorted_users(&self, spec: &SystemSpec) -> Vec<UserSpec> {
        self.user_order.iter().map(|&i| spec.users[i]).collect()
    }
}

/// Splits the frame into sub-blocks and ranks each sub-block's participants.
///
/// Users whose blocklengths are out of order are sorted (stably); the mapping
/// back to input indices is kept in [`SubBlockLayout::user_order`].
pub fn build_layout(spec: &SystemSpec) -> Result<SubBlockLayout, SchemeError> {
    spec.validate()?;
    let mut order: Vec<usize> = (0..spec.user_count()).collect();
    order.sort_by_key(|&i| spec.users[i].blocklength);
    let users: Vec<UserSpec> = order.iter().map(|&i| spec.users[i]).collect();
    let k = users.len();
    let mut boundaries = vec![0];
    boundaries.extend(users.iter().map(|u| u.blocklength));
    let sub_blocks = (0..k)
        .map(|j| {
            let participants: Vec<usize> = (j..k).collect();
            let mut ranking = participants.clone();
            ranking.sort_by(|&a, &b| users[b].channel().norm().total_cmp(&users[a].channel().norm()));
            SubBlock {
                index: j,
                start: boundaries[j],
                end: boundaries[j + 1],
                participants,
                ranking,
            }
        })
        .collect();
    Ok(SubBlockLayout {
        boundaries,
        sub_blocks,
        user_order: order,
    })
}

/// Modulation orders `m[k][j]` for sorted user `k` on sub-block `j <= k`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OrderMatrix(Vec<Vec<u32>>);

impl OrderMatrix {
    pub fn new(rows: Vec<Vec<u32>>) -> Result<Self, SchemeError> {
        for (k, row) in rows.iter().enumerate() {
            if row.len() != k + 1 {
                return Err(SchemeError::OrderShape {
                    row: k,
                    expected: k + 1,
                    got: row.len(),
                });
            }
        }
        Ok(OrderMatrix(rows))
    }

    /// Row-major: `m[0][0], m[1][0], m[1][1], m[2][0], ...`.
    pub fn from_flat(users: usize, flat: &[u32]) -> Result<Self, SchemeError> {
        let expected = users * (users + 1) / 2;
        if flat.len() != expected {
            return Err(SchemeError::OrderRows {
                expected,
                got: flat.len(),
            });
        }
        let mut rows = Vec::with_capacity(users);
        let mut at = 0;
        for k in 0..users {
            rows.push(flat[at..at + k + 1].to_vec());
            at += k + 1;
        }
        Ok(OrderMatrix(rows))
    }

    /// Assembles a matrix from one order vector per sub-block, listed in
    /// participant order (`users j..K`).
    pub fn from_sub_blocks(per_sub_block: &[Vec<u32>]) -> Result<Self, SchemeError> {
        let k = per_sub_block.len();
        let mut rows: Vec<Vec<u32>> = (0..k).map(|r| vec![0; r + 1]).collect();
        for (j, v) in per_sub_block.iter().enumerate() {
            if v.len() != k - j {
                return Err(SchemeError::OrderShape {
                    row: j,
                    expected: k - j,
                    got: v.len(),
                });
            }
            for (offset, &m) in v.iter().enumerate() {
                rows[j + offset][j] = m;
            }
        }
        Ok(OrderMatrix(rows))
    }

    pub fn user_count(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, user: usize, sub_block: usize) -> u32 {
        self.0[user][sub_block]
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.0
    }

    pub fn flat(&self) -> Vec<u32> {
        self.0.iter().flatten().copied().collect()
    }

    /// Orders of sub-block `j`'s participants in participant order.
    pub fn sub_block(&self, j: usize) -> Vec<u32> {
        (j..self.0.len()).map(|k| self.0[k][j]).collect()
    }

    pub fn sub_block_total(&self, j: usize) -> u32 {
        self.sub_block(j).iter().sum()
    }

    fn check_users(&self, users: usize) -> Result<(), SchemeError> {
        if self.0.len() != users {
            return Err(SchemeError::OrderRows {
                expected: users,
                got: self.0.len(),
            });
        }
        OrderMatrix::new(self.0.clone()).map(|_| ())
    }
}

impl fmt::Display for OrderMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.flat().iter().map(u32::to_string).collect();
        write!(f, "({})", parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    /// `sum_{i' >= i} m <= floor(log2(6 S |h_{g_i}|^2))`, with `1 +` inside
    /// the logarithm for the strongest rank.
    OrderBound { plus_one: bool },
    /// Every active part after the first must be stacked on a square grid,
    /// i.e. the orders of the stronger users must sum to an even number.
    SquareNesting,
    /// Rectangular (odd total order) sub-blocks: exact-energy minimum distance
    /// condition `E <= 2^{prefix} S |h|^2`.
    ExactEnergy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub sub_block: usize,
    /// Zero-based rank within the sub-block.
    pub rank: usize,
    pub user: usize,
    pub kind: ConstraintKind,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

impl ConstraintCheck {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub checks: Vec<ConstraintCheck>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.checks.iter().all(|c| c.satisfied)
    }

    pub fn violations(&self) -> impl Iterator<Item = &ConstraintCheck> {
        self.checks.iter().filter(|c| !c.satisfied)
    }

    /// Smallest slack over the order-bound constraints of each sub-block.
    /// Bounds met only because the suffix is silent are left out.
    pub fn min_slack(&self, sub_block: usize) -> Option<f64> {
        self.checks
            .iter()
            .filter(|c| c.sub_block == sub_block && matches!(c.kind, ConstraintKind::OrderBound { .. }))
            .filter(|c| c.lhs > 0.0 || c.rhs >= 0.0)
            .map(ConstraintCheck::slack)
            .reduce(f64::min)
    }

    fn describe(&self) -> String {
        self.violations()
            .map(|c| format!("sub-block {} rank {} {:?}: {} > {}", c.sub_block, c.rank, c.kind, c.lhs, c.rhs))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Power carried by every sub-block of the superimposed frame. The balanced
/// assignment gives each the full total power.
fn sub_block_power(spec: &SystemSpec) -> f64 {
    spec.total_power
}

/// Right-hand sides of the order bounds for sub-block `j`, by rank, capped at
/// the largest supported order.
pub fn order_bound_rhs(spec: &SystemSpec, layout: &SubBlockLayout, j: usize) -> Vec<i64> {
    let users = layout.sorted_users(spec);
    let s = sub_block_power(spec);
    layout.sub_blocks[j]
        .ranking
        .iter()
        .enumerate()
        .map(|(rank, &u)| {
            let arg = 6.0 * s * users[u].gain() + if rank == 0 { 1.0 } else { 0.0 };
            (arg.log2().floor() as i64).min(MAX_ORDER as i64)
        })
        .collect()
}

/// Order bounds per sub-block and rank, plus the grid-nesting and exact-energy
/// conditions needed for rectangular grids.
pub fn check_modulation_constraints(
    orders: &OrderMatrix,
    spec: &SystemSpec,
    layout: &SubBlockLayout,
) -> Result<FeasibilityReport, SchemeError> {
    orders.check_users(layout.user_count())?;
    let users = layout.sorted_users(spec);
    let s = sub_block_power(spec);
    let mut checks = Vec::new();
    for (j, sb) in layout.sub_blocks.iter().enumerate() {
        let rhs = order_bound_rhs(spec, layout, j);
        let ranked: Vec<u32> = sb.ranking.iter().map(|&u| orders.get(u, j)).collect();
        let total: u32 = ranked.iter().sum();
        for (rank, &u) in sb.ranking.iter().enumerate() {
            let lhs: u32 = ranked[rank..].iter().sum();
            checks.push(ConstraintCheck {
                sub_block: j,
                rank,
                user: u,
                kind: ConstraintKind::OrderBound { plus_one: rank == 0 },
                lhs: lhs as f64,
                rhs: rhs[rank] as f64,
                // A silent suffix asks nothing of the channel.
                satisfied: lhs == 0 || (lhs as i64) <= rhs[rank],
            });
        }
        let mut prefix = 0u32;
        for (rank, &u) in sb.ranking.iter().enumerate() {
            if ranked[rank] > 0 && prefix % 2 == 1 {
                checks.push(ConstraintCheck {
                    sub_block: j,
                    rank,
                    user: u,
                    kind: ConstraintKind::SquareNesting,
                    lhs: 1.0,
                    rhs: 0.0,
                    satisfied: false,
                });
            }
            prefix += ranked[rank];
        }
        if total % 2 == 1 && total <= MAX_ORDER {
            let energy = rectangular_energy(&ranked);
            let mut prefix = 0u32;
            for (rank, &u) in sb.ranking.iter().enumerate() {
                if ranked[rank] > 0 {
                    let budget = (1u64 << prefix) as f64 * s * users[u].gain();
                    checks.push(ConstraintCheck {
                        sub_block: j,
                        rank,
                        user: u,
                        kind: ConstraintKind::ExactEnergy,
                        lhs: energy,
                        rhs: budget,
                        satisfied: energy <= budget,
                    });
                }
                prefix += ranked[rank];
            }
        }
    }
    Ok(FeasibilityReport { checks })
}

/// Energy of the superposition of unit-spacing grids of the ranked orders.
fn rectangular_energy(ranked: &[u32]) -> f64 {
    let mut prefix = 0u32;
    let mut energy = 0.0;
    for &m in ranked {
        energy += (1u64 << prefix) as f64 * qam_energy(m);
        prefix += m;
    }
    energy
}

/// A validated transmission plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemePlan {
    pub total_power: f64,
    /// Users sorted by blocklength.
    pub users: Vec<UserSpec>,
    pub layout: SubBlockLayout,
    pub orders: OrderMatrix,
    /// Power of each sub-block of the superimposed frame.
    pub sub_block_power: Vec<f64>,
    /// Factor bringing each sub-block's unit-spacing superimposed grid to unit energy.
    pub normalization: Vec<f64>,
    /// `powers[k][j]`: average power of user `k` on sub-block `j`.
    pub powers: Vec<Vec<f64>>,
    /// `scales[k][j]`: amplitude applied to user `k`'s unit-spacing symbols on sub-block `j`.
    pub scales: Vec<Vec<f64>>,
    pub codeword_lengths: Vec<usize>,
}

/// Two-layer power assignment with balanced sub-block power.
///
/// Within sub-block `j` the user at rank `i` is scaled by
/// `eta_j * sqrt(2^{prefix_i} * P)` where `prefix_i` sums the orders of the
/// stronger users and `eta_j` normalizes the superimposed grid to unit energy.
pub fn assign_power(orders: &OrderMatrix, spec: &SystemSpec, layout: &SubBlockLayout) -> Result<SchemePlan, SchemeError> {
    let report = check_modulation_constraints(orders, spec, layout)?;
    if !report.is_feasible() {
        return Err(SchemeError::Infeasible(report.describe()));
    }
    let users = layout.sorted_users(spec);
    let k = users.len();
    let s = sub_block_power(spec);
    let mut powers: Vec<Vec<f64>> = (0..k).map(|r| vec![0.0; r + 1]).collect();
    let mut scales = powers.clone();
    let mut normalization = vec![0.0; k];
    let mut sub_block_power = vec![0.0; k];
    for (j, sb) in layout.sub_blocks.iter().enumerate() {
        let ranked: Vec<u32> = sb.ranking.iter().map(|&u| orders.get(u, j)).collect();
        let energy = rectangular_energy(&ranked);
        if energy == 0.0 {
            continue;
        }
        let eta = energy.sqrt().recip();
        normalization[j] = eta;
        sub_block_power[j] = s;
        let mut prefix = 0u32;
        for (rank, &u) in sb.ranking.iter().enumerate() {
            let m = ranked[rank];
            if m > 0 {
                let amp = eta * ((1u64 << prefix) as f64 * s).sqrt();
                scales[u][j] = amp;
                powers[u][j] = amp * amp * qam_energy(m);
            }
            prefix += m;
        }
    }
    Ok(SchemePlan {
        total_power: spec.total_power,
        users,
        layout: layout.clone(),
        orders: orders.clone(),
        sub_block_power,
        normalization,
        powers,
        scales,
        codeword_lengths: codeword_lengths(orders, layout),
    })
}

/// Builds layout and power assignment in one step.
pub fn plan(spec: &SystemSpec, orders: &OrderMatrix) -> Result<SchemePlan, SchemeError> {
    let layout = build_layout(spec)?;
    assign_power(orders, spec, &layout)
}

impl SchemePlan {
    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn channel(&self, user: usize) -> Complex64 {
        self.users[user].channel()
    }

    /// Average power of user `k` over its own blocklength.
    pub fn user_power(&self, user: usize) -> f64 {
        let n = self.layout.blocklength(user) as f64;
        self.layout.sub_blocks[..=user]
            .iter()
            .map(|sb| sb.len() as f64 / n * self.powers[user][sb.index])
            .sum()
    }

    /// Left side of the total power constraint: average power of the whole
    /// superimposed frame.
    pub fn frame_power(&self) -> f64 {
        let nk = *self.layout.boundaries.last().unwrap() as f64;
        self.layout
            .sub_blocks
            .iter()
            .map(|sb| {
                let column: f64 = sb.participants.iter().map(|&u| self.powers[u][sb.index]).sum();
                sb.len() as f64 / nk * column
            })
            .sum()
    }

    /// Unit-spacing constellation of user `k` on sub-block `j`.
    pub fn unit_constellation(&self, user: usize, sub_block: usize) -> LabeledConstellation {
        LabeledConstellation::regular(self.orders.get(user, sub_block)).expect("orders validated at plan time")
    }

    /// User `k`'s transmitted constellation on sub-block `j` (before the channel).
    pub fn user_constellation(&self, user: usize, sub_block: usize) -> LabeledConstellation {
        let unit = self.unit_constellation(user, sub_block);
        if unit.order() == 0 {
            return unit;
        }
        scale(&unit, Complex64::new(self.scales[user][sub_block], 0.0)).expect("non-zero scale")
    }

    /// The other participants' transmitted constellations on sub-block `j`.
    pub fn interferers(&self, user: usize, sub_block: usize) -> Vec<LabeledConstellation> {
        self.layout.sub_blocks[sub_block]
            .participants
            .iter()
            .filter(|&&u| u != user && self.orders.get(u, sub_block) > 0)
            .map(|&u| self.user_constellation(u, sub_block))
            .collect()
    }

    /// Superimposed constellation of sub-block `j` at transmit power.
    pub fn superimposed(&self, sub_block: usize) -> Result<LabeledConstellation, SchemeError> {
        let sb = &self.layout.sub_blocks[sub_block];
        let parts: Vec<LabeledConstellation> = sb.ranking.iter().map(|&u| self.unit_constellation(u, sub_block)).collect();
        let unit = superimpose(&parts)?;
        if unit.order() == 0 {
            return Ok(unit);
        }
        let amp = self.normalization[sub_block] * self.sub_block_power[sub_block].sqrt();
        Ok(scale(&unit, Complex64::new(amp, 0.0))?)
    }

    /// Number of bits user `k` maps on each of its sub-blocks.
    pub fn bit_split(&self, user: usize) -> Vec<usize> {
        self.layout.sub_blocks[..=user]
            .iter()
            .map(|sb| sb.len() * self.orders.get(user, sb.index) as usize)
            .collect()
    }

    pub fn to_file(&self) -> PlanFile {
        PlanFile {
            schema_version: PLAN_SCHEMA_VERSION,
            spec: SystemSpec::new(self.total_power, self.users.clone()),
            orders: self.orders.clone(),
            powers: self.powers.clone(),
            scales: self.scales.clone(),
            normalization: self.normalization.clone(),
            codeword_lengths: self.codeword_lengths.clone(),
        }
    }
}

pub const PLAN_SCHEMA_VERSION: u32 = 1;

/// JSON form of a plan. Users are stored in blocklength order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub schema_version: u32,
    pub spec: SystemSpec,
    pub orders: OrderMatrix,
    pub powers: Vec<Vec<f64>>,
    pub scales: Vec<Vec<f64>>,
    pub normalization: Vec<f64>,
    pub codeword_lengths: Vec<usize>,
}

impl PlanFile {
    /// Rebuilds the plan from spec and orders and checks the stored numbers.
    pub fn rebuild(&self) -> Result<SchemePlan, SchemeError> {
        if self.schema_version != PLAN_SCHEMA_VERSION {
            return Err(SchemeError::PlanMismatch(format!("schema version {}", self.schema_version)));
        }
        let p = plan(&self.spec, &self.orders)?;
        let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9 * (1.0 + y.abs()));
        let rows_close = |a: &[Vec<f64>], b: &[Vec<f64>]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| close(x, y));
        if !rows_close(&p.powers, &self.powers) {
            return Err(SchemeError::PlanMismatch("powers".into()));
        }
        if !rows_close(&p.scales, &self.scales) {
            return Err(SchemeError::PlanMismatch("scales".into()));
        }
        if !close(&p.normalization, &self.normalization) {
            return Err(SchemeError::PlanMismatch("normalization".into()));
        }
        if p.codeword_lengths != self.codeword_lengths {
            return Err(SchemeError::PlanMismatch("codeword lengths".into()));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceKind {
    /// A user's own constellation after its channel.
    Individual,
    /// The whole superimposed sub-block seen through the strongest participant's channel.
    Superimposed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinDistanceEntry {
    pub user: usize,
    pub sub_block: usize,
    pub kind: DistanceKind,
    pub d_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinDistanceReport {
    pub entries: Vec<MinDistanceEntry>,
}

impl MinDistanceReport {
    pub fn smallest(&self) -> f64 {
        self.entries.iter().map(|e| e.d_min).fold(f64::INFINITY, f64::min)
    }

    pub fn all_at_least(&self, bound: f64) -> bool {
        self.smallest() >= bound
    }
}

/// Effective minimum distances after power assignment and channel.
pub fn verify_min_distances(plan: &SchemePlan) -> Result<MinDistanceReport, SchemeError> {
    let mut entries = Vec::new();
    for sb in &plan.layout.sub_blocks {
        if sb.is_empty() {
            continue;
        }
        for &u in &sb.participants {
            if plan.orders.get(u, sb.index) == 0 {
                continue;
            }
            let c = plan.user_constellation(u, sb.index);
            entries.push(MinDistanceEntry {
                user: u,
                sub_block: sb.index,
                kind: DistanceKind::Individual,
                d_min: c.d_min() * plan.channel(u).norm(),
            });
        }
        let sup = plan.superimposed(sb.index)?;
        if sup.order() > 0 {
            let strongest = sb.ranking[0];
            entries.push(MinDistanceEntry {
                user: strongest,
                sub_block: sb.index,
                kind: DistanceKind::Superimposed,
                d_min: sup.d_min() * plan.channel(strongest).norm(),
            });
        }
    }
    Ok(MinDistanceReport { entries })
}
