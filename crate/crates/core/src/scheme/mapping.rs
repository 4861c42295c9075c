//! Bits to symbols and symbols to the superimposed frame.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{OrderMatrix, SchemeError, SchemePlan, SubBlockLayout};
use crate::constellation::LabeledConstellation;

/// Codeword length of each user: `n_k = sum_j (N_j - N_{j-1}) m[k][j]`.
pub fn codeword_lengths(orders: &OrderMatrix, layout: &SubBlockLayout) -> Vec<usize> {
    (0..orders.user_count())
        .map(|k| {
            layout.sub_blocks[..=k]
                .iter()
                .map(|sb| sb.len() * orders.get(k, sb.index) as usize)
                .sum()
        })
        .collect()
}

/// Maps user `k`'s coded bits onto its unit-spacing symbols `v_k`.
///
/// The bits are consumed sub-block by sub-block; within sub-block `j` every
/// group of `m[k][j]` bits is read most-significant first as a Gray label.
/// A sub-block where the user is silent yields zeros.
pub fn map_bits(bits: &[u8], user: usize, plan: &SchemePlan) -> Result<Vec<Complex64>, SchemeError> {
    let expected = plan.codeword_lengths[user];
    if bits.len() != expected {
        return Err(SchemeError::BitLength {
            user,
            expected,
            got: bits.len(),
        });
    }
    let mut out = Vec::with_capacity(plan.layout.blocklength(user));
    let mut rest = bits;
    for sb in &plan.layout.sub_blocks[..=user] {
        let m = plan.orders.get(user, sb.index);
        if m == 0 {
            out.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), sb.len()));
            continue;
        }
        let c = LabeledConstellation::regular(m)?;
        let (here, tail) = rest.split_at(sb.len() * m as usize);
        rest = tail;
        out.extend(here.chunks(m as usize).map(|g| c.point(bits_to_label(g))));
    }
    Ok(out)
}

pub(crate) fn bits_to_label(bits: &[u8]) -> u32 {
    bits.iter().fold(0, |acc, &b| (acc << 1) | u32::from(b & 1))
}

/// The superimposed frame and each user's transmitted contribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    /// Length `N_K`.
    pub x: Vec<Complex64>,
    /// `per_user[k]` has length `N_k` and is already power-scaled.
    pub per_user: Vec<Vec<Complex64>>,
}

/// Scales each user's unit-spacing symbols by its sub-block amplitude and
/// sums the zero-padded results.
pub fn build_frame(symbols: &[Vec<Complex64>], plan: &SchemePlan) -> Result<Frame, SchemeError> {
    let k = plan.user_count();
    if symbols.len() != k {
        return Err(SchemeError::OrderRows {
            expected: k,
            got: symbols.len(),
        });
    }
    let total = *plan.layout.boundaries.last().unwrap_or(&0);
    let mut x = vec![Complex64::new(0.0, 0.0); total];
    let mut per_user = Vec::with_capacity(k);
    for (u, v) in symbols.iter().enumerate() {
        let n = plan.layout.blocklength(u);
        if v.len() != n {
            return Err(SchemeError::SymbolLength {
                user: u,
                expected: n,
                got: v.len(),
            });
        }
        let mut xu = v.clone();
        for sb in &plan.layout.sub_blocks[..=u] {
            let a = plan.scales[u][sb.index];
            for s in &mut xu[sb.start..sb.end] {
                *s *= a;
            }
        }
        for (acc, s) in x.iter_mut().zip(&xu) {
            *acc += s;
        }
        per_user.push(xu);
    }
    Ok(Frame { x, per_user })
}
