//! Gray-labeled rectangular QAM constellations and their superposition.
//!
//! Points are stored in label order: the point at index `l` carries the bit
//! label `l`, read most-significant bit first. A constellation built here is
//! "regular" when it is a zero-mean rectangular grid with unit spacing; only
//! regular constellations can be superimposed.

use num_complex::Complex64;
use thiserror::Error;

/// Largest modulation order accepted anywhere in the crate.
pub const MAX_ORDER: u32 = 16;

/// Tolerance for treating two points as the same location.
pub const DEDUP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstellationError {
    #[error("modulation order {0} outside 1..={MAX_ORDER}")]
    OrderOutOfRange(u32),
    #[error("scale factor must be non-zero")]
    ZeroScale,
    #[error("part {0} is not a regular unit-spacing QAM")]
    NotRegular(usize),
    #[error("cumulative order {0} exceeds {MAX_ORDER}")]
    CumulativeOrder(u32),
    #[error("part {part} sits on a non-square prefix of order {prefix}; rectangular grids only nest on square ones")]
    OddPrefix { part: usize, prefix: u32 },
}

/// Unit-spacing grid shape: `2^columns` points along the in-phase axis and
/// `2^rows` along quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub column_bits: u32,
    pub row_bits: u32,
}

impl GridShape {
    fn for_order(order: u32) -> Self {
        GridShape {
            column_bits: order.div_ceil(2),
            row_bits: order / 2,
        }
    }

    pub fn is_square(&self) -> bool {
        self.column_bits == self.row_bits
    }
}

/// A finite complex signal set with one bit label per point.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledConstellation {
    points: Vec<Complex64>,
    order: u32,
    d_min: f64,
    mean: Complex64,
    energy: f64,
    grid: Option<GridShape>,
}

fn inverse_gray(mut g: u32) -> u32 {
    let mut n = g;
    while g > 1 {
        g >>= 1;
        n ^= g;
    }
    n
}

/// Average energy of the unit-spacing rectangular QAM of the given order.
///
/// Equals `(2^m - 1) / 6` for even `m`. Odd orders use a `2^((m+1)/2) x
/// 2^((m-1)/2)` grid whose energy is `(5 * 2^(m-1) - 2) / 12`.
pub fn qam_energy(order: u32) -> f64 {
    if order == 0 {
        return 0.0;
    }
    let shape = GridShape::for_order(order);
    let a = (1u64 << (2 * shape.column_bits)) as f64;
    let b = (1u64 << (2 * shape.row_bits)) as f64;
    (a - 1.0) / 12.0 + (b - 1.0) / 12.0
}

/// Normalization factor `sqrt(6 / (2^m - 1))` of a regular QAM of order `m`.
///
/// Scaling the unit-spacing square QAM of that order by the returned factor
/// gives unit average energy. For odd orders the rectangular grid has more
/// energy than the square-QAM formula assumes; use [`unit_energy_factor`]
/// when exact unit energy is required.
pub fn normalization_factor(total_order: u32) -> Result<f64, ConstellationError> {
    if total_order == 0 || total_order > MAX_ORDER {
        return Err(ConstellationError::OrderOutOfRange(total_order));
    }
    Ok((6.0 / ((1u64 << total_order) as f64 - 1.0)).sqrt())
}

/// Factor that scales `c` to unit average energy (zero for the silent set).
pub fn unit_energy_factor(c: &LabeledConstellation) -> f64 {
    if c.energy > 0.0 {
        c.energy.sqrt().recip()
    } else {
        0.0
    }
}

/// Regular Gray-labeled rectangular QAM of order `m` with unit minimum distance.
///
/// The first `ceil(m/2)` label bits select the in-phase column and the
/// remaining bits the quadrature row, each through a binary reflected Gray
/// code.
pub fn build_gray_qam(m: u32) -> Result<LabeledConstellation, ConstellationError> {
    if m == 0 || m > MAX_ORDER {
        return Err(ConstellationError::OrderOutOfRange(m));
    }
    let shape = GridShape::for_order(m);
    let columns = 1u32 << shape.column_bits;
    let rows = 1u32 << shape.row_bits;
    let col_offset = (columns as f64 - 1.0) / 2.0;
    let row_offset = (rows as f64 - 1.0) / 2.0;
    let points = (0..1u32 << m)
        .map(|label| {
            let col = inverse_gray(label >> shape.row_bits);
            let row = inverse_gray(label & (rows - 1));
            Complex64::new(col as f64 - col_offset, row as f64 - row_offset)
        })
        .collect();
    Ok(LabeledConstellation {
        points,
        order: m,
        d_min: 1.0,
        mean: Complex64::new(0.0, 0.0),
        energy: qam_energy(m),
        grid: Some(shape),
    })
}

impl LabeledConstellation {
    /// The one-point set `{0}` carried by a user that sends nothing in a
    /// sub-block (order 0).
    pub fn silent() -> Self {
        LabeledConstellation {
            points: vec![Complex64::new(0.0, 0.0)],
            order: 0,
            d_min: f64::INFINITY,
            mean: Complex64::new(0.0, 0.0),
            energy: 0.0,
            grid: Some(GridShape {
                column_bits: 0,
                row_bits: 0,
            }),
        }
    }

    /// Regular QAM of order `m`, or the silent set when `m == 0`.
    pub fn regular(m: u32) -> Result<Self, ConstellationError> {
        if m == 0 {
            Ok(Self::silent())
        } else {
            build_gray_qam(m)
        }
    }

    /// Builds a constellation from arbitrary distinct points in label order.
    ///
    /// The length must be a power of two. Statistics are computed from the
    /// points, with the minimum distance by exhaustive pair scan.
    pub fn from_points(points: Vec<Complex64>) -> Result<Self, ConstellationError> {
        let len = points.len();
        if !len.is_power_of_two() || len > 1 << MAX_ORDER {
            return Err(ConstellationError::OrderOutOfRange(len as u32));
        }
        let order = len.trailing_zeros();
        let mean = points.iter().sum::<Complex64>() / len as f64;
        let energy = points.iter().map(|p| p.norm_sqr()).sum::<f64>() / len as f64;
        let d_min = brute_force_min_distance(&points);
        Ok(LabeledConstellation {
            points,
            order,
            d_min,
            mean,
            energy,
            grid: None,
        })
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// Bit labels, one per point, as integers read MSB first.
    pub fn labels(&self) -> impl Iterator<Item = u32> + '_ {
        0..self.points.len() as u32
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn mean(&self) -> Complex64 {
        self.mean
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// Grid shape if this is a regular unit-spacing QAM.
    pub fn grid(&self) -> Option<GridShape> {
        self.grid
    }

    pub fn is_regular(&self) -> bool {
        self.grid.is_some()
    }

    pub fn point(&self, label: u32) -> Complex64 {
        self.points[label as usize]
    }

    /// Largest squared magnitude over the points.
    pub fn peak_power(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).fold(0.0, f64::max)
    }

    /// Index of the point closest to `y`.
    pub fn nearest(&self, y: Complex64) -> u32 {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (y - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best as u32
    }
}

/// Multiplies every point by `g`. Labels are preserved.
pub fn scale(c: &LabeledConstellation, g: Complex64) -> Result<LabeledConstellation, ConstellationError> {
    if g.norm() == 0.0 {
        return Err(ConstellationError::ZeroScale);
    }
    let unit = g == Complex64::new(1.0, 0.0);
    Ok(LabeledConstellation {
        points: c.points.iter().map(|p| p * g).collect(),
        order: c.order,
        d_min: c.d_min * g.norm(),
        mean: c.mean * g,
        energy: c.energy * g.norm_sqr(),
        grid: if unit { c.grid } else { None },
    })
}

/// Superimposes regular constellations ordered strongest owner first.
///
/// Part `i` is scaled by `sqrt(2^(m_1 + ... + m_{i-1}))` so that the coarse
/// grid of each weaker part nests around the finer grid of the stronger ones.
/// The result is a regular QAM of order `sum m_i` with unit minimum distance.
/// Labels are concatenated strongest part first, most significant bits first.
///
/// Nesting with a complex scalar needs every non-empty prefix to be a square
/// grid, so all parts except the last non-silent one must have even order.
pub fn superimpose(parts: &[LabeledConstellation]) -> Result<LabeledConstellation, ConstellationError> {
    let mut total = 0u32;
    let mut columns = 0u32;
    let mut rows = 0u32;
    for (i, part) in parts.iter().enumerate() {
        let shape = part.grid.ok_or(ConstellationError::NotRegular(i))?;
        if part.order > 0 && !(GridShape { column_bits: columns, row_bits: rows }).is_square() {
            return Err(ConstellationError::OddPrefix { part: i, prefix: total });
        }
        total += part.order;
        if total > MAX_ORDER {
            return Err(ConstellationError::CumulativeOrder(total));
        }
        columns += shape.column_bits;
        rows += shape.row_bits;
    }
    if total == 0 {
        return Ok(LabeledConstellation::silent());
    }

    let mut points = vec![Complex64::new(0.0, 0.0)];
    let mut energy = 0.0;
    let mut prefix = 0u32;
    for part in parts {
        if part.order == 0 {
            continue;
        }
        let s = ((1u64 << prefix) as f64).sqrt();
        energy += s * s * part.energy;
        let mut next = Vec::with_capacity(points.len() << part.order);
        for p in &points {
            for q in &part.points {
                next.push(p + q * s);
            }
        }
        points = next;
        prefix += part.order;
    }
    Ok(LabeledConstellation {
        points,
        order: total,
        d_min: 1.0,
        mean: Complex64::new(0.0, 0.0),
        energy,
        grid: Some(GridShape {
            column_bits: columns,
            row_bits: rows,
        }),
    })
}

/// Minimum pairwise distance by exhaustive scan (`inf` for a single point).
pub fn brute_force_min_distance(points: &[Complex64]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            best = best.min((p - q).norm());
        }
    }
    best
}

/// Right-hand side of the Bernstein bound on the power of `n` i.i.d. uniform
/// draws from `c`: probability that the empirical average power exceeds the
/// mean power by at least `eps`.
pub fn bernstein_power_bound(c: &LabeledConstellation, n: usize, eps: f64) -> f64 {
    let powers: Vec<f64> = c.points.iter().map(|p| p.norm_sqr()).collect();
    let mean = powers.iter().sum::<f64>() / powers.len() as f64;
    let variance = powers.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / powers.len() as f64;
    let peak = c.peak_power();
    (-(n as f64) * eps * eps / (2.0 * (variance + peak * eps / 3.0))).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn qpsk_points() {
        let q = build_gray_qam(2).unwrap();
        assert_eq!(q.len(), 4);
        for p in q.points() {
            assert_abs_diff_eq!(p.re.abs(), 0.5);
            assert_abs_diff_eq!(p.im.abs(), 0.5);
        }
        assert_abs_diff_eq!(q.energy(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(brute_force_min_distance(q.points()), 1.0);
    }

    #[test]
    fn bpsk_on_real_axis() {
        let b = build_gray_qam(1).unwrap();
        assert_eq!(b.points(), &[c(-0.5, 0.0), c(0.5, 0.0)]);
        assert_abs_diff_eq!(b.energy(), 0.25);
    }

    #[test]
    fn sixteen_qam_energy() {
        let q = build_gray_qam(4).unwrap();
        assert_eq!(q.len(), 16);
        assert_abs_diff_eq!(q.energy(), 2.5, epsilon = 1e-15);
    }

    #[test]
    fn order_bounds() {
        assert_eq!(build_gray_qam(0), Err(ConstellationError::OrderOutOfRange(0)));
        assert_eq!(build_gray_qam(17), Err(ConstellationError::OrderOutOfRange(17)));
        assert!(build_gray_qam(16).is_ok());
    }

    #[test]
    fn point_statistics_match_stored_values() {
        for m in 1..=10 {
            let q = build_gray_qam(m).unwrap();
            let mean = q.points().iter().sum::<Complex64>() / q.len() as f64;
            let energy = q.points().iter().map(|p| p.norm_sqr()).sum::<f64>() / q.len() as f64;
            assert!(mean.norm() < 1e-12, "m={m}");
            assert_abs_diff_eq!(energy, q.energy(), epsilon = 1e-12);
            if m % 2 == 0 {
                assert_abs_diff_eq!(energy, ((1u64 << m) as f64 - 1.0) / 6.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gray_adjacency() {
        for m in 1..=8 {
            let q = build_gray_qam(m).unwrap();
            let pts = q.points();
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    let d = (pts[i] - pts[j]).norm();
                    assert!(d > 1.0 - DEDUP_TOLERANCE, "duplicate points for m={m}");
                    if (d - 1.0).abs() < DEDUP_TOLERANCE {
                        assert_eq!((i ^ j).count_ones(), 1, "m={m} labels {i} {j}");
                    }
                }
            }
        }
    }

    #[test]
    fn scale_cases() {
        let q = build_gray_qam(2).unwrap();
        let s = scale(&q, c(2f64.sqrt(), 0.0)).unwrap();
        assert_abs_diff_eq!(s.energy(), 1.0, epsilon = 1e-15);
        assert_eq!(scale(&q, c(1.0, 0.0)).unwrap(), q);
        let r = scale(&q, c(0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(r.energy(), 0.5);
        assert_abs_diff_eq!(r.d_min(), 1.0);
        assert_abs_diff_eq!(brute_force_min_distance(r.points()), 1.0, epsilon = 1e-15);
        assert_eq!(scale(&q, c(0.0, 0.0)), Err(ConstellationError::ZeroScale));
    }

    #[test]
    fn superimpose_two_qpsk() {
        let q = build_gray_qam(2).unwrap();
        let s = superimpose(&[q.clone(), q]).unwrap();
        assert_eq!(s.len(), 16);
        assert_eq!(s.order(), 4);
        assert_abs_diff_eq!(brute_force_min_distance(s.points()), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.energy(), 2.5, epsilon = 1e-12);
        // Same point set as a regular 16-QAM.
        let reference = build_gray_qam(4).unwrap();
        for p in reference.points() {
            assert!(s.points().iter().any(|q| (q - p).norm() < DEDUP_TOLERANCE));
        }
    }

    #[test]
    fn superimpose_single_part_is_identity() {
        let q = build_gray_qam(2).unwrap();
        assert_eq!(superimpose(std::slice::from_ref(&q)).unwrap(), q);
    }

    #[test]
    fn superimpose_qpsk_and_16qam() {
        let s = superimpose(&[build_gray_qam(2).unwrap(), build_gray_qam(4).unwrap()]).unwrap();
        assert_eq!(s.len(), 64);
        let pts = s.points();
        let mut min = f64::INFINITY;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                let d = (pts[i] - pts[j]).norm();
                assert!(d > DEDUP_TOLERANCE);
                min = min.min(d);
            }
        }
        assert_abs_diff_eq!(min, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.energy(), 63.0 / 6.0, epsilon = 1e-12);
        let mean = pts.iter().sum::<Complex64>() / 64.0;
        assert!(mean.norm() < 1e-12);
    }

    #[test]
    fn superimposed_labels_concatenate_strongest_first() {
        let fine = build_gray_qam(2).unwrap();
        let coarse = build_gray_qam(4).unwrap();
        let s = superimpose(&[fine.clone(), coarse.clone()]).unwrap();
        for l1 in 0..4u32 {
            for l2 in 0..16u32 {
                let expect = fine.point(l1) + coarse.point(l2) * 2.0;
                assert!((s.point((l1 << 4) | l2) - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn superimpose_rejects_bad_parts() {
        let q = build_gray_qam(2).unwrap();
        let scaled = scale(&q, c(2.0, 0.0)).unwrap();
        assert_eq!(superimpose(&[q.clone(), scaled]), Err(ConstellationError::NotRegular(1)));
        let odd = build_gray_qam(3).unwrap();
        assert_eq!(
            superimpose(&[odd.clone(), q.clone()]),
            Err(ConstellationError::OddPrefix { part: 1, prefix: 3 })
        );
        // An odd part is fine in the last position.
        let s = superimpose(&[q.clone(), odd]).unwrap();
        assert_abs_diff_eq!(brute_force_min_distance(s.points()), 1.0, epsilon = 1e-12);
        let big = build_gray_qam(10).unwrap();
        assert_eq!(
            superimpose(&[big.clone(), build_gray_qam(8).unwrap()]),
            Err(ConstellationError::CumulativeOrder(18))
        );
    }

    #[test]
    fn silent_parts_are_skipped() {
        let q = build_gray_qam(4).unwrap();
        let s = superimpose(&[LabeledConstellation::silent(), q.clone()]).unwrap();
        assert_eq!(s.points(), q.points());
        let none = superimpose(&[LabeledConstellation::silent()]).unwrap();
        assert_eq!(none.order(), 0);
    }

    #[test]
    fn normalization_factor_values() {
        assert_abs_diff_eq!(normalization_factor(2).unwrap(), 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(normalization_factor(6).unwrap(), (6.0f64 / 63.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(normalization_factor(1).unwrap(), 6f64.sqrt(), epsilon = 1e-15);
        assert!(normalization_factor(0).is_err());
        for m in (2..=16).step_by(2) {
            let eta = normalization_factor(m).unwrap();
            let q = scale(&build_gray_qam(m).unwrap(), c(eta, 0.0)).unwrap();
            assert_abs_diff_eq!(q.energy(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn unit_energy_for_odd_orders() {
        for m in 1..=9 {
            let q = build_gray_qam(m).unwrap();
            let s = scale(&q, c(unit_energy_factor(&q), 0.0)).unwrap();
            assert_abs_diff_eq!(s.energy(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn bernstein_bound_decreases_with_n() {
        let q = build_gray_qam(4).unwrap();
        let q = scale(&q, c(unit_energy_factor(&q), 0.0)).unwrap();
        let b64 = bernstein_power_bound(&q, 64, 0.5);
        let b256 = bernstein_power_bound(&q, 256, 0.5);
        assert!(b256 < b64 && b64 < 1.0);
    }
}
