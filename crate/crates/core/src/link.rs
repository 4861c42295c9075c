//! Link-level simulation: channel sampling, TIN demapping, uncoded detection
//! and empirical checks of the rate engine.

use std::io::{self, Read, Write};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constellation::LabeledConstellation;
use crate::rate::{noise_chunk, sub_block_stats, EstimatorSettings, RateError, MAX_TUPLES};
use crate::scheme::{build_frame, map_bits, Frame, SchemeError, SchemePlan};

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("expected payloads for {expected} users, got {got}")]
    PayloadCount { expected: usize, got: usize },
    #[error("segment of {got} samples does not match sub-block length {expected}")]
    SegmentLength { expected: usize, got: usize },
    #[error("bad frame dump: {0}")]
    BadDump(String),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Received samples of every user for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceivedFrame {
    /// `y[k]` has length `N_k`.
    pub y: Vec<Vec<Complex64>>,
    pub seed: u64,
    pub channels: Vec<Complex64>,
    pub frame: Frame,
}

/// Noise level used by [`simulate_frame_with`]. `Silent` removes the noise
/// entirely and exists for tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    Standard,
    Silent,
}

/// Maps each user's payload, synthesizes the frame and passes it through
/// every user's channel: `y_k[n] = h_k x[n] + z_k[n]`.
pub fn simulate_frame(plan: &SchemePlan, payloads: &[Vec<u8>], seed: u64) -> Result<ReceivedFrame, LinkError> {
    simulate_frame_with(plan, payloads, seed, NoiseMode::Standard)
}

pub fn simulate_frame_with(
    plan: &SchemePlan,
    payloads: &[Vec<u8>],
    seed: u64,
    noise: NoiseMode,
) -> Result<ReceivedFrame, LinkError> {
    let k = plan.user_count();
    if payloads.len() != k {
        return Err(LinkError::PayloadCount {
            expected: k,
            got: payloads.len(),
        });
    }
    let symbols = payloads
        .iter()
        .enumerate()
        .map(|(u, bits)| map_bits(bits, u, plan))
        .collect::<Result<Vec<_>, _>>()?;
    let frame = build_frame(&symbols, plan)?;
    let channels: Vec<Complex64> = (0..k).map(|u| plan.channel(u)).collect();
    let y = (0..k)
        .map(|u| {
            let n = plan.layout.blocklength(u);
            let h = channels[u];
            let clean = frame.x[..n].iter().map(|x| h * x);
            match noise {
                NoiseMode::Standard => clean.zip(noise_chunk(seed, u as u64, n)).map(|(a, z)| a + z).collect(),
                NoiseMode::Silent => clean.collect(),
            }
        })
        .collect();
    Ok(ReceivedFrame {
        y,
        seed,
        channels,
        frame,
    })
}

/// Uniform random payload bits for every user, drawn from stream `stream`.
pub fn random_payloads(plan: &SchemePlan, seed: u64, stream: u64) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    plan.codeword_lengths
        .iter()
        .map(|&n| (0..n).map(|_| rng.random::<bool>() as u8).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LlrMode {
    #[default]
    Exact,
    MaxLog,
}

/// Per-bit demapper of one user on one sub-block.
///
/// Interference enters only through its distribution: the likelihood of each
/// desired point averages over every interferer tuple.
#[derive(Debug, Clone)]
pub struct Demapper {
    order: u32,
    /// `h x` for every desired label.
    desired: Vec<Complex64>,
    /// `h s` for every interferer tuple (one entry per tuple).
    interference: Vec<Complex64>,
}

impl Demapper {
    pub fn new(plan: &SchemePlan, user: usize, sub_block: usize) -> Result<Self, LinkError> {
        let h = plan.channel(user);
        let desired = plan.user_constellation(user, sub_block);
        let interferers = plan.interferers(user, sub_block);
        Self::from_parts(&desired, &interferers, h)
    }

    pub fn from_parts(
        desired: &LabeledConstellation,
        interferers: &[LabeledConstellation],
        h: Complex64,
    ) -> Result<Self, LinkError> {
        let mut sums = vec![Complex64::new(0.0, 0.0)];
        for c in interferers {
            sums = sums.iter().flat_map(|a| c.points().iter().map(move |b| a + b)).collect();
        }
        let tuples = desired.len() * sums.len();
        if tuples > MAX_TUPLES {
            return Err(RateError::CardinalityCap { tuples, cap: MAX_TUPLES }.into());
        }
        Ok(Demapper {
            order: desired.order(),
            desired: desired.points().iter().map(|x| h * x).collect(),
            interference: sums.iter().map(|s| h * s).collect(),
        })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    /// `ln p(y | label)` up to a constant shared by all labels.
    pub fn label_log_likelihoods(&self, y: Complex64, mode: LlrMode, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.desired.iter().map(|x| {
            let metrics = self.interference.iter().map(|s| -(y - x - s).norm_sqr());
            match mode {
                LlrMode::Exact => lse(metrics),
                LlrMode::MaxLog => metrics.fold(f64::NEG_INFINITY, f64::max),
            }
        }));
    }

    /// Bit LLRs `ln P(b = 0 | y) / P(b = 1 | y)`, most significant bit first.
    pub fn llrs(&self, y: &[Complex64], mode: LlrMode) -> Vec<f64> {
        let m = self.order as usize;
        let mut out = Vec::with_capacity(y.len() * m);
        let mut ll = Vec::with_capacity(self.desired.len());
        for &sample in y {
            self.label_log_likelihoods(sample, mode, &mut ll);
            for bit in (0..m).rev() {
                let zero = ll.iter().enumerate().filter(|(l, _)| (l >> bit) & 1 == 0).map(|(_, v)| *v);
                let one = ll.iter().enumerate().filter(|(l, _)| (l >> bit) & 1 == 1).map(|(_, v)| *v);
                let llr = match mode {
                    LlrMode::Exact => lse(zero) - lse(one),
                    LlrMode::MaxLog => {
                        zero.fold(f64::NEG_INFINITY, f64::max) - one.fold(f64::NEG_INFINITY, f64::max)
                    }
                };
                out.push(llr);
            }
        }
        out
    }
}

fn lse(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// TIN bit LLRs of user `k` for the samples of sub-block `j`.
pub fn tin_llr(
    segment: &[Complex64],
    user: usize,
    sub_block: usize,
    plan: &SchemePlan,
    mode: LlrMode,
) -> Result<Vec<f64>, LinkError> {
    let expected = plan.layout.sub_blocks[sub_block].len();
    if segment.len() != expected {
        return Err(LinkError::SegmentLength {
            expected,
            got: segment.len(),
        });
    }
    if plan.orders.get(user, sub_block) == 0 {
        return Ok(Vec::new());
    }
    Ok(Demapper::new(plan, user, sub_block)?.llrs(segment, mode))
}

/// LLRs of user `k` for its whole codeword, in mapping order.
pub fn user_llrs(received: &ReceivedFrame, user: usize, plan: &SchemePlan, mode: LlrMode) -> Result<Vec<f64>, LinkError> {
    let mut out = Vec::with_capacity(plan.codeword_lengths[user]);
    for sb in &plan.layout.sub_blocks[..=user] {
        out.extend(tin_llr(&received.y[user][sb.start..sb.end], user, sb.index, plan, mode)?);
    }
    Ok(out)
}

/// Bit decisions: non-negative LLR decides 0.
pub fn hard_decisions(llrs: &[f64]) -> Vec<u8> {
    llrs.iter().map(|&l| u8::from(l < 0.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub bits: usize,
    pub errors: usize,
}

impl BerPoint {
    pub fn rate(&self) -> f64 {
        if self.bits == 0 {
            0.0
        } else {
            self.errors as f64 / self.bits as f64
        }
    }
}

/// Uncoded bit error count of user `k` from hard TIN decisions over
/// `frames` frames. Frame `f` draws payload and noise from streams derived
/// from `seed` and `f`.
pub fn uncoded_ber(plan: &SchemePlan, user: usize, frames: usize, seed: u64, mode: LlrMode) -> Result<BerPoint, LinkError> {
    let demappers = (0..=user)
        .map(|j| {
            if plan.layout.sub_blocks[j].is_empty() || plan.orders.get(user, j) == 0 {
                Ok(None)
            } else {
                Demapper::new(plan, user, j).map(Some)
            }
        })
        .collect::<Result<Vec<_>, LinkError>>()?;
    let counts = (0..frames)
        .into_par_iter()
        .map(|f| {
            let payloads = random_payloads(plan, seed, 2 * f as u64);
            let rx = simulate_frame(plan, &payloads, frame_seed(seed, f))?;
            let mut llrs = Vec::with_capacity(plan.codeword_lengths[user]);
            for (sb, d) in plan.layout.sub_blocks[..=user].iter().zip(&demappers) {
                if let Some(d) = d {
                    llrs.extend(d.llrs(&rx.y[user][sb.start..sb.end], mode));
                }
            }
            let errors = hard_decisions(&llrs)
                .iter()
                .zip(&payloads[user])
                .filter(|(a, b)| a != b)
                .count();
            Ok(BerPoint {
                bits: llrs.len(),
                errors,
            })
        })
        .collect::<Result<Vec<_>, LinkError>>()?;
    Ok(counts.iter().fold(BerPoint { bits: 0, errors: 0 }, |a, b| BerPoint {
        bits: a.bits + b.bits,
        errors: a.errors + b.errors,
    }))
}

fn frame_seed(seed: u64, frame: usize) -> u64 {
    seed ^ (frame as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Comparison of sampled information densities with the rate engine on one
/// sub-block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdCheckEntry {
    pub sub_block: usize,
    pub samples: usize,
    pub empirical_mean: f64,
    pub empirical_variance: f64,
    pub engine_mi: f64,
    pub engine_dispersion: f64,
    /// Deviations in combined standard errors.
    pub z_mean: f64,
    pub z_variance: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdCheckReport {
    pub user: usize,
    pub entries: Vec<IdCheckEntry>,
}

impl IdCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| !e.flagged)
    }
}

/// Deviation, in standard errors, above which an entry is flagged.
pub const ID_CHECK_SIGMAS: f64 = 4.0;

/// Smallest standard error used in the check. A density that is constant up
/// to rounding, as at very high SNR, would otherwise divide noise by noise.
pub const ID_CHECK_RESOLUTION: f64 = 1e-9;

/// Samples information densities of user `k` from simulated frames and
/// compares them with the rate engine's estimates.
///
/// The density `log2 p(y|x) / p(y)` is evaluated here directly from the
/// Gaussian law with its normalization, independently of the estimator.
pub fn empirical_id_check(
    plan: &SchemePlan,
    user: usize,
    frames: usize,
    seed: u64,
    settings: EstimatorSettings,
) -> Result<IdCheckReport, LinkError> {
    let h = plan.channel(user);
    let mut entries = Vec::new();
    for sb in &plan.layout.sub_blocks[..=user] {
        if sb.is_empty() || plan.orders.get(user, sb.index) == 0 {
            continue;
        }
        let own = plan.user_constellation(user, sb.index);
        let mut interference = vec![Complex64::new(0.0, 0.0)];
        for c in plan.interferers(user, sb.index) {
            interference = interference.iter().flat_map(|a| c.points().iter().map(move |b| a + b)).collect();
        }
        let samples: Vec<f64> = (0..frames)
            .into_par_iter()
            .map(|f| -> Result<Vec<f64>, LinkError> {
                let payloads = random_payloads(plan, seed, 2 * f as u64 + 1);
                let rx = simulate_frame(plan, &payloads, frame_seed(seed ^ 0x5555, f))?;
                Ok((sb.start..sb.end)
                    .map(|n| {
                        let y = rx.y[user][n];
                        let x = rx.frame.per_user[user][n];
                        density(y, x, own.points(), &interference, h)
                    })
                    .collect())
            })
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .flatten()
            .collect();
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let m4 = samples.iter().map(|s| (s - mean).powi(4)).sum::<f64>() / n;
        let se_mean = (var / n).sqrt();
        let se_var = ((m4 - var * var).max(0.0) / n).sqrt();
        let engine = sub_block_stats(plan, user, sb.index, settings)?;
        let z_mean = (mean - engine.mutual_information) / se_mean.hypot(engine.std_err_mi).max(ID_CHECK_RESOLUTION);
        let z_variance = (var - engine.dispersion) / se_var.hypot(engine.std_err_dispersion).max(ID_CHECK_RESOLUTION);
        entries.push(IdCheckEntry {
            sub_block: sb.index,
            samples: samples.len(),
            empirical_mean: mean,
            empirical_variance: var,
            engine_mi: engine.mutual_information,
            engine_dispersion: engine.dispersion,
            z_mean,
            z_variance,
            flagged: z_mean.abs() > ID_CHECK_SIGMAS || z_variance.abs() > ID_CHECK_SIGMAS,
        });
    }
    Ok(IdCheckReport { user, entries })
}

/// `log2 p(y | x) - log2 p(y)` with `p` the mixture over interference `s`
/// and, for the marginal, over the desired points too.
fn density(y: Complex64, x: Complex64, desired: &[Complex64], interference: &[Complex64], h: Complex64) -> f64 {
    let log_phi = |d: Complex64| -d.norm_sqr() - std::f64::consts::PI.ln();
    let ns = interference.len() as f64;
    let cond = lse(interference.iter().map(|s| log_phi(y - h * (x + s)))) - ns.ln();
    let marg = lse(desired.iter().flat_map(|c| interference.iter().map(move |s| log_phi(y - h * (c + s)))))
        - (ns * desired.len() as f64).ln();
    (cond - marg) / std::f64::consts::LN_2
}

/// Fraction of `trials` blocks of `n` uniform draws from `c` whose average
/// energy is at least the constellation energy plus `eps`.
pub fn power_exceedance_frequency(c: &LabeledConstellation, n: usize, eps: f64, trials: usize, seed: u64) -> f64 {
    const BATCH: usize = 4096;
    let energies: Vec<f64> = c.points().iter().map(|p| p.norm_sqr()).collect();
    let limit = (c.energy() + eps) * n as f64;
    let batches = trials.div_ceil(BATCH);
    let hits: usize = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = BATCH.min(trials - b * BATCH);
            (0..count)
                .filter(|_| {
                    let total: f64 = (0..n).map(|_| energies[rng.random_range(0..energies.len())]).sum();
                    total >= limit
                })
                .count()
        })
        .sum();
    hits as f64 / trials as f64
}

/// Seeded uniform random permutation for bit interleaving.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interleaver {
    permutation: Vec<usize>,
}

impl Interleaver {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut permutation: Vec<usize> = (0..len).collect();
        permutation.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Interleaver { permutation }
    }

    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    /// `out[i] = input[pi(i)]`.
    pub fn interleave<T: Copy>(&self, input: &[T]) -> Vec<T> {
        assert_eq!(input.len(), self.len(), "interleaver length");
        self.permutation.iter().map(|&p| input[p]).collect()
    }

    pub fn deinterleave<T: Copy + Default>(&self, input: &[T]) -> Vec<T> {
        assert_eq!(input.len(), self.len(), "interleaver length");
        let mut out = vec![T::default(); input.len()];
        for (i, &p) in self.permutation.iter().enumerate() {
            out[p] = input[i];
        }
        out
    }
}

/// Record of one user's frame for external decoders.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDump {
    pub user: u32,
    pub bits: Vec<u8>,
    pub symbols: Vec<Complex64>,
    pub y: Vec<Complex64>,
    pub llrs: Vec<f64>,
}

pub const DUMP_MAGIC: &[u8; 8] = b"TINBCFRM";
pub const DUMP_VERSION: u32 = 1;

impl FrameDump {
    /// Little-endian layout: magic, `u32` version, `u32` user, four `u64`
    /// counts (bits, symbols, y, llrs), bits as one byte each, then symbols
    /// and y as interleaved `f64` real/imaginary pairs, then `f64` LLRs.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        w.write_all(&self.user.to_le_bytes())?;
        for n in [self.bits.len(), self.symbols.len(), self.y.len(), self.llrs.len()] {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        w.write_all(&self.bits)?;
        for c in self.symbols.iter().chain(&self.y) {
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
        for l in &self.llrs {
            w.write_all(&l.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, LinkError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(LinkError::BadDump("magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != DUMP_VERSION {
            return Err(LinkError::BadDump(format!("version {version}")));
        }
        let user = read_u32(&mut r)?;
        let mut counts = [0usize; 4];
        for c in &mut counts {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *c = usize::try_from(u64::from_le_bytes(b)).map_err(|_| LinkError::BadDump("count".into()))?;
        }
        let mut bits = vec![0u8; counts[0]];
        r.read_exact(&mut bits)?;
        let symbols = (0..counts[1]).map(|_| read_complex(&mut r)).collect::<io::Result<_>>()?;
        let y = (0..counts[2]).map(|_| read_complex(&mut r)).collect::<io::Result<_>>()?;
        let llrs = (0..counts[3]).map(|_| read_f64(&mut r)).collect::<io::Result<_>>()?;
        Ok(FrameDump {
            user,
            bits,
            symbols,
            y,
            llrs,
        })
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_complex<R: Read>(r: &mut R) -> io::Result<Complex64> {
    Ok(Complex64::new(read_f64(r)?, read_f64(r)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::{build_gray_qam, scale};
    use crate::rate::quadrature_mi;
    use crate::scheme::{plan, OrderMatrix, SystemSpec, UserSpec};

    fn single(snr_db: f64, m: u32, n: usize) -> SchemePlan {
        let spec = SystemSpec::from_snr_db(1.0, &[(n, 1e-3, snr_db)]);
        plan(&spec, &OrderMatrix::from_flat(1, &[m]).unwrap()).unwrap()
    }

    fn design_point() -> SchemePlan {
        let spec = SystemSpec::from_snr_db(1.0, &[(128, 1e-6, 18.0), (256, 1e-4, 5.0)]);
        plan(&spec, &OrderMatrix::from_flat(2, &[2, 4, 4]).unwrap()).unwrap()
    }

    #[test]
    fn silent_noise_is_clean_channel() {
        let p = design_point();
        let payloads = random_payloads(&p, 3, 0);
        let rx = simulate_frame_with(&p, &payloads, 9, NoiseMode::Silent).unwrap();
        for u in 0..2 {
            assert_eq!(rx.y[u].len(), p.layout.blocklength(u));
            for (y, x) in rx.y[u].iter().zip(&rx.frame.x) {
                assert!((y - p.channel(u) * x).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let p = design_point();
        let payloads = random_payloads(&p, 3, 0);
        let a = simulate_frame(&p, &payloads, 9).unwrap();
        let b = simulate_frame(&p, &payloads, 9).unwrap();
        let c = simulate_frame(&p, &payloads, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn rejects_payload_mismatch() {
        let p = design_point();
        assert!(matches!(simulate_frame(&p, &[vec![0; 256]], 1), Err(LinkError::PayloadCount { .. })));
        assert!(simulate_frame(&p, &[vec![0; 255], vec![0; 1024]], 1).is_err());
    }

    #[test]
    fn zero_noise_llr_round_trip() {
        let p = design_point();
        let payloads = random_payloads(&p, 5, 0);
        let rx = simulate_frame_with(&p, &payloads, 1, NoiseMode::Silent).unwrap();
        for (u, bits) in payloads.iter().enumerate() {
            for mode in [LlrMode::Exact, LlrMode::MaxLog] {
                let llrs = user_llrs(&rx, u, &p, mode).unwrap();
                assert_eq!(&hard_decisions(&llrs), bits);
            }
        }
    }

    #[test]
    fn binary_llr_closed_form() {
        // Two points +-a/2 on the real axis: LLR = -|y - h a/2|^2 + |y + h a/2|^2
        // for bit 0 at the point labelled 0, which sits at -a/2.
        let b = scale(&build_gray_qam(1).unwrap(), Complex64::new(1.7, 0.0)).unwrap();
        let h = Complex64::from_polar(0.8, 0.3);
        let d = Demapper::from_parts(&b, &[], h).unwrap();
        for y in [Complex64::new(0.3, -0.2), Complex64::new(-1.1, 0.5), Complex64::new(2.0, 2.0)] {
            let x0 = h * b.point(0);
            let x1 = h * b.point(1);
            let expect = -(y - x0).norm_sqr() + (y - x1).norm_sqr();
            let got = d.llrs(&[y], LlrMode::Exact)[0];
            assert!((got - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn bit_llrs_match_symbol_posteriors() {
        let p = design_point();
        let d = Demapper::new(&p, 1, 0).unwrap();
        let y = Complex64::new(0.37, -0.91);
        let mut ll = Vec::new();
        d.label_log_likelihoods(y, LlrMode::Exact, &mut ll);
        let total: f64 = ll.iter().map(|v| v.exp()).sum();
        let post: Vec<f64> = ll.iter().map(|v| v.exp() / total).collect();
        let llrs = d.llrs(&[y], LlrMode::Exact);
        let m = d.order() as usize;
        for (i, llr) in llrs.iter().enumerate() {
            let bit = m - 1 - i;
            let p0: f64 = post.iter().enumerate().filter(|(l, _)| (l >> bit) & 1 == 0).map(|(_, v)| v).sum();
            let p1 = 1.0 - p0;
            assert!((llr.exp() - p0 / p1).abs() <= 1e-9 * (p0 / p1).max(1.0));
        }
    }

    #[test]
    fn high_snr_single_user_is_error_free() {
        let p = single(40.0, 2, 1000);
        let ber = uncoded_ber(&p, 0, 10, 4, LlrMode::Exact).unwrap();
        assert_eq!(ber.bits, 20_000);
        assert_eq!(ber.errors, 0);
    }

    #[test]
    fn detection_ignores_common_rotation() {
        let spec = SystemSpec::from_snr_db(1.0, &[(128, 1e-6, 18.0), (256, 1e-4, 5.0)]);
        let orders = OrderMatrix::from_flat(2, &[2, 4, 4]).unwrap();
        let a = plan(&spec, &orders).unwrap();
        let b = plan(&spec.rotated(Complex64::from_polar(1.0, 1.1)), &orders).unwrap();
        let ba = uncoded_ber(&a, 1, 20, 8, LlrMode::Exact).unwrap();
        let bb = uncoded_ber(&b, 1, 20, 8, LlrMode::Exact).unwrap();
        // Circular noise: the rotated system sees a rotated copy of the same
        // noise distribution, so error counts agree statistically.
        let diff = (ba.rate() - bb.rate()).abs();
        assert!(diff < 0.02, "{} vs {}", ba.rate(), bb.rate());
    }

    #[test]
    fn zero_channel_densities_vanish() {
        let q = build_gray_qam(2).unwrap();
        let pts = q.points().to_vec();
        let v = density(Complex64::new(0.4, 0.1), pts[1], &pts, &[Complex64::new(0.0, 0.0)], Complex64::new(0.0, 0.0));
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn id_check_single_user_matches_quadrature() {
        let p = single(6.0, 2, 500);
        let report = empirical_id_check(&p, 0, 100, 12, EstimatorSettings::quick(3)).unwrap();
        assert!(report.passed(), "{report:?}");
        let e = &report.entries[0];
        let oracle = quadrature_mi(&p.user_constellation(0, 0), p.channel(0)).unwrap();
        let se = (e.empirical_variance / e.samples as f64).sqrt();
        assert!((e.empirical_mean - oracle).abs() < 4.0 * se);
    }

    #[test]
    fn id_check_passes_when_the_density_saturates() {
        // QPSK at 40 dB: every sample carries exactly 2 bits.
        let p = single(40.0, 2, 200);
        let report = empirical_id_check(&p, 0, 8, 2, EstimatorSettings::quick(2)).unwrap();
        let e = &report.entries[0];
        assert!((e.empirical_mean - 2.0).abs() < 1e-9);
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn exceedance_is_rare_for_long_blocks() {
        let q = build_gray_qam(4).unwrap();
        let f64_ = power_exceedance_frequency(&q, 64, 0.5, 20_000, 1);
        let f256 = power_exceedance_frequency(&q, 256, 0.5, 20_000, 1);
        assert!(f256 <= f64_);
        assert_eq!(power_exceedance_frequency(&q, 64, 0.5, 20_000, 1), f64_);
    }

    #[test]
    fn interleaver_round_trip() {
        let il = Interleaver::new(100, 42);
        let data: Vec<u32> = (0..100).collect();
        let mixed = il.interleave(&data);
        assert_ne!(mixed, data);
        assert_eq!(il.deinterleave(&mixed), data);
        assert_eq!(Interleaver::new(100, 42), il);
    }

    #[test]
    fn dump_round_trip() {
        let d = FrameDump {
            user: 1,
            bits: vec![0, 1, 1],
            symbols: vec![Complex64::new(0.5, -0.5)],
            y: vec![Complex64::new(0.1, 0.2), Complex64::new(-3.0, 4.0)],
            llrs: vec![1.5, -2.0, f64::INFINITY],
        };
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 4 + 32 + 3 + 16 * 3 + 8 * 3);
        assert_eq!(FrameDump::read_from(&buf[..]).unwrap(), d);
        buf[0] = b'X';
        assert!(FrameDump::read_from(&buf[..]).is_err());
    }

    #[test]
    fn silent_sub_block_demaps_nothing() {
        let spec = SystemSpec::new(
            1.0,
            vec![
                UserSpec::new(4, 1e-3, Complex64::new(3.0, 0.0)),
                UserSpec::new(8, 1e-3, Complex64::new(1.5, 0.0)),
            ],
        );
        let p = plan(&spec, &OrderMatrix::from_flat(2, &[2, 0, 2]).unwrap()).unwrap();
        let payloads = random_payloads(&p, 1, 0);
        let rx = simulate_frame_with(&p, &payloads, 1, NoiseMode::Silent).unwrap();
        assert_eq!(payloads[1].len(), 8);
        for n in 0..4 {
            assert!((rx.frame.x[n] - rx.frame.per_user[0][n]).norm() < 1e-15);
        }
        let llrs = user_llrs(&rx, 1, &p, LlrMode::Exact).unwrap();
        assert_eq!(hard_decisions(&llrs), payloads[1]);
    }
}
