//! Monte Carlo estimation of mutual information and dispersion under
//! treating interference as noise.
//!
//! The symbol tuples (desired point, one point per interferer) are enumerated
//! exactly; only the noise is sampled. Every call with the same seed sees the
//! same noise realizations, so estimates at different operating points are
//! paired.
//!
//! Two evaluation routes produce the same statistic:
//!
//! * the general route sums over complex tuples directly;
//! * the separable route applies when every constellation, after removing the
//!   channel phase, is a Cartesian product of in-phase and quadrature values.
//!   The likelihoods then factor per axis and the cost drops from `T^2` to
//!   roughly `sqrt(T)^2` per noise sample.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RateError;
use crate::constellation::{LabeledConstellation, DEDUP_TOLERANCE};

/// Largest number of symbol tuples enumerated per sub-block.
pub const MAX_TUPLES: usize = 4096;

pub const MIN_NOISE_SAMPLES: usize = 1000;

/// Noise samples per independently seeded substream.
const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSettings {
    pub noise_samples: usize,
    pub seed: u64,
}

impl EstimatorSettings {
    pub fn new(noise_samples: usize, seed: u64) -> Self {
        EstimatorSettings { noise_samples, seed }
    }

    /// Sample count used for figures.
    pub fn figure(seed: u64) -> Self {
        Self::new(200_000, seed)
    }

    /// Sample count used for quick checks.
    pub fn quick(seed: u64) -> Self {
        Self::new(10_000, seed)
    }
}

/// Mutual information and dispersion of one user over one sub-block.
///
/// `mutual_information` is in bits per complex symbol and `dispersion` in
/// bits squared per complex symbol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubBlockRateStats {
    pub mutual_information: f64,
    pub dispersion: f64,
    pub sample_count: usize,
    pub std_err_mi: f64,
    pub std_err_dispersion: f64,
}

impl SubBlockRateStats {
    pub fn zero() -> Self {
        SubBlockRateStats {
            mutual_information: 0.0,
            dispersion: 0.0,
            sample_count: 0,
            std_err_mi: 0.0,
            std_err_dispersion: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Auto,
    General,
    Separable,
}

/// Estimates `I(X; Y)` and `V(X; Y)` for `Y = h (X + S) + Z`, with `X` uniform
/// on `desired`, `S` the sum of independent uniform draws from `interferers`
/// and `Z ~ CN(0, 1)`.
pub fn estimate_mi_dispersion(
    desired: &LabeledConstellation,
    interferers: &[LabeledConstellation],
    h: Complex64,
    settings: EstimatorSettings,
) -> Result<SubBlockRateStats, RateError> {
    estimate_with_route(desired, interferers, h, settings, Route::Auto)
}

pub fn estimate_with_route(
    desired: &LabeledConstellation,
    interferers: &[LabeledConstellation],
    h: Complex64,
    settings: EstimatorSettings,
    route: Route,
) -> Result<SubBlockRateStats, RateError> {
    let kernel = prepare(desired, interferers, h, settings, route)?;
    let kernel = match kernel {
        Some(k) => k,
        None => return Ok(SubBlockRateStats::zero()),
    };
    let acc = run(&*kernel, settings, |kernel, z, _| kernel.moments(z));
    acc.finish(settings.noise_samples, desired.order() as f64)
}

/// Third absolute central moment `E|i - center|^3` of the information
/// density, for Berry–Esseen diagnostics.
pub fn estimate_third_abs_moment(
    desired: &LabeledConstellation,
    interferers: &[LabeledConstellation],
    h: Complex64,
    settings: EstimatorSettings,
    center: f64,
) -> Result<f64, RateError> {
    let kernel = match prepare(desired, interferers, h, settings, Route::Auto)? {
        Some(k) => k,
        None => return Ok(0.0),
    };
    let acc = run(&*kernel, settings, |kernel, z, buf| {
        kernel.densities(z, buf);
        let m = buf.iter().map(|i| (i - center).abs().powi(3)).sum::<f64>() / buf.len() as f64;
        (m, 0.0)
    });
    let v = acc.sum_d / settings.noise_samples as f64;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(RateError::NonFinite)
    }
}

type BoxedKernel = Box<dyn Kernel>;

fn prepare(
    desired: &LabeledConstellation,
    interferers: &[LabeledConstellation],
    h: Complex64,
    settings: EstimatorSettings,
    route: Route,
) -> Result<Option<BoxedKernel>, RateError> {
    if settings.noise_samples < MIN_NOISE_SAMPLES {
        return Err(RateError::TooFewSamples {
            got: settings.noise_samples,
            min: MIN_NOISE_SAMPLES,
        });
    }
    let tuples = interferers
        .iter()
        .try_fold(desired.len(), |acc, c| acc.checked_mul(c.len()))
        .unwrap_or(usize::MAX);
    if tuples > MAX_TUPLES {
        return Err(RateError::CardinalityCap {
            tuples,
            cap: MAX_TUPLES,
        });
    }
    if h.norm() == 0.0 || desired.len() == 1 {
        return Ok(None);
    }
    let kernel: BoxedKernel = match route {
        Route::General => Box::new(GeneralKernel::new(desired, interferers, h)),
        Route::Separable => Box::new(
            SeparableKernel::new(desired, interferers, h).ok_or(RateError::NotSeparable)?,
        ),
        Route::Auto => match SeparableKernel::new(desired, interferers, h) {
            Some(k) => Box::new(k),
            None => Box::new(GeneralKernel::new(desired, interferers, h)),
        },
    };
    Ok(Some(kernel))
}

/// Noise sample `i` of chunk `chunk` for `seed`; `CN(0, 1)`.
pub(crate) fn noise_chunk(seed: u64, chunk: u64, len: usize) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    (0..len)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re * s, im * s)
        })
        .collect()
}

#[derive(Debug, Default, Clone, Copy)]
struct Accumulator {
    sum_d: f64,
    sum_s: f64,
    sum_dd: f64,
    sum_ss: f64,
    sum_ds: f64,
}

impl Accumulator {
    fn push(&mut self, d: f64, s: f64) {
        self.sum_d += d;
        self.sum_s += s;
        self.sum_dd += d * d;
        self.sum_ss += s * s;
        self.sum_ds += d * s;
    }

    fn merge(mut self, o: Accumulator) -> Accumulator {
        self.sum_d += o.sum_d;
        self.sum_s += o.sum_s;
        self.sum_dd += o.sum_dd;
        self.sum_ss += o.sum_ss;
        self.sum_ds += o.sum_ds;
        self
    }

    fn finish(self, n: usize, order: f64) -> Result<SubBlockRateStats, RateError> {
        let nf = n as f64;
        let mean_d = self.sum_d / nf;
        let mean_s = self.sum_s / nf;
        let mi = mean_d;
        let v = (mean_s - mean_d * mean_d).max(0.0);
        let var_d = (self.sum_dd / nf - mean_d * mean_d).max(0.0);
        // Delta method for V = E[s] - E[d]^2: gradient (1, -2 E[d]).
        let var_s = (self.sum_ss / nf - mean_s * mean_s).max(0.0);
        let cov_ds = self.sum_ds / nf - mean_d * mean_s;
        let var_v = (var_s - 4.0 * mean_d * cov_ds + 4.0 * mean_d * mean_d * var_d).max(0.0);
        let stats = SubBlockRateStats {
            // Per noise sample the tuple average never exceeds the order, and
            // mutual information is non-negative.
            mutual_information: mi.clamp(0.0, order),
            dispersion: v,
            sample_count: n,
            std_err_mi: (var_d / nf).sqrt(),
            std_err_dispersion: (var_v / nf).sqrt(),
        };
        if [stats.mutual_information, stats.dispersion, stats.std_err_mi, stats.std_err_dispersion]
            .iter()
            .all(|v| v.is_finite())
        {
            Ok(stats)
        } else {
            Err(RateError::NonFinite)
        }
    }
}

fn run<F>(kernel: &dyn Kernel, settings: EstimatorSettings, per_sample: F) -> Accumulator
where
    F: Fn(&dyn Kernel, Complex64, &mut Vec<f64>) -> (f64, f64) + Sync,
{
    let n = settings.noise_samples;
    let chunks = n.div_ceil(CHUNK);
    let partial: Vec<Accumulator> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(n - c * CHUNK);
            let noise = noise_chunk(settings.seed, c as u64, len);
            let mut buf = Vec::new();
            let mut acc = Accumulator::default();
            for z in noise {
                let (d, s) = per_sample(kernel, z, &mut buf);
                acc.push(d, s);
            }
            acc
        })
        .collect();
    partial.into_iter().fold(Accumulator::default(), Accumulator::merge)
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

trait Kernel: Sync {
    /// Tuple averages of the information density and of its square.
    fn moments(&self, z: Complex64) -> (f64, f64);
    /// Information density of every tuple.
    fn densities(&self, z: Complex64, out: &mut Vec<f64>);
}

/// All sums `a + b` with `a` from `left` and `b` from `right`, left-major.
fn minkowski(left: &[Complex64], right: &[Complex64]) -> Vec<Complex64> {
    left.iter()
        .flat_map(|a| right.iter().map(move |b| a + b))
        .collect()
}

struct GeneralKernel {
    h: Complex64,
    desired: Vec<Complex64>,
    interference: Vec<Complex64>,
    all: Vec<Complex64>,
    log2_order: f64,
}

impl GeneralKernel {
    fn new(desired: &LabeledConstellation, interferers: &[LabeledConstellation], h: Complex64) -> Self {
        let interference = interferers
            .iter()
            .fold(vec![Complex64::new(0.0, 0.0)], |acc, c| minkowski(&acc, c.points()));
        let all = minkowski(desired.points(), &interference);
        GeneralKernel {
            h,
            desired: desired.points().to_vec(),
            interference,
            all,
            log2_order: (desired.len() as f64).log2(),
        }
    }

    fn for_each_density(&self, z: Complex64, mut f: impl FnMut(f64)) {
        let h = self.h;
        for s in &self.interference {
            let den = log_sum_exp(self.interference.iter().map(|sp| -(z + h * (s - sp)).norm_sqr()));
            for d in &self.desired {
                let x = d + s;
                let num = log_sum_exp(self.all.iter().map(|c| -(z + h * (x - c)).norm_sqr()));
                f(self.log2_order - (num - den) / std::f64::consts::LN_2);
            }
        }
    }
}

impl Kernel for GeneralKernel {
    fn moments(&self, z: Complex64) -> (f64, f64) {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        self.for_each_density(z, |i| {
            s1 += i;
            s2 += i * i;
        });
        let t = self.all.len() as f64;
        (s1 / t, s2 / t)
    }

    fn densities(&self, z: Complex64, out: &mut Vec<f64>) {
        out.clear();
        self.for_each_density(z, |i| out.push(i));
    }
}

/// One axis of a separable sub-block.
struct Axis {
    desired: Vec<f64>,
    interference: Vec<f64>,
    all: Vec<f64>,
    log2_len: f64,
}

impl Axis {
    fn new(desired: Vec<f64>, interferers: &[Vec<f64>]) -> Self {
        let interference = interferers.iter().fold(vec![0.0], |acc, c| {
            acc.iter().flat_map(|a| c.iter().map(move |b| a + b)).collect()
        });
        let all = desired
            .iter()
            .flat_map(|a| interference.iter().map(move |b| a + b))
            .collect();
        let log2_len = (desired.len() as f64).log2();
        Axis {
            desired,
            interference,
            all,
            log2_len,
        }
    }

    fn tuples(&self) -> usize {
        self.all.len()
    }

    fn for_each_density(&self, gain: f64, z: f64, mut f: impl FnMut(f64)) {
        for s in &self.interference {
            let den = log_sum_exp(self.interference.iter().map(|sp| -(z + gain * (s - sp)).powi(2)));
            for d in &self.desired {
                let x = d + s;
                let num = log_sum_exp(self.all.iter().map(|c| -(z + gain * (x - c)).powi(2)));
                f(self.log2_len - (num - den) / std::f64::consts::LN_2);
            }
        }
    }

    fn moments(&self, gain: f64, z: f64) -> (f64, f64) {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        self.for_each_density(gain, z, |i| {
            s1 += i;
            s2 += i * i;
        });
        let t = self.tuples() as f64;
        (s1 / t, s2 / t)
    }
}

struct SeparableKernel {
    gain: f64,
    derotate: Complex64,
    re: Axis,
    im: Axis,
}

/// Splits a point set into in-phase and quadrature value lists when the set is
/// exactly their Cartesian product.
fn axis_product(points: &[Complex64]) -> Option<(Vec<f64>, Vec<f64>)> {
    fn distinct(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() <= DEDUP_TOLERANCE * (1.0 + b.abs()));
        v
    }
    let re = distinct(points.iter().map(|p| p.re).collect());
    let im = distinct(points.iter().map(|p| p.im).collect());
    if re.len() * im.len() != points.len() {
        return None;
    }
    let locate = |v: &[f64], x: f64| v.iter().position(|a| (a - x).abs() <= DEDUP_TOLERANCE * (1.0 + x.abs()));
    let mut seen = vec![false; points.len()];
    for p in points {
        let slot = locate(&re, p.re)? * im.len() + locate(&im, p.im)?;
        if std::mem::replace(&mut seen[slot], true) {
            return None;
        }
    }
    Some((re, im))
}

impl SeparableKernel {
    fn new(desired: &LabeledConstellation, interferers: &[LabeledConstellation], h: Complex64) -> Option<Self> {
        let (dr, di) = axis_product(desired.points())?;
        let mut ir = Vec::with_capacity(interferers.len());
        let mut ii = Vec::with_capacity(interferers.len());
        for c in interferers {
            let (r, i) = axis_product(c.points())?;
            ir.push(r);
            ii.push(i);
        }
        Some(SeparableKernel {
            gain: h.norm(),
            derotate: (h / h.norm()).conj(),
            re: Axis::new(dr, &ir),
            im: Axis::new(di, &ii),
        })
    }
}

impl Kernel for SeparableKernel {
    fn moments(&self, z: Complex64) -> (f64, f64) {
        // |z + h w|^2 = |z e^{-j arg h} + |h| w|^2, and the rotated noise has
        // the same law.
        let z = z * self.derotate;
        let (a1, a2) = self.re.moments(self.gain, z.re);
        let (b1, b2) = self.im.moments(self.gain, z.im);
        (a1 + b1, a2 + b2 + 2.0 * a1 * b1)
    }

    fn densities(&self, z: Complex64, out: &mut Vec<f64>) {
        let z = z * self.derotate;
        let mut re = Vec::with_capacity(self.re.tuples());
        self.re.for_each_density(self.gain, z.re, |i| re.push(i));
        let mut im = Vec::with_capacity(self.im.tuples());
        self.im.for_each_density(self.gain, z.im, |i| im.push(i));
        out.clear();
        for a in &re {
            for b in &im {
                out.push(a + b);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::{build_gray_qam, scale, unit_energy_factor};
    use crate::rate::quadrature::quadrature_mi;

    fn unit(m: u32) -> LabeledConstellation {
        let q = build_gray_qam(m).unwrap();
        scale(&q, Complex64::new(unit_energy_factor(&q), 0.0)).unwrap()
    }

    fn db(x: f64) -> f64 {
        10f64.powf(x / 10.0)
    }

    #[test]
    fn zero_channel_gives_zero() {
        let s = estimate_mi_dispersion(&unit(2), &[unit(4)], Complex64::new(0.0, 0.0), EstimatorSettings::quick(1)).unwrap();
        assert_eq!(s.mutual_information, 0.0);
        assert_eq!(s.dispersion, 0.0);
    }

    #[test]
    fn high_snr_saturates() {
        let h = Complex64::new(db(30.0).sqrt(), 0.0);
        let s = estimate_mi_dispersion(&unit(2), &[], h, EstimatorSettings::quick(2)).unwrap();
        assert!(s.mutual_information >= 1.999, "{s:?}");
    }

    #[test]
    fn matches_quadrature_at_zero_db() {
        let q = unit(2);
        let h = Complex64::new(1.0, 0.0);
        let oracle = quadrature_mi(&q, h).unwrap();
        let s = estimate_mi_dispersion(&q, &[], h, EstimatorSettings::quick(3)).unwrap();
        assert!((s.mutual_information - oracle).abs() <= 3.0 * s.std_err_mi, "{s:?} vs {oracle}");
    }

    #[test]
    fn routes_agree_on_shared_noise() {
        let settings = EstimatorSettings::new(2000, 11);
        let d = scale(&build_gray_qam(2).unwrap(), Complex64::new(0.3, 0.0)).unwrap();
        let i = scale(&build_gray_qam(4).unwrap(), Complex64::new(0.6, 0.0)).unwrap();
        let h = Complex64::from_polar(2.5, 0.9);
        let a = estimate_with_route(&d, std::slice::from_ref(&i), h, settings, Route::General).unwrap();
        let b = estimate_with_route(&d, std::slice::from_ref(&i), h, settings, Route::Separable).unwrap();
        assert!((a.mutual_information - b.mutual_information).abs() < 1e-10, "{a:?} {b:?}");
        assert!((a.dispersion - b.dispersion).abs() < 1e-10);
        assert!((a.std_err_mi - b.std_err_mi).abs() < 1e-10);
    }

    #[test]
    fn rotated_constellation_falls_back_to_general() {
        let d = scale(&build_gray_qam(2).unwrap(), Complex64::from_polar(1.0, 0.3)).unwrap();
        let i = build_gray_qam(2).unwrap();
        assert!(SeparableKernel::new(&d, std::slice::from_ref(&i), Complex64::new(1.0, 0.0)).is_none());
        let s = estimate_mi_dispersion(&d, &[i], Complex64::new(2.0, 0.0), EstimatorSettings::quick(5)).unwrap();
        assert!(s.mutual_information > 0.0 && s.mutual_information < 2.0);
    }

    #[test]
    fn worker_count_does_not_change_result() {
        let settings = EstimatorSettings::new(5000, 9);
        let h = Complex64::new(1.7, -0.4);
        let base = estimate_mi_dispersion(&unit(4), &[], h, settings).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let single = pool.install(|| estimate_mi_dispersion(&unit(4), &[], h, settings).unwrap());
        assert_eq!(base, single);
    }

    #[test]
    fn rejects_too_few_samples_and_large_products() {
        let h = Complex64::new(1.0, 0.0);
        assert!(matches!(
            estimate_mi_dispersion(&unit(2), &[], h, EstimatorSettings::new(10, 0)),
            Err(RateError::TooFewSamples { .. })
        ));
        assert!(matches!(
            estimate_mi_dispersion(&unit(8), &[unit(6)], h, EstimatorSettings::quick(0)),
            Err(RateError::CardinalityCap { tuples: 16384, .. })
        ));
    }

    #[test]
    fn finite_for_huge_gain() {
        let h = Complex64::new(1e3, 0.0);
        let s = estimate_mi_dispersion(&unit(4), &[unit(2)], h, EstimatorSettings::quick(4)).unwrap();
        assert!(s.mutual_information.is_finite() && s.dispersion.is_finite());
        let s = estimate_with_route(&unit(2), &[unit(2)], h, EstimatorSettings::quick(4), Route::General).unwrap();
        assert!(s.mutual_information.is_finite());
    }

    #[test]
    fn third_moment_is_positive() {
        let h = Complex64::new(1.5, 0.0);
        let s = estimate_mi_dispersion(&unit(2), &[], h, EstimatorSettings::quick(8)).unwrap();
        let t = estimate_third_abs_moment(&unit(2), &[], h, EstimatorSettings::quick(8), s.mutual_information).unwrap();
        assert!(t > 0.0);
    }
}
