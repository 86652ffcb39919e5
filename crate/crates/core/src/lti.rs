//! Discrete-time LTI primitives.
//!
//! FIR transfer functions `F(z) = sum_k a_k z^-k`, their frequency response on
//! the unit circle, l1 / band-maximum norms, and the companion state-space
//! realization that every LMI construction in this crate is written against.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Complex64 = Complex<f64>;

/// Default number of grid points spanning `[0, pi]`.
pub const DEFAULT_GRID_POINTS: usize = 4096;

/// Largest grid used by [`band_max`] while refining.
pub const MAX_GRID_POINTS: usize = 1 << 20;

/// Real FIR filter `a_0 + a_1 z^-1 + ... + a_N z^-N`.
///
/// Used for the loop filter `R`, the pre-filter `P` and the NTF `1 + R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FirFilter {
    coeffs: Vec<f64>,
}

impl TryFrom<Vec<f64>> for FirFilter {
    type Error = Error;

    fn try_from(coeffs: Vec<f64>) -> Result<Self> {
        Self::new(coeffs)
    }
}

impl From<FirFilter> for Vec<f64> {
    fn from(f: FirFilter) -> Self {
        f.coeffs
    }
}

impl FirFilter {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidFilter("empty coefficient list".into()));
        }
        if let Some(bad) = coeffs.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidFilter(format!("non-finite tap {bad}")));
        }
        Ok(Self { coeffs })
    }

    /// The unit filter `F(z) = 1`.
    pub fn identity() -> Self {
        Self { coeffs: vec![1.0] }
    }

    /// `N` zero taps after a zero leading tap: the strictly causal `R = 0` of order `n`.
    pub fn zero(order: usize) -> Self {
        Self {
            coeffs: vec![0.0; order + 1],
        }
    }

    /// Strictly causal loop filter from `(a_1, ..., a_N)`; `a_0 = 0` is implied.
    pub fn strictly_causal(taps: &[f64]) -> Result<Self> {
        let mut coeffs = Vec::with_capacity(taps.len() + 1);
        coeffs.push(0.0);
        coeffs.extend_from_slice(taps);
        Self::new(coeffs)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// The impulse response of an FIR filter is its tap sequence.
    pub fn impulse_response(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_strictly_causal(&self) -> bool {
        self.coeffs[0] == 0.0
    }

    /// `1 + R(z)` for a strictly causal `R`.
    pub fn ntf_from_loop_filter(r: &FirFilter) -> Result<Self> {
        if !r.is_strictly_causal() {
            return Err(Error::InvalidFilter(
                "loop filter must be strictly causal (a_0 = 0)".into(),
            ));
        }
        let mut coeffs = r.coeffs.clone();
        coeffs[0] = 1.0;
        Ok(Self { coeffs })
    }

    /// `F(z) - 1`, the loop filter belonging to an NTF with unit leading tap.
    pub fn loop_filter_from_ntf(ntf: &FirFilter) -> Result<Self> {
        if ntf.coeffs[0] != 1.0 {
            return Err(Error::InvalidFilter(format!(
                "NTF leading tap must be 1, got {}",
                ntf.coeffs[0]
            )));
        }
        let mut coeffs = ntf.coeffs.clone();
        coeffs[0] = 0.0;
        Ok(Self { coeffs })
    }

    pub fn convolve(&self, other: &FirFilter) -> FirFilter {
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        FirFilter { coeffs: out }
    }

    /// `F(z)^m`; `m = 0` gives the unit filter.
    pub fn pow(&self, m: usize) -> FirFilter {
        (0..m).fold(FirFilter::identity(), |acc, _| acc.convolve(self))
    }

    pub fn scale(&self, k: f64) -> FirFilter {
        FirFilter {
            coeffs: self.coeffs.iter().map(|c| c * k).collect(),
        }
    }

    pub fn tap_sum(&self) -> f64 {
        self.coeffs.iter().sum()
    }

    pub fn alternating_sum(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| if k % 2 == 0 { *c } else { -*c })
            .sum()
    }

    /// Frequency response without the domain check.
    pub(crate) fn response_at(&self, w: f64) -> Complex64 {
        // Horner in z^-1 = e^{-jw}
        let zinv = Complex64::new(w.cos(), -w.sin());
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * zinv + c)
    }

    pub(crate) fn magnitude_at(&self, w: f64) -> f64 {
        self.response_at(w).norm()
    }
}

/// `F(e^{jw}) = sum_k a_k e^{-jwk}` for `w` in `[0, pi]`.
pub fn freq_response(f: &FirFilter, w: f64) -> Result<Complex64> {
    if !(0.0..=PI).contains(&w) {
        return Err(Error::FrequencyDomain(w));
    }
    Ok(f.response_at(w))
}

/// `sum_k |a_k|`.
///
/// For a strictly causal `r`, `l1_norm(1 + r) = 1 + l1_norm(r)` exactly since
/// the unit tap lands on the zero leading tap.
pub fn l1_norm(f: &FirFilter) -> f64 {
    f.coeffs.iter().map(|c| c.abs()).sum()
}

/// State-space realization `(A, B, C, D)` of a single-input single-output system.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: RowDVector<f64>,
    pub d: f64,
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: RowDVector<f64>, d: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.len() != n || c.len() != n {
            return Err(Error::Dimension(format!(
                "A is {}x{}, B has {} rows, C has {} columns",
                a.nrows(),
                a.ncols(),
                b.len(),
                c.len()
            )));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// `C (zI - A)^-1 B + D` evaluated at `z = e^{jw}`.
    pub fn freq_response(&self, w: f64) -> Result<Complex64> {
        if !(0.0..=PI).contains(&w) {
            return Err(Error::FrequencyDomain(w));
        }
        let n = self.order();
        let z = Complex64::new(w.cos(), w.sin());
        let mut m = self.a.map(|v| Complex64::new(-v, 0.0));
        for i in 0..n {
            m[(i, i)] += z;
        }
        let rhs = self.b.map(|v| Complex64::new(v, 0.0));
        let x = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Dimension("zI - A is singular on the unit circle".into()))?;
        let cx: Complex64 = self
            .c
            .iter()
            .zip(x.iter())
            .map(|(c, x)| x * *c)
            .sum();
        Ok(cx + self.d)
    }

    /// Markov parameters `D, CB, CAB, CA^2B, ...`, `len` of them.
    pub fn impulse_response(&self, len: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return out;
        }
        out.push(self.d);
        let mut v = self.b.clone();
        for _ in 1..len {
            out.push((&self.c * &v)[(0, 0)]);
            v = &self.a * v;
        }
        out
    }
}

/// Companion realization of a strictly causal FIR `R`:
/// `A` is the upper shift matrix, `B = e_N`, `C = (a_N, ..., a_1)`, `D = 0`.
pub fn companion_realization(f: &FirFilter) -> Result<StateSpace> {
    if !f.is_strictly_causal() {
        return Err(Error::InvalidFilter(
            "companion realization needs a strictly causal filter".into(),
        ));
    }
    let n = f.order();
    if n == 0 {
        return Err(Error::InvalidFilter(
            "order-0 filter has no state to realize".into(),
        ));
    }
    Ok(StateSpace {
        a: shift_matrix(n),
        b: unit_input(n),
        c: RowDVector::from_iterator(n, (1..=n).rev().map(|k| f.coeffs[k])),
        d: 0.0,
    })
}

/// `n x n` matrix with ones on the first superdiagonal.
pub fn shift_matrix(n: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        a[(i, i + 1)] = 1.0;
    }
    a
}

/// `(0, ..., 0, 1)^T` of length `n`.
pub fn unit_input(n: usize) -> DVector<f64> {
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    b
}

/// Frequencies (radians/sample) for evaluating maxima.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    points: Vec<f64>,
}

impl FrequencyGrid {
    /// Points sorted and deduplicated; all must lie in `[0, pi]`.
    pub fn from_points(mut points: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = points.iter().find(|w| !(0.0..=PI).contains(*w)) {
            return Err(Error::FrequencyDomain(bad));
        }
        points.sort_by(|a, b| a.total_cmp(b));
        points.dedup();
        Ok(Self { points })
    }

    /// `count` evenly spaced points covering `[0, pi]` including both ends.
    pub fn uniform(count: usize) -> Self {
        let count = count.max(2);
        let step = PI / (count - 1) as f64;
        let mut points: Vec<f64> = (0..count).map(|i| i as f64 * step).collect();
        points[count - 1] = PI;
        Self { points }
    }

    /// Uniform grid of `count` points over `[0, pi]` with the band edges inserted.
    pub fn for_band(count: usize, lo: f64, hi: f64) -> Result<Self> {
        let mut points = Self::uniform(count).points;
        points.push(lo);
        points.push(hi);
        Self::from_points(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Points per radian.
    pub fn density(&self) -> f64 {
        self.points.len() as f64 / PI
    }
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self::uniform(DEFAULT_GRID_POINTS)
    }
}

pub(crate) fn check_band(lo: f64, hi: f64) -> Result<()> {
    let bad = |reason: &str| Error::InvalidBand {
        lo,
        hi,
        reason: reason.into(),
    };
    if !lo.is_finite() || !hi.is_finite() {
        return Err(bad("non-finite edge"));
    }
    if lo < 0.0 || hi > PI {
        return Err(bad("band must lie inside [0, pi]"));
    }
    if lo > hi {
        return Err(bad("lower edge exceeds upper edge"));
    }
    Ok(())
}

/// Largest `|F(e^{jw})|` over grid points inside `[lo, hi]`.
///
/// This is a lower bound on the true band maximum; see [`band_max`] for the
/// refined estimate.
pub fn max_magnitude_on_band(f: &FirFilter, lo: f64, hi: f64, grid: &FrequencyGrid) -> Result<f64> {
    check_band(lo, hi)?;
    grid.points
        .iter()
        .filter(|w| (lo..=hi).contains(*w))
        .map(|&w| f.magnitude_at(w))
        .fold(None, |acc: Option<f64>, m| Some(acc.map_or(m, |a| a.max(m))))
        .ok_or(Error::EmptyGridBand { lo, hi })
}

/// Refined band maximum of `|F(e^{jw})|` and the frequency where it occurs.
///
/// Starts from the default grid density restricted to the band, doubles until
/// the maximum moves by less than `1e-6` (relative) or the grid reaches
/// [`MAX_GRID_POINTS`], then polishes the best point by golden-section search
/// between its neighbours.
pub fn band_max_at(f: &FirFilter, lo: f64, hi: f64) -> Result<(f64, f64)> {
    check_band(lo, hi)?;
    if hi == lo {
        return Ok((f.magnitude_at(lo), lo));
    }
    let width = hi - lo;
    let mut count = ((DEFAULT_GRID_POINTS as f64 * width / PI).ceil() as usize).max(64) + 1;
    let mut prev = scan_band(f, lo, hi, count);
    loop {
        let next_count = 2 * (count - 1) + 1;
        if next_count > MAX_GRID_POINTS {
            break;
        }
        let next = scan_band(f, lo, hi, next_count);
        count = next_count;
        let settled = (next.0 - prev.0).abs() <= 1e-6 * next.0.max(f64::MIN_POSITIVE);
        prev = next;
        if settled {
            break;
        }
    }
    let (best, at) = prev;
    let step = width / (count - 1) as f64;
    let (polished, w) = golden_max(f, (at - step).max(lo), (at + step).min(hi));
    Ok(if polished > best { (polished, w) } else { (best, at) })
}

/// Refined band maximum of `|F(e^{jw})|` over `[lo, hi]`.
pub fn band_max(f: &FirFilter, lo: f64, hi: f64) -> Result<f64> {
    band_max_at(f, lo, hi).map(|(m, _)| m)
}

/// `||F||_inf` estimated by [`band_max`] over `[0, pi]`.
pub fn hinf_norm(f: &FirFilter) -> f64 {
    band_max(f, 0.0, PI).expect("full band is valid")
}

fn scan_band(f: &FirFilter, lo: f64, hi: f64, count: usize) -> (f64, f64) {
    let step = (hi - lo) / (count - 1) as f64;
    (0..count)
        .map(|i| if i + 1 == count { hi } else { lo + i as f64 * step })
        .map(|w| (f.magnitude_at(w), w))
        .fold((f64::NEG_INFINITY, lo), |acc, x| if x.0 > acc.0 { x } else { acc })
}

fn golden_max(f: &FirFilter, mut a: f64, mut b: f64) -> (f64, f64) {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f.magnitude_at(c), f.magnitude_at(d));
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f.magnitude_at(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f.magnitude_at(d);
        }
        if (b - a).abs() < 1e-15 {
            break;
        }
    }
    if fc > fd {
        (fc, c)
    } else {
        (fd, d)
    }
}

/// Linear magnitude to dB (`20 log10`).
pub fn mag_to_db(m: f64) -> f64 {
    20.0 * m.log10()
}

/// dB to linear magnitude.
pub fn db_to_mag(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fir(c: &[f64]) -> FirFilter {
        FirFilter::new(c.to_vec()).unwrap()
    }

    #[test]
    fn response_examples() {
        let delay = fir(&[0.0, 1.0]);
        let r0 = freq_response(&delay, 0.0).unwrap();
        assert!((r0 - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        let rpi = freq_response(&delay, PI).unwrap();
        assert!((rpi - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
        let sum = fir(&[1.0, 1.0]);
        assert!(freq_response(&sum, PI).unwrap().norm() < 1e-15);
    }

    #[test]
    fn response_rejects_out_of_range() {
        let f = FirFilter::identity();
        assert!(matches!(freq_response(&f, -0.1), Err(Error::FrequencyDomain(_))));
        assert!(matches!(freq_response(&f, 3.2), Err(Error::FrequencyDomain(_))));
    }

    #[test]
    fn rejects_bad_filters() {
        assert!(FirFilter::new(vec![]).is_err());
        assert!(FirFilter::new(vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn l1_examples() {
        assert_eq!(l1_norm(&fir(&[0.0, 0.5, -0.25])), 0.75);
        assert_eq!(l1_norm(&FirFilter::zero(3)), 0.0);
        let r = fir(&[0.0, 0.3, -1.2, 0.05]);
        let ntf = FirFilter::ntf_from_loop_filter(&r).unwrap();
        assert_eq!(l1_norm(&ntf), 1.0 + l1_norm(&r));
    }

    #[test]
    fn companion_n2() {
        let ss = companion_realization(&fir(&[0.0, 0.7, -0.2])).unwrap();
        assert_eq!(ss.a, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert_eq!(ss.b, DVector::from_vec(vec![0.0, 1.0]));
        assert_eq!(ss.c, RowDVector::from_vec(vec![-0.2, 0.7]));
        assert_eq!(ss.d, 0.0);
    }

    #[test]
    fn companion_requires_state() {
        assert!(companion_realization(&fir(&[0.0])).is_err());
        assert!(companion_realization(&fir(&[1.0, 0.5])).is_err());
    }

    #[test]
    fn companion_delay_is_unit_delay() {
        let ss = companion_realization(&fir(&[0.0, 1.0])).unwrap();
        for &w in &[0.0, 0.3, 1.0, PI] {
            let h = ss.freq_response(w).unwrap();
            assert!((h - Complex64::new(w.cos(), -w.sin())).norm() < 1e-14);
        }
    }

    #[test]
    fn companion_matches_fir_on_grid() {
        let f = fir(&[0.0, 0.9, -0.4, 0.25, 0.1, -0.05, 0.33]);
        let ss = companion_realization(&f).unwrap();
        for w in FrequencyGrid::uniform(1024).points() {
            let diff = ss.freq_response(*w).unwrap() - f.response_at(*w);
            assert!(diff.norm() < 1e-12, "w={w} diff={}", diff.norm());
        }
    }

    #[test]
    fn band_max_examples() {
        let grid = FrequencyGrid::default();
        let one = FirFilter::identity();
        assert!((max_magnitude_on_band(&one, 0.0, 0.3, &grid).unwrap() - 1.0).abs() < 1e-15);
        let f = fir(&[1.0, 1.0]);
        assert!((max_magnitude_on_band(&f, 0.0, PI, &grid).unwrap() - 2.0).abs() < 1e-15);
        assert!((band_max(&f, 0.0, PI).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_band_on_grid_errors() {
        let grid = FrequencyGrid::from_points(vec![0.0, 1.0]).unwrap();
        let f = FirFilter::identity();
        assert!(matches!(
            max_magnitude_on_band(&f, 0.2, 0.3, &grid),
            Err(Error::EmptyGridBand { .. })
        ));
    }

    #[test]
    fn refined_max_finds_interior_peak() {
        // |1 - 2cos(w) z^-1 ...| style peak off-grid: 1 + 0.9 z^-1 peaks at w = 0 only,
        // so use a resonant filter with a peak at w = 1.234.
        let w0: f64 = 1.234;
        let f = fir(&[1.0, -2.0 * 0.95 * w0.cos(), 0.95 * 0.95]);
        let (m, at) = band_max_at(&f, 0.0, PI).unwrap();
        // brute-force check on a very fine grid
        let brute = (0..=200_000)
            .map(|i| f.magnitude_at(PI * i as f64 / 200_000.0))
            .fold(0.0, f64::max);
        assert!(m >= brute - 1e-12);
        assert!((f.magnitude_at(at) - m).abs() < 1e-15);
    }

    #[test]
    fn pow_and_convolve() {
        let f = fir(&[1.0, -1.0]);
        assert_eq!(f.pow(2).coeffs(), &[1.0, -2.0, 1.0]);
        assert_eq!(f.pow(0).coeffs(), &[1.0]);
    }
}
