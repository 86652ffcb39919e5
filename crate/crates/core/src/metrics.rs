//! Frequency-domain performance figures.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{band_max, check_band, FirFilter};
use crate::sim::{simulate_cascade_with, sine, UniformQuantizer};
use crate::stability::{effective_loop_filter, input_bound};

/// Bins within this distance of the tone are not counted as noise.
pub const SIGNAL_GUARD_BINS: usize = 3;

/// `sqrt(mean |T(e^{jw})|^2)` over `[lo, hi]`.
pub fn n_average(ntf: &FirFilter, lo: f64, hi: f64) -> Result<f64> {
    check_band(lo, hi)?;
    if hi <= lo {
        return Err(Error::InvalidBand {
            lo,
            hi,
            reason: "zero-width band".into(),
        });
    }
    let f = |w: f64| ntf.magnitude_at(w).powi(2);
    Ok((integrate(&f, lo, hi, 1e-11) / (hi - lo)).sqrt())
}

/// Refined band maximum of `|T|`.
pub fn n_worst(ntf: &FirFilter, lo: f64, hi: f64) -> Result<f64> {
    band_max(ntf, lo, hi)
}

/// `C0 n_worst`: the largest in-band reconstruction error for inputs whose
/// quantization error spectrum is bounded by `C0`.
pub fn worst_error(ntf: &FirFilter, lo: f64, hi: f64, c0: f64) -> Result<f64> {
    if !(c0 >= 0.0) {
        return Err(Error::InvalidSignal(format!("C0 must be nonnegative, got {c0}")));
    }
    Ok(c0 * n_worst(ntf, lo, hi)?)
}

/// `1 / (C0 n_worst)`.
pub fn snr_worst(ntf: &FirFilter, lo: f64, hi: f64, c0: f64) -> Result<f64> {
    Ok(1.0 / worst_error(ntf, lo, hi, c0)?)
}

/// Adaptive Simpson quadrature with a relative tolerance.
fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    // coarse pass fixes the absolute target
    let n = 64;
    let h = (b - a) / n as f64;
    let coarse: f64 = (0..n)
        .map(|i| {
            let (x0, x1) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            simpson(f, x0, x1).0
        })
        .sum();
    let tol = rel * coarse.abs().max(f64::MIN_POSITIVE);
    (0..n)
        .map(|i| {
            let (x0, x1) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let (s, fa, fm, fb) = simpson(f, x0, x1);
            adapt(f, x0, x1, fa, fm, fb, s, tol / n as f64, 40)
        })
        .sum()
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64, f64, f64) {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    ((b - a) / 6.0 * (fa + 4.0 * fm + fb), fa, fm, fb)
}

#[allow(clippy::too_many_arguments)]
fn adapt(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (f(0.5 * (a + m)), f(0.5 * (m + b)));
    let left = (m - a) / 6.0 * (fa + 4.0 * lm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * rm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    adapt(f, a, m, fa, lm, fm, left, 0.5 * tol, depth - 1) + adapt(f, m, b, fm, rm, fb, right, 0.5 * tol, depth - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi k / L)`.
    Hann,
}

impl Window {
    pub fn coefficients(&self, len: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..len)
                .map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / len as f64).cos())
                .collect(),
        }
    }
}

/// One-sided spectrum on bins `2 pi k / L`, `k = 0..=L/2`, scaled so that an
/// on-bin sinusoid of amplitude `A` peaks at `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub omega: Vec<f64>,
    pub magnitude: Vec<f64>,
    pub window: Window,
    /// Length of the transformed signal.
    pub len: usize,
}

impl Spectrum {
    pub fn magnitude_db(&self) -> Vec<f64> {
        self.magnitude.iter().map(|m| 20.0 * m.log10()).collect()
    }
}

fn windowed_fft(x: &[f64], window: Window) -> Vec<Complex<f64>> {
    let w = window.coefficients(x.len());
    let mut buf: Vec<Complex<f64>> = x.iter().zip(&w).map(|(v, w)| Complex::new(v * w, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(x.len()).process(&mut buf);
    buf.truncate(x.len() / 2 + 1);
    buf
}

fn coherent_gain(len: usize, window: Window) -> f64 {
    window.coefficients(len).iter().sum::<f64>() / 2.0
}

pub fn spectrum(x: &[f64], window: Window) -> Result<Spectrum> {
    if x.is_empty() {
        return Err(Error::InvalidSignal("empty signal".into()));
    }
    let g = coherent_gain(x.len(), window);
    let bins = windowed_fft(x, window);
    let len = x.len();
    Ok(Spectrum {
        omega: (0..bins.len()).map(|k| 2.0 * PI * k as f64 / len as f64).collect(),
        magnitude: bins.iter().map(|c| c.norm() / g).collect(),
        window,
        len,
    })
}

/// Nearest FFT bin `k` to `omega` for length `len`.
pub fn nearest_bin(omega: f64, len: usize) -> usize {
    (omega * len as f64 / (2.0 * PI)).round().max(0.0) as usize
}

/// `omega` moved onto the nearest FFT bin.
pub fn snap_to_bin(omega: f64, len: usize) -> f64 {
    2.0 * PI * nearest_bin(omega, len) as f64 / len as f64
}

fn band_bins(len: usize, nbins: usize, lo: f64, hi: f64) -> Result<Vec<usize>> {
    check_band(lo, hi)?;
    let bins: Vec<usize> = (0..nbins)
        .filter(|k| {
            let w = 2.0 * PI * *k as f64 / len as f64;
            (lo..=hi).contains(&w)
        })
        .collect();
    if bins.is_empty() {
        return Err(Error::EmptyGridBand { lo, hi });
    }
    Ok(bins)
}

/// Peak-to-peak SNR in dB: largest in-band `|U|^2` over the largest in-band
/// `|Y - U|^2` away from the tone. `+inf` when the noise vanishes.
pub fn snr_pp(y: &[f64], u: &[f64], lo: f64, hi: f64) -> Result<f64> {
    if y.len() != u.len() || y.is_empty() {
        return Err(Error::InvalidSignal(format!(
            "output has {} samples, input has {}",
            y.len(),
            u.len()
        )));
    }
    let yf = windowed_fft(y, Window::Hann);
    let uf = windowed_fft(u, Window::Hann);
    let bins = band_bins(y.len(), yf.len(), lo, hi)?;
    let (k0, sig) = bins
        .iter()
        .map(|k| (*k, uf[*k].norm_sqr()))
        .fold((bins[0], f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    let noise = bins
        .iter()
        .filter(|k| k.abs_diff(k0) > SIGNAL_GUARD_BINS)
        .map(|k| (yf[*k] - uf[*k]).norm_sqr())
        .fold(0.0, f64::max);
    Ok(if noise == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (sig / noise).log10()
    })
}

/// Signal-to-quantization-noise ratio in dB from the output alone: power in
/// the bins around the tone over the remaining in-band power.
pub fn sqnr(y: &[f64], omega: f64, lo: f64, hi: f64) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::InvalidSignal("empty signal".into()));
    }
    let yf = windowed_fft(y, Window::Hann);
    let bins = band_bins(y.len(), yf.len(), lo, hi)?;
    let k0 = nearest_bin(omega, y.len());
    let (mut sig, mut noise) = (0.0, 0.0);
    for k in bins {
        if k.abs_diff(k0) <= SIGNAL_GUARD_BINS {
            sig += yf[k].norm_sqr();
        } else {
            noise += yf[k].norm_sqr();
        }
    }
    Ok(if noise == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (sig / noise).log10()
    })
}

/// Modulator and test conditions for an amplitude sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSetup {
    pub p: FirFilter,
    pub r: FirFilter,
    pub stages: usize,
    pub quantizer: UniformQuantizer,
    /// Test tone, radians/sample; used as given (snap it with [`snap_to_bin`]).
    pub omega: f64,
    pub len: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrSweep {
    pub amplitudes: Vec<f64>,
    pub amplitudes_db: Vec<f64>,
    pub snr_db: Vec<f64>,
    pub peak_snr: f64,
    pub peak_amplitude: f64,
    /// Certified input amplitude of the modulator.
    pub bound: f64,
    pub within_bound: Vec<bool>,
}

/// SQNR of the modulator output for each amplitude, in amplitude order.
pub fn snr_sweep(setup: &SweepSetup, amplitudes: &[f64]) -> Result<SnrSweep> {
    if amplitudes.is_empty() {
        return Err(Error::InvalidSignal("no amplitudes".into()));
    }
    if amplitudes.iter().any(|a| !(a.is_finite() && *a > 0.0)) || amplitudes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidSignal("amplitudes must be positive and strictly increasing".into()));
    }
    if setup.len == 0 {
        return Err(Error::InvalidSignal("zero simulation length".into()));
    }
    let snr: Vec<f64> = amplitudes
        .par_iter()
        .map(|a| {
            let u = sine(*a, setup.omega, setup.len);
            let tr = simulate_cascade_with(&setup.p, &setup.r, setup.stages, &setup.quantizer, &u, false)?;
            sqnr(&tr.y, setup.omega, setup.lo, setup.hi)
        })
        .collect::<Result<_>>()?;
    let reff = effective_loop_filter(&setup.r, setup.stages)?;
    let bound = input_bound(&setup.p, &reff, &setup.quantizer.spec()?)?;
    let (ipk, peak) = snr
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, (i, s)| if *s > a.1 { (i, *s) } else { a });
    Ok(SnrSweep {
        amplitudes_db: amplitudes.iter().map(|a| 20.0 * a.log10()).collect(),
        within_bound: amplitudes.iter().map(|a| *a <= bound).collect(),
        amplitudes: amplitudes.to_vec(),
        snr_db: snr,
        peak_snr: peak,
        peak_amplitude: amplitudes[ipk],
        bound,
    })
}

/// Amplitudes `10^(db/20)` from `lo_db` to `hi_db` in steps of `step_db`.
pub fn db_range(lo_db: f64, hi_db: f64, step_db: f64) -> Result<Vec<f64>> {
    if !(step_db > 0.0) || !(hi_db >= lo_db) {
        return Err(Error::InvalidSignal(format!(
            "bad dB range {lo_db}..{hi_db} step {step_db}"
        )));
    }
    let count = ((hi_db - lo_db) / step_db + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| 10f64.powf((lo_db + i as f64 * step_db) / 20.0)).collect())
}

/// Transfer magnitude `|S_yw| / S_ww` on `nfft / 2 + 1` bins from Hann-windowed
/// half-overlapping segments of the excitation `w` and response `y`.
pub fn transfer_estimate(w: &[f64], y: &[f64], nfft: usize) -> Result<Spectrum> {
    if w.len() != y.len() || w.len() < nfft || nfft < 2 {
        return Err(Error::InvalidSignal(format!(
            "need equal-length signals of at least {nfft} samples, got {} and {}",
            w.len(),
            y.len()
        )));
    }
    let hop = nfft / 2;
    let nb = nfft / 2 + 1;
    let mut syw = vec![Complex::new(0.0, 0.0); nb];
    let mut sww = vec![0.0; nb];
    let mut start = 0;
    while start + nfft <= w.len() {
        let wf = windowed_fft(&w[start..start + nfft], Window::Hann);
        let yf = windowed_fft(&y[start..start + nfft], Window::Hann);
        for k in 0..nb {
            syw[k] += yf[k] * wf[k].conj();
            sww[k] += wf[k].norm_sqr();
        }
        start += hop;
    }
    Ok(Spectrum {
        omega: (0..nb).map(|k| 2.0 * PI * k as f64 / nfft as f64).collect(),
        magnitude: syw.iter().zip(&sww).map(|(c, p)| c.norm() / p).collect(),
        window: Window::Hann,
        len: nfft,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fir(c: &[f64]) -> FirFilter {
        FirFilter::new(c.to_vec()).unwrap()
    }

    #[test]
    fn average_of_constant_and_first_difference() {
        let one = FirFilter::identity();
        assert!((n_average(&one, 0.2, 0.9).unwrap() - 1.0).abs() < 1e-12);
        let f = fir(&[1.0, 1.0]);
        let v = n_average(&f, 0.0, PI).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-8 * 2f64.sqrt());
        assert!(n_average(&f, 0.5, 0.5).is_err());
    }

    #[test]
    fn worst_error_is_linear_in_c0() {
        let f = fir(&[1.0, -0.9]);
        assert_eq!(worst_error(&f, 0.0, 0.3, 0.0).unwrap(), 0.0);
        assert!((worst_error(&FirFilter::identity(), 0.0, 0.3, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let a = worst_error(&f, 0.0, 0.3, 1.5).unwrap();
        let b = worst_error(&f, 0.0, 0.3, 3.0).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-15);
        assert!(worst_error(&f, 0.0, 0.3, -1.0).is_err());
        assert!((snr_worst(&f, 0.0, 0.3, 1.5).unwrap() * a - 1.0).abs() < 1e-12);
    }

    #[test]
    fn on_bin_tone_reads_its_amplitude() {
        let len = 1024;
        let w = snap_to_bin(0.3, len);
        let s = spectrum(&sine(0.7, w, len), Window::Hann).unwrap();
        let k = nearest_bin(w, len);
        assert!((s.magnitude[k] - 0.7).abs() < 1e-12);
        assert_eq!(s.omega.len(), len / 2 + 1);
        assert!(s.omega.iter().all(|w| (0.0..=PI).contains(w)));
    }

    #[test]
    fn clean_output_has_infinite_snr() {
        let u = sine(0.5, snap_to_bin(0.1, 512), 512);
        assert_eq!(snr_pp(&u, &u, 0.0, 0.5).unwrap(), f64::INFINITY);
        assert!(snr_pp(&u, &u[..10], 0.0, 0.5).is_err());
    }

    #[test]
    fn band_without_bins_is_an_error() {
        let u = vec![0.0; 16];
        assert!(matches!(snr_pp(&u, &u, 0.01, 0.02), Err(Error::EmptyGridBand { .. })));
    }

    #[test]
    fn db_range_counts() {
        assert_eq!(db_range(-80.0, 0.0, 1.0).unwrap().len(), 81);
        assert!((db_range(-20.0, 0.0, 20.0).unwrap()[0] - 0.1).abs() < 1e-15);
        assert!(db_range(0.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn transfer_estimate_of_a_delay_is_flat() {
        let w: Vec<f64> = (0..4096).map(|k| ((k * 7919 + 13) % 101) as f64 / 101.0 - 0.5).collect();
        let mut y = vec![0.0; 4096];
        for k in 1..4096 {
            y[k] = 0.5 * w[k - 1];
        }
        let t = transfer_estimate(&w, &y, 256).unwrap();
        for m in &t.magnitude[1..128] {
            assert!((m - 0.5).abs() < 0.05, "{m}");
        }
    }
}
