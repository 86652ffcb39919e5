//! Sample-exact simulation of the error-feedback modulator and its cascade.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::FirFilter;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::stability::{beta_envelope, cascade_realization, ClosedLoop, QuantizerSpec};

/// Mid-rise uniform quantizer with outputs `+-delta, +-3 delta, ..., +-(levels - 1) delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformQuantizer {
    pub delta: f64,
    pub levels: usize,
}

impl UniformQuantizer {
    pub fn new(delta: f64, levels: usize) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::InvalidQuantizer(format!("half step must be positive, got {delta}")));
        }
        if levels == 0 || levels % 2 != 0 {
            return Err(Error::InvalidQuantizer(format!(
                "level count must be a positive even integer, got {levels}"
            )));
        }
        Ok(Self { delta, levels })
    }

    /// Largest output magnitude `(levels - 1) delta`.
    pub fn max_output(&self) -> f64 {
        (self.levels - 1) as f64 * self.delta
    }

    /// Half-width `levels * delta` of the no-overload range, i.e. `M + 1`.
    pub fn no_overload(&self) -> f64 {
        self.levels as f64 * self.delta
    }

    /// `(M, delta)` with `M = levels * delta - 1`.
    pub fn spec(&self) -> Result<QuantizerSpec> {
        QuantizerSpec::new(self.no_overload() - 1.0, self.delta)
    }

    /// Nearest odd multiple of `delta`; even multiples round up; clamped.
    pub fn quantize(&self, psi: f64) -> f64 {
        let k = (psi / (2.0 * self.delta)).floor();
        let y = self.delta * (2.0 * k + 1.0);
        let top = self.max_output();
        y.clamp(-top, top)
    }

    pub fn overloads(&self, psi: f64) -> bool {
        psi.abs() > self.no_overload()
    }
}

/// Every signal of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub u: Vec<f64>,
    /// Quantizer input.
    pub psi: Vec<f64>,
    pub y: Vec<f64>,
    /// `y - psi`.
    pub n: Vec<f64>,
    pub overload: Vec<bool>,
    /// `x(k)` in the layout of [`crate::stability::cascade_realization`]; empty
    /// when state recording was not requested.
    pub x: Vec<Vec<f64>>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn overload_count(&self) -> usize {
        self.overload.iter().filter(|o| **o).count()
    }
}

/// What replaces the quantizer in the loop.
enum Nonlinearity<'a> {
    Quantizer(&'a UniformQuantizer),
    /// `y = psi + w(k)`.
    Additive(&'a [f64]),
}

/// Delay line for `sum_{i>=1} f_i v(k-i)`, most recent sample last.
struct History {
    buf: Vec<f64>,
}

impl History {
    fn new(len: usize) -> Self {
        Self { buf: vec![0.0; len] }
    }

    fn dot(&self, taps: &[f64]) -> f64 {
        // taps[0] weighs v(k-1)
        let n = self.buf.len();
        taps.iter().enumerate().map(|(i, t)| t * self.buf[n - 1 - i]).sum()
    }

    fn push(&mut self, v: f64) {
        if !self.buf.is_empty() {
            self.buf.rotate_left(1);
            let n = self.buf.len();
            self.buf[n - 1] = v;
        }
    }
}

fn check_loop(r: &FirFilter, m: usize) -> Result<()> {
    if !r.is_strictly_causal() {
        return Err(Error::InvalidFilter("loop filter must be strictly causal".into()));
    }
    if m == 0 {
        return Err(Error::InvalidSpec("cascade needs at least one stage".into()));
    }
    Ok(())
}

fn check_input(u: &[f64]) -> Result<()> {
    if let Some(bad) = u.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidSignal(format!("non-finite input sample {bad}")));
    }
    Ok(())
}

fn run(p: &FirFilter, r: &FirFilter, m: usize, nl: Nonlinearity, u: &[f64], record: bool) -> SimTrace {
    let pc = p.coeffs();
    let rt = &r.coeffs()[1..];
    let np = p.order();
    let nr = r.order();
    let mut uh = History::new(np);
    let mut eh: Vec<History> = (0..m).map(|_| History::new(nr)).collect();
    let len = u.len();
    let mut tr = SimTrace {
        u: u.to_vec(),
        psi: Vec::with_capacity(len),
        y: Vec::with_capacity(len),
        n: Vec::with_capacity(len),
        overload: Vec::with_capacity(len),
        x: Vec::with_capacity(if record { len } else { 0 }),
    };
    let mut s = vec![0.0; m];
    for (k, &uk) in u.iter().enumerate() {
        if record {
            let mut x = Vec::with_capacity(np + m * nr);
            x.extend_from_slice(&uh.buf);
            for h in &eh {
                x.extend_from_slice(&h.buf);
            }
            tr.x.push(x);
        }
        let pu = pc[0] * uk + uh.dot(&pc[1..]);
        // psi_m = p*u + R e_m, psi_{j-1} = psi_j + R e_{j-1}; the quantizer sees psi_1
        for (sj, h) in s.iter_mut().zip(&eh) {
            *sj = h.dot(rt);
        }
        let psi = pu + s.iter().sum::<f64>();
        let (y, over) = match nl {
            Nonlinearity::Quantizer(q) => (q.quantize(psi), q.overloads(psi)),
            Nonlinearity::Additive(w) => (psi + w[k], false),
        };
        let n = y - psi;
        // e_1 = n, e_j = e_{j-1} + s_{j-1}
        let mut e = n;
        for (j, h) in eh.iter_mut().enumerate() {
            h.push(e);
            e += s[j];
        }
        uh.push(uk);
        tr.psi.push(psi);
        tr.y.push(y);
        tr.n.push(n);
        tr.overload.push(over);
    }
    tr
}

/// Single error-feedback loop `psi = p * u + r * n`, `y = Q(psi)`, zero initial state.
pub fn simulate(p: &FirFilter, r: &FirFilter, q: &UniformQuantizer, u: &[f64]) -> Result<SimTrace> {
    simulate_cascade(p, r, 1, q, u)
}

/// `m` error-feedback stages sharing one quantizer; the NTF is `(1 + R)^m`.
pub fn simulate_cascade(
    p: &FirFilter,
    r: &FirFilter,
    m: usize,
    q: &UniformQuantizer,
    u: &[f64],
) -> Result<SimTrace> {
    simulate_cascade_with(p, r, m, q, u, true)
}

/// As [`simulate_cascade`], optionally skipping the state history.
pub fn simulate_cascade_with(
    p: &FirFilter,
    r: &FirFilter,
    m: usize,
    q: &UniformQuantizer,
    u: &[f64],
    record_state: bool,
) -> Result<SimTrace> {
    check_loop(r, m)?;
    check_input(u)?;
    Ok(run(p, r, m, Nonlinearity::Quantizer(q), u, record_state))
}

/// The cascade with the quantizer replaced by `y = psi + w`, so that
/// `y = P u + (1 + R)^m w` exactly.
pub fn simulate_linearized(p: &FirFilter, r: &FirFilter, m: usize, u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    check_loop(r, m)?;
    check_input(u)?;
    if w.len() != u.len() {
        return Err(Error::InvalidSignal(format!(
            "noise has {} samples, input has {}",
            w.len(),
            u.len()
        )));
    }
    check_input(w)?;
    Ok(run(p, r, m, Nonlinearity::Additive(w), u, false).y)
}

/// Runs the loop through the matrices of `cl` instead of delay lines.
pub fn simulate_state_space(cl: &ClosedLoop, q: &UniformQuantizer, u: &[f64]) -> Result<SimTrace> {
    check_input(u)?;
    let dim = cl.states();
    let mut x = nalgebra::DVector::zeros(dim);
    let len = u.len();
    let mut tr = SimTrace {
        u: u.to_vec(),
        psi: Vec::with_capacity(len),
        y: Vec::with_capacity(len),
        n: Vec::with_capacity(len),
        overload: Vec::with_capacity(len),
        x: Vec::with_capacity(len),
    };
    for &uk in u {
        tr.x.push(x.iter().copied().collect());
        let psi = (&cl.c_h * &x)[(0, 0)] + cl.d_h * uk;
        let y = q.quantize(psi);
        let n = y - psi;
        x = &cl.a_cl * x + &cl.b_u * uk + &cl.b_n * n;
        tr.psi.push(psi);
        tr.y.push(y);
        tr.n.push(n);
        tr.overload.push(q.overloads(psi));
    }
    Ok(tr)
}

/// States of the unquantized loop (`n = 0`) driven by `u`.
pub fn ideal_states(cl: &ClosedLoop, u: &[f64]) -> Vec<Vec<f64>> {
    let mut x = nalgebra::DVector::zeros(cl.states());
    let mut out = Vec::with_capacity(u.len());
    for &uk in u {
        out.push(x.iter().copied().collect());
        x = &cl.a_cl * x + &cl.b_u * uk;
    }
    out
}

/// `amplitude sin(omega k)`, `len` samples.
pub fn sine(amplitude: f64, omega: f64, len: usize) -> Vec<f64> {
    (0..len).map(|k| amplitude * (omega * k as f64).sin()).collect()
}

/// Uniform random input on `[-bound, bound]`, reproducible from `seed`.
pub fn random_input(bound: f64, len: usize, seed: u64) -> Result<Vec<f64>> {
    if !(bound.is_finite() && bound >= 0.0) {
        return Err(Error::InvalidSignal(format!("input bound must be finite and nonnegative, got {bound}")));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    Ok((0..len).map(|_| rng.random_range(-bound..=bound)).collect())
}

/// Observed extremes of one run against the no-overload and state-error bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateCheck {
    pub max_abs_n: f64,
    pub max_abs_psi: f64,
    /// Largest `|x(k) - x_I(k)|_2 - beta_k`; nonpositive when the envelope holds.
    pub envelope_excess: f64,
    /// `|n| <= delta` and `|psi| <= M + 1` at every sample.
    pub no_overload: bool,
    pub envelope_holds: bool,
}

impl CertificateCheck {
    pub fn holds(&self) -> bool {
        self.no_overload && self.envelope_holds
    }
}

/// Simulates the cascade on `u` beside its unquantized twin and measures both bounds.
pub fn check_certificates(
    p: &FirFilter,
    r: &FirFilter,
    m: usize,
    q: &UniformQuantizer,
    u: &[f64],
) -> Result<CertificateCheck> {
    let tr = simulate_cascade(p, r, m, q, u)?;
    let cl = cascade_realization(p, r, m)?;
    let ideal = ideal_states(&cl, u);
    let env = beta_envelope(&cl.a_cl, &cl.b_n, q.delta, u.len())?;
    let mut excess = f64::NEG_INFINITY;
    for (k, (x, xi)) in tr.x.iter().zip(&ideal).enumerate() {
        let d = x.iter().zip(xi).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        // rounding in the two runs
        let slack = 1e-9 * (1.0 + env.values[k]);
        excess = excess.max(d - env.values[k] - slack);
    }
    let max_abs_n = tr.n.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let max_abs_psi = tr.psi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(CertificateCheck {
        max_abs_n,
        max_abs_psi,
        envelope_excess: excess,
        no_overload: max_abs_n <= q.delta * (1.0 + 1e-12) && max_abs_psi <= q.no_overload() * (1.0 + 1e-12),
        envelope_holds: excess <= 0.0,
    })
}
