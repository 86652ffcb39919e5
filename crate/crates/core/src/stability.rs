//! Nonlinear stability certificates for error-feedback modulators.
//!
//! The quantizer input is `psi = p * u + r * n` with `|n| <= delta` while
//! `|psi| <= M + 1`. The l1 input bound, the closed-loop state-error envelope
//! and the norm-based sufficient conditions below all start from that relation.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{hinf_norm, l1_norm, FirFilter};

/// Quantizer with `|Q(psi) - psi| <= delta` whenever `|psi| <= M + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    pub m: f64,
    pub delta: f64,
}

impl QuantizerSpec {
    pub fn new(m: f64, delta: f64) -> Result<Self> {
        if !(m.is_finite() && m > 0.0) || !(delta.is_finite() && delta > 0.0) {
            return Err(Error::InvalidQuantizer(format!(
                "need M > 0 and delta > 0, got M = {m}, delta = {delta}"
            )));
        }
        Ok(Self { m, delta })
    }

    /// Step size `2 delta`.
    pub fn step(&self) -> f64 {
        2.0 * self.delta
    }

    /// Half-width `M + 1` of the no-overload input range.
    pub fn no_overload(&self) -> f64 {
        self.m + 1.0
    }
}

/// `(1 + R)^m - 1`: the loop filter seen by the quantizer in an `m`-stage cascade.
pub fn effective_loop_filter(r: &FirFilter, m: usize) -> Result<FirFilter> {
    if m == 0 {
        return Err(Error::InvalidSpec("cascade needs at least one stage".into()));
    }
    let ntf = FirFilter::ntf_from_loop_filter(r)?;
    FirFilter::loop_filter_from_ntf(&ntf.pow(m))
}

/// Largest `||u||_inf` for which `||p||_1 ||u||_inf + delta ||r||_1 <= M + 1`.
///
/// A negative value means no input level is certified.
pub fn input_bound(p: &FirFilter, r: &FirFilter, q: &QuantizerSpec) -> Result<f64> {
    let lp = l1_norm(p);
    if lp <= 0.0 {
        return Err(Error::InvalidFilter("pre-filter has zero l1 norm".into()));
    }
    Ok((q.no_overload() - q.delta * l1_norm(r)) / lp)
}

/// `||p||_1 u_inf + delta ||r||_1 <= M + 1`.
pub fn l1_condition(p: &FirFilter, r: &FirFilter, q: &QuantizerSpec, u_inf: f64) -> bool {
    l1_norm(p) * u_inf + q.delta * l1_norm(r) <= q.no_overload()
}

/// `||r||_1 <= (M + 1 - u_inf) / delta`, the unit-`||p||_1` form of [`l1_condition`].
pub fn loop_l1_condition(r: &FirFilter, q: &QuantizerSpec, u_inf: f64) -> bool {
    l1_norm(r) <= (q.no_overload() - u_inf) / q.delta
}

/// `||1 + r||_1 <= (M + 1 + delta - u_inf) / delta`.
pub fn ntf_l1_condition(ntf: &FirFilter, q: &QuantizerSpec, u_inf: f64) -> bool {
    l1_norm(ntf) <= (q.no_overload() + q.delta - u_inf) / q.delta
}

/// `||1 + R||_inf <= (M + 1 + delta - u_inf) / ((2N + 1) delta)`.
///
/// Sufficient for [`ntf_l1_condition`] through `||h||_1 <= (2N + 1) ||H||_inf`,
/// and very conservative for long filters.
pub fn hinf_condition(ntf: &FirFilter, q: &QuantizerSpec, u_inf: f64) -> bool {
    let n = ntf.order() as f64;
    hinf_norm(ntf) <= (q.no_overload() + q.delta - u_inf) / ((2.0 * n + 1.0) * q.delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeeCheck {
    pub passes: bool,
    /// Grid estimate of `||1 + R||_inf`.
    pub norm: f64,
    /// `gamma0 - norm`.
    pub margin: f64,
}

/// `||1 + R||_inf < gamma0` on the refined grid. Heuristic only.
pub fn lee_check(ntf: &FirFilter, gamma0: f64) -> LeeCheck {
    let norm = hinf_norm(ntf);
    LeeCheck {
        passes: norm < gamma0,
        norm,
        margin: gamma0 - norm,
    }
}

/// Closed-loop state model driven by the input and the quantization error:
/// `x(k+1) = A x + B_u u + B_n n`, `psi = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub a_cl: DMatrix<f64>,
    pub b_u: DVector<f64>,
    pub b_n: DVector<f64>,
    pub c_h: RowDVector<f64>,
    pub d_h: f64,
}

impl ClosedLoop {
    pub fn states(&self) -> usize {
        self.a_cl.nrows()
    }
}

/// Delay-line block: `x(k+1) = S x(k) + e_n v(k)` keeps `v(k-n), ..., v(k-1)`.
fn delay_line(n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        a[(i, i + 1)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    if n > 0 {
        b[n - 1] = 1.0;
    }
    (a, b)
}

/// Row `(f_n, ..., f_1)` reading `sum_{i>=1} f_i v(k-i)` off a delay line of length `n`.
fn tap_row(f: &FirFilter, n: usize) -> RowDVector<f64> {
    let c = f.coeffs();
    RowDVector::from_iterator(n, (1..=n).rev().map(|i| c.get(i).copied().unwrap_or(0.0)))
}

/// Realization of the `m`-stage cascade whose state stacks a delay line of
/// `u` (length `deg p`) and one delay line of length `N` per stage holding that
/// stage's error `e_j = (1 + R)^{j-1} n`. For `m = 1` this is the single
/// error-feedback loop.
pub fn cascade_realization(p: &FirFilter, r: &FirFilter, m: usize) -> Result<ClosedLoop> {
    if m == 0 {
        return Err(Error::InvalidSpec("cascade needs at least one stage".into()));
    }
    if !r.is_strictly_causal() {
        return Err(Error::InvalidFilter("loop filter must be strictly causal".into()));
    }
    let np = p.order();
    let nr = r.order();
    let dim = np + m * nr;
    let mut a = DMatrix::zeros(dim, dim);
    let mut b_u = DVector::zeros(dim);
    let mut b_n = DVector::zeros(dim);
    let mut c_h = RowDVector::zeros(dim);
    let (sp, ep) = delay_line(np);
    a.view_mut((0, 0), (np, np)).copy_from(&sp);
    b_u.rows_mut(0, np).copy_from(&ep);
    c_h.columns_mut(0, np).copy_from(&tap_row(p, np));
    let (sr, er) = delay_line(nr);
    let cr = tap_row(r, nr);
    // e_j(k) = n(k) + sum_{l<j} C_r x_l(k)
    let coupling = &er * &cr;
    for j in 0..m {
        let oj = np + j * nr;
        a.view_mut((oj, oj), (nr, nr)).copy_from(&sr);
        for l in 0..j {
            let ol = np + l * nr;
            a.view_mut((oj, ol), (nr, nr)).copy_from(&coupling);
        }
        b_n.rows_mut(oj, nr).copy_from(&er);
        // psi_1 = p * u + sum_j C_r x_j
        c_h.columns_mut(oj, nr).copy_from(&cr);
    }
    Ok(ClosedLoop {
        a_cl: a,
        b_u,
        b_n,
        c_h,
        d_h: p.coeffs()[0],
    })
}

/// Shortest `L = n 2^s` with `||A^L||_2 < 1`, or `None` when none is found.
fn contraction_power(a: &DMatrix<f64>) -> Option<(usize, f64)> {
    let n = a.nrows().max(1);
    let mut p = DMatrix::identity(a.nrows(), a.nrows());
    for _ in 0..n {
        p = &p * a;
    }
    let mut len = n;
    for _ in 0..24 {
        let q = p.norm().min(spectral_norm(&p));
        if q < 1.0 {
            return Some((len, q));
        }
        p = &p * &p;
        len *= 2;
    }
    None
}

fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().svd(false, false).singular_values.max()
}

/// Largest eigenvalue magnitude.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// `beta_k = delta sum_{i<k} ||A^i B_n||_2` for `k = 0..len`, with its limit.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaEnvelope {
    /// `values[k] = beta_k`; `beta_0 = 0`.
    pub values: Vec<f64>,
    /// `beta_inf = delta ||g||_1`.
    pub limit: f64,
    /// Upper bound on `beta_inf - limit`.
    pub tail_bound: f64,
}

impl BetaEnvelope {
    /// `beta_k`, falling back to the limit past the stored range.
    pub fn at(&self, k: usize) -> f64 {
        self.values.get(k).copied().unwrap_or(self.limit)
    }
}

const TAIL_TOL: f64 = 1e-12;
const MAX_TERMS: usize = 1_000_000;

/// Envelope of the state error `|x(k) - x_I(k)|` between the quantized loop
/// and its unquantized twin.
pub fn beta_envelope(a_cl: &DMatrix<f64>, b_n: &DVector<f64>, delta: f64, len: usize) -> Result<BetaEnvelope> {
    if a_cl.nrows() != a_cl.ncols() || a_cl.nrows() != b_n.len() {
        return Err(Error::Dimension(format!(
            "A is {}x{}, B_n has {} rows",
            a_cl.nrows(),
            a_cl.ncols(),
            b_n.len()
        )));
    }
    let Some((block, q)) = contraction_power(a_cl) else {
        return Err(Error::Unstable(spectral_radius(a_cl)));
    };
    let mut terms: Vec<f64> = Vec::new();
    let mut v = b_n.clone();
    let mut sum = 0.0;
    let mut tail;
    let mut i = 0;
    loop {
        // tail after i terms <= (sum of the next `block` terms) / (1 - q)
        while terms.len() < i + block {
            terms.push(v.norm());
            v = a_cl * v;
        }
        let window: f64 = terms[i..i + block].iter().sum();
        tail = delta * window / (1.0 - q);
        if window == 0.0 || tail <= TAIL_TOL * (1.0 + delta * sum) {
            break;
        }
        if i >= MAX_TERMS {
            break;
        }
        sum += terms[i];
        i += 1;
    }
    let need = len.max(1);
    while terms.len() < need {
        terms.push(v.norm());
        v = a_cl * v;
    }
    let mut values = Vec::with_capacity(len);
    let mut acc = 0.0;
    for k in 0..len {
        values.push(delta * acc);
        acc += terms[k];
    }
    Ok(BetaEnvelope {
        values,
        limit: delta * sum,
        tail_bound: tail,
    })
}

/// `||g||_1 = sum_i ||A^i B_n||_2` for the noise-to-state response `g`.
pub fn noise_to_state_l1(a_cl: &DMatrix<f64>, b_n: &DVector<f64>) -> Result<f64> {
    Ok(beta_envelope(a_cl, b_n, 1.0, 0)?.limit)
}

/// Summary of all stability figures for a design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Certified input amplitude `(M + 1 - delta ||r||_1) / ||p||_1`.
    pub u_max: f64,
    pub l1_r: f64,
    pub l1_p: f64,
    /// Grid estimate of `||1 + R||_inf` for the overall NTF.
    pub lee_value: f64,
    pub lee_passes: bool,
    /// Input amplitude the boolean conditions were evaluated at.
    pub u_inf: f64,
    pub l1_sufficient: bool,
    pub hinf_sufficient: bool,
    pub beta_limit: f64,
    pub g_l1: f64,
}

/// Stability figures for the `m`-stage cascade of `r` with pre-filter `p`,
/// evaluated at input amplitude `u_inf` and Lee threshold `gamma0`.
pub fn stability_report(
    p: &FirFilter,
    r: &FirFilter,
    m: usize,
    q: &QuantizerSpec,
    u_inf: f64,
    gamma0: f64,
) -> Result<StabilityReport> {
    let reff = effective_loop_filter(r, m)?;
    let ntf = FirFilter::ntf_from_loop_filter(&reff)?;
    let cl = cascade_realization(p, r, m)?;
    let lee = lee_check(&ntf, gamma0);
    let g_l1 = noise_to_state_l1(&cl.a_cl, &cl.b_n)?;
    Ok(StabilityReport {
        u_max: input_bound(p, &reff, q)?,
        l1_r: l1_norm(&reff),
        l1_p: l1_norm(p),
        lee_value: lee.norm,
        lee_passes: lee.passes,
        u_inf,
        l1_sufficient: l1_condition(p, &reff, q, u_inf),
        hinf_sufficient: hinf_condition(&ntf, q, u_inf),
        beta_limit: q.delta * g_l1,
        g_l1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fir(c: &[f64]) -> FirFilter {
        FirFilter::new(c.to_vec()).unwrap()
    }

    fn q(m: f64, d: f64) -> QuantizerSpec {
        QuantizerSpec::new(m, d).unwrap()
    }

    #[test]
    fn quantizer_validation() {
        assert!(QuantizerSpec::new(0.0, 1.0).is_err());
        assert!(QuantizerSpec::new(1.0, -1.0).is_err());
        let s = q(1.0, 0.5);
        assert_eq!(s.step(), 1.0);
        assert_eq!(s.no_overload(), 2.0);
    }

    #[test]
    fn bound_without_feedback_is_full_range() {
        let b = input_bound(&FirFilter::identity(), &FirFilter::zero(4), &q(1.0, 0.5)).unwrap();
        assert_eq!(b, 2.0);
    }

    #[test]
    fn bound_scales_with_prefilter() {
        let r = fir(&[0.0, 1.0, -0.5]);
        let b = input_bound(&fir(&[2.0]), &r, &q(3.0, 1.0)).unwrap();
        assert!((b - (4.0 - 1.5) / 2.0).abs() < 1e-15);
        assert!(input_bound(&fir(&[0.0]), &r, &q(3.0, 1.0)).is_err());
    }

    #[test]
    fn effective_filter_of_two_stages() {
        let r = fir(&[0.0, -1.0]);
        // (1 - z^-1)^2 - 1 = -2 z^-1 + z^-2
        assert_eq!(effective_loop_filter(&r, 2).unwrap().coeffs(), &[0.0, -2.0, 1.0]);
        assert_eq!(effective_loop_filter(&r, 1).unwrap(), r);
        assert!(effective_loop_filter(&r, 0).is_err());
    }

    #[test]
    fn lee_examples() {
        let one = lee_check(&FirFilter::identity(), 1.5);
        assert!(one.passes);
        assert!((one.margin - 0.5).abs() < 1e-12);
        let two = lee_check(&fir(&[1.0, 1.0]), 1.5);
        assert!(!two.passes);
        assert!((two.norm - 2.0).abs() < 1e-12);
    }

    #[test]
    fn hinf_condition_at_order_zero() {
        let s = q(1.0, 0.5);
        let ntf = FirFilter::identity();
        // ||1||_inf = 1 <= (2 + 0.5 - u) / 0.5 holds up to u = 2
        assert!(hinf_condition(&ntf, &s, 2.0));
        assert!(!hinf_condition(&ntf, &s, 2.0 + 1e-9));
    }

    #[test]
    fn delay_envelope_is_one() {
        let a = DMatrix::zeros(1, 1);
        let b = DVector::from_element(1, 1.0);
        let env = beta_envelope(&a, &b, 1.0, 6).unwrap();
        assert_eq!(env.values, vec![0.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(env.limit, 1.0);
        assert_eq!(env.tail_bound, 0.0);
    }

    #[test]
    fn scalar_envelope_matches_geometric_sum() {
        let a = DMatrix::from_element(1, 1, 0.5);
        let b = DVector::from_element(1, 1.0);
        let env = beta_envelope(&a, &b, 0.25, 10).unwrap();
        assert!((env.limit - 0.5).abs() <= 1e-12);
        for w in env.values.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert!((env.at(3) - 0.25 * 1.75).abs() < 1e-15);
    }

    #[test]
    fn unstable_loop_is_rejected() {
        let a = DMatrix::from_element(1, 1, 1.01);
        let b = DVector::from_element(1, 1.0);
        assert!(matches!(beta_envelope(&a, &b, 1.0, 3), Err(Error::Unstable(_))));
    }

    #[test]
    fn single_stage_realization_is_companion() {
        let r = fir(&[0.0, 0.7, -0.2]);
        let cl = cascade_realization(&FirFilter::identity(), &r, 1).unwrap();
        assert_eq!(cl.states(), 2);
        assert_eq!(cl.c_h, RowDVector::from_vec(vec![-0.2, 0.7]));
        assert_eq!(cl.d_h, 1.0);
        assert_eq!(cl.b_u.norm(), 0.0);
        // pure delay line: ||g||_1 = N
        assert!((noise_to_state_l1(&cl.a_cl, &cl.b_n).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cascade_realization_reproduces_effective_filter() {
        let r = fir(&[0.0, 0.4, -0.3, 0.1]);
        let m = 3;
        let cl = cascade_realization(&FirFilter::identity(), &r, m).unwrap();
        let reff = effective_loop_filter(&r, m).unwrap();
        // impulse response of n -> psi is C A^{k-1} B_n
        let mut v = cl.b_n.clone();
        for k in 1..=reff.order() + 3 {
            let h = (&cl.c_h * &v)[(0, 0)];
            let want = reff.coeffs().get(k).copied().unwrap_or(0.0);
            assert!((h - want).abs() < 1e-12, "k={k}: {h} vs {want}");
            v = &cl.a_cl * v;
        }
        assert!(spectral_radius(&cl.a_cl) < 1.0);
    }

    #[test]
    fn report_for_trivial_loop() {
        let rep = stability_report(&FirFilter::identity(), &FirFilter::zero(3), 2, &q(1.0, 0.5), 0.5, 1.5).unwrap();
        assert_eq!(rep.u_max, 2.0);
        assert_eq!(rep.l1_r, 0.0);
        assert!(rep.lee_passes);
        assert!(rep.l1_sufficient);
        // padded order 6 makes the norm test demand ||T||_inf <= 4 / 13
        assert!(!rep.hinf_sufficient);
    }
}
