//! Min-max NTF synthesis.
//!
//! The loop filter `R(z) = sum_{k=1..N} a_k z^{-k}` is realized in companion
//! form so that the NTF `1 + R` has state matrices `(A, B, C(a), 1)` with the
//! taps entering only through `C`. Each band bound `|1 + R| < gamma` on an
//! interval becomes a generalized KYP inequality, affine in `(X, Y, a, gamma^2)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::{AffineMatrixExpr as Expr, LmiProblem, Sense, VarRef};
use crate::lti::{band_max, hinf_norm, shift_matrix, unit_input, FirFilter};
use crate::sdp::{self, SdpStatus, SolverOptions};

/// A frequency interval `[center - halfwidth, center + halfwidth]`; a zero
/// center denotes the lowpass band `[0, halfwidth]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub center: f64,
    pub halfwidth: f64,
}

impl BandSpec {
    pub fn lowpass(halfwidth: f64) -> Result<Self> {
        Self::new(0.0, halfwidth)
    }

    pub fn new(center: f64, halfwidth: f64) -> Result<Self> {
        let b = Self { center, halfwidth };
        b.validate()?;
        Ok(b)
    }

    pub fn is_lowpass(&self) -> bool {
        self.center == 0.0
    }

    pub fn lo(&self) -> f64 {
        if self.is_lowpass() {
            0.0
        } else {
            self.center - self.halfwidth
        }
    }

    pub fn hi(&self) -> f64 {
        self.center + self.halfwidth
    }

    pub fn validate(&self) -> Result<()> {
        let (c, h) = (self.center, self.halfwidth);
        let bad = |reason: &str| Error::InvalidBand {
            lo: c - h,
            hi: c + h,
            reason: reason.into(),
        };
        if !c.is_finite() || !h.is_finite() {
            return Err(bad("non-finite band"));
        }
        if !(0.0..PI).contains(&c) {
            return Err(bad("center must lie in [0, pi)"));
        }
        if h <= 0.0 {
            return Err(bad("halfwidth must be positive"));
        }
        if c > 0.0 && (c - h < -1e-12 || c + h > PI + 1e-12) {
            return Err(bad("band leaves [0, pi]"));
        }
        if c == 0.0 && h > PI + 1e-12 {
            return Err(bad("band leaves [0, pi]"));
        }
        Ok(())
    }
}

/// `mu`-fold NTF zero at `e^{j freq}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroAssignment {
    pub freq: f64,
    pub multiplicity: usize,
}

impl ZeroAssignment {
    pub fn new(freq: f64, multiplicity: usize) -> Result<Self> {
        if !(0.0..=PI).contains(&freq) {
            return Err(Error::FrequencyDomain(freq));
        }
        if multiplicity == 0 {
            return Err(Error::InvalidSpec("zero multiplicity must be at least 1".into()));
        }
        Ok(Self { freq, multiplicity })
    }

    fn is_real(&self) -> bool {
        self.freq == 0.0 || self.freq == PI
    }

    /// Number of real linear equations imposed on the taps.
    pub fn equation_count(&self) -> usize {
        if self.is_real() {
            self.multiplicity
        } else {
            2 * self.multiplicity
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    pub order: usize,
    pub bands: Vec<BandSpec>,
    /// H-infinity cap on `1 + R` over `[0, pi]`, linear units.
    pub hinf_cap: Option<f64>,
    pub zeros: Vec<ZeroAssignment>,
    pub solver: SolverOptions,
}

impl DesignSpec {
    pub fn lowpass(order: usize, halfwidth: f64) -> Result<Self> {
        Ok(Self {
            order,
            bands: vec![BandSpec::lowpass(halfwidth)?],
            hinf_cap: None,
            zeros: Vec::new(),
            solver: SolverOptions::default(),
        })
    }

    pub fn with_cap(mut self, cap: f64) -> Self {
        self.hinf_cap = Some(cap);
        self
    }

    pub fn with_zero(mut self, z: ZeroAssignment) -> Self {
        self.zeros.push(z);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::InvalidSpec("order must be at least 1".into()));
        }
        if self.bands.is_empty() {
            return Err(Error::InvalidSpec("at least one band is required".into()));
        }
        for b in &self.bands {
            b.validate()?;
        }
        if let Some(g) = self.hinf_cap {
            if g.is_nan() || g <= 1.0 {
                return Err(Error::InvalidSpec(format!(
                    "H-infinity cap must exceed 1 (the NTF starts with a unit tap), got {g}"
                )));
            }
        }
        let eqs: usize = self.zeros.iter().map(|z| z.equation_count()).sum();
        if eqs >= self.order {
            return Err(Error::InvalidSpec(format!(
                "{eqs} zero equations leave no freedom for order {}",
                self.order
            )));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandResult {
    pub band: BandSpec,
    /// Certified bound `sqrt(t)` from the solver.
    pub gamma: f64,
    /// Refined grid maximum of `|1 + R|` on the band.
    pub grid_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub order: usize,
    pub r: FirFilter,
    pub ntf: FirFilter,
    pub bands: Vec<BandResult>,
    pub hinf_cap: Option<f64>,
    /// Refined estimate of `||1 + R||_inf`.
    pub hinf_norm: f64,
    pub status: SdpStatus,
    pub iterations: usize,
    pub gap: f64,
    pub max_violation: f64,
}

/// Decision variables of one band inequality.
#[derive(Debug, Clone, Copy)]
pub struct GkypVars {
    pub x: VarRef,
    pub y: VarRef,
}

fn input_column(n: usize) -> DMatrix<f64> {
    let b = unit_input(n);
    DMatrix::from_column_slice(n, 1, b.as_slice())
}

fn check_alpha(n: usize, alpha: &[VarRef]) -> Result<()> {
    if n == 0 || alpha.len() != n {
        return Err(Error::Dimension(format!(
            "expected {n} tap variables, got {}",
            alpha.len()
        )));
    }
    Ok(())
}

/// Row `C(a) = (a_N, ..., a_1)`.
fn c_row(alpha: &[VarRef]) -> Result<Expr> {
    let n = alpha.len();
    let mut c = Expr::zeros(1, n);
    for (j, a) in alpha.iter().rev().enumerate() {
        c.add_scalar_at(a, 0, j, 1.0)?;
    }
    Ok(c)
}

fn tail(alpha: &[VarRef], t: &Expr) -> Result<(Expr, Expr, Expr)> {
    let c = c_row(alpha)?;
    let one = Expr::scalar_constant(1.0);
    let minus_t = t.scale(-1.0);
    Ok((c, one, minus_t))
}

/// `[[M1, M2, C^T], [M2^T, M3, 1], [C, 1, -1]]` for given `M1..M3` pieces.
fn bordered(m1: Expr, m2: Expr, m3: Expr, c: &Expr) -> Result<Expr> {
    let one = Expr::scalar_constant(1.0);
    let m2t = m2.transpose();
    Expr::blocks(&[
        vec![m1, m2, c.transpose()],
        vec![m2t, m3, one.clone()],
        vec![c.clone(), one, Expr::scalar_constant(-1.0)],
    ])
}

fn lowpass_block(
    p: &mut LmiProblem,
    n: usize,
    halfwidth: f64,
    alpha: &[VarRef],
    t: &Expr,
) -> Result<(GkypVars, Expr)> {
    bandpass_block(p, n, 0.0, halfwidth, alpha, t, false)
}

/// Real embedding of the band inequality. With `embed == false`, returns the
/// real part alone (valid when `center == 0`).
fn bandpass_block(
    p: &mut LmiProblem,
    n: usize,
    center: f64,
    halfwidth: f64,
    alpha: &[VarRef],
    t: &Expr,
    embed: bool,
) -> Result<(GkypVars, Expr)> {
    check_alpha(n, alpha)?;
    let a = shift_matrix(n);
    let at = a.transpose();
    let b = input_column(n);
    let bt = b.transpose();
    let xv = p.declare_symmetric(n);
    let yv = p.declare_symmetric(n);
    let x = Expr::var(&xv);
    let y = Expr::var(&yv);
    let (cw, sw) = (center.cos(), center.sin());
    let co = halfwidth.cos();

    let ya = y.right_mul(&a)?;
    let aty = y.left_mul(&at)?;
    let m1 = x.sandwich(&at, &a)?.try_add(&aty.try_add(&ya)?.scale(cw))?
        .try_add(&x.scale(-1.0))?
        .try_add(&y.scale(-2.0 * co))?;
    let yb = y.right_mul(&b)?;
    let m2 = x.sandwich(&at, &b)?.try_add(&yb.scale(cw))?;
    let (c, _, minus_t) = tail(alpha, t)?;
    let m3 = x.sandwich(&bt, &b)?.try_add(&minus_t)?;
    let mr = bordered(m1, m2, m3, &c)?;
    if !embed {
        return Ok((GkypVars { x: xv, y: yv }, mr));
    }
    let mi1 = aty.try_add(&ya.scale(-1.0))?.scale(sw);
    let mi2 = yb.scale(-sw);
    let mi = Expr::blocks(&[
        vec![mi1, mi2.clone(), Expr::zeros(n, 1), ],
        vec![mi2.transpose().scale(-1.0), Expr::zeros(1, 1), Expr::zeros(1, 1)],
        vec![Expr::zeros(1, n), Expr::zeros(1, 1), Expr::zeros(1, 1)],
    ])?;
    let full = Expr::blocks(&[
        vec![mr.clone(), mi.scale(-1.0)],
        vec![mi, mr],
    ])?;
    Ok((GkypVars { x: xv, y: yv }, full))
}

fn push_band(p: &mut LmiProblem, vars: GkypVars, block: Expr) -> Result<GkypVars> {
    p.add_strict_lmi(block, Sense::Negative)?;
    p.add_strict_lmi(Expr::var(&vars.y), Sense::Positive)?;
    Ok(vars)
}

/// Lowpass bound `|1 + R| < sqrt(t)` on `[0, halfwidth]`.
pub fn build_lowpass(
    p: &mut LmiProblem,
    n: usize,
    halfwidth: f64,
    alpha: &[VarRef],
    t: &VarRef,
) -> Result<GkypVars> {
    if !(halfwidth > 0.0 && halfwidth < PI) {
        return Err(Error::InvalidBand {
            lo: 0.0,
            hi: halfwidth,
            reason: "lowpass halfwidth must lie in (0, pi)".into(),
        });
    }
    let (v, e) = lowpass_block(p, n, halfwidth, alpha, &Expr::var(t))?;
    push_band(p, v, e)
}

/// Bandpass bound on `[center - halfwidth, center + halfwidth]`, as the doubled
/// real form of the complex inequality.
pub fn build_bandpass_real(
    p: &mut LmiProblem,
    n: usize,
    center: f64,
    halfwidth: f64,
    alpha: &[VarRef],
    t: &VarRef,
) -> Result<GkypVars> {
    BandSpec::new(center, halfwidth)?;
    let (v, e) = bandpass_block(p, n, center, halfwidth, alpha, &Expr::var(t), true)?;
    push_band(p, v, e)
}

/// One doubled band inequality per band sharing `alpha`; adds `sum t_l` to
/// the objective.
pub fn build_multiband(
    p: &mut LmiProblem,
    n: usize,
    bands: &[BandSpec],
    alpha: &[VarRef],
    t: &[VarRef],
) -> Result<Vec<GkypVars>> {
    if bands.is_empty() {
        return Err(Error::InvalidSpec("multi-band design needs at least one band".into()));
    }
    if bands.len() != t.len() {
        return Err(Error::Dimension(format!(
            "{} bands but {} bound variables",
            bands.len(),
            t.len()
        )));
    }
    let mut out = Vec::with_capacity(bands.len());
    for (b, tl) in bands.iter().zip(t) {
        out.push(build_bandpass_real(p, n, b.center, b.halfwidth, alpha, tl)?);
        p.add_objective(tl, 1.0)?;
    }
    Ok(out)
}

/// Bounded-real inequality `||1 + R||_inf < cap`; returns the certificate `Z`.
pub fn build_hinf_cap(p: &mut LmiProblem, n: usize, cap: f64, alpha: &[VarRef]) -> Result<VarRef> {
    check_alpha(n, alpha)?;
    if cap.is_nan() || cap <= 1.0 {
        return Err(Error::InvalidSpec(format!("H-infinity cap must exceed 1, got {cap}")));
    }
    let a = shift_matrix(n);
    let at = a.transpose();
    let b = input_column(n);
    let bt = b.transpose();
    let zv = p.declare_symmetric(n);
    let z = Expr::var(&zv);
    let m1 = z.sandwich(&at, &a)?.try_add(&z.scale(-1.0))?;
    let m2 = z.sandwich(&at, &b)?;
    let m3 = z
        .sandwich(&bt, &b)?
        .try_add(&Expr::scalar_constant(-cap * cap))?;
    let c = c_row(alpha)?;
    p.add_strict_lmi(bordered(m1, m2, m3, &c)?, Sense::Negative)?;
    p.add_strict_lmi(z, Sense::Positive)?;
    Ok(zv)
}

fn falling(p: usize, k: usize) -> f64 {
    if k > p {
        return 0.0;
    }
    ((p - k + 1)..=p).fold(1.0, |a, v| a * v as f64)
}

/// Linear equations `sum_k coef_k a_k = rhs` (index 0 is `a_1`) placing the
/// requested zeros of `nu(z) = z^N + sum a_k z^{N-k}`.
pub fn zero_equalities(z: &ZeroAssignment, n: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    ZeroAssignment::new(z.freq, z.multiplicity)?;
    if z.equation_count() >= n {
        return Err(Error::InvalidSpec(format!(
            "{} equations over-constrain order {n}",
            z.equation_count()
        )));
    }
    let w = z.freq;
    let mut out = Vec::new();
    for d in 0..z.multiplicity {
        // d-th derivative of z^p at e^{jw}: p!/(p-d)! e^{jw(p-d)}
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        for k in 1..=n {
            let pw = n - k;
            let f = falling(pw, d);
            if f != 0.0 {
                let ph = w * (pw as f64 - d as f64);
                re[k - 1] = f * ph.cos();
                im[k - 1] = f * ph.sin();
            }
        }
        let f = falling(n, d);
        let ph = w * (n as f64 - d as f64);
        out.push((re, -f * ph.cos()));
        if !z.is_real() {
            out.push((im, -f * ph.sin()));
        }
    }
    Ok(out)
}

fn add_zero_constraints(p: &mut LmiProblem, z: &ZeroAssignment, alpha: &[VarRef]) -> Result<()> {
    for (coefs, rhs) in zero_equalities(z, alpha.len())? {
        let terms: Vec<(VarRef, f64)> = alpha
            .iter()
            .zip(&coefs)
            .filter(|(_, c)| c.abs() > 1e-15)
            .map(|(a, c)| (*a, *c))
            .collect();
        p.add_equality(&terms, rhs)?;
    }
    Ok(())
}

/// Solves the full synthesis problem described by `spec`.
pub fn design(spec: &DesignSpec) -> Result<DesignResult> {
    spec.validate()?;
    for b in &spec.bands {
        if b.is_lowpass() && b.halfwidth >= PI {
            return Err(Error::Infeasible(
                "band covers [0, pi]; a strictly causal loop filter cannot push the NTF below 1 there"
                    .into(),
            ));
        }
    }
    let n = spec.order;
    let mut p = LmiProblem::new();
    let alpha: Vec<VarRef> = (0..n).map(|_| p.declare_scalar()).collect();
    let ts: Vec<VarRef> = spec.bands.iter().map(|_| p.declare_scalar()).collect();
    for (b, t) in spec.bands.iter().zip(&ts) {
        if b.is_lowpass() {
            build_lowpass(&mut p, n, b.halfwidth, &alpha, t)?;
        } else {
            build_bandpass_real(&mut p, n, b.center, b.halfwidth, &alpha, t)?;
        }
        p.add_objective(t, 1.0)?;
    }
    if let Some(cap) = spec.hinf_cap {
        build_hinf_cap(&mut p, n, cap, &alpha)?;
    }
    for z in &spec.zeros {
        add_zero_constraints(&mut p, z, &alpha)?;
    }
    let sdp = p.compile(spec.solver.epsilon)?;
    let sol = sdp::solve(&sdp, &spec.solver)?;
    match sol.status {
        SdpStatus::Optimal => {}
        SdpStatus::Infeasible | SdpStatus::Unbounded => {
            return Err(Error::Infeasible(format!(
                "solver reported {:?} after {} iterations",
                sol.status, sol.iterations
            )))
        }
        SdpStatus::NumericalTrouble | SdpStatus::IterationLimit => {
            return Err(Error::NumericalTrouble(format!(
                "status {:?} after {} iterations, gap {:.3e}, violation {:.3e}",
                sol.status, sol.iterations, sol.gap, sol.max_violation
            )))
        }
    }
    let mut taps = Vec::with_capacity(n + 1);
    taps.push(0.0);
    taps.extend(alpha.iter().map(|a| sol.x[a.offset()]));
    let r = FirFilter::new(taps)?;
    let ntf = FirFilter::ntf_from_loop_filter(&r)?;
    let mut bands = Vec::with_capacity(spec.bands.len());
    for (b, t) in spec.bands.iter().zip(&ts) {
        let gamma = sol.x[t.offset()].max(0.0).sqrt();
        let grid_max = band_max(&ntf, b.lo().max(0.0), b.hi().min(PI))?;
        if grid_max > gamma * (1.0 + 1e-2) {
            return Err(Error::Verification(format!(
                "band [{:.6}, {:.6}]: grid max {grid_max:.9} exceeds certified {gamma:.9}",
                b.lo(),
                b.hi()
            )));
        }
        bands.push(BandResult {
            band: *b,
            gamma,
            grid_max,
        });
    }
    Ok(DesignResult {
        order: n,
        hinf_norm: hinf_norm(&ntf),
        r,
        ntf,
        bands,
        hinf_cap: spec.hinf_cap,
        status: sol.status,
        iterations: sol.iterations,
        gap: sol.gap,
        max_violation: sol.max_violation,
    })
}

/// Largest `s <= 1` with the band inequality for the fixed `ntf` and bound
/// `gamma` holding with margin `s`. A nonpositive value means no certificate
/// `(X, Y)` exists for that bound.
pub fn band_certificate_margin(
    ntf: &FirFilter,
    band: &BandSpec,
    gamma: f64,
    opts: &SolverOptions,
) -> Result<f64> {
    band.validate()?;
    let coeffs = ntf.coeffs();
    if coeffs[0] != 1.0 {
        return Err(Error::InvalidFilter("NTF must have a unit leading tap".into()));
    }
    let n = ntf.order();
    if n == 0 {
        return Err(Error::InvalidFilter("NTF has no loop-filter taps".into()));
    }
    let mut p = LmiProblem::new();
    let alpha: Vec<VarRef> = (0..n).map(|_| p.declare_scalar()).collect();
    for (k, a) in alpha.iter().enumerate() {
        p.add_equality(&[(*a, 1.0)], coeffs[k + 1])?;
    }
    let t = Expr::scalar_constant(gamma * gamma);
    let (vars, block) = if band.is_lowpass() {
        lowpass_block(&mut p, n, band.halfwidth, &alpha, &t)?
    } else {
        bandpass_block(&mut p, n, band.center, band.halfwidth, &alpha, &t, true)?
    };
    let s = p.declare_scalar();
    let dim = block.rows();
    let si = |k: usize| Expr::scaled_var(&s, &DMatrix::identity(k, k));
    p.add_strict_lmi(block.try_add(&si(dim))?, Sense::Negative)?;
    p.add_strict_lmi(Expr::var(&vars.y).try_add(&si(n).scale(-1.0))?, Sense::Positive)?;
    p.add_strict_lmi(
        Expr::scalar_constant(1.0).try_add(&Expr::var(&s).scale(-1.0))?,
        Sense::Positive,
    )?;
    p.add_objective(&s, -1.0)?;
    let sdp = p.compile(opts.epsilon)?;
    let sol = sdp::solve(&sdp, opts)?;
    match sol.status {
        SdpStatus::Optimal => Ok(sol.x[s.offset()]),
        st => Err(Error::NumericalTrouble(format!(
            "margin problem ended with {st:?} after {} iterations",
            sol.iterations
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n1_lowpass_blocks_match_hand_substitution() {
        // N = 1, halfwidth pi/2: M1 = -X, M2 = Y, M3 = X - t
        let mut p = LmiProblem::new();
        let a = [p.declare_scalar()];
        let t = p.declare_scalar();
        let (v, e) = lowpass_block(&mut p, 1, PI / 2.0, &a, &Expr::var(&t)).unwrap();
        let mut val = vec![0.0; p.num_entries()];
        val[a[0].offset()] = 0.3;
        val[t.offset()] = 2.0;
        val[v.x.offset()] = 5.0;
        val[v.y.offset()] = 7.0;
        let m = e.evaluate(&val);
        let expect = DMatrix::from_row_slice(3, 3, &[-5.0, 7.0, 0.3, 7.0, 3.0, 1.0, 0.3, 1.0, -1.0]);
        assert!((m - expect).abs().max() < 1e-14);
    }

    #[test]
    fn zero_center_embedding_decouples() {
        let mut p = LmiProblem::new();
        let a: Vec<VarRef> = (0..3).map(|_| p.declare_scalar()).collect();
        let t = p.declare_scalar();
        let (_, e) = bandpass_block(&mut p, 3, 0.0, 0.4, &a, &Expr::var(&t), true).unwrap();
        let v: Vec<f64> = (0..p.num_entries()).map(|k| (k as f64 * 0.37).sin()).collect();
        let m = e.evaluate(&v);
        let k = 5;
        assert!(m.view((0, k), (k, k)).abs().max() == 0.0);
        assert_eq!(m.view((0, 0), (k, k)), m.view((k, k), (k, k)));
    }

    #[test]
    fn zero_equation_examples() {
        let eq = zero_equalities(&ZeroAssignment::new(0.0, 1).unwrap(), 4).unwrap();
        assert_eq!(eq.len(), 1);
        assert_eq!(eq[0].0, vec![1.0; 4]);
        assert_eq!(eq[0].1, -1.0);
        let eq = zero_equalities(&ZeroAssignment::new(PI, 1).unwrap(), 4).unwrap();
        assert_eq!(eq.len(), 1);
        // nu(-1) = 1 - a1 + a2 - a3 + a4
        let expect = [-1.0, 1.0, -1.0, 1.0];
        for (g, e) in eq[0].0.iter().zip(expect) {
            assert!((g - e).abs() < 1e-12);
        }
        assert!((eq[0].1 + 1.0).abs() < 1e-12);
        assert_eq!(zero_equalities(&ZeroAssignment::new(PI / 2.0, 1).unwrap(), 4).unwrap().len(), 2);
        assert!(zero_equalities(&ZeroAssignment::new(PI / 2.0, 2).unwrap(), 4).is_err());
    }

    #[test]
    fn band_validation() {
        assert!(BandSpec::new(0.5, 0.6).is_err());
        assert!(BandSpec::new(3.0, 0.2).is_err());
        assert!(BandSpec::new(0.0, -1.0).is_err());
        assert!(BandSpec::new(PI / 2.0, PI / 16.0).is_ok());
        let s = DesignSpec::lowpass(4, 0.1).unwrap().with_cap(1.0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn covering_band_is_rejected_before_solving() {
        let s = DesignSpec::lowpass(4, PI).unwrap();
        assert!(matches!(design(&s), Err(Error::Infeasible(_))));
    }

    #[test]
    fn small_lowpass_design_verifies() {
        let spec = DesignSpec::lowpass(4, PI / 8.0).unwrap().with_cap(1.5);
        let d = design(&spec).unwrap();
        assert_eq!(d.ntf.coeffs()[0], 1.0);
        let b = d.bands[0];
        assert!(b.gamma < 1.0);
        assert!(b.grid_max <= b.gamma * (1.0 + 1e-3), "{} {}", b.grid_max, b.gamma);
        assert!((b.grid_max - b.gamma).abs() / b.gamma < 1e-3);
        assert!(d.hinf_norm <= 1.5 * (1.0 + 1e-3));
    }
}
