//! Symbolic linear matrix inequalities.
//!
//! An [`LmiProblem`] holds symmetric-matrix and scalar decision variables,
//! affine matrix expressions built from them, a linear objective over the
//! scalars and scalar linear equalities. [`LmiProblem::compile`] flattens it
//! into a [`StandardSdp`]: every constraint becomes a block
//! `F0 + sum_i v_i F_i >= 0` over one decision vector `v`.
//!
//! Symmetric variables are flattened row-major over their upper triangle, one
//! decision entry per `(i, j)` with `i <= j`, unscaled.
//!
//! # Dump format
//!
//! [`StandardSdp::write_dump`] emits plain text, one entry per line:
//!
//! ```text
//! # vars <n> blocks <k> equalities <p> epsilon <eps>
//! <block> <row> <col> <var> <coefficient>
//! ```
//!
//! Blocks are numbered from 1 and only `row <= col` is listed; `var = 0` is the
//! constant `F0`, `var = i + 1` the coefficient of decision entry `i`. Block 0
//! (row 0, col 0) carries the objective vector. Equality `q` is written as
//! block `-(q + 1)` with row 0, col 0; `var = 0` holds its right-hand side.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::ops::{Add, Neg, Sub};
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{Complex, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

static NEXT_PROBLEM: AtomicUsize = AtomicUsize::new(1);

/// Shape of a decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKind {
    Symmetric(usize),
    Scalar,
}

impl VarKind {
    /// Number of free scalar entries.
    pub fn len(self) -> usize {
        match self {
            VarKind::Symmetric(n) => n * (n + 1) / 2,
            VarKind::Scalar => 1,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

/// Handle to a declared variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarRef {
    problem: usize,
    id: usize,
    kind: VarKind,
    offset: usize,
}

impl VarRef {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn kind(&self) -> VarKind {
        self.kind
    }

    /// Index of the first decision entry owned by this variable.
    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn len(&self) -> usize {
        self.kind.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kind.is_empty()
    }

    /// Decision index of entry `(i, j)` of a symmetric variable.
    pub fn entry(&self, i: usize, j: usize) -> usize {
        match self.kind {
            VarKind::Scalar => {
                assert!(i == 0 && j == 0, "scalar variable has a single entry");
                self.offset
            }
            VarKind::Symmetric(n) => {
                assert!(i < n && j < n, "entry ({i}, {j}) outside {n}x{n}");
                let (i, j) = if i <= j { (i, j) } else { (j, i) };
                // rows 0..i hold n + (n-1) + ... + (n-i+1) entries
                let start = i * n - i * i.saturating_sub(1) / 2;
                self.offset + start + (j - i)
            }
        }
    }
}

type Sparse = Vec<(usize, usize, f64)>;

fn merge_sparse(mut s: Sparse) -> Sparse {
    s.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut out: Sparse = Vec::with_capacity(s.len());
    for (r, c, v) in s {
        match out.last_mut() {
            Some(last) if last.0 == r && last.1 == c => last.2 += v,
            _ => out.push((r, c, v)),
        }
    }
    out.retain(|e| e.2 != 0.0);
    out
}

/// Matrix whose entries are affine in the decision entries.
///
/// `constant + sum_k v_k T_k` where each `T_k` is stored sparsely. Shapes may be
/// rectangular while building; constraints must be square and symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrixExpr {
    rows: usize,
    cols: usize,
    problem: Option<usize>,
    constant: DMatrix<f64>,
    terms: BTreeMap<usize, Sparse>,
}

impl AffineMatrixExpr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            problem: None,
            constant: DMatrix::zeros(rows, cols),
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            problem: None,
            constant: m,
            terms: BTreeMap::new(),
        }
    }

    pub fn scalar_constant(v: f64) -> Self {
        Self::constant(DMatrix::from_element(1, 1, v))
    }

    /// The matrix variable itself (`n x n`) or the `1 x 1` scalar.
    pub fn var(v: &VarRef) -> Self {
        match v.kind {
            VarKind::Scalar => Self::scaled_var(v, &DMatrix::from_element(1, 1, 1.0)),
            VarKind::Symmetric(n) => {
                let mut e = Self::zeros(n, n);
                e.problem = Some(v.problem);
                for i in 0..n {
                    for j in 0..n {
                        e.terms.entry(v.entry(i, j)).or_default().push((i, j, 1.0));
                    }
                }
                e
            }
        }
    }

    /// `s * M` for a scalar variable `s` and constant `M`.
    pub fn scaled_var(s: &VarRef, m: &DMatrix<f64>) -> Self {
        assert_eq!(s.kind, VarKind::Scalar, "scaled_var needs a scalar variable");
        let mut e = Self::zeros(m.nrows(), m.ncols());
        e.problem = Some(s.problem);
        let entries: Sparse = m
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(k, v)| (k % m.nrows(), k / m.nrows(), *v))
            .collect();
        if !entries.is_empty() {
            e.terms.insert(s.offset, entries);
        }
        e
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn constant_part(&self) -> &DMatrix<f64> {
        &self.constant
    }

    /// Decision indices with a nonzero coefficient.
    pub fn referenced(&self) -> impl Iterator<Item = usize> + '_ {
        self.terms.keys().copied()
    }

    /// Adds `coef * s` at `(r, c)` only.
    pub fn add_scalar_at(&mut self, s: &VarRef, r: usize, c: usize, coef: f64) -> Result<()> {
        self.bind(Some(s.problem))?;
        if s.kind != VarKind::Scalar {
            return Err(Error::InvalidProblem("add_scalar_at needs a scalar variable".into()));
        }
        if r >= self.rows || c >= self.cols {
            return Err(Error::Dimension(format!(
                "entry ({r}, {c}) outside {}x{}",
                self.rows, self.cols
            )));
        }
        let t = self.terms.entry(s.offset).or_default();
        t.push((r, c, coef));
        *t = merge_sparse(std::mem::take(t));
        if t.is_empty() {
            self.terms.remove(&s.offset);
        }
        Ok(())
    }

    pub fn add_constant_at(&mut self, r: usize, c: usize, v: f64) {
        self.constant[(r, c)] += v;
    }

    fn bind(&mut self, p: Option<usize>) -> Result<()> {
        match (self.problem, p) {
            (Some(a), Some(b)) if a != b => Err(Error::InvalidProblem(
                "expression mixes variables of different problems".into(),
            )),
            (None, Some(b)) => {
                self.problem = Some(b);
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            problem: self.problem,
            constant: self.constant.transpose(),
            terms: self
                .terms
                .iter()
                .map(|(k, s)| (*k, merge_sparse(s.iter().map(|&(r, c, v)| (c, r, v)).collect())))
                .collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        if k == 0.0 {
            let mut z = Self::zeros(self.rows, self.cols);
            z.problem = self.problem;
            return z;
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            problem: self.problem,
            constant: &self.constant * k,
            terms: self
                .terms
                .iter()
                .map(|(i, s)| (*i, s.iter().map(|&(r, c, v)| (r, c, v * k)).collect()))
                .collect(),
        }
    }

    /// `L * self`.
    pub fn left_mul(&self, l: &DMatrix<f64>) -> Result<Self> {
        if l.ncols() != self.rows {
            return Err(Error::Dimension(format!(
                "left factor has {} columns, expression has {} rows",
                l.ncols(),
                self.rows
            )));
        }
        let mut terms = BTreeMap::new();
        for (k, s) in &self.terms {
            let mut out = Vec::new();
            for &(r, c, v) in s {
                for a in 0..l.nrows() {
                    let la = l[(a, r)];
                    if la != 0.0 {
                        out.push((a, c, la * v));
                    }
                }
            }
            let out = merge_sparse(out);
            if !out.is_empty() {
                terms.insert(*k, out);
            }
        }
        Ok(Self {
            rows: l.nrows(),
            cols: self.cols,
            problem: self.problem,
            constant: l * &self.constant,
            terms,
        })
    }

    /// `self * R`.
    pub fn right_mul(&self, r: &DMatrix<f64>) -> Result<Self> {
        Ok(self.transpose().left_mul(&r.transpose())?.transpose())
    }

    /// `L * self * R`.
    pub fn sandwich(&self, l: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<Self> {
        self.left_mul(l)?.right_mul(r)
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "cannot add {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = self.clone();
        out.bind(other.problem)?;
        out.constant += &other.constant;
        for (k, s) in &other.terms {
            let t = out.terms.entry(*k).or_default();
            t.extend_from_slice(s);
            *t = merge_sparse(std::mem::take(t));
        }
        out.terms.retain(|_, s| !s.is_empty());
        Ok(out)
    }

    /// Assembles a block matrix; every row of blocks shares a height and every
    /// column a width.
    pub fn blocks(grid: &[Vec<AffineMatrixExpr>]) -> Result<Self> {
        let nbr = grid.len();
        if nbr == 0 {
            return Ok(Self::zeros(0, 0));
        }
        let nbc = grid[0].len();
        if grid.iter().any(|row| row.len() != nbc) {
            return Err(Error::Dimension("ragged block rows".into()));
        }
        let heights: Vec<usize> = grid.iter().map(|row| row[0].rows).collect();
        let widths: Vec<usize> = grid[0].iter().map(|b| b.cols).collect();
        for (i, row) in grid.iter().enumerate() {
            for (j, b) in row.iter().enumerate() {
                if b.rows != heights[i] || b.cols != widths[j] {
                    return Err(Error::Dimension(format!(
                        "block ({i}, {j}) is {}x{}, expected {}x{}",
                        b.rows, b.cols, heights[i], widths[j]
                    )));
                }
            }
        }
        let rows: usize = heights.iter().sum();
        let cols: usize = widths.iter().sum();
        let mut out = Self::zeros(rows, cols);
        let mut r0 = 0;
        for (i, row) in grid.iter().enumerate() {
            let mut c0 = 0;
            for (j, b) in row.iter().enumerate() {
                out.bind(b.problem)?;
                out.constant
                    .view_mut((r0, c0), (heights[i], widths[j]))
                    .copy_from(&b.constant);
                for (k, s) in &b.terms {
                    out.terms
                        .entry(*k)
                        .or_default()
                        .extend(s.iter().map(|&(r, c, v)| (r + r0, c + c0, v)));
                }
                c0 += widths[j];
            }
            r0 += heights[i];
        }
        for s in out.terms.values_mut() {
            *s = merge_sparse(std::mem::take(s));
        }
        out.terms.retain(|_, s| !s.is_empty());
        Ok(out)
    }

    /// Numeric value at decision vector `v`.
    pub fn evaluate(&self, v: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (k, s) in &self.terms {
            let x = v[*k];
            for &(r, c, a) in s {
                m[(r, c)] += a * x;
            }
        }
        m
    }

    /// Exact symmetry of the constant and of every coefficient matrix.
    pub fn is_symmetric(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let tol = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
        for i in 0..self.rows {
            for j in 0..i {
                if !tol(self.constant[(i, j)], self.constant[(j, i)]) {
                    return false;
                }
            }
        }
        self.terms.values().all(|s| {
            let t: BTreeMap<(usize, usize), f64> = s.iter().map(|&(r, c, v)| ((r, c), v)).collect();
            t.iter().all(|(&(r, c), &v)| tol(v, t.get(&(c, r)).copied().unwrap_or(0.0)))
        })
    }
}

impl Add for AffineMatrixExpr {
    type Output = AffineMatrixExpr;
    fn add(self, rhs: Self) -> Self {
        self.try_add(&rhs).expect("dimension mismatch in AffineMatrixExpr addition")
    }
}

impl Sub for AffineMatrixExpr {
    type Output = AffineMatrixExpr;
    fn sub(self, rhs: Self) -> Self {
        self.try_add(&rhs.scale(-1.0))
            .expect("dimension mismatch in AffineMatrixExpr subtraction")
    }
}

impl Neg for AffineMatrixExpr {
    type Output = AffineMatrixExpr;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

/// Side of a strict matrix inequality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// `e < 0`
    Negative,
    /// `e > 0`
    Positive,
}

/// `sum_k coef_k * var_k = rhs` over scalar variables.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEquality {
    pub terms: Vec<(VarRef, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
struct Constraint {
    expr: AffineMatrixExpr,
    sense: Sense,
}

/// LMI program under construction.
#[derive(Debug, Clone)]
pub struct LmiProblem {
    token: usize,
    vars: Vec<VarRef>,
    len: usize,
    objective: Vec<(VarRef, f64)>,
    constraints: Vec<Constraint>,
    equalities: Vec<LinearEquality>,
}

impl Default for LmiProblem {
    fn default() -> Self {
        Self::new()
    }
}

impl LmiProblem {
    pub fn new() -> Self {
        Self {
            token: NEXT_PROBLEM.fetch_add(1, Ordering::Relaxed),
            vars: Vec::new(),
            len: 0,
            objective: Vec::new(),
            constraints: Vec::new(),
            equalities: Vec::new(),
        }
    }

    pub fn declare(&mut self, kind: VarKind) -> VarRef {
        if let VarKind::Symmetric(n) = kind {
            assert!(n >= 1, "symmetric variable needs n >= 1");
        }
        let v = VarRef {
            problem: self.token,
            id: self.vars.len(),
            kind,
            offset: self.len,
        };
        self.len += kind.len();
        self.vars.push(v);
        v
    }

    pub fn declare_symmetric(&mut self, n: usize) -> VarRef {
        self.declare(VarKind::Symmetric(n))
    }

    pub fn declare_scalar(&mut self) -> VarRef {
        self.declare(VarKind::Scalar)
    }

    pub fn variables(&self) -> &[VarRef] {
        &self.vars
    }

    /// Length of the flattened decision vector.
    pub fn num_entries(&self) -> usize {
        self.len
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn equalities(&self) -> &[LinearEquality] {
        &self.equalities
    }

    fn check_var(&self, v: &VarRef) -> Result<()> {
        if v.problem != self.token || self.vars.get(v.id) != Some(v) {
            return Err(Error::UndeclaredVariable(v.id));
        }
        Ok(())
    }

    fn check_expr(&self, e: &AffineMatrixExpr) -> Result<()> {
        if let Some(p) = e.problem {
            if p != self.token {
                return Err(Error::InvalidProblem(
                    "expression refers to another problem's variables".into(),
                ));
            }
        }
        if let Some(k) = e.terms.keys().find(|k| **k >= self.len) {
            return Err(Error::UndeclaredVariable(*k));
        }
        Ok(())
    }

    /// Records `e < 0` or `e > 0`; strictness becomes a margin at compile time.
    pub fn add_strict_lmi(&mut self, e: AffineMatrixExpr, sense: Sense) -> Result<()> {
        if e.rows != e.cols {
            return Err(Error::Dimension(format!(
                "LMI must be square, got {}x{}",
                e.rows, e.cols
            )));
        }
        if !e.is_symmetric() {
            return Err(Error::Dimension("LMI expression is not symmetric".into()));
        }
        self.check_expr(&e)?;
        self.constraints.push(Constraint { expr: e, sense });
        Ok(())
    }

    pub fn add_equality(&mut self, terms: &[(VarRef, f64)], rhs: f64) -> Result<()> {
        for (v, _) in terms {
            self.check_var(v)?;
            if v.kind != VarKind::Scalar {
                return Err(Error::InvalidProblem(
                    "equalities may only reference scalar variables".into(),
                ));
            }
        }
        self.equalities.push(LinearEquality {
            terms: terms.to_vec(),
            rhs,
        });
        Ok(())
    }

    /// Adds `coef * v` to the minimized objective.
    pub fn add_objective(&mut self, v: &VarRef, coef: f64) -> Result<()> {
        self.check_var(v)?;
        if v.kind != VarKind::Scalar {
            return Err(Error::InvalidProblem(
                "objective may only reference scalar variables".into(),
            ));
        }
        self.objective.push((*v, coef));
        Ok(())
    }

    /// Symbolic evaluation of `e` at decision vector `v`.
    pub fn evaluate(&self, e: &AffineMatrixExpr, v: &[f64]) -> Result<DMatrix<f64>> {
        self.check_expr(e)?;
        if v.len() != self.len {
            return Err(Error::Dimension(format!(
                "decision vector has {} entries, problem has {}",
                v.len(),
                self.len
            )));
        }
        Ok(e.evaluate(v))
    }

    /// Numeric value of variable `var` at decision vector `v`.
    pub fn value(&self, var: &VarRef, v: &[f64]) -> DMatrix<f64> {
        AffineMatrixExpr::var(var).evaluate(v)
    }

    /// Flattens into `F0 + sum_i v_i F_i >= 0` blocks with margin `epsilon`.
    pub fn compile(&self, epsilon: f64) -> Result<StandardSdp> {
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(Error::InvalidProblem(format!(
                "strictness margin must be positive, got {epsilon}"
            )));
        }
        let mut objective = vec![0.0; self.len];
        for (v, c) in &self.objective {
            self.check_var(v)?;
            objective[v.offset] += c;
        }
        let mut blocks = Vec::with_capacity(self.constraints.len());
        for con in &self.constraints {
            let sign = match con.sense {
                Sense::Negative => -1.0,
                Sense::Positive => 1.0,
            };
            let dim = con.expr.rows;
            let mut constant = DMatrix::zeros(dim, dim);
            for i in 0..dim {
                for j in i..dim {
                    let v = sign * con.expr.constant[(i, j)];
                    constant[(i, j)] = v;
                    constant[(j, i)] = v;
                }
                constant[(i, i)] -= epsilon;
            }
            let coeffs = con
                .expr
                .terms
                .iter()
                .map(|(k, s)| {
                    let upper: Sparse = s
                        .iter()
                        .filter(|(r, c, _)| r <= c)
                        .map(|&(r, c, v)| (r, c, sign * v))
                        .collect();
                    (*k, upper)
                })
                .filter(|(_, s)| !s.is_empty())
                .collect();
            blocks.push(SdpBlock {
                dim,
                constant,
                coeffs,
            });
        }
        let mut eq_rows = Vec::with_capacity(self.equalities.len());
        let mut eq_rhs = Vec::with_capacity(self.equalities.len());
        for eq in &self.equalities {
            let mut row: BTreeMap<usize, f64> = BTreeMap::new();
            for (v, c) in &eq.terms {
                *row.entry(v.offset).or_default() += c;
            }
            eq_rows.push(row.into_iter().filter(|(_, c)| *c != 0.0).collect());
            eq_rhs.push(eq.rhs);
        }
        Ok(StandardSdp {
            n_vars: self.len,
            blocks,
            eq_rows,
            eq_rhs,
            objective,
            epsilon,
        })
    }
}

/// One semidefinite block `F0 + sum_i v_i F_i >= 0`.
///
/// `coeffs` lists, per decision index, the upper-triangle entries of `F_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpBlock {
    pub dim: usize,
    pub constant: DMatrix<f64>,
    pub coeffs: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

impl SdpBlock {
    pub fn value(&self, v: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (k, s) in &self.coeffs {
            let x = v[*k];
            if x == 0.0 {
                continue;
            }
            for &(r, c, a) in s {
                m[(r, c)] += a * x;
                if r != c {
                    m[(c, r)] += a * x;
                }
            }
        }
        m
    }
}

/// Numeric standard form: minimize `objective . v` subject to every block
/// being positive semidefinite and `eq_rows v = eq_rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardSdp {
    pub n_vars: usize,
    pub blocks: Vec<SdpBlock>,
    pub eq_rows: Vec<Vec<(usize, f64)>>,
    pub eq_rhs: Vec<f64>,
    pub objective: Vec<f64>,
    pub epsilon: f64,
}

impl StandardSdp {
    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.dim).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.n_vars == 0 && self.blocks.is_empty() && self.eq_rows.is_empty()
    }

    pub fn objective_value(&self, v: &[f64]) -> f64 {
        self.objective.iter().zip(v).map(|(c, x)| c * x).sum()
    }

    /// Largest violation at `v`: negative eigenvalues of the blocks, and
    /// absolute equality residuals.
    pub fn max_violation(&self, v: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for b in &self.blocks {
            if b.dim == 0 {
                continue;
            }
            let lmin = min_eigenvalue(&b.value(v));
            worst = worst.max(-lmin);
        }
        for (row, rhs) in self.eq_rows.iter().zip(&self.eq_rhs) {
            let lhs: f64 = row.iter().map(|(k, c)| c * v[*k]).sum();
            worst = worst.max((lhs - rhs).abs());
        }
        worst
    }

    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# vars {} blocks {} equalities {} epsilon {:.17e}",
            self.n_vars,
            self.blocks.len(),
            self.eq_rows.len(),
            self.epsilon
        )?;
        for (k, c) in self.objective.iter().enumerate() {
            if *c != 0.0 {
                writeln!(w, "0 0 0 {} {:.17e}", k + 1, c)?;
            }
        }
        for (b, blk) in self.blocks.iter().enumerate() {
            let mut line = String::new();
            for i in 0..blk.dim {
                for j in i..blk.dim {
                    let v = blk.constant[(i, j)];
                    if v != 0.0 {
                        line.clear();
                        let _ = write!(line, "{} {} {} 0 {:.17e}", b + 1, i, j, v);
                        writeln!(w, "{line}")?;
                    }
                }
            }
            for (k, s) in &blk.coeffs {
                for &(r, c, v) in s {
                    writeln!(w, "{} {} {} {} {:.17e}", b + 1, r, c, k + 1, v)?;
                }
            }
        }
        for (q, (row, rhs)) in self.eq_rows.iter().zip(&self.eq_rhs).enumerate() {
            let id = -(q as i64 + 1);
            writeln!(w, "{id} 0 0 0 {rhs:.17e}")?;
            for (k, c) in row {
                writeln!(w, "{id} 0 0 {} {:.17e}", k + 1, c)?;
            }
        }
        Ok(())
    }

    /// Parses [`write_dump`](Self::write_dump) output.
    pub fn read_dump<R: BufRead>(r: R) -> Result<Self> {
        let bad = |m: String| Error::Parse(m);
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| bad("empty dump".into()))?
            .map_err(Error::Io)?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 9 || h[0] != "#" {
            return Err(bad(format!("bad header: {header}")));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| bad(e.to_string()));
        let n_vars = num(h[2])?;
        let n_blocks = num(h[4])?;
        let n_eq = num(h[6])?;
        let epsilon: f64 = h[8].parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
        let mut objective = vec![0.0; n_vars];
        let mut triplets: Vec<Vec<(usize, usize, usize, f64)>> = vec![Vec::new(); n_blocks];
        let mut eq_rows = vec![Vec::new(); n_eq];
        let mut eq_rhs = vec![0.0; n_eq];
        for line in lines {
            let line = line.map_err(Error::Io)?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(bad(format!("bad entry: {line}")));
            }
            let block: i64 = f[0].parse().map_err(|_| bad(format!("bad block id: {line}")))?;
            let row = num(f[1])?;
            let col = num(f[2])?;
            let var = num(f[3])?;
            let val: f64 = f[4].parse().map_err(|_| bad(format!("bad value: {line}")))?;
            match block {
                0 => *objective
                    .get_mut(var.wrapping_sub(1))
                    .ok_or_else(|| bad(format!("bad objective index: {line}")))? = val,
                b if b > 0 => triplets
                    .get_mut(b as usize - 1)
                    .ok_or_else(|| bad(format!("bad block: {line}")))?
                    .push((row, col, var, val)),
                b => {
                    let q = (-b - 1) as usize;
                    if q >= n_eq {
                        return Err(bad(format!("bad equality: {line}")));
                    }
                    if var == 0 {
                        eq_rhs[q] = val;
                    } else {
                        eq_rows[q].push((var - 1, val));
                    }
                }
            }
        }
        let mut blocks = Vec::with_capacity(n_blocks);
        for t in triplets {
            let dim = t.iter().map(|e| e.0.max(e.1) + 1).max().unwrap_or(0);
            let mut constant = DMatrix::zeros(dim, dim);
            let mut coeffs: BTreeMap<usize, Sparse> = BTreeMap::new();
            for (r, c, var, v) in t {
                if var == 0 {
                    constant[(r, c)] = v;
                    constant[(c, r)] = v;
                } else {
                    coeffs.entry(var - 1).or_default().push((r, c, v));
                }
            }
            blocks.push(SdpBlock {
                dim,
                constant,
                coeffs: coeffs.into_iter().collect(),
            });
        }
        Ok(Self {
            n_vars,
            blocks,
            eq_rows,
            eq_rhs,
            objective,
            epsilon,
        })
    }
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `[[Re H, -Im H], [Im H, Re H]]`. For Hermitian `H` it is symmetric and
/// carries every eigenvalue of `H` twice.
pub fn real_embedding(h: &DMatrix<Complex<f64>>) -> Result<DMatrix<f64>> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::Dimension(format!("{}x{} matrix is not square", n, h.ncols())));
    }
    Ok(DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let z = h[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    }))
}

/// Largest eigenvalue of a Hermitian matrix.
pub fn hermitian_max_eigenvalue(h: &DMatrix<Complex<f64>>) -> f64 {
    if h.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    SymmetricEigen::new(h.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    -min_eigenvalue(&-m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn declare_counts_entries() {
        let mut p = LmiProblem::new();
        let x = p.declare_symmetric(2);
        let t = p.declare_scalar();
        assert_eq!(x.len(), 3);
        assert_eq!(t.len(), 1);
        assert_ne!(x.id(), t.id());
        assert_eq!(p.num_entries(), 4);
    }

    #[test]
    fn symmetric_entry_indexing_is_a_bijection() {
        let mut p = LmiProblem::new();
        let _pad = p.declare_scalar();
        let x = p.declare_symmetric(5);
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..5 {
            for j in i..5 {
                assert_eq!(x.entry(i, j), x.entry(j, i));
                assert!(seen.insert(x.entry(i, j)));
            }
        }
        let expect: Vec<usize> = (1..16).collect();
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), expect);
    }

    #[test]
    fn scalar_bound_compiles_with_margin() {
        let mut p = LmiProblem::new();
        let t = p.declare_scalar();
        let e = AffineMatrixExpr::var(&t) - AffineMatrixExpr::scalar_constant(3.0);
        p.add_strict_lmi(e, Sense::Positive).unwrap();
        p.add_objective(&t, 1.0).unwrap();
        let sdp = p.compile(1e-8).unwrap();
        assert_eq!(sdp.block_sizes(), vec![1]);
        // F(t) = t - 3 - eps >= 0
        assert!((sdp.blocks[0].value(&[3.0 + 1e-8])[(0, 0)]).abs() < 1e-15);
        assert!(sdp.blocks[0].value(&[3.0])[(0, 0)] < 0.0);
    }

    #[test]
    fn positive_matrix_variable_compiles_to_shifted_identity() {
        let mut p = LmiProblem::new();
        let y = p.declare_symmetric(3);
        p.add_strict_lmi(AffineMatrixExpr::var(&y), Sense::Positive).unwrap();
        let sdp = p.compile(1e-8).unwrap();
        let v = vec![0.0; 6];
        assert_eq!(sdp.blocks[0].value(&v), DMatrix::identity(3, 3) * -1e-8);
    }

    #[test]
    fn empty_problem_compiles_to_empty_sdp() {
        let sdp = LmiProblem::new().compile(1e-8).unwrap();
        assert!(sdp.is_empty());
        assert_eq!(sdp.max_violation(&[]), 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut p = LmiProblem::new();
        let mut q = LmiProblem::new();
        let x = q.declare_symmetric(2);
        let t = p.declare_scalar();
        // foreign variable
        assert!(p.add_strict_lmi(AffineMatrixExpr::var(&x), Sense::Positive).is_err());
        assert!(p.add_objective(&x, 1.0).is_err());
        // non-square
        let e = AffineMatrixExpr::scaled_var(&t, &DMatrix::from_element(2, 3, 1.0));
        assert!(matches!(p.add_strict_lmi(e, Sense::Negative), Err(Error::Dimension(_))));
        // non-symmetric
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let e = AffineMatrixExpr::scaled_var(&t, &m);
        assert!(p.add_strict_lmi(e, Sense::Negative).is_err());
        assert!(p.compile(0.0).is_err());
        // bad block shapes
        let a = AffineMatrixExpr::zeros(2, 2);
        let b = AffineMatrixExpr::zeros(3, 1);
        assert!(AffineMatrixExpr::blocks(&[vec![a, b]]).is_err());
    }

    #[test]
    fn sandwich_and_transpose_agree_with_dense_algebra() {
        let mut p = LmiProblem::new();
        let x = p.declare_symmetric(3);
        let l = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, 0.0, -2.0, 0.0, 3.0]);
        let r = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 1.0, 0.0, 4.0, -1.0]);
        let e = AffineMatrixExpr::var(&x).sandwich(&l, &r).unwrap();
        let v: Vec<f64> = (0..6).map(|k| 0.3 * k as f64 - 0.7).collect();
        let xv = p.value(&x, &v);
        let expect = &l * &xv * &r;
        assert!((e.evaluate(&v) - &expect).abs().max() < 1e-14);
        assert!((e.transpose().evaluate(&v) - expect.transpose()).abs().max() < 1e-14);
    }

    #[test]
    fn dump_round_trip() {
        let mut p = LmiProblem::new();
        let x = p.declare_symmetric(2);
        let t = p.declare_scalar();
        let e = AffineMatrixExpr::blocks(&[
            vec![AffineMatrixExpr::var(&x), AffineMatrixExpr::zeros(2, 1)],
            vec![AffineMatrixExpr::zeros(1, 2), AffineMatrixExpr::var(&t)],
        ])
        .unwrap();
        p.add_strict_lmi(e, Sense::Positive).unwrap();
        p.add_objective(&t, 2.5).unwrap();
        p.add_equality(&[(t, 1.0)], 4.0).unwrap();
        let sdp = p.compile(1e-8).unwrap();
        let mut buf = Vec::new();
        sdp.write_dump(&mut buf).unwrap();
        let back = StandardSdp::read_dump(&buf[..]).unwrap();
        assert_eq!(back, sdp);
    }
}
