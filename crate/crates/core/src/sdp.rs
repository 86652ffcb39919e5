//! Primal-dual interior-point solver for [`StandardSdp`].
//!
//! Uses an infeasible-start path-following method with the Nesterov-Todd
//! search direction and Mehrotra's predictor-corrector. Linear equalities are removed
//! up front by a null-space substitution. The Schur complement system is
//! factored in independent clusters of variables that share no block, joined
//! through a small set of linking variables.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, SVD};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lmi::{min_eigenvalue, StandardSdp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    /// Objective unbounded below on the feasible set.
    Unbounded,
    NumericalTrouble,
    IterationLimit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Margin used when strict inequalities are compiled.
    pub epsilon: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_iter: 200,
            epsilon: 1e-8,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.feas_tol) || !ok(self.gap_tol) || !ok(self.epsilon) || self.max_iter == 0 {
            return Err(Error::InvalidProblem(format!(
                "solver options must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SdpStatus,
    /// Decision vector in the layout of the compiled problem.
    pub x: Vec<f64>,
    pub objective: f64,
    /// Largest negative eigenvalue or equality residual at `x`.
    pub max_violation: f64,
    /// Relative duality gap at termination.
    pub gap: f64,
    pub iterations: usize,
}

// -- presolve -----------------------------------------------------------------

type Entries = Vec<(usize, usize, f64)>;

#[derive(Debug, Clone)]
struct Block {
    dim: usize,
    f0: DMatrix<f64>,
    vars: Vec<usize>,
    /// Full symmetric pattern of each local coefficient matrix.
    coeffs: Vec<Entries>,
}

#[derive(Debug, Clone)]
struct Reduced {
    m: usize,
    blocks: Vec<Block>,
    c: DVector<f64>,
    /// Original decision vector = `base + map * z`, one sparse row per entry.
    base: Vec<f64>,
    map: Vec<Vec<(usize, f64)>>,
}

enum Presolved {
    Ready(Reduced),
    Infeasible(Vec<f64>),
    Trivial(Vec<f64>),
}

fn full_pattern(upper: &[(usize, usize, f64)]) -> Entries {
    let mut out = Vec::with_capacity(2 * upper.len());
    for &(r, c, v) in upper {
        out.push((r, c, v));
        if r != c {
            out.push((c, r, v));
        }
    }
    out
}

fn merge(mut s: Entries, drop_below: f64) -> Entries {
    s.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut out: Entries = Vec::with_capacity(s.len());
    for (r, c, v) in s {
        match out.last_mut() {
            Some(l) if l.0 == r && l.1 == c => l.2 += v,
            _ => out.push((r, c, v)),
        }
    }
    out.retain(|e| e.2.abs() > drop_below);
    out
}

fn validate(sdp: &StandardSdp) -> Result<()> {
    let n = sdp.n_vars;
    if sdp.objective.len() != n {
        return Err(Error::InvalidProblem(format!(
            "objective has {} entries for {n} variables",
            sdp.objective.len()
        )));
    }
    if sdp.eq_rows.len() != sdp.eq_rhs.len() {
        return Err(Error::InvalidProblem("equality rows and rhs differ in length".into()));
    }
    if sdp.objective.iter().chain(&sdp.eq_rhs).any(|v| !v.is_finite()) {
        return Err(Error::InvalidProblem("non-finite objective or rhs".into()));
    }
    for (k, b) in sdp.blocks.iter().enumerate() {
        if b.constant.nrows() != b.dim || b.constant.ncols() != b.dim {
            return Err(Error::InvalidProblem(format!("block {k} constant has wrong shape")));
        }
        if b.constant.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem(format!("block {k} has non-finite constant")));
        }
        for (i, s) in &b.coeffs {
            if *i >= n {
                return Err(Error::UndeclaredVariable(*i));
            }
            if s.iter().any(|&(r, c, v)| r >= b.dim || c >= b.dim || r > c || !v.is_finite()) {
                return Err(Error::InvalidProblem(format!(
                    "block {k} coefficient of variable {i} is malformed"
                )));
            }
        }
    }
    for row in &sdp.eq_rows {
        if let Some((i, _)) = row.iter().find(|(i, c)| *i >= n || !c.is_finite()) {
            return Err(Error::InvalidProblem(format!("bad equality entry for variable {i}")));
        }
    }
    Ok(())
}

fn presolve(sdp: &StandardSdp, opts: &SolverOptions) -> Result<Presolved> {
    let n = sdp.n_vars;
    // variables fixed or mixed by equalities
    let mut in_eq = vec![false; n];
    for row in &sdp.eq_rows {
        for (i, _) in row {
            in_eq[*i] = true;
        }
    }
    let eq_vars: Vec<usize> = (0..n).filter(|i| in_eq[*i]).collect();
    let mut base = vec![0.0; n];
    let mut map: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut m = 0;
    for i in 0..n {
        if !in_eq[i] {
            map[i].push((m, 1.0));
            m += 1;
        }
    }
    if !eq_vars.is_empty() {
        let p = sdp.eq_rows.len();
        let col: BTreeMap<usize, usize> = eq_vars.iter().enumerate().map(|(k, i)| (*i, k)).collect();
        let mut e = DMatrix::zeros(p, eq_vars.len());
        for (q, row) in sdp.eq_rows.iter().enumerate() {
            for (i, c) in row {
                e[(q, col[i])] += c;
            }
        }
        let rhs = DVector::from_column_slice(&sdp.eq_rhs);
        let svd = SVD::new(e.clone(), true, true);
        let smax = svd.singular_values.max();
        let tol = smax * 1e-12 * (p.max(eq_vars.len()) as f64);
        let u = svd.u.as_ref().expect("svd u");
        let vt = svd.v_t.as_ref().expect("svd v_t");
        let mut v0 = DVector::zeros(eq_vars.len());
        let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
        for k in 0..svd.singular_values.len() {
            let s = svd.singular_values[k];
            if s > tol {
                let coef = u.column(k).dot(&rhs) / s;
                v0 += vt.row(k).transpose() * coef;
            }
        }
        let resid = (&e * &v0 - &rhs).norm();
        if resid > opts.feas_tol * (1.0 + rhs.norm()) {
            let mut x = vec![0.0; n];
            for (k, i) in eq_vars.iter().enumerate() {
                x[*i] = v0[k];
            }
            return Ok(Presolved::Infeasible(x));
        }
        // null-space basis: rows of v_t beyond the rank, plus any columns the
        // thin decomposition did not return
        let full = SVD::new(
            {
                let mut sq = DMatrix::zeros(eq_vars.len().max(p), eq_vars.len());
                sq.view_mut((0, 0), (p, eq_vars.len())).copy_from(&e);
                sq
            },
            false,
            true,
        );
        let vt_full = full.v_t.as_ref().expect("svd v_t");
        let mut order: Vec<usize> = (0..full.singular_values.len()).collect();
        order.sort_by(|a, b| full.singular_values[*b].total_cmp(&full.singular_values[*a]));
        for &k in order.iter().skip(rank) {
            for (j, i) in eq_vars.iter().enumerate() {
                let v = vt_full[(k, j)];
                if v.abs() > 1e-15 {
                    map[*i].push((m, v));
                }
            }
            m += 1;
        }
        for (k, i) in eq_vars.iter().enumerate() {
            base[*i] = v0[k];
        }
    }

    let mut c: DVector<f64> = DVector::zeros(m);
    for i in 0..n {
        for (z, w) in &map[i] {
            c[*z] += sdp.objective[i] * w;
        }
    }

    let mut blocks = Vec::new();
    let mut touched = vec![false; m];
    for b in &sdp.blocks {
        if b.dim == 0 {
            continue;
        }
        let mut f0 = b.constant.clone();
        let mut per_z: BTreeMap<usize, Entries> = BTreeMap::new();
        let mut scale: f64 = f0.abs().max();
        for (i, s) in &b.coeffs {
            let full = full_pattern(s);
            if base[*i] != 0.0 {
                for &(r, cc, v) in &full {
                    f0[(r, cc)] += base[*i] * v;
                }
            }
            for (z, w) in &map[*i] {
                let t = per_z.entry(*z).or_default();
                t.extend(full.iter().map(|&(r, cc, v)| (r, cc, v * w)));
            }
            scale = scale.max(s.iter().fold(0.0, |a, e| a.max(e.2.abs())));
        }
        let mut vars = Vec::new();
        let mut coeffs = Vec::new();
        for (z, s) in per_z {
            let s = merge(s, 1e-14 * scale);
            if !s.is_empty() {
                touched[z] = true;
                vars.push(z);
                coeffs.push(s);
            }
        }
        if vars.is_empty() {
            let lmin = min_eigenvalue(&f0);
            if lmin < -opts.feas_tol {
                return Ok(Presolved::Infeasible(base.clone()));
            }
            continue;
        }
        blocks.push(Block {
            dim: b.dim,
            f0,
            vars,
            coeffs,
        });
    }

    // variables present in no block
    let mut renumber = vec![usize::MAX; m];
    let mut next = 0;
    for z in 0..m {
        if touched[z] {
            renumber[z] = next;
            next += 1;
        } else if c[z].abs() > 1e-14 * (1.0 + c.amax()) {
            return Err(Error::InvalidProblem(format!(
                "degenerate problem: free direction {z} with nonzero cost is unconstrained"
            )));
        }
    }
    for row in map.iter_mut() {
        row.retain(|(z, _)| touched[*z]);
        for (z, _) in row.iter_mut() {
            *z = renumber[*z];
        }
    }
    for b in blocks.iter_mut() {
        for z in b.vars.iter_mut() {
            *z = renumber[*z];
        }
    }
    let c = DVector::from_iterator(next, (0..m).filter(|z| touched[*z]).map(|z| c[z]));
    if next == 0 {
        return Ok(Presolved::Trivial(base));
    }
    Ok(Presolved::Ready(Reduced {
        m: next,
        blocks,
        c,
        base,
        map,
    }))
}

// -- Schur complement structure ----------------------------------------------

#[derive(Debug, Clone)]
enum Slot {
    Cluster(usize, usize),
    Link(usize),
}

#[derive(Debug, Clone)]
struct Structure {
    slots: Vec<Slot>,
    cluster_sizes: Vec<usize>,
    n_link: usize,
}

fn find(p: &mut [usize], mut i: usize) -> usize {
    while p[i] != i {
        p[i] = p[p[i]];
        i = p[i];
    }
    i
}

fn components(nb: usize, sigs: &[(Vec<usize>, Vec<usize>)], link: &[bool]) -> Vec<usize> {
    let mut p: Vec<usize> = (0..nb).collect();
    for (k, (blocks, _)) in sigs.iter().enumerate() {
        if link[k] {
            continue;
        }
        for w in blocks.windows(2) {
            let (a, b) = (find(&mut p, w[0]), find(&mut p, w[1]));
            if a != b {
                p[a.max(b)] = a.min(b);
            }
        }
    }
    (0..nb).map(|i| find(&mut p, i)).collect()
}

fn largest(sigs: &[(Vec<usize>, Vec<usize>)], link: &[bool], comp: &[usize]) -> usize {
    let mut size: BTreeMap<usize, usize> = BTreeMap::new();
    for (k, (blocks, vars)) in sigs.iter().enumerate() {
        if !link[k] {
            *size.entry(comp[blocks[0]]).or_default() += vars.len();
        }
    }
    size.values().copied().max().unwrap_or(0)
}

fn structure(red: &Reduced) -> Structure {
    let nb = red.blocks.len();
    let mut var_blocks: Vec<Vec<usize>> = vec![Vec::new(); red.m];
    for (b, blk) in red.blocks.iter().enumerate() {
        for z in &blk.vars {
            var_blocks[*z].push(b);
        }
    }
    let mut by_sig: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for (z, bl) in var_blocks.into_iter().enumerate() {
        by_sig.entry(bl).or_default().push(z);
    }
    let sigs: Vec<(Vec<usize>, Vec<usize>)> = by_sig.into_iter().collect();
    let mut link = vec![false; sigs.len()];
    let link_cap = 256.max(red.m / 8);
    let mut n_link = 0;
    loop {
        let comp = components(nb, &sigs, &link);
        let current = largest(&sigs, &link, &comp);
        let cand = (0..sigs.len())
            .filter(|k| !link[*k] && sigs[*k].0.len() >= 2)
            .max_by(|a, b| {
                sigs[*a]
                    .0
                    .len()
                    .cmp(&sigs[*b].0.len())
                    .then(sigs[*b].1.len().cmp(&sigs[*a].1.len()))
            });
        let Some(k) = cand else { break };
        let size = sigs[k].1.len();
        if n_link + size > link_cap {
            break;
        }
        link[k] = true;
        let comp2 = components(nb, &sigs, &link);
        let after = largest(&sigs, &link, &comp2);
        if current.saturating_sub(after) <= size {
            link[k] = false;
            break;
        }
        n_link += size;
    }
    let comp = components(nb, &sigs, &link);
    let mut cluster_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut slots = vec![Slot::Link(0); red.m];
    let mut cluster_sizes: Vec<usize> = Vec::new();
    let mut nl = 0;
    for (k, (blocks, vars)) in sigs.iter().enumerate() {
        for z in vars {
            if link[k] {
                slots[*z] = Slot::Link(nl);
                nl += 1;
            } else {
                let root = comp[blocks[0]];
                let next = cluster_of.len();
                let a = *cluster_of.entry(root).or_insert(next);
                if a == cluster_sizes.len() {
                    cluster_sizes.push(0);
                }
                slots[*z] = Slot::Cluster(a, cluster_sizes[a]);
                cluster_sizes[a] += 1;
            }
        }
    }
    Structure {
        slots,
        cluster_sizes,
        n_link: nl,
    }
}

/// Column-pivoted Gram-Schmidt on the columns of `m`. Returns the pivot
/// columns in order and, for every other column `j`, coefficients `beta` with
/// `m[:, j] = sum_k beta[k] m[:, piv[k]]` up to the rank tolerance.
fn pivoted_span(m: &DMatrix<f64>, tol: f64) -> (Vec<usize>, Vec<(usize, Vec<f64>)>) {
    let n = m.ncols();
    let mut cols: Vec<DVector<f64>> = (0..n).map(|j| m.column(j).into_owned()).collect();
    let scale = cols.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut free: Vec<usize> = (0..n).collect();
    let mut piv = Vec::new();
    // r[j] holds the projections of column j onto the chosen directions
    let mut r: Vec<Vec<f64>> = vec![Vec::new(); n];
    while !free.is_empty() {
        let (pos, best) = free
            .iter()
            .enumerate()
            .map(|(p, j)| (p, cols[*j].norm()))
            .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
        if best <= tol * scale {
            break;
        }
        let j = free.swap_remove(pos);
        let q = &cols[j] / best;
        piv.push(j);
        let updates: Vec<(usize, f64, DVector<f64>)> = free
            .par_iter()
            .map(|k| {
                let mut c = cols[*k].clone();
                let mut t = q.dot(&c);
                c.axpy(-t, &q, 1.0);
                let t2 = q.dot(&c);
                c.axpy(-t2, &q, 1.0);
                t += t2;
                (*k, t, c)
            })
            .collect();
        for (k, t, c) in updates {
            cols[k] = c;
            r[k].push(t);
        }
        r[j].push(best);
        cols[j] = q;
    }
    let rank = piv.len();
    let deps = free
        .into_iter()
        .map(|j| {
            let mut b = r[j].clone();
            b.resize(rank, 0.0);
            for i in (0..rank).rev() {
                let ri = &r[piv[i]];
                b[i] /= ri[i];
                let bi = b[i];
                for (k, bk) in b[..i].iter_mut().enumerate() {
                    *bk -= ri[k] * bi;
                }
            }
            (j, b)
        })
        .collect();
    (piv, deps)
}

/// Rewrites each cluster so that combinations of its variables that vanish on
/// the block they share most become separate variables with those entries
/// removed. Such combinations are pinned only by the remaining blocks, and
/// without the rewrite their weight in the Schur matrix drowns in cancellation
/// error.
fn split_block_nullspaces(mut red: Reduced) -> Reduced {
    let st = structure(&red);
    let nb = red.blocks.len();
    let mut cluster_vars: Vec<Vec<usize>> = vec![Vec::new(); st.cluster_sizes.len()];
    for (z, sl) in st.slots.iter().enumerate() {
        if let Slot::Cluster(a, _) = sl {
            cluster_vars[*a].push(z);
        }
    }
    let mut local: Vec<BTreeMap<usize, usize>> = red
        .blocks
        .iter()
        .map(|blk| blk.vars.iter().enumerate().map(|(k, z)| (*z, k)).collect())
        .collect();
    for vars in &cluster_vars {
        let mut counts = vec![0usize; nb];
        for z in vars {
            for (b, loc) in local.iter().enumerate() {
                if loc.contains_key(z) {
                    counts[b] += 1;
                }
            }
        }
        let Some((bstar, &cnt)) = counts.iter().enumerate().max_by_key(|(_, c)| **c) else {
            continue;
        };
        let n = red.blocks[bstar].dim;
        let cols: Vec<usize> = vars.iter().copied().filter(|z| local[bstar].contains_key(z)).collect();
        if cnt < 2 || cols.len() <= n * (n + 1) / 2 {
            continue;
        }
        let mut offsets = Vec::with_capacity(n);
        let mut rows = 0;
        for r in 0..n {
            offsets.push(rows);
            rows += n - r;
        }
        let mut m = DMatrix::zeros(rows, cols.len());
        for (j, z) in cols.iter().enumerate() {
            let k = local[bstar][z];
            for &(r, c, v) in &red.blocks[bstar].coeffs[k] {
                if r <= c {
                    let w = if r == c { 1.0 } else { std::f64::consts::SQRT_2 };
                    m[(offsets[r] + c - r, j)] += w * v;
                }
            }
        }
        let (piv, deps) = pivoted_span(&m, 1e-10);
        if deps.is_empty() {
            continue;
        }
        let piv: Vec<usize> = piv.iter().map(|j| cols[*j]).collect();
        let deps: Vec<(usize, Vec<f64>)> = deps.into_iter().map(|(j, b)| (cols[j], b)).collect();
        let is_dep: BTreeMap<usize, ()> = deps.iter().map(|(j, _)| (*j, ())).collect();
        // u_j replaces y_j and y_p = u_p - sum_j beta_pj u_j
        for (b, blk) in red.blocks.iter_mut().enumerate() {
            let touched = deps.iter().any(|(j, bet)| {
                local[b].contains_key(j)
                    || piv.iter().zip(bet).any(|(p, v)| *v != 0.0 && local[b].contains_key(p))
            });
            if !touched {
                continue;
            }
            let mut new_coeffs: Vec<(usize, Entries)> = Vec::new();
            if b != bstar {
                for (j, bet) in &deps {
                    let mut d: DMatrix<f64> = DMatrix::zeros(blk.dim, blk.dim);
                    let mut mag: f64 = 0.0;
                    if let Some(k) = local[b].get(j) {
                        for &(r, c, v) in &blk.coeffs[*k] {
                            d[(r, c)] += v;
                            mag = mag.max(v.abs());
                        }
                    }
                    for (p, bp) in piv.iter().zip(bet) {
                        if *bp == 0.0 {
                            continue;
                        }
                        if let Some(k) = local[b].get(p) {
                            for &(r, c, v) in &blk.coeffs[*k] {
                                d[(r, c)] -= bp * v;
                                mag = mag.max((bp * v).abs());
                            }
                        }
                    }
                    let cut = 1e-14 * mag;
                    let mut e = Entries::new();
                    for c in 0..blk.dim {
                        for r in 0..blk.dim {
                            if d[(r, c)].abs() > cut {
                                e.push((r, c, d[(r, c)]));
                            }
                        }
                    }
                    if !e.is_empty() {
                        new_coeffs.push((*j, e));
                    }
                }
            }
            let mut vars = Vec::with_capacity(blk.vars.len());
            let mut coeffs = Vec::with_capacity(blk.vars.len());
            for (z, e) in blk.vars.drain(..).zip(blk.coeffs.drain(..)) {
                if !is_dep.contains_key(&z) {
                    vars.push(z);
                    coeffs.push(e);
                }
            }
            for (z, e) in new_coeffs {
                vars.push(z);
                coeffs.push(e);
            }
            blk.vars = vars;
            blk.coeffs = coeffs;
            local[b] = blk.vars.iter().enumerate().map(|(k, z)| (*z, k)).collect();
        }
        for (j, bet) in &deps {
            red.c[*j] -= piv.iter().zip(bet).map(|(p, v)| v * red.c[*p]).sum::<f64>();
        }
        let pos: BTreeMap<usize, usize> = piv.iter().enumerate().map(|(k, p)| (*p, k)).collect();
        for row in red.map.iter_mut() {
            let mut extra: BTreeMap<usize, f64> = BTreeMap::new();
            for (z, w) in row.iter() {
                if let Some(k) = pos.get(z) {
                    for (j, bet) in &deps {
                        if bet[*k] != 0.0 {
                            *extra.entry(*j).or_default() -= w * bet[*k];
                        }
                    }
                }
            }
            for (z, w) in row.iter_mut() {
                if let Some(v) = extra.remove(z) {
                    *w += v;
                }
            }
            row.extend(extra);
        }
    }
    red
}

/// Relative residual below which a coefficient matrix counts as a combination
/// of the ones kept before it.
const DEPENDENCE_TOL: f64 = 1e-10;

/// Incrementally built Cholesky factor of a Gram matrix restricted to the
/// columns accepted so far.
#[derive(Default)]
struct Greedy {
    kept: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

impl Greedy {
    fn forward(&self, g: &[f64]) -> Vec<f64> {
        let mut l = Vec::with_capacity(self.rows.len());
        for (i, row) in self.rows.iter().enumerate() {
            let s: f64 = row[..i].iter().zip(&l).map(|(a, b)| a * b).sum();
            l.push((g[i] - s) / row[i]);
        }
        l
    }

    fn backward(&self, mut l: Vec<f64>) -> Vec<f64> {
        for i in (0..l.len()).rev() {
            l[i] /= self.rows[i][i];
            let li = l[i];
            for (x, a) in l[..i].iter_mut().zip(&self.rows[i]) {
                *x -= a * li;
            }
        }
        l
    }

    /// Offers column `j` with Gram entries `g` against the kept set and
    /// diagonal `gjj`. Returns false if `j` was dropped as dependent.
    fn offer(&mut self, j: usize, g: &[f64], gjj: f64, c: &[f64], cj: f64) -> bool {
        let l = self.forward(g);
        let d = gjj - l.iter().map(|v| v * v).sum::<f64>();
        if d > DEPENDENCE_TOL * gjj {
            let mut row = l;
            row.push(d.sqrt());
            self.kept.push(j);
            self.rows.push(row);
            return true;
        }
        let beta = self.backward(l.clone());
        let pred: f64 = beta.iter().zip(c).map(|(b, v)| b * v).sum();
        let scale = cj.abs() + beta.iter().zip(c).map(|(b, v)| (b * v).abs()).sum::<f64>();
        if (cj - pred).abs() <= 1e-9 * scale.max(f64::MIN_POSITIVE) || scale == 0.0 {
            return false;
        }
        // cost is not in the span: keep it so the iteration can expose the
        // unbounded direction
        let mut row = l;
        row.push((DEPENDENCE_TOL * gjj).sqrt().max(f64::MIN_POSITIVE));
        self.kept.push(j);
        self.rows.push(row);
        true
    }

    fn solve(&self, g: &[f64]) -> Vec<f64> {
        self.backward(self.forward(g))
    }
}

/// Drops variables whose coefficient matrices are linear combinations of
/// others. Fixing them at zero leaves the feasible set of `F(y)` unchanged,
/// and the consistency test on the cost keeps the optimal value unchanged.
fn drop_dependent(red: Reduced) -> Reduced {
    let st = structure(&red);
    let eyes: Vec<DMatrix<f64>> = red
        .blocks
        .iter()
        .map(|b| DMatrix::identity(b.dim, b.dim))
        .collect();
    let ws: Vec<&DMatrix<f64>> = eyes.iter().collect();
    let g = schur_matrix(&red, &st, &ws);
    let mut cluster_vars: Vec<Vec<usize>> = st.cluster_sizes.iter().map(|n| vec![0; *n]).collect();
    let mut link_vars = vec![0; st.n_link];
    for (z, s) in st.slots.iter().enumerate() {
        match s {
            Slot::Cluster(a, p) => cluster_vars[*a][*p] = z,
            Slot::Link(p) => link_vars[*p] = z,
        }
    }
    let mut keep = vec![false; red.m];
    let nl = st.n_link;
    let mut s_mat = g.ll.clone();
    let mut c_link = DVector::from_iterator(nl, link_vars.iter().map(|z| red.c[*z]));
    for (a, vars) in cluster_vars.iter().enumerate() {
        let aa = &g.aa[a];
        let mut gr = Greedy::default();
        let mut ck = Vec::new();
        for (p, z) in vars.iter().enumerate() {
            let col: Vec<f64> = gr.kept.iter().map(|q| aa[(*q, p)]).collect();
            if gr.offer(p, &col, aa[(p, p)], &ck, red.c[*z]) {
                ck.push(red.c[*z]);
                keep[*z] = true;
            }
        }
        if nl == 0 {
            continue;
        }
        let al = &g.al[a];
        let ck_vec: Vec<f64> = gr.kept.iter().map(|q| red.c[vars[*q]]).collect();
        let wc = gr.solve(&ck_vec);
        let mut w = DMatrix::zeros(gr.kept.len(), nl);
        for l in 0..nl {
            let col: Vec<f64> = gr.kept.iter().map(|q| al[(*q, l)]).collect();
            w.set_column(l, &DVector::from_vec(gr.solve(&col)));
        }
        for l in 0..nl {
            for (i, q) in gr.kept.iter().enumerate() {
                c_link[l] -= al[(*q, l)] * wc[i];
            }
        }
        let alk = DMatrix::from_fn(gr.kept.len(), nl, |i, l| al[(gr.kept[i], l)]);
        s_mat -= alk.transpose() * w;
    }
    let mut gr = Greedy::default();
    let mut ck = Vec::new();
    for l in 0..nl {
        let col: Vec<f64> = gr.kept.iter().map(|q| s_mat[(*q, l)]).collect();
        if gr.offer(l, &col, s_mat[(l, l)], &ck, c_link[l]) {
            ck.push(c_link[l]);
            keep[link_vars[l]] = true;
        }
    }
    if keep.iter().all(|k| *k) {
        return red;
    }
    let mut renumber = vec![usize::MAX; red.m];
    let mut next = 0;
    for z in 0..red.m {
        if keep[z] {
            renumber[z] = next;
            next += 1;
        }
    }
    let blocks = red
        .blocks
        .into_iter()
        .map(|b| {
            let (vars, coeffs): (Vec<usize>, Vec<Entries>) = b
                .vars
                .into_iter()
                .zip(b.coeffs)
                .filter(|(z, _)| keep[*z])
                .map(|(z, e)| (renumber[z], e))
                .unzip();
            Block { dim: b.dim, f0: b.f0, vars, coeffs }
        })
        .collect();
    let c = DVector::from_iterator(next, (0..red.m).filter(|z| keep[*z]).map(|z| red.c[z]));
    let map = red
        .map
        .into_iter()
        .map(|row| {
            row.into_iter()
                .filter(|(z, _)| keep[*z])
                .map(|(z, w)| (renumber[z], w))
                .collect()
        })
        .collect();
    Reduced { m: next, blocks, c, base: red.base, map }
}

struct Schur {
    aa: Vec<DMatrix<f64>>,
    al: Vec<DMatrix<f64>>,
    ll: DMatrix<f64>,
}

impl Schur {
    fn new(s: &Structure) -> Self {
        Self {
            aa: s.cluster_sizes.iter().map(|n| DMatrix::zeros(*n, *n)).collect(),
            al: s.cluster_sizes.iter().map(|n| DMatrix::zeros(*n, s.n_link)).collect(),
            ll: DMatrix::zeros(s.n_link, s.n_link),
        }
    }

    fn add(&mut self, s: &Structure, i: usize, j: usize, v: f64) {
        match (&s.slots[i], &s.slots[j]) {
            (Slot::Cluster(a, p), Slot::Cluster(b, q)) => {
                debug_assert_eq!(a, b);
                self.aa[*a][(*p, *q)] += v;
            }
            (Slot::Cluster(a, p), Slot::Link(q)) => self.al[*a][(*p, *q)] += v,
            (Slot::Link(_), Slot::Cluster(_, _)) => {}
            (Slot::Link(p), Slot::Link(q)) => self.ll[(*p, *q)] += v,
        }
    }

    fn matvec(&self, s: &Structure, x: &DVector<f64>) -> DVector<f64> {
        let (xa, xl) = split(s, x);
        let mut ya: Vec<DVector<f64>> = Vec::with_capacity(xa.len());
        let mut yl = &self.ll * &xl;
        for a in 0..xa.len() {
            ya.push(&self.aa[a] * &xa[a] + &self.al[a] * &xl);
            yl += self.al[a].transpose() * &xa[a];
        }
        join(s, &ya, &yl)
    }
}

fn split(s: &Structure, x: &DVector<f64>) -> (Vec<DVector<f64>>, DVector<f64>) {
    let mut xa: Vec<DVector<f64>> = s.cluster_sizes.iter().map(|n| DVector::zeros(*n)).collect();
    let mut xl = DVector::zeros(s.n_link);
    for (z, slot) in s.slots.iter().enumerate() {
        match slot {
            Slot::Cluster(a, p) => xa[*a][*p] = x[z],
            Slot::Link(p) => xl[*p] = x[z],
        }
    }
    (xa, xl)
}

fn join(s: &Structure, xa: &[DVector<f64>], xl: &DVector<f64>) -> DVector<f64> {
    let mut x = DVector::zeros(s.slots.len());
    for (z, slot) in s.slots.iter().enumerate() {
        x[z] = match slot {
            Slot::Cluster(a, p) => xa[*a][*p],
            Slot::Link(p) => xl[*p],
        };
    }
    x
}

/// Dense Cholesky factor stored as a packed row-major lower triangle.
struct DenseCholesky {
    n: usize,
    /// Row-major lower triangle, row `i` holds `l[i*n .. i*n + i + 1]`.
    l: Vec<f64>,
}

/// Diagonal shifts tried in turn, relative to the largest Schur diagonal.
const SHIFTS: [f64; 4] = [1e-14, 1e-12, 1e-10, 1e-8];

impl DenseCholesky {
    fn new(m: &DMatrix<f64>) -> Option<Self> {
        let n = m.nrows();
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                l[i * n + j] = m[(i, j)];
            }
        }
        for j in 0..n {
            let ajj = l[j * n + j];
            if !ajj.is_finite() {
                return None;
            }
            let (head, rest) = l.split_at_mut(j * n);
            let _ = head;
            let rowj = &rest[..j];
            let d = ajj - rowj.iter().map(|v| v * v).sum::<f64>();
            if !(d > 0.0) {
                return None;
            }
            let piv = d.sqrt();
            l[j * n + j] = piv;
            let (upper, lower) = l.split_at_mut((j + 1) * n);
            let rowj = &upper[j * n..j * n + j];
            for i in (j + 1)..n {
                let rowi = &mut lower[(i - j - 1) * n..(i - j - 1) * n + j + 1];
                let s: f64 = rowi[..j].iter().zip(rowj).map(|(a, b)| a * b).sum();
                rowi[j] = (rowi[j] - s) / piv;
            }
        }
        Some(Self { n, l })
    }

    fn solve_mut(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(a, x)| a * x).sum();
            b[i] = (b[i] - s) / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            b[i] /= self.l[i * n + i];
            let bi = b[i];
            let row = &self.l[i * n..i * n + i];
            for (x, a) in b[..i].iter_mut().zip(row) {
                *x -= a * bi;
            }
        }
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_mut(x.as_mut_slice());
        x
    }

    fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        for mut c in x.column_iter_mut() {
            self.solve_mut(c.as_mut_slice());
        }
        x
    }
}

struct Factored {
    aa: Vec<DenseCholesky>,
    /// `H_aa^{-1} H_al` per cluster
    w: Vec<DMatrix<f64>>,
    s: DenseCholesky,
}

impl Factored {
    fn new(h: &Schur) -> Option<Self> {
        SHIFTS.iter().find_map(|rel| Self::with_shift(h, *rel))
    }

    /// Factors with every diagonal entry raised by `rel` times the largest one.
    fn with_shift(h: &Schur, rel: f64) -> Option<Self> {
        let dmax = h
            .aa
            .iter()
            .chain(std::iter::once(&h.ll))
            .flat_map(|m| m.diagonal().iter().copied().collect::<Vec<_>>())
            .fold(0.0, f64::max);
        let bump = |m: &DMatrix<f64>| {
            let mut m = m.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += rel * dmax;
            }
            m
        };
        let regs: Vec<DMatrix<f64>> = h.aa.iter().map(bump).collect();
        let parts: Vec<Option<(DenseCholesky, DMatrix<f64>)>> = regs
            .par_iter()
            .zip(h.al.par_iter())
            .map(|(aa, al)| {
                let ch = DenseCholesky::new(aa)?;
                let w = ch.solve_matrix(al);
                Some((ch, w))
            })
            .collect();
        let mut aa = Vec::with_capacity(parts.len());
        let mut w = Vec::with_capacity(parts.len());
        for p in parts {
            let (c, x) = p?;
            aa.push(c);
            w.push(x);
        }
        let mut s = bump(&h.ll);
        for (al, wa) in h.al.iter().zip(&w) {
            s -= al.transpose() * wa;
        }
        let s = DenseCholesky::new(&sym(&s))?;
        Some(Self { aa, w, s })
    }

    fn solve(&self, st: &Structure, h: &Schur, b: &DVector<f64>) -> Option<DVector<f64>> {
        let (ba, bl) = split(st, b);
        let ya: Vec<DVector<f64>> = self.aa.iter().zip(&ba).map(|(c, v)| c.solve(v)).collect();
        let mut rl = bl.clone();
        for (al, y) in h.al.iter().zip(&ya) {
            rl -= al.transpose() * y;
        }
        let xl = self.s.solve(&rl);
        let xa: Vec<DVector<f64>> = ya
            .iter()
            .zip(&self.w)
            .map(|(y, w)| y - w * &xl)
            .collect();
        let x = join(st, &xa, &xl);
        if x.iter().all(|v| v.is_finite()) {
            Some(x)
        } else {
            None
        }
    }
}

/// Conjugate gradients on `H x = b` preconditioned by the factorization.
fn pcg(st: &Structure, h: &Schur, fac: &Factored, b: &DVector<f64>) -> Option<DVector<f64>> {
    let bn = b.norm();
    let mut x = fac.solve(st, h, b)?;
    if bn == 0.0 {
        return Some(x);
    }
    let mut r = b - h.matvec(st, &x);
    let mut z = fac.solve(st, h, &r)?;
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let mut best = (r.norm(), x.clone());
    for _ in 0..50 {
        if best.0 <= 1e-15 * bn || rz <= 0.0 {
            break;
        }
        let hp = h.matvec(st, &p);
        let php = p.dot(&hp);
        if !(php > 0.0) {
            break;
        }
        let a = rz / php;
        x.axpy(a, &p, 1.0);
        r.axpy(-a, &hp, 1.0);
        let rn = r.norm();
        if rn < best.0 {
            best = (rn, x.clone());
        }
        z = fac.solve(st, h, &r)?;
        let rz_new = r.dot(&z);
        p = &z + &p * (rz_new / rz);
        rz = rz_new;
    }
    Some(best.1)
}

// -- interior point ------------------------------------------------------------

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn tr_entries(f: &Entries, m: &DMatrix<f64>) -> f64 {
    // tr(F M) = sum F[r,c] M[c,r]
    f.iter().map(|&(r, c, v)| v * m[(c, r)]).sum()
}

fn combine(blk: &Block, dy: &DVector<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(blk.dim, blk.dim);
    for (k, z) in blk.vars.iter().enumerate() {
        let d = dy[*z];
        if d != 0.0 {
            for &(r, c, v) in &blk.coeffs[k] {
                m[(r, c)] += v * d;
            }
        }
    }
    m
}

/// Largest step `a` with `D + a M` positive semidefinite, `D` diagonal positive.
fn max_step(d: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    let n = d.len();
    let s = d.map(|v| 1.0 / v.sqrt());
    let t = DMatrix::from_fn(n, n, |i, j| s[i] * m[(i, j)] * s[j]);
    let t = sym(&t);
    let lmin = if n == 1 {
        t[(0, 0)]
    } else {
        SymmetricEigen::new(t).eigenvalues.min()
    };
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

struct State {
    x: Vec<DMatrix<f64>>,
    z: Vec<DMatrix<f64>>,
    y: DVector<f64>,
}

/// Nesterov-Todd scaling of one block: `G^T Z G = G^{-1} X G^{-T} = diag(d)`
/// and `W = G G^T`.
struct Scaling {
    g: DMatrix<f64>,
    ginv: DMatrix<f64>,
    d: DVector<f64>,
    w: DMatrix<f64>,
}

fn scaling(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<Scaling> {
    let l = Cholesky::new(sym(x))?.l();
    let m = sym(&(l.transpose() * z * &l));
    let eig = SymmetricEigen::new(m);
    if eig.eigenvalues.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return None;
    }
    let q = eig.eigenvalues.map(|v| v.powf(-0.25));
    let qi = eig.eigenvalues.map(|v| v.powf(0.25));
    let lu = &l * &eig.eigenvectors;
    let g = DMatrix::from_fn(lu.nrows(), lu.ncols(), |i, j| lu[(i, j)] * q[j]);
    let linv = l.clone().try_inverse()?;
    let uli = eig.eigenvectors.transpose() * linv;
    let ginv = DMatrix::from_fn(uli.nrows(), uli.ncols(), |i, j| qi[i] * uli[(i, j)]);
    let d = eig.eigenvalues.map(|v| v.sqrt());
    let w = sym(&(&g * g.transpose()));
    Some(Scaling { g, ginv, d, w })
}

fn z_of_y(red: &Reduced, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
    red.blocks.iter().map(|b| &b.f0 + combine(b, y)).collect()
}

/// `H_ij = sum_b tr(F_i W_b F_j W_b)`.
fn schur_matrix(red: &Reduced, st: &Structure, ws: &[&DMatrix<f64>]) -> Schur {
    let mut h = Schur::new(st);
    let locals: Vec<DMatrix<f64>> = red
        .blocks
        .par_iter()
        .enumerate()
        .map(|(b, blk)| {
            let w = ws[b];
            let k = blk.vars.len();
            let mut hb = DMatrix::zeros(k, k);
            let mut acc = DMatrix::zeros(blk.dim, blk.dim);
            for j in 0..k {
                acc.fill(0.0);
                // W F_j W
                for &(p, q, f) in &blk.coeffs[j] {
                    let wc = w.column(p);
                    for r in 0..blk.dim {
                        let v = f * w[(q, r)];
                        if v != 0.0 {
                            acc.column_mut(r).axpy(v, &wc, 1.0);
                        }
                    }
                }
                for i in 0..=j {
                    let v = tr_entries(&blk.coeffs[i], &acc);
                    hb[(i, j)] = v;
                    hb[(j, i)] = v;
                }
            }
            hb
        })
        .collect();
    for (blk, hb) in red.blocks.iter().zip(&locals) {
        for (j, zj) in blk.vars.iter().enumerate() {
            for (i, zi) in blk.vars.iter().enumerate() {
                h.add(st, *zi, *zj, hb[(i, j)]);
            }
        }
    }
    h
}

struct Direction {
    dx: Vec<DMatrix<f64>>,
    dz: Vec<DMatrix<f64>>,
    dy: DVector<f64>,
}

#[allow(clippy::too_many_arguments)]
fn direction(
    red: &Reduced,
    st: &Structure,
    h: &Schur,
    fac: &Factored,
    state: &State,
    sc: &[Scaling],
    rz: &[DMatrix<f64>],
    sigma_mu: f64,
    corr: Option<&Direction>,
) -> Option<Direction> {
    let nb = red.blocks.len();
    // scaled complementarity: (d_i + d_j)(dX~ + dZ~)_ij = rhs_ij
    let mut p: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
    for b in 0..nb {
        let s = &sc[b];
        let n = s.d.len();
        let mut r = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                2.0 * (sigma_mu - s.d[i] * s.d[i])
            } else {
                0.0
            }
        });
        if let Some(c) = corr {
            let dxs = &s.ginv * &c.dx[b] * s.ginv.transpose();
            let dzs = s.g.transpose() * &c.dz[b] * &s.g;
            let prod = &dxs * &dzs;
            r -= &prod + prod.transpose();
        }
        let e = DMatrix::from_fn(n, n, |i, j| r[(i, j)] / (s.d[i] + s.d[j]));
        p.push(sym(&(&s.g * e * s.g.transpose())));
    }
    // tr(F_i(P - W Rz W)) - r_i with r_i = c_i - tr(F_i X)
    let mut rhs = -red.c.clone();
    for (b, blk) in red.blocks.iter().enumerate() {
        let q = &p[b] - &sc[b].w * &rz[b] * &sc[b].w + &state.x[b];
        for (k, z) in blk.vars.iter().enumerate() {
            rhs[*z] += tr_entries(&blk.coeffs[k], &q);
        }
    }
    let mut dy = pcg(st, h, fac, &rhs)?;
    if dy.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let build = |dy: &DVector<f64>| {
        let mut dz = Vec::with_capacity(nb);
        let mut dx = Vec::with_capacity(nb);
        for (b, blk) in red.blocks.iter().enumerate() {
            let d = combine(blk, dy) + &rz[b];
            let t = &p[b] - &sc[b].w * &d * &sc[b].w;
            dx.push(sym(&t));
            dz.push(d);
        }
        (dx, dz)
    };
    let (mut dx, mut dz) = build(&dy);
    // refine against the equality residual tr(F_i (X + dX)) - c_i of the
    // assembled dX, which drifts from the Schur solve when H is ill conditioned
    let residual = |dx: &[DMatrix<f64>]| {
        let mut res = -red.c.clone();
        for (b, blk) in red.blocks.iter().enumerate() {
            let q = &dx[b] + &state.x[b];
            for (k, z) in blk.vars.iter().enumerate() {
                res[*z] += tr_entries(&blk.coeffs[k], &q);
            }
        }
        res
    };
    let mut res = residual(&dx);
    for _ in 0..3 {
        if res.norm() <= 1e-14 * (1.0 + red.c.norm()) {
            break;
        }
        let delta = pcg(st, h, fac, &res)?;
        let trial = &dy + delta;
        let (tx, tz) = build(&trial);
        let tres = residual(&tx);
        if !(tres.norm() < res.norm()) {
            break;
        }
        (dy, dx, dz, res) = (trial, tx, tz, tres);
    }
    Some(Direction { dx, dz, dy })
}

fn steps(sc: &[Scaling], d: &Direction) -> (f64, f64) {
    let mut ap = f64::INFINITY;
    let mut ad = f64::INFINITY;
    for (b, s) in sc.iter().enumerate() {
        let dxs = &s.ginv * &d.dx[b] * s.ginv.transpose();
        let dzs = s.g.transpose() * &d.dz[b] * &s.g;
        ap = ap.min(max_step(&s.d, &dxs));
        ad = ad.min(max_step(&s.d, &dzs));
    }
    (ap, ad)
}

struct Outcome {
    status: SdpStatus,
    y: DVector<f64>,
    gap: f64,
    iterations: usize,
}

fn interior_point(red: &Reduced, opts: &SolverOptions) -> Outcome {
    let st = structure(red);
    let nb = red.blocks.len();
    let n_total: usize = red.blocks.iter().map(|b| b.dim).sum();
    let fnorm = |e: &Entries| e.iter().map(|t| t.2 * t.2).sum::<f64>().sqrt();
    let mut max_f: f64 = 0.0;
    let mut ratio: f64 = 0.0;
    for blk in &red.blocks {
        for (k, z) in blk.vars.iter().enumerate() {
            let nf = fnorm(&blk.coeffs[k]);
            max_f = max_f.max(nf);
            ratio = ratio.max((1.0 + red.c[*z].abs()) / (1.0 + nf));
        }
    }
    let f0_norm = red.blocks.iter().map(|b| b.f0.norm_squared()).sum::<f64>().sqrt();
    let c_norm = red.c.norm();

    let mut state = State {
        x: Vec::with_capacity(nb),
        z: Vec::with_capacity(nb),
        y: DVector::zeros(red.m),
    };
    for blk in &red.blocks {
        let n = blk.dim as f64;
        let xi = 10f64.max(n.sqrt()).max(n * ratio);
        let eta = 10f64.max(n.sqrt()).max(max_f).max(blk.f0.norm());
        state.x.push(DMatrix::identity(blk.dim, blk.dim) * xi);
        state.z.push(DMatrix::identity(blk.dim, blk.dim) * eta);
    }

    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut stalls = 0;
    let mut gap = f64::INFINITY;
    for iter in 0..opts.max_iter {
        let zy = z_of_y(red, &state.y);
        let rz: Vec<DMatrix<f64>> = zy.iter().zip(&state.z).map(|(a, b)| a - b).collect();
        let pinf = rz.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt() / (1.0 + f0_norm);
        let mut ax = DVector::zeros(red.m);
        for (b, blk) in red.blocks.iter().enumerate() {
            for (k, z) in blk.vars.iter().enumerate() {
                ax[*z] += tr_entries(&blk.coeffs[k], &state.x[b]);
            }
        }
        let dinf = (&red.c - &ax).norm() / (1.0 + c_norm);
        let pobj = red.c.dot(&state.y);
        let f0x: f64 = red.blocks.iter().zip(&state.x).map(|(b, x)| inner(&b.f0, x)).sum();
        let dobj = -f0x;
        let xz: f64 = state.x.iter().zip(&state.z).map(|(x, z)| inner(x, z)).sum();
        let mu = xz / n_total as f64;
        gap = (pobj - dobj).abs().max(xz.abs()) / (1.0 + pobj.abs() + dobj.abs());

        if pinf <= opts.feas_tol && dinf <= opts.feas_tol && gap <= opts.gap_tol {
            let lmin = zy.iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min);
            if lmin >= -opts.feas_tol {
                return Outcome {
                    status: SdpStatus::Optimal,
                    y: state.y,
                    gap,
                    iterations: iter,
                };
            }
        }
        if pinf <= opts.feas_tol && gap.is_finite() && best.as_ref().is_none_or(|(g, _)| gap < *g) {
            best = Some((gap, state.y.clone()));
        }
        // infeasibility certificates
        if f0x < 0.0 && dinf > opts.feas_tol && ax.norm() / -f0x <= opts.feas_tol * (1.0 + max_f) {
            return Outcome {
                status: SdpStatus::Infeasible,
                y: state.y,
                gap,
                iterations: iter,
            };
        }
        if pobj < 0.0 && state.y.norm() > 1e6 {
            let lmin = red
                .blocks
                .iter()
                .map(|b| min_eigenvalue(&combine(b, &state.y)))
                .fold(f64::INFINITY, f64::min);
            if lmin / -pobj >= -opts.feas_tol {
                return Outcome {
                    status: SdpStatus::Unbounded,
                    y: state.y,
                    gap,
                    iterations: iter,
                };
            }
        }

        let mut sc = Vec::with_capacity(nb);
        for b in 0..nb {
            let Some(s) = scaling(&state.x[b], &state.z[b]) else {
                return trouble(best, state.y, gap, iter);
            };
            sc.push(s);
        }
        let ws: Vec<&DMatrix<f64>> = sc.iter().map(|s| &s.w).collect();
        let h = schur_matrix(red, &st, &ws);
        let Some(fac) = Factored::new(&h) else {
            return trouble(best, state.y, gap, iter);
        };
        let Some(pred) = direction(red, &st, &h, &fac, &state, &sc, &rz, 0.0, None) else {
            return trouble(best, state.y, gap, iter);
        };
        let (ap, ad) = steps(&sc, &pred);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mut xz_aff = 0.0;
        for b in 0..nb {
            let xa = &state.x[b] + &pred.dx[b] * ap;
            let za = &state.z[b] + &pred.dz[b] * ad;
            xz_aff += inner(&xa, &za);
        }
        let ratio = (xz_aff / xz).clamp(0.0, 1.0);
        // keep some centering while the affine constraints are still violated
        let sigma = ratio.powi(3).max(if pinf > opts.feas_tol { 1e-3 } else { 0.0 });
        let Some(d) = direction(red, &st, &h, &fac, &state, &sc, &rz, sigma * mu, Some(&pred))
        else {
            return trouble(best, state.y, gap, iter);
        };
        let (ap, ad) = steps(&sc, &d);
        // fixed fraction to the boundary: longer steps lose centrality on the
        // narrow-band problems and the gap stalls
        let tau = 0.9;
        let ap = (tau * ap).min(1.0);
        let ad = (tau * ad).min(1.0);
        if ap.min(ad) < 1e-8 {
            stalls += 1;
            if stalls >= 3 {
                return trouble(best, state.y, gap, iter + 1);
            }
        } else {
            stalls = 0;
        }
        for b in 0..nb {
            state.x[b] = sym(&(&state.x[b] + &d.dx[b] * ap));
            state.z[b] = sym(&(&state.z[b] + &d.dz[b] * ad));
        }
        state.y += &d.dy * ad;
        if state.y.iter().any(|v| !v.is_finite()) {
            return trouble(best, state.y, gap, iter + 1);
        }
    }
    Outcome {
        status: SdpStatus::IterationLimit,
        y: best.map(|b| b.1).unwrap_or(state.y),
        gap,
        iterations: opts.max_iter,
    }
}

fn trouble(best: Option<(f64, DVector<f64>)>, y: DVector<f64>, gap: f64, iter: usize) -> Outcome {
    let (gap, y) = match best {
        Some((g, by)) => (g, by),
        None => (gap, y),
    };
    Outcome {
        status: SdpStatus::NumericalTrouble,
        y,
        gap,
        iterations: iter,
    }
}

fn expand(red: &Reduced, y: &DVector<f64>) -> Vec<f64> {
    red.base
        .iter()
        .zip(&red.map)
        .map(|(b, row)| b + row.iter().map(|(z, w)| w * y[*z]).sum::<f64>())
        .collect()
}

/// Solves `sdp`; see the module docs for the method.
///
/// Returns an error for malformed or structurally empty problems; infeasibility
/// and numerical failure are reported through [`SdpSolution::status`].
pub fn solve(sdp: &StandardSdp, opts: &SolverOptions) -> Result<SdpSolution> {
    opts.validate()?;
    validate(sdp)?;
    if sdp.n_vars == 0 && sdp.blocks.is_empty() && sdp.eq_rows.is_empty() {
        return Err(Error::InvalidProblem("empty SDP: no variables or constraints".into()));
    }
    let finish = |status: SdpStatus, x: Vec<f64>, gap: f64, iterations: usize| {
        let max_violation = sdp.max_violation(&x);
        SdpSolution {
            status,
            objective: sdp.objective_value(&x),
            x,
            max_violation,
            gap,
            iterations,
        }
    };
    match presolve(sdp, opts)? {
        Presolved::Infeasible(x) => Ok(finish(SdpStatus::Infeasible, x, f64::INFINITY, 0)),
        Presolved::Trivial(x) => Ok(finish(SdpStatus::Optimal, x, 0.0, 0)),
        Presolved::Ready(red) => {
            let red = drop_dependent(split_block_nullspaces(red));
            let out = interior_point(&red, opts);
            let x = expand(&red, &out.y);
            let mut sol = finish(out.status, x, out.gap, out.iterations);
            if sol.status == SdpStatus::Optimal && sol.max_violation > opts.feas_tol {
                sol.status = SdpStatus::NumericalTrouble;
            }
            Ok(sol)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::{AffineMatrixExpr, LmiProblem, Sense};

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn scalar_lower_bound() {
        let mut p = LmiProblem::new();
        let t = p.declare_scalar();
        p.add_strict_lmi(
            AffineMatrixExpr::var(&t) - AffineMatrixExpr::scalar_constant(3.0),
            Sense::Positive,
        )
        .unwrap();
        p.add_objective(&t, 1.0).unwrap();
        let sol = solve(&p.compile(1e-8).unwrap(), &opts()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.x[0] - 3.0).abs() < 1e-6, "{}", sol.x[0]);
    }

    #[test]
    fn two_by_two_eigen_bound() {
        let mut p = LmiProblem::new();
        let t = p.declare_scalar();
        let e = AffineMatrixExpr::scaled_var(&t, &DMatrix::identity(2, 2))
            + AffineMatrixExpr::constant(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        p.add_strict_lmi(e, Sense::Positive).unwrap();
        p.add_objective(&t, 1.0).unwrap();
        let sol = solve(&p.compile(1e-8).unwrap(), &opts()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_negative_block_is_infeasible() {
        let mut p = LmiProblem::new();
        let t = p.declare_scalar();
        p.add_strict_lmi(AffineMatrixExpr::scalar_constant(-1.0), Sense::Positive).unwrap();
        p.add_strict_lmi(AffineMatrixExpr::var(&t), Sense::Positive).unwrap();
        p.add_objective(&t, 1.0).unwrap();
        let sol = solve(&p.compile(1e-8).unwrap(), &opts()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }

    #[test]
    fn incompatible_bounds_are_infeasible() {
        // t >= 1 and t <= 0
        let mut p = LmiProblem::new();
        let t = p.declare_scalar();
        let one = AffineMatrixExpr::scalar_constant(1.0);
        p.add_strict_lmi(AffineMatrixExpr::var(&t) - one, Sense::Positive).unwrap();
        p.add_strict_lmi(AffineMatrixExpr::var(&t), Sense::Negative).unwrap();
        p.add_objective(&t, 1.0).unwrap();
        let sol = solve(&p.compile(1e-8).unwrap(), &opts()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }

    #[test]
    fn unbounded_below() {
        let mut p = LmiProblem::new();
        let t = p.declare_scalar();
        p.add_strict_lmi(AffineMatrixExpr::var(&t), Sense::Negative).unwrap();
        p.add_objective(&t, 1.0).unwrap();
        let sol = solve(&p.compile(1e-8).unwrap(), &opts()).unwrap();
        assert_eq!(sol.status, SdpStatus::Unbounded);
    }

    #[test]
    fn equalities_pin_variables() {
        // min t s.t. [[t, a],[a, 1]] >= 0, a = 2  ->  t = 4
        let mut p = LmiProblem::new();
        let t = p.declare_scalar();
        let a = p.declare_scalar();
        let mut e = AffineMatrixExpr::zeros(2, 2);
        e.add_scalar_at(&t, 0, 0, 1.0).unwrap();
        e.add_scalar_at(&a, 0, 1, 1.0).unwrap();
        e.add_scalar_at(&a, 1, 0, 1.0).unwrap();
        e.add_constant_at(1, 1, 1.0);
        p.add_strict_lmi(e, Sense::Positive).unwrap();
        p.add_equality(&[(a, 1.0)], 2.0).unwrap();
        p.add_objective(&t, 1.0).unwrap();
        let sol = solve(&p.compile(1e-8).unwrap(), &opts()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.x[1] - 2.0).abs() < 1e-12);
        assert!((sol.x[0] - 4.0).abs() < 1e-6, "{}", sol.x[0]);
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let mut p = LmiProblem::new();
        let t = p.declare_scalar();
        p.add_strict_lmi(AffineMatrixExpr::var(&t), Sense::Positive).unwrap();
        p.add_equality(&[(t, 1.0)], 1.0).unwrap();
        p.add_equality(&[(t, 2.0)], 1.0).unwrap();
        let sol = solve(&p.compile(1e-8).unwrap(), &opts()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }

    #[test]
    fn structural_errors() {
        assert!(solve(&LmiProblem::new().compile(1e-8).unwrap(), &opts()).is_err());
        // cost on a variable that appears nowhere
        let mut p = LmiProblem::new();
        let t = p.declare_scalar();
        let s = p.declare_scalar();
        p.add_strict_lmi(AffineMatrixExpr::var(&t), Sense::Positive).unwrap();
        p.add_objective(&s, 1.0).unwrap();
        assert!(solve(&p.compile(1e-8).unwrap(), &opts()).is_err());
        let bad = SolverOptions {
            feas_tol: 0.0,
            ..opts()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn matrix_variable_minimum_trace() {
        // min tr(X) s.t. X >= P: optimum X = P
        let pm = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.3, 0.0, 0.3, 1.5]);
        let mut p = LmiProblem::new();
        let x = p.declare_symmetric(3);
        p.add_strict_lmi(
            AffineMatrixExpr::var(&x) - AffineMatrixExpr::constant(pm.clone()),
            Sense::Positive,
        )
        .unwrap();
        let t = p.declare_scalar();
        p.add_objective(&t, 1.0).unwrap();
        let mut e = AffineMatrixExpr::zeros(1, 1);
        e.add_scalar_at(&t, 0, 0, 1.0).unwrap();
        let diag_sum = {
            let mut acc = AffineMatrixExpr::zeros(1, 1);
            for i in 0..3 {
                let mut sel = DMatrix::zeros(1, 3);
                sel[(0, i)] = 1.0;
                acc = acc + AffineMatrixExpr::var(&x).sandwich(&sel, &sel.transpose()).unwrap();
            }
            acc
        };
        p.add_strict_lmi(e - diag_sum, Sense::Positive).unwrap();
        let sol = solve(&p.compile(1e-8).unwrap(), &opts()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        let xv = p.value(&x, &sol.x);
        assert!((xv - pm).abs().max() < 1e-5);
    }
}
