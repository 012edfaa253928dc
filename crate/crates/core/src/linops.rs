//! Matrix-free linear maps with exact adjoints, and restarted GMRES.
//!
//! Every map carries its domain and codomain as a [`Space`]: a flat complex
//! vector with a uniform quadrature weight. Adjoints are taken with respect
//! to those weighted inner products, so composing grid operators with
//! different weights (macro grid, two-scale grid) stays consistent.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};

use crate::error::{HomogError, Result};
use crate::torus_grid::{dot, norm_sq, Lattice};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Space {
    pub len: usize,
    pub weight: f64,
}

impl Space {
    pub fn new(len: usize, weight: f64) -> Self {
        Space { len, weight }
    }

    pub fn inner(&self, u: &[C64], v: &[C64]) -> C64 {
        dot(u, v) * self.weight
    }

    pub fn norm(&self, u: &[C64]) -> f64 {
        (norm_sq(u) * self.weight).sqrt()
    }

    fn compatible(&self, other: &Space) -> bool {
        self.len == other.len && (self.weight - other.weight).abs() <= 1e-12 * self.weight.abs().max(other.weight.abs())
    }
}

pub trait LinearMap: Send + Sync {
    fn domain(&self) -> Space;
    fn codomain(&self) -> Space;
    fn apply(&self, x: &[C64]) -> Result<Vec<C64>>;
    fn adjoint_apply(&self, y: &[C64]) -> Result<Vec<C64>>;
    fn name(&self) -> String {
        "map".to_string()
    }
}

pub type Op = Arc<dyn LinearMap>;

type ApplyFn = dyn Fn(&[C64]) -> Result<Vec<C64>> + Send + Sync;

/// A map given by a pair of closures (forward and adjoint).
pub struct FnMap {
    name: String,
    domain: Space,
    codomain: Space,
    forward: Box<ApplyFn>,
    backward: Box<ApplyFn>,
}

impl FnMap {
    pub fn new(
        name: impl Into<String>,
        domain: Space,
        codomain: Space,
        forward: impl Fn(&[C64]) -> Result<Vec<C64>> + Send + Sync + 'static,
        backward: impl Fn(&[C64]) -> Result<Vec<C64>> + Send + Sync + 'static,
    ) -> Self {
        FnMap {
            name: name.into(),
            domain,
            codomain,
            forward: Box::new(forward),
            backward: Box::new(backward),
        }
    }

    pub fn op(self) -> Op {
        Arc::new(self)
    }
}

pub(crate) fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(HomogError::Shape(format!("{what}: vector of length {got}, expected {want}")));
    }
    Ok(())
}

impl LinearMap for FnMap {
    fn domain(&self) -> Space {
        self.domain
    }
    fn codomain(&self) -> Space {
        self.codomain
    }
    fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        check_len(&self.name, x.len(), self.domain.len)?;
        (self.forward)(x)
    }
    fn adjoint_apply(&self, y: &[C64]) -> Result<Vec<C64>> {
        check_len(&self.name, y.len(), self.codomain.len)?;
        (self.backward)(y)
    }
    fn name(&self) -> String {
        self.name.clone()
    }
}

struct Identity(Space);

impl LinearMap for Identity {
    fn domain(&self) -> Space {
        self.0
    }
    fn codomain(&self) -> Space {
        self.0
    }
    fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        Ok(x.to_vec())
    }
    fn adjoint_apply(&self, y: &[C64]) -> Result<Vec<C64>> {
        Ok(y.to_vec())
    }
    fn name(&self) -> String {
        "I".into()
    }
}

pub fn identity(space: Space) -> Op {
    Arc::new(Identity(space))
}

struct Compose(Op, Op);

impl LinearMap for Compose {
    fn domain(&self) -> Space {
        self.1.domain()
    }
    fn codomain(&self) -> Space {
        self.0.codomain()
    }
    fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        self.0.apply(&self.1.apply(x)?)
    }
    fn adjoint_apply(&self, y: &[C64]) -> Result<Vec<C64>> {
        self.1.adjoint_apply(&self.0.adjoint_apply(y)?)
    }
    fn name(&self) -> String {
        format!("{}*{}", self.0.name(), self.1.name())
    }
}

/// `a` after `b`.
pub fn compose(a: &Op, b: &Op) -> Result<Op> {
    if !b.codomain().compatible(&a.domain()) {
        return Err(HomogError::Shape(format!(
            "cannot compose {} ({:?}) after {} ({:?})",
            a.name(),
            a.domain(),
            b.name(),
            b.codomain()
        )));
    }
    Ok(Arc::new(Compose(a.clone(), b.clone())))
}

/// Compose a chain `ops[0] * ops[1] * ... * ops[last]`.
pub fn chain(ops: &[Op]) -> Result<Op> {
    let mut acc = ops.last().expect("empty chain").clone();
    for op in ops.iter().rev().skip(1) {
        acc = compose(op, &acc)?;
    }
    Ok(acc)
}

struct Sum(Op, Op);

fn axpy_into(acc: &mut [C64], other: &[C64]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

impl LinearMap for Sum {
    fn domain(&self) -> Space {
        self.0.domain()
    }
    fn codomain(&self) -> Space {
        self.0.codomain()
    }
    fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        let mut a = self.0.apply(x)?;
        axpy_into(&mut a, &self.1.apply(x)?);
        Ok(a)
    }
    fn adjoint_apply(&self, y: &[C64]) -> Result<Vec<C64>> {
        let mut a = self.0.adjoint_apply(y)?;
        axpy_into(&mut a, &self.1.adjoint_apply(y)?);
        Ok(a)
    }
    fn name(&self) -> String {
        format!("({} + {})", self.0.name(), self.1.name())
    }
}

pub fn add(a: &Op, b: &Op) -> Result<Op> {
    if !a.domain().compatible(&b.domain()) || !a.codomain().compatible(&b.codomain()) {
        return Err(HomogError::Shape(format!("cannot add {} and {}", a.name(), b.name())));
    }
    Ok(Arc::new(Sum(a.clone(), b.clone())))
}

struct Scaled(C64, Op);

impl LinearMap for Scaled {
    fn domain(&self) -> Space {
        self.1.domain()
    }
    fn codomain(&self) -> Space {
        self.1.codomain()
    }
    fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        Ok(self.1.apply(x)?.into_iter().map(|v| v * self.0).collect())
    }
    fn adjoint_apply(&self, y: &[C64]) -> Result<Vec<C64>> {
        let c = self.0.conj();
        Ok(self.1.adjoint_apply(y)?.into_iter().map(|v| v * c).collect())
    }
    fn name(&self) -> String {
        format!("({})*{}", self.0, self.1.name())
    }
}

pub fn scale(c: C64, a: &Op) -> Op {
    Arc::new(Scaled(c, a.clone()))
}

pub fn sub(a: &Op, b: &Op) -> Result<Op> {
    add(a, &scale(C64::new(-1.0, 0.0), b))
}

struct Adjoint(Op);

impl LinearMap for Adjoint {
    fn domain(&self) -> Space {
        self.0.codomain()
    }
    fn codomain(&self) -> Space {
        self.0.domain()
    }
    fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        self.0.adjoint_apply(x)
    }
    fn adjoint_apply(&self, y: &[C64]) -> Result<Vec<C64>> {
        self.0.apply(y)
    }
    fn name(&self) -> String {
        format!("{}^*", self.0.name())
    }
}

pub fn adjoint(a: &Op) -> Op {
    Arc::new(Adjoint(a.clone()))
}

/// `|<Au, v> - <u, A*v>|` relative to `max(|Au||v|, |u||A*v|)`.
pub fn adjoint_mismatch(a: &dyn LinearMap, u: &[C64], v: &[C64]) -> Result<f64> {
    let au = a.apply(u)?;
    let atv = a.adjoint_apply(v)?;
    let lhs = a.codomain().inner(&au, v);
    let rhs = a.domain().inner(u, &atv);
    let scale = (a.codomain().norm(&au) * a.codomain().norm(v)).max(a.domain().norm(u) * a.domain().norm(&atv));
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok((lhs - rhs).norm() / scale)
}

/// Worst adjoint mismatch over `pairs` seeded random pairs.
pub fn adjoint_test(a: &dyn LinearMap, pairs: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let u = random_vec(&mut rng, a.domain().len);
        let v = random_vec(&mut rng, a.codomain().len);
        worst = worst.max(adjoint_mismatch(a, &u, &v)?);
    }
    Ok(worst)
}

pub fn random_vec(rng: &mut impl Rng, len: usize) -> Vec<C64> {
    (0..len).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GmresConfig {
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for GmresConfig {
    fn default() -> Self {
        GmresConfig { tol: 1e-10, restart: 50, max_iter: 10_000 }
    }
}

impl GmresConfig {
    /// Defaults with `max_iter = 10 * unknowns`.
    pub fn for_size(unknowns: usize) -> Self {
        GmresConfig { max_iter: (10 * unknowns).max(100), ..Default::default() }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// `|b - A x| / |b|`.
    pub residual: f64,
    /// `|P^-1 (b - A x)| / |P^-1 b|`, equal to `residual` without a preconditioner.
    pub precond_residual: f64,
    pub converged: bool,
    pub preconditioner: String,
}

impl fmt::Display for SolveReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} iterations, relative residual {:.3e} (preconditioned {:.3e}), preconditioner {}",
            self.iterations, self.residual, self.precond_residual, self.preconditioner
        )
    }
}

/// Right-preconditioned restarted GMRES for `A x = rhs`.
///
/// The stopping test is on the true relative residual `|rhs - A x| / |rhs|`
/// (unweighted Euclidean norms), recomputed at the end of every cycle.
/// Non-convergence is an error carrying the report.
pub fn krylov_solve(
    a: &dyn LinearMap,
    rhs: &[C64],
    precond: Option<&dyn LinearMap>,
    cfg: &GmresConfig,
) -> Result<(Vec<C64>, SolveReport)> {
    let n = a.domain().len;
    check_len("krylov_solve rhs", rhs.len(), a.codomain().len)?;
    if n != rhs.len() {
        return Err(HomogError::Shape("krylov_solve needs a square map".into()));
    }
    let pname = precond.map(|p| p.name()).unwrap_or_else(|| "none".into());
    let bnorm = norm_sq(rhs).sqrt();
    let mut x = vec![C64::new(0.0, 0.0); n];
    if bnorm == 0.0 {
        return Ok((x, SolveReport { iterations: 0, residual: 0.0, precond_residual: 0.0, converged: true, preconditioner: pname }));
    }
    // The true residual of an h^-2 operator bottoms out near eps_mach |A| |x|; the
    // preconditioned residual tracks the relative error instead and keeps falling.
    let pbnorm = match precond {
        Some(p) => norm_sq(&p.apply(rhs)?).sqrt(),
        None => bnorm,
    };
    let m = cfg.restart.max(1);
    let mut iters = 0;
    let mut residual;
    let mut presidual;
    // cycles in a row that failed to improve on the best true residual by 1%
    let mut stalled = 0;
    let mut best = f64::INFINITY;
    loop {
        let ax = a.apply(&x)?;
        let r: Vec<C64> = rhs.iter().zip(&ax).map(|(b, v)| b - v).collect();
        let beta = norm_sq(&r).sqrt();
        residual = beta / bnorm;
        presidual = match precond {
            Some(p) if residual > cfg.tol && pbnorm > 0.0 => norm_sq(&p.apply(&r)?).sqrt() / pbnorm,
            _ => residual,
        };
        if residual <= cfg.tol || presidual <= cfg.tol {
            break;
        }
        stalled = if presidual > 0.99 * best { stalled + 1 } else { 0 };
        best = best.min(presidual);
        if iters >= cfg.max_iter || stalled >= 5 {
            let report =
                SolveReport { iterations: iters, residual, precond_residual: presidual, converged: false, preconditioner: pname };
            return Err(HomogError::NoConvergence { context: a.name(), report });
        }
        let mut v: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
        let mut z: Vec<Vec<C64>> = Vec::with_capacity(m);
        let mut hcols: Vec<Vec<C64>> = Vec::with_capacity(m);
        let mut cs: Vec<f64> = Vec::with_capacity(m);
        let mut sn: Vec<C64> = Vec::with_capacity(m);
        let mut g = vec![C64::new(0.0, 0.0); m + 1];
        g[0] = C64::new(beta, 0.0);
        v.push(r.iter().map(|c| c / beta).collect());
        let mut k = 0;
        while k < m && iters < cfg.max_iter {
            let zk = match precond {
                Some(p) => p.apply(&v[k])?,
                None => v[k].clone(),
            };
            let mut w = a.apply(&zk)?;
            z.push(zk);
            let mut h = vec![C64::new(0.0, 0.0); k + 2];
            for (i, vi) in v.iter().enumerate() {
                let hik = dot(&w, vi);
                h[i] = hik;
                for (wj, vj) in w.iter_mut().zip(vi) {
                    *wj -= hik * vj;
                }
            }
            let wn = norm_sq(&w).sqrt();
            h[k + 1] = C64::new(wn, 0.0);
            for i in 0..k {
                let (a0, a1) = (h[i], h[i + 1]);
                h[i] = cs[i] * a0 + sn[i] * a1;
                h[i + 1] = -sn[i].conj() * a0 + cs[i] * a1;
            }
            let (h1, h2) = (h[k], h[k + 1]);
            let t = (h1.norm_sqr() + h2.norm_sqr()).sqrt();
            let (c, s) = if h1.norm() == 0.0 {
                (0.0, C64::new(1.0, 0.0))
            } else {
                (h1.norm() / t, (h1 / h1.norm()) * h2.conj() / t)
            };
            h[k] = c * h1 + s * h2;
            h[k + 1] = C64::new(0.0, 0.0);
            cs.push(c);
            sn.push(s);
            let gk = g[k];
            g[k] = c * gk;
            g[k + 1] = -s.conj() * gk;
            hcols.push(h);
            iters += 1;
            k += 1;
            let est = g[k].norm() / bnorm;
            if est <= cfg.tol || wn <= 1e-300 {
                break;
            }
            v.push(w.into_iter().map(|c| c / wn).collect());
        }
        // back substitution on the k x k triangle
        let mut y = vec![C64::new(0.0, 0.0); k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in (i + 1)..k {
                s -= hcols[j][i] * y[j];
            }
            y[i] = s / hcols[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for (xi, zi) in x.iter_mut().zip(&z[j]) {
                *xi += yj * zi;
            }
        }
    }
    Ok((x, SolveReport { iterations: iters, residual, precond_residual: presidual, converged: true, preconditioner: pname }))
}

/// Multi-dimensional in-place FFT over a periodic lattice.
pub struct LatticeFft {
    lat: Lattice,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl LatticeFft {
    pub fn new(lat: Lattice) -> Self {
        let mut planner = FftPlanner::new();
        LatticeFft { lat, forward: planner.plan_fft_forward(lat.m), inverse: planner.plan_fft_inverse(lat.m) }
    }

    /// Unnormalized transform along every axis.
    pub fn transform(&self, data: &mut [C64], inverse: bool) {
        let fft = if inverse { &self.inverse } else { &self.forward };
        let m = self.lat.m;
        let size = self.lat.size();
        let mut line = vec![C64::new(0.0, 0.0); m];
        for k in 0..self.lat.d {
            let stride = self.lat.stride(k);
            for start in 0..size {
                if !(start / stride).is_multiple_of(m) {
                    continue;
                }
                for (t, slot) in line.iter_mut().enumerate() {
                    *slot = data[start + t * stride];
                }
                fft.process(&mut line);
                for (t, val) in line.iter().enumerate() {
                    data[start + t * stride] = *val;
                }
            }
        }
    }
}

/// Symbol of `-Delta_h` for the forward/backward difference pair.
pub fn laplacian_symbol(lat: Lattice, h: f64) -> Vec<f64> {
    let m = lat.m;
    (0..lat.size())
        .map(|q| {
            let c = lat.coords(q);
            (0..lat.d)
                .map(|k| 4.0 / (h * h) * (std::f64::consts::PI * c[k] as f64 / m as f64).sin().powi(2))
                .sum()
        })
        .collect()
}

/// `(coef * (-Delta_h) + shift)^{-1}` applied componentwise through the FFT.
/// Used as the preconditioner for every solve on a periodic lattice.
pub struct ShiftedLaplacian {
    fft: LatticeFft,
    n: usize,
    inv_symbol: Vec<C64>,
    space: Space,
    label: String,
}

impl ShiftedLaplacian {
    /// `zero_mode` replaces the symbol at the constant mode (needed when `shift = 0`).
    pub fn new(lat: Lattice, h: f64, n: usize, weight: f64, coef: f64, shift: C64, zero_mode: Option<C64>) -> Self {
        let sym = laplacian_symbol(lat, h);
        let inv_symbol = sym
            .iter()
            .enumerate()
            .map(|(q, s)| {
                let val = if q == 0 { zero_mode.unwrap_or(shift) } else { coef * s + shift };
                if val.norm() == 0.0 {
                    C64::new(0.0, 0.0)
                } else {
                    1.0 / val
                }
            })
            .collect();
        ShiftedLaplacian {
            fft: LatticeFft::new(lat),
            n,
            inv_symbol,
            space: Space::new(lat.size() * n, weight),
            label: format!("fft-laplacian(coef={coef:.3}, shift={shift:.3})"),
        }
    }

    fn run(&self, x: &[C64], conj: bool) -> Vec<C64> {
        let size = self.fft.lat.size();
        let mut out = vec![C64::new(0.0, 0.0); x.len()];
        let mut buf = vec![C64::new(0.0, 0.0); size];
        for j in 0..self.n {
            for q in 0..size {
                buf[q] = x[q * self.n + j];
            }
            self.fft.transform(&mut buf, false);
            for (b, s) in buf.iter_mut().zip(&self.inv_symbol) {
                *b *= if conj { s.conj() } else { *s };
            }
            self.fft.transform(&mut buf, true);
            for q in 0..size {
                out[q * self.n + j] = buf[q] / size as f64;
            }
        }
        out
    }
}

impl LinearMap for ShiftedLaplacian {
    fn domain(&self) -> Space {
        self.space
    }
    fn codomain(&self) -> Space {
        self.space
    }
    fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        check_len("preconditioner", x.len(), self.space.len)?;
        Ok(self.run(x, false))
    }
    fn adjoint_apply(&self, y: &[C64]) -> Result<Vec<C64>> {
        check_len("preconditioner", y.len(), self.space.len)?;
        Ok(self.run(y, true))
    }
    fn name(&self) -> String {
        self.label.clone()
    }
}

/// `x -> A^{-1} x` for a square map, solved by GMRES. The adjoint solves with
/// the adjoint map and the adjoint preconditioner.
pub struct Inverse {
    a: Op,
    precond: Option<Op>,
    cfg: GmresConfig,
    label: String,
}

impl Inverse {
    pub fn new(a: Op, precond: Option<Op>, cfg: GmresConfig) -> Self {
        let label = format!("inv({})", a.name());
        Inverse { a, precond, cfg, label }
    }

    pub fn solve(&self, rhs: &[C64]) -> Result<(Vec<C64>, SolveReport)> {
        krylov_solve(self.a.as_ref(), rhs, self.precond.as_deref(), &self.cfg)
    }

    pub fn solve_adjoint(&self, rhs: &[C64]) -> Result<(Vec<C64>, SolveReport)> {
        let at = adjoint(&self.a);
        let pt = self.precond.as_ref().map(adjoint);
        krylov_solve(at.as_ref(), rhs, pt.as_deref(), &self.cfg)
    }
}

impl LinearMap for Inverse {
    fn domain(&self) -> Space {
        self.a.codomain()
    }
    fn codomain(&self) -> Space {
        self.a.domain()
    }
    fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        Ok(self.solve(x)?.0)
    }
    fn adjoint_apply(&self, y: &[C64]) -> Result<Vec<C64>> {
        Ok(self.solve_adjoint(y)?.0)
    }
    fn name(&self) -> String {
        self.label.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense matrix map, unweighted.
    fn dense(mat: Vec<Vec<C64>>) -> Op {
        let n = mat.len();
        let mt = mat.clone();
        FnMap::new(
            "dense",
            Space::new(n, 1.0),
            Space::new(n, 1.0),
            move |x| Ok(mat.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()),
            move |y| {
                Ok((0..n).map(|j| (0..n).map(|i| mt[i][j].conj() * y[i]).sum()).collect())
            },
        )
        .op()
    }

    fn random_matrix(n: usize, seed: u64) -> Vec<Vec<C64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| random_vec(&mut rng, n)).collect()
    }

    #[test]
    fn adjoint_of_adjoint_acts_as_original() {
        let a = dense(random_matrix(6, 3));
        let aa = adjoint(&adjoint(&a));
        let x = random_vec(&mut ChaCha8Rng::seed_from_u64(9), 6);
        assert_eq!(a.apply(&x).unwrap(), aa.apply(&x).unwrap());
    }

    #[test]
    fn compose_with_identity() {
        let a = dense(random_matrix(5, 4));
        let c = compose(&a, &identity(Space::new(5, 1.0))).unwrap();
        let x = random_vec(&mut ChaCha8Rng::seed_from_u64(1), 5);
        assert_eq!(a.apply(&x).unwrap(), c.apply(&x).unwrap());
    }

    #[test]
    fn compose_reverses_adjoint_order() {
        let a = dense(random_matrix(7, 5));
        let b = dense(random_matrix(7, 6));
        let ab = compose(&a, &b).unwrap();
        assert!(adjoint_test(ab.as_ref(), 10, 2).unwrap() < 1e-12);
        let sum = add(&ab, &scale(C64::new(0.3, -2.0), &b)).unwrap();
        assert!(adjoint_test(sum.as_ref(), 10, 3).unwrap() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = dense(random_matrix(3, 1));
        let b = dense(random_matrix(4, 1));
        assert!(matches!(compose(&a, &b), Err(HomogError::Shape(_))));
        assert!(a.apply(&[C64::new(1.0, 0.0)]).is_err());
    }

    #[test]
    fn identity_solves_in_one_iteration() {
        let id = identity(Space::new(10, 1.0));
        let b = random_vec(&mut ChaCha8Rng::seed_from_u64(4), 10);
        let (x, rep) = krylov_solve(id.as_ref(), &b, None, &GmresConfig::default()).unwrap();
        assert!(rep.iterations <= 1 && rep.converged);
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).norm() < 1e-14);
        }
    }

    #[test]
    fn non_convergence_is_an_error() {
        let a = dense(random_matrix(30, 8));
        let b = random_vec(&mut ChaCha8Rng::seed_from_u64(5), 30);
        let cfg = GmresConfig { tol: 1e-14, restart: 2, max_iter: 4 };
        match krylov_solve(a.as_ref(), &b, None, &cfg) {
            Err(HomogError::NoConvergence { report, .. }) => {
                assert!(!report.converged);
                assert_eq!(report.iterations, 4);
            }
            other => panic!("expected failure, got {other:?}", other = other.map(|r| r.1)),
        }
    }

    #[test]
    fn restarted_gmres_matches_dense_solve() {
        let n = 40;
        let mut mat = random_matrix(n, 11);
        for (i, row) in mat.iter_mut().enumerate() {
            row[i] += C64::new(12.0, 3.0);
        }
        let a = dense(mat.clone());
        let b = random_vec(&mut ChaCha8Rng::seed_from_u64(6), n);
        let cfg = GmresConfig { tol: 1e-12, restart: 7, max_iter: 2000 };
        let (x, rep) = krylov_solve(a.as_ref(), &b, None, &cfg).unwrap();
        assert!(rep.residual <= 1e-12);
        let dm = nalgebra::DMatrix::from_fn(n, n, |i, j| mat[i][j]);
        let db = nalgebra::DVector::from_vec(b.clone());
        let xd = dm.lu().solve(&db).unwrap();
        for i in 0..n {
            assert!((x[i] - xd[i]).norm() < 1e-10);
        }
    }

    #[test]
    fn lattice_fft_roundtrip() {
        for d in 1..=2 {
            let lat = Lattice::new(d, 8);
            let fft = LatticeFft::new(lat);
            let x = random_vec(&mut ChaCha8Rng::seed_from_u64(d as u64), lat.size());
            let mut y = x.clone();
            fft.transform(&mut y, false);
            fft.transform(&mut y, true);
            for (a, b) in x.iter().zip(&y) {
                assert!((a - b / lat.size() as f64).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn preconditioner_inverts_shifted_laplacian() {
        use crate::torus_grid::{div_adj_raw, grad_raw};
        let lat = Lattice::new(2, 16);
        let h = 1.0 / 16.0;
        let shift = C64::new(1.5, 0.5);
        let p = ShiftedLaplacian::new(lat, h, 2, h * h, 0.7, shift, None);
        let x = random_vec(&mut ChaCha8Rng::seed_from_u64(7), lat.size() * 2);
        let y = p.apply(&x).unwrap();
        let lap = div_adj_raw(lat, h, 2, &grad_raw(lat, h, 2, &y));
        for i in 0..x.len() {
            assert!((lap[i] * 0.7 + y[i] * shift - x[i]).norm() < 1e-10);
        }
        assert!(adjoint_test(&p, 10, 8).unwrap() < 1e-13);
    }
}
