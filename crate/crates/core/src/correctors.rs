//! First and second correctors as linear maps with exact adjoints.
//!
//! Notation on an aligned grid (`M_c = p`): `A(i, c) = A(x_i + h/2, y_c)`,
//! `c(i) = i mod p`, `P = I + D_y N`, `u0 = R0 f` with `R0 = (A0 - mu)^{-1}`,
//! `Phi(i, c) = P(i, c) D u0(i)`, `F = A Phi` (divergence free in `y`).
//!
//! The slow derivative of two-scale data is the shifted difference
//! `D~_k V(i, c) = (V(i + e_k, c + e_k) - V(i, c + e_k)) / h`. It makes the
//! chain rule `D tau V = tau(D~ V + eps^-1 D_y V)` exact on the grid, which
//! is what lets the resolvent identity and the form/function equivalences
//! hold to solver precision.
//!
//! Maps (all `f -> ..` on macro grid functions):
//! - `K^eps f(i) = sum_w omega_w N(i + w, c(i)) D u0(i + w)`
//! - `L = R0 D^* Lcal D R0`, `Lcal xi(i) = p^-d sum_c N+(i, c)^* D~^*[A P xi](i, c)`
//! - `M = R0 D^* M_eps D R0`,
//!   `M_eps(i) = eps^-1 sum_w omega_w P+(i, c(i)+w)^* (A(i+w, c(i)+w) - A(i, c(i)+w)) P(i, c(i)+w)`
//! - `C = K^eps - L - M + (K^eps+)^* - (L+)^*`
//!
//! `+` objects use `A^*`, the adjoint cell solutions and `R0^*`.

use std::sync::{Arc, OnceLock};

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::cell_problem::{build_table, CellSolutionTable};
use crate::coeff_field::CoefficientField;
use crate::effective_operator::{assemble_effective, EffectiveField};
use crate::error::{HomogError, Result};
use crate::fine_operator::{fine_coefficients, Alignment};
use crate::linops::{adjoint, add, chain, check_len, sub, GmresConfig, LinearMap, Op, Space};
use crate::small;
use crate::smoothing::SmoothingOps;
use crate::torus_grid::{div_adj_raw, dot, grad_raw, GridFunction, MacroGrid, TwoScaleGridFunction};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Forward-difference gradient as a map from `n`-vectors to `(d n)`-vectors per node.
pub struct GradMap {
    grid: MacroGrid,
    n: usize,
}

impl GradMap {
    pub fn op(grid: &MacroGrid, n: usize) -> Op {
        Arc::new(GradMap { grid: grid.clone(), n })
    }
}

impl LinearMap for GradMap {
    fn domain(&self) -> Space {
        Space::new(self.grid.nodes() * self.n, self.grid.weight())
    }
    fn codomain(&self) -> Space {
        Space::new(self.grid.nodes() * self.n * self.grid.d, self.grid.weight())
    }
    fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        check_len("grad", x.len(), self.domain().len)?;
        Ok(grad_raw(self.grid.lattice(), self.grid.h(), self.n, x))
    }
    fn adjoint_apply(&self, y: &[C64]) -> Result<Vec<C64>> {
        check_len("grad^*", y.len(), self.codomain().len)?;
        Ok(div_adj_raw(self.grid.lattice(), self.grid.h(), self.n, y))
    }
    fn name(&self) -> String {
        "grad".into()
    }
}

/// Per-node `(d n) x (d n)` multiplication on gradient fields.
pub struct PointwiseMap {
    grid: MacroGrid,
    b: usize,
    coef: Vec<C64>,
    label: String,
}

impl LinearMap for PointwiseMap {
    fn domain(&self) -> Space {
        Space::new(self.grid.nodes() * self.b, self.grid.weight())
    }
    fn codomain(&self) -> Space {
        self.domain()
    }
    fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        check_len(&self.label, x.len(), self.domain().len)?;
        let b = self.b;
        let mut out = vec![ZERO; x.len()];
        out.par_chunks_mut(b).enumerate().for_each(|(i, o)| {
            small::matvec(&self.coef[i * b * b..(i + 1) * b * b], b, b, &x[i * b..(i + 1) * b], o)
        });
        Ok(out)
    }
    fn adjoint_apply(&self, y: &[C64]) -> Result<Vec<C64>> {
        check_len(&self.label, y.len(), self.domain().len)?;
        let b = self.b;
        let mut out = vec![ZERO; y.len()];
        out.par_chunks_mut(b).enumerate().for_each(|(i, o)| {
            small::matvec_adj(&self.coef[i * b * b..(i + 1) * b * b], b, b, &y[i * b..(i + 1) * b], o)
        });
        Ok(out)
    }
    fn name(&self) -> String {
        self.label.clone()
    }
}

/// `xi -> sum_k alpha_k(i) xi(i) - beta_k(i) xi(i - e_k)`, with
/// `shifted[k](i) = beta_k(i + e_k)` stored.
pub struct FirstOrderMap {
    grid: MacroGrid,
    b: usize,
    alpha: Vec<C64>,
    shifted: Vec<C64>,
    label: String,
}

impl FirstOrderMap {
    #[inline]
    fn block(v: &[C64], i: usize, k: usize, d: usize, b: usize) -> &[C64] {
        let s = (i * d + k) * b * b;
        &v[s..s + b * b]
    }
}

impl LinearMap for FirstOrderMap {
    fn domain(&self) -> Space {
        Space::new(self.grid.nodes() * self.b, self.grid.weight())
    }
    fn codomain(&self) -> Space {
        self.domain()
    }
    fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        check_len(&self.label, x.len(), self.domain().len)?;
        let (b, d) = (self.b, self.grid.d);
        let lat = self.grid.lattice();
        let mut out = vec![ZERO; x.len()];
        out.par_chunks_mut(b).enumerate().for_each(|(i, o)| {
            for k in 0..d {
                let im = lat.step(i, k, -1);
                small::matvec_acc(Self::block(&self.alpha, i, k, d, b), b, b, &x[i * b..(i + 1) * b], false, C64::new(1.0, 0.0), o);
                small::matvec_acc(Self::block(&self.shifted, im, k, d, b), b, b, &x[im * b..(im + 1) * b], false, C64::new(-1.0, 0.0), o);
            }
        });
        Ok(out)
    }
    fn adjoint_apply(&self, y: &[C64]) -> Result<Vec<C64>> {
        check_len(&self.label, y.len(), self.domain().len)?;
        let (b, d) = (self.b, self.grid.d);
        let lat = self.grid.lattice();
        let mut out = vec![ZERO; y.len()];
        out.par_chunks_mut(b).enumerate().for_each(|(i, o)| {
            for k in 0..d {
                let ip = lat.step(i, k, 1);
                small::matvec_acc(Self::block(&self.alpha, i, k, d, b), b, b, &y[i * b..(i + 1) * b], true, C64::new(1.0, 0.0), o);
                small::matvec_acc(Self::block(&self.shifted, i, k, d, b), b, b, &y[ip * b..(ip + 1) * b], true, C64::new(-1.0, 0.0), o);
            }
        });
        Ok(out)
    }
    fn name(&self) -> String {
        self.label.clone()
    }
}

/// `g -> (i -> sum_w omega_w N(i + w, c(i)) g(i + w))`, i.e. `tau S` of `N g`.
pub struct WindowKernel {
    ops: SmoothingOps,
    table: Arc<CellSolutionTable>,
    plus: bool,
}

impl WindowKernel {
    #[inline]
    fn nmat(&self, node: usize, c: usize) -> &[C64] {
        if self.plus { self.table.n_adj_mat(node, c) } else { self.table.n_mat(node, c) }
    }
}

impl LinearMap for WindowKernel {
    fn domain(&self) -> Space {
        let g = &self.ops.al.grid;
        Space::new(g.nodes() * self.table.b(), g.weight())
    }
    fn codomain(&self) -> Space {
        let g = &self.ops.al.grid;
        Space::new(g.nodes() * self.table.n, g.weight())
    }
    fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        check_len("corrector kernel", x.len(), self.domain().len)?;
        let (n, b) = (self.table.n, self.table.b());
        let mut out = vec![ZERO; self.codomain().len];
        out.par_chunks_mut(n).enumerate().for_each(|(i, o)| {
            let c = self.ops.al.fast_index(i);
            for w in self.ops.window() {
                let s = self.ops.shift(i, w);
                small::matvec_acc(self.nmat(s, c), n, b, &x[s * b..(s + 1) * b], false, C64::new(w.weight, 0.0), o);
            }
        });
        Ok(out)
    }
    fn adjoint_apply(&self, y: &[C64]) -> Result<Vec<C64>> {
        check_len("corrector kernel^*", y.len(), self.codomain().len)?;
        let (n, b) = (self.table.n, self.table.b());
        let mut out = vec![ZERO; self.domain().len];
        out.par_chunks_mut(b).enumerate().for_each(|(i, o)| {
            for w in self.ops.window() {
                let s = self.ops.shift_back(i, w);
                let c = self.ops.al.fast_index(s);
                small::matvec_acc(self.nmat(i, c), n, b, &y[s * n..(s + 1) * n], true, C64::new(w.weight, 0.0), o);
            }
        });
        Ok(out)
    }
    fn name(&self) -> String {
        if self.plus { "corrector kernel+".into() } else { "corrector kernel".into() }
    }
}

/// Everything needed to apply the correctors at one `eps`.
pub struct CorrectorBundle {
    pub field: CoefficientField,
    pub al: Alignment,
    pub ops: SmoothingOps,
    pub table: Arc<CellSolutionTable>,
    pub eff: EffectiveField,
    pub mu: C64,
    pub cfg: GmresConfig,
    fine_coef: Arc<Vec<C64>>,
    r0: Op,
    grad: Op,
    lcal: OnceLock<Op>,
    lcal_plus: OnceLock<Op>,
    m_eps: OnceLock<Op>,
}

impl CorrectorBundle {
    pub fn new(field: &CoefficientField, al: &Alignment, mu: C64, cfg: GmresConfig) -> Result<Self> {
        let table = build_table(field, &al.grid, &al.cell)?;
        let eff = assemble_effective(field, &table)?;
        Self::from_parts(field, al, Arc::new(table), eff, mu, cfg)
    }

    pub fn from_parts(
        field: &CoefficientField,
        al: &Alignment,
        table: Arc<CellSolutionTable>,
        eff: EffectiveField,
        mu: C64,
        cfg: GmresConfig,
    ) -> Result<Self> {
        if table.grid != al.grid || table.cell != al.cell || eff.grid != al.grid {
            return Err(HomogError::Shape("corrector members live on different grids".into()));
        }
        let r0: Op = Arc::new(eff.resolvent(mu, cfg)?);
        Ok(CorrectorBundle {
            field: field.clone(),
            al: al.clone(),
            ops: SmoothingOps::new(al),
            table,
            eff,
            mu,
            cfg,
            fine_coef: fine_coefficients(field, al)?,
            r0,
            grad: GradMap::op(&al.grid, field.n),
            lcal: OnceLock::new(),
            lcal_plus: OnceLock::new(),
            m_eps: OnceLock::new(),
        })
    }

    pub fn b(&self) -> usize {
        self.field.block_dim()
    }

    pub fn n(&self) -> usize {
        self.field.n
    }

    /// `A(x_i + h/2, y_{c(i)})`.
    pub fn fine_coef(&self, i: usize) -> &[C64] {
        let b = self.b();
        &self.fine_coef[i * b * b..(i + 1) * b * b]
    }

    /// `A(x_i + h/2, y_c)` into `out`.
    pub fn a_cell(&self, i: usize, c: usize, out: &mut [C64]) {
        let d = self.al.d();
        let x = self.al.grid.center_point(i);
        let y = self.al.cell.center_point(c);
        self.field.eval_into(&x[..d], &y[..d], out);
    }

    /// `R0 = (A0 - mu)^{-1}`.
    pub fn r0(&self) -> Op {
        self.r0.clone()
    }

    pub fn grad(&self) -> Op {
        self.grad.clone()
    }

    pub fn kernel(&self, plus: bool) -> Op {
        Arc::new(WindowKernel { ops: self.ops.clone(), table: self.table.clone(), plus })
    }

    /// `K^eps = tau S K`.
    pub fn k_eps(&self) -> Result<Op> {
        chain(&[self.kernel(false), self.grad(), self.r0()])
    }

    /// `(K^eps)+` built from `N+` and `R0^*`.
    pub fn k_eps_plus(&self) -> Result<Op> {
        chain(&[self.kernel(true), self.grad(), adjoint(&self.r0)])
    }

    /// The two-scale corrector `K f = N D u0` (materialized; small grids only).
    pub fn k_two_scale(&self, f: &GridFunction) -> Result<TwoScaleGridFunction> {
        let u0 = self.r0.apply(&f.values)?;
        let g = self.grad.apply(&u0)?;
        let (n, b, cells) = (self.n(), self.b(), self.al.cell.nodes());
        let mut out = TwoScaleGridFunction::zeros(&self.al.grid, &self.al.cell, n);
        out.values.par_chunks_mut(cells * n).enumerate().for_each(|(i, o)| {
            for c in 0..cells {
                small::matvec(self.table.n_mat(i, c), n, b, &g[i * b..(i + 1) * b], &mut o[c * n..(c + 1) * n]);
            }
        });
        Ok(out)
    }

    fn build_lcal(&self, plus: bool) -> Op {
        let (n, b, d) = (self.n(), self.b(), self.al.d());
        let cells = self.al.cell.nodes();
        let clat = self.al.cell.lattice();
        let lat = self.al.grid.lattice();
        let h = self.al.grid.h();
        let nodes = self.al.grid.nodes();
        let scale = C64::new(-1.0 / (h * cells as f64), 0.0);
        let mut alpha = vec![ZERO; nodes * d * b * b];
        let mut shifted = vec![ZERO; nodes * d * b * b];
        alpha.par_chunks_mut(d * b * b).zip(shifted.par_chunks_mut(d * b * b)).enumerate().for_each(|(i, (al, sh))| {
            // (A P)(i, c) for every c; with `plus`, (A^* P+)(i, c)
            let mut ap = vec![ZERO; cells * b * b];
            let mut a = vec![ZERO; b * b];
            for c in 0..cells {
                self.a_cell(i, c, &mut a);
                let (m, p) = if plus {
                    (small::adj(&a, b, b), self.table.p_adj_mat(i, c))
                } else {
                    (a.clone(), self.table.p_mat(i, c))
                };
                ap[c * b * b..(c + 1) * b * b].copy_from_slice(&small::matmul(&m, p, b, b, b));
            }
            let nt = |node: usize, c: usize| -> &[C64] {
                if plus { self.table.n_mat(node, c) } else { self.table.n_adj_mat(node, c) }
            };
            for k in 0..d {
                let ip = lat.step(i, k, 1);
                for c in 0..cells {
                    let cm = clat.step(c, k, -1);
                    // rows k*n .. k*n + n of (A P)(i, c - e_k): an n x b block
                    let blk = &ap[cm * b * b + k * n * b..cm * b * b + (k + 1) * n * b];
                    for (dst, node) in [(&mut *al, i), (&mut *sh, ip)] {
                        let nm = nt(node, c); // n x b
                        let o = &mut dst[k * b * b..(k + 1) * b * b];
                        for r in 0..b {
                            for q in 0..b {
                                let mut s = ZERO;
                                for j in 0..n {
                                    s += nm[j * b + r].conj() * blk[j * b + q];
                                }
                                o[r * b + q] += s * scale;
                            }
                        }
                    }
                }
            }
        });
        Arc::new(FirstOrderMap {
            grid: self.al.grid.clone(),
            b,
            alpha,
            shifted,
            label: if plus { "Lcal+".into() } else { "Lcal".into() },
        })
    }

    /// The first-order operator `Lcal` on gradient fields.
    pub fn lcal(&self, plus: bool) -> Op {
        let cell = if plus { &self.lcal_plus } else { &self.lcal };
        cell.get_or_init(|| self.build_lcal(plus)).clone()
    }

    /// The multiplier `M_eps(i)` on gradient fields.
    pub fn m_eps_coefficient(&self) -> Op {
        self.m_eps
            .get_or_init(|| {
                let b = self.b();
                let cells = self.al.cell.nodes();
                let clat = self.al.cell.lattice();
                let d = self.al.d();
                let inv_eps = 1.0 / self.al.eps;
                let nodes = self.al.grid.nodes();
                let mut coef = vec![ZERO; nodes * b * b];
                coef.par_chunks_mut(b * b).enumerate().for_each(|(i, o)| {
                    let mut acell = vec![ZERO; cells * b * b];
                    for c in 0..cells {
                        self.a_cell(i, c, &mut acell[c * b * b..(c + 1) * b * b]);
                    }
                    let ci = self.al.fast_index(i);
                    let mut delta = vec![ZERO; b * b];
                    for w in self.ops.window() {
                        let c = clat.offset(ci, &w.offset[..d]);
                        let s = self.ops.shift(i, w);
                        let fa = self.fine_coef(s);
                        for q in 0..b * b {
                            delta[q] = fa[q] - acell[c * b * b + q];
                        }
                        let dp = small::matmul(&delta, self.table.p_mat(i, c), b, b, b);
                        let pp = small::adj(self.table.p_adj_mat(i, c), b, b);
                        let t = small::matmul(&pp, &dp, b, b, b);
                        for (x, y) in o.iter_mut().zip(&t) {
                            *x += y * (w.weight * inv_eps);
                        }
                    }
                });
                Arc::new(PointwiseMap { grid: self.al.grid.clone(), b, coef, label: "M_eps".into() }) as Op
            })
            .clone()
    }

    /// `L = R0 D^* Lcal D R0`.
    pub fn l(&self) -> Result<Op> {
        chain(&[self.r0(), adjoint(&self.grad), self.lcal(false), self.grad(), self.r0()])
    }

    /// `L+ = R0^* D^* Lcal+ D R0^*`.
    pub fn l_plus(&self) -> Result<Op> {
        let r = adjoint(&self.r0);
        chain(&[r.clone(), adjoint(&self.grad), self.lcal(true), self.grad(), r])
    }

    /// `M = R0 D^* M_eps D R0`.
    pub fn m(&self) -> Result<Op> {
        chain(&[self.r0(), adjoint(&self.grad), self.m_eps_coefficient(), self.grad(), self.r0()])
    }

    /// `C = K^eps - L - M + (K^eps+)^* - (L+)^*`.
    pub fn c(&self) -> Result<Op> {
        let first = sub(&sub(&self.k_eps()?, &self.l()?)?, &self.m()?)?;
        let plus = sub(&self.k_eps_plus()?, &self.l_plus()?)?;
        add(&first, &adjoint(&plus))
    }

    /// `D u0` and `D u0+` for `u0 = R0 f`, `u0+ = R0^* g`.
    fn gradients(&self, f: &GridFunction, g: &GridFunction) -> Result<(Vec<C64>, Vec<C64>)> {
        let u0 = self.r0.apply(&f.values)?;
        let u0p = self.r0.adjoint_apply(&g.values)?;
        Ok((self.grad.apply(&u0)?, self.grad.apply(&u0p)?))
    }

    /// The sesquilinear form of `L`: `<A (D u0 + D_y U), D~ U+>` over the two-scale grid.
    pub fn l_form(&self, f: &GridFunction, g: &GridFunction) -> Result<C64> {
        let (gu, gup) = self.gradients(f, g)?;
        let (n, b, d) = (self.n(), self.b(), self.al.d());
        let cells = self.al.cell.nodes();
        let clat = self.al.cell.lattice();
        let lat = self.al.grid.lattice();
        let h = self.al.grid.h();
        let total: C64 = (0..self.al.grid.nodes())
            .into_par_iter()
            .map(|i| {
                let mut a = vec![ZERO; b * b];
                let mut phi = vec![ZERO; b];
                let mut flux = vec![ZERO; b];
                let mut u1 = vec![ZERO; n];
                let mut u2 = vec![ZERO; n];
                let mut acc = ZERO;
                for c in 0..cells {
                    self.a_cell(i, c, &mut a);
                    small::matvec(self.table.p_mat(i, c), b, b, &gu[i * b..(i + 1) * b], &mut phi);
                    small::matvec(&a, b, b, &phi, &mut flux);
                    for k in 0..d {
                        let ip = lat.step(i, k, 1);
                        let cp = clat.step(c, k, 1);
                        small::matvec(self.table.n_adj_mat(ip, cp), n, b, &gup[ip * b..(ip + 1) * b], &mut u1);
                        small::matvec(self.table.n_adj_mat(i, cp), n, b, &gup[i * b..(i + 1) * b], &mut u2);
                        for j in 0..n {
                            acc += flux[k * n + j] * ((u1[j] - u2[j]) / h).conj();
                        }
                    }
                }
                acc
            })
            .collect::<Vec<C64>>()
            .iter()
            .sum(); // sequential sum keeps results bitwise reproducible
        Ok(total * self.al.grid.weight() / cells as f64)
    }

    /// The sesquilinear form of `M`:
    /// `eps^-1 sum omega_w <(A(i, c(i)) - A(i+w, c(i))) Phi(i+w, c(i)), Phi+(i+w, c(i))>`.
    pub fn m_form(&self, f: &GridFunction, g: &GridFunction) -> Result<C64> {
        let (gu, gup) = self.gradients(f, g)?;
        let b = self.b();
        let d = self.al.d();
        let total: C64 = (0..self.al.grid.nodes())
            .into_par_iter()
            .map(|i| {
                let c = self.al.fast_index(i);
                let ai = self.fine_coef(i);
                let mut a = vec![ZERO; b * b];
                let mut phi = vec![ZERO; b];
                let mut phip = vec![ZERO; b];
                let mut acc = ZERO;
                for w in self.ops.window() {
                    let s = self.ops.shift(i, w);
                    let x = self.al.grid.center_point(s);
                    let y = self.al.cell.center_point(c);
                    self.field.eval_into(&x[..d], &y[..d], &mut a);
                    small::matvec(self.table.p_mat(s, c), b, b, &gu[s * b..(s + 1) * b], &mut phi);
                    small::matvec(self.table.p_adj_mat(s, c), b, b, &gup[s * b..(s + 1) * b], &mut phip);
                    let mut s1 = ZERO;
                    for r in 0..b {
                        let mut v = ZERO;
                        for q in 0..b {
                            v += (ai[r * b + q] - a[r * b + q]) * phi[q];
                        }
                        s1 += v * phip[r].conj();
                    }
                    acc += s1 * w.weight;
                }
                acc
            })
            .collect::<Vec<C64>>()
            .iter()
            .sum(); // sequential sum keeps results bitwise reproducible
        Ok(total * self.al.grid.weight() / self.al.eps)
    }

    /// `<Op f, g>` on the macro grid.
    pub fn pairing(&self, op: &Op, f: &GridFunction, g: &GridFunction) -> Result<C64> {
        let v = op.apply(&f.values)?;
        Ok(dot(&v, &g.values) * self.al.grid.weight())
    }
}

/// `D~_k V(i, c) = (V(i + e_k, c + e_k) - V(i, c + e_k)) / h` for all `k`, as
/// `(d n)`-vectors per two-scale node.
pub fn shifted_slow_gradient(v: &TwoScaleGridFunction) -> Vec<C64> {
    let (n, d) = (v.n, v.grid.d);
    let cells = v.cell.nodes();
    let lat = v.grid.lattice();
    let clat = v.cell.lattice();
    let h = v.grid.h();
    let mut out = vec![ZERO; v.values.len() * d];
    out.par_chunks_mut(cells * d * n).enumerate().for_each(|(i, o)| {
        for c in 0..cells {
            for k in 0..d {
                let ip = lat.step(i, k, 1);
                let cp = clat.step(c, k, 1);
                for j in 0..n {
                    let a = v.values[(ip * cells + cp) * n + j];
                    let bb = v.values[(i * cells + cp) * n + j];
                    o[(c * d + k) * n + j] = (a - bb) / h;
                }
            }
        }
    });
    out
}

/// Two-scale gradient `D_y V` (the `p`-scaled forward difference on the cell), as `(d n)`-vectors.
pub fn fast_gradient(v: &TwoScaleGridFunction) -> Vec<C64> {
    let (n, d) = (v.n, v.grid.d);
    let cells = v.cell.nodes();
    let mut out = vec![ZERO; v.values.len() * d];
    out.par_chunks_mut(cells * d * n).enumerate().for_each(|(i, o)| {
        let g = grad_raw(v.cell.lattice(), v.cell.spacing(), n, &v.values[i * cells * n..(i + 1) * cells * n]);
        o.copy_from_slice(&g);
    });
    out
}
