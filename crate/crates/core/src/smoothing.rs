//! Two-scale substitution `tau`, translation `T` and Steklov smoothing `S`
//! on aligned grids, with exact discrete adjoints.
//!
//! The `z`-quadrature over `Q` is the index window `j in {-p/2, .., p/2}^d`
//! with trapezoid weights `omega_j = prod_k w(j_k) / p`, `w = 1/2` at the two
//! ends and `1` inside. The window is symmetric, so `S` is self-adjoint, and
//! its weights fold onto each residue mod `p` with total mass `p^-d`, which
//! makes `tau T` an exact isometry on two-scale grid functions.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{HomogError, Result};
use crate::fine_operator::Alignment;
use crate::linops::{check_len, LinearMap, Op, Space};
use crate::torus_grid::{grad_raw, norm_sq, GridFunction, TwoScaleGridFunction, MAX_DIM};

/// One window entry: index offset `j` and weight `omega_j`.
#[derive(Clone, Copy, Debug)]
pub struct WindowPoint {
    pub offset: [isize; MAX_DIM],
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct SmoothingOps {
    pub al: Alignment,
    window: Vec<WindowPoint>,
}

fn check_two_scale(al: &Alignment, v: &TwoScaleGridFunction) -> Result<()> {
    if v.grid != al.grid || v.cell != al.cell {
        return Err(HomogError::Alignment {
            eps: al.eps,
            reason: "two-scale function lives on a different grid pair".into(),
        });
    }
    Ok(())
}

impl SmoothingOps {
    pub fn new(al: &Alignment) -> Self {
        let d = al.d();
        let p = al.p as isize;
        let half = p / 2;
        let side = (p + 1) as usize;
        let count = side.pow(d as u32);
        let mut window = Vec::with_capacity(count);
        for w in 0..count {
            let mut offset = [0isize; MAX_DIM];
            let mut weight = 1.0;
            let mut rest = w;
            for k in (0..d).rev() {
                let jk = (rest % side) as isize - half;
                rest /= side;
                offset[k] = jk;
                weight *= if jk.abs() == half { 0.5 } else { 1.0 } / p as f64;
            }
            window.push(WindowPoint { offset, weight });
        }
        SmoothingOps { al: al.clone(), window }
    }

    pub fn window(&self) -> &[WindowPoint] {
        &self.window
    }

    pub fn eps(&self) -> f64 {
        self.al.eps
    }

    /// `r_Q = sqrt(d)/2`.
    pub fn r_q(&self) -> f64 {
        (self.al.d() as f64).sqrt() / 2.0
    }

    #[inline]
    pub fn shift(&self, i: usize, w: &WindowPoint) -> usize {
        self.al.grid.lattice().offset(i, &w.offset[..self.al.d()])
    }

    #[inline]
    pub fn shift_back(&self, i: usize, w: &WindowPoint) -> usize {
        let mut neg = [0isize; MAX_DIM];
        for k in 0..self.al.d() {
            neg[k] = -w.offset[k];
        }
        self.al.grid.lattice().offset(i, &neg[..self.al.d()])
    }

    /// `(tau V)(x_i) = V(x_i, y_{c(i)})`.
    pub fn tau(&self, v: &TwoScaleGridFunction) -> Result<GridFunction> {
        check_two_scale(&self.al, v)?;
        let vals = tau_raw(&self.al, v.n, &v.values);
        GridFunction::from_values(&self.al.grid, v.n, vals)
    }

    /// `tau^* v (x_i, y_c) = p^d delta_{c, c(i)} v(x_i)`.
    pub fn tau_adjoint(&self, v: &GridFunction) -> Result<TwoScaleGridFunction> {
        if v.grid != self.al.grid {
            return Err(HomogError::Alignment { eps: self.al.eps, reason: "grid mismatch".into() });
        }
        let mut out = TwoScaleGridFunction::zeros(&self.al.grid, &self.al.cell, v.n);
        out.values = tau_adj_raw(&self.al, v.n, &v.values);
        Ok(out)
    }

    /// Steklov average of a macro function.
    pub fn steklov(&self, u: &GridFunction) -> Result<GridFunction> {
        if u.grid != self.al.grid {
            return Err(HomogError::Alignment { eps: self.al.eps, reason: "grid mismatch".into() });
        }
        GridFunction::from_values(&self.al.grid, u.n, self.steklov_raw(u.n, 1, &u.values))
    }

    /// `S = S^*`.
    pub fn steklov_adjoint(&self, u: &GridFunction) -> Result<GridFunction> {
        self.steklov(u)
    }

    /// Steklov average in `x` at every fixed fast node.
    pub fn steklov_two_scale(&self, v: &TwoScaleGridFunction) -> Result<TwoScaleGridFunction> {
        check_two_scale(&self.al, v)?;
        let mut out = v.clone();
        out.values = self.steklov_raw(v.n, self.al.cell.nodes(), &v.values);
        Ok(out)
    }

    /// Layout `(i * cells + c) * n + j`.
    pub fn steklov_raw(&self, n: usize, cells: usize, u: &[C64]) -> Vec<C64> {
        let stride = cells * n;
        let mut out = vec![C64::new(0.0, 0.0); u.len()];
        out.par_chunks_mut(stride).enumerate().for_each(|(i, o)| {
            for w in &self.window {
                let src = self.shift(i, w) * stride;
                for (a, b) in o.iter_mut().zip(&u[src..src + stride]) {
                    *a += b * w.weight;
                }
            }
        });
        out
    }

    /// `T V` stored as `sqrt(omega_w) V(x_i + eps z_w, y_c)`, layout `((i * W + w) * cells + c) * n + j`.
    pub fn translate(&self, v: &TwoScaleGridFunction) -> Result<Vec<C64>> {
        check_two_scale(&self.al, v)?;
        Ok(self.translate_raw(v.n, &v.values))
    }

    fn translate_raw(&self, n: usize, v: &[C64]) -> Vec<C64> {
        let stride = self.al.cell.nodes() * n;
        let wn = self.window.len();
        let mut out = vec![C64::new(0.0, 0.0); self.al.grid.nodes() * wn * stride];
        out.par_chunks_mut(wn * stride).enumerate().for_each(|(i, o)| {
            for (wi, w) in self.window.iter().enumerate() {
                let src = self.shift(i, w) * stride;
                let s = w.weight.sqrt();
                for (a, b) in o[wi * stride..(wi + 1) * stride].iter_mut().zip(&v[src..src + stride]) {
                    *a = b * s;
                }
            }
        });
        out
    }

    /// `(T^* W)(x_i, y_c) = sum_w omega_w W(x_i - eps z_w, y_c, z_w)` (in the scaled storage).
    pub fn translate_adjoint_raw(&self, n: usize, wv: &[C64]) -> Vec<C64> {
        let stride = self.al.cell.nodes() * n;
        let wn = self.window.len();
        let mut out = vec![C64::new(0.0, 0.0); self.al.grid.nodes() * stride];
        out.par_chunks_mut(stride).enumerate().for_each(|(i, o)| {
            for (wi, w) in self.window.iter().enumerate() {
                let src = (self.shift_back(i, w) * wn + wi) * stride;
                let s = w.weight.sqrt();
                for (a, b) in o.iter_mut().zip(&wv[src..src + stride]) {
                    *a += b * s;
                }
            }
        });
        out
    }

    pub fn tau_map(&self, n: usize) -> Op {
        Arc::new(TauMap { al: self.al.clone(), n })
    }

    pub fn steklov_map(&self, n: usize) -> Op {
        Arc::new(SteklovMap { ops: self.clone(), n, cells: 1 })
    }

    pub fn steklov_two_scale_map(&self, n: usize) -> Op {
        Arc::new(SteklovMap { ops: self.clone(), n, cells: self.al.cell.nodes() })
    }

    pub fn translate_map(&self, n: usize) -> Op {
        Arc::new(TranslateMap { ops: self.clone(), n })
    }
}

pub(crate) fn tau_raw(al: &Alignment, n: usize, v: &[C64]) -> Vec<C64> {
    let cells = al.cell.nodes();
    let mut out = vec![C64::new(0.0, 0.0); al.grid.nodes() * n];
    for (i, o) in out.chunks_mut(n).enumerate() {
        let src = (i * cells + al.fast_index(i)) * n;
        o.copy_from_slice(&v[src..src + n]);
    }
    out
}

pub(crate) fn tau_adj_raw(al: &Alignment, n: usize, v: &[C64]) -> Vec<C64> {
    let cells = al.cell.nodes();
    let mut out = vec![C64::new(0.0, 0.0); al.grid.nodes() * cells * n];
    for i in 0..al.grid.nodes() {
        let dst = (i * cells + al.fast_index(i)) * n;
        for j in 0..n {
            out[dst + j] = v[i * n + j] * cells as f64;
        }
    }
    out
}

struct TauMap {
    al: Alignment,
    n: usize,
}

impl LinearMap for TauMap {
    fn domain(&self) -> Space {
        Space::new(self.al.grid.nodes() * self.al.cell.nodes() * self.n, self.al.grid.weight() / self.al.cell.nodes() as f64)
    }
    fn codomain(&self) -> Space {
        Space::new(self.al.grid.nodes() * self.n, self.al.grid.weight())
    }
    fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        check_len("tau", x.len(), self.domain().len)?;
        Ok(tau_raw(&self.al, self.n, x))
    }
    fn adjoint_apply(&self, y: &[C64]) -> Result<Vec<C64>> {
        check_len("tau^*", y.len(), self.codomain().len)?;
        Ok(tau_adj_raw(&self.al, self.n, y))
    }
    fn name(&self) -> String {
        "tau".into()
    }
}

struct SteklovMap {
    ops: SmoothingOps,
    n: usize,
    cells: usize,
}

impl LinearMap for SteklovMap {
    fn domain(&self) -> Space {
        Space::new(self.ops.al.grid.nodes() * self.cells * self.n, self.ops.al.grid.weight() / self.cells as f64)
    }
    fn codomain(&self) -> Space {
        self.domain()
    }
    fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        check_len("steklov", x.len(), self.domain().len)?;
        Ok(self.ops.steklov_raw(self.n, self.cells, x))
    }
    fn adjoint_apply(&self, y: &[C64]) -> Result<Vec<C64>> {
        self.apply(y)
    }
    fn name(&self) -> String {
        "steklov".into()
    }
}

struct TranslateMap {
    ops: SmoothingOps,
    n: usize,
}

impl LinearMap for TranslateMap {
    fn domain(&self) -> Space {
        let cells = self.ops.al.cell.nodes();
        Space::new(self.ops.al.grid.nodes() * cells * self.n, self.ops.al.grid.weight() / cells as f64)
    }
    fn codomain(&self) -> Space {
        let d = self.domain();
        Space::new(d.len * self.ops.window.len(), d.weight)
    }
    fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        check_len("translate", x.len(), self.domain().len)?;
        Ok(self.ops.translate_raw(self.n, x))
    }
    fn adjoint_apply(&self, y: &[C64]) -> Result<Vec<C64>> {
        check_len("translate^*", y.len(), self.codomain().len)?;
        Ok(self.ops.translate_adjoint_raw(self.n, y))
    }
    fn name(&self) -> String {
        "translate".into()
    }
}

/// One lemma check: the measured left side and the explicit bound.
#[derive(Clone, Copy, Debug)]
pub struct LemmaCheck {
    pub lhs: f64,
    pub bound: f64,
}

impl LemmaCheck {
    pub fn ratio(&self) -> f64 {
        if self.bound == 0.0 {
            if self.lhs == 0.0 { 0.0 } else { f64::INFINITY }
        } else {
            self.lhs / self.bound
        }
    }
}

/// Norm of the forward-difference gradient in `x` of a two-scale function.
pub fn grad_x_norm(v: &TwoScaleGridFunction) -> f64 {
    let cells = v.cell.nodes();
    let g = grad_raw(v.grid.lattice(), v.grid.h(), cells * v.n, &v.values);
    (norm_sq(&g) * v.weight()).sqrt()
}

/// `(sum_{k,l} |D_k D_l V|^2)^{1/2}` with forward differences in `x`.
pub fn hessian_x_norm(v: &TwoScaleGridFunction) -> f64 {
    let cells = v.cell.nodes();
    let width = cells * v.n;
    let d = v.grid.d;
    let lat = v.grid.lattice();
    let h = v.grid.h();
    let g = grad_raw(lat, h, width, &v.values);
    // g layout: node * (d * width) + k * width + q, so a second gradient
    // over `d * width` components gives every D_l D_k
    let gg = grad_raw(lat, h, d * width, &g);
    (norm_sq(&gg) * v.weight()).sqrt()
}

impl SmoothingOps {
    /// `|tau T V|` against `|V|` (equal on aligned grids).
    pub fn lemma_isometry(&self, v: &TwoScaleGridFunction) -> Result<LemmaCheck> {
        check_two_scale(&self.al, v)?;
        let n = v.n;
        let cells = self.al.cell.nodes();
        let mut s = 0.0;
        for i in 0..self.al.grid.nodes() {
            let c = self.al.fast_index(i);
            for w in &self.window {
                let src = (self.shift(i, w) * cells + c) * n;
                s += w.weight * norm_sq(&v.values[src..src + n]);
            }
        }
        Ok(LemmaCheck { lhs: (s * self.al.grid.weight()).sqrt(), bound: v.norm() })
    }

    /// `|tau S V| <= |V|`.
    pub fn lemma_tau_steklov(&self, v: &TwoScaleGridFunction) -> Result<LemmaCheck> {
        let sv = self.steklov_two_scale(v)?;
        let tsv = self.tau(&sv)?;
        Ok(LemmaCheck { lhs: crate::torus_grid::l2_norm(&tsv), bound: v.norm() })
    }

    /// `|(T - I) V| <= eps r_Q |D_x V|`.
    pub fn lemma_translation(&self, v: &TwoScaleGridFunction) -> Result<LemmaCheck> {
        check_two_scale(&self.al, v)?;
        let stride = self.al.cell.nodes() * v.n;
        let mut s = 0.0;
        for i in 0..self.al.grid.nodes() {
            for w in &self.window {
                let src = self.shift(i, w) * stride;
                let a = &v.values[src..src + stride];
                let b = &v.values[i * stride..(i + 1) * stride];
                s += w.weight * a.iter().zip(b).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>();
            }
        }
        Ok(LemmaCheck { lhs: (s * v.weight()).sqrt(), bound: self.eps() * self.r_q() * grad_x_norm(v) })
    }

    /// `|(S - I) V| <= eps r_Q |D_x V|`.
    pub fn lemma_steklov_first(&self, v: &TwoScaleGridFunction) -> Result<LemmaCheck> {
        let sv = self.steklov_two_scale(v)?;
        let diff: Vec<C64> = sv.values.iter().zip(&v.values).map(|(a, b)| a - b).collect();
        Ok(LemmaCheck { lhs: (norm_sq(&diff) * v.weight()).sqrt(), bound: self.eps() * self.r_q() * grad_x_norm(v) })
    }

    /// `|(S - I) V| <= eps^2 r_Q^2 |D_x D_x V|`.
    pub fn lemma_steklov_second(&self, v: &TwoScaleGridFunction) -> Result<LemmaCheck> {
        let sv = self.steklov_two_scale(v)?;
        let diff: Vec<C64> = sv.values.iter().zip(&v.values).map(|(a, b)| a - b).collect();
        let e = self.eps() * self.r_q();
        Ok(LemmaCheck { lhs: (norm_sq(&diff) * v.weight()).sqrt(), bound: e * e * hessian_x_norm(v) })
    }

    /// `|tau T V - tau S V| <= 2 r_Q eps |D_x V|`.
    pub fn lemma_tau_t_minus_tau_s(&self, v: &TwoScaleGridFunction) -> Result<LemmaCheck> {
        let sv = self.steklov_two_scale(v)?;
        let tsv = self.tau(&sv)?;
        let n = v.n;
        let cells = self.al.cell.nodes();
        let mut s = 0.0;
        for i in 0..self.al.grid.nodes() {
            let c = self.al.fast_index(i);
            for w in &self.window {
                let src = (self.shift(i, w) * cells + c) * n;
                s += w.weight
                    * v.values[src..src + n].iter().zip(&tsv.values[i * n..(i + 1) * n]).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
            }
        }
        Ok(LemmaCheck {
            lhs: (s * self.al.grid.weight()).sqrt(),
            bound: 2.0 * self.r_q() * self.eps() * grad_x_norm(v),
        })
    }
}
