//! Periodic grids on the macro torus and the unit cell, with the discrete
//! calculus used everywhere else.
//!
//! Gradients are forward differences. Component `k` of a gradient stored at
//! index `i` physically sits at the half-integer node `i + e_k/2`; the
//! coefficient tensor belonging to index `i` is sampled at the cell center
//! `i + (1/2, .., 1/2)`. `div_adj` is the exact adjoint of `grad`, so
//! `div_adj(A grad u)` is the conservative scheme and all discrete adjoints
//! are exact up to rounding.
//!
//! The implementation uses the real gradient instead of `D = -i grad`. The
//! sesquilinear forms only change by unimodular factors that cancel in
//! pairs, so every norm reported downstream is the same in either convention.

use std::io::Write;

use num_complex::Complex64 as C64;

use crate::error::{HomogError, Result};

pub const MAX_DIM: usize = 3;

/// Index arithmetic on the periodic lattice `Z_m^d`, last coordinate fastest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lattice {
    pub d: usize,
    pub m: usize,
}

impl Lattice {
    pub fn new(d: usize, m: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&d), "dimension {d} unsupported");
        Lattice { d, m }
    }

    pub fn size(&self) -> usize {
        self.m.pow(self.d as u32)
    }

    pub fn stride(&self, k: usize) -> usize {
        self.m.pow((self.d - 1 - k) as u32)
    }

    pub fn coords(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut c = [0; MAX_DIM];
        for k in (0..self.d).rev() {
            c[k] = idx % self.m;
            idx /= self.m;
        }
        c
    }

    pub fn index(&self, c: &[usize]) -> usize {
        let mut idx = 0;
        for k in 0..self.d {
            idx = idx * self.m + c[k] % self.m;
        }
        idx
    }

    /// Neighbor of `idx` shifted by `s` steps along axis `k`, with wrap.
    #[inline]
    pub fn step(&self, idx: usize, k: usize, s: isize) -> usize {
        let stride = self.stride(k);
        let ck = (idx / stride) % self.m;
        let m = self.m as isize;
        let nk = (((ck as isize + s) % m) + m) % m;
        idx - ck * stride + nk as usize * stride
    }

    /// Shift by an integer vector (first `d` entries used).
    pub fn offset(&self, idx: usize, delta: &[isize]) -> usize {
        let mut out = idx;
        for k in 0..self.d {
            if delta[k] != 0 {
                out = self.step(out, k, delta[k]);
            }
        }
        out
    }
}

/// Uniform grid on the torus `[0, L)^d` with `m` points per dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroGrid {
    pub d: usize,
    pub l: f64,
    pub m: usize,
}

impl MacroGrid {
    pub fn new(d: usize, l: f64, m: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&d) {
            return Err(HomogError::Grid(format!("dimension {d} outside 1..={MAX_DIM}")));
        }
        if m < 8 {
            return Err(HomogError::Grid(format!("macro grid needs M >= 8, got {m}")));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(HomogError::Grid(format!("period L must be positive, got {l}")));
        }
        Ok(MacroGrid { d, l, m })
    }

    pub fn lattice(&self) -> Lattice {
        Lattice::new(self.d, self.m)
    }

    pub fn h(&self) -> f64 {
        self.l / self.m as f64
    }

    pub fn nodes(&self) -> usize {
        self.lattice().size()
    }

    /// Quadrature weight of one node, `h^d`.
    pub fn weight(&self) -> f64 {
        self.h().powi(self.d as i32)
    }

    pub fn node_point(&self, idx: usize) -> [f64; MAX_DIM] {
        let c = self.lattice().coords(idx);
        let h = self.h();
        let mut x = [0.0; MAX_DIM];
        for k in 0..self.d {
            x[k] = c[k] as f64 * h;
        }
        x
    }

    /// The half-integer point `x_i + h/2 (1, .., 1)` where coefficients live.
    pub fn center_point(&self, idx: usize) -> [f64; MAX_DIM] {
        let mut x = self.node_point(idx);
        let h = self.h();
        for xk in x.iter_mut().take(self.d) {
            *xk += 0.5 * h;
        }
        x
    }
}

/// Uniform grid on the unit cell `Q = [-1/2, 1/2)^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellGrid {
    pub d: usize,
    pub mc: usize,
}

/// Reduce a real number into `[-1/2, 1/2)`.
#[inline]
pub fn reduce_to_cell(t: f64) -> f64 {
    let r = t - (t + 0.5).floor();
    if r >= 0.5 {
        r - 1.0
    } else {
        r
    }
}

impl CellGrid {
    pub fn new(d: usize, mc: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&d) {
            return Err(HomogError::Grid(format!("dimension {d} outside 1..={MAX_DIM}")));
        }
        if mc < 8 || !mc.is_multiple_of(2) {
            return Err(HomogError::Grid(format!("cell grid needs even M_c >= 8, got {mc}")));
        }
        Ok(CellGrid { d, mc })
    }

    pub fn lattice(&self) -> Lattice {
        Lattice::new(self.d, self.mc)
    }

    pub fn nodes(&self) -> usize {
        self.lattice().size()
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.mc as f64
    }

    /// Half the diameter of `Q`.
    pub fn r_q(&self) -> f64 {
        (self.d as f64).sqrt() / 2.0
    }

    pub fn node_point(&self, idx: usize) -> [f64; MAX_DIM] {
        let c = self.lattice().coords(idx);
        let mut y = [0.0; MAX_DIM];
        for k in 0..self.d {
            y[k] = reduce_to_cell(c[k] as f64 / self.mc as f64);
        }
        y
    }

    pub fn center_point(&self, idx: usize) -> [f64; MAX_DIM] {
        let c = self.lattice().coords(idx);
        let mut y = [0.0; MAX_DIM];
        for k in 0..self.d {
            y[k] = reduce_to_cell((c[k] as f64 + 0.5) / self.mc as f64);
        }
        y
    }
}

/// Forward-difference gradient on a lattice with spacing `h`.
/// Input layout `node*n + j`, output `node*(d*n) + k*n + j`.
pub fn grad_raw(lat: Lattice, h: f64, n: usize, u: &[C64]) -> Vec<C64> {
    let d = lat.d;
    let size = lat.size();
    debug_assert_eq!(u.len(), size * n);
    let mut out = vec![C64::new(0.0, 0.0); size * d * n];
    let inv = 1.0 / h;
    for i in 0..size {
        for k in 0..d {
            let ip = lat.step(i, k, 1);
            for j in 0..n {
                out[i * d * n + k * n + j] = (u[ip * n + j] - u[i * n + j]) * inv;
            }
        }
    }
    out
}

/// Exact adjoint of [`grad_raw`] with respect to the `h^d`-weighted inner products.
pub fn div_adj_raw(lat: Lattice, h: f64, n: usize, f: &[C64]) -> Vec<C64> {
    let d = lat.d;
    let size = lat.size();
    debug_assert_eq!(f.len(), size * d * n);
    let mut out = vec![C64::new(0.0, 0.0); size * n];
    let inv = 1.0 / h;
    for i in 0..size {
        for k in 0..d {
            let im = lat.step(i, k, -1);
            for j in 0..n {
                out[i * n + j] -= (f[i * d * n + k * n + j] - f[im * d * n + k * n + j]) * inv;
            }
        }
    }
    out
}

/// Sequential `sum u_i conj(v_i)`.
pub fn dot(u: &[C64], v: &[C64]) -> C64 {
    debug_assert_eq!(u.len(), v.len());
    let mut s = C64::new(0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        s += a * b.conj();
    }
    s
}

pub fn norm_sq(u: &[C64]) -> f64 {
    u.iter().map(|a| a.norm_sqr()).sum()
}

/// `C^n`-valued function on the macro grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub grid: MacroGrid,
    pub n: usize,
    pub values: Vec<C64>,
}

impl GridFunction {
    pub fn zeros(grid: &MacroGrid, n: usize) -> Self {
        GridFunction {
            grid: grid.clone(),
            n,
            values: vec![C64::new(0.0, 0.0); grid.nodes() * n],
        }
    }

    pub fn from_values(grid: &MacroGrid, n: usize, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.nodes() * n {
            return Err(HomogError::Shape(format!(
                "expected {} values, got {}",
                grid.nodes() * n,
                values.len()
            )));
        }
        Ok(GridFunction { grid: grid.clone(), n, values })
    }

    /// Sample `f(x)` at the nodes.
    pub fn from_fn(grid: &MacroGrid, n: usize, f: impl Fn(&[f64]) -> Vec<C64>) -> Self {
        let mut values = Vec::with_capacity(grid.nodes() * n);
        for i in 0..grid.nodes() {
            let x = grid.node_point(i);
            let v = f(&x[..grid.d]);
            assert_eq!(v.len(), n);
            values.extend(v);
        }
        GridFunction { grid: grid.clone(), n, values }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let lat = self.grid.lattice();
        let mut header: Vec<String> = (0..self.grid.d).map(|k| format!("i{k}")).collect();
        for j in 0..self.n {
            header.push(format!("re{j}"));
            header.push(format!("im{j}"));
        }
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.grid.nodes() {
            let c = lat.coords(i);
            let mut row: Vec<String> = (0..self.grid.d).map(|k| c[k].to_string()).collect();
            for j in 0..self.n {
                let v = self.values[i * self.n + j];
                row.push(fmt_f64(v.re));
                row.push(fmt_f64(v.im));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Staggered gradient field: `d` directions times `n` components per node.
#[derive(Clone, Debug, PartialEq)]
pub struct GradField {
    pub grid: MacroGrid,
    pub n: usize,
    pub values: Vec<C64>,
}

pub fn grad(u: &GridFunction) -> GradField {
    GradField {
        grid: u.grid.clone(),
        n: u.n,
        values: grad_raw(u.grid.lattice(), u.grid.h(), u.n, &u.values),
    }
}

pub fn div_adj(f: &GradField) -> GridFunction {
    GridFunction {
        grid: f.grid.clone(),
        n: f.n,
        values: div_adj_raw(f.grid.lattice(), f.grid.h(), f.n, &f.values),
    }
}

pub fn l2_inner(u: &GridFunction, v: &GridFunction) -> C64 {
    dot(&u.values, &v.values) * u.grid.weight()
}

pub fn l2_norm(u: &GridFunction) -> f64 {
    (norm_sq(&u.values) * u.grid.weight()).sqrt()
}

pub fn grad_norm(g: &GradField) -> f64 {
    (norm_sq(&g.values) * g.grid.weight()).sqrt()
}

pub fn h1_norm(u: &GridFunction) -> f64 {
    let g = grad(u);
    (l2_norm(u).powi(2) + grad_norm(&g).powi(2)).sqrt()
}

/// Subtract the cell mean of each component. Layout `node*n + j`.
pub fn cell_zero_mean(n: usize, u: &mut [C64]) {
    let nodes = u.len() / n;
    for j in 0..n {
        let mut s = C64::new(0.0, 0.0);
        for c in 0..nodes {
            s += u[c * n + j];
        }
        let mean = s / nodes as f64;
        for c in 0..nodes {
            u[c * n + j] -= mean;
        }
    }
}

/// `C^n`-valued function on the product of the macro grid and a cell grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoScaleGridFunction {
    pub grid: MacroGrid,
    pub cell: CellGrid,
    pub n: usize,
    /// Layout `(node * cells + c) * n + j`.
    pub values: Vec<C64>,
}

impl TwoScaleGridFunction {
    pub fn zeros(grid: &MacroGrid, cell: &CellGrid, n: usize) -> Self {
        TwoScaleGridFunction {
            grid: grid.clone(),
            cell: cell.clone(),
            n,
            values: vec![C64::new(0.0, 0.0); grid.nodes() * cell.nodes() * n],
        }
    }

    /// Sample `f(x, y)` at macro and cell nodes.
    pub fn from_fn(
        grid: &MacroGrid,
        cell: &CellGrid,
        n: usize,
        f: impl Fn(&[f64], &[f64]) -> Vec<C64>,
    ) -> Self {
        let mut values = Vec::with_capacity(grid.nodes() * cell.nodes() * n);
        for i in 0..grid.nodes() {
            let x = grid.node_point(i);
            for c in 0..cell.nodes() {
                let y = cell.node_point(c);
                let v = f(&x[..grid.d], &y[..cell.d]);
                assert_eq!(v.len(), n);
                values.extend(v);
            }
        }
        TwoScaleGridFunction { grid: grid.clone(), cell: cell.clone(), n, values }
    }

    /// Quadrature weight `h^d / M_c^d` of one node pair.
    pub fn weight(&self) -> f64 {
        self.grid.weight() / self.cell.nodes() as f64
    }

    pub fn norm(&self) -> f64 {
        (norm_sq(&self.values) * self.weight()).sqrt()
    }

    pub fn inner(&self, other: &Self) -> C64 {
        dot(&self.values, &other.values) * self.weight()
    }

    /// Largest absolute cell mean over macro nodes and components.
    pub fn max_cell_mean(&self) -> f64 {
        let cells = self.cell.nodes();
        let mut worst: f64 = 0.0;
        for i in 0..self.grid.nodes() {
            for j in 0..self.n {
                let mut s = C64::new(0.0, 0.0);
                for c in 0..cells {
                    s += self.values[(i * cells + c) * self.n + j];
                }
                worst = worst.max(s.norm() / cells as f64);
            }
        }
        worst
    }
}

/// Format with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(len: usize, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
    }

    #[test]
    fn lattice_step_wraps() {
        let lat = Lattice::new(2, 8);
        let i = lat.index(&[7, 0]);
        assert_eq!(lat.coords(lat.step(i, 0, 1))[..2], [0, 0]);
        assert_eq!(lat.coords(lat.step(i, 1, -1))[..2], [7, 7]);
        assert_eq!(lat.offset(i, &[2, -3]), lat.index(&[1, 5]));
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = MacroGrid::new(2, 1.0, 16).unwrap();
        let u = GridFunction::from_fn(&g, 2, |_| vec![C64::new(3.0, -1.0), C64::new(0.5, 0.0)]);
        assert!(grad(&u).values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn fourier_mode_gradient_symbol() {
        let l = 1.0;
        let g = MacroGrid::new(1, l, 256).unwrap();
        let h = g.h();
        let w = 2.0 * std::f64::consts::PI / l;
        let u = GridFunction::from_fn(&g, 1, |x| vec![C64::new(0.0, w * x[0]).exp()]);
        let gu = grad(&u);
        let symbol = (C64::new(0.0, w * h).exp() - 1.0) / h;
        let mut dev: f64 = 0.0;
        for i in 0..g.nodes() {
            assert!((gu.values[i] - symbol * u.values[i]).norm() < 1e-9);
            dev = dev.max((gu.values[i] - C64::new(0.0, w) * u.values[i]).norm());
        }
        // first-order deviation from the exact derivative
        assert!(dev < 2.0 * w * w * h && dev > 0.1 * w * w * h);
    }

    #[test]
    fn sawtooth_gradient_is_constant_off_seam() {
        let g = MacroGrid::new(1, 1.0, 32).unwrap();
        let u = GridFunction::from_values(&g, 1, (0..32).map(|i| C64::new(i as f64, 0.0)).collect()).unwrap();
        let gu = grad(&u);
        for i in 0..31 {
            assert!((gu.values[i].re - 32.0).abs() < 1e-12);
        }
        assert!((gu.values[31].re + 31.0 * 32.0).abs() < 1e-9);
    }

    #[test]
    fn div_adj_is_exact_adjoint() {
        for d in 1..=2 {
            let g = MacroGrid::new(d, 1.3, if d == 1 { 64 } else { 16 }).unwrap();
            let u = GridFunction::from_values(&g, 2, random(g.nodes() * 2, 1)).unwrap();
            let f = GradField { grid: g.clone(), n: 2, values: random(g.nodes() * 2 * d, 2) };
            let lhs = dot(&grad(&u).values, &f.values) * g.weight();
            let rhs = l2_inner(&u, &div_adj(&f));
            assert!((lhs - rhs).norm() <= 1e-13 * lhs.norm().max(1.0));
        }
    }

    #[test]
    fn div_of_grad_is_three_point_laplacian() {
        let g = MacroGrid::new(1, 1.0, 64).unwrap();
        let h = g.h();
        let w = 2.0 * std::f64::consts::PI * 3.0;
        let u = GridFunction::from_fn(&g, 1, |x| vec![C64::new(0.0, w * x[0]).exp()]);
        let lap = div_adj(&grad(&u));
        let lambda = 4.0 / (h * h) * (w * h / 2.0).sin().powi(2);
        for i in 0..g.nodes() {
            assert!((lap.values[i] - lambda * u.values[i]).norm() < 1e-9 * lambda);
        }
    }

    #[test]
    fn norms_of_simple_functions() {
        let g = MacroGrid::new(1, 1.0, 32).unwrap();
        let one = GridFunction::from_fn(&g, 1, |_| vec![C64::new(1.0, 0.0)]);
        assert!((l2_norm(&one) - 1.0).abs() < 1e-14);
        let g2 = MacroGrid::new(2, 3.0, 16).unwrap();
        let amp = 0.7;
        let mode = GridFunction::from_fn(&g2, 1, |x| {
            vec![C64::new(0.0, 2.0 * std::f64::consts::PI * (x[0] + 2.0 * x[1]) / 3.0).exp() * amp]
        });
        assert!((l2_norm(&mode) - 3.0 * amp).abs() < 1e-12);
        let h1 = h1_norm(&mode);
        assert!(h1 > l2_norm(&mode));
    }

    #[test]
    fn zero_mean_projection() {
        let cell = CellGrid::new(1, 64).unwrap();
        let mut c: Vec<C64> = (0..64).map(|_| C64::new(2.5, 0.0)).collect();
        cell_zero_mean(1, &mut c);
        assert!(c.iter().all(|v| v.norm() < 1e-14));
        let s: Vec<C64> = (0..64)
            .map(|i| C64::new((2.0 * std::f64::consts::PI * cell.node_point(i)[0]).sin(), 0.0))
            .collect();
        let mut t: Vec<C64> = s.iter().map(|v| v + 2.0).collect();
        cell_zero_mean(1, &mut t);
        for (a, b) in s.iter().zip(&t) {
            assert!((a - b).norm() < 1e-13);
        }
        let mut again = t.clone();
        cell_zero_mean(1, &mut again);
        for (a, b) in again.iter().zip(&t) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn reduce_into_cell() {
        assert_eq!(reduce_to_cell(0.5), -0.5);
        assert!((reduce_to_cell(1.25) - 0.25).abs() < 1e-15);
        assert!((reduce_to_cell(-0.75) - 0.25).abs() < 1e-15);
        assert!((reduce_to_cell(0.999999) + 0.000001).abs() < 1e-12);
    }

    #[test]
    fn csv_has_index_and_re_im_columns() {
        let g = MacroGrid::new(1, 1.0, 8).unwrap();
        let u = GridFunction::from_fn(&g, 1, |x| vec![C64::new(x[0], -x[0])]);
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "i0,re0,im0");
        assert_eq!(lines.clone().count(), 8);
        assert!(lines.nth(1).unwrap().starts_with("1,1.2500000000000000e-1,"));
    }
}
