//! Effective tensor `A0(x) = mean_y A(x, y)(I + D_y N(x, y))` and the
//! effective resolvent `(D^* A0 D - mu)^{-1}`.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::cell_problem::CellSolutionTable;
use crate::coeff_field::{CoefficientField, LhSample, Sector};
use crate::error::{HomogError, Result};
use crate::linops::{check_len, GmresConfig, Inverse, LinearMap, Op, ShiftedLaplacian, SolveReport, Space};
use crate::small;
use crate::torus_grid::{div_adj_raw, fmt_f64, grad_raw, GridFunction, MacroGrid};

/// `u -> D^*(B(i) D u) - mu u` on the macro grid with one `(d n) x (d n)`
/// tensor per node (paired with the forward differences stored at that node).
pub struct DivergenceForm {
    grid: MacroGrid,
    n: usize,
    coef: Arc<Vec<C64>>,
    mu: C64,
    space: Space,
    label: String,
}

impl DivergenceForm {
    pub fn new(grid: &MacroGrid, n: usize, coef: Arc<Vec<C64>>, mu: C64, label: impl Into<String>) -> Result<Self> {
        let b = grid.d * n;
        if coef.len() != grid.nodes() * b * b {
            return Err(HomogError::Shape(format!(
                "coefficient array of length {}, expected {}",
                coef.len(),
                grid.nodes() * b * b
            )));
        }
        Ok(DivergenceForm {
            grid: grid.clone(),
            n,
            coef,
            mu,
            space: Space::new(grid.nodes() * n, grid.weight()),
            label: label.into(),
        })
    }

    fn run(&self, u: &[C64], adj: bool) -> Vec<C64> {
        let b = self.grid.d * self.n;
        let lat = self.grid.lattice();
        let h = self.grid.h();
        let g = grad_raw(lat, h, self.n, u);
        let mut flux = vec![C64::new(0.0, 0.0); g.len()];
        flux.par_chunks_mut(b).zip(g.par_chunks(b)).enumerate().for_each(|(i, (fl, gi))| {
            let m = &self.coef[i * b * b..(i + 1) * b * b];
            if adj {
                small::matvec_adj(m, b, b, gi, fl);
            } else {
                small::matvec(m, b, b, gi, fl);
            }
        });
        let mut out = div_adj_raw(lat, h, self.n, &flux);
        let mu = if adj { self.mu.conj() } else { self.mu };
        for (o, v) in out.iter_mut().zip(u) {
            *o -= mu * v;
        }
        out
    }

    /// FFT shifted-Laplacian preconditioner matched to the mean diagonal.
    pub fn preconditioner(&self) -> Op {
        let b = self.grid.d * self.n;
        let nodes = self.grid.nodes();
        let coef = (0..nodes)
            .map(|i| (0..b).map(|r| self.coef[i * b * b + r * b + r].re).sum::<f64>() / b as f64)
            .sum::<f64>()
            / nodes as f64;
        Arc::new(ShiftedLaplacian::new(
            self.grid.lattice(),
            self.grid.h(),
            self.n,
            self.grid.weight(),
            coef.abs().max(1e-3),
            -self.mu,
            None,
        ))
    }

    pub fn mu(&self) -> C64 {
        self.mu
    }
}

impl LinearMap for DivergenceForm {
    fn domain(&self) -> Space {
        self.space
    }
    fn codomain(&self) -> Space {
        self.space
    }
    fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        check_len(&self.label, x.len(), self.space.len)?;
        Ok(self.run(x, false))
    }
    fn adjoint_apply(&self, y: &[C64]) -> Result<Vec<C64>> {
        check_len(&self.label, y.len(), self.space.len)?;
        Ok(self.run(y, true))
    }
    fn name(&self) -> String {
        self.label.clone()
    }
}

/// `A0` at every macro node, `(d n) x (d n)` row-major per node.
#[derive(Clone, Debug)]
pub struct EffectiveField {
    pub grid: MacroGrid,
    pub n: usize,
    pub values: Arc<Vec<C64>>,
    pub sector: Sector,
    pub coercivity: (f64, f64),
    /// Derived bound on the Lipschitz constant of `A0`.
    pub lipschitz_bound: f64,
}

/// Average `A(x_i + h/2, y_c) P(i, c)` over the cell grid at every node.
pub fn assemble_effective(field: &CoefficientField, table: &CellSolutionTable) -> Result<EffectiveField> {
    let grid = &table.grid;
    if grid.d != field.dim || table.n != field.n {
        return Err(HomogError::Shape("table and field shapes differ".into()));
    }
    let b = field.block_dim();
    let cells = table.cells();
    let mut values = vec![C64::new(0.0, 0.0); grid.nodes() * b * b];
    values.par_chunks_mut(b * b).enumerate().for_each(|(i, out)| {
        let x = grid.center_point(i);
        let mut a = vec![C64::new(0.0, 0.0); b * b];
        for c in 0..cells {
            let y = table.cell.center_point(c);
            field.eval_into(&x[..grid.d], &y[..grid.d], &mut a);
            let ap = small::matmul(&a, table.p_mat(i, c), b, b, b);
            for (o, v) in out.iter_mut().zip(&ap) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= cells as f64;
        }
    });
    let (c_a, sup, lip) = (field.coercivity.0, field.sup_norm, field.lipschitz_x);
    let lipschitz_bound = sup * (1.0 / c_a) * (1.0 + sup / c_a) * lip + lip * (1.0 + sup / c_a);
    Ok(EffectiveField {
        grid: grid.clone(),
        n: field.n,
        values: Arc::new(values),
        sector: field.sector(),
        coercivity: field.coercivity,
        lipschitz_bound,
    })
}

impl EffectiveField {
    pub fn b(&self) -> usize {
        self.grid.d * self.n
    }

    pub fn at(&self, node: usize) -> &[C64] {
        let b = self.b();
        &self.values[node * b * b..(node + 1) * b * b]
    }

    /// `D^* A0 D - mu` on the macro grid.
    pub fn operator(&self, mu: C64) -> Result<DivergenceForm> {
        DivergenceForm::new(&self.grid, self.n, self.values.clone(), mu, "effective operator")
    }

    /// The resolvent as a linear map, refusing `mu` inside the sector.
    pub fn resolvent(&self, mu: C64, cfg: GmresConfig) -> Result<Inverse> {
        if self.sector.contains(mu) {
            return Err(HomogError::Sector {
                re: mu.re,
                im: mu.im,
                slope: self.sector.slope,
                shift: self.sector.shift,
            });
        }
        let op = self.operator(mu)?;
        let pre = op.preconditioner();
        Ok(Inverse::new(Arc::new(op), Some(pre), cfg))
    }

    /// `min Re <A0 xi (x) eta, xi (x) eta>` over all nodes and samples.
    pub fn legendre_hadamard_min(&self, samples: &[LhSample]) -> f64 {
        let b = self.b();
        let n = self.n;
        let mut worst = f64::INFINITY;
        for s in samples {
            let zeta: Vec<C64> = (0..b).map(|idx| s.eta[idx % n] * s.xi[idx / n]).collect();
            for i in 0..self.grid.nodes() {
                let a = self.at(i);
                let mut q = C64::new(0.0, 0.0);
                for r in 0..b {
                    for c in 0..b {
                        q += zeta[r].conj() * a[r * b + c] * zeta[c];
                    }
                }
                worst = worst.min(q.re);
            }
        }
        worst
    }

    /// Largest sampled `|A0(x_j) - A0(x_i)| / |x_j - x_i|` over neighbouring nodes.
    pub fn sampled_lipschitz(&self) -> f64 {
        let b = self.b();
        let lat = self.grid.lattice();
        let h = self.grid.h();
        let mut worst: f64 = 0.0;
        for i in 0..self.grid.nodes() {
            for k in 0..self.grid.d {
                let j = lat.step(i, k, 1);
                let diff: Vec<C64> = self.at(j).iter().zip(self.at(i)).map(|(p, q)| p - q).collect();
                worst = worst.max(crate::coeff_field::spectral_norm(&diff, b, b) / h);
            }
        }
        worst
    }

    /// CSV: node coordinates, then `a{r}_{c}_re,a{r}_{c}_im` per block entry.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let b = self.b();
        let d = self.grid.d;
        let mut header: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
        for r in 0..b {
            for c in 0..b {
                header.push(format!("a{r}_{c}_re"));
                header.push(format!("a{r}_{c}_im"));
            }
        }
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.grid.nodes() {
            let x = self.grid.center_point(i);
            let mut row: Vec<String> = (0..d).map(|k| fmt_f64(x[k])).collect();
            for v in self.at(i) {
                row.push(fmt_f64(v.re));
                row.push(fmt_f64(v.im));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Solve `(D^* A0 D - mu) u0 = f`.
pub fn effective_resolvent(eff: &EffectiveField, mu: C64, f: &GridFunction, cfg: GmresConfig) -> Result<(GridFunction, SolveReport)> {
    let inv = eff.resolvent(mu, cfg)?;
    let (u, rep) = inv.solve(&f.values).map_err(|e| e.at("effective resolvent"))?;
    Ok((GridFunction::from_values(&eff.grid, eff.n, u)?, rep))
}

/// Solve the adjoint problem `(D^* A0^* D - conj mu) v = g`.
pub fn effective_resolvent_adjoint(
    eff: &EffectiveField,
    mu: C64,
    g: &GridFunction,
    cfg: GmresConfig,
) -> Result<(GridFunction, SolveReport)> {
    let inv = eff.resolvent(mu, cfg)?;
    let (u, rep) = inv.solve_adjoint(&g.values).map_err(|e| e.at("adjoint effective resolvent"))?;
    Ok((GridFunction::from_values(&eff.grid, eff.n, u)?, rep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell_problem::build_table;
    use crate::coeff_field::{self as cf, laminate, lh_samples};
    use crate::linops::adjoint_test;
    use crate::torus_grid::{l2_inner, CellGrid};
    use std::f64::consts::PI;

    fn effective_for(field: &CoefficientField, l: f64, m: usize, mc: usize) -> EffectiveField {
        let grid = MacroGrid::new(field.dim, l, m).unwrap();
        let cell = CellGrid::new(field.dim, mc).unwrap();
        let t = build_table(field, &grid, &cell).unwrap();
        assemble_effective(field, &t).unwrap()
    }

    #[test]
    fn harmonic_mean_oracle() {
        let eff = effective_for(&cf::harmonic_1d(), 1.0, 8, 256);
        for i in 0..8 {
            assert!((eff.at(i)[0] - C64::new(3f64.sqrt(), 0.0)).norm() < 1e-6);
        }
    }

    #[test]
    fn y_independent_field_is_reproduced() {
        let l = 2.0;
        let f = cf::slow_only_1d(l);
        let eff = effective_for(&f, l, 16, 16);
        let grid = &eff.grid;
        for i in 0..16 {
            let x = grid.center_point(i);
            let a = f.eval_blocks(&x[..1], &[0.3]);
            assert!((eff.at(i)[0] - a[0]).norm() < 1e-14);
        }
    }

    #[test]
    fn separable_factorizes() {
        let l = 1.0;
        let f = cf::separable_1d(l);
        let eff = effective_for(&f, l, 16, 64);
        for i in 0..16 {
            let x = eff.grid.center_point(i)[0];
            let want = (2.0 + (2.0 * PI * x / l).sin()) * 3f64.sqrt();
            assert!((eff.at(i)[0].re - want).abs() < 1e-10);
        }
    }

    #[test]
    fn laminate_closed_form() {
        let l = 1.0;
        let eff = effective_for(&cf::laminate_2d(l), l, 8, 64);
        for i in 0..eff.grid.nodes() {
            let x = eff.grid.center_point(i);
            let want = laminate::effective_diag(&x[..2], l);
            let a = eff.at(i);
            assert!((a[0].re - want[0]).abs() < 1e-9, "{} vs {}", a[0].re, want[0]);
            assert!((a[3].re - want[1]).abs() < 1e-9);
            assert!(a[1].norm() < 1e-10 && a[2].norm() < 1e-10);
        }
    }

    #[test]
    fn legendre_hadamard_and_lipschitz() {
        for (f, l) in [(cf::coupled_1d(1.0), 1.0), (cf::laminate_2d(1.0), 1.0), (cf::bgb_elastic_2d(1.0), 1.0)] {
            let mc = if f.dim == 1 { 64 } else { 8 };
            let eff = effective_for(&f, l, 8, mc);
            let samples = lh_samples(f.dim, f.n, l, 30, 9);
            let lh = eff.legendre_hadamard_min(&samples);
            assert!(lh >= f.coercivity.0 * (1.0 - 1e-3), "{}: {lh}", f.label);
            assert!(eff.sampled_lipschitz() <= eff.lipschitz_bound, "{}", f.label);
        }
    }

    #[test]
    fn identity_tensor_fourier_mode() {
        let f = cf::constant_scalar(1, 1.0).unwrap();
        let eff = effective_for(&f, 1.0, 32, 8);
        let grid = eff.grid.clone();
        let h = grid.h();
        let k = 3.0;
        let rhs = GridFunction::from_fn(&grid, 1, |x| vec![C64::new((2.0 * PI * k * x[0]).cos(), 0.0)]);
        let mu = C64::new(-1.0, 0.0);
        let (u, _) = effective_resolvent(&eff, mu, &rhs, GmresConfig::default().with_tol(1e-13)).unwrap();
        let lam = 4.0 / (h * h) * (PI * k * h).sin().powi(2);
        for (a, b) in u.values.iter().zip(&rhs.values) {
            assert!((a - b / (lam + 1.0)).norm() < 1e-12);
        }
        let zero = GridFunction::zeros(&grid, 1);
        let (u0, rep) = effective_resolvent(&eff, mu, &zero, GmresConfig::default()).unwrap();
        assert!(u0.values.iter().all(|v| v.norm() == 0.0) && rep.iterations == 0);
    }

    #[test]
    fn sector_refusal() {
        let eff = effective_for(&cf::harmonic_1d(), 1.0, 8, 16);
        let res = eff.resolvent(C64::new(1.0, 0.0), GmresConfig::default());
        assert!(matches!(res, Err(HomogError::Sector { .. })));
    }

    #[test]
    fn adjoint_consistency() {
        let f = cf::coupled_1d(1.0);
        let eff = effective_for(&f, 1.0, 32, 32);
        let op = eff.operator(C64::new(-1.0, 0.5)).unwrap();
        assert!(adjoint_test(&op, 5, 1).unwrap() < 1e-13);
        let cfg = GmresConfig::default().with_tol(1e-12);
        let inv = eff.resolvent(C64::new(-1.0, 0.5), cfg).unwrap();
        assert!(adjoint_test(&inv, 5, 2).unwrap() < 1e-11);
        let grid = eff.grid.clone();
        let fx = GridFunction::from_fn(&grid, 1, |x| vec![C64::new(x[0].sin(), 0.2)]);
        let gx = GridFunction::from_fn(&grid, 1, |x| vec![C64::new((3.0 * x[0]).cos(), -0.1)]);
        let mu = C64::new(-1.0, 0.5);
        let (u, _) = effective_resolvent(&eff, mu, &fx, cfg).unwrap();
        let (v, _) = effective_resolvent_adjoint(&eff, mu, &gx, cfg).unwrap();
        let lhs = l2_inner(&u, &gx);
        let rhs = l2_inner(&fx, &v);
        assert!((lhs - rhs).norm() <= 1e-9 * lhs.norm().max(1e-300));
    }

    #[test]
    fn csv_export_shape() {
        let eff = effective_for(&cf::harmonic_1d(), 1.0, 8, 16);
        let mut buf = Vec::new();
        eff.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next().unwrap(), "x0,a0_0_re,a0_0_im");
        assert_eq!(s.lines().count(), 9);
    }
}
