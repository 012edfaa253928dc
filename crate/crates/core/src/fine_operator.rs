//! The oscillating operator `D^* A(x, x/eps) D - mu` on the fine grid.
//!
//! `eps = L/m` must divide the grid: `M = p m` with `p` fine points per fast
//! period. Then `x_i / eps mod 1` is the cell node `i mod p`, and the
//! coefficient at the half-integer node `x_i + h/2` is exactly the cell-center
//! sample `A(x_i + h/2, (c(i) + 1/2)/p)` used by the cell table on `M_c = p`.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::coeff_field::CoefficientField;
use crate::effective_operator::DivergenceForm;
use crate::error::{HomogError, Result};
use crate::linops::{random_vec, GmresConfig, Inverse, SolveReport};
use crate::torus_grid::{dot, grad_raw, CellGrid, GridFunction, Lattice, MacroGrid, MAX_DIM};

/// Smallest admissible number of fine points per fast period.
pub const MIN_POINTS_PER_PERIOD: usize = 32;

/// One aligned `eps`: the fine grid, the cell grid with `p` points, and the
/// index map `i -> i mod p`.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub grid: MacroGrid,
    pub cell: CellGrid,
    pub eps: f64,
    /// Fast periods per macro period.
    pub m: usize,
    pub p: usize,
}

impl Alignment {
    /// Align `eps` with an existing grid: `eps = L/m`, `m | M`, `M/m >= min_p`.
    pub fn on_grid(grid: &MacroGrid, eps: f64, min_p: usize) -> Result<Self> {
        let bad = |reason: String| HomogError::Alignment { eps, reason };
        if !(eps > 0.0) || eps > 1.0 {
            return Err(bad("eps must lie in (0, 1]".into()));
        }
        let m = (grid.l / eps).round();
        if m < 1.0 || ((grid.l / m) - eps).abs() > 1e-12 * eps {
            return Err(bad(format!("L/eps = {} is not an integer", grid.l / eps)));
        }
        let m = m as usize;
        if !grid.m.is_multiple_of(m) {
            return Err(bad(format!("m = {m} does not divide M = {}", grid.m)));
        }
        let p = grid.m / m;
        if p < min_p.max(8) {
            return Err(bad(format!("{p} points per period, need at least {}", min_p.max(8))));
        }
        if !p.is_multiple_of(2) {
            return Err(bad(format!("{p} points per period must be even")));
        }
        let cell = CellGrid::new(grid.d, p).map_err(|e| bad(e.to_string()))?;
        Ok(Alignment { grid: grid.clone(), cell, eps, m, p })
    }

    /// Build the grid `M = p m` for `eps = L/m`.
    pub fn with_periods(d: usize, l: f64, m: usize, p: usize, min_p: usize) -> Result<Self> {
        let grid = MacroGrid::new(d, l, p * m)?;
        Alignment::on_grid(&grid, l / m as f64, min_p)
    }

    pub fn d(&self) -> usize {
        self.grid.d
    }

    pub fn macro_lattice(&self) -> Lattice {
        self.grid.lattice()
    }

    /// Cell node `c(i)` with coordinates `i_k mod p`.
    #[inline]
    pub fn fast_index(&self, i: usize) -> usize {
        let lat = self.grid.lattice();
        let cl = self.cell.lattice();
        let ci = lat.coords(i);
        let mut cc = [0usize; MAX_DIM];
        for k in 0..lat.d {
            cc[k] = ci[k] % self.p;
        }
        cl.index(&cc[..lat.d])
    }
}

/// A list of aligned `eps` values.
#[derive(Clone, Debug)]
pub struct EpsilonSchedule {
    pub entries: Vec<Alignment>,
}

impl EpsilonSchedule {
    /// `eps = 2^-k L` with `M = p 2^k` per entry.
    pub fn dyadic(d: usize, l: f64, ks: &[u32], p: usize, min_p: usize) -> Result<Self> {
        let entries = ks
            .iter()
            .map(|&k| Alignment::with_periods(d, l, 1usize << k, p, min_p))
            .collect::<Result<_>>()?;
        Ok(EpsilonSchedule { entries })
    }

    /// Several `eps` on one fixed grid. All violations are reported together.
    pub fn on_grid(grid: &MacroGrid, eps: &[f64], min_p: usize) -> Result<Self> {
        let mut entries = Vec::new();
        let mut errors = Vec::new();
        for &e in eps {
            match Alignment::on_grid(grid, e, min_p) {
                Ok(a) => entries.push(a),
                Err(err) => errors.push(err.to_string()),
            }
        }
        if errors.is_empty() {
            Ok(EpsilonSchedule { entries })
        } else {
            Err(HomogError::Config(errors))
        }
    }

    pub fn eps(&self) -> Vec<f64> {
        self.entries.iter().map(|a| a.eps).collect()
    }
}

/// `A(x_i + h/2, y_{c(i)})` per fine node.
pub fn fine_coefficients(field: &CoefficientField, al: &Alignment) -> Result<Arc<Vec<C64>>> {
    if field.dim != al.d() {
        return Err(HomogError::Shape("field and grid dimensions differ".into()));
    }
    let b = field.block_dim();
    let d = al.d();
    let mut coef = vec![C64::new(0.0, 0.0); al.grid.nodes() * b * b];
    coef.par_chunks_mut(b * b).enumerate().for_each(|(i, out)| {
        let x = al.grid.center_point(i);
        let y = al.cell.center_point(al.fast_index(i));
        field.eval_into(&x[..d], &y[..d], out);
    });
    Ok(Arc::new(coef))
}

pub fn assemble_fine(field: &CoefficientField, al: &Alignment, mu: C64) -> Result<DivergenceForm> {
    DivergenceForm::new(&al.grid, field.n, fine_coefficients(field, al)?, mu, format!("fine operator (eps={})", al.eps))
}

/// `(A^eps - mu)^{-1}` as a linear map, refusing `mu` inside the sector.
pub fn fine_inverse(field: &CoefficientField, al: &Alignment, mu: C64, cfg: GmresConfig) -> Result<Inverse> {
    let s = field.sector();
    if s.contains(mu) {
        return Err(HomogError::Sector { re: mu.re, im: mu.im, slope: s.slope, shift: s.shift });
    }
    let op = assemble_fine(field, al, mu)?;
    let pre = op.preconditioner();
    Ok(Inverse::new(Arc::new(op), Some(pre), cfg))
}

pub fn fine_resolvent(
    field: &CoefficientField,
    al: &Alignment,
    mu: C64,
    f: &GridFunction,
    cfg: GmresConfig,
) -> Result<(GridFunction, SolveReport)> {
    let inv = fine_inverse(field, al, mu, cfg)?;
    let (u, rep) = inv.solve(&f.values).map_err(|e| e.at(format!("fine resolvent, eps = {}", al.eps)))?;
    Ok((GridFunction::from_values(&al.grid, field.n, u)?, rep))
}

pub fn fine_resolvent_adjoint(
    field: &CoefficientField,
    al: &Alignment,
    mu: C64,
    g: &GridFunction,
    cfg: GmresConfig,
) -> Result<(GridFunction, SolveReport)> {
    let inv = fine_inverse(field, al, mu, cfg)?;
    let (u, rep) = inv.solve_adjoint(&g.values).map_err(|e| e.at(format!("adjoint fine resolvent, eps = {}", al.eps)))?;
    Ok((GridFunction::from_values(&al.grid, field.n, u)?, rep))
}

/// Smallest sampled `(Re<A^eps Du, Du> + C_A |u|^2) / (c_A |Du|^2)` over random `u`.
pub fn coercivity_audit(field: &CoefficientField, al: &Alignment, samples: usize, seed: u64) -> Result<f64> {
    let coef = fine_coefficients(field, al)?;
    let b = field.block_dim();
    let n = field.n;
    let lat = al.grid.lattice();
    let h = al.grid.h();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let u = random_vec(&mut rng, al.grid.nodes() * n);
        let g = grad_raw(lat, h, n, &u);
        let mut flux = vec![C64::new(0.0, 0.0); g.len()];
        for i in 0..al.grid.nodes() {
            crate::small::matvec(&coef[i * b * b..(i + 1) * b * b], b, b, &g[i * b..(i + 1) * b], &mut flux[i * b..(i + 1) * b]);
        }
        let q = dot(&flux, &g).re + field.coercivity.1 * dot(&u, &u).re;
        worst = worst.min(q / (field.coercivity.0 * dot(&g, &g).re));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::LinearMap;
    use crate::cell_problem::build_table;
    use crate::coeff_field as cf;
    use crate::effective_operator::{assemble_effective, effective_resolvent};
    use crate::linops::adjoint_test;
    use std::f64::consts::PI;

    #[test]
    fn alignment_rules() {
        let grid = MacroGrid::new(1, 1.0, 256).unwrap();
        let a = Alignment::on_grid(&grid, 0.125, 32).unwrap();
        assert_eq!((a.m, a.p), (8, 32));
        assert!(matches!(Alignment::on_grid(&grid, 0.3, 32), Err(HomogError::Alignment { .. })));
        assert!(matches!(Alignment::on_grid(&grid, 1.0 / 3.0, 8), Err(HomogError::Alignment { .. })));
        assert!(matches!(Alignment::on_grid(&grid, 1.0 / 16.0, 32), Err(HomogError::Alignment { .. })));
        assert!(Alignment::on_grid(&grid, 1.0 / 16.0, 16).is_ok());
        match EpsilonSchedule::on_grid(&grid, &[0.125, 0.3, 1.0 / 64.0], 32) {
            Err(HomogError::Config(v)) => assert_eq!(v.len(), 2),
            other => panic!("{other:?}"),
        }
        let s = EpsilonSchedule::dyadic(1, 4.0, &[3, 4], 32, 32).unwrap();
        assert_eq!(s.eps(), vec![0.5, 0.25]);
        assert_eq!(s.entries[1].grid.m, 512);
    }

    #[test]
    fn fast_index_is_modular() {
        let a = Alignment::with_periods(2, 1.0, 2, 8, 8).unwrap();
        let lat = a.grid.lattice();
        let i = lat.index(&[11, 5]);
        assert_eq!(a.cell.lattice().coords(a.fast_index(i))[..2], [3, 5]);
    }

    #[test]
    fn identity_field_gives_laplacian() {
        let f = cf::constant_scalar(1, 1.0).unwrap();
        let a = Alignment::with_periods(1, 1.0, 2, 32, 32).unwrap();
        let op = assemble_fine(&f, &a, C64::new(0.0, 0.0)).unwrap();
        let h = a.grid.h();
        let u = GridFunction::from_fn(&a.grid, 1, |x| vec![C64::new((2.0 * PI * 5.0 * x[0]).sin(), 0.0)]);
        let lu = op.apply(&u.values).unwrap();
        let lam = 4.0 / (h * h) * (PI * 5.0 * h).sin().powi(2);
        for (p, q) in lu.iter().zip(&u.values) {
            assert!((p - q * lam).norm() < 1e-9 * lam);
        }
    }

    #[test]
    fn y_independent_field_equals_effective_operator() {
        let l = 1.0;
        let f = cf::slow_only_1d(l);
        let a = Alignment::with_periods(1, l, 4, 32, 32).unwrap();
        let mu = C64::new(-1.0, 0.2);
        let fine = assemble_fine(&f, &a, mu).unwrap();
        let t = build_table(&f, &a.grid, &a.cell).unwrap();
        let eff = assemble_effective(&f, &t).unwrap().operator(mu).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_vec(&mut rng, a.grid.nodes());
        let x = fine.apply(&u).unwrap();
        let y = eff.apply(&u).unwrap();
        let diff: f64 = x.iter().zip(&y).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-12 * x.iter().map(|v| v.norm()).fold(0.0, f64::max));
    }

    #[test]
    fn adjoint_exactness() {
        for f in [cf::coupled_1d(1.0), cf::complex_1d()] {
            let a = Alignment::with_periods(1, 1.0, 4, 32, 32).unwrap();
            let op = assemble_fine(&f, &a, C64::new(-1.0, 0.3)).unwrap();
            assert!(adjoint_test(&op, 10, 5).unwrap() < 1e-13);
        }
        let f = cf::bgb_elastic_2d(1.0);
        let a = Alignment::with_periods(2, 1.0, 2, 8, 8).unwrap();
        let op = assemble_fine(&f, &a, f.default_mu()).unwrap();
        assert!(adjoint_test(&op, 10, 6).unwrap() < 1e-13);
    }

    #[test]
    fn constant_field_matches_effective_resolvent() {
        let f = cf::constant_scalar(1, 2.0).unwrap();
        let a = Alignment::with_periods(1, 1.0, 4, 32, 32).unwrap();
        let mu = f.default_mu();
        let rhs = GridFunction::from_fn(&a.grid, 1, |x| vec![C64::new((2.0 * PI * x[0]).cos() + 0.3, 0.0)]);
        let cfg = GmresConfig::default();
        let (ue, _) = fine_resolvent(&f, &a, mu, &rhs, cfg).unwrap();
        let t = build_table(&f, &a.grid, &a.cell).unwrap();
        let eff = assemble_effective(&f, &t).unwrap();
        let (u0, _) = effective_resolvent(&eff, mu, &rhs, cfg).unwrap();
        for (p, q) in ue.values.iter().zip(&u0.values) {
            assert!((p - q).norm() < 1e-12);
        }
        let zero = GridFunction::zeros(&a.grid, 1);
        let (z, _) = fine_resolvent(&f, &a, mu, &zero, cfg).unwrap();
        assert!(z.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn sector_refusal_and_coercivity() {
        let f = cf::harmonic_1d();
        let a = Alignment::with_periods(1, 1.0, 2, 32, 32).unwrap();
        let rhs = GridFunction::zeros(&a.grid, 1);
        assert!(matches!(
            fine_resolvent(&f, &a, C64::new(2.0, 0.0), &rhs, GmresConfig::default()),
            Err(HomogError::Sector { .. })
        ));
        for f in [cf::coupled_1d(1.0), cf::separable_1d(1.0), cf::counterexample(12, 4.0).unwrap()] {
            let a = Alignment::with_periods(1, f.period, 8, 32, 32).unwrap();
            assert!(coercivity_audit(&f, &a, 5, 1).unwrap() >= 1.0 - 1e-2);
        }
    }
}
