//! Convergence studies, the resolvent identity check and the counterexample.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::coeff_field::{counterexample, CoefficientField};
use crate::correctors::CorrectorBundle;
use crate::error::{HomogError, Result};
use crate::fine_operator::{fine_inverse, Alignment, EpsilonSchedule};
use crate::linops::{GmresConfig, LinearMap};
use crate::small;
use crate::torus_grid::{dot, fmt_f64, grad_raw, norm_sq, GridFunction, MacroGrid};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Right-hand side as a function of the macro point.
pub type Forcing = Arc<dyn Fn(&[f64]) -> Vec<C64> + Send + Sync>;

/// A smooth, non-symmetric forcing with a few low modes in every component.
pub fn default_forcing(dim: usize, n: usize, l: f64) -> Forcing {
    Arc::new(move |x: &[f64]| {
        let t: Vec<f64> = x[..dim].iter().map(|v| 2.0 * PI * v / l).collect();
        (0..n)
            .map(|j| {
                let s: f64 = t.iter().enumerate().map(|(k, v)| (v + 0.3 * (j + k) as f64).sin()).sum();
                let c: f64 = t.iter().map(|v| (2.0 * v).cos()).product();
                C64::new(s + 0.5 * c, 0.25 * (t[0] + j as f64).cos())
            })
            .collect()
    })
}

/// Least-squares line through `(log eps, log err)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square of the log residuals.
    pub residual: f64,
    pub used: usize,
    pub notes: Vec<String>,
}

pub fn fit_rate(eps: &[f64], errors: &[f64]) -> Result<RateFit> {
    if eps.len() != errors.len() {
        return Err(HomogError::Fit(format!("{} eps values but {} errors", eps.len(), errors.len())));
    }
    let mut notes = Vec::new();
    let mut pts = Vec::new();
    for (&e, &r) in eps.iter().zip(errors) {
        if e > 0.0 && r > 0.0 && e.is_finite() && r.is_finite() {
            pts.push((e.ln(), r.ln()));
        } else {
            notes.push(format!("excluded eps={e} err={r}: not positive"));
        }
    }
    if pts.len() < 3 {
        return Err(HomogError::Fit(format!("{} usable points, need at least 3", pts.len())));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(HomogError::Fit("all eps values coincide".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / k).sqrt();
    Ok(RateFit { slope, intercept, residual, used: pts.len(), notes })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyRow {
    pub eps: f64,
    pub err0: f64,
    pub err1: f64,
    pub err2: f64,
    pub iters_fine: usize,
    pub iters_eff: usize,
}

#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    pub label: String,
    pub rows: Vec<StudyRow>,
    /// Fits for `err0`, `err1`, `err2`; `Err` keeps the reason (for example all zeros).
    pub rates: [std::result::Result<RateFit, String>; 3],
}

impl ConvergenceReport {
    pub fn eps(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.eps).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "eps,err0,err1,err2,iters_fine,iters_eff")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                fmt_f64(r.eps),
                fmt_f64(r.err0),
                fmt_f64(r.err1),
                fmt_f64(r.err2),
                r.iters_fine,
                r.iters_eff
            )?;
        }
        for (name, fit) in ["err0", "err1", "err2"].iter().zip(&self.rates) {
            match fit {
                Ok(f) => writeln!(
                    w,
                    "# rate {name}: slope={} intercept={} residual={} points={}",
                    fmt_f64(f.slope),
                    fmt_f64(f.intercept),
                    fmt_f64(f.residual),
                    f.used
                )?,
                Err(e) => writeln!(w, "# rate {name}: unavailable ({e})")?,
            }
        }
        Ok(())
    }
}

fn rel_norm(v: &[C64], f: &[C64]) -> f64 {
    (norm_sq(v) / norm_sq(f)).sqrt()
}

fn study_row(field: &CoefficientField, al: &Alignment, mu: C64, f: &Forcing, cfg: GmresConfig) -> Result<StudyRow> {
    let grid = &al.grid;
    let n = field.n;
    let fg = GridFunction::from_fn(grid, n, |x| f(x));
    let bundle = CorrectorBundle::new(field, al, mu, cfg)?;
    let (ue, rep_fine) = fine_inverse(field, al, mu, cfg)?.solve(&fg.values).map_err(|e| e.at("fine solve"))?;
    let r0 = bundle.eff.resolvent(mu, cfg)?;
    let (u0, rep_eff) = r0.solve(&fg.values).map_err(|e| e.at("effective solve"))?;
    let gu0 = grad_raw(grid.lattice(), grid.h(), n, &u0);
    let ke = bundle.kernel(false).apply(&gu0)?;
    let cf = bundle.c()?.apply(&fg.values).map_err(|e| e.at("second corrector"))?;
    let eps = al.eps;

    let d0: Vec<C64> = ue.iter().zip(&u0).map(|(a, b)| a - b).collect();
    let d1: Vec<C64> = d0.iter().zip(&ke).map(|(a, k)| a - k * eps).collect();
    let d2: Vec<C64> = d0.iter().zip(&cf).map(|(a, c)| a - c * eps).collect();
    let gd1 = grad_raw(grid.lattice(), grid.h(), n, &d1);
    Ok(StudyRow {
        eps,
        err0: rel_norm(&d0, &fg.values),
        err1: rel_norm(&gd1, &fg.values),
        err2: rel_norm(&d2, &fg.values),
        iters_fine: rep_fine.iterations,
        iters_eff: rep_eff.iterations,
    })
}

/// Fine solve, effective solve and both correctors for every `eps` in the schedule.
pub fn run_study(
    field: &CoefficientField,
    schedule: &EpsilonSchedule,
    mu: C64,
    f: &Forcing,
    cfg: GmresConfig,
) -> Result<ConvergenceReport> {
    let s = field.sector();
    if s.contains(mu) {
        return Err(HomogError::Sector { re: mu.re, im: mu.im, slope: s.slope, shift: s.shift });
    }
    let rows = schedule
        .entries
        .par_iter()
        .map(|al| study_row(field, al, mu, f, cfg).map_err(|e| e.at(format!("study of {} at eps = {}", field.label, al.eps))))
        .collect::<Result<Vec<_>>>()?;
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let fit = |sel: fn(&StudyRow) -> f64| {
        let e: Vec<f64> = rows.iter().map(sel).collect();
        fit_rate(&eps, &e).map_err(|e| e.to_string())
    };
    let rates = [fit(|r| r.err0), fit(|r| r.err1), fit(|r| r.err2)];
    Ok(ConvergenceReport { label: field.label.clone(), rows, rates })
}

/// Both sides of the resolvent identity for one `(f, g)` pair.
#[derive(Clone, Debug)]
pub struct IdentityCheck {
    pub lhs: C64,
    /// The `T - I` term, the commutator term, the `eps A T D~U` term, the `(I - S)` term and the `eps mu` term.
    pub terms: [C64; 5],
    pub rhs: C64,
    pub residual: f64,
}

/// `<u_eps - u0 - eps K^eps f, g>` against `T1 - T2 - T3 - T4 + T5`.
pub fn identity_residual(bundle: &CorrectorBundle, f: &GridFunction, g: &GridFunction) -> Result<IdentityCheck> {
    let al = &bundle.al;
    let grid = &al.grid;
    let (n, b, d) = (bundle.n(), bundle.b(), al.d());
    let (h, eps, mu) = (grid.h(), al.eps, bundle.mu);
    let lat = grid.lattice();
    let clat = al.cell.lattice();
    let weight = grid.weight();
    let inv = fine_inverse(&bundle.field, al, mu, bundle.cfg)?;
    let (ue, _) = inv.solve(&f.values).map_err(|e| e.at("identity: fine solve"))?;
    let (up, _) = inv.solve_adjoint(&g.values).map_err(|e| e.at("identity: adjoint fine solve"))?;
    let u0 = bundle.r0().apply(&f.values)?;
    let gu0 = grad_raw(lat, h, n, &u0);
    let gup = grad_raw(lat, h, n, &up);
    let ke = bundle.kernel(false).apply(&gu0)?;

    let lhs_v: Vec<C64> = ue.iter().zip(&u0).zip(&ke).map(|((a, b), k)| a - b - k * eps).collect();
    let lhs = dot(&lhs_v, &g.values) * weight;

    let su0 = bundle.ops.steklov_raw(n, 1, &u0);
    let rem: Vec<C64> = u0.iter().zip(&su0).map(|(a, s)| a - s).collect();
    let grem = grad_raw(lat, h, n, &rem);
    let mut t4 = ZERO;
    let mut flux = vec![ZERO; b];
    for i in 0..grid.nodes() {
        small::matvec(bundle.fine_coef(i), b, b, &grem[i * b..(i + 1) * b], &mut flux);
        t4 += dot(&flux, &gup[i * b..(i + 1) * b]);
    }
    let t4 = t4 * weight;
    let t5 = dot(&ke, &up) * (weight * eps) * mu;

    // F(s, c) = A(s, c) P(s, c) D u0(s), U(s, c) = N(s, c) D u0(s)
    let flux_at = |s: usize, c: usize, a: &mut [C64], phi: &mut [C64], out: &mut [C64]| {
        bundle.a_cell(s, c, a);
        small::matvec(bundle.table.p_mat(s, c), b, b, &gu0[s * b..(s + 1) * b], phi);
        small::matvec(a, b, b, phi, out);
    };
    let u_at = |s: usize, c: usize, out: &mut [C64]| {
        small::matvec(bundle.table.n_mat(s, c), n, b, &gu0[s * b..(s + 1) * b], out);
    };
    let (t1, t2, t3) = (0..grid.nodes())
        .into_par_iter()
        .map(|i| {
            let c = al.fast_index(i);
            let ai = bundle.fine_coef(i);
            let gi = &gup[i * b..(i + 1) * b];
            let mut a = vec![ZERO; b * b];
            let mut phi = vec![ZERO; b];
            let mut fl = vec![ZERO; b];
            let mut fl2 = vec![ZERO; b];
            let mut u1 = vec![ZERO; n];
            let mut u2 = vec![ZERO; n];
            let mut divf = vec![ZERO; n];
            let mut du = vec![ZERO; b];
            let mut tmp = vec![ZERO; b];
            let (mut s1, mut s2, mut s3) = (ZERO, ZERO, ZERO);
            for w in bundle.ops.window() {
                let s = bundle.ops.shift(i, w);
                // D~^* F(s, c) = -sum_k (F_k(s, c - e_k) - F_k(s - e_k, c - e_k)) / h
                divf.iter_mut().for_each(|z| *z = ZERO);
                for k in 0..d {
                    let cm = clat.step(c, k, -1);
                    let sm = lat.step(s, k, -1);
                    flux_at(s, cm, &mut a, &mut phi, &mut fl);
                    flux_at(sm, cm, &mut a, &mut phi, &mut fl2);
                    for j in 0..n {
                        divf[j] -= (fl[k * n + j] - fl2[k * n + j]) / h;
                    }
                }
                let dup: Vec<C64> = (0..n).map(|j| up[s * n + j] - up[i * n + j]).collect();
                s1 += dot(&divf, &dup) * w.weight;

                // (A(i, c) - A(s, c)) Phi(s, c)
                flux_at(s, c, &mut a, &mut phi, &mut fl);
                small::matvec(ai, b, b, &phi, &mut tmp);
                let comm: Vec<C64> = tmp.iter().zip(&fl).map(|(p, q)| p - q).collect();
                s2 += dot(&comm, gi) * w.weight;

                // D~_k U(s, c) = (U(s + e_k, c + e_k) - U(s, c + e_k)) / h
                for k in 0..d {
                    let cp = clat.step(c, k, 1);
                    u_at(lat.step(s, k, 1), cp, &mut u1);
                    u_at(s, cp, &mut u2);
                    for j in 0..n {
                        du[k * n + j] = (u1[j] - u2[j]) / h;
                    }
                }
                small::matvec(ai, b, b, &du, &mut tmp);
                s3 += dot(&tmp, gi) * w.weight;
            }
            (s1, s2, s3)
        })
        .collect::<Vec<_>>()
        .iter()
        .fold((ZERO, ZERO, ZERO), |x, y| (x.0 + y.0, x.1 + y.1, x.2 + y.2));
    let terms = [t1 * weight, t2 * weight, t3 * (weight * eps), t4, t5];
    let rhs = terms[0] - terms[1] - terms[2] - terms[3] + terms[4];
    let scale = terms.iter().map(|t| t.norm()).fold(lhs.norm(), f64::max);
    let residual = if scale == 0.0 { 0.0 } else { (lhs - rhs).norm() / scale };
    Ok(IdentityCheck { lhs, terms, rhs, residual })
}

/// Identity residuals for `pairs` random `(f, g)` at one `eps`.
pub fn identity_study(bundle: &CorrectorBundle, pairs: usize, seed: u64) -> Result<Vec<IdentityCheck>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let len = bundle.al.grid.nodes() * bundle.n();
    (0..pairs)
        .map(|_| {
            let f = GridFunction::from_values(&bundle.al.grid, bundle.n(), crate::linops::random_vec(&mut rng, len))?;
            let g = GridFunction::from_values(&bundle.al.grid, bundle.n(), crate::linops::random_vec(&mut rng, len))?;
            identity_residual(bundle, &f, &g)
        })
        .collect()
}

/// Macro period of the counterexample.
pub const COUNTEREXAMPLE_PERIOD: f64 = 4.0;

/// `u0` with `u0' = 1` on `(0, 1)` and `1 - (8/3) sin^2(pi (x - 1) / 3)` on `(1, 4)`.
pub fn counterexample_u0(x: f64) -> f64 {
    let x = x.rem_euclid(COUNTEREXAMPLE_PERIOD);
    if x <= 1.0 {
        x
    } else {
        let t = x - 1.0;
        1.0 + t - (8.0 / 3.0) * (t / 2.0 - 3.0 / (4.0 * PI) * (2.0 * PI * t / 3.0).sin())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CounterexampleRow {
    pub k: u32,
    pub eps: f64,
    pub value: f64,
    pub scaled: f64,
}

#[derive(Clone, Debug)]
pub struct CounterexampleReport {
    pub k_terms: usize,
    pub rows: Vec<CounterexampleRow>,
    /// Slope of `log value` against `log k`.
    pub trend: std::result::Result<RateFit, String>,
}

impl CounterexampleReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k,eps,value,k2_value")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.k, fmt_f64(r.eps), fmt_f64(r.value), fmt_f64(r.scaled))?;
        }
        match &self.trend {
            Ok(f) => writeln!(w, "# trend in k: slope={} residual={}", fmt_f64(f.slope), fmt_f64(f.residual)),
            Err(e) => writeln!(w, "# trend in k: unavailable ({e})"),
        }
    }
}

/// `(M f, f)` for `f = (A0 - mu) u0` at `eps_k = 2^-k`, `k` in `ks`.
pub fn counterexample_study(k_terms: usize, ks: &[u32], p: usize, cfg: GmresConfig) -> Result<CounterexampleReport> {
    let field = counterexample(k_terms, COUNTEREXAMPLE_PERIOD)?;
    if let Some(&k) = ks.iter().find(|&&k| k < 2 || k as usize > k_terms) {
        return Err(HomogError::Config(vec![format!("k = {k} is outside [2, K_terms = {k_terms}]")]));
    }
    let mu = field.default_mu();
    let rows = ks
        .par_iter()
        .map(|&k| -> Result<CounterexampleRow> {
            let eps = 2f64.powi(-(k as i32));
            let m = (COUNTEREXAMPLE_PERIOD / eps).round() as usize;
            let al = Alignment::with_periods(1, COUNTEREXAMPLE_PERIOD, m, p, 8)?;
            let bundle = CorrectorBundle::new(&field, &al, mu, cfg).map_err(|e| e.at(format!("counterexample, k = {k}")))?;
            let u0 = GridFunction::from_fn(&al.grid, 1, |x| vec![C64::new(counterexample_u0(x[0]), 0.0)]);
            let f = bundle.eff.operator(mu)?.apply(&u0.values)?;
            let f = GridFunction::from_values(&al.grid, 1, f)?;
            let value = bundle.pairing(&bundle.m()?, &f, &f)?.re;
            let kf = k as f64;
            Ok(CounterexampleRow { k, eps, value, scaled: kf * kf * value })
        })
        .collect::<Result<Vec<_>>>()?;
    let kk: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
    let vv: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let trend = fit_rate(&kk, &vv).map_err(|e| e.to_string());
    Ok(CounterexampleReport { k_terms, rows, trend })
}

/// The default aligned schedule `eps = 2^-k L`.
pub fn default_schedule(d: usize, l: f64, ks: &[u32], p: usize) -> Result<EpsilonSchedule> {
    EpsilonSchedule::dyadic(d, l, ks, p, 8)
}

/// `|u|` on the grid, for tests comparing against a grid of another size.
pub fn grid_l2(grid: &MacroGrid, v: &[C64]) -> f64 {
    (norm_sq(v) * grid.weight()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff_field as cf;
    use rand::{Rng, SeedableRng};

    #[test]
    fn fit_exact_powers() {
        let eps = [0.5, 0.25, 0.125, 0.0625];
        let f = fit_rate(&eps, &eps).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12 && f.intercept.abs() < 1e-12);
        let e2: Vec<f64> = eps.iter().map(|e| 3.0 * e * e).collect();
        let f = fit_rate(&eps, &e2).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 3f64.ln()).abs() < 1e-12 && f.residual < 1e-12);
    }

    #[test]
    fn fit_noisy_and_degenerate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let eps: Vec<f64> = (3..9).map(|k| 2f64.powi(-k)).collect();
        let e: Vec<f64> = eps.iter().map(|x| x * (1.0 + 0.1 * rng.gen::<f64>())).collect();
        assert!((fit_rate(&eps, &e).unwrap().slope - 1.0).abs() < 0.05);
        let f = fit_rate(&[0.5, 0.25, 0.125, 0.1], &[0.5, 0.0, 0.125, 0.1]).unwrap();
        assert_eq!(f.used, 3);
        assert_eq!(f.notes.len(), 1);
        assert!(fit_rate(&[0.5, 0.25, 0.1], &[0.5, -1.0, 0.1]).is_err());
        assert!(fit_rate(&[0.5, 0.25], &[0.5, 0.25]).is_err());
    }

    #[test]
    fn counterexample_u0_is_periodic_with_unit_slope() {
        assert!(counterexample_u0(4.0).abs() < 1e-14);
        assert!((counterexample_u0(0.5) - 0.5).abs() < 1e-15);
        let h = 1e-6;
        for &x in &[1.5, 2.5, 3.9] {
            let der = (counterexample_u0(x + h) - counterexample_u0(x - h)) / (2.0 * h);
            let t = x - 1.0;
            let want = 1.0 - 8.0 / 3.0 * (PI * t / 3.0).sin().powi(2);
            assert!((der - want).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_field_study_is_exact() {
        let f = cf::constant_scalar(1, 2.0).unwrap();
        let s = default_schedule(1, 1.0, &[2, 3, 4], 16).unwrap();
        let r = run_study(&f, &s, f.default_mu(), &default_forcing(1, 1, 1.0), GmresConfig::default()).unwrap();
        for row in &r.rows {
            assert!(row.err0 < 1e-12 && row.err1 < 1e-12 && row.err2 < 1e-12, "{row:?}");
        }
        assert!(r.rates[0].is_err());
    }

    #[test]
    fn y_independent_field_has_zero_err0() {
        let f = cf::slow_only_1d(1.0);
        let s = default_schedule(1, 1.0, &[2, 3, 4], 16).unwrap();
        let r = run_study(&f, &s, f.default_mu(), &default_forcing(1, 1, 1.0), GmresConfig::default()).unwrap();
        for row in &r.rows {
            assert!(row.err0 < 1e-9, "{row:?}");
        }
    }

    #[test]
    fn identity_holds_on_coupled_field() {
        for field in [cf::coupled_1d(1.0), cf::separable_1d(1.0)] {
            let al = Alignment::with_periods(1, 1.0, 8, 16, 8).unwrap();
            let b = CorrectorBundle::new(&field, &al, field.default_mu(), GmresConfig::default().with_tol(1e-12)).unwrap();
            for chk in identity_study(&b, 3, 4).unwrap() {
                assert!(chk.residual < 1e-8, "{}: {chk:?}", field.label);
                assert!(chk.terms[0].norm() > 0.0 && chk.terms[1].norm() > 0.0);
            }
        }
    }

    #[test]
    fn identity_for_y_independent_field_drops_corrector_terms() {
        // N = 0: the terms carrying U vanish and the left side is zero, while
        // the x-variation of A keeps the T - I, commutator and I - S terms alive.
        let field = cf::slow_only_1d(1.0);
        let al = Alignment::with_periods(1, 1.0, 8, 16, 8).unwrap();
        let b = CorrectorBundle::new(&field, &al, field.default_mu(), GmresConfig::default().with_tol(1e-12)).unwrap();
        let chk = &identity_study(&b, 1, 9).unwrap()[0];
        let big = chk.terms[3].norm();
        assert!(big > 0.0);
        for t in [chk.lhs, chk.terms[2], chk.terms[4]] {
            assert!(t.norm() < 1e-12 * big, "{chk:?}");
        }
        assert!(chk.residual < 1e-8);
    }

    #[test]
    fn identity_in_two_dimensions() {
        let field = cf::laminate_2d(1.0);
        let al = Alignment::with_periods(2, 1.0, 2, 8, 8).unwrap();
        let b = CorrectorBundle::new(&field, &al, field.default_mu(), GmresConfig::default().with_tol(1e-12)).unwrap();
        let chk = &identity_study(&b, 1, 3).unwrap()[0];
        assert!(chk.residual < 1e-8, "{chk:?}");
    }
}
