//! End-to-end checks across the module boundaries.

use homog_core::coeff_field as cf;
use homog_core::correctors::CorrectorBundle;
use homog_core::error_bench::{default_forcing, run_study};
use homog_core::fine_operator::{Alignment, EpsilonSchedule};
use homog_core::linops::GmresConfig;
use homog_core::torus_grid::{norm_sq, GridFunction};

#[test]
fn smoothed_corrector_bounds() {
    // |K^eps f| <= |K f| and |S K^eps f| = O(eps |f|)
    for field in [cf::separable_1d(1.0), cf::coupled_1d(1.0), cf::complex_1d()] {
        let mut scaled = Vec::new();
        for k in 3..=7 {
            let al = Alignment::with_periods(1, 1.0, 1 << k, 32, 8).unwrap();
            let b = CorrectorBundle::new(&field, &al, field.default_mu(), GmresConfig::default()).unwrap();
            let forcing = default_forcing(1, 1, 1.0);
            let f = GridFunction::from_fn(&al.grid, 1, |x| forcing(x));
            let ke = b.k_eps().unwrap().apply(&f.values).unwrap();
            let k2 = b.k_two_scale(&f).unwrap();
            let kef = GridFunction::from_values(&al.grid, 1, ke).unwrap();
            assert!(homog_core::torus_grid::l2_norm(&kef) <= k2.norm() * (1.0 + 1e-12), "{}", field.label);
            let ske = b.ops.steklov(&kef).unwrap();
            scaled.push((norm_sq(&ske.values) / norm_sq(&f.values)).sqrt() / al.eps);
        }
        let (lo, hi) = scaled.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &s| (a.min(s), b.max(s)));
        assert!(hi < 4.0 * lo.max(1e-300), "{}: |S K f| / (eps |f|) = {scaled:?}", field.label);
    }
}

#[test]
fn refinement_at_fixed_eps_moves_errors_little() {
    let field = cf::separable_1d(1.0);
    let forcing = default_forcing(1, 1, 1.0);
    let run = |p| {
        let s = EpsilonSchedule::dyadic(1, 1.0, &[3, 4, 5], p, 8).unwrap();
        run_study(&field, &s, field.default_mu(), &forcing, GmresConfig::default()).unwrap()
    };
    let (a, b) = (run(32), run(64));
    for (x, y) in a.rows.iter().zip(&b.rows) {
        for (e, f) in [(x.err0, y.err0), (x.err1, y.err1), (x.err2, y.err2)] {
            assert!((e - f).abs() < 0.1 * e, "eps = {}: {e} vs {f}", x.eps);
        }
    }
}

#[test]
fn non_self_adjoint_study_keeps_rates() {
    let field = cf::coupled_1d(1.0);
    let s = EpsilonSchedule::dyadic(1, 1.0, &[3, 4, 5, 6], 32, 8).unwrap();
    let r = run_study(&field, &s, field.default_mu(), &default_forcing(1, 1, 1.0), GmresConfig::default()).unwrap();
    let slopes: Vec<f64> = r.rates.iter().map(|f| f.as_ref().unwrap().slope).collect();
    assert!((0.8..1.3).contains(&slopes[0]) && (0.75..1.3).contains(&slopes[1]) && (1.7..2.3).contains(&slopes[2]), "{slopes:?}");
}
