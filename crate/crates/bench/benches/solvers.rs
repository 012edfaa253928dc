use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use homog_core::cell_problem::build_table;
use homog_core::coeff_field as cf;
use homog_core::correctors::CorrectorBundle;
use homog_core::fine_operator::{fine_inverse, Alignment};
use homog_core::linops::GmresConfig;
use homog_core::torus_grid::GridFunction;
use homog_core::C64;

fn forcing(al: &Alignment) -> GridFunction {
    GridFunction::from_fn(&al.grid, 1, |x| {
        let s: f64 = x.iter().map(|t| (2.0 * std::f64::consts::PI * t).sin()).sum();
        vec![C64::new(s, 0.0)]
    })
}

fn cell_tables(c: &mut Criterion) {
    let coupled = cf::coupled_1d(1.0);
    let al = Alignment::with_periods(1, 1.0, 64, 32, 8).unwrap();
    c.bench_function("cell table 1d coupled, 2048 slots x 32", |b| {
        b.iter(|| black_box(build_table(&coupled, &al.grid, &al.cell).unwrap()))
    });
    let elastic = cf::bgb_elastic_2d(1.0);
    let al2 = Alignment::with_periods(2, 1.0, 2, 8, 8).unwrap();
    c.bench_function("cell table 2d elastic, 256 slots x 64", |b| {
        b.iter(|| black_box(build_table(&elastic, &al2.grid, &al2.cell).unwrap()))
    });
}

fn fine_solves(c: &mut Criterion) {
    let field = cf::separable_1d(1.0);
    let cfg = GmresConfig::default();
    for (d, m, p, label) in [(1, 256, 32, "fine solve 1d, M = 8192"), (2, 8, 16, "fine solve 2d, M = 128^2")] {
        let field = if d == 1 { field.clone() } else { cf::laminate_2d(1.0) };
        let al = Alignment::with_periods(d, 1.0, m, p, 8).unwrap();
        let inv = fine_inverse(&field, &al, field.default_mu(), cfg).unwrap();
        let f = forcing(&al);
        c.bench_function(label, |b| b.iter(|| black_box(inv.solve(&f.values).unwrap())));
    }
}

fn correctors(c: &mut Criterion) {
    let field = cf::separable_1d(1.0);
    let al = Alignment::with_periods(1, 1.0, 64, 32, 8).unwrap();
    let bundle = CorrectorBundle::new(&field, &al, field.default_mu(), GmresConfig::default()).unwrap();
    let f = forcing(&al);
    let k = bundle.k_eps().unwrap();
    let cc = bundle.c().unwrap();
    c.bench_function("first corrector apply, M = 2048", |b| b.iter(|| black_box(k.apply(&f.values).unwrap())));
    c.bench_function("second corrector apply, M = 2048", |b| b.iter(|| black_box(cc.apply(&f.values).unwrap())));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = cell_tables, fine_solves, correctors
}
criterion_main!(benches);
