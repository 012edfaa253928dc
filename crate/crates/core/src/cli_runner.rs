//! Plain-text `key = value` configuration and the subcommand drivers.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex64 as C64;

use crate::cell_problem::build_table;
use crate::coeff_field::{self as cf, CoefficientField};
use crate::correctors::CorrectorBundle;
use crate::effective_operator::assemble_effective;
use crate::error::{HomogError, Result};
use crate::error_bench::{counterexample_study, default_forcing, identity_study, run_study, COUNTEREXAMPLE_PERIOD};
use crate::fine_operator::{fine_inverse, Alignment, EpsilonSchedule};
use crate::linops::GmresConfig;
use crate::torus_grid::{fmt_f64, CellGrid, GridFunction, MacroGrid};

/// Smallest points per fast period accepted from a config.
pub const CONFIG_MIN_P: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FieldChoice {
    Constant,
    Harmonic,
    Separable,
    Coupled,
    SlowOnly,
    Complex,
    Laminate,
    Counterexample,
    BgbScalar,
    BgbElastic,
}

const FIELD_NAMES: [(&str, FieldChoice); 10] = [
    ("constant", FieldChoice::Constant),
    ("harmonic", FieldChoice::Harmonic),
    ("separable", FieldChoice::Separable),
    ("coupled", FieldChoice::Coupled),
    ("slow_only", FieldChoice::SlowOnly),
    ("complex", FieldChoice::Complex),
    ("laminate", FieldChoice::Laminate),
    ("counterexample", FieldChoice::Counterexample),
    ("bgb_scalar", FieldChoice::BgbScalar),
    ("bgb_elastic", FieldChoice::BgbElastic),
];

impl FieldChoice {
    pub fn name(self) -> &'static str {
        FIELD_NAMES.iter().find(|(_, f)| *f == self).map(|(s, _)| *s).unwrap_or("?")
    }

    /// Dimension when the field fixes it.
    fn fixed_dim(self) -> Option<usize> {
        match self {
            FieldChoice::Constant => None,
            FieldChoice::Laminate | FieldChoice::BgbScalar | FieldChoice::BgbElastic => Some(2),
            _ => Some(1),
        }
    }

    /// Fields whose macro period is built in.
    fn fixed_period(self) -> Option<f64> {
        match self {
            FieldChoice::Harmonic | FieldChoice::Complex | FieldChoice::BgbScalar => Some(1.0),
            _ => None,
        }
    }

    fn default_period(self) -> f64 {
        match self {
            FieldChoice::Counterexample => COUNTEREXAMPLE_PERIOD,
            _ => 1.0,
        }
    }
}

impl FromStr for FieldChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        FIELD_NAMES.iter().find(|(n, _)| *n == s).map(|(_, f)| *f).ok_or_else(|| {
            let names: Vec<&str> = FIELD_NAMES.iter().map(|(n, _)| *n).collect();
            format!("unknown field '{s}' (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyConfig {
    pub field: FieldChoice,
    pub dim: usize,
    pub n: usize,
    /// Scalar of the constant field.
    pub value: f64,
    /// Terms of the counterexample series.
    pub k_terms: usize,
    pub period: f64,
    /// Fine points per fast period.
    pub p: usize,
    /// Macro grid size; when set the `eps` schedule must align with it.
    pub grid_points: Option<usize>,
    /// Cell grid size for the `cell` and `effective` subcommands.
    pub cell_points: usize,
    pub mu: C64,
    pub ks: Vec<u32>,
    pub counter_ks: Vec<u32>,
    pub tol: f64,
    pub pairs: usize,
    pub seed: u64,
    pub output: String,
}

const KEYS: [&str; 17] = [
    "field",
    "dim",
    "n",
    "value",
    "k_terms",
    "period",
    "p",
    "grid_points",
    "cell_points",
    "mu_re",
    "mu_im",
    "ks",
    "counter_ks",
    "tol",
    "pairs",
    "seed",
    "output",
];

fn parse_list(s: &str) -> std::result::Result<Vec<u32>, String> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let a: u32 = a.trim().parse().map_err(|_| format!("'{s}' is not a range a..b"))?;
        let b: u32 = b.trim().parse().map_err(|_| format!("'{s}' is not a range a..b"))?;
        if a > b {
            return Err(format!("empty range '{s}'"));
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|t| t.trim().parse::<u32>().map_err(|_| format!("'{t}' is not a nonnegative integer"))).collect()
}

fn render_list(v: &[u32]) -> String {
    v.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(",")
}

impl StudyConfig {
    pub fn build_field(&self) -> Result<CoefficientField> {
        let l = self.period;
        Ok(match self.field {
            FieldChoice::Constant => cf::constant_scalar(self.dim, self.value)?,
            FieldChoice::Harmonic => cf::harmonic_1d(),
            FieldChoice::Separable => cf::separable_1d(l),
            FieldChoice::Coupled => cf::coupled_1d(l),
            FieldChoice::SlowOnly => cf::slow_only_1d(l),
            FieldChoice::Complex => cf::complex_1d(),
            FieldChoice::Laminate => cf::laminate_2d(l),
            FieldChoice::Counterexample => cf::counterexample(self.k_terms, l)?,
            FieldChoice::BgbScalar => cf::bgb_scalar_2d(),
            FieldChoice::BgbElastic => cf::bgb_elastic_2d(l),
        })
    }

    pub fn gmres(&self) -> GmresConfig {
        GmresConfig::default().with_tol(self.tol)
    }

    pub fn schedule(&self) -> Result<EpsilonSchedule> {
        match self.grid_points {
            Some(m) => {
                let grid = MacroGrid::new(self.dim, self.period, m)?;
                let eps: Vec<f64> = self.ks.iter().map(|&k| self.period * 2f64.powi(-(k as i32))).collect();
                EpsilonSchedule::on_grid(&grid, &eps, CONFIG_MIN_P)
            }
            None => {
                let mut entries = Vec::new();
                let mut errors = Vec::new();
                for &k in &self.ks {
                    match Alignment::with_periods(self.dim, self.period, 1usize << k.min(30), self.p, CONFIG_MIN_P) {
                        Ok(a) => entries.push(a),
                        Err(e) => errors.push(format!("k = {k}: {e}")),
                    }
                }
                if errors.is_empty() {
                    Ok(EpsilonSchedule { entries })
                } else {
                    Err(HomogError::Config(errors))
                }
            }
        }
    }

    /// Macro grid for the `cell`, `effective` and `solve` subcommands.
    pub fn macro_grid(&self) -> Result<MacroGrid> {
        let m = match self.grid_points {
            Some(m) => m,
            None => (1usize << self.ks.first().copied().unwrap_or(0).min(30)) * self.p,
        };
        MacroGrid::new(self.dim, self.period, m)
    }

    /// Every key with its value, in a fixed order; floats carry 17 significant digits.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        put("field", self.field.name().into());
        put("dim", self.dim.to_string());
        put("n", self.n.to_string());
        put("value", fmt_f64(self.value));
        put("k_terms", self.k_terms.to_string());
        put("period", fmt_f64(self.period));
        put("p", self.p.to_string());
        if let Some(m) = self.grid_points {
            put("grid_points", m.to_string());
        }
        put("cell_points", self.cell_points.to_string());
        put("mu_re", fmt_f64(self.mu.re));
        put("mu_im", fmt_f64(self.mu.im));
        put("ks", render_list(&self.ks));
        put("counter_ks", render_list(&self.counter_ks));
        put("tol", fmt_f64(self.tol));
        put("pairs", self.pairs.to_string());
        put("seed", self.seed.to_string());
        put("output", self.output.clone());
        s
    }
}

impl fmt::Display for StudyConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Parse and validate; every violation is reported, not just the first.
pub fn parse_config(text: &str) -> Result<StudyConfig> {
    let mut errors: Vec<String> = Vec::new();
    let mut raw: Vec<(String, String, usize)> = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            errors.push(format!("line {}: expected key = value, got '{line}'", no + 1));
            continue;
        };
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if !KEYS.contains(&k.as_str()) {
            errors.push(format!("line {}: unknown key '{k}'", no + 1));
        } else if raw.iter().any(|(r, _, _)| *r == k) {
            errors.push(format!("line {}: duplicate key '{k}'", no + 1));
        } else {
            raw.push((k, v, no + 1));
        }
    }
    fn lookup<'a>(raw: &'a [(String, String, usize)], k: &str) -> Option<(&'a str, usize)> {
        raw.iter().find(|(r, _, _)| r == k).map(|(_, v, l)| (v.as_str(), *l))
    }
    let get = |k: &str| lookup(&raw, k);

    fn typed<T: FromStr>(raw: &[(String, String, usize)], k: &str, what: &str, errors: &mut Vec<String>) -> Option<T> {
        let (v, line) = lookup(raw, k)?;
        match v.parse::<T>() {
            Ok(x) => Some(x),
            Err(_) => {
                errors.push(format!("line {line}: {k} = '{v}' is not {what}"));
                None
            }
        }
    }
    let g = raw.as_slice();

    let field = match get("field") {
        None => {
            errors.push("missing key 'field'".into());
            None
        }
        Some((v, line)) => match v.parse::<FieldChoice>() {
            Ok(f) => Some(f),
            Err(e) => {
                errors.push(format!("line {line}: {e}"));
                None
            }
        },
    };
    let dim: Option<usize> = typed(g, "dim", "an integer", &mut errors);
    let n: Option<usize> = typed(g, "n", "an integer", &mut errors);
    let value: f64 = typed(g, "value", "a number", &mut errors).unwrap_or(1.0);
    let k_terms: usize = typed(g, "k_terms", "an integer", &mut errors).unwrap_or(12);
    let period: Option<f64> = typed(g, "period", "a number", &mut errors);
    let p: usize = typed(g, "p", "an integer", &mut errors).unwrap_or(32);
    let grid_points: Option<usize> = typed(g, "grid_points", "an integer", &mut errors);
    let cell_points: Option<usize> = typed(g, "cell_points", "an integer", &mut errors);
    let mu_re: Option<f64> = typed(g, "mu_re", "a number", &mut errors);
    let mu_im: f64 = typed(g, "mu_im", "a number", &mut errors).unwrap_or(0.0);
    let tol: f64 = typed(g, "tol", "a number", &mut errors).unwrap_or(1e-10);
    let pairs: usize = typed(g, "pairs", "an integer", &mut errors).unwrap_or(5);
    let seed: u64 = typed(g, "seed", "an integer", &mut errors).unwrap_or(1);
    let output = get("output").map(|(v, _)| v.to_string()).unwrap_or_else(|| "out".into());
    let list = |k: &str, errors: &mut Vec<String>| -> Option<Vec<u32>> {
        let (v, line) = get(k)?;
        match parse_list(v) {
            Ok(l) if l.is_empty() => {
                errors.push(format!("line {line}: {k} is empty"));
                None
            }
            Ok(l) => Some(l),
            Err(e) => {
                errors.push(format!("line {line}: {k}: {e}"));
                None
            }
        }
    };
    let ks = list("ks", &mut errors);
    let counter_ks = list("counter_ks", &mut errors).unwrap_or_else(|| (4..=8).collect());

    let Some(field) = field else {
        return Err(HomogError::Config(errors));
    };
    let dim = match (field.fixed_dim(), dim) {
        (Some(fd), Some(d)) if fd != d => {
            errors.push(format!("dim = {d} but field '{}' is {fd}-dimensional", field.name()));
            fd
        }
        (Some(fd), _) => fd,
        (None, Some(d)) if (1..=3).contains(&d) => d,
        (None, Some(d)) => {
            errors.push(format!("dim = {d} is outside 1..=3"));
            1
        }
        (None, None) => 1,
    };
    let period = match (field.fixed_period(), period) {
        (Some(fp), Some(l)) if l != fp => {
            errors.push(format!("field '{}' has a fixed period {fp}, got period = {l}", field.name()));
            fp
        }
        (Some(fp), _) => fp,
        (None, Some(l)) => l,
        (None, None) => field.default_period(),
    };
    if !(period.is_finite() && period > 0.0) {
        errors.push(format!("period = {period} must be positive"));
    }
    if !(tol > 0.0 && tol < 1.0) {
        errors.push(format!("tol = {tol} must lie in (0, 1)"));
    }
    if p < CONFIG_MIN_P || !p.is_multiple_of(2) {
        errors.push(format!("p = {p} must be even and at least {CONFIG_MIN_P}"));
    }
    if pairs == 0 {
        errors.push("pairs must be at least 1".into());
    }
    if k_terms == 0 {
        errors.push("k_terms must be at least 1".into());
    }
    if let Some(&k) = counter_ks.iter().find(|&&k| k < 2 || k as usize > k_terms) {
        errors.push(format!("counter_ks contains k = {k} outside [2, k_terms = {k_terms}]"));
    }
    let ks = ks.unwrap_or_else(|| if dim == 1 { (3..=8).collect() } else { (2..=5).collect() });
    let cell_points = cell_points.unwrap_or(if dim == 1 { 256 } else { 64 });
    if cell_points < 4 {
        errors.push(format!("cell_points = {cell_points} must be at least 4"));
    }

    let mut cfg = StudyConfig {
        field,
        dim,
        n: 1,
        value,
        k_terms,
        period,
        p,
        grid_points,
        cell_points,
        mu: C64::new(0.0, mu_im),
        ks,
        counter_ks,
        tol,
        pairs,
        seed,
        output,
    };
    if !(period.is_finite() && period > 0.0 && k_terms > 0) {
        return Err(HomogError::Config(errors));
    }
    match cfg.build_field() {
        Ok(f) => {
            cfg.n = f.n;
            if let Some(nn) = n {
                if nn != f.n {
                    errors.push(format!("n = {nn} but field '{}' has n = {}", field.name(), f.n));
                }
            }
            cfg.mu.re = mu_re.unwrap_or(f.default_mu().re);
            let s = f.sector();
            if s.contains(cfg.mu) {
                errors.push(HomogError::Sector { re: cfg.mu.re, im: cfg.mu.im, slope: s.slope, shift: s.shift }.to_string());
            }
        }
        Err(e) => errors.push(e.to_string()),
    }
    match if p.is_multiple_of(2) && p >= CONFIG_MIN_P { cfg.schedule() } else { Ok(EpsilonSchedule { entries: vec![] }) } {
        Ok(_) => {}
        Err(HomogError::Config(v)) => errors.extend(v),
        Err(e) => errors.push(e.to_string()),
    }
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(HomogError::Config(errors))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Cell,
    Effective,
    Solve,
    Study,
    Counterexample,
    Identity,
}

impl Command {
    pub const ALL: [Command; 6] =
        [Command::Cell, Command::Effective, Command::Solve, Command::Study, Command::Counterexample, Command::Identity];

    pub fn name(self) -> &'static str {
        match self {
            Command::Cell => "cell",
            Command::Effective => "effective",
            Command::Solve => "solve",
            Command::Study => "study",
            Command::Counterexample => "counterexample",
            Command::Identity => "identity",
        }
    }
}

impl FromStr for Command {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Command::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| format!("unknown subcommand '{s}'"))
    }
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| HomogError::Io(e).at(format!("creating {}", path.display())))?;
    Ok((path, BufWriter::new(f)))
}

fn io<T>(r: std::io::Result<T>, what: &Path) -> Result<T> {
    r.map_err(|e| HomogError::Io(e).at(format!("writing {}", what.display())))
}

/// Run one subcommand, writing its CSV into `dir`. Returns the files written.
pub fn run(cmd: Command, cfg: &StudyConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| HomogError::Io(e).at(format!("creating {}", dir.display())))?;
    let field = cfg.build_field()?;
    let gm = cfg.gmres();
    let written = match cmd {
        Command::Cell => {
            let grid = cfg.macro_grid()?;
            let cell = CellGrid::new(cfg.dim, cfg.cell_points)?;
            let table = build_table(&field, &grid, &cell)?;
            let (path, mut w) = create(dir, "cell.csv")?;
            let (n, b) = (table.n, table.b());
            let mut seen = vec![false; table.slots()];
            io(writeln!(w, "node,cell,direction,component,re,im"), &path)?;
            for node in 0..grid.nodes() {
                let s = table.slot(node);
                if seen[s] {
                    continue;
                }
                seen[s] = true;
                for c in 0..table.cells() {
                    let m = table.n_mat(node, c);
                    for q in 0..b {
                        for j in 0..n {
                            let v = m[j * b + q];
                            io(writeln!(w, "{node},{c},{q},{j},{},{}", fmt_f64(v.re), fmt_f64(v.im)), &path)?;
                        }
                    }
                }
            }
            io(w.flush(), &path)?;
            vec![path]
        }
        Command::Effective => {
            let grid = cfg.macro_grid()?;
            let cell = CellGrid::new(cfg.dim, cfg.cell_points)?;
            let eff = assemble_effective(&field, &build_table(&field, &grid, &cell)?)?;
            let (path, mut w) = create(dir, "effective.csv")?;
            io(eff.write_csv(&mut w), &path)?;
            io(w.flush(), &path)?;
            vec![path]
        }
        Command::Solve => {
            let al = cfg.schedule()?.entries.into_iter().next().ok_or_else(|| HomogError::Config(vec!["empty ks".into()]))?;
            let forcing = default_forcing(cfg.dim, field.n, cfg.period);
            let f = GridFunction::from_fn(&al.grid, field.n, |x| forcing(x));
            let (ue, _) = fine_inverse(&field, &al, cfg.mu, gm)?.solve(&f.values).map_err(|e| e.at("solve: fine"))?;
            let bundle = CorrectorBundle::new(&field, &al, cfg.mu, gm)?;
            let (u0, _) = bundle.eff.resolvent(cfg.mu, gm)?.solve(&f.values).map_err(|e| e.at("solve: effective"))?;
            let (path, mut w) = create(dir, "solve.csv")?;
            let d = cfg.dim;
            let mut header: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
            for j in 0..field.n {
                for s in ["f", "u_eps", "u0"] {
                    header.push(format!("{s}{j}_re"));
                    header.push(format!("{s}{j}_im"));
                }
            }
            io(writeln!(w, "# eps = {}", fmt_f64(al.eps)), &path)?;
            io(writeln!(w, "{}", header.join(",")), &path)?;
            for i in 0..al.grid.nodes() {
                let x = al.grid.node_point(i);
                let mut row: Vec<String> = (0..d).map(|k| fmt_f64(x[k])).collect();
                for j in 0..field.n {
                    for v in [f.values[i * field.n + j], ue[i * field.n + j], u0[i * field.n + j]] {
                        row.push(fmt_f64(v.re));
                        row.push(fmt_f64(v.im));
                    }
                }
                io(writeln!(w, "{}", row.join(",")), &path)?;
            }
            io(w.flush(), &path)?;
            vec![path]
        }
        Command::Study => {
            let rep = run_study(&field, &cfg.schedule()?, cfg.mu, &default_forcing(cfg.dim, field.n, cfg.period), gm)?;
            let (path, mut w) = create(dir, "study.csv")?;
            io(rep.write_csv(&mut w), &path)?;
            io(w.flush(), &path)?;
            vec![path]
        }
        Command::Counterexample => {
            let rep = counterexample_study(cfg.k_terms, &cfg.counter_ks, cfg.p, gm)?;
            let (path, mut w) = create(dir, "counterexample.csv")?;
            io(rep.write_csv(&mut w), &path)?;
            io(w.flush(), &path)?;
            vec![path]
        }
        Command::Identity => {
            let (path, mut w) = create(dir, "identity.csv")?;
            io(writeln!(w, "eps,pair,lhs_re,lhs_im,rhs_re,rhs_im,residual"), &path)?;
            for al in cfg.schedule()?.entries {
                let bundle = CorrectorBundle::new(&field, &al, cfg.mu, gm)?;
                for (k, c) in identity_study(&bundle, cfg.pairs, cfg.seed)?.iter().enumerate() {
                    io(
                        writeln!(
                            w,
                            "{},{k},{},{},{},{},{}",
                            fmt_f64(al.eps),
                            fmt_f64(c.lhs.re),
                            fmt_f64(c.lhs.im),
                            fmt_f64(c.rhs.re),
                            fmt_f64(c.rhs.im),
                            fmt_f64(c.residual)
                        ),
                        &path,
                    )?;
                }
            }
            io(w.flush(), &path)?;
            vec![path]
        }
    };
    Ok(written)
}
