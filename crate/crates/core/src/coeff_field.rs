//! Coefficient fields `A(x, y)`: Lipschitz in the slow variable, 1-periodic
//! in the fast one, with declared ellipticity metadata.
//!
//! A field returns the full `(d n) x (d n)` matrix whose `(k, l)` block of
//! size `n x n` is `A_kl(x, y)`. Row index `k*n + j`, column index `l*n + m`.
//!
//! Coercivity constants are declared, never discovered. Two families are
//! certified: fields with uniformly positive definite real part (then
//! `C_A = 0` and `c_A` is the infimum of the smallest eigenvalue), and the
//! `b* g b` family. Anything else is audited by sampling only.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HomogError, Result};
use crate::torus_grid::{reduce_to_cell, MAX_DIM};

pub type EvalFn = dyn Fn(&[f64], &[f64], &mut [C64]) + Send + Sync;

/// Region `|Im z| <= slope (Re z + shift)` containing the numerical range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sector {
    pub slope: f64,
    pub shift: f64,
}

impl Sector {
    pub fn contains(&self, mu: C64) -> bool {
        mu.im.abs() <= self.slope * (mu.re + self.shift)
    }
}

pub fn sector_contains(sector: &Sector, mu: C64) -> bool {
    sector.contains(mu)
}

#[derive(Clone)]
pub struct CoefficientField {
    pub dim: usize,
    pub n: usize,
    eval: Arc<EvalFn>,
    pub lipschitz_x: f64,
    pub sup_norm: f64,
    /// `(c_A, C_A)`.
    pub coercivity: (f64, f64),
    pub self_adjoint: bool,
    /// `A(x, y) = c(x) B(y)` with scalar `c > 0`; cell solutions then do not depend on `x`.
    pub x_separable: bool,
    /// Macro period the field was built for.
    pub period: f64,
    pub label: String,
    pub notes: Vec<String>,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("n", &self.n)
            .field("lipschitz_x", &self.lipschitz_x)
            .field("sup_norm", &self.sup_norm)
            .field("coercivity", &self.coercivity)
            .field("self_adjoint", &self.self_adjoint)
            .finish()
    }
}

impl CoefficientField {
    /// A field with declared metadata. Nothing is certified.
    #[allow(clippy::too_many_arguments)]
    pub fn custom(
        label: impl Into<String>,
        dim: usize,
        n: usize,
        period: f64,
        eval: Arc<EvalFn>,
        lipschitz_x: f64,
        sup_norm: f64,
        coercivity: (f64, f64),
        self_adjoint: bool,
    ) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) || n == 0 {
            return Err(HomogError::Field(format!("unsupported shape d={dim}, n={n}")));
        }
        if !(coercivity.0 > 0.0) || coercivity.1 < 0.0 {
            return Err(HomogError::Field(format!(
                "coercivity constants must satisfy c_A > 0, C_A >= 0, got {coercivity:?}"
            )));
        }
        if lipschitz_x < 0.0 || sup_norm < 0.0 {
            return Err(HomogError::Field("norm bounds must be nonnegative".into()));
        }
        Ok(CoefficientField {
            dim,
            n,
            eval,
            lipschitz_x,
            sup_norm,
            coercivity,
            self_adjoint,
            x_separable: false,
            period,
            label: label.into(),
            notes: Vec::new(),
        })
    }

    pub fn block_dim(&self) -> usize {
        self.dim * self.n
    }

    pub fn sector(&self) -> Sector {
        Sector { slope: self.sup_norm / self.coercivity.0, shift: self.coercivity.1 }
    }

    /// The default spectral parameter `-(1 + C_A)`, outside every sector.
    pub fn default_mu(&self) -> C64 {
        C64::new(-(1.0 + self.coercivity.1), 0.0)
    }

    /// Write `A(x, y)` into `out` (length `(d n)^2`); `y` is reduced to `Q` first.
    #[inline]
    pub fn eval_into(&self, x: &[f64], y: &[f64], out: &mut [C64]) {
        let mut yr = [0.0; MAX_DIM];
        for k in 0..self.dim {
            yr[k] = reduce_to_cell(y[k]);
        }
        (self.eval)(&x[..self.dim], &yr[..self.dim], out);
    }

    pub fn eval_blocks(&self, x: &[f64], y: &[f64]) -> Vec<C64> {
        let b = self.block_dim();
        let mut out = vec![C64::new(0.0, 0.0); b * b];
        self.eval_into(x, y, &mut out);
        out
    }

    /// The field `A*` with blocks `A_lk(x, y)^*`.
    pub fn adjoint_field(&self) -> CoefficientField {
        let inner = self.eval.clone();
        let b = self.block_dim();
        let eval: Arc<EvalFn> = Arc::new(move |x: &[f64], y: &[f64], out: &mut [C64]| {
            let mut tmp = [C64::new(0.0, 0.0); 64];
            let buf: &mut [C64] = if b * b <= 64 { &mut tmp[..b * b] } else { unreachable!() };
            inner(x, y, buf);
            for r in 0..b {
                for c in 0..b {
                    out[r * b + c] = buf[c * b + r].conj();
                }
            }
        });
        let mut f = self.clone();
        f.eval = eval;
        f.label = format!("{}^*", self.label);
        f
    }

    fn with_separable(mut self, flag: bool) -> Self {
        self.x_separable = flag;
        self
    }
}

fn scalar_field(
    label: &str,
    dim: usize,
    period: f64,
    a: impl Fn(&[f64], &[f64]) -> C64 + Send + Sync + 'static,
    lip: f64,
    sup: f64,
    c_a: f64,
    self_adjoint: bool,
) -> Result<CoefficientField> {
    let eval: Arc<EvalFn> = Arc::new(move |x: &[f64], y: &[f64], out: &mut [C64]| {
        let v = a(x, y);
        for r in 0..dim {
            for c in 0..dim {
                out[r * dim + c] = if r == c { v } else { C64::new(0.0, 0.0) };
            }
        }
    });
    CoefficientField::custom(label, dim, 1, period, eval, lip, sup, (c_a, 0.0), self_adjoint)
}

/// Constant field with a positive definite real part.
pub fn constant(dim: usize, n: usize, mat: Vec<C64>) -> Result<CoefficientField> {
    let b = dim * n;
    if mat.len() != b * b {
        return Err(HomogError::Field(format!("constant field needs {} entries", b * b)));
    }
    let re: Vec<C64> = (0..b * b)
        .map(|idx| {
            let (r, c) = (idx / b, idx % b);
            (mat[r * b + c] + mat[c * b + r].conj()) * 0.5
        })
        .collect();
    let c_a = hermitian_min_eig(&re, b);
    if !(c_a > 0.0) {
        return Err(HomogError::Field("constant field: real part is not positive definite".into()));
    }
    let sup = spectral_norm(&mat, b, b);
    let self_adjoint = (0..b * b).all(|idx| (mat[idx] - mat[(idx % b) * b + idx / b].conj()).norm() == 0.0);
    let m2 = mat.clone();
    let eval: Arc<EvalFn> = Arc::new(move |_x: &[f64], _y: &[f64], out: &mut [C64]| out.copy_from_slice(&m2));
    Ok(CoefficientField::custom("constant", dim, n, 1.0, eval, 0.0, sup, (c_a, 0.0), self_adjoint)?.with_separable(true))
}

/// Scalar identity-times-`value` field.
pub fn constant_scalar(dim: usize, value: f64) -> Result<CoefficientField> {
    let mut mat = vec![C64::new(0.0, 0.0); dim * dim];
    for k in 0..dim {
        mat[k * dim + k] = C64::new(value, 0.0);
    }
    constant(dim, 1, mat)
}

/// `A(x, y) = 2 + sin 2 pi y` in 1D; the effective coefficient is `sqrt 3`.
pub fn harmonic_1d() -> CoefficientField {
    scalar_field("harmonic_1d", 1, 1.0, |_x, y| C64::new(2.0 + (2.0 * PI * y[0]).sin(), 0.0), 0.0, 3.0, 1.0, true)
        .expect("valid builtin")
        .with_separable(true)
}

/// `A(x, y) = (2 + sin 2 pi x / L)(2 + sin 2 pi y)`, separable with both variables active.
pub fn separable_1d(l: f64) -> CoefficientField {
    let mut f = scalar_field(
        "separable_1d",
        1,
        l,
        move |x, y| C64::new((2.0 + (2.0 * PI * x[0] / l).sin()) * (2.0 + (2.0 * PI * y[0]).sin()), 0.0),
        3.0 * 2.0 * PI / l,
        9.0,
        1.0,
        true,
    )
    .expect("valid builtin")
    .with_separable(true);
    f.period = l;
    f
}

/// A non-self-adjoint 1D field whose cell solution depends on `x`:
/// `A = (2 + (1 + sin(2 pi x / L)/2) sin 2 pi y) + i (cos 2 pi y)/2 + i/4 cos(2 pi x / L)`.
pub fn coupled_1d(l: f64) -> CoefficientField {
    let w = 2.0 * PI / l;
    let mut f = scalar_field(
        "coupled_1d",
        1,
        l,
        move |x, y| {
            let s = (2.0 * PI * y[0]).sin();
            let c = (2.0 * PI * y[0]).cos();
            C64::new(2.0 + (1.0 + 0.5 * (w * x[0]).sin()) * s, 0.5 * c + 0.25 * (w * x[0]).cos())
        },
        // |d/dx| <= w/2 |s| + w/4 |sin| <= 0.75 w
        0.75 * w,
        (3.5f64.powi(2) + 0.75f64.powi(2)).sqrt(),
        0.5,
        false,
    )
    .expect("valid builtin");
    f.period = l;
    f
}

/// `A(x) = 2 + sin(2 pi x / L) + i/2`, independent of the fast variable.
pub fn slow_only_1d(l: f64) -> CoefficientField {
    let w = 2.0 * PI / l;
    let mut f = scalar_field(
        "slow_only_1d",
        1,
        l,
        move |x, _y| C64::new(2.0 + (w * x[0]).sin(), 0.5),
        w,
        (9.0f64 + 0.25).sqrt(),
        1.0,
        false,
    )
    .expect("valid builtin");
    f.period = l;
    f
}

/// Complex scalar 1D field `(2 + sin 2 pi y)(1 + i/2)`, independent of `x`.
pub fn complex_1d() -> CoefficientField {
    let z = C64::new(1.0, 0.5);
    scalar_field("complex_1d", 1, 1.0, move |_x, y| z * (2.0 + (2.0 * PI * y[0]).sin()), 0.0, 3.0 * z.norm(), 1.0, false)
        .expect("valid builtin")
        .with_separable(true)
}

/// Factors of the 2D laminate `A = c(x) a1(y1) a2(y2) I`.
pub mod laminate {
    use std::f64::consts::PI;

    pub fn c(x: &[f64], l: f64) -> f64 {
        1.0 + 0.25 * (2.0 * PI * x[0] / l).sin() * (2.0 * PI * x[1] / l).sin()
    }
    pub fn a1(y: f64) -> f64 {
        2.0 + (2.0 * PI * y).sin()
    }
    pub fn a2(y: f64) -> f64 {
        1.5 + (2.0 * PI * y).cos()
    }
    /// Harmonic and arithmetic means of `a1` and `a2`.
    pub const HM1: f64 = 1.732_050_807_568_877_2; // sqrt(3)
    pub const AM1: f64 = 2.0;
    pub const HM2: f64 = 1.118_033_988_749_895; // sqrt(1.25)
    pub const AM2: f64 = 1.5;

    /// Closed-form effective diagonal `(c hm1 am2, c am1 hm2)`.
    pub fn effective_diag(x: &[f64], l: f64) -> [f64; 2] {
        let cx = c(x, l);
        [cx * HM1 * AM2, cx * AM1 * HM2]
    }
}

/// 2D scalar laminate `A(x, y) = c(x) a1(y1) a2(y2) I`.
pub fn laminate_2d(l: f64) -> CoefficientField {
    let mut f = scalar_field(
        "laminate_2d",
        2,
        l,
        move |x, y| C64::new(laminate::c(x, l) * laminate::a1(y[0]) * laminate::a2(y[1]), 0.0),
        0.25 * 2.0 * PI / l * 3.0 * 2.5,
        1.25 * 3.0 * 2.5,
        0.75 * 0.5,
        true,
    )
    .expect("valid builtin")
    .with_separable(true);
    f.period = l;
    f
}

/// `chi_K(x) = sum_{k <= K} k^-2 cos(2^k pi x)`.
pub fn chi(x: f64, k_terms: usize) -> f64 {
    (1..=k_terms).map(|k| (k as f64).powi(-2) * (2f64.powi(k as i32) * PI * x).cos()).sum()
}

/// `A_1` of the counterexample: equal to 1 off `(0, 1)` in each period, with
/// `A_1' = chi_K` on `(0, 1)`.
pub fn counterexample_a1(x: f64, k_terms: usize, l: f64) -> f64 {
    let xr = x.rem_euclid(l);
    if xr >= 1.0 {
        return 1.0;
    }
    1.0 + (1..=k_terms)
        .map(|k| {
            let w = 2f64.powi(k as i32) * PI;
            (k as f64).powi(-2) * (w * xr).sin() / w
        })
        .sum::<f64>()
}

pub fn counterexample_a2(y: f64) -> f64 {
    4.0 * PI.sqrt() / (2.0 + (2.0 * PI * y).sin())
}

/// `A(x, y) = A_1(x) A_2(y)` with `A_2(y) = 4 sqrt(pi) / (2 + sin 2 pi y)`.
pub fn counterexample(k_terms: usize, l: f64) -> Result<CoefficientField> {
    if k_terms == 0 {
        return Err(HomogError::Field("counterexample needs K_terms >= 1".into()));
    }
    if l < 1.0 {
        return Err(HomogError::Field("counterexample needs a macro period L >= 1".into()));
    }
    // |A_1 - 1| <= sum 1/(k^2 2^k pi) < 0.1854
    let dev: f64 = (1..=k_terms.min(60)).map(|k| 1.0 / ((k as f64).powi(2) * 2f64.powi(k as i32) * PI)).sum();
    let a2_max = 4.0 * PI.sqrt();
    let a2_min = 4.0 * PI.sqrt() / 3.0;
    let lip: f64 = (1..=k_terms).map(|k| (k as f64).powi(-2)).sum::<f64>() * a2_max;
    let mut f = scalar_field(
        "counterexample",
        1,
        l,
        move |x, y| C64::new(counterexample_a1(x[0], k_terms, l) * counterexample_a2(y[0]), 0.0),
        lip,
        (1.0 + dev) * a2_max,
        (1.0 - dev) * a2_min,
        true,
    )?
    .with_separable(true);
    f.period = l;
    // the k-th term changes A_1 by k^-2 2^-k / pi; below 1e-16 from k ~ 45 on
    if k_terms > 45 {
        f.notes.push(format!("K_terms = {k_terms}: terms beyond k = 45 are below double precision"));
    }
    Ok(f)
}

/// Generic `b* g b` field: `A_kl = b_k^* g b_l` with `b_k` of size `m x n`
/// (row-major) and `g(x, y)` an `m x m` matrix.
pub struct BgbSpec {
    pub dim: usize,
    pub n: usize,
    pub m: usize,
    pub b: Vec<Vec<C64>>,
    pub g: Arc<dyn Fn(&[f64], &[f64], &mut [C64]) + Send + Sync>,
    /// `inf lambda_min(Re g)`.
    pub g_re_min: f64,
    pub g_sup: f64,
    pub g_lip: f64,
    pub self_adjoint_g: bool,
    pub period: f64,
}

/// Smallest eigenvalue of `b(xi)^* b(xi)` over a mesh of the unit sphere.
pub fn symbol_alpha(dim: usize, n: usize, m: usize, b: &[Vec<C64>], mesh: usize) -> f64 {
    let mut dirs: Vec<[f64; 3]> = Vec::new();
    match dim {
        1 => dirs.push([1.0, 0.0, 0.0]),
        2 => {
            for t in 0..mesh {
                let a = PI * t as f64 / mesh as f64;
                dirs.push([a.cos(), a.sin(), 0.0]);
            }
        }
        _ => {
            for t in 0..mesh {
                for s in 0..mesh {
                    let th = PI * (t as f64 + 0.5) / mesh as f64;
                    let ph = 2.0 * PI * s as f64 / mesh as f64;
                    dirs.push([th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]);
                }
            }
        }
    }
    let mut alpha = f64::INFINITY;
    for xi in dirs {
        let mut bx = vec![C64::new(0.0, 0.0); m * n];
        for k in 0..dim {
            for idx in 0..m * n {
                bx[idx] += b[k][idx] * xi[k];
            }
        }
        // b(xi)^* b(xi), n x n
        let mut g = vec![C64::new(0.0, 0.0); n * n];
        for r in 0..n {
            for c in 0..n {
                g[r * n + c] = (0..m).map(|q| bx[q * n + r].conj() * bx[q * n + c]).sum();
            }
        }
        alpha = alpha.min(hermitian_min_eig(&g, n));
    }
    alpha
}

pub fn builtin_bgb(spec: BgbSpec) -> Result<CoefficientField> {
    let BgbSpec { dim, n, m, b, g, g_re_min, g_sup, g_lip, self_adjoint_g, period } = spec;
    if b.len() != dim || b.iter().any(|bk| bk.len() != m * n) {
        return Err(HomogError::Field(format!("b needs {dim} blocks of size {m}x{n}")));
    }
    if !(g_re_min > 0.0) {
        return Err(HomogError::Field("Re g must be uniformly positive definite".into()));
    }
    let alpha = symbol_alpha(dim, n, m, &b, 180);
    if !(alpha > 1e-12) {
        return Err(HomogError::Field(format!(
            "symbol b(xi) degenerates on the sampled sphere (min eigenvalue {alpha:.3e})"
        )));
    }
    // B = [b_1 .. b_d] as an m x (d n) matrix
    let bd = dim * n;
    let mut bmat = vec![C64::new(0.0, 0.0); m * bd];
    for k in 0..dim {
        for q in 0..m {
            for j in 0..n {
                bmat[q * bd + k * n + j] = b[k][q * n + j];
            }
        }
    }
    let bnorm = spectral_norm(&bmat, m, bd);
    let bm = bmat.clone();
    let eval: Arc<EvalFn> = Arc::new(move |x: &[f64], y: &[f64], out: &mut [C64]| {
        let mut gbuf = vec![C64::new(0.0, 0.0); m * m];
        g(x, y, &mut gbuf);
        // out = B^* g B
        let mut gb = vec![C64::new(0.0, 0.0); m * bd];
        for q in 0..m {
            for c in 0..bd {
                gb[q * bd + c] = (0..m).map(|s| gbuf[q * m + s] * bm[s * bd + c]).sum();
            }
        }
        for r in 0..bd {
            for c in 0..bd {
                out[r * bd + c] = (0..m).map(|q| bm[q * bd + r].conj() * gb[q * bd + c]).sum();
            }
        }
    });
    let mut f = CoefficientField::custom(
        "bgb",
        dim,
        n,
        period,
        eval,
        g_lip * bnorm * bnorm,
        g_sup * bnorm * bnorm,
        (alpha * g_re_min, 0.0),
        self_adjoint_g,
    )?;
    f.notes.push(format!("symbol constant alpha = {alpha:.6}"));
    Ok(f)
}

/// `d = 2, n = 1`, `b_k = e_k`, `g = (2 + cos 2 pi y1) I`: the scalar field `g delta_kl`.
pub fn bgb_scalar_2d() -> CoefficientField {
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    let g = Arc::new(|_x: &[f64], y: &[f64], out: &mut [C64]| {
        let v = 2.0 + (2.0 * PI * y[0]).cos();
        out[0] = C64::new(v, 0.0);
        out[1] = C64::new(0.0, 0.0);
        out[2] = C64::new(0.0, 0.0);
        out[3] = C64::new(v, 0.0);
    });
    builtin_bgb(BgbSpec {
        dim: 2,
        n: 1,
        m: 2,
        b: vec![vec![one, zero], vec![zero, one]],
        g,
        g_re_min: 1.0,
        g_sup: 3.0,
        g_lip: 0.0,
        self_adjoint_g: true,
        period: 1.0,
    })
    .expect("valid builtin")
    .with_separable(true)
}

/// `d = n = 2` with the symmetric-gradient symbol (`m = 3`) and a complex,
/// `x`-dependent `g = s(x, y) (1 + 0.2 i) I_3`.
pub fn bgb_elastic_2d(l: f64) -> CoefficientField {
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    let r = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    // rows: (d1 u1, d2 u2, (d2 u1 + d1 u2)/sqrt 2)
    let b1 = vec![one, zero, zero, zero, zero, r];
    let b2 = vec![zero, zero, zero, one, r, zero];
    let z = C64::new(1.0, 0.2);
    let g = Arc::new(move |x: &[f64], y: &[f64], out: &mut [C64]| {
        let s = 2.0 + 0.5 * (2.0 * PI * y[0]).sin() * (2.0 * PI * y[1]).cos() + 0.25 * (2.0 * PI * x[0] / l).sin();
        for q in 0..9 {
            out[q] = C64::new(0.0, 0.0);
        }
        for q in 0..3 {
            out[q * 3 + q] = z * s;
        }
    });
    let mut f = builtin_bgb(BgbSpec {
        dim: 2,
        n: 2,
        m: 3,
        b: vec![b1, b2],
        g,
        g_re_min: 1.25,
        g_sup: 2.75 * z.norm(),
        g_lip: 0.25 * 2.0 * PI / l * z.norm(),
        self_adjoint_g: false,
        period: l,
    })
    .expect("valid builtin");
    f.label = "bgb_elastic_2d".into();
    f
}

/// One Legendre-Hadamard sample: macro point, unit `xi` in `R^d`, unit `eta` in `C^n`.
#[derive(Clone, Debug)]
pub struct LhSample {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub eta: Vec<C64>,
}

pub fn lh_samples(dim: usize, n: usize, period: f64, count: usize, seed: u64) -> Vec<LhSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..period)).collect();
            let mut xi: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let nx = xi.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            xi.iter_mut().for_each(|v| *v /= nx);
            let mut eta: Vec<C64> = (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let ne = eta.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt().max(1e-300);
            eta.iter_mut().for_each(|v| *v /= ne);
            LhSample { x, xi, eta }
        })
        .collect()
}

/// `min Re <A(x, .) xi (x) eta, xi (x) eta>` with the `y`-average taken on a
/// uniform grid of `cell_points` per dimension.
pub fn legendre_hadamard_min(field: &CoefficientField, samples: &[LhSample], cell_points: usize) -> f64 {
    let b = field.block_dim();
    let d = field.dim;
    let n = field.n;
    let lat = crate::torus_grid::Lattice::new(d, cell_points);
    let mut buf = vec![C64::new(0.0, 0.0); b * b];
    let mut worst = f64::INFINITY;
    for s in samples {
        let zeta: Vec<C64> = (0..b).map(|idx| s.eta[idx % n] * s.xi[idx / n]).collect();
        let mut acc = 0.0;
        for c in 0..lat.size() {
            let cc = lat.coords(c);
            let y: Vec<f64> = (0..d).map(|k| (cc[k] as f64 + 0.5) / cell_points as f64).collect();
            field.eval_into(&s.x, &y, &mut buf);
            let mut q = C64::new(0.0, 0.0);
            for r in 0..b {
                for col in 0..b {
                    q += zeta[r].conj() * buf[r * b + col] * zeta[col];
                }
            }
            acc += q.re;
        }
        worst = worst.min(acc / lat.size() as f64);
    }
    worst
}

/// Field audits by sampling.
pub mod audit {
    use super::*;

    fn random_point(rng: &mut ChaCha8Rng, dim: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..dim).map(|_| rng.gen_range(lo..hi)).collect()
    }

    fn diff_norm(a: &[C64], b: &[C64], size: usize) -> f64 {
        let d: Vec<C64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
        spectral_norm(&d, size, size)
    }

    /// Largest relative change of `A(x, y)` under lattice shifts of `y`.
    pub fn periodicity(field: &CoefficientField, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = field.block_dim();
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let x = random_point(&mut rng, field.dim, 0.0, field.period);
            let y = random_point(&mut rng, field.dim, -0.5, 0.5);
            let a0 = field.eval_blocks(&x, &y);
            let k = rng.gen_range(0..field.dim);
            let shift = rng.gen_range(-3i32..=3) as f64;
            let mut ys = y.clone();
            ys[k] += shift;
            let a1 = field.eval_blocks(&x, &ys);
            let scale = spectral_norm(&a0, b, b).max(1e-300);
            worst = worst.max(diff_norm(&a0, &a1, b) / scale);
        }
        worst
    }

    /// Largest ratio of a sampled difference quotient in `x` to `lipschitz_x`.
    pub fn lipschitz(field: &CoefficientField, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = field.block_dim();
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let x1 = random_point(&mut rng, field.dim, 0.0, field.period);
            let step = 10f64.powf(rng.gen_range(-4.0..-1.0)) * field.period;
            let x2: Vec<f64> = x1.iter().map(|v| v + step * rng.gen_range(-1.0..1.0)).collect();
            let y = random_point(&mut rng, field.dim, -0.5, 0.5);
            let dist = x1.iter().zip(&x2).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
            if dist == 0.0 {
                continue;
            }
            let q = diff_norm(&field.eval_blocks(&x1, &y), &field.eval_blocks(&x2, &y), b) / dist;
            if field.lipschitz_x == 0.0 {
                worst = worst.max(if q > 1e-12 { f64::INFINITY } else { 0.0 });
            } else {
                worst = worst.max(q / field.lipschitz_x);
            }
        }
        worst
    }

    /// Largest sampled `|A(x, y)|` (spectral norm).
    pub fn sup(field: &CoefficientField, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = field.block_dim();
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let x = random_point(&mut rng, field.dim, 0.0, field.period);
            let y = random_point(&mut rng, field.dim, -0.5, 0.5);
            worst = worst.max(spectral_norm(&field.eval_blocks(&x, &y), b, b));
        }
        worst
    }
}

/// Spectral norm of a row-major `rows x cols` matrix (power iteration on `M^* M`).
pub fn spectral_norm(mat: &[C64], rows: usize, cols: usize) -> f64 {
    let mut v: Vec<C64> = (0..cols).map(|j| C64::new(1.0 + 0.1 * j as f64, 0.05 * j as f64)).collect();
    let mut lam = 0.0;
    for _ in 0..300 {
        let mv: Vec<C64> = (0..rows).map(|r| (0..cols).map(|c| mat[r * cols + c] * v[c]).sum()).collect();
        let w: Vec<C64> = (0..cols).map(|c| (0..rows).map(|r| mat[r * cols + c].conj() * mv[r]).sum()).collect();
        let nw = w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if nw == 0.0 {
            return 0.0;
        }
        let new_lam = nw;
        v = w.into_iter().map(|x| x / nw).collect();
        if (new_lam - lam).abs() <= 1e-15 * new_lam {
            lam = new_lam;
            break;
        }
        lam = new_lam;
    }
    lam.sqrt()
}

/// Smallest eigenvalue of a Hermitian matrix by cyclic Jacobi rotations.
pub fn hermitian_min_eig(mat: &[C64], n: usize) -> f64 {
    let mut a = mat.to_vec();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q].norm_sqr();
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.norm() < 1e-300 {
                    continue;
                }
                let app = a[p * n + p].re;
                let aqq = a[q * n + q].re;
                let phase = apq / apq.norm();
                let theta = 0.5 * (2.0 * apq.norm()).atan2(aqq - app);
                let (c, s) = (theta.cos(), theta.sin());
                // rotation acting on columns p, q: J = [[c, s*phase], [-s*conj(phase), c]]
                for r in 0..n {
                    let arp = a[r * n + p];
                    let arq = a[r * n + q];
                    a[r * n + p] = arp * c - arq * s * phase.conj();
                    a[r * n + q] = arp * s * phase + arq * c;
                }
                for col in 0..n {
                    let apc = a[p * n + col];
                    let aqc = a[q * n + col];
                    a[p * n + col] = apc * c - aqc * s * phase;
                    a[q * n + col] = apc * s * phase.conj() + aqc * c;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i].re).fold(f64::INFINITY, f64::min)
}
