//! Synthetic measurement generation: the direct quadrature route through the
//! kernel gradient form, the integration-by-parts route through the planar
//! divergence, an independent FFT / Fourier-multiplier oracle, and seeded
//! measurement noise.

use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::{build_grid, FieldSample, Grid, Rect, ScalarField};
use crate::kernels::{dh_poisson_kernel, grad_poisson_kernel, k12, k3, KernelParams};

/// Planar magnetisation: three scalar components on a common grid over Q.
#[derive(Clone, Debug)]
pub struct Magnetisation {
    grid: Arc<Grid>,
    m1: ScalarField,
    m2: ScalarField,
    m3: ScalarField,
}

impl Magnetisation {
    pub fn new(m1: ScalarField, m2: ScalarField, m3: ScalarField) -> Result<Self> {
        if !m1.same_grid(&m2) || !m1.same_grid(&m3) {
            return Err(Error::Contract(
                "magnetisation components on different grids".into(),
            ));
        }
        let grid = m1.grid().clone();
        Ok(Magnetisation { grid, m1, m2, m3 })
    }

    pub fn from_fns(
        grid: Arc<Grid>,
        f1: impl Fn([f64; 2]) -> f64,
        f2: impl Fn([f64; 2]) -> f64,
        f3: impl Fn([f64; 2]) -> f64,
    ) -> Self {
        Magnetisation {
            m1: ScalarField::from_fn(grid.clone(), f1),
            m2: ScalarField::from_fn(grid.clone(), f2),
            m3: ScalarField::from_fn(grid.clone(), f3),
            grid,
        }
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        Magnetisation {
            m1: ScalarField::zeros(grid.clone()),
            m2: ScalarField::zeros(grid.clone()),
            m3: ScalarField::zeros(grid.clone()),
            grid,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn m1(&self) -> &ScalarField {
        &self.m1
    }

    pub fn m2(&self) -> &ScalarField {
        &self.m2
    }

    pub fn m3(&self) -> &ScalarField {
        &self.m3
    }

    /// L2(Q) norm of the vector field, sqrt(|M1|^2 + |M2|^2 + |M3|^2).
    pub fn l2_norm(&self) -> f64 {
        let n1 = crate::grid::norm(&self.m1);
        let n2 = crate::grid::norm(&self.m2);
        let n3 = crate::grid::norm(&self.m3);
        (n1 * n1 + n2 * n2 + n3 * n3).sqrt()
    }
}

/// Direct quadrature form of the forward model:
/// `B3(x,h) = -1/2 w sum_t [dx1 p_h (x-t) M1 + dx2 p_h (x-t) M2 + dh p_h (x-t) M3]`.
pub fn forward_eq1(
    mag: &Magnetisation,
    targets: &Arc<Grid>,
    params: &KernelParams,
) -> FieldSample {
    let w = mag.grid.cell_weight();
    let src = mag.grid.nodes();
    let (m1, m2, m3) = (mag.m1.values(), mag.m2.values(), mag.m3.values());
    let values: Vec<f64> = targets
        .nodes()
        .par_iter()
        .map(|&x| {
            let mut acc = 0.0;
            for (t, ((a, b), c)) in src.iter().zip(m1.iter().zip(m2).zip(m3)) {
                let d = [x[0] - t[0], x[1] - t[1]];
                if *a != 0.0 || *b != 0.0 {
                    let g = grad_poisson_kernel(d, params);
                    acc += g[0] * a + g[1] * b;
                }
                if *c != 0.0 {
                    acc += dh_poisson_kernel(d, params) * c;
                }
            }
            -0.5 * w * acc
        })
        .collect();
    ScalarField::new(targets.clone(), values).expect("target-sized output")
}

/// Planar divergence `D = d/dt1 M1 + d/dt2 M2` by second-order central
/// differences in the interior and one-sided second-order stencils at the
/// boundary of Q.
pub fn divergence_field(mag: &Magnetisation) -> Result<ScalarField> {
    let g = &mag.grid;
    let (n1, n2) = (g.n1(), g.n2());
    if n1 < 3 || n2 < 3 {
        return Err(Error::Config(format!(
            "divergence stencil needs at least 3 cells per axis, got {}x{}",
            n1, n2
        )));
    }
    let (dx1, dx2) = (g.dx1(), g.dx2());
    let m1 = mag.m1.values();
    let m2 = mag.m2.values();
    let idx = |i: usize, j: usize| i * n2 + j;
    let mut out = vec![0.0; n1 * n2];
    for i in 0..n1 {
        for j in 0..n2 {
            let d1 = if i == 0 {
                (-3.0 * m1[idx(0, j)] + 4.0 * m1[idx(1, j)] - m1[idx(2, j)]) / (2.0 * dx1)
            } else if i == n1 - 1 {
                (3.0 * m1[idx(n1 - 1, j)] - 4.0 * m1[idx(n1 - 2, j)] + m1[idx(n1 - 3, j)])
                    / (2.0 * dx1)
            } else {
                (m1[idx(i + 1, j)] - m1[idx(i - 1, j)]) / (2.0 * dx1)
            };
            let d2 = if j == 0 {
                (-3.0 * m2[idx(i, 0)] + 4.0 * m2[idx(i, 1)] - m2[idx(i, 2)]) / (2.0 * dx2)
            } else if j == n2 - 1 {
                (3.0 * m2[idx(i, n2 - 1)] - 4.0 * m2[idx(i, n2 - 2)] + m2[idx(i, n2 - 3)])
                    / (2.0 * dx2)
            } else {
                (m2[idx(i, j + 1)] - m2[idx(i, j - 1)]) / (2.0 * dx2)
            };
            out[idx(i, j)] = d1 + d2;
        }
    }
    ScalarField::new(g.clone(), out)
}

/// Integration-by-parts form of the forward model:
/// `B3 = K12 *_Q D + K3 *_Q M3` evaluated by quadrature at each target.
pub fn forward_div(
    d: &ScalarField,
    m3: &ScalarField,
    targets: &Arc<Grid>,
    params: &KernelParams,
) -> Result<FieldSample> {
    if !d.same_grid(m3) {
        return Err(Error::Contract(
            "divergence and M3 fields on different grids".into(),
        ));
    }
    let src_grid = d.grid();
    let w = src_grid.cell_weight();
    let src = src_grid.nodes();
    let (dv, m3v) = (d.values(), m3.values());
    let values: Vec<f64> = targets
        .nodes()
        .par_iter()
        .map(|&x| {
            let mut acc = 0.0;
            for (t, (a, c)) in src.iter().zip(dv.iter().zip(m3v)) {
                let diff = [x[0] - t[0], x[1] - t[1]];
                acc += k12(diff, params) * a + k3(diff, params) * c;
            }
            w * acc
        })
        .collect();
    ScalarField::new(targets.clone(), values)
}

/// Output of the FFT oracle run.
#[derive(Clone, Debug)]
pub struct OracleOutput {
    pub field: FieldSample,
    /// Padded transform size per axis.
    pub pad_dims: [usize; 2],
    /// Non-fatal issues (e.g. insufficient zero padding) to be recorded in
    /// the run manifest.
    pub warnings: Vec<String>,
}

fn fft2(data: &mut Array2<Complex64>, planner: &mut FftPlanner<f64>, inverse: bool) {
    let (n1, n2) = data.dim();
    let fft_cols = if inverse {
        planner.plan_fft_inverse(n2)
    } else {
        planner.plan_fft_forward(n2)
    };
    for mut row in data.outer_iter_mut() {
        let mut buf: Vec<Complex64> = row.iter().cloned().collect();
        fft_cols.process(&mut buf);
        for (dst, src) in row.iter_mut().zip(&buf) {
            *dst = *src;
        }
    }
    let fft_rows = if inverse {
        planner.plan_fft_inverse(n1)
    } else {
        planner.plan_fft_forward(n1)
    };
    for j in 0..n2 {
        let mut buf: Vec<Complex64> = data.column(j).iter().cloned().collect();
        fft_rows.process(&mut buf);
        for (i, v) in buf.into_iter().enumerate() {
            data[[i, j]] = v;
        }
    }
}

fn fft_freqs(n: usize, dx: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let s = if i <= n / 2 { i as i64 } else { i as i64 - n as i64 };
            s as f64 / (n as f64 * dx)
        })
        .collect()
}

/// Fourier-multiplier oracle for the forward model.
///
/// Builds `f_M = R1 M1 + R2 M2 + M3` with the Riesz multipliers
/// `-i k_j / |k|` (zero at k = 0), applies the field multiplier
/// `pi |k| exp(-2 pi h |k|)`, inverse-transforms, and samples on `eval_grid`.
/// The magnetisation is zero-padded to at least 4x its extent per axis;
/// eval-grid nodes must coincide with padded-grid nodes.
pub fn fft_oracle(
    mag: &Magnetisation,
    eval_grid: &Arc<Grid>,
    params: &KernelParams,
) -> Result<OracleOutput> {
    fft_oracle_with_padding(mag, eval_grid, params, 4)
}

/// Like [`fft_oracle`] but with an explicit padding factor; factors below 4
/// are allowed for experimentation and recorded as a manifest warning.
pub fn fft_oracle_with_padding(
    mag: &Magnetisation,
    eval_grid: &Arc<Grid>,
    params: &KernelParams,
    pad_factor: usize,
) -> Result<OracleOutput> {
    if pad_factor < 1 {
        return Err(Error::Config("padding factor must be at least 1".into()));
    }
    let g = &mag.grid;
    let (n1, n2) = (g.n1(), g.n2());
    let (dx1, dx2) = (g.dx1(), g.dx2());
    let mut warnings = Vec::new();

    // Pad symmetrically to pad_factor times the support extent per axis.
    let pad1 = n1 * pad_factor;
    let pad2 = n2 * pad_factor;
    let off1 = (pad1 - n1) / 2;
    let off2 = (pad2 - n2) / 2;
    if pad_factor < 4 {
        warnings.push(format!(
            "zero padding below 4x support extent: {}x{} for {}x{} source",
            pad1, pad2, n1, n2
        ));
    }

    let embed = |f: &ScalarField| -> Array2<Complex64> {
        let mut a = Array2::from_elem((pad1, pad2), Complex64::new(0.0, 0.0));
        for i in 0..n1 {
            for j in 0..n2 {
                a[[off1 + i, off2 + j]] = Complex64::new(f.values()[i * n2 + j], 0.0);
            }
        }
        a
    };

    let mut planner = FftPlanner::new();
    let mut m1 = embed(&mag.m1);
    let mut m2 = embed(&mag.m2);
    let mut m3 = embed(&mag.m3);
    fft2(&mut m1, &mut planner, false);
    fft2(&mut m2, &mut planner, false);
    fft2(&mut m3, &mut planner, false);

    let k1 = fft_freqs(pad1, dx1);
    let k2 = fft_freqs(pad2, dx2);
    let h = params.h();
    let mut bhat = Array2::from_elem((pad1, pad2), Complex64::new(0.0, 0.0));
    for i in 0..pad1 {
        for j in 0..pad2 {
            let kn = (k1[i] * k1[i] + k2[j] * k2[j]).sqrt();
            let fm = if kn == 0.0 {
                m3[[i, j]]
            } else {
                let r1 = Complex64::new(0.0, -k1[i] / kn);
                let r2 = Complex64::new(0.0, -k2[j] / kn);
                r1 * m1[[i, j]] + r2 * m2[[i, j]] + m3[[i, j]]
            };
            let mult = std::f64::consts::PI * kn * (-2.0 * std::f64::consts::PI * h * kn).exp();
            bhat[[i, j]] = fm * mult;
        }
    }
    fft2(&mut bhat, &mut planner, true);
    let scale = 1.0 / (pad1 * pad2) as f64;

    // Padded-grid origin: source cell (0,0) sits at padded index (off1, off2).
    let x1_origin = g.node(0)[0] - off1 as f64 * dx1;
    let x2_origin = g.node(0)[1] - off2 as f64 * dx2;
    let tol1 = 1e-9 * dx1;
    let tol2 = 1e-9 * dx2;
    let mut values = Vec::with_capacity(eval_grid.len());
    for &p in eval_grid.nodes() {
        let fi = (p[0] - x1_origin) / dx1;
        let fj = (p[1] - x2_origin) / dx2;
        let i = fi.round();
        let j = fj.round();
        if (fi - i).abs() * dx1 > tol1 || (fj - j).abs() * dx2 > tol2 {
            return Err(Error::Contract(
                "fft_oracle eval grid nodes do not align with the padded transform grid".into(),
            ));
        }
        if i < 0.0 || j < 0.0 || i as usize >= pad1 || j as usize >= pad2 {
            return Err(Error::Contract(
                "fft_oracle eval grid extends beyond the padded transform grid".into(),
            ));
        }
        values.push(bhat[[i as usize, j as usize]].re * scale);
    }
    Ok(OracleOutput {
        field: ScalarField::new(eval_grid.clone(), values)?,
        pad_dims: [pad1, pad2],
        warnings,
    })
}

/// Adds i.i.d. zero-mean Gaussian noise with standard deviation
/// `sigma_rel * max|values|`; deterministic for a fixed seed.
pub fn add_noise(field: &FieldSample, sigma_rel: f64, seed: u64) -> Result<FieldSample> {
    if !(sigma_rel.is_finite() && sigma_rel >= 0.0) {
        return Err(Error::Config(format!(
            "noise level must be non-negative, got {}",
            sigma_rel
        )));
    }
    let sigma = sigma_rel * field.max_abs();
    if sigma == 0.0 {
        return Ok(field.clone());
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    let values = field
        .values()
        .iter()
        .map(|v| v + normal.sample(&mut rng))
        .collect();
    ScalarField::new(field.grid().clone(), values)
}

/// Net moment: component-wise quadrature sums `w * sum(values)`.
pub fn net_moment(mag: &Magnetisation) -> [f64; 3] {
    let w = mag.grid.cell_weight();
    let sum = |f: &ScalarField| w * f.values().iter().sum::<f64>();
    [sum(&mag.m1), sum(&mag.m2), sum(&mag.m3)]
}

/// Convenience for tests and scenarios: a uniform target grid matching the
/// magnetisation grid geometry.
pub fn grid_on(rect: Rect, n1: usize, n2: usize) -> Result<Arc<Grid>> {
    build_grid(rect, n1, n2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{inner_product, norm};
    use approx::assert_relative_eq;

    fn q() -> Rect {
        Rect::centered_square(1.0).unwrap()
    }

    fn params(h: f64) -> KernelParams {
        KernelParams::new(h).unwrap()
    }

    /// Narrow Gaussian bump, ~1e-14 at the boundary of Q.
    fn bump(p: [f64; 2]) -> f64 {
        let r2 = p[0] * p[0] + p[1] * p[1];
        (-r2 / (2.0 * 0.15 * 0.15)).exp()
    }

    fn bump_grad(p: [f64; 2]) -> [f64; 2] {
        let s2 = 0.15 * 0.15;
        let v = bump(p);
        [-p[0] / s2 * v, -p[1] / s2 * v]
    }

    /// Divergence-free tangential magnetisation M = (d2 psi, -d1 psi, 0).
    fn silent_source(grid: &Arc<Grid>) -> Magnetisation {
        Magnetisation::from_fns(
            grid.clone(),
            |p| bump_grad(p)[1],
            |p| -bump_grad(p)[0],
            |_| 0.0,
        )
    }

    #[test]
    fn zero_magnetisation_zero_field() {
        let g = build_grid(q(), 8, 8).unwrap();
        let mag = Magnetisation::zeros(g.clone());
        let f = forward_eq1(&mag, &g, &params(0.1));
        assert!(f.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_cell_unit_moment() {
        // 1x1 grid centered at the origin: the one-term quadrature sum gives
        // -1/2 dh p_h(0) = 1/(2 pi) for h = 1 and unit net moment M3 = 1/w.
        let tiny = build_grid(Rect::centered_square(0.05).unwrap(), 1, 1).unwrap();
        let w = tiny.cell_weight();
        let mag = Magnetisation::from_fns(tiny.clone(), |_| 0.0, |_| 0.0, move |_| 1.0 / w);
        let f = forward_eq1(&mag, &tiny, &params(1.0));
        assert_relative_eq!(f.values()[0], 1.0 / (2.0 * std::f64::consts::PI), max_relative = 1e-12);
    }

    #[test]
    fn linearity() {
        let g = build_grid(q(), 12, 12).unwrap();
        let t = build_grid(q(), 5, 5).unwrap();
        let p = params(0.2);
        let ma = Magnetisation::from_fns(g.clone(), |p| p[0], |p| p[1], |p| p[0] * p[1]);
        let mb = Magnetisation::from_fns(g.clone(), |p| p[1], |_| 1.0, bump);
        let (alpha, beta) = (2.5, -1.25);
        let combo = Magnetisation::from_fns(
            g.clone(),
            |p| alpha * p[0] + beta * p[1],
            |p| alpha * p[1] + beta,
            |p| alpha * p[0] * p[1] + beta * bump(p),
        );
        let fa = forward_eq1(&ma, &t, &p);
        let fb = forward_eq1(&mb, &t, &p);
        let fc = forward_eq1(&combo, &t, &p);
        for k in 0..t.len() {
            let expect = alpha * fa.values()[k] + beta * fb.values()[k];
            let scale = expect.abs().max(1e-30);
            assert!((fc.values()[k] - expect).abs() / scale <= 1e-12);
        }
    }

    #[test]
    fn translation_equivariance() {
        let shift = [0.37, -1.4];
        let g0 = build_grid(q(), 10, 10).unwrap();
        let g1 = build_grid(
            Rect::new(
                -1.0 + shift[0],
                1.0 + shift[0],
                -1.0 + shift[1],
                1.0 + shift[1],
            )
            .unwrap(),
            10,
            10,
        )
        .unwrap();
        let t0 = build_grid(Rect::new(-2.0, 2.0, -2.0, 2.0).unwrap(), 6, 6).unwrap();
        let t1 = build_grid(
            Rect::new(
                -2.0 + shift[0],
                2.0 + shift[0],
                -2.0 + shift[1],
                2.0 + shift[1],
            )
            .unwrap(),
            6,
            6,
        )
        .unwrap();
        let m0 = Magnetisation::from_fns(g0, |p| bump(p), |p| p[0] * bump(p), |p| 1.0 + p[1]);
        let m1 = Magnetisation::from_fns(
            g1,
            |p| bump([p[0] - shift[0], p[1] - shift[1]]),
            |p| (p[0] - shift[0]) * bump([p[0] - shift[0], p[1] - shift[1]]),
            |p| 1.0 + (p[1] - shift[1]),
        );
        let p = params(0.3);
        let f0 = forward_eq1(&m0, &t0, &p);
        let f1 = forward_eq1(&m1, &t1, &p);
        for k in 0..t0.len() {
            let scale = f0.values()[k].abs().max(1e-30);
            assert!((f0.values()[k] - f1.values()[k]).abs() / scale <= 1e-12);
        }
    }

    #[test]
    fn divergence_examples() {
        let g = build_grid(q(), 16, 16).unwrap();
        // constant components -> zero divergence everywhere (exact, including
        // one-sided boundary stencils)
        let m = Magnetisation::from_fns(g.clone(), |_| 3.0, |_| -2.0, |_| 0.0);
        let d = divergence_field(&m).unwrap();
        assert!(d.values().iter().all(|&v| v.abs() < 1e-12));

        // M1 = x1 -> divergence 1 (exact on linears)
        let m = Magnetisation::from_fns(g.clone(), |p| p[0], |_| 0.0, |_| 0.0);
        let d = divergence_field(&m).unwrap();
        for &v in d.values() {
            assert_relative_eq!(v, 1.0, max_relative = 1e-10);
        }

        // curl-type field -> divergence ~ 0 within O(dx^2)
        let m = silent_source(&build_grid(q(), 64, 64).unwrap());
        let d = divergence_field(&m).unwrap();
        let dmax = d.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mmax = m.m1().max_abs().max(m.m2().max_abs());
        assert!(dmax <= 5e-2 * mmax, "divergence residual {} vs {}", dmax, mmax);
    }

    #[test]
    fn divergence_needs_stencil() {
        let g = build_grid(q(), 2, 8).unwrap();
        let m = Magnetisation::zeros(g);
        assert!(matches!(divergence_field(&m), Err(Error::Config(_))));
    }

    #[test]
    fn forward_div_trivial_paths() {
        let g = build_grid(q(), 8, 8).unwrap();
        let t = build_grid(q(), 4, 4).unwrap();
        let p = params(0.2);
        let zero = ScalarField::zeros(g.clone());
        let out = forward_div(&zero, &zero, &t, &p).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));

        // d = 0 reduces to the K3 path alone
        let m3 = ScalarField::from_fn(g.clone(), bump);
        let out = forward_div(&zero, &m3, &t, &p).unwrap();
        let k3m = crate::kernels::assemble(crate::kernels::KernelKind::K3, &t, &g, &p).unwrap();
        let direct = k3m.apply(&m3).unwrap();
        for k in 0..t.len() {
            assert_relative_eq!(out.values()[k], direct.values()[k], max_relative = 1e-12);
        }
    }

    fn smooth_mag(grid: &Arc<Grid>) -> Magnetisation {
        Magnetisation::from_fns(
            grid.clone(),
            |p| bump([p[0] - 0.2, p[1]]),
            |p| 0.5 * bump([p[0], p[1] + 0.25]),
            |p| bump([p[0] + 0.2, p[1] - 0.1]),
        )
    }

    fn rel_l2(a: &ScalarField, b: &ScalarField) -> f64 {
        let diff = ScalarField::new(
            a.grid().clone(),
            a.values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| x - y)
                .collect(),
        )
        .unwrap();
        norm(&diff) / norm(b)
    }

    #[test]
    fn eq1_matches_div_and_refines() {
        let p = params(0.2);
        let t = build_grid(q(), 10, 10).unwrap();
        let err_at = |n: usize| {
            let g = build_grid(q(), n, n).unwrap();
            let mag = smooth_mag(&g);
            let f1 = forward_eq1(&mag, &t, &p);
            let d = divergence_field(&mag).unwrap();
            let f8 = forward_div(&d, mag.m3(), &t, &p).unwrap();
            rel_l2(&f8, &f1)
        };
        let e32 = err_at(32);
        let e64 = err_at(64);
        assert!(e64 <= 0.02, "rel diff at n=64: {}", e64);
        let order = (e32 / e64).log2();
        assert!(order >= 1.5, "observed order {} (e32={}, e64={})", order, e32, e64);
    }

    #[test]
    fn fft_oracle_zero() {
        let g = build_grid(q(), 8, 8).unwrap();
        let out = fft_oracle(&Magnetisation::zeros(g.clone()), &g, &params(0.1)).unwrap();
        assert!(out.field.values().iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn fft_oracle_matches_eq1_on_gaussian_m3() {
        let g = build_grid(q(), 64, 64).unwrap();
        let mag = Magnetisation::from_fns(g.clone(), |_| 0.0, |_| 0.0, bump);
        let p = params(0.2);
        let direct = forward_eq1(&mag, &g, &p);
        let oracle = fft_oracle(&mag, &g, &p).unwrap();
        assert_eq!(oracle.pad_dims, [256, 256]);
        let e = rel_l2(&oracle.field, &direct);
        assert!(e <= 0.01, "oracle vs direct rel L2: {}", e);
    }

    #[test]
    fn fft_oracle_silent_source() {
        let g = build_grid(q(), 64, 64).unwrap();
        let mag = silent_source(&g);
        let p = params(0.2);
        let oracle = fft_oracle(&mag, &g, &p).unwrap();
        // compare against the field of an equal-energy vertical source
        let m3 = Magnetisation::from_fns(g.clone(), |_| 0.0, |_| 0.0, |p| bump_grad(p)[1]);
        let reference = fft_oracle(&m3, &g, &p).unwrap();
        let silent_level = norm(&oracle.field) / mag.l2_norm();
        let ref_level = norm(&reference.field) / m3.l2_norm();
        assert!(
            silent_level <= 0.01 * ref_level,
            "silent {} vs reference {}",
            silent_level,
            ref_level
        );
    }

    #[test]
    fn fft_oracle_misaligned_eval_grid() {
        let g = build_grid(q(), 16, 16).unwrap();
        let bad = build_grid(q(), 24, 24).unwrap();
        let mag = Magnetisation::zeros(g);
        assert!(matches!(
            fft_oracle(&mag, &bad, &params(0.1)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn noise_contract() {
        let g = build_grid(q(), 10, 10).unwrap();
        let f = ScalarField::from_fn(g.clone(), |p| p[0] + 2.0 * p[1]);
        let same = add_noise(&f, 0.0, 1).unwrap();
        assert_eq!(f.values(), same.values());
        let a = add_noise(&f, 0.05, 42).unwrap();
        let b = add_noise(&f, 0.05, 42).unwrap();
        assert_eq!(a.values(), b.values());
        let c = add_noise(&f, 0.05, 43).unwrap();
        assert_ne!(a.values(), c.values());
        assert!(add_noise(&f, -0.1, 1).is_err());
    }

    #[test]
    fn noise_empirical_std() {
        let g = build_grid(q(), 100, 100).unwrap();
        let f = ScalarField::constant(g.clone(), 2.0);
        let noisy = add_noise(&f, 0.05, 7).unwrap();
        let n = noisy.values().len() as f64;
        let mean: f64 = noisy.values().iter().sum::<f64>() / n;
        let var: f64 = noisy
            .values()
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        let sigma = var.sqrt();
        let expected = 0.05 * 2.0;
        assert!(
            (sigma - expected).abs() / expected <= 0.05,
            "empirical sigma {}",
            sigma
        );
    }

    #[test]
    fn net_moment_examples() {
        let g = build_grid(q(), 20, 20).unwrap();
        assert_eq!(net_moment(&Magnetisation::zeros(g.clone())), [0.0, 0.0, 0.0]);
        let m = Magnetisation::from_fns(g.clone(), |_| 0.0, |_| 0.0, |_| 1.0);
        let nm = net_moment(&m);
        assert_relative_eq!(nm[2], 4.0, max_relative = 1e-12);
        assert_eq!(nm[0], 0.0);
        // divergence-free tangential: in-plane moments vanish up to quadrature error
        let m = silent_source(&build_grid(q(), 64, 64).unwrap());
        let nm = net_moment(&m);
        assert!(nm[0].abs() < 1e-6 && nm[1].abs() < 1e-6, "{:?}", nm);
    }

    #[test]
    fn silent_source_field_is_small() {
        let g = build_grid(q(), 64, 64).unwrap();
        let t = build_grid(q(), 16, 16).unwrap();
        let p = params(0.2);
        let silent = silent_source(&g);
        let f_silent = forward_eq1(&silent, &t, &p);
        let m3 = Magnetisation::from_fns(g.clone(), |_| 0.0, |_| 0.0, |p| bump_grad(p)[1]);
        let f_ref = forward_eq1(&m3, &t, &p);
        let lhs = norm(&f_silent) / silent.l2_norm();
        let rhs = norm(&f_ref) / m3.l2_norm();
        assert!(lhs <= 0.02 * rhs, "silent {} vs reference {}", lhs, rhs);
    }

    #[test]
    fn far_field_decay_along_ray() {
        let g = build_grid(q(), 24, 24).unwrap();
        let mag = Magnetisation::from_fns(g.clone(), |_| 0.0, |_| 0.0, bump);
        let p = params(0.1);
        // |B3| monotone decreasing along a ray beyond 5 diam(Q)
        let mut prev = f64::INFINITY;
        for k in 0..8 {
            let r = 15.0 + 3.0 * k as f64;
            let target = build_grid(
                Rect::new(r - 1e-6, r + 1e-6, -1e-6, 1e-6).unwrap(),
                1,
                1,
            )
            .unwrap();
            let v = forward_eq1(&mag, &target, &p).values()[0].abs();
            assert!(v < prev, "at r={} value {} >= {}", r, v, prev);
            prev = v;
        }
    }

    #[test]
    fn projection_inner_product_sanity() {
        // net moment of the silent source in-plane parts is tiny but the
        // fields themselves are not identically zero.
        let g = build_grid(q(), 32, 32).unwrap();
        let m = silent_source(&g);
        assert!(inner_product(m.m1(), m.m1()).unwrap() > 0.0);
    }
}
