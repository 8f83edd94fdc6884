//! Truncated eigendecomposition of the discretized K12 operator on Q.
//!
//! The dense matrix `w * K12` (kernel values at node differences scaled by
//! the uniform cell weight) is symmetric and negative definite; its top-J
//! eigenpairs by modulus form the basis used by the auxiliary operator.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{inner_product, norm, Grid, ScalarField};
use crate::kernels::{assemble, KernelKind, KernelParams};
use crate::linalg;

/// Top-J eigenpairs of the discretized K12 operator, quadrature-normalized.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    grid: Arc<Grid>,
    mu: Vec<f64>,
    phi: Vec<ScalarField>,
}

impl SpectralBasis {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn j(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn phi(&self) -> &[ScalarField] {
        &self.phi
    }

    /// `spectrum.csv` style dump: `index,mu` per retained eigenvalue.
    pub fn write_spectrum_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,mu")?;
        for (i, mu) in self.mu.iter().enumerate() {
            writeln!(w, "{},{:.16e}", i + 1, mu)?;
        }
        Ok(())
    }
}

/// Orders eigenpair indices by descending modulus; ties by descending
/// algebraic value, then by lower original index. Used for both the K12 and
/// the block spectra.
pub(crate) fn modulus_order(vals: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| {
        vals[b]
            .abs()
            .partial_cmp(&vals[a].abs())
            .unwrap()
            .then(vals[b].partial_cmp(&vals[a]).unwrap())
            .then(a.cmp(&b))
    });
    idx
}

/// Fixes the sign of a value-vector so its largest-|.| entry is positive;
/// ties resolved by the first such entry.
pub(crate) fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    let mut best_abs = 0.0f64;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Solves the symmetric eigenproblem for `w * K12` on `grid` and returns the
/// J largest-in-modulus eigenpairs with unit quadrature norm.
pub fn eig_k12(grid: &Arc<Grid>, params: &KernelParams, j: usize) -> Result<SpectralBasis> {
    let m = grid.len();
    if j == 0 || j > m {
        return Err(Error::Config(format!(
            "J must satisfy 1 <= J <= {} (node count), got {}",
            m, j
        )));
    }
    let w = grid.cell_weight();
    let kmat = assemble(KernelKind::K12, grid, grid, params)?;
    let a = kmat.entries() * w;
    let (vals, vecs) = linalg::eigh(&a)?;

    let order = modulus_order(&vals);
    let mut mu = Vec::with_capacity(j);
    let mut phi = Vec::with_capacity(j);
    let inv_sqrt_w = 1.0 / w.sqrt();
    for &k in order.iter().take(j) {
        if vals[k] == 0.0 {
            return Err(Error::Eigen(format!(
                "eigenvalue {} of the K12 operator is exactly zero; reduce J below {}",
                k,
                mu.len()
            )));
        }
        let row = vecs.row(k);
        let e2: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v: Vec<f64> = row.iter().map(|x| x * inv_sqrt_w / e2).collect();
        fix_sign(&mut v);
        mu.push(vals[k]);
        phi.push(ScalarField::new(grid.clone(), v)?);
    }

    let basis = SpectralBasis {
        grid: grid.clone(),
        mu,
        phi,
    };
    // Post-solve residual gate: ||(w K12) phi - mu phi|| <= 1e-8 |mu|.
    for (mu_j, phi_j) in basis.mu.iter().zip(&basis.phi) {
        let img = kmat.apply(phi_j)?;
        let res = ScalarField::new(
            grid.clone(),
            img.values()
                .iter()
                .zip(phi_j.values())
                .map(|(a, b)| a - mu_j * b)
                .collect(),
        )?;
        let r = norm(&res);
        if r > 1e-8 * mu_j.abs() {
            return Err(Error::Eigen(format!(
                "eigenpair residual {} exceeds 1e-8 * |mu| = {}",
                r,
                1e-8 * mu_j.abs()
            )));
        }
    }
    Ok(basis)
}

/// Quadrature projection coefficients `c_j = <f, phi_j>`.
pub fn project(basis: &SpectralBasis, f: &ScalarField) -> Result<Vec<f64>> {
    basis
        .phi
        .iter()
        .map(|phi_j| inner_product(f, phi_j))
        .collect()
}
