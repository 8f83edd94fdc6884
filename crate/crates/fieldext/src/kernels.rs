//! The Poisson kernel of the upper half-space, its derivatives, the two
//! operator kernels K12 and K3, and dense matrix assembly for truncated
//! convolutions over Q.
//!
//! With the source plane at height 0 and the measurement plane at `h > 0`
//! all kernels are smooth on Q x Q, so pointwise evaluation at node
//! differences plus midpoint quadrature is accurate and keeps the operator
//! matrices symmetric.

use std::io::Write;
use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};

/// Height of the measurement plane above the source plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    h: f64,
}

impl KernelParams {
    pub fn new(h: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Config(format!("height h must be positive, got {}", h)));
        }
        Ok(KernelParams { h })
    }

    pub fn h(&self) -> f64 {
        self.h
    }
}

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// `p_h(x) = h / (2 pi (|x|^2 + h^2)^{3/2})`.
pub fn poisson_kernel(x: [f64; 2], params: &KernelParams) -> f64 {
    let h = params.h;
    let q = x[0] * x[0] + x[1] * x[1] + h * h;
    h / (TWO_PI * q * q.sqrt())
}

/// `d/dh p_h(x) = (|x|^2 - 2 h^2) / (2 pi (|x|^2 + h^2)^{5/2})`.
///
/// The closed form is gated by finite-difference oracles in the test suite.
pub fn dh_poisson_kernel(x: [f64; 2], params: &KernelParams) -> f64 {
    let h = params.h;
    let r2 = x[0] * x[0] + x[1] * x[1];
    let q = r2 + h * h;
    (r2 - 2.0 * h * h) / (TWO_PI * q * q * q.sqrt())
}

/// In-plane gradient `(d/dx1, d/dx2) p_h(x) = -3 h x / (2 pi (|x|^2 + h^2)^{5/2})`.
pub fn grad_poisson_kernel(x: [f64; 2], params: &KernelParams) -> [f64; 2] {
    let h = params.h;
    let q = x[0] * x[0] + x[1] * x[1] + h * h;
    let c = -3.0 * h / (TWO_PI * q * q * q.sqrt());
    [c * x[0], c * x[1]]
}

/// `K12 = -p_h / 2`, strictly negative everywhere.
pub fn k12(x: [f64; 2], params: &KernelParams) -> f64 {
    -0.5 * poisson_kernel(x, params)
}

/// `K3 = -(d/dh p_h) / 2`.
pub fn k3(x: [f64; 2], params: &KernelParams) -> f64 {
    -0.5 * dh_poisson_kernel(x, params)
}

/// Which kernel a [`KernelMatrix`] holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    K12,
    K3,
    /// d/dx1 of the Poisson kernel.
    Dx1,
    /// d/dx2 of the Poisson kernel.
    Dx2,
}

impl KernelKind {
    pub fn eval(self, x: [f64; 2], params: &KernelParams) -> f64 {
        match self {
            KernelKind::K12 => k12(x, params),
            KernelKind::K3 => k3(x, params),
            KernelKind::Dx1 => grad_poisson_kernel(x, params)[0],
            KernelKind::Dx2 => grad_poisson_kernel(x, params)[1],
        }
    }
}

/// Dense kernel matrix: `entries[a][b] = kernel(target_a - source_b)`.
///
/// Quadrature weights are not folded in; applying the operator to a field is
/// `entries . (w_src * values)`.
#[derive(Clone, Debug)]
pub struct KernelMatrix {
    kind: KernelKind,
    targets: Arc<Grid>,
    sources: Arc<Grid>,
    entries: Array2<f64>,
}

/// Refuse dense assembly beyond this many entries unless a cap is given.
pub const DEFAULT_ENTRY_CAP: usize = 200_000_000;

/// Assembles the dense kernel matrix with the default entry-count cap.
pub fn assemble(
    kind: KernelKind,
    targets: &Arc<Grid>,
    sources: &Arc<Grid>,
    params: &KernelParams,
) -> Result<KernelMatrix> {
    assemble_capped(kind, targets, sources, params, DEFAULT_ENTRY_CAP)
}

/// Assembles with an explicit entry-count cap.
pub fn assemble_capped(
    kind: KernelKind,
    targets: &Arc<Grid>,
    sources: &Arc<Grid>,
    params: &KernelParams,
    cap: usize,
) -> Result<KernelMatrix> {
    let (nt, ns) = (targets.len(), sources.len());
    let count = nt.checked_mul(ns).ok_or_else(|| {
        Error::Config("kernel matrix entry count overflows usize".to_string())
    })?;
    if count > cap {
        return Err(Error::Config(format!(
            "kernel matrix would hold {} entries ({}x{}), above the cap of {}",
            count, nt, ns, cap
        )));
    }
    let mut entries = Array2::zeros((nt, ns));
    let src_nodes = sources.nodes();
    entries
        .outer_iter_mut()
        .into_par_iter()
        .enumerate()
        .for_each(|(a, mut row)| {
            let t = targets.node(a);
            for (b, s) in src_nodes.iter().enumerate() {
                row[b] = kind.eval([t[0] - s[0], t[1] - s[1]], params);
            }
        });
    Ok(KernelMatrix {
        kind,
        targets: targets.clone(),
        sources: sources.clone(),
        entries,
    })
}

impl KernelMatrix {
    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn targets(&self) -> &Arc<Grid> {
        &self.targets
    }

    pub fn sources(&self) -> &Arc<Grid> {
        &self.sources
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    /// Quadrature application of the truncated convolution:
    /// `(K *_Q f)(target_a) = w_src * sum_b entries[a][b] f_b`.
    pub fn apply(&self, f: &ScalarField) -> Result<ScalarField> {
        if *f.grid().as_ref() != *self.sources {
            return Err(Error::Contract(
                "kernel matrix applied to a field on a different grid".into(),
            ));
        }
        let w = self.sources.cell_weight();
        let out: Vec<f64> = self
            .entries
            .outer_iter()
            .map(|row| w * row.iter().zip(f.values()).map(|(k, v)| k * v).sum::<f64>())
            .collect();
        ScalarField::new(self.targets.clone(), out)
    }

    /// Debug/cache dump: 16-byte header (two little-endian u64 dims) followed
    /// by row-major little-endian f64 entries.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let (nt, ns) = self.entries.dim();
        w.write_all(&(nt as u64).to_le_bytes())?;
        w.write_all(&(ns as u64).to_le_bytes())?;
        for v in self.entries.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}
