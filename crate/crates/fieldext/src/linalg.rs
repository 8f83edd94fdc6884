//! Thin wrappers over LAPACK dense eigensolvers.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Full symmetric eigendecomposition (divide and conquer).
///
/// Returns eigenvalues in ascending order and the matching eigenvectors;
/// eigenvector `k` is `vecs.row(k)`.
pub fn eigh(a: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let (m, mc) = a.dim();
    if m != mc {
        return Err(Error::Contract(format!("eigh on non-square {}x{} matrix", m, mc)));
    }
    let n = i32::try_from(m).map_err(|_| Error::Config("matrix too large for LAPACK".into()))?;
    // Row-major storage passed as column-major is the transpose; harmless
    // for a symmetric input. Output columns land in contiguous chunks of
    // length m, i.e. rows of the row-major view.
    let mut data = a.clone().into_raw_vec();
    let mut w = vec![0.0f64; m];
    let mut info = 0i32;
    let (mut work_q, mut iwork_q) = (vec![0.0f64; 1], vec![0i32; 1]);
    unsafe {
        lapack::dsyevd(
            b'V', b'L', n, &mut data, n, &mut w, &mut work_q, -1, &mut iwork_q, -1, &mut info,
        )
    };
    if info != 0 {
        return Err(Error::Eigen(format!("dsyevd workspace query failed: info={}", info)));
    }
    let lwork = work_q[0] as i32;
    let liwork = iwork_q[0];
    let mut work = vec![0.0f64; lwork as usize];
    let mut iwork = vec![0i32; liwork as usize];
    unsafe {
        lapack::dsyevd(
            b'V', b'L', n, &mut data, n, &mut w, &mut work, lwork, &mut iwork, liwork, &mut info,
        )
    };
    if info != 0 {
        return Err(Error::Eigen(format!("dsyevd failed to converge: info={}", info)));
    }
    let vecs = Array2::from_shape_vec((m, m), data)
        .map_err(|e| Error::Eigen(format!("eigenvector reshape: {}", e)))?;
    Ok((w, vecs))
}

/// General real eigendecomposition (right eigenvectors).
///
/// Returns `(re, im, vecs)` where eigenvector `k` is `vecs.row(k)` when
/// `im[k] == 0`; complex conjugate pairs store real and imaginary parts in
/// consecutive rows, LAPACK style.
pub fn eig_general(a: &Array2<f64>) -> Result<(Vec<f64>, Vec<f64>, Array2<f64>)> {
    let (m, mc) = a.dim();
    if m != mc {
        return Err(Error::Contract(format!("eig on non-square {}x{} matrix", m, mc)));
    }
    let n = i32::try_from(m).map_err(|_| Error::Config("matrix too large for LAPACK".into()))?;
    // dgeev needs genuine column-major input.
    let mut data = Vec::with_capacity(m * m);
    for j in 0..m {
        for i in 0..m {
            data.push(a[[i, j]]);
        }
    }
    let mut wr = vec![0.0f64; m];
    let mut wi = vec![0.0f64; m];
    let mut vl = vec![0.0f64; 1];
    let mut vr = vec![0.0f64; m * m];
    let mut info = 0i32;
    let mut work_q = vec![0.0f64; 1];
    unsafe {
        lapack::dgeev(
            b'N', b'V', n, &mut data, n, &mut wr, &mut wi, &mut vl, 1, &mut vr, n, &mut work_q,
            -1, &mut info,
        )
    };
    if info != 0 {
        return Err(Error::Eigen(format!("dgeev workspace query failed: info={}", info)));
    }
    let lwork = work_q[0] as i32;
    let mut work = vec![0.0f64; lwork as usize];
    unsafe {
        lapack::dgeev(
            b'N', b'V', n, &mut data, n, &mut wr, &mut wi, &mut vl, 1, &mut vr, n, &mut work,
            lwork, &mut info,
        )
    };
    if info != 0 {
        return Err(Error::Eigen(format!("dgeev failed to converge: info={}", info)));
    }
    // vr is column-major; its columns (the eigenvectors) are contiguous, so
    // the row-major (m, m) view has eigenvector k at row k.
    let vecs = Array2::from_shape_vec((m, m), vr)
        .map_err(|e| Error::Eigen(format!("eigenvector reshape: {}", e)))?;
    Ok((wr, wi, vecs))
}
