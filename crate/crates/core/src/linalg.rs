//! Thin wrappers over the dense solvers.
//!
//! Factorizations run sequentially: parallelism lives at the level of
//! restarts, folds and replications. After each call the upper halves of
//! the vector registers are cleared, because the SIMD kernels leave them
//! dirty and the scalar code that follows can otherwise run many times
//! slower on CPUs with an AVX/SSE transition penalty.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd::{self_adjoint_evd, self_adjoint_evd_scratch, ComputeEigenvectors};
use faer::linalg::solvers::Solve;
use faer::diag::Diag;
use faer::{Col, Mat, Par, Side};

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn zero_upper() {
    std::arch::x86_64::_mm256_zeroupper();
}

fn clear_vector_state() {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the instruction is available, checked just above.
        unsafe { zero_upper() }
    }
}

/// Eigenvalues (ascending, as returned by the solver) and eigenvectors of a
/// symmetric matrix, reading its lower triangle.
pub(crate) fn symmetric_eigen(a: &Mat<f64>) -> Option<(Vec<f64>, Mat<f64>)> {
    let n = a.nrows();
    let mut u = Mat::<f64>::zeros(n, n);
    let mut s = Diag::<f64>::zeros(n);
    let scratch = self_adjoint_evd_scratch::<f64>(n, ComputeEigenvectors::Yes, Par::Seq, Default::default());
    let ok = self_adjoint_evd(
        a.as_ref(),
        s.as_mut(),
        Some(u.as_mut()),
        Par::Seq,
        MemStack::new(&mut MemBuffer::new(scratch)),
        Default::default(),
    )
    .is_ok();
    clear_vector_state();
    ok.then(|| ((0..n).map(|k| s.column_vector()[k]).collect(), u))
}

/// Solves `a x = b` for symmetric positive definite `a`; `None` if the
/// factorization breaks down.
pub(crate) fn cholesky_solve(a: &Mat<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.nrows();
    let out = a.llt(Side::Lower).ok().map(|llt| {
        let sol = llt.solve(&Col::from_fn(n, |i| b[i]));
        (0..n).map(|i| sol[i]).collect::<Vec<f64>>()
    });
    clear_vector_state();
    out
}

/// `a * b'`.
pub(crate) fn mul_transpose(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    let out = a * b.transpose();
    clear_vector_state();
    out
}
