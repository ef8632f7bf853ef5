//! Thin wrapper over `matrixmultiply::dgemm` for row-major operands.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Layout {
    /// Operand stored as written (row-major).
    Normal,
    /// Operand stored transposed; the product reads it as its transpose.
    Transposed,
}

/// `c = alpha * op(a) * op(b) + beta * c` where `op(a)` is `m x k`,
/// `op(b)` is `k x n` and `c` is row-major `m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_layout: Layout,
    b: &[f64],
    b_layout: Layout,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = match a_layout {
        Layout::Normal => (k as isize, 1),
        Layout::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match b_layout {
        Layout::Normal => (n as isize, 1),
        Layout::Transposed => (1, k as isize),
    };
    if m == 1 || n == 1 || m * k * n <= SMALL {
        small_gemm(m, k, n, alpha, a, (rsa as usize, csa as usize), b, (rsb as usize, csb as usize), beta, c);
        return;
    }
    // SAFETY: the slices cover exactly the extents described by the strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Below this many multiply-adds, packing costs more than it saves.
const SMALL: usize = 1 << 15;

#[allow(clippy::too_many_arguments)]
fn small_gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    let mut arow = vec![0.0; k];
    for i in 0..m {
        for (p, v) in arow.iter_mut().enumerate() {
            *v = alpha * a[i * rsa + p * csa];
        }
        let row = &mut c[i * n..(i + 1) * n];
        if beta == 0.0 {
            row.fill(0.0);
        } else if beta != 1.0 {
            row.iter_mut().for_each(|v| *v *= beta);
        }
        if csb == 1 {
            for (p, &av) in arow.iter().enumerate() {
                let brow = &b[p * rsb..p * rsb + n];
                for (cv, bv) in row.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        } else {
            // b is stored transposed: column j is contiguous
            for (j, cv) in row.iter_mut().enumerate() {
                *cv += dot(&arow, &b[j * csb..j * csb + k]);
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
