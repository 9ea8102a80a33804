/// Whether an operand is read as stored or transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transpose {
    No,
    Yes,
}

/// `c = op(a) · op(b) + beta · c` for row-major storage.
///
/// `op(a)` is `m × k`, `op(b)` is `k × n`, `c` is `m × n`. Transposition is
/// expressed through strides, so no operand is copied.
#[allow(clippy::too_many_arguments)]
pub fn matmul_into(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: Transpose,
    b: &[f64],
    tb: Transpose,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = match ta {
        Transpose::No => (k as isize, 1),
        Transpose::Yes => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Transpose::No => (n as isize, 1),
        Transpose::Yes => (1, k as isize),
    };
    // SAFETY: the slices are bounds-checked above against the extents and
    // strides passed to the kernel, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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
