//! Safe wrapper over `matrixmultiply::sgemm`.

/// Row/column strides of a matrix operand.
#[derive(Clone, Copy)]
pub(crate) struct Strides(pub isize, pub isize);

fn max_index(rows: usize, cols: usize, s: Strides) -> usize {
    (rows - 1) * s.0 as usize + (cols - 1) * s.1 as usize
}

/// `c = a · b + beta · c` with `a: m×k`, `b: k×n`, `c: m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    sa: Strides,
    b: &[f32],
    sb: Strides,
    beta: f32,
    c: &mut [f32],
    sc: Strides,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() > max_index(m, n, sc));
    if k == 0 {
        return;
    }
    assert!(a.len() > max_index(m, k, sa));
    assert!(b.len() > max_index(k, n, sb));
    // SAFETY: all strides are non-negative and the asserts above bound every
    // element the kernel touches inside the given slices.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0,
            sa.1,
            b.as_ptr(),
            sb.0,
            sb.1,
            beta,
            c.as_mut_ptr(),
            sc.0,
            sc.1,
        );
    }
}
