use rayon::prelude::*;

/// Rows of `C` handed to one task. Fixed so results never depend on the
/// number of worker threads.
const ROW_BLOCK: usize = 64;

/// Raw pointer wrapper so row blocks can be dispatched across rayon tasks.
#[derive(Clone, Copy)]
struct SharedPtr(*const f32);
unsafe impl Send for SharedPtr {}
unsafe impl Sync for SharedPtr {}

/// `C (m x n, row-major) = A (m x k) · B (k x n)` with arbitrary strides on
/// `A` and `B`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_rs: isize,
    a_cs: isize,
    b: &[f32],
    b_rs: isize,
    b_cs: isize,
    c: &mut [f32],
) {
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.fill(0.0);
        return;
    }
    // Extents reachable through the strides must lie inside the slices.
    let span = |rows: usize, rs: isize, cols: usize, cs: isize| {
        (rows as isize - 1) * rs + (cols as isize - 1) * cs + 1
    };
    assert!(span(m, a_rs, k, a_cs) as usize <= a.len());
    assert!(span(k, b_rs, n, b_cs) as usize <= b.len());

    let a_ptr = SharedPtr(a.as_ptr());
    let b_ptr = SharedPtr(b.as_ptr());
    let run = |row0: usize, block: &mut [f32]| {
        let rows = block.len() / n;
        let (a_ptr, b_ptr) = (a_ptr, b_ptr);
        // SAFETY: strides and extents were checked against the slice lengths
        // above; `block` is an exclusive row range of `c`.
        unsafe {
            matrixmultiply::sgemm(
                rows,
                k,
                n,
                1.0,
                a_ptr.0.offset(row0 as isize * a_rs),
                a_rs,
                a_cs,
                b_ptr.0,
                b_rs,
                b_cs,
                0.0,
                block.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    };
    if m <= ROW_BLOCK {
        run(0, c);
    } else {
        c.par_chunks_mut(ROW_BLOCK * n)
            .enumerate()
            .for_each(|(i, block)| run(i * ROW_BLOCK, block));
    }
}
