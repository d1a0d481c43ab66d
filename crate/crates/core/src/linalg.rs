//! Dense Cholesky machinery on column-major `nalgebra` matrices.
//!
//! Factorization and triangular solves are blocked so that the bulk of the
//! work goes through `gemm`.

use nalgebra::{DMatrix, DVector};

const BLOCK: usize = 64;

/// In-place lower Cholesky factorization. On failure returns the index of the
/// first non-positive (or non-finite) pivot. The strict upper triangle is
/// zeroed on success.
pub fn cholesky_in_place(a: &mut DMatrix<f64>) -> Result<(), usize> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut k = 0;
    while k < n {
        let kb = BLOCK.min(n - k);
        // Diagonal block and the panel below it, column by column.
        let data = a.as_mut_slice();
        for j in k..k + kb {
            let d = data[j * n + j];
            if !(d > 0.0) || !d.is_finite() {
                return Err(j);
            }
            let ljj = d.sqrt();
            data[j * n + j] = ljj;
            for v in &mut data[j * n + j + 1..(j + 1) * n] {
                *v /= ljj;
            }
            // Update the remaining columns of this block with column j.
            for c in j + 1..k + kb {
                let (left, right) = data.split_at_mut(c * n);
                let src = &left[j * n + c..(j + 1) * n];
                let factor = src[0];
                if factor != 0.0 {
                    for (dst, s) in right[c..n].iter_mut().zip(src) {
                        *dst -= factor * s;
                    }
                }
            }
        }
        let rest = k + kb;
        if rest < n {
            let m = n - rest;
            let panel = a.view((rest, k), (m, kb)).clone_owned();
            let panel_t = panel.transpose();
            let mut trailing = a.view_mut((rest, rest), (m, m));
            trailing.gemm(-1.0, &panel, &panel_t, 1.0);
        }
        k = rest;
    }
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    Ok(())
}

/// Solves `L X = B` in place for lower-triangular `L`.
pub fn solve_lower_in_place(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    debug_assert_eq!(n, b.nrows());
    let ncols = b.ncols();
    let mut k = 0;
    while k < n {
        let kb = BLOCK.min(n - k);
        // Small dense triangular solve on rows k..k+kb.
        let diag: Vec<f64> = (0..kb * kb).map(|idx| l[(k + idx / kb, k + idx % kb)]).collect();
        let data = b.as_mut_slice();
        for c in 0..ncols {
            let seg = &mut data[c * n + k..c * n + k + kb];
            for i in 0..kb {
                let row = &diag[i * kb..i * kb + i];
                let s = seg[i] - row.iter().zip(&seg[..i]).map(|(lv, x)| lv * x).sum::<f64>();
                seg[i] = s / diag[i * kb + i];
            }
        }
        let rest = k + kb;
        if rest < n {
            let l_below = l.view((rest, k), (n - rest, kb));
            let solved = b.view((k, 0), (kb, ncols)).clone_owned();
            let mut below = b.view_mut((rest, 0), (n - rest, ncols));
            below.gemm(-1.0, &l_below, &solved, 1.0);
        }
        k = rest;
    }
}

pub fn solve_lower_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for j in 0..n {
        let v = x[j] / l[(j, j)];
        x[j] = v;
        if v != 0.0 {
            let col = l.column(j);
            for i in j + 1..n {
                x[i] -= v * col[i];
            }
        }
    }
    x
}

/// Solves `Lᵀ x = b`.
pub fn solve_upper_t_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for j in (0..n).rev() {
        let col = l.column(j);
        let mut s = x[j];
        for i in j + 1..n {
            s -= col[i] * x[i];
        }
        x[j] = s / col[j];
    }
    x
}

/// `(L Lᵀ)⁻¹ b`.
pub fn cholesky_solve_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    solve_upper_t_vec(l, &solve_lower_vec(l, b))
}

/// `L⁻¹` for lower-triangular `L`, by recursive 2×2 blocking:
/// `[[A, 0], [B, C]]⁻¹ = [[A⁻¹, 0], [−C⁻¹ B A⁻¹, C⁻¹]]`.
pub fn lower_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    if n <= BLOCK {
        let mut inv = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            inv[(j, j)] = 1.0 / l[(j, j)];
            for i in j + 1..n {
                let mut s = 0.0;
                for p in j..i {
                    s += l[(i, p)] * inv[(p, j)];
                }
                inv[(i, j)] = -s / l[(i, i)];
            }
        }
        return inv;
    }
    let h = (n / 2).div_ceil(BLOCK) * BLOCK;
    let a_inv = lower_inverse(&l.view((0, 0), (h, h)).clone_owned());
    let c_inv = lower_inverse(&l.view((h, h), (n - h, n - h)).clone_owned());
    let b = l.view((h, 0), (n - h, h));
    let mut ba = DMatrix::<f64>::zeros(n - h, h);
    ba.gemm(1.0, &b, &a_inv, 0.0);
    let mut inv = DMatrix::<f64>::zeros(n, n);
    inv.view_mut((0, 0), (h, h)).copy_from(&a_inv);
    inv.view_mut((h, h), (n - h, n - h)).copy_from(&c_inv);
    let mut lower = inv.view_mut((h, 0), (n - h, h));
    lower.gemm(-1.0, &c_inv, &ba, 0.0);
    inv
}

/// `(L Lᵀ)⁻¹` as a dense symmetric matrix: `L⁻ᵀ L⁻¹`, forming only the lower
/// blocks and mirroring them.
pub fn cholesky_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let li = lower_inverse(l);
    let mut out = DMatrix::<f64>::zeros(n, n);
    let mut i = 0;
    while i < n {
        let ib = BLOCK.min(n - i);
        // Rows above i of L⁻¹[:, i..] are zero, so the sum starts at row i.
        let left = li.view((i, i), (n - i, ib)).transpose();
        let right = li.view((i, 0), (n - i, i + ib));
        let mut block = out.view_mut((i, 0), (ib, i + ib));
        block.gemm(1.0, &left, &right, 0.0);
        i += ib;
    }
    for j in 0..n {
        for r in 0..j {
            out[(r, j)] = out[(j, r)];
        }
    }
    out
}

pub fn log_det_from_factor(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Smallest squared pivot `min Lᵢᵢ²` of a Cholesky factor.
pub fn min_pivot_sq(l: &DMatrix<f64>) -> f64 {
    l.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v))
}

/// Factorizes `a + level·scale·I` for each level in turn and returns the first
/// accepted factor together with the absolute jitter used. On exhaustion
/// returns the last attempted jitter.
///
/// Without a `pivot_floor` any completed factorization is accepted. With one,
/// every squared pivot must also be at least `pivot_floor · scale` and at
/// least twice the jitter: the jitter may stabilize the factorization but may
/// not account for most of any conditional variance.
pub fn factor_escalating(
    a: &DMatrix<f64>,
    scale: f64,
    schedule: &[f64],
    pivot_floor: Option<f64>,
) -> Result<(DMatrix<f64>, f64), f64> {
    let mut last = 0.0;
    for &level in schedule {
        let jitter = level * scale;
        last = jitter;
        let mut m = a.clone();
        if jitter > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
        }
        if cholesky_in_place(&mut m).is_err() {
            continue;
        }
        let accepted = match pivot_floor {
            None => true,
            Some(floor) => min_pivot_sq(&m) >= (floor * scale).max(2.0 * jitter),
        };
        if accepted {
            return Ok((m, jitter));
        }
    }
    Err(last)
}
