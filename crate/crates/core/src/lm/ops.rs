//! Row-major dense kernels used by the model and its backward pass.

pub(crate) const RMS_EPS: f64 = 1e-5;

/// `a (m x k) * b (k x n)`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, w) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += x * w;
            }
        }
    }
    out
}

/// `out (k x n) += a^T (k x m) * g (m x n)`.
pub(crate) fn matmul_at_b_acc(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, gv) in out[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *o += x * gv;
            }
        }
    }
}

/// `g (m x n) * b^T (n x k)` where `b` is `k x n`.
pub(crate) fn matmul_a_bt(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] = grow.iter().zip(&b[p * n..(p + 1) * n]).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// RMS normalization per row with a learned gain. Returns the output and the
/// inverse RMS of each row.
pub(crate) fn rmsnorm(x: &[f64], gain: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>) {
    let d = gain.len();
    let mut y = vec![0.0; rows * d];
    let mut inv = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let ms = xr.iter().map(|v| v * v).sum::<f64>() / d as f64;
        let ir = 1.0 / (ms + RMS_EPS).sqrt();
        inv[r] = ir;
        for ((o, v), g) in y[r * d..(r + 1) * d].iter_mut().zip(xr).zip(gain) {
            *o = v * ir * g;
        }
    }
    (y, inv)
}

/// Backward of [`rmsnorm`]: accumulates into `dgain` and `dx`.
pub(crate) fn rmsnorm_backward(dy: &[f64], x: &[f64], gain: &[f64], inv: &[f64], dgain: &mut [f64], dx: &mut [f64]) {
    let d = gain.len();
    for (r, &ir) in inv.iter().enumerate() {
        let xr = &x[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mut proj = 0.0;
        for j in 0..d {
            dgain[j] += dyr[j] * xr[j] * ir;
            proj += gain[j] * dyr[j] * xr[j];
        }
        let c = ir * ir * ir * proj / d as f64;
        for j in 0..d {
            dx[r * d + j] += ir * gain[j] * dyr[j] - c * xr[j];
        }
    }
}

pub(crate) fn log_softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [1 2; 3 4] * [5; 6]
        assert_eq!(matmul(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0], 2, 2, 1), vec![17.0, 39.0]);
        let mut out = vec![0.0; 2];
        matmul_at_b_acc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0], 2, 2, 1, &mut out);
        assert_eq!(out, vec![4.0, 6.0]);
        assert_eq!(matmul_a_bt(&[1.0, 1.0], &[1.0, 2.0, 3.0, 4.0], 1, 2, 2), vec![3.0, 7.0]);
    }

    #[test]
    fn rmsnorm_gradient_matches_finite_difference() {
        let x = [0.3, -1.2, 0.7, 2.0, 0.1, -0.4];
        let g = [1.1, 0.9, 1.3];
        let w = [0.5, -2.0, 1.5, 0.2, 0.7, -0.3];
        let loss = |x: &[f64], g: &[f64]| -> f64 {
            let (y, _) = rmsnorm(x, g, 2);
            y.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (_, inv) = rmsnorm(&x, &g, 2);
        let mut dg = [0.0; 3];
        let mut dx = [0.0; 6];
        rmsnorm_backward(&w, &x, &g, &inv, &mut dg, &mut dx);
        let h = 1e-6;
        for i in 0..6 {
            let mut xp = x;
            xp[i] += h;
            let mut xm = x;
            xm[i] -= h;
            let fd = (loss(&xp, &g) - loss(&xm, &g)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-7, "dx[{i}] {fd} vs {}", dx[i]);
        }
        for j in 0..3 {
            let mut gp = g;
            gp[j] += h;
            let mut gm = g;
            gm[j] -= h;
            let fd = (loss(&x, &gp) - loss(&x, &gm)) / (2.0 * h);
            assert!((fd - dg[j]).abs() < 1e-7);
        }
    }
}
