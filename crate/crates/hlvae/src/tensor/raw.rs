//! Raw dense numeric kernels shared by the tape operations, the backward
//! rules, and the value-only prediction path.

use super::TensorError;

/// Broadcast shape of two operands under right-aligned stretching of size-1
/// dimensions, or `None` if incompatible.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return None;
        }
    }
    Some(out)
}

fn strides_for(shape: &[usize], out_rank: usize) -> Vec<usize> {
    // Row-major strides padded on the left; broadcast dims get stride 0.
    let mut strides = vec![0usize; out_rank];
    let offset = out_rank - shape.len();
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Applies `f` elementwise over broadcast operands, returning the flat output.
pub fn broadcast_binary(
    a: &[f64],
    a_shape: &[usize],
    b: &[f64],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    let n: usize = out_shape.iter().product();
    // Fast paths for the common layouts.
    if a_shape == out_shape && b_shape == out_shape {
        return a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect();
    }
    if b.len() == 1 {
        return a.iter().map(|x| f(*x, b[0])).collect();
    }
    if a.len() == 1 {
        return b.iter().map(|y| f(a[0], *y)).collect();
    }
    let rank = out_shape.len();
    let sa = strides_for(a_shape, rank);
    let sb = strides_for(b_shape, rank);
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    for _ in 0..n {
        let mut oa = 0usize;
        let mut ob = 0usize;
        for d in 0..rank {
            oa += idx[d] * sa[d];
            ob += idx[d] * sb[d];
        }
        out.push(f(a[oa], b[ob]));
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

/// Sums `g` (shaped `g_shape`) down to `target` by collapsing broadcast dims.
pub fn reduce_to_shape(g: &[f64], g_shape: &[usize], target: &[usize]) -> Vec<f64> {
    if g_shape == target {
        return g.to_vec();
    }
    let t_len: usize = target.iter().product();
    if t_len == 1 {
        return vec![g.iter().sum()];
    }
    let rank = g_shape.len();
    let st = strides_for(target, rank);
    let mut out = vec![0.0; t_len];
    let mut idx = vec![0usize; rank];
    for &gv in g {
        let mut ot = 0usize;
        for d in 0..rank {
            ot += idx[d] * st[d];
        }
        out[ot] += gv;
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < g_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

/// C = A·B for row-major A (m×k) and B (k×n).
pub fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut t = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

/// Lower Cholesky factor of `A + jitter·I`, reading only the lower triangle.
///
/// The factorization is first attempted without jitter; on failure the jitter
/// starts at 1e-8·mean(diag) and escalates tenfold up to 1e-4·mean(diag)
/// before giving up, which keeps log-determinants stable on nearly singular
/// kernel matrices while leaving healthy matrices untouched.
pub fn cholesky_lower(a: &[f64], n: usize) -> Result<Vec<f64>, TensorError> {
    if let Ok(l) = try_cholesky(a, n, 0.0) {
        return Ok(l);
    }
    let mean_diag = (0..n).map(|i| a[i * n + i]).sum::<f64>() / n.max(1) as f64;
    let base = 1e-8 * mean_diag.max(0.0);
    let ceiling = 1e-4 * mean_diag.max(0.0);
    let mut jitter = base;
    loop {
        match try_cholesky(a, n, jitter) {
            Ok(l) => return Ok(l),
            Err(err) => {
                if jitter > 0.0 && jitter * 10.0 <= ceiling * (1.0 + 1e-12) {
                    jitter *= 10.0;
                } else {
                    return Err(err);
                }
            }
        }
    }
}

fn try_cholesky(a: &[f64], n: usize, jitter: f64) -> Result<Vec<f64>, TensorError> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut s = a[j * n + j] + jitter;
        for k in 0..j {
            s -= l[j * n + k] * l[j * n + k];
        }
        if s <= 0.0 || !s.is_finite() {
            return Err(TensorError::FactorizationFailure { row: j, pivot: s });
        }
        let d = s.sqrt();
        l[j * n + j] = d;
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = v / d;
        }
    }
    Ok(l)
}

/// Solves `op(T)·X = B` where `T` is triangular (n×n) and `B` is n×m.
///
/// `lower` selects which triangle of `T` is read; `transpose` applies to the
/// read triangle. Exact zero diagonal entries are rejected.
pub fn tri_solve(
    t: &[f64],
    n: usize,
    b: &[f64],
    m: usize,
    lower: bool,
    transpose: bool,
) -> Result<Vec<f64>, TensorError> {
    for i in 0..n {
        if t[i * n + i] == 0.0 {
            return Err(TensorError::SingularTriangular { row: i });
        }
    }
    let mut x = b.to_vec();
    // Effective matrix is lower-triangular when (lower, !transpose) or
    // (upper, transpose); entry access swaps indices under `transpose`.
    let forward = lower != transpose;
    let get = |i: usize, j: usize| -> f64 {
        if transpose {
            t[j * n + i]
        } else {
            t[i * n + j]
        }
    };
    if forward {
        for i in 0..n {
            for k in 0..i {
                let c = get(i, k);
                if c == 0.0 {
                    continue;
                }
                for col in 0..m {
                    x[i * m + col] -= c * x[k * m + col];
                }
            }
            let d = get(i, i);
            for col in 0..m {
                x[i * m + col] /= d;
            }
        }
    } else {
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let c = get(i, k);
                if c == 0.0 {
                    continue;
                }
                for col in 0..m {
                    x[i * m + col] -= c * x[k * m + col];
                }
            }
            let d = get(i, i);
            for col in 0..m {
                x[i * m + col] /= d;
            }
        }
    }
    Ok(x)
}

/// Numerically stable softplus: max(x, 0) + log1p(exp(-|x|)).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable logistic sigmoid via the same decomposition.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
