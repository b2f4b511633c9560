//! Reverse sweep over a recorded tape.

use super::raw;
use super::tape::{Node, Op, Tape, Var};
use super::{Tensor, TensorError};

/// Gradients of a scalar root with respect to every node on its tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` lies on no path to the root.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        match &self.grads[v.index] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&v.value().shape().to_vec()),
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, shape: &[usize], contrib: &[f64]) {
    let g = slot.get_or_insert_with(|| Tensor::zeros(shape));
    for (dst, src) in g.values_mut().iter_mut().zip(contrib) {
        *dst += *src;
    }
}

impl<'t> Var<'t> {
    /// Accumulates gradients over all paths from this scalar to the leaves.
    pub fn backward(self) -> Result<Gradients, TensorError> {
        let nodes = self.tape.nodes.borrow();
        let root = &nodes[self.index];
        if root.value.len() != 1 {
            return Err(TensorError::NotScalar { elements: root.value.len() });
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[self.index] = Some(Tensor::ones(root.value.shape()));

        for idx in (0..=self.index).rev() {
            if grads[idx].is_none() || !nodes[idx].requires_grad {
                continue;
            }
            let g = grads[idx].take().unwrap();
            if !g.is_finite() {
                return Err(TensorError::NonFinite { op: "backward" });
            }
            propagate(&nodes, idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn propagate(
    nodes: &[Node],
    idx: usize,
    g: &Tensor,
    grads: &mut [Option<Tensor>],
) -> Result<(), TensorError> {
    let val = |i: usize| -> &Tensor { &nodes[i].value };
    let needs = |i: usize| nodes[i].requires_grad;
    let out = val(idx);

    match &nodes[idx].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if needs(*a) {
                let r = raw::reduce_to_shape(g.values(), g.shape(), val(*a).shape());
                accumulate(&mut grads[*a], val(*a).shape(), &r);
            }
            if needs(*b) {
                let r = raw::reduce_to_shape(g.values(), g.shape(), val(*b).shape());
                accumulate(&mut grads[*b], val(*b).shape(), &r);
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                let r = raw::reduce_to_shape(g.values(), g.shape(), val(*a).shape());
                accumulate(&mut grads[*a], val(*a).shape(), &r);
            }
            if needs(*b) {
                let mut r = raw::reduce_to_shape(g.values(), g.shape(), val(*b).shape());
                r.iter_mut().for_each(|v| *v = -*v);
                accumulate(&mut grads[*b], val(*b).shape(), &r);
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                let prod = raw::broadcast_binary(
                    g.values(),
                    g.shape(),
                    val(*b).values(),
                    val(*b).shape(),
                    g.shape(),
                    |x, y| x * y,
                );
                let r = raw::reduce_to_shape(&prod, g.shape(), val(*a).shape());
                accumulate(&mut grads[*a], val(*a).shape(), &r);
            }
            if needs(*b) {
                let prod = raw::broadcast_binary(
                    g.values(),
                    g.shape(),
                    val(*a).values(),
                    val(*a).shape(),
                    g.shape(),
                    |x, y| x * y,
                );
                let r = raw::reduce_to_shape(&prod, g.shape(), val(*b).shape());
                accumulate(&mut grads[*b], val(*b).shape(), &r);
            }
        }
        Op::MatMul(a, b) => {
            let (m, k) = val(*a).dims2()?;
            let (_, n) = val(*b).dims2()?;
            if needs(*a) {
                let bt = raw::transpose(val(*b).values(), k, n);
                let da = raw::matmul(g.values(), m, n, &bt, k);
                accumulate(&mut grads[*a], val(*a).shape(), &da);
            }
            if needs(*b) {
                let at = raw::transpose(val(*a).values(), m, k);
                let db = raw::matmul(&at, k, m, g.values(), n);
                accumulate(&mut grads[*b], val(*b).shape(), &db);
            }
        }
        Op::Exp(a) => unary_chain(nodes, *a, g, grads, |i| out.values()[i]),
        Op::Log(a) => unary_chain(nodes, *a, g, grads, |i| 1.0 / val(*a).values()[i]),
        Op::Log1p(a) => unary_chain(nodes, *a, g, grads, |i| 1.0 / (1.0 + val(*a).values()[i])),
        Op::Softplus(a) => unary_chain(nodes, *a, g, grads, |i| raw::sigmoid(val(*a).values()[i])),
        Op::Sigmoid(a) => unary_chain(nodes, *a, g, grads, |i| {
            let s = out.values()[i];
            s * (1.0 - s)
        }),
        Op::Relu(a) => {
            unary_chain(nodes, *a, g, grads, |i| if val(*a).values()[i] > 0.0 { 1.0 } else { 0.0 })
        }
        Op::Square(a) => unary_chain(nodes, *a, g, grads, |i| 2.0 * val(*a).values()[i]),
        Op::Sqrt(a) => unary_chain(nodes, *a, g, grads, |i| 0.5 / out.values()[i]),
        Op::Sum(a) => {
            if needs(*a) {
                let fill = vec![g.values()[0]; val(*a).len()];
                accumulate(&mut grads[*a], val(*a).shape(), &fill);
            }
        }
        Op::Mean(a) => {
            if needs(*a) {
                let n = val(*a).len() as f64;
                let fill = vec![g.values()[0] / n; val(*a).len()];
                accumulate(&mut grads[*a], val(*a).shape(), &fill);
            }
        }
        Op::SumAxis(a, axis) => {
            if needs(*a) {
                let (r, c) = val(*a).dims2()?;
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] = if *axis == 0 { g.values()[j] } else { g.values()[i] };
                    }
                }
                accumulate(&mut grads[*a], val(*a).shape(), &d);
            }
        }
        Op::Concat(parts, axis) => {
            let (_, cols) = out.dims2()?;
            let mut offset = 0usize;
            for p in parts {
                let (pr, pc) = val(*p).dims2()?;
                let along = if *axis == 0 { pr } else { pc };
                if needs(*p) {
                    let mut d = vec![0.0; pr * pc];
                    if *axis == 0 {
                        d.copy_from_slice(&g.values()[offset * cols..(offset + pr) * cols]);
                    } else {
                        for i in 0..pr {
                            for j in 0..pc {
                                d[i * pc + j] = g.at2(i, offset + j);
                            }
                        }
                    }
                    accumulate(&mut grads[*p], val(*p).shape(), &d);
                }
                offset += along;
            }
        }
        Op::SliceAxis { input, axis, start, end } => {
            if needs(*input) {
                let (r, c) = val(*input).dims2()?;
                let mut d = vec![0.0; r * c];
                if *axis == 0 {
                    d[*start * c..*end * c].copy_from_slice(g.values());
                } else {
                    let w = end - start;
                    for i in 0..r {
                        for j in 0..w {
                            d[i * c + start + j] = g.values()[i * w + j];
                        }
                    }
                }
                accumulate(&mut grads[*input], val(*input).shape(), &d);
            }
        }
        Op::Transpose(a) => {
            if needs(*a) {
                let (r, c) = out.dims2()?;
                let d = raw::transpose(g.values(), r, c);
                accumulate(&mut grads[*a], val(*a).shape(), &d);
            }
        }
        Op::Cholesky(a) => {
            if needs(*a) {
                let n = out.dims2()?.0;
                let d = cholesky_backward(out.values(), g.values(), n)?;
                accumulate(&mut grads[*a], val(*a).shape(), &d);
            }
        }
        Op::TriSolve { t, b, lower, transpose } => {
            let (n, m) = out.dims2()?;
            // For X = op(T)^{-1} B: dB = op(T)^{-T} dX, and
            // dT = -dB·Xᵀ (plain solve) or -X·dBᵀ (transposed solve),
            // masked to the triangle the forward pass read.
            let db = raw::tri_solve(val(*t).values(), n, g.values(), m, *lower, !*transpose)?;
            if needs(*b) {
                accumulate(&mut grads[*b], val(*b).shape(), &db);
            }
            if needs(*t) {
                let mut dt = if *transpose {
                    let dbt = raw::transpose(&db, n, m);
                    raw::matmul(out.values(), n, m, &dbt, n)
                } else {
                    let xt = raw::transpose(out.values(), n, m);
                    raw::matmul(&db, n, m, &xt, n)
                };
                dt.iter_mut().for_each(|v| *v = -*v);
                for i in 0..n {
                    for j in 0..n {
                        let keep = if *lower { i >= j } else { i <= j };
                        if !keep {
                            dt[i * n + j] = 0.0;
                        }
                    }
                }
                accumulate(&mut grads[*t], val(*t).shape(), &dt);
            }
        }
    }
    Ok(())
}

fn unary_chain(
    nodes: &[Node],
    input: usize,
    g: &Tensor,
    grads: &mut [Option<Tensor>],
    local: impl Fn(usize) -> f64,
) {
    if !nodes[input].requires_grad {
        return;
    }
    let contrib: Vec<f64> = g.values().iter().enumerate().map(|(i, gv)| gv * local(i)).collect();
    accumulate(&mut grads[input], nodes[input].value.shape(), &contrib);
}

/// Reverse-mode rule for the Cholesky factorization A = L·Lᵀ.
///
/// Computes the symmetric gradient ½·L⁻ᵀ(Φ + Φᵀ)L⁻¹ with Φ the
/// half-diagonal lower part of LᵀL̄, then folds it onto the lower triangle
/// to match a forward pass that reads only tril(A).
fn cholesky_backward(l: &[f64], lbar: &[f64], n: usize) -> Result<Vec<f64>, TensorError> {
    let lt = raw::transpose(l, n, n);
    let m = raw::matmul(&lt, n, n, lbar, n);
    // Φ = tril(M) with halved diagonal; R = Φ + Φᵀ.
    let mut r = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let v = m[i * n + j];
            if i > j {
                r[i * n + j] += v;
                r[j * n + i] += v;
            } else if i == j {
                r[i * n + i] += v;
            }
        }
    }
    // S = L⁻ᵀ R L⁻¹ via two transposed triangular solves.
    let s1 = raw::tri_solve(l, n, &r, n, true, true)?;
    let s1t = raw::transpose(&s1, n, n);
    let s2 = raw::tri_solve(l, n, &s1t, n, true, true)?;
    // s2 = L⁻ᵀ S1ᵀ = (L⁻ᵀ R L⁻¹)ᵀ, symmetric, so use it directly.
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let sym = 0.5 * s2[i * n + j];
            out[i * n + j] = if i == j { sym } else { 2.0 * sym };
        }
    }
    Ok(out)
}

/// Maximum relative disagreement between the analytic gradient of `f` at
/// `point` and central finite differences with the given step, using
/// |analytic − numeric| / max(1, |numeric|) per coordinate.
pub fn gradient_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64, TensorError>
where
    F: for<'a> Fn(&'a Tape, Var<'a>) -> Result<Var<'a>, TensorError>,
{
    let tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = f(&tape, x)?;
    let grads = y.backward()?;
    let analytic = grads.wrt(x);

    let eval = |p: &Tensor| -> Result<f64, TensorError> {
        let t = Tape::new();
        let v = t.constant(p.clone());
        f(&t, v)?.scalar_value()
    };

    let mut max_rel = 0.0f64;
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.values_mut()[i] += step;
        let fp = eval(&plus)?;
        let mut minus = point.clone();
        minus.values_mut()[i] -= step;
        let fm = eval(&minus)?;
        let numeric = (fp - fm) / (2.0 * step);
        let rel = (analytic.values()[i] - numeric).abs() / numeric.abs().max(1.0);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = x.square().unwrap();
        let g = y.backward().unwrap().wrt(x);
        assert_relative_eq!(g.values()[0], 6.0);
    }

    #[test]
    fn path_accumulation_two_softplus() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = x.softplus().unwrap().add(x.softplus().unwrap()).unwrap();
        let g = y.backward().unwrap().wrt(x);
        // 2·sigmoid(0) = 1
        assert_relative_eq!(g.values()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn off_path_leaf_gets_zero() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let unused = tape.leaf(Tensor::scalar(5.0));
        let y = x.square().unwrap().sum().unwrap();
        let grads = y.backward().unwrap();
        assert_eq!(grads.wrt(unused).values(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(x.backward(), Err(TensorError::NotScalar { elements: 2 })));
    }

    #[test]
    fn quadratic_gradient_check_is_near_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let point = Tensor::row((0..6).map(|_| rng.gen_range(-2.0..2.0)).collect());
        let err = gradient_check(
            |_, x| {
                let sq = x.square()?.sum()?;
                let lin = x.sum()?.scale(0.5)?;
                sq.add(lin)
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "quadratic check err {err}");
    }

    #[test]
    fn softplus_chain_gradient_check() {
        let point = Tensor::scalar(0.0);
        let err = gradient_check(
            |_, x| x.softplus()?.softplus()?.softplus()?.sum(),
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "softplus chain err {err}");
    }

    #[test]
    fn log_det_gradient_matches_finite_differences() {
        // log|A| through the Cholesky factor at A = [[4,2],[2,3]].
        let a = Tensor::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let err = gradient_check(
            |_, x| x.cholesky()?.diag_part()?.log()?.sum()?.scale(2.0),
            &a,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "log-det grad err {err}");
    }

    #[test]
    fn backward_is_linear_in_the_root() {
        // d(f+f)/dx == 2·df/dx on a random composite graph.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let point = Tensor::row((0..4).map(|_| rng.gen_range(0.3..1.5)).collect());
            fn build<'a>(x: Var<'a>) -> Result<Var<'a>, TensorError> {
                x.log()?.softplus()?.square()?.sum()
            }
            let tape = Tape::new();
            let x = tape.leaf(point.clone());
            let f = build(x).unwrap();
            let g_single = f.backward().unwrap().wrt(x);
            let doubled = f.add(f).unwrap();
            let g_double = doubled.backward().unwrap().wrt(x);
            for i in 0..point.len() {
                assert_relative_eq!(
                    g_double.values()[i],
                    2.0 * g_single.values()[i],
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn composite_graphs_match_finite_differences() {
        // Random composites of matmul/softplus/log/cholesky paths.
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 3;
            let point = Tensor::new(
                vec![n, n],
                (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let err = gradient_check(
                |tape, x| {
                    // SPD matrix from x: A = x·xᵀ + 2I, then mix a Cholesky
                    // log-det with softplus/matmul terms.
                    let a = x
                        .matmul(x.transpose()?)?
                        .add(tape.constant(Tensor::eye(n)))?
                        .add(tape.constant(Tensor::eye(n)))?;
                    let l = a.cholesky()?;
                    let logdet = l.diag_part()?.log()?.sum()?.scale(2.0)?;
                    let smooth = x.softplus()?.sum()?;
                    let quad = x.square()?.mean()?;
                    logdet.add(smooth)?.add(quad)
                },
                &point,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed} err {err}");
        }
    }

    #[test]
    fn tri_solve_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 3;
        // Pack a triangular matrix and rhs into one leaf.
        let point = Tensor::row((0..n * n + n).map(|_| rng.gen_range(0.5..1.5)).collect());
        for &(lower, transpose) in &[(true, false), (true, true), (false, false), (false, true)] {
            let err = gradient_check(
                |tape, x| {
                    let tri = x.slice_axis(1, 0, n * n)?;
                    let tri = tape.concat(
                        &[
                            tri.slice_axis(1, 0, n)?,
                            tri.slice_axis(1, n, 2 * n)?,
                            tri.slice_axis(1, 2 * n, 3 * n)?,
                        ],
                        0,
                    )?;
                    let b = x.slice_axis(1, n * n, n * n + n)?.transpose()?;
                    tri.tri_solve(b, lower, transpose)?.square()?.sum()
                },
                &point,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "lower={lower} transpose={transpose} err {err}");
        }
    }
}
