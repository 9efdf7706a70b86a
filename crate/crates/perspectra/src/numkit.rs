//! Dense numeric kernels with hand-derived gradients and the AdamW optimizer.
//!
//! All kernels use a fixed summation order so results are bitwise reproducible
//! across runs. Compute is generic over [`Scalar`]: production paths run in
//! `f32`, gradient checks instantiate the same code in `f64`.

use std::sync::atomic::{AtomicUsize, Ordering};

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point scalar the kernels are generic over.
pub trait Scalar:
    Float + std::ops::AddAssign + std::ops::SubAssign + std::ops::MulAssign + Default + std::fmt::Debug + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

static KERNEL_THREADS: AtomicUsize = AtomicUsize::new(1);

/// Caps the number of threads dense kernels may use. Rows of a product are
/// independent, so the result is identical for any cap.
pub fn set_kernel_threads(n: usize) {
    KERNEL_THREADS.store(n.max(1), Ordering::Relaxed);
}

pub fn kernel_threads() -> usize {
    KERNEL_THREADS.load(Ordering::Relaxed)
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(rows * cols, data.len(), "buffer length must equal rows*cols");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix { rows: rows.len(), cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = S::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn fill(&mut self, v: S) {
        self.data.fill(v);
    }

    /// self += other * scale
    pub fn add_scaled(&mut self, other: &Matrix<S>, scale: S) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b * scale;
        }
    }

    pub fn transpose(&self) -> Matrix<S> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn map<F: Fn(S) -> S>(&self, f: F) -> Matrix<S> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<T: Scalar>(&self) -> Matrix<T> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect() }
    }
}

fn matmul_rows_into<S: Scalar>(a_rows: &[S], a_cols: usize, b: &Matrix<S>, out: &mut [S]) {
    let out_cols = b.cols;
    for (i, a_row) in a_rows.chunks_exact(a_cols).enumerate() {
        let out_row = &mut out[i * out_cols..(i + 1) * out_cols];
        for (k, &a_ik) in a_row.iter().enumerate() {
            if a_ik == S::zero() {
                continue;
            }
            let b_row = b.row(k);
            for (o, &b_kj) in out_row.iter_mut().zip(b_row.iter()) {
                *o += a_ik * b_kj;
            }
        }
    }
}

/// Standard matrix product. Each output row is accumulated in k-serial order,
/// independent of the thread cap.
pub fn matmul<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> Result<Matrix<S>> {
    if a.cols != b.rows {
        return Err(Error::Dimension(format!(
            "matmul: lhs is {}x{}, rhs is {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    let threads = kernel_threads().min(a.rows.max(1));
    if threads <= 1 || a.rows * a.cols * b.cols < 1 << 16 {
        matmul_rows_into(&a.data, a.cols, b, &mut out.data);
        return Ok(out);
    }
    let chunk_rows = a.rows.div_ceil(threads);
    std::thread::scope(|scope| {
        let mut out_rest: &mut [S] = &mut out.data;
        let mut a_rest: &[S] = &a.data;
        for _ in 0..threads {
            let take = chunk_rows.min(a_rest.len() / a.cols);
            if take == 0 {
                break;
            }
            let (a_chunk, a_tail) = a_rest.split_at(take * a.cols);
            let (o_chunk, o_tail) = out_rest.split_at_mut(take * b.cols);
            a_rest = a_tail;
            out_rest = o_tail;
            scope.spawn(move || matmul_rows_into(a_chunk, a.cols, b, o_chunk));
        }
    });
    Ok(out)
}

/// a^T * b, accumulated serially.
pub fn matmul_at_b<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> Result<Matrix<S>> {
    if a.rows != b.rows {
        return Err(Error::Dimension(format!(
            "matmul_at_b: lhs is {}x{}, rhs is {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let a_row = a.row(k);
        let b_row = b.row(k);
        for (i, &a_ki) in a_row.iter().enumerate() {
            if a_ki == S::zero() {
                continue;
            }
            let out_row = out.row_mut(i);
            for (o, &b_kj) in out_row.iter_mut().zip(b_row.iter()) {
                *o += a_ki * b_kj;
            }
        }
    }
    Ok(out)
}

/// a * b^T, accumulated serially.
pub fn matmul_a_bt<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> Result<Matrix<S>> {
    if a.cols != b.cols {
        return Err(Error::Dimension(format!(
            "matmul_a_bt: lhs is {}x{}, rhs is {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = out.row_mut(i);
        for j in 0..b.rows {
            let b_row = b.row(j);
            let mut acc = S::zero();
            for (&x, &y) in a_row.iter().zip(b_row.iter()) {
                acc += x * y;
            }
            out_row[j] = acc;
        }
    }
    Ok(out)
}

/// ReLU applied elementwise.
pub fn relu<S: Scalar>(m: &Matrix<S>) -> Matrix<S> {
    m.map(|v| if v > S::zero() { v } else { S::zero() })
}

/// Gradient of ReLU: passes upstream where the pre-activation was > 0.
pub fn relu_backward<S: Scalar>(pre: &Matrix<S>, upstream: &Matrix<S>) -> Matrix<S> {
    assert_eq!(pre.data.len(), upstream.data.len());
    let data = pre
        .data
        .iter()
        .zip(upstream.data.iter())
        .map(|(&z, &g)| if z > S::zero() { g } else { S::zero() })
        .collect();
    Matrix { rows: pre.rows, cols: pre.cols, data }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<S: Scalar>(logits: &Matrix<S>) -> Matrix<S> {
    let mut out = logits.clone();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let mut max = S::neg_infinity();
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Backprop through a row-wise softmax: given probabilities `p` and the
/// gradient w.r.t. them, returns the gradient w.r.t. the logits.
pub fn softmax_backward<S: Scalar>(probs: &Matrix<S>, dprobs: &Matrix<S>) -> Matrix<S> {
    assert_eq!(probs.data.len(), dprobs.data.len());
    let mut out = Matrix::zeros(probs.rows, probs.cols);
    for i in 0..probs.rows {
        let p = probs.row(i);
        let dp = dprobs.row(i);
        let mut dot = S::zero();
        for (&pi, &di) in p.iter().zip(dp.iter()) {
            dot += pi * di;
        }
        let o = out.row_mut(i);
        for j in 0..p.len() {
            o[j] = p[j] * (dp[j] - dot);
        }
    }
    out
}

/// Mean masked cross-entropy over softmax of the logits.
///
/// Returns the loss and the gradient w.r.t. the logits:
/// `(softmax - onehot) / n_masked` on masked-in rows, zero elsewhere.
pub fn softmax_ce<S: Scalar>(logits: &Matrix<S>, labels: &[usize], mask: &[bool]) -> (S, Matrix<S>) {
    assert_eq!(logits.rows, labels.len());
    assert_eq!(logits.rows, mask.len());
    let n_masked = mask.iter().filter(|&&m| m).count();
    let mut dlogits = Matrix::zeros(logits.rows, logits.cols);
    if n_masked == 0 {
        return (S::zero(), dlogits);
    }
    let scale = S::one() / S::from_f64(n_masked as f64);
    let mut loss = S::zero();
    for i in 0..logits.rows {
        if !mask[i] {
            continue;
        }
        let row = logits.row(i);
        debug_assert!(labels[i] < logits.cols, "label out of range");
        let mut max = S::neg_infinity();
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = S::zero();
        for &v in row.iter() {
            sum += (v - max).exp();
        }
        let lse = max + sum.ln();
        loss += (lse - row[labels[i]]) * scale;
        let drow = dlogits.row_mut(i);
        for j in 0..row.len() {
            let p = (row[j] - max).exp() / sum;
            drow[j] = p * scale;
        }
        drow[labels[i]] -= scale;
    }
    (loss, dlogits)
}

/// Mean elementwise L1 loss. `dpred = sign(pred - target)/count`, sign(0)=0.
pub fn l1_loss<S: Scalar>(pred: &Matrix<S>, target: &Matrix<S>) -> Result<(S, Matrix<S>)> {
    if pred.rows != target.rows || pred.cols != target.cols {
        return Err(Error::Dimension(format!(
            "l1_loss: pred is {}x{}, target is {}x{}",
            pred.rows, pred.cols, target.rows, target.cols
        )));
    }
    let count = pred.data.len();
    let mut dpred = Matrix::zeros(pred.rows, pred.cols);
    if count == 0 {
        return Ok((S::zero(), dpred));
    }
    let scale = S::one() / S::from_f64(count as f64);
    let mut loss = S::zero();
    for (i, (&p, &t)) in pred.data.iter().zip(target.data.iter()).enumerate() {
        let diff = p - t;
        loss += diff.abs() * scale;
        dpred.data[i] = if diff > S::zero() {
            scale
        } else if diff < S::zero() {
            -scale
        } else {
            S::zero()
        };
    }
    Ok((loss, dpred))
}

/// First/second moment buffers for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<S> {
    pub m: Vec<S>,
    pub v: Vec<S>,
}

impl<S: Scalar> Moments<S> {
    pub fn zeros(len: usize) -> Self {
        Moments { m: vec![S::zero(); len], v: vec![S::zero(); len] }
    }
}

/// AdamW with decoupled weight decay and bias correction.
#[derive(Debug, Clone)]
pub struct AdamW<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    pub weight_decay: S,
    step: u64,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(lr: S, weight_decay: S) -> Self {
        AdamW {
            lr,
            beta1: S::from_f64(0.9),
            beta2: S::from_f64(0.999),
            eps: S::from_f64(1e-8),
            weight_decay,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    /// Advances the shared step counter. Call once per optimizer step, before
    /// updating the tensors belonging to that step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates one parameter tensor in place.
    pub fn update(&self, params: &mut [S], grads: &[S], moments: &mut Moments<S>) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), moments.m.len());
        let t = self.step.max(1);
        let bias1 = S::one() - self.beta1.powi(t as i32);
        let bias2 = S::one() - self.beta2.powi(t as i32);
        let one = S::one();
        for i in 0..params.len() {
            // Decoupled weight decay, applied before the moment update term.
            params[i] -= self.lr * self.weight_decay * params[i];
            let g = grads[i];
            moments.m[i] = self.beta1 * moments.m[i] + (one - self.beta1) * g;
            moments.v[i] = self.beta2 * moments.v[i] + (one - self.beta2) * g * g;
            let m_hat = moments.m[i] / bias1;
            let v_hat = moments.v[i] / bias2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Central-difference gradient check.
///
/// Compares the analytic gradient against `(f(x+h e_i) - f(x-h e_i)) / 2h`
/// and returns the max over coordinates of `|a-n| / max(1e-8, |a|+|n|)`.
pub fn grad_check<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], analytic: &[f64], h: f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut point = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = point[i];
        point[i] = orig + h;
        let fp = f(&point);
        point[i] = orig - h;
        let fm = f(&point);
        point[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        if err > worst {
            worst = err;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data)
    }

    #[test]
    fn matmul_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_matrix(&mut rng, 3, 4);
        let i3 = Matrix::identity(3);
        assert_eq!(matmul(&i3, &m).unwrap(), m);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = Matrix::from_vec(2, 1, vec![5.0, 6.0]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 7, 5);
        let b = random_matrix(&mut rng, 5, 3);
        let c = matmul(&a, &b).unwrap();
        // Independent triple-loop implementation.
        for i in 0..7 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..5 {
                    acc += a.get(i, k) * b.get(k, j);
                }
                assert_relative_eq!(c.get(i, j), acc, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = Matrix::<f64>::zeros(2, 3);
        let b = Matrix::<f64>::zeros(2, 3);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn matmul_thread_cap_does_not_change_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 64, 40);
        let b = random_matrix(&mut rng, 40, 32);
        let serial = matmul(&a, &b).unwrap();
        set_kernel_threads(4);
        let parallel = matmul(&a, &b).unwrap();
        set_kernel_threads(1);
        assert_eq!(serial, parallel);
    }

    #[test]
    fn softmax_ce_uniform_logits() {
        let logits = Matrix::from_vec(1, 2, vec![0.0f64, 0.0]);
        let (loss, _) = softmax_ce(&logits, &[0], &[true]);
        assert_relative_eq!(loss, std::f64::consts::LN_2, max_relative = 1e-12);
    }

    #[test]
    fn softmax_ce_saturated_logits_stay_finite() {
        let logits = Matrix::from_vec(1, 2, vec![1000.0f64, 0.0]);
        let (loss, dlogits) = softmax_ce(&logits, &[0], &[true]);
        assert!(loss.is_finite());
        assert!(loss.abs() < 1e-6);
        assert!(dlogits.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_ce_empty_mask() {
        let logits = Matrix::from_vec(2, 3, vec![1.0f64; 6]);
        let (loss, dlogits) = softmax_ce(&logits, &[0, 1], &[false, false]);
        assert_eq!(loss, 0.0);
        assert!(dlogits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_ce_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits = random_matrix(&mut rng, 5, 3);
        let labels = [0usize, 2, 1, 1, 0];
        let mask = [true, true, false, true, true];
        let (_, dlogits) = softmax_ce(&logits, &labels, &mask);
        let f = |x: &[f64]| {
            let m = Matrix::from_vec(5, 3, x.to_vec());
            softmax_ce(&m, &labels, &mask).0
        };
        let err = grad_check(f, logits.data(), dlogits.data(), 1e-5);
        assert!(err <= 1e-4, "max rel err {err}");
    }

    #[test]
    fn l1_loss_zero_at_equal_inputs() {
        let a = Matrix::from_vec(2, 2, vec![1.0f64, -2.0, 0.5, 3.0]);
        let (loss, grad) = l1_loss(&a, &a).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn l1_loss_hand_case() {
        let pred = Matrix::from_vec(1, 2, vec![1.0f64, -1.0]);
        let target = Matrix::from_vec(1, 2, vec![0.0f64, 0.0]);
        let (loss, grad) = l1_loss(&pred, &target).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(grad.data(), &[0.5, -0.5]);
    }

    #[test]
    fn l1_loss_gradient_matches_finite_differences_away_from_kinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut pred = random_matrix(&mut rng, 4, 3);
        let target = random_matrix(&mut rng, 4, 3);
        // Push every element at least 1e-3 away from its kink.
        for (p, &t) in pred.data_mut().iter_mut().zip(target.data().iter()) {
            if (*p - t).abs() < 1e-3 {
                *p = t + 2e-3;
            }
        }
        let (_, grad) = l1_loss(&pred, &target).unwrap();
        let f = |x: &[f64]| {
            let m = Matrix::from_vec(4, 3, x.to_vec());
            l1_loss(&m, &target).unwrap().0
        };
        let err = grad_check(f, pred.data(), grad.data(), 1e-5);
        assert!(err <= 1e-4, "max rel err {err}");
    }

    #[test]
    fn adamw_zero_grads_no_decay_is_identity() {
        let mut opt = AdamW::new(0.0005f64, 0.0);
        let mut params = vec![0.3, -0.7, 1.1];
        let orig = params.clone();
        let mut mom = Moments::zeros(3);
        opt.begin_step();
        opt.update(&mut params, &[0.0, 0.0, 0.0], &mut mom);
        assert_eq!(params, orig);
    }

    #[test]
    fn adamw_first_step_closed_form() {
        // p=0, g=1, lr=0.0005, step 1: m̂=1, v̂=1, p = -lr * 1/(1+eps).
        let mut opt = AdamW::new(0.0005f64, 0.0);
        let mut params = vec![0.0];
        let mut mom = Moments::zeros(1);
        opt.begin_step();
        opt.update(&mut params, &[1.0], &mut mom);
        assert_relative_eq!(params[0], -0.0005 / (1.0 + 1e-8), max_relative = 1e-12);
    }

    #[test]
    fn adamw_runs_are_bitwise_identical() {
        let run = || {
            let mut opt = AdamW::new(0.01f64, 0.1);
            let mut params = vec![0.5, -0.25, 0.125];
            let mut mom = Moments::zeros(3);
            for step in 0..20 {
                let grads: Vec<f64> = params.iter().map(|p| p * 2.0 + step as f64 * 0.01).collect();
                opt.begin_step();
                opt.update(&mut params, &grads, &mut mom);
            }
            params
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn grad_check_quadratic() {
        let f = |x: &[f64]| x[0] * x[0];
        let err = grad_check(f, &[3.0], &[6.0], 1e-5);
        assert!(err <= 1e-8, "err {err}");
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_matrix(&mut rng, 6, 4);
        let p = softmax_rows(&m);
        for i in 0..6 {
            let s: f64 = p.row(i).iter().sum();
            assert_relative_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let logits = random_matrix(&mut rng, 3, 4);
        let weights = random_matrix(&mut rng, 3, 4);
        // Scalar objective: sum(w .* softmax(z)).
        let f = |x: &[f64]| {
            let m = Matrix::from_vec(3, 4, x.to_vec());
            let p = softmax_rows(&m);
            p.data().iter().zip(weights.data().iter()).map(|(a, b)| a * b).sum()
        };
        let probs = softmax_rows(&logits);
        let dlogits = softmax_backward(&probs, &weights);
        let err = grad_check(f, logits.data(), dlogits.data(), 1e-5);
        assert!(err <= 1e-4, "max rel err {err}");
    }
}
