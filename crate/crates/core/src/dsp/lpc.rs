//! Linear prediction (autocorrelation method, Levinson-Durbin) and inverse
//! filtering, used to whiten vowels for the glottal-noise measures and to
//! recover a flow proxy for the open/closed quotients.

use crate::scalar::{sc, Scalar};

use super::window::hamming;

/// Predictor coefficients a[1..=order] minimizing the forward prediction
/// error on the Hamming-windowed signal: x_hat[n] = sum_k a[k] x[n-k].
/// Degenerate input (silence, or shorter than the order) yields zeros.
pub fn lpc_coeffs<S: Scalar>(x: &[S], order: usize) -> Vec<S> {
    if x.len() <= order + 1 {
        return vec![S::zero(); order];
    }
    let w: Vec<S> = hamming(x.len());
    let xw: Vec<S> = x.iter().zip(w.iter()).map(|(&a, &b)| a * b).collect();

    let mut r = vec![S::zero(); order + 1];
    for (k, rk) in r.iter_mut().enumerate() {
        let mut acc = S::zero();
        for n in 0..xw.len() - k {
            acc += xw[n] * xw[n + k];
        }
        *rk = acc;
    }
    if r[0] <= S::zero() {
        return vec![S::zero(); order];
    }
    // Tiny diagonal load keeps Levinson stable on near-singular frames.
    r[0] = r[0] * sc::<S>(1.0 + 1e-9);

    let mut a = vec![S::zero(); order + 1];
    let mut err = r[0];
    for i in 1..=order {
        let mut acc = r[i];
        for j in 1..i {
            acc -= a[j] * r[i - j];
        }
        let k = acc / err;
        let mut new_a = a.clone();
        new_a[i] = k;
        for j in 1..i {
            new_a[j] = a[j] - k * a[i - j];
        }
        a = new_a;
        err = err * (S::one() - k * k);
        if err <= S::zero() {
            break;
        }
    }
    a[1..].to_vec()
}

/// Prediction residual e[n] = x[n] - sum_k a[k] x[n-k], with x[<0] = 0.
pub fn inverse_filter<S: Scalar>(x: &[S], a: &[S]) -> Vec<S> {
    let mut e = Vec::with_capacity(x.len());
    for n in 0..x.len() {
        let mut pred = S::zero();
        for (k, &ak) in a.iter().enumerate() {
            if n > k {
                pred += ak * x[n - k - 1];
            }
        }
        e.push(x[n] - pred);
    }
    e
}
