use crate::{NnError, Result, Scalar, Tensor};

/// Softmax of one row restricted to the allowed entries. Disallowed entries
/// are written as exact zeros. Returns `false` (and an all-zero row) when
/// every entry is disallowed.
pub(crate) fn masked_softmax_row<T: Scalar>(
    logits: &[T],
    disallow: &[bool],
    out: &mut [T],
) -> bool {
    debug_assert_eq!(logits.len(), disallow.len());
    let mut max = T::neg_infinity();
    for (&x, &d) in logits.iter().zip(disallow) {
        if !d && x > max {
            max = x;
        }
    }
    if max == T::neg_infinity() {
        out.iter_mut().for_each(|o| *o = T::zero());
        return false;
    }
    let mut total = T::zero();
    for ((o, &x), &d) in out.iter_mut().zip(logits).zip(disallow) {
        *o = if d { T::zero() } else { (x - max).exp() };
        total += *o;
    }
    let inv = T::one() / total;
    out.iter_mut().for_each(|o| *o *= inv);
    true
}

/// Softmax over the entries of `logits` whose `disallow` flag is false.
/// Disallowed entries get probability exactly zero.
pub fn masked_softmax<T: Scalar>(logits: &[T], disallow: &[bool]) -> Result<Vec<T>> {
    if logits.len() != disallow.len() {
        return Err(NnError::ShapeMismatch {
            expected: vec![logits.len()],
            actual: vec![disallow.len()],
        });
    }
    let mut out = vec![T::zero(); logits.len()];
    if masked_softmax_row(logits, disallow, &mut out) {
        Ok(out)
    } else {
        Err(NnError::AllMasked)
    }
}

/// Row-wise softmax probabilities, per-sample weights and the weighted mean
/// negative log-likelihood. Shared by the tape op and the free function.
pub(crate) fn cross_entropy_parts<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
    class_weights: &[T],
) -> (Vec<T>, Vec<T>, T, T) {
    let (batch, classes) = logits.rows_cols();
    assert_eq!(batch, labels.len(), "one label per logits row");
    assert_eq!(classes, class_weights.len(), "one weight per class");
    let allow = vec![false; classes];
    let mut probs = vec![T::zero(); batch * classes];
    let mut sample_w = Vec::with_capacity(batch);
    let mut numer = T::zero();
    let mut denom = T::zero();
    for (b, &y) in labels.iter().enumerate() {
        assert!(y < classes, "label {y} out of range for {classes} classes");
        let row = logits.row(b);
        let p = &mut probs[b * classes..(b + 1) * classes];
        masked_softmax_row(row, &allow, p);
        // log-softmax through the log-sum-exp to keep tiny probabilities accurate
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
        let w = class_weights[y];
        sample_w.push(w);
        numer += w * (lse - row[y]);
        denom += w;
    }
    (probs, sample_w, numer, denom)
}

/// Class-weighted mean cross-entropy:
/// `sum_b w[y_b] * -log softmax(logits_b)[y_b] / sum_b w[y_b]`.
///
/// Returns zero when every sample has zero weight.
pub fn weighted_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
    class_weights: &[T],
) -> T {
    let (_, _, numer, denom) = cross_entropy_parts(logits, labels, class_weights);
    if denom > T::zero() {
        numer / denom
    } else {
        T::zero()
    }
}
