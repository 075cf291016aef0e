//! Smooth-inverse-frequency text embeddings.
//!
//! A text is embedded as the average of its word vectors, each weighted by
//! `a / (a + f(w))` so that frequent words count less. The embeddings of a
//! collection then lose their projection onto the collection's first
//! singular direction, which mostly carries what all texts share.
//!
//! The singular direction is found by power iteration on the `D × D` Gram
//! matrix `Σ_t v_t v_tᵀ`, starting from the normalized all-ones vector. If
//! that start lies in the Gram matrix's null space, the first standard basis
//! vector with a non-null image is used instead.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{FreqTable, Tokenizer, VectorTable};

#[derive(Debug, Error, PartialEq)]
pub enum SifError {
    #[error("degenerate embedding matrix: {0}")]
    Degenerate(String),
    #[error("invalid SIF parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SifParams {
    /// Smoothing parameter `a`.
    pub a: f64,
    pub power_iters: usize,
    /// Stop once the direction moves less than this between iterations.
    pub power_tol: f64,
}

impl Default for SifParams {
    fn default() -> Self {
        Self {
            a: 1e-3,
            power_iters: 200,
            power_tol: 1e-8,
        }
    }
}

impl SifParams {
    pub fn validate(&self) -> Result<(), SifError> {
        if !(self.a > 0.0) {
            return Err(SifError::Params(format!("a must be positive, got {}", self.a)));
        }
        if !(self.power_tol > 0.0) || self.power_iters == 0 {
            return Err(SifError::Params("power iteration needs tol > 0 and iters > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SifResult {
    /// One row per text.
    pub embeddings: Array2<f64>,
    /// Unit-norm first singular direction that was removed.
    pub first_singular_vector: Array1<f64>,
}

/// Weight of a word with relative frequency `f`.
pub fn sif_weight(a: f64, f: f64) -> f64 {
    a / (a + f)
}

/// Frequency-weighted average of the in-vocabulary word vectors of `text`.
///
/// `|t|` counts in-vocabulary tokens only; a text without any yields the
/// zero vector.
pub fn sif_weighted_average(
    text: &str,
    tokenizer: Tokenizer,
    table: &VectorTable,
    freq: &FreqTable,
    a: f64,
) -> Array1<f64> {
    let mut sum = Array1::<f64>::zeros(table.dim());
    let mut count = 0usize;
    for token in tokenizer.tokenize(text) {
        if let Some(v) = table.get(&token) {
            let w = sif_weight(a, freq.freq(&token));
            sum.scaled_add(w, &ArrayView1::from(v));
            count += 1;
        }
    }
    if count > 0 {
        sum /= count as f64;
    }
    sum
}

/// Dominant right singular direction of `m` (rows are texts).
pub fn first_singular_vector(m: &Array2<f64>, params: &SifParams) -> Result<Array1<f64>, SifError> {
    params.validate()?;
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(SifError::Degenerate("empty matrix".into()));
    }
    if m.iter().all(|&x| x == 0.0) {
        return Err(SifError::Degenerate("all rows are zero".into()));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(SifError::Degenerate("non-finite entries".into()));
    }
    let gram = m.t().dot(m);
    let dim = gram.nrows();
    let scale = gram.diag().sum();

    let ones = Array1::from_elem(dim, 1.0 / (dim as f64).sqrt());
    let mut x = std::iter::once(ones)
        .chain((0..dim).map(|i| {
            let mut e = Array1::zeros(dim);
            e[i] = 1.0;
            e
        }))
        .find(|v| norm(&gram.dot(v)) > 1e-12 * scale)
        .ok_or_else(|| SifError::Degenerate("Gram matrix is numerically zero".into()))?;

    for _ in 0..params.power_iters {
        let mut y = gram.dot(&x);
        let ny = norm(&y);
        if ny == 0.0 {
            break;
        }
        y /= ny;
        let change = (&y - &x)
            .mapv(|d| d * d)
            .sum()
            .sqrt()
            .min((&y + &x).mapv(|d| d * d).sum().sqrt());
        x = y;
        if change < params.power_tol {
            break;
        }
    }
    Ok(x)
}

/// Replaces every row `v` by `v - u uᵀ v`.
pub fn remove_direction(m: &Array2<f64>, u: &Array1<f64>) -> Array2<f64> {
    let proj = m.dot(u);
    let mut out = m.clone();
    for (mut row, p) in out.axis_iter_mut(Axis(0)).zip(proj.iter()) {
        row.scaled_add(-p, u);
    }
    out
}

/// Removes the projection of every row onto the first singular direction.
pub fn remove_first_pc(m: &Array2<f64>, params: &SifParams) -> Result<SifResult, SifError> {
    let u = first_singular_vector(m, params)?;
    Ok(SifResult {
        embeddings: remove_direction(m, &u),
        first_singular_vector: u,
    })
}

/// Full SIF over a collection of texts.
pub fn sif_embed<S: AsRef<str>>(
    texts: &[S],
    tokenizer: Tokenizer,
    table: &VectorTable,
    freq: &FreqTable,
    params: &SifParams,
) -> Result<SifResult, SifError> {
    params.validate()?;
    let mut m = Array2::zeros((texts.len(), table.dim()));
    for (mut row, t) in m.axis_iter_mut(Axis(0)).zip(texts) {
        row.assign(&sif_weighted_average(t.as_ref(), tokenizer, table, freq, params.a));
    }
    remove_first_pc(&m, params)
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn table() -> VectorTable {
        VectorTable::from_entries(
            2,
            [("w", vec![2.0, -4.0]), ("z", vec![1.0, 1.0])]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v)),
        )
        .unwrap()
    }

    #[test]
    fn unseen_word_has_weight_one() {
        let freq = FreqTable::from_tokens(["other"]).unwrap();
        let v = sif_weighted_average("w", Tokenizer::WhitespaceLower, &table(), &freq, 1e-3);
        assert_eq!(v, array![2.0, -4.0]);
    }

    #[test]
    fn frequency_equal_to_a_halves_the_vector() {
        // f(w) = 1/4 with a = 1/4
        let freq = FreqTable::from_tokens(["w", "x", "y", "q"]).unwrap();
        let v = sif_weighted_average("w", Tokenizer::WhitespaceLower, &table(), &freq, 0.25);
        assert_eq!(v, array![1.0, -2.0]);
    }

    #[test]
    fn repetition_of_one_type_cancels() {
        let freq = FreqTable::from_tokens(["w", "z", "z"]).unwrap();
        let once = sif_weighted_average("w", Tokenizer::WhitespaceLower, &table(), &freq, 1e-3);
        let twice = sif_weighted_average("w w", Tokenizer::WhitespaceLower, &table(), &freq, 1e-3);
        assert_eq!(once, twice);
    }

    #[test]
    fn single_row_becomes_zero() {
        let m = array![[3.0, 4.0, 0.0]];
        let r = remove_first_pc(&m, &SifParams::default()).unwrap();
        assert!(r.embeddings.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn identical_rows_become_zero() {
        let m = array![[1.0, -2.0, 0.5], [1.0, -2.0, 0.5]];
        let r = remove_first_pc(&m, &SifParams::default()).unwrap();
        assert!(r.embeddings.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn all_zero_rejected() {
        let m = Array2::<f64>::zeros((3, 4));
        assert!(matches!(
            remove_first_pc(&m, &SifParams::default()),
            Err(SifError::Degenerate(_))
        ));
    }

    #[test]
    fn start_vector_in_null_space() {
        // all-ones is orthogonal to the only row
        let m = array![[1.0, -1.0]];
        let u = first_singular_vector(&m, &SifParams::default()).unwrap();
        assert!((u[0].abs() - 0.5f64.sqrt()).abs() < 1e-9);
        assert!((u[0] + u[1]).abs() < 1e-9);
    }

    #[test]
    fn random_rows_orthogonal_to_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Array2::from_shape_simple_fn((5, 8), || StandardNormal.sample(&mut rng));
        let r = remove_first_pc(&m, &SifParams::default()).unwrap();
        assert!((norm(&r.first_singular_vector) - 1.0).abs() < 1e-9);
        for row in r.embeddings.rows() {
            assert!(row.dot(&r.first_singular_vector).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn weights_in_unit_interval_and_decreasing(a in 1e-5f64..1.0, f1 in 0.0f64..1.0, f2 in 0.0f64..1.0) {
            let (w1, w2) = (sif_weight(a, f1), sif_weight(a, f2));
            prop_assert!(w1 > 0.0 && w1 <= 1.0);
            if f1 < f2 {
                prop_assert!(w1 >= w2);
            }
        }

        #[test]
        fn energy_never_increases(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = Array2::from_shape_simple_fn((6, 4), || StandardNormal.sample(&mut rng));
            let r = remove_first_pc(&m, &SifParams::default()).unwrap();
            let before: f64 = m.iter().map(|x| x * x).sum();
            let after: f64 = r.embeddings.iter().map(|x| x * x).sum();
            prop_assert!(after <= before + 1e-12);
        }
    }
}
