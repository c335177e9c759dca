//! Euclidean projection onto the probability simplex.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// A point of the probability simplex `{w : w >= 0, sum w = 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexWeights(DVector<f64>);

impl SimplexWeights {
    /// Accepts `w` if it lies on the simplex within `1e-9`, then renormalizes.
    pub fn new(w: DVector<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Empty("simplex weights"));
        }
        let sum: f64 = w.iter().sum();
        if w.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("weights are not on the simplex"));
        }
        Ok(Self(w / sum))
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "simplex needs at least one vertex");
        Self(DVector::from_element(k, 1.0 / k as f64))
    }

    pub fn vertex(k: usize, j: usize) -> Self {
        assert!(j < k, "vertex index out of range");
        let mut w = DVector::zeros(k);
        w[j] = 1.0;
        Self(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    /// Index of the largest weight; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax_lowest(self.0.as_slice())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `argmin_{w in simplex} |w - v|_2` by sort-then-threshold.
pub fn project_simplex(v: &DVector<f64>) -> Result<SimplexWeights> {
    if v.is_empty() {
        return Err(Error::Empty("simplex projection input"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("simplex projection input".into()));
    }
    let mut w = v.clone();
    project_in_place(w.as_mut_slice());
    Ok(SimplexWeights(w))
}

/// In-place projection of a finite, nonempty slice.
pub(crate) fn project_in_place(v: &mut [f64]) {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
    // Removes the rounding drift of the threshold.
    let sum: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= sum;
    }
}
