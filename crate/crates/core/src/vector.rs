//! Dense vector helpers shared by the refiner and the vector tables.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VectorError {
    #[error("zero-length (all-zero) vector")]
    ZeroVector,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("non-finite vector entry")]
    NonFinite,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `(a·b) / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, VectorError> {
    if a.len() != b.len() {
        return Err(VectorError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(VectorError::ZeroVector);
    }
    let cos = dot(a, b) / (na * nb);
    if !cos.is_finite() {
        return Err(VectorError::NonFinite);
    }
    Ok(cos.clamp(-1.0, 1.0))
}

/// Scales `v` to unit length in place.
pub fn normalize(v: &mut [f64]) -> Result<(), VectorError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(VectorError::NonFinite);
    }
    let n = norm(v);
    if n == 0.0 {
        return Err(VectorError::ZeroVector);
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}

/// Horizontal concatenation `[head, relation, tail]`.
pub fn concat3(head: &[f64], relation: &[f64], tail: &[f64]) -> Result<Vec<f64>, VectorError> {
    for other in [relation, tail] {
        if other.len() != head.len() {
            return Err(VectorError::DimensionMismatch {
                left: head.len(),
                right: other.len(),
            });
        }
    }
    let mut out = Vec::with_capacity(head.len() * 3);
    out.extend_from_slice(head);
    out.extend_from_slice(relation);
    out.extend_from_slice(tail);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_orthogonality() {
        let a = [0.3, -1.2, 4.0];
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn forty_five_degrees() {
        let c = cosine_similarity(&[1.0, 1.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(VectorError::ZeroVector)
        );
        assert_eq!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(VectorError::DimensionMismatch { left: 1, right: 2 })
        );
        assert!(normalize(&mut [0.0, 0.0]).is_err());
        assert!(concat3(&[1.0], &[1.0, 2.0], &[1.0]).is_err());
    }
}
