use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

/// `(a/|a|) . (b/|b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "cosine similarity".into(),
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 {
        return Err(Error::ZeroNorm("cosine similarity (first argument)".into()));
    }
    if nb == 0.0 {
        return Err(Error::ZeroNorm("cosine similarity (second argument)".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Gradient of `cosine_similarity(a, b)` with respect to `a`:
/// `(b_hat - S a_hat) / |a|`.
pub fn cosine_gradient(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let s = cosine_similarity(a, b)?;
    let (na, nb) = (norm(a), norm(b));
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (y / nb - s * x / na) / na)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_values() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = cosine_similarity(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((s - 0.974632).abs() < 1e-6);
        assert!((s - 32.0 / (14f64.sqrt() * 77f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_differences_and_is_orthogonal() {
        let a = [0.3, -1.2, 2.0, 0.7];
        let b = [1.1, 0.4, -0.5, 2.2];
        let g = cosine_gradient(&a, &b).unwrap();
        assert!(dot(&g, &a).abs() < 1e-12);
        let h = 1e-6;
        for i in 0..a.len() {
            let mut p = a;
            let mut m = a;
            p[i] += h;
            m[i] -= h;
            let fd = (cosine_similarity(&p, &b).unwrap() - cosine_similarity(&m, &b).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_norm_rejected() {
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm(_))));
    }
}
