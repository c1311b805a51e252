//! Dense vectors, similarity measures and exact nearest-slot search.
//!
//! Everything here is a pure function of its inputs. Stored keys are never
//! normalized: cosine is evaluated on the raw vectors, so a consolidated slot
//! key is a plain arithmetic mean of the instance keys that went into it.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite, fixed-length real vector.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(elements: Vec<f64>) -> Result<Self> {
        if let Some(i) = elements.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self(elements))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// Wraps elements already known to be finite (internal arithmetic results).
    pub(crate) fn from_finite(elements: Vec<f64>) -> Self {
        debug_assert!(elements.iter().all(|x| x.is_finite()));
        Self(elements)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl Deref for DenseVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for DenseVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for DenseVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DenseVector> for Vec<f64> {
    fn from(v: DenseVector) -> Self {
        v.0
    }
}

impl fmt::Debug for DenseVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityKind {
    #[default]
    Cosine,
    #[serde(alias = "euclidean")]
    NegativeEuclidean,
}

impl SimilarityKind {
    pub fn tag(self) -> u8 {
        match self {
            SimilarityKind::Cosine => 0,
            SimilarityKind::NegativeEuclidean => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(SimilarityKind::Cosine),
            1 => Some(SimilarityKind::NegativeEuclidean),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SimilarityKind::Cosine => "cosine",
            SimilarityKind::NegativeEuclidean => "negative-euclidean",
        }
    }
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(SimilarityKind::Cosine),
            "euclidean" | "negative-euclidean" => Ok(SimilarityKind::NegativeEuclidean),
            other => Err(Error::InvalidInput(format!("unknown similarity '{other}'"))),
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Similarity score where higher means more alike under both kinds.
pub fn similarity(a: &[f64], b: &[f64], kind: SimilarityKind) -> Result<f64> {
    Error::check_dim(a.len(), b.len())?;
    match kind {
        SimilarityKind::Cosine => {
            let (na, nb) = (norm(a), norm(b));
            if na == 0.0 || nb == 0.0 {
                return Err(Error::ZeroVector);
            }
            // Rounding can push |cos| a hair past 1.
            Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
        }
        SimilarityKind::NegativeEuclidean => Ok(-euclidean_distance(a, b)),
    }
}

/// Exhaustive argmax of similarity over the occupied entries of `keys`.
///
/// Returns `Ok(None)` when no entry is occupied. Ties go to the lowest index.
/// Under cosine a zero stored key scores 0 (treated as orthogonal); a zero
/// query is rejected.
pub fn nearest_slot<K: AsRef<[f64]>>(
    keys: &[K],
    occupied: &[bool],
    query: &[f64],
    kind: SimilarityKind,
) -> Result<Option<(usize, f64)>> {
    if keys.len() != occupied.len() {
        return Err(Error::InvalidInput(format!("{} keys but {} occupancy flags", keys.len(), occupied.len())));
    }
    let query_norm = norm(query);
    if kind == SimilarityKind::Cosine && query_norm == 0.0 {
        return Err(Error::ZeroVector);
    }

    let mut best: Option<(usize, f64)> = None;
    for (i, key) in keys.iter().enumerate() {
        if !occupied[i] {
            continue;
        }
        let key = key.as_ref();
        Error::check_dim(key.len(), query.len())?;
        let score = match kind {
            SimilarityKind::Cosine => {
                let key_norm = norm(key);
                if key_norm == 0.0 {
                    0.0
                } else {
                    (dot(key, query) / (key_norm * query_norm)).clamp(-1.0, 1.0)
                }
            }
            SimilarityKind::NegativeEuclidean => -euclidean_distance(key, query),
        };
        match best {
            Some((_, s)) if score <= s => {}
            _ => best = Some((i, score)),
        }
    }
    Ok(best)
}

/// Chord length matching a cosine threshold on the unit sphere:
/// for unit `a`, `b`, `cos(a, b) >= r` iff `|a - b| <= sqrt(2 (1 - r))`.
pub fn threshold_to_radius(r: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&r) {
        return Err(Error::InvalidInput(format!("similarity threshold {r} outside [-1, 1]")));
    }
    Ok((2.0 * (1.0 - r)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const COS: SimilarityKind = SimilarityKind::Cosine;

    #[test]
    fn cosine_examples() {
        assert_eq!(similarity(&[1.0, 0.0], &[0.0, 1.0], COS).unwrap(), 0.0);
        assert!((similarity(&[1.0, 1.0], &[1.0, 1.0], COS).unwrap() - 1.0).abs() < 1e-15);
        let s = similarity(&[1.0, 0.0], &[1.0, 1.0], COS).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn negative_euclidean() {
        let s = similarity(&[0.0, 0.0], &[3.0, 4.0], SimilarityKind::NegativeEuclidean).unwrap();
        assert_eq!(s, -5.0);
    }

    #[test]
    fn similarity_errors() {
        assert_eq!(similarity(&[1.0], &[1.0, 2.0], COS), Err(Error::DimensionMismatch { expected: 1, found: 2 }));
        assert_eq!(similarity(&[0.0, 0.0], &[1.0, 2.0], COS), Err(Error::ZeroVector));
        // zero vectors are fine for the euclidean kind
        assert!(similarity(&[0.0], &[0.0], SimilarityKind::NegativeEuclidean).is_ok());
    }

    #[test]
    fn nearest_examples() {
        let keys = [vec![1.0, 0.0], vec![0.0, 1.0]];
        let (i, s) = nearest_slot(&keys, &[true, true], &[0.9, 0.1], COS).unwrap().unwrap();
        assert_eq!(i, 0);
        assert!((s - 0.9 / (0.82f64).sqrt()).abs() < 1e-12);
        assert!((s - 0.99388).abs() < 1e-5);

        let (i, s) = nearest_slot(&keys, &[true, true], &[0.6, 0.8], COS).unwrap().unwrap();
        assert_eq!(i, 1);
        assert!((s - 0.8).abs() < 1e-12);

        let dup = [vec![1.0, 0.0], vec![1.0, 0.0]];
        assert_eq!(nearest_slot(&dup, &[true, true], &[1.0, 0.0], COS).unwrap(), Some((0, 1.0)));
    }

    #[test]
    fn nearest_skips_unoccupied_and_signals_empty() {
        let keys = [vec![1.0, 0.0], vec![0.0, 1.0]];
        let hit = nearest_slot(&keys, &[false, true], &[1.0, 0.0], COS).unwrap();
        assert_eq!(hit.map(|h| h.0), Some(1));
        assert_eq!(nearest_slot(&keys, &[false, false], &[1.0, 0.0], COS).unwrap(), None);
        assert_eq!(nearest_slot(&keys, &[true, true], &[0.0, 0.0], COS), Err(Error::ZeroVector));
    }

    #[test]
    fn radius_examples() {
        assert_eq!(threshold_to_radius(1.0).unwrap(), 0.0);
        assert_eq!(threshold_to_radius(-1.0).unwrap(), 2.0);
        assert!((threshold_to_radius(0.93).unwrap() - 0.14f64.sqrt()).abs() < 1e-15);
        assert!((threshold_to_radius(0.93).unwrap() - 0.37417).abs() < 1e-5);
        assert!(threshold_to_radius(1.5).is_err());
        assert!(threshold_to_radius(f64::NAN).is_err());
    }

    #[test]
    fn dense_vector_rejects_non_finite() {
        assert_eq!(DenseVector::new(vec![1.0, f64::NAN]), Err(Error::NonFinite(1)));
        let v: std::result::Result<DenseVector, _> = serde_json::from_str("[1.0, 2.0]");
        assert_eq!(v.unwrap().dim(), 2);
    }

    fn unit(v: Vec<f64>) -> Option<Vec<f64>> {
        let n = norm(&v);
        (n > 1e-6).then(|| v.into_iter().map(|x| x / n).collect())
    }

    proptest! {
        #[test]
        fn radius_matches_cosine_threshold(
            a in prop::collection::vec(-1.0f64..1.0, 8),
            b in prop::collection::vec(-1.0f64..1.0, 8),
            r in -1.0f64..1.0,
        ) {
            let (Some(a), Some(b)) = (unit(a), unit(b)) else { return Ok(()) };
            let sim = similarity(&a, &b, COS).unwrap();
            let dist = euclidean_distance(&a, &b);
            let radius = threshold_to_radius(r).unwrap();
            // |a-b|^2 = 2 - 2 cos for unit vectors; only check away from the boundary
            if (sim - r).abs() > 1e-9 {
                prop_assert_eq!(sim >= r, dist <= radius);
            }
            prop_assert!((dist * dist - radius * radius - 2.0 * (r - sim)).abs() < 1e-9);
        }

        #[test]
        fn similarity_is_symmetric(
            a in prop::collection::vec(-10.0f64..10.0, 1..16),
            seed in any::<u64>(),
        ) {
            let b: Vec<f64> = a.iter().enumerate()
                .map(|(i, x)| x * 0.5 + ((seed >> (i % 60)) & 7) as f64 - 3.0)
                .collect();
            for kind in [COS, SimilarityKind::NegativeEuclidean] {
                match (similarity(&a, &b, kind), similarity(&b, &a, kind)) {
                    (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
                    (Err(x), Err(y)) => prop_assert_eq!(x, y),
                    _ => prop_assert!(false, "asymmetric error"),
                }
            }
        }
    }
}
