use super::Vector;
use crate::error::{Error, Result};

/// Numerically stabilized softmax over all entries.
pub fn softmax(x: &[f64]) -> Result<Vector> {
    if x.is_empty() {
        return Err(Error::shape("softmax", "len >= 1", 0));
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(Vector(exps.into_iter().map(|e| e / total).collect()))
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vector> {
    if a.len() != b.len() {
        return Err(Error::shape("hadamard", a.len(), b.len()));
    }
    Ok(Vector(a.iter().zip(b).map(|(x, y)| x * y).collect()))
}

pub fn concat(parts: &[&[f64]]) -> Vector {
    Vector(parts.iter().flat_map(|p| p.iter().copied()).collect())
}

pub fn relu(x: &[f64]) -> Vector {
    Vector(x.iter().map(|&v| v.max(0.0)).collect())
}
