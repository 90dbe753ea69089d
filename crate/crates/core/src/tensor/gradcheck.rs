use crate::error::{Error, Result};

pub const DEFAULT_FD_EPS: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// Coordinate where the maximum occurred.
    pub worst_index: usize,
    pub numeric: Vec<f64>,
}

/// Compares `analytic` against central differences of `f` at `x`.
pub fn finite_difference_check<F>(mut f: F, x: &[f64], analytic: &[f64], eps: f64) -> Result<FdReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if analytic.len() != x.len() {
        return Err(Error::shape("finite_difference_check", x.len(), analytic.len()));
    }
    let mut probe = x.to_vec();
    let mut numeric = Vec::with_capacity(x.len());
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst_index: 0,
        numeric: Vec::new(),
    };
    for i in 0..x.len() {
        let (hi, lo) = (x[i] + eps, x[i] - eps);
        probe[i] = hi;
        let up = f(&probe)?;
        probe[i] = lo;
        let down = f(&probe)?;
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!("f not finite near coordinate {i}")));
        }
        // divide by the step actually representable at x[i]
        let n = (up - down) / (hi - lo);
        let err = relative_error(analytic[i], n);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
        numeric.push(n);
    }
    report.numeric = numeric;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Affine, Tape};
    use crate::rng::SeededRng;

    #[test]
    fn linear_is_exact() {
        let c = [0.5, -1.25, 3.0];
        let f = |x: &[f64]| Ok(x.iter().zip(&c).map(|(a, b)| a * b).sum());
        let r = finite_difference_check(f, &[0.1, 0.2, -0.3], &c, DEFAULT_FD_EPS).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    fn softmax_composite(x: &[f64], layer: &Affine) -> crate::Result<(f64, Vec<f64>)> {
        let mut t = Tape::new();
        let xv = t.leaf(x);
        let (w, b) = t.param(layer);
        let h = t.affine(w, b, xv)?;
        let s = t.softmax(h)?;
        let p = t.hadamard(s, h)?;
        let l = t.sum_squares(p)?;
        let g = t.backward(l, &[1.0])?;
        Ok((t.value(l)[0], g.get(xv).to_vec()))
    }

    #[test]
    fn softmax_composite_matches() {
        let mut rng = SeededRng::new(2);
        let layer = Affine::glorot(5, 4, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (_, g) = softmax_composite(&x, &layer).unwrap();
        let r = finite_difference_check(|p| Ok(softmax_composite(p, &layer)?.0), &x, &g, DEFAULT_FD_EPS)
            .unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");

        let mut bad = g.clone();
        bad[2] *= 1.5;
        bad[2] += 0.1;
        let r = finite_difference_check(|p| Ok(softmax_composite(p, &layer)?.0), &x, &bad, DEFAULT_FD_EPS)
            .unwrap();
        assert!(r.max_rel_error > 1e-2);
        assert_eq!(r.worst_index, 2);
    }

    #[test]
    fn non_finite_is_an_error() {
        let f = |x: &[f64]| Ok(1.0 / x[0]);
        assert!(matches!(
            finite_difference_check(f, &[0.0], &[0.0], 0.0),
            Err(Error::Numeric(_))
        ));
    }
}
