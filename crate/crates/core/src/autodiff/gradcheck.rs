use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Gradients smaller than this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct InputError {
    pub max_abs: f64,
    pub max_rel: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub inputs: Vec<InputError>,
    pub max_abs: f64,
    pub max_rel: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares reverse-mode gradients of the scalar function `f` against central
/// differences `(f(x+h) - f(x-h)) / 2h`, coordinate by coordinate.
///
/// Relative error is `|analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.
/// A function that is not differentiable at `points` shows up as a failed
/// report, not as an error.
pub fn check_gradients<F>(f: F, points: &[Tensor], step: f64, tolerance: f64) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |pts: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pts.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut inputs = Vec::with_capacity(points.len());
    let mut work: Vec<Tensor> = points.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v, points[k].shape());
        let mut err = InputError { max_abs: 0.0, max_rel: 0.0 };
        for i in 0..points[k].numel() {
            let orig = points[k].data()[i];
            work[k].data_mut()[i] = orig + step;
            let fp = eval(&work)?;
            work[k].data_mut()[i] = orig - step;
            let fm = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic.data()[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            err.max_abs = err.max_abs.max(abs);
            err.max_rel = err.max_rel.max(rel);
        }
        inputs.push(err);
    }
    let max_abs = inputs.iter().map(|e| e.max_abs).fold(0.0, f64::max);
    let max_rel = inputs.iter().map(|e| e.max_rel).fold(0.0, f64::max);
    Ok(GradReport { inputs, max_abs, max_rel, tolerance, passed: max_rel <= tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_zero_error() {
        let p = Tensor::matrix(2, 2, vec![0.3, -1.0, 2.0, 5.0]).unwrap();
        let r = check_gradients(|t, v| t.sum(v[0], None), &[p], 1e-5, 1e-4).unwrap();
        assert!(r.passed);
        assert!(r.max_abs < 1e-9);
    }

    #[test]
    fn softmax_first_element() {
        let p = Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let r = check_gradients(
            |t, v| {
                let s = t.softmax(v[0])?;
                t.slice(s, 1, 0, 1)
            },
            &[p],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel < 1e-6, "{r:?}");
    }

    #[test]
    fn non_differentiable_point_fails_without_crashing() {
        // relu at its kink: analytic slope 0, central difference 1/2.
        let p = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        let r = check_gradients(
            |t, v| {
                let a = t.relu(v[0])?;
                t.sum(a, None)
            },
            &[p],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!r.passed);
    }
}
