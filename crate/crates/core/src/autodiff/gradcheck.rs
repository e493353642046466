//! Central finite-difference verification of tape gradients.

use crate::error::TensorError;
use crate::tensor::Tensor;

use super::tape::{Tape, Var};

/// Outcome of a gradient check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    /// Number of scalar entries compared.
    pub checked: usize,
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` with central
/// differences `(f(x + eps) - f(x - eps)) / 2 eps`.
///
/// `f` must rebuild the graph from scratch on the given tape each call and
/// be deterministic. `probes` restricts the comparison to `(input, element)`
/// pairs; `None` checks every element of every input.
pub fn gradcheck<F>(
    inputs: &[Tensor<f64>],
    mut f: F,
    eps: f64,
    floor: f64,
    probes: Option<&[(usize, usize)]>,
) -> Result<GradCheck, TensorError>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut eval = |values: &[Tensor<f64>], grad: bool| -> Result<(f64, Vec<Tensor<f64>>), TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone(), grad)).collect();
        let out = f(&mut tape, &vars)?;
        let value = tape.value(out).item();
        if !grad {
            return Ok((value, Vec::new()));
        }
        let grads = tape.backward(out)?;
        let g = vars
            .iter()
            .zip(values)
            .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((value, g))
    };
    let (_, analytic) = eval(inputs, true)?;
    let all: Vec<(usize, usize)>;
    let probes = match probes {
        Some(p) => p,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
                .collect();
            &all
        }
    };
    let mut values = inputs.to_vec();
    let mut max_rel_err: f64 = 0.0;
    for &(i, j) in probes {
        let orig = values[i].data()[j];
        values[i].data_mut()[j] = orig + eps;
        let (plus, _) = eval(&values, false)?;
        values[i].data_mut()[j] = orig - eps;
        let (minus, _) = eval(&values, false)?;
        values[i].data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i].data()[j];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        max_rel_err = max_rel_err.max(rel);
    }
    Ok(GradCheck {
        max_rel_err,
        checked: probes.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn quadratic_passes() {
        let x = Tensor::from_fn(Shape::vector(5), |_, _, _, w| w as f64 - 2.3);
        let zero = |t: &mut Tape<f64>| t.constant(Tensor::zeros(Shape::vector(5)));
        let r = gradcheck(&[x], |t, v| {
            let z = zero(t);
            t.mse(v[0], z)
        }, 1e-5, 1e-6, None)
        .unwrap();
        assert_eq!(r.checked, 5);
        assert!(r.max_rel_err < 1e-7);
    }
}
