//! Central finite differences, the oracle that backward is checked against.

use std::collections::BTreeMap;

use super::{ParamStore, Result, Tensor, TensorError};

/// Gradient of `f` at `params` by `(f(x+h) − f(x−h)) / 2h`, one coordinate
/// at a time.
///
/// `f` is evaluated twice at the unperturbed point first; if the two values
/// differ bitwise the function is rejected as non-deterministic.
pub fn finite_difference_grad<Func>(f: Func, params: &ParamStore<f64>, step: f64) -> Result<BTreeMap<String, Tensor<f64>>>
where
    Func: Fn(&ParamStore<f64>) -> Result<f64>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(TensorError::Invalid { op: "finite_difference_grad", reason: format!("step {step} must be positive") });
    }
    let first = f(params)?;
    let second = f(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NonDeterministic { first, second });
    }

    let mut work = params.clone();
    let mut out = BTreeMap::new();
    for (name, tensor) in params.iter() {
        let mut grad = vec![0.0; tensor.len()];
        for (i, g) in grad.iter_mut().enumerate() {
            let mut data = tensor.data().to_vec();
            data[i] = tensor.data()[i] + step;
            work.insert(name, Tensor::new(tensor.shape().to_vec(), data.clone())?);
            let plus = f(&work)?;
            data[i] = tensor.data()[i] - step;
            work.insert(name, Tensor::new(tensor.shape().to_vec(), data)?);
            let minus = f(&work)?;
            *g = (plus - minus) / (2.0 * step);
        }
        work.insert(name, tensor.clone());
        out.insert(name.to_string(), Tensor::new(tensor.shape().to_vec(), grad)?);
    }
    Ok(out)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both are exactly zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use super::*;

    fn store(name: &str, shape: &[usize], data: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert(name, Tensor::new(shape.to_vec(), data.to_vec()).unwrap());
        s
    }

    #[test]
    fn square_at_three() {
        let p = store("x", &[1], &[3.0]);
        let g = finite_difference_grad(|p| Ok(p.get("x").unwrap().item().powi(2)), &p, 1e-5).unwrap();
        assert!((g["x"].item() - 6.0).abs() < 1e-8);
    }

    #[test]
    fn sum_of_softmax_has_zero_gradient() {
        let p = store("x", &[4], &[0.3, -1.2, 2.5, 0.0]);
        let f = |p: &ParamStore<f64>| {
            let x = p.get("x").unwrap().data();
            let m = x.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            Ok(e.iter().map(|v| v / s).sum())
        };
        let g = finite_difference_grad(f, &p, 1e-5).unwrap();
        assert!(g["x"].data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        let p = store("x", &[1], &[1.0]);
        let calls = Cell::new(0.0);
        let f = |_: &ParamStore<f64>| {
            calls.set(calls.get() + 1.0);
            Ok(calls.get())
        };
        assert!(matches!(finite_difference_grad(f, &p, 1e-5), Err(TensorError::NonDeterministic { .. })));
    }
}
