use super::{AutodiffError, Tape, Tensor, Var};

/// Below this magnitude gradients are compared in absolute terms.
const RELATIVE_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / scale
}

fn evaluate<F, E>(f: &F, params: &[Tensor]) -> Result<f64, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Central finite-difference gradient of `f` for every coordinate of `params`.
pub fn central_difference<F, E>(f: &F, params: &[Tensor], epsilon: f64) -> Result<Vec<Tensor>, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = Tensor::zeros(params[p].shape());
        for c in 0..params[p].len() {
            let orig = work[p].data()[c];
            work[p].data_mut()[c] = orig + epsilon;
            let plus = evaluate(f, &work)?;
            work[p].data_mut()[c] = orig - epsilon;
            let minus = evaluate(f, &work)?;
            work[p].data_mut()[c] = orig;
            for value in [plus, minus] {
                if !value.is_finite() {
                    return Err(AutodiffError::NonFinite {
                        param: p,
                        coordinate: c,
                        value,
                    }
                    .into());
                }
            }
            grad.data_mut()[c] = (plus - minus) / (2.0 * epsilon);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Worst coordinate-wise relative error between reverse-mode gradients of `f`
/// and central finite differences with step `epsilon`.
///
/// `f` must be deterministic (no active dropout).
pub fn grad_check<F, E>(f: F, params: &[Tensor], epsilon: f64) -> Result<f64, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(AutodiffError::InvalidArgument(format!("epsilon must be positive, got {epsilon}")).into());
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let base = tape.value(loss).item();
    if !base.is_finite() {
        return Err(AutodiffError::NonFinite {
            param: 0,
            coordinate: 0,
            value: base,
        }
        .into());
    }
    let grads = tape.backward(loss)?;
    let numeric = central_difference(&f, params, epsilon)?;
    let mut worst: f64 = 0.0;
    for (var, num) in vars.iter().zip(&numeric) {
        let analytic = grads.get(*var).expect("leaf gradient");
        for (&a, &n) in analytic.data().iter().zip(num.data()) {
            worst = worst.max(relative_error(a, n));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let err = grad_check::<_, AutodiffError>(
            |tape, p| {
                let sq = tape.mul(p[0], p[0])?;
                tape.sum(sq)
            },
            &[Tensor::column(&[1.0, 2.0])],
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let err = grad_check::<_, AutodiffError>(
            |tape, _| Ok(tape.constant(Tensor::scalar(3.0))),
            &[Tensor::column(&[1.0, 2.0])],
            1e-4,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_finite_values_name_the_coordinate() {
        // log(x) with x = [1, 1e-5]: the second coordinate steps to a negative value.
        let res = grad_check::<_, AutodiffError>(
            |tape, p| {
                let l = tape.log(p[0])?;
                tape.sum(l)
            },
            &[Tensor::column(&[1.0, 1e-5])],
            1e-4,
        );
        match res {
            Err(AutodiffError::NonFinite { coordinate, .. }) => assert_eq!(coordinate, 1),
            other => panic!("expected NonFinite, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn rejects_non_positive_epsilon() {
        let res = grad_check::<_, AutodiffError>(
            |tape, p| tape.sum(p[0]),
            &[Tensor::scalar(1.0)],
            0.0,
        );
        assert!(res.is_err());
    }
}
