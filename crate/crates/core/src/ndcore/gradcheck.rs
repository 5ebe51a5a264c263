use super::{backward, Bound, ParamSet, Tape, Var};
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst element.
    pub worst: (String, usize),
    pub checked: usize,
}

/// Relative error with an absolute floor so that gradients at rounding
/// scale do not dominate.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `backward` against central finite differences for every
/// element of `params`.
///
/// `f` builds a scalar loss on the tape from the bound parameters.
pub fn grad_check<F>(f: F, params: &ParamSet, eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::invalid(format!("eps must be in (0, 1e-2], got {eps}")));
    }
    let eval = |p: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let b = tape.bind(p)?;
        let loss = f(&mut tape, &b)?;
        let v = tape.value(loss);
        if !v.is_scalar() {
            return Err(Error::NonScalarLoss(v.shape().to_vec()));
        }
        if !v.item().is_finite() {
            return Err(Error::NonFinite("function value during grad check".into()));
        }
        Ok(v.item())
    };

    let analytic = {
        let mut tape = Tape::new();
        let b = tape.bind(params)?;
        let loss = f(&mut tape, &b)?;
        backward(&tape, loss)?
    };
    eval(params)?;

    let mut probe = params.clone();
    let mut worst = (String::new(), 0);
    let mut max_rel = 0.0f64;
    let mut checked = 0;
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let n = params.get(name).map_or(0, |t| t.len());
        for i in 0..n {
            let orig = params.get(name).expect("name").data()[i];
            probe.get_mut(name)?.data_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe.get_mut(name)?.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.get(name).map_or(0.0, |g| g.data()[i]);
            let r = rel_error(a, numeric);
            if r > max_rel {
                max_rel = r;
                worst = (name.clone(), i);
            }
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: max_rel,
        worst,
        checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::{Role, Tensor};

    fn params() -> ParamSet {
        let mut p = ParamSet::new(Role::Trainable);
        p.insert("a", Tensor::new(vec![3], vec![0.3, -1.2, 2.0]).unwrap())
            .unwrap();
        p
    }

    #[test]
    fn linear_function_is_exact() {
        let r = grad_check(
            |tape, b| {
                let a = b.get("a")?;
                let s = tape.scale(a, 2.5);
                Ok(tape.sum(s))
            },
            &params(),
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn planted_wrong_partial_is_caught() {
        // d/dx x^2 reported as 3x.
        let r = grad_check(
            |tape, b| {
                let a = b.get("a")?;
                let s = tape.map(a, |x| x * x, |x| 3.0 * x);
                Ok(tape.sum(s))
            },
            &params(),
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error > 1e-2, "{r:?}");
    }

    #[test]
    fn non_finite_value_aborts() {
        let err = grad_check(
            |tape, b| {
                let a = b.get("a")?;
                let s = tape.map(a, |x| x.ln(), |x| 1.0 / x);
                Ok(tape.sum(s))
            },
            &params(),
            1e-5,
        );
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn eps_range_enforced() {
        let f = |tape: &mut Tape, b: &Bound| -> Result<Var> {
            let a = b.get("a")?;
            Ok(tape.sum(a))
        };
        assert!(grad_check(f, &params(), 0.0).is_err());
        assert!(grad_check(f, &params(), 0.1).is_err());
    }
}
