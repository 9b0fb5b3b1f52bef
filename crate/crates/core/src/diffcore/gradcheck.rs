//! Central finite-difference gradient checking.

use super::params::ParamStore;
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step `h`.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so entries where both
    /// gradients are ~0 compare absolutely.
    pub abs_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-4,
            tolerance: 1e-3,
            abs_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst entry, with both gradient estimates there.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(move |p| p.max_rel_error >= self.tolerance)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<L>(loss_fn: &L, store: &ParamStore<f64>) -> Result<f64>
where
    L: Fn(&mut Tape<f64>) -> Result<NodeId>,
{
    let mut tape = Tape::inference(store);
    let loss = loss_fn(&mut tape)?;
    tape.scalar(loss)
}

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// `(f(p+h) − f(p−h)) / 2h` for every scalar of every parameter in `store`.
///
/// `loss_fn` must build the same deterministic computation on whatever tape
/// it is handed; two differing evaluations at the base point are rejected.
pub fn grad_check<L>(loss_fn: L, store: &ParamStore<f64>, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    L: Fn(&mut Tape<f64>) -> Result<NodeId>,
{
    let base = evaluate(&loss_fn, store)?;
    if evaluate(&loss_fn, store)? != base {
        return Err(Error::Usage("grad_check: loss function is not deterministic".into()));
    }

    let analytic = {
        let mut tape = Tape::new(store);
        let loss = loss_fn(&mut tape)?;
        if tape.scalar(loss)? != base {
            return Err(Error::Usage("grad_check: loss function is not deterministic".into()));
        }
        tape.backward(loss)?.into_params()
    };

    let h = opts.step;
    let mut work = store.clone();
    let mut report = Vec::with_capacity(store.len());
    for id in store.ids() {
        let n = store.get(id).len();
        let grads = analytic.dense(id, n);
        let mut check = ParamCheck {
            name: store.name(id).to_owned(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..n {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + h;
            let plus = evaluate(&loss_fn, &work)?;
            work.get_mut(id).data_mut()[i] = orig - h;
            let minus = evaluate(&loss_fn, &work)?;
            work.get_mut(id).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(grads[i], numeric, opts.abs_floor);
            if err > check.max_rel_error || i == 0 {
                check.max_rel_error = err;
                check.worst_index = i;
                check.analytic = grads[i];
                check.numeric = numeric;
            }
        }
        report.push(check);
    }
    Ok(GradCheckReport {
        params: report,
        tolerance: opts.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;
    use std::cell::Cell;

    #[test]
    fn half_squared_norm() {
        let mut s = ParamStore::new();
        let x = s.add("x", Tensor::row_vector(vec![3.0]).unwrap()).unwrap();
        let report = grad_check(
            |t| {
                let xn = t.param(x);
                let sq = t.mul(xn, xn)?;
                let l = t.sum(sq)?;
                t.scale(l, 0.5)
            },
            &s,
            GradCheckOptions::default(),
        )
        .unwrap();
        let p = &report.params[0];
        assert!((p.analytic - 3.0).abs() < 1e-12);
        assert!((p.numeric - 3.0).abs() < 1e-8);
        assert!(p.max_rel_error < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let mut s = ParamStore::new();
        let _x = s.add("x", Tensor::row_vector(vec![1.0, 2.0]).unwrap()).unwrap();
        let report = grad_check(
            |t| t.constant(Tensor::filled(1, 1, 4.0)),
            &s,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.params[0].analytic, 0.0);
        assert_eq!(report.params[0].numeric, 0.0);
        assert!(report.passed());
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        let mut s = ParamStore::new();
        let _x = s.add("x", Tensor::row_vector(vec![1.0]).unwrap()).unwrap();
        let calls = Cell::new(0.0);
        let err = grad_check(
            |t| {
                calls.set(calls.get() + 1.0);
                t.constant(Tensor::filled(1, 1, calls.get()))
            },
            &s,
            GradCheckOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }
}
