//! Central-difference verification of analytic gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{Result, StoneError};
use crate::params::{Bound, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Floor on the denominator of the relative error. Central differences at
/// `eps = 1e-5` carry about `1e-11·|f|` of rounding noise; at a `1e-4`
/// tolerance gradients below `1e-7` cannot be resolved in f64.
pub const REL_FLOOR: f64 = 1e-7;

/// Relative error at which a failing check also localizes the faulty op.
pub const SUSPECT_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// max |analytic − numeric| / max(|analytic|, |numeric|, REL_FLOOR)
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub evaluations: usize,
    /// Operation whose backward rule disagrees with its forward, when the
    /// check fails by at least [`SUSPECT_TOL`] and the fault can be isolated.
    pub suspect_op: Option<String>,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Adds uniform noise in `[-scale, scale]` to every parameter so that no
/// pre-activation sits exactly on a ReLU kink (zero-initialized biases do).
pub fn jitter(params: &mut ParamStore, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for v in params.get_mut(id).data_mut() {
            *v += rng.random_range(-scale..=scale);
        }
    }
}

fn evaluate<F>(f: &F, params: &ParamStore) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>>,
{
    evaluate_on(f, params, Tape::new())
}

fn evaluate_on<F>(f: &F, params: &ParamStore, tape: Tape) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>>,
{
    let bound = params.bind_frozen(&tape);
    let v = f(&tape, &bound)?.value();
    if v.numel() != 1 {
        return Err(StoneError::Contract(format!(
            "grad_check objective must be scalar, got {:?}",
            v.shape()
        )));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(StoneError::Numerical {
            context: "grad_check".into(),
            detail: format!("objective evaluated to {v}"),
        });
    }
    Ok(v)
}

/// Compares backward-pass gradients of `f` against central differences
/// for every scalar in `params`.
pub fn grad_check<F>(f: F, params: &ParamStore, eps: f64) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(StoneError::Contract(format!(
            "grad_check eps {eps} outside [1e-7, 1e-3]"
        )));
    }
    let analytic = {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let loss = f(&tape, &bound)?;
        let grads = tape.backward(loss)?;
        bound.grads(&grads)
    };

    let mut work = params.clone();
    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        evaluations: 0,
        suspect_op: None,
    };
    for id in params.ids() {
        for i in 0..params.get(id).numel() {
            let orig = params.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + eps;
            let up = evaluate(&f, &work)?;
            work.get_mut(id).data_mut()[i] = orig - eps;
            let down = evaluate(&f, &work)?;
            work.get_mut(id).data_mut()[i] = orig;
            report.evaluations += 2;

            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[id.index()].data()[i];
            let err = relative_error(a, numeric);
            if err > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = err;
                report.worst_param = params.name(id).to_string();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    if report.max_rel_err >= SUSPECT_TOL {
        report.suspect_op = locate_faulty_op(&f, params, eps)?;
    }
    Ok(report)
}

/// Probes the adjoint of every recorded node with central differences on
/// the node's own value. The mismatched node closest to the loss was fed a
/// wrong gradient by one of its consumers, whose own adjoints are correct.
pub fn locate_faulty_op<F>(f: &F, params: &ParamStore, eps: f64) -> Result<Option<String>>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let loss = f(&tape, &bound)?;
    let grads = tape.backward(loss)?;
    let root = loss.index();

    let mut worst = None;
    for id in (0..root).rev() {
        if !tape.needs_grad(id) {
            continue;
        }
        let n = tape.numel(id);
        let adjoint = grads.node(id);
        let analytic = |i: usize| adjoint.map_or(0.0, |g| g.data()[i]);
        let argmax = (0..n)
            .max_by(|&a, &b| analytic(a).abs().total_cmp(&analytic(b).abs()))
            .unwrap_or(0);
        let mut probes = vec![0, n / 2, n.saturating_sub(1), argmax];
        probes.sort_unstable();
        probes.dedup();
        for i in probes {
            let up = evaluate_on(f, params, Tape::nudged(id, i, eps))?;
            let down = evaluate_on(f, params, Tape::nudged(id, i, -eps))?;
            if relative_error(analytic(i), (up - down) / (2.0 * eps)) >= SUSPECT_TOL {
                worst = Some(id);
                break;
            }
        }
        if worst.is_some() {
            break;
        }
    }
    let Some(bad) = worst else { return Ok(None) };
    let mut names: Vec<&str> = (bad + 1..=root)
        .filter(|&c| tape.inputs(c).contains(&bad))
        .map(|c| tape.op_name(c))
        .collect();
    names.sort_unstable();
    names.dedup();
    Ok(Some(names.join("/")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(&[values.len()], values.to_vec()).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn linear_objective_is_exact() {
        let s = store(&[0.3, -1.1, 2.0]);
        let id = s.id("w").unwrap();
        let c = Tensor::from_vec(&[3], vec![1.5, -0.25, 4.0]).unwrap();
        let r = grad_check(
            |tape, p| p.var(id).mul(tape.constant(c.clone()))?.sum(),
            &s,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-10, "{r:?}");
    }

    #[test]
    fn constant_objective_gives_zero_both_ways() {
        let s = store(&[0.3, -1.1]);
        let r = grad_check(|tape, _| Ok(tape.constant(Tensor::scalar(2.0))), &s, 1e-5).unwrap();
        assert_eq!(r.max_rel_err, 0.0);
        assert_eq!(r.analytic, 0.0);
        assert_eq!(r.numeric, 0.0);
    }

    #[test]
    fn eps_range_enforced() {
        let s = store(&[1.0]);
        let id = s.id("w").unwrap();
        assert!(grad_check(|_, p| p.var(id).sum(), &s, 1e-2).is_err());
        assert!(grad_check(|_, p| p.var(id).sum(), &s, 1e-9).is_err());
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let s = store(&[1.0]);
        let r = grad_check(
            |tape, _| Ok(tape.constant(Tensor::scalar(f64::NAN))),
            &s,
            1e-5,
        );
        assert!(matches!(r, Err(StoneError::Numerical { .. })));
    }
}
