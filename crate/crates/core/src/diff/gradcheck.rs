use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backward_gradients, Binding, ParamGrads, ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};

/// Which coordinates of each parameter array get a finite-difference probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordSelection {
    All,
    /// Up to `per_array` distinct coordinates from every array.
    Sample { per_array: usize, seed: u64 },
}

/// Finite-difference formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stencil {
    /// `(f(p + h) - f(p - h)) / 2h`, error O(h^2).
    #[default]
    Central,
    /// `(-f(p + 2h) + 8f(p + h) - 8f(p - h) + f(p - 2h)) / 12h`, error
    /// O(h^4). Tolerates larger steps, so rounding noise on large losses
    /// stays small.
    FivePoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericEntry {
    pub name: String,
    pub index: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

fn evaluate<T, F>(f: &F, store: &ParamStore<T>) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<T>, &Binding) -> Result<Var>,
{
    let mut tape = Tape::new();
    let binding = store.bind_frozen(&mut tape);
    let out = f(&mut tape, &binding)?;
    tape.ensure_finite()?;
    Ok(tape.scalar(out)?.as_f64())
}

/// Central differences `(f(p + h) - f(p - h)) / 2h` at the selected
/// coordinates.
pub fn numeric_gradient<T, F>(
    f: &F,
    point: &ParamStore<T>,
    step: f64,
    coords: CoordSelection,
) -> Result<Vec<NumericEntry>>
where
    T: Real,
    F: Fn(&mut Tape<T>, &Binding) -> Result<Var>,
{
    numeric_gradient_with(f, point, step, coords, Stencil::Central)
}

pub fn numeric_gradient_with<T, F>(
    f: &F,
    point: &ParamStore<T>,
    step: f64,
    coords: CoordSelection,
    stencil: Stencil,
) -> Result<Vec<NumericEntry>>
where
    T: Real,
    F: Fn(&mut Tape<T>, &Binding) -> Result<Var>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::InvalidArgument("finite-difference step must be > 0".into()));
    }
    let mut rng = match coords {
        CoordSelection::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        CoordSelection::All => None,
    };
    let names: Vec<String> = point.names().map(|n| n.to_string()).collect();
    let mut out = Vec::new();
    for name in names {
        let len = point.get(&name).map(|a| a.len()).unwrap_or(0);
        let indices: Vec<usize> = match (&coords, rng.as_mut()) {
            (CoordSelection::Sample { per_array, .. }, Some(rng)) if *per_array < len => {
                let mut v = rand::seq::index::sample(rng, len, *per_array).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        for index in indices {
            let mut probe = point.clone();
            let original = probe.get(&name).expect("name from store").data()[index];
            let mut at = |offset: f64| -> Result<f64> {
                probe.get_mut(&name).expect("present").data_mut()[index] = original + T::lit(offset);
                evaluate(f, &probe)
            };
            let value = match stencil {
                Stencil::Central => (at(step)? - at(-step)?) / (2.0 * step),
                Stencil::FivePoint => {
                    let (p2, p1, m1, m2) = (at(2.0 * step)?, at(step)?, at(-step)?, at(-2.0 * step)?);
                    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step)
                }
            };
            out.push(NumericEntry {
                name: name.clone(),
                index,
                value,
            });
        }
    }
    Ok(out)
}

/// Largest relative error between analytic gradients and numeric probes.
pub fn max_relative_error<T: Real>(
    analytic: &ParamGrads<T>,
    numeric: &[NumericEntry],
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for e in numeric {
        let g = analytic
            .get(&e.name)
            .ok_or_else(|| Error::UnknownParameter(e.name.clone()))?;
        let err = relative_error(g.data()[e.index].as_f64(), e.value);
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((e.name.clone(), e.index));
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Compare reverse-mode gradients of a scalar function of the parameters
/// against central finite differences.
pub fn grad_check<T, F>(
    f: F,
    point: &ParamStore<T>,
    step: f64,
    coords: CoordSelection,
) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &Binding) -> Result<Var>,
{
    grad_check_with(f, point, step, coords, Stencil::Central)
}

pub fn grad_check_with<T, F>(
    f: F,
    point: &ParamStore<T>,
    step: f64,
    coords: CoordSelection,
    stencil: Stencil,
) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, &Binding) -> Result<Var>,
{
    let mut tape = Tape::new();
    let binding = point.bind(&mut tape);
    let out = f(&mut tape, &binding)?;
    tape.ensure_finite()?;
    let analytic = backward_gradients(&tape, out, point, &binding)?;
    drop(tape);
    let numeric = numeric_gradient_with(&f, point, step, coords, stencil)?;
    max_relative_error(&analytic, &numeric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Array;
    use alloc::vec;

    fn linear_store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("x", Array::new(vec![3], vec![0.3, -1.2, 2.0]).unwrap());
        s
    }

    fn linear(t: &mut Tape<f64>, b: &Binding) -> Result<Var> {
        let x = b.var("x")?;
        let w = t.constant(3, 1, vec![2.0, -1.0, 0.5])?;
        let y = t.matmul(x, w)?;
        Ok(t.sum(y))
    }

    #[test]
    fn linear_function_is_exact() {
        let r = grad_check(linear, &linear_store(), 1e-5, CoordSelection::All).unwrap();
        assert!(r.max_rel_error < 1e-8, "{:?}", r);
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn doubled_gradient_reports_one_half() {
        let store = linear_store();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let out = linear(&mut tape, &b).unwrap();
        let mut g = backward_gradients(&tape, out, &store, &b).unwrap();
        for v in g.get_mut("x").unwrap().data_mut() {
            *v *= 2.0;
        }
        let n = numeric_gradient(&linear, &store, 1e-5, CoordSelection::All).unwrap();
        let r = max_relative_error(&g, &n).unwrap();
        assert!((r.max_rel_error - 0.5).abs() < 1e-8, "{:?}", r);
    }

    #[test]
    fn rejects_non_positive_step() {
        assert!(grad_check(linear, &linear_store(), 0.0, CoordSelection::All).is_err());
    }
}
