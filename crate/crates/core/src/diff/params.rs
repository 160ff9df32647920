use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;

use super::{Array, Real, Tape, Var};
use crate::error::{Error, Result};

/// Named parameter arrays. Storage is reference counted so binding to a tape
/// does not copy; updates copy-on-write once the tape is gone.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    arrays: BTreeMap<String, Arc<Array<T>>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            arrays: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, array: Array<T>) {
        self.arrays.insert(name.into(), Arc::new(array));
    }

    pub fn get(&self, name: &str) -> Option<&Array<T>> {
        self.arrays.get(name).map(|a| a.as_ref())
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array<T>> {
        self.arrays.get_mut(name).map(Arc::make_mut)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(|k| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array<T>)> {
        self.arrays.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.arrays.values().map(|a| a.len()).sum()
    }

    /// Total parameters under a name prefix.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.arrays
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, a)| a.len())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            arrays: self
                .arrays
                .iter()
                .map(|(k, v)| (k.clone(), Arc::new(v.cast())))
                .collect(),
        }
    }

    /// Place every array on the tape as a tracked leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Binding {
        self.bind_with(tape, true)
    }

    /// Place every array on the tape without gradient tracking.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Binding {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape<T>, tracked: bool) -> Binding {
        let vars = self
            .arrays
            .iter()
            .map(|(k, v)| (k.clone(), tape.parameter(v.clone(), tracked)))
            .collect();
        Binding { vars }
    }
}

/// Map from parameter name to its tape variable.
#[derive(Debug, Clone)]
pub struct Binding {
    vars: BTreeMap<String, Var>,
}

impl Binding {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Gradient per parameter name.
pub type ParamGrads<T> = BTreeMap<String, Array<T>>;

/// Gradient of a scalar loss with respect to every bound parameter.
/// Parameters the loss never touched get zero arrays.
pub fn backward_gradients<T: Real>(
    tape: &Tape<T>,
    loss: Var,
    params: &ParamStore<T>,
    binding: &Binding,
) -> Result<ParamGrads<T>> {
    let grads = tape.backward(loss)?;
    let mut out = BTreeMap::new();
    for (name, var) in binding.iter() {
        let template = params
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let array = match grads.get(var) {
            Some(g) => {
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFiniteGradient(name.to_string()));
                }
                Array::new(template.shape().to_vec(), g.to_vec())?
            }
            None => Array::zeros(template.shape()),
        };
        out.insert(name.to_string(), array);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn untouched_parameters_get_zero_gradient() {
        let mut store = ParamStore::<f64>::new();
        store.insert("used", Array::new(vec![2], vec![1.0, 2.0]).unwrap());
        store.insert("unused", Array::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let s = tape.sum(b.var("used").unwrap());
        let g = backward_gradients(&tape, s, &store, &b).unwrap();
        assert_eq!(g["used"].data(), &[1.0, 1.0]);
        assert_eq!(g["unused"].data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn binding_does_not_copy_and_update_detaches() {
        let mut store = ParamStore::<f32>::new();
        store.insert("w", Array::zeros(&[2]));
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        store.get_mut("w").unwrap().data_mut()[0] = 5.0;
        assert_eq!(tape.value(b.var("w").unwrap()), &[0.0, 0.0]);
        assert_eq!(store.get("w").unwrap().data(), &[5.0, 0.0]);
    }
}
