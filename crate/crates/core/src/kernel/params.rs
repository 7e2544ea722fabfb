use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Array, KernelError};

/// Whether the L2 penalty applies to a parameter. Biases are exempt.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decay {
    Weight,
    Bias,
}

/// A named collection of parameter arrays.
///
/// Names are dotted paths (`posterior.lstm.input.z_x`) and must be unique
/// within one set; they key gradients, optimizer moments and checkpoints.
pub trait ParamSet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array, Decay));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array, Decay));

    fn named_arrays(&self, prefix: &str) -> BTreeMap<String, Array> {
        let mut out = BTreeMap::new();
        self.visit(prefix, &mut |name, a, _| {
            out.insert(name.to_string(), a.clone());
        });
        out
    }

    fn num_values(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, a, _| n += a.len());
        n
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Serialized form of one array: `{shape: [...], data: [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub type ParamBundle = BTreeMap<String, ArrayRecord>;

pub fn to_bundle<P: ParamSet + ?Sized>(params: &P, prefix: &str) -> ParamBundle {
    let mut out = ParamBundle::new();
    params.visit(prefix, &mut |name, a, _| {
        out.insert(
            name.to_string(),
            ArrayRecord {
                shape: a.shape().to_vec(),
                data: a.data().to_vec(),
            },
        );
    });
    out
}

/// Overwrites every array of `params` from `bundle`; names and shapes must match.
pub fn load_bundle<P: ParamSet + ?Sized>(
    params: &mut P,
    prefix: &str,
    bundle: &ParamBundle,
) -> Result<(), KernelError> {
    let mut err = None;
    params.visit_mut(prefix, &mut |name, a, _| {
        if err.is_some() {
            return;
        }
        match bundle.get(name) {
            None => err = Some(KernelError::MissingParameter(name.to_string())),
            Some(rec) if rec.shape != a.shape() || rec.data.len() != a.len() => {
                err = Some(KernelError::ShapeMismatch {
                    op: "load_bundle",
                    expected: format!("{name} with shape {:?}", a.shape()),
                    found: format!("shape {:?}", rec.shape),
                })
            }
            Some(rec) => a.data_mut().copy_from_slice(&rec.data),
        }
    });
    err.map_or(Ok(()), Err)
}

/// Replaces the single coordinate `index` of parameter `name` (for finite differences).
pub fn set_coordinate<P: ParamSet + ?Sized>(
    params: &mut P,
    prefix: &str,
    name: &str,
    index: usize,
    value: f64,
) {
    params.visit_mut(prefix, &mut |n, a, _| {
        if n == name {
            a.data_mut()[index] = value;
        }
    });
}
