use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::params::{join, Decay, ParamSet};
use super::{Array, KernelError, Tape, Var};
use crate::rng;

/// Glorot (Xavier) normal initialization.
///
/// 2-D shapes `[out][in]` draw from `N(0, 2/(in+out))`; 1-D shapes are biases
/// and start at zero.
pub fn glorot_init(shape: &[usize], seed: u64) -> Array {
    match shape {
        [_] => Array::zeros(shape),
        [fan_out, fan_in, ..] => {
            let std = (2.0 / (*fan_in + *fan_out) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let mut r = rng::rng(seed);
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| normal.sample(&mut r)).collect();
            Array::new(shape.to_vec(), data).expect("shape product")
        }
        [] => Array::zeros(&[1]),
    }
}

/// Affine layer `W x + b` with `W: [out][in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub weight: Array,
    pub bias: Array,
}

/// A [`DenseParams`] whose arrays live on a tape.
#[derive(Clone, Copy, Debug)]
pub struct DenseVars {
    pub weight: Var,
    pub bias: Var,
}

impl DenseParams {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        DenseParams {
            weight: Array::zeros(&[out_dim, in_dim]),
            bias: Array::zeros(&[out_dim]),
        }
    }

    pub fn glorot(out_dim: usize, in_dim: usize, seed: u64) -> Self {
        DenseParams {
            weight: glorot_init(&[out_dim, in_dim], rng::derive_tag(seed, "weight")),
            bias: Array::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Records the layer on `tape`, as trainable parameters named under
    /// `prefix` when `trainable`, otherwise as constants.
    pub fn bind(&self, tape: &Tape, prefix: &str, trainable: bool) -> DenseVars {
        DenseVars {
            weight: bind_array(tape, &join(prefix, "weight"), &self.weight, trainable),
            bias: bind_array(tape, &join(prefix, "bias"), &self.bias, trainable),
        }
    }

    /// Untraced evaluation.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, KernelError> {
        let tape = Tape::new();
        let vars = self.bind(&tape, "", false);
        let xv = tape.constant_vec(x.to_vec());
        let y = dense_forward(&tape, &vars, xv)?;
        Ok(tape.value(y))
    }
}

impl ParamSet for DenseParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array, Decay)) {
        f(&join(prefix, "weight"), &self.weight, Decay::Weight);
        f(&join(prefix, "bias"), &self.bias, Decay::Bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array, Decay)) {
        f(&join(prefix, "weight"), &mut self.weight, Decay::Weight);
        f(&join(prefix, "bias"), &mut self.bias, Decay::Bias);
    }
}

pub(crate) fn bind_array(tape: &Tape, name: &str, a: &Array, trainable: bool) -> Var {
    if trainable {
        tape.param(name, a)
    } else {
        tape.constant(a)
    }
}

/// `W x + b`, recorded on `tape`.
pub fn dense_forward(tape: &Tape, p: &DenseVars, x: Var) -> Result<Var, KernelError> {
    let wshape = tape.shape(p.weight);
    let (out_dim, in_dim) = (wshape[0], wshape[1]);
    if tape.dim(x) != in_dim || tape.dim(p.bias) != out_dim {
        return Err(KernelError::ShapeMismatch {
            op: "dense_forward",
            expected: format!("input {in_dim}, bias {out_dim}"),
            found: format!("input {}, bias {}", tape.dim(x), tape.dim(p.bias)),
        });
    }
    let wx = tape.matvec(p.weight, x);
    Ok(tape.add(wx, p.bias))
}

/// One gate block: `Z_x x + Z_h h + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub z_x: Array,
    pub z_h: Array,
    pub b: Array,
}

impl GateParams {
    fn zeros(hidden: usize, input: usize) -> Self {
        GateParams {
            z_x: Array::zeros(&[hidden, input]),
            z_h: Array::zeros(&[hidden, hidden]),
            b: Array::zeros(&[hidden]),
        }
    }

    fn glorot(hidden: usize, input: usize, seed: u64) -> Self {
        GateParams {
            z_x: glorot_init(&[hidden, input], rng::derive_tag(seed, "z_x")),
            z_h: glorot_init(&[hidden, hidden], rng::derive_tag(seed, "z_h")),
            b: Array::zeros(&[hidden]),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array, Decay)) {
        f(&join(prefix, "z_x"), &self.z_x, Decay::Weight);
        f(&join(prefix, "z_h"), &self.z_h, Decay::Weight);
        f(&join(prefix, "b"), &self.b, Decay::Bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array, Decay)) {
        f(&join(prefix, "z_x"), &mut self.z_x, Decay::Weight);
        f(&join(prefix, "z_h"), &mut self.z_h, Decay::Weight);
        f(&join(prefix, "b"), &mut self.b, Decay::Bias);
    }

    fn bind(&self, tape: &Tape, prefix: &str, trainable: bool) -> GateVars {
        GateVars {
            z_x: bind_array(tape, &join(prefix, "z_x"), &self.z_x, trainable),
            z_h: bind_array(tape, &join(prefix, "z_h"), &self.z_h, trainable),
            b: bind_array(tape, &join(prefix, "b"), &self.b, trainable),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GateVars {
    pub z_x: Var,
    pub z_h: Var,
    pub b: Var,
}

/// Parameters of a standard LSTM cell without peepholes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmCellParams {
    pub input: GateParams,
    pub forget: GateParams,
    pub output: GateParams,
    pub candidate: GateParams,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub input: GateVars,
    pub forget: GateVars,
    pub output: GateVars,
    pub candidate: GateVars,
    hidden: usize,
    input_dim: usize,
}

impl LstmVars {
    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
}

const GATES: [&str; 4] = ["input", "forget", "output", "candidate"];

impl LstmCellParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        LstmCellParams {
            input: GateParams::zeros(hidden, input),
            forget: GateParams::zeros(hidden, input),
            output: GateParams::zeros(hidden, input),
            candidate: GateParams::zeros(hidden, input),
        }
    }

    pub fn glorot(hidden: usize, input: usize, seed: u64) -> Self {
        let g = |name| GateParams::glorot(hidden, input, rng::derive_tag(seed, name));
        LstmCellParams {
            input: g("input"),
            forget: g("forget"),
            output: g("output"),
            candidate: g("candidate"),
        }
    }

    pub fn hidden(&self) -> usize {
        self.input.z_h.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.input.z_x.cols()
    }

    fn gates(&self) -> [&GateParams; 4] {
        [&self.input, &self.forget, &self.output, &self.candidate]
    }

    fn validate(&self) -> Result<(), KernelError> {
        let (h, d) = (self.hidden(), self.input_dim());
        for (name, g) in GATES.iter().zip(self.gates()) {
            if g.z_x.shape() != [h, d] || g.z_h.shape() != [h, h] || g.b.shape() != [h] {
                return Err(KernelError::ShapeMismatch {
                    op: "lstm params",
                    expected: format!("{name} gate with d_h={h}, d_in={d}"),
                    found: format!(
                        "z_x {:?}, z_h {:?}, b {:?}",
                        g.z_x.shape(),
                        g.z_h.shape(),
                        g.b.shape()
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn bind(&self, tape: &Tape, prefix: &str, trainable: bool) -> Result<LstmVars, KernelError> {
        self.validate()?;
        Ok(LstmVars {
            input: self.input.bind(tape, &join(prefix, "input"), trainable),
            forget: self.forget.bind(tape, &join(prefix, "forget"), trainable),
            output: self.output.bind(tape, &join(prefix, "output"), trainable),
            candidate: self
                .candidate
                .bind(tape, &join(prefix, "candidate"), trainable),
            hidden: self.hidden(),
            input_dim: self.input_dim(),
        })
    }

    /// Untraced single step.
    pub fn step(&self, x: &[f64], s: &LstmState) -> Result<LstmState, KernelError> {
        let tape = Tape::new();
        let vars = self.bind(&tape, "", false)?;
        let xv = tape.constant_vec(x.to_vec());
        let st = s.bind(&tape);
        let out = lstm_cell_step(&tape, &vars, xv, st)?;
        Ok(out.read(&tape))
    }

    /// Untraced sequence run from the zero state.
    pub fn run(&self, xs: &[Vec<f64>]) -> Result<Vec<LstmState>, KernelError> {
        let tape = Tape::new();
        let vars = self.bind(&tape, "", false)?;
        let inputs: Vec<Var> = xs.iter().map(|x| tape.constant_vec(x.clone())).collect();
        let states = lstm_sequence_forward(&tape, &vars, &inputs)?;
        Ok(states.iter().map(|s| s.read(&tape)).collect())
    }
}

impl ParamSet for LstmCellParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Array, Decay)) {
        for (name, g) in GATES.iter().zip(self.gates()) {
            g.visit(&join(prefix, name), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Array, Decay)) {
        self.input.visit_mut(&join(prefix, "input"), f);
        self.forget.visit_mut(&join(prefix, "forget"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
        self.candidate.visit_mut(&join(prefix, "candidate"), f);
    }
}

/// Hidden and cell vectors of an LSTM.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }

    fn bind(&self, tape: &Tape) -> LstmStateVars {
        LstmStateVars {
            h: tape.constant_vec(self.h.clone()),
            c: tape.constant_vec(self.c.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmStateVars {
    pub h: Var,
    pub c: Var,
}

impl LstmStateVars {
    pub fn read(&self, tape: &Tape) -> LstmState {
        LstmState {
            h: tape.value(self.h),
            c: tape.value(self.c),
        }
    }
}

fn gate_preactivation(tape: &Tape, g: &GateVars, x: Var, h: Var) -> Var {
    let zx = tape.matvec(g.z_x, x);
    let zh = tape.matvec(g.z_h, h);
    let s = tape.add(zx, zh);
    tape.add(s, g.b)
}

/// `i,f,o = σ(Z_x x + Z_h h + b)`, `c' = f·c + i·tanh(Z_xc x + Z_hc h + b_c)`, `h' = o·tanh(c')`.
pub fn lstm_cell_step(
    tape: &Tape,
    p: &LstmVars,
    x: Var,
    s: LstmStateVars,
) -> Result<LstmStateVars, KernelError> {
    if tape.dim(x) != p.input_dim || tape.dim(s.h) != p.hidden || tape.dim(s.c) != p.hidden {
        return Err(KernelError::ShapeMismatch {
            op: "lstm_cell_step",
            expected: format!("input {}, state {}", p.input_dim, p.hidden),
            found: format!(
                "input {}, h {}, c {}",
                tape.dim(x),
                tape.dim(s.h),
                tape.dim(s.c)
            ),
        });
    }
    let pre_i = gate_preactivation(tape, &p.input, x, s.h);
    let i = tape.sigmoid(pre_i);
    let pre_f = gate_preactivation(tape, &p.forget, x, s.h);
    let f = tape.sigmoid(pre_f);
    let pre_o = gate_preactivation(tape, &p.output, x, s.h);
    let o = tape.sigmoid(pre_o);
    let pre_c = gate_preactivation(tape, &p.candidate, x, s.h);
    let cand = tape.tanh(pre_c);
    let keep = tape.mul(f, s.c);
    let write = tape.mul(i, cand);
    let c = tape.add(keep, write);
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc);
    Ok(LstmStateVars { h, c })
}

/// Folds [`lstm_cell_step`] over `xs` from the zero state; returns every state.
pub fn lstm_sequence_forward(
    tape: &Tape,
    p: &LstmVars,
    xs: &[Var],
) -> Result<Vec<LstmStateVars>, KernelError> {
    if xs.is_empty() {
        return Err(KernelError::EmptySequence);
    }
    let mut state = LstmState::zeros(p.hidden).bind(tape);
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        state = lstm_cell_step(tape, p, x, state)?;
        out.push(state);
    }
    Ok(out)
}
