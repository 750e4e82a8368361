use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::ops::{Add, Div, Mul, Neg, Sub};

use crate::params::{BlockSet, ParamBlock};
use crate::real::{self, Real};

const NONE: u32 = u32::MAX;

/// Every primitive the tape can record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    AddConst,
    MulConst,
    Exp,
    Ln,
    Sqrt,
    Sin,
    Cos,
    Powi,
    Recip,
    Abs,
    Relu,
    Sigmoid,
    Max,
    Min,
    Clamp,
    /// One output slot of a [`CustomOp`].
    Custom,
}

impl OpKind {
    pub const ALL: [OpKind; 23] = [
        OpKind::Leaf,
        OpKind::Const,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::Neg,
        OpKind::AddConst,
        OpKind::MulConst,
        OpKind::Exp,
        OpKind::Ln,
        OpKind::Sqrt,
        OpKind::Sin,
        OpKind::Cos,
        OpKind::Powi,
        OpKind::Recip,
        OpKind::Abs,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Max,
        OpKind::Min,
        OpKind::Clamp,
        OpKind::Custom,
    ];
}

#[derive(Clone, Copy)]
struct Node {
    op: OpKind,
    args: [u32; 2],
    /// Local partials d(node)/d(arg), fixed at record time.
    partials: [f64; 2],
}

/// Gradient destination for parameters that live outside the tape (network weights).
pub struct GradSink<'a> {
    frozen: BlockSet,
    blocks: &'a mut BTreeMap<ParamBlock, Vec<f64>>,
}

impl GradSink<'_> {
    /// Whether gradients for `block` are wanted at all in this pass.
    pub fn wants(&self, block: ParamBlock) -> bool {
        !self.frozen.contains(block) && self.blocks.contains_key(&block)
    }

    pub fn block_mut(&mut self, block: ParamBlock) -> Option<&mut [f64]> {
        if self.frozen.contains(block) {
            return None;
        }
        self.blocks.get_mut(&block).map(|v| v.as_mut_slice())
    }
}

/// A multi-input, multi-output primitive with a hand-written vector-Jacobian product.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Computes the outputs; may cache whatever the backward pass needs.
    fn forward(&mut self, inputs: &[f64]) -> Vec<f64>;

    /// Accumulates `in_grad += Jᵀ out_grad` and any external parameter gradients.
    fn backward(
        &self,
        inputs: &[f64],
        outputs: &[f64],
        out_grad: &[f64],
        in_grad: &mut [f64],
        sink: &mut GradSink<'_>,
    );
}

struct CustomRecord {
    op: Box<dyn CustomOp>,
    inputs: Vec<u32>,
    input_values: Vec<f64>,
    first_output: u32,
    n_outputs: u32,
}

struct Binding {
    block: ParamBlock,
    start: u32,
    len: u32,
}

struct Inner {
    nodes: Vec<Node>,
    values: Vec<f64>,
    customs: Vec<CustomRecord>,
    bindings: Vec<Binding>,
    externals: Vec<(ParamBlock, usize)>,
    consumed: bool,
}

/// Append-only record of a forward computation. Built fresh for every pass.
pub struct Tape {
    inner: RefCell<Inner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a tape node. Cheap to copy; carries its forward value.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
}

impl core::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "Var#{}({})", self.idx, self.val)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                values: Vec::new(),
                customs: Vec::new(),
                bindings: Vec::new(),
                externals: Vec::new(),
                consumed: false,
            }),
        }
    }

    pub fn with_capacity(n: usize) -> Self {
        let t = Self::new();
        {
            let mut inner = t.inner.borrow_mut();
            inner.nodes.reserve(n);
            inner.values.reserve(n);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: OpKind, args: [u32; 2], partials: [f64; 2], val: f64) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.nodes.len() as u32;
        inner.nodes.push(Node { op, args, partials });
        inner.values.push(val);
        Var {
            tape: self,
            idx,
            val,
        }
    }

    /// An unregistered independent variable.
    pub fn var(&self, v: f64) -> Var<'_> {
        self.push(OpKind::Leaf, [NONE; 2], [0.0; 2], v)
    }

    pub fn constant(&self, v: f64) -> Var<'_> {
        self.push(OpKind::Const, [NONE; 2], [0.0; 2], v)
    }

    /// Registers a named parameter block; its leaves receive gradients in
    /// [`Gradients::block`].
    pub fn param_block(&self, block: ParamBlock, values: &[f64]) -> Vec<Var<'_>> {
        let start = self.len() as u32;
        let vars: Vec<Var<'_>> = values.iter().map(|&v| self.var(v)).collect();
        self.inner.borrow_mut().bindings.push(Binding {
            block,
            start,
            len: values.len() as u32,
        });
        vars
    }

    /// Declares a block whose gradient is produced by custom ops (e.g. network weights).
    pub fn external_block(&self, block: ParamBlock, len: usize) {
        let mut inner = self.inner.borrow_mut();
        if !inner.externals.iter().any(|(b, _)| *b == block) {
            inner.externals.push((block, len));
        }
    }

    pub fn custom(&self, inputs: &[Var<'_>], mut op: Box<dyn CustomOp>) -> Vec<Var<'_>> {
        let input_values: Vec<f64> = inputs.iter().map(|v| v.val).collect();
        let outputs = op.forward(&input_values);
        let first_output = self.len() as u32;
        let rec_idx = self.inner.borrow().customs.len() as u32;
        let vars: Vec<Var<'_>> = outputs
            .iter()
            .map(|&v| self.push(OpKind::Custom, [rec_idx, NONE], [0.0; 2], v))
            .collect();
        self.inner.borrow_mut().customs.push(CustomRecord {
            op,
            inputs: inputs.iter().map(|v| v.idx).collect(),
            input_values,
            first_output,
            n_outputs: outputs.len() as u32,
        });
        vars
    }

    /// Reverse sweep from `output`. Frozen blocks get exact zeros; custom ops are
    /// told not to bother computing them.
    ///
    /// Panics if called twice on the same tape (one backward per forward).
    pub fn backward(&self, output: Var<'_>, frozen: BlockSet) -> Gradients {
        let mut inner = self.inner.borrow_mut();
        assert!(!inner.consumed, "backward called twice on one tape");
        inner.consumed = true;
        let inner = &*inner;

        let n = inner.nodes.len();
        let mut grads = vec![0.0; n];
        grads[output.idx as usize] = 1.0;

        let mut external: BTreeMap<ParamBlock, Vec<f64>> = inner
            .externals
            .iter()
            .map(|&(b, len)| (b, vec![0.0; len]))
            .collect();

        for i in (0..=output.idx as usize).rev() {
            let node = inner.nodes[i];
            match node.op {
                OpKind::Leaf | OpKind::Const => {}
                OpKind::Custom => {
                    let rec = &inner.customs[node.args[0] as usize];
                    if rec.first_output as usize != i {
                        continue;
                    }
                    let lo = rec.first_output as usize;
                    let hi = lo + rec.n_outputs as usize;
                    let out_grad = &grads[lo..hi];
                    if out_grad.iter().all(|g| *g == 0.0) {
                        continue;
                    }
                    let out_grad = out_grad.to_vec();
                    let mut in_grad = vec![0.0; rec.inputs.len()];
                    let mut sink = GradSink {
                        frozen,
                        blocks: &mut external,
                    };
                    rec.op.backward(
                        &rec.input_values,
                        &inner.values[lo..hi],
                        &out_grad,
                        &mut in_grad,
                        &mut sink,
                    );
                    for (&j, g) in rec.inputs.iter().zip(in_grad) {
                        grads[j as usize] += g;
                    }
                }
                _ => {
                    let g = grads[i];
                    if g == 0.0 {
                        continue;
                    }
                    let [a, b] = node.args;
                    if a != NONE {
                        grads[a as usize] += g * node.partials[0];
                    }
                    if b != NONE {
                        grads[b as usize] += g * node.partials[1];
                    }
                }
            }
        }

        let mut blocks: BTreeMap<ParamBlock, Vec<f64>> = BTreeMap::new();
        for bind in &inner.bindings {
            let lo = bind.start as usize;
            let hi = lo + bind.len as usize;
            let g = if frozen.contains(bind.block) {
                vec![0.0; hi - lo]
            } else {
                grads[lo..hi].to_vec()
            };
            blocks.insert(bind.block, g);
        }
        for (b, g) in external {
            let g = if frozen.contains(b) {
                vec![0.0; g.len()]
            } else {
                g
            };
            blocks.insert(b, g);
        }
        Gradients { nodes: grads, blocks }
    }
}

/// Result of a backward sweep.
#[derive(Clone, Debug)]
pub struct Gradients {
    nodes: Vec<f64>,
    blocks: BTreeMap<ParamBlock, Vec<f64>>,
}

impl Gradients {
    /// d(output)/d(v) for any node recorded before the output.
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.nodes.get(v.idx as usize).copied().unwrap_or(0.0)
    }

    pub fn block(&self, b: ParamBlock) -> Option<&[f64]> {
        self.blocks.get(&b).map(|v| v.as_slice())
    }

    pub fn blocks(&self) -> impl Iterator<Item = (ParamBlock, &[f64])> {
        self.blocks.iter().map(|(b, v)| (*b, v.as_slice()))
    }

    pub fn into_blocks(self) -> BTreeMap<ParamBlock, Vec<f64>> {
        self.blocks
    }
}

impl<'t> Var<'t> {
    #[inline]
    pub fn value(self) -> f64 {
        self.val
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    #[inline]
    fn unary(self, op: OpKind, partial: f64, val: f64) -> Self {
        self.tape.push(op, [self.idx, NONE], [partial, 0.0], val)
    }

    #[inline]
    fn binary(self, o: Self, op: OpKind, pa: f64, pb: f64, val: f64) -> Self {
        debug_assert!(core::ptr::eq(self.tape, o.tape), "vars from different tapes");
        self.tape.push(op, [self.idx, o.idx], [pa, pb], val)
    }

    /// Same value, no gradient flows back through it.
    pub fn detach(self) -> Self {
        self.tape.constant(self.val)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn add(self, o: Self) -> Self {
        self.binary(o, OpKind::Add, 1.0, 1.0, self.val + o.val)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn sub(self, o: Self) -> Self {
        self.binary(o, OpKind::Sub, 1.0, -1.0, self.val - o.val)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn mul(self, o: Self) -> Self {
        self.binary(o, OpKind::Mul, o.val, self.val, self.val * o.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.val;
        let val = self.val * inv;
        self.binary(o, OpKind::Div, inv, -val * inv, val)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn neg(self) -> Self {
        self.unary(OpKind::Neg, -1.0, -self.val)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn add(self, c: f64) -> Self {
        self.unary(OpKind::AddConst, 1.0, self.val + c)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn sub(self, c: f64) -> Self {
        self.unary(OpKind::AddConst, 1.0, self.val - c)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn mul(self, c: f64) -> Self {
        self.unary(OpKind::MulConst, c, self.val * c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    #[inline]
    fn div(self, c: f64) -> Self {
        let inv = 1.0 / c;
        self.unary(OpKind::MulConst, inv, self.val * inv)
    }
}

impl<'t> Real for Var<'t> {
    #[inline]
    fn lift(self, c: f64) -> Self {
        self.tape.constant(c)
    }
    #[inline]
    fn value(self) -> f64 {
        self.val
    }
    fn exp(self) -> Self {
        let e = libm::exp(self.val);
        self.unary(OpKind::Exp, e, e)
    }
    fn ln(self) -> Self {
        self.unary(OpKind::Ln, 1.0 / self.val, libm::log(self.val))
    }
    fn sqrt(self) -> Self {
        let s = libm::sqrt(self.val);
        self.unary(OpKind::Sqrt, 0.5 / s, s)
    }
    fn sin(self) -> Self {
        self.unary(OpKind::Sin, libm::cos(self.val), libm::sin(self.val))
    }
    fn cos(self) -> Self {
        self.unary(OpKind::Cos, -libm::sin(self.val), libm::cos(self.val))
    }
    fn powi(self, n: i32) -> Self {
        let d = if n == 0 {
            0.0
        } else {
            n as f64 * real::powi(self.val, n - 1)
        };
        self.unary(OpKind::Powi, d, real::powi(self.val, n))
    }
    fn recip(self) -> Self {
        let r = 1.0 / self.val;
        self.unary(OpKind::Recip, -r * r, r)
    }
    fn abs(self) -> Self {
        let d = if self.val > 0.0 {
            1.0
        } else if self.val < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(OpKind::Abs, d, libm::fabs(self.val))
    }
    fn relu(self) -> Self {
        if self.val > 0.0 {
            self.unary(OpKind::Relu, 1.0, self.val)
        } else {
            self.unary(OpKind::Relu, 0.0, 0.0)
        }
    }
    fn sigmoid(self) -> Self {
        let s = real::sigmoid(self.val);
        self.unary(OpKind::Sigmoid, s * (1.0 - s), s)
    }
    fn max(self, o: Self) -> Self {
        if o.val > self.val {
            self.binary(o, OpKind::Max, 0.0, 1.0, o.val)
        } else {
            self.binary(o, OpKind::Max, 1.0, 0.0, self.val)
        }
    }
    fn min(self, o: Self) -> Self {
        if o.val < self.val {
            self.binary(o, OpKind::Min, 0.0, 1.0, o.val)
        } else {
            self.binary(o, OpKind::Min, 1.0, 0.0, self.val)
        }
    }
    fn clamp(self, lo: f64, hi: f64) -> Self {
        if self.val < lo {
            self.unary(OpKind::Clamp, 0.0, lo)
        } else if self.val > hi {
            self.unary(OpKind::Clamp, 0.0, hi)
        } else {
            self.unary(OpKind::Clamp, 1.0, self.val)
        }
    }
}
