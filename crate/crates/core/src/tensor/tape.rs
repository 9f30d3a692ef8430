use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{Element, Result, Tensor, TensorError};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Result<Vec<Option<Tensor<T>>>>>;

struct VarInner<T> {
    id: usize,
    tape: u64,
    value: Tensor<T>,
    requires_grad: bool,
}

/// A tensor value living on a [`GradTape`].
pub struct Var<T = f32> {
    inner: Rc<VarInner<T>>,
}

impl<T> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var { inner: Rc::clone(&self.inner) }
    }
}

impl<T: Element> Var<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.inner.value
    }

    pub fn shape(&self) -> &[usize] {
        self.inner.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub(crate) fn id(&self) -> usize {
        self.inner.id
    }
}

impl<T: Element> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.inner.id)
            .field("requires_grad", &self.inner.requires_grad)
            .field("value", &self.inner.value)
            .finish()
    }
}

struct Record<T> {
    output: usize,
    inputs: Vec<(usize, bool)>,
    backward: BackwardFn<T>,
}

/// Ordered log of executed ops.
///
/// Only ops with at least one gradient-requiring input are recorded, so a
/// forward pass over constants keeps nothing alive beyond its live `Var`s.
pub struct GradTape<T = f32> {
    id: u64,
    next_var: RefCell<usize>,
    records: RefCell<Vec<Record<T>>>,
}

impl<T: Element> Default for GradTape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> GradTape<T> {
    pub fn new() -> Self {
        GradTape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            next_var: RefCell::new(0),
            records: RefCell::new(Vec::new()),
        }
    }

    /// A constant input; gradients never flow into it.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        self.make_var(value, false)
    }

    /// A leaf whose gradient [`GradTape::backward`] will report.
    pub fn param(&self, value: Tensor<T>) -> Var<T> {
        self.make_var(value, true)
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<T> {
        self.make_var(value, requires_grad)
    }

    /// Number of recorded ops.
    pub fn len(&self) -> usize {
        self.records.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn make_var(&self, value: Tensor<T>, requires_grad: bool) -> Var<T> {
        let mut next = self.next_var.borrow_mut();
        let id = *next;
        *next += 1;
        Var { inner: Rc::new(VarInner { id, tape: self.id, value, requires_grad }) }
    }

    pub(crate) fn check_owned(&self, vars: &[&Var<T>]) -> Result<()> {
        if vars.iter().all(|v| v.inner.tape == self.id) {
            Ok(())
        } else {
            Err(TensorError::NotOnTape)
        }
    }

    /// Registers an op output. `backward` maps the output gradient to one
    /// optional gradient per input, in `inputs` order.
    pub(crate) fn push(
        &self,
        op: &'static str,
        value: Tensor<T>,
        inputs: &[&Var<T>],
        backward: impl Fn(&Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> + 'static,
    ) -> Result<Var<T>> {
        self.check_owned(inputs)?;
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op });
        }
        let requires_grad = inputs.iter().any(|v| v.requires_grad());
        let out = self.make_var(value, requires_grad);
        if requires_grad {
            self.records.borrow_mut().push(Record {
                output: out.id(),
                inputs: inputs.iter().map(|v| (v.id(), v.requires_grad())).collect(),
                backward: Box::new(backward),
            });
        }
        Ok(out)
    }

    /// Reverse sweep from a scalar `loss`, visiting each recorded op once in
    /// reverse execution order.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        self.check_owned(&[loss])?;
        if loss.value().numel() != 1 {
            return Err(TensorError::NotScalar(loss.shape().to_vec()));
        }
        if !loss.requires_grad() {
            return Err(TensorError::NotOnTape);
        }
        let mut grads: HashMap<usize, Vec<T>> = HashMap::new();
        grads.insert(loss.id(), vec![T::one()]);
        let records = self.records.borrow();
        let mut shapes: HashMap<usize, Vec<usize>> = HashMap::new();
        shapes.insert(loss.id(), loss.shape().to_vec());
        for rec in records.iter().rev() {
            let Some(g) = grads.remove(&rec.output) else { continue };
            let shape = shapes.remove(&rec.output).unwrap_or_default();
            let upstream = Tensor::new(shape, g)?;
            let input_grads = (rec.backward)(&upstream)?;
            debug_assert_eq!(input_grads.len(), rec.inputs.len());
            for (&(id, needs), grad) in rec.inputs.iter().zip(input_grads) {
                let (true, Some(grad)) = (needs, grad) else { continue };
                if !grad.all_finite() {
                    return Err(TensorError::NonFinite { op: "backward" });
                }
                match grads.get_mut(&id) {
                    Some(acc) => acc.iter_mut().zip(grad.data()).for_each(|(a, &b)| *a += b),
                    None => {
                        shapes.insert(id, grad.shape().to_vec());
                        grads.insert(id, grad.into_vec());
                    }
                }
            }
        }
        let grads = grads
            .into_iter()
            .map(|(id, g)| {
                let shape = shapes.remove(&id).unwrap_or_default();
                Tensor::new(shape, g).map(|t| (id, t))
            })
            .collect::<Result<_>>()?;
        Ok(Gradients { tape: self.id, grads })
    }
}

/// Gradients produced by one backward sweep, keyed by leaf.
pub struct Gradients<T = f32> {
    tape: u64,
    grads: HashMap<usize, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient for `var`, or `None` when it did not participate.
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        if var.inner.tape != self.tape {
            return None;
        }
        self.grads.get(&var.id())
    }

    /// Gradient for `var`, zero-filled when it did not participate.
    pub fn get_or_zeros(&self, var: &Var<T>) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.shape().to_vec()))
    }
}
