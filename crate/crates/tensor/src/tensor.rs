use std::cell::Cell;
use std::collections::hash_map::Entry;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::shape::Shape;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any operations. Used for inference and for
/// finite-difference evaluations.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Maps the gradient of an op's output to gradients of each of its inputs.
/// Entries are `None` for inputs that do not require a gradient.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>> + Send + Sync>;

pub(crate) struct Node<T: Element> {
    op: &'static str,
    inputs: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Element> {
    id: u64,
    shape: Shape,
    data: Vec<T>,
    requires_grad: bool,
    is_leaf: bool,
    grad: Mutex<Option<Vec<T>>>,
    node: Mutex<Option<Node<T>>>,
}

/// Dense row-major tensor. Cloning is cheap and shares the buffer.
///
/// Values never change after construction; gradients live beside the value
/// and are only populated on leaves by [`Tensor::backward`].
pub struct Tensor<T: Element = f32> {
    inner: Arc<Inner<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

fn lock<V>(m: &Mutex<V>) -> MutexGuard<'_, V> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl<T: Element> Tensor<T> {
    fn build(shape: Shape, data: Vec<T>, requires_grad: bool, node: Option<Node<T>>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                is_leaf: node.is_none(),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                node: Mutex::new(node),
            }),
        }
    }

    pub fn new(data: Vec<T>, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims.to_vec())?;
        Self::from_shape(shape, data)
    }

    pub fn from_shape(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.numel() != data.len() {
            return Err(TensorError::BufferLength {
                len: data.len(),
                shape,
            });
        }
        Ok(Self::build(shape, data, false, None))
    }

    pub fn full(dims: &[usize], value: T) -> Result<Self> {
        let shape = Shape::new(dims.to_vec())?;
        let data = vec![value; shape.numel()];
        Ok(Self::build(shape, data, false, None))
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, T::zero())
    }

    pub fn ones(dims: &[usize]) -> Result<Self> {
        Self::full(dims, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::build(Shape::scalar(), vec![value], false, None)
    }

    /// A fresh leaf with the same values that requires a gradient.
    pub fn with_grad(self) -> Self {
        let shape = self.inner.shape.clone();
        let data = match Arc::try_unwrap(self.inner) {
            Ok(inner) => inner.data,
            Err(shared) => shared.data.clone(),
        };
        Self::build(shape, data, true, None)
    }

    /// A leaf sharing no history with `self`.
    pub fn detach(&self) -> Self {
        Self::build(
            self.inner.shape.clone(),
            self.inner.data.clone(),
            false,
            None,
        )
    }

    /// Output of a recorded op. The backward closure and the input handles
    /// are only kept when recording is enabled and some input needs a
    /// gradient.
    pub(crate) fn from_op<F>(
        shape: Shape,
        data: Vec<T>,
        op: &'static str,
        inputs: &[&Tensor<T>],
        backward: F,
    ) -> Self
    where
        F: Fn(&[T]) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    {
        let track = is_grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if !track {
            return Self::build(shape, data, false, None);
        }
        let node = Node {
            op,
            inputs: inputs.iter().map(|t| (*t).clone()).collect(),
            backward: Box::new(backward),
        };
        Self::build(shape, data, true, Some(node))
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &Shape {
        &self.inner.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.inner.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        self.inner.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.is_leaf
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<T>> {
        lock(&self.inner.grad).clone()
    }

    pub fn zero_grad(&self) {
        *lock(&self.inner.grad) = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut slot = lock(&self.inner.grad);
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Overwrites the accumulated gradient of a leaf.
    pub fn set_grad(&self, g: Vec<T>) -> Result<()> {
        if g.len() != self.numel() {
            return Err(TensorError::BufferLength {
                len: g.len(),
                shape: self.shape().clone(),
            });
        }
        *lock(&self.inner.grad) = Some(g);
        Ok(())
    }

    fn node_inputs(&self) -> Option<Vec<Tensor<T>>> {
        lock(&self.inner.node).as_ref().map(|n| n.inputs.clone())
    }

    /// Recorded non-leaf tensors reachable from `self`, inputs before outputs.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.id()) {
                continue;
            }
            let Some(inputs) = t.node_inputs() else {
                continue;
            };
            stack.push((t, true));
            for input in inputs.into_iter().rev() {
                if !input.is_leaf() && !seen.contains(&input.id()) {
                    stack.push((input, false));
                }
            }
        }
        order
    }

    /// Snapshot of the ops that produced `self`, in topological order.
    pub fn record(&self) -> ComputationRecord {
        let nodes = self
            .topo_order()
            .into_iter()
            .filter_map(|t| {
                let guard = lock(&t.inner.node);
                guard.as_ref().map(|n| RecordEntry {
                    output: t.id(),
                    op: n.op,
                    inputs: n.inputs.iter().map(Tensor::id).collect(),
                })
            })
            .collect();
        ComputationRecord { nodes }
    }

    /// Reverse-mode differentiation from a scalar. Gradients accumulate on
    /// every leaf that requires one; the record is consumed.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().clone()));
        }
        if !self.requires_grad() {
            return Err(TensorError::EmptyRecord);
        }
        if self.is_leaf() {
            self.accumulate_grad(&[T::one()]);
            return Ok(());
        }
        let order = self.topo_order();
        if order.is_empty() {
            return Err(TensorError::EmptyRecord);
        }

        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        grads.insert(self.id(), vec![T::one()]);
        for t in order.iter().rev() {
            let Some(node) = lock(&t.inner.node).take() else {
                continue;
            };
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            let input_grads = (node.backward)(&g);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", node.op);
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !input.requires_grad() {
                    continue;
                }
                debug_assert_eq!(ig.len(), input.numel(), "{} grad length", node.op);
                if input.is_leaf() {
                    input.accumulate_grad(&ig);
                } else {
                    match grads.entry(input.id()) {
                        Entry::Occupied(mut e) => {
                            e.get_mut().iter_mut().zip(&ig).for_each(|(a, &b)| *a += b)
                        }
                        Entry::Vacant(e) => {
                            e.insert(ig);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data().iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", self.shape())
            .field("dtype", &T::DTYPE)
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordEntry {
    pub output: u64,
    pub op: &'static str,
    pub inputs: Vec<u64>,
}

/// Executed ops in topological order: every entry's recorded inputs are
/// either leaves or outputs of earlier entries.
#[derive(Clone, Debug, Default)]
pub struct ComputationRecord {
    pub nodes: Vec<RecordEntry>,
}

impl ComputationRecord {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ops(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.nodes.iter().map(|n| n.op)
    }
}
