use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::real::Real;
use crate::tensor::Tensor;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Computes input gradients from `(inputs, output, output_grad)`.
///
/// Rules are written with [`Var`] operations, so running them with recording
/// enabled yields a differentiable gradient graph (higher-order derivatives).
pub type BackwardFn<T> = Box<dyn Fn(&[Var<T>], &Var<T>, &Var<T>) -> Vec<Option<Var<T>>>>;

struct GradFn<T: Real> {
    name: &'static str,
    inputs: Vec<Var<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Real> {
    id: u64,
    value: Tensor<T>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

/// A tensor value tracked in the autodiff graph.
#[derive(Clone)]
pub struct Var<T: Real>(Rc<Node<T>>);

impl<T: Real> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.0.grad_fn.as_ref().map(|g| g.name).unwrap_or("leaf");
        write!(f, "Var#{}({op}, {:?})", self.0.id, self.0.value)
    }
}

/// True while operations record a graph (see [`no_grad`]).
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

struct GradModeGuard(bool);

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.0));
    }
}

fn set_grad_mode(enabled: bool) -> GradModeGuard {
    GradModeGuard(GRAD_ENABLED.with(|g| g.replace(enabled)))
}

/// Runs `f` without recording any graph.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = set_grad_mode(false);
    f()
}

impl<T: Real> Var<T> {
    fn make(value: Tensor<T>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        Var(Rc::new(Node { id: NEXT_ID.fetch_add(1, Ordering::Relaxed), value, requires_grad, grad_fn }))
    }

    /// Leaf that never receives a gradient.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::make(value, false, None)
    }

    /// Leaf that accumulates a gradient.
    pub fn leaf(value: Tensor<T>) -> Self {
        Self::make(value, true, None)
    }

    pub fn scalar(v: T) -> Self {
        Self::constant(Tensor::scalar(v))
    }

    /// Result of an operation; records the backward rule when any input needs a gradient.
    pub fn from_op(name: &'static str, value: Tensor<T>, inputs: Vec<Var<T>>, backward: BackwardFn<T>) -> Self {
        if grad_enabled() && inputs.iter().any(|v| v.requires_grad()) {
            Self::make(value, true, Some(GradFn { name, inputs, backward }))
        } else {
            Self::constant(value)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    pub fn item(&self) -> T {
        self.0.value.item()
    }
}

/// Gradients keyed by variable id.
#[derive(Default)]
pub struct Gradients<T: Real> {
    map: HashMap<u64, Var<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: &Var<T>) -> Option<&Var<T>> {
        self.map.get(&v.id())
    }

    pub fn tensor(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        self.get(v).map(|g| g.value())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Nodes reachable from `root` through gradient-requiring edges, inputs before outputs.
fn topo_order<T: Real>(root: &Var<T>) -> Vec<Var<T>> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    // Iterative post-order DFS; the bool marks "children already pushed".
    let mut stack = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !node.requires_grad() || !seen.insert(node.id()) {
            continue;
        }
        stack.push((node.clone(), true));
        if let Some(gf) = &node.0.grad_fn {
            for input in gf.inputs.iter().rev() {
                if input.requires_grad() && !seen.contains(&input.id()) {
                    stack.push((input.clone(), false));
                }
            }
        }
    }
    order
}

fn accumulate<T: Real>(grads: &mut HashMap<u64, Var<T>>, id: u64, g: Var<T>) {
    match grads.remove(&id) {
        Some(prev) => {
            grads.insert(id, prev.add(&g));
        }
        None => {
            grads.insert(id, g);
        }
    }
}

/// Reverse-mode sweep from `output` (seeded with `seed`), returning gradients of every
/// visited node whose id is in `keep`, or of every leaf when `keep` is `None`.
///
/// With `create_graph` the gradient computations are themselves recorded, so the
/// returned gradients can be differentiated again.
fn sweep<T: Real>(output: &Var<T>, seed: Var<T>, keep: Option<&HashSet<u64>>, create_graph: bool) -> Gradients<T> {
    let _guard = set_grad_mode(create_graph);
    let order = topo_order(output);
    let mut pending: HashMap<u64, Var<T>> = HashMap::new();
    let mut result = Gradients::default();
    if !output.requires_grad() {
        return result;
    }
    pending.insert(output.id(), seed);
    for node in order.iter().rev() {
        let Some(grad) = pending.remove(&node.id()) else { continue };
        let wanted = match keep {
            Some(ids) => ids.contains(&node.id()),
            None => node.is_leaf(),
        };
        if let Some(gf) = &node.0.grad_fn {
            let input_grads = (gf.backward)(&gf.inputs, node, &grad);
            debug_assert_eq!(input_grads.len(), gf.inputs.len(), "backward of {} arity", gf.name);
            for (input, g) in gf.inputs.iter().zip(input_grads) {
                if let Some(g) = g {
                    if input.requires_grad() {
                        debug_assert_eq!(g.shape(), input.shape(), "gradient shape from {}", gf.name);
                        accumulate(&mut pending, input.id(), g);
                    }
                }
            }
        }
        if wanted {
            result.map.insert(node.id(), grad);
        }
    }
    result
}

impl<T: Real> Var<T> {
    /// Gradients of this scalar with respect to every leaf that requires one.
    pub fn backward(&self) -> Gradients<T> {
        assert_eq!(self.value().numel(), 1, "backward() needs a scalar output");
        sweep(self, Var::constant(Tensor::ones(self.shape().to_vec())), None, false)
    }
}

/// Gradients of the scalar `output` with respect to `wrt`; zero tensors for unreachable inputs.
///
/// With `create_graph = true` the results stay connected to the graph, which is how
/// gradient penalties are differentiated.
pub fn grad<T: Real>(output: &Var<T>, wrt: &[Var<T>], create_graph: bool) -> Vec<Var<T>> {
    assert_eq!(output.value().numel(), 1, "grad() needs a scalar output");
    let keep: HashSet<u64> = wrt.iter().map(|v| v.id()).collect();
    let seed = Var::constant(Tensor::ones(output.shape().to_vec()));
    let grads = sweep(output, seed, Some(&keep), create_graph);
    wrt.iter()
        .map(|v| grads.get(v).cloned().unwrap_or_else(|| Var::constant(Tensor::zeros(v.shape().to_vec()))))
        .collect()
}
