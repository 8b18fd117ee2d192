use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::param::{ParamId, ParamKind, ParamStore};
use crate::tensor::Tensor;

/// Adjoint of one recorded op: receives the output gradient and a flag per
/// parent telling whether that parent needs a gradient; returns one entry per
/// parent (None where not needed).
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

/// Ordered record of executed ops. Nodes are appended in execution order, so
/// every node's parents precede it and the backward pass is a reverse sweep.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    bindings: RefCell<Vec<(usize, ParamId)>>,
    spent: Cell<bool>,
    fast_math: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            bindings: RefCell::new(Vec::new()),
            spent: Cell::new(false),
            fast_math: Cell::new(false),
        }
    }

    /// Run convolution products in 32-bit arithmetic. Values and gradients
    /// are still stored as `f64`.
    pub fn set_fast_math(&self, on: bool) {
        self.fast_math.set(on);
    }

    pub fn fast_math(&self) -> bool {
        self.fast_math.get()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// Copies a parameter onto the tape. Its gradient is routed back by
    /// [`Gradients::accumulate_into`].
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        let p = store.get(id);
        let var = self.leaf(p.value.clone(), p.kind != ParamKind::Buffer);
        self.bindings.borrow_mut().push((var.id, id));
        var
    }

    fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            parents: Vec::new(),
            backward: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn record(&self, value: Tensor, parents: &[Var<'_>], backward: BackwardFn) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|p| nodes[p.id].requires_grad);
        let node = if requires_grad {
            Node {
                value: Rc::new(value),
                requires_grad,
                parents: parents.iter().map(|p| p.id).collect(),
                backward: Some(backward),
            }
        } else {
            Node {
                value: Rc::new(value),
                requires_grad,
                parents: Vec::new(),
                backward: None,
            }
        };
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar loss. A tape can be swept once.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if self.spent.get() {
            return Err(TensorError::BackwardTwice);
        }
        let loss_shape = loss.shape();
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape));
        }
        self.spent.set(true);

        let mut nodes = self.nodes.borrow_mut();
        let n = nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(loss_shape, 1.0));

        for id in (0..=loss.id).rev() {
            let Some(backward) = nodes[id].backward.take() else {
                continue;
            };
            let Some(g_out) = grads[id].take() else {
                continue;
            };
            let parents = nodes[id].parents.clone();
            let needs: Vec<bool> = parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = backward(&g_out, &needs);
            debug_assert_eq!(parent_grads.len(), parents.len());
            for ((&p, g), need) in parents.iter().zip(parent_grads).zip(&needs) {
                let (Some(g), true) = (g, *need) else { continue };
                debug_assert_eq!(g.shape(), nodes[p].value.shape(), "adjoint shape");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        // Intermediate values are no longer needed once adjoints are computed.
        for node in nodes.iter_mut() {
            node.backward = None;
        }
        Ok(Gradients {
            grads,
            shapes,
            bindings: self.bindings.borrow().clone(),
        })
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }
}

/// Adjoints produced by [`Tape::backward`]. Gradients are retained for leaf
/// nodes only.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    bindings: Vec<(usize, ParamId)>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `var`; all zeros when `var` is unreachable
    /// from the loss.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[var.id].clone()))
    }

    /// Adds parameter gradients into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(node, pid) in &self.bindings {
            if let Some(g) = &self.grads[node] {
                store.get_mut(pid).grad.add_assign(g);
            }
        }
    }
}
