//! Reverse-mode differentiation over an explicit operation tape.
//!
//! Every differentiable operation appends one node to a [`Tape`]: its output
//! value plus a closure that maps the output gradient onto the gradients of
//! its parents. [`Tape::backward`] walks the nodes in exact reverse of the
//! recording order. A tape is confined to the thread that created it; run
//! one tape per thread for concurrent evaluation.

use std::cell::RefCell;
use std::fmt;

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

type BackwardFn = Box<dyn Fn(&[f64], &mut GradSink<'_>)>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A value that gradients are accumulated for.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            value,
            requires_grad: true,
            backward: None,
        })
    }

    /// A value that is never differentiated.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            value,
            requires_grad: false,
            backward: None,
        })
    }

    /// Appends an operation output. The backward closure receives the
    /// gradient of `value` and must accumulate into the parents' slots.
    /// It is dropped when no parent requires a gradient.
    pub fn record<'t, F>(
        &'t self,
        value: Tensor,
        parents: &[Var<'t>],
        backward: F,
    ) -> Result<Var<'t>>
    where
        F: Fn(&[f64], &mut GradSink<'_>) + 'static,
    {
        value.ensure_finite("tape operation")?;
        let requires_grad = parents.iter().any(|p| {
            debug_assert!(
                std::ptr::eq(p.tape, self),
                "parent recorded on another tape"
            );
            p.requires_grad()
        });
        Ok(self.push(Node {
            value,
            requires_grad,
            backward: requires_grad.then(|| Box::new(backward) as BackwardFn),
        }))
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every node together with its saved tensors.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
    }

    /// Differentiates the sum of `root`'s entries with respect to every
    /// node recorded before it.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        self.backward_traced(root, |_| {})
    }

    /// As [`Tape::backward`], reporting each node id whose rule is applied.
    pub fn backward_traced(
        &self,
        root: Var<'_>,
        mut visit: impl FnMut(usize),
    ) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if root.id >= nodes.len() {
            return Err(Error::Config("root does not belong to this tape".into()));
        }
        let needs: Vec<bool> = nodes.iter().map(|n| n.requires_grad).collect();
        let sizes: Vec<usize> = nodes.iter().map(|n| n.value.numel()).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if needs[root.id] {
            grads[root.id] = Some(vec![1.0; sizes[root.id]]);
        }
        for id in (0..=root.id).rev() {
            let Some(rule) = nodes[id].backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            visit(id);
            {
                let mut sink = GradSink {
                    grads: &mut grads,
                    needs: &needs,
                    sizes: &sizes,
                };
                rule(&g, &mut sink);
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient at node {id}"
                )));
            }
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn value_of(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }
}

/// Write access to parent gradient buffers during one backward rule.
pub struct GradSink<'a> {
    grads: &'a mut [Option<Vec<f64>>],
    needs: &'a [bool],
    sizes: &'a [usize],
}

impl GradSink<'_> {
    pub fn wants(&self, id: usize) -> bool {
        self.needs[id]
    }

    /// Zero-initialised accumulation buffer for node `id`, or `None` if the
    /// node does not take gradients.
    pub fn slot(&mut self, id: usize) -> Option<&mut [f64]> {
        if !self.needs[id] {
            return None;
        }
        let size = self.sizes[id];
        Some(
            self.grads[id]
                .get_or_insert_with(|| vec![0.0; size])
                .as_mut_slice(),
        )
    }

    pub fn add(&mut self, id: usize, g: &[f64]) {
        if let Some(slot) = self.slot(id) {
            debug_assert_eq!(slot.len(), g.len());
            for (s, v) in slot.iter_mut().zip(g) {
                *s += v;
            }
        }
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; zeros if it required a gradient but nothing reached it.
    pub fn get(&self, var: Var<'_>) -> Option<Tensor> {
        let shape = &self.shapes[var.id];
        match &self.grads[var.id] {
            Some(g) => Some(Tensor::new(shape, g.clone()).expect("gradient shape")),
            None if var.requires_grad() => Some(Tensor::zeros(shape)),
            None => None,
        }
    }

    /// True when some upstream rule actually wrote into `var`'s slot.
    pub fn reached(&self, var: Var<'_>) -> bool {
        self.grads[var.id].is_some()
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape().as_slice() {
            [b, c, h, w] => Ok((b, c, h, w)),
            ref s => Err(dim_err!("expected a 4-D value, got shape {s:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::cell::RefCell;
    use std::rc::Rc;

    use super::*;

    #[test]
    fn backward_visits_in_reverse_recording_order() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let log = Rc::new(RefCell::new(Vec::new()));
        let mut cur = x;
        for _ in 0..4 {
            let prev = cur.id();
            let log = Rc::clone(&log);
            cur = tape
                .record(cur.value(), &[cur], move |g, sink| {
                    log.borrow_mut().push(prev);
                    sink.add(prev, g);
                })
                .unwrap();
        }
        let mut visited = Vec::new();
        tape.backward_traced(cur, |id| visited.push(id)).unwrap();
        assert_eq!(visited, vec![4, 3, 2, 1]);
        assert_eq!(*log.borrow(), vec![3, 2, 1, 0]);
    }

    #[test]
    fn constants_do_not_record_rules() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::scalar(1.0));
        let y = tape
            .record(c.value(), &[c], |_, _| panic!("must not run"))
            .unwrap();
        assert!(!y.requires_grad());
        let grads = tape.backward(y).unwrap();
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn record_rejects_non_finite() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        let err = tape.record(Tensor::scalar(f64::NAN), &[x], |_, _| {});
        assert!(matches!(err, Err(Error::Numerical(_))));
    }

    #[test]
    fn clear_frees_nodes() {
        let tape = Tape::new();
        tape.leaf(Tensor::zeros(&[4]));
        assert_eq!(tape.len(), 1);
        tape.clear();
        assert!(tape.is_empty());
    }
}
