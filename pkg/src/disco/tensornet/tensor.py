import numpy as np


class Tensor:
    """An n-d array with an optional gradient slot and a link to the op that made it.

    Leaf tensors (parameters, inputs) have no backward function. Op outputs keep
    references to their parents and a closure that maps the output gradient
    to parent gradients.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        data = np.asarray(data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float64)
        self.data = np.ascontiguousarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() of a tensor with {self.data.size} elements")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g, fresh=False):
        """Add g into the gradient slot. fresh=True hands over ownership of g."""
        if not self.requires_grad:
            return
        if self.grad is None:
            if fresh and g.dtype == self.data.dtype and g.flags.writeable and g.shape == self.data.shape:
                self.grad = g
            else:
                self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Backpropagate from this tensor through the recorded graph."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("grad must be given for non-scalar tensors")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        self.accumulate(grad)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            node._backward(node.grad)
            # intermediate gradients are not needed once propagated
            node.grad = None
            node._backward = None
            node._parents = ()


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


def make_output(data, parents, backward):
    """Build an op output; backward is dropped when no parent needs gradients."""
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
