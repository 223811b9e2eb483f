import threading
from typing import TYPE_CHECKING, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

if TYPE_CHECKING:
    from daepinn.autodiff._tensor import Tensor

# a vector-Jacobian product maps the upstream gradient to one contribution per operand, `None` for no contribution
VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class _Node:
    """A recorded primitive. Leaves have no inputs and no adjoint rule"""

    __slots__ = ("op", "inputs", "vjp", "shape", "name", "requires_grad")

    def __init__(
        self,
        op: str,
        inputs: Tuple[Optional[int], ...],
        vjp: Optional[VJP],
        shape: Tuple[int, ...],
        name: Optional[str] = None,
        requires_grad: bool = False,
    ):
        self.op = op
        self.inputs = inputs
        self.vjp = vjp
        self.shape = shape
        self.name = name
        self.requires_grad = requires_grad


class Tape:
    """Append-only record of the primitives evaluated during one forward pass.

    A tape is activated with `with Tape() as tape:`; variables created inside the block through `tape.variable`
    (or `daepinn.autodiff.variable`) are recorded, as is every operation that consumes them. Node inputs always
    reference earlier nodes, so one reverse sweep over the node list is a valid topological order.

    Notes
    -----
    A tape is single-threaded. Distinct tapes can be used from distinct threads, the active-tape stack is
    thread-local.
    """

    def __init__(self) -> None:
        self._nodes: List[_Node] = []
        self._names: Dict[str, int] = {}
        self.last_visits = 0

    def __enter__(self) -> "Tape":
        tape_context.enter(self)
        return self

    def __exit__(self, *_) -> None:
        tape_context.exit()

    def __len__(self) -> int:
        return len(self._nodes)

    def variable(self, value, name: Optional[str] = None, requires_grad: bool = True) -> "Tensor":
        """Records a leaf holding `value`.

        Parameters
        ----------
        value: array-like
            The leaf value, copied as float64.
        name: Optional[str] = None
            Key of the leaf in the gradient mapping returned by `backward`. Must be unique on the tape.
        requires_grad: bool = True
            Whether the leaf is a parameter. Parameter leaves always receive a gradient from `backward`.
        """
        from daepinn.autodiff._tensor import Tensor

        arr = np.array(value, dtype=np.float64)
        if name is not None:
            if name in self._names:
                raise ValueError(f"A leaf named `{name}` is already recorded on this tape")
            self._names[name] = len(self._nodes)
        index = self._append(_Node("leaf", (), None, arr.shape, name=name, requires_grad=requires_grad))
        return Tensor(arr, tape=self, index=index, name=name)

    def _append(self, node: _Node) -> int:
        self._nodes.append(node)
        return len(self._nodes) - 1

    def record(self, op: str, shape: Tuple[int, ...], inputs: Tuple[Optional[int], ...], vjp: VJP) -> int:
        """Appends an operation node and returns its index"""
        return self._append(_Node(op, inputs, vjp, shape))

    def backward(self, seed: "Tensor", wrt: Optional[Sequence["Tensor"]] = None) -> Dict[str, np.ndarray]:
        """Runs the reverse sweep from a scalar node.

        Parameters
        ----------
        seed: Tensor
            A scalar-valued tensor recorded on this tape.
        wrt: Optional[Sequence[Tensor]] = None
            Additional leaves, typically with `requires_grad=False`, whose `.grad` should be populated.

        Returns
        -------
        Dict[str, np.ndarray]
            Gradient of the seed with respect to every parameter leaf, keyed by leaf name (`leaf<index>` for
            unnamed leaves). Parameters the seed does not depend on get zeros.

        Raises
        ------
        ValueError
            When the seed is not scalar or not recorded on this tape.
        """
        if seed.tape is not self or seed.index is None:
            raise ValueError("Backward seed must be recorded on this tape")
        if seed.value.size != 1:
            raise ValueError(f"Backward seed must be scalar, found shape {seed.value.shape}")

        grads: List[Optional[np.ndarray]] = [None] * (seed.index + 1)
        grads[seed.index] = np.ones(self._nodes[seed.index].shape)
        self.last_visits = 0
        for i in range(seed.index, -1, -1):
            self.last_visits += 1
            node = self._nodes[i]
            g = grads[i]
            if g is None or node.vjp is None:
                continue
            for inp, contrib in zip(node.inputs, node.vjp(g)):
                if inp is None or contrib is None:
                    continue
                grads[inp] = contrib if grads[inp] is None else grads[inp] + contrib

        def grad_of(i: int) -> np.ndarray:
            g = grads[i] if i < len(grads) else None
            return np.zeros(self._nodes[i].shape) if g is None else np.asarray(g, dtype=np.float64)

        out: Dict[str, np.ndarray] = {}
        for i, node in enumerate(self._nodes):
            if node.op == "leaf" and node.requires_grad:
                out[node.name if node.name is not None else f"leaf{i}"] = grad_of(i)
        for t in wrt or ():
            if t.tape is not self or t.index is None:
                raise ValueError("Gradients can only be requested for tensors recorded on this tape")
            t.grad = grad_of(t.index)
        return out


class _TapeContext(threading.local):
    """Holds the stack of active tapes of the calling thread"""

    def __init__(self) -> None:
        super().__init__()
        self._tapes: List[Tape] = []

    def enter(self, t: Tape) -> None:
        """Pushes a tape onto the context"""
        self._tapes.append(t)

    def exit(self) -> None:
        """Pops the innermost tape off the context"""
        self._tapes.pop()

    def is_set(self) -> bool:
        """Returns whether any tape is active"""
        return self._tapes != []

    def current(self) -> Optional[Tape]:
        """Returns the innermost active tape, if any"""
        return self._tapes[-1] if self._tapes else None


tape_context = _TapeContext()
