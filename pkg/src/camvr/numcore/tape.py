"""Reverse-mode gradient tape.

Ops record themselves on the innermost active tape while it is entered as a
context manager. ``gradients`` walks the records once, in reverse execution
order, accumulating adjoints keyed by tensor identity. Parameters that never
influenced the loss get exact-zero gradients.
"""

import numpy as np

from ..errors import ContractError

_TAPE_STACK = []


def active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class GradTape:
    def __init__(self):
        # each record: (output Tensor, input Tensors, backward fn)
        # backward maps the output adjoint to one adjoint per input
        # (None for inputs that need none). Records hold strong references,
        # so tensor identities stay stable for the tape's lifetime.
        self._records = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def record(self, out, inputs, backward):
        self._records.append((out, inputs, backward))

    def num_records(self):
        return len(self._records)

    def gradients(self, loss, params):
        """d(loss)/d(p) for every tensor in ``params`` (a name->Tensor dict).

        ``loss`` must be a scalar produced through ops recorded on this tape.
        Returns a name->ndarray dict, each entry shaped like its parameter.
        Every op output is produced exactly once, so each record is visited
        exactly once and its adjoint can be popped when consumed.
        """
        if loss.size != 1:
            raise ContractError(
                f"gradients() needs a scalar loss, got shape {loss.shape}")
        adjoints = {id(loss): np.ones_like(loss.data)}
        visited = 0
        for out, inputs, backward in reversed(self._records):
            g = adjoints.pop(id(out), None)
            visited += 1
            if g is None:
                continue
            contribs = backward(g)
            for inp, contrib in zip(inputs, contribs):
                if contrib is None:
                    continue
                key = id(inp)
                if key in adjoints:
                    adjoints[key] = adjoints[key] + contrib
                else:
                    adjoints[key] = contrib
        assert visited == len(self._records)
        result = {}
        for name, p in params.items():
            grad = adjoints.get(id(p))
            if grad is None:
                grad = np.zeros_like(p.data)
            result[name] = grad.reshape(p.data.shape)
        return result
