import numpy as np
import pytest

from mammovssm.tensor import Tensor


def finite_difference(f, arrays, eps=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of every array (mutated in place)."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = arr[i]
            arr[i] = old + eps
            fp = f()
            arr[i] = old - eps
            fm = f()
            arr[i] = old
            g[i] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def max_rel_error(a, b, floor=1e-10):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def check_op_gradient(op, *shapes, seed=0, positive=False, weight_seed=123, eps=1e-5):
    """Compare analytic gradients of sum(w * op(*inputs)) against central differences."""
    rng = np.random.default_rng(seed)
    arrays = []
    for s in shapes:
        a = rng.standard_normal(s)
        if positive:
            a = np.abs(a) + 0.5
        arrays.append(a)
    out_shape = op(*[Tensor(a) for a in arrays]).shape
    w = np.random.default_rng(weight_seed).standard_normal(out_shape)

    def f():
        return float((op(*[Tensor(a) for a in arrays]).data * w).sum())

    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*tensors)
    (out * Tensor(w)).sum().backward()
    numeric = finite_difference(f, arrays, eps=eps)
    return max(max_rel_error(t.grad, n) for t, n in zip(tensors, numeric))


@pytest.fixture
def rng():
    return np.random.default_rng(42)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: list[str] = []


def record_criterion(name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
