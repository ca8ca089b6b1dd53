import sys

import numpy as np

from dmml_sim.nn_kernel import ParamBlock


def pytest_terminal_summary(terminalreporter):
    """Surface the acceptance-criteria result lines in the run summary."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


def finite_difference(loss_fn, blocks: dict[str, ParamBlock], h: float = 1e-5):
    """Central-difference gradients of loss_fn() w.r.t. every block entry.

    loss_fn reads the blocks' current values; blocks are restored afterwards.
    """
    grads = {}
    for name, block in blocks.items():
        g = np.zeros_like(block.values)
        flat = block.values.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            g.ravel()[i] = (up - down) / (2.0 * h)
        grads[name] = g
    return grads


def max_rel_error(analytic: dict, numeric: dict) -> float:
    worst = 0.0
    for name, g in numeric.items():
        a = analytic.get(name, np.zeros_like(g))
        denom = max(np.abs(g).max(), np.abs(a).max(), 1e-8)
        worst = max(worst, float(np.abs(a - g).max() / denom))
    return worst
