import numpy as np
import pytest

from slt_lab.init import InitSpec, init_network
from slt_lab.nn import Mask, Network

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def random_net(rng, widths, output_linear=False, bias=True):
    ws = [rng.normal(size=(widths[l + 1], widths[l])) / np.sqrt(widths[l]) for l in range(len(widths) - 1)]
    bs = [rng.normal(size=widths[l + 1]) * (0.5 if bias else 0.0) for l in range(len(widths) - 1)]
    return Network(list(widths), ws, bs, output_linear)


def random_mask(rng, net, keep=0.7):
    return Mask(
        [rng.random(w.shape) < keep for w in net.weights],
        [rng.random(b.shape) < keep for b in net.biases],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
