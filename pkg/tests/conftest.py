import numpy as np
import pytest

from imumixer.data import NormalizedSegment

FD_EPS = 1e-5
FD_TOL = 1e-4


def numeric_grad(f, x: np.ndarray, eps: float = FD_EPS, index=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size) if index is None else index:
        old = flat[i]
        flat[i] = old + eps
        hi = f()
        flat[i] = old - eps
        lo = f()
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def directional_grad(f, x: np.ndarray, direction: np.ndarray, eps: float = FD_EPS) -> float:
    old = x.copy()
    x += eps * direction
    hi = f()
    x[...] = old - eps * direction
    lo = f()
    x[...] = old
    return (hi - lo) / (2 * eps)


def rel_error(analytic, numeric, floor: float = 1e-6) -> float:
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def make_window(subject="S01", action=1, hand="right", source="seg", chunk=0, stamp=0, fill=0.0):
    acc = np.full((128, 3), fill)
    gyro = np.full((128, 3), fill)
    return NormalizedSegment(subject, action, hand, acc, gyro, source, chunk, stamp, 128)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def trained_es32():
    """Mixer/ES/32 trained on fold 0 of a small synthetic set -> (model, held-out test segments)."""
    from imumixer.data import make_user_dependent_folds, normalize_all, stack_windows, synth_generate
    from imumixer.model import MixerModel, resolve_variant
    from imumixer.optim import TrainSchedule, train

    segs = normalize_all(synth_generate(2, 5, seed=21))
    fold = make_user_dependent_folds(segs)[0]
    by_id = {s.id: s for s in segs}
    model = MixerModel(resolve_variant("mixer/es/32"), rng=0)
    windows, labels = stack_windows([by_id[i] for i in fold.train_ids])
    train(model, windows, labels, TrainSchedule(max_epochs=25), seed=0)
    return model, [by_id[i] for i in fold.test_ids]


# -- acceptance reporting: one PASS/FAIL line per criterion --------------------

_CRITERIA: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    _CRITERIA[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[number]
        line = f"criterion {number} {status}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
