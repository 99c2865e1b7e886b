import numpy as np
import pytest

from skintone_audit.imaging import RasterImage, YCrCbImage
from skintone_audit.manifest import load_manifest
from skintone_audit.model import FEMALE, MALE, Preprocessor, TrainConfig, save_checkpoint, train
from skintone_audit.synthetic import make_dataset

# (criterion number, passed, detail) rows filled in by test_acceptance.py
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")


def ycc(y, cr, cb):
    """Build a YCrCbImage from three equally-shaped integer grids."""
    return YCrCbImage(np.stack([np.asarray(y), np.asarray(cr), np.asarray(cb)], axis=-1).astype(np.uint8))


@pytest.fixture(scope="session")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthetic")
    return make_dataset(root / "data", n=40, seed=7)


@pytest.fixture(scope="session")
def trained_model(dataset, tmp_path_factory):
    rows = load_manifest(dataset)
    pre = Preprocessor(32, 3)
    x = np.stack([pre.to_input(RasterImage.open(r.path)) for r in rows])
    y = np.array([MALE if r.gender == "male" else FEMALE for r in rows])
    net = train(TrainConfig(epochs=30, seed=3), x, y)
    path = tmp_path_factory.mktemp("model") / "model.skt"
    save_checkpoint(net, path)
    return path
