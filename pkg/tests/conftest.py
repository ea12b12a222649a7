# tests/conftest.py
import logging
import os

import numpy as np
import pytest

from data import RECORD_BYTES, TEST_FILES, TRAIN_FILES, encode_record


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _quiet_progress(caplog):
    # keeps tqdm bars out of the captured output
    caplog.set_level(logging.WARNING)


def synthetic_images(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Class c lights up colour channel c % 3, with a stripe whose row depends
    on c, plus noise; values are exact multiples of 1/255."""
    n = len(labels)
    imgs = rng.integers(0, 40, size=(n, 3, 32, 32)).astype(np.float64)
    for i, c in enumerate(labels):
        imgs[i, c % 3] += 180
        imgs[i, :, 4 + 3 * c:6 + 3 * c, :] = 250
    return np.clip(imgs, 0, 255) / 255.0


def write_cifar_dir(path, per_file: int = 20, num_classes: int = 10, seed: int = 0) -> str:
    """CIFAR-10 binary layout with ``per_file`` records in each batch file."""
    rng = np.random.default_rng(seed)
    os.makedirs(path, exist_ok=True)
    for name in TRAIN_FILES + TEST_FILES:
        labels = rng.integers(0, num_classes, size=per_file)
        imgs = synthetic_images(labels, rng)
        with open(os.path.join(path, name), "wb") as f:
            for img, lab in zip(imgs, labels):
                f.write(encode_record(img, int(lab)))
    assert os.path.getsize(os.path.join(path, TRAIN_FILES[0])) == per_file * RECORD_BYTES
    return str(path)


@pytest.fixture
def cifar_dir(tmp_path):
    return write_cifar_dir(tmp_path / "cifar", per_file=20)
