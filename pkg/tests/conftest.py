import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def textured():
    """A smooth-plus-detail 48x48 test image in [0, 255]."""
    y, x = np.mgrid[0:48, 0:48].astype(float)
    img = 128 + 60 * np.sin(x / 5.0) * np.cos(y / 7.0) + 20 * np.sin((x + 2 * y) / 2.3)
    return np.clip(img, 0, 255)


BUNDLED = ("astronaut", "camera", "coffee", "chelsea", "rocket", "brick", "grass", "gravel",
           "moon", "page", "text", "coins")


def bundled_images():
    """Grey-level views of scikit-image's sample pictures."""
    import skimage.data

    out = {}
    for name in BUNDLED:
        img = np.asarray(getattr(skimage.data, name)(), dtype=np.float64)
        if img.ndim == 3:
            img = img[..., :3] @ np.array([65.481, 128.553, 24.966]) / 255.0 + 16.0
        out[name] = img
    return out


@pytest.fixture(scope="session")
def desk_dir(tmp_path_factory):
    """Six 64x64 crops written as PGM files."""
    from deepkriging.image_io import write_image

    d = tmp_path_factory.mktemp("desk")
    for i, (name, img) in enumerate(list(bundled_images().items())[:6]):
        y, x = img.shape[0] // 3, img.shape[1] // 3
        write_image(d / f"{i:02d}_{name}.pgm", img[y:y + 64, x:x + 64])
    return d


# One line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
