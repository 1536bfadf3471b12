import importlib.util
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

ROOT = Path(__file__).resolve().parents[1]


def _load_script(name: str):
    spec = importlib.util.spec_from_file_location(name, ROOT / "scripts" / f"{name}.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


@pytest.fixture(scope="session")
def desk_dir(tmp_path_factory):
    """300 PPM tiles (48x48) cut from scikit-image sample images."""
    out = tmp_path_factory.mktemp("desk")
    _load_script("make_desk_data").main([str(out), "--tile", "48", "--count", "300"])
    return out


@pytest.fixture(scope="session")
def small_dir(tmp_path_factory):
    """16 random-texture PPM images, enough for smoke runs."""
    from PIL import Image

    out = tmp_path_factory.mktemp("small")
    rng = np.random.default_rng(3)
    for i in range(16):
        base = rng.integers(0, 256, size=(5, 5, 3)).astype(np.uint8)
        img = Image.fromarray(base).resize((40, 40), Image.Resampling.BILINEAR)
        img.save(out / f"img{i:02d}.ppm")
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance report: one line per criterion, printed after the run -------------

_CRITERIA: list[tuple[str, str, str]] = []


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    detail = dict(item.user_properties).get("detail", "")
    outcome = "PASS" if call.excinfo is None else "FAIL"
    _CRITERIA.append((str(marker.args[0]), outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid, outcome, detail in sorted(_CRITERIA, key=lambda c: (int(c[0].rstrip("abc")), c[0])):
        terminalreporter.write_line(f"criterion {cid}: {outcome}  {detail}".rstrip())
