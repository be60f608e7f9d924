import numpy as np
import pytest
import torch
from hypothesis import settings

from cogcap.annotations import AnnotationRecord

# timing varies a lot on a shared CPU; correctness does not depend on it
settings.register_profile("cap", deadline=None)
settings.load_profile("cap")


def make_record(**kw) -> AnnotationRecord:
    base = dict(
        video_id="v0001",
        n_frames=200,
        fps=30.0,
        t_ai=50,
        t_co=100,
        t_ae=150,
        fact="a pedestrian is crossing the road",
        effect="the ego car hits a pedestrian",
        reason="a pedestrian crosses the road suddenly",
        introspection="the ego car should slow down",
        accident_category=1,
        weather="sunny",
        light="daytime",
        occasion="urban",
        road_type="intersection",
        is_accident=True,
    )
    base.update(kw)
    return AnnotationRecord(**base)


@pytest.fixture
def record():
    return make_record()


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


# acceptance criteria report one line each at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
