import numpy as np
import pytest
from hypothesis import strategies as st

from suction_tamp.geom import RigidTransform
from suction_tamp.robot import default_robot

finite = st.floats(-2.0, 2.0, allow_nan=False, allow_infinity=False)


@st.composite
def transforms(draw):
    p = draw(st.tuples(finite, finite, finite))
    q = np.array(draw(st.tuples(*[st.floats(-1, 1)] * 4)), float)
    if np.linalg.norm(q) < 1e-3:
        q = np.array([1.0, 0, 0, 0])
    return RigidTransform(p, q)


def random_transform(rng, scale=1.0):
    q = rng.normal(size=4)
    return RigidTransform(rng.uniform(-scale, scale, 3), q / np.linalg.norm(q))


@pytest.fixture(scope="session")
def model():
    return default_robot()


class PlanCache:
    """Plans shared by every test in the session, keyed by (scene, tool, seed)."""

    def __init__(self):
        self._store = {}

    def get(self, scene_name, tool_name=None, seed=0):
        from suction_tamp.bench import database_for, with_tool
        from suction_tamp.errors import TaskFailure
        from suction_tamp.graspdb import load_tool
        from suction_tamp.planner import plan_task
        from suction_tamp.robot import load_robot
        from suction_tamp.scene import parse_scene

        scene = parse_scene(scene_name)
        tool_name = tool_name or scene.tool
        key = (scene_name, tool_name, seed)
        if key not in self._store:
            scene = with_tool(scene, tool_name)
            model, tool = load_robot(scene.robot), load_tool(tool_name)
            try:
                res = plan_task(model, tool, database_for(tool_name), scene, seed)
            except TaskFailure as exc:
                res = exc
            self._store[key] = (scene, model, tool, res)
        return self._store[key]


@pytest.fixture(scope="session")
def plans():
    return PlanCache()


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Context manager recording one acceptance line: ``with criterion(3, "title") as note: ...``."""
    from contextlib import contextmanager

    @contextmanager
    def record(number, title):
        notes = []
        ok = False
        try:
            yield notes
            ok = True
        finally:
            detail = "; ".join(notes)
            ACCEPTANCE[number] = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}" + (
                f" ({detail})" if detail else "")
            print(ACCEPTANCE[number])
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
