from __future__ import annotations

import math

from hypothesis import strategies as st

from stanloop.diagnostics import DiagnosticsReport
from stanloop.loop import IterationRecord

finite_nlpd = st.floats(-50.0, 50.0, allow_nan=False)
nlpd_or_failure = st.one_of(finite_nlpd, st.just(math.inf))

diagnostics = st.one_of(
    st.none(),
    st.builds(
        DiagnosticsReport,
        max_rhat=st.floats(0.5, 3.0),
        min_ess=st.floats(1.0, 1e5),
        divergences=st.integers(0, 100),
        health=st.sampled_from(["ok", "warn", "fail"]),
    ),
)

text = st.text(max_size=40)


@st.composite
def records(draw, iteration: int = 0) -> IterationRecord:
    return IterationRecord(
        iteration=iteration,
        nlpd=draw(nlpd_or_failure),
        accepted=draw(st.booleans()),
        best_so_far=draw(nlpd_or_failure),
        notes=draw(text),
        rationale=draw(text),
        model_hash=draw(st.text("0123456789abcdef", min_size=64, max_size=64)),
        diagnostics=draw(diagnostics),
        wall_time_s=draw(st.floats(0.0, 1e4)),
        timestamp="2026-01-01T00:00:00+00:00",
    )


@st.composite
def histories(draw, max_size: int = 6) -> tuple[IterationRecord, ...]:
    n = draw(st.integers(0, max_size))
    return tuple(draw(records(i)) for i in range(n))
