"""Shared fixtures for the test suite.

The acceptance tests share one expensive measurement battery (paired trials,
method sweeps, ramp-shape comparisons, defense evaluations).  It runs once
per session.  Set ``POISONLAB_BATTERY_CHECKPOINT`` to a JSONL path to
checkpoint each step as it finishes; an interrupted or earlier run at the
same path resumes instead of recomputing.  Every step is deterministic given
its seeds, so a resumed battery is identical to a fresh one.
"""

from __future__ import annotations

import os
from pathlib import Path

import pytest

BATTERY_ENV = "POISONLAB_BATTERY_CHECKPOINT"


@pytest.fixture(scope="session")
def battery_views():
    import acceptance_protocol

    raw = os.environ.get(BATTERY_ENV, "")
    checkpoint = Path(raw) if raw else None
    battery = acceptance_protocol.run_battery(checkpoint=checkpoint,
                                              echo=lambda *_: None)
    return acceptance_protocol.collect(battery)
