"""Line-delimited JSON export of generation traces.

Each trace is one header record followed by one record per step::

    {"input": [...], "L": 5, "length_log_prob": -0.1, "strategy": "...", "config": {...}}
    {"t": 1, "positions": [0], "old_symbols": [1], "new_symbols": [7],
     "coord_log_prob": 0.0, "symbol_log_prob": -0.3}

Token ids are written as integers; floats use ``repr`` round-tripping so a
read-back trace compares equal to the one written. A file may hold many
traces back to back: every header starts a new one.
"""

from __future__ import annotations

import json
from typing import IO, Iterable, Iterator

from .core import GenerationStep, GenerationTrace, Vocabulary

HEADER_FIELDS = ("input", "L", "length_log_prob", "strategy", "config")
STEP_FIELDS = ("t", "positions", "old_symbols", "new_symbols", "coord_log_prob", "symbol_log_prob")


def trace_records(trace: GenerationTrace) -> Iterator[dict]:
    yield {
        "input": list(trace.input),
        "L": trace.length,
        "length_log_prob": trace.length_log_prob,
        "strategy": trace.strategy,
        "config": dict(trace.config),
    }
    for t, step in enumerate(trace.steps, start=1):
        prev = trace.intermediates[t - 1]
        positions = list(step.positions)
        yield {
            "t": t,
            "positions": positions,
            "old_symbols": [prev[i] for i in positions],
            "new_symbols": [step.replacements[i] for i in positions],
            "coord_log_prob": step.coord_log_prob,
            "symbol_log_prob": step.symbol_log_prob,
        }


def write_traces(traces: Iterable[GenerationTrace], fh: IO[str]) -> None:
    for trace in traces:
        for record in trace_records(trace):
            fh.write(json.dumps(record, sort_keys=False) + "\n")


def read_traces(fh: IO[str], vocab: Vocabulary) -> list[GenerationTrace]:
    traces = []
    header = None
    steps: list[GenerationStep] = []

    def flush():
        if header is not None:
            traces.append(
                GenerationTrace.from_steps(
                    header["input"],
                    header["L"],
                    header["length_log_prob"],
                    steps,
                    vocab,
                    strategy=header["strategy"],
                    config=header["config"],
                )
            )

    for line in fh:
        line = line.strip()
        if not line:
            continue
        record = json.loads(line)
        if "L" in record:
            flush()
            header, steps = record, []
        else:
            if header is None:
                raise ValueError("step record before any header")
            steps.append(
                GenerationStep.at(
                    header["L"],
                    dict(zip(record["positions"], record["new_symbols"])),
                    record["coord_log_prob"],
                    record["symbol_log_prob"],
                )
            )
    flush()
    return traces
