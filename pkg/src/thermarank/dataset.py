"""Dataset records and file formats.

All pipeline artifacts are line-oriented text: architecture files carry
one canonical record per line (``S;3;{[0,1],[2]}``), scenario files one
``id;load,load,...`` line each, and datasets are one self-describing JSON
object per line.  Writes go through a temp file and rename, so readers
never see partial output.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, asdict
from typing import Iterable, Optional

import numpy as np

from . import architectures as ag
from .architectures import Architecture, Scenario
from .endurance import LabeledInstance

SPLIT_TAGS = ("train", "test", "holdout", "")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetRecord:
    arch_key: str
    family: str
    n_cphx: int
    edges: tuple[tuple[int, int], ...]
    node_kinds: tuple[str, ...]
    loads: tuple[float, ...]
    scenario_id: int
    J: float
    split_tag: str = ""

    def __post_init__(self):
        if self.split_tag not in SPLIT_TAGS:
            raise DatasetError(f"unknown split tag {self.split_tag!r}")

    def to_json(self) -> str:
        d = asdict(self)
        d["edges"] = [list(e) for e in self.edges]
        d["node_kinds"] = list(self.node_kinds)
        d["loads"] = list(self.loads)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "DatasetRecord":
        d = json.loads(line)
        return cls(
            arch_key=d["arch_key"],
            family=d["family"],
            n_cphx=d["n_cphx"],
            edges=tuple(tuple(e) for e in d["edges"]),
            node_kinds=tuple(d["node_kinds"]),
            loads=tuple(d["loads"]),
            scenario_id=d["scenario_id"],
            J=d["J"],
            split_tag=d.get("split_tag", ""),
        )

    @classmethod
    def from_instance(cls, inst: LabeledInstance, split_tag: str = "") -> "DatasetRecord":
        flat = inst.fg.flat
        edges = tuple(
            (i, j)
            for i in range(flat.n_vertices)
            for j in range(i + 1, flat.n_vertices)
            if flat.adjacency[i, j]
        )
        kinds = tuple(
            v.kind if v.kind != ag.CPHX else f"{v.kind}:{v.load_index}"
            for v in flat.vertices
        )
        return cls(
            arch_key=inst.arch.key,
            family=inst.arch.family,
            n_cphx=inst.arch.n_cphx,
            edges=edges,
            node_kinds=kinds,
            loads=inst.scenario.loads,
            scenario_id=inst.scenario.scenario_id,
            J=inst.label.J,
            split_tag=split_tag,
        )

    def group(self) -> str:
        """Population tag used for per-scenario rank metrics, e.g. ``S3``."""
        return f"{self.family}{self.n_cphx}"

    def feature_graph(self) -> ag.FeatureGraph:
        arch = ag.parse(self.arch_key)
        return ag.node_features(arch, Scenario(self.scenario_id, self.loads))


def atomic_write_text(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- architecture files ------------------------------------------------------

def write_architectures(archs: Iterable[Architecture], path: str):
    atomic_write_text(path, "".join(ag.serialize(a) + "\n" for a in archs))


def read_architectures(path: str) -> list[Architecture]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(ag.parse(line))
    return out


# -- scenario files ----------------------------------------------------------

def write_scenarios(scenarios: Iterable[Scenario], path: str):
    lines = [
        f"{s.scenario_id};{','.join(repr(float(d)) for d in s.loads)}\n"
        for s in scenarios
    ]
    atomic_write_text(path, "".join(lines))


def read_scenarios(path: str) -> list[Scenario]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                sid, loads = line.split(";", 1)
                out.append(
                    Scenario(int(sid), tuple(float(x) for x in loads.split(",")))
                )
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: bad scenario line") from exc
    return out


def generate_scenarios(
    n: int, count: int, seed: int, low: float = 4.0, high: float = 16.0
) -> list[Scenario]:
    """Seeded scenarios, loads uniform in [low, high] kW (numpy PCG64)."""
    if count < 1:
        raise DatasetError("count must be >= 1")
    if not 4.0 <= low < high <= 16.0:
        raise DatasetError("load range must satisfy 4 <= low < high <= 16")
    rng = np.random.default_rng(seed)
    return [
        Scenario(i, tuple(float(d) for d in rng.uniform(low, high, n)))
        for i in range(count)
    ]


# -- dataset files -----------------------------------------------------------

def write_dataset(records: Iterable[DatasetRecord], path: str):
    atomic_write_text(path, "".join(r.to_json() + "\n" for r in records))


def read_dataset(path: str) -> list[DatasetRecord]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(DatasetRecord.from_json(line))
    return out
