"""Evaluation harness: policy resolution, per-instance rollouts, benchmark tables and scene dumps."""

from __future__ import annotations

import csv
import io
import logging
import time
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from rich.table import Table

from packbench.bin import BinDims, Heightmap, ItemDims, Orientation, Placement, place_item
from packbench.dataset import (
    DEFAULT_SEQUENCE_LENGTH,
    RsDataset,
    dumps_types,
    generate_dataset,
    load_dataset,
    rescale_dataset,
    scale_dataset,
    split_types,
    write_dataset,
)
from packbench.env import EpisodeConfig, PackingEnv
from packbench.errors import DomainError, PackbenchError, UnknownPolicyError
from packbench.heuristics import HeuristicKind, HeuristicPolicy, Policy
from packbench.helpers import atomic_write_text, results_table
from packbench.placement import DEFAULT_EMS_CAPACITY
from packbench.plugins import policy_plugins
from packbench.policy.checkpoint import load_params
from packbench.policy.network import NeuralPolicy


logger = logging.getLogger(__name__)

CHECKPOINT_PREFIX = "ckpt:"
CHECKPOINT_SUFFIX = ".ckpt"
BUILTIN_POLICIES = tuple(kind.value for kind in HeuristicKind)
SUMMARY_COLUMNS = ("method", "env", "uti", "num", "sta", "count")
INSTANCE_COLUMNS = ("instance", "uti", "num")


def resolve_policy(spec: str, seed: int | None = None) -> Policy:
    """Turn a policy specification into a policy.

    Accepted forms: a built-in heuristic name, ``ckpt:PATH``, any path ending
    in ``.ckpt``, or the name of a ``packbench.policies`` plugin.

    Args:
        spec: Policy specification.
        seed: Seed for stochastic policies.

    Returns:
        Policy ready for evaluation (neural policies act greedily).

    Raises:
        UnknownPolicyError: If the specification matches nothing.
    """  # noqa: DOC502
    if spec in BUILTIN_POLICIES:
        return HeuristicPolicy(HeuristicKind(spec), seed)

    if spec.startswith(CHECKPOINT_PREFIX) or spec.endswith(CHECKPOINT_SUFFIX):
        path = Path(spec.removeprefix(CHECKPOINT_PREFIX))
        return NeuralPolicy(load_params(path), name=path.stem, seed=seed)

    factory = policy_plugins().get(spec)
    if factory is None:
        raise UnknownPolicyError(
            f"Unknown policy '{spec}'. Use one of {', '.join(BUILTIN_POLICIES)}, ckpt:PATH, or a registered plugin."
        )
    return factory(seed)


def policy_name(spec: str) -> str:
    """Report name of a policy specification: checkpoints are named by file stem."""
    if spec.startswith(CHECKPOINT_PREFIX) or spec.endswith(CHECKPOINT_SUFFIX):
        return Path(spec.removeprefix(CHECKPOINT_PREFIX)).stem
    return spec


def resolve_env(
    spec: str,
    count: int,
    seed: int,
    length: int = DEFAULT_SEQUENCE_LENGTH,
    dims: BinDims | None = None,
) -> tuple[str, RsDataset]:
    """Turn an environment specification into a named evaluation dataset.

    ``bin-K`` (K divisible by 10) is a Bin-10 dataset generated from ``seed``
    and scaled by ``K / 10``, so every ``bin-K`` shares one item sequence up to
    scale. Anything else is read as a dataset file. With ``dims``, the resolved
    dataset is scaled onto that bin.

    Args:
        spec: ``bin-K`` or a dataset path.
        count: Instances for generated environments.
        seed: Seed for generated environments.
        length: Items per generated sequence.
        dims: Optional target bin, an integer multiple of the dataset bin.

    Returns:
        Tuple of the environment name and its dataset.

    Raises:
        DomainError: If ``K`` is not a positive multiple of 10, or ``dims`` is not a
            multiple of the dataset bin.
    """  # noqa: DOC502
    if spec.startswith("bin-"):
        try:
            size = int(spec.removeprefix("bin-"))
        except ValueError as e:
            raise DomainError(f"Invalid environment '{spec}'. Expected 'bin-K' with K a multiple of 10.") from e
        if size < 10 or size % 10:
            raise DomainError(f"Invalid environment '{spec}'. K must be a positive multiple of 10.")
        base = generate_dataset(BinDims.cube(10), count, seed, length)
        name, dataset = spec, scale_dataset(base, size // 10)
    else:
        path = Path(spec)
        name, dataset = path.stem, load_dataset(path)

    if dims is not None:
        dataset = rescale_dataset(dataset, dims)
    return name, dataset


@dataclass(frozen=True, slots=True)
class InstanceResult:
    """Outcome of one evaluation episode."""

    index: int
    utilization: float
    items: int
    placements: tuple[Placement, ...]


@dataclass(frozen=True, slots=True)
class BenchResult:
    """Aggregate of one policy on one environment.

    ``sta`` is the population standard deviation of per-instance utilization.
    ``wall_time`` is informational and never written to report files.
    """

    method: str
    env: str
    uti: float
    num: float
    sta: float
    count: int
    wall_time: float
    instances: tuple[InstanceResult, ...]

    def to_row(self) -> dict[str, Any]:
        """Summary row for reports."""
        return {
            "method": self.method,
            "env": self.env,
            "uti": self.uti,
            "num": self.num,
            "sta": self.sta,
            "count": self.count,
        }


def summarize(method: str, env: str, instances: Sequence[InstanceResult], wall_time: float = 0.0) -> BenchResult:
    """Aggregate per-instance results.

    Args:
        method: Policy name.
        env: Environment name.
        instances: Per-instance results in instance order.
        wall_time: Seconds spent evaluating.

    Returns:
        Aggregate result.

    Raises:
        DomainError: If there are no instances.
    """
    if not instances:
        raise DomainError("cannot summarize an empty evaluation")
    utis = np.array([r.utilization for r in instances])
    nums = np.array([r.items for r in instances], dtype=np.float64)
    return BenchResult(
        method=method,
        env=env,
        uti=float(utis.mean()),
        num=float(nums.mean()),
        sta=float(utis.std()),
        count=len(instances),
        wall_time=wall_time,
        instances=tuple(instances),
    )


def run_episode(
    policy: Policy,
    dims: BinDims,
    sequence: tuple[ItemDims, ...],
    index: int,
    ems_cap: int = DEFAULT_EMS_CAPACITY,
    seed: int = 0,
) -> InstanceResult:
    """Pack one item sequence until it runs out or the next item does not fit.

    Args:
        policy: Acting policy.
        dims: Bin dimensions.
        sequence: Items in arrival order.
        index: Instance index, also offsets the policy seed.
        ems_cap: EMS capacity ``N``.
        seed: Base seed for stochastic policies.

    Returns:
        Episode outcome.
    """
    env = PackingEnv(EpisodeConfig(dims=dims, ems_capacity=ems_cap, sequence=sequence))
    env.reset()
    policy.begin_episode(seed + index)
    while not env.done:
        env.step(policy.act(env))
    return InstanceResult(index, env.utilization(), env.packed_count(), tuple(env.placements))


def _evaluate_chunk(
    policy_spec: str,
    dims: BinDims,
    chunk: Sequence[tuple[int, tuple[ItemDims, ...]]],
    ems_cap: int,
    seed: int,
) -> list[InstanceResult]:
    policy = resolve_policy(policy_spec, seed)
    return [run_episode(policy, dims, sequence, index, ems_cap, seed) for index, sequence in chunk]


def evaluate(
    policy_spec: str,
    env_name: str,
    dataset: RsDataset,
    ems_cap: int = DEFAULT_EMS_CAPACITY,
    seed: int = 0,
    workers: int = 1,
) -> BenchResult:
    """Evaluate a policy on every instance of a dataset.

    Instances are seeded by index, so results are identical for any worker
    count; worker results are merged back in instance order.

    Args:
        policy_spec: Policy specification, see :func:`resolve_policy`.
        env_name: Environment name for reports.
        dataset: Evaluation sequences.
        ems_cap: EMS capacity ``N``.
        seed: Base seed for stochastic policies.
        workers: Worker processes; 1 evaluates in-process.

    Returns:
        Aggregate result with per-instance details.
    """
    indexed = list(enumerate(dataset.sequences))
    started = time.perf_counter()
    if workers <= 1 or len(indexed) <= 1:
        instances = _evaluate_chunk(policy_spec, dataset.dims, indexed, ems_cap, seed)
    else:
        chunks = [indexed[w::workers] for w in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_evaluate_chunk, policy_spec, dataset.dims, chunk, ems_cap, seed)
                for chunk in chunks
                if chunk
            ]
            instances = sorted((r for f in futures for r in f.result()), key=lambda r: r.index)
    wall_time = time.perf_counter() - started

    result = summarize(policy_name(policy_spec), env_name, instances, wall_time)
    logger.info(
        "%s on %s: Uti %.1f%%, Num %.1f, Sta %.3f over %d instances in %.1fs",
        result.method,
        env_name,
        100 * result.uti,
        result.num,
        result.sta,
        result.count,
        wall_time,
    )
    return result


@dataclass(frozen=True, slots=True)
class BenchCell:
    """One (method, environment) cell; ``error`` is set when the evaluation failed."""

    method: str
    env: str
    result: BenchResult | None = None
    error: str | None = None


def bench_table(
    methods: Sequence[str],
    envs: Sequence[str],
    count: int,
    seed: int,
    ems_cap: int = DEFAULT_EMS_CAPACITY,
    workers: int = 1,
    length: int = DEFAULT_SEQUENCE_LENGTH,
    dims: BinDims | None = None,
) -> list[BenchCell]:
    """Evaluate every method on every environment.

    A failing cell is logged and recorded with its error; the remaining cells
    still run.

    Args:
        methods: Policy specifications.
        envs: Environment specifications, see :func:`resolve_env`.
        count: Instances per generated environment.
        seed: Dataset and policy seed.
        ems_cap: EMS capacity ``N``.
        workers: Worker processes per evaluation.
        length: Items per generated sequence.
        dims: Optional bin every environment is scaled onto.

    Returns:
        Cells in method-major order.
    """
    cells = []
    datasets: dict[str, tuple[str, RsDataset] | PackbenchError | OSError] = {}
    for env in envs:
        try:
            datasets[env] = resolve_env(env, count, seed, length, dims)
        except (PackbenchError, OSError) as e:
            logger.error("Environment %s failed to load: %s", env, e)
            datasets[env] = e

    for method in methods:
        for env in envs:
            resolved = datasets[env]
            if isinstance(resolved, Exception):
                cells.append(BenchCell(method, env, error=str(resolved)))
                continue
            env_name, dataset = resolved
            try:
                cells.append(BenchCell(method, env_name, evaluate(method, env_name, dataset, ems_cap, seed, workers)))
            except (PackbenchError, OSError) as e:
                logger.error("%s on %s failed: %s", method, env_name, e)
                cells.append(BenchCell(method, env_name, error=str(e)))
    return cells


def cell_rows(cells: Sequence[BenchCell]) -> list[dict[str, Any]]:
    """Summary rows for benchmark cells; failed cells carry only method, env and error.

    Args:
        cells: Benchmark cells.

    Returns:
        One row per cell.
    """
    rows = []
    for cell in cells:
        if cell.result is None:
            rows.append({"method": cell.method, "env": cell.env, "error": cell.error})
        else:
            rows.append(cell.result.to_row())
    return rows


def render_table(cells: Sequence[BenchCell], title: str | None = None) -> Table:
    """Build a rich table with Uti as a percentage and Num with one decimal.

    Args:
        cells: Benchmark cells.
        title: Optional table title.

    Returns:
        Renderable table; failed cells show their error.
    """
    return results_table(cell_rows(cells), title)


def _csv_text(columns: Sequence[str], rows: Sequence[dict[str, Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buffer.getvalue()


def write_summary_csv(cells: Sequence[BenchCell], path: Path) -> None:
    """Write summary rows; failed cells are written with empty metrics and an error column.

    Args:
        cells: Benchmark cells.
        path: Destination CSV.
    """
    rows = [{"error": "", **row} for row in cell_rows(cells)]
    atomic_write_text(path, _csv_text((*SUMMARY_COLUMNS, "error"), rows))


def write_instances_csv(result: BenchResult, path: Path) -> None:
    """Write per-instance utilization and item counts.

    Args:
        result: Evaluation result.
        path: Destination CSV.
    """
    rows = [{"instance": r.index, "uti": r.utilization, "num": r.items} for r in result.instances]
    atomic_write_text(path, _csv_text(INSTANCE_COLUMNS, rows))


Triple = Annotated[list[int], Field(min_length=3, max_length=3)]


class ScenePlacement(BaseModel):
    """One packed item: unrotated dimensions, FLB position and orientation in degrees."""

    model_config = ConfigDict(extra="forbid")

    item: Triple
    position: Triple
    orientation: int = Field(description="0 or 90 degrees about the Z axis")


class SceneDump(BaseModel):
    """Final scene of one evaluation episode, replayable through :mod:`packbench.bin`."""

    model_config = ConfigDict(extra="forbid")

    bin: Triple
    method: str
    instance: int
    utilization: float
    placements: list[ScenePlacement]

    @classmethod
    def from_result(cls, method: str, dims: BinDims, result: InstanceResult) -> SceneDump:
        """Record an episode.

        Args:
            method: Policy name.
            dims: Bin dimensions.
            result: Episode outcome with placements.

        Returns:
            Scene dump.
        """
        return cls(
            bin=list(dims.as_tuple()),
            method=method,
            instance=result.index,
            utilization=result.utilization,
            placements=[
                ScenePlacement(
                    item=list(p.item.as_tuple()),
                    position=[p.x, p.y, p.z],
                    orientation=Orientation(p.orientation).degrees,
                )
                for p in result.placements
            ],
        )

    def replay(self) -> float:
        """Re-apply every placement to an empty bin.

        Returns:
            Utilization of the replayed scene.

        Raises:
            DomainError: If an orientation is not 0 or 90 degrees.
            InfeasiblePlacementError: If a placement is not feasible in sequence.
        """  # noqa: DOC502
        dims = BinDims(*self.bin)
        hm = Heightmap.empty(dims)
        volume = 0
        for recorded in self.placements:
            if recorded.orientation not in (0, 90):
                raise DomainError(f"orientation must be 0 or 90 degrees, got {recorded.orientation}")
            item = ItemDims(*recorded.item)
            x, y, z = recorded.position
            orientation = Orientation.DEG_90 if recorded.orientation == 90 else Orientation.DEG_0
            hm = place_item(hm, Placement(item, x, y, z, orientation))
            volume += item.volume
        return volume / dims.volume


def export_scenes(result: BenchResult, dims: BinDims, out_dir: Path) -> list[Path]:
    """Write one JSON scene dump per instance.

    Args:
        result: Evaluation result with placements.
        dims: Bin dimensions.
        out_dir: Destination directory.

    Returns:
        Written paths in instance order.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for instance in result.instances:
        scene = SceneDump.from_result(result.method, dims, instance)
        path = out_dir / f"scene-{instance.index:04d}.json"
        atomic_write_text(path, scene.model_dump_json(indent=2) + "\n")
        paths.append(path)
    logger.info("Wrote %d scenes to %s", len(paths), out_dir)
    return paths


@dataclass(frozen=True, slots=True)
class SplitOutputs:
    """Files written by :func:`run_split`."""

    types_sub: Path
    types_exc: Path
    rs: Path
    rs_sub: Path
    rs_exc: Path


def run_split(
    dims: BinDims,
    exclude: int,
    count: int,
    seed: int,
    out_dir: Path,
    length: int = DEFAULT_SEQUENCE_LENGTH,
) -> SplitOutputs:
    """Partition the item types and emit the RS, RS_sub and RS_exc evaluation sets.

    Args:
        dims: Bin dimensions.
        exclude: Number of held-out types.
        count: Instances per evaluation set.
        seed: Split and generation seed.
        out_dir: Destination directory.
        length: Items per sequence.

    Returns:
        Paths of the written files.
    """
    subset, excluded = split_types(dims, exclude, seed)
    outputs = SplitOutputs(
        types_sub=out_dir / "types-sub.json",
        types_exc=out_dir / "types-exc.json",
        rs=out_dir / "rs.jsonl",
        rs_sub=out_dir / "rs_sub.jsonl",
        rs_exc=out_dir / "rs_exc.jsonl",
    )
    atomic_write_text(outputs.types_sub, dumps_types(subset))
    atomic_write_text(outputs.types_exc, dumps_types(excluded))
    write_dataset(generate_dataset(dims, count, seed, length), outputs.rs)
    write_dataset(generate_dataset(dims, count, seed, length, subset), outputs.rs_sub)
    write_dataset(generate_dataset(dims, count, seed, length, excluded), outputs.rs_exc)
    logger.info("Split %d types into %d seen and %d held out", len(subset) + len(excluded), len(subset), len(excluded))
    return outputs
