"""Experiment orchestration: sweeps, figure recipes and result export."""

import asyncio
import csv
import hashlib
import io
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .channel_model import (
    InvalidConfigError,
    PowerPolicy,
    Scheme,
    SystemConfig,
    sd_branch,
    success_profile,
)
from .queue_sim import (
    MIN_HORIZON,
    SimConfig,
    SimMode,
    SimThresholds,
    SimulationError,
    boundary_scan,
    simulate,
)
from .stability_analysis import (
    ArrivalRates,
    DominantSystem,
    RegionError,
    boundary,
    build_region,
    closure,
    closure_union,
    find_nonconvex_midpoint,
    is_convex,
    max_aggregate,
    ray_intersection,
    saturated_aggregate,
    service_rates,
)

logger = logging.getLogger(__name__)

SWEEP_PARAMETERS = ('p1', 'gamma1', 'gamma2')

VERIFY_RAYS = 8
VERIFY_TOLERANCE = 0.02

# Relative midpoint shrink for the closure convexity test; split-grid notches stay below it
CLOSURE_CONVEXITY_TOL = 5e-3

# Recipes share one geometry and power budget
RECIPE_BASE = {
    'd1': 10.0,
    'd2': 14.0,
    'alpha': 2.0,
    'p1': 80.0,
    'p2': 120.0,
    'p_total': 200.0,
}
RECIPE_GAMMAS = {
    'fig3': (0.5, 0.4),
    'fig4': (1.2, 0.7),
    'fig5': (0.5, 0.4),
    'fig6': (1.2, 0.7),
    'fig7': (0.5, 0.4),
    'fig8': (1.2, 0.7),
}
# Boundary probes a few thousandths past the edge must register as unstable
VERIFY_Q_CAP_FRACTION = 0.002

CSV_COLUMNS = ('param', 'value', 'task', 'scheme', 'policy', 'config_hash', 'seed', 'payload')


class SpecError(ValueError):
    """Invalid experiment specification; `key` names the offending field."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class Task(str, Enum):
    PROBS = "probs"
    REGION = "region"
    BOUNDARY = "boundary"
    CLOSURE = "closure"
    AGGREGATE = "aggregate"
    SIMULATE = "simulate"
    VERIFY = "verify"


class OutputFormat(str, Enum):
    CSV = "csv"
    JSON = "json"


ALL_VARIANTS = (
    (Scheme.TIN, PowerPolicy.FIXED),
    (Scheme.TIN, PowerPolicy.QUEUE_ADAPTIVE),
    (Scheme.SD, PowerPolicy.FIXED),
    (Scheme.SD, PowerPolicy.QUEUE_ADAPTIVE),
)
ADAPTIVE_VARIANTS = (
    (Scheme.TIN, PowerPolicy.QUEUE_ADAPTIVE),
    (Scheme.SD, PowerPolicy.QUEUE_ADAPTIVE),
)


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    start: float
    stop: float
    steps: int

    def values(self) -> List[float]:
        return [float(v) for v in np.linspace(self.start, self.stop, self.steps)]


@dataclass(frozen=True)
class SimOverrides:
    """Simulation settings shared by the Simulate and Verify tasks."""

    horizon: int = 1_000_000
    seed: int = 20160101
    drift_eps: float = 1e-3
    # None picks the per-task default: VERIFY_Q_CAP_FRACTION for boundary verification
    q_cap_fraction: Optional[float] = None
    lambda1: float = 0.0
    lambda2: float = 0.0
    dominant: DominantSystem = DominantSystem.NONE
    mode: SimMode = SimMode.CLOSED_FORM

    def thresholds(self, task: Optional['Task'] = None) -> SimThresholds:
        """Thresholds for a run of the given task; an explicit q_cap_fraction always wins."""
        fraction = self.q_cap_fraction
        if fraction is None:
            fraction = VERIFY_Q_CAP_FRACTION if task is Task.VERIFY else SimThresholds.q_cap_fraction
        return SimThresholds(drift_eps=self.drift_eps, q_cap_fraction=fraction)

    def to_dict(self) -> Dict[str, object]:
        return {
            'horizon': self.horizon,
            'seed': self.seed,
            'drift_eps': self.drift_eps,
            'q_cap_fraction': self.q_cap_fraction,
            'lambda1': self.lambda1,
            'lambda2': self.lambda2,
            'dominant': DominantSystem(self.dominant).value,
            'mode': SimMode(self.mode).value,
        }


@dataclass
class ExperimentSpec:
    """
    Everything needed to reproduce one batch of results.

    `base` holds SystemConfig fields as a flat key set; `p2` may be omitted and
    then takes the rest of the power budget. `variants` lists the
    (scheme, policy) pairs evaluated at every sweep point; empty means the
    scheme and policy found in `base`.
    """

    base: Dict[str, Any]
    tasks: List[Task]
    variants: List[Tuple[Scheme, PowerPolicy]] = field(default_factory=list)
    sweep: Optional[SweepSpec] = None
    sim: SimOverrides = field(default_factory=SimOverrides)
    output_dir: str = 'results'
    output_format: OutputFormat = OutputFormat.CSV
    points: int = 512
    splits: int = 201
    workers: int = 1
    ci: bool = False
    name: str = 'experiment'

    def validate(self) -> 'ExperimentSpec':
        """
        Check every field and coerce enum values.

        Raises:
            SpecError: Naming the first offending key
        """
        if not self.tasks:
            raise SpecError('tasks', "at least one task is required")
        try:
            self.tasks = [Task(task) for task in self.tasks]
        except ValueError as error:
            raise SpecError('tasks', str(error))

        try:
            self.variants = [(Scheme(s), PowerPolicy(p)) for s, p in self.variants]
        except (TypeError, ValueError) as error:
            raise SpecError('variants', str(error))

        try:
            self.output_format = OutputFormat(self.output_format)
        except ValueError:
            raise SpecError('format', f"unknown output format {self.output_format!r}")

        if self.sweep is not None:
            if self.sweep.parameter not in SWEEP_PARAMETERS:
                raise SpecError('sweep', f"must be one of {', '.join(SWEEP_PARAMETERS)}")
            for key, value in (('sweep_from', self.sweep.start), ('sweep_to', self.sweep.stop)):
                if not math.isfinite(value):
                    raise SpecError(key, f"sweep bound must be finite, got {value!r}")
            if self.sweep.steps < 2:
                raise SpecError('steps', f"a sweep needs at least 2 steps, got {self.sweep.steps}")

        for key, minimum in (('points', 2), ('splits', 2), ('workers', 1)):
            if getattr(self, key) < minimum:
                raise SpecError(key, f"must be at least {minimum}, got {getattr(self, key)}")

        needs_sim = {Task.SIMULATE, Task.VERIFY} & set(self.tasks)
        if needs_sim and self.sim.horizon < MIN_HORIZON:
            raise SpecError('horizon', f"must be at least {MIN_HORIZON} slots, got {self.sim.horizon}")
        try:
            self.sim.thresholds()
        except SimulationError as error:
            key = 'drift_eps' if 'drift_eps' in str(error) else 'q_cap_fraction'
            raise SpecError(key, str(error))
        try:
            self.sim = replace(self.sim, dominant=DominantSystem(self.sim.dominant))
        except ValueError as error:
            raise SpecError('dominant', str(error))
        try:
            self.sim = replace(self.sim, mode=SimMode(self.sim.mode))
        except ValueError as error:
            raise SpecError('mode', str(error))
        for key in ('lambda1', 'lambda2'):
            value = getattr(self.sim, key)
            if not (math.isfinite(value) and 0 <= value <= 1):
                raise SpecError(key, f"must be in [0, 1], got {value!r}")

        # every sweep point must be a valid system
        self.systems()
        return self

    def _base_system(self) -> SystemConfig:
        params = dict(self.base)
        if 'p2' not in params and 'p1' in params and 'p_total' in params:
            params['p2'] = float(params['p_total']) - float(params['p1'])
        try:
            return SystemConfig(**params)
        except InvalidConfigError as error:
            raise SpecError(error.field, str(error))
        except TypeError as error:
            raise SpecError('base', str(error))

    def systems(self) -> List[Tuple[Optional[float], SystemConfig]]:
        """(sweep value, config) for every sweep point and variant, point-major."""
        base = self._base_system()
        variants = self.variants or [(base.scheme, base.power_policy)]
        values: Sequence[Optional[float]] = self.sweep.values() if self.sweep else [None]

        systems = []
        for value in values:
            for scheme, policy in variants:
                try:
                    cfg = base.replace(scheme=scheme, power_policy=policy)
                    if value is not None:
                        if self.sweep.parameter == 'p1':
                            cfg = cfg.with_split(value)
                        else:
                            cfg = cfg.replace(**{self.sweep.parameter: value})
                except InvalidConfigError as error:
                    raise SpecError(error.field, str(error))
                systems.append((value, cfg))
        return systems

    def to_dict(self) -> Dict[str, object]:
        return {
            'base': dict(sorted(self.base.items())),
            'tasks': [Task(t).value for t in self.tasks],
            'variants': [[Scheme(s).value, PowerPolicy(p).value] for s, p in self.variants],
            'sweep': None if self.sweep is None else {
                'parameter': self.sweep.parameter,
                'start': self.sweep.start,
                'stop': self.sweep.stop,
                'steps': self.sweep.steps,
            },
            'sim': self.sim.to_dict(),
            'points': self.points,
            'splits': self.splits,
        }

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> 'ExperimentSpec':
        """
        Build a spec from a flat key set (config file entries or CLI flags).

        Keys are the CLI flag names with underscores. Values may be strings.

        Raises:
            SpecError: For unparseable or invalid values
        """
        def get(key: str, convert, default=None):
            value = mapping.get(key)
            if value is None or value == '':
                return default
            try:
                return convert(value)
            except (TypeError, ValueError):
                raise SpecError(key, f"cannot parse {value!r}")

        base: Dict[str, Any] = {}
        for key in ('gamma1', 'gamma2', 'd1', 'd2', 'alpha', 'p1', 'p2', 'p_total'):
            value = get(key, float)
            if value is not None:
                base[key] = value
        base['scheme'] = get('scheme', str, Scheme.TIN.value)
        base['power_policy'] = get('policy', str, PowerPolicy.FIXED.value)
        stronger = get('stronger_receiver', int)
        if stronger is not None:
            base['stronger_receiver'] = stronger

        tasks = get('tasks', _split_list, [])
        variants = get('variants', _parse_variants, [])

        sweep = None
        parameter = get('sweep', str)
        if parameter is not None:
            sweep = SweepSpec(
                parameter=parameter,
                start=get('sweep_from', float, 0.0),
                stop=get('sweep_to', float, base.get('p_total', 0.0)),
                steps=get('steps', int, 2),
            )

        defaults = SimOverrides()
        sim = SimOverrides(
            horizon=get('horizon', int, defaults.horizon),
            seed=get('seed', int, defaults.seed),
            drift_eps=get('drift_eps', float, defaults.drift_eps),
            q_cap_fraction=get('q_cap_fraction', float),
            lambda1=get('lambda1', float, defaults.lambda1),
            lambda2=get('lambda2', float, defaults.lambda2),
            dominant=get('dominant', DominantSystem, defaults.dominant),
            mode=get('mode', SimMode, defaults.mode),
        )

        spec = cls(
            base=base,
            tasks=tasks,
            variants=variants,
            sweep=sweep,
            sim=sim,
            output_dir=get('out', str, 'results'),
            output_format=get('format', str, OutputFormat.CSV.value),
            points=get('points', int, 512),
            splits=get('splits', int, 201),
            workers=get('workers', int, 1),
            ci=get('ci', _parse_bool, False),
            name=get('name', str, 'experiment'),
        )
        return spec.validate()


def _split_list(value) -> List[str]:
    if isinstance(value, str):
        return [item.strip() for item in value.split(',') if item.strip()]
    return list(value)


def _parse_variants(value) -> List[Tuple[Scheme, PowerPolicy]]:
    """'tin:fixed,sd:adaptive' style variant lists."""
    variants = []
    for item in _split_list(value):
        if isinstance(item, str):
            scheme, _, policy = item.partition(':')
            variants.append((Scheme(scheme), PowerPolicy(policy)))
        else:
            scheme, policy = item
            variants.append((Scheme(scheme), PowerPolicy(policy)))
    return variants


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).lower() in ('true', '1', 'yes')


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(',', ':'))


def config_hash(data: Any) -> str:
    """First 12 hex digits of the SHA-256 of the canonical JSON encoding."""
    return hashlib.sha256(canonical_json(data).encode('utf-8')).hexdigest()[:12]


def _plain(payload: Any) -> Any:
    """Payload as it reads back from JSON (tuples become lists)."""
    return json.loads(json.dumps(payload))


@dataclass
class ResultRow:
    param: Optional[str]
    value: Optional[float]
    task: Task
    scheme: Scheme
    policy: PowerPolicy
    config_hash: str
    seed: Optional[int]
    payload: Dict[str, Any]

    def to_record(self) -> Dict[str, Any]:
        return {
            'param': self.param,
            'value': self.value,
            'task': Task(self.task).value,
            'scheme': Scheme(self.scheme).value,
            'policy': PowerPolicy(self.policy).value,
            'config_hash': self.config_hash,
            'seed': self.seed,
            'payload': self.payload,
        }

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> 'ResultRow':
        return cls(
            param=record['param'],
            value=None if record['value'] is None else float(record['value']),
            task=Task(record['task']),
            scheme=Scheme(record['scheme']),
            policy=PowerPolicy(record['policy']),
            config_hash=record['config_hash'],
            seed=None if record['seed'] is None else int(record['seed']),
            payload=record['payload'],
        )


@dataclass
class SweepResult:
    rows: List[ResultRow] = field(default_factory=list)
    files: List[Path] = field(default_factory=list, compare=False)

    def for_task(self, task: Task) -> 'SweepResult':
        task = Task(task)
        return SweepResult(rows=[row for row in self.rows if row.task is task])

    @property
    def max_verify_delta(self) -> Optional[float]:
        deltas = [row.payload['max_delta'] for row in self.rows if row.task is Task.VERIFY]
        return max(deltas) if deltas else None

    def verification_breached(self, tolerance: float = VERIFY_TOLERANCE) -> bool:
        delta = self.max_verify_delta
        return delta is not None and delta > tolerance

    def dumps(self, output_format: OutputFormat) -> str:
        records = [row.to_record() for row in self.rows]
        if OutputFormat(output_format) is OutputFormat.JSON:
            return json.dumps({'columns': list(CSV_COLUMNS), 'rows': records}, indent=2)

        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=CSV_COLUMNS, lineterminator='\n')
        writer.writeheader()
        for record in records:
            record = dict(record)
            record['payload'] = canonical_json(record['payload'])
            record['value'] = '' if record['value'] is None else repr(record['value'])
            record['param'] = record['param'] or ''
            record['seed'] = '' if record['seed'] is None else record['seed']
            writer.writerow(record)
        return buffer.getvalue()

    def write(self, path: Path, output_format: OutputFormat):
        """Write atomically: a temp file in the target directory, then rename."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        text = self.dumps(output_format)
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix='.tmp')
        try:
            with os.fdopen(fd, 'w', encoding='utf-8', newline='') as handle:
                handle.write(text)
            os.replace(tmp_name, path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise
        logger.info("Wrote %d rows to %s", len(self.rows), path)

    @classmethod
    def load(cls, path) -> 'SweepResult':
        """Parse a CSV or JSON export back into rows."""
        path = Path(path)
        text = path.read_text(encoding='utf-8')
        if path.suffix == '.json':
            records = json.loads(text)['rows']
        elif path.suffix == '.csv':
            records = []
            for raw in csv.DictReader(text.splitlines()):
                records.append({
                    'param': raw['param'] or None,
                    'value': raw['value'] or None,
                    'task': raw['task'],
                    'scheme': raw['scheme'],
                    'policy': raw['policy'],
                    'config_hash': raw['config_hash'],
                    'seed': raw['seed'] or None,
                    'payload': json.loads(raw['payload']),
                })
        else:
            raise SpecError('format', f"cannot tell the format of {path.name}")
        return cls(rows=[ResultRow.from_record(record) for record in records])


@dataclass(frozen=True)
class Job:
    """One unit of work; verify jobs cover a single ray."""

    index: int
    task: Task
    value: Optional[float]
    system: SystemConfig
    points: int
    splits: int
    sim: SimOverrides
    ray: Optional[int] = None


def ray_direction(k: int, n_rays: int = VERIFY_RAYS) -> Tuple[float, float]:
    """Unit direction k of n_rays evenly spaced from the lambda1 axis to the lambda2 axis."""
    # the end rays lie exactly on the axes; cos(pi/2) would leave a 6e-17 lambda1
    if k == 0:
        return (1.0, 0.0)
    if k == n_rays - 1:
        return (0.0, 1.0)
    theta = k * (math.pi / 2) / (n_rays - 1)
    return (math.cos(theta), math.sin(theta))


def _probs_payload(job: Job) -> Dict[str, Any]:
    payload: Dict[str, Any] = success_profile(job.system).to_dict()
    if job.system.scheme is Scheme.SD:
        payload['sd_branch'] = sd_branch(job.system).value
    return payload


def _region_payload(job: Job) -> Dict[str, Any]:
    profile = success_profile(job.system)
    region = build_region(profile)
    try:
        convex = is_convex(profile)
    except RegionError:
        convex = None
    return {
        'profile': profile.to_dict(),
        'sub1': region.sub1.to_dict(),
        'sub2': region.sub2.to_dict(),
        'corners': region.corners(),
        'convex': convex,
    }


def _boundary_payload(job: Job) -> Dict[str, Any]:
    region = build_region(success_profile(job.system))
    return {'points': boundary(region, job.points)}


def _closure_payload(job: Job) -> Dict[str, Any]:
    union = closure_union(closure(job.system, job.splits))
    violation = find_nonconvex_midpoint(union, n_points=job.points, tol=CLOSURE_CONVEXITY_TOL)
    return {
        'splits': job.splits,
        'points': boundary(union, job.points),
        'convex': violation is None,
        'violation': violation,
    }


def _aggregate_payload(job: Job) -> Dict[str, Any]:
    profile = success_profile(job.system)
    best = max_aggregate(profile)
    return {
        't_aggr': best.t_aggr,
        'corner': best.corner.value,
        't_sat': saturated_aggregate(profile),
    }


def _simulate_payload(job: Job) -> Dict[str, Any]:
    sim = job.sim
    rates = ArrivalRates(sim.lambda1, sim.lambda2)
    cfg = SimConfig(
        system=job.system,
        rates=rates,
        horizon=sim.horizon,
        seed=sim.seed,
        dominant=sim.dominant,
        mode=sim.mode,
        thresholds=sim.thresholds(Task.SIMULATE),
    )
    outcome = simulate(cfg)
    profile = success_profile(job.system)
    payload = outcome.summary()
    payload['verdict'] = outcome.verdict.value
    payload['analytic_stable'] = build_region(profile).contains(rates)
    if cfg.dominant is not DominantSystem.NONE:
        try:
            payload['analytic_service'] = list(service_rates(profile, rates, cfg.dominant))
        except RegionError:
            payload['analytic_service'] = None
    return payload


def _verify_ray_payload(job: Job) -> Dict[str, Any]:
    direction = ray_direction(job.ray)
    analytic = ray_intersection(build_region(success_profile(job.system)), direction)
    scan = boundary_scan(
        job.system,
        direction,
        horizon=job.sim.horizon,
        seed=job.sim.seed,
        thresholds=job.sim.thresholds(Task.VERIFY),
        mode=job.sim.mode,
    )
    delta = max(abs(a - e) for a, e in zip(analytic, scan.point))
    return {
        'ray': job.ray,
        'direction': list(direction),
        'analytic': list(analytic),
        'empirical': list(scan.point),
        'delta': delta,
        'converged': scan.converged,
        'saturated': scan.saturated,
        'probes': scan.probes,
    }


_PAYLOADS = {
    Task.PROBS: _probs_payload,
    Task.REGION: _region_payload,
    Task.BOUNDARY: _boundary_payload,
    Task.CLOSURE: _closure_payload,
    Task.AGGREGATE: _aggregate_payload,
    Task.SIMULATE: _simulate_payload,
    Task.VERIFY: _verify_ray_payload,
}


def execute_job(job: Job) -> Tuple[int, Dict[str, Any]]:
    """Module-level so that process pools can pickle it."""
    return job.index, _plain(_PAYLOADS[job.task](job))


class ExperimentRunner:
    """
    Run an ExperimentSpec and export one file per task.

    Jobs run inline when workers is 1, otherwise on a process pool. Rows are
    assembled in job order either way.
    """

    def __init__(self, spec: ExperimentSpec, write_files: bool = True):
        self.spec = spec.validate()
        self.write_files = write_files

    def jobs(self) -> List[Job]:
        jobs = []
        for task in self.spec.tasks:
            for value, cfg in self.spec.systems():
                rays = range(VERIFY_RAYS) if task is Task.VERIFY else [None]
                for ray in rays:
                    jobs.append(Job(
                        index=len(jobs),
                        task=task,
                        value=value,
                        system=cfg,
                        points=self.spec.points,
                        splits=self.spec.splits,
                        sim=self.spec.sim,
                        ray=ray,
                    ))
        return jobs

    def _row_hash(self, job: Job) -> str:
        settings: Dict[str, Any] = {'task': job.task.value, 'system': job.system.to_dict()}
        if job.task in (Task.BOUNDARY, Task.CLOSURE):
            settings['points'] = job.points
        if job.task is Task.CLOSURE:
            settings['splits'] = job.splits
        if job.task in (Task.SIMULATE, Task.VERIFY):
            settings['sim'] = job.sim.to_dict()
        return config_hash(settings)

    def _assemble(self, jobs: List[Job], payloads: Dict[int, Dict[str, Any]]) -> SweepResult:
        param = self.spec.sweep.parameter if self.spec.sweep else None
        rows: List[ResultRow] = []
        verify_rows: Dict[Tuple[Task, Optional[float], SystemConfig], ResultRow] = {}

        for job in jobs:
            payload = payloads[job.index]
            seed = job.sim.seed if job.task in (Task.SIMULATE, Task.VERIFY) else None
            if job.task is Task.VERIFY:
                key = (job.task, job.value, job.system)
                row = verify_rows.get(key)
                if row is None:
                    row = ResultRow(param, job.value, job.task, job.system.scheme,
                                    job.system.power_policy, self._row_hash(job), seed,
                                    {'rays': [], 'max_delta': 0.0})
                    verify_rows[key] = row
                    rows.append(row)
                row.payload['rays'].append(payload)
                row.payload['max_delta'] = max(row.payload['max_delta'], payload['delta'])
                continue
            rows.append(ResultRow(param, job.value, job.task, job.system.scheme,
                                  job.system.power_policy, self._row_hash(job), seed, payload))
        return SweepResult(rows=rows)

    def file_path(self, task: Task) -> Path:
        spec_hash = config_hash({'spec': self.spec.to_dict(), 'task': Task(task).value})
        suffix = OutputFormat(self.spec.output_format).value
        return Path(self.spec.output_dir) / f"{Task(task).value}_{spec_hash}.{suffix}"

    async def run_async(self) -> SweepResult:
        """
        Execute all jobs and write the per-task files.

        Returns:
            SweepResult: Rows for every task, sweep point and variant
        """
        jobs = self.jobs()
        logger.info("Running %s: %d jobs on %d worker(s)", self.spec.name, len(jobs), self.spec.workers)

        if self.spec.workers > 1:
            loop = asyncio.get_running_loop()
            with ProcessPoolExecutor(max_workers=self.spec.workers) as executor:
                futures = [loop.run_in_executor(executor, execute_job, job) for job in jobs]
                results = await asyncio.gather(*futures)
        else:
            results = [execute_job(job) for job in jobs]

        result = self._assemble(jobs, dict(results))

        if self.write_files:
            for task in self.spec.tasks:
                path = self.file_path(task)
                result.for_task(task).write(path, self.spec.output_format)
                result.files.append(path)
        logger.info("Finished %s: %d rows", self.spec.name, len(result.rows))
        return result

    def run(self) -> SweepResult:
        """Run synchronously in a fresh event loop."""
        loop = asyncio.new_event_loop()
        asyncio.set_event_loop(loop)
        try:
            return loop.run_until_complete(self.run_async())
        finally:
            loop.close()


def run(spec: ExperimentSpec) -> SweepResult:
    return ExperimentRunner(spec).run()


def fig_recipe(name: str, with_verify: bool = False) -> ExperimentSpec:
    """
    Canonical spec reproducing the data behind one figure.

    fig3/fig4 are boundaries, fig5/fig6 closures and fig7/fig8 aggregate
    throughput sweeps over p1. With with_verify the Verify task is added; its
    runs use VERIFY_Q_CAP_FRACTION unless a queue cap is set explicitly.

    Raises:
        SpecError: For an unknown figure name
    """
    if name not in RECIPE_GAMMAS:
        raise SpecError('recipe', f"unknown recipe {name!r}; expected one of {', '.join(RECIPE_GAMMAS)}")

    gamma1, gamma2 = RECIPE_GAMMAS[name]
    base = dict(RECIPE_BASE, gamma1=gamma1, gamma2=gamma2)
    sweep = None
    if name in ('fig3', 'fig4'):
        tasks, variants = [Task.BOUNDARY], list(ALL_VARIANTS)
    elif name in ('fig5', 'fig6'):
        tasks, variants = [Task.CLOSURE], list(ALL_VARIANTS)
    else:
        tasks, variants = [Task.AGGREGATE], list(ADAPTIVE_VARIANTS)
        sweep = SweepSpec(parameter='p1', start=0.0, stop=RECIPE_BASE['p_total'], steps=101)

    if with_verify:
        tasks.append(Task.VERIFY)

    return ExperimentSpec(
        base=base,
        tasks=tasks,
        variants=variants,
        sweep=sweep,
        name=name,
    ).validate()
