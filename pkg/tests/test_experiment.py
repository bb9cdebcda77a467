"""Tests for experiment orchestration and export."""

import sys
import os
import math
import pytest
from pathlib import Path
from dotenv import load_dotenv

# Setup paths
sys.path.insert(0, str(Path(__file__).parent.parent))

# Load test environment
test_env_path = Path(__file__).parent.parent / '.env.test'
load_dotenv(str(test_env_path), override=True)

import src.experiment as experiment
from src.channel_model import PowerPolicy, Scheme
from src.experiment import (
    ALL_VARIANTS,
    ExperimentRunner,
    ExperimentSpec,
    OutputFormat,
    SimOverrides,
    VERIFY_Q_CAP_FRACTION,
    VERIFY_TOLERANCE,
    SpecError,
    SweepResult,
    SweepSpec,
    Task,
    config_hash,
    fig_recipe,
    ray_direction,
)
from src.queue_sim import ScanResult


BASE = {'gamma1': 0.5, 'gamma2': 0.4, 'd1': 10.0, 'd2': 14.0, 'alpha': 2.0, 'p1': 80.0, 'p_total': 200.0}


def make_spec(tmp_path, tasks, **extra) -> ExperimentSpec:
    params = dict(base=dict(BASE), tasks=tasks, output_dir=str(tmp_path))
    params.update(extra)
    return ExperimentSpec(**params)


@pytest.fixture
def exact_scan(monkeypatch):
    """Replace the Monte Carlo bisection with the analytic ray intersection."""
    def fake_scan(system, direction, horizon, seed, thresholds=None, mode=None):
        region = experiment.build_region(experiment.success_profile(system))
        point = experiment.ray_intersection(region, direction)
        return ScanResult(point=point, bracket=(0.0, 1.0), converged=True, saturated=False, probes=1)

    monkeypatch.setattr(experiment, 'boundary_scan', fake_scan)
    return fake_scan


class TestExperimentSpec:
    """Spec validation and parsing."""

    def test_empty_tasks(self, tmp_path):
        with pytest.raises(SpecError) as excinfo:
            make_spec(tmp_path, []).validate()
        assert excinfo.value.key == 'tasks'

    def test_unknown_task(self, tmp_path):
        with pytest.raises(SpecError) as excinfo:
            make_spec(tmp_path, ['plot']).validate()
        assert excinfo.value.key == 'tasks'

    @pytest.mark.parametrize("sweep, key", [
        (SweepSpec('p1', 0.0, 200.0, 1), 'steps'),
        (SweepSpec('p1', 0.0, float('inf'), 5), 'sweep_to'),
        (SweepSpec('alpha', 1.0, 3.0, 5), 'sweep'),
    ])
    def test_invalid_sweep(self, tmp_path, sweep, key):
        with pytest.raises(SpecError) as excinfo:
            make_spec(tmp_path, [Task.PROBS], sweep=sweep).validate()
        assert excinfo.value.key == key
        assert key in str(excinfo.value)

    def test_invalid_base_field_is_named(self, tmp_path):
        spec = make_spec(tmp_path, [Task.PROBS])
        spec.base['gamma2'] = -0.4
        with pytest.raises(SpecError) as excinfo:
            spec.validate()
        assert excinfo.value.key == 'gamma2'

    def test_sweep_point_outside_budget(self, tmp_path):
        with pytest.raises(SpecError) as excinfo:
            make_spec(tmp_path, [Task.PROBS], sweep=SweepSpec('p1', 0.0, 250.0, 3)).validate()
        assert excinfo.value.key == 'p2'

    def test_short_horizon_only_matters_for_simulation(self, tmp_path):
        make_spec(tmp_path, [Task.PROBS], sim=SimOverrides(horizon=10)).validate()
        with pytest.raises(SpecError) as excinfo:
            make_spec(tmp_path, [Task.SIMULATE], sim=SimOverrides(horizon=10)).validate()
        assert excinfo.value.key == 'horizon'

    def test_from_mapping_strings(self, tmp_path):
        spec = ExperimentSpec.from_mapping({
            'gamma1': '0.5', 'gamma2': '0.4', 'd1': '10', 'd2': '14', 'alpha': '2',
            'p1': '80', 'p_total': '200', 'scheme': 'sd', 'policy': 'adaptive',
            'tasks': 'probs,aggregate', 'sweep': 'p1', 'sweep_from': '0', 'sweep_to': '200',
            'steps': '5', 'format': 'json', 'out': str(tmp_path), 'ci': 'true',
        })
        assert spec.tasks == [Task.PROBS, Task.AGGREGATE]
        assert spec.sweep == SweepSpec('p1', 0.0, 200.0, 5)
        assert spec.output_format is OutputFormat.JSON
        assert spec.ci is True
        value, cfg = spec.systems()[0]
        assert value == 0.0
        assert cfg.scheme is Scheme.SD and cfg.power_policy is PowerPolicy.QUEUE_ADAPTIVE
        print("✓ Flat key-value mapping parsed into a spec")

    def test_from_mapping_unparseable(self):
        with pytest.raises(SpecError) as excinfo:
            ExperimentSpec.from_mapping(dict(BASE, gamma1='abc', tasks='probs'))
        assert excinfo.value.key == 'gamma1'

    def test_from_mapping_variants(self):
        spec = ExperimentSpec.from_mapping(dict(BASE, tasks='probs', variants='tin:fixed, sd:adaptive'))
        assert spec.variants == [(Scheme.TIN, PowerPolicy.FIXED), (Scheme.SD, PowerPolicy.QUEUE_ADAPTIVE)]

    def test_queue_cap_follows_task(self):
        spec = ExperimentSpec.from_mapping(dict(BASE, tasks='verify,simulate'))
        assert spec.sim.q_cap_fraction is None
        assert spec.sim.thresholds(Task.VERIFY).q_cap_fraction == VERIFY_Q_CAP_FRACTION
        assert spec.sim.thresholds(Task.SIMULATE).q_cap_fraction == 0.05

    def test_explicit_queue_cap_wins(self):
        spec = ExperimentSpec.from_mapping(dict(BASE, tasks='verify', q_cap_fraction='0.01'))
        assert spec.sim.thresholds(Task.VERIFY).q_cap_fraction == 0.01


class TestFigRecipes:
    """Canonical figure specs."""

    def test_boundary_recipes(self):
        for name, gammas in (('fig3', (0.5, 0.4)), ('fig4', (1.2, 0.7))):
            spec = fig_recipe(name)
            assert spec.tasks == [Task.BOUNDARY]
            assert spec.variants == list(ALL_VARIANTS)
            assert (spec.base['gamma1'], spec.base['gamma2']) == gammas
            assert spec.base['d2'] == 14.0

    def test_aggregate_recipes(self):
        spec = fig_recipe('fig8')
        assert spec.tasks == [Task.AGGREGATE]
        assert spec.sweep == SweepSpec('p1', 0.0, 200.0, 101)
        assert all(policy is PowerPolicy.QUEUE_ADAPTIVE for _, policy in spec.variants)

    def test_verify_tightens_queue_cap(self):
        spec = fig_recipe('fig3', with_verify=True)
        assert spec.tasks == [Task.BOUNDARY, Task.VERIFY]
        assert spec.sim.thresholds(Task.VERIFY).q_cap_fraction == VERIFY_Q_CAP_FRACTION

    def test_unknown_recipe(self):
        with pytest.raises(SpecError) as excinfo:
            fig_recipe('fig9')
        assert excinfo.value.key == 'recipe'


class TestRunner:
    """Running specs and exporting results."""

    def test_probs_reproduces_tables(self, tmp_path):
        spec = make_spec(tmp_path, [Task.PROBS], variants=list(ALL_VARIANTS))
        result = ExperimentRunner(spec).run()
        assert len(result.rows) == 4
        values = {(row.scheme, row.policy): row.payload for row in result.rows}
        assert round(values[(Scheme.TIN, PowerPolicy.FIXED)]['p_1_12'], 4) == 0.0821
        assert round(values[(Scheme.SD, PowerPolicy.FIXED)]['p_1_12'], 4) == 0.5353
        assert round(values[(Scheme.SD, PowerPolicy.QUEUE_ADAPTIVE)]['p_1_1'], 4) == 0.7788
        assert values[(Scheme.SD, PowerPolicy.FIXED)]['sd_branch'] == 'decoupled'
        assert len(result.files) == 1 and result.files[0].exists()
        print("✓ Probs task reproduces the tables")

    @pytest.mark.parametrize("output_format", list(OutputFormat))
    def test_files_parse_back(self, tmp_path, output_format):
        spec = make_spec(
            tmp_path, [Task.PROBS, Task.REGION, Task.BOUNDARY, Task.AGGREGATE],
            variants=list(ALL_VARIANTS), sweep=SweepSpec('p1', 0.0, 200.0, 3),
            points=16, output_format=output_format,
        )
        result = ExperimentRunner(spec).run()
        assert len(result.rows) == 4 * 3 * 4
        for task, path in zip(spec.tasks, result.files):
            assert path.name.startswith(task.value + '_')
            assert path.suffix == '.' + output_format.value
            assert SweepResult.load(path) == result.for_task(task)
        print(f"✓ {output_format.value} exports parse back into equal results")

    def test_repeated_runs_write_identical_files(self, tmp_path):
        spec_a = make_spec(tmp_path / 'a', [Task.BOUNDARY], points=64)
        spec_b = make_spec(tmp_path / 'b', [Task.BOUNDARY], points=64)
        first = ExperimentRunner(spec_a).run().files[0]
        second = ExperimentRunner(spec_b).run().files[0]
        assert first.name == second.name
        assert first.read_bytes() == second.read_bytes()

    def test_equal_hash_equal_payload(self, tmp_path):
        spec = make_spec(tmp_path, [Task.AGGREGATE], sweep=SweepSpec('gamma1', 0.5, 0.5, 2))
        result = ExperimentRunner(spec, write_files=False).run()
        first, second = result.rows
        assert first.config_hash == second.config_hash
        assert first.payload == second.payload
        assert result.files == []

    def test_aggregate_sweep_plateau(self, tmp_path):
        result = ExperimentRunner(fig_recipe('fig7'), write_files=False).run()
        assert len(result.rows) == 202
        sd_rows = [row for row in result.rows if row.scheme is Scheme.SD]
        assert any(row.payload['corner'] == 'joint' for row in sd_rows)
        assert sd_rows[0].payload['corner'] == 'd1_solo'

    def test_closure_task(self, tmp_path):
        spec = make_spec(tmp_path, [Task.CLOSURE], splits=21, points=64,
                         variants=[(Scheme.SD, PowerPolicy.QUEUE_ADAPTIVE)])
        row = ExperimentRunner(spec, write_files=False).run().rows[0]
        assert row.payload['splits'] == 21
        assert len(row.payload['points']) == 64
        assert isinstance(row.payload['convex'], bool)

    def test_simulate_task(self, tmp_path):
        spec = make_spec(tmp_path, [Task.SIMULATE],
                         sim=SimOverrides(horizon=20_000, seed=5, lambda1=0.1, lambda2=0.1,
                                          dominant='queue1_dummy'))
        row = ExperimentRunner(spec, write_files=False).run().rows[0]
        assert row.seed == 5
        assert row.payload['verdict'] == 'stable'
        assert row.payload['analytic_stable'] is True
        assert len(row.payload['analytic_service']) == 2

    def test_verify_rows_collect_rays(self, tmp_path, exact_scan):
        spec = make_spec(tmp_path, [Task.VERIFY], variants=list(ALL_VARIANTS)[:2])
        result = ExperimentRunner(spec).run()
        assert len(result.rows) == 2
        for row in result.rows:
            assert [ray['ray'] for ray in row.payload['rays']] == list(range(8))
            assert row.payload['max_delta'] == 0.0
        assert not result.verification_breached()
        assert SweepResult.load(result.files[0]) == result.for_task(Task.VERIFY)

    def test_verify_breach_detected(self, tmp_path, monkeypatch):
        def shifted_scan(system, direction, horizon, seed, thresholds=None, mode=None):
            point = (direction[0] * 0.1, direction[1] * 0.1)
            return ScanResult(point=point, bracket=(0.0, 0.1), converged=True, saturated=False, probes=1)

        monkeypatch.setattr(experiment, 'boundary_scan', shifted_scan)
        result = ExperimentRunner(make_spec(tmp_path, [Task.VERIFY]), write_files=False).run()
        assert result.max_verify_delta > 0.02
        assert result.verification_breached()

    def test_verify_jobs_use_tight_queue_cap(self, tmp_path, monkeypatch):
        seen = []

        def recording_scan(system, direction, horizon, seed, thresholds=None, mode=None):
            seen.append(thresholds)
            return ScanResult(point=(0.0, 0.0), bracket=(0.0, 0.0), converged=True, saturated=False, probes=1)

        monkeypatch.setattr(experiment, 'boundary_scan', recording_scan)
        spec = ExperimentSpec.from_mapping(dict(BASE, tasks='verify', out=str(tmp_path)))
        ExperimentRunner(spec, write_files=False).run()
        assert len(seen) == 8
        assert all(t.q_cap_fraction == VERIFY_Q_CAP_FRACTION for t in seen)

    def test_ray_directions(self):
        assert ray_direction(0) == (1.0, 0.0)
        assert ray_direction(7) == (0.0, 1.0)
        assert math.hypot(*ray_direction(3)) == pytest.approx(1.0)

    def test_last_ray_reaches_collapsed_subregion(self, tmp_path, exact_scan):
        # fixed TIN at gamma = (1.2, 0.7): queue 1 is never served next to queue 2,
        # so on the lambda2 axis the boundary is the solo probability of queue 2
        base = dict(BASE, gamma1=1.2, gamma2=0.7)
        result = ExperimentRunner(make_spec(tmp_path, [Task.VERIFY], base=base), write_files=False).run()
        last = result.rows[0].payload['rays'][-1]
        profile = experiment.success_profile(make_spec(tmp_path, [Task.PROBS], base=base).systems()[0][1])
        assert profile.p_1_12 == 0.0
        assert last['analytic'] == [0.0, pytest.approx(profile.p_2_2)]

    @pytest.mark.asyncio
    async def test_run_async(self, tmp_path):
        spec = make_spec(tmp_path, [Task.PROBS], variants=list(ALL_VARIANTS))
        result = await ExperimentRunner(spec, write_files=False).run_async()
        assert [row.scheme for row in result.rows] == [s for s, _ in ALL_VARIANTS]
        print("✓ Async runner test passed")

    def test_process_pool_matches_inline(self, tmp_path):
        sweep = SweepSpec('p1', 0.0, 200.0, 5)
        inline = ExperimentRunner(make_spec(tmp_path, [Task.AGGREGATE], sweep=sweep), write_files=False).run()
        pooled = ExperimentRunner(make_spec(tmp_path, [Task.AGGREGATE], sweep=sweep, workers=2),
                                  write_files=False).run()
        assert pooled.rows == inline.rows

    @pytest.mark.slow
    @pytest.mark.parametrize("recipe", ['fig3', 'fig4'])
    @pytest.mark.parametrize("variant", list(ALL_VARIANTS))
    def test_recipe_verification(self, tmp_path, recipe, variant):
        spec = fig_recipe(recipe, with_verify=True)
        spec.variants = [variant]
        spec.output_dir = str(tmp_path)
        result = ExperimentRunner(spec).run()
        assert result.max_verify_delta <= VERIFY_TOLERANCE
        print(f"✓ {recipe} {variant[0].value}/{variant[1].value} boundary verified")

    @pytest.mark.slow
    def test_plain_verify_task_within_tolerance(self, tmp_path):
        spec = ExperimentSpec.from_mapping(dict(BASE, tasks='verify', horizon='100000', out=str(tmp_path)))
        result = ExperimentRunner(spec, write_files=False).run()
        assert result.max_verify_delta <= VERIFY_TOLERANCE
        assert not result.verification_breached()


class TestExport:
    """Hashing and atomic writes."""

    def test_config_hash_is_key_order_independent(self):
        assert config_hash({'a': 1, 'b': 2.5}) == config_hash({'b': 2.5, 'a': 1})
        assert len(config_hash({'a': 1})) == 12

    def test_failed_write_leaves_nothing(self, tmp_path, monkeypatch):
        result = ExperimentRunner(make_spec(tmp_path, [Task.PROBS]), write_files=False).run()

        def broken_replace(src, dst):
            raise OSError("disk full")

        monkeypatch.setattr(os, 'replace', broken_replace)
        target = tmp_path / 'out' / 'probs_deadbeef.csv'
        with pytest.raises(OSError):
            result.write(target, OutputFormat.CSV)
        assert list((tmp_path / 'out').iterdir()) == []

    def test_load_unknown_suffix(self, tmp_path):
        path = tmp_path / 'rows.txt'
        path.write_text('')
        with pytest.raises(SpecError):
            SweepResult.load(path)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
