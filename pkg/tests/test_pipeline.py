"""End-to-end tests of the pipeline on synthetic scenes."""

import pytest

from ambiver.backends import MockBackend, VlmBackend
from ambiver.config import PipelineConfig
from ambiver.context import (
    async_pipeline_session,
    config_in,
    pipeline_session,
    synthetic_workspace,
)
from ambiver.evaluation import LabeledInstruction
from ambiver.pipeline import Pipeline, run_pipeline
from ambiver.scenes import SyntheticDetector
from ambiver.synthetic import DetectionNoise


class CountingBackend(VlmBackend):
    name = "counting"

    def __init__(self):
        self.inner = MockBackend()
        self.calls = 0

    def complete(self, prompt, images, temperature=0.0):
        self.calls += 1
        return self.inner.complete(prompt, images, temperature)


class GarbledBackend(VlmBackend):
    name = "garbled"

    def complete(self, prompt, images, temperature=0.0):
        return "I cannot tell."


def test_mock_backend_scores_perfectly():
    """Without detection noise the mock backend reproduces every gold label."""

    with synthetic_workspace(n_scenes=2, seed=0) as (directory, sources, items):
        config = config_in(directory / "out")
        result = run_pipeline(config, sources, items)
        out = result.output_dir
        assert result.report.n == 12
        assert result.report.accuracy == 1.0
        assert result.report.degraded == 0
        assert (out / "report.json").exists()
        assert (out / "report.txt").read_text(encoding="utf-8").startswith("n=12")
        assert PipelineConfig.load(out / "config.yaml") == config
        for source in sources:
            assert (out / "scenes" / source.scene_id / "bev.png").exists()


def test_records_follow_instruction_order():
    """Records come back in the order of the instructions."""

    with synthetic_workspace(n_scenes=2, seed=1) as (directory, sources, items):
        shuffled = list(reversed(items))
        config = config_in(directory / "out")
        result = run_pipeline(config, sources, shuffled)
        assert [r.key for r in result.records] == [i.key for i in shuffled]
        assert all(r.prompt_hash and r.template_digest for r in result.records)


def test_parallel_scenes_match_serial_run():
    """More workers do not change any verdict."""

    with synthetic_workspace(n_scenes=3, seed=2) as (directory, sources, items):
        serial = run_pipeline(config_in(directory / "serial"), sources, items)
        config = PipelineConfig(workers=3, inflight_limit=2)
        config = config_in(directory / "parallel", config)
        parallel = run_pipeline(config, sources, items)
        assert parallel.report == serial.report
        assert [r.verdict for r in parallel.records] == [
            r.verdict for r in serial.records
        ]


def test_replay_reproduces_the_report():
    """A run directory replays to the identical report."""

    with synthetic_workspace(n_scenes=2, seed=3) as (directory, sources, items):
        first = run_pipeline(config_in(directory / "first"), sources, items)
        replay = PipelineConfig(backend="replay", replay_path=str(first.output_dir))
        second = run_pipeline(config_in(directory / "second", replay), sources, items)
        assert second.report == first.report
        assert [r.prompt_hash for r in second.records] == [
            r.prompt_hash for r in first.records
        ]


def test_finished_instructions_are_skipped():
    """A second run reuses stored records unless forced."""

    with synthetic_workspace(n_scenes=1, seed=4) as (directory, sources, items):
        backend = CountingBackend()
        config = config_in(directory / "out")
        first = run_pipeline(config, sources, items, backend=backend)
        assert backend.calls == len(items)

        second = run_pipeline(config, sources, items, backend=backend)
        assert backend.calls == len(items)
        assert second.report == first.report

        run_pipeline(config, sources, items, backend=backend, force=True)
        assert backend.calls == 2 * len(items)


def test_failures_are_contained():
    """Unreadable answers and missing scenes become degraded ambiguous records."""

    with synthetic_workspace(n_scenes=1, seed=5) as (directory, sources, items):
        ghost = LabeledInstruction("ghost", "g1", "pick up the cup", "Unambiguous")
        config = config_in(directory / "out")
        backend = GarbledBackend()
        result = run_pipeline(config, sources, items + [ghost], backend=backend)

        assert result.report.degraded == len(items) + 1
        for record in result.records:
            assert record.verdict.is_ambiguous
            assert record.verdict.types == ("Instance",)
            assert record.degraded and record.error
        assert "not available" in result.records[-1].error
        assert result.records[0].verdict.warnings == ("UnparseableVerdictError",)


def test_fusion_ablation_keeps_single_detections():
    """Without fusion every candidate stands for one detection."""

    with synthetic_workspace(n_scenes=1, seed=6) as (directory, sources, items):
        ablated = PipelineConfig().with_overrides({"ablations.no_fusion": True})
        result = run_pipeline(config_in(directory / "out", ablated), sources, items)
        candidates = [c for r in result.records for c in r.candidates]
        assert candidates
        assert {c["cardinality"] for c in candidates} == {1}


def test_visual_ablations_skip_the_bev():
    """Without global context no BEV is rendered or attached."""

    with synthetic_workspace(n_scenes=1, seed=7) as (directory, sources, items):
        ablated = PipelineConfig().with_overrides({"ablations.no_bev": True})
        result = run_pipeline(config_in(directory / "out", ablated), sources, items)
        scene_id = sources[0].scene_id
        assert not (result.output_dir / "scenes" / scene_id / "bev.png").exists()
        assert result.report.n == len(items)


def test_scene_artifacts_are_computed_once():
    """Keyframes and the BEV are shared by a scene's instructions."""

    with synthetic_workspace(n_scenes=1, seed=8) as (directory, sources, items):
        with pipeline_session(config_in(directory / "out")) as pipeline:
            first = pipeline.prepare_scene(sources[0])
            assert pipeline.prepare_scene(sources[0]) is first
            assert len(first.keyframes) == len(sources[0].poses())
            assert set(first.keyframe_store) == set(first.keyframes.indices)
            assert first.bev is not None


def test_degenerate_instruction_queries_the_raw_text():
    """An instruction without a noun phrase is still adjudicated."""

    with synthetic_workspace(n_scenes=1, seed=9) as (directory, sources, items):
        scene_id = sources[0].scene_id
        item = LabeledInstruction(scene_id, "x1", "pick it up", "Unambiguous")
        with Pipeline(config_in(directory / "out")) as pipeline:
            record = pipeline.process(sources[0], item)
        assert record.query == "pick it up"
        assert not record.verdict.is_ambiguous


def test_noisy_detections_keep_accuracy():
    """Jittered and dropped detections barely move the mock backend's verdicts."""

    noise = DetectionNoise(bbox_sigma_px=2.0, dropout_prob=0.1)
    with synthetic_workspace(n_scenes=6, seed=0) as (directory, sources, items):
        config = config_in(directory / "out")
        detector = SyntheticDetector(noise)
        result = run_pipeline(config, sources, items, detector=detector)
        assert result.report.n == 36
        assert result.report.accuracy >= 0.95
        assert result.report.degraded == 0


def test_detection_cache_belongs_to_the_run():
    """Detections are cached under the run's output directory only."""

    with synthetic_workspace(n_scenes=1, seed=3) as (directory, sources, items):
        first = run_pipeline(config_in(directory / "a"), sources, items)
        cached = list((first.output_dir / "detections").rglob("*.json"))
        assert cached

        second = run_pipeline(config_in(directory / "b"), sources, items)
        assert list((second.output_dir / "detections").rglob("*.json"))
        assert [r.verdict for r in second.records] == [
            r.verdict for r in first.records
        ]


@pytest.mark.asyncio
async def test_async_pipeline_session():
    """The async session builds and closes a pipeline off the event loop."""

    with synthetic_workspace(n_scenes=1, seed=10) as (directory, sources, items):
        async with async_pipeline_session(config_in(directory / "out")) as pipeline:
            assert isinstance(pipeline, Pipeline)
            assert pipeline.config.output_dir == str(directory / "out")
