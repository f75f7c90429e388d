"""End-to-end runs over scenes and benchmark instructions.

Per instruction: parse, detect the grounding query on the scene's keyframes,
fuse the detections, package the dossier with the scene's BEV and ask the
backend. Keyframes and the BEV are computed once per scene. A record that
fails is stored as a degraded ambiguous verdict instead of stopping the batch.
"""

from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from .backends import ThrottledBackend, VlmBackend, create_backend
from .bev import BEVImage, aggregate_point_cloud, render_bev, save_bev
from .config import PipelineConfig
from .dossier import PromptTemplate, build_dossier
from .evaluation import (
    LabeledInstruction,
    MetricsReport,
    compute_metrics,
    emit_report,
)
from .exceptions import AmbiVerError, EmptyCloudError, MissingFileError
from .fusion import Candidate, fuse, fuse_without_grouping
from .geometry import back_project
from .keyframes import KeyframeSet, select_keyframes, uniform_keyframes
from .parser import (
    ParsedInstruction,
    ParserLexicon,
    load_lexicon,
    parse_instruction,
    parser_backend_passthrough,
)
from .reasoning import FALLBACK_TYPE, Verdict, run_adjudication
from .scenes import (
    CachedDetector,
    DetectionCache,
    DetectorBackend,
    SceneSource,
    SyntheticDetector,
)
from .store import ResultRecord, ResultStore

logger = logging.getLogger(__name__)

REPORT_JSON = "report.json"
REPORT_TABLE = "report.txt"
CONFIG_FILE = "config.yaml"

SceneSet = Union[Mapping[str, SceneSource], Sequence[SceneSource]]


@dataclass(frozen=True, eq=False)
class SceneArtifacts:
    """Per-scene products shared by all of its instructions."""

    keyframes: KeyframeSet
    keyframe_store: Dict[int, np.ndarray]
    bev: Optional[BEVImage] = None
    bev_path: Optional[Path] = None


@dataclass(frozen=True)
class PipelineResult:
    records: List[ResultRecord]
    report: MetricsReport
    output_dir: Path


class Pipeline:
    """Runs instructions against scenes with one configuration.

    Args:
        config: Pipeline configuration.
        detector: Grounding detector; a noise-free :class:`SyntheticDetector`
            when ``None``. It is wrapped in an on-disk detection cache under
            the output directory.
        backend: Reasoning backend; built from ``config`` when ``None``.
    """

    def __init__(
        self,
        config: Optional[PipelineConfig] = None,
        detector: Optional[DetectorBackend] = None,
        backend: Optional[VlmBackend] = None,
    ) -> None:
        self.config = PipelineConfig.from_value(config)
        self.output_dir = Path(self.config.output_dir)
        self.lexicon: ParserLexicon = load_lexicon(self.config.lexicon_dir)
        self.template = PromptTemplate.load(self.config.prompt_template)
        self.store = ResultStore(self.output_dir)

        detector = detector or SyntheticDetector(version=self.config.detector_version)
        cache = DetectionCache(self.output_dir / "detections")
        self.detector = CachedDetector(detector, cache)

        self._owns_backend = backend is None
        inner = backend or create_backend(self.config, self.lexicon)
        self.backend = ThrottledBackend(inner, self.config.inflight_limit)

        self._artifacts: Dict[str, SceneArtifacts] = {}
        self._scene_locks: Dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def close(self) -> None:
        if self._owns_backend:
            self.backend.close()

    def __enter__(self) -> "Pipeline":
        return self

    def __exit__(self, exc_type: object, exc_val: object, exc_tb: object) -> None:
        self.close()

    def _scene_lock(self, scene_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._scene_locks.setdefault(scene_id, threading.Lock())

    def prepare_scene(self, source: SceneSource) -> SceneArtifacts:
        """Keyframes, keyframe images and BEV of ``source``, computed once."""

        with self._scene_lock(source.scene_id):
            cached = self._artifacts.get(source.scene_id)
            if cached is not None:
                return cached

            cfg = self.config
            poses = source.poses()
            if cfg.ablations.uniform_keyframes:
                keyframes = uniform_keyframes(len(poses), cfg.keyframes.n_target)
            else:
                keyframes = select_keyframes(poses, cfg.keyframes)

            bev = bev_path = None
            if not (cfg.ablations.no_bev or cfg.ablations.no_visual):
                frames = source.frames(keyframes.indices)
                cloud = aggregate_point_cloud(frames, source.intrinsics, cfg.bev.stride)
                try:
                    bev = render_bev(cloud, cfg.bev)
                except EmptyCloudError:
                    logger.warning(
                        "scene %s has no valid depth; continuing without a BEV",
                        source.scene_id,
                    )
                else:
                    scene_dir = self.output_dir / "scenes" / source.scene_id
                    bev_path = save_bev(bev, scene_dir / "bev.png")

            images = source.keyframe_store(keyframes.indices)
            artifacts = SceneArtifacts(keyframes, images, bev, bev_path)
            logger.info(
                "scene %s: %d of %d frames kept as keyframes",
                source.scene_id,
                len(keyframes),
                len(poses),
            )
            self._artifacts[source.scene_id] = artifacts
            return artifacts

    def parse(self, text: str) -> ParsedInstruction:
        if self.config.ablations.no_parse:
            return parser_backend_passthrough(text)
        return parse_instruction(text, self.lexicon)

    def candidates(
        self, source: SceneSource, query: str, keyframes: KeyframeSet
    ) -> List[Candidate]:
        """Detect ``query`` on the keyframes and fuse the detections."""

        cfg = self.config
        detections = self.detector.detect(source, query, keyframes.indices)
        if cfg.ablations.no_fusion:
            return fuse_without_grouping(detections, cfg.fusion)
        k = source.intrinsics
        rays = [back_project(d, source.pose(d.view_index), k) for d in detections]
        confidence_only = cfg.ablations.confidence_only_rep
        return fuse(detections, rays, cfg.fusion, confidence_only=confidence_only)

    def process(self, source: SceneSource, item: LabeledInstruction) -> ResultRecord:
        """Run one instruction and store its record."""

        cfg = self.config
        parsed = self.parse(item.text)
        query = parsed.raw if parsed.is_degenerate else parsed.target
        artifacts = self.prepare_scene(source)
        candidates = self.candidates(source, query, artifacts.keyframes)

        dossier = build_dossier(
            parsed,
            artifacts.bev,
            candidates,
            artifacts.keyframe_store,
            top_k=cfg.fusion.top_k,
            margin=cfg.crop_margin,
            crop_dir=self.output_dir / "crops" / source.scene_id / item.instruction_id,
            bev_path=artifacts.bev_path,
        )
        adjudication = run_adjudication(
            dossier,
            self.backend,
            self.template,
            temperature=cfg.temperature,
            max_retries=cfg.remote.max_retries,
            include_bev=not (cfg.ablations.no_bev or cfg.ablations.no_visual),
            include_crops=not (cfg.ablations.no_local or cfg.ablations.no_visual),
        )
        record = ResultRecord(
            scene_id=item.scene_id,
            instruction_id=item.instruction_id,
            verdict=adjudication.verdict,
            prompt_hash=adjudication.prompt_hash,
            template_digest=adjudication.template_digest,
            query=query,
            candidates=tuple(c.to_dict() for c in candidates),
        )
        return self.store.write(record, adjudication.raw_response)

    def _fail(self, item: LabeledInstruction, error: Exception) -> ResultRecord:
        logger.warning(
            "instruction %s/%s failed: %s", item.scene_id, item.instruction_id, error
        )
        verdict = Verdict.ambiguous(
            (FALLBACK_TYPE,),
            f"pipeline failure: {error}",
            degraded=True,
            warnings=(type(error).__name__,),
        )
        record = ResultRecord(
            item.scene_id,
            item.instruction_id,
            verdict,
            template_digest=self.template.digest,
            error=str(error),
        )
        return self.store.write(record)

    def _run_scene(
        self,
        source: Optional[SceneSource],
        items: Sequence[LabeledInstruction],
        force: bool,
    ) -> List[ResultRecord]:
        records = []
        for item in items:
            if not force and self.store.has(item.scene_id, item.instruction_id):
                records.append(self.store.load(item.scene_id, item.instruction_id))
                continue
            try:
                if source is None:
                    raise MissingFileError(f"Scene {item.scene_id} is not available")
                records.append(self.process(source, item))
            except (AmbiVerError, ValueError, OSError) as e:
                records.append(self._fail(item, e))
        return records

    def run(
        self,
        scenes: SceneSet,
        instructions: Sequence[LabeledInstruction],
        force: bool = False,
    ) -> PipelineResult:
        """Process every instruction, then score and report.

        Scenes are processed in parallel by ``config.workers`` threads;
        backend calls are additionally capped by ``config.inflight_limit``.
        Instructions that already have a record are skipped unless ``force``.
        """

        if isinstance(scenes, Mapping):
            by_id = dict(scenes)
        else:
            by_id = {s.scene_id: s for s in scenes}
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.config.dump(self.output_dir / CONFIG_FILE)

        groups: Dict[str, List[LabeledInstruction]] = {}
        for item in instructions:
            groups.setdefault(item.scene_id, []).append(item)

        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            futures = [
                pool.submit(self._run_scene, by_id.get(scene_id), group, force)
                for scene_id, group in groups.items()
            ]
            done = {r.key: r for f in futures for r in f.result()}

        records = [done[item.key] for item in instructions]
        report = compute_metrics([(r.key, r.verdict) for r in records], instructions)
        emit_report(report, "json", self.output_dir / REPORT_JSON)
        emit_report(report, "table", self.output_dir / REPORT_TABLE)
        logger.info(
            "processed %d instructions: accuracy %.4f, %d degraded",
            len(records),
            report.accuracy,
            report.degraded,
        )
        return PipelineResult(records, report, self.output_dir)


def run_pipeline(
    config: Optional[PipelineConfig],
    scenes: SceneSet,
    instructions: Sequence[LabeledInstruction],
    *,
    detector: Optional[DetectorBackend] = None,
    backend: Optional[VlmBackend] = None,
    force: bool = False,
) -> PipelineResult:
    """Run the whole pipeline once; see :class:`Pipeline`."""

    with Pipeline(config, detector, backend) as pipeline:
        return pipeline.run(scenes, instructions, force=force)


__all__ = ["Pipeline", "PipelineResult", "SceneArtifacts", "run_pipeline"]
