"""Context manager interfaces for AmbiVer."""

import asyncio
import shutil
import tempfile
from contextlib import asynccontextmanager, contextmanager
from pathlib import Path
from typing import AsyncIterator, Iterator, List, Optional, Tuple

from .backends import VlmBackend
from .config import PipelineConfig
from .evaluation import LabeledInstruction
from .pipeline import Pipeline
from .scenes import DetectorBackend, SyntheticSceneSource, build_synthetic_benchmark


@contextmanager
def pipeline_session(
    config: Optional[PipelineConfig] = None,
    detector: Optional[DetectorBackend] = None,
    backend: Optional[VlmBackend] = None,
) -> Iterator[Pipeline]:
    """Yield a ready :class:`ambiver.pipeline.Pipeline`.

    Args:
        config: Pipeline configuration. Defaults to :class:`PipelineConfig`.
        detector: Grounding detector; the noise-free synthetic detector when
            ``None``.
        backend: Reasoning backend. When ``None`` it is built from
            ``config.backend`` and closed when the block exits.

    Yields:
        Pipeline: Pipeline writing to ``config.output_dir``.

    Example:
        ```python
        import ambiver

        sources, items = ambiver.build_synthetic_benchmark(2)
        with ambiver.pipeline_session() as pipeline:
            result = pipeline.run(sources, items)
        print(result.report.accuracy)
        ```
    """
    pipeline = Pipeline(config, detector, backend)
    try:
        yield pipeline
    finally:
        pipeline.close()


@asynccontextmanager
async def async_pipeline_session(
    config: Optional[PipelineConfig] = None,
    detector: Optional[DetectorBackend] = None,
    backend: Optional[VlmBackend] = None,
) -> AsyncIterator[Pipeline]:
    """Asynchronously yield a ready pipeline.

    Construction and shutdown run in the default executor, so loading the
    lexicon and template or closing a remote session does not block the loop.
    Use ``loop.run_in_executor`` (or :func:`asyncio.to_thread`) for
    :meth:`Pipeline.run`.

    Example:
        ```python
        import asyncio
        import ambiver

        async def main(sources, items):
            async with ambiver.async_pipeline_session() as pipeline:
                loop = asyncio.get_running_loop()
                return await loop.run_in_executor(None, pipeline.run, sources, items)
        ```
    """
    loop = asyncio.get_running_loop()
    pipeline = await loop.run_in_executor(None, Pipeline, config, detector, backend)
    try:
        yield pipeline
    finally:
        await loop.run_in_executor(None, pipeline.close)


@contextmanager
def synthetic_workspace(
    n_scenes: int = 2,
    seed: int = 0,
    instructions_per_scene: int = 6,
    keep: bool = False,
) -> Iterator[Tuple[Path, List[SyntheticSceneSource], List[LabeledInstruction]]]:
    """Create a throwaway synthetic benchmark and an output directory.

    Args:
        n_scenes: Number of generated scenes.
        seed: Benchmark seed.
        instructions_per_scene: Instructions generated for each scene.
        keep: When ``True`` the directory is left in place after the block.

    Yields:
        tuple: ``(directory, sources, instructions)``. Point
        ``PipelineConfig.output_dir`` somewhere below ``directory``.
    """
    directory = Path(tempfile.mkdtemp(prefix="ambiver-"))
    try:
        sources, items = build_synthetic_benchmark(
            n_scenes, seed=seed, instructions_per_scene=instructions_per_scene
        )
        yield directory, sources, items
    finally:
        if not keep:
            shutil.rmtree(directory, ignore_errors=True)


def config_in(
    directory: Path, config: Optional[PipelineConfig] = None
) -> PipelineConfig:
    """Copy of ``config`` writing into ``directory``."""

    overrides = {"output_dir": str(directory)}
    return PipelineConfig.from_value(config).with_overrides(overrides)


__all__ = [
    "async_pipeline_session",
    "config_in",
    "pipeline_session",
    "synthetic_workspace",
]
