"""
AmbiVer: detect ambiguous instructions in 3D scenes before a robot acts on them.

An instruction such as "pick up the chair" is fine in a room with one chair and
ambiguous in a room with three. AmbiVer decides which, by first collecting
evidence from the scene and then asking a vision-language model to judge the
instruction against that evidence. It answers with a binary label, the type
of ambiguity (Instance, Attribute, Spatial or Action), a short explanation and,
when the instruction is ambiguous, a clarification question.

## Features

- **Decoupled instruction parsing**: a rule-based parser splits an instruction
  into action, target, attributes and spatial relations using plain-text
  lexicons you can extend
- **Multi-view instance fusion**: detections from many keyframes are grouped
  into physical instances by ray geometry and union-find, so the same chair
  seen twenty times counts once
- **Global and local evidence**: a bird's-eye view of the whole scene plus one
  close-up crop per fused candidate
- **Pluggable reasoning**: a deterministic rule-based mock, a replay backend for
  recorded responses, and an HTTP backend for a hosted model
- **Reproducible runs**: seeded synthetic scenes, a content-addressed detection
  cache, atomic per-record results and idempotent re-runs
- **Evaluation harness**: accuracy, precision, recall, F1 and the per-type
  breakdown, emitted as JSON or as a plain-text table

## Installation

```bash
# Using pip
pip install ambiver

# Using uv
uv pip install ambiver
```

Development and documentation tooling live in the ``dev`` and ``docs`` extras:

```bash
uv pip install "ambiver[dev]"
```

## Quick Start

```python
import ambiver

# Two seeded synthetic scenes with generated, labeled instructions
sources, items = ambiver.build_synthetic_benchmark(2, seed=0)

with ambiver.pipeline_session() as pipeline:
    result = pipeline.run(sources, items)

print(ambiver.format_table(result.report))
for record in result.records:
    print(record.instruction_id, record.verdict.label.value, record.verdict.types)
```

The same run from the shell:

```bash
ambiver synth bench --scenes 2
ambiver run bench --output-dir out
ambiver report out
```

## Single instructions

The stages can be used on their own:

```python
import ambiver

parsed = ambiver.parse_instruction("Pick up the red cup to the left of the lamp")
# ParsedInstruction(action='pick', target='cup', attributes=('red',),
#                   relations=(('left of', 'lamp'),), ...)

verdict = ambiver.parse_verdict('{"label": "Ambiguous", "types": ["Instance"], '
                                '"explanation": "two cups", '
                                '"clarification": "Which cup?"}')
```

## Backends

| Backend | Selected with | Notes |
| --- | --- | --- |
| `mock` | `backend: mock` | Deterministic rules over the prompt; no network |
| `replay` | `backend: replay`, `replay_path` | Answers from a `responses.jsonl` recorded by an earlier run |
| `remote` | `backend: remote` | POSTs the prompt and base64 PNG images to `AMBIVER_VLM_ENDPOINT` |

The remote credential is read from `AMBIVER_VLM_API_KEY` and is never written
into a dumped configuration.

## Output directory

```
config.yaml              configuration of the run
results.jsonl            one line per written record
responses.jsonl          raw backend responses keyed by prompt hash
records/<scene>/<id>.json
detections/              detection cache
scenes/<scene>/bev.png
crops/<scene>/<id>/
report.json, report.txt
```

## Requirements

- Python 3.8+
- numpy, Pillow, PyYAML, requests
"""

from .backends import MockBackend, RemoteBackend, ReplayBackend, VlmBackend
from .bev import BEVImage, PointCloud, aggregate_point_cloud, render_bev, save_bev
from .config import (
    AblationSwitches,
    AmbiVerConfig,
    BevConfig,
    FusionConfig,
    KeyframeConfig,
    PipelineConfig,
    RemoteBackendConfig,
)
from .context import async_pipeline_session, pipeline_session, synthetic_workspace
from .dossier import Dossier, PromptTemplate, build_dossier, render_prompt
from .evaluation import (
    LabeledInstruction,
    MetricsReport,
    compute_metrics,
    consensus_filter,
    emit_report,
    format_table,
    load_benchmark,
)
from .exceptions import (
    AmbiVerError,
    BackendUnavailableError,
    EmptyInstructionError,
    IoFailureError,
    MissingFileError,
    SchemaViolationError,
    UnparseableVerdictError,
)
from .fusion import Candidate, Detection2D, fuse, union_find_components
from .geometry import BBox2D, CameraPose, Intrinsics, Ray3, back_project
from .keyframes import KeyframeSet, select_keyframes
from .parser import ParsedInstruction, load_lexicon, parse_instruction
from .pipeline import Pipeline, PipelineResult, run_pipeline
from .reasoning import AsyncAdjudicator, Label, Verdict, adjudicate, parse_verdict
from .scenes import DirectoryScene, SyntheticSceneSource, build_synthetic_benchmark
from .store import ResultRecord, ResultStore
from .synthetic import generate_instruction_suite, generate_scene, render_detections

__version__ = "0.1.0"

__all__ = [
    "run_pipeline",
    "Pipeline",
    "PipelineResult",
    "pipeline_session",
    "async_pipeline_session",
    "synthetic_workspace",
    "PipelineConfig",
    "KeyframeConfig",
    "FusionConfig",
    "BevConfig",
    "AblationSwitches",
    "RemoteBackendConfig",
    "AmbiVerConfig",
    "CameraPose",
    "Intrinsics",
    "Ray3",
    "BBox2D",
    "back_project",
    "KeyframeSet",
    "select_keyframes",
    "ParsedInstruction",
    "parse_instruction",
    "load_lexicon",
    "Detection2D",
    "Candidate",
    "fuse",
    "union_find_components",
    "PointCloud",
    "BEVImage",
    "aggregate_point_cloud",
    "render_bev",
    "save_bev",
    "Dossier",
    "PromptTemplate",
    "build_dossier",
    "render_prompt",
    "VlmBackend",
    "MockBackend",
    "ReplayBackend",
    "RemoteBackend",
    "Label",
    "Verdict",
    "parse_verdict",
    "adjudicate",
    "AsyncAdjudicator",
    "LabeledInstruction",
    "MetricsReport",
    "compute_metrics",
    "consensus_filter",
    "emit_report",
    "format_table",
    "load_benchmark",
    "DirectoryScene",
    "SyntheticSceneSource",
    "build_synthetic_benchmark",
    "generate_scene",
    "render_detections",
    "generate_instruction_suite",
    "ResultRecord",
    "ResultStore",
    "AmbiVerError",
    "EmptyInstructionError",
    "BackendUnavailableError",
    "UnparseableVerdictError",
    "MissingFileError",
    "SchemaViolationError",
    "IoFailureError",
    "__version__",
]
