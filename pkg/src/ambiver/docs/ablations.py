"""Ablations and evidence switches
=================================

This guide complements :mod:`ambiver.pipeline` and explains how to switch
individual stages off to measure what each one contributes. Every switch is a
field of :class:`ambiver.config.AblationSwitches` and a flag of
``ambiver run``; they are independent and can be combined.

Instruction decoupling
----------------------

``no_parse`` (``--no-parse``) skips the rule parser. The whole instruction is
used as the grounding query and as the target of the parse shown in the
prompt, with no attributes or relations. With the synthetic detector this
means every class name mentioned anywhere in the instruction is detected,
so "the chair by the table" grounds chairs and tables together::

    from ambiver import PipelineConfig

    config = PipelineConfig.from_value({"ablations": {"no_parse": True}})

Keyframes
---------

``uniform_keyframes`` (``--kf-uniform``) replaces the pose-deviation selector
with evenly spaced frames. The count still follows ``keyframes.n_target``.

Instance fusion
---------------

``no_fusion`` (``--no-fusion``) keeps every detection as its own candidate, so
a single chair seen from three keyframes is reported as three candidates with
cardinality 1. ``confidence_only_rep`` (``--confidence-only-rep``) keeps the
grouping but picks each group's representative by detector score alone,
without the size and boundary terms.

Visual evidence
---------------

``no_bev`` drops the bird's-eye view, ``no_local`` drops the candidate crops
and ``no_visual`` drops both. The text of the prompt still lists the
candidates, so the mock backend keeps its verdicts; a remote model sees only
the text.

Comparing runs
--------------

Each run writes ``report.json`` into its output directory. Compare two runs
from the shell::

    ambiver run bench --output-dir out/full
    ambiver run bench --output-dir out/no-fusion --no-fusion
    ambiver report out/full
    ambiver report out/no-fusion --model "w/o fusion"

Re-running into the same directory skips instructions that already have a
record; pass ``--force`` to redo them. A finished run directory can also be
replayed with ``--backend replay --replay-path out/full``, which answers every
prompt from the recorded ``responses.jsonl`` without contacting a model.
"""
