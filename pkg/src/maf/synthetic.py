"""Synthetic dialogue task with a controlled cross-modal information split.

Each generated instance has three independent latent labels:

* the source speaker, readable from the text (the last utterance is
  always spoken by the source);
* an action class, encoded only in the audio matrix as a class-specific
  orthonormal basis row plus Gaussian noise;
* a target class, encoded only in the video matrix the same way.

The gold explanation is the three tokens "<source> <action> <target>",
so a text-only model can learn the source but can do no better than
chance on the action and target. The gap between a fused model and a
text-only model on action-word accuracy therefore measures how much
audio information the fusion pathway actually transports.

Filler words are drawn independently of the labels, which makes the
text/action mutual information zero by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import DialogueInstance, Utterance
from .errors import ConfigError, ContractError
from .metrics import score_corpus, source_target_accuracy
from .model import TrainedModel, generate_explanation
from .text import tokenize

__all__ = ["SyntheticSpec", "generate", "evaluate_gap", "GapReport", "GAP_VARIANTS"]

_FILLERS = (
    "well", "you", "know", "this", "that", "really", "so", "very",
    "just", "quite", "honestly", "right", "come", "on", "look", "sure",
)

# description vocabulary for rich templates; the indices are deterministic
# functions of (action, target), so the clause is exactly recoverable from
# the modalities but needs them jointly
_DESCRIPTION_WORDS = ("des0", "des1", "des2", "des3", "des4", "des5", "des6", "des7")


def _description_clause(action: int, target: int) -> str:
    first = _DESCRIPTION_WORDS[(action + target) % len(_DESCRIPTION_WORDS)]
    second = _DESCRIPTION_WORDS[(2 * action + target) % len(_DESCRIPTION_WORDS)]
    return f"while {first} and {second}"


@dataclass
class SyntheticSpec:
    """Generator settings. Class patterns are rows of the identity, so the
    class counts may not exceed the corresponding feature width."""

    num_instances: int = 600
    speakers: int = 6
    actions: int = 5
    targets: int = 6
    frames: int = 12
    windows: int = 8
    noise: float = 0.1
    seed: int = 1
    audio_dim: int = 16
    video_dim: int = 32
    rich_templates: bool = False

    def validate(self) -> None:
        if self.num_instances < 1:
            raise ConfigError(f"num_instances must be >= 1, got {self.num_instances}")
        for name in ("speakers", "actions", "targets"):
            if getattr(self, name) < 2:
                raise ConfigError(f"{name} must be >= 2, got {getattr(self, name)}")
        if self.frames < 1 or self.windows < 1:
            raise ConfigError("frames and windows must be >= 1")
        if self.noise < 0:
            raise ConfigError(f"noise must be >= 0, got {self.noise}")
        if self.actions > self.audio_dim:
            raise ConfigError(f"actions ({self.actions}) exceed audio_dim ({self.audio_dim})")
        if self.targets > self.video_dim:
            raise ConfigError(f"targets ({self.targets}) exceed video_dim ({self.video_dim})")


def speaker_name(i: int) -> str:
    return f"spk{i}"


def action_word(i: int) -> str:
    return f"act{i}"


def target_word(i: int) -> str:
    return f"tgt{i}"


def generate(spec: SyntheticSpec) -> list[DialogueInstance]:
    """Deterministic corpus for a spec; instances use independent derived
    seed streams, so the corpus is stable under reordering of the loop."""
    spec.validate()
    children = np.random.SeedSequence(spec.seed).spawn(spec.num_instances)
    out = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        source = int(rng.integers(spec.speakers))
        action = int(rng.integers(spec.actions))
        target = int(rng.integers(spec.targets))

        n_utts = int(rng.integers(2, 4))
        speakers = [int(rng.integers(spec.speakers)) for _ in range(n_utts - 1)] + [source]
        utterances = []
        for spk in speakers:
            words = rng.choice(len(_FILLERS), size=int(rng.integers(3, 6)))
            utterances.append(Utterance(
                speaker=speaker_name(spk),
                text=" ".join(_FILLERS[w] for w in words),
            ))

        # class pattern on every frame; orthonormal basis row + noise
        audio = np.zeros((spec.frames, spec.audio_dim))
        audio[:, action] = 1.0
        audio += spec.noise * rng.standard_normal(audio.shape)
        video = np.zeros((spec.windows, spec.video_dim))
        video[:, target] = 1.0
        video += spec.noise * rng.standard_normal(video.shape)

        explanation = f"{speaker_name(source)} {action_word(action)} {target_word(target)}"
        description = None
        if spec.rich_templates:
            description = _description_clause(action, target)
            explanation = f"{explanation} {description}"

        out.append(DialogueInstance(
            id=f"syn-{spec.seed}-{i:05d}",
            utterances=utterances,
            audio_features=audio,
            video_features=video,
            explanation=explanation,
            sarcasm_source=speaker_name(source),
            sarcasm_target=target_word(target),
            action_word=action_word(action),
            description=description,
        ))
    return out


# ---- fusion-gap evaluation ----------------------------------------------------

GAP_VARIANTS = ("TextOnly", "MAF", "Concat2", "DPA", "NoGIF")


@dataclass
class GapReport:
    """Per-variant accuracies on held-out instances, plus the margins of
    every variant over TextOnly on action-word accuracy (the fusion gap)."""

    rows: dict[str, dict] = field(default_factory=dict)
    ordering: list[str] = field(default_factory=list)
    margins: dict[str, float] = field(default_factory=dict)

    def render(self) -> str:
        cols = ("action_acc", "target_word_acc", "source_acc", "exact_match", "R1", "RL", "B4")
        lines = ["variant      " + "  ".join(f"{c:>15}" for c in cols)]
        for name in self.ordering:
            row = self.rows[name]
            lines.append(f"{name:<12} " + "  ".join(f"{100.0 * row[c]:>15.2f}" for c in cols))
        if self.margins:
            lines.append("")
            for name, margin in sorted(self.margins.items()):
                lines.append(f"action gap over TextOnly, {name}: {100.0 * margin:+.2f} points")
        return "\n".join(lines) + "\n"


def evaluate_variant(tm: TrainedModel, test: Sequence[DialogueInstance]) -> dict:
    """Accuracies and text-overlap scores for one trained model."""
    if not test:
        raise ContractError("evaluate_variant: empty test set")
    hyps = [generate_explanation(tm, inst) for inst in test]
    n = len(test)
    source_acc, target_acc = source_target_accuracy(hyps, test)
    action = exact = 0
    for hyp, inst in zip(hyps, test):
        toks = hyp.split()
        action += inst.action_word in toks
        exact += toks == tokenize(inst.explanation)
    row = {
        "action_acc": action / n,
        "source_acc": source_acc,
        "target_word_acc": target_acc,
        "exact_match": exact / n,
    }
    row.update(score_corpus(hyps, [inst.explanation for inst in test]))
    return row


def evaluate_gap(
    trained: Mapping[str, TrainedModel],
    test: Sequence[DialogueInstance],
    required: Sequence[str] = GAP_VARIANTS,
) -> GapReport:
    """Score a family of trained variants on one shared held-out set.

    All models must have been trained on the identical split and seed;
    a required variant missing from ``trained`` is a contract error.
    """
    missing = [v for v in required if v not in trained]
    if missing:
        raise ContractError(f"evaluate_gap: missing trained variant(s) {missing}")
    report = GapReport()
    for name in sorted(trained):
        report.rows[name] = evaluate_variant(trained[name], test)
    report.ordering = sorted(report.rows, key=lambda v: -report.rows[v]["action_acc"])
    if "TextOnly" in report.rows:
        floor = report.rows["TextOnly"]["action_acc"]
        for name, row in report.rows.items():
            if name != "TextOnly":
                report.margins[name] = row["action_acc"] - floor
    return report
