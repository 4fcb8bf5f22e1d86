"""Pipeline configuration: defaults, flat TOML files and command-line overrides."""

from __future__ import annotations

import tomllib
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any

from .corpus import DEFAULT_EXCLUDE_KEYWORDS, DEFAULT_KEY_PHRASES
from .qboost import Seq2SeqHyperparams
from .ranker import RankerHyperparams

__all__ = [
    "PipelineConfig",
]


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of the pipeline.

    Values come from the defaults below, then a flat TOML file
    (``key = value`` per line, see :meth:`from_toml`), then command-line flags.

    Parameters
    ----------
    dump_dir:
        Directory holding ``Posts.xml``, ``Comments.xml`` and optionally ``PostLinks.xml``.
    workspace:
        Directory all stage artifacts are written to.
    dim, hidden:
        Word embedding size and LSTM hidden size (per direction for the encoder).
    beam, cq_max_len:
        Beam width and maximum generated clarifying-question length.
    k, k_sim:
        Candidate pool size and size of the "similar" set used for labeling.
    epochs, batch, lr, patience, clip_norm:
        SGD settings shared by both neural models; ``clip_norm`` bounds the global
        gradient norm of every step (0 disables clipping).
    maps, widths, q_max_len, a_max_len:
        Ranker filter banks and input lengths.
    drop_cq, drop_labeling, shared_branches:
        Ablation switches and the ranker branch-sharing option.
    boost_mode:
        ``"generate"`` (beam search) or ``"retrieve"`` (clarifying question of
        the most similar training title).
    """

    dump_dir: Path = Path("dump")
    workspace: Path = Path("workspace")
    seed: int = 0

    vocab_cap: int = 50000
    dim: int = 100
    embedding_epochs: int = 5
    embeddings_file: Path | None = None

    hidden: int = 256
    beam: int = 10
    cq_max_len: int = 20
    qboost_epochs: int | None = None
    qboost_lr: float | None = None
    clip_norm: float = 5.0
    boost_mode: str = "generate"

    k: int = 5
    k_sim: int = 5
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    val_cap: int = 5000
    test_cap: int = 5000

    epochs: int = 50
    batch: int = 64
    lr: float = 0.01
    patience: int = 5
    maps: int = 100
    widths: tuple[int, ...] = (3, 4, 5)
    q_max_len: int = 40
    a_max_len: int = 100

    drop_cq: bool = False
    drop_labeling: bool = False
    shared_branches: bool = False

    recent_days: float = 7.0
    cq_key_phrases: tuple[str, ...] = DEFAULT_KEY_PHRASES
    cq_exclude_keywords: tuple[str, ...] = DEFAULT_EXCLUDE_KEYWORDS
    excerpt_chars: int = 200

    def validate(self) -> PipelineConfig:
        """Raise ``ValueError`` naming the first invalid value."""
        counts = {
            "vocab_cap": self.vocab_cap,
            "dim": self.dim,
            "hidden": self.hidden,
            "beam": self.beam,
            "k": self.k,
            "k_sim": self.k_sim,
            "epochs": self.epochs,
            "batch": self.batch,
            "patience": self.patience,
            "maps": self.maps,
        }
        for name, value in counts.items():
            if value < 1:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.vocab_cap < 5:
            raise ValueError(f"vocab_cap must be at least 5, got {self.vocab_cap}")
        if self.cq_max_len < 0 or self.embedding_epochs < 0:
            raise ValueError("cq_max_len and embedding_epochs must not be negative")
        if self.clip_norm < 0:
            raise ValueError(f"clip_norm must not be negative, got {self.clip_norm}")
        for name in ("lr", "qboost_lr"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if not self.widths or min(self.widths) < 1:
            raise ValueError(f"widths must be positive, got {self.widths}")
        if min(self.q_max_len, self.a_max_len) < max(self.widths):
            raise ValueError(
                f"q_max_len={self.q_max_len} and a_max_len={self.a_max_len} must be at least "
                f"the largest filter width {max(self.widths)}"
            )
        for name in ("val_fraction", "test_fraction"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        if self.boost_mode not in ("generate", "retrieve"):
            raise ValueError(f"boost_mode must be 'generate' or 'retrieve', got {self.boost_mode!r}")
        return self

    @classmethod
    def from_toml(cls, path: Path | str) -> PipelineConfig:
        with open(path, "rb") as f:
            return cls().update(tomllib.load(f))

    def update(self, values: dict[str, Any]) -> PipelineConfig:
        """Return a copy with ``values`` applied; unknown keys are an error."""
        known = {f.name for f in fields(self)}
        changes = {}
        for key, value in values.items():
            if value is None:
                continue
            if key not in known:
                raise ValueError(f"Unknown configuration key {key!r}")
            changes[key] = _coerce(key, value)
        return replace(self, **changes)

    def qboost_hyperparams(self) -> Seq2SeqHyperparams:
        return Seq2SeqHyperparams(
            dim=self.dim,
            hidden=self.hidden,
            epochs=self.qboost_epochs if self.qboost_epochs is not None else self.epochs,
            batch_size=self.batch,
            lr=self.qboost_lr if self.qboost_lr is not None else self.lr,
            patience=self.patience,
            clip_norm=self.clip_norm,
            max_title_len=self.q_max_len,
            seed=self.seed,
        )

    def ranker_hyperparams(self) -> RankerHyperparams:
        return RankerHyperparams(
            dim=self.dim,
            maps=self.maps,
            widths=tuple(self.widths),
            q_max_len=self.q_max_len,
            a_max_len=self.a_max_len,
            epochs=self.epochs,
            batch_size=self.batch,
            lr=self.lr,
            patience=self.patience,
            clip_norm=self.clip_norm,
            seed=self.seed,
            shared_branches=self.shared_branches,
            drop_cq=self.drop_cq,
            drop_labeling=self.drop_labeling,
        )

    def to_record(self) -> dict[str, Any]:
        record = asdict(self)
        return {k: str(v) if isinstance(v, Path) else (list(v) if isinstance(v, tuple) else v) for k, v in record.items()}


_PATHS = {"dump_dir", "workspace", "embeddings_file"}
_TUPLES = {"widths", "cq_key_phrases", "cq_exclude_keywords"}


def _coerce(key: str, value: Any) -> Any:
    if key in _PATHS:
        return Path(value)
    if key in _TUPLES:
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        return tuple(int(v) for v in value) if key == "widths" else tuple(value)
    return value
