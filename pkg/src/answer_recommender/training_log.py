"""Rerun.io logging of training curves."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import rerun as rr

from .util import get_recording_stream

__all__ = [
    "TrainingRecorder",
    "open_recorder",
]

logger = logging.getLogger(__name__)


@dataclass
class TrainingRecorder:
    """Logs per-epoch training metrics as scalar time series to Rerun.io.

    Each metric is logged under ``<run_name>/<metric>`` on a sequence timeline
    named ``<run_name>_epoch``, so the qboost and ranker curves of one pipeline
    run can live in the same recording.

    The recording stream can either be provided directly via ``recording_stream``, or
    a new recording stream can be created that saves to ``save_path``. If neither is
    provided, it will try to find it using ``rr.get_data_recording()``. ``save_path``
    takes precedence over ``recording_stream``.

    Parameters
    ----------
    run_name:
        Entity path prefix and timeline prefix, e.g. ``"qboost"``.
    recording_stream:
        The Rerun recording stream to use. Ignored if ``save_path`` is provided.
    save_path:
        Path where the Rerun recording will be saved as an ``.rrd`` file.
    application_id:
        Application ID used when a new stream is created for ``save_path``.

    Attributes
    ----------
    history : list[dict[str, float]]
        Every logged epoch, in order, with an ``"epoch"`` key.

    Examples
    --------
    .. code-block:: python

       import rerun as rr
       from answer_recommender.training_log import TrainingRecorder

       rr.init("answer_recommender", spawn=True)
       recorder = TrainingRecorder("ranker")
       recorder.log_epoch(0, train_loss=1.38, val_accuracy=0.31)
    """

    run_name: str
    recording_stream: rr.RecordingStream | None = None
    save_path: Path | str | None = None
    application_id: str | None = None
    history: list[dict[str, float]] = field(default_factory=list)

    def __post_init__(self):
        self.recording_stream = get_recording_stream(
            recording_stream=self.recording_stream,
            save_path=self.save_path,
            application_id=self.application_id,
        )

    @property
    def timeline_name(self) -> str:
        return f"{self.run_name}_epoch"

    def log_epoch(self, epoch: int, **metrics: float) -> None:
        self.history.append({"epoch": epoch, **metrics})
        self.recording_stream.set_time(timeline=self.timeline_name, sequence=epoch)
        for name, value in sorted(metrics.items()):
            self.recording_stream.log(f"{self.run_name}/{name}", rr.Scalars(float(value)))

    def close(self) -> None:
        self.recording_stream.flush()


def open_recorder(
    run_name: str, save_path: Path | str | None = None
) -> TrainingRecorder | None:
    """Create a recorder if a stream is available, otherwise return ``None``."""
    try:
        return TrainingRecorder(run_name, save_path=save_path)
    except ValueError:
        logger.debug("No Rerun recording stream; %s curves are not recorded", run_name)
        return None
