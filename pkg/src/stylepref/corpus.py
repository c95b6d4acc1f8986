"""Utterance manifests and the three-stage evaluation-pool filter."""

from dataclasses import dataclass, asdict

from . import lineio
from .errors import ParseError, ValidationError

SPLITS = ("train", "test", "unassigned")

_REQUIRED_FIELDS = (
    "id",
    "source",
    "split",
    "audio_path",
    "duration_s",
    "transcript",
    "script_likeness",
    "cer",
    "predicted_mos",
    "arousal",
    "speaker_embedding_ref",
    "text_embedding_ref",
)


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    source: str
    split: str
    audio_path: str
    duration_s: float
    transcript: str
    script_likeness: int
    cer: float
    predicted_mos: float
    arousal: float
    speaker_embedding_ref: int
    text_embedding_ref: int

    def validate(self) -> None:
        if self.split not in SPLITS:
            raise ValidationError(f"{self.id}: split must be one of {SPLITS}, got {self.split!r}")
        if not self.duration_s > 0:
            raise ValidationError(f"{self.id}: duration_s must be > 0")
        if self.script_likeness not in (1, 2, 3, 4, 5):
            raise ValidationError(f"{self.id}: script_likeness must be an integer in 1..5")
        if not 0.0 <= self.cer <= 1.0:
            raise ValidationError(f"{self.id}: cer must lie in [0, 1]")
        if not 1.0 <= self.predicted_mos <= 5.0:
            raise ValidationError(f"{self.id}: predicted_mos must lie in [1, 5]")
        if not 0.0 <= self.arousal <= 1.0:
            raise ValidationError(f"{self.id}: arousal must lie in [0, 1]")
        if self.speaker_embedding_ref < 0 or self.text_embedding_ref < 0:
            raise ValidationError(f"{self.id}: embedding refs must be non-negative row indices")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict, lineno: int = 0) -> "UtteranceRecord":
        missing = [k for k in _REQUIRED_FIELDS if k not in obj]
        if missing:
            raise ParseError(f"line {lineno}: missing required keys: {', '.join(missing)}")
        try:
            rec = cls(
                id=str(obj["id"]),
                source=str(obj["source"]),
                split=str(obj["split"]),
                audio_path=str(obj["audio_path"]),
                duration_s=float(obj["duration_s"]),
                transcript=str(obj["transcript"]),
                script_likeness=int(obj["script_likeness"]),
                cer=float(obj["cer"]),
                predicted_mos=float(obj["predicted_mos"]),
                arousal=float(obj["arousal"]),
                speaker_embedding_ref=int(obj["speaker_embedding_ref"]),
                text_embedding_ref=int(obj["text_embedding_ref"]),
            )
        except (TypeError, ValueError) as exc:
            raise ParseError(f"line {lineno}: bad field value: {exc}") from exc
        rec.validate()
        return rec


@dataclass(frozen=True)
class FilterConfig:
    max_script_likeness: int = 2
    min_duration_s: float = 2.0
    max_duration_s: float = 10.0
    min_mos_exclusive: float = 3.0
    max_cer: float = 0.15

    def validate(self) -> None:
        import math

        vals = (self.min_duration_s, self.max_duration_s, self.min_mos_exclusive, self.max_cer)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError("filter thresholds must be finite")
        if not self.min_duration_s < self.max_duration_s:
            raise ValidationError("min_duration_s must be < max_duration_s")


def load_manifest(path) -> list[UtteranceRecord]:
    """Parse a manifest file into validated records, preserving order."""
    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = lineio.parse_line(line, lineno)
            rec = UtteranceRecord.from_dict(obj, lineno)
            if rec.id in seen:
                raise ValidationError(f"line {lineno}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    return records


def save_manifest(path, records) -> None:
    lineio.write_objects(path, (r.to_dict() for r in records))


def passes_filter(rec: UtteranceRecord, cfg: FilterConfig) -> bool:
    return (
        rec.script_likeness <= cfg.max_script_likeness
        and cfg.min_duration_s <= rec.duration_s <= cfg.max_duration_s
        and rec.predicted_mos > cfg.min_mos_exclusive
        and rec.cer <= cfg.max_cer
    )


def filter_pool(records, cfg: FilterConfig) -> list[UtteranceRecord]:
    """Keep records passing all four screening gates, order preserved.

    Duration bounds are inclusive; the MOS bound is strict (> min_mos_exclusive).
    """
    cfg.validate()
    return [r for r in records if passes_filter(r, cfg)]


def corpus_stats(records) -> dict[tuple[str, str], int]:
    """Count records per (source, split) cell."""
    counts: dict[tuple[str, str], int] = {}
    for r in records:
        key = (r.source, r.split)
        counts[key] = counts.get(key, 0) + 1
    return counts
