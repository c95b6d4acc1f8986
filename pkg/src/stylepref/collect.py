"""A/B judgment collection service: sessions of 25 trials over an append-only log.

State is rebuilt by replaying the log, so an acknowledged submit survives a
restart. Every mutation is appended, flushed and fsynced before the caller
gets its acknowledgment.
"""

import os
import threading
import time
from dataclasses import dataclass, asdict, field

from . import lineio
from .analysis import JudgmentRecord
from .errors import DomainError, ParseError, ValidationError

AGE_BANDS = ("<=20s", "30s", "40s", ">=50s")
GENDERS = ("male", "female", "other/unstated")
FAMILIARITY = ("low", "medium", "high")

DEFAULT_SESSION_SIZE = 25
DEFAULT_SESSION_CAP = 10


@dataclass(frozen=True)
class RaterProfile:
    rater_id: str
    age_band: str
    gender: str
    familiarity: str

    def __post_init__(self):
        if self.age_band not in AGE_BANDS:
            raise ValidationError(f"age_band must be one of {AGE_BANDS}")
        if self.gender not in GENDERS:
            raise ValidationError(f"gender must be one of {GENDERS}")
        if self.familiarity not in FAMILIARITY:
            raise ValidationError(f"familiarity must be one of {FAMILIARITY}")

    @classmethod
    def from_dict(cls, obj: dict) -> "RaterProfile":
        try:
            return cls(
                rater_id=str(obj["rater_id"]),
                age_band=str(obj["age_band"]),
                gender=str(obj["gender"]),
                familiarity=str(obj["familiarity"]),
            )
        except KeyError as exc:
            raise ParseError(f"profile missing key {exc}") from exc


@dataclass
class Session:
    session_id: str
    rater_id: str
    trial_list: list  # [(pair_id, presented_left)]
    cursor: int = 0
    status: str = "open"
    has_description: bool = False


@dataclass(frozen=True)
class DescriptionRecord:
    session_id: str
    rater_id: str
    text: str
    timestamp: float


class AnnotationService:
    """In-process core of the collection service; the HTTP layer is a thin shim."""

    def __init__(self, pairs, audio_paths: dict, log_path, session_size: int = DEFAULT_SESSION_SIZE,
                 session_cap: int = DEFAULT_SESSION_CAP, seed: int = 0):
        if session_size < 1:
            raise ValidationError("session size must be >= 1")
        self.pairs = {p.pair_id: p for p in pairs}
        self.pair_order = [p.pair_id for p in pairs]
        self.audio_paths = dict(audio_paths)
        self.session_size = session_size
        self.session_cap = session_cap
        self.seed = seed
        self.log_path = log_path

        self._lock = threading.RLock()
        self.sessions: dict[str, Session] = {}
        self.profiles: dict[str, RaterProfile] = {}
        self.judgments: list[JudgmentRecord] = []
        self.descriptions: list[DescriptionRecord] = []
        self.judgment_count = {pid: 0 for pid in self.pair_order}
        self.rater_assigned: dict[str, set] = {}
        self.rater_sessions: dict[str, int] = {}
        self._session_counter = 0

        self._replay()
        os.makedirs(os.path.dirname(os.path.abspath(log_path)), exist_ok=True)
        self._log = open(log_path, "a", encoding="utf-8")

    def close(self) -> None:
        self._log.close()

    # -- log handling ------------------------------------------------------

    def _replay(self) -> None:
        if not os.path.exists(self.log_path):
            return
        for event in lineio.read_objects(self.log_path):
            kind = event.get("type")
            if kind == "session":
                sess = Session(
                    session_id=event["session_id"],
                    rater_id=event["rater_id"],
                    trial_list=[tuple(t) for t in event["trial_list"]],
                )
                self._register_session(sess, RaterProfile.from_dict(event["profile"]))
            elif kind == "judgment":
                rec = JudgmentRecord.from_dict(event)
                sess = self.sessions.get(rec.session_id)
                self._apply_judgment(rec, sess)
            elif kind == "description":
                rec = DescriptionRecord(
                    session_id=event["session_id"],
                    rater_id=event["rater_id"],
                    text=event.get("text", ""),
                    timestamp=float(event.get("timestamp", 0.0)),
                )
                self.descriptions.append(rec)
                if rec.session_id in self.sessions:
                    self.sessions[rec.session_id].has_description = True
            else:
                raise ParseError(f"unknown log event type {kind!r}")

    def _append(self, event: dict) -> None:
        self._log.write(lineio.dumps(event))
        self._log.write("\n")
        self._log.flush()
        os.fsync(self._log.fileno())

    def _register_session(self, sess: Session, profile: RaterProfile) -> None:
        self.sessions[sess.session_id] = sess
        self.profiles[profile.rater_id] = profile
        assigned = self.rater_assigned.setdefault(sess.rater_id, set())
        assigned.update(pid for pid, _ in sess.trial_list)
        self.rater_sessions[sess.rater_id] = self.rater_sessions.get(sess.rater_id, 0) + 1
        self._session_counter = max(self._session_counter, int(sess.session_id.lstrip("s")) + 1)

    def _apply_judgment(self, rec: JudgmentRecord, sess: Session | None) -> None:
        self.judgments.append(rec)
        if rec.pair_id in self.judgment_count:
            self.judgment_count[rec.pair_id] += 1
        if sess is not None:
            sess.cursor += 1
            if sess.cursor >= len(sess.trial_list):
                sess.status = "complete"

    # -- operations --------------------------------------------------------

    def create_session(self, profile: RaterProfile) -> Session:
        import numpy as np

        with self._lock:
            if self.rater_sessions.get(profile.rater_id, 0) >= self.session_cap:
                raise DomainError(f"rater {profile.rater_id} reached the {self.session_cap}-session cap")
            assigned = self.rater_assigned.get(profile.rater_id, set())
            available = [pid for pid in self.pair_order if pid not in assigned]
            if len(available) < self.session_size:
                raise DomainError(
                    f"only {len(available)} unjudged pairs remain for rater {profile.rater_id}; "
                    f"{self.session_size} needed"
                )
            rng = np.random.default_rng(self.seed + self._session_counter)
            tiebreak = rng.permutation(len(available))
            ranked = sorted(
                range(len(available)),
                key=lambda i: (self.judgment_count[available[i]], tiebreak[i]),
            )
            chosen = [available[i] for i in ranked[: self.session_size]]
            sides = ["A" if rng.random() < 0.5 else "B" for _ in chosen]
            sess = Session(
                session_id=f"s{self._session_counter:06d}",
                rater_id=profile.rater_id,
                trial_list=list(zip(chosen, sides)),
            )
            self._append(
                {
                    "type": "session",
                    "session_id": sess.session_id,
                    "rater_id": sess.rater_id,
                    "trial_list": [list(t) for t in sess.trial_list],
                    "profile": asdict(profile),
                }
            )
            self._register_session(sess, profile)
            return sess

    def _get_session(self, session_id: str) -> Session:
        sess = self.sessions.get(session_id)
        if sess is None:
            raise DomainError(f"unknown session {session_id!r}")
        return sess

    def next_trial(self, session_id: str):
        """Current trial payload; idempotent until its judgment is submitted."""
        with self._lock:
            sess = self._get_session(session_id)
            if sess.status == "complete":
                raise DomainError(f"session {session_id} is complete")
            pair_id, presented_left = sess.trial_list[sess.cursor]
            pair = self.pairs[pair_id]
            left = pair.utt_a if presented_left == "A" else pair.utt_b
            right = pair.utt_b if presented_left == "A" else pair.utt_a
            return {
                "pair_id": pair_id,
                "left_audio": left,
                "right_audio": right,
                "trial_number": sess.cursor + 1,
                "session_size": len(sess.trial_list),
                "progress": f"{sess.cursor + 1} of {len(sess.trial_list)}",
            }

    def submit_judgment(self, session_id: str, pair_id: str, side_chosen: str) -> dict:
        with self._lock:
            sess = self._get_session(session_id)
            if sess.status == "complete":
                raise DomainError(f"session {session_id} is complete")
            if side_chosen not in ("left", "right"):
                raise ValidationError("side_chosen must be 'left' or 'right'")
            current_pair, presented_left = sess.trial_list[sess.cursor]
            if pair_id != current_pair:
                raise DomainError(
                    f"pair {pair_id!r} is not the current trial ({current_pair!r}); submission rejected"
                )
            other = "B" if presented_left == "A" else "A"
            choice = presented_left if side_chosen == "left" else other
            rec = JudgmentRecord(
                pair_id=pair_id,
                rater_id=sess.rater_id,
                choice=choice,
                session_id=session_id,
                presented_left=presented_left,
                timestamp=time.time(),
            )
            self._append({"type": "judgment", **rec.to_dict()})
            self._apply_judgment(rec, sess)
            return {"status": "ok", "choice": choice, "session_status": sess.status}

    def submit_description(self, session_id: str, text: str) -> dict:
        with self._lock:
            sess = self._get_session(session_id)
            if sess.status != "complete":
                raise DomainError("descriptions are collected after the session completes")
            if sess.has_description:
                raise DomainError(f"session {session_id} already has a description")
            rec = DescriptionRecord(
                session_id=session_id,
                rater_id=sess.rater_id,
                text=text,
                timestamp=time.time(),
            )
            self._append({"type": "description", **asdict(rec)})
            self.descriptions.append(rec)
            sess.has_description = True
            return {"status": "ok"}

    def export_judgments(self):
        """All judgments (analysis line format) plus a demographics summary."""
        with self._lock:
            judgments = list(self.judgments)
            summary = {
                "n_raters": len(self.profiles),
                "age": {band: 0 for band in AGE_BANDS},
                "gender": {g: 0 for g in GENDERS},
                "familiarity": {f: 0 for f in FAMILIARITY},
            }
            for prof in self.profiles.values():
                summary["age"][prof.age_band] += 1
                summary["gender"][prof.gender] += 1
                summary["familiarity"][prof.familiarity] += 1
            return judgments, summary
