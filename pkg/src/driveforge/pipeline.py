"""End-to-end dataset conversion.

Reads a QA annotation file (JSON array of scenes, each with keyframes,
six camera image paths, and QA lists), converts every center-point object
tag to a normalized composite-frame box, renders the labeled composite
per keyframe, and emits training-ready conversation records:

* ``records.jsonl``  -- one conversation record per QA pair, input order.
* ``images/*.png``   -- one composite per keyframe (plus previous-frame
  composites in temporal mode).
* ``manifest.json``  -- config snapshot, per-record statuses, counts.
* ``journal.jsonl``  -- internal completion log enabling ``--resume``.

Conversion is deterministic: the same inputs and config produce
byte-identical records and images for any worker count, because every
per-record step is pure and a single writer serializes output in input
order. Record paths inside ``records.jsonl`` are relative to the output
directory.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import dataclasses

from .boxer import (OVERSIZED_FRACTION, SidecarProvider, SyntheticProvider,
                    center_to_box)
from .cameras import Camera
from .compositor import ViewImage, compose, read_image, write_png
from .geometry import (DEFAULT_LAYOUT, CompositeLayout, NormBox, PxBox,
                       PxPoint, SourceDims, box_to_composite, normalize)
from .jsonstream import iter_json_array
from .tags import KeyObjectTag, TaggedText, parse_tags, rewrite_tags

log = logging.getLogger(__name__)

SYSTEM_PROMPT = (
    "You are an Autonomous Driving AI assistant. "
    "You receive an image that consists of six surrounding camera views. "
    "The layout is as follows:\n"
    "The first row contains three images: FRONT_LEFT, FRONT, FRONT_RIGHT.\n"
    "The second row contains three images: BACK_LEFT, BACK, BACK_RIGHT.\n"
    "Your task is to analyze these images and provide insights or actions "
    "based on the visual data."
)

IMAGE_PLACEHOLDER = "<image>"
TEMPORAL_USER_TEMPLATE = "previous images: <image1>, current images: <image2> {question}"

# Fine-tuning setup this dataset format targets; recorded in manifests as
# documentation only -- nothing here trains a model.
TRAINING_CONFIG = {
    "learning_rate": 2e-5,
    "epochs": 1,
    "batch_size": 1024,
    "parallelism": "deepspeed-zero3, full-parameter",
    "gpus": "64x A100",
}


class SchemaError(ValueError):
    """Input annotation file violates the documented schema."""

    def __init__(self, message: str, json_path: str):
        super().__init__(f"{message} at {json_path}")
        self.json_path = json_path


class StageError(RuntimeError):
    """A conversion stage failed for one record."""

    def __init__(self, stage: str, cause: Exception | str):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage


@dataclass(frozen=True)
class FrameRef:
    """Identity and image paths of one keyframe."""

    scene_id: str
    frame_id: str
    image_paths: dict[Camera, Path]


@dataclass(frozen=True)
class QARecord:
    """One question-answer pair, ready for conversion."""

    scene_id: str
    frame_id: str
    question: str
    answer: str
    qa_category: str
    image_paths: dict[Camera, Path]
    prev_frame_id: str | None = None
    prev_frame: FrameRef | None = None
    ordinal: int = 0  # position within the frame's category list

    @property
    def sample_id(self) -> str:
        return f"{self.scene_id}__{self.frame_id}__{self.qa_category}__{self.ordinal:03d}"


@dataclass(frozen=True)
class RecordError:
    """A per-record failure; the run continues past it."""

    sample_id: str
    scene_id: str
    frame_id: str
    stage: str
    message: str


@dataclass(frozen=True)
class ConversationRecord:
    """One training-ready sample."""

    sample_id: str
    composite_image: str            # relative to the output directory
    system_prompt: str
    user_text: str
    assistant_text: str
    temporal: bool
    prev_composite_image: str | None
    box_flags: dict[str, list[str]]
    provenance: dict[str, str]

    def to_json_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "composite_image": self.composite_image,
            "system_prompt": self.system_prompt,
            "user_text": self.user_text,
            "assistant_text": self.assistant_text,
            "temporal": self.temporal,
            "prev_composite_image": self.prev_composite_image,
            "box_flags": {k: self.box_flags[k] for k in sorted(self.box_flags)},
            "provenance": self.provenance,
        }


def _require(obj, key: str, json_path: str, kind=None):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"missing required field {key!r}", json_path)
    value = obj[key]
    if kind is not None and not isinstance(value, kind):
        raise SchemaError(
            f"field {key!r} must be {kind.__name__}, got {type(value).__name__}",
            f"{json_path}.{key}")
    return value


def ingest(qa_json: str | Path, image_root: str | Path) -> Iterator[QARecord | RecordError]:
    """Stream QA records from an annotation file in file order.

    Image paths are resolved against ``image_root``. A keyframe whose
    image files are missing on disk yields one :class:`RecordError` per
    QA pair and the stream continues; structural problems (missing
    fields, wrong types) raise :class:`SchemaError` naming the JSON path.
    """
    image_root = Path(image_root)
    for si, scene in enumerate(iter_json_array(qa_json)):
        spath = f"$[{si}]"
        scene_id = _require(scene, "scene_id", spath, str)
        frames = _require(scene, "key_frames", spath, list)

        refs: dict[str, FrameRef] = {}
        for fi, frame in enumerate(frames):
            fpath = f"{spath}.key_frames[{fi}]"
            frame_id = _require(frame, "frame_id", fpath, str)
            raw_paths = _require(frame, "image_paths", fpath, dict)
            paths = {}
            for cam in Camera:
                if cam.value not in raw_paths:
                    raise SchemaError(f"missing camera {cam.value!r}",
                                      f"{fpath}.image_paths")
                paths[cam] = image_root / raw_paths[cam.value]
            refs[frame_id] = FrameRef(scene_id, frame_id, paths)

        for fi, frame in enumerate(frames):
            fpath = f"{spath}.key_frames[{fi}]"
            frame_id = frame["frame_id"]
            ref = refs[frame_id]
            prev_frame_id = frame.get("prev_frame_id")
            if prev_frame_id is not None and not isinstance(prev_frame_id, str):
                raise SchemaError("field 'prev_frame_id' must be str",
                                  f"{fpath}.prev_frame_id")
            prev_ref = refs.get(prev_frame_id) if prev_frame_id else None
            missing = sorted(c.value for c, p in ref.image_paths.items()
                             if not p.is_file())

            qa_groups = _require(frame, "QA", fpath, dict)
            for category, qa_list in qa_groups.items():
                if not isinstance(qa_list, list):
                    raise SchemaError(f"QA group {category!r} must be a list",
                                      f"{fpath}.QA.{category}")
                for qi, qa in enumerate(qa_list):
                    qpath = f"{fpath}.QA.{category}[{qi}]"
                    question = _require(qa, "question", qpath, str)
                    answer = _require(qa, "answer", qpath, str)
                    rec = QARecord(
                        scene_id=scene_id, frame_id=frame_id,
                        question=question, answer=answer,
                        qa_category=category, image_paths=ref.image_paths,
                        prev_frame_id=prev_frame_id, prev_frame=prev_ref,
                        ordinal=qi,
                    )
                    if missing:
                        yield RecordError(
                            sample_id=rec.sample_id, scene_id=scene_id,
                            frame_id=frame_id, stage="ingest",
                            message="missing image file(s): " + ", ".join(missing))
                    else:
                        yield rec


def _atomic_write_png(path: Path, pixels) -> None:
    tmp = path.with_name(f"{path.name}.tmp.{os.getpid()}.{threading.get_ident()}")
    write_png(tmp, pixels)
    os.replace(tmp, path)


def _composite_name(scene_id: str, frame_id: str) -> str:
    return f"{scene_id}__{frame_id}.png"


class _ViewCache:
    """Lazily loads each camera image of one frame at most once."""

    def __init__(self, image_paths: dict[Camera, Path]):
        self.paths = image_paths
        self._arrays: dict[Camera, object] = {}

    def pixels(self, camera: Camera):
        if camera not in self._arrays:
            try:
                self._arrays[camera] = read_image(self.paths[camera])
            except OSError as e:
                raise StageError("load", f"cannot read {self.paths[camera]}: {e}") from e
        return self._arrays[camera]

    def dims(self, camera: Camera) -> SourceDims:
        arr = self.pixels(camera)
        return SourceDims(camera, arr.shape[1], arr.shape[0])


def _box_object_tags(q_tagged: TaggedText, a_tagged: TaggedText,
                     views: _ViewCache, image_paths: dict[Camera, Path],
                     provider, layout: CompositeLayout,
                     oversized_fraction: float,
                     ) -> tuple[dict[str, KeyObjectTag], dict[str, list[str]]]:
    """Resolve every tagged object to a normalized composite box.

    Each object id is converted once, even when it appears in both the
    question and the answer, so both texts carry identical boxes.
    """
    mapping: dict[str, KeyObjectTag] = {}
    flags_by_id: dict[str, list[str]] = {}
    for tag in (*q_tagged.tags, *a_tagged.tags):
        if tag.object_id in mapping:
            continue
        if isinstance(tag.geometry, NormBox):
            mapping[tag.object_id] = tag
            flags_by_id[tag.object_id] = []
            continue
        dims = views.dims(tag.camera)
        if isinstance(tag.geometry, PxPoint):
            try:
                result = center_to_box(
                    tag.geometry, tag.camera, str(image_paths[tag.camera]),
                    provider, view_area=dims.width * dims.height,
                    oversized_fraction=oversized_fraction)
            except Exception as e:
                raise StageError("box", f"object {tag.object_id}: {e}") from e
            px_box = result.bbox
            flags = sorted(result.flags)
        else:  # PxBox straight from the text; no provider involved
            px_box = tag.geometry
            flags = []
        comp_box = box_to_composite(px_box, dims, layout)
        nbox = normalize(comp_box, layout)
        mapping[tag.object_id] = KeyObjectTag(tag.object_id, tag.camera, nbox)
        flags_by_id[tag.object_id] = flags
    return mapping, flags_by_id


def _render_frame(views: _ViewCache, layout: CompositeLayout,
                  images_dir: Path, name: str) -> None:
    view_images = [ViewImage(cam, views.pixels(cam)) for cam in Camera]
    comp = compose(view_images, layout)
    images_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write_png(images_dir / name, comp.pixels)


def _convert_impl(rec: QARecord, provider, layout: CompositeLayout,
                  images_dir: Path, render: bool, oversized_fraction: float,
                  prev: FrameRef | None, render_prev: bool,
                  system_prompt: str) -> ConversationRecord:
    try:
        q_tagged = parse_tags(rec.question)
        a_tagged = parse_tags(rec.answer)
    except Exception as e:
        raise StageError("parse", e) from e

    views = _ViewCache(rec.image_paths)
    mapping, flags_by_id = _box_object_tags(
        q_tagged, a_tagged, views, rec.image_paths, provider, layout,
        oversized_fraction)

    try:
        new_q = rewrite_tags(q_tagged, mapping)
        new_a = rewrite_tags(a_tagged, mapping)
    except Exception as e:
        raise StageError("rewrite", e) from e

    name = _composite_name(rec.scene_id, rec.frame_id)
    try:
        if render:
            _render_frame(views, layout, images_dir, name)
    except StageError:
        raise
    except Exception as e:
        raise StageError("compose", e) from e

    prev_image = None
    if prev is not None:
        prev_name = _composite_name(prev.scene_id, prev.frame_id)
        try:
            if render_prev:
                _render_frame(_ViewCache(prev.image_paths), layout,
                              images_dir, prev_name)
        except StageError:
            raise
        except Exception as e:
            raise StageError("compose", e) from e
        prev_image = f"images/{prev_name}"
        user_text = TEMPORAL_USER_TEMPLATE.format(question=new_q)
    else:
        user_text = f"{IMAGE_PLACEHOLDER}\n{new_q}"

    return ConversationRecord(
        sample_id=rec.sample_id,
        composite_image=f"images/{name}",
        system_prompt=system_prompt,
        user_text=user_text,
        assistant_text=new_a,
        temporal=prev is not None,
        prev_composite_image=prev_image,
        box_flags=flags_by_id,
        provenance={"scene_id": rec.scene_id, "frame_id": rec.frame_id},
    )


def convert(rec: QARecord, provider, layout: CompositeLayout = DEFAULT_LAYOUT,
            images_dir: str | Path = "images", render: bool = True,
            oversized_fraction: float = OVERSIZED_FRACTION,
            system_prompt: str = SYSTEM_PROMPT) -> ConversationRecord:
    """Convert one QA record: box every tag, rewrite texts, render the frame.

    On any stage failure a :class:`StageError` is raised and no composite
    is left behind (image writes are atomic).
    """
    return _convert_impl(rec, provider, layout, Path(images_dir), render,
                         oversized_fraction, prev=None, render_prev=False,
                         system_prompt=system_prompt)


def convert_temporal(rec: QARecord, prev: FrameRef, provider,
                     layout: CompositeLayout = DEFAULT_LAYOUT,
                     images_dir: str | Path = "images", render: bool = True,
                     render_prev: bool = True,
                     oversized_fraction: float = OVERSIZED_FRACTION,
                     system_prompt: str = SYSTEM_PROMPT) -> ConversationRecord:
    """Temporal variant of :func:`convert` pairing the previous keyframe.

    The user text becomes ``previous images: <image1>, current images:
    <image2> {question}``; answer tags stay in the current composite's
    coordinate frame.
    """
    if prev is None or prev.frame_id != rec.prev_frame_id:
        raise StageError("temporal",
                         f"record {rec.sample_id} is not linked to frame "
                         f"{getattr(prev, 'frame_id', None)!r}")
    return _convert_impl(rec, provider, layout, Path(images_dir), render,
                         oversized_fraction, prev=prev, render_prev=render_prev,
                         system_prompt=system_prompt)


def to_inline_box_style(text: str) -> str:
    """Rewrite normalized tags to the inline style ``<ref>id</ref><box>[[...]]</box>``."""
    tagged = parse_tags(text)
    parts = []
    cursor = 0
    for tag in tagged.tags:
        start, end = tag.span
        parts.append(text[cursor:start])
        g = tag.geometry
        if isinstance(g, NormBox):
            parts.append(f"<ref>{tag.object_id}</ref>"
                         f"<box>[[{g.x1},{g.y1},{g.x2},{g.y2}]]</box>")
        else:
            parts.append(text[start:end])
        cursor = end
    parts.append(text[cursor:])
    return "".join(parts)


# ---------------------------------------------------------------------------
# Batch runner


@dataclass
class RunConfig:
    qa_json: Path
    image_root: Path
    out_dir: Path
    backend: str = "synthetic"            # "synthetic" | "sidecar"
    sidecar_cmd: str | None = None
    workers: int = 1
    seed: int = 0
    temporal: bool = False
    resume: bool = False
    style: str = "tags"                   # "tags" | "inline-box"
    oversized_fraction: float = OVERSIZED_FRACTION
    system_prompt: str = SYSTEM_PROMPT
    layout: CompositeLayout = field(default_factory=lambda: DEFAULT_LAYOUT)
    sidecar_timeout: float = 60.0
    provider_factory: Callable[[], object] | None = None  # test hook

    def semantic_config(self) -> dict:
        """The part of the config that determines output bytes."""
        return {
            "backend": self.backend,
            "sidecar_cmd": self.sidecar_cmd,
            "seed": self.seed,
            "temporal": self.temporal,
            "style": self.style,
            "oversized_fraction": self.oversized_fraction,
            "system_prompt": self.system_prompt,
            "layout": self.layout.snapshot(),
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic_config(), sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class RunManifest:
    config: dict
    counts: dict
    records: list[dict]
    training_config: dict
    run_stats: dict

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "training_config": self.training_config,
            "counts": self.counts,
            "records": self.records,
            # run_stats (timing, workers, resume counts) is execution
            # metadata and excluded from determinism comparisons
            "run_stats": self.run_stats,
        }


def _sha256_file(path: Path) -> tuple[int, str]:
    h = hashlib.sha256()
    size = 0
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
            size += len(chunk)
    return size, h.hexdigest()


def _sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _verify_journal(out_dir: Path, expected_hash: str) -> tuple[list[dict], list[str]]:
    """Load the completion journal and keep the verified prefix.

    Returns (journal entries, ok record lines). An entry survives only if
    its images exist with the recorded size and checksum and its record
    line in records.jsonl matches the recorded hash.
    """
    journal_path = out_dir / "journal.jsonl"
    records_path = out_dir / "records.jsonl"
    if not journal_path.is_file():
        return [], []

    record_lines: list[str] = []
    if records_path.is_file():
        with open(records_path, "r", encoding="utf-8") as f:
            record_lines = [ln for ln in f.read().split("\n") if ln]

    entries: list[dict] = []
    ok_lines: list[str] = []
    with open(journal_path, "r", encoding="utf-8") as f:
        raw_lines = f.read().split("\n")
    if not raw_lines:
        return [], []
    try:
        header = json.loads(raw_lines[0])
    except json.JSONDecodeError:
        return [], []
    if header.get("config_hash") != expected_hash:
        log.warning("resume: config changed; restarting from scratch")
        return [], []

    next_index = 0
    for raw in raw_lines[1:]:
        if not raw:
            continue
        try:
            entry = json.loads(raw)
        except json.JSONDecodeError:
            break  # truncated tail from an interrupted run
        if entry.get("index") != next_index:
            break
        if entry.get("status") == "ok":
            ok = True
            for rel, meta in entry.get("images", {}).items():
                p = out_dir / rel
                if not p.is_file():
                    ok = False
                    break
                size, digest = _sha256_file(p)
                if size != meta.get("bytes") or digest != meta.get("sha256"):
                    ok = False
                    break
            line_idx = len(ok_lines)
            if ok and (line_idx >= len(record_lines)
                       or _sha256_text(record_lines[line_idx]) != entry.get("line_sha256")):
                ok = False
            if not ok:
                break
            ok_lines.append(record_lines[line_idx])
        entries.append(entry)
        next_index += 1
    return entries, ok_lines


class _WorkerProviders:
    """One provider per worker thread, created lazily, closed at the end."""

    def __init__(self, factory: Callable[[], object]):
        self._factory = factory
        self._local = threading.local()
        self._all: list[object] = []
        self._lock = threading.Lock()

    def get(self):
        provider = getattr(self._local, "provider", None)
        if provider is None:
            provider = self._factory()
            self._local.provider = provider
            with self._lock:
                self._all.append(provider)
        return provider

    def close_all(self):
        with self._lock:
            providers, self._all = self._all, []
        for p in providers:
            close = getattr(p, "close", None)
            if close:
                try:
                    close()
                except Exception:
                    log.exception("provider close failed")


def _make_provider_factory(config: RunConfig) -> Callable[[], object]:
    if config.provider_factory is not None:
        return config.provider_factory
    if config.backend == "synthetic":
        return lambda: SyntheticProvider(want_rle=False)
    if config.backend == "sidecar":
        cmd = config.sidecar_cmd or os.environ.get("DRIVEFORGE_SIDECAR_CMD")
        if not cmd:
            raise ValueError("sidecar backend needs --sidecar-cmd or "
                             "DRIVEFORGE_SIDECAR_CMD")
        return lambda: SidecarProvider(cmd, timeout=config.sidecar_timeout)
    raise ValueError(f"unknown backend {config.backend!r}")


def run(config: RunConfig) -> RunManifest:
    """Convert a whole annotation file with ``config.workers`` workers.

    Per-record failures are recorded in the manifest and do not stop the
    run. Output order always equals input order. With ``resume=True``,
    records whose outputs already exist and verify by size and checksum
    are not recomputed.
    """
    out_dir = Path(config.out_dir)
    images_dir = out_dir / "images"
    out_dir.mkdir(parents=True, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise PermissionError(f"output directory {out_dir} is not writable")

    config_hash = config.config_hash()
    entries: list[dict] = []
    ok_lines: list[str] = []
    if config.resume:
        entries, ok_lines = _verify_journal(out_dir, config_hash)
    resumed = len(entries)

    records_path = out_dir / "records.jsonl"
    journal_path = out_dir / "journal.jsonl"

    # Rewrite both files down to the verified prefix, then append.
    with open(records_path, "w", encoding="utf-8") as f:
        for line in ok_lines:
            f.write(line + "\n")
    with open(journal_path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"config_hash": config_hash}) + "\n")
        for entry in entries:
            f.write(json.dumps(entry, sort_keys=True) + "\n")

    frames_done: set[str] = set()
    for entry in entries:
        frames_done.update(entry.get("images", {}).keys())

    providers = _WorkerProviders(_make_provider_factory(config))
    statuses: list[dict] = [
        {"sample_id": e.get("sample_id", ""), "status": e["status"],
         **({"stage": e["stage"], "message": e["message"]}
            if e["status"] == "error" else {})}
        for e in entries
    ]

    def work(item: QARecord) -> tuple[str, object]:
        provider = providers.get()
        frame_rel = f"images/{_composite_name(item.scene_id, item.frame_id)}"
        render = frame_rel not in frames_done
        prev = item.prev_frame if config.temporal else None
        render_prev = False
        prev_rel = None
        if config.temporal and item.prev_frame_id:
            if prev is None:
                return ("error", ("temporal",
                                  f"unknown prev_frame_id {item.prev_frame_id!r}"))
            prev_rel = f"images/{_composite_name(prev.scene_id, prev.frame_id)}"
            render_prev = prev_rel not in frames_done
        try:
            if prev is not None:
                record = convert_temporal(
                    item, prev, provider, config.layout, images_dir,
                    render=render, render_prev=render_prev,
                    oversized_fraction=config.oversized_fraction,
                    system_prompt=config.system_prompt)
            else:
                record = convert(
                    item, provider, config.layout, images_dir, render=render,
                    oversized_fraction=config.oversized_fraction,
                    system_prompt=config.system_prompt)
        except StageError as e:
            return ("error", (e.stage, str(e)))
        except Exception as e:
            return ("error", ("convert", f"{type(e).__name__}: {e}"))
        frames_done.add(frame_rel)
        if prev_rel:
            frames_done.add(prev_rel)
        return ("ok", record)

    import datetime

    n_ok = sum(1 for s in statuses if s["status"] == "ok")
    n_err = len(statuses) - n_ok
    index = len(entries)

    records_f = open(records_path, "a", encoding="utf-8")
    journal_f = open(journal_path, "a", encoding="utf-8")
    pool = ThreadPoolExecutor(max_workers=max(1, config.workers))

    def emit(outcome: str, payload, item_meta: tuple[str, str, str]):
        nonlocal index, n_ok, n_err
        sample_id, scene_id, frame_id = item_meta
        if outcome == "ok":
            record: ConversationRecord = payload
            if config.style == "inline-box":
                record = dataclasses.replace(
                    record,
                    user_text=to_inline_box_style(record.user_text),
                    assistant_text=to_inline_box_style(record.assistant_text))
            line = json.dumps(record.to_json_dict(), ensure_ascii=False,
                              separators=(",", ":"))
            images = {}
            for rel in filter(None, [record.composite_image,
                                     record.prev_composite_image]):
                size, digest = _sha256_file(out_dir / rel)
                images[rel] = {"bytes": size, "sha256": digest}
            records_f.write(line + "\n")
            records_f.flush()
            entry = {"index": index, "sample_id": sample_id, "status": "ok",
                     "line_sha256": _sha256_text(line), "images": images}
            statuses.append({"sample_id": sample_id, "status": "ok"})
            n_ok += 1
        else:
            stage, message = payload
            entry = {"index": index, "sample_id": sample_id, "status": "error",
                     "stage": stage, "message": message}
            statuses.append({"sample_id": sample_id, "status": "error",
                             "stage": stage, "message": message})
            n_err += 1
            log.warning("record %s failed at %s: %s", sample_id, stage, message)
        journal_f.write(json.dumps(entry, sort_keys=True) + "\n")
        journal_f.flush()
        index += 1

    window = max(2 * config.workers, 4)
    pending: deque = deque()

    def drain(block_all: bool):
        while pending and (block_all or len(pending) >= window):
            kind, meta, payload = pending.popleft()
            if kind == "future":
                outcome, result = payload.result()
            else:
                outcome, result = payload
            emit(outcome, result, meta)

    try:
        stream = ingest(config.qa_json, config.image_root)
        position = 0
        for item in stream:
            if position < resumed:
                position += 1
                continue  # already journaled in a previous run
            position += 1
            if isinstance(item, RecordError):
                pending.append(("direct", (item.sample_id, item.scene_id, item.frame_id),
                                ("error", (item.stage, item.message))))
            else:
                meta = (item.sample_id, item.scene_id, item.frame_id)
                pending.append(("future", meta, pool.submit(work, item)))
            drain(block_all=False)
        drain(block_all=True)
    finally:
        pool.shutdown(wait=True, cancel_futures=True)
        providers.close_all()
        records_f.close()
        journal_f.close()

    manifest = RunManifest(
        config={**config.semantic_config(), "config_hash": config_hash},
        counts={"total": len(statuses), "ok": n_ok, "error": n_err},
        records=statuses,
        training_config=dict(TRAINING_CONFIG),
        run_stats={
            "workers": config.workers,
            "resumed": resumed,
            "generated_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        },
    )
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest.to_json_dict(), f, indent=2, ensure_ascii=False)
        f.write("\n")
    return manifest
