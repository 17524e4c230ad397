"""Staged SFT dataset export and whole-corpus builds.

Output tree for one build::

    <out>/<corpus_id>/
        images/<diagram_id>.svg
        captions/<diagram_id>.txt
        mermaid/<diagram_id>.mmd
        diagrams.jsonl        one line per diagram (split, kind, seed, paths)
        stage1.jsonl stage2.jsonl stage3.jsonl
        questions.jsonl answer_key.json
        manifest.json

Seed streams: every split draws diagram seeds from its own stream
``derive_seed(base_seed, stream)``, so the splits never share a seed
sequence and adding diagrams to one split leaves the others untouched.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

from . import __version__
from .captions import ICT_DEFAULT, STYLES, CaptionStyle, caption
from .core import DiagramAst, DiagramKind
from .mermaid import serialize
from .render import RenderConfig, render
from .rng import derive_seed
from .synth import ConfigError, CorpusEntry, GenConfig, gen_config_from_mapping, generate_corpus
from .vqa import AnswerKey, QaItem, build_eval_set, write_questions

log = logging.getLogger(__name__)

PARSE_PROMPT = (
    "Read the diagram in the image and write its content as numbered steps in the expert "
    "caption style: follow the arrows from start to end, quote every label exactly as it is "
    "written, and state where each branch or message goes."
)

STREAM_STAGE1 = 1
STREAM_STAGE2 = 2
STREAM_STAGE3 = 3
STREAM_EVAL = 4
STREAM_EVAL_QUESTIONS = 5


class Stage(Enum):
    PRE_SFT = 1
    POST_SFT = 2
    INSTRUCTION_SFT = 3

    @property
    def filename(self) -> str:
        return f"stage{self.value}.jsonl"


class ExportError(RuntimeError):
    pass


@dataclass(frozen=True)
class SftRecord:
    record_id: str
    stage: Stage
    image_path: str  # relative to the corpus directory
    prompt: str
    target: str

    def to_json(self) -> dict:
        return {"record_id": self.record_id, "image": self.image_path, "prompt": self.prompt, "target": self.target}


@dataclass(frozen=True)
class StageFragment:
    stage: Stage
    file: str
    records: int
    sha256: str


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def export_stage(records: list[SftRecord], out_dir: str | Path, stage: Stage | None = None) -> StageFragment:
    """Write one ``stageN.jsonl`` file, sorted by record id.

    ``stage`` is only needed for an empty record list.
    """
    out_dir = Path(out_dir)
    stages = {r.stage for r in records}
    if len(stages) > 1:
        raise ExportError(f"records mix stages {sorted(s.name for s in stages)}")
    if stages:
        (only,) = stages
        if stage is not None and stage is not only:
            raise ExportError(f"records are {only.name}, asked to export {stage.name}")
        stage = only
    if stage is None:
        raise ExportError("cannot infer the stage of an empty record list")
    seen: set[str] = set()
    for r in records:
        if r.record_id in seen:
            raise ExportError(f"duplicate record id {r.record_id}")
        seen.add(r.record_id)
        if not (out_dir / r.image_path).is_file():
            raise ExportError(f"record {r.record_id}: image {r.image_path} does not exist under {out_dir}")
    lines = [json.dumps(r.to_json(), ensure_ascii=False, sort_keys=True) + "\n"
             for r in sorted(records, key=lambda r: r.record_id)]
    data = "".join(lines).encode("utf-8")
    (out_dir / stage.filename).write_bytes(data)
    return StageFragment(stage, stage.filename, len(lines), _sha256(data))


@dataclass(frozen=True)
class BuildConfig:
    corpus_id: str = "desk"
    base_seed: int = 0
    stage1_flowcharts: int = 22
    stage1_sequences: int = 28
    stage2_diagrams: int = 20
    stage3_questions: int = 30
    eval_flowcharts: int = 50
    eval_sequences: int = 50
    eval_single: int = 200
    eval_multi: int = 100
    caption_style: str = ICT_DEFAULT.id
    generator: GenConfig = field(default_factory=GenConfig)
    render: RenderConfig = field(default_factory=RenderConfig)

    @property
    def stage1_total(self) -> int:
        return self.stage1_flowcharts + self.stage1_sequences

    def stage2_split(self) -> tuple[int, int]:
        fc = self.stage2_diagrams // 2
        return fc, self.stage2_diagrams - fc

    def stage3_split(self) -> tuple[int, int]:
        single = math.ceil(2 * self.stage3_questions / 3)
        return single, self.stage3_questions - single

    def check(self) -> None:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, int) and value < 0:
                raise ConfigError(f"{f.name}: must be >= 0, got {value}")
        if not self.corpus_id or any(c in self.corpus_id for c in "/\\") or self.corpus_id.startswith("."):
            raise ConfigError(f"corpus_id: {self.corpus_id!r} is not a plain directory name")
        if self.caption_style not in STYLES:
            raise ConfigError(f"caption_style: unknown style {self.caption_style!r}")
        if self.stage3_questions and not self.stage2_diagrams:
            raise ConfigError("stage3_questions: needs stage2_diagrams > 0 to draw images from")
        self.generator.check()
        for kind in DiagramKind:
            dataclasses.replace(self.generator, kind=kind).check()


_CORPUS_INT_KEYS = (
    "base_seed", "stage1_flowcharts", "stage1_sequences", "stage2_diagrams", "stage3_questions",
    "eval_flowcharts", "eval_sequences", "eval_single", "eval_multi",
)


def build_config_from_ini(text: str, source: str = "<config>") -> BuildConfig:
    """Parse a ``[corpus]`` + optional ``[generator]`` INI document."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    unknown_sections = set(parser.sections()) - {"corpus", "generator"}
    if unknown_sections:
        raise ConfigError(f"{source}: unknown section(s) {sorted(unknown_sections)}")
    updates: dict = {}
    if parser.has_section("corpus"):
        for key, value in parser.items("corpus"):
            if key in _CORPUS_INT_KEYS:
                try:
                    updates[key] = int(value, 0)
                except ValueError:
                    raise ConfigError(f"{source}: [corpus] {key}: expected an integer, got {value!r}") from None
            elif key in ("corpus_id", "caption_style"):
                updates[key] = value.strip()
            else:
                raise ConfigError(f"{source}: unknown [corpus] key {key!r}")
    if parser.has_section("generator"):
        try:
            updates["generator"] = gen_config_from_mapping(dict(parser.items("generator")))
        except ConfigError as exc:
            raise ConfigError(f"{source}: [generator] {exc}") from None
    cfg = BuildConfig(**updates)
    try:
        cfg.check()
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def load_build_config(path: str | Path) -> BuildConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from None
    return build_config_from_ini(text, str(path))


@dataclass(frozen=True)
class CorpusManifest:
    corpus_id: str
    base_seed: int
    tool_version: str
    stages: dict[str, dict]
    kinds: dict[str, dict[str, int]]
    eval: dict[str, int]
    record_id_checksum: str
    config: dict

    def stage_totals(self) -> tuple[int, int, int]:
        return tuple(self.stages[f"stage{i}"]["records"] for i in (1, 2, 3))

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def load(cls, path: str | Path) -> "CorpusManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**{f.name: data[f.name] for f in dataclasses.fields(cls)})


def _config_json(cfg: BuildConfig) -> dict:
    def plain(value):
        if isinstance(value, Enum):
            return value.value
        if isinstance(value, tuple):
            return list(value)
        return value
    g = {f.name: plain(getattr(cfg.generator, f.name)) for f in dataclasses.fields(cfg.generator)
         if f.name not in ("seed", "kind")}
    r = {f.name: plain(getattr(cfg.render, f.name)) for f in dataclasses.fields(cfg.render)}
    top = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg) if f.name not in ("generator", "render")}
    return {**top, "generator": g, "render": r}


class _Writer:
    """Writes per-diagram artifacts and remembers them for diagrams.jsonl."""

    def __init__(self, root: Path, style: CaptionStyle, render_cfg: RenderConfig):
        self.root = root
        self.style = style
        self.render_cfg = render_cfg
        self.captions: dict[str, str] = {}
        self.rows: list[dict] = []
        for sub in ("images", "captions", "mermaid"):
            (root / sub).mkdir(parents=True, exist_ok=True)

    def add(self, ast: DiagramAst, entry: CorpusEntry, split: str) -> str:
        did = ast.diagram_id
        text = caption(ast, self.style).full_text
        image = f"images/{did}.svg"
        _write_text(self.root / image, render(ast, self.render_cfg))
        _write_text(self.root / f"captions/{did}.txt", text + "\n")
        _write_text(self.root / f"mermaid/{did}.mmd", serialize(ast))
        self.captions[did] = text
        self.rows.append({
            "diagram_id": did, "split": split, "kind": entry.kind.value, "seed": entry.seed,
            "image": image, "caption": f"captions/{did}.txt", "mermaid": f"mermaid/{did}.mmd",
        })
        return image


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _split(template: GenConfig, base_seed: int, stream: int, n_fc: int, n_sq: int, prefix: str):
    stream_template = dataclasses.replace(template, seed=derive_seed(base_seed, stream))
    return generate_corpus(stream_template, n_fc, n_sq, id_prefix=prefix)


def _qa_target(item: QaItem) -> str:
    return "Answer: " + ", ".join(sorted(item.correct))


def build_all(cfg: BuildConfig, out_dir: str | Path) -> CorpusManifest:
    """Generate, render, caption, key and export a full corpus under ``out_dir/<corpus_id>``."""
    cfg.check()
    root = Path(out_dir) / cfg.corpus_id
    if root.exists() and any(root.iterdir()):
        raise ExportError(f"{root} already exists and is not empty; remove it or pick another output directory")
    root.mkdir(parents=True, exist_ok=True)
    writer = _Writer(root, STYLES[cfg.caption_style], cfg.render)
    kinds: dict[str, dict[str, int]] = {}

    def emit(split: str, asts: list[DiagramAst], entries: list[CorpusEntry]) -> list[tuple[DiagramAst, str]]:
        kinds[split] = {k.value: sum(1 for e in entries if e.kind is k) for k in DiagramKind}
        return [(ast, writer.add(ast, e, split)) for ast, e in zip(asts, entries)]

    log.info("stage 1: %d diagrams", cfg.stage1_total)
    s1 = emit("stage1", *_split(cfg.generator, cfg.base_seed, STREAM_STAGE1,
                                cfg.stage1_flowcharts, cfg.stage1_sequences, "s1"))
    rec1 = [SftRecord(a.diagram_id, Stage.PRE_SFT, img, PARSE_PROMPT, writer.captions[a.diagram_id]) for a, img in s1]

    log.info("stage 2: %d diagrams", cfg.stage2_diagrams)
    s2 = emit("stage2", *_split(cfg.generator, cfg.base_seed, STREAM_STAGE2, *cfg.stage2_split(), "s2"))
    rec2 = [SftRecord(a.diagram_id, Stage.POST_SFT, img, PARSE_PROMPT, writer.captions[a.diagram_id]) for a, img in s2]

    log.info("stage 3: %d questions", cfg.stage3_questions)
    rec3: list[SftRecord] = []
    if cfg.stage3_questions:
        n_single, n_multi = cfg.stage3_split()
        images = {a.diagram_id: img for a, img in s2}
        items, _ = build_eval_set([a for a, _ in s2], derive_seed(cfg.base_seed, STREAM_STAGE3), n_single, n_multi)
        rec3 = [SftRecord(it.item_id, Stage.INSTRUCTION_SFT, images[it.diagram_id], it.prompt(), _qa_target(it))
                for it in items]

    log.info("eval split: %d diagrams, %d+%d questions",
             cfg.eval_flowcharts + cfg.eval_sequences, cfg.eval_single, cfg.eval_multi)
    ev = emit("eval", *_split(cfg.generator, cfg.base_seed, STREAM_EVAL,
                              cfg.eval_flowcharts, cfg.eval_sequences, "ev"))
    ev_items: list[QaItem] = []
    if cfg.eval_single or cfg.eval_multi:
        ev_items, key = build_eval_set([a for a, _ in ev], derive_seed(cfg.base_seed, STREAM_EVAL_QUESTIONS),
                                       cfg.eval_single, cfg.eval_multi)
    else:
        key = AnswerKey()
    write_questions(ev_items, root / "questions.jsonl")
    key.save(root / "answer_key.json")

    frags = [export_stage(rec1, root, Stage.PRE_SFT), export_stage(rec2, root, Stage.POST_SFT),
             export_stage(rec3, root, Stage.INSTRUCTION_SFT)]
    all_ids = [r.record_id for recs in (rec1, rec2, rec3) for r in sorted(recs, key=lambda r: r.record_id)]
    if len(set(all_ids)) != len(all_ids):
        raise ExportError("record ids collide across stages")

    _write_text(root / "diagrams.jsonl",
                "".join(json.dumps(row, sort_keys=True) + "\n" for row in writer.rows))
    provenance = {1: "synthetic", 2: "synthetic-surrogate", 3: "synthetic-vqa"}
    manifest = CorpusManifest(
        corpus_id=cfg.corpus_id,
        base_seed=cfg.base_seed,
        tool_version=__version__,
        stages={f"stage{f.stage.value}": {"file": f.file, "records": f.records, "sha256": f.sha256,
                                          "provenance": provenance[f.stage.value]} for f in frags},
        kinds=kinds,
        eval={"diagrams": len(ev), "single": key.total_single, "multi": key.total_multi,
              "questions_sha256": _sha256((root / "questions.jsonl").read_bytes()),
              "answer_key_sha256": _sha256((root / "answer_key.json").read_bytes())},
        record_id_checksum=_sha256("\n".join(all_ids).encode("utf-8")),
        config=_config_json(cfg),
    )
    _write_text(root / "manifest.json", manifest.dumps())
    return manifest


def iter_diagram_rows(corpus_dir: str | Path, split: str | None = None) -> Iterable[dict]:
    with open(Path(corpus_dir) / "diagrams.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                if split is None or row["split"] == split:
                    yield row


def read_stage(corpus_dir: str | Path, stage: Stage) -> list[dict]:
    with open(Path(corpus_dir) / stage.filename, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]

