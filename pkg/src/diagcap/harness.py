"""Querying a model over a built corpus, persisting runs, and scoring them.

A run directory holds ``responses.jsonl`` (append-only, one line per finished
item, written by a single thread) and ``run.json`` (the assembled
:class:`RunRecord`).  Scoring reads only files, never the network.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

from .client import ChatClient, EndpointConfig, QueryTask, run_queries
from .core import validate
from .export import PARSE_PROMPT, CorpusManifest, Stage, iter_diagram_rows
from .mermaid import MermaidParseError, parse
from .metrics import AccuracyReport, CorpusScores, IdMismatchError, score_answers, score_corpus
from .vqa import AnswerKey, read_questions

log = logging.getLogger(__name__)

RESPONSES_FILE = "responses.jsonl"
RUN_FILE = "run.json"


class Task(Enum):
    CAPTION = "caption"
    VQA = "vqa"

    @property
    def id_field(self) -> str:
        return "diagram_id" if self is Task.CAPTION else "item_id"

    @property
    def text_field(self) -> str:
        return "caption_text" if self is Task.CAPTION else "response_text"


class HarnessError(RuntimeError):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def corpus_tasks(corpus_dir: str | Path, task: Task) -> list[QueryTask]:
    """Evaluation items of a corpus, ordered by id; a PNG next to an SVG is preferred."""
    corpus_dir = Path(corpus_dir)
    if not (corpus_dir / "manifest.json").is_file():
        raise HarnessError(f"{corpus_dir} is not a built corpus (no manifest.json)")

    def image(diagram_id: str) -> Path:
        png = corpus_dir / "images" / f"{diagram_id}.png"
        return png if png.is_file() else corpus_dir / "images" / f"{diagram_id}.svg"

    if task is Task.CAPTION:
        tasks = [QueryTask(r["diagram_id"], PARSE_PROMPT, image(r["diagram_id"]))
                 for r in iter_diagram_rows(corpus_dir, "eval")]
    else:
        tasks = [QueryTask(it.item_id, it.prompt(), image(it.diagram_id))
                 for it in read_questions(corpus_dir / "questions.jsonl")]
    return sorted(tasks, key=lambda t: t.item_id)


@dataclass
class RunRecord:
    run_id: str
    corpus_id: str
    task: Task
    model_name: str
    started: str
    finished: str | None = None
    responses: dict[str, dict] = field(default_factory=dict)
    report: dict | None = None

    @property
    def failed(self) -> list[str]:
        return sorted(k for k, v in self.responses.items() if v["status"] != "ok")

    def texts(self) -> dict[str, str]:
        """Response text per item; failed items answer with the empty string."""
        return {k: v.get("text") or "" for k, v in self.responses.items()}

    def to_json(self) -> dict:
        return {
            "run_id": self.run_id, "corpus_id": self.corpus_id, "task": self.task.value,
            "model_name": self.model_name, "started": self.started, "finished": self.finished,
            "responses": {k: self.responses[k] for k in sorted(self.responses)},
            "report": self.report,
        }

    @classmethod
    def from_json(cls, data: dict) -> "RunRecord":
        return cls(data["run_id"], data["corpus_id"], Task(data["task"]), data["model_name"],
                   data["started"], data.get("finished"), dict(data.get("responses", {})), data.get("report"))

    def save(self, run_dir: Path) -> None:
        (run_dir / RUN_FILE).write_text(json.dumps(self.to_json(), indent=2, ensure_ascii=False) + "\n",
                                        encoding="utf-8")


def read_responses(path: str | Path, task: Task) -> dict[str, dict]:
    """Parse a responses file; a torn final line (interrupted write) is dropped.

    Later lines for the same id win, so a retried item overrides its earlier failure.
    """
    out: dict[str, dict] = {}
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            if n == len(lines):
                log.warning("%s: dropping incomplete last line", path)
                continue
            raise HarnessError(f"{path}:{n}: not valid JSON") from None
        item_id = rec.get(task.id_field)
        if item_id is None:
            raise HarnessError(f"{path}:{n}: missing {task.id_field!r}")
        status = rec.get("status", "ok")
        out[item_id] = {"status": status, "text": rec.get(task.text_field),
                        "error": rec.get("error")}
    return out


def query(corpus_dir: str | Path, endpoint: EndpointConfig, task: Task, run_dir: str | Path,
          resume: bool = False, client: ChatClient | None = None) -> RunRecord:
    corpus_dir, run_dir = Path(corpus_dir), Path(run_dir)
    manifest = CorpusManifest.load(corpus_dir / "manifest.json")
    tasks = corpus_tasks(corpus_dir, task)
    run_dir.mkdir(parents=True, exist_ok=True)
    resp_path = run_dir / RESPONSES_FILE
    done: dict[str, dict] = {}
    started = _now()
    if resp_path.exists():
        if not resume:
            raise HarnessError(f"{resp_path} exists; pass --resume to continue that run")
        done = {k: v for k, v in read_responses(resp_path, task).items() if v["status"] == "ok"}
        if (run_dir / RUN_FILE).is_file():
            started = json.loads((run_dir / RUN_FILE).read_text(encoding="utf-8"))["started"]
        # rewrite without torn or failed lines so appends start on a clean line
        with open(resp_path, "w", encoding="utf-8", newline="\n") as fh:
            for k in sorted(done):
                fh.write(json.dumps({task.id_field: k, task.text_field: done[k]["text"], "status": "ok"},
                                    ensure_ascii=False) + "\n")
    record = RunRecord(
        run_id=f"{manifest.corpus_id}-{task.value}-{endpoint.model_name}",
        corpus_id=manifest.corpus_id, task=task, model_name=endpoint.model_name, started=started,
        responses=dict(done),
    )
    pending = [t for t in tasks if t.item_id not in done]
    log.info("%d items, %d already answered, %d to query", len(tasks), len(done), len(pending))
    own_client = client is None
    client = client or ChatClient(endpoint)
    try:
        with open(resp_path, "a", encoding="utf-8", newline="\n") as fh:
            for res in run_queries(client, pending):
                line = {task.id_field: res.item_id, task.text_field: res.text,
                        "status": "ok" if res.ok else "failed"}
                if not res.ok:
                    line["error"] = res.error
                    log.warning("%s failed: %s", res.item_id, res.error)
                fh.write(json.dumps(line, ensure_ascii=False) + "\n")
                fh.flush()
                record.responses[res.item_id] = {"status": line["status"], "text": res.text, "error": res.error}
    finally:
        if own_client:
            client.close()
    record.finished = _now()
    if len(record.failed) < len(tasks) or not tasks:
        record.report = score(corpus_dir, task, record.texts())
    record.save(run_dir)
    return record


def _caption_references(corpus_dir: Path) -> dict[str, str]:
    return {r["diagram_id"]: (corpus_dir / r["caption"]).read_text(encoding="utf-8").rstrip("\n")
            for r in iter_diagram_rows(corpus_dir, "eval")}


def score(corpus_dir: str | Path, task: Task, texts: dict[str, str]) -> dict:
    """Score response texts against the corpus ground truth; returns a JSON-ready report."""
    corpus_dir = Path(corpus_dir)
    manifest = CorpusManifest.load(corpus_dir / "manifest.json")
    if task is Task.CAPTION:
        scores: CorpusScores = score_corpus(texts, _caption_references(corpus_dir))
        return {"task": task.value, "corpus_id": manifest.corpus_id, **scores.to_json()}
    key = AnswerKey.load(corpus_dir / "answer_key.json")
    items = read_questions(corpus_dir / "questions.jsonl", key)
    unknown = sorted(set(texts) - set(key.answers))
    missing = sorted(set(key.answers) - set(texts))
    if unknown or missing:
        raise IdMismatchError(f"response ids do not match the answer key: unknown {unknown[:10]}, "
                              f"missing {missing[:10]}")
    acc: AccuracyReport = score_answers(texts, key, items)
    residual = acc.pooling_residual()
    assert math.isclose(residual, 0.0, abs_tol=1e-9), f"pooling identity violated by {residual}"
    return {"task": task.value, "corpus_id": manifest.corpus_id, "n_items": len(texts), **acc.to_json()}


def report_table(report: dict) -> str:
    if report["task"] == Task.CAPTION.value:
        m = report["mean"]
        return "\n".join([
            f"corpus {report['corpus_id']}: {report['n_items']} captions",
            f"{'BLEU-4':>8} {'METEOR':>8} {'CIDEr':>8}",
            f"{m['bleu']:8.4f} {m['meteor']:8.4f} {m['cider']:8.4f}",
        ])
    return "\n".join([
        f"corpus {report['corpus_id']}: {report['n_items']} questions",
        f"{'':8} {'correct':>8} {'total':>6} {'acc':>7}",
        f"{'Prec_s':8} {report['a_s_r']:8d} {report['a_s_t']:6d} {report['prec_s_rounded']:6.1f}%",
        f"{'Prec_m':8} {report['a_m_r']:8d} {report['a_m_t']:6d} {report['prec_m_rounded']:6.1f}%",
        f"{'Prec_a':8} {report['a_s_r'] + report['a_m_r']:8d} {report['a_s_t'] + report['a_m_t']:6d} "
        f"{report['prec_a_rounded']:6.1f}%",
    ])


def load_texts(path: str | Path, task: Task | None = None) -> tuple[Task, dict[str, str]]:
    """Read response texts from a ``run.json`` or a responses JSON-lines file."""
    path = Path(path)
    if path.is_dir():
        path = path / RUN_FILE
    if path.name.endswith(".json"):
        record = RunRecord.from_json(json.loads(path.read_text(encoding="utf-8")))
        if task is not None and task is not record.task:
            raise HarnessError(f"{path} is a {record.task.value} run, not {task.value}")
        return record.task, record.texts()
    if task is None:
        first = next((json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()),
                     {})
        task = Task.CAPTION if "diagram_id" in first else Task.VQA
    return task, {k: v.get("text") or "" for k, v in read_responses(path, task).items()}


@dataclass(frozen=True)
class CorpusProblem:
    where: str
    detail: str

    def __str__(self) -> str:
        return f"{self.where}: {self.detail}"


def validate_corpus(corpus_dir: str | Path) -> list[CorpusProblem]:
    """Re-parse and validate every Mermaid file and check manifest counts against the files."""
    corpus_dir = Path(corpus_dir)
    problems: list[CorpusProblem] = []
    try:
        manifest = CorpusManifest.load(corpus_dir / "manifest.json")
    except (OSError, ValueError, KeyError, TypeError) as exc:
        return [CorpusProblem("manifest.json", f"unreadable: {exc}")]
    for mmd in sorted((corpus_dir / "mermaid").glob("*.mmd")):
        try:
            ast = parse(mmd.read_bytes(), mmd.stem)
        except MermaidParseError as exc:
            problems.extend(CorpusProblem(f"{mmd.name}:{d.line}:{d.column}", d.message) for d in exc.diagnostics)
            continue
        problems.extend(CorpusProblem(mmd.name, str(v)) for v in validate(ast))
    for stage in Stage:
        name = f"stage{stage.value}"
        path = corpus_dir / stage.filename
        if not path.is_file():
            problems.append(CorpusProblem(stage.filename, "missing"))
            continue
        lines = sum(1 for line in path.read_text(encoding="utf-8").splitlines() if line.strip())
        expected = manifest.stages.get(name, {}).get("records")
        if lines != expected:
            problems.append(CorpusProblem(stage.filename, f"{lines} records, manifest says {expected}"))
        for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            rec = json.loads(line)
            if not (corpus_dir / rec["image"]).is_file():
                problems.append(CorpusProblem(f"{stage.filename}:{n}", f"image {rec['image']} missing"))
    return problems
