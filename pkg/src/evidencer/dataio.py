"""Matrix and configuration I/O.

All matrices travel as plain UTF-8 comma-separated files with an optional
single header row of column labels; values are written in scientific
notation with 17 significant digits so a write/read round trip reproduces
every double bit-for-bit. Analysis configurations are JSON documents.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError

__all__ = [
    "LabeledMatrix",
    "ResultTable",
    "load_matrix",
    "save_matrix",
    "ModelSpaceConfig",
    "load_config",
]

RESULT_KINDS = (
    "cvLME",
    "cvAcc",
    "cvCom",
    "oosLME",
    "oosAcc",
    "oosCom",
    "LFE",
    "alpha",
    "EP",
    "PP",
    "BMA",
)


@dataclass(frozen=True)
class LabeledMatrix:
    """A 2-D float matrix with optional column labels."""

    values: np.ndarray
    columns: tuple | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ParseError("matrix must be 2-D")
        if self.columns is not None and len(self.columns) != values.shape[1]:
            raise ParseError("one column label per column required")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple:
        return self.values.shape


def _parse_cell(cell: str, line_no: int):
    text = cell.strip()
    if not text:
        raise ParseError(f"line {line_no}: empty cell")
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"line {line_no}: non-numeric cell {cell!r}") from None


def load_matrix(path) -> LabeledMatrix:
    """Read a rectangular numeric CSV, capturing a header row if present.

    The first row is treated as a header exactly when at least one of its
    cells is not parseable as a number. Ragged rows, non-numeric data
    cells, and empty files raise :class:`ParseError` naming the offending
    line.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as handle:
            raw_rows = list(enumerate(csv.reader(handle), start=1))
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    while raw_rows and all(not c.strip() for c in raw_rows[-1][1]):
        raw_rows.pop()
    if not raw_rows:
        raise ParseError(f"{path}: no data rows")

    columns = None
    first_line, first_cells = raw_rows[0]
    header = False
    for cell in first_cells:
        try:
            float(cell.strip() or "x")
        except ValueError:
            header = True
            break
    if header:
        columns = tuple(c.strip() for c in first_cells)
        raw_rows = raw_rows[1:]

    rows = []
    for line_no, cells in raw_rows:
        if all(not c.strip() for c in cells):
            raise ParseError(f"line {line_no}: blank row inside {path}")
        rows.append([_parse_cell(c, line_no) for c in cells])
        width = len(columns) if columns is not None else len(rows[0])
        if len(rows[-1]) != width:
            raise ParseError(
                f"line {line_no}: ragged row with {len(rows[-1])} cells, "
                f"expected {width}"
            )
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return LabeledMatrix(values=np.array(rows, dtype=float), columns=columns)


def save_matrix(path, values: np.ndarray, columns=None) -> None:
    """Write a matrix as CSV: optional header, 17-significant-digit values."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        if columns is not None:
            if len(columns) != values.shape[1]:
                raise ParseError("one column label per column required")
            writer.writerow(list(columns))
        for row in values:
            writer.writerow([f"{v:.16e}" for v in row])


@dataclass(frozen=True)
class ResultTable:
    """One persisted analysis result: a labeled matrix plus its kind.

    ``row_labels`` name the leading axis (models, families, or a single
    aggregate row); columns are voxels. Values must be finite unless the
    table is explicitly flagged.
    """

    kind: str
    row_labels: tuple
    values: np.ndarray
    allow_nonfinite: bool = False

    def __post_init__(self):
        if self.kind not in RESULT_KINDS:
            raise ParseError(
                f"unknown result kind {self.kind!r}; expected one of "
                f"{RESULT_KINDS}"
            )
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if len(self.row_labels) != values.shape[0]:
            raise ParseError(
                f"{self.kind}: {values.shape[0]} rows but "
                f"{len(self.row_labels)} row labels"
            )
        if not self.allow_nonfinite and not np.all(np.isfinite(values)):
            raise ParseError(f"{self.kind}: non-finite values are not flagged")
        object.__setattr__(self, "values", values)
        object.__setattr__(
            self, "row_labels", tuple(str(r) for r in self.row_labels)
        )

    @property
    def n_voxels(self) -> int:
        return self.values.shape[1]

    def save(self, path) -> None:
        columns = [f"v{i + 1}" for i in range(self.n_voxels)]
        save_matrix(path, self.values, columns=columns)


@dataclass(frozen=True)
class ModelSpaceConfig:
    """Parsed analysis configuration.

    First-level fields describe one subject's model space: named models
    with per-session design files, per-session response files, and an
    optional precision (``"identity"`` or per-session files). ``sessions``
    selects multi-session folds or the single-session split. Optional
    blocks configure families, model priors, the estimate stack for
    averaging, and the group of subjects for population-level selection.
    """

    models: tuple = ()
    data: tuple = ()
    precision: object = "identity"
    sessions: dict = field(default_factory=lambda: {"kind": "multi"})
    families: dict | None = None
    family_weights: dict | None = None
    model_prior: tuple | None = None
    betas: dict | None = None
    subjects: tuple = ()
    alpha0: float = 1.0
    vb_tol: float = 1e-4
    vb_max_iter: int = 200
    chunk_voxels: int = 4096
    base_dir: Path = Path(".")
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def model_names(self) -> tuple:
        return tuple(m["name"] for m in self.models)

    @property
    def n_sessions(self) -> int:
        if self.sessions.get("kind") == "single":
            return 1
        return len(self.data)

    def resolve(self, relative) -> Path:
        return (self.base_dir / relative).resolve()


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def load_config(path) -> ModelSpaceConfig:
    """Load and structurally validate an analysis configuration."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    _require(isinstance(raw, dict), "config root must be a JSON object")

    models = tuple(raw.get("models", ()))
    data = tuple(raw.get("data", ()))
    subjects = tuple(raw.get("subjects", ()))
    _require(
        models or subjects,
        "config must declare first-level 'models' or a group 'subjects' list",
    )

    sessions = dict(raw.get("sessions", {"kind": "multi"}))
    kind = sessions.get("kind")
    _require(kind in ("multi", "single"), "sessions.kind must be 'multi' or 'single'")

    if models:
        names = []
        for m in models:
            _require(
                isinstance(m, dict) and "name" in m and "design" in m,
                "each model needs 'name' and 'design' entries",
            )
            names.append(m["name"])
        _require(len(set(names)) == len(names), "model names must be unique")
        _require(len(data) >= 1, "first-level analyses need response files in 'data'")
        if kind == "single":
            _require(len(data) == 1, "single-session mode takes exactly one response file")
            _require(
                isinstance(sessions.get("scans"), int) and sessions["scans"] > 0,
                "single-session mode needs a positive 'scans' count",
            )
        for m in models:
            _require(
                len(m["design"]) == len(data),
                f"model {m['name']!r} needs one design file per session "
                f"({len(data)} expected, {len(m['design'])} given)",
            )

    precision = raw.get("precision", "identity")
    if precision != "identity":
        _require(
            isinstance(precision, (list, tuple)) and len(precision) == len(data),
            "precision must be 'identity' or one file per session",
        )
        precision = tuple(precision)

    families = raw.get("families")
    if families is not None:
        _require(
            isinstance(families, dict) and families,
            "families must be a non-empty {name: [model names]} object",
        )
        known = set(tuple(m["name"] for m in models))
        mentioned = [name for members in families.values() for name in members]
        _require(
            sorted(mentioned) == sorted(known),
            "families must mention every model exactly once",
        )

    family_weights = raw.get("family_weights")
    if family_weights is not None:
        _require(families is not None, "family_weights requires families")
        for fam in family_weights:
            _require(fam in families, f"family_weights names unknown family {fam!r}")

    model_prior = raw.get("model_prior")
    if model_prior is not None:
        _require(
            len(model_prior) == len(models),
            "model_prior needs one weight per model",
        )
        model_prior = tuple(float(w) for w in model_prior)

    betas = raw.get("betas")
    if betas is not None:
        _require(
            isinstance(betas, dict) and "files" in betas,
            "betas needs a 'files' matrix of per-model, per-session estimates",
        )
        _require(
            len(betas["files"]) == len(models),
            "betas.files needs one row per model",
        )
        n_sessions = 1 if kind == "single" else len(data)
        for row in betas["files"]:
            _require(
                len(row) == n_sessions,
                f"betas.files rows need one file per session ({n_sessions})",
            )

    for s in subjects:
        _require(
            isinstance(s, dict) and "name" in s and "cvlme" in s,
            "each subject needs 'name' and 'cvlme' entries",
        )
    if subjects:
        subject_names = [s["name"] for s in subjects]
        _require(
            len(set(subject_names)) == len(subject_names),
            "subject names must be unique",
        )

    alpha0 = float(raw.get("alpha0", 1.0))
    _require(alpha0 > 0, "alpha0 must be positive")
    vb_tol = float(raw.get("vb_tol", 1e-4))
    _require(vb_tol > 0, "vb_tol must be positive")
    vb_max_iter = int(raw.get("vb_max_iter", 200))
    _require(vb_max_iter >= 1, "vb_max_iter must be at least 1")
    chunk_voxels = int(raw.get("chunk_voxels", 4096))
    _require(chunk_voxels >= 1, "chunk_voxels must be at least 1")

    return ModelSpaceConfig(
        models=models,
        data=data,
        precision=precision,
        sessions=sessions,
        families=families,
        family_weights=family_weights,
        model_prior=model_prior,
        betas=betas,
        subjects=subjects,
        alpha0=alpha0,
        vb_tol=vb_tol,
        vb_max_iter=vb_max_iter,
        chunk_voxels=chunk_voxels,
        base_dir=path.parent,
        raw=raw,
    )
