"""Embedding batches: validation, file formats, few-shot sampling, synthetic data.

Two on-disk formats are supported.

Text
    One TSV file per matrix, one row per vector: ``id<TAB>x1<TAB>x2...``.
    Ground truth is a TSV of ``query_id<TAB>code_id`` lines.

Binary
    ``URECAEMB`` magic, little-endian u16 version (1), u32 count, u32 dim,
    then count*dim little-endian float32 values in row-major order.  Row
    ids live in a sidecar file ``<name>.ids.tsv`` with one id per line.

A dataset is described by a JSON manifest naming the three files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IngestError, InputError

MAGIC = b"URECAEMB"
VERSION = 1
_HEADER = struct.Struct("<8sHII")


@dataclass(frozen=True)
class EmbeddingBatch:
    """Paired query/code vectors with one ground-truth code per query."""

    queries: np.ndarray
    codes: np.ndarray
    gt: tuple[int, ...]
    query_ids: tuple[str, ...] = ()
    code_ids: tuple[str, ...] = ()

    def __post_init__(self):
        q = np.array(self.queries, dtype=np.float64)
        c = np.array(self.codes, dtype=np.float64)
        if q.ndim != 2 or c.ndim != 2:
            raise InputError("queries and codes must be 2-D")
        n, m = q.shape[0], c.shape[0]
        if n < 1 or m < 1:
            raise InputError("a batch needs at least one query and one code")
        if q.shape[1] != c.shape[1]:
            raise InputError(f"query dim {q.shape[1]} != code dim {c.shape[1]}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(c))):
            raise InputError("embeddings contain non-finite values")
        gt = tuple(int(g) for g in self.gt)
        if len(gt) != n:
            raise InputError(f"{len(gt)} ground-truth entries for {n} queries")
        bad = [g for g in gt if not 0 <= g < m]
        if bad:
            raise InputError(f"ground-truth code index {bad[0]} out of range for {m} codes")
        qids = tuple(self.query_ids) or tuple(f"q{i}" for i in range(n))
        cids = tuple(self.code_ids) or tuple(f"c{j}" for j in range(m))
        for ids, count, what in ((qids, n, "query"), (cids, m, "code")):
            if len(ids) != count:
                raise InputError(f"{len(ids)} {what} ids for {count} rows")
            if len(set(ids)) != len(ids):
                raise InputError(f"duplicate {what} ids")
        q.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "queries", q)
        object.__setattr__(self, "codes", c)
        object.__setattr__(self, "gt", gt)
        object.__setattr__(self, "query_ids", qids)
        object.__setattr__(self, "code_ids", cids)

    @property
    def n(self) -> int:
        return self.queries.shape[0]

    @property
    def m(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.queries.shape[1]

    def equals(self, other: "EmbeddingBatch") -> bool:
        return (
            self.gt == other.gt
            and self.query_ids == other.query_ids
            and self.code_ids == other.code_ids
            and np.array_equal(self.queries, other.queries)
            and np.array_equal(self.codes, other.codes)
        )


@dataclass
class DatasetManifest:
    queries: Path
    codes: Path
    gt: Path
    format: str = "text"
    dim: int | None = None
    n_queries: int | None = None
    n_codes: int | None = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise IngestError("manifest not found", path) from None
        except json.JSONDecodeError as exc:
            raise IngestError(f"manifest is not valid JSON ({exc.msg})", path, exc.lineno) from None
        try:
            base = path.parent
            fmt = raw.get("format", "text")
            if fmt not in ("text", "binary"):
                raise IngestError(f"unknown format tag {fmt!r}", path)
            return cls(
                queries=base / raw["queries"],
                codes=base / raw["codes"],
                gt=base / raw["gt"],
                format=fmt,
                dim=raw.get("dim"),
                n_queries=raw.get("n_queries"),
                n_codes=raw.get("n_codes"),
            )
        except KeyError as exc:
            raise IngestError(f"manifest missing field {exc.args[0]!r}", path) from None

    def to_dict(self, relative_to: Path | None = None) -> dict:
        def rel(p: Path) -> str:
            return str(p.relative_to(relative_to)) if relative_to else str(p)

        return {
            "format": self.format,
            "dim": self.dim,
            "n_queries": self.n_queries,
            "n_codes": self.n_codes,
            "queries": rel(self.queries),
            "codes": rel(self.codes),
            "gt": rel(self.gt),
        }


# -- text format -------------------------------------------------------------

def read_text_vectors(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise IngestError("file not found", path)
    ids, rows = [], []
    dim = None
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise IngestError("expected an id followed by at least one value", path, lineno)
            try:
                values = [float(x) for x in parts[1:]]
            except ValueError:
                raise IngestError("unparseable number", path, lineno) from None
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise IngestError(f"row has {len(values)} values, expected {dim}", path, lineno)
            if not all(np.isfinite(values)):
                raise IngestError("non-finite value", path, lineno)
            ids.append(parts[0])
            rows.append(values)
    if not rows:
        raise IngestError("no vectors in file", path)
    return ids, np.array(rows, dtype=np.float64)


def write_text_vectors(path, ids, matrix) -> None:
    with open(path, "w") as fh:
        for ident, row in zip(ids, matrix):
            fh.write(ident + "\t" + "\t".join(repr(float(x)) for x in row) + "\n")


def read_gt(path, query_ids, code_ids) -> tuple[int, ...]:
    path = Path(path)
    if not path.exists():
        raise IngestError("file not found", path)
    qpos = {q: i for i, q in enumerate(query_ids)}
    cpos = {c: j for j, c in enumerate(code_ids)}
    gt: dict[int, int] = {}
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise IngestError("expected query_id<TAB>code_id", path, lineno)
            qid, cid = parts
            if qid not in qpos:
                raise IngestError(f"unknown query id {qid!r}", path, lineno)
            if cid not in cpos:
                # numeric code references are accepted as raw indices
                try:
                    j = int(cid)
                except ValueError:
                    raise IngestError(f"unknown code id {cid!r}", path, lineno) from None
                if not 0 <= j < len(code_ids):
                    raise IngestError(
                        f"code index {j} out of range for {len(code_ids)} codes", path, lineno
                    )
            else:
                j = cpos[cid]
            if qpos[qid] in gt:
                raise IngestError(f"query {qid!r} has more than one ground-truth code", path, lineno)
            gt[qpos[qid]] = j
    missing = [query_ids[i] for i in range(len(query_ids)) if i not in gt]
    if missing:
        raise IngestError(f"no ground truth for query {missing[0]!r}", path)
    return tuple(gt[i] for i in range(len(query_ids)))


def write_gt(path, batch: EmbeddingBatch) -> None:
    with open(path, "w") as fh:
        for qid, g in zip(batch.query_ids, batch.gt):
            fh.write(f"{qid}\t{batch.code_ids[g]}\n")


# -- binary format -------------------------------------------------------------

def _ids_path(path: Path) -> Path:
    return path.with_name(path.name + ".ids.tsv")


def write_binary_vectors(path, ids, matrix) -> None:
    path = Path(path)
    data = np.ascontiguousarray(matrix, dtype="<f4")
    count, dim = data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, count, dim))
        fh.write(data.tobytes(order="C"))
    with open(_ids_path(path), "w") as fh:
        for ident in ids:
            fh.write(ident + "\n")


def read_binary_vectors(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise IngestError("file not found", path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise IngestError("truncated header", path)
    magic, version, count, dim = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise IngestError(f"bad magic {magic!r}, expected {MAGIC!r}", path)
    if version != VERSION:
        raise IngestError(f"unsupported version {version}", path)
    expected = _HEADER.size + 4 * count * dim
    if len(raw) != expected:
        raise IngestError(f"payload is {len(raw)} bytes, header implies {expected}", path)
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(count, dim)
    bad = np.argwhere(~np.isfinite(data))
    if bad.size:
        raise IngestError(f"non-finite value at row {int(bad[0][0])}", path)
    ids_file = _ids_path(path)
    if not ids_file.exists():
        raise IngestError("missing id sidecar", ids_file)
    ids = [line.rstrip("\n") for line in ids_file.read_text().splitlines() if line.strip()]
    if len(ids) != count:
        raise IngestError(f"{len(ids)} ids for {count} vectors", ids_file)
    return ids, data.astype(np.float64)


# -- batch level ---------------------------------------------------------------

def load_batch(manifest) -> EmbeddingBatch:
    """Load and validate the batch a manifest (or manifest path) describes."""
    if not isinstance(manifest, DatasetManifest):
        manifest = DatasetManifest.from_file(manifest)
    reader = read_text_vectors if manifest.format == "text" else read_binary_vectors
    qids, q = reader(manifest.queries)
    cids, c = reader(manifest.codes)
    if q.shape[1] != c.shape[1]:
        raise IngestError(f"query dim {q.shape[1]} != code dim {c.shape[1]}", manifest.codes)
    checks = (
        (manifest.dim, q.shape[1], "dim", manifest.queries),
        (manifest.n_queries, q.shape[0], "query count", manifest.queries),
        (manifest.n_codes, c.shape[0], "code count", manifest.codes),
    )
    for declared, actual, what, where in checks:
        if declared is not None and declared != actual:
            raise IngestError(f"declared {what} {declared} but file has {actual}", where)
    for ids, where in ((qids, manifest.queries), (cids, manifest.codes)):
        if len(set(ids)) != len(ids):
            raise IngestError("duplicate ids", where)
    gt = read_gt(manifest.gt, qids, cids)
    return EmbeddingBatch(q, c, gt, tuple(qids), tuple(cids))


def _save(batch: EmbeddingBatch, directory, fmt: str) -> Path:
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        ext = "tsv" if fmt == "text" else "bin"
        writer = write_text_vectors if fmt == "text" else write_binary_vectors
        qpath, cpath, gpath = directory / f"queries.{ext}", directory / f"codes.{ext}", directory / "gt.tsv"
        writer(qpath, batch.query_ids, batch.queries)
        writer(cpath, batch.code_ids, batch.codes)
        write_gt(gpath, batch)
        manifest = DatasetManifest(qpath, cpath, gpath, fmt, batch.dim, batch.n, batch.m)
        mpath = directory / "manifest.json"
        mpath.write_text(json.dumps(manifest.to_dict(relative_to=directory), indent=2) + "\n")
    except OSError as exc:
        raise IngestError(f"cannot write dataset: {exc.strerror}", exc.filename or directory) from None
    return mpath


def save_binary(batch: EmbeddingBatch, directory) -> Path:
    """Write ``batch`` in the binary format; returns the manifest path.

    Values are stored as float32, so a reload reproduces the batch exactly
    whenever its entries are float32-representable.
    """
    return _save(batch, directory, "binary")


def save_text(batch: EmbeddingBatch, directory) -> Path:
    return _save(batch, directory, "text")


def to_storage_precision(batch: EmbeddingBatch) -> EmbeddingBatch:
    return EmbeddingBatch(
        batch.queries.astype(np.float32).astype(np.float64),
        batch.codes.astype(np.float32).astype(np.float64),
        batch.gt,
        batch.query_ids,
        batch.code_ids,
    )


def sample_fewshot(batch: EmbeddingBatch, k: int, seed: int) -> EmbeddingBatch:
    """Draw ``k`` queries without replacement together with their gt codes.

    Queries keep the draw order; codes are ordered by first reference and
    ``gt`` is re-indexed into the reduced code list.
    """
    if not 1 <= k <= batch.n:
        raise InputError(f"cannot sample {k} queries from a batch of {batch.n}")
    rng = np.random.default_rng(seed)
    picked = [int(i) for i in rng.choice(batch.n, size=k, replace=False)]
    code_order: list[int] = []
    remap: dict[int, int] = {}
    for i in picked:
        g = batch.gt[i]
        if g not in remap:
            remap[g] = len(code_order)
            code_order.append(g)
    return EmbeddingBatch(
        batch.queries[picked],
        batch.codes[code_order],
        tuple(remap[batch.gt[i]] for i in picked),
        tuple(batch.query_ids[i] for i in picked),
        tuple(batch.code_ids[j] for j in code_order),
    )


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def gen_synthetic(n: int, m: int, dim: int, shift: float, seed: int, noise: float = 0.3) -> EmbeddingBatch:
    """Synthetic retrieval batch with a controllable query shift.

    Each code k sits near a random unit center; query i sits near center i
    and is displaced by ``shift`` along one direction common to all queries.
    Codes ``n..m-1`` have no query and act as distractors.
    """
    if n < 1 or m < n:
        raise InputError(f"need 1 <= n <= m, got n={n}, m={m}")
    if dim < 1:
        raise InputError("dim must be positive")
    if shift < 0:
        raise InputError("shift must be nonnegative")
    rng = np.random.default_rng(seed)
    centers = _unit_rows(rng.standard_normal((m, dim)))
    direction = _unit_rows(rng.standard_normal((1, dim)))[0]
    scale = noise / np.sqrt(dim)
    codes = _unit_rows(centers + scale * rng.standard_normal((m, dim)))
    queries = _unit_rows(centers[:n] + scale * rng.standard_normal((n, dim)) + shift * direction)
    return EmbeddingBatch(queries, codes, tuple(range(n)))
