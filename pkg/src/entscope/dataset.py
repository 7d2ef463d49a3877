"""Measurement pools, labeled multi-view samples and their on-disk format.

A dataset directory holds two files:

``manifest.json``
    The :class:`DatasetManifest` as a JSON object.

``records.txt``
    One record per line, fields separated by ``|``::

        class_id|label|sample_seed|K|PAULI:p0,p1,...|PAULI:p0,p1,...

    ``K`` view fields follow the four header fields; each is a Pauli string,
    a colon, and the ``2**n`` outcome probabilities as comma-separated
    shortest round-trip decimals (Python ``repr`` of a binary64). The final
    line is ``#sha256:<hex>``, the digest of every preceding byte.
"""

import hashlib
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import qsim, structures
from ._seeds import derive_seed, resolve_seed

SCHEMA_VERSION = 1
MANIFEST_FILE = "manifest.json"
RECORDS_FILE = "records.txt"
DEFAULT_RATIOS = (0.70, 0.15, 0.15)

# strata at most this large are enumerated and shuffled; larger ones use
# rejection sampling of random multiset permutations
_MATERIALIZE_LIMIT = 8192

_ONE_HOT = {"X": (1.0, 0.0, 0.0), "Y": (0.0, 1.0, 0.0), "Z": (0.0, 0.0, 1.0)}
_FROM_ONE_HOT = {v: k for k, v in _ONE_HOT.items()}


class DatasetError(ValueError):
    pass


class SchemaError(DatasetError):
    pass


class ChecksumError(DatasetError):
    pass


@dataclass(frozen=True)
class MeasurementPool:
    n: int
    strings: tuple
    seed: int

    def __len__(self):
        return len(self.strings)


@dataclass(frozen=True, eq=False)
class View:
    """One measured Pauli string and its outcome distribution."""

    pauli: str
    probs: np.ndarray

    @property
    def pauli_code(self):
        return encode_pauli(self.pauli)

    def vector(self, dtype=np.float64):
        return np.concatenate([self.pauli_code, self.probs]).astype(dtype, copy=False)


@dataclass(eq=False)
class SampleRecord:
    n: int
    composition: tuple
    label: str
    class_id: int
    views: list
    sample_seed: int

    @property
    def k(self):
        return len(self.views)

    def encoded(self, dtype=np.float64):
        """``(K, 3n + 2**n)`` array of encoded views."""
        return np.stack([v.vector(dtype) for v in self.views])

    def same_as(self, other):
        return (
            self.n == other.n
            and self.composition == other.composition
            and self.label == other.label
            and self.class_id == other.class_id
            and self.sample_seed == other.sample_seed
            and len(self.views) == len(other.views)
            and all(a.pauli == b.pauli and np.array_equal(a.probs, b.probs)
                    for a, b in zip(self.views, other.views))
        )


@dataclass
class DatasetManifest:
    n: int
    class_table: list
    pool: list
    pool_seed: int
    k: int
    samples_per_class: int = 100
    master_seed: int = 0
    shots: int = 0
    split_ratios: tuple = DEFAULT_RATIOS
    schema_version: int = SCHEMA_VERSION
    extra: dict = field(default_factory=dict)

    @property
    def num_classes(self):
        return len(self.class_table)

    def class_table_hash(self):
        return class_table_hash(self.n, self.class_table)

    def to_dict(self):
        d = asdict(self)
        d["split_ratios"] = list(self.split_ratios)
        return d

    @classmethod
    def from_dict(cls, d):
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        try:
            m = cls(
                n=int(d["n"]),
                class_table=list(d["class_table"]),
                pool=list(d["pool"]),
                pool_seed=int(d["pool_seed"]),
                k=int(d["k"]),
                samples_per_class=int(d["samples_per_class"]),
                master_seed=int(d["master_seed"]),
                shots=int(d["shots"]),
                split_ratios=tuple(float(r) for r in d["split_ratios"]),
                schema_version=version,
                extra=dict(d.get("extra", {})),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed manifest: {exc}") from None
        m.validate()
        return m

    def validate(self):
        if self.k < 1 or self.k > len(self.pool):
            raise DatasetError(f"K={self.k} must be in [1, pool size {len(self.pool)}]")
        if self.samples_per_class < 1:
            raise DatasetError("samples_per_class must be >= 1")
        if any(len(p) != self.n for p in self.pool):
            raise DatasetError("pool strings must all have length n")
        for label in self.class_table:
            if sum(structures.parse_label(label)) != self.n:
                raise DatasetError(f"class {label!r} does not cover {self.n} qubits")


def class_table_hash(n, labels):
    payload = f"n={n}\n" + "\n".join(labels)
    return hashlib.sha256(payload.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Pauli strings


def encode_pauli(p):
    """One-hot ``(3n,)`` vector, qubit-major: X, Y, Z -> e0, e1, e2."""
    axes = str(p)
    try:
        return np.array([v for a in axes for v in _ONE_HOT[a]])
    except KeyError:
        raise ValueError(f"invalid Pauli string {axes!r}") from None


def decode_pauli(v):
    v = np.asarray(v, dtype=float).ravel()
    if v.size == 0 or v.size % 3:
        raise ValueError("malformed encoding: length must be a positive multiple of 3")
    out = []
    for block in v.reshape(-1, 3):
        letter = _FROM_ONE_HOT.get(tuple(float(x) for x in block))
        if letter is None:
            raise ValueError(f"malformed encoding: {block.tolist()} is not one-hot")
        out.append(letter)
    return "".join(out)


def view_length(n):
    return 3 * n + 2 ** n


def _strata(n):
    out = []
    for x in range(n + 1):
        for y in range(n + 1 - x):
            z = n - x - y
            size = math.factorial(n) // (math.factorial(x) * math.factorial(y) * math.factorial(z))
            out.append(((x, y, z), size))
    out.sort(key=lambda s: (-s[1], s[0]))
    return out


def _stratum_strings(n, counts):
    x, y, _ = counts
    for xs in itertools.combinations(range(n), x):
        rest = [i for i in range(n) if i not in xs]
        for ys in itertools.combinations(rest, y):
            word = ["Z"] * n
            for i in xs:
                word[i] = "X"
            for i in ys:
                word[i] = "Y"
            yield "".join(word)


class _StratumDrawer:
    def __init__(self, n, counts, size, rng, used):
        self.n, self.counts, self.size, self.rng, self.used = n, counts, size, rng, used
        self.remaining = size - sum(1 for s in used if _type_vector(s) == counts)
        self._queue = None
        if size <= _MATERIALIZE_LIMIT:
            self._queue = list(_stratum_strings(n, counts))
            rng.shuffle(self._queue)
            self._queue.reverse()

    def draw(self):
        if self._queue is not None:
            while True:
                s = self._queue.pop()
                if s not in self.used:
                    break
        else:
            letters = np.array(list("X" * self.counts[0] + "Y" * self.counts[1] + "Z" * self.counts[2]))
            while True:
                s = "".join(self.rng.permutation(letters))
                if s not in self.used:
                    break
        self.remaining -= 1
        return s


def _type_vector(s):
    return (s.count("X"), s.count("Y"), s.count("Z"))


def build_measurement_pool(n, pool_size, seed=0):
    """Distinct global Pauli strings, ``Z^n, X^n, Y^n`` first.

    The remainder is drawn stratified by the letter-count vector
    ``(#X, #Y, #Z)``: strata are visited round-robin from largest to
    smallest, one uniform draw without replacement per visit. Asking for all
    ``3**n`` strings yields the complete enumeration.
    """
    total = 3 ** n
    if not 3 <= pool_size <= total:
        raise ValueError(f"pool_size must be in [3, {total}] for n={n}, got {pool_size}")
    pool = ["Z" * n, "X" * n, "Y" * n]
    used = set(pool)
    rng = np.random.default_rng(derive_seed(seed, n))
    drawers = [_StratumDrawer(n, counts, size, rng, used) for counts, size in _strata(n)]
    while len(pool) < pool_size:
        for d in drawers:
            if d.remaining <= 0:
                continue
            s = d.draw()
            used.add(s)
            pool.append(s)
            if len(pool) == pool_size:
                break
    return MeasurementPool(n, tuple(pool), int(seed))


# ---------------------------------------------------------------------------
# Generation


def default_pool_size(n):
    if n <= 8:
        return 3 ** n
    return 500 if n <= 10 else 1000


def make_manifest(n, k, samples_per_class=100, pool_size=None, num_classes=None,
                  shots=0, seed=None, split_ratios=DEFAULT_RATIOS):
    """Resolve defaults into a complete manifest.

    ``num_classes=None`` keeps every composition for ``n <= 8`` and samples
    100 otherwise. ``seed=None`` falls back to ``ENTSCOPE_SEED``.
    """
    seed = resolve_seed(seed)
    pool_size = default_pool_size(n) if pool_size is None else pool_size
    if num_classes is None and n > 8:
        num_classes = min(100, 2 ** (n - 1))
    labels = structures.class_table(n, num_classes, seed=derive_seed(seed, 1))
    pool_seed = derive_seed(seed, 2)
    pool = build_measurement_pool(n, pool_size, pool_seed)
    m = DatasetManifest(
        n=n,
        class_table=labels,
        pool=list(pool.strings),
        pool_seed=pool_seed,
        k=k,
        samples_per_class=samples_per_class,
        master_seed=seed,
        shots=shots,
        split_ratios=tuple(split_ratios),
    )
    m.validate()
    return m


def sample_seed_for(master_seed, class_id, index):
    return derive_seed(master_seed, 3, class_id, index)


def make_record(manifest, class_id, index):
    label = manifest.class_table[class_id]
    parts = structures.parse_label(label)
    seed = sample_seed_for(manifest.master_seed, class_id, index)
    state = qsim.compose_product_state(parts, seed)
    views = []
    for j, pauli in enumerate(manifest.pool[:manifest.k]):
        p = qsim.measurement_distribution(state, pauli)
        if manifest.shots > 0:
            p = qsim.sample_shots(p, manifest.shots, derive_seed(seed, j))
        p.flags.writeable = False
        views.append(View(pauli, p))
    return SampleRecord(manifest.n, parts, label, class_id, views, seed)


def _class_records(args):
    manifest, class_id = args
    return [make_record(manifest, class_id, i) for i in range(manifest.samples_per_class)]


def generate_dataset(manifest, workers=1):
    """All records, class-major then sample-index order."""
    manifest.validate()
    jobs = [(manifest, c) for c in range(manifest.num_classes)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(_class_records, jobs))
    else:
        chunks = [_class_records(j) for j in jobs]
    return [r for chunk in chunks for r in chunk]


def to_arrays(records, dtype=np.float64):
    """Stack records into ``X`` of shape ``(N, K, D)`` and labels ``y``."""
    if not records:
        raise ValueError("no records")
    x = np.stack([r.encoded(dtype) for r in records])
    y = np.array([r.class_id for r in records], dtype=np.int64)
    return x, y


def _split_counts(size, ratios):
    # round half down; every split keeps at least one record
    n_train = math.ceil(ratios[0] * size - 0.5 - 1e-9)
    n_val = math.ceil(ratios[1] * size - 0.5 - 1e-9)
    n_val = max(n_val, 1)
    n_test = size - n_train - n_val
    if n_test < 1:
        n_train -= 1 - n_test
        n_test = 1
    return n_train, n_val, n_test


def split_dataset(records, ratios=DEFAULT_RATIOS, seed=0):
    """Stratified train/val/test split; each part keeps input order."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"split ratios must be three non-negative values summing to 1, got {ratios}")
    by_class = {}
    for i, r in enumerate(records):
        by_class.setdefault(r.class_id, []).append(i)
    assignment = {}
    for cid in sorted(by_class):
        idx = by_class[cid]
        if len(idx) < 3:
            label = records[idx[0]].label
            raise ValueError(f"class {cid} ({label}) has {len(idx)} records; need at least 3 to split")
        n_train, n_val, _ = _split_counts(len(idx), ratios)
        perm = np.random.default_rng(derive_seed(seed, 4, cid)).permutation(len(idx))
        for rank, j in enumerate(perm):
            assignment[idx[j]] = 0 if rank < n_train else (1 if rank < n_train + n_val else 2)
    parts = ([], [], [])
    for i, r in enumerate(records):
        parts[assignment[i]].append(r)
    return parts


# ---------------------------------------------------------------------------
# Persistence


def _format_record(r):
    head = f"{r.class_id}|{r.label}|{r.sample_seed}|{r.k}"
    views = "|".join(f"{v.pauli}:" + ",".join(map(repr, v.probs.tolist())) for v in r.views)
    return head + "|" + views + "\n"


def write_dataset(path, manifest, records):
    """Write ``manifest.json`` and ``records.txt`` into directory ``path``."""
    os.makedirs(path, exist_ok=True)
    manifest_path = os.path.join(path, MANIFEST_FILE)
    records_path = os.path.join(path, RECORDS_FILE)
    digest = hashlib.sha256()
    try:
        with open(manifest_path, "w") as f:
            json.dump(manifest.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        with open(records_path, "w", newline="\n") as f:
            for r in records:
                line = _format_record(r)
                digest.update(line.encode())
                f.write(line)
            f.write(f"#sha256:{digest.hexdigest()}\n")
    except OSError as exc:
        raise OSError(f"failed writing dataset to {path}: {exc}") from exc


def read_manifest(path):
    manifest_path = os.path.join(path, MANIFEST_FILE)
    try:
        with open(manifest_path) as f:
            d = json.load(f)
    except OSError as exc:
        raise OSError(f"cannot read manifest {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{manifest_path}: invalid JSON ({exc})") from None
    return DatasetManifest.from_dict(d)


def _parse_record(line, manifest, lineno):
    fields = line.rstrip("\n").split("|")
    try:
        class_id, label, seed, k = int(fields[0]), fields[1], int(fields[2]), int(fields[3])
    except (IndexError, ValueError):
        raise DatasetError(f"line {lineno}: malformed record header") from None
    if len(fields) != 4 + k:
        raise DatasetError(f"line {lineno}: expected {k} views, found {len(fields) - 4}")
    if not 0 <= class_id < manifest.num_classes or manifest.class_table[class_id] != label:
        raise DatasetError(f"line {lineno}: class {class_id}/{label!r} not in the manifest class table")
    dim = 2 ** manifest.n
    views = []
    for fld in fields[4:]:
        pauli, _, data = fld.partition(":")
        probs = np.array([float(x) for x in data.split(",")])
        if len(pauli) != manifest.n or probs.shape != (dim,):
            raise DatasetError(f"line {lineno}: view {pauli!r} has wrong arity")
        probs.flags.writeable = False
        views.append(View(pauli, probs))
    return SampleRecord(manifest.n, structures.parse_label(label), label, class_id, views, seed)


def read_dataset(path):
    """Load ``(manifest, records)`` from a directory written by :func:`write_dataset`."""
    manifest = read_manifest(path)
    records_path = os.path.join(path, RECORDS_FILE)
    try:
        with open(records_path, newline="\n") as f:
            lines = f.readlines()
    except OSError as exc:
        raise OSError(f"cannot read records {records_path}: {exc}") from exc
    if not lines or not lines[-1].startswith("#sha256:"):
        raise DatasetError(f"{records_path}: truncated file (missing checksum line)")
    digest = hashlib.sha256()
    for line in lines[:-1]:
        digest.update(line.encode())
    if lines[-1].strip() != f"#sha256:{digest.hexdigest()}":
        raise ChecksumError(f"{records_path}: checksum failure")
    records = [_parse_record(line, manifest, i + 1) for i, line in enumerate(lines[:-1])]
    expected = manifest.num_classes * manifest.samples_per_class
    if len(records) != expected:
        raise DatasetError(f"{records_path}: truncated file ({len(records)} of {expected} records)")
    return manifest, records
