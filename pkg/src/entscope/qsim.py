"""Pure product-of-block states and global Pauli measurement statistics.

Conventions used throughout the package:

* qubit 0 is the leftmost Pauli letter and the most significant outcome bit;
* outcome bit 0 is the +1 eigenvalue of the measured axis, bit 1 is -1.
"""

from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.sparse as sp

from ._seeds import derive_seed

PAULI_AXES = "XYZ"
ORACLE_MAX_QUBITS = 14
# entries below this are treated as round-off and zeroed
CLAMP_THRESHOLD = 1e-15

_H = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=complex) / np.sqrt(2.0)
_SDG = np.diag([1.0, -1.0j])
# rotate each axis' eigenbasis onto the computational basis
BASIS_CHANGE = {
    "Z": np.eye(2, dtype=complex),
    "X": _H,
    "Y": _H @ _SDG,
}


@dataclass(frozen=True)
class BlockKind:
    """One (size 1), Bell (size 2) or GHZ_k (size k >= 3)."""

    size: int

    def __post_init__(self):
        if int(self.size) < 1:
            raise ValueError(f"block size must be >= 1, got {self.size}")

    @classmethod
    def one(cls):
        return cls(1)

    @classmethod
    def bell(cls):
        return cls(2)

    @classmethod
    def ghz(cls, k):
        if k < 3:
            raise ValueError(f"GHZ blocks need k >= 3, got {k}")
        return cls(k)

    @property
    def tag(self):
        if self.size == 1:
            return "One"
        if self.size == 2:
            return "Bell"
        return "GHZ"

    @property
    def name(self):
        return f"GHZ_{self.size}" if self.size >= 3 else self.tag

    def __repr__(self):
        return f"BlockKind({self.name})"


@dataclass(frozen=True, eq=False)
class BlockState:
    kind: BlockKind
    amplitudes: np.ndarray

    @property
    def size(self):
        return self.kind.size


@dataclass(frozen=True, eq=False)
class ProductState:
    blocks: tuple

    @property
    def n(self):
        return sum(b.size for b in self.blocks)

    def qubit_ranges(self):
        """Half-open qubit index ranges, one per block, left to right."""
        out, start = [], 0
        for b in self.blocks:
            out.append(range(start, start + b.size))
            start += b.size
        return out

    def statevector(self):
        return reduce(np.kron, [b.amplitudes for b in self.blocks])


@dataclass(frozen=True)
class PauliString:
    axes: str

    def __post_init__(self):
        axes = str(self.axes)
        if not axes or any(a not in PAULI_AXES for a in axes):
            raise ValueError(f"invalid Pauli string {self.axes!r}: letters must be X, Y or Z")
        object.__setattr__(self, "axes", axes)

    @property
    def n(self):
        return len(self.axes)

    def __str__(self):
        return self.axes

    def __len__(self):
        return len(self.axes)


def as_pauli(p):
    return p if isinstance(p, PauliString) else PauliString(p)


def _frozen(a):
    a = np.array(a)
    a.flags.writeable = False
    return a


def build_block_state(kind, seed=0):
    """Amplitudes of a single block.

    ``One`` blocks are Haar-random single-qubit states drawn from ``seed``;
    Bell and GHZ blocks are the fixed ``(|0..0> + |1..1>)/sqrt(2)`` states
    and ignore the seed.
    """
    if kind.size == 1:
        rng = np.random.default_rng(derive_seed(seed))
        u, phi = rng.random(), rng.uniform(0.0, 2.0 * np.pi)
        theta = np.arccos(1.0 - 2.0 * u)
        amps = np.array([np.cos(theta / 2.0), np.exp(1j * phi) * np.sin(theta / 2.0)])
    else:
        amps = np.zeros(2 ** kind.size, dtype=complex)
        amps[0] = amps[-1] = 1.0 / np.sqrt(2.0)
    return BlockState(kind, _frozen(amps.astype(complex)))


def _as_kind(k):
    if isinstance(k, BlockKind):
        return k
    return BlockKind(int(k))


def compose_product_state(block_kinds, seed=0):
    """Tensor product of blocks laid out left to right.

    ``block_kinds`` may hold :class:`BlockKind` values or plain block sizes.
    Block ``i`` is seeded with ``derive_seed(seed, i)``.
    """
    kinds = [_as_kind(k) for k in block_kinds]
    if not kinds:
        raise ValueError("empty composition")
    blocks = tuple(build_block_state(k, derive_seed(seed, i)) for i, k in enumerate(kinds))
    return ProductState(blocks)


def _rotate(amps, axes):
    """Apply the per-qubit basis change for ``axes`` to a k-qubit vector."""
    k = len(axes)
    psi = np.asarray(amps).reshape((2,) * k)
    for q, axis in enumerate(axes):
        if axis == "Z":
            continue
        psi = np.moveaxis(np.tensordot(BASIS_CHANGE[axis], psi, axes=([1], [q])), 0, q)
    return psi.reshape(-1)


def block_distribution(block, axes):
    """Outcome distribution of a single block measured along ``axes``."""
    probs = np.abs(_rotate(block.amplitudes, axes)) ** 2
    probs[probs < CLAMP_THRESHOLD] = 0.0
    return probs


def measurement_distribution(state, pauli):
    """Exact Born probabilities of all ``2**n`` outcomes, computed blockwise."""
    pauli = as_pauli(pauli)
    if pauli.n != state.n:
        raise ValueError(f"pauli/state arity mismatch: {pauli.n} letters for {state.n} qubits")
    parts = [block_distribution(b, pauli.axes[r.start:r.stop])
             for b, r in zip(state.blocks, state.qubit_ranges())]
    return reduce(np.kron, parts)


def dense_measurement_distribution(state, pauli):
    """Reference distribution on the full ``2**n`` statevector.

    Materializes the whole state and applies each qubit's basis change as a
    sparse operator on the full space. Meant for verification only.
    """
    pauli = as_pauli(pauli)
    n = state.n
    if n > ORACLE_MAX_QUBITS:
        raise ValueError(f"oracle size limit: n={n} exceeds {ORACLE_MAX_QUBITS}")
    if pauli.n != n:
        raise ValueError(f"pauli/state arity mismatch: {pauli.n} letters for {n} qubits")
    psi = state.statevector()
    for q, axis in enumerate(pauli.axes):
        if axis == "Z":
            continue
        op = sp.kron(sp.kron(sp.identity(2 ** q), sp.csr_matrix(BASIS_CHANGE[axis])),
                     sp.identity(2 ** (n - q - 1)), format="csr")
        psi = op @ psi
    return np.abs(psi) ** 2


def sample_shots(probs, shots, seed=0):
    """Empirical outcome frequencies from ``shots`` multinomial draws."""
    shots = int(shots)
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots}")
    p = np.clip(np.asarray(probs, dtype=float), 0.0, None)
    p = p / p.sum()
    counts = np.random.default_rng(derive_seed(seed)).multinomial(shots, p)
    return counts / shots
