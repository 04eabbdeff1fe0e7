"""Discrete measures with exact rational weights, and their entropies.

A measure lives on the index grid at resolution ``2**-n`` in dimension 1 or
2: atoms map cell indices (possibly negative, for difference supports) to
weights.  Weights are stored as integer numerators over one common integer
denominator, so restriction, products, pushforwards and convolutions are
integer arithmetic and every stated identity can be checked exactly; floats
enter only in the final ``log2`` of an entropy.

Entropies are base 2.  ``entropy(mu, j)`` is the Shannon entropy of the
pushforward to the level-``j`` dyadic partition; ``conditional_entropy``
evaluates the fiberwise definition directly, which the chain rule says must
equal the difference of the two plain entropies -- the test suite holds the
two routes to within ``2**-40``.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from math import fsum, gcd
from typing import Iterable, Mapping

from .grid import DeltaSet, as_dyadic

__all__ = [
    "DiscreteMeasure",
    "counting_measure",
    "product_measure",
    "entropy",
    "conditional_entropy",
    "coarsen",
    "renormalize_cell",
    "discretize_density_l2",
    "project",
    "convolve",
    "symmetrize",
    "autocorrelation_peak_ratio",
    "concavity_check",
    "entropy_chain",
    "ChainReport",
    "uniform_fiber_entropy_bound",
    "save_measure",
    "load_measure",
    "LOG2_3",
]

LOG2_3 = math.log2(3.0)
_IDENTITY_TOL = 2.0**-30


def _as_key(dim: int, key) -> int | tuple[int, int]:
    if dim == 1:
        if isinstance(key, tuple):
            (key,) = key
        return int(key)
    kx, ky = key
    return int(kx), int(ky)


@dataclass(frozen=True)
class DiscreteMeasure:
    """A probability measure on grid cells, exact by construction.

    ``atoms`` maps cell keys (an int in dimension 1, an ``(x, y)`` index
    pair in dimension 2) to positive integer numerators that sum to
    ``denom`` exactly.
    """

    dim: int
    n: int
    atoms: Mapping
    denom: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if self.n < 1:
            raise ValueError("resolution exponent n must be >= 1")
        if self.denom < 1:
            raise ValueError("denominator must be positive")
        atoms = {}
        for key, num in self.atoms.items():
            num = int(num)
            if num <= 0:
                raise ValueError("atom weights must be positive")
            atoms[_as_key(self.dim, key)] = num
        if not atoms:
            raise ValueError("a measure needs at least one atom")
        if sum(atoms.values()) != self.denom:
            raise ValueError("weights must sum to exactly 1")
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def from_weights(cls, dim: int, n: int, weights: Mapping) -> "DiscreteMeasure":
        """Build from Fraction-valued weights; they must sum to 1 exactly
        (a defect below 2**-40 is repaired by exact renormalization)."""
        fracs = {k: Fraction(w) for k, w in weights.items()}
        total = sum(fracs.values())
        if total <= 0:
            raise ValueError("total weight must be positive")
        if total != 1 and abs(total - 1) > Fraction(1, 1 << 40):
            raise ValueError("weights must sum to 1 (within 2**-40)")
        scaled = {k: f / total for k, f in fracs.items()}
        den = 1
        for f in scaled.values():
            den = den * f.denominator // gcd(den, f.denominator)
        atoms = {k: f.numerator * (den // f.denominator) for k, f in scaled.items()}
        return cls(dim, n, atoms, den)

    def weight(self, key) -> Fraction:
        num = self.atoms.get(_as_key(self.dim, key), 0)
        return Fraction(num, self.denom)

    def support_size(self) -> int:
        return len(self.atoms)


def counting_measure(A: DeltaSet) -> DiscreteMeasure:
    """Uniform weights on the points of a grid set."""
    return DiscreteMeasure(1, A.n, {int(k): 1 for k in A.indices}, len(A))


def product_measure(mu: DiscreteMeasure, nu: DiscreteMeasure) -> DiscreteMeasure:
    if mu.dim != 1 or nu.dim != 1 or mu.n != nu.n:
        raise ValueError("product needs two 1-d measures at one resolution")
    atoms = {}
    for ka, na in mu.atoms.items():
        for kb, nb in nu.atoms.items():
            atoms[(ka, kb)] = na * nb
    return DiscreteMeasure(2, mu.n, atoms, mu.denom * nu.denom)


def _coarse_key(dim: int, key, shift: int):
    if shift == 0:
        return key
    if dim == 1:
        return key >> shift
    return key[0] >> shift, key[1] >> shift


def _bucket(mu: DiscreteMeasure, j: int) -> dict:
    if not 0 <= j <= mu.n:
        raise ValueError("level out of range")
    shift = mu.n - j
    out: dict = {}
    for key, num in mu.atoms.items():
        ck = _coarse_key(mu.dim, key, shift)
        out[ck] = out.get(ck, 0) + num
    return out


def _entropy_of_counts(counts: Iterable[int], denom: int) -> float:
    # H = log2(D) - sum(b log2 b) / D, exact integers inside the logs
    s = fsum(b * math.log2(b) for b in counts if b > 1)
    return math.log2(denom) - s / denom


def entropy(mu: DiscreteMeasure, j: int) -> float:
    """Shannon entropy (bits) of mu pushed to the level-j dyadic partition."""
    return _entropy_of_counts(_bucket(mu, j).values(), mu.denom)


def conditional_entropy(mu: DiscreteMeasure, fine: int, coarse: int) -> float:
    """H(level-``fine`` cell | level-``coarse`` cell), evaluated fiberwise.

    This is the direct definition ``sum_E mu(E) H(mu_E)`` over coarse cells
    E, not the difference of entropies; the chain-rule identity
    ``H(fine) - H(coarse)`` is what the tests compare it against.
    """
    if not 0 <= coarse <= fine <= mu.n:
        raise ValueError("need 0 <= coarse <= fine <= n")
    groups: dict = {}
    shift_c = mu.n - coarse
    shift_f = mu.n - fine
    for key, num in mu.atoms.items():
        ck = _coarse_key(mu.dim, key, shift_c)
        fk = _coarse_key(mu.dim, key, shift_f)
        groups.setdefault(ck, {})
        groups[ck][fk] = groups[ck].get(fk, 0) + num
    parts = []
    for sub in groups.values():
        m_e = sum(sub.values())
        inner = fsum(b * math.log2(b) for b in sub.values() if b > 1)
        parts.append(m_e * math.log2(m_e) - inner)
    return fsum(parts) / mu.denom


def coarsen(mu: DiscreteMeasure, j: int) -> DiscreteMeasure:
    """Pushforward to resolution ``2**-j`` (j >= 1)."""
    if j < 1:
        raise ValueError("coarsen to j >= 1")
    return DiscreteMeasure(mu.dim, j, _bucket(mu, j), mu.denom)


def renormalize_cell(mu: DiscreteMeasure, q_key, j: int) -> DiscreteMeasure:
    """Restrict to one level-j cell and rescale it to the unit cell.

    The result lives at resolution ``n - j``; its denominator is the
    restricted mass numerator, so the operation is exact.  Raises on cells
    of zero mass.
    """
    if not 1 <= j < mu.n:
        raise ValueError("need 1 <= j < n")
    q_key = _as_key(mu.dim, q_key)
    shift = mu.n - j
    atoms = {}
    for key, num in mu.atoms.items():
        if _coarse_key(mu.dim, key, shift) != q_key:
            continue
        if mu.dim == 1:
            atoms[key - (q_key << shift)] = num
        else:
            atoms[(key[0] - (q_key[0] << shift), key[1] - (q_key[1] << shift))] = num
    if not atoms:
        raise ValueError("cell has zero mass")
    return DiscreteMeasure(mu.dim, shift, atoms, sum(atoms.values()))


def discretize_density_l2(mu: DiscreteMeasure, j: int) -> Fraction:
    """Squared L2 norm of the level-j density: ``2**(dim*j) * sum mu(Q)**2``."""
    b = _bucket(mu, j)
    ssq = sum(v * v for v in b.values())
    return Fraction(ssq << (mu.dim * j), mu.denom * mu.denom)


def project(mu: DiscreteMeasure, c) -> DiscreteMeasure:
    """Pushforward of a planar measure under ``(x, y) -> x + c*y``.

    ``c`` must be a dyadic rational with ``|c| <= 1``; the image of an atom
    is the grid cell containing its exact image value, i.e. index
    ``kx + floor(c * ky)`` at the same resolution.
    """
    if mu.dim != 2:
        raise ValueError("project expects a planar measure")
    p, q = as_dyadic(c)
    if abs(Fraction(c)) > 1:
        raise ValueError("|c| must be at most 1")
    atoms: dict = {}
    for (kx, ky), num in mu.atoms.items():
        k = kx + ((p * ky) >> q)
        atoms[k] = atoms.get(k, 0) + num
    return DiscreteMeasure(1, mu.n, atoms, mu.denom)


def convolve(mu: DiscreteMeasure, nu: DiscreteMeasure) -> DiscreteMeasure:
    """Additive convolution of two 1-d measures on one grid (exact: index
    sums stay on the grid)."""
    if mu.dim != 1 or nu.dim != 1 or mu.n != nu.n:
        raise ValueError("convolve needs two 1-d measures at one resolution")
    atoms: dict = {}
    for ka, na in mu.atoms.items():
        for kb, nb in nu.atoms.items():
            k = ka + kb
            atoms[k] = atoms.get(k, 0) + na * nb
    return DiscreteMeasure(1, mu.n, atoms, mu.denom * nu.denom)


def symmetrize(nu: DiscreteMeasure, max_atoms: int = 1 << 12) -> DiscreteMeasure:
    """The difference measure ``nu * (-nu)``: exact autocorrelation.

    Supports land in ``(-1, 1)``, hence negative indices; the quadratic
    pair loop is guarded by ``max_atoms``.
    """
    if nu.dim != 1:
        raise ValueError("symmetrize expects a 1-d measure")
    if len(nu.atoms) > max_atoms:
        raise ValueError("support too large for the quadratic pair loop")
    atoms: dict = {}
    for ka, na in nu.atoms.items():
        for kb, nb in nu.atoms.items():
            k = ka - kb
            atoms[k] = atoms.get(k, 0) + na * nb
    return DiscreteMeasure(1, nu.n, atoms, nu.denom * nu.denom)


def autocorrelation_peak_ratio(
    nubar: DiscreteMeasure, r_exps: Iterable[int] | None = None
) -> float:
    """Worst ratio ``nubar(B(x, r)) / nubar(B(0, r))`` over atoms x and
    dyadic radii ``r = 2**-j``.

    For a difference measure the ratio is at most 4: cover ``B(x, r)`` by
    two half-balls and dominate each by twice the width-``2r`` triangle
    average, which is maximized at 0 for any measure of positive type.
    """
    if r_exps is None:
        r_exps = range(nubar.n + 1)
    keys = sorted(nubar.atoms)

    def ball(center: int, w: int) -> int:
        lo = bisect.bisect_left(keys, center - w)
        hi = bisect.bisect_right(keys, center + w)
        return sum(nubar.atoms[k] for k in keys[lo:hi])

    worst = 0.0
    for j in r_exps:
        w = 1 << (nubar.n - j) if j <= nubar.n else 0
        origin = ball(0, w)
        assert origin > 0  # a difference measure has mass at 0
        for x in keys:
            ratio = ball(x, w) / origin
            worst = max(worst, ratio)
    return worst


def concavity_check(
    mu: DiscreteMeasure, nu: DiscreteMeasure, j: int
) -> tuple[float, float]:
    """Entropy of a convolution vs. the translate average it dominates.

    Returns ``(H(mu * nu, level j), sum_x nu(x) H(mu + x, level j))`` and
    asserts the first is at least the second (up to float noise): the
    convolution is the nu-mixture of the translates, and entropy is concave
    under mixtures.
    """
    conv = convolve(mu, nu)
    lhs = entropy(conv, j)
    denom = mu.denom
    shift = mu.n - j
    parts = []
    for kx, nx in nu.atoms.items():
        b: dict = {}
        for key, num in mu.atoms.items():
            ck = (key + kx) >> shift if shift else key + kx
            b[ck] = b.get(ck, 0) + num
        parts.append(nx * _entropy_of_counts(b.values(), denom))
    rhs = fsum(parts) / nu.denom
    assert lhs >= rhs - _IDENTITY_TOL
    return lhs, rhs


@dataclass(frozen=True)
class ChainReport:
    """Outcome of one entropy-chain evaluation."""

    c: Fraction
    cuts: tuple[int, ...]
    lhs: float
    block_terms: tuple[float, ...]
    correction: float

    @property
    def rhs(self) -> float:
        return fsum(self.block_terms)

    @property
    def slack(self) -> float:
        return self.lhs - (self.rhs - self.correction)


def entropy_chain(
    mu: DiscreteMeasure,
    c,
    cuts: Iterable[int],
    c_corr: float = LOG2_3,
) -> ChainReport:
    """Compare a projection's entropy against its blockwise lower bound.

    ``cuts`` are the full block boundaries ``0 = j_0 < ... < j_h = n``.  The
    left side is ``H(pi_c mu, level n)``; each block term is
    ``sum_Q mu(Q) * H(pi_c mu^Q, level j_{i+1}-j_i)`` over level-``j_i``
    cells Q with ``mu^Q`` rescaled to the unit square.  Rescaling costs at
    most ``c_corr`` per block (a level-``j_i`` square projects into at most
    3 coarse cells), which the assertion charges for every one of the ``h``
    blocks.
    """
    if mu.dim != 2:
        raise ValueError("entropy_chain expects a planar measure")
    cuts = tuple(int(j) for j in cuts)
    if cuts[0] != 0 or cuts[-1] != mu.n or any(
        b <= a for a, b in zip(cuts, cuts[1:])
    ):
        raise ValueError("cuts must run 0 = j_0 < ... < j_h = n")
    lhs = entropy(project(mu, c), mu.n)
    terms = []
    for j, j_next in zip(cuts, cuts[1:]):
        block = j_next - j
        shift = mu.n - j  # >= 1 since j < n
        groups: dict = {}
        for (kx, ky), num in mu.atoms.items():
            groups.setdefault((kx >> shift, ky >> shift), {})[(kx, ky)] = num
        part = []
        for (qx, qy), sub in groups.items():
            mass = sum(sub.values())
            shifted = {
                (kx - (qx << shift), ky - (qy << shift)): v
                for (kx, ky), v in sub.items()
            }
            sub_mu = DiscreteMeasure(2, shift, shifted, mass)
            part.append(mass * entropy(project(sub_mu, c), block))
        terms.append(fsum(part) / mu.denom)
    h = len(cuts) - 1
    report = ChainReport(
        c=Fraction(c),
        cuts=cuts,
        lhs=lhs,
        block_terms=tuple(terms),
        correction=h * c_corr,
    )
    assert report.slack >= -_IDENTITY_TOL, (
        f"chain violated: lhs={lhs} rhs={report.rhs} corr={report.correction}"
    )
    return report


def uniform_fiber_entropy_bound(
    mu: DiscreteMeasure,
    c,
    lo_bits: int,
    block_bits: int,
    log2_branching: float,
) -> tuple[float, float]:
    """Worst-cell projected entropy against the branching of the first factor.

    For a product of uniform-tree measures, conditioning on any occupied
    level-``lo_bits`` square and projecting, the entropy at ``block_bits``
    further bits is at least ``log2_branching`` (the first factor's
    child-count product over the block, in bits) minus one bit: the fibers
    are translates of one uniform measure, and a translate costs at most
    one bit of grid alignment.

    Returns ``(min over occupied squares, the asserted lower bound)``.
    """
    if mu.dim != 2:
        raise ValueError("expected a planar measure")
    if block_bits < 1 or lo_bits < 0 or lo_bits + block_bits > mu.n:
        raise ValueError("block exceeds the resolution")
    shift = mu.n - lo_bits  # >= 1
    groups: dict = {}
    for (kx, ky), num in mu.atoms.items():
        groups.setdefault((kx >> shift, ky >> shift), {})[(kx, ky)] = num
    worst = math.inf
    for (qx, qy), sub in groups.items():
        mass = sum(sub.values())
        shifted = {
            (kx - (qx << shift), ky - (qy << shift)): v for (kx, ky), v in sub.items()
        }
        sub_mu = DiscreteMeasure(2, shift, shifted, mass)
        worst = min(worst, entropy(project(sub_mu, c), block_bits))
    bound = log2_branching - 1.0
    assert worst >= bound - _IDENTITY_TOL
    return worst, bound


def save_measure(mu: DiscreteMeasure, path) -> None:
    """JSON with exact rational weights (strings "num/den")."""
    entries = []
    for key, num in sorted(mu.atoms.items()):
        ks = [key] if mu.dim == 1 else list(key)
        w = Fraction(num, mu.denom)
        entries.append([ks, f"{w.numerator}/{w.denominator}"])
    with open(path, "w") as fh:
        json.dump({"dim": mu.dim, "n": mu.n, "atoms": entries}, fh)
        fh.write("\n")


def load_measure(path) -> DiscreteMeasure:
    with open(path) as fh:
        data = json.load(fh)
    dim, n = int(data["dim"]), int(data["n"])
    weights = {}
    for ks, w in data["atoms"]:
        key = ks[0] if dim == 1 else (ks[0], ks[1])
        if isinstance(w, str):
            num, den = w.split("/")
            weights[key] = Fraction(int(num), int(den))
        else:
            weights[key] = Fraction(w)
    return DiscreteMeasure.from_weights(dim, n, weights)
