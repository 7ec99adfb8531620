"""Sensing operators: multi-channel convolutional (MCC) and dense Gaussian.

An MCC operator maps P channels of dimension q to D channels of dimension q.
Each of the D x P blocks of its dense realization is a q x q circulant matrix
whose first row is a zero-padded filter of k taps; row r is that row rotated
right by r-1 positions. The whole matrix carries a single 1/sqrt(P) scale,
while filter taps have variance 1/k per tap (constant profile), so the mean
squared row norm is 1.

All operators expose forward/transpose products and their elementwise-squared
counterparts, each agreeing with the dense realization. Operators are
immutable after construction; sampling takes an explicit Generator.
"""

import json

import numpy as np

from .validation import check_positive_int, check_rng, check_vector

FLOAT_FMT = "%.17g"  # exact float64 round-trip


def sample_conv_filter(k, variance_profile=None, rng=None):
    """Draw one k-tap filter with independent zero-mean Gaussian taps.

    The default profile is the constant 1/k per tap. A non-constant profile
    gives the structured ensemble (sampling support only; no dense-Gaussian
    equivalence is claimed downstream for it).
    """
    k = check_positive_int(k, "k")
    rng = check_rng(rng)
    if variance_profile is None:
        profile = np.full(k, 1.0 / k)
    else:
        profile = check_vector(variance_profile, k, "variance_profile")
        if np.any(profile <= 0.0):
            raise ValueError("variance_profile entries must be positive")
    return rng.standard_normal(k) * np.sqrt(profile)


class MccOperator:
    """Multi-channel convolution operator, shape (D*q, P*q).

    Parameters
    ----------
    filters : ndarray, shape (D, P, k)
        Filter taps per (output channel, input channel) block.
    q : int
        Channel dimension; requires k <= q.
    scale : float
        Global prefactor, 1/sqrt(P) for the standard ensemble.
    path : {"auto", "sparse", "fft"}
        Which product implementation `matvec`/`rmatvec` route through.
    """

    def __init__(self, filters, q, scale=None, path="auto", variance_profile=None):
        filters = np.asarray(filters, dtype=np.float64)
        if filters.ndim != 3:
            raise ValueError("filters must have shape (D, P, k)")
        D, P, k = filters.shape
        q = check_positive_int(q, "q")
        if k > q:
            raise ValueError(f"filter length k={k} exceeds channel dimension q={q}")
        if path not in ("auto", "sparse", "fft"):
            raise ValueError(f"unknown path {path!r}")
        self.filters = filters
        self.filters.setflags(write=False)
        self.D, self.P, self.q, self.k = D, P, q, k
        self.scale = float(1.0 / np.sqrt(P)) if scale is None else float(scale)
        self.path = path
        self.variance_profile = None if variance_profile is None else np.asarray(
            variance_profile, dtype=np.float64)
        self._fft_cache = None
        self._sq = None

    @property
    def kind(self):
        return "mcc" if self.variance_profile is None else "mcc-structured"

    @property
    def shape(self):
        return (self.D * self.q, self.P * self.q)

    # -- dense realization ------------------------------------------------
    def to_dense(self):
        D, P, q, k = self.D, self.P, self.q, self.k
        padded = np.zeros((D, P, q))
        padded[:, :, :k] = self.filters
        r = np.arange(q)
        # circulant: block[r, c] = padded[(c - r) mod q]
        idx = (r[None, :] - r[:, None]) % q
        blocks = padded[:, :, idx]            # (D, P, q, q)
        dense = blocks.transpose(0, 2, 1, 3).reshape(D * q, P * q)
        return self.scale * dense

    # -- products ----------------------------------------------------------
    def _use_fft(self):
        if self.path == "fft":
            return True
        if self.path == "sparse":
            return False
        return self.k > max(4.0, np.log2(self.q))

    def matvec(self, v):
        v = check_vector(v, self.P * self.q, "v")
        if self._use_fft():
            return self.matvec_fft(v)
        return self.matvec_sparse(v)

    def rmatvec(self, u):
        u = check_vector(u, self.D * self.q, "u")
        if self._use_fft():
            return self.rmatvec_fft(u)
        return self.rmatvec_sparse(u)

    def matvec_sparse(self, v):
        """Tap-by-tap product, O(D P k q): out_r = sum_s taps[s] * v[(r+s) mod q]."""
        v = check_vector(v, self.P * self.q, "v")
        X = v.reshape(self.P, self.q)
        out = np.zeros((self.D, self.q))
        for s in range(self.k):
            out += self.filters[:, :, s] @ np.roll(X, -s, axis=1)
        return self.scale * out.ravel()

    def rmatvec_sparse(self, u):
        u = check_vector(u, self.D * self.q, "u")
        U = u.reshape(self.D, self.q)
        out = np.zeros((self.P, self.q))
        for s in range(self.k):
            out += self.filters[:, :, s].T @ np.roll(U, s, axis=1)
        return self.scale * out.ravel()

    def _filter_fft(self):
        if self._fft_cache is None:
            padded = np.zeros((self.D, self.P, self.q))
            padded[:, :, : self.k] = self.filters
            self._fft_cache = np.fft.rfft(padded, axis=2)
        return self._fft_cache

    def matvec_fft(self, v):
        """FFT product, O(D P q + (D+P) q log q).

        The circulant blocks hold the filter in their first row, so the block
        action is a circular cross-correlation; hence the conjugated filter
        spectrum (validated against the dense realization).
        """
        v = check_vector(v, self.P * self.q, "v")
        F = self._filter_fft()
        Xf = np.fft.rfft(v.reshape(self.P, self.q), axis=1)
        Yf = np.einsum("ijf,jf->if", np.conj(F), Xf)
        return self.scale * np.fft.irfft(Yf, n=self.q, axis=1).ravel()

    def rmatvec_fft(self, u):
        u = check_vector(u, self.D * self.q, "u")
        F = self._filter_fft()
        Uf = np.fft.rfft(u.reshape(self.D, self.q), axis=1)
        Xf = np.einsum("ijf,if->jf", F, Uf)
        return self.scale * np.fft.irfft(Xf, n=self.q, axis=1).ravel()

    # -- squared operator ---------------------------------------------------
    def squared(self):
        """Operator whose dense realization is the elementwise square."""
        if self._sq is None:
            self._sq = MccOperator(self.filters**2, self.q,
                                   scale=self.scale**2, path=self.path)
        return self._sq

    def sq_matvec(self, v):
        return self.squared().matvec(v)

    def sq_rmatvec(self, u):
        return self.squared().rmatvec(u)


class DenseOperator:
    """Dense matrix wrapped in the common operator interface."""

    kind = "dense-gaussian"

    def __init__(self, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ValueError("matrix must be two-dimensional")
        self.matrix = matrix
        self.matrix.setflags(write=False)
        self._sq = None

    @property
    def shape(self):
        return self.matrix.shape

    def to_dense(self):
        return self.matrix.copy()

    def matvec(self, v):
        v = check_vector(v, self.shape[1], "v")
        return self.matrix @ v

    def rmatvec(self, u):
        u = check_vector(u, self.shape[0], "u")
        return self.matrix.T @ u

    def _sq_matrix(self):
        if self._sq is None:
            self._sq = self.matrix**2
        return self._sq

    def sq_matvec(self, v):
        v = check_vector(v, self.shape[1], "v")
        return self._sq_matrix() @ v

    def sq_rmatvec(self, u):
        u = check_vector(u, self.shape[0], "u")
        return self._sq_matrix().T @ u


def sample_mcc(D, P, q, k, rng=None, variance_profile=None, path="auto"):
    """Draw an MCC operator: D*P independent k-tap filters, scale 1/sqrt(P)."""
    D = check_positive_int(D, "D")
    P = check_positive_int(P, "P")
    q = check_positive_int(q, "q")
    k = check_positive_int(k, "k")
    if k > q:
        raise ValueError(f"filter length k={k} exceeds channel dimension q={q}")
    rng = check_rng(rng)
    if variance_profile is None:
        taps = rng.standard_normal((D, P, k)) / np.sqrt(k)
    else:
        profile = check_vector(variance_profile, k, "variance_profile")
        if np.any(profile <= 0.0):
            raise ValueError("variance_profile entries must be positive")
        taps = rng.standard_normal((D, P, k)) * np.sqrt(profile)
    return MccOperator(taps, q, path=path, variance_profile=variance_profile)


def sample_dense_gaussian(rows, cols, rng=None, variance=None):
    """Dense iid N(0, variance) matrix; default variance 1/cols (unit row norm)."""
    rows = check_positive_int(rows, "rows")
    cols = check_positive_int(cols, "cols")
    rng = check_rng(rng)
    var = 1.0 / cols if variance is None else float(variance)
    if var <= 0.0:
        raise ValueError("variance must be positive")
    return DenseOperator(rng.standard_normal((rows, cols)) * np.sqrt(var))


# -- permutation form --------------------------------------------------------

class PermutationPair:
    """Row/column reindexings taking an MCC dense realization to its
    block-circulant form: k distinct dense D x P blocks, block (r, c)
    equal to block #((c - r) mod q) when that index is < k, zero otherwise.
    Stored as index arrays, never materialized as matrices."""

    def __init__(self, row_perm, col_perm):
        self.row_perm = np.asarray(row_perm, dtype=np.intp)
        self.col_perm = np.asarray(col_perm, dtype=np.intp)
        for name, p in (("row_perm", self.row_perm), ("col_perm", self.col_perm)):
            if np.sort(p).tolist() != list(range(len(p))):
                raise ValueError(f"{name} is not a permutation")

    def apply_to_dense(self, dense):
        dense = np.asarray(dense)
        if dense.shape != (len(self.row_perm), len(self.col_perm)):
            raise ValueError("dense matrix shape does not match permutations")
        return dense[np.ix_(self.row_perm, self.col_perm)]

    def apply_rows(self, u):
        u = check_vector(u, len(self.row_perm), "u")
        return u[self.row_perm]

    def apply_cols(self, v):
        v = check_vector(v, len(self.col_perm), "v")
        return v[self.col_perm]


def build_permutations(D, P, q, k):
    """Index maps regrouping (channel, position) into (position, channel).

    New row (r, i) reads old row (i, r); likewise for columns with (c, j).
    Entries inside the relocated block (r, c) are then taps[i, j, (c-r) mod q],
    one shared dense matrix per tap index.
    """
    D = check_positive_int(D, "D")
    P = check_positive_int(P, "P")
    q = check_positive_int(q, "q")
    k = check_positive_int(k, "k")
    if k > q:
        raise ValueError(f"filter length k={k} exceeds channel dimension q={q}")
    r = np.arange(q)
    row_perm = (np.arange(D)[None, :] * q + r[:, None]).ravel()
    col_perm = (np.arange(P)[None, :] * q + r[:, None]).ravel()
    return PermutationPair(row_perm, col_perm)


def check_block_circulant(permuted, D, P, q, k):
    """Scan a permuted dense realization for the k-dense-block layout.

    Returns (ok, message). Repeated blocks must be exactly equal and
    out-of-band blocks exactly zero.
    """
    permuted = np.asarray(permuted)
    if permuted.shape != (D * q, P * q):
        return False, f"shape {permuted.shape} != {(D * q, P * q)}"
    ref = [permuted[:D, s * P:(s + 1) * P] for s in range(min(k, q))]
    for r in range(q):
        for c in range(q):
            block = permuted[r * D:(r + 1) * D, c * P:(c + 1) * P]
            s = (c - r) % q
            if s < k:
                if not np.array_equal(block, ref[s]):
                    return False, f"block ({r}, {c}) differs from tap block {s}"
            else:
                if np.any(block != 0.0):
                    return False, f"block ({r}, {c}) should be zero"
    n_distinct = sum(
        not any(np.array_equal(ref[a], ref[b]) for b in range(a)) for a in range(len(ref)))
    if n_distinct != min(k, q):
        return False, f"expected {min(k, q)} distinct tap blocks, found {n_distinct}"
    return True, "ok"


# -- serialization ------------------------------------------------------------

def save_operator(op, path, rng_seed=None):
    """Write an MCC operator to a self-describing JSON container.

    Floats carry 17 significant digits, which round-trips float64 exactly.
    """
    if not isinstance(op, MccOperator):
        raise TypeError("only MCC operators have a serialized container form")
    fmt = lambda x: FLOAT_FMT % x
    lines = [
        "{",
        '  "kind": %s,' % json.dumps(op.kind),
        '  "D": %d,' % op.D,
        '  "P": %d,' % op.P,
        '  "q": %d,' % op.q,
        '  "k": %d,' % op.k,
        '  "scale": %s,' % fmt(op.scale),
    ]
    if op.variance_profile is not None:
        lines.append('  "variance_profile": [%s],'
                     % ", ".join(fmt(x) for x in op.variance_profile))
    if rng_seed is not None:
        lines.append('  "rng_seed": %d,' % rng_seed)
    taps = ", ".join(fmt(x) for x in op.filters.ravel())  # row-major (i, j, tap)
    lines.append('  "taps": [%s]' % taps)
    lines.append("}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_operator(path):
    with open(path) as fh:
        doc = json.load(fh)
    required = {"kind", "D", "P", "q", "k", "scale", "taps"}
    allowed = required | {"rng_seed", "variance_profile"}
    unknown = set(doc) - allowed
    if unknown:
        raise ValueError(f"unknown container fields: {sorted(unknown)}")
    missing = required - set(doc)
    if missing:
        raise ValueError(f"missing container fields: {sorted(missing)}")
    if doc["kind"] not in ("mcc", "mcc-structured"):
        raise ValueError(f"unsupported operator kind {doc['kind']!r}")
    D, P, q, k = (check_positive_int(doc[n], n) for n in "DPqk")
    taps = np.asarray(doc["taps"], dtype=np.float64)
    if taps.size != D * P * k:
        raise ValueError(f"taps has {taps.size} entries, expected {D * P * k}")
    profile = doc.get("variance_profile")
    return MccOperator(taps.reshape(D, P, k), q, scale=float(doc["scale"]),
                       variance_profile=profile)
