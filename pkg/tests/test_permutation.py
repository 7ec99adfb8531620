import numpy as np
import pytest

from convamp.operators import (build_permutations, check_block_circulant,
                               sample_mcc)


def permuted_dense(D, P, q, k, rng):
    op = sample_mcc(D, P, q, k, rng)
    perm = build_permutations(D, P, q, k)
    return op, perm, perm.apply_to_dense(op.to_dense())


class TestBlockCirculantForm:
    def test_worked_figure_case(self, rng):
        # (4,3,3,2): after permuting, [[T0 T1 0], [0 T0 T1], [T1 0 T0]]
        op, _, PM = permuted_dense(4, 3, 3, 2, rng)
        T0, T1 = PM[0:4, 0:3], PM[0:4, 3:6]
        assert np.all(PM[0:4, 6:9] == 0.0)
        assert np.all(PM[4:8, 0:3] == 0.0)
        assert np.array_equal(PM[4:8, 3:6], T0)
        assert np.array_equal(PM[4:8, 6:9], T1)
        assert np.array_equal(PM[8:12, 0:3], T1)
        assert np.all(PM[8:12, 3:6] == 0.0)
        assert np.array_equal(PM[8:12, 6:9], T0)

    def test_k_one_repeats_single_block(self, rng):
        # k=1: one dense block along the block diagonal of a q x q grid
        D, P, q = 3, 2, 5
        _, _, PM = permuted_dense(D, P, q, 1, rng)
        T0 = PM[0:D, 0:P]
        for r in range(q):
            for c in range(q):
                block = PM[r * D:(r + 1) * D, c * P:(c + 1) * P]
                if r == c:
                    assert np.array_equal(block, T0)
                else:
                    assert np.all(block == 0.0)

    def test_structural_scan(self, rng):
        op, _, PM = permuted_dense(2, 2, 4, 3, rng)
        ok, msg = check_block_circulant(PM, 2, 2, 4, 3)
        assert ok, msg
        # block (r, c) holds tap block (c - r) mod q when that index is < k
        for r in range(4):
            for c in range(4):
                s = (c - r) % 4
                block = PM[r * 2:(r + 1) * 2, c * 2:(c + 1) * 2]
                if s < 3:
                    assert np.array_equal(block, PM[0:2, s * 2:(s + 1) * 2])
                else:
                    assert np.all(block == 0.0)

    def test_hundred_random_samples(self):
        rng = np.random.default_rng(77)
        for _ in range(100):
            D = int(rng.integers(1, 7))
            P = int(rng.integers(1, 7))
            q = int(rng.integers(1, 13))
            k = int(rng.integers(1, q + 1))
            _, _, PM = permuted_dense(D, P, q, k, rng)
            ok, msg = check_block_circulant(PM, D, P, q, k)
            assert ok, f"(D={D}, P={P}, q={q}, k={k}): {msg}"

    def test_k_equals_q_edge(self, rng):
        _, _, PM = permuted_dense(3, 5, 7, 7, rng)
        ok, msg = check_block_circulant(PM, 3, 5, 7, 7)
        assert ok, msg

    def test_scan_detects_corruption(self, rng):
        _, _, PM = permuted_dense(2, 3, 4, 2, rng)
        PM = PM.copy()
        PM[0, -1] = 1.0     # should be an exact zero
        ok, msg = check_block_circulant(PM, 2, 3, 4, 2)
        assert not ok and "zero" in msg


class TestScaleBookkeeping:
    def test_block_entry_variance(self):
        # lemma factorization: blocks are (1/sqrt(k)) x N(0, 1/P) entries,
        # equivalently each permuted entry has variance 1/(k P)
        rng = np.random.default_rng(5)
        D, P, q, k = 6, 5, 4, 3
        entries = []
        for _ in range(300):
            _, _, PM = permuted_dense(D, P, q, k, rng)
            for s in range(k):
                entries.append(PM[0:D, s * P:(s + 1) * P].ravel())
        var = np.concatenate(entries).var()
        assert abs(var - 1.0 / (k * P)) < 0.05 / (k * P) * 5

    def test_permutations_are_index_arrays(self, rng):
        perm = build_permutations(3, 4, 5, 2)
        assert perm.row_perm.shape == (15,)
        assert perm.col_perm.shape == (20,)
        assert sorted(perm.row_perm.tolist()) == list(range(15))
        assert sorted(perm.col_perm.tolist()) == list(range(20))

    def test_invalid_dims_rejected(self):
        with pytest.raises(ValueError):
            build_permutations(2, 2, 3, 4)
