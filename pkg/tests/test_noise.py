import math

import numpy as np
import pytest

from aitsahalia.errors import DivisibilityError, InvalidParameterError
from aitsahalia.noise import NoisePath, coarsen, dump, generate, head, load, poisson_inversion, substream


def test_deterministic_and_independent_of_order():
    a = generate(7, 3, 256, 2.0**-8, 1.0)
    _ = generate(7, 0, 256, 2.0**-8, 1.0)
    b = generate(7, 3, 256, 2.0**-8, 1.0)
    assert np.array_equal(a.dW, b.dW) and np.array_equal(a.dN, b.dN)
    assert a.digest() == b.digest()
    c = generate(7, 4, 256, 2.0**-8, 1.0)
    assert not np.array_equal(a.dW, c.dW)
    assert generate(8, 3, 256, 2.0**-8, 1.0).digest() != a.digest()


def test_streams_uncorrelated():
    x = np.concatenate([generate(1, i, 1024, 1.0, 1.0).dW for i in range(20)])
    y = np.concatenate([generate(1, i + 20, 1024, 1.0, 1.0).dW for i in range(20)])
    # |corr| under 4 standard errors for n = 20480
    assert abs(np.corrcoef(x, y)[0, 1]) < 4 / math.sqrt(x.size)


def test_brownian_moments():
    h = 2.0**-6
    dW = generate(2, 0, 2**18, h, 1.0).dW
    n = dW.size
    assert abs(dW.mean()) < 4 * math.sqrt(h / n)
    # variance of the sample variance is 2 h^2 / n for a normal
    assert abs(dW.var() - h) < 4 * h * math.sqrt(2 / n)


def test_poisson_moments():
    lam, h = 3.0, 2.0**-4
    dN = generate(3, 0, 2**18, h, lam).dN
    m = lam * h
    assert abs(dN.mean() - m) < 4 * math.sqrt(m / dN.size)
    assert dN.min() >= 0 and dN.dtype == np.int64


def test_poisson_inversion_matches_scalar_search():
    rng = substream(5, 0, 9)
    u = substream(5, 0, 9).random(2000)
    got = poisson_inversion(rng, 2.5, 2000)
    # scalar sequential search on the same uniforms
    want = []
    for ui in u:
        k, p = 0, math.exp(-2.5)
        c = p
        while ui > c:
            k += 1
            p *= 2.5 / k
            c += p
        want.append(k)
    assert got.tolist() == want


def test_poisson_large_mean_warns():
    with pytest.warns(RuntimeWarning, match="normal approximation"):
        out = poisson_inversion(substream(0, 0, 0), 50.0, 1000)
    assert out.min() >= 0 and abs(out.mean() - 50) < 2


def test_coarsen_examples():
    nz = NoisePath(0.25, 4, np.array([0.1, 0.2, 0.3, 0.4]), np.array([0, 1, 2, 0]), 0, 0)
    c = coarsen(nz, 2)
    assert c.h_fine == 0.5 and c.n_fine == 2
    assert c.dW.tolist() == [0.1 + 0.2, 0.3 + 0.4]
    assert c.dN.tolist() == [1, 2]
    assert c.source_digest == nz.source_digest
    assert coarsen(nz, 1) is nz
    with pytest.raises(DivisibilityError):
        coarsen(nz, 3)


def test_coarsen_conservation():
    nz = generate(11, 2, 2**14, 2.0**-14, 1.0)
    scale = math.fsum(np.abs(nz.dW))
    for k in (2, 16, 512, 2**14):
        c = coarsen(nz, k)
        assert c.dN.sum() == nz.dN.sum()
        assert abs(math.fsum(c.dW) - math.fsum(nz.dW)) <= 1e-15 * scale
    # nested coarsening: dN bit-exact, dW up to reassociation of each block
    two_step, direct = coarsen(coarsen(nz, 2), 2), coarsen(nz, 4)
    assert np.array_equal(two_step.dN, direct.dN)
    block_abs = np.abs(nz.dW).reshape(-1, 4).sum(axis=1)
    assert np.all(np.abs(two_step.dW - direct.dW) <= 1e-15 * block_abs)


def test_coarsened_variance():
    h = 2.0**-10
    paths = [coarsen(generate(4, i, 1024, h, 1.0), 32).dW for i in range(200)]
    v = np.concatenate(paths).var()
    n = 200 * 32
    assert abs(v - 32 * h) < 4 * 32 * h * math.sqrt(2 / n)


def test_head():
    nz = generate(0, 0, 100, 0.01, 1.0)
    hd = head(nz, 30)
    assert hd.n_fine == 30 and np.array_equal(hd.dW, nz.dW[:30])
    assert hd.source_digest == nz.source_digest
    with pytest.raises(InvalidParameterError):
        head(nz, 0)


def test_immutable():
    nz = generate(0, 0, 8, 0.1, 1.0)
    with pytest.raises(ValueError):
        nz.dW[0] = 1.0


def test_dump_load_roundtrip(tmp_path):
    nz = generate(2**63 + 5, 17, 333, 2.0**-9, 2.0)
    path = tmp_path / "noise.bin"
    dump(nz, path)
    back = load(path)
    assert back.seed == nz.seed and back.path_index == 17 and back.h_fine == nz.h_fine
    assert np.array_equal(back.dW, nz.dW) and np.array_equal(back.dN, nz.dN)
    assert back.digest() == nz.digest()
    assert path.stat().st_size == 8 + 4 + 8 + 8 + 8 + 8 + 333 * 8 + 8 + 333 * 8
    (tmp_path / "bad.bin").write_bytes(b"nonsense" * 10)
    with pytest.raises(InvalidParameterError):
        load(tmp_path / "bad.bin")


@pytest.mark.parametrize("kw", [dict(n_fine=0), dict(h_fine=0.0), dict(lam=0.0)])
def test_generate_rejects(kw):
    args = dict(seed=0, path_index=0, n_fine=4, h_fine=0.1, lam=1.0)
    args.update(kw)
    with pytest.raises(InvalidParameterError):
        generate(**args)
