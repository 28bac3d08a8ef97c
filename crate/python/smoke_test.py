"""Smoke test for the hlq extension module.

Build and install first, e.g. `pip install --no-build-isolation ./crates/py`
or `maturin develop -m crates/py/Cargo.toml`.
"""

import os
import random
import tempfile

import hlq


def gaussian(rows, cols, sigma, seed):
    rng = random.Random(seed)
    return [[rng.gauss(0.0, sigma) for _ in range(cols)] for _ in range(rows)]


def max_abs(a, b):
    return max(abs(x - y) for ra, rb in zip(a, b) for x, y in zip(ra, rb))


def main():
    assert hlq.bpw(2, 128, "hlq") == 2.375
    assert hlq.bpw(2, 128, "uniform") == 2.25

    size, rate = hlq.footprint(2, 128, "hlq")
    assert abs(size / 2**30 - 3.887) < 0.01, size
    assert rate > 1.0

    w = gaussian(32, 256, 0.02, 0)
    x = gaussian(4, 256, 1.0, 1)

    mses = {}
    for method in ("rtn", "hlq-alt", "hlq-grad"):
        layer = hlq.QuantizedLayer.quantize(w, 3, 128, method=method)
        assert layer.shape == (32, 256)
        mses[method] = hlq.mse(w, layer.dequantize())
    assert mses["hlq-alt"] < mses["rtn"], mses

    layer = hlq.QuantizedLayer.quantize(w, 2, 64, method="hlq-gptq", calib=gaussian(300, 256, 1.0, 2))
    assert layer.format == "hlq" and layer.bits == 2
    assert len(layer.scales) == 32 * 4 * 2

    y = layer.gemm(x)
    ref = hlq.dense_gemm(layer.dequantize(), x)
    scale = max(abs(v) for row in ref for v in row)
    assert max_abs(y, ref) <= 1e-4 * scale

    y8 = layer.gemm(x, table="int8")
    flat = lambda m: [v for row in m for v in row]
    assert hlq.cosine_similarity(flat(y8), flat(ref)) >= 0.999

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "layer.hlqp")
        layer.save(path, mirrored=True)
        back = hlq.QuantizedLayer.load(path)
        assert back.codes == layer.codes
        assert max_abs(back.dequantize(), layer.dequantize()) <= 1e-6

    try:
        hlq.QuantizedLayer.quantize(w, 2, 100)
    except ValueError as e:
        assert "group size" in str(e)
    else:
        raise AssertionError("bad group size accepted")

    print("hlq smoke test passed:", {k: f"{v:.3e}" for k, v in mses.items()})


if __name__ == "__main__":
    main()
