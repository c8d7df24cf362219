import numpy as np
import pytest

import oracles
from helpers import random_bundle
from datforge.adapters import (
    AdapterBundle, AdapterMeta, LoraPair, apply_adapter, bundle_from_bytes, bundle_to_bytes, delta64, load_bundle,
    lora_delta, save_bundle,
)
from datforge.errors import FormatError, ShapeMismatch, ValidationError
from datforge.registry import Direction


def test_delta_matches_loop_oracle():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((5, 3))
    p = LoraPair(a, b, 6.0)
    expected = np.array(oracles.matmul(b.tolist(), a.tolist())) * 2.0
    np.testing.assert_allclose(delta64(p), expected, rtol=1e-12)
    assert p.scale == 2.0 and p.shape == (5, 4)


def test_zero_b_is_identity_bitwise():
    base = np.random.default_rng(1).standard_normal((5, 4)).astype(np.float32)
    p = LoraPair(np.ones((2, 4), np.float32), np.zeros((5, 2), np.float32), 4.0)
    assert apply_adapter(base, p).tobytes() == base.tobytes()
    assert lora_delta(p).dtype == np.float32


def test_shape_errors():
    with pytest.raises(ShapeMismatch):
        LoraPair(np.ones((2, 4)), np.ones((5, 3)), 1.0)
    p = LoraPair(np.ones((2, 4)), np.ones((5, 2)), 1.0)
    with pytest.raises(ShapeMismatch):
        apply_adapter(np.ones((4, 5)), p)
    with pytest.raises(ValidationError):
        LoraPair(np.ones((2, 4)), np.ones((5, 2)), 0.0)


def test_round_trip_file(tmp_path):
    b = random_bundle(np.random.default_rng(2), direction=None, languages=("de", "fr"))
    save_bundle(b, tmp_path / "x.datb")
    assert load_bundle(tmp_path / "x.datb").equals(b)


def test_many_round_trips_bit_exact():
    rng = np.random.default_rng(3)
    for i in range(500):
        b = random_bundle(rng, direction=[Direction.INTO_ENGLISH, Direction.FROM_ENGLISH, None][i % 3])
        assert bundle_from_bytes(bundle_to_bytes(b)).equals(b)


def test_meta_json_round_trip():
    m = AdapterMeta("grp:1:en-xx", Direction.FROM_ENGLISH, ("sv", "de"), 16, 32.0, 0xDEADBEEF)
    again = AdapterMeta.from_json(m.to_json())
    assert again == m
    assert again.languages == ("de", "sv")
    assert m.to_json()["base_fingerprint"] == "00000000deadbeef"


@pytest.mark.parametrize("mutate", [
    lambda blob: b"XXXX" + blob[4:],
    lambda blob: blob[:4] + (9).to_bytes(4, "little") + blob[8:],
    lambda blob: blob[:-4],
    lambda blob: blob + b"\0\0\0\0",
    lambda blob: blob[:10],
])
def test_corrupt_containers(mutate):
    blob = bundle_to_bytes(random_bundle(np.random.default_rng(4)))
    with pytest.raises(FormatError):
        bundle_from_bytes(mutate(blob))


def test_layout_is_little_endian_f32():
    b = random_bundle(np.random.default_rng(5), targets=("l0.Wq",), rank=1, dims={"l0.Wq": (1, 1)})
    blob = bundle_to_bytes(b)
    assert blob[:4] == b"DATB"
    p = b.pairs["l0.Wq"]
    assert blob[-8:] == p.a.astype("<f4").tobytes() + p.b.astype("<f4").tobytes()


def test_bundle_rejects_inconsistent_rank():
    meta = AdapterMeta("x", None, ("de",), 2, 4.0, 0)
    with pytest.raises(ValidationError):
        AdapterBundle(meta, {"l0.Wq": LoraPair(np.ones((3, 2)), np.ones((2, 3)), 4.0)})
