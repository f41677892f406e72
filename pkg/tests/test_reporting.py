import orjson

from cffe.reporting import Bundle, atomic_write, csv_bytes, fmt_pct, fmt_pp


def test_formatters():
    assert fmt_pp(-0.35) == "-0.350"
    assert fmt_pct(-7.098) == "-7.10%"
    assert fmt_pp(float("nan")) == "n/a"


def test_csv_bytes_uses_unix_newlines():
    data = csv_bytes([{"k": 0, "att": -0.35}], ("k", "att"))
    assert data == b"k,att\n0,-0.35\n"


def test_atomic_write_creates_directories(tmp_path):
    path = tmp_path / "a" / "b.bin"
    atomic_write(str(path), b"x")
    assert path.read_bytes() == b"x"
    assert [p.name for p in path.parent.iterdir()] == ["b.bin"]


def test_bundle_manifest(tmp_path):
    bundle = Bundle(str(tmp_path), "estimate", 7, {"trees": 10})
    bundle.seeds["forest"] = 123
    bundle.write_csv("curve.csv", [{"k": 1}])
    bundle.skip("importance.csv", "every tree is a single leaf")
    bundle.finalize(complete=True)
    doc = orjson.loads((tmp_path / "manifest.json").read_bytes())
    assert doc["files"] == ["curve.csv"]
    assert doc["skipped"] == {"importance.csv": "every tree is a single leaf"}
    assert doc["sub_seeds"] == {"forest": 123}
    assert doc["versions"]["cffe"]
