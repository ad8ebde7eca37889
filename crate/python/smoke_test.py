"""Smoke test for the geofuse Python module.

Build and run:

    cargo build --release -p geofuse-py --features extension-module
    python3 python/smoke_test.py

The script looks for the built library under target/release and imports it
as `geofuse`.
"""

import importlib.util
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    for name in ("libgeofuse_py.so", "libgeofuse_py.dylib", "geofuse_py.dll"):
        built = ROOT / "target" / "release" / name
        if built.exists():
            break
    else:
        sys.exit("build the extension first: cargo build --release -p geofuse-py --features extension-module")
    tmp = pathlib.Path(tempfile.mkdtemp())
    target = tmp / ("geofuse.pyd" if built.suffix == ".dll" else "geofuse.so")
    shutil.copy(built, target)
    spec = importlib.util.spec_from_file_location("geofuse", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module, tmp


def main():
    geofuse, tmp = load_module()
    print("geofuse", geofuse.__version__)

    points = [(0.01, 0.0, 0.0), (0.049, 0.0, 0.0), (0.051, 0.0, 0.0)]
    assert geofuse.pool_groups(points, 0.05) == [[0], [1, 2]]
    assert geofuse.pool_groups(points, 0.05, nearest=False) == [[0, 1], [2]]

    edges = geofuse.knn_graph(points, 2)
    assert len(edges) == 6 and all((i, i) in edges for i in range(3))
    assert len(geofuse.radius_graph(points, 0.03)) == 5

    r, _, inclination = geofuse.spherical((0.0, 0.0, 2.0))
    assert r == 2.0 and inclination == 0.0

    for layer, err in geofuse.grad_check("desk"):
        assert err <= 1e-5, (layer, err)

    data = tmp / "data"
    assert geofuse.run_cli(["synth-gen", "--train", "2", "--test", "1", "--out", str(data)]) == 0
    clouds = tmp / "clouds"
    assert geofuse.run_cli(["preprocess", "--in", str(data / "train"), "--out", str(clouds)]) == 0
    positions, features, label = geofuse.read_ply(str(clouds / "00000.ply"))
    assert len(positions) == len(features) > 100 and label == 0

    try:
        geofuse.knn_graph(points, 5)
    except ValueError:
        pass
    else:
        raise AssertionError("k larger than the cloud must raise ValueError")

    assert geofuse.run_cli(["train-3d", "--out", str(tmp / "run")]) == 2
    shutil.rmtree(tmp)
    print("ok")


if __name__ == "__main__":
    main()
