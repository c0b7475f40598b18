import csv
import io
import json
import subprocess
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from wlm.cli import main
from wlm.core import serialize_graph
from wlm.gnn import identity_model
from wlm.markov import Lmmc
from wlm.sampling import random_graph

from conftest import make_graph

SCHEMA = json.loads(resources.files("wlm").joinpath("report_schema.json").read_text())
DOCS_SCHEMA = Path(__file__).resolve().parents[1] / "docs" / "report_schema.json"


@pytest.fixture
def files(tmp_path, p2, single0, single3, triangle, path3):
    out = {}
    for name, g in {"p2": p2, "s0": single0, "s3": single3, "tri": triangle, "p3": path3}.items():
        path = tmp_path / f"{name}.json"
        path.write_bytes(serialize_graph(g))
        out[name] = str(path)
    out["dir"] = tmp_path
    return out


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    if "--csv" in argv:
        return code, captured.out, captured.err
    report = json.loads(captured.out)
    jsonschema.validate(report, SCHEMA)
    assert report["exit_code"] == code
    return code, report, captured.err


def results(report):
    return {r["name"]: r["value"] for r in report["results"]}


def test_docs_schema_matches_package_copy():
    assert json.loads(DOCS_SCHEMA.read_text()) == SCHEMA


def test_dist_worked_example(capsys, files):
    code, report, err = run(capsys, "dist", files["p2"], files["s0"], "--k", "1", "--q", "0.5", "--coupling")
    assert code == 0 and report["status"] == "ok"
    assert abs(results(report)["distance"] - 0.5) <= 1e-12
    assert np.allclose(report["payload"]["initial_coupling"]["probs"], [[0.5], [0.5]])
    assert [i["role"] for i in report["inputs"]] == ["graph1", "graph2"]
    assert all(len(i["sha256"]) == 64 for i in report["inputs"])
    assert "wlm:" in err


def test_dist_single_nodes_csv(capsys, files):
    code, out, _ = run(capsys, "dist", files["s0"], files["s3"], "--csv", "--seed", "7")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0
    assert rows[0]["name"] == "distance" and float(rows[0]["value"]) == 3.0


def test_dist_records_seed_and_defaults(capsys, files):
    _, report, _ = run(capsys, "dist", files["p2"], files["s0"], "--seed", "11")
    assert report["seed"] == 11
    assert report["parameters"]["k"] == 3 and report["parameters"]["q"] == 0.5


def test_oracle_passes(capsys, files):
    code, report, _ = run(capsys, "oracle", files["p2"], files["tri"], "--k", "2")
    assert code == 0
    checks = {c["name"]: c for c in report["checks"]}
    assert checks["max_pairwise_deviation"]["passed"] and checks["v_equals_w"]["passed"]
    notes = {r["name"]: r.get("note", "") for r in report["results"]}
    assert "labels not injective" in notes["label_space_wl"]


def test_oracle_cap(capsys, tmp_path, rng):
    paths = []
    for i in range(2):
        p = tmp_path / f"big{i}.json"
        p.write_bytes(serialize_graph(random_graph(rng, 20)))
        paths.append(str(p))
    code, report, err = run(capsys, "oracle", *paths, "--k", "3")
    assert code == 3 and report["status"] == "cap_exceeded"
    assert "instance too large for oracle" in report["message"]


def test_lipschitz_equality_case(capsys, files):
    model = files["dir"] / "model.json"
    model.write_text(identity_model(1, 1).to_json())
    code, report, _ = run(capsys, "lipschitz", files["s0"], files["s3"], str(model))
    assert code == 0
    (check,) = report["checks"]
    assert check["passed"] and abs(check["value"]) <= 1e-10
    assert results(report)["lhs"] == 3.0
    assert report["inputs"][-1]["role"] == "model"


def test_lipschitz_l2_needs_flag(capsys, files):
    model = files["dir"] / "model.json"
    model.write_text(identity_model(1, 1).to_json())
    code, report, _ = run(capsys, "lipschitz", files["s0"], files["s3"], str(model), "--metric", "l2")
    assert code == 1 and "allow_estimated" in report["message"]
    code, report, _ = run(capsys, "lipschitz", files["s0"], files["s3"], str(model), "--metric", "l2",
                          "--allow-estimated")
    assert code == 0 and "conservative" in report["results"][1]["note"]


def test_lipschitz_bad_model(capsys, files):
    bad = files["dir"] / "bad.json"
    bad.write_text(json.dumps({"q": 0.5, "layers": [{"weight": [[1.0, 2.0]]}], "readout": {"weight": [[1.0]]}}))
    code, report, _ = run(capsys, "lipschitz", files["s0"], files["s3"], str(bad))
    assert code == 1 and "readout expects dimension 1" in report["message"]


def test_wltest(capsys, files):
    code, report, _ = run(capsys, "wltest", files["tri"], files["p3"], "--k", "1", "--cross")
    assert code == 0
    r = results(report)
    assert r["distinguishable"] == 1.0 and r["first_round"] == 1.0
    assert r["wl_distance"] <= 1e-10
    assert report["checks"][0]["name"] == "indistinguishable_implies_zero" and report["checks"][0]["passed"]
    code, report, _ = run(capsys, "wltest", files["tri"], files["tri"])
    assert results(report)["distinguishable"] == 0.0 and results(report)["first_round"] is None


def test_convert(capsys, files):
    code, report, _ = run(capsys, "convert", files["tri"], "--q", "0.3")
    assert code == 0
    chain = Lmmc.from_dict(report["payload"]["chain"])
    assert np.allclose(np.sort(chain.kernel, axis=1), [[0.3, 0.35, 0.35]] * 3, atol=1e-15)
    out = files["dir"] / "chain.json"
    code, report, _ = run(capsys, "convert", files["p2"], "--eps", "1", "--out", str(out))
    assert code == 0 and report["outputs"][0]["path"] == str(out)
    assert np.allclose(Lmmc.from_json(out.read_text()).kernel, [[2 / 3, 1 / 3], [1 / 3, 2 / 3]])


@pytest.mark.parametrize("argv", [
    ["convert", "GRAPH"],
    ["dist", "GRAPH"],
    ["dist", "GRAPH", "GRAPH", "--q", "0.5", "--eps", "1"],
    ["dist", "GRAPH", "GRAPH", "--q", "1.5"],
    ["dist", "GRAPH", "GRAPH", "--k", "-1"],
    ["dist", "GRAPH", "missing.json"],
    ["frobnicate"],
    [],
])
def test_usage_errors_exit_1(capsys, files, argv):
    argv = [files["p2"] if a == "GRAPH" else a for a in argv]
    code, report, err = run(capsys, *argv)
    assert code == 1 and report["status"] == "validation_error" and report["message"]


def test_malformed_graph(capsys, files):
    bad = files["dir"] / "bad.json"
    bad.write_text('{"d": 1, "nodes": [{"id": "a", "label": [0, 1]}]}')
    code, report, _ = run(capsys, "dist", str(bad), files["p2"])
    assert code == 1 and "nodes[0]" in report["message"]


def test_module_entry_point(files):
    proc = subprocess.run([sys.executable, "-m", "wlm", "dist", files["p2"], files["s0"], "--k", "1"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["results"][0]["value"] == pytest.approx(0.5, abs=1e-12)
