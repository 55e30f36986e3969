import json

import numpy as np
import pytest

import vtcd
from conftest import VIDEOS
from vtcd.model_server import ServerError, Site, export_features, handle_message, select_sites


def test_export_all_sites_reads_natively(tmp_path, served):
    m = export_features(served, VIDEOS, None, tmp_path)
    ack = handle_message(served, {"type": "hello", "version": 1})
    assert [e["site"].to_json() for e in m.sites] == ack["sites"]
    for entry in m.sites:
        for vid in VIDEOS:
            v = vtcd.read_volume(str(tmp_path / entry["files"][vid]))
            assert list(v.shape[1:]) == ack["grid"]
            assert v.shape[0] == entry["channels"]
    for vid in VIDEOS:
        v = vtcd.read_volume(str(tmp_path / m.inputs[vid]))
        assert v.shape[0] == ack["channels"]


def test_single_site_filter(tmp_path, served):
    export_features(served, VIDEOS, select_sites(served, ["L2_residual"]), tmp_path)
    j = json.loads((tmp_path / "manifest.json").read_text())
    assert [e["site"] for e in j["sites"]] == [{"model_id": "toy", "layer": 2, "facet": "residual", "head": None}]
    assert sorted(j["sites"][0]["files"]) == VIDEOS
    with pytest.raises(ServerError):
        select_sites(served, ["L9_residual"])


def test_head0_key_features_match_in_process(tmp_path, served, native):
    site = Site.attention("toy", 1, 0, "key")
    m = export_features(served, VIDEOS, [site], tmp_path)
    for vid in VIDEOS:
        exported = vtcd.read_volume(str(tmp_path / m.sites[0]["files"][vid]))
        in_process = served.site_features(vid, [site])[site]
        assert np.max(np.abs(exported - in_process)) < 1e-6
        assert np.max(np.abs(exported - native.site_features(vid, site.to_json()))) < 1e-5


def test_export_feeds_native_discovery_and_remote_ranking(tmp_path, toy_dir, served, server):
    data = tmp_path / "data"
    export_features(served, VIDEOS, select_sites(served, ["L2_residual"]), data)
    code, _, err = vtcd.run_cli(["discover", "--manifest", str(data / "manifest.json"), "--out",
                                 str(tmp_path / "concepts"), "--seed", "1", "--segments", "4", "--q-max", "3"])
    assert code == 0, err
    targets = {vid: {"kind": "class_score", "payload": 0} for vid in VIDEOS}
    (tmp_path / "targets.json").write_text(json.dumps(targets))
    common = ["rank", "--concepts", str(tmp_path / "concepts"), "--seed", "3", "--k", "40",
              "--targets", str(tmp_path / "targets.json"), "--jobs", "2"]
    code, _, err = vtcd.run_cli(common + ["--out", str(tmp_path / "native"), "--backend", "toy",
                                          "--weights", str(toy_dir / "weights.json"),
                                          "--manifest", str(toy_dir / "manifest.json")])
    assert code == 0, err
    code, _, err = vtcd.run_cli(common + ["--out", str(tmp_path / "remote"), "--backend", "remote",
                                          "--endpoint", server.endpoint, "--pool", "2"])
    assert code == 0, err
    native_report = json.loads((tmp_path / "native" / "importance.json").read_text())
    remote_report = json.loads((tmp_path / "remote" / "importance.json").read_text())
    a, b = native_report["scores"], remote_report["scores"]
    assert len(a) == len(b) > 0
    assert max(abs(x - y) for x, y in zip(a, b)) < 1e-5
