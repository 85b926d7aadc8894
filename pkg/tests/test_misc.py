import xml.etree.ElementTree as ET

import numpy as np

from traji import svg
from traji.experiments import Job, collect, run_jobs


def test_svg_is_valid_xml():
    text = svg.plot([svg.Series([[0, 0], [1, 2]], label="a<b"), svg.Series(np.zeros((0, 2)))], "t & u")
    root = ET.fromstring(text)
    polylines = [e for e in root if e.tag.endswith("polyline")]
    assert len(polylines) == 1
    assert "a<b" in "".join(root.itertext())


def test_svg_aspect_preserved():
    text = svg.plot([svg.Series([[0, 0], [2, 1]])], size=(200, 200), pad=0)
    pts = ET.fromstring(text)[1].get("points").split()
    (x0, y0), (x1, y1) = [tuple(map(float, p.split(","))) for p in pts]
    assert abs((x1 - x0) / (y0 - y1) - 2.0) < 1e-2


def test_svg_deterministic(tmp_path):
    s = [svg.Series(np.random.default_rng(0).normal(size=(10, 2)))]
    svg.save(tmp_path / "a.svg", s)
    svg.save(tmp_path / "b.svg", s)
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_jobs_grouped_by_tag():
    hyper = (("episodes", 1), ("epochs", 1), ("hidden", (4,)), ("feature_width", 4))
    jobs = [Job("bc", "Circles", s, hyper, n_refs=2, tag="tiny") for s in (0, 1)]
    seen = []
    results = run_jobs(jobs, workers=1, progress=seen.append)
    assert len(seen) == 2
    reports = collect(results)
    rep = reports[("tiny", "Circles")]
    assert rep.seeds == [0, 1] and rep.matrix.shape == (2, 2)
