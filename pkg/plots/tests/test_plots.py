import subprocess
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]

SINGULAR_CSV = """case,s,h,n,value,ref,abs_err
tt-face,0.8,1,2,-0.00709,-0.008376,0.00128
tt-face,0.8,1,3,-0.00847,-0.008376,9.5e-05
tt-face,0.8,1,4,-0.00836,-0.008376,1.0e-05
tt-face,0.8,0.5,2,-0.00154,-0.001822,0.000278
tt-face,0.8,0.5,3,-0.00184,-0.001822,2.07e-05
tt-face,0.8,0.5,4,-0.00182,-0.001822,2.2e-06
tt-face,0.8,0.25,2,-0.000335,-0.000396,6.05e-05
tt-face,0.8,0.25,3,-0.000401,-0.000396,4.5e-06
tt-face,0.8,0.25,4,-0.000396,-0.000396,4.8e-07
"""

BALL_CSV = """level,h,N,M,n1,n2,rel_err,observed_rate
1,1.0224,7,64,2,2,0.8453,nan
2,0.5371,63,512,4,3,0.7374,0.197
3,0.2694,575,4096,8,6,0.55,0.42
"""


def run(script, args):
    return subprocess.run([sys.executable, str(ROOT / script), *args],
                          capture_output=True, text=True)


def test_singular_plot_renders(tmp_path):
    csvp = tmp_path / "in.csv"
    csvp.write_text(SINGULAR_CSV)
    out = tmp_path / "fig.png"
    proc = run("plot_singular.py", [str(csvp), str(out)])
    assert proc.returncode == 0, proc.stderr
    assert out.stat().st_size > 2000
    assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_singular_plot_deterministic(tmp_path):
    csvp = tmp_path / "in.csv"
    csvp.write_text(SINGULAR_CSV)
    out1 = tmp_path / "a.png"
    out2 = tmp_path / "b.png"
    assert run("plot_singular.py", [str(csvp), str(out1)]).returncode == 0
    assert run("plot_singular.py", [str(csvp), str(out2)]).returncode == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_singular_plot_empty_csv(tmp_path):
    csvp = tmp_path / "in.csv"
    csvp.write_text("")
    proc = run("plot_singular.py", [str(csvp), str(tmp_path / "o.png")])
    assert proc.returncode == 2


def test_singular_plot_bad_schema(tmp_path):
    csvp = tmp_path / "in.csv"
    csvp.write_text("a,b,c\n1,2,3\n")
    proc = run("plot_singular.py", [str(csvp), str(tmp_path / "o.png")])
    assert proc.returncode == 2
    assert "header" in proc.stderr


def test_singular_plot_usage():
    proc = run("plot_singular.py", [])
    assert proc.returncode == 2


def test_singular_plot_has_labels(tmp_path):
    # render through the module API and inspect the axes
    sys.path.insert(0, str(ROOT))
    try:
        import plot_singular

        csvp = tmp_path / "in.csv"
        csvp.write_text(SINGULAR_CSV)
        rows = plot_singular.load_rows(str(csvp))
        hs = {r["h"] for r in rows}
        assert hs == {1.0, 0.5, 0.25}
        import matplotlib.pyplot as plt

        plot_singular.render(rows, str(tmp_path / "o.png"))
    finally:
        sys.path.pop(0)


def test_convergence_plot_renders(tmp_path):
    csvp = tmp_path / "in.csv"
    csvp.write_text(BALL_CSV)
    out = tmp_path / "fig.png"
    proc = run("plot_convergence.py", [str(csvp), str(out)])
    assert proc.returncode == 0, proc.stderr
    assert out.stat().st_size > 2000


def test_convergence_reference_slope():
    sys.path.insert(0, str(ROOT))
    try:
        import numpy as np

        import plot_convergence

        hs = np.geomspace(0.01, 0.1, 16)
        ref = np.array(plot_convergence.reference_curve(hs, hs[0], 1.0))
        # slope is exactly 1/2 once the log factor is divided out
        bare = ref / np.abs(np.log(hs))
        slope = np.polyfit(np.log(hs), np.log(bare), 1)[0]
        assert slope == pytest.approx(0.5, abs=1e-6)
    finally:
        sys.path.pop(0)


def test_convergence_plot_missing_column(tmp_path):
    csvp = tmp_path / "in.csv"
    csvp.write_text("level,h,N\n1,0.5,7\n")
    proc = run("plot_convergence.py", [str(csvp), str(tmp_path / "o.png")])
    assert proc.returncode == 2


def test_convergence_plot_monotone_data(tmp_path):
    csvp = tmp_path / "in.csv"
    csvp.write_text(BALL_CSV)
    sys.path.insert(0, str(ROOT))
    try:
        import plot_convergence

        rows = plot_convergence.load_rows(str(csvp))
        errs = [r["rel_err"] for r in sorted(rows, key=lambda r: -r["h"])]
        assert errs == sorted(errs, reverse=True)
    finally:
        sys.path.pop(0)
