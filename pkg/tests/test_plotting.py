import json

from fedcos.cli import main, toy_history
from fedcos.plotting import plot_toy

from test_config_cli import SMALL


def _is_png(path):
    return path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_run_figures(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(SMALL)
    figs = tmp_path / "figs"
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o.jsonl"),
                 "--figures", str(figs)]) == 0
    assert {p.name for p in figs.iterdir()} == {"small_accuracy.png", "small_mechanism.png"}
    assert all(_is_png(p) for p in figs.iterdir())


def test_toy_and_compare_figures(tmp_path):
    hists = {m: toy_history("two_client", m, 10) for m in ("fedavg", "fedcos:0.05")}
    assert _is_png(plot_toy(hists, "two_client", tmp_path))

    a, b = tmp_path / "a.ini", tmp_path / "b.ini"
    a.write_text(SMALL.replace("fedcos_mu = 0.02", "fedcos_mu = 0"))
    b.write_text(SMALL)
    assert main(["compare", "--config", str(a), "--config", str(b),
                 "--out", str(tmp_path / "r.json"), "--figures", str(tmp_path / "cf")]) == 0
    assert json.loads((tmp_path / "r.json").read_text())["type"] == "compare"
    assert sorted(p.name for p in (tmp_path / "cf").iterdir()) == \
        ["compare_accuracy.png", "compare_rounds.png"]
