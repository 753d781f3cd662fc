import json
import subprocess
import sys

import pytest

from fractalcap.cli import (ConfigError, format_config, main, parse_config)
from fractalcap.netgen import SocialNetwork


def write(path, text):
    path.write_text(text)
    return str(path)


def test_parse_config():
    cfg = parse_config("# header\nn = 100\n gamma=2.5  # trailing\n\nbeta = 0, 2.5\n")
    assert cfg == {"n": "100", "gamma": "2.5", "beta": "0, 2.5"}
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("n = 1\nn = 2\n")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("just text\n")
    with pytest.raises(ConfigError):
        parse_config("= 3\n")
    assert parse_config(format_config({"n": [1, 2], "gamma": 2.5})) == {"n": "1,2", "gamma": "2.5"}


def test_generate_deterministic(tmp_path, capsys):
    cfg = write(tmp_path / "net.cfg", "n = 300\ngamma = 2.5\nepsilon = 2.6\nseed = 4\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["generate", "--config", cfg, "--out", str(a)]) == 0
    assert main(["generate", "--config", cfg, "--out", str(b)]) == 0
    assert (a / "network.txt").read_bytes() == (b / "network.txt").read_bytes()
    net = SocialNetwork.load(a / "network.txt")
    assert net.n == 300
    manifest = json.loads((a / "network.manifest.json").read_text())
    assert manifest["seed"] == 4 and manifest["command"] == "generate"
    assert "blake2b" in manifest["seeding"]
    # a manifest is itself a valid config
    c = tmp_path / "c"
    assert main(["generate", "--config", str(a / "network.manifest.json"), "--out", str(c)]) == 0
    assert (c / "network.txt").read_bytes() == (a / "network.txt").read_bytes()
    assert main(["generate", "--config", cfg, "--seed", "5", "--out", str(c)]) == 0
    assert (c / "network.txt").read_bytes() != (a / "network.txt").read_bytes()


@pytest.mark.parametrize("text,needle", [
    ("n = 100\ngamma = 1.0\nepsilon = 2.6\n", "gamma"),
    ("n = 100\ngamma = 2.5\nepsilon = 1.5\n", "epsilon"),
    ("n = 100\ngamma = 2.5\nepsilon = 2.6\ncolour = red\n", "unknown"),
    ("n = many\ngamma = 2.5\nepsilon = 2.6\n", "bad value"),
    ("gamma = 2.5\nepsilon = 2.6\n", "needs n"),
])
def test_generate_invalid_config(tmp_path, capsys, text, needle):
    cfg = write(tmp_path / "bad.cfg", text)
    assert main(["generate", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert needle in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(["generate", "--config", str(tmp_path / "nope.cfg")]) == 1


def test_sweep_and_rerun_from_manifest(tmp_path, capsys):
    cfg = write(tmp_path / "sweep.cfg",
                "n = 1024,2048,4096\nbeta = 0,2.5\ntrials = 100\nreplicates = 2\nseed = 3\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sweep", "--config", cfg, "--out", str(a)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("beta,slope")
    lines = (a / "results.csv").read_text().splitlines()
    assert len(lines) == 1 + 6
    assert main(["sweep", "--config", str(a / "manifest.json"), "--out", str(b),
                 "--workers", "2"]) == 0
    assert (a / "results.csv").read_text() == (b / "results.csv").read_text()
    assert (a / "fits.csv").read_text() == (b / "fits.csv").read_text()
    status = json.loads((a / "manifest.json").read_text())["status"]
    assert len(status) == 12 and set(status.values()) == {"ok"}


def test_exact(tmp_path, capsys):
    cfg = write(tmp_path / "x.cfg", "n = 60\ngamma = 2.5\nepsilon = 2.6\nbeta = 0,2.5\n")
    assert main(["exact", "--config", cfg]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "beta,rule,exact_mean_hops"
    assert lines[1].split(",")[1] == "uniform"
    assert lines[2].split(",")[1] == "powerlaw-pool-ring"
    assert float(lines[1].split(",")[2]) >= 1


def test_boxcover(tmp_path, capsys):
    g = write(tmp_path / "path.txt", "".join(f"{i} {i + 1}\n" for i in range(199)))
    assert main(["boxcover", g, "--lb", "1,3,7", "--orderings", "1"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "l_B,N_B,mean_kB_over_khub,mean_nh_over_kB"
    assert "d_B=1 " in out
    assert main(["boxcover", g, "--lb", "1,2"]) == 1
    assert main(["boxcover", g, "--lb", "a,b,c"]) == 1
    assert main(["boxcover", str(tmp_path / "missing.txt")]) == 1
    split = write(tmp_path / "two.txt", "0 1\n1 2\n5 6\n")
    assert main(["boxcover", split, "--lb", "1,2,3"]) == 1
    assert main(["boxcover", split, "--lb", "1,2,3", "--per-component",
                 "--out", str(tmp_path / "bc")]) == 0
    assert (tmp_path / "bc" / "boxcover.csv").exists()


def test_verify_subset_and_fault(capsys):
    assert main(["verify", "--only", "3,9"]) == 0
    assert "2/2 criteria passed" in capsys.readouterr().out
    assert main(["verify", "--only", "9", "--inject-fault"]) == 2
    assert "[FAIL]" in capsys.readouterr().out
    assert main(["verify", "--only", "12"]) == 1


def test_module_entry_point():
    done = subprocess.run([sys.executable, "-m", "fractalcap", "--version"],
                          capture_output=True, text=True)
    assert done.returncode == 0 and done.stdout.startswith("fractalcap ")
