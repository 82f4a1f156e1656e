import json
import os

import pytest

from fwdsmile import cli


def write_config(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


SMALL_MC = """
[mc]
n_paths = 4000
steps_per_year = 50
seed = 99
"""

CONST_MODEL = """
[model]
vol = "constant"
sigma = 0.2
rate = 0.01
rho = -0.5
"""


class TestConfigResolution:
    def test_defaults_made_explicit(self, tmp_path):
        path = write_config(tmp_path, "[contract]\nmaturity = 0.6\n")
        resolved = cli.resolve_config(path)
        assert resolved["model"]["vol"] == "stein_stein"
        assert resolved["mc"]["seed"] == 1234
        assert resolved["contract"]["maturity"] == 0.6

    def test_unknown_section_rejected(self, tmp_path):
        path = write_config(tmp_path, "[bogus]\nx = 1\n")
        with pytest.raises(cli.ConfigError):
            cli.resolve_config(path)

    def test_unknown_key_rejected(self, tmp_path):
        path = write_config(tmp_path, "[mc]\nn_path = 100\n")
        with pytest.raises(cli.ConfigError):
            cli.resolve_config(path)

    def test_env_overrides_config(self, tmp_path, monkeypatch):
        path = write_config(tmp_path, "[mc]\nseed = 1\nn_workers = 1\n")
        monkeypatch.setenv("FWDSMILE_SEED", "42")
        monkeypatch.setenv("FWDSMILE_THREADS", "3")
        resolved = cli.resolve_config(path)
        assert resolved["mc"]["seed"] == 42
        assert resolved["mc"]["n_workers"] == 3

    def test_cli_beats_env(self, tmp_path, monkeypatch):
        path = write_config(tmp_path, "[mc]\nseed = 1\n")
        monkeypatch.setenv("FWDSMILE_SEED", "42")
        resolved = cli.resolve_config(path, seed_override=7)
        assert resolved["mc"]["seed"] == 7

    def test_hash_stable_and_sensitive(self, tmp_path):
        path = write_config(tmp_path, "[mc]\nseed = 1\n")
        a = cli.config_hash(cli.resolve_config(path))
        b = cli.config_hash(cli.resolve_config(path))
        c = cli.config_hash(cli.resolve_config(path, seed_override=2))
        assert a == b
        assert a != c


class TestBuildModel:
    def test_variants(self, tmp_path):
        path = write_config(tmp_path, CONST_MODEL)
        model = cli.build_model(cli.resolve_config(path)["model"])
        assert model.is_constant_vol
        path2 = write_config(tmp_path, "[model]\nvol_fn = \"identity\"\n", "b.toml")
        model2 = cli.build_model(cli.resolve_config(path2)["model"])
        assert not model2.is_constant_vol

    def test_unknown_names_rejected(self, tmp_path):
        path = write_config(tmp_path, "[model]\nvol = \"heston\"\n")
        with pytest.raises(cli.ConfigError):
            cli.build_model(cli.resolve_config(path)["model"])
        path2 = write_config(tmp_path, "[model]\nvol_fn = \"cubic\"\n", "b.toml")
        with pytest.raises(cli.ConfigError):
            cli.build_model(cli.resolve_config(path2)["model"])


def run_cli(args, capsys):
    code = cli.main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestSubcommands:
    def test_price_writes_csv(self, tmp_path, capsys):
        cfgfile = write_config(tmp_path, CONST_MODEL + SMALL_MC
                               + "[contract]\ngaps = [0.1]\n")
        code, out, _ = run_cli(["price", str(cfgfile), "--out", str(tmp_path / "o")],
                               capsys)
        assert code == 0
        lines = [json.loads(line) for line in out.splitlines()]
        wrote = [l["wrote"] for l in lines if "wrote" in l]
        assert len(wrote) == 1
        text = open(wrote[0]).read()
        assert text.startswith("# fwdsmile=")
        assert "direct" in text.splitlines()[1]

    def test_smile_and_converge(self, tmp_path, capsys):
        cfgfile = write_config(tmp_path, CONST_MODEL + SMALL_MC
                               + "[contract]\ngaps = [0.1, 0.05]\n")
        code, out, _ = run_cli(["smile", str(cfgfile), "--out", str(tmp_path / "s")],
                               capsys)
        assert code == 0
        code, out, _ = run_cli(["converge", str(cfgfile),
                                "--out", str(tmp_path / "c")], capsys)
        assert code == 0
        wrote = [json.loads(l)["wrote"] for l in out.splitlines()
                 if "wrote" in json.loads(l)]
        rows = open(wrote[0]).read().splitlines()
        # 2 gaps + extrapolation row
        assert len(rows) == 2 + 2 + 1

    def test_limits_writes_breakdown(self, tmp_path, capsys):
        cfgfile = write_config(tmp_path, CONST_MODEL + SMALL_MC)
        code, out, _ = run_cli(["limits", str(cfgfile), "--out", str(tmp_path / "l")],
                               capsys)
        assert code == 0
        wrote = [json.loads(l)["wrote"] for l in out.splitlines()
                 if "wrote" in json.loads(l)]
        assert any("limits_curvature_terms" in w for w in wrote)

    def test_compare_strict_passes_constant_vol(self, tmp_path, capsys):
        cfgfile = write_config(tmp_path, CONST_MODEL + SMALL_MC
                               + "[contract]\ngaps = [0.1, 0.05]\n")
        code, _, _ = run_cli(["compare", str(cfgfile), "--strict",
                              "--out", str(tmp_path / "cmp")], capsys)
        assert code == 0

    def test_error_record_on_stderr(self, tmp_path, capsys):
        cfgfile = write_config(tmp_path, "[bogus]\nx = 1\n")
        code, _, err = run_cli(["price", str(cfgfile)], capsys)
        assert code == 2
        record = json.loads(err.splitlines()[-1])
        assert record["type"] == "ConfigError"


class TestRerunDeterminism:
    def test_byte_identical_rerun_and_worker_invariance(self, tmp_path, capsys,
                                                        monkeypatch):
        cfgfile = write_config(tmp_path, CONST_MODEL + SMALL_MC
                               + "[contract]\ngaps = [0.1]\n")

        def run_once(out_dir, threads):
            monkeypatch.setenv("FWDSMILE_THREADS", str(threads))
            code, out, _ = run_cli(["price", str(cfgfile), "--out", str(out_dir)],
                                   capsys)
            assert code == 0
            wrote = [json.loads(l)["wrote"] for l in out.splitlines()
                     if "wrote" in json.loads(l)]
            return open(wrote[0], "rb").read()

        first = run_once(tmp_path / "a", 1)
        second = run_once(tmp_path / "b", 1)
        multi = run_once(tmp_path / "d", 4)
        assert first == second
        # worker count must not leak into the stream or the file bytes,
        # aside from the resolved n_workers in the config hash
        body = lambda blob: blob.split(b"\n", 1)[1]
        assert body(first) == body(multi)
