import csv
import json

import numpy as np
import pytest

from marked_cpp.cli import main
from marked_cpp.config import (
    ConfigError,
    ExperimentConfig,
    parse_config,
    seed_stream,
    serialize_config,
)
from marked_cpp.genealogy import read_cpp_json

BROWNIAN = """
[model]
family = brownian
[genealogy]
tau = 1.0
eps = 0.1
[rng]
master_seed = 7
"""

EXAMPLE1 = """
[model]
family = critical-exponential
mutation = constant
beta = 1.0
[rescaling]
n_list = 10
d_n_rule = n^2/2
[genealogy]
tau = 1.0
eps = 0.5
replicas = 2
[rng]
master_seed = 11
"""


def write_config(tmp_path, text, name="exp.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


class TestConfig:
    def test_parse_fields(self):
        cfg = parse_config(EXAMPLE1)
        assert cfg.family == "critical-exponential"
        assert cfg.n_list == (10,)
        assert cfg.beta == 1.0
        assert cfg.eps == 0.5
        assert cfg.master_seed == 11

    def test_round_trip(self):
        for cfg in (parse_config(EXAMPLE1), parse_config(BROWNIAN),
                    ExperimentConfig(family="stable", alpha=1.5,
                                     d_n_rule="n^alpha", n_list=(50, 100),
                                     i_n=3, formats=("json",))):
            assert parse_config(serialize_config(cfg)) == cfg

    def test_unknown_section(self):
        with pytest.raises(ConfigError):
            parse_config("[nonsense]\nx = 1\n")

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            parse_config("[model]\nflavour = odd\n")

    def test_eps_bounds(self):
        with pytest.raises(ConfigError):
            parse_config("[genealogy]\neps = 0.0\n")
        with pytest.raises(ConfigError):
            parse_config("[genealogy]\ntau = 1.0\neps = 1.5\n")

    def test_unknown_d_n_rule(self):
        with pytest.raises(ConfigError):
            parse_config("[rescaling]\nd_n_rule = n!\n")

    def test_d_n_rules(self):
        cfg = parse_config(EXAMPLE1)
        assert cfg.d_n(10) == 50.0
        alt = ExperimentConfig(family="truncated-stable", alpha=1.5,
                               d_n_rule="n^alpha", n_list=(100,))
        assert alt.d_n(100) == pytest.approx(1000.0)

    def test_mutation_rates(self):
        cfg = parse_config(EXAMPLE1)
        assert cfg.theta == 0.5
        assert cfg.base_mutation(10).theta == pytest.approx(0.1)

    def test_seed_streams(self):
        a = seed_stream(7, "simulate", "r0").random(4)
        b = seed_stream(7, "simulate", "r0").random(4)
        c = seed_stream(7, "simulate", "r1").random(4)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestScaleFn:
    def test_brownian_grid(self, tmp_path):
        cfgp = write_config(tmp_path, BROWNIAN)
        out = tmp_path / "out"
        assert main(["scale-fn", cfgp, "--output-dir", str(out)]) == 0
        header, rows = read_csv(out / "scale_function.csv")
        assert header == ["x", "W", "method", "n"]
        for x, w, method, label in rows:
            assert float(w) == pytest.approx(2 * float(x))
            assert method == "closed-form" and label == "limit"

    def test_rescaled_grid(self, tmp_path):
        cfgp = write_config(tmp_path, EXAMPLE1)
        out = tmp_path / "out"
        assert main(["scale-fn", cfgp, "--output-dir", str(out)]) == 0
        _, rows = read_csv(out / "scale_function.csv")
        for x, w, _, label in rows:
            assert label == "10"
            assert float(w) == pytest.approx(0.2 + 2 * float(x))

    def test_empty_grid(self, tmp_path):
        cfgp = write_config(tmp_path, BROWNIAN)
        out = tmp_path / "out"
        assert main(["scale-fn", cfgp, "--output-dir", str(out),
                     "--points", "0"]) == 0
        header, rows = read_csv(out / "scale_function.csv")
        assert header[:2] == ["x", "W"] and rows == []

    def test_overwrite_refused(self, tmp_path):
        cfgp = write_config(tmp_path, BROWNIAN)
        out = tmp_path / "out"
        assert main(["scale-fn", cfgp, "--output-dir", str(out)]) == 0
        assert main(["scale-fn", cfgp, "--output-dir", str(out)]) == 1
        assert main(["scale-fn", cfgp, "--output-dir", str(out),
                     "--force"]) == 0

    def test_snapshot_written(self, tmp_path):
        cfgp = write_config(tmp_path, BROWNIAN)
        out = tmp_path / "out"
        main(["scale-fn", cfgp, "--output-dir", str(out)])
        snap = parse_config(str(out / "config.resolved.ini"))
        assert snap.directory == str(out)
        assert snap.master_seed == 7


class TestSimulate:
    def test_files_and_summary(self, tmp_path):
        cfgp = write_config(tmp_path, EXAMPLE1)
        out = tmp_path / "out"
        assert main(["simulate", cfgp, "--output-dir", str(out)]) == 0
        with open(out / "cpp_n10_r0.json") as fh:
            cpp = read_cpp_json(fh)
        assert cpp.metadata["master_seed"] == 11
        assert cpp.metadata["stream"] == "simulate/n10/r0"
        assert len(cpp.atoms) == 4  # I_n = round(d_n/n) = 5 positions 1..4
        header, rows = read_csv(out / "simulate_summary.csv")
        row = dict(zip(header, rows[0]))
        assert float(row["expected_deep_fraction"]) == pytest.approx(1 / 12)
        assert int(row["lineages"]) == 8

    def test_deterministic_given_seed(self, tmp_path):
        cfgp = write_config(tmp_path, EXAMPLE1)
        a, b = tmp_path / "a", tmp_path / "b"
        main(["simulate", cfgp, "--output-dir", str(a)])
        main(["simulate", cfgp, "--output-dir", str(b)])
        assert (a / "cpp_n10_r1.csv").read_bytes() \
            == (b / "cpp_n10_r1.csv").read_bytes()

    def test_threads_do_not_change_output(self, tmp_path):
        cfgp = write_config(tmp_path, EXAMPLE1)
        a, b = tmp_path / "a", tmp_path / "b"
        main(["simulate", cfgp, "--output-dir", str(a)])
        main(["simulate", cfgp, "--output-dir", str(b), "--threads", "4"])
        for name in ("cpp_n10_r0.json", "cpp_n10_r1.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_single_individual_empty_atoms(self, tmp_path):
        cfgp = write_config(tmp_path,
                            EXAMPLE1.replace("replicas = 2",
                                             "replicas = 2\ni_n = 1"))
        out = tmp_path / "out"
        assert main(["simulate", cfgp, "--output-dir", str(out)]) == 0
        with open(out / "cpp_n10_r0.json") as fh:
            assert read_cpp_json(fh).atoms == []

    def test_limit_family_rejected(self, tmp_path):
        cfgp = write_config(tmp_path, BROWNIAN)
        assert main(["simulate", cfgp, "--output-dir",
                     str(tmp_path / "out")]) == 2


class TestLimit:
    def test_pi_table_sums_to_intensity_mass(self, tmp_path):
        cfgp = write_config(
            tmp_path,
            BROWNIAN.replace("family = brownian",
                             "family = brownian\nmutation = constant\n"
                             "beta = 1.0"))
        out = tmp_path / "out"
        assert main(["limit", cfgp, "--output-dir", str(out)]) == 0
        header, rows = read_csv(out / "pi_table.csv")
        vals = [float(r[header.index("intensity")]) for r in rows]
        assert sum(vals) == pytest.approx(4.5, abs=1e-6)
        assert rows[-1][0] == ">4"

    def test_no_marks_no_mutations(self, tmp_path):
        cfgp = write_config(tmp_path, BROWNIAN)
        out = tmp_path / "out"
        assert main(["limit", cfgp, "--output-dir", str(out)]) == 0
        header, rows = read_csv(out / "limit_r0.csv")
        for row in rows:
            assert row[header.index("mutation_count")] == "0"
        _, pi_rows = read_csv(out / "pi_table.csv")
        assert float(pi_rows[0][1]) == pytest.approx(4.5)
        assert all(float(r[1]) == 0.0 for r in pi_rows[1:])


class TestKernels:
    def test_nu_init_brownian_atom(self, tmp_path):
        cfgp = write_config(tmp_path, BROWNIAN)
        out = tmp_path / "out"
        assert main(["kernels", cfgp, "--output-dir", str(out)]) == 0
        header, rows = read_csv(out / "kernel_nu_init.csv")
        atom = [r for r in rows if r[0] == "atom"]
        assert len(atom) == 1
        assert float(atom[0][header.index("value")]) == pytest.approx(1.0)

    def test_mu_k_killing_atom(self, tmp_path):
        cfgp = write_config(tmp_path, BROWNIAN)
        out = tmp_path / "out"
        assert main(["kernels", cfgp, "--output-dir", str(out),
                     "--kernel", "mu-k", "--depth", "0.5"]) == 0
        header, rows = read_csv(out / "kernel_mu_k.csv")
        atom = [r for r in rows if r[0] == "atom"][0]
        assert float(atom[header.index("value")]) == pytest.approx(1.0)

    def test_pi_needs_pre_limit(self, tmp_path):
        cfgp = write_config(tmp_path, BROWNIAN)
        assert main(["kernels", cfgp, "--output-dir", str(tmp_path / "o"),
                     "--kernel", "pi"]) == 2

    def test_pi_masses_partition(self, tmp_path):
        cfgp = write_config(tmp_path, EXAMPLE1)
        out = tmp_path / "out"
        assert main(["kernels", cfgp, "--output-dir", str(out),
                     "--kernel", "pi", "--samples", "500",
                     "--x", "0.5"]) == 0
        header, rows = read_csv(out / "kernel_pi.csv")
        total = sum(float(r[header.index("value")]) for r in rows)
        assert total == pytest.approx(1.0, abs=1e-9)


class TestVerify:
    def test_suite_passes(self, tmp_path):
        cfgp = write_config(tmp_path,
                            EXAMPLE1.replace("n_list = 10",
                                             "n_list = 10, 20"))
        out = tmp_path / "out"
        assert main(["verify", cfgp, "--output-dir", str(out)]) == 0
        with open(out / "verify_report.json") as fh:
            data = json.load(fh)
        assert data["schema"] == "marked-cpp-report/1"
        names = {r["name"] for r in data["reports"]}
        assert {"uniform-calibration", "nu-init-tv-n10",
                "scale-function-sup-error"} <= names

    def test_malformed_config_usage_error(self, tmp_path):
        cfgp = write_config(tmp_path, "[model]\nfamily = wrong\n")
        assert main(["verify", cfgp]) == 2

    def test_missing_arguments(self, capsys):
        assert main([]) == 2
        assert main(["frobnicate"]) == 2
